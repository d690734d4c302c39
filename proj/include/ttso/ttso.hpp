#pragma once

#include "ttso/core.hpp"
#include "ttso/diffmodel.hpp"
#include "ttso/losses.hpp"
#include "ttso/perturb.hpp"
#include "ttso/group.hpp"
#include "ttso/cutplane.hpp"
#include "ttso/sla.hpp"
#include "ttso/bundles.hpp"
#include "ttso/restricted.hpp"
#include "ttso/data.hpp"
#include "ttso/io.hpp"
#include "ttso/config.hpp"
#include "ttso/evalbench.hpp"
#include "ttso/selfcheck.hpp"
