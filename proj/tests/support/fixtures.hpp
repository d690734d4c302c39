#pragma once

// Small run configurations that keep end-to-end tests fast.

#include "ttso/ttso.hpp"

namespace fixture {

inline ttso::RunConfig small_config() {
  ttso::RunConfig c;
  c.architecture = {ttso::EncoderKind::DilatedConv, 8, 2, 4, {}, 2, 2, 2};
  c.data.synthetic.samples_per_domain = 24;
  c.data.synthetic.series_length = 8;
  c.data.synthetic.window = 8;
  c.data.synthetic.step = 8;
  c.sla.T1 = 30;
  c.sla.k = 10;
  c.sla.batch_size = 4;
  c.eval.n_seeds = 2;
  c.eval.probe_epochs = 40;
  c.seed = 11;
  return c;
}

}  // namespace fixture
