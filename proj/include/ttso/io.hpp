#pragma once

// Checkpoints and small file helpers: atomic writes, parameter vectors as
// little-endian f64 with a JSON layout sidecar, probe heads and plane sets
// as JSON.

#include "ttso/cutplane.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cstring>
#include <optional>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace ttso {

using ojson = nlohmann::ordered_json;

/// Writes to a sibling temp file and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  std::error_code ec;
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory '" + path.parent_path().string() + "': " + ec.message());
  }
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline ojson parse_json_file(const std::filesystem::path& path) {
  try {
    return ojson::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("'" + path.string() + "': " + e.what());
  }
}

inline ojson vec_to_json(const Vec& v) { return ojson(std::vector<double>(v.data(), v.data() + v.size())); }

inline Vec vec_from_json(const ojson& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline ojson architecture_to_json(const Architecture& a) {
  ojson j;
  j["kind"] = to_string(a.kind);
  j["input_window_len"] = a.input_window_len;
  j["n_features"] = a.n_features;
  j["repr_dim"] = a.repr_dim;
  j["hidden_dims"] = a.hidden_dims;
  j["n_layers"] = a.n_layers;
  j["kernel_size"] = a.kernel_size;
  j["dilation_base"] = a.dilation_base;
  return j;
}

// ---------------------------------------------------------------------------
// Parameters: <stem>.bin holds the raw vector, <stem>.json the layout.

inline void save_params(const std::filesystem::path& stem, const EncoderParams& p) {
  static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");
  std::string bytes(static_cast<std::size_t>(p.theta.size()) * sizeof(double), '\0');
  std::memcpy(bytes.data(), p.theta.data(), bytes.size());
  auto bin = stem;
  bin += ".bin";
  write_file_atomic(bin, bytes);
  ojson j;
  j["architecture"] = architecture_to_json(p.arch);
  j["n_params"] = p.theta.size();
  j["layout"] = ojson::array();
  for (const auto& e : p.layout) {
    ojson l;
    l["name"] = e.name;
    l["offset"] = e.offset;
    l["shape"] = e.shape;
    j["layout"].push_back(l);
  }
  auto meta = stem;
  meta += ".json";
  write_file_atomic(meta, j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Strict JSON section reader: typed getters, path-qualified errors, unknown
// keys rejected by finish().

class JsonReader {
 public:
  JsonReader(const ojson& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  void get(const std::string& key, int& out) {
    if (const auto* v = take(key)) {
      if (!v->is_number_integer()) fail(key, "expected an integer");
      out = v->get<int>();
    }
  }
  void get(const std::string& key, std::int64_t& out) {
    if (const auto* v = take(key)) {
      if (!v->is_number_integer()) fail(key, "expected an integer");
      out = v->get<std::int64_t>();
    }
  }
  void get(const std::string& key, std::uint64_t& out) {
    if (const auto* v = take(key)) {
      if (!v->is_number_unsigned()) fail(key, "expected a nonnegative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void get(const std::string& key, double& out) {
    if (const auto* v = take(key)) {
      if (!v->is_number()) fail(key, "expected a number");
      out = v->get<double>();
    }
  }
  void get(const std::string& key, bool& out) {
    if (const auto* v = take(key)) {
      if (!v->is_boolean()) fail(key, "expected true or false");
      out = v->get<bool>();
    }
  }
  void get(const std::string& key, std::string& out) {
    if (const auto* v = take(key)) {
      if (!v->is_string()) fail(key, "expected a string");
      out = v->get<std::string>();
    }
  }
  void get(const std::string& key, std::vector<int>& out) {
    if (const auto* v = take(key)) {
      if (!v->is_array()) fail(key, "expected an array of integers");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_number_integer()) fail(key, "expected an array of integers");
        out.push_back(e.get<int>());
      }
    }
  }
  void get(const std::string& key, std::vector<std::string>& out) {
    if (const auto* v = take(key)) {
      if (!v->is_array()) fail(key, "expected an array of strings");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_string()) fail(key, "expected an array of strings");
        out.push_back(e.get<std::string>());
      }
    }
  }

  /// Enum-like string field converted by `parse`, whose ConfigError is re-qualified.
  template <typename T, typename Parse>
  void get_enum(const std::string& key, T& out, Parse parse) {
    std::string s;
    bool present = has(key);
    get(key, s);
    if (!present) return;
    try {
      out = parse(s);
    } catch (const ConfigError& e) {
      fail(key, e.what());
    }
  }

  /// Nested object, or nullopt when absent.
  std::optional<JsonReader> section(const std::string& key) {
    if (const auto* v = take(key)) {
      if (!v->is_object()) fail(key, "expected an object");
      return JsonReader(*v, qualify(key));
    }
    return std::nullopt;
  }

  const ojson* raw(const std::string& key) { return take(key); }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end())
        throw ConfigError(qualify(it.key()) + ": unknown key");
  }

  [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
    throw ConfigError(qualify(key) + ": " + msg);
  }

  std::string qualify(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }

  const ojson* take(const std::string& key) {
    seen_.push_back(key);
    if (!j_.contains(key)) return nullptr;
    return &j_.at(key);
  }

  const ojson& j_;
  std::string path_;
  std::vector<std::string> seen_;
};

inline Architecture architecture_from_json(const ojson& j, const std::string& path) {
  Architecture a;
  JsonReader r(j, path);
  r.get_enum("kind", a.kind, encoder_kind_from_string);
  r.get("input_window_len", a.input_window_len);
  r.get("n_features", a.n_features);
  r.get("repr_dim", a.repr_dim);
  r.get("hidden_dims", a.hidden_dims);
  r.get("n_layers", a.n_layers);
  r.get("kernel_size", a.kernel_size);
  r.get("dilation_base", a.dilation_base);
  r.finish();
  a.validate();
  return a;
}

inline Architecture architecture_from_json(const ojson& j) { return architecture_from_json(j, "architecture"); }

inline EncoderParams load_params(const std::filesystem::path& stem) {
  auto meta = stem;
  meta += ".json";
  auto bin = stem;
  bin += ".bin";
  const ojson j = parse_json_file(meta);
  const Architecture arch = architecture_from_json(j.at("architecture"));
  const std::string bytes = read_file(bin);
  if (bytes.size() % sizeof(double) != 0) throw ParseError("'" + bin.string() + "': truncated parameter file");
  Vec theta(static_cast<Eigen::Index>(bytes.size() / sizeof(double)));
  std::memcpy(theta.data(), bytes.data(), bytes.size());
  return make_params(arch, std::move(theta));
}

// ---------------------------------------------------------------------------
// Planes

inline ojson planes_to_json(const PlaneSet& s) {
  ojson j;
  j["max_planes"] = s.max_planes;
  j["planes"] = ojson::array();
  for (const auto& p : s.planes) {
    ojson e;
    e["a"] = vec_to_json(p.a);
    e["b"] = vec_to_json(p.b);
    e["c"] = vec_to_json(p.c);
    e["d"] = p.d;
    e["lambda"] = p.lambda;
    e["born_at"] = p.born_at;
    j["planes"].push_back(e);
  }
  return j;
}

inline PlaneSet planes_from_json(const ojson& j) {
  PlaneSet s;
  s.max_planes = j.at("max_planes").get<std::size_t>();
  for (const auto& e : j.at("planes")) {
    CuttingPlane p;
    p.a = vec_from_json(e.at("a"));
    p.b = vec_from_json(e.at("b"));
    p.c = vec_from_json(e.at("c"));
    p.d = e.at("d").get<double>();
    p.lambda = e.at("lambda").get<double>();
    p.born_at = e.at("born_at").get<std::int64_t>();
    s.planes.push_back(std::move(p));
  }
  return s;
}

inline std::string csv_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace ttso
