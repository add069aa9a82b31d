#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "epd/data/prepare.hpp"
#include "epd/data/synth.hpp"
#include "epd/error.hpp"
#include "epd/experiments.hpp"
#include "epd/nn.hpp"
#include "epd/train.hpp"

// JSON run configuration. Every section is optional; unknown keys are
// rejected by their dotted path.

namespace epd::config {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Reads keys from one JSON object and remembers which were consumed.
class Section {
 public:
  Section(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config: '" + name() + "' must be an object");
  }

  [[nodiscard]] bool has(const std::string& key) const { return j_.contains(key); }

  template <class V>
  bool get(const std::string& key, V& out) {
    if (!j_.contains(key)) return false;
    used_.insert(key);
    try {
      out = j_.at(key).get<V>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config: key '" + qualified(key) + "' has the wrong type");
    }
    return true;
  }

  template <class V>
  std::optional<V> opt(const std::string& key) {
    V v{};
    if (!get(key, v)) return std::nullopt;
    return v;
  }

  std::optional<Section> child(const std::string& key) {
    if (!j_.contains(key) || j_.at(key).is_null()) {
      if (j_.contains(key)) used_.insert(key);
      return std::nullopt;
    }
    used_.insert(key);
    return Section(j_.at(key), qualified(key));
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!used_.contains(key)) throw ConfigError("config: unknown key '" + qualified(key) + "'");
    }
  }

  [[nodiscard]] std::string qualified(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  [[nodiscard]] std::string name() const { return path_.empty() ? "<root>" : path_; }

  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> used_;
};

inline geo::GeoPoint read_point(Section s) {
  double lat = 0, lon = 0;
  if (!s.get("lat", lat) || !s.get("lon", lon)) throw ConfigError("config: a point needs 'lat' and 'lon'");
  s.finish();
  try {
    return geo::GeoPoint(lat, lon);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

inline void read_synthetic(Section s, data::SyntheticSpec& spec, std::optional<std::uint64_t>& seed) {
  std::int64_t n = -1;
  if (s.get("n", n)) {
    if (n < 0) throw ConfigError("config: synthetic.n must be >= 0");
    spec.n = static_cast<std::size_t>(n);
  }
  s.get("d_min_km", spec.d_min_km);
  s.get("d_max_km", spec.d_max_km);
  s.get("vp_kms", spec.vp_kms);
  s.get("vs_kms", spec.vs_kms);
  s.get("origin_min", spec.origin_min);
  s.get("origin_max", spec.origin_max);
  s.get("noise_sigma", spec.noise_sigma);
  s.get("arrival_visibility", spec.arrival_visibility);
  if (auto w = s.child("wavelet")) {
    w->get("frequency_hz", spec.wavelet.frequency_hz);
    w->get("decay_per_s", spec.wavelet.decay_per_s);
    w->get("amplitude", spec.wavelet.amplitude);
    w->finish();
  }
  if (auto st = s.child("station")) spec.station = read_point(*st);
  if (auto v = s.opt<std::uint64_t>("seed")) seed = v;
  s.finish();
}

struct RunManifest {
  std::optional<std::uint64_t> seed;

  nn::ModelConfig model{};
  std::optional<std::uint64_t> model_seed;
  std::optional<bool> ps;

  train::TrainConfig train{};
  std::optional<std::uint64_t> train_seed;

  std::optional<data::FilterSpec> filter;

  data::SplitSpec split{};
  std::optional<std::uint64_t> split_seed;

  experiments::GridSpec grid{};
  int parallelism = 1;

  data::SyntheticSpec synthetic{};
  std::optional<std::uint64_t> synthetic_seed;
};

inline RunManifest parse_run_manifest(const nlohmann::json& j) {
  RunManifest m;
  Section root(j, "");
  if (auto v = root.opt<std::uint64_t>("seed")) m.seed = v;

  if (auto s = root.child("model")) {
    std::string arch;
    if (s->get("arch", arch)) {
      try {
        m.model.arch = nn::parse_arch(arch);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: model.arch: ") + e.what());
      }
    }
    s->get("dense_size", m.model.dense_size);
    s->get("allow_any_size", m.model.allow_any_size);
    if (auto v = s->opt<int>("in_channels")) {
      if (*v != 3 && *v != 4) throw ConfigError("config: model.in_channels must be 3 or 4");
      m.ps = *v == 4;
    }
    if (auto v = s->opt<bool>("ps")) {
      if (m.ps && *m.ps != *v) throw ConfigError("config: model.ps contradicts model.in_channels");
      m.ps = v;
    }
    if (auto v = s->opt<std::uint64_t>("seed")) m.model_seed = v;
    s->finish();
  }

  if (auto s = root.child("train")) {
    s->get("lr0", m.train.lr0);
    s->get("gamma", m.train.gamma);
    s->get("epochs", m.train.epochs);
    s->get("batch_size", m.train.batch_size);
    s->get("allow_off_grid", m.train.allow_off_grid);
    s->get("threads", m.train.threads);
    if (auto a = s->child("adam")) {
      a->get("beta1", m.train.adam.beta1);
      a->get("beta2", m.train.adam.beta2);
      a->get("eps", m.train.adam.eps);
      a->finish();
    }
    if (auto v = s->opt<std::uint64_t>("seed")) m.train_seed = v;
    s->finish();
  }

  if (auto s = root.child("filter")) {
    data::FilterSpec f;
    s->get("max_epicentral_km", f.max_epicentral_km);
    s->get("min_snr_db", f.min_snr_db);
    s->get("local_radius_km", f.local_radius_km);
    if (auto local = s->opt<bool>("local"); local && *local) f.local_center = data::kDefaultLocalCenter;
    if (auto c = s->child("local_center")) f.local_center = read_point(*c);
    s->finish();
    m.filter = f;
  }

  if (auto s = root.child("split")) {
    s->get("train_frac", m.split.train_frac);
    s->get("test_frac", m.split.test_frac);
    s->get("val_frac_of_train", m.split.val_frac_of_train);
    if (auto v = s->opt<std::uint64_t>("seed")) m.split_seed = v;
    s->finish();
  }

  if (auto s = root.child("grid")) {
    std::vector<std::string> models;
    if (s->get("models", models)) {
      m.grid.models.clear();
      for (const auto& name : models) {
        try {
          m.grid.models.push_back(nn::parse_arch(name));
        } catch (const std::invalid_argument& e) {
          throw ConfigError(std::string("config: grid.models: ") + e.what());
        }
      }
    }
    s->get("sizes", m.grid.sizes);
    s->get("gammas", m.grid.gammas);
    s->get("lrs", m.grid.lrs);
    s->get("ps", m.grid.ps);
    s->get("datasets", m.grid.datasets);
    s->get("parallelism", m.parallelism);
    s->finish();
  }

  if (auto s = root.child("synthetic")) read_synthetic(*s, m.synthetic, m.synthetic_seed);
  root.finish();
  return m;
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
}

inline RunManifest load_run_manifest(const std::filesystem::path& path) {
  return parse_run_manifest(read_json_file(path));
}

/// A synthetic spec file is either a bare spec object or a run manifest with
/// a "synthetic" section.
inline data::SyntheticSpec load_synthetic_spec(const std::filesystem::path& path, std::optional<std::uint64_t>& seed) {
  const auto j = read_json_file(path);
  bool manifest = j.is_object() && j.empty();
  for (const char* key : {"synthetic", "model", "train", "filter", "split", "grid"}) {
    manifest = manifest || (j.is_object() && j.contains(key));
  }
  if (manifest) {
    auto m = parse_run_manifest(j);
    seed = m.synthetic_seed ? m.synthetic_seed : m.seed;
    return m.synthetic;
  }
  data::SyntheticSpec spec;
  read_synthetic(Section(j, "synthetic"), spec, seed);
  return spec;
}

/// EPD_SEED from the environment, if set and numeric.
inline std::optional<std::uint64_t> env_seed() {
  const char* v = std::getenv("EPD_SEED");
  if (!v || !*v) return std::nullopt;
  const auto parsed = csv::parse_int(v);
  if (!parsed || *parsed < 0) throw ConfigError(std::string("EPD_SEED='") + v + "' is not a non-negative integer");
  return static_cast<std::uint64_t>(*parsed);
}

}  // namespace epd::config
