#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "epd/checkpoint.hpp"
#include "epd/csv.hpp"
#include "epd/data/prepare.hpp"
#include "epd/error.hpp"
#include "epd/log.hpp"
#include "epd/nn.hpp"
#include "epd/train.hpp"

namespace epd::experiments {

// ---------------------------------------------------------------- grid

struct GridSpec {
  std::vector<nn::Arch> models{nn::Arch::ResNet1D, nn::Arch::TCN};
  std::vector<int> sizes{64, 128, 256};
  std::vector<double> gammas{0.5, 0.9};
  std::vector<double> lrs{1e-3, 1e-4, 1e-5};
  std::vector<bool> ps{false, true};
  std::vector<std::string> datasets{"global", "local"};
};

struct GridCell {
  nn::Arch model = nn::Arch::TCN;
  int size = 64;
  double gamma = 0.9;
  double lr = 1e-3;
  bool ps = false;
  std::string dataset = "global";

  auto operator<=>(const GridCell&) const = default;
};

namespace detail {

template <class V>
std::vector<V> dedupe_sorted(const std::vector<V>& axis, const char* name) {
  if (axis.empty()) throw std::invalid_argument(std::string("grid axis '") + name + "' is empty");
  std::vector<V> out(axis.begin(), axis.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  if (out.size() != axis.size()) {
    log::warn(std::string("grid axis '") + name + "' has duplicate values; using " + std::to_string(out.size()) +
              " distinct");
  }
  return out;
}

}  // namespace detail

/// Cartesian product in lexicographic order of
/// (model, size, gamma, lr, ps, dataset), each axis sorted ascending.
inline std::vector<GridCell> enumerate_grid(const GridSpec& spec) {
  const auto models = detail::dedupe_sorted(spec.models, "models");
  const auto sizes = detail::dedupe_sorted(spec.sizes, "sizes");
  const auto gammas = detail::dedupe_sorted(spec.gammas, "gammas");
  const auto lrs = detail::dedupe_sorted(spec.lrs, "lrs");
  const auto ps = detail::dedupe_sorted(spec.ps, "ps");
  const auto datasets = detail::dedupe_sorted(spec.datasets, "datasets");
  std::vector<GridCell> cells;
  for (auto m : models)
    for (int s : sizes)
      for (double g : gammas)
        for (double lr : lrs)
          for (bool p : ps)
            for (const auto& d : datasets) cells.push_back({m, s, g, lr, p, d});
  return cells;
}

/// Applies "key=v1,v2" overrides (keys: models sizes gammas lrs ps datasets).
inline void apply_axis_override(GridSpec& spec, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw std::invalid_argument("axis override '" + assignment + "' is not key=values");
  const std::string key(csv::trim(assignment.substr(0, eq)));
  std::vector<std::string> values;
  std::stringstream ss(assignment.substr(eq + 1));
  for (std::string v; std::getline(ss, v, ',');) {
    v = csv::trim(v);
    if (!v.empty()) values.push_back(v);
  }
  if (values.empty()) throw std::invalid_argument("axis '" + key + "' given no values");
  auto number = [&](const std::string& v) {
    const auto d = csv::parse_double(v);
    if (!d) throw std::invalid_argument("axis '" + key + "': '" + v + "' is not a number");
    return *d;
  };
  if (key == "models") {
    spec.models.clear();
    for (const auto& v : values) spec.models.push_back(nn::parse_arch(v));
  } else if (key == "sizes") {
    spec.sizes.clear();
    for (const auto& v : values) {
      const double d = number(v);
      if (d != std::floor(d)) throw std::invalid_argument("axis 'sizes': '" + v + "' is not an integer");
      spec.sizes.push_back(static_cast<int>(d));
    }
  } else if (key == "gammas") {
    spec.gammas.clear();
    for (const auto& v : values) spec.gammas.push_back(number(v));
  } else if (key == "lrs") {
    spec.lrs.clear();
    for (const auto& v : values) spec.lrs.push_back(number(v));
  } else if (key == "ps") {
    spec.ps.clear();
    for (const auto& v : values) {
      if (v == "with" || v == "true" || v == "1" || v == "ps") {
        spec.ps.push_back(true);
      } else if (v == "without" || v == "false" || v == "0" || v == "no-ps") {
        spec.ps.push_back(false);
      } else {
        throw std::invalid_argument("axis 'ps': '" + v + "' (expected with or without)");
      }
    }
  } else if (key == "datasets") {
    spec.datasets = values;
  } else {
    throw std::invalid_argument("unknown grid axis '" + key + "'");
  }
}

// ---------------------------------------------------------------- records

inline std::string canonical(const GridCell& c, std::uint64_t seed) {
  return "model=" + nn::to_string(c.model) + ";size=" + std::to_string(c.size) +
         ";gamma=" + csv::format_double(c.gamma) + ";lr=" + csv::format_double(c.lr) +
         ";ps=" + (c.ps ? "1" : "0") + ";dataset=" + c.dataset + ";seed=" + std::to_string(seed);
}

/// 64-bit FNV-1a over the canonical cell string.
inline std::uint64_t config_hash(const GridCell& c, std::uint64_t seed) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canonical(c, seed)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string run_id(const GridCell& c, std::uint64_t seed) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(config_hash(c, seed)));
  return buf;
}

/// Seed a cell trains under: independent per cell, reproducible per base seed.
inline std::uint64_t cell_seed(const GridCell& c, std::uint64_t base_seed) {
  return base_seed ^ config_hash(c, base_seed);
}

enum class Status { Done, Failed };

inline std::string to_string(Status s) { return s == Status::Done ? "done" : "failed"; }

enum class SplitName { Train, Val, Test };

inline std::string to_string(SplitName s) {
  switch (s) {
    case SplitName::Train: return "train";
    case SplitName::Val: return "val";
    case SplitName::Test: return "test";
  }
  return "?";
}

struct Prediction {
  SplitName split;
  double truth_km;
  double pred_km;
};

struct ExperimentRecord {
  std::string run_id;
  GridCell cell;
  std::uint64_t seed = 0;
  Status status = Status::Done;
  std::vector<train::EpochMetrics> curve;
  int best_epoch = -1;
  double train_l1_km = 0;  // at the best epoch
  double val_l1_km = 0;
  double test_l1_km = 0;
  double runtime_min = 0;
  std::optional<int> failed_epoch;
  std::string error;
  std::vector<Prediction> predictions;  // empty when not kept
};

// ---------------------------------------------------------------- run log

inline nlohmann::json config_json(const GridCell& c, std::uint64_t seed) {
  return {{"model", nn::to_string(c.model)}, {"size", c.size},       {"gamma", c.gamma},
          {"lr", c.lr},                      {"ps", c.ps},           {"dataset", c.dataset},
          {"seed", seed}};
}

inline nlohmann::json epoch_line(const std::string& id, const GridCell& c, std::uint64_t seed,
                                 const train::EpochMetrics& e) {
  return {{"run_id", id},          {"config", config_json(c, seed)},   {"epoch", e.epoch},
          {"lr_now", e.lr},        {"train_l1_km", e.train_l1_km},     {"val_l1_km", e.val_l1_km},
          {"wall_s", e.wall_s}};
}

inline nlohmann::json final_line(const ExperimentRecord& r) {
  nlohmann::json j = {{"run_id", r.run_id}, {"config", config_json(r.cell, r.seed)}};
  const train::EpochMetrics* best = nullptr;
  for (const auto& e : r.curve) {
    if (e.epoch == r.best_epoch) best = &e;
  }
  j["epoch"] = best ? best->epoch : (r.curve.empty() ? -1 : r.curve.back().epoch);
  j["lr_now"] = best ? best->lr : 0.0;
  j["train_l1_km"] = r.status == Status::Done ? nlohmann::json(r.train_l1_km) : nlohmann::json(nullptr);
  j["val_l1_km"] = r.status == Status::Done ? nlohmann::json(r.val_l1_km) : nlohmann::json(nullptr);
  double wall = 0;
  for (const auto& e : r.curve) wall += e.wall_s;
  j["wall_s"] = wall;
  j["test_l1_km"] = r.status == Status::Done ? nlohmann::json(r.test_l1_km) : nlohmann::json(nullptr);
  j["runtime_min"] = r.runtime_min;
  j["status"] = to_string(r.status);
  if (r.failed_epoch) j["failed_epoch"] = *r.failed_epoch;
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

/// Append-only JSONL writer shared by grid workers.
class RunLog {
 public:
  explicit RunLog(std::filesystem::path path) : path_(std::move(path)) {
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    os_.open(path_, std::ios::app);
    if (!os_) throw IoError("cannot open run log " + path_.string());
  }

  void append(const nlohmann::json& line) {
    std::lock_guard lock(mu_);
    os_ << line.dump() << '\n';
    os_.flush();
    if (!os_) throw IoError("failed writing run log " + path_.string());
  }

  [[nodiscard]] const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
  std::ofstream os_;
  std::mutex mu_;
};

namespace detail {

inline GridCell cell_from_json(const nlohmann::json& c) {
  GridCell cell;
  cell.model = nn::parse_arch(c.at("model").get<std::string>());
  cell.size = c.at("size").get<int>();
  cell.gamma = c.at("gamma").get<double>();
  cell.lr = c.at("lr").get<double>();
  cell.ps = c.at("ps").get<bool>();
  cell.dataset = c.at("dataset").get<std::string>();
  return cell;
}

inline double number_or(const nlohmann::json& j, const char* key, double fallback) {
  const auto it = j.find(key);
  return it != j.end() && it->is_number() ? it->get<double>() : fallback;
}

}  // namespace detail

/// Finished runs in a log, keyed by run id. Per-epoch lines rebuild the
/// curve; a rerun's lines replace an interrupted attempt's epoch by epoch.
/// A truncated trailing line (killed writer) is ignored with a warning.
inline std::map<std::string, ExperimentRecord> read_run_log(const std::filesystem::path& path) {
  std::map<std::string, ExperimentRecord> done;
  std::map<std::string, std::map<int, train::EpochMetrics>> curves;
  std::ifstream is(path);
  if (!is) return done;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (csv::trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      log::warn(path.string() + ":" + std::to_string(lineno) + ": unparseable line skipped");
      continue;
    }
    try {
      const auto id = j.at("run_id").get<std::string>();
      if (!j.contains("status")) {
        train::EpochMetrics e;
        e.epoch = j.at("epoch").get<int>();
        e.lr = j.at("lr_now").get<double>();
        e.train_l1_km = j.at("train_l1_km").get<double>();
        e.val_l1_km = j.at("val_l1_km").get<double>();
        e.wall_s = j.at("wall_s").get<double>();
        curves[id][e.epoch] = e;
        continue;
      }
      ExperimentRecord r;
      r.run_id = id;
      r.cell = detail::cell_from_json(j.at("config"));
      r.seed = j.at("config").at("seed").get<std::uint64_t>();
      r.status = j.at("status").get<std::string>() == "done" ? Status::Done : Status::Failed;
      r.best_epoch = j.value("epoch", -1);
      r.train_l1_km = detail::number_or(j, "train_l1_km", 0);
      r.val_l1_km = detail::number_or(j, "val_l1_km", 0);
      r.test_l1_km = detail::number_or(j, "test_l1_km", 0);
      r.runtime_min = detail::number_or(j, "runtime_min", 0);
      if (j.contains("failed_epoch")) r.failed_epoch = j["failed_epoch"].get<int>();
      r.error = j.value("error", "");
      for (const auto& [epoch, e] : curves[id]) r.curve.push_back(e);
      curves.erase(id);
      done[id] = std::move(r);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return done;
}

inline void write_predictions(const std::filesystem::path& path, const std::vector<Prediction>& preds) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << "split,truth_km,pred_km\n";
  for (const auto& p : preds) {
    os << to_string(p.split) << ',' << csv::format_double(p.truth_km) << ',' << csv::format_double(p.pred_km) << '\n';
  }
  if (!os.flush()) throw IoError("failed writing " + path.string());
}

inline std::vector<Prediction> read_predictions(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(is, line);
  std::vector<Prediction> out;
  while (std::getline(is, line)) {
    if (csv::trim(line).empty()) continue;
    const auto f = csv::split_line(line);
    const auto truth = f.size() == 3 ? csv::parse_double(f[1]) : std::nullopt;
    const auto pred = f.size() == 3 ? csv::parse_double(f[2]) : std::nullopt;
    if (!truth || !pred) throw FormatError(path.string() + ": bad line '" + line + "'");
    const SplitName s = f[0] == "train" ? SplitName::Train : f[0] == "val" ? SplitName::Val : SplitName::Test;
    out.push_back({s, *truth, *pred});
  }
  return out;
}

// ---------------------------------------------------------------- execution

struct CellJob {
  GridCell cell;
  std::string run_id;
  std::uint64_t seed = 0;
  train::TrainConfig train_cfg;
  const data::Splits<data::TraceRecord>* splits = nullptr;
};

struct CellOutcome {
  train::Metrics metrics;
  std::vector<Prediction> predictions;
  std::optional<nn::Model<float>> model;
};

using CellRunner = std::function<CellOutcome(const CellJob&, const train::EpochCallback&)>;

/// Trains the cell's model and scores every split with the kept parameters.
inline CellOutcome default_cell_runner(const CellJob& job, const train::EpochCallback& on_epoch) {
  nn::ModelConfig mc;
  mc.arch = job.cell.model;
  mc.dense_size = job.cell.size;
  mc.in_channels = job.cell.ps ? 4 : 3;
  mc.seed = job.seed;
  auto result = train::train(mc, job.train_cfg, *job.splits, on_epoch);
  CellOutcome out;
  out.metrics = std::move(result.metrics);
  auto add = [&](SplitName name, const std::vector<data::TraceRecord>& split) {
    const auto pred = train::predict(result.model, split, job.train_cfg.batch_size);
    for (std::size_t i = 0; i < split.size(); ++i) out.predictions.push_back({name, split[i].meta.epicentral_km, pred[i]});
  };
  add(SplitName::Train, job.splits->train);
  add(SplitName::Val, job.splits->val);
  add(SplitName::Test, job.splits->test);
  out.model.emplace(std::move(result.model));
  return out;
}

struct RunGridOptions {
  int parallelism = 1;
  std::uint64_t base_seed = 0;
  /// lr0, gamma and seed are filled per cell.
  train::TrainConfig train{};
  std::filesystem::path log_path;
  /// Per-run predictions CSV and checkpoint land here when set.
  std::optional<std::filesystem::path> artifacts_dir;
  CellRunner runner = default_cell_runner;
};

/// Runs every cell once. Cells already finished in the log are loaded, not
/// rerun. A failing cell is recorded and the rest continue; a log write
/// failure stops new cells and is rethrown once in-flight cells return.
inline std::vector<ExperimentRecord> run_grid(const std::vector<GridCell>& cells,
                                              const std::map<std::string, data::Splits<data::TraceRecord>>& datasets,
                                              const RunGridOptions& opts) {
  if (opts.parallelism < 1) throw std::invalid_argument("parallelism must be >= 1");
  if (opts.log_path.empty()) throw std::invalid_argument("run_grid needs a log path");
  for (const auto& c : cells) {
    if (!datasets.contains(c.dataset)) throw std::invalid_argument("no dataset named '" + c.dataset + "'");
  }
  auto finished = read_run_log(opts.log_path);
  RunLog log_file(opts.log_path);
  if (opts.artifacts_dir) std::filesystem::create_directories(*opts.artifacts_dir);

  std::vector<ExperimentRecord> records(cells.size());
  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto id = run_id(cells[i], opts.base_seed);
    if (auto it = finished.find(id); it != finished.end()) {
      records[i] = it->second;
      if (opts.artifacts_dir) {
        const auto pred_path = *opts.artifacts_dir / (id + ".predictions.csv");
        if (std::filesystem::exists(pred_path)) records[i].predictions = read_predictions(pred_path);
      }
      continue;
    }
    pending.push_back(i);
  }
  if (pending.size() < cells.size()) {
    log::info("resuming: " + std::to_string(cells.size() - pending.size()) + " of " + std::to_string(cells.size()) +
              " cells already finished");
  }

  std::atomic<std::size_t> next{0};
  std::atomic<bool> abort{false};
  std::exception_ptr io_failure;
  std::mutex failure_mu;

  auto run_one = [&](std::size_t i) {
    const auto& cell = cells[i];
    ExperimentRecord r;
    r.cell = cell;
    r.run_id = run_id(cell, opts.base_seed);
    r.seed = cell_seed(cell, opts.base_seed);

    CellJob job;
    job.cell = cell;
    job.run_id = r.run_id;
    job.seed = r.seed;
    job.train_cfg = opts.train;
    job.train_cfg.lr0 = cell.lr;
    job.train_cfg.gamma = cell.gamma;
    job.train_cfg.seed = r.seed;
    job.train_cfg.threads = 1;
    job.splits = &datasets.at(cell.dataset);

    const auto t0 = std::chrono::steady_clock::now();
    auto on_epoch = [&](const train::EpochMetrics& e) {
      r.curve.push_back(e);
      log_file.append(epoch_line(r.run_id, cell, r.seed, e));
    };
    try {
      auto outcome = opts.runner(job, on_epoch);
      const auto& m = outcome.metrics;
      r.status = Status::Done;
      r.best_epoch = m.best_epoch;
      for (const auto& e : m.epochs) {
        if (e.epoch == m.best_epoch) {
          r.train_l1_km = e.train_l1_km;
          r.val_l1_km = e.val_l1_km;
        }
      }
      r.test_l1_km = m.test_l1_km;
      r.predictions = std::move(outcome.predictions);
      if (opts.artifacts_dir) {
        if (!r.predictions.empty()) write_predictions(*opts.artifacts_dir / (r.run_id + ".predictions.csv"), r.predictions);
        if (outcome.model) save_checkpoint(*outcome.model, *opts.artifacts_dir / (r.run_id + ".epd1"));
      }
    } catch (const IoError&) {
      throw;
    } catch (const train::TrainingDiverged& e) {
      r.status = Status::Failed;
      r.failed_epoch = e.epoch();
      r.error = e.what();
    } catch (const std::exception& e) {
      r.status = Status::Failed;
      r.error = e.what();
    }
    r.runtime_min = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
    log_file.append(final_line(r));
    if (r.status == Status::Failed) log::warn("run " + r.run_id + " failed: " + r.error);
    records[i] = std::move(r);
  };

  auto worker = [&] {
    while (!abort.load()) {
      const auto k = next.fetch_add(1);
      if (k >= pending.size()) return;
      try {
        run_one(pending[k]);
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!io_failure) io_failure = std::current_exception();
        abort = true;
      }
    }
  };

  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(opts.parallelism), pending.size());
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
    if (workers > 0) worker();
  }
  if (io_failure) std::rethrow_exception(io_failure);
  return records;
}

// ---------------------------------------------------------------- statistics

struct MeanStd {
  double mean = 0;
  double std = 0;
  std::size_t n = 0;
};

/// Two-pass mean and sample (n - 1) standard deviation; one value gives 0.
inline MeanStd mean_std(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("mean_std: empty input");
  double s = 0;
  for (double x : v) s += x;
  const double mean = s / static_cast<double>(v.size());
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  return {mean, sd, v.size()};
}

enum class Axis { Model, Size, Gamma, Lr, Ps, Dataset };

inline std::string to_string(Axis a) {
  switch (a) {
    case Axis::Model: return "model";
    case Axis::Size: return "size";
    case Axis::Gamma: return "gamma";
    case Axis::Lr: return "lr";
    case Axis::Ps: return "ps";
    case Axis::Dataset: return "dataset";
  }
  return "?";
}

inline std::string axis_value(const GridCell& c, Axis a) {
  switch (a) {
    case Axis::Model: return nn::to_string(c.model);
    case Axis::Size: return std::to_string(c.size);
    case Axis::Gamma: return csv::format_double(c.gamma);
    case Axis::Lr: return csv::format_double(c.lr);
    case Axis::Ps: return c.ps ? "ps" : "no-ps";
    case Axis::Dataset: return c.dataset;
  }
  return "?";
}

struct GroupSummary {
  std::vector<std::pair<Axis, std::string>> key;
  MeanStd test_l1_km;
  std::size_t best = 0;  // index into the records passed to summarize
  double best_test_l1_km = 0;
};

/// Per-group mean +- std of test L1 over done records, and the best cell.
/// Groups appear in order of first occurrence; groups with no done record
/// are omitted with a notice.
inline std::vector<GroupSummary> summarize(const std::vector<ExperimentRecord>& records,
                                           const std::vector<Axis>& group_by) {
  std::vector<std::vector<std::pair<Axis, std::string>>> keys;
  std::vector<std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < records.size(); ++i) {
    std::vector<std::pair<Axis, std::string>> key;
    for (auto a : group_by) key.emplace_back(a, axis_value(records[i].cell, a));
    auto it = std::find(keys.begin(), keys.end(), key);
    if (it == keys.end()) {
      keys.push_back(key);
      members.emplace_back();
      it = keys.end() - 1;
    }
    members[static_cast<std::size_t>(it - keys.begin())].push_back(i);
  }
  std::vector<GroupSummary> out;
  for (std::size_t g = 0; g < keys.size(); ++g) {
    std::vector<double> values;
    std::size_t best = 0;
    double best_v = std::numeric_limits<double>::infinity();
    for (auto i : members[g]) {
      if (records[i].status != Status::Done) continue;
      values.push_back(records[i].test_l1_km);
      if (records[i].test_l1_km < best_v) {
        best_v = records[i].test_l1_km;
        best = i;
      }
    }
    if (values.empty()) {
      std::string name;
      for (const auto& [a, v] : keys[g]) name += (name.empty() ? "" : " ") + to_string(a) + "=" + v;
      log::info("group {" + name + "} has no finished runs; omitted");
      continue;
    }
    out.push_back({keys[g], mean_std(values), best, best_v});
  }
  return out;
}

inline std::string fixed(double v, int digits = 2) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

/// One model/dataset table: rows by size (descending), gamma, lr
/// (descending); No PS and PS columns; Best and mean +- std footer.
inline std::string render_table(const std::vector<ExperimentRecord>& records, nn::Arch model,
                                const std::string& dataset) {
  std::map<std::tuple<int, double, double>, std::array<std::optional<double>, 2>> rows;
  for (const auto& r : records) {
    if (r.cell.model != model || r.cell.dataset != dataset || r.status != Status::Done) continue;
    rows[{-r.cell.size, r.cell.gamma, -r.cell.lr}][r.cell.ps ? 1 : 0] = r.test_l1_km;
  }
  std::ostringstream os;
  os << (model == nn::Arch::TCN ? "TCN" : "ResNet") << ' ' << dataset << '\n';
  os << "Size | gamma | lr | No PS | PS\n";
  std::array<std::vector<double>, 2> cols;
  for (const auto& [k, v] : rows) {
    os << -std::get<0>(k) << " | " << csv::format_double(std::get<1>(k)) << " | "
       << csv::format_double(-std::get<2>(k));
    for (int c = 0; c < 2; ++c) {
      os << " | " << (v[c] ? fixed(*v[c]) : "-");
      if (v[c]) cols[c].push_back(*v[c]);
    }
    os << '\n';
  }
  double best = std::numeric_limits<double>::infinity();
  for (const auto& c : cols)
    for (double v : c) best = std::min(best, v);
  os << "Best: " << (std::isfinite(best) ? fixed(best) : "-") << " | mu+-sigma:";
  for (const auto& c : cols) {
    if (c.empty()) {
      os << " | -";
    } else {
      const auto ms = mean_std(c);
      os << " | " << fixed(ms.mean) << "+-" << fixed(ms.std);
    }
  }
  os << '\n';
  return os.str();
}

// ---------------------------------------------------------------- correlation

struct CorrelationReport {
  double pearson = 0;
  double spearman = 0;
  std::size_t n = 0;
};

namespace detail {

inline void require_spread(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw std::invalid_argument(std::string("correlation: non-finite value in ") + what);
  }
  if (std::all_of(v.begin(), v.end(), [&](double x) { return x == v[0]; })) {
    throw UndefinedCorrelation(std::string("correlation undefined: ") + what + " is constant");
  }
}

/// 1-based ranks; tied values share their average rank.
inline std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> rank(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = r;
    i = j + 1;
  }
  return rank;
}

}  // namespace detail

inline double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("pearson: length mismatch");
  if (x.size() < 2) throw UndefinedCorrelation("correlation undefined: need at least 2 pairs");
  detail::require_spread(x, "x");
  detail::require_spread(y, "y");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

inline double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("spearman: length mismatch");
  if (x.size() < 2) throw UndefinedCorrelation("correlation undefined: need at least 2 pairs");
  detail::require_spread(x, "x");
  detail::require_spread(y, "y");
  const auto rx = detail::average_ranks(x);
  const auto ry = detail::average_ranks(y);
  return pearson(rx, ry);
}

/// Pearson r and Spearman rho over (S-P seconds, distance km) pairs.
inline CorrelationReport correlation(const std::vector<std::pair<double, double>>& pairs) {
  std::vector<double> x, y;
  x.reserve(pairs.size());
  y.reserve(pairs.size());
  for (const auto& [a, b] : pairs) {
    x.push_back(a);
    y.push_back(b);
  }
  return {pearson(x, y), spearman(x, y), pairs.size()};
}

}  // namespace epd::experiments
