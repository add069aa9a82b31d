#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "epd/checkpoint.hpp"
#include "epd/config.hpp"
#include "epd/data/dataset.hpp"
#include "epd/data/manifest.hpp"
#include "epd/data/prepare.hpp"
#include "epd/data/synth.hpp"
#include "epd/error.hpp"
#include "epd/experiments.hpp"
#include "epd/log.hpp"
#include "epd/report.hpp"
#include "epd/train.hpp"

// The epd command line: synth, train, grid, analyze.
// Exit codes: 0 ok, 2 usage or config, 3 I/O or file format, 4 numeric failure.

namespace epd::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitNumeric = 4;

struct Streams {
  std::ostream& out;  // key=value lines
  std::ostream& err;  // everything meant for people
};

// ---------------------------------------------------------------- shared

/// Seed precedence: flag, then config "seed", then EPD_SEED, then 0.
inline std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, const config::RunManifest& m) {
  if (flag) return *flag;
  if (m.seed) return *m.seed;
  if (auto e = config::env_seed()) return *e;
  return 0;
}

inline config::RunManifest manifest_or_default(const std::string& path) {
  return path.empty() ? config::RunManifest{} : config::load_run_manifest(path);
}

/// Loads a data directory, applies the filter if given, and splits it.
inline data::Splits<data::TraceRecord> load_splits(const std::filesystem::path& dir,
                                                   const std::optional<data::FilterSpec>& filter,
                                                   data::SplitSpec split, Streams io) {
  auto records = data::load_dataset(dir);
  if (filter) {
    std::vector<data::TraceMeta> meta;
    meta.reserve(records.size());
    for (const auto& r : records) meta.push_back(r.meta);
    std::set<std::string> keep;
    for (const auto& m : data::apply_filters(meta, *filter)) keep.insert(m.trace_id);
    std::erase_if(records, [&](const auto& r) { return !keep.contains(r.meta.trace_id); });
  }
  io.err << dir.string() << ": " << records.size() << " traces\n";
  return data::split(std::move(records), split);
}

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
  std::string spec;
  std::string out;
  std::optional<std::uint64_t> seed;
};

inline int cmd_synth(const SynthArgs& a, Streams io) {
  std::optional<std::uint64_t> file_seed;
  auto spec = a.spec.empty() ? data::SyntheticSpec{} : config::load_synthetic_spec(a.spec, file_seed);
  if (a.seed) {
    spec.seed = *a.seed;
  } else if (file_seed) {
    spec.seed = *file_seed;
  } else if (auto e = config::env_seed()) {
    spec.seed = *e;
  }
  data::validate(spec);
  const auto records = data::synth_dataset(spec);
  data::write_dataset(a.out, records);
  double lo = records.front().meta.epicentral_km, hi = lo;
  for (const auto& r : records) {
    lo = std::min(lo, r.meta.epicentral_km);
    hi = std::max(hi, r.meta.epicentral_km);
  }
  io.err << "wrote " << records.size() << " traces to " << a.out << '\n';
  io.out << "n=" << records.size() << " d_min_km=" << csv::format_double(lo) << " d_max_km=" << csv::format_double(hi)
         << " seed=" << spec.seed << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out = "epd_run";
  std::optional<std::string> model;
  std::optional<int> size;
  std::optional<double> lr;
  std::optional<double> gamma;
  std::optional<bool> ps;
  std::optional<int> epochs;
  std::optional<int> batch_size;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  bool allow_off_grid = false;
  bool filter = false;
};

inline int cmd_train(const TrainArgs& a, Streams io) {
  auto m = manifest_or_default(a.config);
  const auto seed = resolve_seed(a.seed, m);

  auto mc = m.model;
  if (a.model) mc.arch = nn::parse_arch(*a.model);
  if (a.size) mc.dense_size = *a.size;
  if (a.allow_off_grid) mc.allow_any_size = true;
  const bool ps = a.ps.value_or(m.ps.value_or(false));
  mc.in_channels = ps ? 4 : 3;
  mc.seed = m.model_seed.value_or(seed);
  nn::validate(mc);

  auto tc = m.train;
  if (a.lr) tc.lr0 = *a.lr;
  if (a.gamma) tc.gamma = *a.gamma;
  if (a.epochs) tc.epochs = *a.epochs;
  if (a.batch_size) tc.batch_size = *a.batch_size;
  if (a.threads) tc.threads = *a.threads;
  if (a.allow_off_grid) tc.allow_off_grid = true;
  tc.seed = m.train_seed.value_or(seed);
  train::validate(tc);

  auto filter = m.filter;
  if (a.filter && !filter) filter = data::FilterSpec{};
  auto split = m.split;
  split.seed = m.split_seed.value_or(seed);

  const auto splits = load_splits(a.data, filter, split, io);
  ensure_dir(a.out);

  experiments::GridCell cell{mc.arch, mc.dense_size, tc.gamma, tc.lr0, ps,
                             std::filesystem::path(a.data).lexically_normal().filename().string()};
  experiments::ExperimentRecord rec;
  rec.cell = cell;
  rec.seed = seed;
  rec.run_id = experiments::run_id(cell, seed);

  const auto log_path = std::filesystem::path(a.out) / "log.jsonl";
  {
    std::ofstream truncate(log_path, std::ios::trunc);
    if (!truncate) throw IoError("cannot write " + log_path.string());
  }
  experiments::RunLog log_file(log_path);
  io.err << "training " << nn::to_string(mc.arch) << " size " << mc.dense_size << (ps ? " with" : " without")
         << " PS channel on " << splits.train.size() << "/" << splits.val.size() << "/" << splits.test.size()
         << " traces\n";

  try {
    auto result = train::train(mc, tc, splits, [&](const train::EpochMetrics& e) {
      rec.curve.push_back(e);
      log_file.append(experiments::epoch_line(rec.run_id, cell, seed, e));
      io.err << "epoch " << e.epoch << " lr " << e.lr << " train " << experiments::fixed(e.train_l1_km, 3) << " km val "
             << experiments::fixed(e.val_l1_km, 3) << " km (" << experiments::fixed(e.wall_s, 1) << " s)\n";
    });
    const auto& mt = result.metrics;
    rec.best_epoch = mt.best_epoch;
    rec.train_l1_km = mt.epochs[static_cast<std::size_t>(mt.best_epoch)].train_l1_km;
    rec.val_l1_km = mt.best_val_l1_km;
    rec.test_l1_km = mt.test_l1_km;
    rec.runtime_min = mt.runtime_min;

    auto add = [&](experiments::SplitName name, const std::vector<data::TraceRecord>& split_records) {
      const auto pred = train::predict(result.model, split_records, tc.batch_size, tc.threads);
      for (std::size_t i = 0; i < split_records.size(); ++i) {
        rec.predictions.push_back({name, split_records[i].meta.epicentral_km, pred[i]});
      }
    };
    add(experiments::SplitName::Train, splits.train);
    add(experiments::SplitName::Val, splits.val);
    add(experiments::SplitName::Test, splits.test);

    nn::save_checkpoint(result.model, std::filesystem::path(a.out) / "model.epd1");
    experiments::write_predictions(std::filesystem::path(a.out) / "predictions.csv", rec.predictions);
    report::write_plot(a.out, "scatter", report::prediction_plot(rec), "truth_km", "pred_km");
    report::write_plot(a.out, "curve", report::curve_plot(rec), "epoch", "l1_km");
    log_file.append(experiments::final_line(rec));
  } catch (const train::TrainingDiverged& e) {
    rec.status = experiments::Status::Failed;
    rec.failed_epoch = e.epoch();
    rec.error = e.what();
    log_file.append(experiments::final_line(rec));
    throw;
  }
  io.err << "best epoch " << rec.best_epoch << ", checkpoint " << (std::filesystem::path(a.out) / "model.epd1").string()
         << '\n';
  io.out << "test_l1_km=" << csv::format_double(rec.test_l1_km) << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- grid

struct GridArgs {
  std::string config;
  std::string data_global;
  std::string data_local;
  std::string out = "epd_grid";
  std::optional<int> parallelism;
  std::vector<std::string> axes;
  std::optional<int> epochs;
  std::optional<int> batch_size;
  std::optional<std::uint64_t> seed;
  bool filter = false;
  bool dry_run = false;
};

inline int cmd_grid(const GridArgs& a, Streams io) {
  auto m = manifest_or_default(a.config);
  const auto seed = resolve_seed(a.seed, m);
  auto spec = m.grid;
  for (const auto& ax : a.axes) experiments::apply_axis_override(spec, ax);
  const auto cells = experiments::enumerate_grid(spec);
  io.err << cells.size() << " grid cells\n";
  if (a.dry_run) {
    for (const auto& c : cells) {
      io.out << "cell " << experiments::run_id(c, seed) << ' ' << experiments::canonical(c, seed) << '\n';
    }
    io.out << "cells=" << cells.size() << '\n';
    return kExitOk;
  }

  std::set<std::string> needed;
  for (const auto& c : cells) needed.insert(c.dataset);
  for (const auto& name : needed) {
    if (name != "global" && name != "local") throw std::invalid_argument("unknown dataset '" + name + "'");
  }
  auto filter = m.filter;
  if (a.filter && !filter) filter = data::FilterSpec{};
  auto split = m.split;
  split.seed = m.split_seed.value_or(seed);

  std::map<std::string, data::Splits<data::TraceRecord>> datasets;
  if (needed.contains("global")) {
    if (a.data_global.empty()) throw std::invalid_argument("--data-global is required for global cells");
    datasets["global"] = load_splits(a.data_global, filter, split, io);
  }
  if (needed.contains("local")) {
    if (a.data_local.empty()) throw std::invalid_argument("--data-local is required for local cells");
    auto local = filter.value_or(data::FilterSpec{});
    if (!local.local_center) local.local_center = data::kDefaultLocalCenter;
    datasets["local"] = load_splits(a.data_local, local, split, io);
  }

  ensure_dir(a.out);
  experiments::RunGridOptions opts;
  opts.parallelism = a.parallelism.value_or(m.parallelism);
  opts.base_seed = seed;
  opts.train = m.train;
  if (a.epochs) opts.train.epochs = *a.epochs;
  if (a.batch_size) opts.train.batch_size = *a.batch_size;
  opts.log_path = std::filesystem::path(a.out) / "run_log.jsonl";
  opts.artifacts_dir = std::filesystem::path(a.out) / "runs";
  const auto records = experiments::run_grid(cells, datasets, opts);

  report::emit_report(records, std::filesystem::path(a.out) / "report");
  std::size_t done = 0;
  for (const auto& r : records) done += r.status == experiments::Status::Done;
  io.out << "cells=" << records.size() << " done=" << done << " failed=" << records.size() - done << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- analyze

struct AnalyzeArgs {
  std::string config;
  std::string manifest;
  std::string out = "epd_analysis";
  bool filter = false;
};

inline int cmd_analyze(const AnalyzeArgs& a, Streams io) {
  const auto m = manifest_or_default(a.config);
  auto manifest = data::load_manifest(a.manifest);
  for (const auto& r : manifest.rejects) {
    log::warn("manifest line " + std::to_string(r.line) + " (" + r.trace_id + ") rejected: " + r.reason);
  }
  auto rows = std::move(manifest.rows);
  auto filter = m.filter;
  if (a.filter && !filter) filter = data::FilterSpec{};
  if (filter) rows = data::apply_filters(rows, *filter);

  std::vector<std::pair<double, double>> pairs;
  pairs.reserve(rows.size());
  std::set<std::string> stations;
  for (const auto& r : rows) {
    pairs.emplace_back(r.sp_interval_s(), r.epicentral_km);
    stations.insert(csv::format_double(r.station.lat()) + "," + csv::format_double(r.station.lon()));
  }
  const auto rep = experiments::correlation(pairs);
  ensure_dir(a.out);
  report::write_plot(a.out, "sp_distance", report::sp_distance_plot(pairs), "sp_interval_s", "epicentral_km");
  io.err << rows.size() << " traces from " << stations.size() << " station locations\n";
  io.out << "pearson=" << csv::format_double(rep.pearson) << " spearman=" << csv::format_double(rep.spearman)
         << " n=" << rep.n << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- entry

/// Parses argv and runs one subcommand, mapping failures to exit codes.
inline int run(int argc, const char* const* argv, Streams io) {
  log::ScopedSink sink([&io](log::Level level, std::string_view msg) {
    io.err << (level == log::Level::Warn ? "warning: " : "") << msg << '\n';
  });

  CLI::App app{"Epicentral distance estimation from single-station waveforms"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic data directory");
  s->add_option("--spec", synth.spec, "Synthetic spec JSON (bare or a run config)");
  s->add_option("--out", synth.out, "Output data directory")->required();
  s->add_option("--seed", synth.seed, "Seed (default: spec, then EPD_SEED)");

  TrainArgs tr;
  bool ps_on = false, ps_off = false;
  auto* t = app.add_subcommand("train", "Train one model and score it on the test split");
  t->add_option("--config", tr.config, "Run config JSON");
  t->add_option("--data", tr.data, "Data directory (manifest.csv + waveforms.sw6k)")->required();
  t->add_option("--out", tr.out, "Output directory")->capture_default_str();
  t->add_option("--model", tr.model, "resnet or tcn");
  t->add_option("--size", tr.size, "Dense head width: 64, 128 or 256");
  t->add_option("--lr", tr.lr, "Initial learning rate: 1e-3, 1e-4 or 1e-5");
  t->add_option("--gamma", tr.gamma, "Per-epoch decay: 0.5 or 0.9");
  auto* ps_flag = t->add_flag("--ps", ps_on, "Add the P/S boxcar channel");
  t->add_flag("--no-ps", ps_off, "Waveforms only")->excludes(ps_flag);
  t->add_option("--epochs", tr.epochs, "Epochs");
  t->add_option("--batch-size", tr.batch_size, "Mini-batch size");
  t->add_option("--seed", tr.seed, "Seed (default: config, then EPD_SEED)");
  t->add_option("--threads", tr.threads, "Threads for batch assembly and kernels");
  t->add_flag("--allow-off-grid", tr.allow_off_grid, "Accept sizes, lr and gamma outside the grid");
  t->add_flag("--filter", tr.filter, "Apply the default trace filters");

  GridArgs gr;
  auto* g = app.add_subcommand("grid", "Run the hyperparameter grid and write the report");
  g->add_option("--config", gr.config, "Run config JSON");
  g->add_option("--data-global", gr.data_global, "Global data directory");
  g->add_option("--data-local", gr.data_local, "Local data directory");
  g->add_option("--out", gr.out, "Output directory")->capture_default_str();
  g->add_option("--parallelism", gr.parallelism, "Concurrent cells");
  g->add_option("--axes", gr.axes, "Axis overrides, e.g. models=tcn sizes=64");
  g->add_option("--epochs", gr.epochs, "Epochs per cell");
  g->add_option("--batch-size", gr.batch_size, "Mini-batch size");
  g->add_option("--seed", gr.seed, "Base seed (default: config, then EPD_SEED)");
  g->add_flag("--filter", gr.filter, "Apply the default trace filters");
  g->add_flag("--dry-run", gr.dry_run, "List the cells without running them");

  AnalyzeArgs an;
  auto* n = app.add_subcommand("analyze", "Correlate S-P interval with epicentral distance");
  n->add_option("--config", an.config, "Run config JSON");
  n->add_option("--manifest", an.manifest, "Manifest CSV")->required();
  n->add_option("--out", an.out, "Output directory")->capture_default_str();
  n->add_flag("--filter", an.filter, "Apply the default trace filters");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    io.err << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    io.err << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    io.err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  if (ps_on) tr.ps = true;
  if (ps_off) tr.ps = false;

  try {
    if (s->parsed()) return cmd_synth(synth, io);
    if (t->parsed()) return cmd_train(tr, io);
    if (g->parsed()) return cmd_grid(gr, io);
    if (n->parsed()) return cmd_analyze(an, io);
  } catch (const NumericFailure& e) {
    io.err << "error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const UndefinedCorrelation& e) {
    io.err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const IoError& e) {
    io.err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const NotFoundError& e) {
    io.err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const FormatError& e) {
    io.err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    io.err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::invalid_argument& e) {
    io.err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    io.err << "error: " << e.what() << '\n';
    return kExitIo;
  }
  return kExitUsage;
}

}  // namespace epd::cli
