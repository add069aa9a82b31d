#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>

#include "epd/cli.hpp"
#include "support/temp_dir.hpp"

using namespace epd;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "epd");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), {out, err});
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

void write(const std::filesystem::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  os << text;
}

class EnvSeed {
 public:
  explicit EnvSeed(const char* value) {
    if (value) {
      ::setenv("EPD_SEED", value, 1);
    } else {
      ::unsetenv("EPD_SEED");
    }
  }
  ~EnvSeed() { ::unsetenv("EPD_SEED"); }
};

std::filesystem::path synth_data(const support::TempDir& dir, int n, std::uint64_t seed, const std::string& name = "data") {
  write(dir / (name + ".json"), R"({"n": )" + std::to_string(n) + "}");
  const auto r = run({"synth", "--spec", (dir / (name + ".json")).string(), "--out", (dir / name).string(), "--seed",
                      std::to_string(seed)});
  EXPECT_EQ(r.code, 0) << r.err;
  return dir / name;
}

}  // namespace

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run({}).code, cli::kExitUsage);
  EXPECT_EQ(run({"bogus"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"synth"}).code, cli::kExitUsage);  // --out required
  EXPECT_EQ(run({"train", "--data", "x", "--ps", "--no-ps"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"--help"}).code, cli::kExitOk);
}

TEST(Cli, SynthIsDeterministic) {
  support::TempDir dir;
  const auto a = synth_data(dir, 30, 11, "a");
  const auto b = synth_data(dir, 30, 11, "b");
  const auto c = synth_data(dir, 30, 12, "c");
  EXPECT_EQ(slurp(a / "manifest.csv"), slurp(b / "manifest.csv"));
  EXPECT_EQ(slurp(a / "waveforms.sw6k"), slurp(b / "waveforms.sw6k"));
  EXPECT_NE(slurp(a / "waveforms.sw6k"), slurp(c / "waveforms.sw6k"));
  EXPECT_EQ(data::load_dataset(a).size(), 30u);
}

TEST(Cli, SynthReportsSummary) {
  support::TempDir dir;
  write(dir / "s.json", R"({"n": 12, "d_min_km": 10, "d_max_km": 20})");
  const auto r = run({"synth", "--spec", (dir / "s.json").string(), "--out", (dir / "d").string(), "--seed", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("n=12 ", 0), 0u) << r.out;
  EXPECT_NE(r.out.find("seed=1"), std::string::npos);
}

TEST(Cli, SeedPrecedence) {
  support::TempDir dir;
  write(dir / "plain.json", R"({"n": 4})");
  write(dir / "seeded.json", R"({"n": 4, "seed": 5})");
  auto seed_of = [&](std::vector<std::string> extra, const std::string& spec) {
    std::vector<std::string> args{"synth", "--spec", (dir / spec).string(), "--out", (dir / "o").string()};
    args.insert(args.end(), extra.begin(), extra.end());
    const auto r = run(args);
    EXPECT_EQ(r.code, 0) << r.err;
    const auto pos = r.out.find("seed=");
    return r.out.substr(pos + 5, r.out.find_first_of(" \n", pos) - pos - 5);
  };
  {
    EnvSeed env(nullptr);
    EXPECT_EQ(seed_of({}, "plain.json"), "0");
  }
  {
    EnvSeed env("9");
    EXPECT_EQ(seed_of({}, "plain.json"), "9");
    EXPECT_EQ(seed_of({}, "seeded.json"), "5");
    EXPECT_EQ(seed_of({"--seed", "4"}, "seeded.json"), "4");
  }
  {
    EnvSeed env("not-a-number");
    EXPECT_EQ(run({"synth", "--spec", (dir / "plain.json").string(), "--out", (dir / "o").string()}).code,
              cli::kExitUsage);
  }
}

TEST(Cli, ConfigErrorsAreUsageErrors) {
  support::TempDir dir;
  const auto data = synth_data(dir, 12, 1);
  write(dir / "unknown.json", R"({"train": {"lrr": 0.001}})");
  write(dir / "badtype.json", R"({"train": {"epochs": "ten"}})");
  write(dir / "broken.json", R"({"train": )");
  for (const char* cfg : {"unknown.json", "badtype.json", "broken.json"}) {
    const auto r = run({"train", "--config", (dir / cfg).string(), "--data", data.string(), "--out", (dir / "o").string()});
    EXPECT_EQ(r.code, cli::kExitUsage) << cfg << ": " << r.err;
  }
  const auto unknown = run({"train", "--config", (dir / "unknown.json").string(), "--data", data.string()});
  EXPECT_NE(unknown.err.find("train.lrr"), std::string::npos) << unknown.err;
  // off-grid hyperparameters need the explicit flag
  EXPECT_EQ(run({"train", "--data", data.string(), "--lr", "0.003", "--out", (dir / "o").string()}).code,
            cli::kExitUsage);
}

TEST(Cli, IoErrors) {
  support::TempDir dir;
  EXPECT_EQ(run({"train", "--data", (dir / "missing").string(), "--out", (dir / "o").string()}).code, cli::kExitIo);
  EXPECT_EQ(run({"train", "--config", (dir / "missing.json").string(), "--data", "x"}).code, cli::kExitIo);
  EXPECT_EQ(run({"analyze", "--manifest", (dir / "missing.csv").string()}).code, cli::kExitIo);

  const auto data = synth_data(dir, 12, 1);
  auto bytes = slurp(data / "waveforms.sw6k");
  bytes[0] = 'X';
  write(data / "waveforms.sw6k", bytes);
  EXPECT_EQ(run({"train", "--data", data.string(), "--out", (dir / "o").string(), "--epochs", "1"}).code, cli::kExitIo);

  write(dir / "nocol.csv", "trace_name,snr_db\nx,1;2;3\n");
  EXPECT_EQ(run({"analyze", "--manifest", (dir / "nocol.csv").string(), "--out", (dir / "a").string()}).code,
            cli::kExitIo);
}

TEST(Cli, AnalyzeSyntheticAndShuffled) {
  support::TempDir dir;
  const auto data = synth_data(dir, 400, 21);
  const auto r = run({"analyze", "--manifest", (data / "manifest.csv").string(), "--out", (dir / "an").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const double pearson = std::stod(r.out.substr(r.out.find("pearson=") + 8));
  EXPECT_GT(pearson, 0.999);
  EXPECT_NE(r.out.find("n=400"), std::string::npos);
  EXPECT_TRUE(std::filesystem::exists(dir / "an" / "sp_distance.svg"));

  // shuffling the arrival pairs across rows breaks the relationship
  auto manifest = data::load_manifest(data / "manifest.csv");
  ASSERT_TRUE(manifest.rejects.empty());
  auto rows = manifest.rows;
  std::vector<std::pair<std::int64_t, std::int64_t>> arrivals;
  for (const auto& m : rows) arrivals.emplace_back(m.p_arrival_sample, m.s_arrival_sample);
  std::mt19937_64 rng(3);
  std::shuffle(arrivals.begin(), arrivals.end(), rng);
  for (std::size_t i = 0; i < rows.size(); ++i) std::tie(rows[i].p_arrival_sample, rows[i].s_arrival_sample) = arrivals[i];
  {
    std::ofstream os(dir / "shuffled.csv");
    data::write_manifest(os, rows);
  }
  const auto s = run({"analyze", "--manifest", (dir / "shuffled.csv").string(), "--out", (dir / "sh").string()});
  ASSERT_EQ(s.code, 0) << s.err;
  EXPECT_LT(std::abs(std::stod(s.out.substr(s.out.find("pearson=") + 8))), 0.1) << s.out;
}

TEST(Cli, AnalyzeUndefinedCorrelation) {
  support::TempDir dir;
  const auto data = synth_data(dir, 3, 2);
  auto rows = data::load_manifest(data / "manifest.csv").rows;
  rows.resize(1);
  {
    std::ofstream os(dir / "one.csv");
    data::write_manifest(os, rows);
  }
  const auto r = run({"analyze", "--manifest", (dir / "one.csv").string(), "--out", (dir / "a").string()});
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_NE(r.err.find("undefined"), std::string::npos) << r.err;
}

TEST(Cli, TrainWritesArtifacts) {
  support::TempDir dir;
  const auto data = synth_data(dir, 24, 4);
  const auto out = dir / "run";
  const auto r = run({"train", "--data", data.string(), "--out", out.string(), "--model", "tcn", "--size", "64", "--ps",
                      "--epochs", "2", "--batch-size", "8", "--seed", "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("test_l1_km=", 0), 0u) << r.out;
  for (const char* f : {"model.epd1", "predictions.csv", "log.jsonl", "scatter.svg", "scatter.csv", "curve.svg"}) {
    EXPECT_TRUE(std::filesystem::exists(out / f)) << f;
  }
  std::ifstream is(out / "log.jsonl");
  std::vector<nlohmann::json> lines;
  for (std::string l; std::getline(is, l);) lines.push_back(nlohmann::json::parse(l));
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[0]["epoch"], 0);
  EXPECT_EQ(lines[1]["epoch"], 1);
  EXPECT_EQ(lines[2]["status"], "done");
  EXPECT_EQ(lines[2]["config"]["ps"], true);
  EXPECT_EQ(lines[2]["config"]["seed"], 3);
  EXPECT_EQ(experiments::read_predictions(out / "predictions.csv").size(), 24u);

  nn::ModelConfig mc;
  mc.in_channels = 4;
  nn::Model<float> model(mc);
  EXPECT_NO_THROW(nn::load_checkpoint(model, out / "model.epd1"));
}

TEST(Cli, GridDryRun) {
  const auto r = run({"grid", "--dry-run", "--seed", "7"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("cells=144"), std::string::npos);
  std::size_t cells = 0;
  for (std::size_t pos = 0; (pos = r.out.find("\ncell ", pos)) != std::string::npos; ++pos) ++cells;
  EXPECT_EQ(cells + (r.out.rfind("cell ", 0) == 0), 144u);
  EXPECT_EQ(r.out, run({"grid", "--dry-run", "--seed", "7"}).out);

  const auto tcn = run({"grid", "--dry-run", "--axes", "models=tcn", "sizes=64"});
  ASSERT_EQ(tcn.code, 0) << tcn.err;
  EXPECT_NE(tcn.out.find("cells=24"), std::string::npos) << tcn.out;
  EXPECT_EQ(run({"grid", "--dry-run", "--axes", "depth=3"}).code, cli::kExitUsage);
}

TEST(Cli, GridNeedsDataDirectories) {
  support::TempDir dir;
  const auto r = run({"grid", "--out", (dir / "g").string(), "--axes", "models=tcn", "datasets=global"});
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_NE(r.err.find("--data-global"), std::string::npos);
}

TEST(Cli, GridRunsSmallGrid) {
  support::TempDir dir;
  const auto data = synth_data(dir, 20, 5);
  const std::vector<std::string> args{"grid",       "--data-global", data.string(), "--out", (dir / "g").string(),
                                      "--axes",     "models=tcn",    "sizes=64",    "gammas=0.9", "lrs=1e-3",
                                      "ps=with",    "datasets=global", "--epochs",  "1",    "--batch-size", "8"};
  const auto r = run(args);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("cells=1 done=1 failed=0"), std::string::npos) << r.out;
  EXPECT_TRUE(std::filesystem::exists(dir / "g" / "report" / "summary.csv"));
  EXPECT_TRUE(std::filesystem::exists(dir / "g" / "report" / "tables.txt"));
  const auto log_before = slurp(dir / "g" / "run_log.jsonl");
  // rerun resumes: nothing appended
  const auto again = run(args);
  ASSERT_EQ(again.code, 0) << again.err;
  EXPECT_EQ(slurp(dir / "g" / "run_log.jsonl"), log_before);
}
