#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <sstream>

#include <unistd.h>

#include "actdiff/checkpoint.hpp"
#include "actdiff/dataset.hpp"
#include "actdiff_app/app.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using actdiff::app::run_command;
using nlohmann::json;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_command(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch_root() { return fs::temp_directory_path() / ("actdiff_cli_" + std::to_string(::getpid())); }

fs::path scratch(const std::string& name) {
  auto dir = scratch_root() / name;
  fs::remove_all(dir);
  return dir;
}

struct ScratchCleanup : ::testing::Environment {
  void TearDown() override {
    std::error_code ec;
    fs::remove_all(scratch_root(), ec);
  }
};
const auto* const kCleanup = ::testing::AddGlobalTestEnvironment(new ScratchCleanup);

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string first_line(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  return line;
}

// Small enough that a train + eval cycle finishes in about a second.
const std::vector<std::string> kTiny = {"--epochs", "3", "--steps-per-epoch", "8", "--warmup-epochs", "1",
                                        "--decay-last-k-epochs", "1", "--channels", "8,16", "--time-embed-dim", "8",
                                        "--diffusion-steps", "20", "--max-queries", "24", "--quiet", "true"};

std::vector<std::string> with(std::vector<std::string> head, const std::vector<std::string>& tail) {
  head.insert(head.end(), tail.begin(), tail.end());
  return head;
}

void expect_single_line(const Result& r) {
  ASSERT_FALSE(r.err.empty());
  EXPECT_EQ(r.err.find('\n'), r.err.size() - 1) << r.err;
  EXPECT_EQ(r.err.rfind("actdiff: error: ", 0), 0u) << r.err;
}

}  // namespace

TEST(Cli, HelpSucceeds) {
  const auto r = run({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("--mask-mode"), std::string::npos);
  EXPECT_NE(r.out.find("--peak-lr"), std::string::npos);
}

TEST(Cli, UnknownFlagIsConfigError) {
  const auto r = run({"train", "--no-such-flag", "1"});
  EXPECT_EQ(r.code, 2);
  expect_single_line(r);
}

TEST(Cli, UnknownCommandIsConfigError) {
  EXPECT_EQ(run({"fit"}).code, 2);
  EXPECT_EQ(run({}).code, 2);
}

TEST(Cli, MalformedValuesAreConfigErrors) {
  const auto out = scratch("malformed").string();
  for (const auto& args : std::vector<std::vector<std::string>>{
           {"train", "--epochs", "three", "--output", out},
           {"train", "--peak-lr", "nan", "--output", out},
           {"train", "--mask-mode", "sometimes", "--output", out},
           {"train", "--attention", "maybe", "--output", out},
           {"train", "--warmup-epochs", "60", "--output", out},
           {"analyze-noise", "--preset", "wiggly", "--output", out},
           {"train", "--activation", "relu", "--output", out},
       }) {
    const auto r = run(args);
    EXPECT_EQ(r.code, 2) << args[1] << " " << args[2];
    expect_single_line(r);
  }
}

TEST(Cli, ConfigFileRejectsUnknownKeysAndWrongTypes) {
  const auto dir = scratch("config_reject");
  fs::create_directories(dir);
  std::ofstream(dir / "a.json") << R"({"seed": 1, "learning_rate": 0.1})";
  std::ofstream(dir / "b.json") << R"({"epochs": "ten"})";
  std::ofstream(dir / "c.json") << R"([1, 2])";
  std::ofstream(dir / "d.json") << R"({"seed": )";
  for (const char* f : {"a.json", "b.json", "c.json", "d.json", "missing.json"}) {
    const auto r = run({"gen-data", "--config", (dir / f).string(), "--output", (dir / "out").string()});
    EXPECT_EQ(r.code, 2) << f;
    expect_single_line(r);
  }
  EXPECT_NE(run({"gen-data", "--config", (dir / "a.json").string()}).err.find("learning_rate"), std::string::npos);
}

TEST(Cli, FlagsWinUnlessConfigWins) {
  const auto dir = scratch("precedence");
  fs::create_directories(dir);
  std::ofstream(dir / "cfg.json") << R"({"seed": 3, "videos_per_task": 6})";
  const auto cfg = (dir / "cfg.json").string();

  ASSERT_EQ(run({"gen-data", "--config", cfg, "--seed", "5", "--quiet", "true", "--output", (dir / "a").string()}).code, 0);
  auto manifest = json::parse(slurp(dir / "a" / "manifest.json"));
  EXPECT_EQ(manifest["seed"], 5);
  EXPECT_EQ(manifest["spec"]["videos_per_task"], 6);

  ASSERT_EQ(run({"gen-data", "--config", cfg, "--config-wins", "--seed", "5", "--quiet", "true", "--output",
                 (dir / "b").string()})
                .code,
            0);
  manifest = json::parse(slurp(dir / "b" / "manifest.json"));
  EXPECT_EQ(manifest["seed"], 3);
}

TEST(Cli, GenDataIsDeterministicAcrossOutputLocations) {
  const auto a = scratch("gen_a"), b = scratch("gen_b");
  ASSERT_EQ(run({"gen-data", "--preset", "linear", "--seed", "7", "--quiet", "true", "--output", a.string()}).code, 0);
  ASSERT_EQ(run({"gen-data", "--preset", "linear", "--seed", "7", "--quiet", "true", "--output", b.string()}).code, 0);
  for (const char* f : {"manifest.json", "records.jsonl", "embeddings.json"}) {
    ASSERT_TRUE(fs::exists(a / f)) << f;
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  const auto ds = actdiff::load_dataset(a);
  EXPECT_EQ(ds.seed, 7u);
  EXPECT_EQ(ds.dims.horizon, 3u);
}

TEST(Cli, OutputRootEnvironmentVariable) {
  const auto root = scratch("root");
  fs::create_directories(root);
  ::setenv("ACTDIFF_OUTPUT_ROOT", root.c_str(), 1);
  const auto r = run({"gen-data", "--videos-per-task", "4", "--quiet", "true", "--output", "nested/ds"});
  ::unsetenv("ACTDIFF_OUTPUT_ROOT");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(root / "nested" / "ds" / "manifest.json"));
}

TEST(Cli, MissingInputsAreDataErrors) {
  const auto dir = scratch("missing");
  auto r = run(with({"eval", "--model-dir", (dir / "nothing").string(), "--output", (dir / "o").string()}, kTiny));
  EXPECT_EQ(r.code, 3);
  expect_single_line(r);
  r = run(with({"train", "--dataset", (dir / "nothing").string(), "--output", (dir / "o").string()}, kTiny));
  EXPECT_EQ(r.code, 3);
  expect_single_line(r);
}

TEST(Cli, DivergentTrainingIsNumericError) {
  const auto dir = scratch("nan");
  const auto r = run(with({"train", "--peak-lr", "1e300", "--output", dir.string()}, kTiny));
  EXPECT_EQ(r.code, 4) << r.err;
  expect_single_line(r);
}

TEST(Cli, TrainEvalArtifactsCarryProvenance) {
  const auto data = scratch("prov_data"), model = scratch("prov_model"), evald = scratch("prov_eval");
  ASSERT_EQ(run({"gen-data", "--seed", "2", "--quiet", "true", "--output", data.string()}).code, 0);
  auto r = run(with({"train", "--dataset", data.string(), "--train-seed", "4", "--noise-seed", "6", "--output",
                     model.string()},
                    kTiny));
  ASSERT_EQ(r.code, 0) << r.err;
  r = run(with({"eval", "--dataset", data.string(), "--model-dir", model.string(), "--infer-seed", "8", "--output",
                evald.string()},
               kTiny));
  ASSERT_EQ(r.code, 0) << r.err;

  for (const char* f : {"classifier.ckpt", "denoiser.ckpt", "noise_stats.json", "loss_log.csv",
                        "classifier_log.csv", "run.json"})
    ASSERT_TRUE(fs::exists(model / f)) << f;
  for (const char* f : {"plans.jsonl", "report.json"}) ASSERT_TRUE(fs::exists(evald / f)) << f;

  auto check = [](const json& prov, int infer_seed) {
    EXPECT_EQ(prov["seeds"]["seed"], 2);
    EXPECT_EQ(prov["seeds"]["train_seed"], 4);
    EXPECT_EQ(prov["seeds"]["noise_seed"], 6);
    EXPECT_EQ(prov["seeds"]["infer_seed"], infer_seed);
    EXPECT_EQ(prov["config"]["diffusion_steps"], 20);
    EXPECT_EQ(prov["config"]["channels"], json::array({8, 16}));
    EXPECT_FALSE(prov["config"].contains("output"));
  };
  for (const char* f : {"loss_log.csv", "classifier_log.csv"}) {
    const auto line = first_line(model / f);
    ASSERT_EQ(line.rfind("# provenance: ", 0), 0u) << f;
    check(json::parse(line.substr(14)), 0);
  }
  check(json::parse(slurp(model / "noise_stats.json"))["provenance"], 0);
  check(json::parse(slurp(model / "run.json"))["provenance"], 0);
  check(json::parse(actdiff::read_checkpoint(model / "denoiser.ckpt").provenance_json), 0);
  check(json::parse(actdiff::read_checkpoint(model / "classifier.ckpt").provenance_json), 0);
  check(json::parse(first_line(evald / "plans.jsonl"))["provenance"], 8);

  const auto report = json::parse(slurp(evald / "report.json"));
  check(report["provenance"], 8);
  EXPECT_EQ(report["n_samples"], 24);
  EXPECT_LE(report["sr"].get<double>(), report["macc"].get<double>());
  EXPECT_LE(report["sr"].get<double>(), report["msiou"].get<double>());

  std::ifstream plans(evald / "plans.jsonl");
  std::string line;
  std::getline(plans, line);
  std::size_t n = 0;
  while (std::getline(plans, line)) {
    const auto rec = json::parse(line);
    EXPECT_EQ(rec["pred"].size(), 3u);
    EXPECT_EQ(rec["exact"].get<bool>(), rec["pred"] == rec["gt"]);
    ++n;
  }
  EXPECT_EQ(n, 24u);
}

TEST(Cli, EvalRejectsScheduleThatDiffersFromTraining) {
  const auto model = scratch("sched");
  ASSERT_EQ(run(with({"train", "--output", model.string()}, kTiny)).code, 0);
  auto args = with({"eval", "--output", model.string()}, kTiny);
  args.insert(args.end(), {"--diffusion-steps", "30"});
  const auto r = run(args);
  EXPECT_EQ(r.code, 2);
  expect_single_line(r);
}

TEST(Cli, AnalyzeNoiseWritesHistogramsAndSummary) {
  const auto dir = scratch("analyze");
  ASSERT_EQ(run({"analyze-noise", "--mask-mode", "multiadd", "--bins", "25", "--quiet", "true", "--output",
                 dir.string()})
                .code,
            0);
  std::ifstream summary(dir / "summary.csv");
  std::string line;
  std::getline(summary, line);
  EXPECT_EQ(line.rfind("# provenance: ", 0), 0u);
  std::getline(summary, line);
  EXPECT_EQ(line, "kind,position,mu,sigma,count");
  std::map<std::string, std::vector<double>> sigma;
  std::map<std::string, std::vector<std::size_t>> count;
  while (std::getline(summary, line)) {
    std::istringstream row(line);
    std::string kind, pos, mu, sd, n;
    std::getline(row, kind, ',');
    std::getline(row, pos, ',');
    std::getline(row, mu, ',');
    std::getline(row, sd, ',');
    std::getline(row, n, ',');
    sigma[kind].push_back(std::stod(sd));
    count[kind].push_back(std::stoul(n));
  }
  ASSERT_EQ(sigma["eps_a"].size(), 3u);
  EXPECT_LT(sigma["eps_a"][0], sigma["eps_a"][1]);
  EXPECT_LT(sigma["eps_a"][1], sigma["eps_a"][2]);

  for (const char* kind : {"eps", "eps_a"}) {
    for (std::size_t t = 1; t <= 3; ++t) {
      const auto path = dir / ("hist_" + std::string(kind) + "_t" + std::to_string(t) + ".csv");
      std::ifstream hist(path);
      ASSERT_TRUE(hist) << path;
      std::getline(hist, line);
      std::getline(hist, line);
      EXPECT_EQ(line, "bin_left,bin_right,count");
      std::size_t bins = 0, total = 0;
      double prev_right = 0.0;
      while (std::getline(hist, line)) {
        double left = 0, right = 0;
        std::size_t c = 0;
        ASSERT_EQ(std::sscanf(line.c_str(), "%lf,%lf,%zu", &left, &right, &c), 3);
        if (bins) EXPECT_EQ(left, prev_right);
        EXPECT_LT(left, right);
        prev_right = right;
        total += c;
        ++bins;
      }
      EXPECT_EQ(bins, 25u);
      EXPECT_EQ(total, count[kind][t - 1]);
    }
  }
}

TEST(Cli, AblateWritesSixRowsPerHorizon) {
  const auto dir = scratch("ablate");
  auto args = with({"ablate", "--horizons", "3,4", "--output", dir.string()}, kTiny);
  const auto r = run(args);
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream table(dir / "ablation.csv");
  std::string line;
  std::getline(table, line);
  EXPECT_EQ(line.rfind("# provenance: ", 0), 0u);
  std::getline(table, line);
  EXPECT_EQ(line, "horizon,mask_mode,attention,n_samples,sr,macc,msiou,set_acc,random_sr,sr_over_random");
  std::map<std::string, std::set<std::string>> combos;
  while (std::getline(table, line)) {
    std::istringstream row(line);
    std::string h, mode, att;
    std::getline(row, h, ',');
    std::getline(row, mode, ',');
    std::getline(row, att, ',');
    EXPECT_TRUE(combos[h].insert(mode + "/" + att).second) << line;
  }
  ASSERT_EQ(combos.size(), 2u);
  for (const auto& [h, set] : combos) EXPECT_EQ(set.size(), 6u) << h;

  std::ifstream deltas(dir / "ablation_deltas.csv");
  std::size_t rows = 0;
  std::getline(deltas, line);
  std::getline(deltas, line);
  EXPECT_EQ(line, "horizon,comparison,held_fixed,delta_sr,delta_macc,delta_msiou");
  while (std::getline(deltas, line)) ++rows;
  EXPECT_EQ(rows, 2u * (2 + 3));
}
