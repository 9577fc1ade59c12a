#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "actdiff/ops.hpp"
#include "actdiff/optim.hpp"
#include "actdiff/dataset.hpp"
#include "actdiff/error.hpp"

using namespace actdiff;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("actdiff_dataset_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

VideoRecord record(std::size_t m, std::size_t obs = 2) {
  VideoRecord r;
  for (std::size_t i = 0; i < m; ++i) r.actions.push_back(i);
  for (std::size_t j = 0; j <= m; ++j) r.boundary_features.push_back(std::vector<double>(obs, static_cast<double>(j)));
  return r;
}

}  // namespace

TEST(Generate, LinearVideosAreConsecutiveRuns) {
  auto spec = SyntheticSpec::linear_preset();
  spec.min_actions = spec.max_actions = spec.chain_length = 4;
  auto data = generate_synthetic(spec);
  ASSERT_EQ(data.videos.size(), spec.num_tasks * spec.videos_per_task);
  for (const auto& v : data.videos) {
    ASSERT_EQ(v.actions.size(), 4u);
    for (std::size_t i = 1; i < v.actions.size(); ++i) EXPECT_EQ(v.actions[i], v.actions[i - 1] + 1);
    EXPECT_EQ(v.boundary_features.size(), 5u);
    for (const auto& f : v.boundary_features) EXPECT_EQ(f.size(), spec.obs_dim);
  }
}

TEST(Generate, SameSeedGivesIdenticalFiles) {
  auto spec = SyntheticSpec::linear_preset();
  spec.seed = 7;
  auto a = scratch("det_a"), b = scratch("det_b");
  save_dataset(make_dataset(generate_synthetic(spec), spec, 3), a);
  save_dataset(make_dataset(generate_synthetic(spec), spec, 3), b);
  for (const char* f : {"manifest.json", "records.jsonl", "embeddings.json"}) EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  spec.seed = 8;
  auto c = scratch("det_c");
  save_dataset(make_dataset(generate_synthetic(spec), spec, 3), c);
  EXPECT_NE(slurp(a / "records.jsonl"), slurp(c / "records.jsonl"));
}

TEST(Generate, ScatteredLabelsAreSharedAcrossTasks) {
  auto spec = SyntheticSpec::scattered_preset();
  auto data = generate_synthetic(spec);
  std::map<std::size_t, std::set<std::size_t>> tasks_of;
  for (const auto& v : data.videos)
    for (auto a : v.actions) tasks_of[a].insert(v.task);
  std::size_t shared = 0;
  for (const auto& [label, tasks] : tasks_of) shared += tasks.size() >= 2;
  EXPECT_GE(static_cast<double>(shared), 0.3 * static_cast<double>(spec.num_actions));
}

TEST(Generate, ScatteredWalksNeverRepeatImmediately) {
  auto data = generate_synthetic(SyntheticSpec::scattered_preset());
  for (const auto& v : data.videos)
    for (std::size_t i = 1; i < v.actions.size(); ++i) EXPECT_NE(v.actions[i], v.actions[i - 1]);
}

TEST(Generate, EmbeddingMomentsFollowSpec) {
  auto spec = SyntheticSpec::linear_preset();
  spec.num_actions = 40;
  auto data = generate_synthetic(spec);
  double sum = 0.0, sq = 0.0;
  for (double v : data.embeddings.values) sum += v, sq += v * v;
  const double n = static_cast<double>(data.embeddings.values.size());
  const double mean = sum / n;
  EXPECT_NEAR(mean, spec.embedding_mean, 0.1);
  EXPECT_NEAR(std::sqrt(sq / n - mean * mean), spec.embedding_std, 0.1);
}

TEST(Generate, RejectsChainsLongerThanLabelSpace) {
  auto spec = SyntheticSpec::linear_preset();
  spec.num_actions = 5;
  EXPECT_THROW(generate_synthetic(spec), ConfigError);
  spec = SyntheticSpec::linear_preset();
  spec.num_actions = 2;
  spec.min_actions = spec.max_actions = spec.chain_length = 2;
  auto data = generate_synthetic(spec);
  EXPECT_THROW(make_dataset(data, spec, 3), ConfigError);
}

TEST(Curate, WindowCountsFollowSlidingRule) {
  EXPECT_EQ(curate_windows({record(5)}, 3).size(), 3u);
  EXPECT_EQ(curate_windows({record(3)}, 3).size(), 1u);
  EXPECT_EQ(curate_windows({record(2)}, 3).size(), 0u);
  EXPECT_THROW(curate_windows({record(5)}, 1), ConfigError);
}

TEST(Curate, BoundaryFeaturesBracketTheWindow) {
  auto w = curate_windows({record(5)}, 3);
  for (std::size_t i = 0; i < w.size(); ++i) {
    EXPECT_EQ(w[i].offset, i);
    EXPECT_EQ(w[i].obs_start[0], static_cast<double>(i));
    EXPECT_EQ(w[i].obs_goal[0], static_cast<double>(i + 3));
    EXPECT_EQ(w[i].actions, (std::vector<std::size_t>{i, i + 1, i + 2}));
  }
}

TEST(Curate, TotalMatchesIndependentRecount) {
  auto data = generate_synthetic(SyntheticSpec::linear_preset());
  for (std::size_t horizon : {3u, 4u, 6u}) {
    std::size_t expected = 0;
    for (const auto& v : data.videos) expected += v.actions.size() >= horizon ? v.actions.size() - horizon + 1 : 0;
    auto windows = curate_windows(data.videos, horizon);
    EXPECT_EQ(windows.size(), expected);
    for (const auto& w : windows) {
      const auto& src = data.videos[w.video].actions;
      EXPECT_TRUE(std::equal(w.actions.begin(), w.actions.end(), src.begin() + static_cast<std::ptrdiff_t>(w.offset)));
    }
  }
}

TEST(Split, IsVideoLevelAndDeterministic) {
  ProcedureDataset ds;
  ds.dims = ProblemDims{3, 10, 1, 2};
  ds.num_videos = 10;
  std::vector<VideoRecord> videos(10, record(6));
  ds.windows = curate_windows(videos, 3);
  auto [train, test] = split(ds, 0.7, 11);
  std::set<std::size_t> train_videos, test_videos;
  for (const auto& w : train.windows) train_videos.insert(w.video);
  for (const auto& w : test.windows) test_videos.insert(w.video);
  EXPECT_EQ(train_videos.size(), 7u);
  EXPECT_EQ(test_videos.size(), 3u);
  for (auto v : train_videos) EXPECT_FALSE(test_videos.count(v));
  EXPECT_EQ(train.windows.size() + test.windows.size(), ds.windows.size());
  auto again = split(ds, 0.7, 11);
  EXPECT_EQ(again.first, train);
  EXPECT_THROW(split(ds, 1.0, 0), ConfigError);
}

TEST(Persistence, RoundTripIsExact) {
  auto spec = SyntheticSpec::scattered_preset();
  auto ds = make_dataset(generate_synthetic(spec), spec, 4);
  auto dir = scratch("roundtrip");
  save_dataset(ds, dir);
  EXPECT_EQ(load_dataset(dir), ds);
}

TEST(Persistence, ManifestCountsMatchRecords) {
  auto spec = SyntheticSpec::linear_preset();
  auto ds = make_dataset(generate_synthetic(spec), spec, 3);
  auto dir = scratch("counts");
  save_dataset(ds, dir);
  std::ifstream in(dir / "records.jsonl");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header.rfind("{\"provenance\":", 0), 0u);
  std::size_t lines = 0;
  for (std::string l; std::getline(in, l);) lines += !l.empty();
  EXPECT_EQ(lines, ds.windows.size());
  EXPECT_NE(slurp(dir / "manifest.json").find("\"windows\": " + std::to_string(lines)), std::string::npos);
}

TEST(Persistence, CorruptLabelIsRejectedWithRecordIndex) {
  auto spec = SyntheticSpec::linear_preset();
  auto ds = make_dataset(generate_synthetic(spec), spec, 3);
  ds.windows[5].actions[1] = spec.num_actions + 5;
  auto dir = scratch("corrupt");
  save_dataset(ds, dir);
  try {
    load_dataset(dir);
    FAIL() << "corrupt dataset accepted";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("record 5"), std::string::npos) << msg;
    EXPECT_NE(msg.find("25"), std::string::npos) << msg;
  }
}

TEST(Persistence, VersionAndCountMismatchesAreRejected) {
  auto spec = SyntheticSpec::linear_preset();
  auto ds = make_dataset(generate_synthetic(spec), spec, 3);
  auto dir = scratch("version");
  save_dataset(ds, dir);
  auto manifest = slurp(dir / "manifest.json");
  auto bumped = manifest;
  bumped.replace(bumped.find("\"format_version\": 1"), 19, "\"format_version\": 9");
  std::ofstream(dir / "manifest.json") << bumped;
  EXPECT_THROW(load_dataset(dir), DataError);
  std::ofstream(dir / "manifest.json") << manifest;
  std::ofstream(dir / "records.jsonl", std::ios::app) << slurp(dir / "records.jsonl").substr(0, 10) << "\n";
  EXPECT_THROW(load_dataset(dir), DataError);
}

TEST(Projection, MapsExternalWidthOntoActionBlock) {
  ActionEmbeddingTable t{4, 7, std::vector<double>(28, 1.0)};
  auto p = project_embeddings(t, 4, 3);
  EXPECT_EQ(p.dim, 4u);
  EXPECT_EQ(p.values.size(), 16u);
  EXPECT_EQ(project_embeddings(t, 4, 3), p);
  auto spec = SyntheticSpec::linear_preset();
  spec.embedding_dim = 12;
  auto ds = make_dataset(generate_synthetic(spec), spec, 3);
  EXPECT_EQ(ds.embeddings.dim, spec.num_actions);
}

TEST(Observations, TaskIsLinearlyDecodable) {
  // Softmax regression from [o_s | o_g] to the task label, scored on held-out videos.
  auto spec = SyntheticSpec::linear_preset();
  auto ds = make_dataset(generate_synthetic(spec), spec, 3);
  auto train = subset(ds, Split::Train), test = subset(ds, Split::Test);
  const std::size_t in = 2 * spec.obs_dim, c = spec.num_tasks;
  auto inputs = [&](const ProcedureDataset& d) {
    std::vector<double> x;
    for (const auto& w : d.windows) {
      x.insert(x.end(), w.obs_start.begin(), w.obs_start.end());
      x.insert(x.end(), w.obs_goal.begin(), w.obs_goal.end());
    }
    return Tensor::from_data({d.windows.size(), in}, std::move(x));
  };
  std::vector<std::size_t> labels;
  for (const auto& w : train.windows) labels.push_back(w.task);
  ParameterSet ps;
  auto weight = ps.add("w", Tensor::zeros({c, in}, true));
  auto bias = ps.add("b", Tensor::zeros({c}, true));
  AdamW opt(ps);
  const auto x_train = inputs(train);
  for (int step = 0; step < 300; ++step) {
    ps.zero_grad();
    backward(ops::cross_entropy(ops::linear(x_train, weight, bias), labels));
    opt.step(0.05);
  }
  const auto logits = ops::linear(inputs(test), weight, bias);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < test.windows.size(); ++i) {
    auto row = logits.data().subspan(i * c, c);
    hits += static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()) == test.windows[i].task;
  }
  EXPECT_GE(static_cast<double>(hits) / static_cast<double>(test.windows.size()), 0.9);
}
