#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "actdiff/dataset.hpp"
#include "actdiff/error.hpp"
#include "actdiff/noise.hpp"

using namespace actdiff;

namespace {

ActionEmbeddingTable small_table() {
  ActionEmbeddingTable t;
  t.num_actions = 3;
  t.dim = 3;
  t.values = {-2.0, 0.0, 1.0, 4.0, 2.0, -1.0, 0.5, 3.0, 1.5};
  return t;
}

ProblemDims dims3() { return ProblemDims{3, 3, 2, 2}; }

PlanMatrix sample_x0() {
  const std::size_t actions[] = {2, 0, 1};
  const double os[] = {0.25, -0.5}, og[] = {1.5, 2.0};
  return assemble_x0(1, actions, os, og, dims3());
}

const ProcedureDataset& linear_train() {
  static const ProcedureDataset ds = [] {
    auto spec = SyntheticSpec::linear_preset();
    return subset(make_dataset(generate_synthetic(spec), spec, 3), Split::Train);
  }();
  return ds;
}

}  // namespace

TEST(Normalize, MapsExtremesToUnitBounds) {
  auto n = normalize_embeddings(small_table());
  EXPECT_TRUE(n.normalized);
  EXPECT_EQ(n.g_min, -2.0);
  EXPECT_EQ(n.g_max, 4.0);
  EXPECT_EQ(n.values[0], -1.0);
  EXPECT_EQ(n.values[3], 1.0);
  EXPECT_DOUBLE_EQ(n.values[1], 2.0 * 2.0 / 6.0 - 1.0);
  for (double v : n.values) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Normalize, ConstantTableBecomesZeros) {
  ActionEmbeddingTable t{2, 2, {0.7, 0.7, 0.7, 0.7}};
  for (double v : normalize_embeddings(t).values) EXPECT_EQ(v, 0.0);
}

TEST(Normalize, RejectsEmptyAndNonFinite) {
  EXPECT_THROW(normalize_embeddings(ActionEmbeddingTable{}), ConfigError);
  ActionEmbeddingTable t{1, 2, {1.0, std::numeric_limits<double>::quiet_NaN()}};
  EXPECT_THROW(normalize_embeddings(t), ConfigError);
}

TEST(Mask, MultiAddIsRunningSumOfEmbeddings) {
  auto table = normalize_embeddings(small_table());
  const std::size_t actions[] = {2, 0, 1};
  auto mask = build_mask(actions, table, MaskMode::MultiAdd);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t i = 0; i < 3; ++i) {
      double expected = 0.0;
      for (std::size_t k = 0; k <= t; ++k) expected += table.values[actions[k] * 3 + i];
      EXPECT_NEAR(mask.row(t)[i], expected, 1e-15);
    }
}

TEST(Mask, SingleAddCarriesOnlyTheCurrentAction) {
  auto table = normalize_embeddings(small_table());
  const std::size_t actions[] = {1, 1, 2};
  auto mask = build_mask(actions, table, MaskMode::SingleAdd);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(mask.row(t)[i], table.values[actions[t] * 3 + i]);
}

TEST(Mask, NoMaskIsZeroAndRejectsBadInput) {
  auto table = normalize_embeddings(small_table());
  const std::size_t actions[] = {0, 1, 2};
  for (double v : build_mask(actions, table, MaskMode::NoMask).values) EXPECT_EQ(v, 0.0);
  const std::size_t bad[] = {0, 3, 1};
  EXPECT_THROW(build_mask(bad, table, MaskMode::MultiAdd), ConfigError);
  EXPECT_THROW(build_mask(actions, small_table(), MaskMode::MultiAdd), ConfigError);
}

TEST(Mask, ModeNamesRoundTrip) {
  for (auto m : {MaskMode::MultiAdd, MaskMode::SingleAdd, MaskMode::NoMask}) EXPECT_EQ(parse_mask_mode(to_string(m)), m);
  EXPECT_EQ(parse_mask_mode("Multi_Add"), MaskMode::MultiAdd);
  EXPECT_THROW(parse_mask_mode("double"), ConfigError);
}

TEST(QSample, StepZeroIsIdentityAndOnlyActionRowsChange) {
  NoiseSchedule s(50);
  auto x0 = sample_x0();
  auto mask = build_mask(std::vector<std::size_t>{2, 0, 1}, normalize_embeddings(small_table()), MaskMode::MultiAdd);
  Rng rng(1);
  EXPECT_EQ(q_sample(x0, 0, s, mask, rng), x0);
  auto xn = q_sample(x0, 25, s, mask, rng);
  for (std::size_t t = 0; t < 3; ++t) {
    for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(xn.task_block(t)[c], x0.task_block(t)[c]);
    for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(xn.observation_block(t)[c], x0.observation_block(t)[c]);
  }
  EXPECT_THROW(q_sample(x0, 51, s, mask, rng), ConfigError);
}

TEST(QSample, MaskEntersAsScaledShift) {
  NoiseSchedule s(200);
  auto x0 = sample_x0();
  auto table = normalize_embeddings(small_table());
  const std::size_t actions[] = {2, 0, 1};
  auto mask = build_mask(actions, table, MaskMode::MultiAdd);
  auto zero = build_mask(actions, table, MaskMode::NoMask);
  Rng rng(9);
  std::vector<double> eps(9);
  for (auto& e : eps) e = rng.normal();
  for (std::size_t n : {1u, 37u, 100u, 200u}) {
    auto with = q_sample_with_noise(x0, n, s, mask, eps);
    auto without = q_sample_with_noise(x0, n, s, zero, eps);
    const double k = std::sqrt(1.0 - s.alpha_bar()[n]);
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t i = 0; i < 3; ++i) {
        const double diff = with.action_block(t)[i] - without.action_block(t)[i];
        EXPECT_NEAR(diff, k * mask.row(t)[i], 8 * std::numeric_limits<double>::epsilon()) << n;
      }
  }
}

TEST(NoiseStats, JsonRoundTripAndValidation) {
  NoiseStats st{3, {0.1, -0.2, 0.3}, {1.0, 1.5, 2.0}, MaskMode::MultiAdd, 200, 0.008};
  EXPECT_EQ(NoiseStats::from_json(st.to_json()), st);
  EXPECT_THROW(NoiseStats::from_json("{\"horizon\":2}"), DataError);
  EXPECT_THROW(NoiseStats::from_json(R"({"horizon":1,"mu":[0],"sigma":[-1],"mode":"nomask","schedule":{"N":5,"tau":0.1}})"),
               DataError);
  const auto path = std::filesystem::temp_directory_path() / "actdiff_noise_stats_test.json";
  st.save(path);
  EXPECT_EQ(NoiseStats::load(path), st);
  std::filesystem::remove(path);
}

TEST(NoiseStats, NoMaskIsStandardNormalAtFullNoise) {
  NoiseSchedule s(200);
  auto st = estimate_noise_stats(linear_train(), s, MaskMode::NoMask, 0, 4);
  for (std::size_t t = 0; t < 3; ++t) {
    EXPECT_NEAR(st.mu[t], 0.0, 0.05);
    EXPECT_NEAR(st.sigma[t], 1.0, 0.05);
  }
}

TEST(NoiseStats, MultiAddSpreadGrowsWithPosition) {
  NoiseSchedule s(200);
  auto st = estimate_noise_stats(linear_train(), s, MaskMode::MultiAdd, 0);
  EXPECT_LT(st.sigma[0], st.sigma[1]);
  EXPECT_LT(st.sigma[1], st.sigma[2]);
}

TEST(NoiseStats, EstimationIsDeterministicAndKeepsSamples) {
  NoiseSchedule s(50);
  NoisedActionSamples a, b;
  auto x = estimate_noise_stats(linear_train(), s, MaskMode::SingleAdd, 3, 1, &a);
  auto y = estimate_noise_stats(linear_train(), s, MaskMode::SingleAdd, 3, 1, &b);
  EXPECT_EQ(x, y);
  EXPECT_EQ(a.per_position, b.per_position);
  EXPECT_EQ(a.per_position[0].size(), linear_train().windows.size() * 20);
}

TEST(InferenceNoise, CentersOnZeroUnlessFittedMeanRequested) {
  NoiseStats st{2, {3.0, -3.0}, {0.5, 2.0}, MaskMode::MultiAdd, 10, 0.008};
  Rng rng(4);
  double sum0 = 0.0, sum1 = 0.0;
  const int reps = 2000;
  for (int r = 0; r < reps; ++r) {
    auto z = sample_inference_noise(st, 5, false, rng);
    for (std::size_t a = 0; a < 5; ++a) sum0 += z[a];
    auto f = sample_inference_noise(st, 5, true, rng);
    for (std::size_t a = 0; a < 5; ++a) sum1 += f[5 + a];
  }
  EXPECT_NEAR(sum0 / (5.0 * reps), 0.0, 0.05);
  EXPECT_NEAR(sum1 / (5.0 * reps), -3.0, 0.15);
}
