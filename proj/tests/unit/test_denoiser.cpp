#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "actdiff/denoiser.hpp"
#include "actdiff/error.hpp"
#include "actdiff/grad_check.hpp"
#include "actdiff/ops.hpp"
#include "actdiff/rng.hpp"

using namespace actdiff;

namespace {

DenoiserConfig tiny(bool attention, std::size_t horizon = 3) {
  DenoiserConfig c;
  c.channels = {8, 8};
  c.attention = attention;
  c.time_embed_dim = 8;
  c.input_width = 7;
  c.horizon = horizon;
  return c;
}

void randomize(Denoiser& d, std::uint64_t seed, double scale = 0.3) {
  Rng rng(seed);
  for (auto& e : d.parameters().entries())
    for (auto& v : e.tensor.mutable_data()) v = rng.normal(0.0, scale);
}

Tensor random_input(std::size_t b, std::size_t t, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(b * t * w);
  for (auto& x : v) x = rng.normal();
  return Tensor::from_data({b, t, w}, std::move(v));
}

}  // namespace

TEST(Sinusoid, StepZeroIsSinZerosThenCosOnes) {
  auto e = sinusoidal_embedding(0, 16);
  for (std::size_t i = 0; i < 8; ++i) {
    EXPECT_EQ(e[i], 0.0);
    EXPECT_EQ(e[8 + i], 1.0);
  }
  EXPECT_THROW(sinusoidal_embedding(3, 15), ConfigError);
}

TEST(TimeEmbed, InjectiveOverAllStepsAndDeterministic) {
  DenoiserConfig cfg;
  cfg.input_width = 27;
  cfg.horizon = 3;
  Denoiser d(cfg);
  std::set<std::vector<double>> seen;
  for (std::size_t n = 1; n <= 200; ++n) seen.insert(d.time_embed(n));
  EXPECT_EQ(seen.size(), 200u);
  EXPECT_EQ(d.time_embed(17), d.time_embed(17));
}

TEST(Attention, SinglePositionIsIdentityPlusValue) {
  Denoiser d(tiny(true, 1));
  randomize(d, 4);
  auto x = random_input(2, 1, 8, 5);
  Tensor weights;
  auto y = d.attention_forward("enc0.attn", x, &weights);
  ASSERT_EQ(weights.shape(), (Shape{2, 1, 1}));
  EXPECT_EQ(weights.data()[0], 1.0);
  auto v = ops::conv1d(x, d.parameters().at("enc0.attn.v.weight"), d.parameters().at("enc0.attn.v.bias"));
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y.data()[i], x.data()[i] + v.data()[i], 1e-14);
}

TEST(Attention, WeightRowsSumToOne) {
  Denoiser d(tiny(true, 6));
  randomize(d, 6, 1.0);
  Tensor weights;
  d.attention_forward("dec0.attn", random_input(3, 6, 8, 7), &weights);
  for (std::size_t r = 0; r < 3 * 6; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 6; ++c) s += weights.data()[r * 6 + c];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Attention, IdenticalPositionsGetIdenticalOutputs) {
  Denoiser d(tiny(true, 5));
  randomize(d, 8, 1.0);
  Rng rng(3);
  std::vector<double> row(8), v;
  for (auto& r : row) r = rng.normal();
  for (int t = 0; t < 5; ++t) v.insert(v.end(), row.begin(), row.end());
  auto y = d.attention_forward("enc1.attn", Tensor::from_data({1, 5, 8}, v));
  for (std::size_t t = 1; t < 5; ++t)
    for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(y.data()[t * 8 + c], y.data()[c], 1e-13);
}

TEST(Denoiser, PredictionHasInputShapeAndIsDeterministic) {
  ProblemDims dims{3, 3, 2, 2};
  auto cfg = tiny(true);
  Denoiser a(cfg), b(cfg);
  PlanMatrix x(dims);
  for (std::size_t i = 0; i < x.values().size(); ++i) x.values()[i] = std::sin(static_cast<double>(i));
  randomize(a, 1);
  randomize(b, 1);
  auto pa = a.predict_x0(x, 10), pb = b.predict_x0(x, 10);
  EXPECT_EQ(pa.rows(), 3u);
  EXPECT_EQ(pa.width(), 7u);
  EXPECT_EQ(pa, pb);
  EXPECT_THROW(a.predict_x0(PlanMatrix(ProblemDims{4, 3, 2, 2}), 10), ConfigError);
  EXPECT_THROW(a.forward(random_input(1, 3, 6, 0), std::vector<std::size_t>{1}), ConfigError);
}

TEST(Denoiser, FreshNetworkPredictsZeros) {
  Denoiser d(tiny(true));
  auto y = d.forward(random_input(2, 3, 7, 2), std::vector<std::size_t>{3, 9});
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Denoiser, OutputFiniteAtEveryStep) {
  DenoiserConfig cfg;
  cfg.input_width = 27;
  cfg.horizon = 3;
  Denoiser d(cfg);
  randomize(d, 2, 0.1);
  auto x = random_input(1, 3, 27, 1);
  for (std::size_t n : {1u, 50u, 199u, 200u}) {
    for (double v : d.forward(x, std::vector<std::size_t>{n}).data()) ASSERT_TRUE(std::isfinite(v));
  }
}

TEST(Denoiser, ParameterCountDependsOnlyOnConfig) {
  auto cfg = tiny(true);
  Denoiser a(cfg);
  cfg.init_seed = 99;
  Denoiser b(cfg);
  EXPECT_EQ(a.parameters().count(), b.parameters().count());
}

TEST(Denoiser, DisablingAttentionRemovesExactlyTheProjections) {
  DenoiserConfig cfg;
  cfg.input_width = 27;
  cfg.horizon = 3;
  Denoiser with(cfg);
  cfg.attention = false;
  Denoiser without(cfg);
  // Three C x C projections (query and value biased, key not) after every encoder stage and every decoder stage but the last.
  std::size_t expected = 0;
  for (std::size_t s = 0; s < 3; ++s) expected += 3 * cfg.channels[s] * cfg.channels[s] + 2 * cfg.channels[s];
  for (std::size_t s = 0; s < 2; ++s) expected += 3 * cfg.channels[s] * cfg.channels[s] + 2 * cfg.channels[s];
  EXPECT_EQ(with.attention_parameter_count(), expected);
  EXPECT_EQ(with.parameters().count() - without.parameters().count(), expected);
  EXPECT_EQ(without.attention_parameter_count(), 0u);
}

TEST(Denoiser, ConvolutionOnlyNetworkHasBoundedReach) {
  auto cfg = tiny(false, 16);
  cfg.channels = {8};
  Denoiser d(cfg);
  randomize(d, 11);
  const std::size_t radius = d.receptive_radius();
  ASSERT_LT(radius, 15u);
  auto x = random_input(1, 16, 7, 3);
  std::vector<double> bumped(x.data().begin(), x.data().end());
  for (std::size_t c = 0; c < 7; ++c) bumped[c] += 1.0;
  const std::vector<std::size_t> n{5};
  auto y0 = d.forward(x, n), y1 = d.forward(Tensor::from_data({1, 16, 7}, bumped), n);
  for (std::size_t t = 0; t < 16; ++t) {
    bool changed = false;
    for (std::size_t c = 0; c < 7; ++c) changed = changed || y0.data()[t * 7 + c] != y1.data()[t * 7 + c];
    if (t <= radius) {
      EXPECT_TRUE(changed) << "position " << t;
    } else {
      EXPECT_FALSE(changed) << "position " << t;
    }
  }
}

TEST(Denoiser, AttentionReachesEveryPosition) {
  auto cfg = tiny(true, 16);
  cfg.channels = {8};
  Denoiser d(cfg);
  randomize(d, 11);
  auto x = random_input(1, 16, 7, 3);
  std::vector<double> bumped(x.data().begin(), x.data().end());
  for (std::size_t c = 0; c < 7; ++c) bumped[c] += 1.0;
  const std::vector<std::size_t> n{5};
  auto y0 = d.forward(x, n), y1 = d.forward(Tensor::from_data({1, 16, 7}, bumped), n);
  for (std::size_t t = 0; t < 16; ++t) {
    bool changed = false;
    for (std::size_t c = 0; c < 7; ++c) changed = changed || y0.data()[t * 7 + c] != y1.data()[t * 7 + c];
    EXPECT_TRUE(changed) << "position " << t;
  }
}

TEST(Denoiser, FullModelGradientMatchesFiniteDifferences) {
  for (bool attention : {true, false}) {
    Denoiser d(tiny(attention));
    randomize(d, 21);
    const auto x = random_input(2, 3, 7, 1), noise = random_input(2, 3, 7, 2);
    const std::vector<std::size_t> steps{4, 150};
    // A near-optimal target keeps loss roundoff below the smallest gradients.
    const auto target = ops::add(d.forward(x, steps), ops::scale(noise, 0.01)).detach();
    auto loss = [&] { return ops::mse(d.forward(x, steps), target); };
    d.parameters().zero_grad();
    EXPECT_LE(finite_difference_check(loss, d.parameters().tensors()), 1e-4) << "attention=" << attention;
  }
}

TEST(Config, JsonRoundTripAndValidation) {
  auto cfg = tiny(false);
  cfg.activation = Activation::SiLU;
  EXPECT_EQ(DenoiserConfig::from_json(cfg.to_json()), cfg);
  cfg.time_embed_dim = 7;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = tiny(false);
  cfg.channels.clear();
  EXPECT_THROW(Denoiser{cfg}, ConfigError);
}
