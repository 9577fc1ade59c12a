#include <gtest/gtest.h>

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>

#include "actdiff/error.hpp"
#include "actdiff/metrics.hpp"

using namespace actdiff;

namespace {

// Brute-force oracles written without the library's helpers. Each keeps the
// batch total as a reduced fraction of 64-bit integers and divides once, so a
// correctly rounded library mean must match it bit for bit.
struct Fraction {
  std::int64_t n = 0, d = 1;
  void add(std::int64_t a, std::int64_t b) {
    n = n * b + a * d;
    d *= b;
    const auto g = std::gcd(n, d);
    n /= g;
    d /= g;
  }
  double mean(std::size_t count) const { return static_cast<double>(n) / static_cast<double>(d * count); }
};

double oracle_sr(const std::vector<Plan>& p, const std::vector<Plan>& g) {
  Fraction f;
  for (std::size_t i = 0; i < p.size(); ++i) {
    bool all = true;
    for (std::size_t t = 0; t < g[i].size(); ++t) all = all && p[i][t] == g[i][t];
    f.add(all, 1);
  }
  return f.mean(p.size());
}

double oracle_macc(const std::vector<Plan>& p, const std::vector<Plan>& g) {
  Fraction f;
  for (std::size_t i = 0; i < p.size(); ++i) {
    std::int64_t m = 0;
    for (std::size_t t = 0; t < g[i].size(); ++t) m += p[i][t] == g[i][t];
    f.add(m, static_cast<std::int64_t>(g[i].size()));
  }
  return f.mean(p.size());
}

double oracle_siou(const std::vector<Plan>& p, const std::vector<Plan>& g, std::size_t labels) {
  Fraction f;
  for (std::size_t i = 0; i < p.size(); ++i) {
    std::int64_t inter = 0, uni = 0;
    for (std::size_t a = 0; a < labels; ++a) {
      const bool in_p = std::count(p[i].begin(), p[i].end(), a) > 0;
      const bool in_g = std::count(g[i].begin(), g[i].end(), a) > 0;
      inter += in_p && in_g;
      uni += in_p || in_g;
    }
    f.add(inter, uni);
  }
  return f.mean(p.size());
}

}  // namespace

TEST(Metrics, DocumentedExamples) {
  const Plan g{1, 2, 3};
  EXPECT_EQ(success_rate({{1, 2, 3}}, {g}), 1.0);
  EXPECT_EQ(success_rate({{1, 3, 2}}, {g}), 0.0);
  EXPECT_EQ(success_rate({{1, 2, 3}, {3, 2, 1}}, {g, g}), 0.5);
  EXPECT_DOUBLE_EQ(mean_accuracy({{1, 3, 2}}, {g}), 1.0 / 3.0);
  EXPECT_EQ(mean_accuracy({g}, {g}), 1.0);
  EXPECT_EQ(mean_accuracy({{4, 5, 6}}, {g}), 0.0);
  EXPECT_EQ(mean_siou({{1, 3, 2}}, {g}), 1.0);
  EXPECT_DOUBLE_EQ(mean_siou({{1, 1, 2}}, {g}), 2.0 / 3.0);
  EXPECT_EQ(set_accuracy({{1, 3, 2}}, {g}), 1.0);
}

TEST(Metrics, RejectsMismatchedInputs) {
  EXPECT_THROW(success_rate({{1, 2}}, {{1, 2, 3}}), ConfigError);
  EXPECT_THROW(mean_accuracy({{1, 2, 3}}, {}), ConfigError);
  EXPECT_THROW(mean_siou({}, {}), ConfigError);
}

TEST(Metrics, AgreeWithBruteForceAndRespectOrdering) {
  std::mt19937_64 gen(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t T = 2 + gen() % 5, A = 3 + gen() % 48, B = 1 + gen() % 8;
    std::vector<Plan> p(B, Plan(T)), g(B, Plan(T));
    for (std::size_t i = 0; i < B; ++i)
      for (std::size_t t = 0; t < T; ++t) {
        g[i][t] = gen() % A;
        p[i][t] = gen() % 3 == 0 ? g[i][t] : gen() % A;
      }
    const auto r = evaluate(p, g);
    ASSERT_EQ(r.sr, oracle_sr(p, g));
    ASSERT_EQ(r.macc, oracle_macc(p, g));
    ASSERT_EQ(r.msiou, oracle_siou(p, g, A));
    ASSERT_LE(r.sr, r.macc);
    ASSERT_LE(r.sr, r.msiou);
    ASSERT_LE(r.macc, 1.0);
    ASSERT_LE(r.msiou, 1.0);
  }
}

TEST(Metrics, BatchOrderDoesNotMatter) {
  std::mt19937_64 gen(5);
  std::vector<Plan> p(200, Plan(4)), g(200, Plan(4));
  for (std::size_t i = 0; i < 200; ++i)
    for (std::size_t t = 0; t < 4; ++t) g[i][t] = gen() % 6, p[i][t] = gen() % 6;
  std::vector<std::size_t> order(200);
  for (std::size_t i = 0; i < 200; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), gen);
  std::vector<Plan> ps, gs;
  for (auto i : order) ps.push_back(p[i]), gs.push_back(g[i]);
  EXPECT_EQ(success_rate(p, g), success_rate(ps, gs));
  EXPECT_EQ(mean_accuracy(p, g), mean_accuracy(ps, gs));
  EXPECT_EQ(mean_siou(p, g), mean_siou(ps, gs));
}

TEST(Metrics, ReportJsonCarriesBreakdown) {
  auto r = evaluate({{1, 2, 3}, {1, 1, 2}}, {{1, 2, 3}, {1, 2, 3}});
  const auto j = r.to_json();
  EXPECT_NE(j.find("\"n_samples\": 2"), std::string::npos);
  EXPECT_NE(j.find("\"siou\":0.66666666666666663"), std::string::npos) << j;
  EXPECT_EQ(r.samples.size(), 2u);
}
