#include "actdiff/metrics.hpp"

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <utility>

#include "actdiff/error.hpp"
#include "json.hpp"

namespace actdiff {

namespace {

void check_pairs(const std::vector<Plan>& preds, const std::vector<Plan>& gts) {
  if (preds.size() != gts.size()) {
    throw ConfigError("metrics: " + std::to_string(preds.size()) + " predictions for " + std::to_string(gts.size()) +
                      " ground-truth plans");
  }
  if (preds.empty()) throw ConfigError("metrics: empty batch");
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i].size() != gts[i].size() || gts[i].empty()) {
      throw ConfigError("metrics: sample " + std::to_string(i) + " has plan lengths " +
                        std::to_string(preds[i].size()) + " and " + std::to_string(gts[i].size()));
    }
  }
}

Plan unique_sorted(Plan p) {
  std::sort(p.begin(), p.end());
  p.erase(std::unique(p.begin(), p.end()), p.end());
  return p;
}

// Per-sample scores are small fractions; their mean is accumulated exactly
// and rounded once, so it cannot depend on the order of the batch.
struct Ratio {
  std::uint64_t num, den;
};

using u128 = unsigned __int128;

u128 gcd128(u128 a, u128 b) {
  while (b) a = std::exchange(b, a % b);
  return a;
}

double to_double(u128 num, u128 den) {
  const auto g = gcd128(num, den);
  if (g > 1) num /= g, den /= g;
  constexpr u128 exact = u128{1} << 53;
  if (num <= exact && den <= exact) return static_cast<double>(num) / static_cast<double>(den);
  return static_cast<double>(static_cast<long double>(num) / static_cast<long double>(den));
}

double exact_mean(const std::vector<Ratio>& scores) {
  constexpr u128 limit = u128{1} << 100;
  u128 p = 0, q = 1;
  for (const auto [n, d] : scores) {
    const u128 g = gcd128(q, d);
    const u128 lcm = q / g * d;
    if (lcm > limit) {
      // Pathological denominators: fall back to a sorted (still order-free) sum.
      std::vector<long double> v;
      for (const auto r : scores) v.push_back(static_cast<long double>(r.num) / static_cast<long double>(r.den));
      std::sort(v.begin(), v.end());
      long double total = 0;
      for (auto x : v) total += x;
      return static_cast<double>(total / static_cast<long double>(scores.size()));
    }
    p = p * (lcm / q) + u128{n} * (lcm / d);
    q = lcm;
    const u128 r = gcd128(p, q);
    if (r > 1) p /= r, q /= r;
  }
  return to_double(p, q * scores.size());
}

Ratio sample_accuracy(const Plan& p, const Plan& g) {
  std::size_t hits = 0;
  for (std::size_t t = 0; t < g.size(); ++t) hits += p[t] == g[t];
  return {hits, g.size()};
}

Ratio sample_siou(const Plan& p, const Plan& g) {
  const auto a = unique_sorted(p), b = unique_sorted(g);
  Plan inter, uni;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(inter));
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(uni));
  return {inter.size(), uni.size()};
}

Ratio sample_set_accuracy(const Plan& p, const Plan& g) {
  std::size_t hits = 0;
  for (auto label : g) hits += std::find(p.begin(), p.end(), label) != p.end();
  return {hits, g.size()};
}

template <class F>
double mean_over(const std::vector<Plan>& preds, const std::vector<Plan>& gts, F per_sample) {
  check_pairs(preds, gts);
  std::vector<Ratio> scores;
  scores.reserve(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) scores.push_back(per_sample(preds[i], gts[i]));
  return exact_mean(scores);
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

double success_rate(const std::vector<Plan>& preds, const std::vector<Plan>& gts) {
  return mean_over(preds, gts, [](const Plan& p, const Plan& g) { return Ratio{p == g ? 1u : 0u, 1}; });
}

double mean_accuracy(const std::vector<Plan>& preds, const std::vector<Plan>& gts) {
  return mean_over(preds, gts, sample_accuracy);
}

double mean_siou(const std::vector<Plan>& preds, const std::vector<Plan>& gts) {
  return mean_over(preds, gts, sample_siou);
}

double set_accuracy(const std::vector<Plan>& preds, const std::vector<Plan>& gts) {
  return mean_over(preds, gts, sample_set_accuracy);
}

EvalReport evaluate(const std::vector<Plan>& preds, const std::vector<Plan>& gts) {
  EvalReport r;
  r.n_samples = preds.size();
  r.sr = success_rate(preds, gts);
  r.macc = mean_accuracy(preds, gts);
  r.msiou = mean_siou(preds, gts);
  r.set_acc = set_accuracy(preds, gts);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto acc = sample_accuracy(preds[i], gts[i]), iou = sample_siou(preds[i], gts[i]);
    r.samples.push_back({preds[i], gts[i], preds[i] == gts[i], static_cast<double>(acc.num) / acc.den,
                         static_cast<double>(iou.num) / iou.den});
  }
  return r;
}

std::string EvalReport::to_json(const std::string& provenance) const {
  // Hand-assembled so every float carries 17 significant digits.
  std::string out = "{\n";
  if (!provenance.empty()) out += "  \"provenance\": " + nlohmann::json::parse(provenance).dump() + ",\n";
  out += "  \"n_samples\": " + std::to_string(n_samples) + ",\n  \"sr\": " + num(sr) +
                    ",\n  \"macc\": " + num(macc) + ",\n  \"msiou\": " + num(msiou) +
                    ",\n  \"set_accuracy\": " + num(set_acc) + ",\n  \"samples\": [";
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    out += i ? ",\n    " : "\n    ";
    out += "{\"pred\":" + nlohmann::json(s.pred).dump() + ",\"gt\":" + nlohmann::json(s.gt).dump() +
           ",\"success\":" + (s.success ? "true" : "false") + ",\"accuracy\":" + num(s.accuracy) +
           ",\"siou\":" + num(s.siou) + "}";
  }
  out += samples.empty() ? "]\n}\n" : "\n  ]\n}\n";
  return out;
}

}  // namespace actdiff
