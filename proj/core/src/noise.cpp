#include "actdiff/noise.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "actdiff/error.hpp"
#include "json.hpp"

namespace actdiff {

using nlohmann::json;

ActionEmbeddingTable normalize_embeddings(const ActionEmbeddingTable& raw) {
  if (raw.values.empty() || raw.num_actions == 0 || raw.dim == 0) throw ConfigError("normalize_embeddings: empty table");
  if (raw.values.size() != raw.num_actions * raw.dim) {
    throw ConfigError("normalize_embeddings: table holds " + std::to_string(raw.values.size()) + " values, expected " +
                      std::to_string(raw.num_actions * raw.dim));
  }
  for (double v : raw.values)
    if (!std::isfinite(v)) throw ConfigError("normalize_embeddings: non-finite entry");
  auto [lo, hi] = std::minmax_element(raw.values.begin(), raw.values.end());
  ActionEmbeddingTable out = raw;
  out.g_min = *lo;
  out.g_max = *hi;
  out.normalized = true;
  const double range = out.g_max - out.g_min;
  for (auto& v : out.values) {
    v = range > 0.0 ? std::clamp(2.0 * (v - out.g_min) / range - 1.0, -1.0, 1.0) : 0.0;
  }
  return out;
}

const char* to_string(MaskMode mode) {
  switch (mode) {
    case MaskMode::MultiAdd: return "multiadd";
    case MaskMode::SingleAdd: return "singleadd";
    case MaskMode::NoMask: return "nomask";
  }
  return "?";
}

MaskMode parse_mask_mode(const std::string& s) {
  std::string k;
  for (char c : s)
    if (c != '-' && c != '_') k.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (k == "multiadd") return MaskMode::MultiAdd;
  if (k == "singleadd") return MaskMode::SingleAdd;
  if (k == "nomask" || k == "none") return MaskMode::NoMask;
  throw ConfigError("unknown mask mode '" + s + "' (expected multiadd, singleadd or nomask)");
}

NoiseMask build_mask(std::span<const std::size_t> actions, const ActionEmbeddingTable& table, MaskMode mode) {
  NoiseMask mask;
  mask.mode = mode;
  mask.horizon = actions.size();
  mask.num_actions = table.num_actions;
  mask.values.assign(mask.horizon * mask.num_actions, 0.0);
  for (std::size_t t = 0; t < actions.size(); ++t) {
    if (actions[t] >= table.num_actions) {
      throw ConfigError("build_mask: label " + std::to_string(actions[t]) + " at position " + std::to_string(t) +
                        " out of range [0," + std::to_string(table.num_actions) + ")");
    }
  }
  if (mode == MaskMode::NoMask) return mask;
  if (!table.normalized) throw ConfigError("build_mask: embedding table is not normalized");
  if (table.dim != table.num_actions) {
    throw ConfigError("build_mask: embedding width " + std::to_string(table.dim) +
                      " differs from the action block width " + std::to_string(table.num_actions));
  }
  const std::size_t a = table.num_actions;
  for (std::size_t t = 0; t < actions.size(); ++t) {
    auto emb = table.row(actions[t]);
    double* dst = mask.values.data() + t * a;
    if (mode == MaskMode::MultiAdd && t > 0) std::copy_n(mask.values.data() + (t - 1) * a, a, dst);
    for (std::size_t i = 0; i < a; ++i) dst[i] += emb[i];
  }
  return mask;
}

PlanMatrix q_sample_with_noise(const PlanMatrix& x0, std::size_t n, const NoiseSchedule& schedule,
                               const NoiseMask& mask, std::span<const double> eps) {
  const auto& dims = x0.dims();
  if (n > schedule.steps()) {
    throw ConfigError("q_sample: step " + std::to_string(n) + " outside [0, " + std::to_string(schedule.steps()) + "]");
  }
  if (mask.horizon != dims.horizon || mask.num_actions != dims.num_actions ||
      mask.values.size() != dims.horizon * dims.num_actions) {
    throw ConfigError("q_sample: mask " + std::to_string(mask.horizon) + "x" + std::to_string(mask.num_actions) +
                      " does not match action block " + std::to_string(dims.horizon) + "x" +
                      std::to_string(dims.num_actions));
  }
  if (eps.size() != dims.horizon * dims.num_actions) {
    throw ConfigError("q_sample: noise block has " + std::to_string(eps.size()) + " entries, expected " +
                      std::to_string(dims.horizon * dims.num_actions));
  }
  PlanMatrix xn = x0;
  if (n == 0) return xn;
  const double ab = schedule.alpha_bar()[n];
  const double signal = std::sqrt(ab), noise = std::sqrt(1.0 - ab);
  for (std::size_t t = 0; t < dims.horizon; ++t) {
    auto src = x0.action_block(t);
    auto dst = xn.action_block(t);
    auto m = mask.row(t);
    for (std::size_t i = 0; i < dims.num_actions; ++i) {
      dst[i] = signal * src[i] + noise * (eps[t * dims.num_actions + i] + m[i]);
    }
  }
  return xn;
}

PlanMatrix q_sample(const PlanMatrix& x0, std::size_t n, const NoiseSchedule& schedule, const NoiseMask& mask,
                    Rng& rng) {
  std::vector<double> eps(x0.dims().horizon * x0.dims().num_actions);
  for (auto& e : eps) e = rng.normal();
  return q_sample_with_noise(x0, n, schedule, mask, eps);
}

std::string NoiseStats::to_json(const std::string& provenance) const {
  json j;
  if (!provenance.empty()) j["provenance"] = json::parse(provenance);
  j["horizon"] = horizon;
  j["mu"] = mu;
  j["sigma"] = sigma;
  j["mode"] = actdiff::to_string(mode);
  j["schedule"] = {{"N", schedule_steps}, {"tau", schedule_tau}};
  return j.dump(2);
}

NoiseStats NoiseStats::from_json(const std::string& text) {
  NoiseStats s;
  try {
    auto j = json::parse(text);
    s.horizon = j.at("horizon").get<std::size_t>();
    s.mu = j.at("mu").get<std::vector<double>>();
    s.sigma = j.at("sigma").get<std::vector<double>>();
    s.mode = parse_mask_mode(j.at("mode").get<std::string>());
    s.schedule_steps = j.at("schedule").at("N").get<std::size_t>();
    s.schedule_tau = j.at("schedule").at("tau").get<double>();
  } catch (const json::exception& e) {
    throw DataError(std::string("noise stats: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("noise stats: ") + e.what());
  }
  if (s.mu.size() != s.horizon || s.sigma.size() != s.horizon) {
    throw DataError("noise stats: mu/sigma length does not match horizon " + std::to_string(s.horizon));
  }
  for (std::size_t t = 0; t < s.horizon; ++t) {
    if (!(s.sigma[t] > 0.0) || !std::isfinite(s.mu[t])) {
      throw DataError("noise stats: invalid entry at position " + std::to_string(t));
    }
  }
  return s;
}

void NoiseStats::save(const std::filesystem::path& path, const std::string& provenance) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << to_json(provenance) << '\n';
}

NoiseStats NoiseStats::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return from_json(ss.str());
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

NoiseStats estimate_noise_stats(const ProcedureDataset& train, const NoiseSchedule& schedule, MaskMode mode,
                                std::uint64_t seed, std::size_t draws_per_window, NoisedActionSamples* samples) {
  if (train.windows.empty()) throw ConfigError("estimate_noise_stats: empty training set");
  if (draws_per_window == 0) throw ConfigError("estimate_noise_stats: draws_per_window must be positive");
  const auto& dims = train.dims;
  const auto table = mode == MaskMode::NoMask ? ActionEmbeddingTable{} : normalize_embeddings(train.embeddings);
  const std::size_t n = schedule.steps();

  std::vector<double> sum(dims.horizon, 0.0), sum_sq(dims.horizon, 0.0);
  std::size_t count = 0;
  if (samples) samples->per_position.assign(dims.horizon, {});
  for (std::size_t w = 0; w < train.windows.size(); ++w) {
    const auto& win = train.windows[w];
    const auto x0 = assemble_x0(win.task, win.actions, win.obs_start, win.obs_goal, dims);
    NoiseMask mask;
    if (mode == MaskMode::NoMask) {
      mask = NoiseMask{mode, dims.horizon, dims.num_actions, std::vector<double>(dims.horizon * dims.num_actions, 0.0)};
    } else {
      mask = build_mask(win.actions, table, mode);
    }
    for (std::size_t d = 0; d < draws_per_window; ++d) {
      Rng rng = Rng::derive(seed, w * draws_per_window + d);
      const auto xn = q_sample(x0, n, schedule, mask, rng);
      for (std::size_t t = 0; t < dims.horizon; ++t) {
        for (double v : xn.action_block(t)) {
          sum[t] += v;
          sum_sq[t] += v * v;
          if (samples) samples->per_position[t].push_back(v);
        }
      }
      count += dims.num_actions;
    }
  }

  NoiseStats stats;
  stats.horizon = dims.horizon;
  stats.mode = mode;
  stats.schedule_steps = schedule.steps();
  stats.schedule_tau = schedule.tau();
  const double c = static_cast<double>(count);
  for (std::size_t t = 0; t < dims.horizon; ++t) {
    const double mu = sum[t] / c;
    const double var = std::max(0.0, (sum_sq[t] - c * mu * mu) / (c - 1.0));
    stats.mu.push_back(mu);
    stats.sigma.push_back(std::sqrt(var));
  }
  return stats;
}

std::vector<double> sample_inference_noise(const NoiseStats& stats, std::size_t num_actions, bool use_fitted_mean,
                                           Rng& rng) {
  if (stats.mu.size() != stats.horizon || stats.sigma.size() != stats.horizon) {
    throw ConfigError("sample_inference_noise: inconsistent noise stats");
  }
  std::vector<double> block(stats.horizon * num_actions);
  for (std::size_t t = 0; t < stats.horizon; ++t) {
    const double mean = use_fitted_mean ? stats.mu[t] : 0.0;
    for (std::size_t a = 0; a < num_actions; ++a) block[t * num_actions + a] = rng.normal(mean, stats.sigma[t]);
  }
  return block;
}

}  // namespace actdiff
