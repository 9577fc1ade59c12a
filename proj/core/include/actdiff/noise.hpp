#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "actdiff/dataset.hpp"
#include "actdiff/embedding.hpp"
#include "actdiff/plan_matrix.hpp"
#include "actdiff/rng.hpp"
#include "actdiff/schedule.hpp"

namespace actdiff {

/// How action embeddings enter the forward-process noise.
enum class MaskMode {
  MultiAdd,   // row t carries the sum of the embeddings of actions 1..t
  SingleAdd,  // row t carries only action t's embedding
  NoMask,     // plain Gaussian noise
};

const char* to_string(MaskMode mode);
MaskMode parse_mask_mode(const std::string& s);

/// Additive noise shift for the action block, T x A row-major. Task and
/// observation blocks are never masked.
struct NoiseMask {
  MaskMode mode = MaskMode::NoMask;
  std::size_t horizon = 0;
  std::size_t num_actions = 0;
  std::vector<double> values;

  std::span<const double> row(std::size_t t) const {
    return std::span<const double>(values).subspan(t * num_actions, num_actions);
  }
};

/// `table` must be normalized and as wide as the action block.
NoiseMask build_mask(std::span<const std::size_t> actions, const ActionEmbeddingTable& table, MaskMode mode);

/// Forward process in closed form with the mask as a shift of the noise:
/// action rows become sqrt(ab_n) x0 + sqrt(1 - ab_n) (eps + mask); other rows
/// are copied. n = 0 returns x0 unchanged.
PlanMatrix q_sample(const PlanMatrix& x0, std::size_t n, const NoiseSchedule& schedule, const NoiseMask& mask, Rng& rng);
/// Same with caller-supplied eps (T x A).
PlanMatrix q_sample_with_noise(const PlanMatrix& x0, std::size_t n, const NoiseSchedule& schedule,
                               const NoiseMask& mask, std::span<const double> eps);

/// Per-position statistics of fully noised action entries.
struct NoiseStats {
  std::size_t horizon = 0;
  std::vector<double> mu;
  std::vector<double> sigma;
  MaskMode mode = MaskMode::NoMask;
  std::size_t schedule_steps = 0;
  double schedule_tau = 0.0;

  /// `provenance`, when not empty, is stored under its own key and ignored on load.
  std::string to_json(const std::string& provenance = "") const;
  static NoiseStats from_json(const std::string& text);
  void save(const std::filesystem::path& path, const std::string& provenance = "") const;
  static NoiseStats load(const std::filesystem::path& path);
  bool operator==(const NoiseStats&) const = default;
};

/// Pooled values collected while estimating noise statistics; kept so the
/// analysis tooling can histogram exactly what the estimator saw.
struct NoisedActionSamples {
  std::vector<std::vector<double>> per_position;  // [T][samples]
};

/// Runs q_sample to n = N on every training window (`draws_per_window`
/// times each, seeded per window) and pools action entries per position.
NoiseStats estimate_noise_stats(const ProcedureDataset& train, const NoiseSchedule& schedule, MaskMode mode,
                                std::uint64_t seed, std::size_t draws_per_window = 1,
                                NoisedActionSamples* samples = nullptr);

/// T x A starting noise for inference; position t ~ N(mu_t or 0, sigma_t^2).
std::vector<double> sample_inference_noise(const NoiseStats& stats, std::size_t num_actions, bool use_fitted_mean,
                                           Rng& rng);

}  // namespace actdiff
