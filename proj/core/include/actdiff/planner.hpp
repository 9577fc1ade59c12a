#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "actdiff/classifier.hpp"
#include "actdiff/dataset.hpp"
#include "actdiff/denoiser.hpp"
#include "actdiff/noise.hpp"
#include "actdiff/optim.hpp"
#include "actdiff/plan_matrix.hpp"
#include "actdiff/rng.hpp"
#include "actdiff/schedule.hpp"

namespace actdiff {

/// Posterior q(x_{n-1} | x_n, x0) of the forward process:
/// mean = coef_x0 * x0 + coef_xn * x_n, standard deviation posterior_std.
struct ReverseStepParams {
  double coef_x0 = 0.0;
  double coef_xn = 0.0;
  double posterior_std = 0.0;
};

ReverseStepParams reverse_step_params(const NoiseSchedule& schedule, std::size_t n);

/// Values that are written into every state during sampling.
struct Conditions {
  std::size_t task = 0;
  std::vector<double> obs_start;
  std::vector<double> obs_goal;
};

/// Overwrites the task and observation blocks with the conditioning values
/// (one-hot task in every row, o_s in the first row, o_g in the last, zeros between).
void impose_conditions(PlanMatrix& x, const Conditions& cond);
/// Clamps the action block into [-1, 1]; other blocks are left alone.
void clamp_actions(PlanMatrix& x);

/// One ancestral step. `z` is T x A standard normal noise and is ignored at n = 1.
PlanMatrix reverse_step_with_noise(const PlanMatrix& x_n, const PlanMatrix& x0_hat, std::size_t n,
                                   const NoiseSchedule& schedule, const Conditions& cond, std::span<const double> z);
PlanMatrix reverse_step(const PlanMatrix& x_n, const PlanMatrix& x0_hat, std::size_t n, const NoiseSchedule& schedule,
                        const Conditions& cond, Rng& rng);

/// Called once per reverse step with (n, x_n, clamped x0 prediction) for every query.
using TrajectoryObserver = std::function<void(std::size_t query, std::size_t n, const PlanMatrix& x_n,
                                              const PlanMatrix& x0_hat)>;

struct PlanResult {
  std::size_t predicted_task = 0;
  std::vector<std::size_t> plan;
  bool operator==(const PlanResult&) const = default;
};

struct InferenceOptions {
  bool use_fitted_mean = false;
  std::size_t batch = 64;  // queries denoised together; does not affect results
  const TrajectoryObserver* observer = nullptr;
};

/// Samples x_0 from x_N for fixed conditions, one Rng per query, and
/// returns the final states (before decoding).
std::vector<PlanMatrix> sample_plans(const Denoiser& denoiser, const ProblemDims& dims,
                                     const std::vector<Conditions>& conds, const NoiseStats& stats, const NoiseSchedule& schedule, std::vector<Rng>& rngs,
                                     const InferenceOptions& opts = {});

PlanResult infer_plan(const Denoiser& denoiser, const TaskClassifier& classifier, std::span<const double> obs_start,
                      std::span<const double> obs_goal, const NoiseStats& stats, const NoiseSchedule& schedule,
                      Rng& rng, const InferenceOptions& opts = {});

struct PlanQuery {
  std::vector<double> obs_start;
  std::vector<double> obs_goal;
};

/// Query i draws its noise from Rng::derive(seed, i), so results do not
/// depend on the batch size or on the order queries are processed in.
std::vector<PlanResult> infer_plans(const Denoiser& denoiser, const TaskClassifier& classifier,
                                    const std::vector<PlanQuery>& queries, const NoiseStats& stats,
                                    const NoiseSchedule& schedule, std::uint64_t seed,
                                    const InferenceOptions& opts = {});

struct DenoiserTrainingLog {
  std::vector<double> step_loss;
  std::vector<double> step_lr;
  std::vector<double> epoch_loss;
};

/// Minimizes the mean squared error between the network's x0 prediction and
/// x0 over the whole plan matrix. Each example gets its own uniformly drawn
/// step n and its own forward-process noise with the configured mask.
/// `arch.horizon` and `arch.input_width` are taken from the dataset.
Denoiser train_denoiser(const ProcedureDataset& train, const NoiseSchedule& schedule, MaskMode mode,
                        const TrainingConfig& cfg, DenoiserConfig arch, DenoiserTrainingLog* log = nullptr);

}  // namespace actdiff
