#include "actdiff/planner.hpp"

#include <algorithm>
#include <cmath>

#include "actdiff/error.hpp"
#include "actdiff/ops.hpp"

namespace actdiff {

ReverseStepParams reverse_step_params(const NoiseSchedule& schedule, std::size_t n) {
  const auto [ab, beta] = schedule.query(n);
  const double ab_prev = schedule.alpha_bar()[n - 1];
  ReverseStepParams p;
  p.coef_x0 = std::sqrt(ab_prev) * beta / (1.0 - ab);
  p.coef_xn = std::sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab);
  p.posterior_std = std::sqrt(beta * (1.0 - ab_prev) / (1.0 - ab));
  return p;
}

void impose_conditions(PlanMatrix& x, const Conditions& cond) {
  const auto& dims = x.dims();
  if (cond.task >= dims.num_tasks) {
    throw ConfigError("conditions: task " + std::to_string(cond.task) + " out of range [0," +
                      std::to_string(dims.num_tasks) + ")");
  }
  if (cond.obs_start.size() != dims.obs_dim || cond.obs_goal.size() != dims.obs_dim) {
    throw ConfigError("conditions: observation width differs from " + std::to_string(dims.obs_dim));
  }
  for (std::size_t t = 0; t < dims.horizon; ++t) {
    auto task = x.task_block(t);
    std::fill(task.begin(), task.end(), 0.0);
    task[cond.task] = 1.0;
    auto obs = x.observation_block(t);
    if (t == 0) {
      std::copy(cond.obs_start.begin(), cond.obs_start.end(), obs.begin());
    } else if (t + 1 == dims.horizon) {
      std::copy(cond.obs_goal.begin(), cond.obs_goal.end(), obs.begin());
    } else {
      std::fill(obs.begin(), obs.end(), 0.0);
    }
  }
}

void clamp_actions(PlanMatrix& x) {
  for (std::size_t t = 0; t < x.rows(); ++t)
    for (auto& v : x.action_block(t)) v = std::clamp(v, -1.0, 1.0);
}

PlanMatrix reverse_step_with_noise(const PlanMatrix& x_n, const PlanMatrix& x0_hat, std::size_t n,
                                   const NoiseSchedule& schedule, const Conditions& cond, std::span<const double> z) {
  const auto& dims = x_n.dims();
  if (!(x0_hat.dims() == dims)) throw ConfigError("reverse_step: x0 prediction and state have different dims");
  const auto p = reverse_step_params(schedule, n);
  const std::size_t a = dims.num_actions;
  if (n > 1 && z.size() != dims.horizon * a) {
    throw ConfigError("reverse_step: noise block has " + std::to_string(z.size()) + " entries, expected " +
                      std::to_string(dims.horizon * a));
  }
  PlanMatrix out = x_n;
  for (std::size_t t = 0; t < dims.horizon; ++t) {
    auto src0 = x0_hat.action_block(t);
    auto srcn = x_n.action_block(t);
    auto dst = out.action_block(t);
    for (std::size_t i = 0; i < a; ++i) {
      if (!std::isfinite(src0[i])) {
        throw NumericError("reverse_step: non-finite x0 prediction at step " + std::to_string(n) + ", row " +
                           std::to_string(t));
      }
      const double x0 = std::clamp(src0[i], -1.0, 1.0);
      double v = p.coef_x0 * x0 + p.coef_xn * srcn[i];
      if (n > 1) v += p.posterior_std * z[t * a + i];
      dst[i] = v;
    }
  }
  impose_conditions(out, cond);
  return out;
}

PlanMatrix reverse_step(const PlanMatrix& x_n, const PlanMatrix& x0_hat, std::size_t n, const NoiseSchedule& schedule,
                        const Conditions& cond, Rng& rng) {
  std::vector<double> z;
  if (n > 1) {
    z.resize(x_n.dims().horizon * x_n.dims().num_actions);
    for (auto& v : z) v = rng.normal();
  }
  return reverse_step_with_noise(x_n, x0_hat, n, schedule, cond, z);
}

namespace {

ProblemDims planner_dims(const Denoiser& d, const TaskClassifier& m) {
  const auto& cfg = d.config();
  const std::size_t c = m.config().num_tasks, o = m.config().obs_dim;
  if (c + o >= cfg.input_width) {
    throw ConfigError("planner: denoiser width " + std::to_string(cfg.input_width) + " leaves no action block for C=" +
                      std::to_string(c) + ", O=" + std::to_string(o));
  }
  return ProblemDims{cfg.horizon, cfg.input_width - c - o, c, o};
}

}  // namespace

std::vector<PlanMatrix> sample_plans(const Denoiser& denoiser, const ProblemDims& dims,
                                     const std::vector<Conditions>& conds, const NoiseStats& stats,
                                     const NoiseSchedule& schedule, std::vector<Rng>& rngs,
                                     const InferenceOptions& opts) {
  if (conds.size() != rngs.size()) throw ConfigError("sample_plans: one Rng per query required");
  if (dims.width() != denoiser.config().input_width || dims.horizon != denoiser.config().horizon) {
    throw ConfigError("sample_plans: dims do not match the denoiser");
  }
  if (stats.horizon != dims.horizon) {
    throw ConfigError("sample_plans: noise stats cover horizon " + std::to_string(stats.horizon) + ", plans have " +
                      std::to_string(dims.horizon));
  }
  if (stats.schedule_steps != 0 && stats.schedule_steps != schedule.steps()) {
    throw ConfigError("sample_plans: noise stats were fitted for N=" + std::to_string(stats.schedule_steps) +
                      ", schedule has N=" + std::to_string(schedule.steps()));
  }
  const std::size_t total = conds.size(), big_n = schedule.steps(), a = dims.num_actions;
  const std::size_t chunk = std::max<std::size_t>(opts.batch, 1);
  std::vector<PlanMatrix> out;
  out.reserve(total);
  for (std::size_t begin = 0; begin < total; begin += chunk) {
    const std::size_t end = std::min(total, begin + chunk);
    std::vector<PlanMatrix> xs;
    for (std::size_t q = begin; q < end; ++q) {
      PlanMatrix x(dims);
      const auto noise = sample_inference_noise(stats, a, opts.use_fitted_mean, rngs[q]);
      for (std::size_t t = 0; t < dims.horizon; ++t)
        std::copy_n(noise.begin() + static_cast<std::ptrdiff_t>(t * a), a, x.action_block(t).begin());
      impose_conditions(x, conds[q]);
      xs.push_back(std::move(x));
    }
    for (std::size_t n = big_n; n >= 1; --n) {
      std::vector<std::size_t> steps(end - begin, n);
      const auto pred = denoiser.forward(stack_plans(xs), steps);
      for (std::size_t q = begin; q < end; ++q) {
        auto& x = xs[q - begin];
        auto x0_hat = unstack_plan(pred, q - begin, dims);
        auto next = reverse_step(x, x0_hat, n, schedule, conds[q], rngs[q]);
        if (opts.observer) {
          clamp_actions(x0_hat);
          (*opts.observer)(q, n, x, x0_hat);
        }
        x = std::move(next);
      }
    }
    for (auto& x : xs) out.push_back(std::move(x));
  }
  return out;
}

PlanResult infer_plan(const Denoiser& denoiser, const TaskClassifier& classifier, std::span<const double> obs_start,
                      std::span<const double> obs_goal, const NoiseStats& stats, const NoiseSchedule& schedule,
                      Rng& rng, const InferenceOptions& opts) {
  const auto dims = planner_dims(denoiser, classifier);
  const auto task = predict_task(classifier, obs_start, obs_goal);
  std::vector<Conditions> conds{{task.label, {obs_start.begin(), obs_start.end()}, {obs_goal.begin(), obs_goal.end()}}};
  std::vector<Rng> rngs{rng};
  auto x = sample_plans(denoiser, dims, conds, stats, schedule, rngs, opts);
  rng = rngs.front();
  return {task.label, decode_actions(x.front())};
}

std::vector<PlanResult> infer_plans(const Denoiser& denoiser, const TaskClassifier& classifier,
                                    const std::vector<PlanQuery>& queries, const NoiseStats& stats,
                                    const NoiseSchedule& schedule, std::uint64_t seed, const InferenceOptions& opts) {
  const auto dims = planner_dims(denoiser, classifier);
  std::vector<Conditions> conds;
  std::vector<Rng> rngs;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const auto& q = queries[i];
    conds.push_back({predict_task(classifier, q.obs_start, q.obs_goal).label, q.obs_start, q.obs_goal});
    rngs.push_back(Rng::derive(seed, i));
  }
  const auto xs = sample_plans(denoiser, dims, conds, stats, schedule, rngs, opts);
  std::vector<PlanResult> out;
  for (std::size_t i = 0; i < xs.size(); ++i) out.push_back({conds[i].task, decode_actions(xs[i])});
  return out;
}

Denoiser train_denoiser(const ProcedureDataset& train, const NoiseSchedule& schedule, MaskMode mode,
                        const TrainingConfig& cfg, DenoiserConfig arch, DenoiserTrainingLog* log) {
  cfg.validate();
  if (train.windows.empty()) throw ConfigError("train_denoiser: empty training set");
  const auto& dims = train.dims;
  arch.horizon = dims.horizon;
  arch.input_width = dims.width();
  Denoiser model(arch);
  AdamW opt(model.parameters(), 0.9, 0.999, 1e-8, cfg.weight_decay);

  const auto table = mode == MaskMode::NoMask ? ActionEmbeddingTable{} : normalize_embeddings(train.embeddings);
  std::vector<PlanMatrix> x0s;
  std::vector<NoiseMask> masks;
  for (const auto& w : train.windows) {
    x0s.push_back(assemble_x0(w.task, w.actions, w.obs_start, w.obs_goal, dims));
    masks.push_back(mode == MaskMode::NoMask
                        ? NoiseMask{mode, dims.horizon, dims.num_actions,
                                    std::vector<double>(dims.horizon * dims.num_actions, 0.0)}
                        : build_mask(w.actions, table, mode));
  }

  Rng rng = Rng::derive(cfg.seed, 0xD1FFu);
  const auto big_n = static_cast<std::int64_t>(schedule.steps());
  std::vector<PlanMatrix> noised, targets;
  std::vector<std::size_t> steps(cfg.batch_size);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (std::size_t step = 0; step < cfg.steps_per_epoch; ++step) {
      noised.clear();
      targets.clear();
      for (std::size_t b = 0; b < cfg.batch_size; ++b) {
        const std::size_t row = rng.index(x0s.size());
        steps[b] = static_cast<std::size_t>(rng.uniform_int(1, big_n));
        noised.push_back(q_sample(x0s[row], steps[b], schedule, masks[row], rng));
        targets.push_back(x0s[row]);
      }
      model.parameters().zero_grad();
      auto loss = ops::mse(model.forward(stack_plans(noised), steps), stack_plans(targets));
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw NumericError("train_denoiser: non-finite loss at epoch " + std::to_string(epoch + 1) + " step " +
                           std::to_string(step + 1));
      }
      backward(loss);
      const double lr = learning_rate(cfg, epoch, step);
      opt.step(lr);
      epoch_loss += value;
      if (log) {
        log->step_loss.push_back(value);
        log->step_lr.push_back(lr);
      }
    }
    if (log) log->epoch_loss.push_back(epoch_loss / static_cast<double>(std::max<std::size_t>(cfg.steps_per_epoch, 1)));
  }
  return model;
}

}  // namespace actdiff
