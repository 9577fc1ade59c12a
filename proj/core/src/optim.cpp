#include "actdiff/optim.hpp"

#include <cmath>

#include "actdiff/error.hpp"

namespace actdiff {

Tensor ParameterSet::add(std::string name, Tensor tensor) {
  for (const auto& e : entries_) {
    if (e.name == name) throw ConfigError("parameter '" + name + "' registered twice");
  }
  entries_.push_back({std::move(name), std::move(tensor)});
  return entries_.back().tensor;
}

std::size_t ParameterSet::count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.numel();
  return n;
}

const Tensor& ParameterSet::at(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e.tensor;
  throw ConfigError("no parameter named '" + name + "'");
}

std::vector<Tensor> ParameterSet::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.tensor);
  return out;
}

void ParameterSet::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

void TrainingConfig::validate() const {
  if (batch_size == 0) throw ConfigError("training: batch_size must be positive");
  if (epochs == 0) throw ConfigError("training: epochs must be positive");
  if (steps_per_epoch == 0) throw ConfigError("training: steps_per_epoch must be positive");
  if (warmup_epochs >= epochs) throw ConfigError("training: warmup_epochs must be smaller than epochs");
  if (!(peak_lr >= 0.0) || !std::isfinite(peak_lr)) throw ConfigError("training: peak_lr must be >= 0");
  if (!(decay_rate > 0.0 && decay_rate <= 1.0)) throw ConfigError("training: decay_rate must lie in (0, 1]");
  if (decay_every == 0) throw ConfigError("training: decay_every must be positive");
  if (decay_last_k_epochs > epochs) throw ConfigError("training: decay_last_k_epochs exceeds epochs");
  if (!(weight_decay >= 0.0)) throw ConfigError("training: weight_decay must be >= 0");
}

double learning_rate(const TrainingConfig& cfg, std::size_t epoch, std::size_t step_in_epoch) {
  const std::size_t warmup_steps = cfg.warmup_epochs * cfg.steps_per_epoch;
  const std::size_t global = epoch * cfg.steps_per_epoch + step_in_epoch;
  if (global < warmup_steps) {
    return cfg.peak_lr * static_cast<double>(global + 1) / static_cast<double>(warmup_steps);
  }
  const std::size_t decay_start = cfg.epochs - cfg.decay_last_k_epochs;
  if (cfg.decay_last_k_epochs == 0 || epoch < decay_start) return cfg.peak_lr;
  const auto decays = static_cast<double>((epoch - decay_start) / cfg.decay_every + 1);
  return cfg.peak_lr * std::pow(cfg.decay_rate, decays);
}

AdamW::AdamW(ParameterSet& params, double beta1, double beta2, double eps, double weight_decay)
    : params_(params), beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {
  for (const auto& e : params_.entries()) {
    m_.emplace_back(e.tensor.numel(), 0.0);
    v_.emplace_back(e.tensor.numel(), 0.0);
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  auto& entries = params_.entries();
  for (std::size_t p = 0; p < entries.size(); ++p) {
    auto& tensor = entries[p].tensor;
    auto grad = tensor.grad();
    if (grad.empty()) continue;
    auto value = tensor.mutable_data();
    auto& m = m_[p];
    auto& v = v_[p];
    for (std::size_t i = 0; i < value.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * grad[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * grad[i] * grad[i];
      const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
      value[i] -= lr * (update + weight_decay_ * value[i]);
    }
  }
}

}  // namespace actdiff
