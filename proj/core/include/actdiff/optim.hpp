#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "actdiff/tensor.hpp"

namespace actdiff {

/// Named trainable leaves in a fixed order.
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
  };

  /// Returns a handle sharing storage with the registered entry.
  Tensor add(std::string name, Tensor tensor);
  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }
  /// Total number of scalar parameters.
  std::size_t count() const;
  const Tensor& at(const std::string& name) const;
  std::vector<Tensor> tensors() const;
  void zero_grad();

 private:
  std::vector<Entry> entries_;
};

/// Optimization recipe shared by the classifier and the denoiser.
///
/// The learning rate rises linearly to `peak_lr` over the first
/// `warmup_epochs`, holds, and is multiplied by `decay_rate` every
/// `decay_every` epochs within the final `decay_last_k_epochs`.
struct TrainingConfig {
  std::size_t batch_size = 64;
  std::size_t epochs = 60;
  std::size_t steps_per_epoch = 50;
  std::size_t warmup_epochs = 10;
  double peak_lr = 5e-4;
  double decay_rate = 0.5;
  std::size_t decay_every = 5;
  std::size_t decay_last_k_epochs = 15;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;

  /// Throws ConfigError on an invalid combination.
  void validate() const;
};

double learning_rate(const TrainingConfig& cfg, std::size_t epoch, std::size_t step_in_epoch);

/// Adam with decoupled weight decay.
class AdamW {
 public:
  AdamW(ParameterSet& params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
        double weight_decay = 0.0);

  /// Applies one update from the parameters' accumulated gradients.
  void step(double lr);
  std::size_t steps_taken() const { return t_; }

 private:
  ParameterSet& params_;
  double beta1_, beta2_, eps_, weight_decay_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace actdiff
