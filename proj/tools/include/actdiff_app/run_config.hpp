#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "actdiff/dataset.hpp"
#include "actdiff/denoiser.hpp"
#include "actdiff/optim.hpp"

namespace actdiff::app {

/// Flat run configuration shared by every subcommand. Keys are snake_case in
/// config files and --kebab-case on the command line. Optional keys left
/// unset fall back to the dataset preset (or, in eval, to the trained model).
struct RunConfig {
  // problem and diffusion
  std::optional<std::size_t> horizon;
  std::optional<std::size_t> diffusion_steps;
  std::optional<double> tau;
  std::string mask_mode = "multiadd";
  bool attention = true;
  bool use_fitted_mean = false;

  // locations; never part of the provenance header
  std::string dataset;
  std::string output;
  std::string model_dir;

  // data
  std::string preset = "linear";
  std::uint64_t seed = 0;
  double train_fraction = 0.7;
  std::optional<std::size_t> num_tasks, num_actions, obs_dim, embedding_dim, videos_per_task, min_actions,
      max_actions, chain_length, task_pool_size;
  std::optional<double> embedding_mean, embedding_std, observation_noise_std;

  // seeds for the remaining stochastic stages
  std::uint64_t train_seed = 0;
  std::uint64_t noise_seed = 0;
  std::uint64_t infer_seed = 0;

  // optimisation (shared by the task classifier and the denoiser)
  std::size_t batch_size = 64;
  std::size_t epochs = 60;
  std::size_t steps_per_epoch = 50;
  std::size_t warmup_epochs = 10;
  double peak_lr = 5e-4;
  double decay_rate = 0.5;
  std::size_t decay_every = 5;
  std::size_t decay_last_k_epochs = 15;
  double weight_decay = 0.0;

  // architecture
  std::vector<std::size_t> channels{64, 128, 256};
  std::size_t time_embed_dim = 64;
  std::size_t kernel_size = 3;
  std::string activation = "mish";
  std::size_t classifier_hidden = 128;

  // evaluation and analysis
  std::vector<std::size_t> horizons;  // ablate; empty means {horizon}
  std::size_t bins = 40;
  std::size_t draws_per_window = 1;
  std::size_t max_queries = 0;  // 0 evaluates the whole test split
  std::size_t infer_batch = 64;
  bool quiet = false;

  /// One schema entry per key; setters throw ConfigError on malformed values.
  struct Field {
    std::string key;
    std::string help;
    std::function<void(const std::string&)> set_text;
    std::function<void(const nlohmann::json&)> set_json;
    std::function<nlohmann::json()> get;
  };
  std::vector<Field> fields();

  /// Every key with its current value (unset optionals are null).
  nlohmann::json to_json();
  /// Applies a flat JSON object; unknown keys and wrong types are rejected.
  void apply_json(const nlohmann::json& doc, const std::function<bool(const std::string&)>& skip = {});

  SyntheticSpec synthetic_spec() const;
  TrainingConfig training(std::uint64_t seed_override) const;
  DenoiserConfig architecture() const;
  std::size_t resolved_steps() const;
  double resolved_tau() const;
};

std::string kebab(const std::string& key);

}  // namespace actdiff::app
