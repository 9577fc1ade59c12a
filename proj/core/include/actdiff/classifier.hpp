#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "actdiff/dataset.hpp"
#include "actdiff/optim.hpp"
#include "actdiff/tensor.hpp"

namespace actdiff {

struct ClassifierConfig {
  std::size_t obs_dim = 0;
  std::size_t num_tasks = 0;
  std::size_t hidden = 128;
  std::uint64_t init_seed = 0;

  void validate() const;
  std::string to_json() const;
  static ClassifierConfig from_json(const std::string& text);
  bool operator==(const ClassifierConfig&) const = default;
};

struct TaskPrediction {
  std::size_t label = 0;
  std::vector<double> probabilities;
};

/// Four fully connected layers, 2*O -> hidden -> hidden -> hidden -> C,
/// with Mish between them. Input is [o_s | o_g].
class TaskClassifier {
 public:
  static constexpr std::size_t kLayers = 4;

  explicit TaskClassifier(ClassifierConfig config);

  const ClassifierConfig& config() const { return config_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }

  /// x[B, 2*O] -> logits[B, C].
  Tensor logits(const Tensor& x) const;

 private:
  ClassifierConfig config_;
  ParameterSet params_;
};

TaskPrediction predict_task(const TaskClassifier& model, std::span<const double> obs_start,
                            std::span<const double> obs_goal);

struct ClassifierTrainingLog {
  std::vector<double> epoch_loss;      // mean minibatch loss per epoch
  std::vector<double> epoch_accuracy;  // training-set accuracy after each epoch
};

/// Cross-entropy training against the ground-truth task labels.
TaskClassifier train_task_classifier(const ProcedureDataset& train, const TrainingConfig& cfg,
                                     ClassifierTrainingLog* log = nullptr, std::size_t hidden = 128);

/// Fraction of windows whose task is predicted correctly.
double task_accuracy(const TaskClassifier& model, const ProcedureDataset& data);

}  // namespace actdiff
