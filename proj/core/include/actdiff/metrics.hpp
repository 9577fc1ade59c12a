#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace actdiff {

using Plan = std::vector<std::size_t>;

/// Fraction of samples whose whole plan matches in order.
double success_rate(const std::vector<Plan>& preds, const std::vector<Plan>& gts);
/// Mean over samples of the fraction of positions that match.
double mean_accuracy(const std::vector<Plan>& preds, const std::vector<Plan>& gts);
/// Mean over samples of |set(pred) & set(gt)| / |set(pred) | set(gt)|.
double mean_siou(const std::vector<Plan>& preds, const std::vector<Plan>& gts);
/// Order-free accuracy: per sample, the fraction of gt positions whose label
/// occurs anywhere in the prediction. Reported next to mean_accuracy, never
/// in its place.
double set_accuracy(const std::vector<Plan>& preds, const std::vector<Plan>& gts);

struct SampleScore {
  Plan pred;
  Plan gt;
  bool success = false;
  double accuracy = 0.0;
  double siou = 0.0;
};

struct EvalReport {
  std::size_t n_samples = 0;
  double sr = 0.0;
  double macc = 0.0;
  double msiou = 0.0;
  double set_acc = 0.0;
  std::vector<SampleScore> samples;

  /// Per-sample breakdown included; numbers printed with 17 significant digits.
  /// A non-empty `provenance` JSON object is emitted first under its own key.
  std::string to_json(const std::string& provenance = "") const;
};

EvalReport evaluate(const std::vector<Plan>& preds, const std::vector<Plan>& gts);

}  // namespace actdiff
