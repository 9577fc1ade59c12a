#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "actdiff/tensor.hpp"

namespace actdiff {

/// Sizes of a planning problem: horizon T, action classes A, task classes C
/// and observation feature width O.
struct ProblemDims {
  std::size_t horizon = 3;
  std::size_t num_actions = 0;
  std::size_t num_tasks = 0;
  std::size_t obs_dim = 0;

  std::size_t width() const { return num_tasks + num_actions + obs_dim; }
  std::size_t action_offset() const { return num_tasks; }
  std::size_t obs_offset() const { return num_tasks + num_actions; }
  void validate() const;
  bool operator==(const ProblemDims&) const = default;
};

/// The diffusion state: T rows, each [task block | action block | observation block].
class PlanMatrix {
 public:
  explicit PlanMatrix(ProblemDims dims);
  PlanMatrix(ProblemDims dims, std::vector<double> values);

  const ProblemDims& dims() const { return dims_; }
  std::size_t rows() const { return dims_.horizon; }
  std::size_t width() const { return dims_.width(); }

  double& at(std::size_t t, std::size_t col) { return values_[t * width() + col]; }
  double at(std::size_t t, std::size_t col) const { return values_[t * width() + col]; }

  std::span<double> task_block(std::size_t t);
  std::span<double> action_block(std::size_t t);
  std::span<double> observation_block(std::size_t t);
  std::span<const double> task_block(std::size_t t) const;
  std::span<const double> action_block(std::size_t t) const;
  std::span<const double> observation_block(std::size_t t) const;

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }

  bool operator==(const PlanMatrix&) const = default;

 private:
  ProblemDims dims_;
  std::vector<double> values_;
};

/// x0 layout: one-hot task in every row, one-hot action per row, o_s in the
/// first row's observation block, o_g in the last, zeros between.
PlanMatrix assemble_x0(std::size_t task, std::span<const std::size_t> actions, std::span<const double> obs_start,
                       std::span<const double> obs_goal, const ProblemDims& dims);

/// Per-row argmax over the action block; ties go to the lowest index.
std::vector<std::size_t> decode_actions(const PlanMatrix& x);

/// Stacks matrices into a [B, T, W] tensor.
Tensor stack_plans(std::span<const PlanMatrix> plans);
PlanMatrix unstack_plan(const Tensor& batch, std::size_t index, const ProblemDims& dims);

}  // namespace actdiff
