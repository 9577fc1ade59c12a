#include "actdiff/plan_matrix.hpp"

#include <algorithm>

#include "actdiff/error.hpp"

namespace actdiff {

void ProblemDims::validate() const {
  if (num_actions == 0 || num_tasks == 0 || obs_dim == 0 || horizon == 0) {
    throw ConfigError("dims: T, A, C and O must all be positive");
  }
  if (horizon < 2) throw ConfigError("dims: horizon must be >= 2 (start and goal positions)");
}

PlanMatrix::PlanMatrix(ProblemDims dims) : dims_(dims), values_(dims.horizon * dims.width(), 0.0) {}

PlanMatrix::PlanMatrix(ProblemDims dims, std::vector<double> values) : dims_(dims), values_(std::move(values)) {
  if (values_.size() != dims_.horizon * dims_.width()) {
    throw ConfigError("plan matrix: expected " + std::to_string(dims_.horizon * dims_.width()) + " values, got " +
                      std::to_string(values_.size()));
  }
}

std::span<double> PlanMatrix::task_block(std::size_t t) {
  return std::span<double>(values_).subspan(t * width(), dims_.num_tasks);
}
std::span<double> PlanMatrix::action_block(std::size_t t) {
  return std::span<double>(values_).subspan(t * width() + dims_.action_offset(), dims_.num_actions);
}
std::span<double> PlanMatrix::observation_block(std::size_t t) {
  return std::span<double>(values_).subspan(t * width() + dims_.obs_offset(), dims_.obs_dim);
}
std::span<const double> PlanMatrix::task_block(std::size_t t) const {
  return std::span<const double>(values_).subspan(t * width(), dims_.num_tasks);
}
std::span<const double> PlanMatrix::action_block(std::size_t t) const {
  return std::span<const double>(values_).subspan(t * width() + dims_.action_offset(), dims_.num_actions);
}
std::span<const double> PlanMatrix::observation_block(std::size_t t) const {
  return std::span<const double>(values_).subspan(t * width() + dims_.obs_offset(), dims_.obs_dim);
}

PlanMatrix assemble_x0(std::size_t task, std::span<const std::size_t> actions, std::span<const double> obs_start,
                       std::span<const double> obs_goal, const ProblemDims& dims) {
  dims.validate();
  if (task >= dims.num_tasks) {
    throw ConfigError("assemble_x0: task " + std::to_string(task) + " out of range [0," + std::to_string(dims.num_tasks) + ")");
  }
  if (actions.size() != dims.horizon) {
    throw ConfigError("assemble_x0: expected " + std::to_string(dims.horizon) + " actions, got " + std::to_string(actions.size()));
  }
  if (obs_start.size() != dims.obs_dim || obs_goal.size() != dims.obs_dim) {
    throw ConfigError("assemble_x0: observation width must be " + std::to_string(dims.obs_dim));
  }
  PlanMatrix x(dims);
  for (std::size_t t = 0; t < dims.horizon; ++t) {
    if (actions[t] >= dims.num_actions) {
      throw ConfigError("assemble_x0: action " + std::to_string(actions[t]) + " at position " + std::to_string(t) +
                        " out of range [0," + std::to_string(dims.num_actions) + ")");
    }
    x.task_block(t)[task] = 1.0;
    x.action_block(t)[actions[t]] = 1.0;
  }
  std::copy(obs_start.begin(), obs_start.end(), x.observation_block(0).begin());
  std::copy(obs_goal.begin(), obs_goal.end(), x.observation_block(dims.horizon - 1).begin());
  return x;
}

std::vector<std::size_t> decode_actions(const PlanMatrix& x) {
  std::vector<std::size_t> labels(x.rows());
  for (std::size_t t = 0; t < x.rows(); ++t) {
    auto row = x.action_block(t);
    labels[t] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return labels;
}

Tensor stack_plans(std::span<const PlanMatrix> plans) {
  if (plans.empty()) throw ConfigError("stack_plans: empty batch");
  const auto& dims = plans.front().dims();
  std::vector<double> values;
  values.reserve(plans.size() * dims.horizon * dims.width());
  for (const auto& p : plans) {
    if (!(p.dims() == dims)) throw ConfigError("stack_plans: mixed problem dims in batch");
    values.insert(values.end(), p.values().begin(), p.values().end());
  }
  return Tensor::from_data({plans.size(), dims.horizon, dims.width()}, std::move(values));
}

PlanMatrix unstack_plan(const Tensor& batch, std::size_t index, const ProblemDims& dims) {
  if (batch.rank() != 3 || batch.dim(1) != dims.horizon || batch.dim(2) != dims.width() || index >= batch.dim(0)) {
    throw ConfigError("unstack_plan: batch " + shape_str(batch.shape()) + " incompatible with dims or index");
  }
  const std::size_t n = dims.horizon * dims.width();
  auto d = batch.data().subspan(index * n, n);
  return PlanMatrix(dims, std::vector<double>(d.begin(), d.end()));
}

}  // namespace actdiff
