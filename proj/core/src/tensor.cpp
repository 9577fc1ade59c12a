#include "actdiff/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "actdiff/error.hpp"
#include "node.hpp"

namespace actdiff {

namespace detail {
std::uint64_t next_sequence() {
  static std::atomic<std::uint64_t> counter{0};
  return counter.fetch_add(1, std::memory_order_relaxed);
}
}  // namespace detail

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw ConfigError("tensor: zero-sized dimension in shape " + shape_str(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw ConfigError("tensor: shape " + shape_str(shape) + " does not match " +
                      std::to_string(data.size()) + " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value.assign(data.begin(), data.end());
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = shape_numel(shape);
  return from_data(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from_data({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw ConfigError("tensor: axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_->value.size(); }

std::span<const double> Tensor::data() const { return node_->value; }

std::span<double> Tensor::mutable_data() {
  if (!node_->inputs.empty() || node_->op != "leaf") throw ConfigError("tensor: only leaves are writable");
  return node_->value;
}

double Tensor::item() const {
  if (numel() != 1) throw ConfigError("tensor: item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

std::span<const double> Tensor::grad() const { return node_->grad; }

std::span<double> Tensor::mutable_grad() { return node_->ensure_grad(); }

void Tensor::zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

const std::string& Tensor::op() const { return node_->op; }

std::uint64_t Tensor::id() const { return node_->seq; }

Tensor Tensor::detach() const { return from_data(shape(), {node_->value.begin(), node_->value.end()}, false); }

std::span<const double> Gradients::of(const Tensor& leaf) const {
  auto it = grads_.find(leaf.node().get());
  if (it == grads_.end()) return {};
  return it->second->grad;
}

bool Gradients::contains(const Tensor& leaf) const { return grads_.count(leaf.node().get()) != 0; }

Tape Tape::record(const Tensor& root) {
  Tape tape;
  tape.root_ = root;
  if (!root.defined()) return tape;
  std::unordered_set<const detail::Node*> seen;
  std::vector<std::shared_ptr<detail::Node>> stack{root.node()};
  while (!stack.empty()) {
    auto node = std::move(stack.back());
    stack.pop_back();
    if (!node->requires_grad || !seen.insert(node.get()).second) continue;
    for (const auto& in : node->inputs) stack.push_back(in);
    tape.nodes_.push_back(std::move(node));
  }
  std::sort(tape.nodes_.begin(), tape.nodes_.end(),
            [](const auto& a, const auto& b) { return a->seq < b->seq; });
  return tape;
}

std::vector<std::string> Tape::op_names() const {
  std::vector<std::string> names;
  names.reserve(nodes_.size());
  for (const auto& n : nodes_) names.push_back(n->op);
  return names;
}

bool Tape::is_topological() const {
  std::unordered_set<const detail::Node*> done;
  for (const auto& n : nodes_) {
    for (const auto& in : n->inputs) {
      if (in->requires_grad && !done.count(in.get())) return false;
    }
    done.insert(n.get());
  }
  return true;
}

Gradients Tape::backward() {
  if (!root_.defined()) throw ConfigError("backward: undefined loss");
  if (root_.numel() != 1) throw ConfigError("backward: loss must be scalar, got shape " + shape_str(root_.shape()));
  Gradients out;
  if (!root_.requires_grad()) return out;
  // Intermediate gradients from an earlier pass over a shared subgraph must not leak in.
  for (auto& n : nodes_) {
    if (!n->inputs.empty()) n->grad.assign(n->value.size(), 0.0);
  }
  root_.node()->ensure_grad()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    auto& node = **it;
    if (node.backward) node.backward(node);
  }
  for (auto& n : nodes_) {
    if (n->inputs.empty()) {
      n->ensure_grad();
      out.grads_.emplace(n.get(), n);
    }
  }
  return out;
}

Gradients backward(const Tensor& loss) { return Tape::record(loss).backward(); }

}  // namespace actdiff
