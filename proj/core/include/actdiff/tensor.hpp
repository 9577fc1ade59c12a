#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace actdiff {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct Node;
}

/// Dense row-major tensor of 64-bit floats.
///
/// A Tensor is a shared handle to a graph node. Results of operations keep
/// references to their inputs while any of them requires a gradient, which
/// is what `Tape::record` walks to replay the computation backwards.
/// Values are not modified after an op has produced them; only leaves
/// (parameters) are updated in place, by optimizers, between steps.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<detail::Node> node);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Writable view of a leaf's values. Throws for op results.
  std::span<double> mutable_data();
  double item() const;

  bool requires_grad() const;
  /// Gradient accumulated by the last backward pass; empty if none.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Name of the op that produced this tensor ("leaf" for inputs).
  const std::string& op() const;
  /// Creation order; inputs always have a smaller id than their results.
  std::uint64_t id() const;

  /// Same values, cut off from the graph.
  Tensor detach() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Leaf gradients produced by one backward pass.
class Gradients {
 public:
  std::span<const double> of(const Tensor& leaf) const;
  bool contains(const Tensor& leaf) const;
  std::size_t size() const { return grads_.size(); }

 private:
  friend class Tape;
  std::unordered_map<const detail::Node*, std::shared_ptr<detail::Node>> grads_;
};

/// Operations reachable from a root tensor, in execution order.
class Tape {
 public:
  static Tape record(const Tensor& root);

  std::size_t size() const { return nodes_.size(); }
  /// Op names in recorded (topological) order.
  std::vector<std::string> op_names() const;
  /// True if every recorded op's inputs appear earlier on the tape.
  bool is_topological() const;

  /// Seeds d(root)/d(root) = 1 and replays the tape in reverse. The root
  /// must be a scalar.
  Gradients backward();

 private:
  Tensor root_;
  std::vector<std::shared_ptr<detail::Node>> nodes_;
};

/// Convenience: `Tape::record(loss).backward()`.
Gradients backward(const Tensor& loss);

}  // namespace actdiff
