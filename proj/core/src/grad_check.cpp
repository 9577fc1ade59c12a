#include "actdiff/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "actdiff/error.hpp"
#include "actdiff/ops.hpp"
#include "actdiff/rng.hpp"

namespace actdiff {

double finite_difference_check(const std::function<Tensor()>& loss_fn, std::vector<Tensor> leaves, double step) {
  for (auto& leaf : leaves) leaf.zero_grad();
  auto grads = backward(loss_fn());
  double worst = 0.0;
  for (auto& leaf : leaves) {
    auto analytic = grads.of(leaf);
    auto values = leaf.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = loss_fn().item();
      values[i] = saved - step;
      const double down = loss_fn().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic.empty() ? 0.0 : analytic[i];
      worst = std::max(worst, std::abs(a - numeric) / std::max(1e-8, std::abs(numeric)));
    }
  }
  return worst;
}

namespace {

Tensor random_leaf(const Shape& shape, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.normal();
  return Tensor::from_data(shape, std::move(v), true);
}

Tensor random_weights(const Shape& shape, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform() * 2.0 - 1.0;
  return Tensor::from_data(shape, std::move(v), false);
}

void expect_shapes(std::string_view kind, const std::vector<Shape>& shapes, std::size_t n) {
  if (shapes.size() != n) {
    throw ConfigError("grad_check(" + std::string(kind) + "): expected " + std::to_string(n) + " shapes, got " +
                      std::to_string(shapes.size()));
  }
}

}  // namespace

std::vector<std::string> grad_check_kinds() {
  return {"add",       "sub",         "mul",     "scale",    "add_per_sample", "matmul", "bmm",
          "transpose", "linear",      "conv1d",  "layer_norm", "softmax",      "log_softmax", "mish",
          "silu",      "mse",         "cross_entropy", "concat", "slice",       "clamp",  "embedding",
          "sum",       "mean",        "reshape", "softmax_mse"};
}

std::vector<Shape> default_grad_check_shapes(std::string_view kind) {
  if (kind == "matmul") return {{3, 4}, {4, 2}};
  if (kind == "bmm") return {{2, 3, 4}, {2, 4, 3}};
  if (kind == "linear") return {{2, 3, 5}, {4, 5}};
  if (kind == "conv1d") return {{2, 8, 4}, {3, 3, 4}};
  if (kind == "concat") return {{2, 3, 2}, {2, 3, 4}};
  if (kind == "cross_entropy") return {{4, 5}};
  if (kind == "embedding") return {{6, 3}};
  if (kind == "softmax_mse") return {{5}};
  if (kind == "add_per_sample" || kind == "layer_norm" || kind == "transpose") return {{2, 3, 4}};
  return {{3, 4}};
}

double grad_check(std::string_view kind, const std::vector<Shape>& shapes, std::uint64_t seed, double step) {
  Rng rng(seed);
  const std::string k(kind);
  std::vector<Tensor> leaves;
  std::function<Tensor()> loss;

  auto unary = [&](auto&& op) {
    expect_shapes(kind, shapes, 1);
    leaves = {random_leaf(shapes[0], rng)};
    auto x = leaves[0];
    auto w = random_weights(op(x).shape(), rng);
    loss = [x, w, op] { return ops::sum(ops::mul(op(x), w)); };
  };
  auto binary_same = [&](auto&& op) {
    expect_shapes(kind, shapes, 1);
    leaves = {random_leaf(shapes[0], rng), random_leaf(shapes[0], rng)};
    auto w = random_weights(shapes[0], rng);
    auto a = leaves[0], b = leaves[1];
    loss = [a, b, w, op] { return ops::sum(ops::mul(op(a, b), w)); };
  };

  if (k == "add") {
    binary_same([](const Tensor& a, const Tensor& b) { return ops::add(a, b); });
  } else if (k == "sub") {
    binary_same([](const Tensor& a, const Tensor& b) { return ops::sub(a, b); });
  } else if (k == "mul") {
    binary_same([](const Tensor& a, const Tensor& b) { return ops::mul(a, b); });
  } else if (k == "scale") {
    unary([](const Tensor& x) { return ops::scale(x, -1.7); });
  } else if (k == "transpose") {
    unary([](const Tensor& x) { return ops::transpose(x); });
  } else if (k == "layer_norm") {
    expect_shapes(kind, shapes, 1);
    const Shape c{shapes[0].back()};
    leaves = {random_leaf(shapes[0], rng), random_leaf(c, rng), random_leaf(c, rng)};
    auto w = random_weights(shapes[0], rng);
    auto x = leaves[0], g = leaves[1], s = leaves[2];
    loss = [=] { return ops::sum(ops::mul(ops::layer_norm(x, g, s), w)); };
  } else if (k == "softmax") {
    unary([](const Tensor& x) { return ops::softmax(x); });
  } else if (k == "log_softmax") {
    unary([](const Tensor& x) { return ops::log_softmax(x); });
  } else if (k == "mish") {
    unary([](const Tensor& x) { return ops::mish(x); });
  } else if (k == "silu") {
    unary([](const Tensor& x) { return ops::silu(x); });
  } else if (k == "clamp") {
    expect_shapes(kind, shapes, 1);
    // keep samples clear of the kinks so central differences stay valid
    std::vector<double> v(shape_numel(shapes[0]));
    for (auto& x : v) {
      x = rng.uniform() * 4.0 - 2.0;
      if (std::abs(std::abs(x) - 1.0) < 0.05) x *= 1.2;
    }
    leaves = {Tensor::from_data(shapes[0], std::move(v), true)};
    auto w = random_weights(shapes[0], rng);
    auto x = leaves[0];
    loss = [x, w] { return ops::sum(ops::mul(ops::clamp(x, -1.0, 1.0), w)); };
  } else if (k == "sum") {
    unary([](const Tensor& x) { return ops::sum(x); });
  } else if (k == "mean") {
    unary([](const Tensor& x) { return ops::mean(x); });
  } else if (k == "reshape") {
    unary([](const Tensor& x) { return ops::reshape(x, {x.numel()}); });
  } else if (k == "slice") {
    expect_shapes(kind, shapes, 1);
    if (shapes[0].back() < 2) throw ConfigError("grad_check(slice): last dim must be >= 2");
    const std::size_t axis = shapes[0].size() - 1, end = shapes[0].back();
    unary([axis, end](const Tensor& x) { return ops::slice(x, axis, 1, end); });
  } else if (k == "mse") {
    expect_shapes(kind, shapes, 1);
    leaves = {random_leaf(shapes[0], rng), random_leaf(shapes[0], rng)};
    auto a = leaves[0], b = leaves[1];
    loss = [a, b] { return ops::mse(a, b); };
  } else if (k == "softmax_mse") {
    expect_shapes(kind, shapes, 1);
    leaves = {random_leaf(shapes[0], rng)};
    auto target = random_weights(shapes[0], rng);
    auto x = leaves[0];
    loss = [x, target] { return ops::mse(ops::softmax(x), target); };
  } else if (k == "cross_entropy") {
    expect_shapes(kind, shapes, 1);
    if (shapes[0].size() != 2) throw ConfigError("grad_check(cross_entropy): logits must be [B,C]");
    leaves = {random_leaf(shapes[0], rng)};
    std::vector<std::size_t> labels(shapes[0][0]);
    for (auto& l : labels) l = rng.index(shapes[0][1]);
    auto x = leaves[0];
    loss = [x, labels] { return ops::cross_entropy(x, labels); };
  } else if (k == "add_per_sample") {
    expect_shapes(kind, shapes, 1);
    leaves = {random_leaf(shapes[0], rng), random_leaf({shapes[0].front(), shapes[0].back()}, rng)};
    auto w = random_weights(shapes[0], rng);
    auto x = leaves[0], e = leaves[1];
    loss = [=] { return ops::sum(ops::mul(ops::add_per_sample(x, e), w)); };
  } else if (k == "matmul" || k == "bmm") {
    expect_shapes(kind, shapes, 2);
    leaves = {random_leaf(shapes[0], rng), random_leaf(shapes[1], rng)};
    auto a = leaves[0], b = leaves[1];
    const bool batched = k == "bmm";
    auto probe = batched ? ops::bmm(a, b) : ops::matmul(a, b);
    auto w = random_weights(probe.shape(), rng);
    loss = [=] { return ops::sum(ops::mul(batched ? ops::bmm(a, b) : ops::matmul(a, b), w)); };
  } else if (k == "linear" || k == "conv1d") {
    expect_shapes(kind, shapes, 2);
    leaves = {random_leaf(shapes[0], rng), random_leaf(shapes[1], rng), random_leaf({shapes[1][0]}, rng)};
    auto x = leaves[0], wt = leaves[1], b = leaves[2];
    const bool conv = k == "conv1d";
    auto probe = conv ? ops::conv1d(x, wt, b) : ops::linear(x, wt, b);
    auto w = random_weights(probe.shape(), rng);
    loss = [=] { return ops::sum(ops::mul(conv ? ops::conv1d(x, wt, b) : ops::linear(x, wt, b), w)); };
  } else if (k == "concat") {
    if (shapes.size() < 2) throw ConfigError("grad_check(concat): needs at least two shapes");
    for (const auto& s : shapes) leaves.push_back(random_leaf(s, rng));
    const std::size_t axis = shapes[0].size() - 1;
    auto parts = leaves;
    auto w = random_weights(ops::concat(parts, axis).shape(), rng);
    loss = [parts, axis, w] { return ops::sum(ops::mul(ops::concat(parts, axis), w)); };
  } else if (k == "embedding") {
    expect_shapes(kind, shapes, 1);
    leaves = {random_leaf(shapes[0], rng)};
    std::vector<std::size_t> idx(shapes[0][0] + 2);
    for (auto& i : idx) i = rng.index(shapes[0][0]);
    auto table = leaves[0];
    auto w = random_weights({idx.size(), shapes[0][1]}, rng);
    loss = [table, idx, w] { return ops::sum(ops::mul(ops::embedding(table, idx), w)); };
  } else {
    throw ConfigError("grad_check: unsupported kind '" + k + "'");
  }
  return finite_difference_check(loss, leaves, step);
}

}  // namespace actdiff
