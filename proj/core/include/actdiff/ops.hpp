#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "actdiff/tensor.hpp"

/// Differentiable tensor operations.
///
/// Sequences use channels-last layout: a batch of length-T sequences with C
/// channels has shape [B, T, C]. Every op validates shapes and throws
/// ConfigError naming the op and the offending dims.
namespace actdiff::ops {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

/// x[B, ..., C] + e[B, C], broadcast over the middle axes.
Tensor add_per_sample(const Tensor& x, const Tensor& e);

/// a[M, K] x b[K, N].
Tensor matmul(const Tensor& a, const Tensor& b);
/// a[B, M, K] x b[B, K, N].
Tensor bmm(const Tensor& a, const Tensor& b);
/// Swaps the last two axes of a rank-2 or rank-3 tensor.
Tensor transpose(const Tensor& a);

/// x[..., in] * w[out, in]^T + bias[out]. `bias` may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

/// 1-D convolution along T with zero padding that preserves length.
/// x[B, T, Cin], w[Cout, K, Cin] with odd K, bias[Cout] (may be undefined).
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias);

/// Normalizes over the last axis independently at every other index, then
/// applies gain[C] and shift[C].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps = 1e-5);

/// Over the last axis.
Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);

Tensor mish(const Tensor& x);
Tensor silu(const Tensor& x);

/// Mean of squared differences; returns shape [1].
Tensor mse(const Tensor& prediction, const Tensor& target);
/// Mean negative log-likelihood of `labels` under softmax(logits[B, C]).
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
/// Elements [begin, end) along `axis`.
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);

Tensor clamp(const Tensor& x, double lo, double hi);

/// Rows of table[V, D] selected by `indices`; result [n, D].
Tensor embedding(const Tensor& table, std::span<const std::size_t> indices);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

}  // namespace actdiff::ops
