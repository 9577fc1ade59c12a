#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "actdiff/optim.hpp"
#include "actdiff/plan_matrix.hpp"
#include "actdiff/tensor.hpp"

namespace actdiff {

enum class Activation { Mish, SiLU };

const char* to_string(Activation a);
Activation parse_activation(const std::string& s);

/// Shape of the denoising network.
///
/// The network never resamples along the horizon: stage s is a residual
/// block at `channels[s]` width, the decoder walks the stages back down and
/// concatenates the matching encoder output, and every stage is followed
/// by a self-attention block when `attention` is set.
struct DenoiserConfig {
  std::vector<std::size_t> channels{64, 128, 256};
  bool attention = true;
  std::size_t time_embed_dim = 64;
  std::size_t input_width = 0;  // C + A + O
  std::size_t horizon = 0;
  std::size_t kernel_size = 3;
  Activation activation = Activation::Mish;
  std::uint64_t init_seed = 0;

  std::size_t num_stages() const { return channels.size(); }
  void validate() const;
  std::string to_json() const;
  static DenoiserConfig from_json(const std::string& text);
  bool operator==(const DenoiserConfig&) const = default;
};

/// Sinusoidal encoding of step n: [sin(n f_0) .. sin(n f_{h-1}) | cos(n f_0) .. cos(n f_{h-1})]
/// with f_i = 10000^(-i / (h - 1)), h = dim / 2. `dim` must be even and >= 4.
std::vector<double> sinusoidal_embedding(std::size_t n, std::size_t dim);

/// Single-head self-attention over the T positions of x[B, T, C] with 1x1
/// convolution projections; returns x + softmax(Q K^T / sqrt(C)) V.
/// The key projection has no bias: it would shift a whole score row and the
/// softmax cancels it. `weights`, when given, receives the [B, T, T] attention matrix.
Tensor self_attention(const Tensor& x, const Tensor& wq, const Tensor& bq, const Tensor& wk,
                      const Tensor& wv, const Tensor& bv, Tensor* weights = nullptr);

/// Predicts x0 from a noised plan matrix and its diffusion step.
class Denoiser {
 public:
  explicit Denoiser(DenoiserConfig config);

  const DenoiserConfig& config() const { return config_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }

  /// x_n[B, T, W] and one step per batch element; returns [B, T, W].
  Tensor forward(const Tensor& x_n, std::span<const std::size_t> steps) const;
  PlanMatrix predict_x0(const PlanMatrix& x_n, std::size_t n) const;

  /// Sinusoid followed by the two-layer projection.
  std::vector<double> time_embed(std::size_t n) const;

  /// Runs the attention block registered under `prefix` (e.g. "enc0.attn").
  Tensor attention_forward(const std::string& prefix, const Tensor& x, Tensor* weights = nullptr) const;

  /// Number of scalars in the attention projections.
  std::size_t attention_parameter_count() const;
  /// Horizon distance beyond which a position cannot influence another
  /// when attention is disabled.
  std::size_t receptive_radius() const;

 private:
  Tensor activate(const Tensor& x) const;
  Tensor residual_block(const std::string& prefix, const Tensor& x, const Tensor& temb) const;
  Tensor time_mlp(const Tensor& sinusoids) const;
  const Tensor& p(const std::string& name) const { return params_.at(name); }

  DenoiserConfig config_;
  ParameterSet params_;
};

}  // namespace actdiff
