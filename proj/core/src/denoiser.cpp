#include "actdiff/denoiser.hpp"

#include <cmath>

#include "actdiff/error.hpp"
#include "actdiff/ops.hpp"
#include "actdiff/rng.hpp"
#include "json.hpp"

namespace actdiff {

using nlohmann::json;

const char* to_string(Activation a) { return a == Activation::Mish ? "mish" : "silu"; }

Activation parse_activation(const std::string& s) {
  if (s == "mish") return Activation::Mish;
  if (s == "silu") return Activation::SiLU;
  throw ConfigError("unknown activation '" + s + "' (expected mish or silu)");
}

void DenoiserConfig::validate() const {
  if (channels.empty()) throw ConfigError("denoiser: at least one stage required");
  for (auto c : channels)
    if (c == 0) throw ConfigError("denoiser: stage widths must be positive");
  if (time_embed_dim < 4 || time_embed_dim % 2 != 0) throw ConfigError("denoiser: time_embed_dim must be even and >= 4");
  if (input_width == 0) throw ConfigError("denoiser: input_width must be positive");
  if (horizon == 0) throw ConfigError("denoiser: horizon must be positive");
  if (kernel_size % 2 == 0) throw ConfigError("denoiser: kernel_size must be odd");
}

std::string DenoiserConfig::to_json() const {
  json j;
  j["channels"] = channels;
  j["attention"] = attention;
  j["time_embed_dim"] = time_embed_dim;
  j["input_width"] = input_width;
  j["horizon"] = horizon;
  j["kernel_size"] = kernel_size;
  j["activation"] = actdiff::to_string(activation);
  j["init_seed"] = init_seed;
  return j.dump();
}

DenoiserConfig DenoiserConfig::from_json(const std::string& text) {
  DenoiserConfig c;
  try {
    auto j = json::parse(text);
    c.channels = j.at("channels").get<std::vector<std::size_t>>();
    c.attention = j.at("attention").get<bool>();
    c.time_embed_dim = j.at("time_embed_dim").get<std::size_t>();
    c.input_width = j.at("input_width").get<std::size_t>();
    c.horizon = j.at("horizon").get<std::size_t>();
    c.kernel_size = j.at("kernel_size").get<std::size_t>();
    c.activation = parse_activation(j.at("activation").get<std::string>());
    c.init_seed = j.at("init_seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw DataError(std::string("denoiser config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<double> sinusoidal_embedding(std::size_t n, std::size_t dim) {
  if (dim % 2 != 0) throw ConfigError("sinusoidal_embedding: dim must be even, got " + std::to_string(dim));
  if (dim < 4) throw ConfigError("sinusoidal_embedding: dim must be >= 4");
  const std::size_t half = dim / 2;
  const double scale = std::log(10000.0) / static_cast<double>(half - 1);
  std::vector<double> out(dim);
  for (std::size_t i = 0; i < half; ++i) {
    const double arg = static_cast<double>(n) * std::exp(-scale * static_cast<double>(i));
    out[i] = std::sin(arg);
    out[half + i] = std::cos(arg);
  }
  return out;
}

Tensor self_attention(const Tensor& x, const Tensor& wq, const Tensor& bq, const Tensor& wk,
                      const Tensor& wv, const Tensor& bv, Tensor* weights) {
  if (x.rank() != 3) throw ConfigError("attention: input must be [B,T,C], got " + shape_str(x.shape()));
  const auto q = ops::conv1d(x, wq, bq);
  const auto k = ops::conv1d(x, wk, Tensor{});
  const auto v = ops::conv1d(x, wv, bv);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.dim(2)));
  auto attn = ops::softmax(ops::scale(ops::bmm(q, ops::transpose(k)), inv_sqrt_d));
  if (weights) *weights = attn;
  return ops::add(x, ops::bmm(attn, v));
}

namespace {

Tensor init_normal(Shape shape, double stddev, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.normal(0.0, stddev);
  return Tensor::from_data(std::move(shape), std::move(v), true);
}

Tensor init_const(Shape shape, double value) { return Tensor::full(std::move(shape), value, true); }

void add_conv(ParameterSet& ps, const std::string& name, std::size_t cin, std::size_t cout, std::size_t k, Rng& rng,
              bool zero = false) {
  const double stddev = 1.0 / std::sqrt(static_cast<double>(k * cin));
  ps.add(name + ".weight", zero ? init_const({cout, k, cin}, 0.0) : init_normal({cout, k, cin}, stddev, rng));
  ps.add(name + ".bias", init_const({cout}, 0.0));
}

void add_linear(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  ps.add(name + ".weight", init_normal({out, in}, 1.0 / std::sqrt(static_cast<double>(in)), rng));
  ps.add(name + ".bias", init_const({out}, 0.0));
}

void add_norm(ParameterSet& ps, const std::string& name, std::size_t c) {
  ps.add(name + ".gain", init_const({c}, 1.0));
  ps.add(name + ".shift", init_const({c}, 0.0));
}

void add_residual_block(ParameterSet& ps, const std::string& name, std::size_t cin, std::size_t cout,
                        std::size_t temb, std::size_t k, Rng& rng) {
  add_norm(ps, name + ".norm1", cin);
  add_conv(ps, name + ".conv1", cin, cout, k, rng);
  add_linear(ps, name + ".time", temb, cout, rng);
  add_norm(ps, name + ".norm2", cout);
  add_conv(ps, name + ".conv2", cout, cout, k, rng);
  if (cin != cout) add_conv(ps, name + ".skip", cin, cout, 1, rng);
}

void add_attention(ParameterSet& ps, const std::string& name, std::size_t c, Rng& rng) {
  add_conv(ps, name + ".q", c, c, 1, rng);
  ps.add(name + ".k.weight", init_normal({c, 1, c}, 1.0 / std::sqrt(static_cast<double>(c)), rng));
  add_conv(ps, name + ".v", c, c, 1, rng);
}

std::string enc(std::size_t s) { return "enc" + std::to_string(s); }
std::string dec(std::size_t s) { return "dec" + std::to_string(s); }

}  // namespace

Denoiser::Denoiser(DenoiserConfig config) : config_(std::move(config)) {
  config_.validate();
  Rng rng(config_.init_seed);
  const auto& ch = config_.channels;
  const std::size_t k = config_.kernel_size, temb = config_.time_embed_dim;
  add_linear(params_, "time.fc1", temb, 4 * temb, rng);
  add_linear(params_, "time.fc2", 4 * temb, temb, rng);
  add_conv(params_, "input", config_.input_width, ch[0], k, rng);
  for (std::size_t s = 0; s < ch.size(); ++s) {
    add_residual_block(params_, enc(s) + ".block", s == 0 ? ch[0] : ch[s - 1], ch[s], temb, k, rng);
    if (config_.attention) add_attention(params_, enc(s) + ".attn", ch[s], rng);
  }
  for (std::size_t s = ch.size() - 1; s-- > 0;) {
    add_residual_block(params_, dec(s) + ".block", ch[s + 1] + ch[s], ch[s], temb, k, rng);
    if (config_.attention) add_attention(params_, dec(s) + ".attn", ch[s], rng);
  }
  add_norm(params_, "output.norm", ch[0]);
  add_conv(params_, "output", ch[0], config_.input_width, 1, rng, /*zero=*/true);
}

Tensor Denoiser::activate(const Tensor& x) const {
  return config_.activation == Activation::Mish ? ops::mish(x) : ops::silu(x);
}

Tensor Denoiser::time_mlp(const Tensor& sinusoids) const {
  auto h = ops::linear(sinusoids, p("time.fc1.weight"), p("time.fc1.bias"));
  return ops::linear(activate(h), p("time.fc2.weight"), p("time.fc2.bias"));
}

Tensor Denoiser::residual_block(const std::string& prefix, const Tensor& x, const Tensor& temb) const {
  auto h = ops::layer_norm(x, p(prefix + ".norm1.gain"), p(prefix + ".norm1.shift"));
  h = ops::conv1d(activate(h), p(prefix + ".conv1.weight"), p(prefix + ".conv1.bias"));
  h = ops::add_per_sample(h, ops::linear(activate(temb), p(prefix + ".time.weight"), p(prefix + ".time.bias")));
  h = ops::layer_norm(h, p(prefix + ".norm2.gain"), p(prefix + ".norm2.shift"));
  h = ops::conv1d(activate(h), p(prefix + ".conv2.weight"), p(prefix + ".conv2.bias"));
  const std::string skip = prefix + ".skip.weight";
  const bool projected = x.dim(2) != h.dim(2);
  return ops::add(h, projected ? ops::conv1d(x, p(skip), p(prefix + ".skip.bias")) : x);
}

Tensor Denoiser::attention_forward(const std::string& prefix, const Tensor& x, Tensor* weights) const {
  return self_attention(x, p(prefix + ".q.weight"), p(prefix + ".q.bias"), p(prefix + ".k.weight"),
                        p(prefix + ".v.weight"), p(prefix + ".v.bias"), weights);
}

Tensor Denoiser::forward(const Tensor& x_n, std::span<const std::size_t> steps) const {
  if (x_n.rank() != 3 || x_n.dim(1) != config_.horizon || x_n.dim(2) != config_.input_width) {
    throw ConfigError("denoiser: input " + shape_str(x_n.shape()) + " does not match [B," +
                      std::to_string(config_.horizon) + "," + std::to_string(config_.input_width) + "]");
  }
  if (steps.size() != x_n.dim(0)) {
    throw ConfigError("denoiser: " + std::to_string(steps.size()) + " steps for batch of " + std::to_string(x_n.dim(0)));
  }
  const std::size_t batch = x_n.dim(0), d = config_.time_embed_dim;
  std::vector<double> sin_values;
  sin_values.reserve(batch * d);
  for (auto n : steps) {
    auto e = sinusoidal_embedding(n, d);
    sin_values.insert(sin_values.end(), e.begin(), e.end());
  }
  const auto temb = time_mlp(Tensor::from_data({batch, d}, std::move(sin_values)));

  const auto& ch = config_.channels;
  auto h = ops::conv1d(x_n, p("input.weight"), p("input.bias"));
  std::vector<Tensor> skips;
  for (std::size_t s = 0; s < ch.size(); ++s) {
    h = residual_block(enc(s) + ".block", h, temb);
    if (config_.attention) h = attention_forward(enc(s) + ".attn", h);
    skips.push_back(h);
  }
  for (std::size_t s = ch.size() - 1; s-- > 0;) {
    h = residual_block(dec(s) + ".block", ops::concat({h, skips[s]}, 2), temb);
    if (config_.attention) h = attention_forward(dec(s) + ".attn", h);
  }
  h = activate(ops::layer_norm(h, p("output.norm.gain"), p("output.norm.shift")));
  return ops::conv1d(h, p("output.weight"), p("output.bias"));
}

PlanMatrix Denoiser::predict_x0(const PlanMatrix& x_n, std::size_t n) const {
  if (x_n.rows() != config_.horizon || x_n.width() != config_.input_width) {
    throw ConfigError("denoiser: plan matrix " + std::to_string(x_n.rows()) + "x" + std::to_string(x_n.width()) +
                      " does not match config " + std::to_string(config_.horizon) + "x" +
                      std::to_string(config_.input_width));
  }
  const std::size_t steps[] = {n};
  auto out = forward(stack_plans(std::span<const PlanMatrix>(&x_n, 1)), steps);
  return unstack_plan(out, 0, x_n.dims());
}

std::vector<double> Denoiser::time_embed(std::size_t n) const {
  const std::size_t d = config_.time_embed_dim;
  auto out = time_mlp(Tensor::from_data({1, d}, sinusoidal_embedding(n, d)));
  return {out.data().begin(), out.data().end()};
}

std::size_t Denoiser::attention_parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : params_.entries())
    if (e.name.find(".attn.") != std::string::npos) n += e.tensor.numel();
  return n;
}

std::size_t Denoiser::receptive_radius() const {
  // input conv, two convs per residual block on the encoder + decoder path, 1x1 output conv
  const std::size_t blocks = 2 * config_.num_stages() - 1;
  return (config_.kernel_size / 2) * (1 + 2 * blocks);
}

}  // namespace actdiff
