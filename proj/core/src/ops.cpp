#include "actdiff/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "actdiff/error.hpp"
#include "node.hpp"

namespace actdiff::ops {

namespace {

using detail::Buffer;
using detail::Node;
using NodePtr = std::shared_ptr<Node>;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using Backward = std::function<void(Node&)>;

[[noreturn]] void shape_error(const char* op, const std::string& detail) {
  throw ConfigError(std::string(op) + ": " + detail);
}

void require_defined(const char* op, const Tensor& t) {
  if (!t.defined()) shape_error(op, "undefined input");
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  require_defined(op, a);
  require_defined(op, b);
  if (a.shape() != b.shape()) shape_error(op, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// Wraps a freshly computed value as a graph node. The backward closure and
// input references are kept only when some input needs a gradient.
Tensor make_result(const char* op, Shape shape, Buffer value, std::vector<NodePtr> inputs,
                   Backward backward) {
  auto node = std::make_shared<Node>();
  node->op = op;
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->requires_grad = std::any_of(inputs.begin(), inputs.end(), [](const NodePtr& n) { return n && n->requires_grad; });
  if (node->requires_grad) {
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs)
      if (in) node->inputs.push_back(std::move(in));
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

bool wants(const NodePtr& n) { return n && n->requires_grad; }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  Buffer out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  NodePtr na = a.node(), nb = b.node();
  return make_result("add", a.shape(), std::move(out), {na, nb}, [na, nb](Node& self) {
    for (auto* n : {na.get(), nb.get()}) {
      if (!n->requires_grad) continue;
      auto& g = n->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  Buffer out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  NodePtr na = a.node(), nb = b.node();
  return make_result("sub", a.shape(), std::move(out), {na, nb}, [na, nb](Node& self) {
    if (na->requires_grad) {
      auto& g = na->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (nb->requires_grad) {
      auto& g = nb->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  Buffer out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  NodePtr na = a.node(), nb = b.node();
  return make_result("mul", a.shape(), std::move(out), {na, nb}, [na, nb](Node& self) {
    if (na->requires_grad) {
      auto& g = na->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * nb->value[i];
    }
    if (nb->requires_grad) {
      auto& g = nb->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * na->value[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  require_defined("scale", a);
  Buffer out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  NodePtr na = a.node();
  return make_result("scale", a.shape(), std::move(out), {na}, [na, factor](Node& self) {
    auto& g = na->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

Tensor add_per_sample(const Tensor& x, const Tensor& e) {
  require_defined("add_per_sample", x);
  require_defined("add_per_sample", e);
  if (x.rank() < 2 || e.rank() != 2 || e.dim(0) != x.dim(0) || e.dim(1) != x.shape().back()) {
    shape_error("add_per_sample", "cannot broadcast " + shape_str(e.shape()) + " onto " + shape_str(x.shape()));
  }
  const std::size_t batch = x.dim(0), channels = e.dim(1);
  const std::size_t inner = x.numel() / (batch * channels);
  Buffer out(x.data().begin(), x.data().end());
  auto ev = e.data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < inner; ++t)
      for (std::size_t c = 0; c < channels; ++c) out[(b * inner + t) * channels + c] += ev[b * channels + c];
  NodePtr nx = x.node(), ne = e.node();
  return make_result("add_per_sample", x.shape(), std::move(out), {nx, ne},
                     [nx, ne, batch, inner, channels](Node& self) {
                       if (nx->requires_grad) {
                         auto& g = nx->ensure_grad();
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                       }
                       if (ne->requires_grad) {
                         auto& g = ne->ensure_grad();
                         for (std::size_t b = 0; b < batch; ++b)
                           for (std::size_t t = 0; t < inner; ++t)
                             for (std::size_t c = 0; c < channels; ++c)
                               g[b * channels + c] += self.grad[(b * inner + t) * channels + c];
                       }
                     });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined("matmul", a);
  require_defined("matmul", b);
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    shape_error("matmul", "incompatible dims " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const auto m = static_cast<Eigen::Index>(a.dim(0)), k = static_cast<Eigen::Index>(a.dim(1)),
             n = static_cast<Eigen::Index>(b.dim(1));
  Buffer out(static_cast<std::size_t>(m * n));
  MapMat(out.data(), m, n).noalias() = ConstMapMat(a.data().data(), m, k) * ConstMapMat(b.data().data(), k, n);
  NodePtr na = a.node(), nb = b.node();
  return make_result("matmul", {a.dim(0), b.dim(1)}, std::move(out), {na, nb}, [na, nb, m, k, n](Node& self) {
    ConstMapMat g(self.grad.data(), m, n);
    if (na->requires_grad)
      MapMat(na->ensure_grad().data(), m, k).noalias() += g * ConstMapMat(nb->value.data(), k, n).transpose();
    if (nb->requires_grad)
      MapMat(nb->ensure_grad().data(), k, n).noalias() += ConstMapMat(na->value.data(), m, k).transpose() * g;
  });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  require_defined("bmm", a);
  require_defined("bmm", b);
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    shape_error("bmm", "incompatible dims " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t batch = a.dim(0);
  const auto m = static_cast<Eigen::Index>(a.dim(1)), k = static_cast<Eigen::Index>(a.dim(2)),
             n = static_cast<Eigen::Index>(b.dim(2));
  const std::size_t sa = m * k, sb = k * n, so = m * n;
  Buffer out(batch * so);
  for (std::size_t i = 0; i < batch; ++i) {
    MapMat(out.data() + i * so, m, n).noalias() =
        ConstMapMat(a.data().data() + i * sa, m, k) * ConstMapMat(b.data().data() + i * sb, k, n);
  }
  NodePtr na = a.node(), nb = b.node();
  return make_result("bmm", {batch, a.dim(1), b.dim(2)}, std::move(out), {na, nb},
                     [na, nb, batch, m, k, n, sa, sb, so](Node& self) {
                       for (std::size_t i = 0; i < batch; ++i) {
                         ConstMapMat g(self.grad.data() + i * so, m, n);
                         if (na->requires_grad)
                           MapMat(na->ensure_grad().data() + i * sa, m, k).noalias() +=
                               g * ConstMapMat(nb->value.data() + i * sb, k, n).transpose();
                         if (nb->requires_grad)
                           MapMat(nb->ensure_grad().data() + i * sb, k, n).noalias() +=
                               ConstMapMat(na->value.data() + i * sa, m, k).transpose() * g;
                       }
                     });
}

Tensor transpose(const Tensor& a) {
  require_defined("transpose", a);
  if (a.rank() != 2 && a.rank() != 3) shape_error("transpose", "expects rank 2 or 3, got " + shape_str(a.shape()));
  const std::size_t batch = a.rank() == 3 ? a.dim(0) : 1;
  const std::size_t rows = a.dim(a.rank() - 2), cols = a.dim(a.rank() - 1);
  Buffer out(a.numel());
  auto x = a.data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) out[b * rows * cols + c * rows + r] = x[b * rows * cols + r * cols + c];
  Shape shape = a.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  NodePtr na = a.node();
  return make_result("transpose", std::move(shape), std::move(out), {na}, [na, batch, rows, cols](Node& self) {
    auto& g = na->ensure_grad();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
          g[b * rows * cols + r * cols + c] += self.grad[b * rows * cols + c * rows + r];
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require_defined("linear", x);
  require_defined("linear", w);
  if (w.rank() != 2 || x.rank() < 1 || x.shape().back() != w.dim(1)) {
    shape_error("linear", "input " + shape_str(x.shape()) + " incompatible with weight " + shape_str(w.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != w.dim(0))) {
    shape_error("linear", "bias " + shape_str(bias.shape()) + " does not match weight " + shape_str(w.shape()));
  }
  const auto in = static_cast<Eigen::Index>(w.dim(1)), outc = static_cast<Eigen::Index>(w.dim(0));
  const auto rows = static_cast<Eigen::Index>(x.numel() / w.dim(1));
  Buffer out(static_cast<std::size_t>(rows * outc));
  MapMat o(out.data(), rows, outc);
  o.noalias() = ConstMapMat(x.data().data(), rows, in) * ConstMapMat(w.data().data(), outc, in).transpose();
  if (bias.defined()) o.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data().data(), outc);
  Shape shape = x.shape();
  shape.back() = w.dim(0);
  NodePtr nx = x.node(), nw = w.node(), nbias = bias.defined() ? bias.node() : nullptr;
  return make_result("linear", std::move(shape), std::move(out), {nx, nw, nbias},
                     [nx, nw, nbias, rows, in, outc](Node& self) {
                       ConstMapMat g(self.grad.data(), rows, outc);
                       if (nx->requires_grad)
                         MapMat(nx->ensure_grad().data(), rows, in).noalias() +=
                             g * ConstMapMat(nw->value.data(), outc, in);
                       if (nw->requires_grad)
                         MapMat(nw->ensure_grad().data(), outc, in).noalias() +=
                             g.transpose() * ConstMapMat(nx->value.data(), rows, in);
                       if (wants(nbias))
                         Eigen::Map<Eigen::RowVectorXd>(nbias->ensure_grad().data(), outc) += g.colwise().sum();
                     });
}

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require_defined("conv1d", x);
  require_defined("conv1d", w);
  if (x.rank() != 3) shape_error("conv1d", "input must be [B,T,C], got " + shape_str(x.shape()));
  if (w.rank() != 3 || w.dim(2) != x.dim(2)) {
    shape_error("conv1d", "weight " + shape_str(w.shape()) + " incompatible with input " + shape_str(x.shape()));
  }
  if (w.dim(1) % 2 == 0) shape_error("conv1d", "kernel size must be odd, got " + std::to_string(w.dim(1)));
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != w.dim(0))) {
    shape_error("conv1d", "bias " + shape_str(bias.shape()) + " does not match weight " + shape_str(w.shape()));
  }
  const std::size_t batch = x.dim(0), len = x.dim(1), cin = x.dim(2), cout = w.dim(0), ks = w.dim(1);
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(ks / 2);
  const auto rows = static_cast<Eigen::Index>(batch * len), kcin = static_cast<Eigen::Index>(ks * cin),
             ocols = static_cast<Eigen::Index>(cout);

  // im2col: row (b, t) holds the K shifted input rows side by side
  Buffer col;
  const double* col_ptr = x.data().data();
  if (ks != 1) {
    col.assign(static_cast<std::size_t>(rows * kcin), 0.0);
    auto xv = x.data();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t t = 0; t < len; ++t)
        for (std::size_t k = 0; k < ks; ++k) {
          const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(k) - pad;
          if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
          std::copy_n(xv.data() + (b * len + static_cast<std::size_t>(src)) * cin, cin,
                      col.data() + (b * len + t) * ks * cin + k * cin);
        }
    col_ptr = col.data();
  }
  Buffer out(static_cast<std::size_t>(rows * ocols));
  MapMat o(out.data(), rows, ocols);
  o.noalias() = ConstMapMat(col_ptr, rows, kcin) * ConstMapMat(w.data().data(), ocols, kcin).transpose();
  if (bias.defined()) o.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data().data(), ocols);

  NodePtr nx = x.node(), nw = w.node(), nbias = bias.defined() ? bias.node() : nullptr;
  return make_result(
      "conv1d", {batch, len, cout}, std::move(out), {nx, nw, nbias},
      [nx, nw, nbias, col = std::move(col), batch, len, cin, ks, pad, rows, kcin, ocols](Node& self) {
        ConstMapMat g(self.grad.data(), rows, ocols);
        const double* cp = ks == 1 ? nx->value.data() : col.data();
        if (nw->requires_grad)
          MapMat(nw->ensure_grad().data(), ocols, kcin).noalias() += g.transpose() * ConstMapMat(cp, rows, kcin);
        if (wants(nbias)) Eigen::Map<Eigen::RowVectorXd>(nbias->ensure_grad().data(), ocols) += g.colwise().sum();
        if (!nx->requires_grad) return;
        auto& gx = nx->ensure_grad();
        if (ks == 1) {
          MapMat(gx.data(), rows, kcin).noalias() += g * ConstMapMat(nw->value.data(), ocols, kcin);
          return;
        }
        RowMat dcol = g * ConstMapMat(nw->value.data(), ocols, kcin);
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t t = 0; t < len; ++t)
            for (std::size_t k = 0; k < ks; ++k) {
              const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(k) - pad;
              if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
              const double* d = dcol.data() + (b * len + t) * ks * cin + k * cin;
              double* dst = gx.data() + (b * len + static_cast<std::size_t>(src)) * cin;
              for (std::size_t c = 0; c < cin; ++c) dst[c] += d[c];
            }
      });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps) {
  require_defined("layer_norm", x);
  require_defined("layer_norm", gain);
  require_defined("layer_norm", shift);
  const std::size_t c = x.shape().back();
  if (gain.rank() != 1 || gain.dim(0) != c || shift.rank() != 1 || shift.dim(0) != c) {
    shape_error("layer_norm", "gain " + shape_str(gain.shape()) + "/shift " + shape_str(shift.shape()) +
                                  " do not match last axis of " + shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / c;
  Buffer normed(x.numel()), inv_std(rows), out(x.numel());
  auto xv = x.data(), gv = gain.data(), sv = shift.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * c;
    double mu = 0.0;
    for (std::size_t i = 0; i < c; ++i) mu += row[i];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t i = 0; i < c; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<double>(c);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < c; ++i) {
      normed[r * c + i] = (row[i] - mu) * inv_std[r];
      out[r * c + i] = normed[r * c + i] * gv[i] + sv[i];
    }
  }
  NodePtr nx = x.node(), ng = gain.node(), ns = shift.node();
  return make_result("layer_norm", x.shape(), std::move(out), {nx, ng, ns},
                     [nx, ng, ns, normed = std::move(normed), inv_std = std::move(inv_std), rows, c](Node& self) {
                       const auto& g = self.grad;
                       if (ng->requires_grad) {
                         auto& gg = ng->ensure_grad();
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t i = 0; i < c; ++i) gg[i] += g[r * c + i] * normed[r * c + i];
                       }
                       if (ns->requires_grad) {
                         auto& gs = ns->ensure_grad();
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t i = 0; i < c; ++i) gs[i] += g[r * c + i];
                       }
                       if (!nx->requires_grad) return;
                       auto& gx = nx->ensure_grad();
                       const auto& gain_v = ng->value;
                       const double inv_c = 1.0 / static_cast<double>(c);
                       for (std::size_t r = 0; r < rows; ++r) {
                         double mean_d = 0.0, mean_dn = 0.0;
                         for (std::size_t i = 0; i < c; ++i) {
                           const double d = g[r * c + i] * gain_v[i];
                           mean_d += d;
                           mean_dn += d * normed[r * c + i];
                         }
                         mean_d *= inv_c;
                         mean_dn *= inv_c;
                         for (std::size_t i = 0; i < c; ++i) {
                           const double d = g[r * c + i] * gain_v[i];
                           gx[r * c + i] += inv_std[r] * (d - mean_d - normed[r * c + i] * mean_dn);
                         }
                       }
                     });
}

Tensor softmax(const Tensor& x) {
  require_defined("softmax", x);
  const std::size_t c = x.shape().back(), rows = x.numel() / c;
  Buffer out(x.numel());
  auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * c;
    const double mx = *std::max_element(row, row + c);
    double total = 0.0;
    for (std::size_t i = 0; i < c; ++i) total += out[r * c + i] = std::exp(row[i] - mx);
    for (std::size_t i = 0; i < c; ++i) out[r * c + i] /= total;
  }
  NodePtr nx = x.node();
  auto result = make_result("softmax", x.shape(), std::move(out), {nx}, {});
  if (result.requires_grad()) {
    // y is this node's own value; read it through self to avoid a cycle.
    result.node()->backward = [nx, rows, c](Node& self) {
      auto& gx = nx->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t i = 0; i < c; ++i) dot += self.grad[r * c + i] * self.value[r * c + i];
        for (std::size_t i = 0; i < c; ++i) gx[r * c + i] += self.value[r * c + i] * (self.grad[r * c + i] - dot);
      }
    };
  }
  return result;
}

Tensor log_softmax(const Tensor& x) {
  require_defined("log_softmax", x);
  const std::size_t c = x.shape().back(), rows = x.numel() / c;
  Buffer out(x.numel());
  auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * c;
    const double mx = *std::max_element(row, row + c);
    double total = 0.0;
    for (std::size_t i = 0; i < c; ++i) total += std::exp(row[i] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t i = 0; i < c; ++i) out[r * c + i] = row[i] - lse;
  }
  NodePtr nx = x.node();
  auto result = make_result("log_softmax", x.shape(), std::move(out), {nx}, {});
  if (result.requires_grad()) {
    result.node()->backward = [nx, rows, c](Node& self) {
      auto& gx = nx->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        double total = 0.0;
        for (std::size_t i = 0; i < c; ++i) total += self.grad[r * c + i];
        for (std::size_t i = 0; i < c; ++i)
          gx[r * c + i] += self.grad[r * c + i] - std::exp(self.value[r * c + i]) * total;
      }
    };
  }
  return result;
}

namespace {
double softplus(double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); }
double sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}
}  // namespace

Tensor mish(const Tensor& x) {
  require_defined("mish", x);
  Buffer out(x.numel());
  auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * std::tanh(softplus(xv[i]));
  NodePtr nx = x.node();
  return make_result("mish", x.shape(), std::move(out), {nx}, [nx](Node& self) {
    auto& gx = nx->ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const double v = nx->value[i];
      const double th = std::tanh(softplus(v));
      gx[i] += self.grad[i] * (th + v * (1.0 - th * th) * sigmoid(v));
    }
  });
}

Tensor silu(const Tensor& x) {
  require_defined("silu", x);
  Buffer out(x.numel());
  auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * sigmoid(xv[i]);
  NodePtr nx = x.node();
  return make_result("silu", x.shape(), std::move(out), {nx}, [nx](Node& self) {
    auto& gx = nx->ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const double s = sigmoid(nx->value[i]);
      gx[i] += self.grad[i] * (s + nx->value[i] * s * (1.0 - s));
    }
  });
}

Tensor mse(const Tensor& prediction, const Tensor& target) {
  require_same_shape("mse", prediction, target);
  const auto p = prediction.data(), t = target.data();
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) total += (p[i] - t[i]) * (p[i] - t[i]);
  const double n = static_cast<double>(p.size());
  NodePtr np = prediction.node(), nt = target.node();
  return make_result("mse", {1}, {total / n}, {np, nt}, [np, nt, n](Node& self) {
    const double k = 2.0 * self.grad[0] / n;
    if (np->requires_grad) {
      auto& g = np->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += k * (np->value[i] - nt->value[i]);
    }
    if (nt->requires_grad) {
      auto& g = nt->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= k * (np->value[i] - nt->value[i]);
    }
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  require_defined("cross_entropy", logits);
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    shape_error("cross_entropy", "logits " + shape_str(logits.shape()) + " vs " + std::to_string(labels.size()) + " labels");
  }
  const std::size_t rows = logits.dim(0), c = logits.dim(1);
  Buffer probs(logits.numel());
  auto lv = logits.data();
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (labels[r] >= c) shape_error("cross_entropy", "label " + std::to_string(labels[r]) + " out of range [0," + std::to_string(c) + ")");
    const double* row = lv.data() + r * c;
    const double mx = *std::max_element(row, row + c);
    double total = 0.0;
    for (std::size_t i = 0; i < c; ++i) total += probs[r * c + i] = std::exp(row[i] - mx);
    for (std::size_t i = 0; i < c; ++i) probs[r * c + i] /= total;
    loss -= row[labels[r]] - mx - std::log(total);
  }
  loss /= static_cast<double>(rows);
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  NodePtr nl = logits.node();
  return make_result("cross_entropy", {1}, {loss}, {nl},
                     [nl, probs = std::move(probs), lab = std::move(lab), rows, c](Node& self) {
                       auto& g = nl->ensure_grad();
                       const double k = self.grad[0] / static_cast<double>(rows);
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t i = 0; i < c; ++i)
                           g[r * c + i] += k * (probs[r * c + i] - (i == lab[r] ? 1.0 : 0.0));
                     });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) shape_error("concat", "no inputs");
  for (const auto& p : parts) require_defined("concat", p);
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) shape_error("concat", "axis " + std::to_string(axis) + " out of range for " + shape_str(first));
  Shape shape = first;
  shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != first.size()) shape_error("concat", "rank mismatch " + shape_str(p.shape()) + " vs " + shape_str(first));
    for (std::size_t d = 0; d < first.size(); ++d) {
      if (d != axis && p.dim(d) != first[d]) {
        shape_error("concat", "dim " + std::to_string(d) + " mismatch " + shape_str(p.shape()) + " vs " + shape_str(first));
      }
    }
    shape[axis] += p.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  const std::size_t out_stride = shape[axis] * inner;
  Buffer out(shape_numel(shape));
  std::vector<NodePtr> inputs;
  std::vector<std::size_t> offsets, widths;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(axis) * inner;
    auto pv = p.data();
    for (std::size_t o = 0; o < outer; ++o) std::copy_n(pv.data() + o * w, w, out.data() + o * out_stride + offset);
    inputs.push_back(p.node());
    offsets.push_back(offset);
    widths.push_back(w);
    offset += w;
  }
  auto captured = inputs;
  return make_result("concat", std::move(shape), std::move(out), std::move(inputs),
                     [captured = std::move(captured), offsets, widths, outer, out_stride](Node& self) {
                       for (std::size_t i = 0; i < captured.size(); ++i) {
                         if (!captured[i]->requires_grad) continue;
                         auto& g = captured[i]->ensure_grad();
                         for (std::size_t o = 0; o < outer; ++o)
                           for (std::size_t j = 0; j < widths[i]; ++j)
                             g[o * widths[i] + j] += self.grad[o * out_stride + offsets[i] + j];
                       }
                     });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  require_defined("slice", x);
  if (axis >= x.rank()) shape_error("slice", "axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
  if (begin >= end || end > x.dim(axis)) {
    shape_error("slice", "range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for dim " +
                             std::to_string(x.dim(axis)) + " of " + shape_str(x.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= x.dim(d);
  for (std::size_t d = axis + 1; d < x.rank(); ++d) inner *= x.dim(d);
  const std::size_t in_stride = x.dim(axis) * inner, w = (end - begin) * inner, off = begin * inner;
  Shape shape = x.shape();
  shape[axis] = end - begin;
  Buffer out(outer * w);
  auto xv = x.data();
  for (std::size_t o = 0; o < outer; ++o) std::copy_n(xv.data() + o * in_stride + off, w, out.data() + o * w);
  NodePtr nx = x.node();
  return make_result("slice", std::move(shape), std::move(out), {nx}, [nx, outer, in_stride, w, off](Node& self) {
    auto& g = nx->ensure_grad();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t j = 0; j < w; ++j) g[o * in_stride + off + j] += self.grad[o * w + j];
  });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  require_defined("clamp", x);
  if (!(lo <= hi)) shape_error("clamp", "lower bound exceeds upper bound");
  Buffer out(x.numel());
  auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(xv[i], lo, hi);
  NodePtr nx = x.node();
  return make_result("clamp", x.shape(), std::move(out), {nx}, [nx, lo, hi](Node& self) {
    auto& g = nx->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (nx->value[i] >= lo && nx->value[i] <= hi) g[i] += self.grad[i];
  });
}

Tensor embedding(const Tensor& table, std::span<const std::size_t> indices) {
  require_defined("embedding", table);
  if (table.rank() != 2) shape_error("embedding", "table must be [V,D], got " + shape_str(table.shape()));
  if (indices.empty()) shape_error("embedding", "no indices");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  Buffer out(indices.size() * d);
  auto tv = table.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= vocab) {
      shape_error("embedding", "index " + std::to_string(indices[i]) + " out of range [0," + std::to_string(vocab) + ")");
    }
    std::copy_n(tv.data() + indices[i] * d, d, out.data() + i * d);
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  NodePtr nt = table.node();
  return make_result("embedding", {indices.size(), d}, std::move(out), {nt}, [nt, idx = std::move(idx), d](Node& self) {
    auto& g = nt->ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) g[idx[i] * d + j] += self.grad[i * d + j];
  });
}

Tensor sum(const Tensor& x) {
  require_defined("sum", x);
  auto xv = x.data();
  const double total = std::accumulate(xv.begin(), xv.end(), 0.0);
  NodePtr nx = x.node();
  return make_result("sum", {1}, {total}, {nx}, [nx](Node& self) {
    auto& g = nx->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  require_defined("mean", x);
  auto xv = x.data();
  const double n = static_cast<double>(xv.size());
  const double total = std::accumulate(xv.begin(), xv.end(), 0.0);
  NodePtr nx = x.node();
  return make_result("mean", {1}, {total / n}, {nx}, [nx, n](Node& self) {
    auto& g = nx->ensure_grad();
    for (auto& v : g) v += self.grad[0] / n;
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined("reshape", x);
  if (shape_numel(shape) != x.numel()) {
    shape_error("reshape", "cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  NodePtr nx = x.node();
  Buffer out(x.data().begin(), x.data().end());
  return make_result("reshape", std::move(shape), std::move(out), {nx}, [nx](Node& self) {
    auto& g = nx->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

}  // namespace actdiff::ops
