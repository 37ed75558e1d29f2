#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "rda/numeric/array.hpp"
#include "rda/numeric/node.hpp"

namespace rda::nn {

namespace detail {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using MapCM = Eigen::Map<const MatRM>;
using StridedM = Eigen::Map<MatRM, 0, Eigen::OuterStride<>>;
using StridedCM = Eigen::Map<const MatRM, 0, Eigen::OuterStride<>>;

inline MapCM as_mat(const Array& a) { return MapCM(a.data(), a.rows(), a.cols()); }
inline MapM as_mat(Array& a) { return MapM(a.data(), a.rows(), a.cols()); }

inline bool wants_grad(const std::shared_ptr<NodeImpl>& p) { return p->requires_grad; }

enum class Broadcast { same, scalar, row };

inline Broadcast broadcast_kind(const Array& a, const Array& b, std::string_view op) {
  if (a.shape() == b.shape()) return Broadcast::same;
  if (b.size() == 1) return Broadcast::scalar;
  if (a.rank() == 2 && b.rows() == 1 && b.cols() == a.cols()) return Broadcast::row;
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                   shape_str(b.shape()));
}

inline std::size_t bindex(Broadcast k, std::size_t i, std::size_t cols) {
  switch (k) {
    case Broadcast::same: return i;
    case Broadcast::scalar: return 0;
    case Broadcast::row: return i % cols;
  }
  return i;
}

}  // namespace detail

// ---- elementwise -----------------------------------------------------------

// b may be a scalar or a row vector broadcast over the rows of a.
inline Node add(const Node& a, const Node& b) {
  const auto kind = detail::broadcast_kind(a.value(), b.value(), "add");
  Array out = a.value();
  const std::size_t cols = out.rank() == 2 ? out.cols() : out.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[detail::bindex(kind, i, cols)];
  return make_op("add", std::move(out), {a, b}, [kind, cols](NodeImpl& n) {
    const Array& g = n.grad;
    if (detail::wants_grad(n.parents[0])) {
      Array& ga = n.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (detail::wants_grad(n.parents[1])) {
      Array& gb = n.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[detail::bindex(kind, i, cols)] += g[i];
    }
  });
}

inline Node sub(const Node& a, const Node& b) {
  const auto kind = detail::broadcast_kind(a.value(), b.value(), "sub");
  Array out = a.value();
  const std::size_t cols = out.rank() == 2 ? out.cols() : out.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[detail::bindex(kind, i, cols)];
  return make_op("sub", std::move(out), {a, b}, [kind, cols](NodeImpl& n) {
    const Array& g = n.grad;
    if (detail::wants_grad(n.parents[0])) {
      Array& ga = n.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (detail::wants_grad(n.parents[1])) {
      Array& gb = n.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[detail::bindex(kind, i, cols)] -= g[i];
    }
  });
}

inline Node mul(const Node& a, const Node& b) {
  const auto kind = detail::broadcast_kind(a.value(), b.value(), "mul");
  Array out = a.value();
  const std::size_t cols = out.rank() == 2 ? out.cols() : out.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[detail::bindex(kind, i, cols)];
  return make_op("mul", std::move(out), {a, b}, [kind, cols](NodeImpl& n) {
    const Array& g = n.grad;
    const Array& av = n.parents[0]->value;
    const Array& bv = n.parents[1]->value;
    if (detail::wants_grad(n.parents[0])) {
      Array& ga = n.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[detail::bindex(kind, i, cols)];
    }
    if (detail::wants_grad(n.parents[1])) {
      Array& gb = n.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[detail::bindex(kind, i, cols)] += g[i] * av[i];
    }
  });
}

inline Node scale(const Node& a, double c) {
  Array out = a.value();
  for (auto& v : out.storage()) v *= c;
  return make_op("scale", std::move(out), {a}, [c](NodeImpl& n) {
    Array& ga = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < n.grad.size(); ++i) ga[i] += c * n.grad[i];
  });
}

inline Node exp(const Node& a) {
  Array out = a.value();
  for (auto& v : out.storage()) v = std::exp(v);
  return make_op("exp", std::move(out), {a}, [](NodeImpl& n) {
    Array& ga = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i] * n.value[i];
  });
}

inline Node log1p(const Node& a) {
  Array out = a.value();
  for (auto& v : out.storage()) {
    if (v <= -1.0) throw std::domain_error("log1p of value <= -1");
    v = std::log1p(v);
  }
  return make_op("log1p", std::move(out), {a}, [](NodeImpl& n) {
    const Array& x = n.parents[0]->value;
    Array& ga = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i] / (1.0 + x[i]);
  });
}

// tanh-approximated GELU.
inline Node gelu(const Node& a) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double c = 0.044715;
  Array out = a.value();
  for (auto& v : out.storage()) {
    const double x = v;
    v = 0.5 * x * (1.0 + std::tanh(k * (x + c * x * x * x)));
  }
  return make_op("gelu", std::move(out), {a}, [](NodeImpl& n) {
    const Array& xs = n.parents[0]->value;
    Array& ga = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      const double x = xs[i];
      const double u = k * (x + c * x * x * x);
      const double t = std::tanh(u);
      const double du = k * (1.0 + 3.0 * c * x * x);
      ga[i] += n.grad[i] * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du);
    }
  });
}

// Entries where mask is true are replaced by value; they pass no gradient.
inline Node mask_fill(const Node& a, const std::vector<bool>& mask, double value) {
  if (mask.size() != a.value().size()) throw ShapeError("mask_fill: mask size mismatch");
  Array out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i)
    if (mask[i]) out[i] = value;
  return make_op("mask_fill", std::move(out), {a}, [mask](NodeImpl& n) {
    Array& ga = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      if (!mask[i]) ga[i] += n.grad[i];
  });
}

// ---- reductions and shape --------------------------------------------------

inline Node sum(const Node& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return make_op("sum", Array::scalar(s), {a}, [](NodeImpl& n) {
    Array& ga = n.parents[0]->grad_buffer();
    const double g = n.grad[0];
    for (auto& v : ga.storage()) v += g;
  });
}

inline Node mean(const Node& a) {
  if (a.value().empty()) throw ShapeError("mean of empty array");
  const double count = static_cast<double>(a.value().size());
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return make_op("mean", Array::scalar(s / count), {a}, [count](NodeImpl& n) {
    Array& ga = n.parents[0]->grad_buffer();
    const double g = n.grad[0] / count;
    for (auto& v : ga.storage()) v += g;
  });
}

inline Node reshape(const Node& a, Shape shape) {
  Array out = a.value().reshaped(std::move(shape));
  return make_op("reshape", std::move(out), {a}, [](NodeImpl& n) {
    Array& ga = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i];
  });
}

// Stacks matrix views along rows. Scalars and vectors count as single rows.
inline Node concat_rows(const std::vector<Node>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows of nothing");
  const std::size_t cols = parts[0].value().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.value().cols() != cols) throw ShapeError("concat_rows: column count mismatch");
    rows += p.value().rows();
  }
  Array out = Array::matrix(rows, cols);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data(), p.value().data() + p.value().size(), out.data() + off);
    off += p.value().size();
  }
  return make_op("concat", std::move(out), parts, [](NodeImpl& n) {
    std::size_t off = 0;
    for (auto& p : n.parents) {
      const std::size_t len = p->value.size();
      if (p->requires_grad) {
        Array& gp = p->grad_buffer();
        for (std::size_t i = 0; i < len; ++i) gp[i] += n.grad[off + i];
      }
      off += len;
    }
  });
}

// ---- indexing --------------------------------------------------------------

inline Node gather_rows(const Node& table, std::span<const int> ids) {
  const Array& t = table.value();
  const std::size_t cols = t.cols();
  const std::size_t nrows = t.rows();
  Array out = Array::matrix(ids.size(), cols);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= nrows) {
      throw std::out_of_range("gather_rows: index " + std::to_string(ids[r]) + " out of range");
    }
    std::copy_n(t.data() + static_cast<std::size_t>(ids[r]) * cols, cols, out.data() + r * cols);
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return make_op("gather_rows", std::move(out), {table}, [idx = std::move(idx), cols](NodeImpl& n) {
    Array& gt = n.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      double* dst = gt.data() + static_cast<std::size_t>(idx[r]) * cols;
      const double* src = n.grad.data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
    }
  });
}

// out[i] = x(rows[i], cols[i]).
inline Node gather_elements(const Node& x, std::vector<std::size_t> rows,
                            std::vector<std::size_t> cols) {
  if (rows.size() != cols.size()) throw ShapeError("gather_elements: index length mismatch");
  const Array& xv = x.value();
  const std::size_t nc = xv.cols();
  Array out = Array(Shape{rows.size()});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= xv.rows() || cols[i] >= nc) throw std::out_of_range("gather_elements: index");
    out[i] = xv[rows[i] * nc + cols[i]];
  }
  return make_op("gather_elements", std::move(out), {x},
                 [rows = std::move(rows), cols = std::move(cols), nc](NodeImpl& n) {
                   Array& gx = n.parents[0]->grad_buffer();
                   for (std::size_t i = 0; i < rows.size(); ++i) gx[rows[i] * nc + cols[i]] += n.grad[i];
                 });
}

// ---- linear algebra --------------------------------------------------------

inline Node matmul(const Node& a, const Node& b) {
  const Array& av = a.value();
  const Array& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows()) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(av.shape()) + " x " +
                     shape_str(bv.shape()));
  }
  Array out = Array::matrix(av.rows(), bv.cols());
  detail::as_mat(out).noalias() = detail::as_mat(av) * detail::as_mat(bv);
  return make_op("matmul", std::move(out), {a, b}, [](NodeImpl& n) {
    auto g = detail::as_mat(std::as_const(n.grad));
    if (detail::wants_grad(n.parents[0])) {
      detail::as_mat(n.parents[0]->grad_buffer()).noalias() +=
          g * detail::as_mat(std::as_const(n.parents[1]->value)).transpose();
    }
    if (detail::wants_grad(n.parents[1])) {
      detail::as_mat(n.parents[1]->grad_buffer()).noalias() +=
          detail::as_mat(std::as_const(n.parents[0]->value)).transpose() * g;
    }
  });
}

// ---- normalisation ---------------------------------------------------------

inline std::vector<double> log_softmax(std::span<const double> logits) {
  if (logits.empty()) throw ShapeError("log_softmax of empty vector");
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : logits) mx = std::max(mx, v);
  double s = 0.0;
  for (double v : logits) s += std::exp(v - mx);
  const double lse = mx + std::log(s);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

// Row-wise log-softmax over a matrix view.
inline Node log_softmax(const Node& x) {
  const Array& xv = x.value();
  if (xv.empty()) throw ShapeError("log_softmax of empty array");
  const std::size_t rows = xv.rows(), cols = xv.cols();
  Array out = Array(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    auto row = log_softmax(std::span<const double>(xv.data() + r * cols, cols));
    std::copy(row.begin(), row.end(), out.data() + r * cols);
  }
  return make_op("log_softmax", std::move(out), {x}, [rows, cols](NodeImpl& n) {
    Array& gx = n.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* g = n.grad.data() + r * cols;
      const double* y = n.value.data() + r * cols;
      double gs = 0.0;
      for (std::size_t c = 0; c < cols; ++c) gs += g[c];
      double* dst = gx.data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) dst[c] += g[c] - std::exp(y[c]) * gs;
    }
  });
}

// x / sqrt(mean(x^2) + eps), row-wise.
inline Node rms_norm(const Node& x, double eps = 1e-6) {
  const Array& xv = x.value();
  const std::size_t rows = xv.rows(), cols = xv.cols();
  Array out = Array(xv.shape());
  std::vector<double> inv(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = xv.data() + r * cols;
    double ms = 0.0;
    for (std::size_t c = 0; c < cols; ++c) ms += src[c] * src[c];
    inv[r] = 1.0 / std::sqrt(ms / static_cast<double>(cols) + eps);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = src[c] * inv[r];
  }
  return make_op("rms_norm", std::move(out), {x}, [inv = std::move(inv), rows, cols](NodeImpl& n) {
    Array& gx = n.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* g = n.grad.data() + r * cols;
      const double* y = n.value.data() + r * cols;
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += g[c] * y[c];
      dot /= static_cast<double>(cols);
      double* dst = gx.data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) dst[c] += inv[r] * (g[c] - y[c] * dot);
    }
  });
}

// ---- attention -------------------------------------------------------------

// Position i may attend to j when j < prefix_len (bidirectional prefix) or j <= i.
inline bool attention_allowed(std::size_t i, std::size_t j, std::size_t prefix_len) {
  return j < prefix_len || j <= i;
}

// Multi-head scaled dot-product attention over [L x width] q, k, v with the
// prefix-causal mask above. Heads split the width evenly.
inline Node attention(const Node& q, const Node& k, const Node& v, std::size_t n_heads,
                      std::size_t prefix_len) {
  const Array& qv = q.value();
  const std::size_t len = qv.rows(), width = qv.cols();
  if (k.value().shape() != qv.shape() || v.value().shape() != qv.shape()) {
    throw ShapeError("attention: q, k, v shapes differ");
  }
  if (n_heads == 0 || width % n_heads != 0) throw ShapeError("attention: width not divisible by heads");
  const std::size_t dh = width / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const double neg_inf = -std::numeric_limits<double>::infinity();

  // probs[h] is L x L
  auto probs = std::make_shared<std::vector<detail::MatRM>>(n_heads);
  Array out = Array::matrix(len, width);
  const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(width));
  for (std::size_t h = 0; h < n_heads; ++h) {
    detail::StridedCM qh(qv.data() + h * dh, len, dh, stride);
    detail::StridedCM kh(k.value().data() + h * dh, len, dh, stride);
    detail::StridedCM vh(v.value().data() + h * dh, len, dh, stride);
    detail::MatRM s = (qh * kh.transpose()) * inv_sqrt;
    for (std::size_t i = 0; i < len; ++i) {
      double mx = neg_inf;
      for (std::size_t j = 0; j < len; ++j) {
        if (!attention_allowed(i, j, prefix_len)) s(i, j) = neg_inf;
        mx = std::max(mx, s(i, j));
      }
      double z = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        const double e = s(i, j) == neg_inf ? 0.0 : std::exp(s(i, j) - mx);
        s(i, j) = e;
        z += e;
      }
      s.row(static_cast<Eigen::Index>(i)) /= z;
    }
    detail::StridedM oh(out.data() + h * dh, len, dh, stride);
    oh.noalias() = s * vh;
    (*probs)[h] = std::move(s);
  }
  return make_op("attention", std::move(out), {q, k, v},
                 [probs, n_heads, dh, len, width, inv_sqrt](NodeImpl& n) {
                   const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(width));
                   const Array& qv = n.parents[0]->value;
                   const Array& kv = n.parents[1]->value;
                   const Array& vv = n.parents[2]->value;
                   const bool gq = n.parents[0]->requires_grad;
                   const bool gk = n.parents[1]->requires_grad;
                   const bool gv = n.parents[2]->requires_grad;
                   for (std::size_t h = 0; h < n_heads; ++h) {
                     const detail::MatRM& p = (*probs)[h];
                     detail::StridedCM go(n.grad.data() + h * dh, len, dh, stride);
                     detail::StridedCM qh(qv.data() + h * dh, len, dh, stride);
                     detail::StridedCM kh(kv.data() + h * dh, len, dh, stride);
                     detail::StridedCM vh(vv.data() + h * dh, len, dh, stride);
                     if (gv) {
                       detail::StridedM dv(n.parents[2]->grad_buffer().data() + h * dh, len, dh, stride);
                       dv.noalias() += p.transpose() * go;
                     }
                     if (!gq && !gk) continue;
                     detail::MatRM dp = go * vh.transpose();
                     // softmax backward: ds = p * (dp - rowsum(dp * p))
                     Eigen::VectorXd rs = (dp.array() * p.array()).rowwise().sum();
                     detail::MatRM ds = p.array() * (dp.array().colwise() - rs.array());
                     ds *= inv_sqrt;
                     if (gq) {
                       detail::StridedM dq(n.parents[0]->grad_buffer().data() + h * dh, len, dh, stride);
                       dq.noalias() += ds * kh;
                     }
                     if (gk) {
                       detail::StridedM dk(n.parents[1]->grad_buffer().data() + h * dh, len, dh, stride);
                       dk.noalias() += ds.transpose() * qh;
                     }
                   }
                 });
}

}  // namespace rda::nn
