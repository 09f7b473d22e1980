#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "asvr/tensor.hpp"
#include "tensor_node.hpp"

namespace asvr {

using detail::make_result;
using detail::Node;

namespace {

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) +
                   " and " + shape_str(b));
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " +
                     std::to_string(rank) + ", got shape " +
                     shape_str(t.shape()));
  }
}

// True when `small` equals a trailing suffix of `big`.
bool is_suffix(const Shape& big, const Shape& small) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    shape_fail("matmul", a.shape(), b.shape());
  }
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  std::vector<double> out(n * m, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    double* row = out.data() + i * m;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = A[i * k + kk];
      if (av == 0.0) continue;
      const double* brow = B + kk * m;
      for (std::size_t j = 0; j < m; ++j) row[j] += av * brow[j];
    }
  }
  return make_result(
      "matmul", {n, m}, std::move(out), {a.node(), b.node()},
      [n, k, m](Node& self) {
        Node& pa = parent(self, 0);
        Node& pb = parent(self, 1);
        const double* G = self.grad.data();
        if (pa.requires_grad) {
          pa.ensure_grad();
          const double* B = pb.data.data();
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t kk = 0; kk < k; ++kk) {
              const double* brow = B + kk * m;
              const double* grow = G + i * m;
              double acc = 0.0;
              for (std::size_t j = 0; j < m; ++j) acc += grow[j] * brow[j];
              pa.grad[i * k + kk] += acc;
            }
          }
        }
        if (pb.requires_grad) {
          pb.ensure_grad();
          const double* A = pa.data.data();
          for (std::size_t i = 0; i < n; ++i) {
            const double* grow = G + i * m;
            for (std::size_t kk = 0; kk < k; ++kk) {
              const double av = A[i * k + kk];
              if (av == 0.0) continue;
              double* out = pb.grad.data() + kk * m;
              for (std::size_t j = 0; j < m; ++j) out[j] += av * grow[j];
            }
          }
        }
      });
}

Tensor transpose(const Tensor& a) {
  require_rank("transpose", a, 2);
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<double> out(r * c);
  auto src = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = src[i * c + j];
  return make_result("transpose", {c, r}, std::move(out), {a.node()},
                     [r, c](Node& self) {
                       Node& p = parent(self, 0);
                       p.ensure_grad();
                       for (std::size_t i = 0; i < r; ++i)
                         for (std::size_t j = 0; j < c; ++j)
                           p.grad[i * c + j] += self.grad[j * r + i];
                     });
}

namespace {

// Shared driver for add/sub/mul with leading-axis broadcasting of b.
template <typename Fwd>
std::vector<double> broadcast_apply(const char* op, const Tensor& a,
                                    const Tensor& b, Fwd f) {
  if (!is_suffix(a.shape(), b.shape())) shape_fail(op, a.shape(), b.shape());
  const std::size_t nb = b.numel();
  const std::size_t na = a.numel();
  std::vector<double> out(na);
  auto A = a.data();
  auto B = b.data();
  if (nb == 0) return out;
  for (std::size_t i = 0; i < na; i += nb)
    for (std::size_t j = 0; j < nb; ++j) out[i + j] = f(A[i + j], B[j]);
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  auto out = broadcast_apply("add", a, b, [](double x, double y) { return x + y; });
  const std::size_t nb = b.numel();
  return make_result("add", a.shape(), std::move(out), {a.node(), b.node()},
                     [nb](Node& self) {
                       Node& pa = parent(self, 0);
                       Node& pb = parent(self, 1);
                       const std::size_t na = self.grad.size();
                       if (pa.requires_grad) {
                         pa.ensure_grad();
                         for (std::size_t i = 0; i < na; ++i)
                           pa.grad[i] += self.grad[i];
                       }
                       if (pb.requires_grad) {
                         pb.ensure_grad();
                         for (std::size_t i = 0; i < na; i += nb)
                           for (std::size_t j = 0; j < nb; ++j)
                             pb.grad[j] += self.grad[i + j];
                       }
                     });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  auto out = broadcast_apply("sub", a, b, [](double x, double y) { return x - y; });
  const std::size_t nb = b.numel();
  return make_result("sub", a.shape(), std::move(out), {a.node(), b.node()},
                     [nb](Node& self) {
                       Node& pa = parent(self, 0);
                       Node& pb = parent(self, 1);
                       const std::size_t na = self.grad.size();
                       if (pa.requires_grad) {
                         pa.ensure_grad();
                         for (std::size_t i = 0; i < na; ++i)
                           pa.grad[i] += self.grad[i];
                       }
                       if (pb.requires_grad) {
                         pb.ensure_grad();
                         for (std::size_t i = 0; i < na; i += nb)
                           for (std::size_t j = 0; j < nb; ++j)
                             pb.grad[j] -= self.grad[i + j];
                       }
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  auto out = broadcast_apply("mul", a, b, [](double x, double y) { return x * y; });
  const std::size_t nb = b.numel();
  return make_result("mul", a.shape(), std::move(out), {a.node(), b.node()},
                     [nb](Node& self) {
                       Node& pa = parent(self, 0);
                       Node& pb = parent(self, 1);
                       const std::size_t na = self.grad.size();
                       if (pa.requires_grad) {
                         pa.ensure_grad();
                         for (std::size_t i = 0; i < na; i += nb)
                           for (std::size_t j = 0; j < nb; ++j)
                             pa.grad[i + j] += self.grad[i + j] * pb.data[j];
                       }
                       if (pb.requires_grad) {
                         pb.ensure_grad();
                         for (std::size_t i = 0; i < na; i += nb)
                           for (std::size_t j = 0; j < nb; ++j)
                             pb.grad[j] += self.grad[i + j] * pa.data[i + j];
                       }
                     });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= s;
  return make_result("scale", a.shape(), std::move(out), {a.node()},
                     [s](Node& self) {
                       Node& p = parent(self, 0);
                       p.ensure_grad();
                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                         p.grad[i] += s * self.grad[i];
                     });
}

Tensor gelu(const Tensor& a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  std::vector<double> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * inv_sqrt2));
  return make_result("gelu", a.shape(), std::move(out), {a.node()},
                     [](Node& self) {
                       constexpr double inv_sqrt2 = 0.70710678118654752440;
                       const double inv_sqrt_2pi =
                           1.0 / std::sqrt(2.0 * std::numbers::pi);
                       Node& p = parent(self, 0);
                       p.ensure_grad();
                       for (std::size_t i = 0; i < self.grad.size(); ++i) {
                         const double v = p.data[i];
                         const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
                         const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
                         p.grad[i] += self.grad[i] * (cdf + v * pdf);
                       }
                     });
}

namespace {

Tensor softmax_impl(const char* op, const Tensor& a, const Mask* mask) {
  if (a.rank() == 0) throw ShapeError(std::string(op) + ": scalar input");
  const std::size_t cols = a.shape().back();
  const std::size_t rows = cols ? a.numel() / cols : 0;
  if (mask && (a.rank() != 2 || mask->rows != rows || mask->cols != cols)) {
    shape_fail(op, a.shape(), Shape{mask->rows, mask->cols});
  }
  std::vector<double> out(a.numel(), 0.0);
  auto x = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data() + r * cols;
    double* y = out.data() + r * cols;
    const std::uint8_t* allow = mask ? mask->allow.data() + r * cols : nullptr;
    double mx = -std::numeric_limits<double>::infinity();
    bool visible = false;
    for (std::size_t j = 0; j < cols; ++j) {
      if (allow && !allow[j]) continue;
      visible = true;
      mx = std::isnan(in[j]) || std::isnan(mx) ? std::numeric_limits<double>::quiet_NaN()
                                               : std::max(mx, in[j]);
    }
    if (!visible) {
      throw std::invalid_argument(std::string(op) + ": row " +
                                  std::to_string(r) + " has no visible entry");
    }
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      if (allow && !allow[j]) continue;
      y[j] = std::exp(in[j] - mx);
      z += y[j];
    }
    for (std::size_t j = 0; j < cols; ++j) y[j] /= z;
  }
  // Masked outputs are exactly zero, so the plain softmax Jacobian already
  // gives them zero gradient.
  return make_result(op, a.shape(), std::move(out), {a.node()},
                     [rows, cols](Node& self) {
                       Node& p = parent(self, 0);
                       p.ensure_grad();
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* y = self.data.data() + r * cols;
                         const double* g = self.grad.data() + r * cols;
                         double dot = 0.0;
                         for (std::size_t j = 0; j < cols; ++j) dot += y[j] * g[j];
                         for (std::size_t j = 0; j < cols; ++j)
                           p.grad[r * cols + j] += y[j] * (g[j] - dot);
                       }
                     });
}

}  // namespace

Tensor softmax(const Tensor& a) { return softmax_impl("softmax", a, nullptr); }

Tensor masked_softmax(const Tensor& a, const Mask& mask) {
  return softmax_impl("masked_softmax", a, &mask);
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  if (x.rank() == 0) throw ShapeError("layer_norm: scalar input");
  const std::size_t d = x.shape().back();
  if (gain.shape() != Shape{d}) shape_fail("layer_norm", x.shape(), gain.shape());
  if (bias.shape() != Shape{d}) shape_fail("layer_norm", x.shape(), bias.shape());
  const std::size_t rows = d ? x.numel() / d : 0;
  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> rstd(rows);
  auto in = x.data();
  auto g = gain.data();
  auto b = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (row[j] - mu) * rstd[r];
      out[r * d + j] = xhat[r * d + j] * g[j] + b[j];
    }
  }
  return make_result(
      "layer_norm", x.shape(), std::move(out),
      {x.node(), gain.node(), bias.node()},
      [rows, d, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
        Node& px = parent(self, 0);
        Node& pg = parent(self, 1);
        Node& pb = parent(self, 2);
        const double* G = self.grad.data();
        if (pg.requires_grad) {
          pg.ensure_grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j)
              pg.grad[j] += G[r * d + j] * xhat[r * d + j];
        }
        if (pb.requires_grad) {
          pb.ensure_grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) pb.grad[j] += G[r * d + j];
        }
        if (px.requires_grad) {
          px.ensure_grad();
          const double inv_d = 1.0 / static_cast<double>(d);
          for (std::size_t r = 0; r < rows; ++r) {
            double sum_g = 0.0, sum_gx = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double gh = G[r * d + j] * pg.data[j];
              sum_g += gh;
              sum_gx += gh * xhat[r * d + j];
            }
            for (std::size_t j = 0; j < d; ++j) {
              const double gh = G[r * d + j] * pg.data[j];
              px.grad[r * d + j] +=
                  rstd[r] * (gh - inv_d * sum_g - xhat[r * d + j] * inv_d * sum_gx);
            }
          }
        }
      });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  require_rank("embedding", table, 2);
  const std::size_t rows = table.dim(0), d = table.dim(1);
  std::vector<double> out(ids.size() * d);
  auto src = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= rows) {
      throw std::out_of_range("embedding: index " + std::to_string(ids[i]) +
                              " out of range for table " +
                              shape_str(table.shape()));
    }
    std::copy_n(src.data() + static_cast<std::size_t>(ids[i]) * d, d,
                out.data() + i * d);
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return make_result("embedding", {ids.size(), d}, std::move(out),
                     {table.node()}, [d, idx = std::move(idx)](Node& self) {
                       Node& p = parent(self, 0);
                       p.ensure_grad();
                       for (std::size_t i = 0; i < idx.size(); ++i) {
                         double* dst = p.grad.data() + static_cast<std::size_t>(idx[i]) * d;
                         const double* g = self.grad.data() + i * d;
                         for (std::size_t j = 0; j < d; ++j) dst[j] += g[j];
                       }
                     });
}

namespace {

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) {
    throw ShapeError("concat: axis " + std::to_string(axis) +
                     " out of range for " + shape_str(first));
  }
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i)
      ok = i == axis || s[i] == first[i];
    if (!ok) shape_fail("concat", first, s);
    out_shape[axis] += s[axis];
  }
  const AxisSplit sp = split_at(out_shape, axis);
  const std::size_t out_stride = out_shape[axis] * sp.inner;
  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> widths;
  std::vector<std::shared_ptr<Node>> nodes;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.shape()[axis] * sp.inner;
    auto src = p.data();
    for (std::size_t o = 0; o < sp.outer; ++o)
      std::copy_n(src.data() + o * w, w, out.data() + o * out_stride + offset);
    offset += w;
    widths.push_back(w);
    nodes.push_back(p.node());
  }
  return make_result("concat", out_shape, std::move(out), std::move(nodes),
                     [sp, out_stride, widths = std::move(widths)](Node& self) {
                       std::size_t off = 0;
                       for (std::size_t k = 0; k < widths.size(); ++k) {
                         Node& p = parent(self, k);
                         const std::size_t w = widths[k];
                         if (p.requires_grad) {
                           p.ensure_grad();
                           for (std::size_t o = 0; o < sp.outer; ++o) {
                             const double* g = self.grad.data() + o * out_stride + off;
                             double* dst = p.grad.data() + o * w;
                             for (std::size_t j = 0; j < w; ++j) dst[j] += g[j];
                           }
                         }
                         off += w;
                       }
                     });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start,
             std::size_t length) {
  if (axis >= a.rank() || start + length > a.shape()[axis]) {
    throw ShapeError("slice: [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") on axis " +
                     std::to_string(axis) + " of " + shape_str(a.shape()));
  }
  const AxisSplit sp = split_at(a.shape(), axis);
  const std::size_t in_stride = a.shape()[axis] * sp.inner;
  const std::size_t w = length * sp.inner;
  const std::size_t off = start * sp.inner;
  Shape out_shape = a.shape();
  out_shape[axis] = length;
  std::vector<double> out(sp.outer * w);
  auto src = a.data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    std::copy_n(src.data() + o * in_stride + off, w, out.data() + o * w);
  return make_result("slice", out_shape, std::move(out), {a.node()},
                     [sp, in_stride, w, off](Node& self) {
                       Node& p = parent(self, 0);
                       p.ensure_grad();
                       for (std::size_t o = 0; o < sp.outer; ++o) {
                         double* dst = p.grad.data() + o * in_stride + off;
                         const double* g = self.grad.data() + o * w;
                         for (std::size_t j = 0; j < w; ++j) dst[j] += g[j];
                       }
                     });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) shape_fail("reshape", a.shape(), shape);
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_result("reshape", std::move(shape), std::move(out), {a.node()},
                     [](Node& self) {
                       Node& p = parent(self, 0);
                       p.ensure_grad();
                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                         p.grad[i] += self.grad[i];
                     });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make_result("sum", {}, {s}, {a.node()}, [](Node& self) {
    Node& p = parent(self, 0);
    p.ensure_grad();
    const double g = self.grad[0];
    for (auto& v : p.grad) v += g;
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ShapeError("mean: empty tensor");
  double s = 0.0;
  for (double v : a.data()) s += v;
  const double n = static_cast<double>(a.numel());
  return make_result("mean", {}, {s / n}, {a.node()}, [n](Node& self) {
    Node& p = parent(self, 0);
    p.ensure_grad();
    const double g = self.grad[0] / n;
    for (auto& v : p.grad) v += g;
  });
}

Tensor mean_rows(const Tensor& a) {
  require_rank("mean_rows", a, 2);
  const std::size_t n = a.dim(0), d = a.dim(1);
  if (n == 0) throw ShapeError("mean_rows: no rows");
  std::vector<double> out(d, 0.0);
  auto x = a.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[j] += x[i * d + j];
  for (auto& v : out) v /= static_cast<double>(n);
  return make_result("mean_rows", {1, d}, std::move(out), {a.node()},
                     [n, d](Node& self) {
                       Node& p = parent(self, 0);
                       p.ensure_grad();
                       const double inv = 1.0 / static_cast<double>(n);
                       for (std::size_t i = 0; i < n; ++i)
                         for (std::size_t j = 0; j < d; ++j)
                           p.grad[i * d + j] += self.grad[j] * inv;
                     });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  require_rank("cross_entropy", logits, 2);
  const std::size_t n = logits.dim(0), v = logits.dim(1);
  if (targets.size() != n) {
    throw ShapeError("cross_entropy: logits " + shape_str(logits.shape()) +
                     " vs " + std::to_string(targets.size()) + " targets");
  }
  std::vector<double> out(n);
  std::vector<double> probs(n * v);
  auto x = logits.data();
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= v) {
      throw std::out_of_range("cross_entropy: target " +
                              std::to_string(targets[i]) + " out of range for " +
                              std::to_string(v) + " classes");
    }
    const double* row = x.data() + i * v;
    const double mx = *std::max_element(row, row + v);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) {
      probs[i * v + j] = std::exp(row[j] - mx);
      z += probs[i * v + j];
    }
    for (std::size_t j = 0; j < v; ++j) probs[i * v + j] /= z;
    out[i] = mx + std::log(z) - row[targets[i]];
  }
  std::vector<int> tgt(targets.begin(), targets.end());
  return make_result(
      "cross_entropy", {n}, std::move(out), {logits.node()},
      [v, tgt = std::move(tgt), probs = std::move(probs)](Node& self) {
        Node& p = parent(self, 0);
        p.ensure_grad();
        for (std::size_t i = 0; i < tgt.size(); ++i) {
          const double g = self.grad[i];
          for (std::size_t j = 0; j < v; ++j) p.grad[i * v + j] += g * probs[i * v + j];
          p.grad[i * v + static_cast<std::size_t>(tgt[i])] -= g;
        }
      });
}

Tensor l2_normalize_rows(const Tensor& a) {
  require_rank("l2_normalize_rows", a, 2);
  const std::size_t n = a.dim(0), d = a.dim(1);
  std::vector<double> out(n * d);
  std::vector<double> inv_norm(n);
  auto x = a.data();
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += x[i * d + j] * x[i * d + j];
    inv_norm[i] = 1.0 / std::max(std::sqrt(s), 1e-12);
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = x[i * d + j] * inv_norm[i];
  }
  return make_result("l2_normalize_rows", {n, d}, std::move(out), {a.node()},
                     [n, d, inv_norm = std::move(inv_norm)](Node& self) {
                       Node& p = parent(self, 0);
                       p.ensure_grad();
                       for (std::size_t i = 0; i < n; ++i) {
                         const double* y = self.data.data() + i * d;
                         const double* g = self.grad.data() + i * d;
                         double dot = 0.0;
                         for (std::size_t j = 0; j < d; ++j) dot += y[j] * g[j];
                         for (std::size_t j = 0; j < d; ++j)
                           p.grad[i * d + j] += (g[j] - y[j] * dot) * inv_norm[i];
                       }
                     });
}

Tensor straight_through(const Tensor& features, const Tensor& quantized) {
  if (features.shape() != quantized.shape()) {
    shape_fail("straight_through", features.shape(), quantized.shape());
  }
  std::vector<double> out(quantized.data().begin(), quantized.data().end());
  return make_result("straight_through", features.shape(), std::move(out),
                     {features.node()}, [](Node& self) {
                       Node& p = parent(self, 0);
                       p.ensure_grad();
                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                         p.grad[i] += self.grad[i];
                     });
}

}  // namespace asvr
