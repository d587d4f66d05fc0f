#include "dipa/autodiff/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "dipa/error.hpp"

namespace dipa::ad {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;

using BackwardFn = std::function<void(const Tensor&)>;

Value make_node(Tensor out, const char* op, std::initializer_list<Value> parents,
                BackwardFn backward) {
  auto n = std::make_shared<Node>();
  n->data = std::move(out);
  n->op = op;
  n->is_leaf = false;
  if (!NoGradGuard::active())
    for (const auto& p : parents)
      if (p.requires_grad()) n->requires_grad = true;
  if (n->requires_grad) {
    for (const auto& p : parents) n->parents.push_back(p.node());
    n->backward_fn = std::move(backward);
  }
  return Value(std::move(n));
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

// Output shape for a broadcasting binary op.
Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return a;
  if (numel(b) == 1 && b.size() <= 1) return a;
  if (numel(a) == 1 && a.size() <= 1) return b;
  if (is_suffix(b, a)) return a;
  if (is_suffix(a, b)) return b;
  shape_fail(op, a, b);
}

enum class BinOp { Add, Sub, Mul, Div };

Value binary(const Value& a, const Value& b, BinOp kind, const char* name) {
  Shape out_shape = broadcast_shape(name, a.shape(), b.shape());
  const std::int64_t n = numel(out_shape);
  const std::int64_t na = a.size(), nb = b.size();
  const float* x = a.data().data();
  const float* y = b.data().data();
  Tensor out(out_shape);
  float* o = out.data();
  for (std::int64_t i = 0; i < n; ++i) {
    const float u = x[i % na], v = y[i % nb];
    switch (kind) {
      case BinOp::Add: o[i] = u + v; break;
      case BinOp::Sub: o[i] = u - v; break;
      case BinOp::Mul: o[i] = u * v; break;
      case BinOp::Div: o[i] = u / v; break;
    }
  }
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  return make_node(std::move(out), name, {a, b}, [pa, pb, kind, n, na, nb](const Tensor& g) {
    const float* x = pa->data.data();
    const float* y = pb->data.data();
    const float* gd = g.data();
    if (Tensor* ga = grad_slot(pa)) {
      float* d = ga->data();
      for (std::int64_t i = 0; i < n; ++i) {
        const float v = y[i % nb];
        switch (kind) {
          case BinOp::Add:
          case BinOp::Sub: d[i % na] += gd[i]; break;
          case BinOp::Mul: d[i % na] += gd[i] * v; break;
          case BinOp::Div: d[i % na] += gd[i] / v; break;
        }
      }
    }
    if (Tensor* gb = grad_slot(pb)) {
      float* d = gb->data();
      for (std::int64_t i = 0; i < n; ++i) {
        const float u = x[i % na], v = y[i % nb];
        switch (kind) {
          case BinOp::Add: d[i % nb] += gd[i]; break;
          case BinOp::Sub: d[i % nb] -= gd[i]; break;
          case BinOp::Mul: d[i % nb] += gd[i] * u; break;
          case BinOp::Div: d[i % nb] -= gd[i] * u / (v * v); break;
        }
      }
    }
  });
}

// Elementwise unary op; dfdx receives (input, output) and returns f'(input).
template <class F, class DF>
Value unary(const Value& a, const char* name, F f, DF dfdx) {
  Tensor out(a.shape());
  const float* x = a.data().data();
  float* o = out.data();
  const auto n = a.size();
  for (std::int64_t i = 0; i < n; ++i) o[i] = f(x[i]);
  Node* pa = a.node().get();
  auto result = make_node(std::move(out), name, {a}, nullptr);
  if (result.requires_grad()) {
    Node* self = result.node().get();
    result.node()->backward_fn = [pa, self, dfdx](const Tensor& g) {
      Tensor* ga = grad_slot(pa);
      if (!ga) return;
      const float* x = pa->data.data();
      const float* y = self->data.data();
      const float* gd = g.data();
      float* d = ga->data();
      const auto n = g.size();
      for (std::int64_t i = 0; i < n; ++i) d[i] += gd[i] * dfdx(x[i], y[i]);
    };
  }
  return result;
}

struct AxisLayout {
  std::int64_t outer = 1, extent = 1, inner = 1;
  Shape reduced;
};

AxisLayout axis_layout(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.size())
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                     to_string(s));
  AxisLayout l;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i < axis) l.outer *= s[i];
    else if (i > axis) l.inner *= s[i];
    if (i != axis) l.reduced.push_back(s[i]);
  }
  l.extent = s[axis];
  if (l.extent == 0) throw ShapeError(std::string(op) + ": empty reduction axis");
  return l;
}

Reduced extremum_along(const Value& a, std::size_t axis, bool take_max, const char* name) {
  const AxisLayout l = axis_layout(a.shape(), axis, name);
  Tensor out(l.reduced);
  std::vector<std::int64_t> arg(static_cast<std::size_t>(l.outer * l.inner));
  const float* x = a.data().data();
  for (std::int64_t o = 0; o < l.outer; ++o) {
    for (std::int64_t i = 0; i < l.inner; ++i) {
      const float* base = x + o * l.extent * l.inner + i;
      std::int64_t best = 0;
      float bv = base[0];
      for (std::int64_t k = 1; k < l.extent; ++k) {
        const float v = base[k * l.inner];
        if (take_max ? v > bv : v < bv) {
          bv = v;
          best = k;
        }
      }
      out[o * l.inner + i] = bv;
      arg[static_cast<std::size_t>(o * l.inner + i)] = best;
    }
  }
  Node* pa = a.node().get();
  Reduced r;
  r.arg = arg;
  r.value = make_node(std::move(out), name, {a}, [pa, l, arg = std::move(arg)](const Tensor& g) {
    Tensor* ga = grad_slot(pa);
    if (!ga) return;
    float* d = ga->data();
    for (std::int64_t o = 0; o < l.outer; ++o)
      for (std::int64_t i = 0; i < l.inner; ++i) {
        const auto j = o * l.inner + i;
        d[(o * l.extent + arg[static_cast<std::size_t>(j)]) * l.inner + i] += g[j];
      }
  });
  return r;
}

}  // namespace

Value add(const Value& a, const Value& b) { return binary(a, b, BinOp::Add, "add"); }
Value sub(const Value& a, const Value& b) { return binary(a, b, BinOp::Sub, "sub"); }
Value mul(const Value& a, const Value& b) { return binary(a, b, BinOp::Mul, "mul"); }
Value div(const Value& a, const Value& b) { return binary(a, b, BinOp::Div, "div"); }
Value add(const Value& a, float b) { return add(a, Value::constant(Tensor::scalar(b))); }
Value mul(const Value& a, float b) { return mul(a, Value::constant(Tensor::scalar(b))); }
Value sub(float a, const Value& b) { return sub(Value::constant(Tensor::scalar(a)), b); }
Value neg(const Value& a) { return mul(a, -1.0f); }

Value matmul(const Value& a, const Value& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
    shape_fail("matmul", a.shape(), b.shape());
  const auto m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor out(Shape{m, n});
  MapMat(out.data(), m, n).noalias() =
      MapConstMat(a.data().data(), m, k) * MapConstMat(b.data().data(), k, n);
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  return make_node(std::move(out), "matmul", {a, b}, [pa, pb, m, k, n](const Tensor& g) {
    MapConstMat gm(g.data(), m, n);
    if (Tensor* ga = grad_slot(pa))
      MapMat(ga->data(), m, k).noalias() += gm * MapConstMat(pb->data.data(), k, n).transpose();
    if (Tensor* gb = grad_slot(pb))
      MapMat(gb->data(), k, n).noalias() += MapConstMat(pa->data.data(), m, k).transpose() * gm;
  });
}

Value conv2d(const Value& x, const Value& w, const Value& bias, Conv2dParams p) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 4 || ws.size() != 4 || xs[1] != ws[1]) shape_fail("conv2d", xs, ws);
  if (bias.shape() != Shape{ws[0]}) shape_fail("conv2d(bias)", bias.shape(), Shape{ws[0]});
  if (p.stride != 1 && p.stride != 2)
    throw InvalidArgument("conv2d: stride must be 1 or 2, got " + std::to_string(p.stride));
  if (p.padding < 0) throw InvalidArgument("conv2d: negative padding");
  const std::int64_t B = xs[0], C = xs[1], H = xs[2], W = xs[3];
  const std::int64_t O = ws[0], kh = ws[2], kw = ws[3];
  const std::int64_t s = p.stride, pad = p.padding;
  const std::int64_t OH = (H + 2 * pad - kh) / s + 1;
  const std::int64_t OW = (W + 2 * pad - kw) / s + 1;
  if (OH <= 0 || OW <= 0) shape_fail("conv2d(kernel larger than input)", xs, ws);
  const std::int64_t ckk = C * kh * kw, spatial = OH * OW;

  Tensor out(Shape{B, O, OH, OW});
  const bool keep_cols = w.requires_grad() && !NoGradGuard::active();
  std::vector<float> cols_all(keep_cols ? static_cast<std::size_t>(B * ckk * spatial) : 0);
  std::vector<float> scratch(keep_cols ? 0 : static_cast<std::size_t>(ckk * spatial));
  MapConstMat wm(w.data().data(), O, ckk);
  Eigen::Map<const Eigen::VectorXf> bv(bias.data().data(), O);

  auto im2col = [&](const float* img, float* col) {
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t ky = 0; ky < kh; ++ky)
        for (std::int64_t kx = 0; kx < kw; ++kx) {
          float* row = col + ((c * kh + ky) * kw + kx) * spatial;
          for (std::int64_t oy = 0; oy < OH; ++oy) {
            const std::int64_t iy = oy * s - pad + ky;
            for (std::int64_t ox = 0; ox < OW; ++ox) {
              const std::int64_t ix = ox * s - pad + kx;
              row[oy * OW + ox] = (iy >= 0 && iy < H && ix >= 0 && ix < W)
                                      ? img[(c * H + iy) * W + ix]
                                      : 0.0f;
            }
          }
        }
  };

  for (std::int64_t b = 0; b < B; ++b) {
    float* col = keep_cols ? cols_all.data() + b * ckk * spatial : scratch.data();
    im2col(x.data().data() + b * C * H * W, col);
    MapMat om(out.data() + b * O * spatial, O, spatial);
    om.noalias() = wm * MapConstMat(col, ckk, spatial);
    om.colwise() += bv;
  }

  Node* px = x.node().get();
  Node* pw = w.node().get();
  Node* pb = bias.node().get();
  return make_node(
      std::move(out), "conv2d", {x, w, bias},
      [=, cols_all = std::move(cols_all)](const Tensor& g) {
        Tensor* gx = grad_slot(px);
        Tensor* gw = grad_slot(pw);
        Tensor* gb = grad_slot(pb);
        MapConstMat wm(pw->data.data(), O, ckk);
        std::vector<float> dcol(gx ? static_cast<std::size_t>(ckk * spatial) : 0);
        for (std::int64_t b = 0; b < B; ++b) {
          MapConstMat gm(g.data() + b * O * spatial, O, spatial);
          if (gw) {
            MapConstMat col(cols_all.data() + b * ckk * spatial, ckk, spatial);
            MapMat(gw->data(), O, ckk).noalias() += gm * col.transpose();
          }
          if (gb) Eigen::Map<Eigen::VectorXf>(gb->data(), O) += gm.rowwise().sum();
          if (gx) {
            MapMat(dcol.data(), ckk, spatial).noalias() = wm.transpose() * gm;
            float* dimg = gx->data() + b * C * H * W;
            for (std::int64_t c = 0; c < C; ++c)
              for (std::int64_t ky = 0; ky < kh; ++ky)
                for (std::int64_t kx = 0; kx < kw; ++kx) {
                  const float* row = dcol.data() + ((c * kh + ky) * kw + kx) * spatial;
                  for (std::int64_t oy = 0; oy < OH; ++oy) {
                    const std::int64_t iy = oy * s - pad + ky;
                    if (iy < 0 || iy >= H) continue;
                    for (std::int64_t ox = 0; ox < OW; ++ox) {
                      const std::int64_t ix = ox * s - pad + kx;
                      if (ix >= 0 && ix < W) dimg[(c * H + iy) * W + ix] += row[oy * OW + ox];
                    }
                  }
                }
          }
        }
      });
}

Value relu(const Value& a) {
  return unary(
      a, "relu", [](float v) { return v > 0.0f ? v : 0.0f; },
      [](float v, float) { return v > 0.0f ? 1.0f : 0.0f; });
}

Value sigmoid(const Value& a) {
  return unary(
      a, "sigmoid",
      [](float v) {
        return v >= 0.0f ? 1.0f / (1.0f + std::exp(-v)) : std::exp(v) / (1.0f + std::exp(v));
      },
      [](float, float y) { return y * (1.0f - y); });
}

Value log(const Value& a) {
  return unary(
      a, "log", [](float v) { return std::log(v); }, [](float v, float) { return 1.0f / v; });
}

Value exp(const Value& a) {
  return unary(
      a, "exp", [](float v) { return std::exp(v); }, [](float, float y) { return y; });
}

Value square(const Value& a) {
  return unary(
      a, "square", [](float v) { return v * v; }, [](float v, float) { return 2.0f * v; });
}

Value abs(const Value& a) {
  return unary(
      a, "abs", [](float v) { return std::fabs(v); },
      [](float v, float) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); });
}

Value sum(const Value& a) {
  double acc = 0.0;
  for (float v : a.data().values()) acc += v;
  Node* pa = a.node().get();
  return make_node(Tensor::scalar(static_cast<float>(acc)), "sum", {a}, [pa](const Tensor& g) {
    if (Tensor* ga = grad_slot(pa))
      for (float& d : ga->values()) d += g[0];
  });
}

Value mean(const Value& a) {
  if (a.size() == 0) throw ShapeError("mean: empty tensor");
  return mul(sum(a), 1.0f / static_cast<float>(a.size()));
}

Reduced max_along(const Value& a, std::size_t axis) {
  return extremum_along(a, axis, true, "max_along");
}

Reduced min_along(const Value& a, std::size_t axis) {
  return extremum_along(a, axis, false, "min_along");
}

Value softmax_cross_entropy(const Value& logits, std::span<const int> labels) {
  const Shape& s = logits.shape();
  if (s.size() != 2 || s[0] != static_cast<std::int64_t>(labels.size()))
    shape_fail("softmax_cross_entropy", s, Shape{static_cast<std::int64_t>(labels.size())});
  const std::int64_t B = s[0], K = s[1];
  Tensor probs(s);
  double loss = 0.0;
  const float* x = logits.data().data();
  for (std::int64_t b = 0; b < B; ++b) {
    const int y = labels[static_cast<std::size_t>(b)];
    if (y < 0 || y >= K)
      throw InvalidArgument("softmax_cross_entropy: label " + std::to_string(y) +
                            " outside [0," + std::to_string(K) + ")");
    const float* row = x + b * K;
    const float mx = *std::max_element(row, row + K);
    double z = 0.0;
    for (std::int64_t k = 0; k < K; ++k) z += std::exp(static_cast<double>(row[k] - mx));
    for (std::int64_t k = 0; k < K; ++k)
      probs[b * K + k] = static_cast<float>(std::exp(static_cast<double>(row[k] - mx)) / z);
    loss += std::log(z) - static_cast<double>(row[y] - mx);
  }
  Node* pl = logits.node().get();
  std::vector<int> ys(labels.begin(), labels.end());
  return make_node(Tensor::scalar(static_cast<float>(loss / static_cast<double>(B))),
                   "softmax_cross_entropy", {logits},
                   [pl, probs = std::move(probs), ys = std::move(ys), B, K](const Tensor& g) {
                     Tensor* gl = grad_slot(pl);
                     if (!gl) return;
                     const float scale = g[0] / static_cast<float>(B);
                     float* d = gl->data();
                     for (std::int64_t b = 0; b < B; ++b)
                       for (std::int64_t k = 0; k < K; ++k) {
                         const float onehot = (k == ys[static_cast<std::size_t>(b)]) ? 1.0f : 0.0f;
                         d[b * K + k] += scale * (probs[b * K + k] - onehot);
                       }
                   });
}

Value broadcast_to(const Value& a, const Shape& shape) {
  if (!is_suffix(a.shape(), shape)) shape_fail("broadcast_to", a.shape(), shape);
  const std::int64_t n = numel(shape), na = a.size();
  Tensor out(shape);
  const float* x = a.data().data();
  for (std::int64_t i = 0; i < n; ++i) out[i] = x[i % na];
  Node* pa = a.node().get();
  return make_node(std::move(out), "broadcast_to", {a}, [pa, n, na](const Tensor& g) {
    if (Tensor* ga = grad_slot(pa))
      for (std::int64_t i = 0; i < n; ++i) (*ga)[i % na] += g[i];
  });
}

Value reshape(const Value& a, const Shape& shape) {
  Tensor out = a.data().reshaped(shape);
  Node* pa = a.node().get();
  return make_node(std::move(out), "reshape", {a}, [pa](const Tensor& g) {
    if (Tensor* ga = grad_slot(pa)) {
      float* d = ga->data();
      for (std::int64_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
  });
}

Value select_rows(const Value& a, std::span<const std::int64_t> rows) {
  if (a.shape().size() != 2) shape_fail("select_rows", a.shape(), Shape{});
  const std::int64_t M = a.shape()[0], D = a.shape()[1];
  const auto R = static_cast<std::int64_t>(rows.size());
  Tensor out(Shape{R, D});
  for (std::int64_t r = 0; r < R; ++r) {
    const auto src = rows[static_cast<std::size_t>(r)];
    if (src < 0 || src >= M)
      throw InvalidArgument("select_rows: row " + std::to_string(src) + " out of range");
    std::copy_n(a.data().data() + src * D, D, out.data() + r * D);
  }
  Node* pa = a.node().get();
  std::vector<std::int64_t> idx(rows.begin(), rows.end());
  return make_node(std::move(out), "select_rows", {a}, [pa, idx = std::move(idx), D](const Tensor& g) {
    Tensor* ga = grad_slot(pa);
    if (!ga) return;
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::int64_t k = 0; k < D; ++k)
        (*ga)[idx[r] * D + k] += g[static_cast<std::int64_t>(r) * D + k];
  });
}

Value pairwise_sq_dist(const Value& a, const Value& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() != 2 || bs.size() != 2 || as[1] != bs[1]) shape_fail("pairwise_sq_dist", as, bs);
  const std::int64_t M = as[0], N = bs[0], D = as[1];
  Tensor out(Shape{M, N});
  const float* x = a.data().data();
  const float* y = b.data().data();
  for (std::int64_t m = 0; m < M; ++m)
    for (std::int64_t n = 0; n < N; ++n) {
      float acc = 0.0f;
      for (std::int64_t k = 0; k < D; ++k) {
        const float diff = x[m * D + k] - y[n * D + k];
        acc += diff * diff;
      }
      out[m * N + n] = acc;
    }
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  return make_node(std::move(out), "pairwise_sq_dist", {a, b}, [pa, pb, M, N, D](const Tensor& g) {
    Tensor* ga = grad_slot(pa);
    Tensor* gb = grad_slot(pb);
    const float* x = pa->data.data();
    const float* y = pb->data.data();
    for (std::int64_t m = 0; m < M; ++m)
      for (std::int64_t n = 0; n < N; ++n) {
        const float gv = g[m * N + n];
        if (gv == 0.0f) continue;
        for (std::int64_t k = 0; k < D; ++k) {
          const float t = 2.0f * gv * (x[m * D + k] - y[n * D + k]);
          if (ga) (*ga)[m * D + k] += t;
          if (gb) (*gb)[n * D + k] -= t;
        }
      }
  });
}

Value nchw_to_rows(const Value& x) {
  const Shape& s = x.shape();
  if (s.size() != 4) shape_fail("nchw_to_rows", s, Shape{0, 0, 0, 0});
  const std::int64_t B = s[0], C = s[1], HW = s[2] * s[3];
  Tensor out(Shape{B * HW, C});
  const float* src = x.data().data();
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t p = 0; p < HW; ++p) out[(b * HW + p) * C + c] = src[(b * C + c) * HW + p];
  Node* px = x.node().get();
  return make_node(std::move(out), "nchw_to_rows", {x}, [px, B, C, HW](const Tensor& g) {
    Tensor* gx = grad_slot(px);
    if (!gx) return;
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t p = 0; p < HW; ++p) (*gx)[(b * C + c) * HW + p] += g[(b * HW + p) * C + c];
  });
}

Value adaptive_avg_pool2d(const Value& x, int out_h, int out_w) {
  const Shape& s = x.shape();
  if (s.size() != 4 || out_h <= 0 || out_w <= 0 || out_h > s[2] || out_w > s[3])
    shape_fail("adaptive_avg_pool2d", s, Shape{out_h, out_w});
  const std::int64_t BC = s[0] * s[1], H = s[2], W = s[3];
  struct Window {
    std::int64_t y0, y1, x0, x1;
  };
  std::vector<Window> win;
  for (std::int64_t i = 0; i < out_h; ++i)
    for (std::int64_t j = 0; j < out_w; ++j)
      win.push_back({(i * H) / out_h, ((i + 1) * H + out_h - 1) / out_h, (j * W) / out_w,
                     ((j + 1) * W + out_w - 1) / out_w});
  Tensor out(Shape{s[0], s[1], out_h, out_w});
  const float* src = x.data().data();
  const std::int64_t cells = out_h * out_w;
  for (std::int64_t c = 0; c < BC; ++c)
    for (std::int64_t k = 0; k < cells; ++k) {
      const auto& w = win[static_cast<std::size_t>(k)];
      float acc = 0.0f;
      for (auto y = w.y0; y < w.y1; ++y)
        for (auto xx = w.x0; xx < w.x1; ++xx) acc += src[(c * H + y) * W + xx];
      out[c * cells + k] = acc / static_cast<float>((w.y1 - w.y0) * (w.x1 - w.x0));
    }
  Node* px = x.node().get();
  return make_node(std::move(out), "adaptive_avg_pool2d", {x},
                   [px, win = std::move(win), BC, H, W, cells](const Tensor& g) {
                     Tensor* gx = grad_slot(px);
                     if (!gx) return;
                     for (std::int64_t c = 0; c < BC; ++c)
                       for (std::int64_t k = 0; k < cells; ++k) {
                         const auto& w = win[static_cast<std::size_t>(k)];
                         const float share =
                             g[c * cells + k] / static_cast<float>((w.y1 - w.y0) * (w.x1 - w.x0));
                         for (auto y = w.y0; y < w.y1; ++y)
                           for (auto xx = w.x0; xx < w.x1; ++xx) (*gx)[(c * H + y) * W + xx] += share;
                       }
                   });
}

}  // namespace dipa::ad
