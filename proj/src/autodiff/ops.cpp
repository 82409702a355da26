// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "conv_kernels.hpp"
#include "nebla/autodiff.hpp"

namespace nebla {

namespace {

template <typename T>
Graph<T>& graph_of(std::initializer_list<Var<T>> vars) {
  Graph<T>* g = nullptr;
  for (const auto& v : vars) {
    if (!v.graph) throw std::logic_error("operation on an unbound Var");
    if (g && v.graph != g) throw std::logic_error("operation mixes nodes from different graphs");
    g = v.graph;
  }
  return *g;
}

template <typename T>
void require_same_shape(const char* op, const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
}

std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  if (axis < -r || axis >= r) {
    throw std::invalid_argument("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  }
  return static_cast<std::size_t>(axis < 0 ? axis + r : axis);
}

struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

// c[m,n] += a[m,k] * b[k,n]
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* __restrict ci = c + i * n;
    const T* ai = a + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T av = ai[kk];
      const T* __restrict bk = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bk[j];
    }
  }
}

template <typename T>
std::vector<T> transposed(const T* a, std::size_t m, std::size_t n) {
  std::vector<T> t(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) t[j * m + i] = a[i * n + j];
  }
  return t;
}

// Shared backward for y = x*w (+ b): accumulates into whichever inputs need it.
template <typename T>
void matmul_backward(Graph<T>& g, int self, int xa, int wb, std::size_t m, std::size_t k, std::size_t n) {
  const T* dy = g.grad(self).ptr();
  if (g.requires_grad(xa)) {
    const auto bt = transposed(g.value(wb).ptr(), k, n);  // [n,k]
    gemm_acc(dy, bt.data(), g.grad(xa).ptr(), m, n, k);
  }
  if (g.requires_grad(wb)) {
    const T* a = g.value(xa).ptr();
    T* dw = g.grad(wb).ptr();
    for (std::size_t i = 0; i < m; ++i) {
      const T* dyi = dy + i * n;
      for (std::size_t kk = 0; kk < k; ++kk) {
        const T av = a[i * k + kk];
        T* __restrict dwk = dw + kk * n;
        for (std::size_t j = 0; j < n; ++j) dwk[j] += av * dyi[j];
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  auto& g = graph_of({a, b});
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as.size() != 2 || bs.size() != 2 || as[1] != bs[0]) {
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(as) + " and " + shape_str(bs));
  }
  const std::size_t m = as[0], k = as[1], n = bs[1];
  Tensor<T> out({m, n});
  gemm_acc(a.value().ptr(), b.value().ptr(), out.ptr(), m, k, n);
  const int ia = a.id, ib = b.id;
  return g.record("matmul", {ia, ib}, std::move(out),
                  [ia, ib, m, k, n](Graph<T>& g, int self) { matmul_backward(g, self, ia, ib, m, k, n); });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  auto& g = graph_of({x, w, b});
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[0] || b.size() != ws[1]) {
    throw std::invalid_argument("linear: incompatible shapes x" + shape_str(xs) + " w" + shape_str(ws) + " b" +
                                shape_str(b.shape()));
  }
  const std::size_t m = xs[0], k = xs[1], n = ws[1];
  Tensor<T> out({m, n});
  const T* bias = b.value().ptr();
  for (std::size_t i = 0; i < m; ++i) std::copy(bias, bias + n, out.ptr() + i * n);
  gemm_acc(x.value().ptr(), w.value().ptr(), out.ptr(), m, k, n);
  const int ix = x.id, iw = w.id, ib = b.id;
  return g.record("linear", {ix, iw, ib}, std::move(out), [ix, iw, ib, m, k, n](Graph<T>& g, int self) {
    matmul_backward(g, self, ix, iw, m, k, n);
    if (g.requires_grad(ib)) {
      const T* dy = g.grad(self).ptr();
      T* db = g.grad(ib).ptr();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) db[j] += dy[i * n + j];
      }
    }
  });
}

template <typename T>
Var<T> transpose(Var<T> a) {
  auto& g = graph_of({a});
  const auto& s = a.shape();
  if (s.size() != 2) throw std::invalid_argument("transpose: expected rank 2, got " + shape_str(s));
  const std::size_t m = s[0], n = s[1];
  Tensor<T> out({n, m}, transposed(a.value().ptr(), m, n));
  const int ia = a.id;
  return g.record("transpose", {ia}, std::move(out), [ia, m, n](Graph<T>& g, int self) {
    const T* dy = g.grad(self).ptr();  // [n,m]
    T* dx = g.grad(ia).ptr();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) dx[i * n + j] += dy[j * m + i];
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  auto& g = graph_of({a, b});
  require_same_shape("add", a, b);
  Tensor<T> out = a.value();
  const T* bv = b.value().ptr();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const int ia = a.id, ib = b.id;
  return g.record("add", {ia, ib}, std::move(out), [ia, ib](Graph<T>& g, int self) {
    const auto& dy = g.grad(self);
    for (int in : {ia, ib}) {
      if (!g.requires_grad(in)) continue;
      T* dx = g.grad(in).ptr();
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
    }
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  auto& g = graph_of({a, b});
  require_same_shape("sub", a, b);
  Tensor<T> out = a.value();
  const T* bv = b.value().ptr();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const int ia = a.id, ib = b.id;
  return g.record("sub", {ia, ib}, std::move(out), [ia, ib](Graph<T>& g, int self) {
    const auto& dy = g.grad(self);
    if (g.requires_grad(ia)) {
      T* dx = g.grad(ia).ptr();
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
    }
    if (g.requires_grad(ib)) {
      T* dx = g.grad(ib).ptr();
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] -= dy[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  auto& g = graph_of({a, b});
  require_same_shape("mul", a, b);
  Tensor<T> out = a.value();
  const T* bv = b.value().ptr();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const int ia = a.id, ib = b.id;
  return g.record("mul", {ia, ib}, std::move(out), [ia, ib](Graph<T>& g, int self) {
    const auto& dy = g.grad(self);
    if (g.requires_grad(ia)) {
      T* dx = g.grad(ia).ptr();
      const T* o = g.value(ib).ptr();
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * o[i];
    }
    if (g.requires_grad(ib)) {
      T* dx = g.grad(ib).ptr();
      const T* o = g.value(ia).ptr();
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * o[i];
    }
  });
}

template <typename T>
Var<T> add_bias(Var<T> x, Var<T> b) {
  auto& g = graph_of({x, b});
  const auto& xs = x.shape();
  const std::size_t n = xs.back();
  if (b.size() != n) {
    throw std::invalid_argument("add_bias: bias " + shape_str(b.shape()) + " does not match last axis of " +
                                shape_str(xs));
  }
  Tensor<T> out = x.value();
  const T* bv = b.value().ptr();
  const std::size_t rows = out.size() / n;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] += bv[j];
  }
  const int ix = x.id, ib = b.id;
  return g.record("add_bias", {ix, ib}, std::move(out), [ix, ib, rows, n](Graph<T>& g, int self) {
    const auto& dy = g.grad(self);
    if (g.requires_grad(ix)) {
      T* dx = g.grad(ix).ptr();
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
    }
    if (g.requires_grad(ib)) {
      T* db = g.grad(ib).ptr();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < n; ++j) db[j] += dy[r * n + j];
      }
    }
  });
}

template <typename T>
Var<T> scale(Var<T> x, T factor) {
  auto& g = graph_of({x});
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v *= factor;
  const int ix = x.id;
  return g.record("scale", {ix}, std::move(out), [ix, factor](Graph<T>& g, int self) {
    const auto& dy = g.grad(self);
    T* dx = g.grad(ix).ptr();
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += factor * dy[i];
  });
}

template <typename T>
Var<T> square(Var<T> x) {
  auto& g = graph_of({x});
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v *= v;
  const int ix = x.id;
  return g.record("square", {ix}, std::move(out), [ix](Graph<T>& g, int self) {
    const auto& dy = g.grad(self);
    const T* xv = g.value(ix).ptr();
    T* dx = g.grad(ix).ptr();
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += T(2) * xv[i] * dy[i];
  });
}

template <typename T>
Var<T> sum(Var<T> x) {
  auto& g = graph_of({x});
  T acc = 0;
  for (T v : x.value().data()) acc += v;
  const int ix = x.id;
  return g.record("sum", {ix}, Tensor<T>::scalar(acc), [ix](Graph<T>& g, int self) {
    const T d = g.grad(self)[0];
    for (auto& v : g.grad(ix).data()) v += d;
  });
}

template <typename T>
Var<T> mean(Var<T> x) {
  auto& g = graph_of({x});
  T acc = 0;
  for (T v : x.value().data()) acc += v;
  const std::size_t n = x.size();
  const int ix = x.id;
  return g.record("mean", {ix}, Tensor<T>::scalar(acc / T(n)), [ix, n](Graph<T>& g, int self) {
    const T d = g.grad(self)[0] / T(n);
    for (auto& v : g.grad(ix).data()) v += d;
  });
}

// ---------------------------------------------------------------------------
// Activations and normalization
// ---------------------------------------------------------------------------

template <typename T>
Var<T> sigmoid(Var<T> x) {
  auto& g = graph_of({x});
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v = stable_sigmoid(v);
  const int ix = x.id;
  return g.record("sigmoid", {ix}, std::move(out), [ix](Graph<T>& g, int self) {
    const auto& dy = g.grad(self);
    const T* y = g.value(self).ptr();
    T* dx = g.grad(ix).ptr();
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * y[i] * (T(1) - y[i]);
  });
}

template <typename T>
Var<T> swish(Var<T> x, T beta) {
  if (!(beta > T(0))) throw std::invalid_argument("swish: beta must be positive");
  auto& g = graph_of({x});
  const auto& xv = x.value();
  Tensor<T> out(xv.shape());
  auto sig = std::make_shared<std::vector<T>>(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const T s = stable_sigmoid(beta * xv[i]);
    (*sig)[i] = s;
    out[i] = xv[i] * s;
  }
  const int ix = x.id;
  return g.record("swish", {ix}, std::move(out), [ix, beta, sig](Graph<T>& g, int self) {
    const auto& dy = g.grad(self);
    const T* xv = g.value(ix).ptr();
    const T* s = sig->data();
    T* dx = g.grad(ix).ptr();
    for (std::size_t i = 0; i < dy.size(); ++i) {
      dx[i] += dy[i] * (s[i] + beta * xv[i] * s[i] * (T(1) - s[i]));
    }
  });
}

template <typename T>
Var<T> softmax(Var<T> x, int axis) {
  auto& g = graph_of({x});
  const std::size_t ax = normalize_axis(axis, x.shape().size());
  const AxisSplit sp = split_at(x.shape(), ax);
  Tensor<T> out = x.value();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      T* base = out.ptr() + o * sp.len * sp.inner + in;
      T mx = base[0];
      for (std::size_t l = 1; l < sp.len; ++l) mx = std::max(mx, base[l * sp.inner]);
      T z = 0;
      for (std::size_t l = 0; l < sp.len; ++l) {
        base[l * sp.inner] = std::exp(base[l * sp.inner] - mx);
        z += base[l * sp.inner];
      }
      for (std::size_t l = 0; l < sp.len; ++l) base[l * sp.inner] /= z;
    }
  }
  const int ix = x.id;
  return g.record("softmax", {ix}, std::move(out), [ix, sp](Graph<T>& g, int self) {
    const T* dy = g.grad(self).ptr();
    const T* y = g.value(self).ptr();
    T* dx = g.grad(ix).ptr();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t in = 0; in < sp.inner; ++in) {
        const std::size_t base = o * sp.len * sp.inner + in;
        T dot = 0;
        for (std::size_t l = 0; l < sp.len; ++l) dot += dy[base + l * sp.inner] * y[base + l * sp.inner];
        for (std::size_t l = 0; l < sp.len; ++l) {
          const std::size_t i = base + l * sp.inner;
          dx[i] += y[i] * (dy[i] - dot);
        }
      }
    }
  });
}

namespace {

// Normalizes `rows` contiguous groups of `n` values to zero mean, unit variance.
template <typename T>
void normalize_groups(const T* x, T* xhat, T* inv_std, std::size_t rows, std::size_t n, T eps) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x + r * n;
    T mu = 0;
    for (std::size_t i = 0; i < n; ++i) mu += xr[i];
    mu /= T(n);
    T var = 0;
    for (std::size_t i = 0; i < n; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= T(n);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t i = 0; i < n; ++i) xhat[r * n + i] = (xr[i] - mu) * is;
  }
}

// dx += inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat)) per group.
template <typename T>
void normalize_groups_backward(const T* dxhat, const T* xhat, const T* inv_std, T* dx, std::size_t rows,
                               std::size_t n) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* d = dxhat + r * n;
    const T* h = xhat + r * n;
    T m1 = 0, m2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
      m1 += d[i];
      m2 += d[i] * h[i];
    }
    m1 /= T(n);
    m2 /= T(n);
    for (std::size_t i = 0; i < n; ++i) dx[r * n + i] += inv_std[r] * (d[i] - m1 - h[i] * m2);
  }
}

}  // namespace

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps) {
  auto& g = graph_of({x, gain, bias});
  const auto& xs = x.shape();
  const std::size_t n = xs.back();
  if (gain.size() != n || bias.size() != n) {
    throw std::invalid_argument("layer_norm: affine parameters do not match last axis of " + shape_str(xs));
  }
  const std::size_t rows = x.size() / n;
  auto xhat = std::make_shared<std::vector<T>>(x.size());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  normalize_groups(x.value().ptr(), xhat->data(), inv_std->data(), rows, n, eps);
  Tensor<T> out(xs);
  const T* gv = gain.value().ptr();
  const T* bv = bias.value().ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < n; ++i) out[r * n + i] = (*xhat)[r * n + i] * gv[i] + bv[i];
  }
  const int ix = x.id, ig = gain.id, ib = bias.id;
  return g.record("layer_norm", {ix, ig, ib}, std::move(out),
                  [ix, ig, ib, rows, n, xhat, inv_std](Graph<T>& g, int self) {
                    const T* dy = g.grad(self).ptr();
                    if (g.requires_grad(ig) || g.requires_grad(ib)) {
                      T* dg = g.requires_grad(ig) ? g.grad(ig).ptr() : nullptr;
                      T* db = g.requires_grad(ib) ? g.grad(ib).ptr() : nullptr;
                      for (std::size_t r = 0; r < rows; ++r) {
                        for (std::size_t i = 0; i < n; ++i) {
                          if (dg) dg[i] += dy[r * n + i] * (*xhat)[r * n + i];
                          if (db) db[i] += dy[r * n + i];
                        }
                      }
                    }
                    if (g.requires_grad(ix)) {
                      const T* gv = g.value(ig).ptr();
                      std::vector<T> dxhat(rows * n);
                      for (std::size_t r = 0; r < rows; ++r) {
                        for (std::size_t i = 0; i < n; ++i) dxhat[r * n + i] = dy[r * n + i] * gv[i];
                      }
                      normalize_groups_backward(dxhat.data(), xhat->data(), inv_std->data(), g.grad(ix).ptr(), rows,
                                                n);
                    }
                  });
}

template <typename T>
Var<T> instance_norm(Var<T> x, T eps) {
  auto& g = graph_of({x});
  const auto& xs = x.shape();
  if (xs.size() < 2) throw std::invalid_argument("instance_norm: expected [C, spatial...], got " + shape_str(xs));
  const std::size_t rows = xs[0];
  const std::size_t n = x.size() / rows;
  Tensor<T> out(xs);
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  normalize_groups(x.value().ptr(), out.ptr(), inv_std->data(), rows, n, eps);
  const int ix = x.id;
  return g.record("instance_norm", {ix}, std::move(out), [ix, rows, n, inv_std](Graph<T>& g, int self) {
    normalize_groups_backward(g.grad(self).ptr(), g.value(self).ptr(), inv_std->data(), g.grad(ix).ptr(), rows,
                              n);
  });
}

template <typename T>
Var<T> dropout(Var<T> x, T rate) {
  if (rate < T(0) || rate >= T(1)) throw std::invalid_argument("dropout: rate must lie in [0, 1)");
  auto& g = graph_of({x});
  if (!g.training() || rate == T(0)) return x;
  std::mt19937_64 rng(g.next_seed());
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const T keep_scale = T(1) / (T(1) - rate);
  auto mask = std::make_shared<std::vector<T>>(x.size());
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = uni(rng) < static_cast<double>(rate) ? T(0) : keep_scale;
    out[i] *= (*mask)[i];
  }
  const int ix = x.id;
  return g.record("dropout", {ix}, std::move(out), [ix, mask](Graph<T>& g, int self) {
    const auto& dy = g.grad(self);
    T* dx = g.grad(ix).ptr();
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * (*mask)[i];
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  auto& g = graph_of({x});
  Tensor<T> out = x.value().reshaped(std::move(shape));
  const int ix = x.id;
  return g.record("reshape", {ix}, std::move(out), [ix](Graph<T>& g, int self) {
    const auto& dy = g.grad(self);
    T* dx = g.grad(ix).ptr();
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
  });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& xs, int axis) {
  if (xs.empty()) throw std::invalid_argument("concat: no inputs");
  Graph<T>& g = *xs.front().graph;
  const Shape& first = xs.front().shape();
  const std::size_t ax = normalize_axis(axis, first.size());
  Shape out_shape = first;
  out_shape[ax] = 0;
  std::vector<int> ids;
  std::vector<std::size_t> lens;
  for (const auto& v : xs) {
    if (v.graph != &g) throw std::logic_error("concat mixes nodes from different graphs");
    const Shape& s = v.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == ax) || s[i] == first[i];
    if (!ok) throw std::invalid_argument("concat: shape " + shape_str(s) + " incompatible with " + shape_str(first));
    out_shape[ax] += s[ax];
    ids.push_back(v.id);
    lens.push_back(s[ax]);
  }
  const AxisSplit sp = split_at(out_shape, ax);
  Tensor<T> out(out_shape);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const T* src = xs[k].value().ptr();
    const std::size_t chunk = lens[k] * sp.inner;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy(src + o * chunk, src + (o + 1) * chunk, out.ptr() + o * sp.len * sp.inner + offset * sp.inner);
    }
    offset += lens[k];
  }
  return g.record("concat", ids, std::move(out), [ids, lens, sp](Graph<T>& g, int self) {
    const T* dy = g.grad(self).ptr();
    std::size_t offset = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const std::size_t chunk = lens[k] * sp.inner;
      if (g.requires_grad(ids[k])) {
        T* dx = g.grad(ids[k]).ptr();
        for (std::size_t o = 0; o < sp.outer; ++o) {
          const T* src = dy + o * sp.len * sp.inner + offset * sp.inner;
          for (std::size_t i = 0; i < chunk; ++i) dx[o * chunk + i] += src[i];
        }
      }
      offset += lens[k];
    }
  });
}

template <typename T>
Var<T> slice(Var<T> x, int axis, std::size_t start, std::size_t length) {
  auto& g = graph_of({x});
  const std::size_t ax = normalize_axis(axis, x.shape().size());
  const AxisSplit sp = split_at(x.shape(), ax);
  if (length == 0 || start + length > sp.len) {
    throw std::invalid_argument("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                                ") outside axis of length " + std::to_string(sp.len));
  }
  Shape out_shape = x.shape();
  out_shape[ax] = length;
  Tensor<T> out(out_shape);
  const T* src = x.value().ptr();
  const std::size_t chunk = length * sp.inner;
  for (std::size_t o = 0; o < sp.outer; ++o) {
    const T* from = src + o * sp.len * sp.inner + start * sp.inner;
    std::copy(from, from + chunk, out.ptr() + o * chunk);
  }
  const int ix = x.id;
  return g.record("slice", {ix}, std::move(out), [ix, sp, start, chunk](Graph<T>& g, int self) {
    const T* dy = g.grad(self).ptr();
    T* dx = g.grad(ix).ptr();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      T* to = dx + o * sp.len * sp.inner + start * sp.inner;
      for (std::size_t i = 0; i < chunk; ++i) to[i] += dy[o * chunk + i];
    }
  });
}

template <typename T>
std::vector<Var<T>> split(Var<T> x, int axis, const std::vector<std::size_t>& lengths) {
  std::vector<Var<T>> parts;
  std::size_t start = 0;
  for (std::size_t len : lengths) {
    parts.push_back(slice(x, axis, start, len));
    start += len;
  }
  const std::size_t ax = normalize_axis(axis, x.shape().size());
  if (start != x.shape()[ax]) throw std::invalid_argument("split: lengths do not cover the axis");
  return parts;
}

template <typename T>
Var<T> max_reduce(Var<T> x, int axis) {
  auto& g = graph_of({x});
  const std::size_t ax = normalize_axis(axis, x.shape().size());
  const AxisSplit sp = split_at(x.shape(), ax);
  Shape out_shape;
  for (std::size_t i = 0; i < x.shape().size(); ++i) {
    if (i != ax) out_shape.push_back(x.shape()[i]);
  }
  if (out_shape.empty()) out_shape.push_back(1);
  Tensor<T> out(out_shape);
  auto arg = std::make_shared<std::vector<std::size_t>>(sp.outer * sp.inner);
  const T* src = x.value().ptr();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.len * sp.inner + in;
      std::size_t best = base;
      for (std::size_t l = 1; l < sp.len; ++l) {
        const std::size_t i = base + l * sp.inner;
        if (src[i] > src[best]) best = i;
      }
      out[o * sp.inner + in] = src[best];
      (*arg)[o * sp.inner + in] = best;
    }
  }
  const int ix = x.id;
  return g.record("max_reduce", {ix}, std::move(out), [ix, arg](Graph<T>& g, int self) {
    const auto& dy = g.grad(self);
    T* dx = g.grad(ix).ptr();
    for (std::size_t i = 0; i < dy.size(); ++i) dx[(*arg)[i]] += dy[i];
  });
}

template <typename T>
Var<T> gather_rows(Var<T> table, std::shared_ptr<const std::vector<std::uint32_t>> index) {
  auto& g = graph_of({table});
  const auto& ts = table.shape();
  if (ts.size() != 2) throw std::invalid_argument("gather_rows: table must be rank 2, got " + shape_str(ts));
  const std::size_t rows = ts[0], width = ts[1], n = index->size();
  if (n == 0) throw std::invalid_argument("gather_rows: empty index");
  Tensor<T> out({n, width});
  const T* src = table.value().ptr();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = (*index)[i];
    if (r >= rows) throw std::out_of_range("gather_rows: index " + std::to_string(r) + " >= " + std::to_string(rows));
    std::copy(src + r * width, src + (r + 1) * width, out.ptr() + i * width);
  }
  const int it = table.id;
  return g.record("gather_rows", {it}, std::move(out), [it, index, width](Graph<T>& g, int self) {
    const T* dy = g.grad(self).ptr();
    T* dt = g.grad(it).ptr();
    for (std::size_t i = 0; i < index->size(); ++i) {
      T* row = dt + static_cast<std::size_t>((*index)[i]) * width;
      for (std::size_t j = 0; j < width; ++j) row[j] += dy[i * width + j];
    }
  });
}

template <typename T>
Var<T> scatter_mean(Var<T> x, std::shared_ptr<const std::vector<std::uint32_t>> target, Shape out_shape) {
  auto& g = graph_of({x});
  if (target->size() != x.size()) {
    throw std::invalid_argument("scatter_mean: " + std::to_string(target->size()) + " targets for " +
                                std::to_string(x.size()) + " values");
  }
  Tensor<T> out(out_shape);
  auto count = std::make_shared<std::vector<std::uint32_t>>(out.size(), 0u);
  const T* xv = x.value().ptr();
  for (std::size_t i = 0; i < target->size(); ++i) {
    const std::size_t t = (*target)[i];
    if (t >= out.size()) throw std::out_of_range("scatter_mean: target outside output");
    out[t] += xv[i];
    ++(*count)[t];
  }
  for (std::size_t v = 0; v < out.size(); ++v) {
    if ((*count)[v]) out[v] /= T((*count)[v]);
  }
  const int ix = x.id;
  return g.record("scatter_mean", {ix}, std::move(out), [ix, target, count](Graph<T>& g, int self) {
    const T* dy = g.grad(self).ptr();
    T* dx = g.grad(ix).ptr();
    for (std::size_t i = 0; i < target->size(); ++i) {
      const std::size_t t = (*target)[i];
      dx[i] += dy[t] / T((*count)[t]);
    }
  });
}

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

namespace {

// Builds geometry for a forward convolution whose input has the given spatial
// extents (three axes; unused leading axes are 1).
detail::ConvGeom make_geom(std::size_t ci, std::size_t co, std::array<std::size_t, 3> in,
                           std::array<std::size_t, 3> k, std::array<std::size_t, 3> s,
                           std::array<std::size_t, 3> p) {
  detail::ConvGeom g;
  g.ci = ci;
  g.co = co;
  g.in = in;
  g.k = k;
  g.s = s;
  g.p = p;
  for (int a = 0; a < 3; ++a) {
    if (s[a] == 0) throw std::invalid_argument("convolution stride must be positive");
    if (in[a] + 2 * p[a] < k[a]) {
      throw std::invalid_argument("convolution kernel of extent " + std::to_string(k[a]) +
                                  " does not fit padded input of extent " + std::to_string(in[a] + 2 * p[a]));
    }
    g.out[a] = (in[a] + 2 * p[a] - k[a]) / s[a] + 1;
  }
  return g;
}

template <typename T>
void add_channel_bias(T* y, const T* b, std::size_t channels, std::size_t plane) {
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < plane; ++i) y[c * plane + i] += b[c];
  }
}

template <typename T>
void channel_bias_grad(const T* dy, T* db, std::size_t channels, std::size_t plane) {
  for (std::size_t c = 0; c < channels; ++c) {
    T acc = 0;
    for (std::size_t i = 0; i < plane; ++i) acc += dy[c * plane + i];
    db[c] += acc;
  }
}

template <typename T>
Var<T> conv_impl(const char* name, Var<T> x, Var<T> w, std::optional<Var<T>> b, detail::ConvGeom geom,
                 Shape out_shape) {
  auto& g = b ? graph_of({x, w, *b}) : graph_of({x, w});
  if (b && b->size() != geom.co) throw std::invalid_argument(std::string(name) + ": bias length mismatch");
  Tensor<T> out(std::move(out_shape));
  if (b) add_channel_bias(out.ptr(), b->value().ptr(), geom.co, geom.out_plane());
  detail::conv_forward(x.value().ptr(), w.value().ptr(), out.ptr(), geom);
  const int ix = x.id, iw = w.id, ib = b ? b->id : -1;
  std::vector<int> inputs{ix, iw};
  if (b) inputs.push_back(ib);
  return g.record(name, inputs, std::move(out), [ix, iw, ib, geom](Graph<T>& g, int self) {
    const T* dy = g.grad(self).ptr();
    if (g.requires_grad(ix)) detail::conv_backward_input(dy, g.value(iw).ptr(), g.grad(ix).ptr(), geom);
    if (g.requires_grad(iw)) detail::conv_backward_weight(g.value(ix).ptr(), dy, g.grad(iw).ptr(), geom);
    if (ib >= 0 && g.requires_grad(ib)) channel_bias_grad(dy, g.grad(ib).ptr(), geom.co, geom.out_plane());
  });
}

// Transposed convolution: `geom` describes the forward convolution that maps
// the transposed output back onto the transposed input.
template <typename T>
Var<T> conv_transpose_impl(const char* name, Var<T> x, Var<T> w, std::optional<Var<T>> b, detail::ConvGeom geom,
                           Shape out_shape) {
  auto& g = b ? graph_of({x, w, *b}) : graph_of({x, w});
  if (b && b->size() != geom.ci) throw std::invalid_argument(std::string(name) + ": bias length mismatch");
  Tensor<T> out(std::move(out_shape));
  if (b) add_channel_bias(out.ptr(), b->value().ptr(), geom.ci, geom.in_plane());
  detail::conv_backward_input(x.value().ptr(), w.value().ptr(), out.ptr(), geom);
  const int ix = x.id, iw = w.id, ib = b ? b->id : -1;
  std::vector<int> inputs{ix, iw};
  if (b) inputs.push_back(ib);
  return g.record(name, inputs, std::move(out), [ix, iw, ib, geom](Graph<T>& g, int self) {
    const T* dy = g.grad(self).ptr();
    if (g.requires_grad(ix)) detail::conv_forward(dy, g.value(iw).ptr(), g.grad(ix).ptr(), geom);
    if (g.requires_grad(iw)) detail::conv_backward_weight(dy, g.value(ix).ptr(), g.grad(iw).ptr(), geom);
    if (ib >= 0 && g.requires_grad(ib)) channel_bias_grad(dy, g.grad(ib).ptr(), geom.ci, geom.in_plane());
  });
}

void check_conv_ranks(const char* name, const Shape& xs, const Shape& ws, std::size_t spatial) {
  if (xs.size() != spatial + 1 || ws.size() != spatial + 2) {
    throw std::invalid_argument(std::string(name) + ": bad ranks, input " + shape_str(xs) + " weight " +
                                shape_str(ws));
  }
}

}  // namespace

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, std::optional<std::type_identity_t<Var<T>>> b, std::size_t stride, std::size_t pad) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  check_conv_ranks("conv2d", xs, ws, 2);
  if (ws[1] != xs[0]) {
    throw std::invalid_argument("conv2d: channel mismatch, input " + shape_str(xs) + " weight " + shape_str(ws));
  }
  auto geom = make_geom(xs[0], ws[0], {1, xs[1], xs[2]}, {1, ws[2], ws[3]}, {1, stride, stride}, {0, pad, pad});
  return conv_impl("conv2d", x, w, b, geom, {ws[0], geom.out[1], geom.out[2]});
}

template <typename T>
Var<T> conv3d(Var<T> x, Var<T> w, std::optional<std::type_identity_t<Var<T>>> b, std::size_t stride, std::size_t pad) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  check_conv_ranks("conv3d", xs, ws, 3);
  if (ws[1] != xs[0]) {
    throw std::invalid_argument("conv3d: channel mismatch, input " + shape_str(xs) + " weight " + shape_str(ws));
  }
  auto geom = make_geom(xs[0], ws[0], {xs[1], xs[2], xs[3]}, {ws[2], ws[3], ws[4]}, {stride, stride, stride},
                        {pad, pad, pad});
  return conv_impl("conv3d", x, w, b, geom, {ws[0], geom.out[0], geom.out[1], geom.out[2]});
}

namespace {

std::size_t transposed_extent(std::size_t in, std::size_t k, std::size_t s, std::size_t p) {
  if (s == 0) throw std::invalid_argument("convolution stride must be positive");
  const long long out = (static_cast<long long>(in) - 1) * static_cast<long long>(s) - 2 * static_cast<long long>(p) +
                        static_cast<long long>(k);
  if (out <= 0) throw std::invalid_argument("transposed convolution produces an empty output");
  return static_cast<std::size_t>(out);
}

}  // namespace

template <typename T>
Var<T> conv_transpose2d(Var<T> x, Var<T> w, std::optional<std::type_identity_t<Var<T>>> b, std::size_t stride, std::size_t pad) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  check_conv_ranks("conv_transpose2d", xs, ws, 2);
  if (ws[0] != xs[0]) {
    throw std::invalid_argument("conv_transpose2d: channel mismatch, input " + shape_str(xs) + " weight " +
                                shape_str(ws));
  }
  const std::size_t oh = transposed_extent(xs[1], ws[2], stride, pad);
  const std::size_t ow = transposed_extent(xs[2], ws[3], stride, pad);
  auto geom = make_geom(ws[1], ws[0], {1, oh, ow}, {1, ws[2], ws[3]}, {1, stride, stride}, {0, pad, pad});
  return conv_transpose_impl("conv_transpose2d", x, w, b, geom, {ws[1], oh, ow});
}

template <typename T>
Var<T> conv_transpose3d(Var<T> x, Var<T> w, std::optional<std::type_identity_t<Var<T>>> b, std::size_t stride, std::size_t pad) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  check_conv_ranks("conv_transpose3d", xs, ws, 3);
  if (ws[0] != xs[0]) {
    throw std::invalid_argument("conv_transpose3d: channel mismatch, input " + shape_str(xs) + " weight " +
                                shape_str(ws));
  }
  std::array<std::size_t, 3> o{};
  for (int a = 0; a < 3; ++a) o[a] = transposed_extent(xs[a + 1], ws[a + 2], stride, pad);
  auto geom = make_geom(ws[1], ws[0], o, {ws[2], ws[3], ws[4]}, {stride, stride, stride}, {pad, pad, pad});
  return conv_transpose_impl("conv_transpose3d", x, w, b, geom, {ws[1], o[0], o[1], o[2]});
}

#define NEBLA_INSTANTIATE_OPS(T)                                                                           \
  template Var<T> matmul(Var<T>, Var<T>);                                                                  \
  template Var<T> transpose(Var<T>);                                                                       \
  template Var<T> linear(Var<T>, Var<T>, Var<T>);                                                          \
  template Var<T> add(Var<T>, Var<T>);                                                                     \
  template Var<T> sub(Var<T>, Var<T>);                                                                     \
  template Var<T> mul(Var<T>, Var<T>);                                                                     \
  template Var<T> add_bias(Var<T>, Var<T>);                                                                \
  template Var<T> scale(Var<T>, T);                                                                        \
  template Var<T> square(Var<T>);                                                                          \
  template Var<T> sum(Var<T>);                                                                             \
  template Var<T> mean(Var<T>);                                                                            \
  template Var<T> sigmoid(Var<T>);                                                                         \
  template Var<T> swish(Var<T>, T);                                                                        \
  template Var<T> softmax(Var<T>, int);                                                                    \
  template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, T);                                                   \
  template Var<T> instance_norm(Var<T>, T);                                                                \
  template Var<T> dropout(Var<T>, T);                                                                      \
  template Var<T> reshape(Var<T>, Shape);                                                                  \
  template Var<T> concat(const std::vector<Var<T>>&, int);                                                 \
  template Var<T> slice(Var<T>, int, std::size_t, std::size_t);                                            \
  template std::vector<Var<T>> split(Var<T>, int, const std::vector<std::size_t>&);                        \
  template Var<T> max_reduce(Var<T>, int);                                                                 \
  template Var<T> gather_rows(Var<T>, std::shared_ptr<const std::vector<std::uint32_t>>);                  \
  template Var<T> scatter_mean(Var<T>, std::shared_ptr<const std::vector<std::uint32_t>>, Shape);          \
  template Var<T> conv2d(Var<T>, Var<T>, std::optional<Var<T>>, std::size_t, std::size_t);                 \
  template Var<T> conv3d(Var<T>, Var<T>, std::optional<Var<T>>, std::size_t, std::size_t);                 \
  template Var<T> conv_transpose2d(Var<T>, Var<T>, std::optional<Var<T>>, std::size_t, std::size_t);       \
  template Var<T> conv_transpose3d(Var<T>, Var<T>, std::optional<Var<T>>, std::size_t, std::size_t);

NEBLA_INSTANTIATE_OPS(float)
NEBLA_INSTANTIATE_OPS(double)

}  // namespace nebla
