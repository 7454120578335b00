#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sfcl/autograd.hpp"
#include "sfcl/kernels.hpp"

// Differentiable tensor operations. Every op computes its value eagerly and,
// when a tape is active and some input requires gradients, records the
// matching reverse rule.

namespace sfcl {

namespace detail {

template <Scalar T>
void push_grad(Node<T>* n, const Tensor<T>& g) {
  if (n->requires_grad) n->accumulate(g);
}

inline void require_rank(const Shape& s, std::size_t r, const char* op) {
  if (s.size() != r)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " + shape_str(s));
}

}  // namespace detail

// ---------------------------------------------------------------- products

template <Scalar T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  detail::require_rank(a.dims(), 2, "matmul");
  detail::require_rank(b.dims(), 2, "matmul");
  const std::size_t m = a.dims()[0], k = a.dims()[1], n = b.dims()[1];
  if (b.dims()[0] != k)
    throw ShapeError("matmul: inner dims disagree, " + shape_str(a.dims()) + " x " + shape_str(b.dims()));
  Tensor<T> out({m, n});
  kernels::gemm_nn(m, n, k, a.value().data(), b.value().data(), out.data());
  Node<T>* an = a.node();
  Node<T>* bn = b.node();
  return make_result<T>(std::move(out), {a, b}, [=](const Tensor<T>& g) {
    if (an->requires_grad)
      kernels::gemm_nt(m, k, n, g.data(), bn->value.data(), an->grad_buffer().data());
    if (bn->requires_grad)
      kernels::gemm_tn(k, n, m, an->value.data(), g.data(), bn->grad_buffer().data());
  });
}

/// Batched product over the leading axis: [B×m×k]·[B×k×n], or with
/// `transpose_b` [B×m×k]·[B×n×k]ᵀ.
template <Scalar T>
Var<T> bmm(const Var<T>& a, const Var<T>& b, bool transpose_b = false) {
  detail::require_rank(a.dims(), 3, "bmm");
  detail::require_rank(b.dims(), 3, "bmm");
  const std::size_t batch = a.dims()[0], m = a.dims()[1], k = a.dims()[2];
  const std::size_t bk = transpose_b ? b.dims()[2] : b.dims()[1];
  const std::size_t n = transpose_b ? b.dims()[1] : b.dims()[2];
  if (b.dims()[0] != batch || bk != k)
    throw ShapeError("bmm: incompatible operands " + shape_str(a.dims()) + " and " + shape_str(b.dims()) +
                     (transpose_b ? " (b transposed)" : ""));
  Tensor<T> out({batch, m, n});
  for (std::size_t s = 0; s < batch; ++s) {
    const T* ap = a.value().data() + s * m * k;
    const T* bp = b.value().data() + s * k * n;
    T* cp = out.data() + s * m * n;
    if (transpose_b)
      kernels::gemm_nt(m, n, k, ap, bp, cp);
    else
      kernels::gemm_nn(m, n, k, ap, bp, cp);
  }
  Node<T>* an = a.node();
  Node<T>* bn = b.node();
  return make_result<T>(std::move(out), {a, b}, [=](const Tensor<T>& g) {
    for (std::size_t s = 0; s < batch; ++s) {
      const T* gp = g.data() + s * m * n;
      const T* ap = an->value.data() + s * m * k;
      const T* bp = bn->value.data() + s * k * n;
      if (an->requires_grad) {
        T* da = an->grad_buffer().data() + s * m * k;
        if (transpose_b)
          kernels::gemm_nn(m, k, n, gp, bp, da);
        else
          kernels::gemm_nt(m, k, n, gp, bp, da);
      }
      if (bn->requires_grad) {
        T* db = bn->grad_buffer().data() + s * k * n;
        if (transpose_b)
          kernels::gemm_tn(n, k, m, gp, ap, db);
        else
          kernels::gemm_tn(k, n, m, ap, gp, db);
      }
    }
  });
}

/// y = x·w + b for x [N×in], w [in×out], b [out].
template <Scalar T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const std::optional<Var<T>>& b = std::nullopt) {
  detail::require_rank(x.dims(), 2, "linear");
  detail::require_rank(w.dims(), 2, "linear");
  const std::size_t rows = x.dims()[0], in = x.dims()[1], outw = w.dims()[1];
  if (w.dims()[0] != in)
    throw ShapeError("linear: input " + shape_str(x.dims()) + " does not fit weight " + shape_str(w.dims()));
  if (b && (b->size() != outw))
    throw ShapeError("linear: bias " + shape_str(b->dims()) + " does not fit weight " + shape_str(w.dims()));
  Tensor<T> out({rows, outw});
  if (b)
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(b->value().data(), b->value().data() + outw, out.data() + r * outw);
  kernels::gemm_nn(rows, outw, in, x.value().data(), w.value().data(), out.data());
  Node<T>* xn = x.node();
  Node<T>* wn = w.node();
  Node<T>* bnode = b ? b->node() : nullptr;
  std::vector<Var<T>> ins{x, w};
  if (b) ins.push_back(*b);
  return make_result<T>(std::move(out), std::move(ins), [=](const Tensor<T>& g) {
    if (xn->requires_grad) kernels::gemm_nt(rows, in, outw, g.data(), wn->value.data(), xn->grad_buffer().data());
    if (wn->requires_grad) kernels::gemm_tn(in, outw, rows, xn->value.data(), g.data(), wn->grad_buffer().data());
    if (bnode && bnode->requires_grad) {
      T* db = bnode->grad_buffer().data();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < outw; ++j) db[j] += g[r * outw + j];
    }
  });
}

// ----------------------------------------------------------- convolutions

struct Conv2dOptions {
  std::size_t stride_h = 1, stride_w = 1;
  std::size_t pad_h = 0, pad_w = 0;
  std::size_t groups = 1;
};

namespace detail {

struct Conv2dGeometry {
  std::size_t batch, cin, h, w, cout, kh, kw, ho, wo, groups, cin_g, cout_g;
  Conv2dOptions opt;
  std::size_t k_len() const { return cin_g * kh * kw; }
  std::size_t positions() const { return ho * wo; }
  bool pointwise() const {
    return kh == 1 && kw == 1 && opt.stride_h == 1 && opt.stride_w == 1 && opt.pad_h == 0 && opt.pad_w == 0;
  }
};

template <typename T>
void im2col(const Conv2dGeometry& g, const T* img, T* col) {
  const std::size_t P = g.positions();
  for (std::size_t c = 0; c < g.cin_g; ++c)
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        T* row = col + ((c * g.kh + ky) * g.kw + kx) * P;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.opt.stride_h + ky) - static_cast<std::ptrdiff_t>(g.opt.pad_h);
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.opt.stride_w + kx) - static_cast<std::ptrdiff_t>(g.opt.pad_w);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.h) && ix < static_cast<std::ptrdiff_t>(g.w);
            row[oy * g.wo + ox] = inside ? img[(c * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] : T{0};
          }
        }
      }
}

template <typename T>
void col2im(const Conv2dGeometry& g, const T* col, T* img) {
  const std::size_t P = g.positions();
  for (std::size_t c = 0; c < g.cin_g; ++c)
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const T* row = col + ((c * g.kh + ky) * g.kw + kx) * P;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.opt.stride_h + ky) - static_cast<std::ptrdiff_t>(g.opt.pad_h);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.opt.stride_w + kx) - static_cast<std::ptrdiff_t>(g.opt.pad_w);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
            img[(c * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] += row[oy * g.wo + ox];
          }
        }
      }
}

}  // namespace detail

/// 2D cross-correlation. x is [C_in×H×W] or [N×C_in×H×W]; w is
/// [C_out×C_in/groups×kh×kw]; b, if given, is [C_out].
template <Scalar T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const std::optional<Var<T>>& b = std::nullopt,
              Conv2dOptions opt = {}) {
  const Shape& xs = x.dims();
  const Shape& ws = w.dims();
  if (xs.size() != 3 && xs.size() != 4) throw ShapeError("conv2d: input must be rank 3 or 4, got " + shape_str(xs));
  detail::require_rank(ws, 4, "conv2d weight");
  const bool batched = xs.size() == 4;
  detail::Conv2dGeometry g{};
  g.opt = opt;
  g.batch = batched ? xs[0] : 1;
  g.cin = xs[batched ? 1 : 0];
  g.h = xs[batched ? 2 : 1];
  g.w = xs[batched ? 3 : 2];
  g.cout = ws[0];
  g.kh = ws[2];
  g.kw = ws[3];
  g.groups = opt.groups;
  if (g.groups == 0 || g.cin % g.groups != 0 || g.cout % g.groups != 0)
    throw ShapeError("conv2d: groups " + std::to_string(g.groups) + " incompatible with channels");
  g.cin_g = g.cin / g.groups;
  g.cout_g = g.cout / g.groups;
  if (ws[1] != g.cin_g)
    throw ShapeError("conv2d: weight " + shape_str(ws) + " does not match input " + shape_str(xs));
  if (opt.stride_h == 0 || opt.stride_w == 0) throw ShapeError("conv2d: stride must be positive");
  if (g.kh > g.h + 2 * opt.pad_h || g.kw > g.w + 2 * opt.pad_w)
    throw ShapeError("conv2d: kernel " + shape_str(ws) + " larger than padded input " + shape_str(xs));
  if (b && b->size() != g.cout) throw ShapeError("conv2d: bias length mismatch");
  g.ho = (g.h + 2 * opt.pad_h - g.kh) / opt.stride_h + 1;
  g.wo = (g.w + 2 * opt.pad_w - g.kw) / opt.stride_w + 1;

  const std::size_t P = g.positions(), K = g.k_len();
  Shape out_dims = batched ? Shape{g.batch, g.cout, g.ho, g.wo} : Shape{g.cout, g.ho, g.wo};
  Tensor<T> out(out_dims);
  std::vector<T> col(g.pointwise() ? 0 : K * P);
  const T* xd = x.value().data();
  const T* wd = w.value().data();
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t gr = 0; gr < g.groups; ++gr) {
      const T* img = xd + (n * g.cin + gr * g.cin_g) * g.h * g.w;
      const T* cols = img;
      if (!g.pointwise()) {
        detail::im2col(g, img, col.data());
        cols = col.data();
      }
      T* dst = out.data() + (n * g.cout + gr * g.cout_g) * P;
      if (b)
        for (std::size_t co = 0; co < g.cout_g; ++co)
          std::fill(dst + co * P, dst + (co + 1) * P, b->value()[gr * g.cout_g + co]);
      kernels::gemm_nn(g.cout_g, P, K, wd + gr * g.cout_g * K, cols, dst);
    }
  }

  Node<T>* xn = x.node();
  Node<T>* wn = w.node();
  Node<T>* bnode = b ? b->node() : nullptr;
  std::vector<Var<T>> ins{x, w};
  if (b) ins.push_back(*b);
  return make_result<T>(std::move(out), std::move(ins), [=](const Tensor<T>& gout) {
    std::vector<T> colbuf(g.pointwise() ? 0 : K * P);
    std::vector<T> dcol(K * P);
    for (std::size_t n = 0; n < g.batch; ++n) {
      for (std::size_t gr = 0; gr < g.groups; ++gr) {
        const T* go = gout.data() + (n * g.cout + gr * g.cout_g) * P;
        const T* wg = wn->value.data() + gr * g.cout_g * K;
        const std::size_t img_off = (n * g.cin + gr * g.cin_g) * g.h * g.w;
        if (wn->requires_grad) {
          const T* cols = xn->value.data() + img_off;
          if (!g.pointwise()) {
            detail::im2col(g, cols, colbuf.data());
            cols = colbuf.data();
          }
          kernels::gemm_nt(g.cout_g, K, P, go, cols, wn->grad_buffer().data() + gr * g.cout_g * K);
        }
        if (xn->requires_grad) {
          T* dimg = xn->grad_buffer().data() + img_off;
          if (g.pointwise()) {
            kernels::gemm_tn(K, P, g.cout_g, wg, go, dimg);
          } else {
            std::fill(dcol.begin(), dcol.end(), T{0});
            kernels::gemm_tn(K, P, g.cout_g, wg, go, dcol.data());
            detail::col2im(g, dcol.data(), dimg);
          }
        }
        if (bnode && bnode->requires_grad) {
          T* db = bnode->grad_buffer().data() + gr * g.cout_g;
          for (std::size_t co = 0; co < g.cout_g; ++co) {
            T s{0};
            for (std::size_t p = 0; p < P; ++p) s += go[co * P + p];
            db[co] += s;
          }
        }
      }
    }
  });
}

/// Depth-only 3D convolution: kernel [C_out×C_in×kd×1×1] slides along the
/// depth axis of x ([C_in×D×H×W] or [N×C_in×D×H×W]); H and W never mix.
template <Scalar T>
Var<T> conv3d(const Var<T>& x, const Var<T>& w, const std::optional<Var<T>>& b = std::nullopt,
              std::size_t stride_d = 1) {
  const Shape& xs = x.dims();
  const Shape& ws = w.dims();
  if (xs.size() != 4 && xs.size() != 5) throw ShapeError("conv3d: input must be rank 4 or 5, got " + shape_str(xs));
  detail::require_rank(ws, 5, "conv3d weight");
  if (ws[3] != 1 || ws[4] != 1) throw ShapeError("conv3d: only depth kernels (kd×1×1) supported, got " + shape_str(ws));
  const bool batched = xs.size() == 5;
  const std::size_t batch = batched ? xs[0] : 1;
  const std::size_t cin = xs[batched ? 1 : 0], depth = xs[batched ? 2 : 1];
  const std::size_t hw = xs[batched ? 3 : 2] * xs[batched ? 4 : 3];
  const std::size_t cout = ws[0], kd = ws[2];
  if (ws[1] != cin) throw ShapeError("conv3d: weight " + shape_str(ws) + " does not match input " + shape_str(xs));
  if (stride_d == 0) throw ShapeError("conv3d: stride must be positive");
  if (kd > depth) throw ShapeError("conv3d: kernel depth " + std::to_string(kd) + " exceeds input depth " + std::to_string(depth));
  if (b && b->size() != cout) throw ShapeError("conv3d: bias length mismatch");
  const std::size_t dout = (depth - kd) / stride_d + 1;

  Shape od = xs;
  od[batched ? 1 : 0] = cout;
  od[batched ? 2 : 1] = dout;
  Tensor<T> out(od);
  const T* xd = x.value().data();
  const T* wd = w.value().data();
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t d = 0; d < dout; ++d) {
        T* dst = out.data() + ((n * cout + co) * dout + d) * hw;
        if (b) std::fill(dst, dst + hw, b->value()[co]);
        for (std::size_t ci = 0; ci < cin; ++ci)
          for (std::size_t k = 0; k < kd; ++k) {
            const T wv = wd[(co * cin + ci) * kd + k];
            const T* src = xd + ((n * cin + ci) * depth + d * stride_d + k) * hw;
            for (std::size_t p = 0; p < hw; ++p) dst[p] += wv * src[p];
          }
      }

  Node<T>* xn = x.node();
  Node<T>* wn = w.node();
  Node<T>* bnode = b ? b->node() : nullptr;
  std::vector<Var<T>> ins{x, w};
  if (b) ins.push_back(*b);
  return make_result<T>(std::move(out), std::move(ins), [=](const Tensor<T>& g) {
    const T* xv = xn->value.data();
    const T* wv = wn->value.data();
    T* dx = xn->requires_grad ? xn->grad_buffer().data() : nullptr;
    T* dw = wn->requires_grad ? wn->grad_buffer().data() : nullptr;
    T* db = (bnode && bnode->requires_grad) ? bnode->grad_buffer().data() : nullptr;
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t co = 0; co < cout; ++co)
        for (std::size_t d = 0; d < dout; ++d) {
          const T* go = g.data() + ((n * cout + co) * dout + d) * hw;
          if (db) {
            T s{0};
            for (std::size_t p = 0; p < hw; ++p) s += go[p];
            db[co] += s;
          }
          for (std::size_t ci = 0; ci < cin; ++ci)
            for (std::size_t k = 0; k < kd; ++k) {
              const std::size_t src_off = ((n * cin + ci) * depth + d * stride_d + k) * hw;
              const std::size_t widx = (co * cin + ci) * kd + k;
              if (dw) {
                T s{0};
                for (std::size_t p = 0; p < hw; ++p) s += go[p] * xv[src_off + p];
                dw[widx] += s;
              }
              if (dx) {
                const T w0 = wv[widx];
                for (std::size_t p = 0; p < hw; ++p) dx[src_off + p] += w0 * go[p];
              }
            }
        }
  });
}

// ------------------------------------------------------------- elementwise

namespace detail {

template <Scalar T>
void check_binary(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.dims() != b.dims() && a.size() != 1 && b.size() != 1)
    throw ShapeError(std::string(op) + ": dims differ, " + shape_str(a.dims()) + " vs " + shape_str(b.dims()));
}

/// Reduces a full-size gradient onto an operand that may be a broadcast scalar.
template <Scalar T>
void push_maybe_scalar(Node<T>* n, const Tensor<T>& full) {
  if (!n->requires_grad) return;
  if (n->value.size() == full.size() && n->value.size() != 1) {
    n->accumulate(full);
    return;
  }
  if (n->value.size() == 1 && full.size() != 1) {
    T s{0};
    for (std::size_t i = 0; i < full.size(); ++i) s += full[i];
    n->grad_buffer()[0] += s;
    return;
  }
  n->accumulate(full.reshaped(n->value.dims()));
}

template <Scalar T, typename F>
Tensor<T> binary_map(const Tensor<T>& a, const Tensor<T>& b, F f) {
  const bool a_s = a.size() == 1 && b.size() != 1;
  const bool b_s = b.size() == 1 && a.size() != 1;
  Tensor<T> out(a_s ? b.dims() : a.dims());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[a_s ? 0 : i], b[b_s ? 0 : i]);
  return out;
}

}  // namespace detail

template <Scalar T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::check_binary(a, b, "add");
  Node<T>* an = a.node();
  Node<T>* bn = b.node();
  return make_result<T>(detail::binary_map(a.value(), b.value(), [](T x, T y) { return x + y; }), {a, b},
                        [=](const Tensor<T>& g) {
                          detail::push_maybe_scalar(an, g);
                          detail::push_maybe_scalar(bn, g);
                        });
}

template <Scalar T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::check_binary(a, b, "sub");
  Node<T>* an = a.node();
  Node<T>* bn = b.node();
  return make_result<T>(detail::binary_map(a.value(), b.value(), [](T x, T y) { return x - y; }), {a, b},
                        [=](const Tensor<T>& g) {
                          detail::push_maybe_scalar(an, g);
                          if (bn->requires_grad) {
                            Tensor<T> neg = g;
                            for (auto& v : neg.values()) v = -v;
                            detail::push_maybe_scalar(bn, neg);
                          }
                        });
}

template <Scalar T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::check_binary(a, b, "mul");
  Node<T>* an = a.node();
  Node<T>* bn = b.node();
  return make_result<T>(detail::binary_map(a.value(), b.value(), [](T x, T y) { return x * y; }), {a, b},
                        [=](const Tensor<T>& g) {
                          if (an->requires_grad)
                            detail::push_maybe_scalar(an, detail::binary_map(g, bn->value, [](T x, T y) { return x * y; }));
                          if (bn->requires_grad)
                            detail::push_maybe_scalar(bn, detail::binary_map(g, an->value, [](T x, T y) { return x * y; }));
                        });
}

/// Multiplies by a constant (not differentiated with respect to `c`).
template <Scalar T>
Var<T> scale(const Var<T>& x, T c) {
  Tensor<T> out = x.value();
  for (auto& v : out.values()) v *= c;
  Node<T>* xn = x.node();
  return make_result<T>(std::move(out), {x}, [=](const Tensor<T>& g) {
    Tensor<T> d = g;
    for (auto& v : d.values()) v *= c;
    detail::push_grad(xn, d);
  });
}

template <Scalar T>
Var<T> abs(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (auto& v : out.values()) v = std::abs(v);
  Node<T>* xn = x.node();
  return make_result<T>(std::move(out), {x}, [=](const Tensor<T>& g) {
    Tensor<T> d = g;
    for (std::size_t i = 0; i < d.size(); ++i) {
      const T v = xn->value[i];
      d[i] = v > T{0} ? g[i] : (v < T{0} ? -g[i] : T{0});
    }
    detail::push_grad(xn, d);
  });
}

template <Scalar T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (auto& v : out.values()) v = v > T{0} ? v : T{0};
  Node<T>* xn = x.node();
  return make_result<T>(std::move(out), {x}, [=](const Tensor<T>& g) {
    Tensor<T> d = g;
    for (std::size_t i = 0; i < d.size(); ++i)
      if (!(xn->value[i] > T{0})) d[i] = T{0};
    detail::push_grad(xn, d);
  });
}

template <Scalar T>
T sigmoid_scalar(T v) {
  if (v >= T{0}) return T{1} / (T{1} + std::exp(-v));
  const T e = std::exp(v);
  return e / (T{1} + e);
}

template <Scalar T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (auto& v : out.values()) v = sigmoid_scalar(v);
  Node<T>* xn = x.node();
  Tensor<T> y = out;
  return make_result<T>(std::move(out), {x}, [=](const Tensor<T>& g) {
    Tensor<T> d = g;
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = g[i] * y[i] * (T{1} - y[i]);
    detail::push_grad(xn, d);
  });
}

/// Softmax along the last axis; every leading index is one row.
template <Scalar T>
Var<T> softmax_rows(const Var<T>& x) {
  if (x.dims().size() < 2) throw ShapeError("softmax_rows: expected rank >= 2, got " + shape_str(x.dims()));
  const std::size_t n = x.dims().back();
  const std::size_t rows = x.size() / n;
  Tensor<T> out = x.value();
  for (std::size_t r = 0; r < rows; ++r) {
    T* row = out.data() + r * n;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (std::isnan(row[j])) throw NumericError("softmax_rows: NaN input in row " + std::to_string(r));
      mx = std::max(mx, row[j]);
    }
    T s{0};
    for (std::size_t j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - mx);
      s += row[j];
    }
    for (std::size_t j = 0; j < n; ++j) row[j] /= s;
  }
  Node<T>* xn = x.node();
  Tensor<T> y = out;
  return make_result<T>(std::move(out), {x}, [=](const Tensor<T>& g) {
    Tensor<T> d(g.dims());
    for (std::size_t r = 0; r < rows; ++r) {
      const T* yr = y.data() + r * n;
      const T* gr = g.data() + r * n;
      T dot{0};
      for (std::size_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
      for (std::size_t j = 0; j < n; ++j) d[r * n + j] = yr[j] * (gr[j] - dot);
    }
    detail::push_grad(xn, d);
  });
}

// -------------------------------------------------------------- reductions

enum class ReduceOp { sum, mean };

/// Sums or averages over `axes`; reduced axes are dropped. Reducing every
/// axis yields a [1] tensor. An empty axis set returns a copy.
template <Scalar T>
Var<T> reduce(ReduceOp op, const Var<T>& x, std::vector<std::size_t> axes) {
  const Shape& xs = x.dims();
  std::vector<bool> reduced(xs.size(), false);
  for (std::size_t a : axes) {
    if (a >= xs.size()) throw ShapeError("reduce: axis " + std::to_string(a) + " invalid for " + shape_str(xs));
    reduced[a] = true;
  }
  Shape od;
  std::size_t count = 1;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (reduced[i])
      count *= xs[i];
    else
      od.push_back(xs[i]);
  }
  if (od.empty()) od.push_back(1);

  // Map every input element to its output slot.
  const Shape in_strides = strides_of(xs);
  std::vector<std::size_t> out_index(x.size());
  {
    Shape keep_strides(xs.size(), 0);
    std::size_t s = 1;
    for (std::size_t i = xs.size(); i-- > 0;)
      if (!reduced[i]) {
        keep_strides[i] = s;
        s *= xs[i];
      }
    for (std::size_t flat = 0; flat < x.size(); ++flat) {
      std::size_t rem = flat, o = 0;
      for (std::size_t i = 0; i < xs.size(); ++i) {
        const std::size_t idx = rem / in_strides[i];
        rem %= in_strides[i];
        o += idx * keep_strides[i];
      }
      out_index[flat] = o;
    }
  }
  Tensor<T> out(od);
  for (std::size_t i = 0; i < x.size(); ++i) out[out_index[i]] += x.value()[i];
  const T factor = op == ReduceOp::mean ? T{1} / static_cast<T>(count) : T{1};
  if (op == ReduceOp::mean)
    for (auto& v : out.values()) v *= factor;

  Node<T>* xn = x.node();
  return make_result<T>(std::move(out), {x}, [=, idx = std::move(out_index)](const Tensor<T>& g) {
    if (!xn->requires_grad) return;
    T* d = xn->grad_buffer().data();
    for (std::size_t i = 0; i < idx.size(); ++i) d[i] += g[idx[i]] * factor;
  });
}

template <Scalar T>
Var<T> sum(const Var<T>& x, std::vector<std::size_t> axes) {
  return reduce(ReduceOp::sum, x, std::move(axes));
}
template <Scalar T>
Var<T> mean(const Var<T>& x, std::vector<std::size_t> axes) {
  return reduce(ReduceOp::mean, x, std::move(axes));
}
template <Scalar T>
Var<T> sum_all(const Var<T>& x) {
  std::vector<std::size_t> axes(x.dims().size());
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  return sum(x, std::move(axes));
}
template <Scalar T>
Var<T> mean_all(const Var<T>& x) {
  std::vector<std::size_t> axes(x.dims().size());
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  return mean(x, std::move(axes));
}

// -------------------------------------------------------------- structural

template <Scalar T>
Var<T> reshape(const Var<T>& x, Shape dims) {
  Tensor<T> out = x.value().reshaped(std::move(dims));
  Node<T>* xn = x.node();
  return make_result<T>(std::move(out), {x}, [=](const Tensor<T>& g) {
    detail::push_grad(xn, g.reshaped(xn->value.dims()));
  });
}

namespace detail {
/// For each output flat index, the source flat index under permutation `perm`.
inline std::vector<std::size_t> permute_map(const Shape& in, const std::vector<std::size_t>& perm, Shape& out) {
  out.resize(in.size());
  for (std::size_t i = 0; i < perm.size(); ++i) out[i] = in[perm[i]];
  const Shape is = strides_of(in);
  const Shape os = strides_of(out);
  const std::size_t n = numel(in);
  std::vector<std::size_t> src(n);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t rem = flat, s = 0;
    for (std::size_t i = 0; i < out.size(); ++i) {
      const std::size_t idx = rem / os[i];
      rem %= os[i];
      s += idx * is[perm[i]];
    }
    src[flat] = s;
  }
  return src;
}
}  // namespace detail

/// Axis permutation: output axis i is input axis perm[i].
template <Scalar T>
Var<T> permute(const Var<T>& x, const std::vector<std::size_t>& perm) {
  const Shape& xs = x.dims();
  if (perm.size() != xs.size()) throw ShapeError("permute: permutation rank mismatch for " + shape_str(xs));
  std::vector<bool> seen(perm.size(), false);
  for (std::size_t p : perm) {
    if (p >= perm.size() || seen[p]) throw ShapeError("permute: not a permutation");
    seen[p] = true;
  }
  Shape od;
  auto src = detail::permute_map(xs, perm, od);
  Tensor<T> out(od);
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = x.value()[src[i]];
  Node<T>* xn = x.node();
  return make_result<T>(std::move(out), {x}, [=, src = std::move(src)](const Tensor<T>& g) {
    if (!xn->requires_grad) return;
    T* d = xn->grad_buffer().data();
    for (std::size_t i = 0; i < src.size(); ++i) d[src[i]] += g[i];
  });
}

/// 2D transpose.
template <Scalar T>
Var<T> transpose(const Var<T>& x) {
  detail::require_rank(x.dims(), 2, "transpose");
  return permute(x, {1, 0});
}

template <Scalar T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  Shape od = parts.front().dims();
  if (axis >= od.size()) throw ShapeError("concat: axis out of range for " + shape_str(od));
  od[axis] = 0;
  for (const auto& p : parts) {
    const Shape& ps = p.dims();
    if (ps.size() != od.size()) throw ShapeError("concat: rank mismatch " + shape_str(ps));
    for (std::size_t i = 0; i < ps.size(); ++i)
      if (i != axis && ps[i] != parts.front().dims()[i])
        throw ShapeError("concat: operands disagree off-axis, " + shape_str(parts.front().dims()) + " vs " + shape_str(ps));
    od[axis] += ps[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= od[i];
  for (std::size_t i = axis + 1; i < od.size(); ++i) inner *= od[i];
  Tensor<T> out(od);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t len = p.dims()[axis] * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy(p.value().data() + o * len, p.value().data() + (o + 1) * len, out.data() + o * od[axis] * inner + off * inner);
    off += p.dims()[axis];
  }
  std::vector<Node<T>*> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  const std::size_t total = od[axis];
  return make_result<T>(std::move(out), parts, [=](const Tensor<T>& g) {
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      Node<T>* n = nodes[k];
      if (!n->requires_grad) continue;
      const std::size_t len = n->value.dims()[axis] * inner;
      T* d = n->grad_buffer().data();
      for (std::size_t o = 0; o < outer; ++o) {
        const T* src = g.data() + o * total * inner + offsets[k] * inner;
        for (std::size_t i = 0; i < len; ++i) d[o * len + i] += src[i];
      }
    }
  });
}

/// Elements [begin, end) along `axis`.
template <Scalar T>
Var<T> slice(const Var<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& xs = x.dims();
  if (axis >= xs.size() || begin >= end || end > xs[axis])
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid on axis " +
                     std::to_string(axis) + " of " + shape_str(xs));
  Shape od = xs;
  od[axis] = end - begin;
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= xs[i];
  for (std::size_t i = axis + 1; i < xs.size(); ++i) inner *= xs[i];
  Tensor<T> out(od);
  const std::size_t len = (end - begin) * inner;
  for (std::size_t o = 0; o < outer; ++o) {
    const T* src = x.value().data() + (o * xs[axis] + begin) * inner;
    std::copy(src, src + len, out.data() + o * len);
  }
  Node<T>* xn = x.node();
  const std::size_t full = xs[axis];
  return make_result<T>(std::move(out), {x}, [=](const Tensor<T>& g) {
    if (!xn->requires_grad) return;
    T* d = xn->grad_buffer().data();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < len; ++i) d[(o * full + begin) * inner + i] += g[o * len + i];
  });
}

/// Appends `count` zero slabs at the end of `axis`.
template <Scalar T>
Var<T> zero_pad(const Var<T>& x, std::size_t axis, std::size_t count) {
  if (axis >= x.dims().size()) throw ShapeError("zero_pad: axis out of range for " + shape_str(x.dims()));
  if (count == 0) return reshape(x, x.dims());
  Shape zd = x.dims();
  zd[axis] = count;
  auto zeros = Var<T>::leaf(Tensor<T>(zd));
  return concat<T>({x, zeros}, axis);
}

// ---------------------------------------------------------- normalization

/// Per-channel running statistics. Channel axis is 1.
template <Scalar T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);

  explicit BatchNormState(std::size_t channels = 1)
      : running_mean(Shape{channels}, T{0}), running_var(Shape{channels}, T{1}) {}
};

enum class Mode { train, infer };

/// x is [N×C×...]. Train mode normalizes with batch statistics (biased
/// variance) and updates the running statistics with the unbiased variance;
/// infer mode uses the running statistics.
template <Scalar T>
Var<T> batchnorm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, Tensor<T>& running_mean,
                 Tensor<T>& running_var, Mode mode, T momentum = T(0.1), T eps = T(1e-5)) {
  const Shape& xs = x.dims();
  if (xs.size() < 2) throw ShapeError("batchnorm: input must be [N x C x ...], got " + shape_str(xs));
  const std::size_t batch = xs[0], ch = xs[1];
  std::size_t inner = 1;
  for (std::size_t i = 2; i < xs.size(); ++i) inner *= xs[i];
  if (gamma.size() != ch || beta.size() != ch || running_mean.size() != ch || running_var.size() != ch)
    throw ShapeError("batchnorm: parameter length does not match channels " + std::to_string(ch));
  if (mode == Mode::train && batch < 2) throw ConfigError("batchnorm: train mode needs batch >= 2, got 1");
  const std::size_t m = batch * inner;
  const T* xd = x.value().data();

  std::vector<T> mu(ch), inv_std(ch);
  if (mode == Mode::train) {
    for (std::size_t c = 0; c < ch; ++c) {
      T s{0};
      for (std::size_t n = 0; n < batch; ++n) {
        const T* p = xd + (n * ch + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) s += p[i];
      }
      mu[c] = s / static_cast<T>(m);
      T v{0};
      for (std::size_t n = 0; n < batch; ++n) {
        const T* p = xd + (n * ch + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) v += (p[i] - mu[c]) * (p[i] - mu[c]);
      }
      const T var = v / static_cast<T>(m);
      inv_std[c] = T{1} / std::sqrt(var + eps);
      const T unbiased = m > 1 ? v / static_cast<T>(m - 1) : var;
      running_mean[c] = (T{1} - momentum) * running_mean[c] + momentum * mu[c];
      running_var[c] = (T{1} - momentum) * running_var[c] + momentum * unbiased;
    }
  } else {
    for (std::size_t c = 0; c < ch; ++c) {
      mu[c] = running_mean[c];
      inv_std[c] = T{1} / std::sqrt(running_var[c] + eps);
    }
  }

  Tensor<T> xhat(xs);
  Tensor<T> out(xs);
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t c = 0; c < ch; ++c) {
      const std::size_t off = (n * ch + c) * inner;
      const T gm = gamma.value()[c], bt = beta.value()[c];
      for (std::size_t i = 0; i < inner; ++i) {
        const T h = (xd[off + i] - mu[c]) * inv_std[c];
        xhat[off + i] = h;
        out[off + i] = gm * h + bt;
      }
    }

  Node<T>* xn = x.node();
  Node<T>* gn = gamma.node();
  Node<T>* bn = beta.node();
  const bool train = mode == Mode::train;
  return make_result<T>(std::move(out), {x, gamma, beta}, [=, xhat = std::move(xhat)](const Tensor<T>& g) {
    std::vector<T> sum_g(ch, T{0}), sum_gx(ch, T{0});
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t c = 0; c < ch; ++c) {
        const std::size_t off = (n * ch + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) {
          sum_g[c] += g[off + i];
          sum_gx[c] += g[off + i] * xhat[off + i];
        }
      }
    if (gn->requires_grad) {
      T* d = gn->grad_buffer().data();
      for (std::size_t c = 0; c < ch; ++c) d[c] += sum_gx[c];
    }
    if (bn->requires_grad) {
      T* d = bn->grad_buffer().data();
      for (std::size_t c = 0; c < ch; ++c) d[c] += sum_g[c];
    }
    if (!xn->requires_grad) return;
    T* dx = xn->grad_buffer().data();
    const T mm = static_cast<T>(m);
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t c = 0; c < ch; ++c) {
        const std::size_t off = (n * ch + c) * inner;
        const T gm = gn->value[c];
        for (std::size_t i = 0; i < inner; ++i) {
          if (train)
            dx[off + i] += gm * inv_std[c] * (g[off + i] - sum_g[c] / mm - xhat[off + i] * sum_gx[c] / mm);
          else
            dx[off + i] += gm * inv_std[c] * g[off + i];
        }
      }
  });
}

template <Scalar T>
Var<T> batchnorm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, BatchNormState<T>& state, Mode mode) {
  return batchnorm(x, gamma, beta, state.running_mean, state.running_var, mode, state.momentum, state.eps);
}

// ------------------------------------------------------------------- loss

/// Mean binary cross-entropy on logits [N] against labels in {0,1}, in the
/// log-sum-exp form max(z,0) - z*y + log(1 + exp(-|z|)).
template <Scalar T>
Var<T> bce_with_logits(const Var<T>& logits, const std::vector<T>& labels) {
  if (logits.size() != labels.size())
    throw ShapeError("bce_with_logits: " + std::to_string(logits.size()) + " logits vs " + std::to_string(labels.size()) + " labels");
  const std::size_t n = labels.size();
  T total{0};
  for (std::size_t i = 0; i < n; ++i) {
    const T z = logits.value()[i];
    if (!std::isfinite(z)) throw NumericError("bce_with_logits: non-finite logit at index " + std::to_string(i));
    total += std::max(z, T{0}) - z * labels[i] + std::log1p(std::exp(-std::abs(z)));
  }
  Node<T>* ln = logits.node();
  return make_result<T>(Tensor<T>::scalar(total / static_cast<T>(n)), {logits}, [=](const Tensor<T>& g) {
    if (!ln->requires_grad) return;
    T* d = ln->grad_buffer().data();
    for (std::size_t i = 0; i < n; ++i) d[i] += g[0] * (sigmoid_scalar(ln->value[i]) - labels[i]) / static_cast<T>(n);
  });
}

}  // namespace sfcl
