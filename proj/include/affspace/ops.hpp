#pragma once

#include "affspace/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace affspace {

namespace detail {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline void require_rank(const Shape& s, Index rank, const char* op) {
  if (static_cast<Index>(s.size()) != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(s));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution

struct Conv2dOptions {
  Index stride = 1;
  Index padding = 0;
  Index dilation = 1;
};

inline Index conv_out_extent(Index in, Index kernel, const Conv2dOptions& o) {
  return (in + 2 * o.padding - o.dilation * (kernel - 1) - 1) / o.stride + 1;
}

namespace detail {

/// Output positions [lo, hi) whose input index o*stride + offset lies in [0, n).
inline std::pair<Index, Index> valid_span(Index n_out, Index n, Index offset, Index stride) {
  const Index lo = std::min(n_out, offset >= 0 ? Index(0) : (stride - 1 - offset) / stride);
  const Index hi = offset >= n ? Index(0) : (n - 1 - offset) / stride + 1;
  return {lo, std::max(lo, std::min(hi, n_out))};
}

/// Unfolds a [B,Cin,H,W] tensor into a (Cin*k*k) x (B*Ho*Wo) matrix.
template <typename Scalar>
void im2col(const Tensor<Scalar>& x, Index k, const Conv2dOptions& o, Index ho, Index wo,
            RowMatrix<Scalar>& cols) {
  const Index batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index hw_out = ho * wo, s = o.stride;
  cols.resize(cin * k * k, batch * hw_out);
  for (Index c = 0; c < cin; ++c)
    for (Index ky = 0; ky < k; ++ky)
      for (Index kx = 0; kx < k; ++kx) {
        Scalar* row = cols.row((c * k + ky) * k + kx).data();
        const Index off = kx * o.dilation - o.padding;
        const auto [lo, hi] = valid_span(wo, w, off, s);
        for (Index b = 0; b < batch; ++b) {
          const Scalar* plane = x.data() + (b * cin + c) * h * w;
          for (Index oy = 0; oy < ho; ++oy) {
            Scalar* dst = row + b * hw_out + oy * wo;
            const Index iy = oy * s - o.padding + ky * o.dilation;
            if (iy < 0 || iy >= h) {
              std::fill(dst, dst + wo, Scalar(0));
              continue;
            }
            const Scalar* src = plane + iy * w + off;
            std::fill(dst, dst + lo, Scalar(0));
            for (Index ox = lo; ox < hi; ++ox) dst[ox] = src[ox * s];
            std::fill(dst + hi, dst + wo, Scalar(0));
          }
        }
      }
}

/// Adjoint of im2col: scatters column gradients back onto the input grid.
template <typename Scalar>
void col2im(const RowMatrix<Scalar>& cols, Index k, const Conv2dOptions& o, Index ho, Index wo,
            Tensor<Scalar>& dx) {
  const Index batch = dx.dim(0), cin = dx.dim(1), h = dx.dim(2), w = dx.dim(3);
  const Index hw_out = ho * wo, s = o.stride;
  for (Index c = 0; c < cin; ++c)
    for (Index ky = 0; ky < k; ++ky)
      for (Index kx = 0; kx < k; ++kx) {
        const Scalar* row = cols.row((c * k + ky) * k + kx).data();
        const Index off = kx * o.dilation - o.padding;
        const auto [lo, hi] = valid_span(wo, w, off, s);
        for (Index b = 0; b < batch; ++b) {
          Scalar* plane = dx.data() + (b * cin + c) * h * w;
          for (Index oy = 0; oy < ho; ++oy) {
            const Index iy = oy * s - o.padding + ky * o.dilation;
            if (iy < 0 || iy >= h) continue;
            const Scalar* src = row + b * hw_out + oy * wo;
            Scalar* dst = plane + iy * w + off;
            for (Index ox = lo; ox < hi; ++ox) dst[ox * s] += src[ox];
          }
        }
      }
}

}  // namespace detail

/// 2-d cross-correlation over [B,Cin,H,W] with a [Cout,Cin,k,k] kernel, lowered
/// to one GEMM over the whole batch.
template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& input, const Var<Scalar>& weight, const Var<Scalar>& bias,
                   const Conv2dOptions& opts) {
  using detail::RowMatrix;
  const auto& x = input.value();
  const auto& wt = weight.value();
  detail::require_rank(x.shape(), 4, "conv2d input");
  detail::require_rank(wt.shape(), 4, "conv2d weight");
  const Index batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index cout = wt.dim(0), k = wt.dim(2);
  if (wt.dim(1) != cin)
    throw ShapeError("conv2d: input has " + std::to_string(cin) + " channels, weight expects " +
                     std::to_string(wt.dim(1)));
  if (wt.dim(3) != k) throw ShapeError("conv2d: kernel must be square");
  if (bias.value().shape() != Shape{cout}) throw ShapeError("conv2d: bias must have shape [Cout]");
  if (k < 1 || opts.stride < 1 || opts.dilation < 1 || opts.padding < 0)
    throw std::invalid_argument("conv2d: kernel, stride and dilation must be >= 1, padding >= 0");
  const Index ho = conv_out_extent(h, k, opts), wo = conv_out_extent(w, k, opts);
  if (ho < 1 || wo < 1 || h + 2 * opts.padding < opts.dilation * (k - 1) + 1 ||
      w + 2 * opts.padding < opts.dilation * (k - 1) + 1)
    throw ShapeError("conv2d: empty output extent for input " + shape_str(x.shape()));

  const Index kdim = cin * k * k, hw_out = ho * wo;
  auto cols = std::make_shared<RowMatrix<Scalar>>();
  detail::im2col(x, k, opts, ho, wo, *cols);
  Eigen::Map<const RowMatrix<Scalar>> wmat(wt.data(), cout, kdim);
  RowMatrix<Scalar> prod(cout, batch * hw_out);
  prod.noalias() = wmat * (*cols);

  Tensor<Scalar> out({batch, cout, ho, wo});
  const Scalar* b = bias.value().data();
  for (Index n = 0; n < batch; ++n)
    for (Index co = 0; co < cout; ++co) {
      Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>> dst(out.data() + (n * cout + co) * hw_out, hw_out);
      dst = prod.row(co).segment(n * hw_out, hw_out).transpose().array() + b[co];
    }

  auto& tape = input.tape();
  const bool need = tape.any_requires_grad({input, weight, bias});
  const std::size_t xi = input.id(), wi = weight.id(), bi = bias.id();
  const bool need_w = weight.requires_grad();
  if (!need_w) cols.reset();  // only the weight gradient reads the unfolded input
  return tape.push(
      "conv2d", {xi, wi, bi}, std::move(out), need,
      [=](Tape<Scalar>& t, const Tensor<Scalar>& g) {
        RowMatrix<Scalar> gmat(cout, batch * hw_out);
        for (Index n = 0; n < batch; ++n)
          for (Index co = 0; co < cout; ++co)
            gmat.row(co).segment(n * hw_out, hw_out) =
                Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(g.data() + (n * cout + co) * hw_out, hw_out);
        if (t.requires_grad(bi)) {
          Tensor<Scalar> gb({cout});
          Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(gb.data(), cout) = gmat.rowwise().sum();
          t.accumulate(bi, std::move(gb));
        }
        if (t.requires_grad(wi)) {
          Tensor<Scalar> gw(t.value(wi).shape());
          Eigen::Map<RowMatrix<Scalar>>(gw.data(), cout, kdim).noalias() = gmat * cols->transpose();
          t.accumulate(wi, std::move(gw));
        }
        if (t.requires_grad(xi)) {
          Eigen::Map<const RowMatrix<Scalar>> wm(t.value(wi).data(), cout, kdim);
          RowMatrix<Scalar> gcols(kdim, batch * hw_out);
          gcols.noalias() = wm.transpose() * gmat;
          Tensor<Scalar> gx(t.value(xi).shape());
          detail::col2im(gcols, k, opts, ho, wo, gx);
          t.accumulate(xi, std::move(gx));
        }
      });
}

// ---------------------------------------------------------------------------
// Elementwise

enum class UnaryKind { relu, leaky_relu, log, exp, neg, add_const, mul_const, clamp, sigmoid };

/// A unary elementwise function plus its (up to two) parameters.
template <typename Scalar>
struct Unary {
  UnaryKind kind;
  Scalar a = 0;
  Scalar b = 0;

  static Unary relu() { return {UnaryKind::relu}; }
  static Unary leaky_relu(Scalar slope) { return {UnaryKind::leaky_relu, slope}; }
  static Unary log() { return {UnaryKind::log}; }
  static Unary exp() { return {UnaryKind::exp}; }
  static Unary neg() { return {UnaryKind::neg}; }
  static Unary add_const(Scalar c) { return {UnaryKind::add_const, c}; }
  static Unary mul_const(Scalar c) { return {UnaryKind::mul_const, c}; }
  static Unary clamp(Scalar lo, Scalar hi) { return {UnaryKind::clamp, lo, hi}; }
  static Unary sigmoid() { return {UnaryKind::sigmoid}; }
};

template <typename Scalar>
Var<Scalar> apply_elementwise(const Var<Scalar>& input, Unary<Scalar> f) {
  const auto& x = input.value().array();
  Tensor<Scalar> out(input.shape());
  auto& y = out.array();
  switch (f.kind) {
    case UnaryKind::relu: y = x.max(Scalar(0)); break;
    case UnaryKind::leaky_relu: y = (x >= Scalar(0)).select(x, f.a * x); break;
    case UnaryKind::log:
      if ((x <= Scalar(0)).any()) throw std::domain_error("log of nonpositive value");
      y = x.log();
      break;
    case UnaryKind::exp: y = x.exp(); break;
    case UnaryKind::neg: y = -x; break;
    case UnaryKind::add_const: y = x + f.a; break;
    case UnaryKind::mul_const: y = x * f.a; break;
    case UnaryKind::clamp: y = x.max(f.a).min(f.b); break;
    case UnaryKind::sigmoid: y = Scalar(1) / (Scalar(1) + (-x).exp()); break;
  }
  auto& tape = input.tape();
  const std::size_t xi = input.id();
  const std::size_t yi = tape.size();
  return tape.push("unary", {xi}, std::move(out), input.requires_grad(),
                   [=](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                     const auto& xv = t.value(xi).array();
                     const auto& yv = t.value(yi).array();
                     Tensor<Scalar> gx(g.shape());
                     auto& d = gx.array();
                     const auto& ga = g.array();
                     switch (f.kind) {
                       case UnaryKind::relu: d = (xv > Scalar(0)).select(ga, Scalar(0)); break;
                       case UnaryKind::leaky_relu: d = (xv >= Scalar(0)).select(ga, f.a * ga); break;
                       case UnaryKind::log: d = ga / xv; break;
                       case UnaryKind::exp: d = ga * yv; break;
                       case UnaryKind::neg: d = -ga; break;
                       case UnaryKind::add_const: d = ga; break;
                       case UnaryKind::mul_const: d = ga * f.a; break;
                       case UnaryKind::clamp:
                         d = (xv >= f.a && xv <= f.b).select(ga, Scalar(0));
                         break;
                       case UnaryKind::sigmoid: d = ga * yv * (Scalar(1) - yv); break;
                     }
                     t.accumulate(xi, std::move(gx));
                   });
}

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& x) { return apply_elementwise(x, Unary<Scalar>::relu()); }
template <typename Scalar>
Var<Scalar> leaky_relu(const Var<Scalar>& x, Scalar slope) {
  return apply_elementwise(x, Unary<Scalar>::leaky_relu(slope));
}
template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& x, Scalar c) { return apply_elementwise(x, Unary<Scalar>::mul_const(c)); }

/// Elementwise sum of equally shaped operands.
template <typename Scalar>
Var<Scalar> add(const std::vector<Var<Scalar>>& terms) {
  if (terms.empty()) throw std::invalid_argument("add: no operands");
  Tensor<Scalar> out = terms.front().value();
  std::vector<std::size_t> ids{terms.front().id()};
  bool need = terms.front().requires_grad();
  for (std::size_t i = 1; i < terms.size(); ++i) {
    if (terms[i].shape() != out.shape())
      throw ShapeError("add: shape " + shape_str(terms[i].shape()) + " vs " + shape_str(out.shape()));
    out.array() += terms[i].value().array();
    ids.push_back(terms[i].id());
    need = need || terms[i].requires_grad();
  }
  auto& tape = terms.front().tape();
  return tape.push("add", ids, std::move(out), need, [ids](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    for (std::size_t id : ids) t.accumulate(id, g);
  });
}

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  return add(std::vector<Var<Scalar>>{a, b});
}

// ---------------------------------------------------------------------------
// Softmax over the channel axis of [B,C,H,W]

template <typename Scalar>
Var<Scalar> softmax_channels(const Var<Scalar>& logits) {
  const auto& x = logits.value();
  detail::require_rank(x.shape(), 4, "softmax_channels");
  const Index batch = x.dim(0), ch = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (ch < 2) throw ShapeError("softmax_channels: need at least 2 channels");
  Tensor<Scalar> out(x.shape());
  for (Index b = 0; b < batch; ++b) {
    using Plane = Eigen::Map<const detail::RowMatrix<Scalar>>;
    Plane in(x.data() + b * ch * hw, ch, hw);
    Eigen::Map<detail::RowMatrix<Scalar>> y(out.data() + b * ch * hw, ch, hw);
    const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> mx = in.colwise().maxCoeff();
    y = (in.rowwise() - mx).array().exp().matrix();
    const Eigen::Array<Scalar, 1, Eigen::Dynamic> denom = y.colwise().sum().array();
    y.array().rowwise() /= denom;
  }
  auto& tape = logits.tape();
  const std::size_t xi = logits.id(), yi = tape.size();
  return tape.push("softmax", {xi}, std::move(out), logits.requires_grad(),
                   [=](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                     const auto& y = t.value(yi);
                     Tensor<Scalar> gx(g.shape());
                     for (Index b = 0; b < batch; ++b) {
                       using CMap = Eigen::Map<const detail::RowMatrix<Scalar>>;
                       CMap yb(y.data() + b * ch * hw, ch, hw), gb(g.data() + b * ch * hw, ch, hw);
                       Eigen::Map<detail::RowMatrix<Scalar>> dx(gx.data() + b * ch * hw, ch, hw);
                       const Eigen::Array<Scalar, 1, Eigen::Dynamic> dot =
                           (yb.array() * gb.array()).colwise().sum();
                       dx.array() = yb.array() * (gb.array().rowwise() - dot);
                     }
                     t.accumulate(xi, std::move(gx));
                   });
}

// ---------------------------------------------------------------------------
// Bilinear resize, half-pixel (align-corners-false) convention

namespace detail {

struct LerpTap {
  Index lo, hi;
  double frac;
};

inline std::vector<LerpTap> lerp_taps(Index in, Index out) {
  std::vector<LerpTap> taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (Index d = 0; d < out; ++d) {
    double src = (static_cast<double>(d) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    Index lo = static_cast<Index>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    const Index hi = std::min(lo + 1, in - 1);
    taps[static_cast<std::size_t>(d)] = {lo, hi, src - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace detail

template <typename Scalar>
Var<Scalar> upsample_bilinear(const Var<Scalar>& input, Index out_h, Index out_w) {
  const auto& x = input.value();
  detail::require_rank(x.shape(), 4, "upsample_bilinear");
  const Index batch = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (out_h <= 0 || out_w <= 0) throw ShapeError("upsample_bilinear: zero-sized target");
  if (out_h < h || out_w < w) throw ShapeError("upsample_bilinear: target smaller than input");
  const auto ty = detail::lerp_taps(h, out_h), tx = detail::lerp_taps(w, out_w);
  Tensor<Scalar> out({batch, ch, out_h, out_w});
  for (Index p = 0; p < batch * ch; ++p) {
    const Scalar* src = x.data() + p * h * w;
    Scalar* dst = out.data() + p * out_h * out_w;
    for (Index oy = 0; oy < out_h; ++oy) {
      const auto& a = ty[static_cast<std::size_t>(oy)];
      const Scalar fy = static_cast<Scalar>(a.frac);
      for (Index ox = 0; ox < out_w; ++ox) {
        const auto& c = tx[static_cast<std::size_t>(ox)];
        const Scalar fx = static_cast<Scalar>(c.frac);
        const Scalar top = src[a.lo * w + c.lo] * (1 - fx) + src[a.lo * w + c.hi] * fx;
        const Scalar bot = src[a.hi * w + c.lo] * (1 - fx) + src[a.hi * w + c.hi] * fx;
        dst[oy * out_w + ox] = top * (1 - fy) + bot * fy;
      }
    }
  }
  auto& tape = input.tape();
  const std::size_t xi = input.id();
  return tape.push("upsample_bilinear", {xi}, std::move(out), input.requires_grad(),
                   [=](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                     Tensor<Scalar> gx(t.value(xi).shape());
                     for (Index p = 0; p < batch * ch; ++p) {
                       const Scalar* gs = g.data() + p * out_h * out_w;
                       Scalar* d = gx.data() + p * h * w;
                       for (Index oy = 0; oy < out_h; ++oy) {
                         const auto& a = ty[static_cast<std::size_t>(oy)];
                         const Scalar fy = static_cast<Scalar>(a.frac);
                         for (Index ox = 0; ox < out_w; ++ox) {
                           const auto& c = tx[static_cast<std::size_t>(ox)];
                           const Scalar fx = static_cast<Scalar>(c.frac);
                           const Scalar v = gs[oy * out_w + ox];
                           d[a.lo * w + c.lo] += v * (1 - fy) * (1 - fx);
                           d[a.lo * w + c.hi] += v * (1 - fy) * fx;
                           d[a.hi * w + c.lo] += v * fy * (1 - fx);
                           d[a.hi * w + c.hi] += v * fy * fx;
                         }
                       }
                     }
                     t.accumulate(xi, std::move(gx));
                   });
}

// ---------------------------------------------------------------------------
// Reductions

enum class ReduceKind { sum, mean };

/// Reduces over `axes` (all axes when empty). Reduced axes are dropped; a full
/// reduction yields shape [1].
template <typename Scalar>
Var<Scalar> reduce(const Var<Scalar>& input, ReduceKind kind, std::vector<Index> axes = {}) {
  const Shape& in_shape = input.shape();
  const Index rank = static_cast<Index>(in_shape.size());
  std::vector<bool> reduced(static_cast<std::size_t>(rank), axes.empty());
  for (Index a : axes) {
    if (a < 0 || a >= rank) throw ShapeError("reduce: axis " + std::to_string(a) + " out of range");
    reduced[static_cast<std::size_t>(a)] = true;
  }
  Shape out_shape;
  Index count = 1;
  for (Index a = 0; a < rank; ++a) {
    if (reduced[static_cast<std::size_t>(a)])
      count *= in_shape[static_cast<std::size_t>(a)];
    else
      out_shape.push_back(in_shape[static_cast<std::size_t>(a)]);
  }
  if (out_shape.empty()) out_shape = {1};

  // Maps every input flat index to its output flat index (partial reductions).
  const Index n = input.value().size();
  const bool full = out_shape == Shape{1} && count == n;
  auto target = std::make_shared<std::vector<Index>>(full ? 0 : static_cast<std::size_t>(n));
  if (!full) {
    std::vector<Index> idx(static_cast<std::size_t>(rank), 0);
    for (Index i = 0; i < n; ++i) {
      Index o = 0;
      for (Index a = 0; a < rank; ++a)
        if (!reduced[static_cast<std::size_t>(a)]) o = o * in_shape[static_cast<std::size_t>(a)] + idx[static_cast<std::size_t>(a)];
      (*target)[static_cast<std::size_t>(i)] = o;
      for (Index a = rank - 1; a >= 0; --a) {
        if (++idx[static_cast<std::size_t>(a)] < in_shape[static_cast<std::size_t>(a)]) break;
        idx[static_cast<std::size_t>(a)] = 0;
      }
    }
  }
  const Scalar factor = kind == ReduceKind::mean ? Scalar(1) / static_cast<Scalar>(count) : Scalar(1);
  Tensor<Scalar> out(out_shape);
  const auto& x = input.value();
  if (full) {
    out[0] = x.array().sum() * factor;
  } else {
    for (Index i = 0; i < n; ++i) out[(*target)[static_cast<std::size_t>(i)]] += x[i];
    out.array() *= factor;
  }
  auto& tape = input.tape();
  const std::size_t xi = input.id();
  return tape.push(kind == ReduceKind::mean ? "mean" : "sum", {xi}, std::move(out), input.requires_grad(),
                   [=](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                     if (full) {
                       t.accumulate(xi, Tensor<Scalar>(t.value(xi).shape(), g[0] * factor));
                       return;
                     }
                     Tensor<Scalar> gx(t.value(xi).shape());
                     for (Index i = 0; i < n; ++i) gx[i] = g[(*target)[static_cast<std::size_t>(i)]] * factor;
                     t.accumulate(xi, std::move(gx));
                   });
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& x) { return reduce(x, ReduceKind::sum); }
template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& x) { return reduce(x, ReduceKind::mean); }

}  // namespace affspace
