#pragma once

#include "affspace/autodiff.hpp"

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

namespace affspace {

/// Probabilities are clamped to [kProbFloor, 1 - kProbFloor] before any log.
inline constexpr double kProbFloor = 1e-7;
/// Added to the product of norms in every cosine similarity.
inline constexpr double kCosineGuard = 1e-12;

struct Offset {
  int dy;
  int dx;
  friend bool operator==(const Offset&, const Offset&) = default;
};

/// The neighbor set N(x). Offsets run up, down, left, right, then the
/// diagonals clockwise from up-left, so channel blocks are reproducible.
class NeighborhoodSpec {
 public:
  explicit NeighborhoodSpec(int connectivity = 8) : connectivity_(connectivity) {
    if (connectivity != 4 && connectivity != 8)
      throw std::invalid_argument("connectivity must be 4 or 8, got " + std::to_string(connectivity));
    offsets_ = {{-1, 0}, {1, 0}, {0, -1}, {0, 1}};
    if (connectivity == 8) {
      offsets_.push_back({-1, -1});
      offsets_.push_back({-1, 1});
      offsets_.push_back({1, 1});
      offsets_.push_back({1, -1});
    }
  }

  int connectivity() const { return connectivity_; }
  Index size() const { return static_cast<Index>(offsets_.size()); }
  const std::vector<Offset>& offsets() const { return offsets_; }

  /// Number of in-bounds neighbors of (y, x) on an h x w grid.
  int valid_count(Index y, Index x, Index h, Index w) const {
    int n = 0;
    for (const auto& o : offsets_)
      n += inside(y + o.dy, x + o.dx, h, w);
    return n;
  }

  static bool inside(Index y, Index x, Index h, Index w) { return y >= 0 && y < h && x >= 0 && x < w; }

 private:
  int connectivity_;
  std::vector<Offset> offsets_;
};

/// Counts pairwise neighbor evaluations, for complexity bookkeeping.
struct OpCounter {
  std::int64_t pair_evaluations = 0;
};

template <typename Scalar>
struct AffinityMap {
  Tensor<Scalar> values;                                                  // [H,W]
  Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> valid_count;  // H x W
};

namespace detail {

inline void require_probability_tensor(const Shape& s, const char* op) {
  if (s.size() != 4) throw ShapeError(std::string(op) + ": expected [B,C,H,W], got " + shape_str(s));
}

template <typename Scalar>
Scalar clamp_prob(Scalar p) {
  const Scalar lo = static_cast<Scalar>(kProbFloor), hi = Scalar(1) - static_cast<Scalar>(kProbFloor);
  return p < lo ? lo : (p > hi ? hi : p);
}

template <typename Scalar>
bool inside_clamp(Scalar p) {
  return p >= static_cast<Scalar>(kProbFloor) && p <= Scalar(1) - static_cast<Scalar>(kProbFloor);
}

/// Per-pixel L2 norms of the channel vectors of one batch item, laid out h*w.
template <typename Scalar>
std::vector<Scalar> channel_norms(const Tensor<Scalar>& p, Index b) {
  const Index ch = p.dim(1), hw = p.dim(2) * p.dim(3);
  std::vector<Scalar> norms(static_cast<std::size_t>(hw), Scalar(0));
  const Scalar* base = p.data() + b * ch * hw;
  for (Index c = 0; c < ch; ++c)
    for (Index i = 0; i < hw; ++i) norms[static_cast<std::size_t>(i)] += base[c * hw + i] * base[c * hw + i];
  for (auto& v : norms) v = std::sqrt(v);
  return norms;
}

}  // namespace detail

/// Cosine similarity with the guarded denominator used throughout.
template <typename Derived1, typename Derived2>
typename Derived1::Scalar pair_cosine(const Eigen::DenseBase<Derived1>& px, const Eigen::DenseBase<Derived2>& pn) {
  using Scalar = typename Derived1::Scalar;
  const Scalar dot = (px.derived().array() * pn.derived().array()).sum();
  const Scalar denom = std::sqrt(px.derived().array().square().sum()) * std::sqrt(pn.derived().array().square().sum()) +
                       static_cast<Scalar>(kCosineGuard);
  return dot / denom;
}

/// Componentwise two-outcome KL divergence between neighboring class
/// probabilities, after clamping both vectors.
template <typename Derived1, typename Derived2>
Eigen::Array<typename Derived1::Scalar, Eigen::Dynamic, 1> binary_kl_vector(const Eigen::DenseBase<Derived1>& px,
                                                                           const Eigen::DenseBase<Derived2>& pn) {
  using Scalar = typename Derived1::Scalar;
  if (px.size() != pn.size()) throw ShapeError("binary_kl_vector: length mismatch");
  Eigen::Array<Scalar, Eigen::Dynamic, 1> out(px.size());
  for (Index i = 0; i < px.size(); ++i) {
    const Scalar a = detail::clamp_prob<Scalar>(px.derived().coeff(i));
    const Scalar b = detail::clamp_prob<Scalar>(pn.derived().coeff(i));
    out[i] = a * std::log(a / b) + (1 - a) * std::log((1 - a) / (1 - b));
  }
  return out;
}

/// Mean cosine similarity between each pixel's prediction and its in-bounds
/// neighbors, one map per batch item.
template <typename Scalar>
std::vector<AffinityMap<Scalar>> cosine_affinity(const Tensor<Scalar>& p, const NeighborhoodSpec& spec) {
  detail::require_probability_tensor(p.shape(), "cosine_affinity");
  const Index batch = p.dim(0), ch = p.dim(1), h = p.dim(2), w = p.dim(3), hw = h * w;
  std::vector<AffinityMap<Scalar>> maps;
  maps.reserve(static_cast<std::size_t>(batch));
  for (Index b = 0; b < batch; ++b) {
    const auto norms = detail::channel_norms(p, b);
    const Scalar* base = p.data() + b * ch * hw;
    AffinityMap<Scalar> m{Tensor<Scalar>({h, w}), decltype(AffinityMap<Scalar>::valid_count)::Zero(h, w)};
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) {
        const Index i = y * w + x;
        Scalar acc = 0;
        int count = 0;
        for (const auto& o : spec.offsets()) {
          const Index ny = y + o.dy, nx = x + o.dx;
          if (!NeighborhoodSpec::inside(ny, nx, h, w)) continue;
          const Index j = ny * w + nx;
          Scalar dot = 0;
          for (Index c = 0; c < ch; ++c) dot += base[c * hw + i] * base[c * hw + j];
          acc += dot / (norms[static_cast<std::size_t>(i)] * norms[static_cast<std::size_t>(j)] + static_cast<Scalar>(kCosineGuard));
          ++count;
        }
        m.values[i] = count ? acc / static_cast<Scalar>(count) : Scalar(1);
        m.valid_count(y, x) = count;
      }
    maps.push_back(std::move(m));
  }
  return maps;
}

/// Ground-truth-free model-selection score: the mean of the cosine affinity
/// maps over every pixel of every batch item.
template <typename Scalar>
double mean_affinity(const Tensor<Scalar>& p, const NeighborhoodSpec& spec) {
  const auto maps = cosine_affinity(p, spec);
  double total = 0;
  Index count = 0;
  for (const auto& m : maps) {
    total += m.values.array().template cast<double>().sum();
    count += m.values.size();
  }
  return total / static_cast<double>(count);
}

/// Affinity space cleaning loss: mean over pixels of the mean (over in-bounds
/// neighbors) of 1 - cos(P_x, P_n). Lies in [0, 1] for softmax inputs.
template <typename Scalar>
Var<Scalar> asc_loss(const Var<Scalar>& probs, const NeighborhoodSpec& spec, OpCounter* counter = nullptr) {
  const auto& p = probs.value();
  detail::require_probability_tensor(p.shape(), "asc_loss");
  const Index batch = p.dim(0), ch = p.dim(1), h = p.dim(2), w = p.dim(3), hw = h * w;
  const Scalar inv_pixels = Scalar(1) / static_cast<Scalar>(batch * hw);

  double loss = 0;
  for (Index b = 0; b < batch; ++b) {
    const auto norms = detail::channel_norms(p, b);
    const Scalar* base = p.data() + b * ch * hw;
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) {
        const Index i = y * w + x;
        Scalar acc = 0;
        int count = 0;
        for (const auto& o : spec.offsets()) {
          const Index ny = y + o.dy, nx = x + o.dx;
          if (!NeighborhoodSpec::inside(ny, nx, h, w)) continue;
          const Index j = ny * w + nx;
          Scalar dot = 0;
          for (Index c = 0; c < ch; ++c) dot += base[c * hw + i] * base[c * hw + j];
          acc += Scalar(1) - dot / (norms[static_cast<std::size_t>(i)] * norms[static_cast<std::size_t>(j)] +
                                    static_cast<Scalar>(kCosineGuard));
          ++count;
        }
        if (counter) counter->pair_evaluations += count;
        if (count) loss += static_cast<double>(acc) / count;
      }
  }
  loss /= static_cast<double>(batch * hw);

  auto& tape = probs.tape();
  const std::size_t pi = probs.id();
  return tape.push(
      "asc_loss", {pi}, Tensor<Scalar>({1}, {static_cast<Scalar>(loss)}), probs.requires_grad(),
      [=](Tape<Scalar>& t, const Tensor<Scalar>& g) {
        const auto& pv = t.value(pi);
        Tensor<Scalar> gp(pv.shape());
        for (Index b = 0; b < batch; ++b) {
          const auto norms = detail::channel_norms(pv, b);
          const Scalar* base = pv.data() + b * ch * hw;
          Scalar* gbase = gp.data() + b * ch * hw;
          for (Index y = 0; y < h; ++y)
            for (Index x = 0; x < w; ++x) {
              const int count = spec.valid_count(y, x, h, w);
              if (!count) continue;
              const Index i = y * w + x;
              const Scalar weight = -g[0] * inv_pixels / static_cast<Scalar>(count);
              const Scalar na = norms[static_cast<std::size_t>(i)];
              for (const auto& o : spec.offsets()) {
                const Index ny = y + o.dy, nx = x + o.dx;
                if (!NeighborhoodSpec::inside(ny, nx, h, w)) continue;
                const Index j = ny * w + nx;
                const Scalar nb = norms[static_cast<std::size_t>(j)];
                Scalar dot = 0;
                for (Index c = 0; c < ch; ++c) dot += base[c * hw + i] * base[c * hw + j];
                const Scalar denom = na * nb + static_cast<Scalar>(kCosineGuard);
                const Scalar inv_d = Scalar(1) / denom;
                const Scalar ca = na > 0 ? dot * nb / (na * denom * denom) : Scalar(0);
                const Scalar cb = nb > 0 ? dot * na / (nb * denom * denom) : Scalar(0);
                for (Index c = 0; c < ch; ++c) {
                  const Scalar pa = base[c * hw + i], pb = base[c * hw + j];
                  gbase[c * hw + i] += weight * (pb * inv_d - ca * pa);
                  gbase[c * hw + j] += weight * (pa * inv_d - cb * pb);
                }
              }
            }
        }
        t.accumulate(pi, std::move(gp));
      });
}

/// The N*C-channel affinity space: channel block n holds the binary-KL vector
/// between each pixel and its neighbor at offset n. Out-of-bounds neighbors
/// give an all-zero block.
template <typename Scalar>
Var<Scalar> build_affinity_space(const Var<Scalar>& probs, const NeighborhoodSpec& spec,
                                 OpCounter* counter = nullptr) {
  const auto& p = probs.value();
  detail::require_probability_tensor(p.shape(), "build_affinity_space");
  const Index batch = p.dim(0), ch = p.dim(1), h = p.dim(2), w = p.dim(3), hw = h * w;
  const Index nn = spec.size();
  Tensor<Scalar> out({batch, nn * ch, h, w});
  for (Index b = 0; b < batch; ++b)
    for (Index n = 0; n < nn; ++n) {
      const auto& o = spec.offsets()[static_cast<std::size_t>(n)];
      for (Index c = 0; c < ch; ++c) {
        const Scalar* plane = p.data() + (b * ch + c) * hw;
        Scalar* dst = out.data() + (b * nn * ch + n * ch + c) * hw;
        for (Index y = 0; y < h; ++y) {
          const Index ny = y + o.dy;
          if (ny < 0 || ny >= h) continue;
          for (Index x = 0; x < w; ++x) {
            const Index nx = x + o.dx;
            if (nx < 0 || nx >= w) continue;
            const Scalar a = detail::clamp_prob(plane[y * w + x]);
            const Scalar bn = detail::clamp_prob(plane[ny * w + nx]);
            dst[y * w + x] = a * std::log(a / bn) + (1 - a) * std::log((1 - a) / (1 - bn));
          }
        }
      }
      if (counter)
        for (Index y = 0; y < h; ++y)
          for (Index x = 0; x < w; ++x) counter->pair_evaluations += NeighborhoodSpec::inside(y + o.dy, x + o.dx, h, w);
    }

  auto& tape = probs.tape();
  const std::size_t pi = probs.id();
  return tape.push(
      "affinity_space", {pi}, std::move(out), probs.requires_grad(),
      [=](Tape<Scalar>& t, const Tensor<Scalar>& g) {
        const auto& pv = t.value(pi);
        Tensor<Scalar> gp(pv.shape());
        for (Index b = 0; b < batch; ++b)
          for (Index n = 0; n < nn; ++n) {
            const auto& o = spec.offsets()[static_cast<std::size_t>(n)];
            for (Index c = 0; c < ch; ++c) {
              const Scalar* plane = pv.data() + (b * ch + c) * hw;
              const Scalar* gs = g.data() + (b * nn * ch + n * ch + c) * hw;
              Scalar* gd = gp.data() + (b * ch + c) * hw;
              for (Index y = 0; y < h; ++y) {
                const Index ny = y + o.dy;
                if (ny < 0 || ny >= h) continue;
                for (Index x = 0; x < w; ++x) {
                  const Index nx = x + o.dx;
                  if (nx < 0 || nx >= w) continue;
                  const Scalar ra = plane[y * w + x], rb = plane[ny * w + nx];
                  const Scalar a = detail::clamp_prob(ra), bn = detail::clamp_prob(rb);
                  const Scalar gv = gs[y * w + x];
                  if (detail::inside_clamp(ra))
                    gd[y * w + x] += gv * (std::log(a / bn) - std::log((1 - a) / (1 - bn)));
                  if (detail::inside_clamp(rb))
                    gd[ny * w + nx] += gv * ((1 - a) / (1 - bn) - a / bn);
                }
              }
            }
          }
        t.accumulate(pi, std::move(gp));
      });
}

}  // namespace affspace
