#pragma once

#include "affspace/affinity.hpp"
#include "affspace/ops.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace affspace {

inline constexpr std::uint8_t kIgnoreLabel = 255;

/// H x W class indices in [0, C) or kIgnoreLabel.
using LabelMap = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline void validate_labels(const LabelMap& labels, Index num_classes) {
  for (Index i = 0; i < labels.size(); ++i) {
    const auto v = labels.data()[i];
    if (v != kIgnoreLabel && v >= num_classes)
      throw std::out_of_range("label " + std::to_string(v) + " outside [0, " + std::to_string(num_classes) + ")");
  }
}

struct LossWeights {
  double lambda_asc = 0.001;
  double lambda_asa = 0.001;
};

enum class Domain { source, target };

class EmptySupervision : public std::runtime_error {
 public:
  EmptySupervision() : std::runtime_error("empty supervision: every pixel is ignored") {}
};

/// Pixel-averaged cross-entropy of softmax probabilities against labels;
/// ignored pixels drop out of both the sum and the normalization.
template <typename Scalar>
Var<Scalar> seg_cross_entropy(const Var<Scalar>& probs, std::span<const LabelMap> labels) {
  const auto& p = probs.value();
  detail::require_probability_tensor(p.shape(), "seg_cross_entropy");
  const Index batch = p.dim(0), ch = p.dim(1), h = p.dim(2), w = p.dim(3), hw = h * w;
  if (static_cast<Index>(labels.size()) != batch)
    throw ShapeError("seg_cross_entropy: " + std::to_string(labels.size()) + " label maps for batch of " +
                     std::to_string(batch));
  Index valid = 0;
  Scalar total = 0;
  for (Index b = 0; b < batch; ++b) {
    const auto& lab = labels[static_cast<std::size_t>(b)];
    if (lab.rows() != h || lab.cols() != w) throw ShapeError("seg_cross_entropy: label map shape mismatch");
    validate_labels(lab, ch);
    for (Index i = 0; i < hw; ++i) {
      const auto c = lab.data()[i];
      if (c == kIgnoreLabel) continue;
      total -= std::log(detail::clamp_prob(p.data()[(b * ch + c) * hw + i]));
      ++valid;
    }
  }
  if (valid == 0) throw EmptySupervision();
  const Scalar inv_valid = Scalar(1) / static_cast<Scalar>(valid);

  std::vector<LabelMap> saved(labels.begin(), labels.end());
  auto& tape = probs.tape();
  const std::size_t pi = probs.id();
  return tape.push("seg_cross_entropy", {pi}, Tensor<Scalar>({1}, {total * inv_valid}), probs.requires_grad(),
                   [=, saved = std::move(saved)](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                     const auto& pv = t.value(pi);
                     Tensor<Scalar> gp(pv.shape());
                     for (Index b = 0; b < batch; ++b)
                       for (Index i = 0; i < hw; ++i) {
                         const auto c = saved[static_cast<std::size_t>(b)].data()[i];
                         if (c == kIgnoreLabel) continue;
                         const Index k = (b * ch + c) * hw + i;
                         if (detail::inside_clamp(pv[k])) gp[k] = -g[0] * inv_valid / pv[k];
                       }
                     t.accumulate(pi, std::move(gp));
                   });
}

/// Binary cross-entropy of raw discriminator scores against the domain label
/// (source = 1, target = 0), averaged over score locations. The probability
/// sigmoid(score) is clamped before the log.
template <typename Scalar>
Var<Scalar> discriminator_loss(const Var<Scalar>& score, Domain domain) {
  const auto& s = score.value();
  const Index n = s.size();
  const Scalar inv_n = Scalar(1) / static_cast<Scalar>(n);
  const Scalar lo = static_cast<Scalar>(kProbFloor), hi = Scalar(1) - lo;
  auto sigmoid = [](Scalar v) {
    return v >= 0 ? Scalar(1) / (Scalar(1) + std::exp(-v)) : std::exp(v) / (Scalar(1) + std::exp(v));
  };
  Scalar total = 0;
  for (Index i = 0; i < n; ++i) {
    const Scalar pc = std::clamp(sigmoid(s[i]), lo, hi);
    total -= domain == Domain::source ? std::log(pc) : std::log(Scalar(1) - pc);
  }
  auto& tape = score.tape();
  const std::size_t si = score.id();
  return tape.push(domain == Domain::source ? "d_loss_source" : "d_loss_target", {si},
                   Tensor<Scalar>({1}, {total * inv_n}), score.requires_grad(),
                   [=](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                     const auto& sv = t.value(si);
                     Tensor<Scalar> gs(sv.shape());
                     for (Index i = 0; i < n; ++i) {
                       const Scalar p = sigmoid(sv[i]);
                       if (p < lo || p > hi) continue;
                       gs[i] = g[0] * inv_n * (domain == Domain::source ? p - Scalar(1) : p);
                     }
                     t.accumulate(si, std::move(gs));
                   });
}

/// Generator-side objective on target scores: the source-label loss, so that
/// minimizing it fools the discriminator.
template <typename Scalar>
Var<Scalar> adversarial_loss(const Var<Scalar>& score_target) {
  return discriminator_loss(score_target, Domain::source);
}

template <typename Scalar>
struct ObjectiveTerms {
  Var<Scalar> total;
  Var<Scalar> seg;
  Var<Scalar> asc_source;  // unset for the adversarial objective
  Var<Scalar> asc_target;
  Var<Scalar> adversarial;  // unset for the cleaning objective
};

/// seg_ce(P_s) + lambda_asc * (asc(P_s) + asc(P_t)), both asc terms weighted
/// separately.
template <typename Scalar>
ObjectiveTerms<Scalar> asc_objective(const Var<Scalar>& probs_source, std::span<const LabelMap> labels_source,
                                     const Var<Scalar>& probs_target, const LossWeights& weights,
                                     const NeighborhoodSpec& spec) {
  if (weights.lambda_asc < 0) throw std::invalid_argument("lambda_asc must be >= 0");
  ObjectiveTerms<Scalar> terms;
  terms.seg = seg_cross_entropy(probs_source, labels_source);
  terms.asc_source = asc_loss(probs_source, spec);
  terms.asc_target = asc_loss(probs_target, spec);
  const auto lambda = static_cast<Scalar>(weights.lambda_asc);
  terms.total = add(std::vector<Var<Scalar>>{terms.seg, scale(terms.asc_source, lambda), scale(terms.asc_target, lambda)});
  return terms;
}

/// seg_ce(P_s) + lambda_asa * adversarial(D(A_t)).
template <typename Scalar>
ObjectiveTerms<Scalar> asa_objective(const Var<Scalar>& probs_source, std::span<const LabelMap> labels_source,
                                     const Var<Scalar>& score_target, const LossWeights& weights) {
  if (weights.lambda_asa < 0) throw std::invalid_argument("lambda_asa must be >= 0");
  ObjectiveTerms<Scalar> terms;
  terms.seg = seg_cross_entropy(probs_source, labels_source);
  terms.adversarial = adversarial_loss(score_target);
  terms.total = add(terms.seg, scale(terms.adversarial, static_cast<Scalar>(weights.lambda_asa)));
  return terms;
}

/// Per-pixel argmax over channels; ties go to the lowest class index.
template <typename Scalar>
std::vector<LabelMap> argmax_labels(const Tensor<Scalar>& probs) {
  detail::require_probability_tensor(probs.shape(), "argmax_labels");
  const Index batch = probs.dim(0), ch = probs.dim(1), h = probs.dim(2), w = probs.dim(3), hw = h * w;
  std::vector<LabelMap> out;
  for (Index b = 0; b < batch; ++b) {
    LabelMap m(h, w);
    for (Index i = 0; i < hw; ++i) {
      Index best = 0;
      Scalar best_v = probs[(b * ch) * hw + i];
      for (Index c = 1; c < ch; ++c) {
        const Scalar v = probs[(b * ch + c) * hw + i];
        if (v > best_v) {
          best_v = v;
          best = c;
        }
      }
      m.data()[i] = static_cast<std::uint8_t>(best);
    }
    out.push_back(std::move(m));
  }
  return out;
}

/// Argmax class where the top probability strictly exceeds `threshold`,
/// kIgnoreLabel elsewhere.
template <typename Scalar>
std::vector<LabelMap> pseudo_labels(const Tensor<Scalar>& probs, double threshold = 0.9) {
  auto labels = argmax_labels(probs);
  const Index ch = probs.dim(1), hw = probs.dim(2) * probs.dim(3);
  for (std::size_t b = 0; b < labels.size(); ++b)
    for (Index i = 0; i < hw; ++i) {
      auto& l = labels[b].data()[i];
      const Scalar top = probs[(static_cast<Index>(b) * ch + l) * hw + i];
      if (!(static_cast<double>(top) > threshold)) l = kIgnoreLabel;
    }
  return labels;
}

}  // namespace affspace
