#pragma once

#include "affspace/ops.hpp"

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace affspace {

/// Ordered, named parameter tensors.
template <typename Scalar>
class Params {
 public:
  void add(std::string name, Tensor<Scalar> value) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter " + name);
    index_[name] = names_.size();
    names_.push_back(std::move(name));
    values_.push_back(std::move(value));
  }

  std::size_t size() const { return names_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  Tensor<Scalar>& operator[](std::size_t i) { return values_.at(i); }
  const Tensor<Scalar>& operator[](std::size_t i) const { return values_.at(i); }
  Tensor<Scalar>& operator[](const std::string& name) { return values_.at(index_of(name)); }
  const Tensor<Scalar>& operator[](const std::string& name) const { return values_.at(index_of(name)); }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
    return it->second;
  }

  Index numel() const {
    Index n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }

  /// Same names and shapes, zero-filled.
  Params zeros_like() const {
    Params out;
    for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], Tensor<Scalar>(values_[i].shape()));
    return out;
  }

  template <typename To>
  Params<To> cast() const {
    Params<To> out;
    for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], values_[i].template cast<To>());
    return out;
  }

  friend bool operator==(const Params& a, const Params& b) { return a.names_ == b.names_ && a.values_ == b.values_; }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<Scalar>> values_;
  std::map<std::string, std::size_t> index_;
};

/// Parameters placed on a tape as leaves, in Params order.
template <typename Scalar>
struct BoundParams {
  const Params<Scalar>* params = nullptr;
  std::vector<Var<Scalar>> vars;

  const Var<Scalar>& operator[](const std::string& name) const { return vars.at(params->index_of(name)); }

  Params<Scalar> grads() const {
    Params<Scalar> out;
    for (std::size_t i = 0; i < vars.size(); ++i) out.add(params->name(i), vars[i].grad());
    return out;
  }
};

template <typename Scalar>
BoundParams<Scalar> bind(Tape<Scalar>& tape, const Params<Scalar>& params, bool requires_grad) {
  BoundParams<Scalar> b{&params, {}};
  b.vars.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) b.vars.push_back(tape.leaf(params[i], requires_grad));
  return b;
}

inline bool is_bias(const std::string& name) { return name.size() >= 5 && name.compare(name.size() - 5, 5, ".bias") == 0; }

// ---------------------------------------------------------------------------

/// Small dilated segmentation network: a strided/dilated 3x3 trunk, a summed
/// pyramid of dilated 3x3 classifier branches, and bilinear upsampling back
/// to the input size.
struct SegNetConfig {
  Index input_channels = 3;
  Index num_classes = 5;
  std::vector<Index> widths{32, 64, 64, 64};
  std::vector<Index> dilations{1, 2, 4, 6};
  Index output_stride = 4;

  Index strided_stages() const {
    Index s = 0;
    while ((Index{1} << s) < output_stride) ++s;
    return s;
  }

  void validate() const {
    if (num_classes < 2) throw std::invalid_argument("SegNetConfig: num_classes must be >= 2");
    if (input_channels < 1) throw std::invalid_argument("SegNetConfig: input_channels must be >= 1");
    if (output_stride != 1 && output_stride != 2 && output_stride != 4 && output_stride != 8)
      throw std::invalid_argument("SegNetConfig: output_stride must be 1, 2, 4 or 8");
    if (strided_stages() > static_cast<Index>(widths.size()))
      throw std::invalid_argument("SegNetConfig: not enough trunk stages for the output stride");
    if (dilations.empty()) throw std::invalid_argument("SegNetConfig: dilations must be nonempty");
    for (std::size_t i = 0; i < dilations.size(); ++i)
      if (dilations[i] < 1 || (i && dilations[i] <= dilations[i - 1]))
        throw std::invalid_argument("SegNetConfig: dilations must be positive and strictly increasing");
    for (Index w : widths)
      if (w < 1) throw std::invalid_argument("SegNetConfig: widths must be positive");
  }

  // Stride and dilation of trunk stage i. Stages after the strided ones keep
  // resolution and grow their dilation instead.
  Conv2dOptions trunk_conv(Index i) const {
    const Index s = strided_stages();
    if (i < s) return {2, 1, 1};
    const Index d = Index{1} << (i - s);
    return {1, d, d};
  }
};

/// Patch discriminator over the affinity space: five 4x4 stride-2 convolutions
/// with leaky-ReLU(0.2) between them and a raw single-channel output.
struct DiscriminatorConfig {
  Index in_channels = 40;
  std::vector<Index> widths{64, 128, 256, 512, 1};
  Index kernel = 4;
  Index stride = 2;
  Index padding = 1;
  double leaky_slope = 0.2;

  /// Closed-form parameter count (weights plus biases).
  Index parameter_count() const {
    Index n = 0, cin = in_channels;
    for (Index w : widths) {
      n += (cin * kernel * kernel + 1) * w;
      cin = w;
    }
    return n;
  }
};

namespace detail {

inline double he_std(Index fan_in) { return std::sqrt(2.0 / static_cast<double>(fan_in)); }

template <typename Scalar>
void add_conv(Params<Scalar>& p, const std::string& prefix, Index cin, Index cout, Index k, double stddev,
              std::mt19937_64& rng) {
  Tensor<Scalar> w({cout, cin, k, k});
  std::normal_distribution<double> normal(0.0, stddev);
  for (Index i = 0; i < w.size(); ++i) w[i] = static_cast<Scalar>(normal(rng));
  p.add(prefix + ".weight", std::move(w));
  p.add(prefix + ".bias", Tensor<Scalar>({cout}));
}

}  // namespace detail

/// Std of the classifier branches, small so a fresh network starts close to
/// the uniform prediction (the usual DeepLab classifier init).
inline constexpr double kHeadInitStd = 0.01;

/// He-normal trunk weights (std = sqrt(2 / fan_in)), N(0, kHeadInitStd)
/// classifier branches, zero biases.
template <typename Scalar>
Params<Scalar> init_params(const SegNetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  Params<Scalar> p;
  Index cin = cfg.input_channels;
  for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
    detail::add_conv(p, "trunk." + std::to_string(i), cin, cfg.widths[i], 3, detail::he_std(cin * 9), rng);
    cin = cfg.widths[i];
  }
  for (std::size_t j = 0; j < cfg.dilations.size(); ++j)
    detail::add_conv(p, "head." + std::to_string(j), cin, cfg.num_classes, 3, kHeadInitStd, rng);
  return p;
}

template <typename Scalar>
Params<Scalar> init_params(const DiscriminatorConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Params<Scalar> p;
  Index cin = cfg.in_channels;
  for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
    detail::add_conv(p, "disc." + std::to_string(i), cin, cfg.widths[i], cfg.kernel,
                     detail::he_std(cin * cfg.kernel * cfg.kernel), rng);
    cin = cfg.widths[i];
  }
  return p;
}

/// Raw class scores [B,C,H,W] for an image batch [B,Cin,H,W].
template <typename Scalar>
Var<Scalar> segnet_forward(const SegNetConfig& cfg, const BoundParams<Scalar>& p, const Var<Scalar>& image) {
  const auto& s = image.shape();
  if (s.size() != 4 || s[1] != cfg.input_channels)
    throw ShapeError("segnet_forward: expected [B," + std::to_string(cfg.input_channels) + ",H,W], got " + shape_str(s));
  const Index h = s[2], w = s[3];
  if (h % cfg.output_stride || w % cfg.output_stride)
    throw ShapeError("segnet_forward: spatial dims " + std::to_string(h) + "x" + std::to_string(w) +
                     " not divisible by output stride " + std::to_string(cfg.output_stride));
  Var<Scalar> x = image;
  for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
    const std::string n = "trunk." + std::to_string(i);
    x = relu(conv2d(x, p[n + ".weight"], p[n + ".bias"], cfg.trunk_conv(static_cast<Index>(i))));
  }
  std::vector<Var<Scalar>> branches;
  for (std::size_t j = 0; j < cfg.dilations.size(); ++j) {
    const std::string n = "head." + std::to_string(j);
    const Index d = cfg.dilations[j];
    branches.push_back(conv2d(x, p[n + ".weight"], p[n + ".bias"], {1, d, d}));
  }
  Var<Scalar> logits = branches.size() == 1 ? branches.front() : add(branches);
  if (cfg.output_stride == 1) return logits;
  return upsample_bilinear(logits, h, w);
}

/// Raw (pre-sigmoid) scores [B,1,H/32,W/32].
template <typename Scalar>
Var<Scalar> discriminator_forward(const DiscriminatorConfig& cfg, const BoundParams<Scalar>& p, const Var<Scalar>& input) {
  const auto& s = input.shape();
  if (s.size() != 4 || s[1] != cfg.in_channels)
    throw ShapeError("discriminator_forward: expected [B," + std::to_string(cfg.in_channels) + ",H,W], got " +
                     shape_str(s));
  if (s[2] < 32 || s[3] < 32)
    throw ShapeError("discriminator_forward: input " + shape_str(s) + " smaller than 32 in a spatial dim");
  Var<Scalar> x = input;
  const Conv2dOptions conv{cfg.stride, cfg.padding, 1};
  for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
    const std::string n = "disc." + std::to_string(i);
    x = conv2d(x, p[n + ".weight"], p[n + ".bias"], conv);
    if (i + 1 < cfg.widths.size()) x = leaky_relu(x, static_cast<Scalar>(cfg.leaky_slope));
  }
  return x;
}

}  // namespace affspace
