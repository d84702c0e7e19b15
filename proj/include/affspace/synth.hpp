#pragma once

#include "affspace/losses.hpp"
#include "affspace/manifest.hpp"
#include "affspace/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace affspace {

/// Appearance shift applied to target renderings. All-zero is the identity.
struct ShiftConfig {
  double hue_rotation = 0.6;  // radians
  double brightness_offset = 0.1;
  double noise_sigma = 0.05;
  double texture_frequency = 8.0;  // cycles per image side

  static ShiftConfig none() { return {0, 0, 0, 0}; }
  static ShiftConfig preset(const std::string& name);
  void validate() const;
  friend bool operator==(const ShiftConfig&, const ShiftConfig&) = default;
};

/// Every image gets this much Gaussian noise; target images get noise_sigma on top.
inline constexpr double kBaseNoiseSigma = 0.02;
/// Peak amplitude of the target-domain sinusoidal texture.
inline constexpr double kTextureAmplitude = 0.15;

struct SynthConfig {
  std::uint64_t seed = 0;
  Index classes = 5;
  Index height = 64;
  Index width = 64;
  Index n_source = 200;
  Index n_target = 200;
  Index n_eval = 50;
  ShiftConfig shift;

  void validate() const;
};

using Rgb = std::array<float, 3>;

struct Scene {
  LabelMap labels;
  std::vector<Rgb> colors;  // one base color per class
};

struct DomainSample {
  Tensor<float> image;  // [3,H,W] in [0,1]
  LabelMap labels;
  Domain domain;
  std::uint64_t seed;
};

/// Ground band (class 0) below a wavy horizon, sky band (class 1) above, and
/// 3-8 rectangles/ellipses of classes 2..C-1 on top. Every scene holds at
/// least three distinct classes including 0 and 1.
Scene generate_scene(std::uint64_t seed, Index classes, Index height, Index width);

/// Source: flat class colors plus mild noise. Target: additionally hue
/// rotation, brightness offset, a sinusoidal texture and extra noise.
DomainSample render_domain(const Scene& scene, Domain domain, const ShiftConfig& shift, std::uint64_t seed);

/// Labeled images with a per-split count of label reads.
class LabeledSplit {
 public:
  void push_back(Tensor<float> image, LabelMap labels);
  std::size_t size() const { return images_.size(); }
  const Tensor<float>& image(std::size_t i) const { return images_.at(i); }
  const LabelMap& labels(std::size_t i) const {
    ++label_reads_;
    return labels_.at(i);
  }
  const std::vector<Tensor<float>>& images() const { return images_; }
  std::size_t label_reads() const { return label_reads_; }

 private:
  std::vector<Tensor<float>> images_;
  std::vector<LabelMap> labels_;
  mutable std::size_t label_reads_ = 0;
};

/// Images only; what the trainer sees of the target domain.
struct UnlabeledSplit {
  std::vector<Tensor<float>> images;
  std::size_t size() const { return images.size(); }
};

struct Dataset {
  SynthConfig config;
  LabeledSplit source;
  LabeledSplit target;  // labels exist but training never reads them
  LabeledSplit eval;    // held-out labeled target-domain split

  UnlabeledSplit target_images() const { return {target.images()}; }
};

/// Deterministic in (config.seed, config): source i and target i share one
/// geometry; eval scenes come from a separate stream.
Dataset generate_dataset(const SynthConfig& config);

KeyValues manifest_of(const SynthConfig& config);
SynthConfig config_from_manifest(const KeyValues& kv);

/// Layout: manifest.txt, {source,target,eval}/<i>.img.ten and <i>.lab.ten.
void write_dataset(const std::filesystem::path& dir, const Dataset& data);
Dataset read_dataset(const std::filesystem::path& dir);

/// Label maps are stored as f32 [H,W] tensors of class ids.
Tensor<float> labels_to_tensor(const LabelMap& labels);
LabelMap tensor_to_labels(const Tensor<float>& t, const std::string& what = "labels");

/// splitmix64-style derivation of independent per-sample seeds.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index);

}  // namespace affspace
