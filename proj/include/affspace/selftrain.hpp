#pragma once

#include "affspace/trainer.hpp"

#include <filesystem>
#include <stdexcept>

namespace affspace {

class NoConfidentPixels : public std::runtime_error {
 public:
  NoConfidentPixels() : std::runtime_error("no confident pixels: every pseudo label is ignored") {}
};

struct PseudoLabeled {
  LabeledSplit split;               // target images with their confident labels
  std::vector<std::size_t> source;  // index of each kept image in the target split
  std::int64_t confident_pixels = 0;
  std::int64_t total_pixels = 0;
};

/// Thresholded argmax labels for every target image. Images whose map is all
/// ignore are dropped; throws NoConfidentPixels when none remain.
PseudoLabeled make_pseudo_labels(const SegNetConfig& net, const Params<float>& seg, const UnlabeledSplit& target,
                                 double threshold);

/// Source samples followed by the pseudo-labeled ones.
LabeledSplit concat(const LabeledSplit& a, const LabeledSplit& b);

/// Writes <dir>/<i>.img.ten and <i>.lab.ten plus an index file.
void write_pseudo_split(const std::filesystem::path& dir, const PseudoLabeled& pseudo);

/// Supervised retraining on source plus pseudo-labeled target, starting from
/// `start`. Uses the cleaning loop with zero weight.
TrainResult self_train(const LabeledSplit& source, const UnlabeledSplit& target, const PseudoLabeled& pseudo,
                       const Params<float>& start, TrainConfig cfg, const TrainOptions& options = {});

}  // namespace affspace
