#pragma once

#include "affspace/losses.hpp"
#include "affspace/nets.hpp"
#include "affspace/synth.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace affspace {

/// Per-class true positive, false positive and false negative pixel counts.
struct ConfusionCounts {
  explicit ConfusionCounts(Index classes = 0);

  Index classes() const { return static_cast<Index>(tp.size()); }
  std::int64_t denominator(Index c) const;  // TP + FP + FN
  ConfusionCounts& operator+=(const ConfusionCounts& other);
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;

  std::vector<std::int64_t> tp, fp, fn;
  std::int64_t ignored = 0;
  std::int64_t pixels = 0;
};

/// Ignore-labeled ground truth pixels only bump the ignore count.
void accumulate(const LabelMap& pred, const LabelMap& gt, ConfusionCounts& counts);

double iou(const ConfusionCounts& counts, Index c);
double dsc(const ConfusionCounts& counts, Index c);
/// Mean IoU over the given classes that actually occur (TP+FP+FN > 0).
double miou(const ConfusionCounts& counts, const std::vector<Index>& classes);
double miou(const ConfusionCounts& counts);

struct EvalReport {
  std::vector<std::optional<double>> iou;  // nullopt for absent classes
  std::vector<std::optional<double>> dsc;
  double miou = 0;
  double mean_affinity = 0;
  ConfusionCounts counts;
};

EvalReport evaluate_predictions(const Tensor<float>& probs, const LabeledSplit& split, int connectivity);
EvalReport evaluate(const SegNetConfig& net, const Params<float>& seg, const LabeledSplit& split, int connectivity);

/// `class,iou,dsc` rows, then `miou,<v>` and `mean_affinity,<v>`.
std::string report_csv(const EvalReport& report);
void write_report(const std::filesystem::path& path, const EvalReport& report);

}  // namespace affspace
