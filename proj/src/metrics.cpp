#include "affspace/metrics.hpp"

#include "affspace/manifest.hpp"
#include "affspace/tensor_io.hpp"
#include "affspace/trainer.hpp"

#include <fstream>
#include <stdexcept>

namespace affspace {

ConfusionCounts::ConfusionCounts(Index classes)
    : tp(static_cast<std::size_t>(classes), 0),
      fp(static_cast<std::size_t>(classes), 0),
      fn(static_cast<std::size_t>(classes), 0) {}

std::int64_t ConfusionCounts::denominator(Index c) const {
  const auto i = static_cast<std::size_t>(c);
  return tp.at(i) + fp.at(i) + fn.at(i);
}

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
  if (o.classes() != classes()) throw std::invalid_argument("ConfusionCounts: class count mismatch");
  for (std::size_t c = 0; c < tp.size(); ++c) {
    tp[c] += o.tp[c];
    fp[c] += o.fp[c];
    fn[c] += o.fn[c];
  }
  ignored += o.ignored;
  pixels += o.pixels;
  return *this;
}

void accumulate(const LabelMap& pred, const LabelMap& gt, ConfusionCounts& counts) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols())
    throw ShapeError("accumulate: prediction " + std::to_string(pred.rows()) + "x" + std::to_string(pred.cols()) +
                     " vs ground truth " + std::to_string(gt.rows()) + "x" + std::to_string(gt.cols()));
  const Index classes = counts.classes();
  validate_labels(gt, classes);
  validate_labels(pred, classes);
  for (Index i = 0; i < gt.size(); ++i) {
    ++counts.pixels;
    const auto g = gt.data()[i];
    if (g == kIgnoreLabel) {
      ++counts.ignored;
      continue;
    }
    const auto p = pred.data()[i];
    if (p == g) {
      ++counts.tp[g];
    } else {
      ++counts.fn[g];
      if (p != kIgnoreLabel) ++counts.fp[p];
    }
  }
}

double iou(const ConfusionCounts& counts, Index c) {
  const auto d = counts.denominator(c);
  if (d == 0) throw std::domain_error("iou: class " + std::to_string(c) + " is absent");
  return static_cast<double>(counts.tp[static_cast<std::size_t>(c)]) / static_cast<double>(d);
}

double dsc(const ConfusionCounts& counts, Index c) {
  const auto d = counts.denominator(c);
  if (d == 0) throw std::domain_error("dsc: class " + std::to_string(c) + " is absent");
  const auto t = static_cast<double>(counts.tp[static_cast<std::size_t>(c)]);
  return 2 * t / (t + static_cast<double>(d));
}

double miou(const ConfusionCounts& counts, const std::vector<Index>& classes) {
  double total = 0;
  int present = 0;
  for (Index c : classes) {
    if (counts.denominator(c) == 0) continue;
    total += iou(counts, c);
    ++present;
  }
  if (present == 0) throw std::domain_error("miou: every requested class is absent");
  return total / present;
}

double miou(const ConfusionCounts& counts) {
  std::vector<Index> all(static_cast<std::size_t>(counts.classes()));
  for (Index c = 0; c < counts.classes(); ++c) all[static_cast<std::size_t>(c)] = c;
  return miou(counts, all);
}

EvalReport evaluate_predictions(const Tensor<float>& probs, const LabeledSplit& split, int connectivity) {
  if (probs.rank() != 4 || static_cast<std::size_t>(probs.dim(0)) != split.size())
    throw ShapeError("evaluate: predictions " + shape_str(probs.shape()) + " for " + std::to_string(split.size()) +
                     " labeled images");
  if (split.size() == 0) throw std::invalid_argument("evaluate: split has no labeled images");
  const Index classes = probs.dim(1);
  EvalReport r;
  r.counts = ConfusionCounts(classes);
  const auto pred = argmax_labels(probs);
  for (std::size_t i = 0; i < split.size(); ++i) accumulate(pred[i], split.labels(i), r.counts);
  for (Index c = 0; c < classes; ++c) {
    const bool present = r.counts.denominator(c) > 0;
    r.iou.push_back(present ? std::optional(iou(r.counts, c)) : std::nullopt);
    r.dsc.push_back(present ? std::optional(dsc(r.counts, c)) : std::nullopt);
  }
  r.miou = miou(r.counts);
  r.mean_affinity = mean_affinity(probs, NeighborhoodSpec(connectivity));
  return r;
}

EvalReport evaluate(const SegNetConfig& net, const Params<float>& seg, const LabeledSplit& split, int connectivity) {
  return evaluate_predictions(predict(net, seg, split.images()), split, connectivity);
}

std::string report_csv(const EvalReport& r) {
  auto cell = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string("nan"); };
  std::string out = "class,iou,dsc\n";
  for (std::size_t c = 0; c < r.iou.size(); ++c) out += std::to_string(c) + "," + cell(r.iou[c]) + "," + cell(r.dsc[c]) + "\n";
  out += "miou," + format_double(r.miou) + "\n";
  out += "mean_affinity," + format_double(r.mean_affinity) + "\n";
  return out;
}

void write_report(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << report_csv(report);
  if (!os) throw IoError("failed writing " + path.string());
}

}  // namespace affspace
