#include "affspace/selftrain.hpp"

#include "affspace/tensor_io.hpp"

#include <fstream>

namespace affspace {

PseudoLabeled make_pseudo_labels(const SegNetConfig& net, const Params<float>& seg, const UnlabeledSplit& target,
                                 double threshold) {
  const auto probs = predict(net, seg, target.images);
  const auto labels = pseudo_labels(probs, threshold);
  PseudoLabeled out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto& l = labels[i];
    const auto confident = static_cast<std::int64_t>((l != kIgnoreLabel).count());
    out.total_pixels += l.size();
    if (confident == 0) continue;
    out.confident_pixels += confident;
    out.split.push_back(target.images[i], l);
    out.source.push_back(i);
  }
  if (out.split.size() == 0) throw NoConfidentPixels();
  return out;
}

LabeledSplit concat(const LabeledSplit& a, const LabeledSplit& b) {
  LabeledSplit out;
  for (std::size_t i = 0; i < a.size(); ++i) out.push_back(a.image(i), a.labels(i));
  for (std::size_t i = 0; i < b.size(); ++i) out.push_back(b.image(i), b.labels(i));
  return out;
}

void write_pseudo_split(const std::filesystem::path& dir, const PseudoLabeled& pseudo) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::ofstream index(dir / "index.txt", std::ios::trunc);
  if (!index) throw IoError("cannot open " + (dir / "index.txt").string() + " for writing");
  index << "# pseudo-label file -> target train index\n";
  for (std::size_t i = 0; i < pseudo.split.size(); ++i) {
    save_tensor(dir / (std::to_string(i) + ".img.ten"), pseudo.split.image(i));
    save_tensor(dir / (std::to_string(i) + ".lab.ten"), labels_to_tensor(pseudo.split.labels(i)));
    index << i << "=" << pseudo.source[i] << "\n";
  }
}

TrainResult self_train(const LabeledSplit& source, const UnlabeledSplit& target, const PseudoLabeled& pseudo,
                       const Params<float>& start, TrainConfig cfg, const TrainOptions& options) {
  cfg.mode = TrainMode::source_only;
  TrainOptions opts = options;
  opts.init_seg = start;
  opts.resume.reset();
  return train(concat(source, pseudo.split), target, cfg, opts);
}

}  // namespace affspace
