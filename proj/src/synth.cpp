#include "affspace/synth.hpp"

#include "affspace/tensor_io.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>
#include <stdexcept>

namespace affspace {

namespace {

constexpr std::uint64_t kGeometryStream = 1;
constexpr std::uint64_t kSourceRenderStream = 2;
constexpr std::uint64_t kTargetRenderStream = 3;
constexpr std::uint64_t kEvalGeometryStream = 4;
constexpr std::uint64_t kEvalRenderStream = 5;

Rgb hsv_to_rgb(double h, double s, double v) {
  h = std::fmod(h, 2 * std::numbers::pi);
  if (h < 0) h += 2 * std::numbers::pi;
  const double hh = h / (std::numbers::pi / 3);
  const int sector = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  double r = 0, g = 0, b = 0;
  switch (sector) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
  return {static_cast<float>(r), static_cast<float>(g), static_cast<float>(b)};
}

// Rotation by `angle` about the grey axis of RGB space.
std::array<std::array<double, 3>, 3> hue_rotation_matrix(double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  const double a = (1 - c) / 3, b = std::sqrt(1.0 / 3) * s;
  return {{{c + a, a - b, a + b}, {a + b, c + a, a - b}, {a - b, a + b, c + a}}};
}

std::filesystem::path sample_path(const std::filesystem::path& dir, const char* split, std::size_t i, const char* kind) {
  return dir / split / (std::to_string(i) + "." + kind + ".ten");
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index) {
  std::uint64_t z = master ^ (stream * 0x9E3779B97F4A7C15ULL) ^ (index * 0xD1B54A32D192ED03ULL);
  for (int round = 0; round < 2; ++round) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    z ^= z >> 31;
  }
  return z;
}

ShiftConfig ShiftConfig::preset(const std::string& name) {
  if (name == "none") return none();
  if (name == "default") return {};
  if (name == "strong") return {0.9, 0.15, 0.08, 12.0};
  throw std::invalid_argument("unknown shift preset '" + name + "' (none, default, strong)");
}

void ShiftConfig::validate() const {
  if (!(noise_sigma >= 0)) throw std::invalid_argument("ShiftConfig: noise_sigma must be >= 0");
  if (!(brightness_offset > -0.5 && brightness_offset < 0.5))
    throw std::invalid_argument("ShiftConfig: brightness_offset must lie in (-0.5, 0.5)");
  if (!std::isfinite(hue_rotation) || !std::isfinite(texture_frequency) || texture_frequency < 0)
    throw std::invalid_argument("ShiftConfig: hue_rotation and texture_frequency must be finite, frequency >= 0");
}

void SynthConfig::validate() const {
  if (classes < 3 || classes > 8) throw std::invalid_argument("classes must lie in [3, 8]");
  if (height < 32 || height > 256 || width < 32 || width > 256)
    throw std::invalid_argument("image size must lie in [32, 256] per side");
  if (n_source < 1 || n_target < 1 || n_eval < 0) throw std::invalid_argument("split sizes must be positive");
  shift.validate();
}

Scene generate_scene(std::uint64_t seed, Index classes, Index height, Index width) {
  if (classes < 3 || classes > 8) throw std::invalid_argument("generate_scene: classes must lie in [3, 8]");
  if (height < 32 || height > 256 || width < 32 || width > 256)
    throw std::invalid_argument("generate_scene: size must lie in [32, 256] per side");
  std::mt19937_64 rng(seed);
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  auto uniform_int = [&](Index lo, Index hi) { return std::uniform_int_distribution<Index>(lo, hi)(rng); };

  Scene scene;
  scene.colors.resize(static_cast<std::size_t>(classes));
  const double spacing = 2 * std::numbers::pi / static_cast<double>(classes);
  for (Index c = 0; c < classes; ++c)
    scene.colors[static_cast<std::size_t>(c)] =
        hsv_to_rgb(0.3 + spacing * static_cast<double>(c) + uniform(-0.08, 0.08), 0.65 + uniform(-0.05, 0.05),
                   0.75 + uniform(-0.05, 0.05));

  LabelMap& lab = scene.labels;
  lab.resize(height, width);
  while (true) {
    const double horizon = uniform(0.35, 0.65) * static_cast<double>(height);
    const double amp = uniform(0.0, static_cast<double>(height) / 16);
    const double freq = uniform(0.5, 2.0), phase = uniform(0, 2 * std::numbers::pi);
    for (Index x = 0; x < width; ++x) {
      const double hy = horizon + amp * std::sin(2 * std::numbers::pi * freq * static_cast<double>(x) /
                                                     static_cast<double>(width) + phase);
      for (Index y = 0; y < height; ++y) lab(y, x) = static_cast<double>(y) < hy ? 1 : 0;
    }
    const Index n_shapes = uniform_int(3, 8);
    for (Index s = 0; s < n_shapes; ++s) {
      const auto cls = static_cast<std::uint8_t>(uniform_int(2, classes - 1));
      const bool ellipse = uniform(0, 1) < 0.5;
      const double cy = uniform(0.15, 0.9) * static_cast<double>(height);
      const double cx = uniform(0.0, 1.0) * static_cast<double>(width);
      const double ry = uniform(1.0 / 16, 1.0 / 5) * static_cast<double>(height);
      const double rx = uniform(1.0 / 16, 1.0 / 5) * static_cast<double>(width);
      for (Index y = 0; y < height; ++y)
        for (Index x = 0; x < width; ++x) {
          const double dy = (static_cast<double>(y) + 0.5 - cy) / ry, dx = (static_cast<double>(x) + 0.5 - cx) / rx;
          const bool in = ellipse ? dy * dy + dx * dx <= 1 : std::abs(dy) <= 1 && std::abs(dx) <= 1;
          if (in) lab(y, x) = cls;
        }
    }
    std::set<int> present(lab.data(), lab.data() + lab.size());
    if (present.count(0) && present.count(1) && present.size() >= 3) break;
  }
  return scene;
}

DomainSample render_domain(const Scene& scene, Domain domain, const ShiftConfig& shift, std::uint64_t seed) {
  shift.validate();
  const Index h = scene.labels.rows(), w = scene.labels.cols();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> base_noise(0.0, kBaseNoiseSigma);
  std::uniform_real_distribution<double> phase_dist(0.0, 2 * std::numbers::pi);
  const bool target = domain == Domain::target;
  const auto rot = hue_rotation_matrix(target ? shift.hue_rotation : 0.0);
  const double phase_y = phase_dist(rng), phase_x = phase_dist(rng);
  std::normal_distribution<double> unit_noise(0.0, 1.0);

  Tensor<float> image({3, h, w});
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      const Rgb& base = scene.colors.at(scene.labels(y, x));
      std::array<double, 3> rgb{base[0], base[1], base[2]};
      double texture = 0;
      if (target) {
        std::array<double, 3> r{};
        for (int i = 0; i < 3; ++i) r[i] = rot[i][0] * rgb[0] + rot[i][1] * rgb[1] + rot[i][2] * rgb[2];
        rgb = r;
        if (shift.texture_frequency > 0)
          texture = kTextureAmplitude *
                    std::sin(2 * std::numbers::pi * shift.texture_frequency * static_cast<double>(y) / static_cast<double>(h) + phase_y) *
                    std::sin(2 * std::numbers::pi * shift.texture_frequency * static_cast<double>(x) / static_cast<double>(w) + phase_x);
      }
      for (int c = 0; c < 3; ++c) {
        double v = rgb[static_cast<std::size_t>(c)] + base_noise(rng);
        if (target) v += shift.brightness_offset + texture + (shift.noise_sigma > 0 ? shift.noise_sigma * unit_noise(rng) : 0.0);
        image[(c * h + y) * w + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  return {std::move(image), scene.labels, domain, seed};
}

void LabeledSplit::push_back(Tensor<float> image, LabelMap labels) {
  images_.push_back(std::move(image));
  labels_.push_back(std::move(labels));
}

Dataset generate_dataset(const SynthConfig& config) {
  config.validate();
  Dataset data;
  data.config = config;
  const Index n_shared = std::max(config.n_source, config.n_target);
  for (Index i = 0; i < n_shared; ++i) {
    const auto idx = static_cast<std::uint64_t>(i);
    const Scene scene = generate_scene(derive_seed(config.seed, kGeometryStream, idx), config.classes, config.height,
                                       config.width);
    if (i < config.n_source) {
      auto s = render_domain(scene, Domain::source, config.shift, derive_seed(config.seed, kSourceRenderStream, idx));
      data.source.push_back(std::move(s.image), std::move(s.labels));
    }
    if (i < config.n_target) {
      auto t = render_domain(scene, Domain::target, config.shift, derive_seed(config.seed, kTargetRenderStream, idx));
      data.target.push_back(std::move(t.image), std::move(t.labels));
    }
  }
  for (Index i = 0; i < config.n_eval; ++i) {
    const auto idx = static_cast<std::uint64_t>(i);
    const Scene scene = generate_scene(derive_seed(config.seed, kEvalGeometryStream, idx), config.classes,
                                       config.height, config.width);
    auto t = render_domain(scene, Domain::target, config.shift, derive_seed(config.seed, kEvalRenderStream, idx));
    data.eval.push_back(std::move(t.image), std::move(t.labels));
  }
  return data;
}

KeyValues manifest_of(const SynthConfig& c) {
  KeyValues kv;
  kv.set("format", std::string("affspace-synth-v1"));
  kv.set("seed", std::to_string(c.seed));
  kv.set("classes", static_cast<long long>(c.classes));
  kv.set("height", static_cast<long long>(c.height));
  kv.set("width", static_cast<long long>(c.width));
  kv.set("hue_rotation", c.shift.hue_rotation);
  kv.set("brightness_offset", c.shift.brightness_offset);
  kv.set("noise_sigma", c.shift.noise_sigma);
  kv.set("texture_frequency", c.shift.texture_frequency);
  kv.set("n_source", static_cast<long long>(c.n_source));
  kv.set("n_target", static_cast<long long>(c.n_target));
  kv.set("n_eval", static_cast<long long>(c.n_eval));
  return kv;
}

SynthConfig config_from_manifest(const KeyValues& kv) {
  if (kv.get("format") != "affspace-synth-v1") throw IoError("manifest: unsupported format '" + kv.get("format") + "'");
  SynthConfig c;
  c.seed = std::stoull(kv.get("seed"));
  c.classes = kv.get_int("classes");
  c.height = kv.get_int("height");
  c.width = kv.get_int("width");
  c.shift = {kv.get_double("hue_rotation"), kv.get_double("brightness_offset"), kv.get_double("noise_sigma"),
             kv.get_double("texture_frequency")};
  c.n_source = kv.get_int("n_source");
  c.n_target = kv.get_int("n_target");
  c.n_eval = kv.get_int("n_eval");
  c.validate();
  return c;
}

Tensor<float> labels_to_tensor(const LabelMap& labels) {
  Tensor<float> t({labels.rows(), labels.cols()});
  for (Index i = 0; i < labels.size(); ++i) t[i] = static_cast<float>(labels.data()[i]);
  return t;
}

LabelMap tensor_to_labels(const Tensor<float>& t, const std::string& what) {
  if (t.rank() != 2) throw IoError(what + ": label tensor must be rank 2");
  LabelMap m(t.dim(0), t.dim(1));
  for (Index i = 0; i < t.size(); ++i) {
    const float v = t[i];
    if (v < 0 || v > 255 || v != std::floor(v)) throw IoError(what + ": non-integer label value");
    m.data()[i] = static_cast<std::uint8_t>(v);
  }
  return m;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& data) {
  namespace fs = std::filesystem;
  std::error_code ec;
  for (const char* split : {"source", "target", "eval"}) {
    fs::create_directories(dir / split, ec);
    if (ec) throw IoError("cannot create " + (dir / split).string() + ": " + ec.message());
  }
  auto write_split = [&](const char* name, const LabeledSplit& split) {
    for (std::size_t i = 0; i < split.size(); ++i) {
      save_tensor(sample_path(dir, name, i, "img"), split.image(i));
      save_tensor(sample_path(dir, name, i, "lab"), labels_to_tensor(split.labels(i)));
    }
  };
  write_split("source", data.source);
  write_split("target", data.target);
  write_split("eval", data.eval);
  manifest_of(data.config).save(dir / "manifest.txt");
}

Dataset read_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.txt";
  if (!std::filesystem::exists(manifest_path)) throw IoError("missing manifest " + manifest_path.string());
  SynthConfig config;
  try {
    config = config_from_manifest(KeyValues::load(manifest_path));
  } catch (const IoError&) {
    throw;
  } catch (const std::exception& e) {
    throw IoError("corrupt manifest " + manifest_path.string() + ": " + e.what());
  }
  Dataset data;
  data.config = config;
  auto read_split = [&](const char* name, Index count, LabeledSplit& split) {
    for (std::size_t i = 0; i < static_cast<std::size_t>(count); ++i) {
      const auto img_path = sample_path(dir, name, i, "img");
      const auto lab_path = sample_path(dir, name, i, "lab");
      auto img = load_tensor<float>(img_path);
      if (img.shape() != Shape{3, config.height, config.width})
        throw IoError(img_path.string() + ": shape " + shape_str(img.shape()) + " does not match manifest");
      auto lab = tensor_to_labels(load_tensor<float>(lab_path), lab_path.string());
      if (lab.rows() != config.height || lab.cols() != config.width)
        throw IoError(lab_path.string() + ": shape does not match manifest");
      split.push_back(std::move(img), std::move(lab));
    }
  };
  read_split("source", config.n_source, data.source);
  read_split("target", config.n_target, data.target);
  read_split("eval", config.n_eval, data.eval);
  return data;
}

}  // namespace affspace
