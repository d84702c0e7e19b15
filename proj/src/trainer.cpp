#include "affspace/trainer.hpp"

#include "affspace/tensor_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace affspace {

namespace {

constexpr std::uint64_t kSegInitStream = 10;
constexpr std::uint64_t kDiscInitStream = 11;
constexpr std::uint64_t kBatchStream = 20;
constexpr const char* kCheckpointMagic = "affspace-checkpoint v1";

// Every step allocates and frees the same multi-megabyte buffers. Keeping them
// on the heap instead of returning them to the kernel saves page faults.
void keep_large_allocations() {
#ifdef __GLIBC__
  static const bool once = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
  }();
  (void)once;
#endif
}

std::string join(const std::vector<Index>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::vector<Index> split_ints(const std::string& s, const std::string& key) {
  std::vector<Index> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoll(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw std::invalid_argument("config key '" + key + "': bad integer list '" + s + "'");
    }
  }
  if (out.empty()) throw std::invalid_argument("config key '" + key + "': empty list");
  return out;
}

bool all_finite(const Params<float>& p) {
  for (std::size_t i = 0; i < p.size(); ++i)
    if (!p[i].all_finite()) return false;
  return true;
}

void write_params(std::ostream& os, const std::string& prefix, const Params<float>& p) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    os << "block " << prefix << "/" << p.name(i) << "\n";
    write_tensor(os, p[i]);
  }
}

std::string opt(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

}  // namespace

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::source_only: return "source-only";
    case TrainMode::asc: return "asc";
    case TrainMode::asa: return "asa";
  }
  return "?";
}

TrainMode parse_train_mode(const std::string& s) {
  if (s == "source-only") return TrainMode::source_only;
  if (s == "asc") return TrainMode::asc;
  if (s == "asa") return TrainMode::asa;
  throw std::invalid_argument("unknown mode '" + s + "' (source-only, asc, asa)");
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// TrainConfig

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("TrainConfig: ") + what);
  };
  require(total_iters > 0, "total_iters must be positive");
  require(batch_size > 0, "batch_size must be positive");
  require(std::isfinite(base_lr_seg) && base_lr_seg >= 0, "base_lr_seg must be finite and >= 0");
  require(lr_power > 0, "lr_power must be positive");
  require(momentum_seg >= 0 && momentum_seg < 1, "momentum_seg must lie in [0, 1)");
  require(weight_decay >= 0, "weight_decay must be >= 0");
  require(adam_lr > 0, "adam_lr must be positive");
  require(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1, "adam betas must lie in [0, 1)");
  require(std::isfinite(weights.lambda_asc) && weights.lambda_asc >= 0, "lambda_asc must be finite and >= 0");
  require(std::isfinite(weights.lambda_asa) && weights.lambda_asa >= 0, "lambda_asa must be finite and >= 0");
  require(connectivity == 4 || connectivity == 8, "connectivity must be 4 or 8");
  require(snapshot_every >= 1, "snapshot_every must be positive");
  net.validate();
}

const std::vector<std::string>& TrainConfig::keys() {
  static const std::vector<std::string> k{
      "mode",        "total_iters", "batch_size",    "base_lr_seg",   "lr_power",      "momentum_seg",
      "weight_decay", "adam_lr",    "adam_beta1",    "adam_beta2",    "lambda_asc",    "lambda_asa",
      "connectivity", "snapshot_every", "master_seed", "num_classes", "net_widths", "net_dilations",
      "output_stride"};
  return k;
}

KeyValues TrainConfig::to_kv() const {
  KeyValues kv;
  kv.set("mode", to_string(mode));
  kv.set("total_iters", static_cast<long long>(total_iters));
  kv.set("batch_size", static_cast<long long>(batch_size));
  kv.set("base_lr_seg", base_lr_seg);
  kv.set("lr_power", lr_power);
  kv.set("momentum_seg", momentum_seg);
  kv.set("weight_decay", weight_decay);
  kv.set("adam_lr", adam_lr);
  kv.set("adam_beta1", adam_beta1);
  kv.set("adam_beta2", adam_beta2);
  kv.set("lambda_asc", weights.lambda_asc);
  kv.set("lambda_asa", weights.lambda_asa);
  kv.set("connectivity", connectivity);
  kv.set("snapshot_every", static_cast<long long>(snapshot_every));
  kv.set("master_seed", std::to_string(master_seed));
  kv.set("num_classes", static_cast<long long>(net.num_classes));
  kv.set("net_widths", join(net.widths));
  kv.set("net_dilations", join(net.dilations));
  kv.set("output_stride", static_cast<long long>(net.output_stride));
  return kv;
}

TrainConfig TrainConfig::from_kv(const KeyValues& kv) {
  const auto& known = keys();
  for (const auto& [k, v] : kv.entries())
    if (std::find(known.begin(), known.end(), k) == known.end())
      throw std::invalid_argument("unknown config key '" + k + "'");
  TrainConfig c;
  auto has = [&](const char* k) { return kv.contains(k); };
  if (has("mode")) c.mode = parse_train_mode(kv.get("mode"));
  if (has("total_iters")) c.total_iters = kv.get_int("total_iters");
  if (has("batch_size")) c.batch_size = kv.get_int("batch_size");
  if (has("base_lr_seg")) c.base_lr_seg = kv.get_double("base_lr_seg");
  if (has("lr_power")) c.lr_power = kv.get_double("lr_power");
  if (has("momentum_seg")) c.momentum_seg = kv.get_double("momentum_seg");
  if (has("weight_decay")) c.weight_decay = kv.get_double("weight_decay");
  if (has("adam_lr")) c.adam_lr = kv.get_double("adam_lr");
  if (has("adam_beta1")) c.adam_beta1 = kv.get_double("adam_beta1");
  if (has("adam_beta2")) c.adam_beta2 = kv.get_double("adam_beta2");
  if (has("lambda_asc")) c.weights.lambda_asc = kv.get_double("lambda_asc");
  if (has("lambda_asa")) c.weights.lambda_asa = kv.get_double("lambda_asa");
  if (has("connectivity")) c.connectivity = static_cast<int>(kv.get_int("connectivity"));
  if (has("snapshot_every")) c.snapshot_every = kv.get_int("snapshot_every");
  if (has("master_seed")) {
    const auto& s = kv.get("master_seed");
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
      throw std::invalid_argument("config key 'master_seed' must be a nonnegative integer");
    c.master_seed = std::stoull(s);
  }
  if (has("num_classes")) c.net.num_classes = kv.get_int("num_classes");
  if (has("net_widths")) c.net.widths = split_ints(kv.get("net_widths"), "net_widths");
  if (has("net_dilations")) c.net.dilations = split_ints(kv.get("net_dilations"), "net_dilations");
  if (has("output_stride")) c.net.output_stride = kv.get_int("output_stride");
  c.validate();
  return c;
}

std::string TrainConfig::fingerprint() const { return fnv1a_hex(to_kv().str()); }

DiscriminatorConfig TrainConfig::discriminator() const {
  DiscriminatorConfig d;
  d.in_channels = static_cast<Index>(connectivity) * net.num_classes;
  return d;
}

// ---------------------------------------------------------------------------
// Checkpoints

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt) {
  KeyValues header;
  header.set("iteration", static_cast<long long>(ckpt.iteration));
  header.set("mean_target_affinity", ckpt.mean_target_affinity);
  header.set("fingerprint", ckpt.config.fingerprint());
  header.set("classes", static_cast<long long>(ckpt.config.net.num_classes));
  header.set("adam_step", static_cast<long long>(ckpt.disc_adam.step));
  const KeyValues cfg = ckpt.config.to_kv();
  for (const auto& [k, v] : cfg.entries()) header.set("config." + k, v);
  const std::size_t blocks = 2 * ckpt.seg.size() + 3 * ckpt.disc.size();
  header.set("blocks", static_cast<long long>(blocks));
  os << kCheckpointMagic << "\n" << header.str() << "end\n";
  write_params(os, "seg", ckpt.seg);
  write_params(os, "seg_velocity", ckpt.seg_velocity);
  write_params(os, "disc", ckpt.disc);
  write_params(os, "disc_m", ckpt.disc_adam.m);
  write_params(os, "disc_v", ckpt.disc_adam.v);
  if (!os) throw IoError("failed writing checkpoint");
}

Checkpoint read_checkpoint(std::istream& is, const std::string& origin) {
  std::string line;
  if (!std::getline(is, line) || line != kCheckpointMagic) throw IoError(origin + ": not a checkpoint file");
  std::string text;
  bool ended = false;
  while (std::getline(is, line)) {
    if (line == "end") {
      ended = true;
      break;
    }
    text += line + "\n";
  }
  if (!ended) throw IoError(origin + ": truncated checkpoint header");
  Checkpoint ck;
  std::size_t blocks = 0;
  try {
    const auto header = KeyValues::parse(text, origin);
    KeyValues cfg;
    for (const auto& [k, v] : header.entries())
      if (k.rfind("config.", 0) == 0) cfg.set(k.substr(7), v);
    ck.config = TrainConfig::from_kv(cfg);
    ck.iteration = header.get_int("iteration");
    ck.mean_target_affinity = header.get_double("mean_target_affinity");
    ck.disc_adam.step = header.get_int("adam_step");
    blocks = static_cast<std::size_t>(header.get_int("blocks"));
    if (header.get("fingerprint") != ck.config.fingerprint())
      throw IoError(origin + ": fingerprint does not match the stored config");
    if (header.get_int("classes") != ck.config.net.num_classes) throw IoError(origin + ": class count mismatch");
  } catch (const IoError&) {
    throw;
  } catch (const std::exception& e) {
    throw IoError(origin + ": bad checkpoint header: " + e.what());
  }
  for (std::size_t b = 0; b < blocks; ++b) {
    if (!std::getline(is, line) || line.rfind("block ", 0) != 0) throw IoError(origin + ": missing block header");
    const std::string full = line.substr(6);
    const auto slash = full.find('/');
    if (slash == std::string::npos) throw IoError(origin + ": bad block name '" + full + "'");
    const std::string group = full.substr(0, slash), name = full.substr(slash + 1);
    auto t = read_tensor<float>(is, origin + ":" + full);
    if (group == "seg") ck.seg.add(name, std::move(t));
    else if (group == "seg_velocity") ck.seg_velocity.add(name, std::move(t));
    else if (group == "disc") ck.disc.add(name, std::move(t));
    else if (group == "disc_m") ck.disc_adam.m.add(name, std::move(t));
    else if (group == "disc_v") ck.disc_adam.v.add(name, std::move(t));
    else throw IoError(origin + ": unknown block group '" + group + "'");
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write_checkpoint(os, ckpt);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return read_checkpoint(is, path.string());
}

// ---------------------------------------------------------------------------
// Metrics log

std::string metrics_header() { return "iter,lr,seg_loss,asc_loss,adv_loss,d_loss,mean_target_affinity"; }

std::string metrics_line(const MetricsRow& r) {
  return std::to_string(r.iter) + "," + format_double(r.lr) + "," + opt(r.seg_loss) + "," + opt(r.asc_loss) + "," +
         opt(r.adv_loss) + "," + opt(r.d_loss) + "," + opt(r.mean_target_affinity);
}

// ---------------------------------------------------------------------------
// Batches and inference

TrainingDiverged::TrainingDiverged(std::int64_t it, std::uint64_t seed, const std::string& detail)
    : std::runtime_error("non-finite value at iteration " + std::to_string(it) + " (batch seed " +
                         std::to_string(seed) + "): " + detail),
      iteration(it),
      batch_seed(seed) {}

std::uint64_t batch_seed(std::uint64_t master_seed, std::int64_t iteration) {
  return derive_seed(master_seed, kBatchStream, static_cast<std::uint64_t>(iteration));
}

std::vector<std::size_t> batch_indices(std::uint64_t master_seed, std::int64_t iteration, Domain domain,
                                       std::int64_t batch_size, std::size_t n) {
  if (n == 0) throw std::invalid_argument("batch_indices: empty split");
  const std::uint64_t seed = batch_seed(master_seed, iteration);
  std::vector<std::size_t> out;
  for (std::int64_t k = 0; k < batch_size; ++k)
    out.push_back(static_cast<std::size_t>(
        derive_seed(seed, domain == Domain::source ? 1 : 2, static_cast<std::uint64_t>(k)) % n));
  return out;
}

Tensor<float> stack_images(const std::vector<const Tensor<float>*>& images) {
  if (images.empty()) throw std::invalid_argument("stack_images: no images");
  const Shape& s = images.front()->shape();
  if (s.size() != 3) throw ShapeError("stack_images: expected [C,H,W], got " + shape_str(s));
  Tensor<float> out({static_cast<Index>(images.size()), s[0], s[1], s[2]});
  const Index n = images.front()->size();
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i]->shape() != s) throw ShapeError("stack_images: mixed image shapes");
    std::copy_n(images[i]->data(), n, out.data() + static_cast<Index>(i) * n);
  }
  return out;
}

Tensor<float> predict(const SegNetConfig& net, const Params<float>& seg, const std::vector<Tensor<float>>& images,
                      std::size_t chunk) {
  if (images.empty()) throw std::invalid_argument("predict: no images");
  chunk = std::max<std::size_t>(chunk, 1);
  Tensor<float> out;
  for (std::size_t start = 0; start < images.size(); start += chunk) {
    std::vector<const Tensor<float>*> part;
    for (std::size_t i = start; i < std::min(images.size(), start + chunk); ++i) part.push_back(&images[i]);
    Tape<float> tape;
    const auto p = bind(tape, seg, false);
    const auto probs = softmax_channels(segnet_forward(net, p, tape.constant(stack_images(part))));
    const auto& v = probs.value();
    if (start == 0) out = Tensor<float>({static_cast<Index>(images.size()), v.dim(1), v.dim(2), v.dim(3)});
    std::copy_n(v.data(), v.size(), out.data() + static_cast<Index>(start) * v.dim(1) * v.dim(2) * v.dim(3));
  }
  return out;
}

double mean_target_affinity(const SegNetConfig& net, const Params<float>& seg, const UnlabeledSplit& target,
                            int connectivity) {
  return mean_affinity(predict(net, seg, target.images), NeighborhoodSpec(connectivity));
}

// ---------------------------------------------------------------------------
// One iteration

StepResult compute_step(const TrainConfig& cfg, const Params<float>& seg, const Params<float>* disc,
                        const Tensor<float>& source_images, std::span<const LabelMap> source_labels,
                        const Tensor<float>& target_images) {
  const NeighborhoodSpec spec(cfg.connectivity);
  Tape<float> tape;
  const auto sp = bind(tape, seg, true);
  const auto ps = softmax_channels(segnet_forward(cfg.net, sp, tape.constant(source_images)));
  const auto pt = softmax_channels(segnet_forward(cfg.net, sp, tape.constant(target_images)));
  StepResult r;

  if (cfg.mode != TrainMode::asa) {
    LossWeights w = cfg.weights;
    w.lambda_asc = cfg.effective_lambda_asc();
    const auto terms = asc_objective(ps, source_labels, pt, w, spec);
    tape.backward(terms.total);
    r.seg_loss = terms.seg.value()[0];
    r.asc_loss = static_cast<double>(terms.asc_source.value()[0]) + terms.asc_target.value()[0];
    r.seg_grads = sp.grads();
    return r;
  }

  if (!disc) throw std::invalid_argument("compute_step: adversarial mode needs discriminator params");
  const auto dcfg = cfg.discriminator();

  // Generator phase: the discriminator is frozen, gradients flow into the
  // segmentation network through the target affinity space.
  const auto frozen = bind(tape, *disc, false);
  const auto at = build_affinity_space(pt, spec);
  r.affinity_channels = at.shape()[1];
  const auto gen = asa_objective(ps, source_labels, discriminator_forward(dcfg, frozen, at), cfg.weights);
  const auto asc_s = asc_loss(detach(ps), spec), asc_t = asc_loss(detach(pt), spec);

  // Discriminator phase on detached copies of both affinity spaces.
  const auto trainable = bind(tape, *disc, true);
  const auto as = build_affinity_space(detach(ps), spec);
  const auto d_total = add(discriminator_loss(discriminator_forward(dcfg, trainable, as), Domain::source),
                           discriminator_loss(discriminator_forward(dcfg, trainable, detach(at)), Domain::target));

  tape.backward(gen.total);
  r.seg_grads = sp.grads();
  r.disc_grads_in_generator_phase = trainable.grads();
  tape.backward(d_total);
  r.disc_grads = trainable.grads();
  r.seg_grads_in_discriminator_phase = sp.grads();

  r.seg_loss = gen.seg.value()[0];
  r.adv_loss = gen.adversarial.value()[0];
  r.d_loss = d_total.value()[0];
  r.asc_loss = static_cast<double>(asc_s.value()[0]) + asc_t.value()[0];
  return r;
}

// ---------------------------------------------------------------------------
// Loop

TrainResult train(const LabeledSplit& source, const UnlabeledSplit& target, const TrainConfig& cfg,
                  const TrainOptions& options) {
  cfg.validate();
  if (source.size() == 0 || target.size() == 0) throw std::invalid_argument("train: both domains need images");
  keep_large_allocations();
  const bool adversarial = cfg.mode == TrainMode::asa;

  Checkpoint state;
  state.config = cfg;
  if (options.resume) {
    if (options.resume->config.fingerprint() != cfg.fingerprint())
      throw std::invalid_argument("resume: checkpoint fingerprint " + options.resume->config.fingerprint() +
                                  " does not match config " + cfg.fingerprint());
    state = *options.resume;
  } else {
    state.seg = options.init_seg ? *options.init_seg
                                 : init_params<float>(cfg.net, derive_seed(cfg.master_seed, kSegInitStream, 0));
    state.seg_velocity = state.seg.zeros_like();
    if (adversarial) {
      state.disc = init_params<float>(cfg.discriminator(), derive_seed(cfg.master_seed, kDiscInitStream, 0));
      state.disc_adam = AdamState<float>::for_params(state.disc);
    }
  }
  if (options.init_seg && options.init_seg->numel() != init_params<float>(cfg.net, 0).numel())
    throw std::invalid_argument("train: initial weights do not match the network config");

  TrainResult result;
  std::ofstream metrics;
  if (!options.out_dir.empty()) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(options.out_dir, ec);
    if (ec) throw IoError("cannot create " + options.out_dir.string() + ": " + ec.message());
    const auto path = options.out_dir / "metrics.csv";
    // A resumed run keeps the rows up to the checkpoint and continues the log.
    std::vector<std::string> kept;
    if (options.resume) {
      std::ifstream old(path);
      std::string line;
      while (std::getline(old, line)) {
        if (line == metrics_header() || line.empty()) continue;
        if (std::stoll(line.substr(0, line.find(','))) <= state.iteration) kept.push_back(line);
      }
    }
    metrics.open(path, std::ios::trunc);
    if (!metrics) throw IoError("cannot open " + path.string() + " for writing");
    metrics << metrics_header() << "\n";
    for (const auto& l : kept) metrics << l << "\n";
  }
  auto emit = [&](const MetricsRow& row) {
    result.rows.push_back(row);
    if (metrics.is_open()) {
      metrics << metrics_line(row) << "\n";
      metrics.flush();
    }
    if (options.on_row) options.on_row(row);
  };

  if (!options.resume) {
    MetricsRow row;
    row.iter = 0;
    row.lr = poly_lr(cfg.base_lr_seg, 0, cfg.total_iters, cfg.lr_power);
    row.mean_target_affinity = mean_target_affinity(cfg.net, state.seg, target, cfg.connectivity);
    state.mean_target_affinity = *row.mean_target_affinity;
    emit(row);
  }

  for (std::int64_t it = state.iteration; it < cfg.total_iters; ++it) {
    const auto si = batch_indices(cfg.master_seed, it, Domain::source, cfg.batch_size, source.size());
    const auto ti = batch_indices(cfg.master_seed, it, Domain::target, cfg.batch_size, target.size());
    std::vector<const Tensor<float>*> simg, timg;
    std::vector<LabelMap> slab;
    for (auto i : si) {
      simg.push_back(&source.image(i));
      slab.push_back(source.labels(i));
    }
    for (auto i : ti) timg.push_back(&target.images[i]);

    const double lr = poly_lr(cfg.base_lr_seg, it, cfg.total_iters, cfg.lr_power);
    StepResult step;
    try {
      step = compute_step(cfg, state.seg, adversarial ? &state.disc : nullptr, stack_images(simg), slab,
                          stack_images(timg));
    } catch (const std::domain_error& e) {
      // A loss tensor refused a NaN or Inf value.
      throw TrainingDiverged(it, batch_seed(cfg.master_seed, it), e.what());
    }

    const bool finite = std::isfinite(step.seg_loss) && std::isfinite(step.asc_loss) &&
                        (!step.adv_loss || std::isfinite(*step.adv_loss)) &&
                        (!step.d_loss || std::isfinite(*step.d_loss)) && all_finite(step.seg_grads) &&
                        (!adversarial || all_finite(step.disc_grads));
    if (!finite) {
      std::string detail = "seg_loss=" + format_double(step.seg_loss) + " asc_loss=" + format_double(step.asc_loss);
      if (step.adv_loss) detail += " adv_loss=" + format_double(*step.adv_loss);
      if (step.d_loss) detail += " d_loss=" + format_double(*step.d_loss);
      throw TrainingDiverged(it, batch_seed(cfg.master_seed, it), detail);
    }

    sgd_step(state.seg, step.seg_grads, state.seg_velocity, lr, cfg.momentum_seg, cfg.weight_decay);
    if (adversarial)
      adam_step(state.disc, step.disc_grads, state.disc_adam, cfg.adam_lr, cfg.adam_beta1, cfg.adam_beta2);
    state.iteration = it + 1;

    MetricsRow row;
    row.iter = state.iteration;
    row.lr = lr;
    row.seg_loss = step.seg_loss;
    row.asc_loss = step.asc_loss;
    row.adv_loss = step.adv_loss;
    row.d_loss = step.d_loss;
    if (state.iteration % cfg.snapshot_every == 0 || state.iteration == cfg.total_iters) {
      state.mean_target_affinity = mean_target_affinity(cfg.net, state.seg, target, cfg.connectivity);
      row.mean_target_affinity = state.mean_target_affinity;
      SnapshotRecord rec;
      rec.iteration = state.iteration;
      rec.mean_target_affinity = state.mean_target_affinity;
      if (options.out_dir.empty()) {
        rec.state = state;
      } else {
        rec.path = options.out_dir / ("ckpt_" + std::to_string(state.iteration) + ".ckpt");
        save_checkpoint(rec.path, state);
      }
      result.history.push_back(std::move(rec));
    }
    emit(row);
  }
  result.last = std::move(state);
  return result;
}

TrainResult train_asc(const LabeledSplit& source, const UnlabeledSplit& target, TrainConfig cfg,
                      const TrainOptions& options) {
  if (cfg.mode == TrainMode::asa) cfg.mode = TrainMode::asc;
  return train(source, target, cfg, options);
}

TrainResult train_asa(const LabeledSplit& source, const UnlabeledSplit& target, TrainConfig cfg,
                      const TrainOptions& options) {
  cfg.mode = TrainMode::asa;
  return train(source, target, cfg, options);
}

std::size_t select_model(const std::vector<SnapshotRecord>& history) {
  if (history.empty()) throw std::invalid_argument("select_model: empty history");
  std::size_t best = 0;
  for (std::size_t i = 1; i < history.size(); ++i) {
    const auto& a = history[i];
    const auto& b = history[best];
    if (a.mean_target_affinity > b.mean_target_affinity ||
        (a.mean_target_affinity == b.mean_target_affinity && a.iteration >= b.iteration))
      best = i;
  }
  return best;
}

Checkpoint snapshot_state(const SnapshotRecord& record) {
  if (record.state) return *record.state;
  if (record.path.empty()) throw std::invalid_argument("snapshot has neither state nor path");
  return load_checkpoint(record.path);
}

}  // namespace affspace
