// affspace: dataset generation, training, evaluation, affinity maps and
// pseudo-label self-training on the synthetic two-domain benchmark.

#include "affspace/metrics.hpp"
#include "affspace/selftrain.hpp"
#include "affspace/synth.hpp"
#include "affspace/tensor_io.hpp"
#include "affspace/trainer.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace affspace;

namespace {

enum Exit : int { kOk = 0, kBadArgs = 2, kIo = 3, kDiverged = 4, kMismatch = 5, kNoConfident = 6 };

class ClassMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void print_manifest(const SynthConfig& c, const fs::path& dir) {
  std::cout << "dataset " << dir.string() << ": " << c.classes << " classes, " << c.height << "x" << c.width
            << ", source " << c.n_source << ", target " << c.n_target << ", eval " << c.n_eval << ", seed " << c.seed
            << "\nshift hue_rotation=" << format_double(c.shift.hue_rotation)
            << " brightness_offset=" << format_double(c.shift.brightness_offset)
            << " noise_sigma=" << format_double(c.shift.noise_sigma)
            << " texture_frequency=" << format_double(c.shift.texture_frequency) << "\n";
}

// Defaults, then the config file, then explicit flags.
TrainConfig resolve_config(const std::string& config_file, const KeyValues& overrides, Index dataset_classes) {
  KeyValues kv;
  if (!config_file.empty()) kv = KeyValues::load(config_file);
  for (const auto& [k, v] : overrides.entries()) kv.set(k, v);
  if (kv.contains("num_classes") && kv.get_int("num_classes") != dataset_classes)
    throw ClassMismatch("config num_classes " + kv.get("num_classes") + " does not match the dataset's " +
                        std::to_string(dataset_classes));
  kv.set("num_classes", static_cast<long long>(dataset_classes));
  return TrainConfig::from_kv(kv);
}

void check_classes(const Checkpoint& ck, const SynthConfig& data) {
  if (ck.config.net.num_classes != data.classes)
    throw ClassMismatch("checkpoint (fingerprint " + ck.config.fingerprint() + ") has " +
                        std::to_string(ck.config.net.num_classes) + " classes, dataset has " +
                        std::to_string(data.classes));
}

const LabeledSplit& pick_split(const Dataset& d, const std::string& name) {
  if (name == "eval") return d.eval;
  if (name == "source") return d.source;
  if (name == "target") return d.target;
  throw std::invalid_argument("unknown split '" + name + "' (eval, source, target)");
}

void print_selection(const TrainResult& r) {
  const auto& best = r.history[select_model(r.history)];
  std::cout << "selected " << (best.path.empty() ? std::string("<memory>") : best.path.string())
            << " iteration " << best.iteration << " mean_target_affinity " << format_double(best.mean_target_affinity)
            << "\n";
}

std::vector<std::uint8_t> to_bytes(const Tensor<float>& v) {
  std::vector<std::uint8_t> out(static_cast<std::size_t>(v.size()));
  for (Index i = 0; i < v.size(); ++i) out[static_cast<std::size_t>(i)] = to_byte(v[i]);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Affinity-space domain adaptation on a synthetic segmentation benchmark"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic two-domain dataset");
  std::string gen_out, gen_size = "64x64", gen_shift = "default";
  std::uint64_t gen_seed = 0;
  Index gen_classes = 5, gen_ns = 200, gen_nt = 200, gen_ne = 50;
  std::optional<double> hue, brightness, noise, texture;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--seed", gen_seed, "Master seed");
  gen->add_option("--classes", gen_classes, "Number of classes (3-8)");
  gen->add_option("--size", gen_size, "Image size HxW");
  gen->add_option("--shift", gen_shift, "Shift preset: none, default, strong");
  gen->add_option("--hue-rotation", hue, "Override hue rotation (radians)");
  gen->add_option("--brightness-offset", brightness, "Override brightness offset");
  gen->add_option("--noise-sigma", noise, "Override extra target noise");
  gen->add_option("--texture-frequency", texture, "Override texture frequency");
  gen->add_option("--n-source", gen_ns, "Source train images");
  gen->add_option("--n-target", gen_nt, "Target train images");
  gen->add_option("--n-eval", gen_ne, "Held-out labeled target images");

  // train
  auto* tr = app.add_subcommand("train", "Train source-only, cleaning (asc) or adversarial (asa)");
  std::string tr_mode, tr_config, tr_data, tr_out, tr_resume;
  std::optional<double> tr_lambda;
  std::optional<int> tr_conn;
  std::optional<long long> tr_iters, tr_seed;
  tr->add_option("--mode", tr_mode, "source-only, asc or asa")->required()->check(
      CLI::IsMember({"source-only", "asc", "asa"}));
  tr->add_option("--config", tr_config, "key=value config file");
  tr->add_option("--data", tr_data, "Dataset directory")->required();
  tr->add_option("--out", tr_out, "Output directory")->required();
  tr->add_option("--lambda", tr_lambda, "Loss weight of the chosen adaptation term");
  tr->add_option("--connectivity", tr_conn, "Neighborhood: 4 or 8")->check(CLI::IsMember({4, 8}));
  tr->add_option("--iters", tr_iters, "Override total_iters");
  tr->add_option("--seed", tr_seed, "Override master_seed");
  tr->add_option("--resume", tr_resume, "Continue from this checkpoint");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a labeled split");
  std::string ev_ckpt, ev_data, ev_split = "eval", ev_out;
  std::optional<int> ev_conn;
  ev->add_option("--ckpt", ev_ckpt, "Checkpoint file")->required();
  ev->add_option("--data", ev_data, "Dataset directory")->required();
  ev->add_option("--split", ev_split, "eval, source or target");
  ev->add_option("--out", ev_out, "Report CSV")->required();
  ev->add_option("--connectivity", ev_conn, "Neighborhood for mean_affinity (default: checkpoint's)")
      ->check(CLI::IsMember({4, 8}));

  // affinity-map
  auto* am = app.add_subcommand("affinity-map", "Export the cosine affinity map of one image");
  std::string am_ckpt, am_image, am_out;
  int am_conn = 8;
  am->add_option("--ckpt", am_ckpt, "Checkpoint file")->required();
  am->add_option("--image", am_image, "Image tensor [3,H,W] (.ten)")->required();
  am->add_option("--out", am_out, "Output prefix")->required();
  am->add_option("--connectivity", am_conn, "4 or 8")->check(CLI::IsMember({4, 8}));

  // self-train
  auto* st = app.add_subcommand("self-train", "Pseudo-label the target split and retrain");
  std::string st_ckpt, st_data, st_out, st_config;
  double st_threshold = 0.9;
  std::optional<long long> st_iters;
  st->add_option("--ckpt", st_ckpt, "Adapted checkpoint")->required();
  st->add_option("--data", st_data, "Dataset directory")->required();
  st->add_option("--out", st_out, "Output directory")->required();
  st->add_option("--threshold", st_threshold, "Confidence threshold (strict)");
  st->add_option("--config", st_config, "key=value overrides for the retraining round");
  st->add_option("--iters", st_iters, "Override total_iters of the retraining round");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return kBadArgs;
  }

  try {
    if (*gen) {
      SynthConfig c;
      c.seed = gen_seed;
      c.classes = gen_classes;
      const auto x = gen_size.find('x');
      if (x == std::string::npos) throw std::invalid_argument("--size must look like HxW");
      try {
        c.height = std::stoll(gen_size.substr(0, x));
        c.width = std::stoll(gen_size.substr(x + 1));
      } catch (const std::exception&) {
        throw std::invalid_argument("--size must look like HxW");
      }
      c.shift = ShiftConfig::preset(gen_shift);
      if (hue) c.shift.hue_rotation = *hue;
      if (brightness) c.shift.brightness_offset = *brightness;
      if (noise) c.shift.noise_sigma = *noise;
      if (texture) c.shift.texture_frequency = *texture;
      c.n_source = gen_ns;
      c.n_target = gen_nt;
      c.n_eval = gen_ne;
      c.validate();
      write_dataset(gen_out, generate_dataset(c));
      print_manifest(c, gen_out);
      return kOk;
    }

    if (*tr) {
      const Dataset data = read_dataset(tr_data);
      KeyValues over;
      over.set("mode", tr_mode);
      if (tr_lambda) over.set(tr_mode == "asa" ? "lambda_asa" : "lambda_asc", *tr_lambda);
      if (tr_conn) over.set("connectivity", *tr_conn);
      if (tr_iters) over.set("total_iters", *tr_iters);
      if (tr_seed) {
        if (*tr_seed < 0) throw std::invalid_argument("--seed must be nonnegative");
        over.set("master_seed", std::to_string(*tr_seed));
      }
      const TrainConfig cfg = resolve_config(tr_config, over, data.config.classes);
      fs::create_directories(tr_out);
      cfg.to_kv().save(fs::path(tr_out) / "config.resolved.txt");
      std::cout << "config fingerprint " << cfg.fingerprint() << "\n";
      if (cfg.mode == TrainMode::asa)
        std::cout << "affinity space channels " << cfg.discriminator().in_channels << " (" << cfg.connectivity
                  << " neighbors x " << cfg.net.num_classes << " classes)\n";

      TrainOptions opts;
      opts.out_dir = tr_out;
      if (!tr_resume.empty()) {
        opts.resume = load_checkpoint(tr_resume);
        if (opts.resume->config.fingerprint() != cfg.fingerprint())
          throw ClassMismatch("checkpoint fingerprint " + opts.resume->config.fingerprint() +
                              " does not match config fingerprint " + cfg.fingerprint());
      }
      const auto log_every = std::max<std::int64_t>(1, cfg.total_iters / 20);
      opts.on_row = [&](const MetricsRow& r) {
        if (r.iter % log_every == 0 || r.mean_target_affinity)
          std::cout << metrics_line(r) << "\n" << std::flush;
      };
      const auto result = train(data.source, data.target_images(), cfg, opts);
      print_selection(result);
      return kOk;
    }

    if (*ev) {
      const Dataset data = read_dataset(ev_data);
      const Checkpoint ck = load_checkpoint(ev_ckpt);
      check_classes(ck, data.config);
      const auto& split = pick_split(data, ev_split);
      const auto report = evaluate(ck.config.net, ck.seg, split, ev_conn.value_or(ck.config.connectivity));
      write_report(ev_out, report);
      std::cout << "miou " << format_double(report.miou) << "\n";
      return kOk;
    }

    if (*am) {
      const Checkpoint ck = load_checkpoint(am_ckpt);
      auto img = load_tensor<float>(am_image);
      if (img.rank() == 3) img = img.reshaped({1, img.dim(0), img.dim(1), img.dim(2)});
      if (img.rank() != 4 || img.dim(0) != 1)
        throw std::invalid_argument("--image must hold one [3,H,W] image, got " + shape_str(img.shape()));
      const auto probs = predict(ck.config.net, ck.seg, {img.reshaped({img.dim(1), img.dim(2), img.dim(3)})});
      const auto maps = cosine_affinity(probs, NeighborhoodSpec(am_conn));
      const auto& m = maps.front().values;
      const auto labels = argmax_labels(probs).front();
      std::vector<std::uint8_t> seg_bytes(static_cast<std::size_t>(labels.size()));
      const Index classes = ck.config.net.num_classes;
      for (Index i = 0; i < labels.size(); ++i)
        seg_bytes[static_cast<std::size_t>(i)] =
            static_cast<std::uint8_t>(classes > 1 ? labels.data()[i] * 255 / (classes - 1) : 0);
      save_pgm(am_out + ".pgm", m.dim(0), m.dim(1), to_bytes(m));
      save_tensor(am_out + ".ten", m);
      save_pgm(am_out + ".seg.pgm", m.dim(0), m.dim(1), seg_bytes);
      std::cout << "mean affinity " << format_double(m.array().cast<double>().mean()) << "\n";
      return kOk;
    }

    if (*st) {
      const Dataset data = read_dataset(st_data);
      const Checkpoint ck = load_checkpoint(st_ckpt);
      check_classes(ck, data.config);
      KeyValues kv = ck.config.to_kv();
      if (!st_config.empty()) {
        const KeyValues extra = KeyValues::load(st_config);
        for (const auto& [k, v] : extra.entries()) kv.set(k, v);
      }
      if (st_iters) kv.set("total_iters", *st_iters);
      kv.set("mode", std::string("source-only"));
      const TrainConfig cfg = TrainConfig::from_kv(kv);
      const auto target = data.target_images();
      const auto pseudo = make_pseudo_labels(ck.config.net, ck.seg, target, st_threshold);
      write_pseudo_split(fs::path(st_out) / "pseudo", pseudo);
      std::cout << "pseudo labels: " << pseudo.split.size() << "/" << target.size() << " images, "
                << format_double(static_cast<double>(pseudo.confident_pixels) / static_cast<double>(pseudo.total_pixels))
                << " of pixels confident\n";
      cfg.to_kv().save(fs::path(st_out) / "config.resolved.txt");
      TrainOptions opts;
      opts.out_dir = st_out;
      const auto result = self_train(data.source, target, pseudo, ck.seg, cfg, opts);
      const auto before = evaluate(ck.config.net, ck.seg, data.eval, cfg.connectivity).miou;
      const auto chosen = snapshot_state(result.history[select_model(result.history)]);
      const auto after = evaluate(cfg.net, chosen.seg, data.eval, cfg.connectivity).miou;
      std::cout << "eval miou before " << format_double(before) << " after " << format_double(after) << " delta "
                << format_double(after - before) << "\n";
      print_selection(result);
      return kOk;
    }
  } catch (const NoConfidentPixels& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNoConfident;
  } catch (const TrainingDiverged& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDiverged;
  } catch (const ClassMismatch& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kMismatch;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kBadArgs;
  }
  return kBadArgs;
}
