#pragma once

#include "affspace/losses.hpp"
#include "affspace/manifest.hpp"
#include "affspace/nets.hpp"
#include "affspace/optim.hpp"
#include "affspace/synth.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace affspace {

enum class TrainMode { source_only, asc, asa };

std::string to_string(TrainMode mode);
TrainMode parse_train_mode(const std::string& s);

struct TrainConfig {
  TrainMode mode = TrainMode::asc;
  std::int64_t total_iters = 3000;
  std::int64_t batch_size = 4;
  double base_lr_seg = 2.5e-4;
  double lr_power = 0.9;
  double momentum_seg = 0.9;
  double weight_decay = 5e-4;
  double adam_lr = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.99;
  LossWeights weights;
  int connectivity = 8;
  std::int64_t snapshot_every = 250;
  std::uint64_t master_seed = 0;
  SegNetConfig net;  // num_classes is taken from the dataset

  void validate() const;

  /// Every field as key=value, in a fixed order. Round-trips through from_kv.
  KeyValues to_kv() const;
  /// Starts from defaults; unknown keys are rejected.
  static TrainConfig from_kv(const KeyValues& kv);
  static const std::vector<std::string>& keys();

  /// FNV-1a over the canonical key=value dump.
  std::string fingerprint() const;

  /// The source-only objective is the cleaning objective with zero weight.
  double effective_lambda_asc() const { return mode == TrainMode::asc ? weights.lambda_asc : 0.0; }
  DiscriminatorConfig discriminator() const;
};

std::string fnv1a_hex(const std::string& text);

struct Checkpoint {
  std::int64_t iteration = 0;  // completed optimizer steps
  double mean_target_affinity = 0;
  TrainConfig config;
  Params<float> seg;
  Params<float> seg_velocity;
  Params<float> disc;  // empty unless mode == asa
  AdamState<float> disc_adam;
};

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& is, const std::string& origin = "<stream>");
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// One row of the metrics CSV. Fields that do not apply are left empty.
struct MetricsRow {
  std::int64_t iter = 0;
  double lr = 0;
  std::optional<double> seg_loss, asc_loss, adv_loss, d_loss, mean_target_affinity;
};

std::string metrics_header();
std::string metrics_line(const MetricsRow& row);

struct SnapshotRecord {
  std::int64_t iteration = 0;
  double mean_target_affinity = 0;
  std::filesystem::path path;        // set when snapshots go to disk
  std::optional<Checkpoint> state;   // set when they stay in memory
};

struct TrainOptions {
  std::filesystem::path out_dir;          // empty keeps snapshots in memory
  std::optional<Checkpoint> resume;       // continue from this state
  std::optional<Params<float>> init_seg;  // start from these weights instead of a fresh init
  std::function<void(const MetricsRow&)> on_row;
};

struct TrainResult {
  std::vector<SnapshotRecord> history;
  std::vector<MetricsRow> rows;
  Checkpoint last;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::int64_t iteration, std::uint64_t batch_seed, const std::string& detail);
  std::int64_t iteration;
  std::uint64_t batch_seed;
};

/// Seed that fixes the sample indices drawn at one iteration.
std::uint64_t batch_seed(std::uint64_t master_seed, std::int64_t iteration);
/// Indices of the batch drawn from a split of size n; pure in (seed, iteration, domain).
std::vector<std::size_t> batch_indices(std::uint64_t master_seed, std::int64_t iteration, Domain domain,
                                       std::int64_t batch_size, std::size_t n);

/// Stacks [3,H,W] images into [B,3,H,W].
Tensor<float> stack_images(const std::vector<const Tensor<float>*>& images);

/// Softmax predictions for a list of images, computed in chunks; [N,C,H,W].
Tensor<float> predict(const SegNetConfig& net, const Params<float>& seg, const std::vector<Tensor<float>>& images,
                      std::size_t chunk = 25);

/// Ground-truth-free selection score over a set of images.
double mean_target_affinity(const SegNetConfig& net, const Params<float>& seg, const UnlabeledSplit& target,
                            int connectivity);

/// Per-step gradients and loss values, exposed for the phase-separation checks.
struct StepResult {
  double seg_loss = 0;
  double asc_loss = 0;  // unweighted asc(P_s) + asc(P_t)
  std::optional<double> adv_loss, d_loss;
  Params<float> seg_grads;
  Params<float> disc_grads;
  // Generator-phase gradient reaching the trainable discriminator copy, and
  // discriminator-phase gradient reaching the segmentation params.
  Params<float> disc_grads_in_generator_phase;
  Params<float> seg_grads_in_discriminator_phase;
  Index affinity_channels = 0;
};

/// Forward/backward of one iteration without touching any parameter.
StepResult compute_step(const TrainConfig& cfg, const Params<float>& seg, const Params<float>* disc,
                        const Tensor<float>& source_images, std::span<const LabelMap> source_labels,
                        const Tensor<float>& target_images);

/// The training loop. The target split type carries no labels.
TrainResult train(const LabeledSplit& source, const UnlabeledSplit& target, const TrainConfig& cfg,
                  const TrainOptions& options = {});

/// Cleaning run, or source-only when cfg.mode says so.
TrainResult train_asc(const LabeledSplit& source, const UnlabeledSplit& target, TrainConfig cfg,
                      const TrainOptions& options = {});
/// Alternating adversarial run over the affinity space.
TrainResult train_asa(const LabeledSplit& source, const UnlabeledSplit& target, TrainConfig cfg,
                      const TrainOptions& options = {});

/// Index of the record with the largest score; ties go to the later iteration.
std::size_t select_model(const std::vector<SnapshotRecord>& history);

/// Materializes a snapshot, from memory or disk.
Checkpoint snapshot_state(const SnapshotRecord& record);

}  // namespace affspace
