#include "affspace/synth.hpp"
#include "affspace/tensor_io.hpp"
#include "affspace/trainer.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace affspace;
namespace fs = std::filesystem;

namespace {

const Dataset& tiny_data() {
  static const Dataset d = [] {
    SynthConfig c;
    c.seed = 21;
    c.height = c.width = 32;
    c.n_source = 6;
    c.n_target = 5;
    c.n_eval = 2;
    return generate_dataset(c);
  }();
  return d;
}

TrainConfig tiny_config(TrainMode mode) {
  TrainConfig cfg;
  cfg.mode = mode;
  cfg.total_iters = 6;
  cfg.batch_size = 2;
  cfg.snapshot_every = 2;
  cfg.master_seed = 3;
  cfg.base_lr_seg = 1e-2;
  cfg.net.num_classes = 5;
  cfg.net.widths = {8, 8};
  cfg.net.dilations = {1, 2};
  cfg.net.output_stride = 2;
  return cfg;
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("affspace_trainer_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

SnapshotRecord record(std::int64_t it, double score) {
  SnapshotRecord r;
  r.iteration = it;
  r.mean_target_affinity = score;
  return r;
}

bool all_zero(const Params<float>& p) {
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i].array().abs().maxCoeff() != 0.0f) return false;
  return true;
}

struct FirstBatch {
  Tensor<float> source, target;
  std::vector<LabelMap> labels;
};

FirstBatch first_batch(const TrainConfig& cfg) {
  const auto& d = tiny_data();
  FirstBatch b;
  std::vector<const Tensor<float>*> s, t;
  for (auto i : batch_indices(cfg.master_seed, 0, Domain::source, cfg.batch_size, d.source.size())) {
    s.push_back(&d.source.image(i));
    b.labels.push_back(d.source.labels(i));
  }
  for (auto i : batch_indices(cfg.master_seed, 0, Domain::target, cfg.batch_size, d.target.size()))
    t.push_back(&d.target.image(i));
  b.source = stack_images(s);
  b.target = stack_images(t);
  return b;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

TEST(TrainConfig, RoundTripsAndRejectsUnknownKeys) {
  auto cfg = tiny_config(TrainMode::asa);
  cfg.weights.lambda_asa = 4e-3;
  const auto back = TrainConfig::from_kv(KeyValues::parse(cfg.to_kv().str()));
  EXPECT_EQ(back.to_kv().str(), cfg.to_kv().str());
  EXPECT_EQ(back.fingerprint(), cfg.fingerprint());
  auto other = cfg;
  other.master_seed = 4;
  EXPECT_NE(other.fingerprint(), cfg.fingerprint());
  EXPECT_THROW(TrainConfig::from_kv(KeyValues::parse("learning_rate=0.1\n")), std::invalid_argument);
  EXPECT_THROW(parse_train_mode("adversarial"), std::invalid_argument);
  EXPECT_EQ(parse_train_mode("source-only"), TrainMode::source_only);
  auto bad = cfg;
  bad.total_iters = 0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.connectivity = 6;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(TrainConfig, DiscriminatorSeesEveryAffinityChannel) {
  auto cfg = tiny_config(TrainMode::asa);
  cfg.connectivity = 8;
  EXPECT_EQ(cfg.discriminator().in_channels, 40);
  cfg.connectivity = 4;
  EXPECT_EQ(cfg.discriminator().in_channels, 20);
}

TEST(Batches, PureAndInRange) {
  const auto a = batch_indices(7, 12, Domain::source, 4, 200);
  EXPECT_EQ(a, batch_indices(7, 12, Domain::source, 4, 200));
  EXPECT_NE(a, batch_indices(7, 13, Domain::source, 4, 200));
  EXPECT_NE(a, batch_indices(7, 12, Domain::target, 4, 200));
  for (auto i : batch_indices(1, 0, Domain::target, 64, 5)) EXPECT_LT(i, 5u);
}

// ---------------------------------------------------------------------------
// Single steps

TEST(Step, InitialLossesNearUniformValues) {
  for (auto mode : {TrainMode::asc, TrainMode::asa}) {
    const auto cfg = tiny_config(mode);
    const auto seg = init_params<float>(cfg.net, 1);
    const auto disc = init_params<float>(cfg.discriminator(), 2);
    const auto b = first_batch(cfg);
    const auto r = compute_step(cfg, seg, &disc, b.source, b.labels, b.target);
    EXPECT_NEAR(r.seg_loss, std::log(5.0), 0.05);
    EXPECT_GE(r.asc_loss, 0.0);
    EXPECT_LE(r.asc_loss, 2.0);
    if (mode == TrainMode::asa) {
      ASSERT_TRUE(r.d_loss);
      EXPECT_NEAR(*r.d_loss, 2 * std::log(2.0), 0.1);
      EXPECT_EQ(r.affinity_channels, 40);
    }
  }
}

TEST(Step, PhasesAreSeparated) {
  const auto cfg = tiny_config(TrainMode::asa);
  const auto seg = init_params<float>(cfg.net, 1);
  const auto disc = init_params<float>(cfg.discriminator(), 2);
  const auto b = first_batch(cfg);
  const auto r = compute_step(cfg, seg, &disc, b.source, b.labels, b.target);
  EXPECT_TRUE(all_zero(r.disc_grads_in_generator_phase));
  EXPECT_TRUE(all_zero(r.seg_grads_in_discriminator_phase));
  EXPECT_FALSE(all_zero(r.disc_grads));
  EXPECT_FALSE(all_zero(r.seg_grads));
}

TEST(Step, ZeroLambdaMatchesSourceOnly) {
  auto asa = tiny_config(TrainMode::asa);
  asa.weights.lambda_asa = 0;
  auto so = tiny_config(TrainMode::source_only);
  const auto seg = init_params<float>(so.net, 1);
  const auto disc = init_params<float>(asa.discriminator(), 2);
  const auto b = first_batch(so);
  const auto a = compute_step(asa, seg, &disc, b.source, b.labels, b.target);
  const auto s = compute_step(so, seg, nullptr, b.source, b.labels, b.target);
  EXPECT_EQ(a.seg_grads, s.seg_grads);
  EXPECT_EQ(a.seg_loss, s.seg_loss);
}

// ---------------------------------------------------------------------------
// Runs

TEST(Train, ZeroLambdaCleaningEqualsSourceOnly) {
  const auto& d = tiny_data();
  auto asc = tiny_config(TrainMode::asc);
  asc.weights.lambda_asc = 0;
  const auto a = train_asc(d.source, d.target_images(), asc);
  const auto s = train_asc(d.source, d.target_images(), tiny_config(TrainMode::source_only));
  ASSERT_EQ(a.rows.size(), s.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) EXPECT_EQ(metrics_line(a.rows[i]), metrics_line(s.rows[i]));
  EXPECT_EQ(a.last.seg, s.last.seg);
}

TEST(Train, ZeroLambdaAdversarialGeneratorEqualsSourceOnly) {
  const auto& d = tiny_data();
  auto asa = tiny_config(TrainMode::asa);
  asa.weights.lambda_asa = 0;
  const auto a = train_asa(d.source, d.target_images(), asa);
  const auto s = train_asc(d.source, d.target_images(), tiny_config(TrainMode::source_only));
  EXPECT_EQ(a.last.seg, s.last.seg);
  for (std::size_t i = 0; i < a.rows.size(); ++i) EXPECT_EQ(a.rows[i].seg_loss, s.rows[i].seg_loss);
}

TEST(Train, RowsSnapshotsAndSelection) {
  const auto& d = tiny_data();
  const auto r = train_asa(d.source, d.target_images(), tiny_config(TrainMode::asa));
  ASSERT_EQ(r.rows.size(), 7u);
  EXPECT_EQ(r.rows[0].iter, 0);
  EXPECT_TRUE(r.rows[0].mean_target_affinity);
  EXPECT_FALSE(r.rows[0].seg_loss);
  EXPECT_TRUE(r.rows[1].d_loss);
  EXPECT_FALSE(r.rows[1].mean_target_affinity);
  ASSERT_EQ(r.history.size(), 3u);
  EXPECT_EQ(r.history[2].iteration, 6);
  EXPECT_EQ(r.last.iteration, 6);
  for (std::size_t i = 0; i < 7; ++i) EXPECT_LE(r.rows[i].lr, 1e-2);
  const auto sel = snapshot_state(r.history[select_model(r.history)]);
  EXPECT_EQ(sel.mean_target_affinity, r.history[select_model(r.history)].mean_target_affinity);
}

TEST(Train, TargetLabelsAreNeverRead) {
  const auto& d = tiny_data();
  const auto reads = d.target.label_reads();
  const auto source_reads = d.source.label_reads();
  train_asa(d.source, d.target_images(), tiny_config(TrainMode::asa));
  train_asc(d.source, d.target_images(), tiny_config(TrainMode::asc));
  EXPECT_EQ(d.target.label_reads(), reads);
  EXPECT_GT(d.source.label_reads(), source_reads);
}

TEST(Train, DivergenceReportsBatchSeed) {
  const auto& d = tiny_data();
  auto cfg = tiny_config(TrainMode::source_only);
  cfg.base_lr_seg = 1e12;
  cfg.momentum_seg = 0.99;
  try {
    train_asc(d.source, d.target_images(), cfg);
    FAIL() << "expected divergence";
  } catch (const TrainingDiverged& e) {
    EXPECT_EQ(e.batch_seed, batch_seed(cfg.master_seed, e.iteration));
    EXPECT_NE(std::string(e.what()).find("batch seed " + std::to_string(e.batch_seed)), std::string::npos);
  }
}

TEST(Train, DeterministicLogsAndCheckpoints) {
  const auto& d = tiny_data();
  const auto a = scratch("det_a"), b = scratch("det_b");
  TrainOptions oa, ob;
  oa.out_dir = a;
  ob.out_dir = b;
  const auto ra = train_asa(d.source, d.target_images(), tiny_config(TrainMode::asa), oa);
  const auto rb = train_asa(d.source, d.target_images(), tiny_config(TrainMode::asa), ob);
  EXPECT_EQ(slurp(a / "metrics.csv"), slurp(b / "metrics.csv"));
  const auto sa = ra.history[select_model(ra.history)], sb = rb.history[select_model(rb.history)];
  EXPECT_EQ(sa.path.filename(), sb.path.filename());
  EXPECT_EQ(slurp(sa.path), slurp(sb.path));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Train, ResumeReproducesUninterruptedRun) {
  const auto& d = tiny_data();
  const auto dir = scratch("resume");
  TrainOptions o;
  o.out_dir = dir;
  const auto cfg = tiny_config(TrainMode::asa);
  const auto full = train_asa(d.source, d.target_images(), cfg, o);
  const auto full_log = slurp(dir / "metrics.csv");

  TrainOptions r;
  r.out_dir = dir;
  r.resume = load_checkpoint(dir / "ckpt_2.ckpt");
  const auto resumed = train_asa(d.source, d.target_images(), cfg, r);
  ASSERT_EQ(resumed.rows.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& x = resumed.rows[i];
    const auto& y = full.rows[i + 3];
    EXPECT_EQ(x.iter, y.iter);
    EXPECT_NEAR(*x.seg_loss, *y.seg_loss, 1e-6);
    EXPECT_NEAR(*x.d_loss, *y.d_loss, 1e-6);
  }
  EXPECT_EQ(slurp(dir / "metrics.csv"), full_log);

  auto other = cfg;
  other.weights.lambda_asa = 0.5;
  EXPECT_THROW(train_asa(d.source, d.target_images(), other, r), std::invalid_argument);
  fs::remove_all(dir);
}

// ---------------------------------------------------------------------------
// Checkpoints and selection

TEST(Checkpoint, LoadSaveIsByteIdentical) {
  const auto& d = tiny_data();
  const auto r = train_asa(d.source, d.target_images(), tiny_config(TrainMode::asa));
  std::ostringstream first;
  write_checkpoint(first, r.last);
  std::istringstream in(first.str());
  const auto back = read_checkpoint(in);
  std::ostringstream second;
  write_checkpoint(second, back);
  EXPECT_EQ(first.str(), second.str());
  EXPECT_EQ(back.seg, r.last.seg);
  EXPECT_EQ(back.disc_adam.step, r.last.disc_adam.step);
  EXPECT_EQ(back.config.fingerprint(), r.last.config.fingerprint());
}

TEST(Checkpoint, RejectsCorruption) {
  std::istringstream junk("not a checkpoint\n");
  EXPECT_THROW(read_checkpoint(junk), IoError);
  const auto& d = tiny_data();
  auto cfg = tiny_config(TrainMode::source_only);
  cfg.total_iters = 1;
  const auto r = train_asc(d.source, d.target_images(), cfg);
  std::ostringstream os;
  write_checkpoint(os, r.last);
  auto text = os.str();
  const auto pos = text.find("total_iters=1");
  ASSERT_NE(pos, std::string::npos);
  text.replace(pos, 13, "total_iters=2");
  std::istringstream tampered(text);
  EXPECT_THROW(read_checkpoint(tampered), IoError);
  std::istringstream truncated(os.str().substr(0, os.str().size() / 2));
  EXPECT_THROW(read_checkpoint(truncated), IoError);
  EXPECT_THROW(load_checkpoint("/nonexistent/x.ckpt"), IoError);
}

TEST(SelectModel, ArgmaxWithLaterTieBreak) {
  EXPECT_EQ(select_model({record(250, 0.5)}), 0u);
  EXPECT_EQ(select_model({record(1, 0.7), record(2, 0.9), record(3, 0.8)}), 1u);
  EXPECT_EQ(select_model({record(1, 0.8), record(2, 0.8)}), 1u);
  EXPECT_THROW(select_model({}), std::invalid_argument);
}

TEST(Metrics, CsvLayout) {
  EXPECT_EQ(metrics_header(), "iter,lr,seg_loss,asc_loss,adv_loss,d_loss,mean_target_affinity");
  MetricsRow row;
  row.iter = 3;
  row.lr = 0.5;
  row.seg_loss = 0.25;
  EXPECT_EQ(metrics_line(row), "3,0.5,0.25,,,,");
}
