// Drives the command-line tool end to end: exit codes, report files and the
// affinity-map export.

#include "affspace/tensor_io.hpp"
#include "affspace/trainer.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

using namespace affspace;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "affspace_io_test";

int run(const std::string& args) {
  const std::string cmd = std::string(AFFSPACE_CLI) + " " + args + " >" + (kRoot / "last.log").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string path(const std::string& rel) { return (kRoot / rel).string(); }

double printed_value(const std::string& key) {
  const auto log = slurp(kRoot / "last.log");
  const auto at = log.find(key + " ");
  if (at == std::string::npos) return -1;
  return std::stod(log.substr(at + key.size() + 1));
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
    ASSERT_EQ(run("gen-data --out " + path("data") + " --seed 4 --size 32x32 --n-source 6 --n-target 5 --n-eval 3"), 0);
    ASSERT_EQ(run("gen-data --out " + path("data4") + " --seed 4 --classes 4 --size 32x32 --n-source 2 --n-target 2 "
                  "--n-eval 2"),
              0);
    std::ofstream(kRoot / "tiny.cfg") << "total_iters=4\nbatch_size=2\nsnapshot_every=2\nnet_widths=8,8\n"
                                         "net_dilations=1,2\noutput_stride=2\nbase_lr_seg=0.01\n";
    ASSERT_EQ(run("train --mode asa --config " + path("tiny.cfg") + " --data " + path("data") + " --out " + path("run")),
              0);
  }
  static void TearDownTestSuite() { fs::remove_all(kRoot); }
};

}  // namespace

TEST_F(Cli, TrainWritesSnapshotsAndMetrics) {
  for (const char* f : {"metrics.csv", "config.resolved.txt", "ckpt_2.ckpt", "ckpt_4.ckpt"})
    EXPECT_TRUE(fs::exists(kRoot / "run" / f)) << f;
  EXPECT_EQ(slurp(kRoot / "run" / "metrics.csv").substr(0, metrics_header().size()), metrics_header());
}

TEST_F(Cli, FreshModelIsNearChance) {
  Checkpoint fresh;
  fresh.config.net.num_classes = 5;
  fresh.seg = init_params<float>(fresh.config.net, 8);
  fresh.seg_velocity = fresh.seg.zeros_like();
  save_checkpoint(kRoot / "fresh.ckpt", fresh);
  ASSERT_EQ(run("eval --ckpt " + path("fresh.ckpt") + " --data " + path("data") + " --out " + path("r0.csv")), 0);
  const double m = printed_value("miou");
  EXPECT_GT(m, 0.0);
  EXPECT_LT(m, 0.3);
}

TEST_F(Cli, EvalIsRepeatable) {
  const std::string args = " --ckpt " + path("run/ckpt_4.ckpt") + " --data " + path("data") + " --out ";
  ASSERT_EQ(run("eval" + args + path("a.csv")), 0);
  ASSERT_EQ(run("eval" + args + path("b.csv")), 0);
  EXPECT_EQ(slurp(kRoot / "a.csv"), slurp(kRoot / "b.csv"));
  EXPECT_NE(slurp(kRoot / "a.csv").find("miou,"), std::string::npos);
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run("gen-data --out " + path("bad") + " --size 32by32"), 2);
  EXPECT_EQ(run("train --mode fancy --data " + path("data") + " --out " + path("x")), 2);
  EXPECT_EQ(run("eval --ckpt " + path("nowhere.ckpt") + " --data " + path("data") + " --out " + path("x.csv")), 3);
  EXPECT_EQ(run("eval --ckpt " + path("run/ckpt_4.ckpt") + " --data " + path("data4") + " --out " + path("x.csv")), 5);
  EXPECT_EQ(run("self-train --ckpt " + path("run/ckpt_4.ckpt") + " --data " + path("data") + " --out " + path("st") +
                " --threshold 1.01"),
            6);
  std::ofstream(kRoot / "hot.cfg") << "total_iters=4\nbatch_size=2\nnet_widths=8,8\nnet_dilations=1,2\n"
                                      "output_stride=2\nbase_lr_seg=1e12\n";
  EXPECT_EQ(run("train --mode asc --config " + path("hot.cfg") + " --data " + path("data") + " --out " + path("hot")), 4);
}

TEST_F(Cli, ResumeWithOtherConfigIsRejected) {
  EXPECT_EQ(run("train --mode asa --config " + path("tiny.cfg") + " --lambda 0.5 --data " + path("data") + " --out " +
                path("other") + " --resume " + path("run/ckpt_2.ckpt")),
            5);
}

TEST_F(Cli, AffinityMapExport) {
  const auto image = kRoot / "data" / "eval" / "0.img.ten";
  ASSERT_TRUE(fs::exists(image));
  ASSERT_EQ(run("affinity-map --ckpt " + path("run/ckpt_4.ckpt") + " --image " + image.string() + " --out " +
                path("am")),
            0);
  const auto values = load_tensor<float>(kRoot / "am.ten");
  ASSERT_EQ(values.shape(), (Shape{32, 32}));
  const std::string header = "P5\n32 32\n255\n";
  const auto pgm = slurp(kRoot / "am.pgm");
  ASSERT_EQ(pgm.size(), header.size() + 32 * 32);
  EXPECT_EQ(pgm.substr(0, header.size()), header);
  for (Index i = 0; i < values.size(); ++i)
    EXPECT_EQ(static_cast<std::uint8_t>(pgm[header.size() + static_cast<std::size_t>(i)]), to_byte(values[i]));
  EXPECT_EQ(slurp(kRoot / "am.seg.pgm").size(), header.size() + 32 * 32);
  EXPECT_EQ(run("affinity-map --ckpt " + path("run/ckpt_4.ckpt") + " --image " + path("missing.ten") + " --out " +
                path("am2")),
            3);
}
