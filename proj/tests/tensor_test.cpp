#include "affspace/manifest.hpp"
#include "affspace/tensor.hpp"
#include "affspace/tensor_io.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <sstream>

using namespace affspace;

TEST(Tensor, ShapeAndFill) {
  Tensor<float> t({2, 3, 4}, 1.5f);
  EXPECT_EQ(t.size(), 24);
  EXPECT_EQ(t.rank(), 3);
  EXPECT_EQ(t.dim(1), 3);
  EXPECT_FLOAT_EQ(t[23], 1.5f);
  EXPECT_FALSE(t.empty());
  EXPECT_TRUE(Tensor<float>().empty());
}

TEST(Tensor, RejectsBadShapeAndData) {
  EXPECT_THROW(Tensor<double>({2, 0}), ShapeError);
  EXPECT_THROW(Tensor<double>({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(Tensor<double>({2}, {1.0, nan}), std::domain_error);
  EXPECT_THROW(Tensor<double>({1}, {std::numeric_limits<double>::infinity()}), std::domain_error);
}

TEST(Tensor, RowMajorAccess) {
  Tensor<double> t({1, 2, 2, 3});
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i);
  EXPECT_EQ(t.at(0, 1, 0, 2), 8.0);
  EXPECT_EQ(t.at(0, 0, 1, 1), 4.0);
}

TEST(Tensor, ReshapeCastCompare) {
  Tensor<double> t({2, 3}, {1, 2, 3, 4, 5, 6});
  const auto r = t.reshaped({3, 2});
  EXPECT_EQ(r.shape(), (Shape{3, 2}));
  EXPECT_THROW(t.reshaped({4, 2}), ShapeError);
  const auto f = t.cast<float>();
  EXPECT_EQ(f[5], 6.0f);
  EXPECT_EQ(t, t.reshaped({2, 3}));
  EXPECT_FALSE(t == r);
  EXPECT_EQ(max_abs_diff(t, Tensor<double>({2, 3}, {1, 2, 3, 4, 5, 7})), 1.0);
}

TEST(TensorIo, RoundTripIsBitExact) {
  Tensor<float> f({2, 3}, {0.1f, -2.5f, 3e-8f, 1e30f, 0.0f, -0.0f});
  std::stringstream ss;
  write_tensor(ss, f);
  EXPECT_EQ(ss.str().substr(0, ss.str().find('\n')), "ten v1 2 2 3 f32");
  const auto back = read_tensor<float>(ss);
  EXPECT_EQ(back, f);
  EXPECT_TRUE(std::signbit(back[5]));

  Tensor<double> d({1}, {0.1});
  std::stringstream sd;
  write_tensor(sd, d);
  EXPECT_EQ(read_tensor<double>(sd)[0], 0.1);
}

TEST(TensorIo, RejectsMalformedInput) {
  std::stringstream bad_magic("tensor v1 1 2 f32\n12345678");
  EXPECT_THROW(read_tensor<float>(bad_magic), IoError);
  std::stringstream truncated("ten v1 1 4 f32\nabc");
  EXPECT_THROW(read_tensor<float>(truncated), IoError);
  std::stringstream dtype("ten v1 1 1 i32\n1234");
  EXPECT_THROW(read_tensor<float>(dtype), IoError);
}

TEST(TensorIo, MissingFileIsIoError) {
  EXPECT_THROW(load_tensor<float>("/nonexistent/dir/x.ten"), IoError);
}

TEST(TensorIo, ByteEncodingRoundsHalfUp) {
  EXPECT_EQ(to_byte(0.0), 0);
  EXPECT_EQ(to_byte(1.0), 255);
  EXPECT_EQ(to_byte(0.5), 128);  // 127.5 rounds up
  EXPECT_EQ(to_byte(1.7), 255);
  EXPECT_EQ(to_byte(-0.2), 0);
}

TEST(TensorIo, PgmRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "affspace_pgm_test.pgm";
  std::vector<std::uint8_t> px{0, 10, 200, 255, 7, 9};
  save_pgm(path, 2, 3, px);
  const auto img = load_pgm(path);
  EXPECT_EQ(img.height, 2);
  EXPECT_EQ(img.width, 3);
  EXPECT_EQ(img.pixels, px);
  std::filesystem::remove(path);
}

TEST(Manifest, ParsesCommentsAndRejectsDuplicates) {
  const auto kv = KeyValues::parse("# header\na = 1\n\nb=two # trailing\n");
  EXPECT_EQ(kv.get_int("a"), 1);
  EXPECT_EQ(kv.get("b"), "two");
  EXPECT_THROW(kv.get("c"), std::invalid_argument);
  EXPECT_THROW(KeyValues::parse("a=1\na=2\n"), std::invalid_argument);
  EXPECT_THROW(KeyValues::parse("novalue\n"), std::invalid_argument);
  EXPECT_THROW(KeyValues::parse("x=1.5").get_int("x"), std::invalid_argument);
}

TEST(Manifest, DoublesRoundTrip) {
  for (double v : {0.1, 2.5e-4, 1.0 / 3.0, -7.0, 1e-300}) {
    KeyValues kv;
    kv.set("v", v);
    EXPECT_EQ(KeyValues::parse(kv.str()).get_double("v"), v);
  }
}
