#pragma once

#include "affspace/tensor.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace affspace {

static_assert(std::endian::native == std::endian::little, ".ten payloads are written in native little-endian order");

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename Scalar>
constexpr const char* ten_dtype() {
  if constexpr (std::is_same_v<Scalar, float>)
    return "f32";
  else if constexpr (std::is_same_v<Scalar, double>)
    return "f64";
  else
    static_assert(sizeof(Scalar) == 0, "unsupported .ten scalar");
}

/// `ten v1 <rank> <d0> ... <dtype>\n` followed by raw row-major values.
template <typename Scalar>
void write_tensor(std::ostream& os, const Tensor<Scalar>& t) {
  os << "ten v1 " << t.rank();
  for (Index d : t.shape()) os << ' ' << d;
  os << ' ' << ten_dtype<Scalar>() << '\n';
  os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(Scalar)));
  if (!os) throw IoError("failed writing tensor payload");
}

namespace detail {

template <typename From, typename Scalar>
Tensor<Scalar> read_payload(std::istream& is, Shape shape, const std::string& what) {
  std::vector<From> raw(static_cast<std::size_t>(shape_numel(shape)));
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * sizeof(From)));
  if (is.gcount() != static_cast<std::streamsize>(raw.size() * sizeof(From)))
    throw IoError(what + ": truncated tensor payload");
  if constexpr (std::is_same_v<From, Scalar>) {
    return Tensor<Scalar>(std::move(shape), std::span<const Scalar>(raw));
  } else {
    std::vector<Scalar> conv(raw.begin(), raw.end());
    return Tensor<Scalar>(std::move(shape), std::span<const Scalar>(conv));
  }
}

}  // namespace detail

template <typename Scalar>
Tensor<Scalar> read_tensor(std::istream& is, const std::string& what = "tensor") {
  std::string line;
  if (!std::getline(is, line)) throw IoError(what + ": missing .ten header");
  std::istringstream hs(line);
  std::string magic, version, dtype;
  Index rank = 0;
  hs >> magic >> version >> rank;
  if (!hs || magic != "ten" || version != "v1" || rank < 0 || rank > 8)
    throw IoError(what + ": malformed .ten header '" + line + "'");
  Shape shape(static_cast<std::size_t>(rank));
  for (auto& d : shape) {
    hs >> d;
    if (!hs || d <= 0) throw IoError(what + ": bad dimension in header '" + line + "'");
  }
  hs >> dtype;
  std::string trailing;
  if (!hs || (hs >> trailing)) throw IoError(what + ": malformed .ten header '" + line + "'");
  try {
    if (dtype == "f32") return detail::read_payload<float, Scalar>(is, std::move(shape), what);
    if (dtype == "f64") return detail::read_payload<double, Scalar>(is, std::move(shape), what);
  } catch (const std::domain_error& e) {
    throw IoError(what + ": " + e.what());
  }
  throw IoError(what + ": unknown dtype '" + dtype + "'");
}

template <typename Scalar>
void save_tensor(const std::filesystem::path& path, const Tensor<Scalar>& t) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write_tensor(os, t);
}

template <typename Scalar>
Tensor<Scalar> load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return read_tensor<Scalar>(is, path.string());
}

/// Binary (P5) 8-bit greyscale image.
inline void save_pgm(const std::filesystem::path& path, Index height, Index width, const std::vector<std::uint8_t>& pixels) {
  if (static_cast<Index>(pixels.size()) != height * width) throw std::invalid_argument("save_pgm: size mismatch");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << "P5\n" << width << ' ' << height << "\n255\n";
  os.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!os) throw IoError("failed writing " + path.string());
}

struct PgmImage {
  Index height = 0;
  Index width = 0;
  std::vector<std::uint8_t> pixels;
};

inline PgmImage load_pgm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::string magic;
  int maxval = 0;
  PgmImage img;
  is >> magic >> img.width >> img.height >> maxval;
  if (!is || magic != "P5" || maxval != 255) throw IoError(path.string() + ": not an 8-bit P5 image");
  is.get();
  img.pixels.resize(static_cast<std::size_t>(img.width * img.height));
  is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (is.gcount() != static_cast<std::streamsize>(img.pixels.size())) throw IoError(path.string() + ": truncated");
  return img;
}

/// 255 * v rounded half-up, saturated to [0, 255].
inline std::uint8_t to_byte(double v) {
  const double s = std::floor(255.0 * v + 0.5);
  return static_cast<std::uint8_t>(s < 0 ? 0 : (s > 255 ? 255 : s));
}

}  // namespace affspace
