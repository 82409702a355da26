// SPDX-License-Identifier: Apache-2.0
#include "nebla/io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "nebla/error.hpp"

namespace nebla::io {

namespace {

template <typename U>
void put_le(std::ostream& os, U v) {
  std::array<char, sizeof(U)> b{};
  for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b.data(), b.size());
}

template <typename U>
U get_le(std::istream& is, const char* what) {
  std::array<unsigned char, sizeof(U)> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), b.size())) {
    throw DataError(std::string("truncated input while reading ") + what);
  }
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void write_u32(std::ostream& os, std::uint32_t v) { put_le(os, v); }
void write_u64(std::ostream& os, std::uint64_t v) { put_le(os, v); }
void write_f32(std::ostream& os, float v) { put_le(os, std::bit_cast<std::uint32_t>(v)); }
void write_f64(std::ostream& os, double v) { put_le(os, std::bit_cast<std::uint64_t>(v)); }

void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void write_f32_array(std::ostream& os, const float* data, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(float)));
  } else {
    for (std::size_t i = 0; i < n; ++i) write_f32(os, data[i]);
  }
}

std::uint32_t read_u32(std::istream& is, const char* what) { return get_le<std::uint32_t>(is, what); }
std::uint64_t read_u64(std::istream& is, const char* what) { return get_le<std::uint64_t>(is, what); }
float read_f32(std::istream& is, const char* what) { return std::bit_cast<float>(get_le<std::uint32_t>(is, what)); }
double read_f64(std::istream& is, const char* what) {
  return std::bit_cast<double>(get_le<std::uint64_t>(is, what));
}

std::string read_string(std::istream& is, const char* what, std::size_t max_len) {
  const std::uint32_t n = read_u32(is, what);
  if (n > max_len) throw DataError(std::string("implausible length for ") + what);
  std::string s(n, '\0');
  if (n && !is.read(s.data(), n)) throw DataError(std::string("truncated input while reading ") + what);
  return s;
}

void read_f32_array(std::istream& is, float* data, std::size_t n, const char* what) {
  if constexpr (std::endian::native == std::endian::little) {
    if (!is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(float)))) {
      throw DataError(std::string("truncated input while reading ") + what);
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) data[i] = read_f32(is, what);
  }
}

void write_pgm(const std::string& path, const Tensor<float>& image) {
  if (image.rank() != 2) throw std::invalid_argument("write_pgm expects a [H, W] image, got " + shape_str(image.shape()));
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path + " for writing");
  os << "P5\n" << image.dim(1) << ' ' << image.dim(0) << "\n255\n";
  std::vector<unsigned char> bytes(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) {
    const float v = std::isfinite(image[i]) ? std::clamp(image[i], 0.0f, 255.0f) : 0.0f;
    bytes[i] = static_cast<unsigned char>(std::lround(v));
  }
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw DataError("failed writing " + path);
}

Tensor<float> read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  auto token = [&]() {
    std::string t;
    char c;
    while (is.get(c)) {
      if (c == '#') {
        std::string rest;
        std::getline(is, rest);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!t.empty()) break;
        continue;
      }
      t.push_back(c);
    }
    return t;
  };
  if (token() != "P5") throw DataError(path + ": not a binary PGM (P5) file");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(token());
    h = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::exception&) {
    throw DataError(path + ": malformed PGM header");
  }
  if (w == 0 || h == 0 || maxval != 255) throw DataError(path + ": unsupported PGM (need maxval 255)");
  std::vector<unsigned char> bytes(w * h);
  if (!is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()))) {
    throw DataError(path + ": truncated PGM payload");
  }
  Tensor<float> img({h, w});
  for (std::size_t i = 0; i < bytes.size(); ++i) img[i] = bytes[i];
  return img;
}

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  std::vector<char> buf(1 << 16);
  while (is) {
    is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    h = fnv1a(buf.data(), static_cast<std::size_t>(is.gcount()), h);
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace nebla::io
