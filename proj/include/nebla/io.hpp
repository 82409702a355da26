// SPDX-License-Identifier: Apache-2.0
//
// Little-endian binary helpers, PGM images and file hashing.

#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "nebla/tensor.hpp"

namespace nebla::io {

void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
void write_f32(std::ostream& os, float v);
void write_f64(std::ostream& os, double v);
void write_string(std::ostream& os, const std::string& s);  // u32 length + bytes
void write_f32_array(std::ostream& os, const float* data, std::size_t n);

// Readers throw DataError on a short read; `what` names the field.
std::uint32_t read_u32(std::istream& is, const char* what);
std::uint64_t read_u64(std::istream& is, const char* what);
float read_f32(std::istream& is, const char* what);
double read_f64(std::istream& is, const char* what);
std::string read_string(std::istream& is, const char* what, std::size_t max_len = 1u << 24);
void read_f32_array(std::istream& is, float* data, std::size_t n, const char* what);

// Binary PGM (P5, maxval 255). Values are clamped to [0,255] and rounded.
void write_pgm(const std::string& path, const Tensor<float>& image);  // shape [H, W]
Tensor<float> read_pgm(const std::string& path);                      // shape [H, W]

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a_file(const std::string& path);
std::string hex64(std::uint64_t v);

}  // namespace nebla::io
