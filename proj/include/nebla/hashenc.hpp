// SPDX-License-Identifier: Apache-2.0
//
// Multi-resolution hashed positional encoding.
//
// Each level floors the normalized position onto a grid of resolution r_l and
// reads one learnable F-vector from its table; the encoding is [P, f_0 .. f_15].
// There is no corner interpolation, so the encoding carries no gradient to P.

#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <random>
#include <vector>

#include "nebla/autodiff.hpp"

namespace nebla {

struct HashConfig {
  std::size_t levels = 16;
  std::size_t features = 2;
  std::size_t log2_table = 19;
  std::uint32_t base_resolution = 16;
  std::uint32_t max_resolution = 256;
  double init_std = 0.01;

  std::size_t table_size() const { return std::size_t{1} << log2_table; }
  std::size_t output_dim() const { return 3 + levels * features; }
  void validate() const;
};

inline constexpr std::array<std::uint64_t, 3> kHashPrimes = {1ULL, 2654435761ULL, 805459861ULL};

// min(r0 * 2^l, r_max). Throws std::out_of_range for l outside [0, levels).
std::uint32_t level_resolution(const HashConfig& cfg, std::size_t level);

// ((x p1) xor (y p2) xor (z p3)) mod table_size with 64-bit wrap-around products.
inline std::uint32_t hash_index(std::uint64_t x, std::uint64_t y, std::uint64_t z, std::size_t table_size) {
  const std::uint64_t h = (x * kHashPrimes[0]) ^ (y * kHashPrimes[1]) ^ (z * kHashPrimes[2]);
  return static_cast<std::uint32_t>(h % table_size);
}

// Table rows touched by a fixed point set: one index list per level. Built
// once because sample positions never change during training.
struct HashLookup {
  std::size_t points = 0;
  std::vector<std::shared_ptr<const std::vector<std::uint32_t>>> rows;  // per level
  std::vector<float> normalized;                                        // [points * 3]
};

// `normalized` holds points in [0,1]^3, three values per point. Throws
// std::out_of_range when a coordinate leaves the unit cube.
HashLookup make_hash_lookup(const HashConfig& cfg, const std::vector<double>& normalized);

template <typename T>
class HashEncoder {
 public:
  HashEncoder(ParameterStore<T>& store, const HashConfig& cfg, const std::string& prefix = "hash");

  void init(std::mt19937_64& rng);
  const HashConfig& config() const { return cfg_; }

  // [points, 3 + levels * features]
  Var<T> encode(Graph<T>& g, const HashLookup& lookup) const;

  // Single point convenience wrapper; output shape [1, 35].
  Var<T> encode_point(Graph<T>& g, const std::array<double, 3>& p) const;

  Parameter<T>& table(std::size_t level) { return *tables_.at(level); }

 private:
  HashConfig cfg_;
  std::vector<Parameter<T>*> tables_;
};

// Learned affine lift of the encoding to the shared feature width.
template <typename T>
class PosProjector {
 public:
  PosProjector(ParameterStore<T>& store, std::size_t in_dim, std::size_t out_dim, const std::string& prefix = "pos_proj");
  void init(std::mt19937_64& rng);
  Var<T> operator()(Graph<T>& g, Var<T> enc) const;

  Parameter<T>& weight() { return *w_; }
  Parameter<T>& bias() { return *b_; }

 private:
  Parameter<T>* w_;
  Parameter<T>* b_;
};

}  // namespace nebla
