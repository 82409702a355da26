// SPDX-License-Identifier: Apache-2.0
#include "nebla/hashenc.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "nebla/error.hpp"
#include "nebla/init.hpp"

namespace nebla {

void HashConfig::validate() const {
  if (levels == 0 || features == 0) throw ConfigError("hash: levels and features must be positive");
  if (log2_table == 0 || log2_table > 30) throw ConfigError("hash: log2 table size must lie in [1, 30]");
  if (base_resolution == 0 || max_resolution < base_resolution) {
    throw ConfigError("hash: need 0 < base resolution <= max resolution");
  }
  if (!(init_std >= 0.0)) throw ConfigError("hash: init std must be non-negative");
}

std::uint32_t level_resolution(const HashConfig& cfg, std::size_t level) {
  if (level >= cfg.levels) {
    throw std::out_of_range("hash level " + std::to_string(level) + " outside [0, " + std::to_string(cfg.levels) + ")");
  }
  const std::uint64_t r = level >= 32 ? cfg.max_resolution : std::uint64_t{cfg.base_resolution} << level;
  return static_cast<std::uint32_t>(std::min<std::uint64_t>(r, cfg.max_resolution));
}

HashLookup make_hash_lookup(const HashConfig& cfg, const std::vector<double>& normalized) {
  if (normalized.size() % 3 != 0) throw std::invalid_argument("hash lookup: coordinates must come in triples");
  HashLookup lk;
  lk.points = normalized.size() / 3;
  lk.normalized.resize(normalized.size());
  for (std::size_t i = 0; i < normalized.size(); ++i) {
    const double c = normalized[i];
    if (!(c >= 0.0 && c <= 1.0)) {
      throw std::out_of_range("hash encode: coordinate " + std::to_string(c) + " outside [0, 1]");
    }
    lk.normalized[i] = static_cast<float>(c);
  }
  const std::size_t tsize = cfg.table_size();
  for (std::size_t l = 0; l < cfg.levels; ++l) {
    const double r = level_resolution(cfg, l);
    auto rows = std::make_shared<std::vector<std::uint32_t>>(lk.points);
    for (std::size_t p = 0; p < lk.points; ++p) {
      const auto cx = static_cast<std::uint64_t>(std::floor(normalized[3 * p] * r));
      const auto cy = static_cast<std::uint64_t>(std::floor(normalized[3 * p + 1] * r));
      const auto cz = static_cast<std::uint64_t>(std::floor(normalized[3 * p + 2] * r));
      (*rows)[p] = hash_index(cx, cy, cz, tsize);
    }
    lk.rows.push_back(std::move(rows));
  }
  return lk;
}

template <typename T>
HashEncoder<T>::HashEncoder(ParameterStore<T>& store, const HashConfig& cfg, const std::string& prefix) : cfg_(cfg) {
  cfg_.validate();
  for (std::size_t l = 0; l < cfg_.levels; ++l) {
    tables_.push_back(&store.add(prefix + ".table" + std::to_string(l), {cfg_.table_size(), cfg_.features}));
  }
}

template <typename T>
void HashEncoder<T>::init(std::mt19937_64& rng) {
  for (auto* t : tables_) init_normal(*t, cfg_.init_std, rng);
}

template <typename T>
Var<T> HashEncoder<T>::encode(Graph<T>& g, const HashLookup& lookup) const {
  if (lookup.rows.size() != cfg_.levels) throw std::invalid_argument("hash lookup built for a different level count");
  std::vector<Var<T>> parts;
  parts.push_back(g.constant(Tensor<T>({lookup.points, 3}, std::vector<T>(lookup.normalized.begin(), lookup.normalized.end()))));
  for (std::size_t l = 0; l < cfg_.levels; ++l) parts.push_back(gather_rows(g.param(*tables_[l]), lookup.rows[l]));
  return concat(parts, 1);
}

template <typename T>
Var<T> HashEncoder<T>::encode_point(Graph<T>& g, const std::array<double, 3>& p) const {
  return encode(g, make_hash_lookup(cfg_, {p[0], p[1], p[2]}));
}

template <typename T>
PosProjector<T>::PosProjector(ParameterStore<T>& store, std::size_t in_dim, std::size_t out_dim, const std::string& prefix)
    : w_(&store.add(prefix + ".weight", {in_dim, out_dim})), b_(&store.add(prefix + ".bias", {out_dim})) {}

template <typename T>
void PosProjector<T>::init(std::mt19937_64& rng) {
  init_fan_in(*w_, w_->value.dim(0), rng);
  init_constant(*b_, 0.0);
}

template <typename T>
Var<T> PosProjector<T>::operator()(Graph<T>& g, Var<T> enc) const {
  if (enc.shape().size() != 2 || enc.shape()[1] != w_->value.dim(0)) {
    throw std::invalid_argument("pos projector: encoding " + shape_str(enc.shape()) + " does not match weight " +
                                shape_str(w_->value.shape()));
  }
  return linear(enc, g.param(*w_), g.param(*b_));
}

template class HashEncoder<float>;
template class HashEncoder<double>;
template class PosProjector<float>;
template class PosProjector<double>;

}  // namespace nebla
