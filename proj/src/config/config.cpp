// SPDX-License-Identifier: Apache-2.0
#include "nebla/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <type_traits>

#include "nebla/error.hpp"

namespace nebla {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <typename U>
U parse_unsigned(const std::string& v) {
  U out{};
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("expected a non-negative integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& v) {
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size() || !std::isfinite(d)) {
    throw ConfigError("expected a finite number, got '" + v + "'");
  }
  return d;
}

std::string format_double(double d) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", d);
  return buf;
}

template <typename V>
void parse_into(V& out, const std::string& v) {
  if constexpr (std::is_same_v<V, bool>) {
    if (v == "true" || v == "1") out = true;
    else if (v == "false" || v == "0") out = false;
    else throw ConfigError("expected true or false, got '" + v + "'");
  } else if constexpr (std::is_same_v<V, double> || std::is_same_v<V, float>) {
    out = static_cast<V>(parse_double(v));
  } else if constexpr (std::is_integral_v<V>) {
    out = parse_unsigned<V>(v);
  } else if constexpr (std::is_same_v<V, std::string>) {
    out = v;
  } else {
    static_assert(std::is_same_v<V, std::vector<std::size_t>>);
    out.clear();
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_unsigned<std::size_t>(trim(item)));
    if (out.empty()) throw ConfigError("expected a comma-separated list, got '" + v + "'");
  }
}

template <typename V>
std::string format_value(const V& x) {
  if constexpr (std::is_same_v<V, bool>) {
    return x ? "true" : "false";
  } else if constexpr (std::is_floating_point_v<V>) {
    return format_double(x);
  } else if constexpr (std::is_integral_v<V>) {
    return std::to_string(x);
  } else if constexpr (std::is_same_v<V, std::string>) {
    return x;
  } else {
    std::string s;
    for (std::size_t i = 0; i < x.size(); ++i) s += (i ? "," : "") + std::to_string(x[i]);
    return s;
  }
}

struct Entry {
  std::string key, doc;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename Access>
Entry entry(std::string key, std::string doc, Access access) {
  Entry e{std::move(key), std::move(doc), {}, {}};
  e.set = [access](RunConfig& c, const std::string& v) { parse_into(access(c), v); };
  e.get = [access](const RunConfig& c) { return format_value(access(const_cast<RunConfig&>(c))); };
  return e;
}

#define KEY(name, doc, expr) entry(name, doc, [](RunConfig& c) -> auto& { return expr; })

const std::vector<Entry>& registry() {
  static const std::vector<Entry> keys = {
      KEY("preset", "desk, micro or full; applied before every other key", c.preset),
      KEY("seed", "master seed for initialization and dropout", c.seed),
      KEY("volume.height", "volume H (vertical axis)", c.height),
      KEY("volume.width", "volume W", c.width),
      KEY("volume.depth", "volume D", c.depth),
      KEY("phantom.teeth", "teeth placed along the arch", c.phantom.teeth),
      KEY("phantom.z_lo", "lowest bone slice", c.phantom.z_lo),
      KEY("phantom.z_hi", "highest bone slice", c.phantom.z_hi),
      KEY("phantom.tooth_radius_min", "smallest tooth radius in voxels", c.phantom.tooth_radius_min),
      KEY("phantom.tooth_radius_max", "largest tooth radius in voxels", c.phantom.tooth_radius_max),
      KEY("phantom.bone", "trabecular bone density", c.phantom.bone),
      KEY("phantom.cortex", "cortical rim density", c.phantom.cortex),
      KEY("phantom.tooth", "tooth density", c.phantom.tooth),
      KEY("phantom.cortex_thickness", "rim width in voxels", c.phantom.cortex_thickness),
      KEY("trajectory.x0", "arch center, W axis", c.trajectory.x0),
      KEY("trajectory.y0", "arch center, D axis", c.trajectory.y0),
      KEY("trajectory.a_t", "trajectory ellipse semi-axis along W", c.trajectory.a_t),
      KEY("trajectory.b_t", "trajectory ellipse semi-axis along D", c.trajectory.b_t),
      KEY("trajectory.a_i", "inner horseshoe semi-axis along W", c.trajectory.a_i),
      KEY("trajectory.b_i", "inner horseshoe semi-axis along D", c.trajectory.b_i),
      KEY("trajectory.a_o", "outer horseshoe semi-axis along W", c.trajectory.a_o),
      KEY("trajectory.b_o", "outer horseshoe semi-axis along D", c.trajectory.b_o),
      KEY("trajectory.sweep", "angular sweep of the tangent points (radians)", c.trajectory.sweep),
      KEY("trajectory.sweep_start", "ellipse parameter of column 0", c.trajectory.sweep_start),
      KEY("trajectory.rows", "panoramic image height", c.trajectory.rows),
      KEY("trajectory.cols", "panoramic image width", c.trajectory.cols),
      KEY("trajectory.z_min", "height of row 0", c.trajectory.z_min),
      KEY("trajectory.z_max", "height of the last row", c.trajectory.z_max),
      KEY("trajectory.samples", "samples per ray", c.trajectory.samples),
      KEY("render.mu_scale", "attenuation per unit density/255; negative = 4 / mean path", c.mu_scale),
      KEY("preprocess.low_percentile", "lower clip percentile", c.preprocess.low_percentile),
      KEY("preprocess.high_percentile", "upper clip percentile", c.preprocess.high_percentile),
      KEY("preprocess.log_compress", "log1p after clipping", c.preprocess.log_compress),
      KEY("hash.levels", "resolution levels", c.hash.levels),
      KEY("hash.features", "features per level", c.hash.features),
      KEY("hash.log2_table", "log2 of rows per level table", c.hash.log2_table),
      KEY("hash.base_resolution", "resolution of level 0", c.hash.base_resolution),
      KEY("hash.max_resolution", "resolution cap", c.hash.max_resolution),
      KEY("hash.init_std", "table initialization std", c.hash.init_std),
      KEY("vit.patch", "patch size", c.vit.patch),
      KEY("vit.dim", "token width", c.vit.dim),
      KEY("vit.layers", "encoder (and decoder) layers", c.vit.layers),
      KEY("vit.heads", "attention heads", c.vit.heads),
      KEY("vit.ff_hidden", "feed-forward hidden width", c.vit.ff_hidden),
      KEY("vit.dropout", "dropout rate", c.vit.dropout),
      KEY("vit.decoder_dropout", "dropout inside decoder layers", c.vit.decoder_dropout),
      KEY("vit.decoder_additive", "replace decoder cross-attention by adding the encoder state", c.vit.decoder_additive),
      KEY("vit.cnn_blocks", "residual blocks in the local branch", c.vit.cnn_blocks),
      KEY("vit.cnn_convs", "convolutions per block", c.vit.cnn_convs),
      KEY("vit.cnn_beta", "swish beta of the local branch", c.vit.cnn_beta),
      KEY("vit.ff_beta", "swish beta of the feed-forward layers", c.vit.ff_beta),
      KEY("vit.fuse_beta", "swish beta of the fusion map", c.vit.fuse_beta),
      KEY("vit.kappa", "channels of the fused image features", c.vit.kappa),
      KEY("field.width", "feature width f shared by image and position features", c.field.width),
      KEY("field.depth", "hidden layers of the density MLP", c.field.depth),
      KEY("field.skip_layer", "layer receiving the input skip", c.field.skip_layer),
      KEY("field.beta", "swish beta of the density MLP", c.field.beta),
      KEY("unet.channels", "encoder channels per level, comma separated", c.unet.channels),
      KEY("unet.beta", "swish beta of the U-Net", c.unet.beta),
      KEY("perc.channels", "feature network stage widths", c.perc.channels),
      KEY("perc.seed", "feature network weight seed", c.perc.seed),
      KEY("perc.beta", "feature network swish beta", c.perc.beta),
      KEY("loss.lambda_proj", "weight of the projection loss", c.loss.proj),
      KEY("loss.lambda_perc", "weight of the perceptual loss", c.loss.perc),
      KEY("adam.lr", "initial learning rate", c.adam.lr),
      KEY("adam.beta1", "first moment decay", c.adam.beta1),
      KEY("adam.beta2", "second moment decay", c.adam.beta2),
      KEY("adam.eps", "denominator offset", c.adam.eps),
      KEY("scheduler.factor", "learning rate multiplier on plateau", c.scheduler.factor),
      KEY("scheduler.patience", "epochs without improvement before decay", c.scheduler.patience),
      KEY("scheduler.min_lr", "learning rate floor", c.scheduler.min_lr),
      KEY("train.epochs", "maximum epochs", c.train.epochs),
      KEY("train.early_stop_patience", "epochs without validation improvement before stopping", c.train.early_stop_patience),
      KEY("train.max_steps", "optimizer step limit, 0 for none", c.train.max_steps),
  };
  return keys;
}

#undef KEY

const Entry& find_key(const std::string& key) {
  for (const auto& e : registry())
    if (e.key == key) return e;
  throw ConfigError("unknown config key '" + key + "'");
}

void assign(RunConfig& cfg, const std::string& key, const std::string& value, const std::string& where) {
  try {
    find_key(key).set(cfg, value);
  } catch (const ConfigError& e) {
    throw ConfigError(where + key + ": " + e.what());
  }
}

std::pair<std::string, std::string> split_assignment(const std::string& line, const std::string& where) {
  const auto eq = line.find('=');
  if (eq == std::string::npos) throw ConfigError(where + "expected key = value, got '" + line + "'");
  auto key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
  if (key.empty()) throw ConfigError(where + "missing key");
  return {key, value};
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("train.epochs must be at least 1");
  if (early_stop_patience == 0) throw ConfigError("train.early_stop_patience must be at least 1");
}

void RunConfig::sync() {
  vit.image_h = trajectory.rows;
  vit.image_w = trajectory.cols;
  vit.feature_dim = field.width;
}

void RunConfig::validate() const {
  if (preset != "desk" && preset != "micro" && preset != "full") throw ConfigError("unknown preset '" + preset + "'");
  if (height < 2 || width < 2 || depth < 2) throw ConfigError("volume dims must be at least 2");
  trajectory.validate();
  hash.validate();
  vit.validate();
  field.validate();
  unet.validate();
  perc.validate();
  loss.validate();
  adam.validate();
  scheduler.validate();
  train.validate();
  if (vit.image_h != trajectory.rows || vit.image_w != trajectory.cols || vit.feature_dim != field.width) {
    throw ConfigError("derived ViT fields are stale; call sync()");
  }
  const auto& t = trajectory;
  if (t.x0 - t.a_o < 0 || t.x0 + t.a_o > double(width - 1) || t.y0 < 0 || t.y0 + t.b_o > double(depth - 1)) {
    throw ConfigError("horseshoe does not fit inside the " + std::to_string(width) + "x" + std::to_string(depth) +
                      " volume footprint");
  }
  if (t.z_min < 0 || t.z_max > double(height - 1)) throw ConfigError("trajectory rows leave the volume height");
  const std::size_t f = std::size_t{1} << unet.levels();
  if (height % f || width % f || depth % f) {
    throw ConfigError("volume " + std::to_string(height) + "x" + std::to_string(width) + "x" + std::to_string(depth) +
                      " is not divisible by 2^" + std::to_string(unet.levels()) + " for the U-Net");
  }
  phantom_spec(0).validate();
}

PhantomSpec RunConfig::phantom_spec(std::uint64_t phantom_seed) const {
  PhantomSpec s;
  s.seed = phantom_seed;
  s.height = height;
  s.width = width;
  s.depth = depth;
  s.x0 = trajectory.x0;
  s.y0 = trajectory.y0;
  s.a_i = trajectory.a_i;
  s.b_i = trajectory.b_i;
  s.a_o = trajectory.a_o;
  s.b_o = trajectory.b_o;
  s.z_lo = phantom.z_lo;
  s.z_hi = phantom.z_hi;
  s.teeth = phantom.teeth;
  s.tooth_radius_min = phantom.tooth_radius_min;
  s.tooth_radius_max = phantom.tooth_radius_max;
  s.bone = static_cast<float>(phantom.bone);
  s.cortex = static_cast<float>(phantom.cortex);
  s.tooth = static_cast<float>(phantom.tooth);
  s.cortex_thickness = phantom.cortex_thickness;
  return s;
}

RunConfig preset_config(const std::string& name) {
  RunConfig c;
  c.preset = name;
  c.hash.log2_table = 17;
  if (name == "desk") {
    // Defaults of every section are the desk values.
  } else if (name == "micro") {
    c.height = 8;
    c.width = 16;
    c.depth = 16;
    auto& t = c.trajectory;
    t.x0 = 7.5;
    t.y0 = 4.0;
    t.a_t = 3.0;
    t.b_t = 4.5;
    t.a_i = 4.0;
    t.b_i = 6.0;
    t.a_o = 7.0;
    t.b_o = 10.0;
    t.rows = 8;
    t.cols = 16;
    t.z_min = 0.0;
    t.z_max = 7.0;
    t.samples = 8;
    c.phantom.teeth = 4;
    c.phantom.z_lo = 1.0;
    c.phantom.z_hi = 6.0;
    c.phantom.tooth_radius_min = 0.8;
    c.phantom.tooth_radius_max = 1.2;
    c.phantom.cortex_thickness = 0.6;
    c.hash.log2_table = 12;
    c.vit.patch = 8;
    c.vit.dim = 8;
    c.vit.layers = 1;
    c.vit.heads = 2;
    c.vit.ff_hidden = 16;
    c.vit.kappa = 8;
    c.field.width = 8;
    c.unet.channels = {4};
    c.perc.channels = {4, 8};
  } else if (name == "full") {
    c.height = 128;
    c.width = 256;
    c.depth = 256;
    auto& t = c.trajectory;
    for (double* v : {&t.a_t, &t.b_t, &t.a_i, &t.b_i, &t.a_o, &t.b_o, &t.y0}) *v *= 4;
    t.x0 = 127.5;
    t.rows = 128;
    t.cols = 256;
    t.z_max = 127.0;
    c.phantom.z_lo *= 4;
    c.phantom.z_hi = 4 * c.phantom.z_hi + 3;
    c.phantom.tooth_radius_min *= 4;
    c.phantom.tooth_radius_max *= 4;
    c.phantom.cortex_thickness *= 4;
    c.hash.log2_table = 19;
    c.vit.dim = 256;
    c.vit.layers = 12;
    c.vit.heads = 8;
    c.vit.ff_hidden = 512;
    c.vit.kappa = 128;
    c.field.width = 128;
    c.unet.channels = {64, 128, 256, 512};
  } else {
    throw ConfigError("unknown preset '" + name + "' (expected desk, micro or full)");
  }
  c.sync();
  return c;
}

RunConfig parse_config(const std::string& text) {
  std::vector<std::tuple<std::string, std::string, std::string>> items;
  std::map<std::string, std::size_t> seen;
  std::string preset = "desk";
  std::istringstream is(text);
  std::string line;
  for (std::size_t n = 1; std::getline(is, line); ++n) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const std::string where = "config line " + std::to_string(n) + ": ";
    auto [key, value] = split_assignment(line, where);
    find_key(key);  // reject unknown keys before anything else
    if (seen.count(key)) throw ConfigError(where + "duplicate key '" + key + "'");
    seen[key] = n;
    if (key == "preset") preset = value;
    else items.emplace_back(key, value, where);
  }
  RunConfig cfg = preset_config(preset);
  for (const auto& [k, v, w] : items) assign(cfg, k, v, w);
  cfg.sync();
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& assignments) {
  for (const auto& a : assignments) {
    auto [key, value] = split_assignment(a, "override: ");
    if (key == "preset") throw ConfigError("override: preset can only be chosen in the config file or by --preset");
    assign(cfg, key, value, "override: ");
  }
  cfg.sync();
  cfg.validate();
}

std::string echo_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& e : registry()) out += e.key + " = " + e.get(cfg) + "\n";
  return out;
}

std::vector<ConfigKeyDoc> config_keys() {
  std::vector<ConfigKeyDoc> out;
  for (const auto& e : registry()) out.push_back({e.key, e.doc});
  return out;
}

}  // namespace nebla
