// SPDX-License-Identifier: Apache-2.0
#include "nebla/extractor.hpp"

#include <cmath>

#include "nebla/error.hpp"
#include "nebla/init.hpp"

namespace nebla {

void ExtractorConfig::validate() const {
  if (patch == 0 || image_h == 0 || image_w == 0) throw ConfigError("extractor: dims must be positive");
  if (image_h % patch || image_w % patch) {
    throw ConfigError("extractor: image " + std::to_string(image_h) + "x" + std::to_string(image_w) +
                      " is not divisible by patch size " + std::to_string(patch));
  }
  if (dim == 0 || heads == 0 || dim % heads) throw ConfigError("extractor: embed dim must be divisible by heads");
  if (layers == 0) throw ConfigError("extractor: need at least one transformer layer");
  if (ff_hidden == 0 || kappa == 0 || feature_dim == 0) throw ConfigError("extractor: widths must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("extractor: dropout must lie in [0, 1)");
  if (cnn_blocks == 0 || cnn_convs == 0) throw ConfigError("extractor: CNN branch needs at least one conv");
  if (!(cnn_beta > 0 && ff_beta > 0 && fuse_beta > 0)) throw ConfigError("extractor: swish betas must be positive");
}

template <typename T>
Extractor<T>::Extractor(ParameterStore<T>& s, const ExtractorConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t d = cfg_.dim, P = cfg_.patch, ff = cfg_.ff_hidden;
  patch_w_ = &s.add("vit.patch.weight", {d, 1, P, P});
  patch_b_ = &s.add("vit.patch.bias", {d});
  cls_ = &s.add("vit.cls", {1, d});
  pos_ = &s.add("vit.pos", {cfg_.tokens(), d});
  auto layer = [&](const std::string& pre, bool attn) {
    TransformerLayerParams<T> p{};
    p.ln1_gain = &s.add(pre + ".ln1.gain", {d});
    p.ln1_bias = &s.add(pre + ".ln1.bias", {d});
    p.has_attention = attn;
    if (attn) {
      p.attn.wq = &s.add(pre + ".attn.q.weight", {d, d});
      p.attn.bq = &s.add(pre + ".attn.q.bias", {d});
      p.attn.wk = &s.add(pre + ".attn.k.weight", {d, d});
      p.attn.bk = &s.add(pre + ".attn.k.bias", {d});
      p.attn.wv = &s.add(pre + ".attn.v.weight", {d, d});
      p.attn.bv = &s.add(pre + ".attn.v.bias", {d});
      p.attn.wo = &s.add(pre + ".attn.out.weight", {d, d});
      p.attn.bo = &s.add(pre + ".attn.out.bias", {d});
    }
    p.ln2_gain = &s.add(pre + ".ln2.gain", {d});
    p.ln2_bias = &s.add(pre + ".ln2.bias", {d});
    p.ff1_w = &s.add(pre + ".ff1.weight", {d, ff});
    p.ff1_b = &s.add(pre + ".ff1.bias", {ff});
    p.ff2_w = &s.add(pre + ".ff2.weight", {ff, d});
    p.ff2_b = &s.add(pre + ".ff2.bias", {d});
    return p;
  };
  for (std::size_t l = 0; l < cfg_.layers; ++l) enc_.push_back(layer("vit.enc" + std::to_string(l), true));
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    dec_.push_back(layer("vit.dec" + std::to_string(l), !cfg_.decoder_additive));
  }
  up_w_ = &s.add("vit.up.weight", {d, d, P, P});
  up_b_ = &s.add("vit.up.bias", {d});

  cnn_proj_ = {&s.add("cnn.proj.weight", {d, 1, 1, 1}), &s.add("cnn.proj.bias", {d})};
  for (std::size_t b = 0; b < cfg_.cnn_blocks; ++b) {
    std::vector<ConvParams> block;
    for (std::size_t k = 0; k < cfg_.cnn_convs; ++k) {
      const std::size_t ci = (b == 0 && k == 0) ? 1 : d;
      const std::string pre = "cnn.b" + std::to_string(b) + ".c" + std::to_string(k);
      block.push_back({&s.add(pre + ".weight", {d, ci, 3, 3}), &s.add(pre + ".bias", {d})});
    }
    cnn_.push_back(std::move(block));
  }
  fuse_ = {&s.add("fuse.weight", {cfg_.kappa, d, 3, 3}), &s.add("fuse.bias", {cfg_.kappa})};
  img_w_ = &s.add("img_proj.weight", {cfg_.kappa, cfg_.feature_dim});
  img_b_ = &s.add("img_proj.bias", {cfg_.feature_dim});
}

template <typename T>
void Extractor<T>::init(std::mt19937_64& rng) {
  const std::size_t d = cfg_.dim, P = cfg_.patch;
  init_fan_in(*patch_w_, P * P, rng);
  init_constant(*patch_b_, 0.0);
  init_normal(*cls_, 0.02, rng);
  init_normal(*pos_, 0.02, rng);
  auto layer = [&](TransformerLayerParams<T>& p) {
    init_constant(*p.ln1_gain, 1.0);
    init_constant(*p.ln1_bias, 0.0);
    if (p.has_attention) {
      for (auto* w : {p.attn.wq, p.attn.wk, p.attn.wv, p.attn.wo}) init_fan_in(*w, d, rng);
      for (auto* b : {p.attn.bq, p.attn.bk, p.attn.bv, p.attn.bo}) init_constant(*b, 0.0);
    }
    init_constant(*p.ln2_gain, 1.0);
    init_constant(*p.ln2_bias, 0.0);
    init_fan_in(*p.ff1_w, d, rng);
    init_constant(*p.ff1_b, 0.0);
    init_fan_in(*p.ff2_w, cfg_.ff_hidden, rng);
    init_constant(*p.ff2_b, 0.0);
  };
  for (auto& p : enc_) layer(p);
  for (auto& p : dec_) layer(p);
  init_fan_in(*up_w_, d, rng);
  init_constant(*up_b_, 0.0);
  init_fan_in(*cnn_proj_.w, 1, rng);
  init_constant(*cnn_proj_.b, 0.0);
  for (auto& block : cnn_) {
    for (auto& c : block) {
      init_fan_in(*c.w, c.w->value.dim(1) * 9, rng);
      init_constant(*c.b, 0.0);
    }
  }
  init_fan_in(*fuse_.w, d * 9, rng);
  init_constant(*fuse_.b, 0.0);
  init_fan_in(*img_w_, cfg_.kappa, rng);
  init_constant(*img_b_, 0.0);
}

template <typename T>
Var<T> Extractor<T>::patch_embed(Graph<T>& g, Var<T> image) const {
  const Shape expect{1, cfg_.image_h, cfg_.image_w};
  if (image.shape() != expect) {
    throw std::invalid_argument("extractor: image " + shape_str(image.shape()) + " does not match " + shape_str(expect));
  }
  const std::size_t d = cfg_.dim, N = cfg_.tokens();
  auto e = conv2d(image, g.param(*patch_w_), std::optional(g.param(*patch_b_)), cfg_.patch, 0);  // [d, H/P, W/P]
  auto tokens = transpose(reshape(e, {d, N}));                                                   // [N, d]
  tokens = add(tokens, g.param(*pos_));
  return concat<T>({g.param(*cls_), tokens}, 0);
}

template <typename T>
Var<T> Extractor<T>::attention(Graph<T>& g, const AttentionParams<T>& p, Var<T> q_in, Var<T> kv_in, bool drop) const {
  const std::size_t dh = cfg_.dim / cfg_.heads;
  auto q = linear(q_in, g.param(*p.wq), g.param(*p.bq));
  auto k = linear(kv_in, g.param(*p.wk), g.param(*p.bk));
  auto v = linear(kv_in, g.param(*p.wv), g.param(*p.bv));
  const T inv = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<Var<T>> heads;
  for (std::size_t h = 0; h < cfg_.heads; ++h) {
    auto qh = slice(q, 1, h * dh, dh);
    auto kh = slice(k, 1, h * dh, dh);
    auto vh = slice(v, 1, h * dh, dh);
    auto probs = softmax(scale(matmul(qh, transpose(kh)), inv), 1);
    if (drop) probs = dropout(probs, static_cast<T>(cfg_.dropout));
    heads.push_back(matmul(probs, vh));
  }
  auto o = heads.size() == 1 ? heads.front() : concat(heads, 1);
  return linear(o, g.param(*p.wo), g.param(*p.bo));
}

template <typename T>
Var<T> Extractor<T>::feed_forward(Graph<T>& g, const TransformerLayerParams<T>& p, Var<T> x, bool drop) const {
  auto h = swish(linear(x, g.param(*p.ff1_w), g.param(*p.ff1_b)), static_cast<T>(cfg_.ff_beta));
  if (drop) h = dropout(h, static_cast<T>(cfg_.dropout));
  auto y = linear(h, g.param(*p.ff2_w), g.param(*p.ff2_b));
  if (drop) y = dropout(y, static_cast<T>(cfg_.dropout));
  return y;
}

template <typename T>
Var<T> Extractor<T>::encoder_layer(Graph<T>& g, std::size_t layer, Var<T> z) const {
  const auto& p = enc_.at(layer);
  auto n1 = layer_norm(z, g.param(*p.ln1_gain), g.param(*p.ln1_bias));
  auto zt = add(attention(g, p.attn, n1, n1, true), z);
  auto n2 = layer_norm(zt, g.param(*p.ln2_gain), g.param(*p.ln2_bias));
  return add(feed_forward(g, p, n2, true), zt);
}

template <typename T>
Var<T> Extractor<T>::decoder_layer(Graph<T>& g, std::size_t layer, Var<T> d, Var<T> skip) const {
  const auto& p = dec_.at(layer);
  const bool drop = cfg_.decoder_dropout;
  auto n1 = layer_norm(d, g.param(*p.ln1_gain), g.param(*p.ln1_bias));
  auto dt = p.has_attention ? add(attention(g, p.attn, n1, skip, drop), d) : add(add(n1, skip), d);
  auto n2 = layer_norm(dt, g.param(*p.ln2_gain), g.param(*p.ln2_bias));
  return add(feed_forward(g, p, n2, drop), dt);
}

template <typename T>
Var<T> Extractor<T>::transformer(Graph<T>& g, Var<T> tokens) const {
  std::vector<Var<T>> states;  // E^(1) .. E^(L)
  auto z = tokens;
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    z = encoder_layer(g, l, z);
    states.push_back(z);
  }
  auto d = z;
  const std::size_t L = cfg_.layers;
  for (std::size_t l = 1; l <= L; ++l) d = decoder_layer(g, l - 1, d, states.at(L - l));
  return d;
}

template <typename T>
Var<T> Extractor<T>::reassemble(Graph<T>& g, Var<T> tokens) const {
  const std::size_t N = cfg_.tokens(), d = cfg_.dim, P = cfg_.patch;
  if (tokens.shape() != Shape{N + 1, d}) {
    throw std::invalid_argument("reassemble: expected " + std::to_string(N + 1) + " tokens of width " +
                                std::to_string(d) + ", got " + shape_str(tokens.shape()));
  }
  auto grid = reshape(transpose(slice(tokens, 0, 1, N)), {d, cfg_.image_h / P, cfg_.image_w / P});
  return conv_transpose2d(grid, g.param(*up_w_), std::optional(g.param(*up_b_)), P, 0);
}

template <typename T>
Var<T> Extractor<T>::cnn_branch(Graph<T>& g, Var<T> image) const {
  const T beta = static_cast<T>(cfg_.cnn_beta);
  auto u = image;
  for (std::size_t b = 0; b < cnn_.size(); ++b) {
    auto h = u;
    for (const auto& c : cnn_[b]) h = swish(conv2d(h, g.param(*c.w), std::optional(g.param(*c.b)), 1, 1), beta);
    auto skip = b == 0 ? conv2d(u, g.param(*cnn_proj_.w), std::optional(g.param(*cnn_proj_.b)), 1, 0) : u;
    u = add(h, skip);
  }
  return u;
}

template <typename T>
Var<T> Extractor<T>::fuse_and_map(Graph<T>& g, Var<T> global, Var<T> local) const {
  if (global.shape() != local.shape()) {
    throw std::invalid_argument("fuse: branch shapes differ, " + shape_str(global.shape()) + " vs " +
                                shape_str(local.shape()));
  }
  auto sum = add(global, local);
  return swish(conv2d(sum, g.param(*fuse_.w), std::optional(g.param(*fuse_.b)), 1, 1), static_cast<T>(cfg_.fuse_beta));
}

template <typename T>
Var<T> Extractor<T>::project_img(Graph<T>& g, Var<T> e_img) const {
  const Shape expect{cfg_.kappa, cfg_.image_h, cfg_.image_w};
  if (e_img.shape() != expect) {
    throw std::invalid_argument("project_img: expected " + shape_str(expect) + ", got " + shape_str(e_img.shape()));
  }
  auto pixels = transpose(reshape(e_img, {cfg_.kappa, cfg_.image_h * cfg_.image_w}));
  return linear(pixels, g.param(*img_w_), g.param(*img_b_));
}

template <typename T>
Var<T> Extractor<T>::operator()(Graph<T>& g, Var<T> image) const {
  auto global = reassemble(g, transformer(g, patch_embed(g, image)));
  auto local = cnn_branch(g, image);
  return fuse_and_map(g, global, local);
}

template <typename T>
std::vector<Parameter<T>*> Extractor<T>::cnn_weights() const {
  std::vector<Parameter<T>*> out{cnn_proj_.w};
  for (const auto& block : cnn_)
    for (const auto& c : block) out.push_back(c.w);
  return out;
}

template class Extractor<float>;
template class Extractor<double>;

}  // namespace nebla
