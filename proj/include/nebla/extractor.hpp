// SPDX-License-Identifier: Apache-2.0
//
// Hybrid ViT-CNN image feature extractor.
//
// Global branch: patch embedding, L pre-norm encoder layers, L cross-attention
// decoder layers (layer l attends to encoder output L-l+1), then a transposed
// convolution back to full resolution. Local branch: three residual blocks of
// 3x3 convolutions. The branches are summed and mapped to kappa channels.
// Feature maps are [channels, H, W].

#pragma once

#include <random>
#include <string>
#include <vector>

#include "nebla/autodiff.hpp"

namespace nebla {

struct ExtractorConfig {
  std::size_t image_h = 32, image_w = 64;
  std::size_t patch = 16;
  std::size_t dim = 32;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t ff_hidden = 64;
  double dropout = 0.1;
  bool decoder_dropout = true;
  bool decoder_additive = false;  // replace decoder cross-attention by E_skip addition
  std::size_t cnn_blocks = 3;
  std::size_t cnn_convs = 3;      // conv + swish layers per block
  double cnn_beta = 1.2;
  double ff_beta = 1.0;
  double fuse_beta = 1.2;
  std::size_t kappa = 32;
  std::size_t feature_dim = 32;   // f, width of the per-pixel image features

  std::size_t tokens() const { return (image_h / patch) * (image_w / patch); }
  void validate() const;
};

template <typename T>
struct AttentionParams {
  Parameter<T>*wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
};

template <typename T>
struct TransformerLayerParams {
  Parameter<T>*ln1_gain, *ln1_bias, *ln2_gain, *ln2_bias;
  AttentionParams<T> attn{};
  bool has_attention = true;
  Parameter<T>*ff1_w, *ff1_b, *ff2_w, *ff2_b;
};

template <typename T>
class Extractor {
 public:
  Extractor(ParameterStore<T>& store, const ExtractorConfig& cfg);
  void init(std::mt19937_64& rng);
  const ExtractorConfig& config() const { return cfg_; }

  // image [1, H, W] -> tokens [N + 1, d], row 0 is the class token.
  Var<T> patch_embed(Graph<T>& g, Var<T> image) const;
  Var<T> encoder_layer(Graph<T>& g, std::size_t layer, Var<T> z) const;
  Var<T> decoder_layer(Graph<T>& g, std::size_t layer, Var<T> d, Var<T> skip) const;
  // Encoder then decoder; returns D^L.
  Var<T> transformer(Graph<T>& g, Var<T> tokens) const;
  // D^L [N + 1, d] -> [d, H, W]; the class token is dropped.
  Var<T> reassemble(Graph<T>& g, Var<T> tokens) const;
  Var<T> cnn_branch(Graph<T>& g, Var<T> image) const;
  // swish(conv3x3(global + local)) -> [kappa, H, W]
  Var<T> fuse_and_map(Graph<T>& g, Var<T> global, Var<T> local) const;
  // [kappa, H, W] -> [H * W, f], one shared affine map per pixel.
  Var<T> project_img(Graph<T>& g, Var<T> e_img) const;

  // Full extractor: image [1, H, W] in [0, 1] -> E_img [kappa, H, W].
  Var<T> operator()(Graph<T>& g, Var<T> image) const;

  Parameter<T>& patch_weight() { return *patch_w_; }
  Parameter<T>& patch_bias() { return *patch_b_; }
  Parameter<T>& pos_embed() { return *pos_; }
  Parameter<T>& img_proj_weight() { return *img_w_; }
  Parameter<T>& img_proj_bias() { return *img_b_; }
  TransformerLayerParams<T>& encoder_params(std::size_t l) { return enc_.at(l); }
  TransformerLayerParams<T>& decoder_params(std::size_t l) { return dec_.at(l); }
  Parameter<T>& upsample_weight() { return *up_w_; }
  std::vector<Parameter<T>*> cnn_weights() const;

 private:
  Var<T> attention(Graph<T>& g, const AttentionParams<T>& p, Var<T> q_in, Var<T> kv_in, bool drop) const;
  Var<T> feed_forward(Graph<T>& g, const TransformerLayerParams<T>& p, Var<T> x, bool drop) const;

  ExtractorConfig cfg_;
  Parameter<T>*patch_w_, *patch_b_, *cls_, *pos_;
  std::vector<TransformerLayerParams<T>> enc_, dec_;
  Parameter<T>*up_w_, *up_b_;
  struct ConvParams {
    Parameter<T>*w, *b;
  };
  std::vector<std::vector<ConvParams>> cnn_;
  ConvParams cnn_proj_{};
  ConvParams fuse_{};
  Parameter<T>*img_w_, *img_b_;
};

}  // namespace nebla
