// Transformer encoder-decoder backbone (post-LN, learned positions, ReLU
// feed-forward, output projection tied to the token embeddings).
//
// The token embedding is split into the base vocabulary block and the item
// block appended after it, so the two can live in different optimizer groups.

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "crs/graph_encoder.hpp"
#include "crs/tensor.hpp"
#include "crs/types.hpp"

namespace crs {

struct BackboneConfig {
  int d_model = 64;
  int heads = 4;
  int ffn = 128;
  int encoder_layers = 2;
  int decoder_layers = 2;
  int max_positions = 256;

  void validate() const {
    if (d_model <= 0 || heads <= 0 || d_model % heads != 0) throw Error("backbone: d_model must be a positive multiple of heads");
    if (ffn <= 0 || encoder_layers < 1 || decoder_layers < 1 || max_positions < 2) throw Error("backbone: bad sizes");
  }
};

struct NamedTensor {
  std::string name;
  ad::Tensor* tensor;
};

namespace nn {

struct Linear {
  ad::Tensor w;  // in x out
  ad::Tensor b;  // 1 x out

  static Linear init(int in, int out, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    return {ad::Tensor::parameter(detail::uniform_matrix(in, out, bound, rng)), ad::Tensor::parameter(ad::Matrix::Zero(1, out))};
  }

  ad::Tensor operator()(const ad::Tensor& x) const { return ad::add_row(ad::matmul(x, w), b); }

  void collect(const std::string& prefix, std::vector<NamedTensor>& out) {
    out.push_back({prefix + ".w", &w});
    out.push_back({prefix + ".b", &b});
  }
};

struct LayerNorm {
  ad::Tensor gamma;
  ad::Tensor beta;

  static LayerNorm init(int d) {
    return {ad::Tensor::parameter(ad::Matrix::Ones(1, d)), ad::Tensor::parameter(ad::Matrix::Zero(1, d))};
  }

  ad::Tensor operator()(const ad::Tensor& x) const { return ad::layer_norm(x, gamma, beta); }

  void collect(const std::string& prefix, std::vector<NamedTensor>& out) {
    out.push_back({prefix + ".gamma", &gamma});
    out.push_back({prefix + ".beta", &beta});
  }
};

// Additive attention mask: 0 where allowed, -inf where blocked.
inline ad::Matrix attention_mask(ad::Index queries, const std::vector<bool>& key_keep, bool causal) {
  const double ninf = -std::numeric_limits<double>::infinity();
  const auto keys = static_cast<ad::Index>(key_keep.size());
  ad::Matrix m = ad::Matrix::Zero(queries, keys);
  for (ad::Index q = 0; q < queries; ++q) {
    for (ad::Index k = 0; k < keys; ++k) {
      if (!key_keep[static_cast<std::size_t>(k)] || (causal && k > q)) m(q, k) = ninf;
    }
    // A query with nothing to attend to falls back to its own position.
    bool any = false;
    for (ad::Index k = 0; k < keys; ++k) any = any || std::isfinite(m(q, k));
    if (!any && q < keys) m(q, q) = 0.0;
  }
  return m;
}

struct MultiHeadAttention {
  Linear q, k, v, o;
  int heads = 1;

  static MultiHeadAttention init(int d, int heads, std::mt19937_64& rng) {
    MultiHeadAttention a;
    a.q = Linear::init(d, d, rng);
    a.k = Linear::init(d, d, rng);
    a.v = Linear::init(d, d, rng);
    a.o = Linear::init(d, d, rng);
    a.heads = heads;
    return a;
  }

  ad::Tensor operator()(const ad::Tensor& x, const ad::Tensor& memory, const ad::Matrix& mask) const {
    const ad::Index d = x.cols();
    const ad::Index dh = d / heads;
    ad::Tensor Q = q(x), K = k(memory), V = v(memory);
    ad::Tensor M = ad::Tensor::constant(mask);
    const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<ad::Tensor> outs;
    outs.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      ad::Tensor qh = ad::slice_cols(Q, h * dh, dh);
      ad::Tensor kh = ad::slice_cols(K, h * dh, dh);
      ad::Tensor vh = ad::slice_cols(V, h * dh, dh);
      ad::Tensor scores = ad::add(ad::scale(ad::matmul_nt(qh, kh), inv), M);
      outs.push_back(ad::matmul(ad::softmax_rows(scores), vh));
    }
    return o(heads == 1 ? outs.front() : ad::concat_cols(outs));
  }

  void collect(const std::string& prefix, std::vector<NamedTensor>& out) {
    q.collect(prefix + ".q", out);
    k.collect(prefix + ".k", out);
    v.collect(prefix + ".v", out);
    o.collect(prefix + ".o", out);
  }
};

struct FeedForward {
  Linear fc1, fc2;

  static FeedForward init(int d, int ffn, std::mt19937_64& rng) { return {Linear::init(d, ffn, rng), Linear::init(ffn, d, rng)}; }

  ad::Tensor operator()(const ad::Tensor& x) const { return fc2(ad::relu(fc1(x))); }

  void collect(const std::string& prefix, std::vector<NamedTensor>& out) {
    fc1.collect(prefix + ".fc1", out);
    fc2.collect(prefix + ".fc2", out);
  }
};

struct EncoderLayer {
  MultiHeadAttention self_attn;
  LayerNorm ln1;
  FeedForward ffn;
  LayerNorm ln2;

  ad::Tensor operator()(const ad::Tensor& x, const ad::Matrix& mask) const {
    ad::Tensor h = ln1(ad::add(x, self_attn(x, x, mask)));
    return ln2(ad::add(h, ffn(h)));
  }
};

struct DecoderLayer {
  MultiHeadAttention self_attn;
  LayerNorm ln1;
  MultiHeadAttention cross_attn;
  LayerNorm ln2;
  FeedForward ffn;
  LayerNorm ln3;

  ad::Tensor operator()(const ad::Tensor& x, const ad::Tensor& memory, const ad::Matrix& self_mask,
                        const ad::Matrix& cross_mask) const {
    ad::Tensor h = ln1(ad::add(x, self_attn(x, x, self_mask)));
    h = ln2(ad::add(h, cross_attn(h, memory, cross_mask)));
    return ln3(ad::add(h, ffn(h)));
  }
};

}  // namespace nn

class Backbone {
 public:
  Backbone() = default;

  Backbone(const BackboneConfig& cfg, int base_vocab, int num_items, std::uint64_t seed) : cfg_(cfg) {
    cfg.validate();
    if (base_vocab < 5) throw Error("backbone: base vocabulary too small");
    std::mt19937_64 rng(seed);
    const int d = cfg.d_model;
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    base_embed_ = ad::Tensor::parameter(detail::uniform_matrix(base_vocab, d, bound, rng));
    item_embed_ = ad::Tensor::parameter(detail::uniform_matrix(std::max(num_items, 0), d, bound, rng));
    enc_pos_ = ad::Tensor::parameter(detail::uniform_matrix(cfg.max_positions, d, bound, rng));
    dec_pos_ = ad::Tensor::parameter(detail::uniform_matrix(cfg.max_positions, d, bound, rng));
    enc_ln_ = nn::LayerNorm::init(d);
    dec_ln_ = nn::LayerNorm::init(d);
    for (int l = 0; l < cfg.encoder_layers; ++l) {
      enc_.push_back({nn::MultiHeadAttention::init(d, cfg.heads, rng), nn::LayerNorm::init(d),
                      nn::FeedForward::init(d, cfg.ffn, rng), nn::LayerNorm::init(d)});
    }
    for (int l = 0; l < cfg.decoder_layers; ++l) {
      dec_.push_back({nn::MultiHeadAttention::init(d, cfg.heads, rng), nn::LayerNorm::init(d),
                      nn::MultiHeadAttention::init(d, cfg.heads, rng), nn::LayerNorm::init(d),
                      nn::FeedForward::init(d, cfg.ffn, rng), nn::LayerNorm::init(d)});
    }
  }

  const BackboneConfig& config() const { return cfg_; }
  int base_vocab() const { return static_cast<int>(base_embed_.rows()); }
  int num_items() const { return static_cast<int>(item_embed_.rows()); }
  int vocab_size() const { return base_vocab() + num_items(); }
  int d_model() const { return cfg_.d_model; }

  // |V'| x d token embedding (base rows then item rows).
  ad::Tensor token_embeddings() const {
    if (num_items() == 0) return base_embed_;
    return ad::concat_rows({base_embed_, item_embed_});
  }

  // One hidden row per input position; positions holding `pad_id` are masked
  // out as attention keys.
  ad::Tensor encode(std::span<const int> tokens, int pad_id = 0) const {
    check_tokens(tokens);
    std::vector<bool> keep(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) keep[i] = tokens[i] != pad_id;
    ad::Tensor x = embed(tokens, enc_pos_, enc_ln_);
    const ad::Matrix mask = nn::attention_mask(static_cast<ad::Index>(tokens.size()), keep, false);
    for (const auto& layer : enc_) x = layer(x, mask);
    return x;
  }

  // Logits over V' for every prefix position (row t predicts token t+1).
  ad::Tensor decode(std::span<const int> prefix, const ad::Tensor& memory, const std::vector<bool>& memory_keep) const {
    check_tokens(prefix);
    if (static_cast<ad::Index>(memory_keep.size()) != memory.rows()) throw Error("decode: memory mask size mismatch");
    ad::Tensor x = embed(prefix, dec_pos_, dec_ln_);
    const auto n = static_cast<ad::Index>(prefix.size());
    const ad::Matrix self_mask = nn::attention_mask(n, std::vector<bool>(prefix.size(), true), true);
    const ad::Matrix cross_mask = nn::attention_mask(n, memory_keep, false);
    for (const auto& layer : dec_) x = layer(x, memory, self_mask, cross_mask);
    return ad::matmul_nt(x, token_embeddings());
  }

  std::vector<NamedTensor> named_tensors(bool include_items = true) {
    std::vector<NamedTensor> out;
    out.push_back({"embed.base", &base_embed_});
    if (include_items) out.push_back({"embed.items", &item_embed_});
    out.push_back({"pos.enc", &enc_pos_});
    out.push_back({"pos.dec", &dec_pos_});
    enc_ln_.collect("ln.enc", out);
    dec_ln_.collect("ln.dec", out);
    for (std::size_t l = 0; l < enc_.size(); ++l) {
      const std::string p = "enc." + std::to_string(l);
      enc_[l].self_attn.collect(p + ".self", out);
      enc_[l].ln1.collect(p + ".ln1", out);
      enc_[l].ffn.collect(p + ".ffn", out);
      enc_[l].ln2.collect(p + ".ln2", out);
    }
    for (std::size_t l = 0; l < dec_.size(); ++l) {
      const std::string p = "dec." + std::to_string(l);
      dec_[l].self_attn.collect(p + ".self", out);
      dec_[l].ln1.collect(p + ".ln1", out);
      dec_[l].cross_attn.collect(p + ".cross", out);
      dec_[l].ln2.collect(p + ".ln2", out);
      dec_[l].ffn.collect(p + ".ffn", out);
      dec_[l].ln3.collect(p + ".ln3", out);
    }
    return out;
  }

  ad::Tensor& item_embeddings() { return item_embed_; }

 private:
  void check_tokens(std::span<const int> tokens) const {
    if (tokens.empty()) throw Error("backbone: empty input");
    if (static_cast<int>(tokens.size()) > cfg_.max_positions) {
      throw Error("backbone: input of length " + std::to_string(tokens.size()) + " exceeds max positions " +
                  std::to_string(cfg_.max_positions));
    }
    for (int t : tokens)
      if (t < 0 || t >= vocab_size()) throw Error("backbone: token id out of range: " + std::to_string(t));
  }

  ad::Tensor embed(std::span<const int> tokens, const ad::Tensor& pos, const nn::LayerNorm& ln) const {
    std::vector<int> positions(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) positions[i] = static_cast<int>(i);
    ad::Tensor tok = ad::gather_rows(token_embeddings(), std::vector<int>(tokens.begin(), tokens.end()));
    return ln(ad::add(tok, ad::gather_rows(pos, positions)));
  }

  BackboneConfig cfg_;
  ad::Tensor base_embed_, item_embed_, enc_pos_, dec_pos_;
  nn::LayerNorm enc_ln_, dec_ln_;
  std::vector<nn::EncoderLayer> enc_;
  std::vector<nn::DecoderLayer> dec_;
};

}  // namespace crs
