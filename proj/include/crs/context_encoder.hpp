// Contextual-level preference: masked mean of the encoder states fed through
// an affine head (optionally one hidden ReLU layer) onto entity logits.

#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "crs/preference.hpp"
#include "crs/transformer.hpp"

namespace crs {

struct ContextEncoding {
  ad::Matrix hidden;        // |C| x d_model
  std::vector<bool> keep;   // false at padded positions

  ad::Index length() const { return hidden.rows(); }

  ad::Vector pooled() const {
    ad::Vector acc = ad::Vector::Zero(hidden.cols());
    ad::Index n = 0;
    for (ad::Index i = 0; i < hidden.rows(); ++i) {
      if (keep[static_cast<std::size_t>(i)]) {
        acc += hidden.row(i).transpose();
        ++n;
      }
    }
    if (n == 0) throw Error("context encoding has no unpadded position");
    return acc / static_cast<double>(n);
  }
};

struct ContextHeadParams {
  // Affine map d_model -> |E|, or d_model -> hidden -> |E| with ReLU when
  // `hidden` is set.
  ad::Tensor w1, b1;
  ad::Tensor w2, b2;

  bool has_hidden() const { return w2.defined(); }
  ad::Index out_dim() const { return has_hidden() ? w2.cols() : w1.cols(); }
  ad::Index in_dim() const { return w1.rows(); }

  static ContextHeadParams init(int d_model, int num_entities, std::uint64_t seed, int hidden = 0) {
    std::mt19937_64 rng(seed);
    ContextHeadParams p;
    const int first_out = hidden > 0 ? hidden : num_entities;
    p.w1 = ad::Tensor::parameter(detail::uniform_matrix(d_model, first_out, 1.0 / std::sqrt(double(d_model)), rng));
    p.b1 = ad::Tensor::parameter(ad::Matrix::Zero(1, first_out));
    if (hidden > 0) {
      p.w2 = ad::Tensor::parameter(detail::uniform_matrix(hidden, num_entities, 1.0 / std::sqrt(double(hidden)), rng));
      p.b2 = ad::Tensor::parameter(ad::Matrix::Zero(1, num_entities));
    }
    return p;
  }

  // 1 x d_model -> 1 x |E| logits.
  ad::Tensor apply(const ad::Tensor& pooled) const {
    ad::Tensor h = ad::add_row(ad::matmul(pooled, w1), b1);
    if (!has_hidden()) return h;
    return ad::add_row(ad::matmul(ad::relu(h), w2), b2);
  }

  std::vector<NamedTensor> named_tensors() {
    std::vector<NamedTensor> out{{"w1", &w1}, {"b1", &b1}};
    if (has_hidden()) {
      out.push_back({"w2", &w2});
      out.push_back({"b2", &b2});
    }
    return out;
  }
};

inline std::vector<bool> keep_mask(std::span<const int> tokens, int pad_id) {
  std::vector<bool> keep(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) keep[i] = tokens[i] != pad_id;
  return keep;
}

inline ContextEncoding encode(const Backbone& backbone, std::span<const int> context_tokens, int pad_id = 0) {
  ad::NoGradGuard guard;
  return {backbone.encode(context_tokens, pad_id).value(), keep_mask(context_tokens, pad_id)};
}

// p_c = softmax(mask(head(mean of unpadded encoder states))). An empty mask
// vector disables masking (distribution over all of E).
inline RecommendationDistribution context_scores(const ContextEncoding& enc, const ContextHeadParams& head,
                                                 const std::vector<bool>& mask) {
  if (enc.length() == 0) throw Error("context_scores: empty context");
  if (enc.hidden.cols() != head.in_dim()) throw Error("context_scores: head input dimension differs from encoder");
  if (!mask.empty() && static_cast<ad::Index>(mask.size()) != head.out_dim()) throw Error("context_scores: mask size differs from |E|");
  ad::NoGradGuard guard;
  ad::Tensor pooled = ad::Tensor::constant(ad::Matrix(enc.pooled().transpose()));
  ad::Vector logits = head.apply(pooled).value().row(0).transpose();
  if (mask.empty()) return masked_softmax(logits, std::vector<bool>(static_cast<std::size_t>(logits.size()), true));
  return masked_softmax(logits, mask);
}

// Differentiable 1 x |E| log-probabilities from encoder states.
inline ad::Tensor context_log_probs(const ad::Tensor& hidden, const std::vector<bool>& keep, const ContextHeadParams& head,
                                    const std::vector<bool>& mask) {
  return ad::log_softmax_rows(head.apply(ad::mean_rows(hidden, keep)), mask);
}

}  // namespace crs
