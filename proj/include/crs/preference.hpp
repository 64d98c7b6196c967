// Entity-level user preference: summarizes the mention history with
// time-aware (recency) weights or a learned self-attention, and scores every
// entity against the summary with non-item entities masked out.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <set>
#include <vector>

#include "crs/graph_encoder.hpp"
#include "crs/tensor.hpp"
#include "crs/types.hpp"

namespace crs {

// Probability vector over all entities; zero outside `support`.
struct RecommendationDistribution {
  ad::Vector probs;
  std::vector<bool> support;

  std::size_t size() const { return static_cast<std::size_t>(probs.size()); }
  double operator[](std::size_t i) const { return probs(static_cast<ad::Index>(i)); }
};

inline void require_nonempty_support(const std::vector<bool>& mask) {
  if (std::none_of(mask.begin(), mask.end(), [](bool b) { return b; })) {
    throw Error("item mask selects no entity");
  }
}

// softmax over entries with mask[i] set; masked entries are exactly 0.
inline RecommendationDistribution masked_softmax(const ad::Vector& logits, const std::vector<bool>& mask) {
  if (static_cast<ad::Index>(mask.size()) != logits.size()) throw Error("mask size does not match logits");
  require_nonempty_support(mask);
  double m = -std::numeric_limits<double>::infinity();
  for (ad::Index i = 0; i < logits.size(); ++i)
    if (mask[static_cast<std::size_t>(i)]) m = std::max(m, logits(i));
  RecommendationDistribution out{ad::Vector::Zero(logits.size()), mask};
  double z = 0.0;
  for (ad::Index i = 0; i < logits.size(); ++i) {
    if (mask[static_cast<std::size_t>(i)]) {
      out.probs(i) = std::exp(logits(i) - m);
      z += out.probs(i);
    }
  }
  out.probs /= z;
  return out;
}

// Normalized weights lambda^(i-1) / sum_j lambda^(j-1) for i = 1..n, i = 1 the
// earliest mention. Evaluated with the largest exponent shifted to zero.
inline ad::Vector time_aware_weights(std::size_t n, double lambda) {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw Error("lambda must be a positive real");
  ad::Vector w(static_cast<ad::Index>(n));
  if (n == 0) return w;
  const double log_l = std::log(lambda);
  const double shift = log_l >= 0.0 ? static_cast<double>(n - 1) * log_l : 0.0;
  for (std::size_t i = 0; i < n; ++i) w(static_cast<ad::Index>(i)) = std::exp(static_cast<double>(i) * log_l - shift);
  return w / w.sum();
}

// Options applied to a raw history before summarization.
struct HistoryOptions {
  bool include_text_entities = true;
  bool dedup = false;  // keeps the most recent occurrence of each entity
};

inline std::vector<int> select_history(const PreferenceHistory& h, const HistoryOptions& opts = {}) {
  std::vector<int> ids;
  for (std::size_t i = 0; i < h.entities.size(); ++i)
    if (opts.include_text_entities || h.is_item[i]) ids.push_back(h.entities[i]);
  if (opts.dedup) {
    std::vector<int> kept;
    std::set<int> seen;
    for (auto it = ids.rbegin(); it != ids.rend(); ++it)
      if (seen.insert(*it).second) kept.push_back(*it);
    std::reverse(kept.begin(), kept.end());
    ids = std::move(kept);
  }
  return ids;
}

// Returns nullopt for an empty history (cold start).
inline std::optional<ad::Vector> time_aware_summary(const std::vector<int>& history, const EntityEmbeddingTable& table,
                                                    double lambda) {
  if (!(lambda > 0.0)) throw Error("lambda must be a positive real");
  if (history.empty()) return std::nullopt;
  const ad::Vector w = time_aware_weights(history.size(), lambda);
  ad::Vector out = ad::Vector::Zero(table.dim());
  for (std::size_t i = 0; i < history.size(); ++i) {
    out += w(static_cast<ad::Index>(i)) * table.values.row(history[i]).transpose();
  }
  return out;
}

inline std::optional<ad::Vector> time_aware_summary(const PreferenceHistory& history, const EntityEmbeddingTable& table,
                                                    double lambda) {
  return time_aware_summary(history.entities, table, lambda);
}

// score_i = v . tanh(W^T h_i); weights = softmax(score).
struct SelfAttentionParams {
  ad::Tensor w;  // d x d
  ad::Tensor v;  // d x 1

  static SelfAttentionParams init(int d, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    return {ad::Tensor::parameter(detail::uniform_matrix(d, d, bound, rng)),
            ad::Tensor::parameter(detail::uniform_matrix(d, 1, bound, rng))};
  }
};

inline ad::Vector self_attention_weights(const std::vector<int>& history, const EntityEmbeddingTable& table,
                                         const SelfAttentionParams& params) {
  ad::Matrix hs(static_cast<ad::Index>(history.size()), table.dim());
  for (std::size_t i = 0; i < history.size(); ++i) hs.row(static_cast<ad::Index>(i)) = table.values.row(history[i]);
  ad::Vector scores = ((hs * params.w.value()).array().tanh().matrix() * params.v.value()).col(0);
  ad::Vector w = (scores.array() - scores.maxCoeff()).exp().matrix();
  return w / w.sum();
}

inline std::optional<ad::Vector> self_attention_summary(const std::vector<int>& history, const EntityEmbeddingTable& table,
                                                        const SelfAttentionParams& params) {
  if (history.empty()) return std::nullopt;
  const ad::Vector w = self_attention_weights(history, table, params);
  ad::Vector out = ad::Vector::Zero(table.dim());
  for (std::size_t i = 0; i < history.size(); ++i) out += w(static_cast<ad::Index>(i)) * table.values.row(history[i]).transpose();
  return out;
}

// p_e = softmax(mask(h^E H^T)).
inline RecommendationDistribution entity_scores(const ad::Vector& user, const EntityEmbeddingTable& table,
                                                const std::vector<bool>& mask) {
  if (user.size() != table.dim()) throw Error("entity_scores: user vector and table dimensions differ");
  if (static_cast<int>(mask.size()) != table.num_entities()) throw Error("entity_scores: mask size differs from |E|");
  return masked_softmax(table.values * user, mask);
}

// ---- differentiable counterparts used in training --------------------------

inline ad::Tensor time_aware_summary_tensor(const ad::Tensor& table, const std::vector<int>& history, double lambda) {
  ad::Vector w = time_aware_weights(history.size(), lambda);
  ad::Tensor weights = ad::Tensor::constant(ad::Matrix(w.transpose()));
  return ad::matmul(weights, ad::gather_rows(table, history));
}

inline ad::Tensor self_attention_summary_tensor(const ad::Tensor& table, const std::vector<int>& history,
                                                const SelfAttentionParams& params) {
  ad::Tensor hs = ad::gather_rows(table, history);                       // n x d
  ad::Tensor scores = ad::matmul(ad::tanh(ad::matmul(hs, params.w)), params.v);  // n x 1
  ad::Tensor weights = ad::softmax_rows(ad::transpose(scores));          // 1 x n
  return ad::matmul(weights, hs);
}

// 1 x |E| masked log-probabilities of the entity-level distribution.
inline ad::Tensor entity_log_probs(const ad::Tensor& user, const ad::Tensor& table, const std::vector<bool>& mask) {
  return ad::log_softmax_rows(ad::matmul_nt(user, table), mask);
}

}  // namespace crs
