// Response decoding with a recommendation-driven vocabulary bias.
//
// The bias b_u is zero over the base vocabulary and equals the fused
// recommendation probability over the item-token block. At each step the
// bias is applied only when an item token is among the top-k unbiased
// predictions. Search runs greedy, beam, or diverse beam (Hamming penalty
// between groups) over the adjusted log-probabilities.

#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "crs/corpus.hpp"
#include "crs/kg.hpp"
#include "crs/preference.hpp"

namespace crs {

struct VocabBias {
  ad::Vector values;  // |V'|
  int base_size = 0;

  static VocabBias zeros(int vocab_size, int base_size) { return {ad::Vector::Zero(vocab_size), base_size}; }

  bool is_zero() const { return values.size() == 0 || (values.array() == 0.0).all(); }
  int size() const { return static_cast<int>(values.size()); }
};

// b_u = [0; G(p_rec)], item entries in vocabulary item-token order. Items
// without a graph entity get no bias.
inline VocabBias build_bias(const RecommendationDistribution& p_rec, const Vocabulary& vocab, const ItemCatalog& catalog,
                            const KnowledgeGraph& kg) {
  if (static_cast<int>(p_rec.size()) != kg.num_entities()) throw Error("build_bias: p_rec is not over the graph's entities");
  VocabBias b = VocabBias::zeros(vocab.size(), vocab.base_size());
  for (int j = 0; j < vocab.num_items(); ++j) {
    const std::string& item = vocab.item_ids()[static_cast<std::size_t>(j)];
    if (!catalog.contains(item)) throw Error("build_bias: vocabulary item " + item + " is not in the catalog");
    if (auto e = kg.entity_for_item(item)) b.values(vocab.base_size() + j) = p_rec[static_cast<std::size_t>(*e)];
  }
  return b;
}

enum class DecodeStrategy { kGreedy, kBeam, kDiverseBeam };

enum class BiasMode {
  kProbability,     // p' = (p + b) / sum(p + b)
  kProbabilityRaw,  // p' = p + b, no renormalization
  kLogDomain,       // p' = softmax(log p + b)
};

struct DecodeConfig {
  DecodeStrategy strategy = DecodeStrategy::kDiverseBeam;
  int beam_size = 4;
  int groups = 2;
  double length_penalty = 1.0;
  int max_new_tokens = 40;
  int bias_trigger_k = 50;
  double diversity_strength = 0.5;
  BiasMode bias_mode = BiasMode::kProbability;
  int bos_id = Vocabulary::kBos;
  int eos_id = Vocabulary::kEos;

  void validate() const {
    if (beam_size < 1) throw Error("decode: beam_size must be >= 1");
    if (groups < 1) throw Error("decode: groups must be >= 1");
    if (strategy == DecodeStrategy::kDiverseBeam && beam_size % groups != 0) {
      throw Error("decode: groups must divide beam_size for diverse beam search");
    }
    if (max_new_tokens < 1) throw Error("decode: max_new_tokens must be >= 1");
    if (bias_trigger_k < 1) throw Error("decode: bias_trigger_k must be >= 1");
    if (diversity_strength < 0.0) throw Error("decode: diversity_strength must be >= 0");
  }
};

inline ad::Vector log_softmax(const ad::Vector& logits) {
  const double m = logits.maxCoeff();
  const double lz = m + std::log((logits.array() - m).exp().sum());
  return (logits.array() - lz).matrix();
}

struct StepDistribution {
  ad::Vector log_probs;
  bool triggered = false;
};

// True iff an item token is among the k most probable tokens (ties by id).
inline bool item_in_top_k(const ad::Vector& log_probs, int base_size, int k) {
  std::vector<int> idx(static_cast<std::size_t>(log_probs.size()));
  std::iota(idx.begin(), idx.end(), 0);
  const auto kk = std::min<std::size_t>(static_cast<std::size_t>(k), idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(kk), idx.end(), [&](int a, int b) {
    return log_probs(a) != log_probs(b) ? log_probs(a) > log_probs(b) : a < b;
  });
  for (std::size_t i = 0; i < kk; ++i)
    if (idx[i] >= base_size) return true;
  return false;
}

// One decoding step: log p (unbiased) or log p' when the trigger fires.
inline StepDistribution adjust_step(const ad::Vector& logits, const VocabBias& bias, const DecodeConfig& cfg) {
  StepDistribution out{log_softmax(logits), false};
  if (bias.is_zero()) return out;
  if (bias.size() != logits.size()) throw Error("decode: bias size differs from vocabulary size");
  if (!item_in_top_k(out.log_probs, bias.base_size, cfg.bias_trigger_k)) return out;
  out.triggered = true;
  switch (cfg.bias_mode) {
    case BiasMode::kProbability: {
      ad::Vector p = out.log_probs.array().exp().matrix() + bias.values;
      out.log_probs = (p / p.sum()).array().log().matrix();
      break;
    }
    case BiasMode::kProbabilityRaw:
      out.log_probs = (out.log_probs.array().exp().matrix() + bias.values).array().log().matrix();
      break;
    case BiasMode::kLogDomain:
      out.log_probs = log_softmax(out.log_probs + bias.values);
      break;
  }
  return out;
}

template <typename M>
concept StepModel = requires(const M& m, const std::vector<int>& prefix) {
  { m.next_logits(prefix) } -> std::convertible_to<ad::Vector>;
};

struct Hypothesis {
  std::vector<int> tokens;  // generated tokens, EOS included when finished
  double log_prob = 0.0;    // sum of adjusted log-probabilities
  double score = 0.0;       // log_prob / length^length_penalty
  bool finished = false;
  int group = 0;
};

namespace detail {

inline double normalized_score(double log_prob, std::size_t length, double length_penalty) {
  return log_prob / std::pow(static_cast<double>(std::max<std::size_t>(length, 1)), length_penalty);
}

template <StepModel M>
ad::Vector step_log_probs(const M& model, const std::vector<int>& tokens, const VocabBias& bias, const DecodeConfig& cfg) {
  std::vector<int> prefix;
  prefix.reserve(tokens.size() + 1);
  prefix.push_back(cfg.bos_id);
  prefix.insert(prefix.end(), tokens.begin(), tokens.end());
  return adjust_step(model.next_logits(prefix), bias, cfg).log_probs;
}

template <StepModel M>
std::vector<Hypothesis> greedy(const M& model, const VocabBias& bias, const DecodeConfig& cfg) {
  Hypothesis h;
  for (int step = 0; step < cfg.max_new_tokens; ++step) {
    const ad::Vector lp = step_log_probs(model, h.tokens, bias, cfg);
    int best = 0;
    double best_score = h.log_prob + lp(0);
    for (ad::Index t = 1; t < lp.size(); ++t) {
      const double s = h.log_prob + lp(t);
      if (s > best_score) {
        best_score = s;
        best = static_cast<int>(t);
      }
    }
    h.tokens.push_back(best);
    h.log_prob = best_score;
    if (best == cfg.eos_id) {
      h.finished = true;
      break;
    }
  }
  h.score = normalized_score(h.log_prob, h.tokens.size(), cfg.length_penalty);
  return {h};
}

template <StepModel M>
std::vector<Hypothesis> grouped_beam(const M& model, const VocabBias& bias, const DecodeConfig& cfg, int groups,
                                     double diversity) {
  const int per_group = cfg.beam_size / groups;
  struct Candidate {
    double rank_score;
    double log_prob;
    int beam;
    int token;
  };
  std::vector<std::vector<Hypothesis>> active(static_cast<std::size_t>(groups), std::vector<Hypothesis>(1));
  std::vector<std::vector<Hypothesis>> finished(static_cast<std::size_t>(groups));
  std::vector<bool> done(static_cast<std::size_t>(groups), false);
  for (int g = 0; g < groups; ++g) active[static_cast<std::size_t>(g)][0].group = g;

  for (int step = 0; step < cfg.max_new_tokens; ++step) {
    std::vector<double> chosen_counts;
    for (int g = 0; g < groups; ++g) {
      auto& act = active[static_cast<std::size_t>(g)];
      if (done[static_cast<std::size_t>(g)]) continue;
      std::vector<Candidate> cands;
      for (std::size_t b = 0; b < act.size(); ++b) {
        const ad::Vector lp = step_log_probs(model, act[b].tokens, bias, cfg);
        if (chosen_counts.empty()) chosen_counts.assign(static_cast<std::size_t>(lp.size()), 0.0);
        for (ad::Index t = 0; t < lp.size(); ++t) {
          const double raw = act[b].log_prob + lp(t);
          cands.push_back({raw - diversity * chosen_counts[static_cast<std::size_t>(t)], raw, static_cast<int>(b),
                           static_cast<int>(t)});
        }
      }
      const auto keep = std::min<std::size_t>(cands.size(), static_cast<std::size_t>(2 * per_group));
      std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                        [](const Candidate& a, const Candidate& b) {
                          if (a.rank_score != b.rank_score) return a.rank_score > b.rank_score;
                          if (a.beam != b.beam) return a.beam < b.beam;
                          return a.token < b.token;
                        });
      std::vector<Hypothesis> next;
      for (std::size_t i = 0; i < keep && static_cast<int>(next.size()) < per_group; ++i) {
        const auto& c = cands[i];
        Hypothesis h;
        h.tokens = act[static_cast<std::size_t>(c.beam)].tokens;
        h.tokens.push_back(c.token);
        h.log_prob = c.log_prob;
        h.group = g;
        if (c.token == cfg.eos_id) {
          if (static_cast<int>(i) < per_group) {
            h.finished = true;
            h.score = normalized_score(h.log_prob, h.tokens.size(), cfg.length_penalty);
            finished[static_cast<std::size_t>(g)].push_back(std::move(h));
            chosen_counts[static_cast<std::size_t>(c.token)] += 1.0;
          }
          continue;
        }
        chosen_counts[static_cast<std::size_t>(c.token)] += 1.0;
        next.push_back(std::move(h));
      }
      act = std::move(next);
      if (static_cast<int>(finished[static_cast<std::size_t>(g)].size()) >= per_group || act.empty()) {
        done[static_cast<std::size_t>(g)] = true;
      }
    }
    if (std::all_of(done.begin(), done.end(), [](bool d) { return d; })) break;
  }

  std::vector<Hypothesis> out;
  for (int g = 0; g < groups; ++g) {
    auto& fin = finished[static_cast<std::size_t>(g)];
    if (!done[static_cast<std::size_t>(g)]) {
      for (auto& h : active[static_cast<std::size_t>(g)]) {
        h.score = normalized_score(h.log_prob, h.tokens.size(), cfg.length_penalty);
        fin.push_back(std::move(h));
      }
    }
    out.insert(out.end(), fin.begin(), fin.end());
  }
  std::stable_sort(out.begin(), out.end(), [](const Hypothesis& a, const Hypothesis& b) { return a.score > b.score; });
  return out;
}

}  // namespace detail

// Hypotheses ordered by normalized score, best first.
template <StepModel M>
std::vector<Hypothesis> decode(const M& model, const VocabBias& bias, const DecodeConfig& cfg) {
  cfg.validate();
  switch (cfg.strategy) {
    case DecodeStrategy::kGreedy:
      return detail::greedy(model, bias, cfg);
    case DecodeStrategy::kBeam:
      return detail::grouped_beam(model, bias, cfg, 1, 0.0);
    case DecodeStrategy::kDiverseBeam:
      return detail::grouped_beam(model, bias, cfg, cfg.groups, cfg.diversity_strength);
  }
  return {};
}

inline std::vector<int> strip_eos(std::vector<int> tokens, int eos_id = Vocabulary::kEos) {
  if (!tokens.empty() && tokens.back() == eos_id) tokens.pop_back();
  return tokens;
}

}  // namespace crs
