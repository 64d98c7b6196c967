#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "crs/preference.hpp"

namespace crs {

enum class ColdStartPolicy { kContextOnly, kUniformEntity };

struct FusionConfig {
  double mu = 0.5;
  double lambda = 1.5;
  ColdStartPolicy cold_start_policy = ColdStartPolicy::kContextOnly;

  void validate() const {
    if (!(mu >= 0.0 && mu <= 1.0)) throw Error("mu must lie in [0, 1]");
    if (!(lambda > 0.0)) throw Error("lambda must be positive");
  }
};

inline RecommendationDistribution uniform_distribution(const std::vector<bool>& support) {
  require_nonempty_support(support);
  RecommendationDistribution d{ad::Vector::Zero(static_cast<ad::Index>(support.size())), support};
  const auto n = static_cast<double>(std::count(support.begin(), support.end(), true));
  for (std::size_t i = 0; i < support.size(); ++i)
    if (support[i]) d.probs(static_cast<ad::Index>(i)) = 1.0 / n;
  return d;
}

// p_rec = mu * p_e + (1 - mu) * p_c. A missing p_e means cold start.
inline RecommendationDistribution fuse(const std::optional<RecommendationDistribution>& p_e,
                                       const RecommendationDistribution& p_c, const FusionConfig& cfg) {
  cfg.validate();
  if (!p_e) {
    if (cfg.cold_start_policy == ColdStartPolicy::kContextOnly) return p_c;
    return fuse(uniform_distribution(p_c.support), p_c, cfg);
  }
  if (p_e->support != p_c.support) throw Error("fuse: distributions have different supports");
  if (cfg.mu == 1.0) return *p_e;
  if (cfg.mu == 0.0) return p_c;
  return {cfg.mu * p_e->probs + (1.0 - cfg.mu) * p_c.probs, p_c.support};
}

struct RankedEntity {
  int entity = 0;
  double probability = 0.0;
  friend bool operator==(const RankedEntity&, const RankedEntity&) = default;
};

// Support entities by descending probability, ties by ascending id. Returns
// the full ranking when k exceeds the support size.
inline std::vector<RankedEntity> top_k(const RecommendationDistribution& p, std::size_t k) {
  if (k < 1) throw Error("top_k: k must be >= 1");
  std::vector<RankedEntity> all;
  for (std::size_t i = 0; i < p.support.size(); ++i)
    if (p.support[i]) all.push_back({static_cast<int>(i), p[i]});
  auto better = [](const RankedEntity& a, const RankedEntity& b) {
    return a.probability != b.probability ? a.probability > b.probability : a.entity < b.entity;
  };
  k = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), better);
  all.resize(k);
  return all;
}

// Drops already-mentioned entities from the support and renormalizes. When
// every supported entity was seen, the distribution is returned unchanged.
inline RecommendationDistribution exclude_seen(const RecommendationDistribution& p, const std::vector<int>& seen) {
  RecommendationDistribution out = p;
  for (int e : seen) {
    if (e >= 0 && static_cast<std::size_t>(e) < out.support.size()) {
      out.support[static_cast<std::size_t>(e)] = false;
      out.probs(e) = 0.0;
    }
  }
  const double z = out.probs.sum();
  if (std::none_of(out.support.begin(), out.support.end(), [](bool b) { return b; })) return p;
  if (z <= 0.0) return uniform_distribution(out.support);
  out.probs /= z;
  return out;
}

}  // namespace crs
