// Recommendation and generation metrics: Recall@K (overall and bucketed by
// the number of items mentioned in the context), Dist-n, sentence BLEU with
// epsilon smoothing, and perplexity under an interpolated modified
// Kneser-Ney n-gram model.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "crs/corpus.hpp"
#include "crs/types.hpp"

namespace crs {

// ---- recommendation -------------------------------------------------------

struct RecEvalInstance {
  std::vector<int> ranked;  // model ranking, best first, no duplicates
  int ground_truth = -1;
  std::size_t history_length = 0;  // items mentioned in the context
};

inline bool hit_at_k(const RecEvalInstance& inst, std::size_t k) {
  const auto n = std::min(k, inst.ranked.size());
  return std::find(inst.ranked.begin(), inst.ranked.begin() + static_cast<std::ptrdiff_t>(n), inst.ground_truth) !=
         inst.ranked.begin() + static_cast<std::ptrdiff_t>(n);
}

inline double recall_at_k(const std::vector<RecEvalInstance>& instances, std::size_t k) {
  if (instances.empty()) throw Error("recall_at_k: no instances");
  std::size_t hits = 0;
  for (const auto& inst : instances) hits += hit_at_k(inst, k) ? 1 : 0;
  return 100.0 * static_cast<double>(hits) / static_cast<double>(instances.size());
}

struct BucketRecall {
  double recall = 0.0;
  std::size_t count = 0;
};

// Buckets 0..9 by history length; bucket 10 collects 10 and above. Empty
// buckets are omitted.
inline std::map<std::size_t, BucketRecall> recall_by_history_length(const std::vector<RecEvalInstance>& instances,
                                                                     std::size_t k) {
  std::map<std::size_t, std::pair<std::size_t, std::size_t>> acc;
  for (const auto& inst : instances) {
    auto& [hits, n] = acc[std::min<std::size_t>(inst.history_length, 10)];
    hits += hit_at_k(inst, k) ? 1 : 0;
    ++n;
  }
  std::map<std::size_t, BucketRecall> out;
  for (const auto& [bucket, hn] : acc) {
    out[bucket] = {100.0 * static_cast<double>(hn.first) / static_cast<double>(hn.second), hn.second};
  }
  return out;
}

// ---- generation -----------------------------------------------------------

using Tokens = std::vector<std::string>;

inline Tokens lowercase(const Tokens& ts) {
  Tokens out;
  out.reserve(ts.size());
  for (const auto& t : ts) out.push_back(to_lower(t));
  return out;
}

namespace detail {

inline std::string join_ngram(const Tokens& ts, std::size_t start, std::size_t n) {
  std::string key;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) key.push_back('\x1f');
    key += ts[start + i];
  }
  return key;
}

inline std::map<std::string, std::size_t> ngram_counts(const Tokens& ts, std::size_t n) {
  std::map<std::string, std::size_t> c;
  if (ts.size() < n) return c;
  for (std::size_t i = 0; i + n <= ts.size(); ++i) ++c[join_ngram(ts, i, n)];
  return c;
}

}  // namespace detail

enum class DistLevel { kCorpus, kSentence };

// Distinct n-grams over total n-grams, x100. Responses shorter than n add nothing.
inline double dist_n(const std::vector<Tokens>& responses, std::size_t n, DistLevel level = DistLevel::kCorpus) {
  if (n == 0) throw Error("dist_n: n must be >= 1");
  if (level == DistLevel::kSentence) {
    double acc = 0.0;
    std::size_t used = 0;
    for (const auto& r : responses) {
      if (r.size() < n) continue;
      auto c = detail::ngram_counts(lowercase(r), n);
      acc += static_cast<double>(c.size()) / static_cast<double>(r.size() - n + 1);
      ++used;
    }
    if (used == 0) {
      std::cerr << "warning: dist_n: every response is shorter than " << n << "\n";
      return 0.0;
    }
    return 100.0 * acc / static_cast<double>(used);
  }
  std::set<std::string> distinct;
  std::size_t total = 0;
  for (const auto& r : responses) {
    if (r.size() < n) continue;
    const Tokens lr = lowercase(r);
    for (std::size_t i = 0; i + n <= lr.size(); ++i) {
      distinct.insert(detail::join_ngram(lr, i, n));
      ++total;
    }
  }
  if (total == 0) {
    std::cerr << "warning: dist_n: every response is shorter than " << n << "\n";
    return 0.0;
  }
  return 100.0 * static_cast<double>(distinct.size()) / static_cast<double>(total);
}

// Sentence BLEU with uniform weights over orders 1..max_order, clipped
// precisions, brevity penalty, and epsilon (0.1) added to zero numerators.
// Returns 0 when no unigram matches. Case-folded. Result in [0, 100].
inline double sentence_bleu(const Tokens& hypothesis, const Tokens& reference, std::size_t max_order,
                            double epsilon = 0.1) {
  if (max_order == 0) throw Error("bleu: order must be >= 1");
  const Tokens hyp = lowercase(hypothesis);
  const Tokens ref = lowercase(reference);
  if (hyp.empty()) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= max_order; ++n) {
    const auto hc = detail::ngram_counts(hyp, n);
    const auto rc = detail::ngram_counts(ref, n);
    std::size_t matched = 0, total = 0;
    for (const auto& [g, c] : hc) {
      total += c;
      auto it = rc.find(g);
      if (it != rc.end()) matched += std::min(c, it->second);
    }
    if (n == 1 && matched == 0) return 0.0;
    const double denom = static_cast<double>(std::max<std::size_t>(total, 1));
    const double p = matched == 0 ? epsilon / denom : static_cast<double>(matched) / denom;
    log_sum += std::log(p) / static_cast<double>(max_order);
  }
  const double c = static_cast<double>(hyp.size());
  const double r = static_cast<double>(ref.size());
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return 100.0 * bp * std::exp(log_sum);
}

struct GenPair {
  Tokens hypothesis;
  Tokens reference;
};

inline double bleu_n(const std::vector<GenPair>& pairs, std::size_t n) {
  if (pairs.empty()) throw Error("bleu_n: no pairs");
  double acc = 0.0;
  for (const auto& p : pairs) acc += sentence_bleu(p.hypothesis, p.reference, n);
  return acc / static_cast<double>(pairs.size());
}

// ---- n-gram language model --------------------------------------------------

// Interpolated modified Kneser-Ney with three discounts per order estimated
// from counts-of-counts. Lower orders use continuation counts except for
// n-grams starting with <s>. The unigram level interpolates with a uniform
// distribution over the vocabulary plus <unk>.
class KneserNeyLM {
 public:
  static constexpr const char* kBos = "<s>";
  static constexpr const char* kEos = "</s>";
  static constexpr const char* kUnk = "<unk>";

  using Discounts = std::array<double, 3>;

  explicit KneserNeyLM(int order = 4) : order_(order) {
    if (order < 1) throw Error("KneserNeyLM: order must be >= 1");
  }

  // Fixed discounts for every order instead of the count-of-count estimate.
  void set_fixed_discounts(const Discounts& d) { fixed_ = d; }

  void train(const std::vector<Tokens>& sentences) {
    raw_.assign(static_cast<std::size_t>(order_ + 1), {});
    vocab_.clear();
    for (const auto& s : sentences) {
      Tokens padded = pad(s);
      for (std::size_t i = 1; i < padded.size(); ++i) {
        vocab_.insert(padded[i]);
        for (int k = 1; k <= order_ && static_cast<int>(i) + 1 >= k; ++k) {
          ++raw_[static_cast<std::size_t>(k)][key(padded, i + 1 - static_cast<std::size_t>(k), static_cast<std::size_t>(k))];
        }
      }
    }
    if (vocab_.empty()) throw Error("KneserNeyLM: empty training corpus");
    build();
  }

  int order() const { return order_; }
  std::size_t vocab_size() const { return vocab_.size() + 1; }
  const Discounts& discounts(int k) const { return discounts_.at(static_cast<std::size_t>(k)); }

  // Natural-log probability of `word` after `history` (most recent last).
  double log_prob(const Tokens& history, const std::string& word) const {
    std::vector<std::string> ctx;
    const std::size_t take = std::min<std::size_t>(history.size(), static_cast<std::size_t>(order_ - 1));
    ctx.assign(history.end() - static_cast<std::ptrdiff_t>(take), history.end());
    return std::log(prob(ctx, vocab_.count(word) ? word : std::string(kUnk)));
  }

  // Sum of log-probabilities of every word and </s>; returns the token count.
  double sentence_log_prob(const Tokens& sentence, std::size_t* tokens = nullptr) const {
    Tokens padded = pad(sentence);
    double lp = 0.0;
    for (std::size_t i = 1; i < padded.size(); ++i) {
      Tokens hist(padded.begin(), padded.begin() + static_cast<std::ptrdiff_t>(i));
      lp += log_prob(hist, padded[i]);
    }
    if (tokens) *tokens = padded.size() - 1;
    return lp;
  }

 private:
  static Tokens pad(const Tokens& s) {
    Tokens p;
    p.reserve(s.size() + 2);
    p.push_back(kBos);
    p.insert(p.end(), s.begin(), s.end());
    p.push_back(kEos);
    return p;
  }

  static std::string key(const Tokens& ts, std::size_t start, std::size_t n) { return detail::join_ngram(ts, start, n); }

  static std::pair<std::string, std::string> split_last(const std::string& k) {
    auto pos = k.rfind('\x1f');
    if (pos == std::string::npos) return {"", k};
    return {k.substr(0, pos), k.substr(pos + 1)};
  }

  static std::string drop_first(const std::string& k) {
    auto pos = k.find('\x1f');
    return pos == std::string::npos ? std::string() : k.substr(pos + 1);
  }

  static bool starts_with_bos(const std::string& k) { return k.rfind(std::string(kBos), 0) == 0 && (k.size() == 3 || k[3] == '\x1f'); }

  struct ContextStats {
    double total = 0.0;
    std::array<std::size_t, 3> n{0, 0, 0};  // count 1, 2, 3+
  };

  void build() {
    adjusted_.assign(static_cast<std::size_t>(order_ + 1), {});
    for (const auto& [g, c] : raw_[static_cast<std::size_t>(order_)]) adjusted_[static_cast<std::size_t>(order_)][g] = static_cast<double>(c);
    for (int k = order_ - 1; k >= 1; --k) {
      auto& adj = adjusted_[static_cast<std::size_t>(k)];
      for (const auto& [g, c] : raw_[static_cast<std::size_t>(k)]) {
        if (starts_with_bos(g)) adj[g] = static_cast<double>(c);
      }
      // Continuation counts: distinct left extensions seen at order k + 1.
      for (const auto& [g, c] : raw_[static_cast<std::size_t>(k + 1)]) {
        const std::string suffix = drop_first(g);
        if (!starts_with_bos(suffix)) adj[suffix] += 1.0;
      }
    }
    discounts_.assign(static_cast<std::size_t>(order_ + 1), Discounts{0.5, 1.0, 1.5});
    contexts_.assign(static_cast<std::size_t>(order_ + 1), {});
    for (int k = 1; k <= order_; ++k) {
      const auto& adj = adjusted_[static_cast<std::size_t>(k)];
      if (fixed_) {
        discounts_[static_cast<std::size_t>(k)] = *fixed_;
      } else {
        std::array<double, 5> t{0, 0, 0, 0, 0};
        for (const auto& [g, c] : adj) {
          const auto ci = static_cast<std::size_t>(std::llround(c));
          if (ci >= 1 && ci <= 4) t[ci] += 1.0;
        }
        bool ok = t[1] > 0 && t[2] > 0 && t[3] > 0 && t[4] > 0;
        if (ok) {
          const double y = t[1] / (t[1] + 2.0 * t[2]);
          Discounts d{1.0 - 2.0 * y * t[2] / t[1], 2.0 - 3.0 * y * t[3] / t[2], 3.0 - 4.0 * y * t[4] / t[3]};
          for (int j = 0; j < 3; ++j) ok = ok && d[static_cast<std::size_t>(j)] > 0.0 && d[static_cast<std::size_t>(j)] < j + 1;
          if (ok) discounts_[static_cast<std::size_t>(k)] = d;
        }
      }
      auto& ctx = contexts_[static_cast<std::size_t>(k)];
      for (const auto& [g, c] : adj) {
        auto& st = ctx[split_last(g).first];
        st.total += c;
        const auto ci = static_cast<std::size_t>(std::llround(c));
        if (ci >= 1) ++st.n[std::min<std::size_t>(ci, 3) - 1];
      }
    }
  }

  double discount(int k, double count) const {
    if (count <= 0.0) return 0.0;
    const auto& d = discounts_[static_cast<std::size_t>(k)];
    const auto ci = static_cast<std::size_t>(std::llround(count));
    return d[std::min<std::size_t>(ci, 3) - 1];
  }

  double prob(const std::vector<std::string>& ctx, const std::string& word) const {
    const int k = static_cast<int>(ctx.size()) + 1;
    std::string hist;
    for (std::size_t i = 0; i < ctx.size(); ++i) {
      if (i) hist.push_back('\x1f');
      hist += ctx[i];
    }
    double lower;
    if (k == 1) {
      lower = 1.0 / static_cast<double>(vocab_size());
    } else {
      lower = prob(std::vector<std::string>(ctx.begin() + 1, ctx.end()), word);
    }
    const auto& contexts = contexts_[static_cast<std::size_t>(k)];
    auto cit = contexts.find(hist);
    if (cit == contexts.end() || cit->second.total <= 0.0) return lower;
    const auto& st = cit->second;
    const auto& adj = adjusted_[static_cast<std::size_t>(k)];
    const std::string full = hist.empty() ? word : hist + '\x1f' + word;
    auto it = adj.find(full);
    const double c = it == adj.end() ? 0.0 : it->second;
    const auto& d = discounts_[static_cast<std::size_t>(k)];
    const double gamma = (d[0] * static_cast<double>(st.n[0]) + d[1] * static_cast<double>(st.n[1]) +
                          d[2] * static_cast<double>(st.n[2])) / st.total;
    return std::max(c - discount(k, c), 0.0) / st.total + gamma * lower;
  }

  int order_;
  std::optional<Discounts> fixed_;
  std::vector<std::unordered_map<std::string, std::size_t>> raw_;
  std::vector<std::unordered_map<std::string, double>> adjusted_;
  std::vector<std::unordered_map<std::string, ContextStats>> contexts_;
  std::vector<Discounts> discounts_;
  std::set<std::string> vocab_;
};

// exp(mean negative log-likelihood per token), </s> included.
inline double ngram_ppl(const std::vector<Tokens>& responses, const KneserNeyLM& lm) {
  if (responses.empty()) throw Error("ngram_ppl: empty corpus");
  double nll = 0.0;
  std::size_t count = 0;
  for (const auto& r : responses) {
    std::size_t n = 0;
    nll -= lm.sentence_log_prob(lowercase(r), &n);
    count += n;
  }
  return std::exp(nll / static_cast<double>(count));
}

// ---- reports ----------------------------------------------------------------

using MetricsReport = std::map<std::string, double>;

inline void write_report(const std::string& path, const MetricsReport& report) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write report: " + path);
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& [k, v] : report) out << k << '=' << v << '\n';
}

inline MetricsReport read_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read report: " + path);
  MetricsReport r;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw Error("bad report line: " + line);
    r[line.substr(0, eq)] = std::stod(line.substr(eq + 1));
  }
  return r;
}

}  // namespace crs
