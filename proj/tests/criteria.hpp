// Fast oracle checks shared by the unit tests and the acceptance binary. Each
// returns pass/fail plus a short detail string.

#pragma once

#include <chrono>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "crs/context_encoder.hpp"
#include "crs/evaluation.hpp"
#include "crs/generator.hpp"
#include "crs/graph_encoder.hpp"
#include "crs/preference.hpp"
#include "crs/recommender.hpp"
#include "oracles.hpp"

namespace criteria {

struct Outcome {
  bool pass = true;
  std::string detail;

  void fail(const std::string& why) {
    if (pass) detail = why;
    pass = false;
  }
};

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline std::string fmt(double v) {
  std::ostringstream s;
  s.precision(3);
  s << v;
  return s.str();
}

// Recency-weighted summary against the direct formula.
inline Outcome time_aware_exactness() {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome out;
  std::mt19937_64 rng(17);
  double worst = 0.0;
  for (double lambda : {0.5, 1.0, 1.5, 2.0}) {
    for (int trial = 0; trial < 50; ++trial) {
      const int n = 1 + trial % 6;
      crs::EntityEmbeddingTable table{oracle::random_matrix(12, 8, rng)};
      std::uniform_int_distribution<int> pick(0, 11);
      std::vector<int> history;
      std::vector<oracle::Vector> hs;
      for (int i = 0; i < n; ++i) {
        history.push_back(pick(rng));
        hs.push_back(table.values.row(history.back()).transpose());
      }
      const auto got = crs::time_aware_summary(history, table, lambda);
      if (!got) {
        out.fail("nullopt for non-empty history");
        continue;
      }
      worst = std::max(worst, (*got - oracle::time_aware(hs, lambda)).cwiseAbs().maxCoeff());
      if (lambda == 1.0) {
        oracle::Vector mean = oracle::Vector::Zero(8);
        for (const auto& h : hs) mean += h;
        mean /= static_cast<double>(n);
        worst = std::max(worst, (*got - mean).cwiseAbs().maxCoeff());
      }
    }
  }
  if (worst > 1e-10) out.fail("max deviation " + fmt(worst));
  const auto w = crs::time_aware_weights(3, 2.0);
  if (std::abs(w(0) - 1.0 / 7) > 1e-12 || std::abs(w(1) - 2.0 / 7) > 1e-12 || std::abs(w(2) - 4.0 / 7) > 1e-12)
    out.fail("lambda=2 weights differ from (1/7, 2/7, 4/7)");
  const double secs = seconds_since(t0);
  if (secs >= 1.0) out.fail("took " + fmt(secs) + " s");
  if (out.pass) out.detail = "max deviation " + fmt(worst) + ", " + fmt(secs) + " s";
  return out;
}

inline crs::KnowledgeGraph random_graph(std::mt19937_64& rng, int entities, int relations, int triples,
                                        const crs::ItemCatalog* catalog = nullptr) {
  std::uniform_int_distribution<int> ent(0, entities - 1), rel(0, relations - 1);
  std::vector<crs::KnowledgeGraph::RawTriple> raw;
  for (int e = 0; e + 1 < entities; ++e)
    raw.emplace_back("e" + std::to_string(e), "r" + std::to_string(e % relations), "e" + std::to_string(e + 1));
  for (int i = 0; i < triples; ++i)
    raw.emplace_back("e" + std::to_string(ent(rng)), "r" + std::to_string(rel(rng)), "e" + std::to_string(ent(rng)));
  return crs::KnowledgeGraph::from_triples(raw, catalog, true);
}

// Forward pass against the per-triple loop, then finite-difference gradients
// of the recommendation loss through the graph and the recency summary.
inline Outcome rgcn_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome out;
  std::mt19937_64 rng(23);
  double worst_fwd = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const int entities = 5 + trial % 16, relations = 1 + trial % 3, d = 2 + trial % 7;
    const auto kg = random_graph(rng, entities, relations, 2 * entities);
    const auto p = crs::init_params(kg, d, static_cast<std::uint64_t>(trial) + 1);
    std::vector<oracle::Edge> edges;
    for (const auto& t : kg.triples()) edges.push_back({t.head, t.relation, t.tail});
    std::vector<oracle::Matrix> ws;
    for (const auto& w : p.weights[0]) ws.push_back(w.value());
    const oracle::Matrix expected =
        oracle::rgcn_layer(p.entity_embeddings.value(), edges, kg.num_base_relations(), true, ws);
    worst_fwd = std::max(worst_fwd, (crs::rgcn_forward(kg, p).values - expected).cwiseAbs().maxCoeff());
  }
  if (worst_fwd > 1e-6) out.fail("forward deviation " + fmt(worst_fwd));

  double worst_grad = 0.0;
  for (int trial = 0; trial < 3; ++trial) {
    crs::ItemCatalog cat;
    for (int i = 0; i < 6; ++i) {
      cat.items["i" + std::to_string(i)] = "item " + std::to_string(i);
      cat.item_to_entity["i" + std::to_string(i)] = "e" + std::to_string(3 * i);
    }
    const auto kg = random_graph(rng, 18, 3, 30, &cat);
    auto p = crs::init_params(kg, 6, 40 + static_cast<std::uint64_t>(trial));
    const std::vector<int> history{1, 4, 1, 7, 2};
    const int target = *kg.entity_for_item("i" + std::to_string(trial + 1));
    auto loss_tensor = [&] {
      crs::ad::Tensor table = crs::rgcn_forward_tensor(kg, p, 1);
      crs::ad::Tensor user = crs::time_aware_summary_tensor(table, history, 1.5);
      return crs::ad::scale(crs::ad::pick_entries(crs::entity_log_probs(user, table, kg.item_mask()), {target}), -1.0);
    };
    for (auto& t : p.tensors()) t.zero_grad();
    crs::ad::backward(crs::ad::sum(loss_tensor()));
    auto loss = [&] {
      crs::ad::NoGradGuard guard;
      return loss_tensor().item();
    };
    for (auto t : p.tensors()) {
      const oracle::Matrix analytic = t.grad();
      const oracle::Matrix numeric = oracle::numeric_gradient(t.mutable_value(), loss);
      worst_grad = std::max(worst_grad, oracle::relative_error(analytic, numeric));
    }
  }
  if (worst_grad > 1e-4) out.fail("gradient relative error " + fmt(worst_grad));
  const double secs = seconds_since(t0);
  if (secs >= 60.0) out.fail("took " + fmt(secs) + " s");
  if (out.pass) out.detail = "forward " + fmt(worst_fwd) + ", grad rel err " + fmt(worst_grad) + ", " + fmt(secs) + " s";
  return out;
}

// Sum-to-one, zero mass off support, and fuse endpoints.
inline Outcome distribution_invariants(int cases = 1000) {
  Outcome out;
  std::mt19937_64 rng(29);
  double worst_sum = 0.0;
  for (int c = 0; c < cases; ++c) {
    std::uniform_int_distribution<int> size(2, 40), dim(1, 8);
    const int n = size(rng), d = dim(rng);
    std::vector<bool> mask(static_cast<std::size_t>(n));
    std::bernoulli_distribution coin(0.4);
    for (auto&& m : mask) m = coin(rng);
    mask[static_cast<std::size_t>(std::uniform_int_distribution<int>(0, n - 1)(rng))] = true;
    const double spread = std::pow(10.0, std::uniform_real_distribution<double>(-1.0, 2.0)(rng));

    crs::EntityEmbeddingTable table{oracle::random_matrix(n, d, rng, spread)};
    const auto user = crs::time_aware_summary(std::vector<int>{0, n - 1}, table, 1.5);
    const auto p_e = crs::entity_scores(*user, table, mask);

    crs::ContextEncoding enc{oracle::random_matrix(5, d, rng, spread), {true, true, false, true, true}};
    const auto head = crs::ContextHeadParams::init(d, n, static_cast<std::uint64_t>(c), c % 2 ? 4 : 0);
    const auto p_c = crs::context_scores(enc, head, mask);

    crs::FusionConfig cfg;
    cfg.mu = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const auto p_rec = crs::fuse(p_e, p_c, cfg);
    for (const auto* p : {&p_e, &p_c, &p_rec}) {
      worst_sum = std::max(worst_sum, std::abs(p->probs.sum() - 1.0));
      for (int i = 0; i < n; ++i) {
        if (!mask[static_cast<std::size_t>(i)] && p->probs(i) != 0.0) out.fail("mass off support");
        if (!(p->probs(i) >= 0.0)) out.fail("negative or NaN probability");
      }
    }
    cfg.mu = 0.0;
    if (crs::fuse(p_e, p_c, cfg).probs != p_c.probs) out.fail("mu=0 does not return p_c");
    cfg.mu = 1.0;
    if (crs::fuse(p_e, p_c, cfg).probs != p_e.probs) out.fail("mu=1 does not return p_e");
    cfg.cold_start_policy = crs::ColdStartPolicy::kUniformEntity;
    cfg.mu = 0.5;
    worst_sum = std::max(worst_sum, std::abs(crs::fuse(std::nullopt, p_c, cfg).probs.sum() - 1.0));
  }
  if (worst_sum > 1e-6) out.fail("sum deviation " + fmt(worst_sum));
  if (out.pass) out.detail = std::to_string(cases) + " cases, max |sum-1| " + fmt(worst_sum);
  return out;
}

// A toy vocabulary: 12 tokens, the last 4 are items.
inline Outcome decoding_invariants() {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome out;
  const int vocab = 12, base = 8;
  auto same = [](const std::vector<crs::Hypothesis>& a, const std::vector<crs::Hypothesis>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a[i].tokens != b[i].tokens || a[i].log_prob != b[i].log_prob || a[i].score != b[i].score) return false;
    return true;
  };
  std::mt19937_64 rng(31);
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    oracle::ToyLM lm{vocab, seed, 2.0};
    const auto zero = crs::VocabBias::zeros(vocab, base);
    const crs::VocabBias none{};
    for (auto strategy : {crs::DecodeStrategy::kGreedy, crs::DecodeStrategy::kBeam, crs::DecodeStrategy::kDiverseBeam}) {
      crs::DecodeConfig cfg;
      cfg.strategy = strategy;
      cfg.max_new_tokens = 12;
      if (!same(crs::decode(lm, zero, cfg), crs::decode(lm, none, cfg))) out.fail("zero bias changed the output");
    }
    crs::VocabBias bias = zero;
    for (int j = base; j < vocab; ++j) bias.values(j) = std::uniform_real_distribution<double>(0.0, 1.0)(rng);

    crs::DecodeConfig greedy;
    greedy.strategy = crs::DecodeStrategy::kGreedy;
    greedy.max_new_tokens = 12;
    crs::DecodeConfig beam1 = greedy;
    beam1.strategy = crs::DecodeStrategy::kBeam;
    beam1.beam_size = 1;
    const auto g = crs::decode(lm, bias, greedy), b = crs::decode(lm, bias, beam1);
    if (g.empty() || b.empty() || g[0].tokens != b[0].tokens || std::abs(g[0].log_prob - b[0].log_prob) > 1e-12)
      out.fail("beam_size=1 differs from greedy");

    crs::DecodeConfig plain = greedy;
    plain.strategy = crs::DecodeStrategy::kBeam;
    plain.beam_size = 4;
    crs::DecodeConfig diverse = plain;
    diverse.strategy = crs::DecodeStrategy::kDiverseBeam;
    diverse.groups = 1;
    if (!same(crs::decode(lm, bias, plain), crs::decode(lm, bias, diverse))) out.fail("groups=1 differs from beam");

    for (auto mode : {crs::BiasMode::kProbability, crs::BiasMode::kLogDomain}) {
      crs::DecodeConfig cfg = greedy;
      cfg.bias_mode = mode;
      cfg.bias_trigger_k = vocab;
      std::vector<int> prefix{crs::Vocabulary::kBos};
      for (int step = 0; step < 5; ++step) {
        const auto s = crs::adjust_step(lm.next_logits(prefix), bias, cfg);
        if (!s.triggered) out.fail("bias did not trigger with k = |V|");
        if (std::abs(s.log_probs.array().exp().sum() - 1.0) > 1e-6) out.fail("biased step does not sum to 1");
        prefix.push_back(step + 3);
      }
    }
  }
  const double secs = seconds_since(t0);
  if (secs >= 10.0) out.fail("took " + fmt(secs) + " s");
  if (out.pass) out.detail = "20 toy models, " + fmt(secs) + " s";
  return out;
}

// Recall, BLEU, Dist and bigram perplexity against hand-counted fixtures.
inline Outcome metric_oracles() {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome out;
  auto near = [&](double got, double want, const std::string& what, double tol = 1e-9) {
    if (std::abs(got - want) > tol) out.fail(what + ": " + fmt(got) + " vs " + fmt(want));
  };

  // Hits: instance 1 at rank 1, instance 2 at rank 3, instance 3 absent, instance 4 at rank 2.
  const std::vector<crs::RecEvalInstance> rec{
      {{5, 1, 2}, 5, 0}, {{1, 2, 9, 4}, 9, 1}, {{1, 2, 3}, 7, 0}, {{3, 8}, 8, 2}};
  near(crs::recall_at_k(rec, 1), 25.0, "Recall@1");
  near(crs::recall_at_k(rec, 2), 50.0, "Recall@2");
  near(crs::recall_at_k(rec, 3), 75.0, "Recall@3");
  near(crs::recall_at_k(rec, 50), 75.0, "Recall@50");
  double prev = 0.0;
  for (std::size_t k = 1; k <= 10; ++k) {
    const double r = crs::recall_at_k(rec, k);
    if (r < prev) out.fail("Recall@K not monotone");
    prev = r;
  }
  const auto buckets = crs::recall_by_history_length(rec, 1);
  if (buckets.size() != 3 || buckets.at(0).count != 2) out.fail("history buckets");
  else near(buckets.at(0).recall, 50.0, "bucket 0 Recall@1");

  const crs::Tokens x{"the", "movie", "was", "really", "great", "fun"};
  for (std::size_t n : {1u, 2u, 3u, 4u}) near(crs::sentence_bleu(x, x, n), 100.0, "BLEU(x,x)");
  // Hypothesis "a b c" vs reference "a b d": p1 = 2/3, p2 = 1/2, equal lengths.
  near(crs::sentence_bleu({"a", "b", "c"}, {"a", "b", "d"}, 2), 100.0 * std::sqrt(2.0 / 3.0 * 0.5), "BLEU-2 fixture");

  const std::vector<crs::Tokens> rs{{"i", "like", "it"}, {"i", "like", "that"}, {"ok"}};
  std::vector<std::vector<std::string>> raw(rs.begin(), rs.end());
  near(crs::dist_n(rs, 1), 100.0 * 5.0 / 7.0, "Dist-1");
  near(crs::dist_n(rs, 2), 100.0 * 3.0 / 4.0, "Dist-2");
  near(crs::dist_n(rs, 3), 100.0, "Dist-3");
  near(crs::dist_n(rs, 2), oracle::distinct(raw, 2), "Dist-2 oracle");

  // Bigram interpolated KN on {"a b", "a c"} with discounts (0.5, 1, 1.5):
  // P(a|<s>) = 0.6, P(b|a) = 0.35, P(</s>|b) = 0.65; unseen z maps to <unk>
  // with P(<unk>|a) = 0.05 and P(</s>|z) backs off to P1(</s>) = 0.3.
  crs::KneserNeyLM lm(2);
  lm.set_fixed_discounts({0.5, 1.0, 1.5});
  lm.train({{"a", "b"}, {"a", "c"}});
  near(crs::ngram_ppl({{"a", "b"}}, lm), std::pow(0.6 * 0.35 * 0.65, -1.0 / 3.0), "PPL(a b)");
  near(crs::ngram_ppl({{"a", "z"}}, lm), std::pow(0.6 * 0.05 * 0.3, -1.0 / 3.0), "PPL(a z)");
  near(crs::ngram_ppl({{"a", "b"}, {"a", "z"}}, lm),
       std::pow(0.6 * 0.35 * 0.65 * 0.6 * 0.05 * 0.3, -1.0 / 6.0), "PPL corpus");

  const double secs = seconds_since(t0);
  if (secs >= 10.0) out.fail("took " + fmt(secs) + " s");
  if (out.pass) out.detail = "fixtures match, " + fmt(secs) + " s";
  return out;
}

}  // namespace criteria
