// Joint optimization of the generation and recommendation objectives.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include <json.hpp>

#include "crs/evaluation.hpp"
#include "crs/model.hpp"
#include "crs/optim.hpp"

namespace crs {

// ---- reference loss values --------------------------------------------------

// Sum over positions of -log softmax(logits_t)[target_t].
inline double gen_loss(const ad::Matrix& logits, const std::vector<int>& targets) {
  if (static_cast<ad::Index>(targets.size()) != logits.rows()) throw Error("gen_loss: one target per logits row");
  double loss = 0.0;
  for (ad::Index t = 0; t < logits.rows(); ++t) {
    const int y = targets[static_cast<std::size_t>(t)];
    if (y < 0 || y >= logits.cols()) throw Error("gen_loss: target id " + std::to_string(y) + " outside vocabulary");
    const double m = logits.row(t).maxCoeff();
    const double lz = m + std::log((logits.row(t).array() - m).exp().sum());
    loss += lz - logits(t, y);
  }
  return loss;
}

// Sum over targets of -(log p_e(r) + log p_c(r)); absent distributions add
// nothing. Probabilities below 1e-12 are clamped and counted.
inline double rec_loss(const std::optional<RecommendationDistribution>& p_e,
                       const std::optional<RecommendationDistribution>& p_c, const std::vector<int>& targets,
                       std::size_t* clamped = nullptr) {
  double loss = 0.0;
  auto term = [&](const RecommendationDistribution& p, int r) {
    if (r < 0 || static_cast<std::size_t>(r) >= p.size() || !p.support[static_cast<std::size_t>(r)]) {
      throw Error("rec_loss: target entity outside the item support");
    }
    double v = p[static_cast<std::size_t>(r)];
    if (v < 1e-12) {
      v = 1e-12;
      if (clamped) ++*clamped;
    }
    return -std::log(v);
  };
  for (int r : targets) {
    if (p_e) loss += term(*p_e, r);
    if (p_c) loss += term(*p_c, r);
  }
  return loss;
}

struct LossBreakdown {
  double gen_loss = 0.0;
  double rec_loss = 0.0;
  double total = 0.0;

  static LossBreakdown compose(double gen, double rec, double gamma) { return {gen, rec, gen + gamma * rec}; }
  bool finite() const { return std::isfinite(gen_loss) && std::isfinite(rec_loss) && std::isfinite(total); }
};

// ---- training loop ----------------------------------------------------------

struct TrainConfig {
  double gamma = 1.0;
  double lr_new = 5e-3;
  double lr_pretrained = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::int64_t warmup_updates = 1000;
  std::int64_t total_updates = 0;  // 0: epochs x updates per epoch
  double decay_power = 1.0;
  std::size_t max_tokens_per_batch = 4096;
  int update_frequency = 4;
  int epochs = 10;
  std::uint64_t seed = 1;
  bool train_generation = true;
  std::size_t select_k = 50;  // validation Recall@K used for model selection

  void validate() const {
    if (!(lr_new > 0.0) || !(lr_pretrained > 0.0)) throw Error("learning rates must be positive");
    if (gamma < 0.0) throw Error("gamma must be >= 0");
    if (update_frequency < 1) throw Error("update_frequency must be >= 1");
    if (max_tokens_per_batch < 1) throw Error("max_tokens_per_batch must be >= 1");
    if (epochs < 0) throw Error("epochs must be >= 0");
    if (warmup_updates < 0 || total_updates < 0) throw Error("update counts must be >= 0");
  }
};

inline std::size_t example_tokens(const TrainingExample& ex) {
  return ex.context_tokens.size() + ex.target_tokens.size() + 1;
}

// Consecutive examples packed until the next one would exceed max_tokens. An
// example larger than the cap forms its own batch.
inline std::vector<std::vector<const TrainingExample*>> make_batches(const std::vector<const TrainingExample*>& order,
                                                                     std::size_t max_tokens) {
  std::vector<std::vector<const TrainingExample*>> out;
  std::vector<const TrainingExample*> cur;
  std::size_t tokens = 0;
  for (const auto* ex : order) {
    const std::size_t n = example_tokens(*ex);
    if (!cur.empty() && tokens + n > max_tokens) {
      out.push_back(std::move(cur));
      cur.clear();
      tokens = 0;
    }
    cur.push_back(ex);
    tokens += n;
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

// One instance per (example, mapped target item).
inline std::vector<RecEvalInstance> recommendation_instances(const CrsModel& model,
                                                             const std::vector<TrainingExample>& examples,
                                                             std::size_t depth, bool exclude_seen_items = false,
                                                             const FusionConfig* fusion = nullptr) {
  std::vector<RecEvalInstance> out;
  for (const auto& ex : examples) {
    const std::vector<int> targets = model.target_entities(ex);
    if (targets.empty()) continue;
    const Inference inf = model.recommend(model.encode_context(ex.context_tokens), ex.history,
                                          fusion ? *fusion : model.config().fusion);
    RecommendationDistribution p = inf.p_rec;
    if (exclude_seen_items) p = exclude_seen(p, ex.history.entities);
    std::vector<int> ranked;
    for (const auto& r : top_k(p, depth)) ranked.push_back(r.entity);
    for (int t : targets) out.push_back({ranked, t, ex.items_mentioned});
  }
  return out;
}

struct EpochStats {
  int epoch = 0;
  double gen_loss = 0.0;
  double rec_loss = 0.0;
  double total = 0.0;
  std::int64_t updates = 0;
  std::optional<double> valid_recall;
};

struct TrainResult {
  std::vector<EpochStats> epochs;
  int best_epoch = 0;  // 0: initialization (or no validation data)
  std::optional<double> best_recall;
  bool diverged = false;
  std::int64_t updates = 0;
};

class Trainer {
 public:
  Trainer(CrsModel& model, TrainConfig cfg)
      : model_(model),
        cfg_(cfg),
        optimizer_(model.param_groups(cfg.lr_new, cfg.lr_pretrained), cfg.beta1, cfg.beta2, cfg.adam_eps) {
    cfg_.validate();
  }

  Adam& optimizer() { return optimizer_; }
  const TrainConfig& config() const { return cfg_; }
  int epochs_done() const { return epochs_done_; }
  void set_epochs_done(int e) { epochs_done_ = e; }

  // Trains for cfg.epochs more epochs. The parameters left in the model are
  // those of the best validation epoch (or the last good state on divergence).
  TrainResult fit(const std::vector<TrainingExample>& train, const std::vector<TrainingExample>& valid,
                  std::ostream* metrics_log = nullptr) {
    TrainResult result;
    std::vector<const TrainingExample*> order;
    for (const auto& ex : train) order.push_back(&ex);
    const std::vector<const TrainingExample*> corpus_order = order;
    if (order.empty() && cfg_.epochs > 0) throw Error("train: no training examples");

    const std::size_t micro_per_epoch = make_batches(order, cfg_.max_tokens_per_batch).size();
    const auto per_epoch = static_cast<std::int64_t>((micro_per_epoch + static_cast<std::size_t>(cfg_.update_frequency) - 1) /
                                                     static_cast<std::size_t>(cfg_.update_frequency));
    WarmupPolyDecay schedule{cfg_.warmup_updates,
                             cfg_.total_updates > 0 ? cfg_.total_updates
                                                    : optimizer_.steps() + per_epoch * cfg_.epochs,
                             cfg_.decay_power};

    std::vector<ad::Matrix> best = snapshot();
    if (!valid.empty()) {
      result.best_recall = validation_recall(valid);
      result.best_epoch = epochs_done_;
    }

    for (int e = 0; e < cfg_.epochs; ++e) {
      const int epoch = epochs_done_ + 1;
      // The order depends only on (seed, epoch) so a resumed run sees the same batches.
      std::mt19937_64 rng(cfg_.seed * 1000003ULL + static_cast<std::uint64_t>(epoch));
      order = corpus_order;
      std::shuffle(order.begin(), order.end(), rng);
      const auto batches = make_batches(order, cfg_.max_tokens_per_batch);
      std::vector<ad::Matrix> last_good = snapshot();
      EpochStats stats;
      stats.epoch = epoch;
      double gen_acc = 0.0, rec_acc = 0.0;
      std::size_t seen = 0, clamped = 0;
      int pending = 0;
      optimizer_.zero_grad();
      for (std::size_t b = 0; b < batches.size(); ++b) {
        LossParts parts = model_.loss(batches[b], cfg_.gamma, cfg_.train_generation);
        const LossBreakdown lb = LossBreakdown::compose(parts.gen, parts.rec, cfg_.gamma);
        if (!lb.finite() || !std::isfinite(parts.total.item())) {
          std::cerr << "error: non-finite loss at epoch " << epoch << ", restoring last good parameters\n";
          restore(last_good);
          result.diverged = true;
          result.updates = optimizer_.steps();
          return result;
        }
        clamped += parts.clamped;
        ad::backward(ad::scale(parts.total, 1.0 / static_cast<double>(cfg_.update_frequency)));
        const auto n = static_cast<double>(batches[b].size());
        gen_acc += parts.gen * n;
        rec_acc += parts.rec * n;
        seen += batches[b].size();
        if (++pending == cfg_.update_frequency || b + 1 == batches.size()) {
          const double factor = schedule.factor(optimizer_.steps() + 1);
          optimizer_.step(factor);
          optimizer_.zero_grad();
          model_.invalidate_cache();
          pending = 0;
          if (metrics_log) {
            nlohmann::json rec{{"epoch", epoch},
                               {"step", optimizer_.steps()},
                               {"gen_loss", parts.gen},
                               {"rec_loss", parts.rec},
                               {"lr", factor * cfg_.lr_new}};
            *metrics_log << rec.dump() << '\n';
          }
        }
      }
      if (clamped > 0)
        std::cerr << "warning: epoch " << epoch << ": " << clamped << " recommendation probabilities clamped\n";
      stats.gen_loss = gen_acc / static_cast<double>(std::max<std::size_t>(seen, 1));
      stats.rec_loss = rec_acc / static_cast<double>(std::max<std::size_t>(seen, 1));
      stats.total = stats.gen_loss + cfg_.gamma * stats.rec_loss;
      stats.updates = optimizer_.steps();
      epochs_done_ = epoch;
      if (!valid.empty()) {
        stats.valid_recall = validation_recall(valid);
        if (!result.best_recall || *stats.valid_recall > *result.best_recall) {
          result.best_recall = stats.valid_recall;
          result.best_epoch = epoch;
          best = snapshot();
        }
      } else {
        best = snapshot();
        result.best_epoch = epoch;
      }
      result.epochs.push_back(stats);
    }
    restore(best);
    result.updates = optimizer_.steps();
    return result;
  }

  double validation_recall(const std::vector<TrainingExample>& valid) {
    auto inst = recommendation_instances(model_, valid, cfg_.select_k);
    if (inst.empty()) return 0.0;
    return recall_at_k(inst, cfg_.select_k);
  }

 private:
  std::vector<ad::Matrix> snapshot() {
    std::vector<ad::Matrix> out;
    for (const auto& p : model_.parameters()) out.push_back(p.value());
    return out;
  }

  void restore(const std::vector<ad::Matrix>& values) {
    auto params = model_.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) params[i].mutable_value() = values[i];
    model_.invalidate_cache();
  }

  CrsModel& model_;
  TrainConfig cfg_;
  Adam optimizer_;
  int epochs_done_ = 0;
};

}  // namespace crs
