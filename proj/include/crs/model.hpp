// The assembled recommender: backbone encoder-decoder, R-GCN entity encoder,
// history summarizer, context head, and the fusion of both preference
// distributions. Provides the joint training loss and inference.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "crs/context_encoder.hpp"
#include "crs/corpus.hpp"
#include "crs/generator.hpp"
#include "crs/graph_encoder.hpp"
#include "crs/kg.hpp"
#include "crs/optim.hpp"
#include "crs/preference.hpp"
#include "crs/recommender.hpp"
#include "crs/transformer.hpp"

namespace crs {

// context: p_rec = p_c. entity / entity_selfattn: p_rec = p_e with the
// time-aware or self-attention summary. full: mu * p_e + (1 - mu) * p_c.
enum class Variant { kContext, kEntitySelfAttention, kEntityTimeAware, kFull };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::kContext: return "context";
    case Variant::kEntitySelfAttention: return "entity_selfattn";
    case Variant::kEntityTimeAware: return "entity";
    case Variant::kFull: return "full";
  }
  return "full";
}

inline Variant variant_from_string(const std::string& s) {
  if (s == "context") return Variant::kContext;
  if (s == "entity_selfattn") return Variant::kEntitySelfAttention;
  if (s == "entity") return Variant::kEntityTimeAware;
  if (s == "full") return Variant::kFull;
  throw Error("unknown variant '" + s + "' (expected context, entity_selfattn, entity, full)");
}

inline bool uses_entity(Variant v) { return v != Variant::kContext; }
inline bool uses_context(Variant v) { return v == Variant::kContext || v == Variant::kFull; }

struct ModelConfig {
  BackboneConfig backbone;
  int entity_dim = 128;
  int rgcn_layers = 1;
  int rgcn_bases = 0;
  int head_hidden = 0;
  Variant variant = Variant::kFull;
  FusionConfig fusion;
  HistoryOptions history;
  bool mask_context = true;   // p_c logits restricted to items during training
  bool stop_gradient_context = false;  // L_rec does not reach the encoder
  std::uint64_t seed = 1;

  void validate() const {
    backbone.validate();
    fusion.validate();
    if (entity_dim < 1) throw Error("entity_dim must be >= 1");
    if (rgcn_layers < 1) throw Error("rgcn_layers must be >= 1");
    if (rgcn_bases < 0 || head_hidden < 0) throw Error("rgcn_bases and head_hidden must be >= 0");
  }
};

struct Inference {
  std::optional<RecommendationDistribution> p_e;  // nullopt on cold start or context variant
  std::optional<RecommendationDistribution> p_c;  // nullopt for entity variants
  RecommendationDistribution p_rec;
  std::vector<int> history;  // entity ids used for p_e
  std::string branch;        // "fused", "context_only", "entity_only", "uniform"
};

struct LossParts {
  ad::Tensor total;
  double gen = 0.0;           // mean over examples of summed token NLL
  double rec = 0.0;           // mean over examples of summed item NLL
  std::size_t gen_tokens = 0;
  std::size_t clamped = 0;    // rec terms whose probability fell below 1e-12
};

// Greedy next-token logits from an encoded context.
class DecoderStep {
 public:
  DecoderStep(const Backbone& backbone, ad::Tensor memory, std::vector<bool> keep)
      : backbone_(&backbone), memory_(std::move(memory)), keep_(std::move(keep)) {}

  ad::Vector next_logits(const std::vector<int>& prefix) const {
    ad::NoGradGuard guard;
    const int cap = backbone_->config().max_positions;
    std::span<const int> view(prefix);
    if (static_cast<int>(view.size()) > cap) view = view.subspan(view.size() - static_cast<std::size_t>(cap));
    ad::Tensor logits = backbone_->decode(view, memory_, keep_);
    return logits.value().row(logits.rows() - 1).transpose();
  }

 private:
  const Backbone* backbone_;
  ad::Tensor memory_;
  std::vector<bool> keep_;
};

class CrsModel {
 public:
  CrsModel(ModelConfig cfg, KnowledgeGraph kg, ItemCatalog catalog, Vocabulary vocab, AliasIndex aliases = {})
      : cfg_(std::move(cfg)),
        kg_(std::move(kg)),
        catalog_(std::move(catalog)),
        vocab_(std::move(vocab)),
        aliases_(std::move(aliases)),
        backbone_(cfg_.backbone, vocab_.base_size(), vocab_.num_items(), cfg_.seed) {
    cfg_.validate();
    require_nonempty_support(kg_.item_mask());
    rgcn_ = init_params(kg_, cfg_.entity_dim, cfg_.seed + 1, cfg_.rgcn_layers, cfg_.rgcn_bases);
    attention_ = SelfAttentionParams::init(cfg_.entity_dim, cfg_.seed + 2);
    head_ = ContextHeadParams::init(cfg_.backbone.d_model, kg_.num_entities(), cfg_.seed + 3, cfg_.head_hidden);
  }

  const ModelConfig& config() const { return cfg_; }
  ModelConfig& mutable_config() { return cfg_; }
  const KnowledgeGraph& kg() const { return kg_; }
  const ItemCatalog& catalog() const { return catalog_; }
  const Vocabulary& vocab() const { return vocab_; }
  const AliasIndex& aliases() const { return aliases_; }
  const Backbone& backbone() const { return backbone_; }
  RgcnParams& rgcn() { return rgcn_; }
  const RgcnParams& rgcn() const { return rgcn_; }
  SelfAttentionParams& attention() { return attention_; }
  ContextHeadParams& head() { return head_; }

  // Checkpoint-addressable tensors, grouped by section.
  std::map<std::string, std::vector<NamedTensor>> sections() {
    std::map<std::string, std::vector<NamedTensor>> out;
    out["backbone"] = backbone_.named_tensors(true);
    auto& g = out["graph_encoder"];
    g.push_back({"entity_embeddings", &rgcn_.entity_embeddings});
    for (std::size_t l = 0; l < rgcn_.weights.size(); ++l)
      for (std::size_t r = 0; r < rgcn_.weights[l].size(); ++r)
        g.push_back({"w." + std::to_string(l) + "." + std::to_string(r), &rgcn_.weights[l][r]});
    for (std::size_t l = 0; l < rgcn_.bases.size(); ++l) {
      g.push_back({"bases." + std::to_string(l), &rgcn_.bases[l]});
      g.push_back({"coefficients." + std::to_string(l), &rgcn_.coefficients[l]});
    }
    out["preference"] = {{"attn.w", &attention_.w}, {"attn.v", &attention_.v}};
    out["context_head"] = head_.named_tensors();
    return out;
  }

  // Backbone weights other than the new item-token rows are "pretrained";
  // item embeddings, R-GCN, summarizer and head are new.
  std::vector<ParamGroup> param_groups(double lr_new, double lr_pretrained) {
    ParamGroup pre{{}, lr_pretrained};
    for (auto& nt : backbone_.named_tensors(false)) pre.params.push_back(*nt.tensor);
    ParamGroup fresh{{}, lr_new};
    if (backbone_.num_items() > 0) fresh.params.push_back(backbone_.item_embeddings());
    for (const auto& t : rgcn_.tensors()) fresh.params.push_back(t);
    fresh.params.push_back(attention_.w);
    fresh.params.push_back(attention_.v);
    for (auto& nt : head_.named_tensors()) fresh.params.push_back(*nt.tensor);
    return {pre, fresh};
  }

  std::vector<ad::Tensor> parameters() {
    std::vector<ad::Tensor> out;
    for (auto& [name, list] : sections())
      for (auto& nt : list) out.push_back(*nt.tensor);
    return out;
  }

  // Target items mapped to graph entities; unmapped items are ignored.
  std::vector<int> target_entities(const TrainingExample& ex) const {
    std::vector<int> out;
    for (const auto& item : ex.target_items)
      if (auto e = kg_.entity_for_item(item)) out.push_back(*e);
    return out;
  }

  std::vector<int> history_ids(const PreferenceHistory& h) const { return select_history(h, cfg_.history); }

  std::vector<int> clip_context(const std::vector<int>& tokens) const {
    const auto cap = static_cast<std::size_t>(cfg_.backbone.max_positions);
    if (tokens.size() <= cap) return tokens;
    return std::vector<int>(tokens.end() - static_cast<std::ptrdiff_t>(cap), tokens.end());
  }

  // L = L_gen + gamma * L_rec over a micro-batch, each averaged over the
  // batch's examples. With train_generation off only L_rec is built.
  LossParts loss(const std::vector<const TrainingExample*>& batch, double gamma, bool train_generation = true) const {
    if (batch.empty()) throw Error("loss: empty batch");
    const Variant v = cfg_.variant;
    const bool need_rec = gamma != 0.0;
    const bool need_encoder = train_generation || (need_rec && uses_context(v));
    ad::Tensor table;
    if (need_rec && uses_entity(v)) table = rgcn_forward_tensor(kg_, rgcn_, cfg_.rgcn_layers);
    const std::vector<bool>& mask = kg_.item_mask();
    const std::vector<bool> context_mask = cfg_.mask_context ? mask : std::vector<bool>{};

    std::vector<ad::Tensor> gen_terms, rec_terms;
    LossParts parts;
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    for (const TrainingExample* ex : batch) {
      const std::vector<int> ctx = clip_context(ex->context_tokens);
      ad::Tensor hidden;
      std::vector<bool> keep;
      if (need_encoder) {
        hidden = backbone_.encode(ctx, Vocabulary::kPad);
        keep = keep_mask(ctx, Vocabulary::kPad);
      }
      if (train_generation) {
        std::vector<int> prefix{Vocabulary::kBos};
        const auto max_target = static_cast<std::size_t>(cfg_.backbone.max_positions - 1);
        const auto n = std::min(ex->target_tokens.size(), max_target);
        prefix.insert(prefix.end(), ex->target_tokens.begin(), ex->target_tokens.begin() + static_cast<std::ptrdiff_t>(n));
        std::vector<int> labels(prefix.begin() + 1, prefix.end());
        labels.push_back(Vocabulary::kEos);
        ad::Tensor lp = ad::log_softmax_rows(backbone_.decode(prefix, hidden, keep));
        ad::Tensor nll = ad::scale(ad::sum(ad::pick(lp, labels)), -1.0);
        parts.gen += nll.item() * inv_n;
        parts.gen_tokens += labels.size();
        gen_terms.push_back(nll);
      }
      if (!need_rec) continue;
      const std::vector<int> targets = target_entities(*ex);
      if (targets.empty()) continue;
      if (uses_context(v)) {
        ad::Tensor h = cfg_.stop_gradient_context ? ad::stop_gradient(hidden) : hidden;
        ad::Tensor lp = context_log_probs(h, keep, head_, context_mask);
        rec_terms.push_back(picked_nll(lp, targets, parts.clamped));
      }
      if (uses_entity(v)) {
        const std::vector<int> hist = history_ids(ex->history);
        if (!hist.empty()) {
          ad::Tensor user = v == Variant::kEntitySelfAttention ? self_attention_summary_tensor(table, hist, attention_)
                                                               : time_aware_summary_tensor(table, hist, cfg_.fusion.lambda);
          rec_terms.push_back(picked_nll(entity_log_probs(user, table, mask), targets, parts.clamped));
        }
      }
    }
    std::vector<ad::Tensor> all;
    if (!gen_terms.empty()) all.push_back(ad::scale(ad::add_n(gen_terms), inv_n));
    if (!rec_terms.empty()) {
      ad::Tensor rec = ad::scale(ad::add_n(rec_terms), inv_n);
      parts.rec = rec.item();
      all.push_back(ad::scale(rec, gamma));
    }
    parts.total = all.empty() ? ad::Tensor::scalar(0.0) : ad::add_n(all);
    return parts;
  }

  // ---- inference ----------------------------------------------------------

  // R-GCN output under the current weights; recomputed lazily after updates.
  const EntityEmbeddingTable& entity_table() const {
    if (!table_cache_) table_cache_ = rgcn_forward(kg_, rgcn_, cfg_.rgcn_layers);
    return *table_cache_;
  }
  void invalidate_cache() const { table_cache_.reset(); }

  ContextEncoding encode_context(const std::vector<int>& context_tokens) const {
    const std::vector<int> ctx = clip_context(context_tokens.empty() ? std::vector<int>{Vocabulary::kEot} : context_tokens);
    return encode(backbone_, ctx, Vocabulary::kPad);
  }

  Inference recommend(const ContextEncoding& enc, const PreferenceHistory& history) const {
    return recommend(enc, history, cfg_.fusion);
  }

  Inference recommend(const ContextEncoding& enc, const PreferenceHistory& history, const FusionConfig& fusion) const {
    ad::NoGradGuard guard;
    const Variant v = cfg_.variant;
    const auto& mask = kg_.item_mask();
    Inference out;
    out.history = history_ids(history);
    if (uses_context(v)) out.p_c = context_scores(enc, head_, mask);
    if (uses_entity(v) && !out.history.empty()) {
      const auto& table = entity_table();
      std::optional<ad::Vector> user = v == Variant::kEntitySelfAttention
                                           ? self_attention_summary(out.history, table, attention_)
                                           : time_aware_summary(out.history, table, fusion.lambda);
      out.p_e = entity_scores(*user, table, mask);
    }
    switch (v) {
      case Variant::kContext:
        out.p_rec = *out.p_c;
        out.branch = "context_only";
        break;
      case Variant::kEntitySelfAttention:
      case Variant::kEntityTimeAware:
        out.p_rec = out.p_e ? *out.p_e : uniform_distribution(mask);
        out.branch = out.p_e ? "entity_only" : "uniform";
        break;
      case Variant::kFull:
        out.p_rec = fuse(out.p_e, *out.p_c, fusion);
        if (out.p_e) out.branch = "fused";
        else out.branch = fusion.cold_start_policy == ColdStartPolicy::kContextOnly ? "context_only" : "uniform_entity";
        break;
    }
    return out;
  }

  Inference recommend(const std::vector<int>& context_tokens, const PreferenceHistory& history) const {
    return recommend(encode_context(context_tokens), history);
  }

  DecoderStep step_model(const ContextEncoding& enc) const {
    return DecoderStep(backbone_, ad::Tensor::constant(enc.hidden), enc.keep);
  }

  VocabBias bias_for(const RecommendationDistribution& p_rec) const { return build_bias(p_rec, vocab_, catalog_, kg_); }

  // Best hypothesis tokens (EOS stripped).
  std::vector<int> respond(const ContextEncoding& enc, const RecommendationDistribution* p_rec,
                           const DecodeConfig& dcfg) const {
    const VocabBias bias = p_rec ? bias_for(*p_rec) : VocabBias::zeros(vocab_.size(), vocab_.base_size());
    auto hyps = decode(step_model(enc), bias, dcfg);
    if (hyps.empty()) return {};
    return strip_eos(hyps.front().tokens, dcfg.eos_id);
  }

  // Items ranked by p_rec, as (item id, probability).
  std::vector<std::pair<std::string, double>> ranked_items(const RecommendationDistribution& p, std::size_t k) const {
    std::vector<std::pair<std::string, double>> out;
    for (const auto& r : top_k(p, k))
      if (auto item = kg_.item_for_entity(r.entity)) out.emplace_back(*item, r.probability);
    return out;
  }

 private:
  static ad::Tensor picked_nll(const ad::Tensor& log_probs, const std::vector<int>& targets, std::size_t& clamped) {
    static const double floor = std::log(1e-12);
    std::vector<ad::Tensor> terms;
    for (int t : targets) {
      ad::Tensor lp = ad::pick_entries(log_probs, {t});
      if (lp.item() < floor) {
        ++clamped;
        terms.push_back(ad::Tensor::scalar(-floor));
      } else {
        terms.push_back(ad::scale(lp, -1.0));
      }
    }
    return ad::add_n(terms);
  }

  ModelConfig cfg_;
  KnowledgeGraph kg_;
  ItemCatalog catalog_;
  Vocabulary vocab_;
  AliasIndex aliases_;
  Backbone backbone_;
  RgcnParams rgcn_;
  SelfAttentionParams attention_;
  ContextHeadParams head_;
  mutable std::optional<EntityEmbeddingTable> table_cache_;
};

}  // namespace crs
