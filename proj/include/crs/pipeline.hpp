// Dataset assembly and model evaluation over a prepared dataset.

#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "crs/corpus.hpp"
#include "crs/evaluation.hpp"
#include "crs/kg.hpp"
#include "crs/model.hpp"
#include "crs/training.hpp"

namespace crs {

enum class DatasetKind { kRedial, kOpenDialKG, kCanonical };

inline DatasetKind dataset_from_string(const std::string& s) {
  if (s == "redial") return DatasetKind::kRedial;
  if (s == "opendialkg") return DatasetKind::kOpenDialKG;
  if (s == "canonical") return DatasetKind::kCanonical;
  throw Error("unknown dataset '" + s + "' (expected redial, opendialkg, canonical)");
}

inline std::string to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::kRedial: return "redial";
    case DatasetKind::kOpenDialKG: return "opendialkg";
    case DatasetKind::kCanonical: return "canonical";
  }
  return "redial";
}

// Recall cutoffs reported per dataset.
inline std::vector<std::size_t> recall_cutoffs(DatasetKind k) {
  if (k == DatasetKind::kOpenDialKG) return {1, 3, 5, 10, 25};
  return {1, 10, 50};
}

struct DataPaths {
  DatasetKind kind = DatasetKind::kRedial;
  std::string dialogues;
  std::string triples;
  std::string aliases;  // optional
  std::string catalog;  // optional for ReDial / OpenDialKG
};

struct Dataset {
  std::vector<Conversation> conversations;
  ItemCatalog catalog;
  KnowledgeGraph kg;
  AliasIndex aliases;
  Vocabulary vocab;
  std::vector<TrainingExample> train, valid, test;
  LoadStats stats;
};

inline std::vector<TrainingExample> examples_of(const std::vector<TrainingExample>& all, Split s) {
  std::vector<TrainingExample> out;
  for (const auto& ex : all)
    if (ex.split == s) out.push_back(ex);
  return out;
}

// With `model` set, its vocabulary, graph and alias index are used instead of
// being rebuilt, so examples match a trained checkpoint.
inline Dataset load_dataset(const DataPaths& paths, std::size_t max_context_len, int min_count = 1,
                            const CrsModel* model = nullptr) {
  Dataset d;
  if (!paths.catalog.empty()) d.catalog = load_catalog(paths.catalog);
  switch (paths.kind) {
    case DatasetKind::kRedial:
      d.conversations = load_redial(paths.dialogues, &d.catalog, &d.stats);
      break;
    case DatasetKind::kOpenDialKG:
      d.conversations = load_opendialkg(paths.dialogues, &d.catalog, &d.stats);
      break;
    case DatasetKind::kCanonical:
      d.conversations = load_canonical(paths.dialogues);
      if (paths.catalog.empty()) throw Error("canonical dataset needs a catalog file");
      break;
  }
  if (d.conversations.empty()) throw Error("dataset is empty: " + paths.dialogues);
  if (model) {
    d.catalog = model->catalog();
    d.kg = model->kg();
    d.aliases = model->aliases();
    d.vocab = model->vocab();
  } else {
    if (paths.triples.empty()) throw Error("a knowledge graph triples file is required");
    d.kg = load_triples(paths.triples, &d.catalog);
    if (d.kg.num_items() == 0) throw Error("no catalog item is linked to a graph entity");
    if (!paths.aliases.empty()) {
      std::size_t skipped = 0;
      d.aliases = load_aliases(paths.aliases, d.kg, &skipped);
      if (skipped > 0) std::cerr << "warning: " << skipped << " alias line(s) skipped\n";
    }
  }
  if (!d.aliases.empty()) annotate_entities(d.conversations, d.kg, d.aliases);
  if (!model) {
    d.vocab = Vocabulary::build(d.conversations, min_count);
    d.vocab.extend_with_items(d.catalog);
  }
  tokenize_conversations(d.conversations, d.vocab);
  auto all = build_examples(d.conversations, d.catalog, d.vocab, max_context_len, &d.kg);
  d.train = examples_of(all, Split::kTrain);
  d.valid = examples_of(all, Split::kValid);
  d.test = examples_of(all, Split::kTest);
  return d;
}

// Alias TSV in the loader's format: normalized surface form, entity identifier.
inline void save_aliases(const std::string& path, const AliasIndex& aliases, const KnowledgeGraph& kg) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  for (const auto& [surface, ents] : aliases.entries())
    for (int e : ents) out << surface << '\t' << kg.entity_name(e) << '\n';
}

struct EvalOptions {
  std::vector<std::size_t> cutoffs{1, 10, 50};
  std::size_t bucket_k = 50;
  bool exclude_seen = false;
  bool generate = false;
  bool use_bias = true;
  DecodeConfig decode;
  std::size_t max_generate = 0;  // 0: all examples
  std::string outputs_path;      // optional interchange file
};

// Recommendation metrics, the cold-start table, and (optionally) generation
// metrics. PPL uses an order-4 model trained on the training responses.
inline MetricsReport evaluate_model(const CrsModel& model, const std::vector<TrainingExample>& train,
                                    const std::vector<TrainingExample>& examples, const EvalOptions& opts,
                                    const FusionConfig* fusion = nullptr) {
  MetricsReport report;
  std::size_t depth = opts.bucket_k;
  for (auto k : opts.cutoffs) depth = std::max(depth, k);
  const auto inst = recommendation_instances(model, examples, depth, opts.exclude_seen, fusion);
  report["rec.instances"] = static_cast<double>(inst.size());
  if (!inst.empty()) {
    for (auto k : opts.cutoffs) report["recall@" + std::to_string(k)] = recall_at_k(inst, k);
    for (const auto& [bucket, br] : recall_by_history_length(inst, opts.bucket_k)) {
      const std::string key = "cold_start.recall@" + std::to_string(opts.bucket_k) + ".items_" +
                              (bucket >= 10 ? std::string("10+") : std::to_string(bucket));
      report[key] = br.recall;
      report[key + ".count"] = static_cast<double>(br.count);
    }
  }
  if (!opts.generate) return report;

  const Vocabulary& vocab = model.vocab();
  auto words = [&](const std::vector<int>& ids) {
    Tokens out;
    for (int t : ids) out.push_back(vocab.token(t));
    return out;
  };
  std::vector<Tokens> hyps;
  std::vector<GenPair> pairs;
  std::ofstream outputs;
  if (!opts.outputs_path.empty()) {
    outputs.open(opts.outputs_path, std::ios::binary);
    if (!outputs) throw Error("cannot write " + opts.outputs_path);
  }
  std::size_t n = 0;
  for (const auto& ex : examples) {
    if (opts.max_generate && n >= opts.max_generate) break;
    ++n;
    const ContextEncoding enc = model.encode_context(ex.context_tokens);
    const Inference inf = model.recommend(enc, ex.history, fusion ? *fusion : model.config().fusion);
    const std::vector<int> out = model.respond(enc, opts.use_bias ? &inf.p_rec : nullptr, opts.decode);
    hyps.push_back(words(out));
    pairs.push_back({hyps.back(), words(ex.target_tokens)});
    if (outputs) {
      nlohmann::json ranked = nlohmann::json::array();
      for (const auto& [item, p] : model.ranked_items(inf.p_rec, 10)) ranked.push_back(item);
      nlohmann::json rec{{"context_id", ex.conversation_id + ":" + std::to_string(ex.turn)},
                         {"generated_text", detokenize(out, vocab, &model.catalog())},
                         {"ranked_items", ranked}};
      outputs << rec.dump() << '\n';
    }
  }
  if (hyps.empty()) return report;
  for (std::size_t k : {2, 3, 4}) report["dist-" + std::to_string(k)] = dist_n(hyps, k);
  for (std::size_t k : {2, 4}) report["bleu-" + std::to_string(k)] = bleu_n(pairs, k);
  std::vector<Tokens> lm_corpus;
  for (const auto& ex : train) lm_corpus.push_back(lowercase(words(ex.target_tokens)));
  if (!lm_corpus.empty()) {
    KneserNeyLM lm(4);
    lm.train(lm_corpus);
    report["ppl"] = ngram_ppl(hyps, lm);
  }
  return report;
}

}  // namespace crs
