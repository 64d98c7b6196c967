// Run configuration: every module config plus dataset paths, loadable from a
// plain `key = value` file. Unknown keys are rejected.

#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "crs/generator.hpp"
#include "crs/model.hpp"
#include "crs/pipeline.hpp"
#include "crs/training.hpp"

namespace crs {

struct RunConfig {
  DataPaths data;
  std::size_t max_context_len = 256;
  int min_count = 1;
  ModelConfig model;
  TrainConfig train;
  DecodeConfig decode;
  bool exclude_seen = false;

  RunConfig() { decode.max_new_tokens = 40; }

  // Small backbone and schedule used for desk-scale runs and tests.
  static RunConfig desk() {
    RunConfig c;
    c.max_context_len = 128;
    c.model.backbone = {32, 2, 64, 1, 1, 256};
    c.model.entity_dim = 32;
    c.train.lr_pretrained = c.train.lr_new;
    c.train.warmup_updates = 20;
    c.train.max_tokens_per_batch = 256;
    c.train.update_frequency = 1;
    c.train.epochs = 30;
    return c;
  }

  void set(const std::string& key, const std::string& value) {
    auto& f = fields();
    auto it = f.find(key);
    if (it == f.end()) throw Error("unknown config key: " + key);
    try {
      it->second.set(value);
    } catch (const Error&) {
      throw;
    } catch (const std::exception&) {
      throw Error("bad value for " + key + ": '" + value + "'");
    }
  }

  std::string get(const std::string& key) {
    auto& f = fields();
    auto it = f.find(key);
    if (it == f.end()) throw Error("unknown config key: " + key);
    return it->second.get();
  }

  void load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config: " + path);
    load_stream(in, path);
  }

  void load_text(const std::string& text) {
    std::istringstream in(text);
    load_stream(in, "<text>");
  }

  // Effective configuration as `key = value` lines, sorted by key.
  std::string to_text() {
    std::ostringstream out;
    for (auto& [key, field] : fields()) out << key << " = " << field.get() << '\n';
    return out.str();
  }

  void validate() const {
    model.validate();
    train.validate();
    decode.validate();
    if (max_context_len < 1) throw Error("data.max_context_len must be >= 1");
    if (static_cast<int>(max_context_len) > model.backbone.max_positions) {
      throw Error("data.max_context_len exceeds model.max_positions");
    }
  }

  // Relative data paths are taken against $CRS_DATA_DIR when it is set.
  void resolve_paths() {
    const char* root = std::getenv("CRS_DATA_DIR");
    if (!root || !*root) return;
    for (std::string* p : {&data.dialogues, &data.triples, &data.aliases, &data.catalog}) {
      if (!p->empty() && std::filesystem::path(*p).is_relative()) *p = (std::filesystem::path(root) / *p).string();
    }
  }

 private:
  struct Field {
    std::function<void(const std::string&)> set;
    std::function<std::string()> get;
  };

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  void load_stream(std::istream& in, const std::string& origin) {
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos) throw Error(origin + ":" + std::to_string(lineno) + ": expected key = value");
      try {
        set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
      } catch (const Error& e) {
        throw Error(origin + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
  }

  static std::string fmt(double v) {
    std::ostringstream o;
    o << v;
    return o.str();
  }

  static bool parse_bool(const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw Error("expected a boolean, got '" + v + "'");
  }

  template <typename T>
  static Field integer(T& ref) {
    return {[&ref](const std::string& v) {
              std::size_t pos = 0;
              const long long x = std::stoll(v, &pos);
              if (pos != v.size()) throw Error("expected an integer, got '" + v + "'");
              ref = static_cast<T>(x);
            },
            [&ref] { return std::to_string(ref); }};
  }

  static Field real(double& ref) {
    return {[&ref](const std::string& v) {
              std::size_t pos = 0;
              ref = std::stod(v, &pos);
              if (pos != v.size()) throw Error("expected a number, got '" + v + "'");
            },
            [&ref] { return fmt(ref); }};
  }

  static Field boolean(bool& ref) {
    return {[&ref](const std::string& v) { ref = parse_bool(v); }, [&ref] { return std::string(ref ? "true" : "false"); }};
  }

  static Field text(std::string& ref) {
    return {[&ref](const std::string& v) { ref = v; }, [&ref] { return ref; }};
  }

  std::map<std::string, Field>& fields() {
    if (!fields_.empty()) return fields_;
    auto& f = fields_;
    f["data.dataset"] = {[this](const std::string& v) { data.kind = dataset_from_string(v); },
                         [this] { return to_string(data.kind); }};
    f["data.dialogues"] = text(data.dialogues);
    f["data.triples"] = text(data.triples);
    f["data.aliases"] = text(data.aliases);
    f["data.catalog"] = text(data.catalog);
    f["data.max_context_len"] = integer(max_context_len);
    f["data.min_count"] = integer(min_count);

    f["model.variant"] = {[this](const std::string& v) { model.variant = variant_from_string(v); },
                          [this] { return to_string(model.variant); }};
    f["model.d_model"] = integer(model.backbone.d_model);
    f["model.heads"] = integer(model.backbone.heads);
    f["model.ffn"] = integer(model.backbone.ffn);
    f["model.encoder_layers"] = integer(model.backbone.encoder_layers);
    f["model.decoder_layers"] = integer(model.backbone.decoder_layers);
    f["model.max_positions"] = integer(model.backbone.max_positions);
    f["model.entity_dim"] = integer(model.entity_dim);
    f["model.rgcn_layers"] = integer(model.rgcn_layers);
    f["model.rgcn_bases"] = integer(model.rgcn_bases);
    f["model.head_hidden"] = integer(model.head_hidden);
    f["model.mask_context"] = boolean(model.mask_context);
    f["model.stop_gradient_context"] = boolean(model.stop_gradient_context);
    f["model.text_entities"] = boolean(model.history.include_text_entities);
    f["model.dedup_history"] = boolean(model.history.dedup);
    f["model.seed"] = integer(model.seed);

    f["fusion.lambda"] = real(model.fusion.lambda);
    f["fusion.mu"] = real(model.fusion.mu);
    f["fusion.cold_start"] = {[this](const std::string& v) {
                                if (v == "context_only") model.fusion.cold_start_policy = ColdStartPolicy::kContextOnly;
                                else if (v == "uniform_entity") model.fusion.cold_start_policy = ColdStartPolicy::kUniformEntity;
                                else throw Error("fusion.cold_start must be context_only or uniform_entity");
                              },
                              [this] {
                                return std::string(model.fusion.cold_start_policy == ColdStartPolicy::kContextOnly
                                                       ? "context_only"
                                                       : "uniform_entity");
                              }};

    f["train.gamma"] = real(train.gamma);
    f["train.lr_new"] = real(train.lr_new);
    f["train.lr_pretrained"] = real(train.lr_pretrained);
    f["train.beta1"] = real(train.beta1);
    f["train.beta2"] = real(train.beta2);
    f["train.warmup_updates"] = integer(train.warmup_updates);
    f["train.total_updates"] = integer(train.total_updates);
    f["train.decay_power"] = real(train.decay_power);
    f["train.max_tokens"] = integer(train.max_tokens_per_batch);
    f["train.update_frequency"] = integer(train.update_frequency);
    f["train.epochs"] = integer(train.epochs);
    f["train.seed"] = integer(train.seed);
    f["train.generation"] = boolean(train.train_generation);
    f["train.select_k"] = integer(train.select_k);

    f["decode.strategy"] = {[this](const std::string& v) {
                              if (v == "greedy") decode.strategy = DecodeStrategy::kGreedy;
                              else if (v == "beam") decode.strategy = DecodeStrategy::kBeam;
                              else if (v == "diverse_beam") decode.strategy = DecodeStrategy::kDiverseBeam;
                              else throw Error("decode.strategy must be greedy, beam or diverse_beam");
                            },
                            [this] {
                              switch (decode.strategy) {
                                case DecodeStrategy::kGreedy: return std::string("greedy");
                                case DecodeStrategy::kBeam: return std::string("beam");
                                default: return std::string("diverse_beam");
                              }
                            }};
    f["decode.beam"] = integer(decode.beam_size);
    f["decode.groups"] = integer(decode.groups);
    f["decode.length_penalty"] = real(decode.length_penalty);
    f["decode.max_new_tokens"] = integer(decode.max_new_tokens);
    f["decode.bias_trigger_k"] = integer(decode.bias_trigger_k);
    f["decode.diversity_strength"] = real(decode.diversity_strength);
    f["decode.bias_mode"] = {[this](const std::string& v) {
                               if (v == "probability") decode.bias_mode = BiasMode::kProbability;
                               else if (v == "probability_raw") decode.bias_mode = BiasMode::kProbabilityRaw;
                               else if (v == "log") decode.bias_mode = BiasMode::kLogDomain;
                               else throw Error("decode.bias_mode must be probability, probability_raw or log");
                             },
                             [this] {
                               switch (decode.bias_mode) {
                                 case BiasMode::kProbability: return std::string("probability");
                                 case BiasMode::kProbabilityRaw: return std::string("probability_raw");
                                 default: return std::string("log");
                               }
                             }};
    f["eval.exclude_seen"] = boolean(exclude_seen);
    return f;
  }

  std::map<std::string, Field> fields_;

 public:
  RunConfig(const RunConfig& o)
      : data(o.data),
        max_context_len(o.max_context_len),
        min_count(o.min_count),
        model(o.model),
        train(o.train),
        decode(o.decode),
        exclude_seen(o.exclude_seen) {}
  RunConfig& operator=(const RunConfig& o) {
    data = o.data;
    max_context_len = o.max_context_len;
    min_count = o.min_count;
    model = o.model;
    train = o.train;
    decode = o.decode;
    exclude_seen = o.exclude_seen;
    fields_.clear();
    return *this;
  }
};

}  // namespace crs
