// Small synthetic datasets and desk-scale models for tests.

#pragma once

#include <memory>
#include <string>

#include "crs/config.hpp"
#include "crs/model.hpp"
#include "crs/pipeline.hpp"
#include "crs/synthetic.hpp"

namespace fixtures {

inline crs::RunConfig tiny_config(const crs::SynthPaths& paths) {
  crs::RunConfig c = crs::RunConfig::desk();
  c.data.kind = crs::DatasetKind::kRedial;
  c.data.dialogues = paths.dialogues;
  c.data.triples = paths.triples;
  c.data.aliases = paths.aliases;
  c.data.catalog = paths.catalog;
  c.model.backbone = {16, 2, 32, 1, 1, 128};
  c.model.entity_dim = 16;
  c.decode.max_new_tokens = 12;
  c.train.epochs = 2;
  return c;
}

inline crs::SynthPaths synth(const std::string& dir, int conversations = 40, std::uint64_t seed = 7) {
  crs::SynthConfig sc;
  sc.conversations = conversations;
  sc.seed = seed;
  return crs::generate_synthetic(dir, sc);
}

inline std::unique_ptr<crs::CrsModel> make_model(const crs::RunConfig& c, const crs::Dataset& d) {
  return std::make_unique<crs::CrsModel>(c.model, d.kg, d.catalog, d.vocab, d.aliases);
}

}  // namespace fixtures
