// Binary checkpoint: magic, version, then named sections. Metadata sections
// hold JSON, tensor sections hold named column-major double matrices. A
// trailing FNV-1a checksum covers everything before it.

#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "crs/config.hpp"
#include "crs/model.hpp"
#include "crs/training.hpp"

namespace crs {

inline constexpr char kCheckpointMagic[8] = {'C', 'R', 'S', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void raw(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(const std::string& buf, std::size_t begin, std::size_t end) : buf_(buf), pos_(begin), end_(end) {}
  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, sizeof v);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    raw(&v, sizeof v);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void raw(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == end_; }

 private:
  void need(std::size_t n) const {
    if (n > end_ - pos_) throw Error("checkpoint: truncated data");
  }
  const std::string& buf_;
  std::size_t pos_, end_;
};

inline std::uint64_t fnv1a(const char* p, std::size_t n) {
  std::uint64_t h = 1469598103934665603ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(p[i]);
    h *= 1099511628211ULL;
  }
  return h;
}

struct MatrixRecord {
  std::string name;
  ad::Matrix value;
};

inline std::string encode_matrices(const std::vector<MatrixRecord>& ms) {
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(ms.size()));
  for (const auto& m : ms) {
    w.str(m.name);
    w.u64(static_cast<std::uint64_t>(m.value.rows()));
    w.u64(static_cast<std::uint64_t>(m.value.cols()));
    w.raw(m.value.data(), sizeof(double) * static_cast<std::size_t>(m.value.size()));
  }
  return w.bytes();
}

inline std::vector<MatrixRecord> decode_matrices(const std::string& payload) {
  ByteReader r(payload, 0, payload.size());
  std::vector<MatrixRecord> out(r.u32());
  for (auto& m : out) {
    m.name = r.str();
    const auto rows = r.u64(), cols = r.u64();
    if (rows > (1ULL << 32) || cols > (1ULL << 32)) throw Error("checkpoint: bad tensor shape for " + m.name);
    m.value.resize(static_cast<ad::Index>(rows), static_cast<ad::Index>(cols));
    r.raw(m.value.data(), sizeof(double) * static_cast<std::size_t>(m.value.size()));
  }
  if (!r.done()) throw Error("checkpoint: trailing bytes in tensor section");
  return out;
}

inline nlohmann::json kg_to_json(const KnowledgeGraph& kg) {
  nlohmann::json triples = nlohmann::json::array();
  for (const auto& t : kg.triples())
    triples.push_back({kg.entity_name(t.head), kg.relation_name(t.relation), kg.entity_name(t.tail)});
  return {{"inverse_relations", kg.inverse_relations()}, {"triples", triples}};
}

// Replaying the stored triples in order with the same catalog reproduces the
// entity numbering exactly.
inline KnowledgeGraph kg_from_json(const nlohmann::json& j, const ItemCatalog& catalog) {
  std::vector<KnowledgeGraph::RawTriple> raw;
  for (const auto& t : j.at("triples")) raw.emplace_back(t.at(0), t.at(1), t.at(2));
  return KnowledgeGraph::from_triples(raw, &catalog, j.at("inverse_relations").get<bool>());
}

inline nlohmann::json catalog_to_json(const ItemCatalog& c) {
  nlohmann::json items = nlohmann::json::array();
  for (const auto& [id, name] : c.items) {
    nlohmann::json row{id, name};
    if (auto e = c.entity_of(id)) row.push_back(*e);
    items.push_back(row);
  }
  return items;
}

inline ItemCatalog catalog_from_json(const nlohmann::json& j) {
  ItemCatalog c;
  for (const auto& row : j) {
    const std::string id = row.at(0);
    c.items[id] = row.at(1).get<std::string>();
    if (row.size() > 2) c.item_to_entity[id] = row.at(2).get<std::string>();
  }
  return c;
}

inline nlohmann::json aliases_to_json(const AliasIndex& a, const KnowledgeGraph& kg) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& [key, ents] : a.entries())
    for (int e : ents) out.push_back({key, kg.entity_name(e)});
  return out;
}

inline AliasIndex aliases_from_json(const nlohmann::json& j, const KnowledgeGraph& kg) {
  AliasIndex a;
  for (const auto& row : j) {
    auto e = kg.entity_id(row.at(1).get<std::string>());
    if (!e) throw Error("checkpoint: alias refers to an unknown entity");
    a.add(row.at(0).get<std::string>(), *e);
  }
  return a;
}

}  // namespace detail

struct LoadedCheckpoint {
  RunConfig config;
  std::unique_ptr<CrsModel> model;
  std::int64_t updates = 0;
  int epochs = 0;
  std::vector<detail::MatrixRecord> optimizer_state;  // empty when saved without a trainer
};

inline void save_checkpoint(const std::string& path, RunConfig config, CrsModel& model,
                            Trainer* trainer = nullptr) {
  std::map<std::string, std::string> sections;
  config.model = model.config();
  sections["config"] = config.to_text();
  sections["vocab"] =
      nlohmann::json{{"base", model.vocab().base_tokens()}, {"items", model.vocab().item_ids()}}.dump();
  sections["catalog"] = detail::catalog_to_json(model.catalog()).dump();
  sections["kg"] = detail::kg_to_json(model.kg()).dump();
  sections["aliases"] = detail::aliases_to_json(model.aliases(), model.kg()).dump();
  for (auto& [name, list] : model.sections()) {
    std::vector<detail::MatrixRecord> ms;
    for (const auto& nt : list) ms.push_back({nt.name, nt.tensor->value()});
    sections[name] = detail::encode_matrices(ms);
  }
  nlohmann::json progress{{"updates", 0}, {"epochs", 0}};
  if (trainer) {
    progress = {{"updates", trainer->optimizer().steps()}, {"epochs", trainer->epochs_done()}};
    std::vector<detail::MatrixRecord> ms;
    const auto& st = trainer->optimizer().state();
    for (std::size_t g = 0; g < st.size(); ++g)
      for (std::size_t p = 0; p < st[g].size(); ++p) {
        const std::string key = std::to_string(g) + "." + std::to_string(p);
        ms.push_back({key + ".m", st[g][p].m});
        ms.push_back({key + ".v", st[g][p].v});
      }
    sections["optimizer"] = detail::encode_matrices(ms);
  }
  sections["trainer"] = progress.dump();

  detail::ByteWriter w;
  w.raw(kCheckpointMagic, sizeof kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(sections.size()));
  for (const auto& [name, payload] : sections) {
    w.str(name);
    w.u64(payload.size());
    w.raw(payload.data(), payload.size());
  }
  const std::uint64_t sum = detail::fnv1a(w.bytes().data(), w.bytes().size());
  w.u64(sum);

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint: " + tmp);
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw Error("failed writing checkpoint: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint: " + path);
  const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < sizeof kCheckpointMagic + 16 || std::memcmp(buf.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0) {
    throw Error("not a checkpoint file: " + path);
  }
  std::uint64_t stored;
  std::memcpy(&stored, buf.data() + buf.size() - sizeof stored, sizeof stored);
  if (stored != detail::fnv1a(buf.data(), buf.size() - sizeof stored)) throw Error("checkpoint checksum mismatch: " + path);

  detail::ByteReader r(buf, sizeof kCheckpointMagic, buf.size() - sizeof stored);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw Error("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                std::to_string(kCheckpointVersion) + ")");
  }
  std::map<std::string, std::string> sections;
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = r.str();
    const std::uint64_t size = r.u64();
    std::string payload(size, '\0');
    r.raw(payload.data(), size);
    sections[name] = std::move(payload);
  }
  auto section = [&](const std::string& name) -> const std::string& {
    auto it = sections.find(name);
    if (it == sections.end()) throw Error("checkpoint missing section: " + name);
    return it->second;
  };

  LoadedCheckpoint out;
  out.config.load_text(section("config"));
  const auto vj = nlohmann::json::parse(section("vocab"));
  Vocabulary vocab = Vocabulary::from_tokens(vj.at("base").get<std::vector<std::string>>(),
                                             vj.at("items").get<std::vector<std::string>>());
  ItemCatalog catalog = detail::catalog_from_json(nlohmann::json::parse(section("catalog")));
  KnowledgeGraph kg = detail::kg_from_json(nlohmann::json::parse(section("kg")), catalog);
  AliasIndex aliases = detail::aliases_from_json(nlohmann::json::parse(section("aliases")), kg);
  out.model = std::make_unique<CrsModel>(out.config.model, std::move(kg), std::move(catalog), std::move(vocab),
                                         std::move(aliases));

  for (auto& [name, list] : out.model->sections()) {
    std::map<std::string, ad::Matrix> stored_tensors;
    for (auto& m : detail::decode_matrices(section(name))) stored_tensors[m.name] = std::move(m.value);
    if (stored_tensors.size() != list.size()) throw Error("checkpoint section " + name + ": tensor count mismatch");
    for (auto& nt : list) {
      auto it = stored_tensors.find(nt.name);
      if (it == stored_tensors.end()) throw Error("checkpoint section " + name + ": missing tensor " + nt.name);
      if (it->second.rows() != nt.tensor->rows() || it->second.cols() != nt.tensor->cols()) {
        throw Error("checkpoint section " + name + ": shape mismatch for " + nt.name);
      }
      nt.tensor->mutable_value() = it->second;
    }
  }
  out.model->invalidate_cache();

  const auto progress = nlohmann::json::parse(section("trainer"));
  out.updates = progress.at("updates").get<std::int64_t>();
  out.epochs = progress.at("epochs").get<int>();
  if (sections.count("optimizer")) out.optimizer_state = detail::decode_matrices(sections["optimizer"]);
  return out;
}

// Restores Adam moments and progress counters into a trainer built over the
// loaded model.
inline void restore_training_state(const LoadedCheckpoint& ck, Trainer& trainer) {
  auto& st = trainer.optimizer().state();
  std::map<std::string, const ad::Matrix*> byname;
  for (const auto& m : ck.optimizer_state) byname[m.name] = &m.value;
  if (!ck.optimizer_state.empty()) {
    for (std::size_t g = 0; g < st.size(); ++g)
      for (std::size_t p = 0; p < st[g].size(); ++p) {
        const std::string key = std::to_string(g) + "." + std::to_string(p);
        auto m = byname.find(key + ".m"), v = byname.find(key + ".v");
        if (m == byname.end() || v == byname.end()) throw Error("checkpoint: optimizer state does not match the model");
        if (m->second->rows() != st[g][p].m.rows() || m->second->cols() != st[g][p].m.cols()) {
          throw Error("checkpoint: optimizer state shape mismatch");
        }
        st[g][p].m = *m->second;
        st[g][p].v = *v->second;
      }
  }
  trainer.optimizer().set_steps(ck.updates);
  trainer.set_epochs_done(ck.epochs);
}

}  // namespace crs
