// Relational knowledge graph subset, per-relation adjacency and alias-based
// entity linking.

#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "crs/tensor.hpp"
#include "crs/types.hpp"

namespace crs {

struct Triple {
  int head = 0;
  int relation = 0;
  int tail = 0;
  auto operator<=>(const Triple&) const = default;
};

// Entities, relations and triples with dense ids. A triple <h, r, t> sends
// h's state into t under r. When inverse relations are enabled, relation
// r + num_base_relations() carries t's state into h. The self-loop relation
// has id num_relations() and no explicit triples.
class KnowledgeGraph {
 public:
  using RawTriple = std::tuple<std::string, std::string, std::string>;

  static KnowledgeGraph from_triples(const std::vector<RawTriple>& raw, const ItemCatalog* catalog = nullptr,
                                     bool inverse_relations = true) {
    KnowledgeGraph kg;
    kg.inverse_ = inverse_relations;
    std::set<Triple> seen;
    for (const auto& [h, r, t] : raw) {
      Triple tr{kg.intern_entity(h), kg.intern_relation(r), kg.intern_entity(t)};
      if (seen.insert(tr).second) kg.triples_.push_back(tr);
    }
    if (catalog != nullptr) {
      catalog->validate();
      for (const auto& [item, entity] : catalog->item_to_entity) {
        int e = kg.intern_entity(entity);
        kg.entity_item_[e] = item;
        kg.item_entity_[item] = e;
      }
    }
    kg.finalize();
    return kg;
  }

  int num_entities() const { return static_cast<int>(entities_.size()); }
  int num_base_relations() const { return static_cast<int>(relations_.size()); }
  // |R| including inverse relations; excludes the self loop.
  int num_relations() const { return inverse_ ? 2 * num_base_relations() : num_base_relations(); }
  int self_loop_relation() const { return num_relations(); }
  // |R'| = |R| + 1.
  int num_relations_with_self() const { return num_relations() + 1; }
  bool inverse_relations() const { return inverse_; }

  const std::string& entity_name(int e) const { return entities_.at(static_cast<std::size_t>(e)); }

  std::optional<int> entity_id(const std::string& name) const {
    auto it = entity_index_.find(name);
    if (it == entity_index_.end()) return std::nullopt;
    return it->second;
  }

  std::string relation_name(int r) const {
    if (r == self_loop_relation()) return "<self>";
    if (r >= num_base_relations()) return relations_.at(static_cast<std::size_t>(r - num_base_relations())) + "^-1";
    return relations_.at(static_cast<std::size_t>(r));
  }

  const std::vector<Triple>& triples() const { return triples_; }

  // Entities whose state flows into e under relation r.
  const std::vector<int>& neighbors(int e, int r) const {
    static const std::vector<int> empty;
    if (r == self_loop_relation()) return empty;
    return in_neighbors_.at(static_cast<std::size_t>(r)).at(static_cast<std::size_t>(e));
  }

  // Row e, column e' is 1 iff e' is a neighbor of e under r.
  std::shared_ptr<const ad::SparseMatrix> adjacency(int r) const {
    return adjacency_.at(static_cast<std::size_t>(r));
  }

  const std::vector<bool>& item_mask() const { return item_mask_; }

  std::optional<int> entity_for_item(const std::string& item) const {
    auto it = item_entity_.find(item);
    if (it == item_entity_.end()) return std::nullopt;
    return it->second;
  }

  std::optional<std::string> item_for_entity(int e) const {
    auto it = entity_item_.find(e);
    if (it == entity_item_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t num_items() const { return item_entity_.size(); }

 private:
  int intern_entity(const std::string& name) {
    auto [it, fresh] = entity_index_.emplace(name, static_cast<int>(entities_.size()));
    if (fresh) entities_.push_back(name);
    return it->second;
  }

  int intern_relation(const std::string& name) {
    auto [it, fresh] = relation_index_.emplace(name, static_cast<int>(relations_.size()));
    if (fresh) relations_.push_back(name);
    return it->second;
  }

  void finalize() {
    const auto n = static_cast<std::size_t>(num_entities());
    in_neighbors_.assign(static_cast<std::size_t>(num_relations()), std::vector<std::vector<int>>(n));
    for (const auto& t : triples_) {
      in_neighbors_[static_cast<std::size_t>(t.relation)][static_cast<std::size_t>(t.tail)].push_back(t.head);
      if (inverse_) {
        in_neighbors_[static_cast<std::size_t>(t.relation + num_base_relations())][static_cast<std::size_t>(t.head)]
            .push_back(t.tail);
      }
    }
    adjacency_.clear();
    for (int r = 0; r < num_relations(); ++r) {
      std::vector<Eigen::Triplet<double>> entries;
      for (std::size_t e = 0; e < n; ++e)
        for (int src : in_neighbors_[static_cast<std::size_t>(r)][e])
          entries.emplace_back(static_cast<int>(e), src, 1.0);
      auto A = std::make_shared<ad::SparseMatrix>(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
      A->setFromTriplets(entries.begin(), entries.end());
      adjacency_.push_back(std::move(A));
    }
    // Self loop: identity.
    auto I = std::make_shared<ad::SparseMatrix>(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    I->setIdentity();
    adjacency_.push_back(std::move(I));

    item_mask_.assign(n, false);
    for (const auto& [e, item] : entity_item_) item_mask_[static_cast<std::size_t>(e)] = true;
  }

  bool inverse_ = true;
  std::vector<std::string> entities_;
  std::unordered_map<std::string, int> entity_index_;
  std::vector<std::string> relations_;
  std::unordered_map<std::string, int> relation_index_;
  std::vector<Triple> triples_;
  std::vector<std::vector<std::vector<int>>> in_neighbors_;
  std::vector<std::shared_ptr<const ad::SparseMatrix>> adjacency_;
  std::vector<bool> item_mask_;
  std::map<int, std::string> entity_item_;
  std::map<std::string, int> item_entity_;
};

// Tab-separated <head, relation, tail> lines. Blank lines and lines starting
// with '#' are ignored; duplicate triples are dropped.
inline KnowledgeGraph load_triples(const std::string& path, const ItemCatalog* catalog = nullptr,
                                   bool inverse_relations = true) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open triple file: " + path);
  std::vector<KnowledgeGraph::RawTriple> raw;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto t1 = line.find('\t');
    auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t2 == std::string::npos || line.find('\t', t2 + 1) != std::string::npos) {
      throw Error(path + ":" + std::to_string(lineno) + ": expected 3 tab-separated fields");
    }
    raw.emplace_back(line.substr(0, t1), line.substr(t1 + 1, t2 - t1 - 1), line.substr(t2 + 1));
  }
  return KnowledgeGraph::from_triples(raw, catalog, inverse_relations);
}

inline void save_triples(const std::string& path, const KnowledgeGraph& kg) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write triple file: " + path);
  for (const auto& t : kg.triples()) {
    out << kg.entity_name(t.head) << '\t' << kg.relation_name(t.relation) << '\t' << kg.entity_name(t.tail) << '\n';
  }
}

// ---- alias index and linking ----------------------------------------------

struct LinkedSpan {
  int entity = 0;
  Span span;
  friend bool operator==(const LinkedSpan&, const LinkedSpan&) = default;
};

namespace detail {

inline bool is_word_byte(unsigned char c) { return std::isalnum(c) != 0 || c >= 0x80; }

struct Word {
  std::string text;  // lowercased
  Span span;
};

// Splits text into lowercased alphanumeric runs; everything else separates.
inline std::vector<Word> split_words(std::string_view text) {
  std::vector<Word> words;
  std::size_t i = 0;
  while (i < text.size()) {
    if (!is_word_byte(static_cast<unsigned char>(text[i]))) {
      ++i;
      continue;
    }
    std::size_t j = i;
    std::string w;
    while (j < text.size() && is_word_byte(static_cast<unsigned char>(text[j]))) {
      w.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(text[j]))));
      ++j;
    }
    words.push_back({std::move(w), {i, j}});
    i = j;
  }
  return words;
}

}  // namespace detail

// Normalized surface form -> candidate entity ids. Normalization lowercases
// and folds punctuation and whitespace runs into single spaces.
class AliasIndex {
 public:
  static std::string normalize(std::string_view surface) {
    std::string out;
    for (const auto& w : detail::split_words(surface)) {
      if (!out.empty()) out.push_back(' ');
      out += w.text;
    }
    return out;
  }

  void add(std::string_view surface, int entity) {
    std::string key = normalize(surface);
    if (key.empty()) return;
    auto& cands = index_[key];
    auto it = std::lower_bound(cands.begin(), cands.end(), entity);
    if (it == cands.end() || *it != entity) cands.insert(it, entity);
    max_words_ = std::max(max_words_, static_cast<std::size_t>(std::count(key.begin(), key.end(), ' ') + 1));
  }

  // Sorted candidate ids, or nullptr.
  const std::vector<int>* lookup(const std::string& normalized) const {
    auto it = index_.find(normalized);
    return it == index_.end() ? nullptr : &it->second;
  }

  std::size_t max_words() const { return max_words_; }
  std::size_t size() const { return index_.size(); }
  bool empty() const { return index_.empty(); }

  const std::map<std::string, std::vector<int>>& entries() const { return index_; }

 private:
  std::map<std::string, std::vector<int>> index_;
  std::size_t max_words_ = 0;
};

// TSV <surface form, entity identifier>. Entities absent from the graph are
// skipped and counted.
inline AliasIndex load_aliases(const std::string& path, const KnowledgeGraph& kg, std::size_t* skipped = nullptr) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open alias file: " + path);
  AliasIndex index;
  std::string line;
  std::size_t missing = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) {
      ++missing;
      continue;
    }
    auto e = kg.entity_id(line.substr(tab + 1));
    if (!e) {
      ++missing;
      continue;
    }
    index.add(line.substr(0, tab), *e);
  }
  if (skipped) *skipped = missing;
  return index;
}

// Longest match first over word-aligned spans; overlapping shorter matches
// are dropped. Ties go to the earliest start, then the smallest entity id.
// Result is ordered by span start.
inline std::vector<LinkedSpan> link_entities(std::string_view text, const AliasIndex& index) {
  const auto words = detail::split_words(text);
  std::vector<LinkedSpan> candidates;
  for (std::size_t i = 0; i < words.size(); ++i) {
    std::string key;
    for (std::size_t len = 1; len <= index.max_words() && i + len <= words.size(); ++len) {
      if (len > 1) key.push_back(' ');
      key += words[i + len - 1].text;
      if (const auto* cands = index.lookup(key)) {
        candidates.push_back({cands->front(), {words[i].span.begin, words[i + len - 1].span.end}});
      }
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const LinkedSpan& a, const LinkedSpan& b) {
    if (a.span.size() != b.span.size()) return a.span.size() > b.span.size();
    if (a.span.begin != b.span.begin) return a.span.begin < b.span.begin;
    return a.entity < b.entity;
  });
  std::vector<LinkedSpan> chosen;
  for (const auto& c : candidates) {
    bool clash = std::any_of(chosen.begin(), chosen.end(), [&](const LinkedSpan& x) { return x.span.overlaps(c.span); });
    if (!clash) chosen.push_back(c);
  }
  std::sort(chosen.begin(), chosen.end(), [](const LinkedSpan& a, const LinkedSpan& b) { return a.span.begin < b.span.begin; });
  return chosen;
}

inline std::vector<LinkedSpan> link_entities(const Utterance& utt, const AliasIndex& index) {
  return link_entities(utt.text, index);
}

}  // namespace crs
