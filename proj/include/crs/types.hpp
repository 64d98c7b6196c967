// Core conversation data model shared by the loaders, the knowledge graph
// and the model.

#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace crs {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Speaker { kSeeker, kRecommender };
enum class Split { kTrain, kValid, kTest };

inline std::string_view to_string(Speaker s) { return s == Speaker::kSeeker ? "SEEKER" : "RECOMMENDER"; }

inline Speaker speaker_from_string(std::string_view s) {
  if (s == "SEEKER") return Speaker::kSeeker;
  if (s == "RECOMMENDER") return Speaker::kRecommender;
  throw Error("unknown speaker: " + std::string(s));
}

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "TRAIN";
    case Split::kValid: return "VALID";
    case Split::kTest: return "TEST";
  }
  return "TRAIN";
}

inline Split split_from_string(std::string_view s) {
  if (s == "TRAIN") return Split::kTrain;
  if (s == "VALID") return Split::kValid;
  if (s == "TEST") return Split::kTest;
  throw Error("unknown split: " + std::string(s));
}

// Half-open byte range [begin, end) into an utterance's text.
struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool overlaps(const Span& o) const { return begin < o.end && o.begin < end; }
  friend bool operator==(const Span&, const Span&) = default;
};

// An item or entity mention. For items `id` is the catalog item id, for
// entities it is the knowledge-graph entity identifier (its name).
struct Mention {
  std::string id;
  Span span;
  friend bool operator==(const Mention&, const Mention&) = default;
};

struct Utterance {
  Speaker speaker = Speaker::kSeeker;
  std::string text;
  std::vector<int> tokens;
  std::vector<Mention> item_mentions;
  std::vector<Mention> entity_mentions;

  friend bool operator==(const Utterance& a, const Utterance& b) {
    return a.speaker == b.speaker && a.text == b.text && a.item_mentions == b.item_mentions &&
           a.entity_mentions == b.entity_mentions;
  }
};

struct Conversation {
  std::string id;
  std::vector<Utterance> utterances;
  Split split = Split::kTrain;
  friend bool operator==(const Conversation&, const Conversation&) = default;
};

struct ItemCatalog {
  std::map<std::string, std::string> items;           // item id -> display name
  std::map<std::string, std::string> item_to_entity;  // item id -> KG entity identifier

  bool contains(const std::string& item) const { return items.count(item) != 0; }

  const std::string& name(const std::string& item) const {
    auto it = items.find(item);
    if (it == items.end()) throw Error("unknown item: " + item);
    return it->second;
  }

  std::optional<std::string> entity_of(const std::string& item) const {
    auto it = item_to_entity.find(item);
    if (it == item_to_entity.end()) return std::nullopt;
    return it->second;
  }

  // Item ids in catalog order (lexicographic).
  std::vector<std::string> ordered_ids() const {
    std::vector<std::string> ids;
    ids.reserve(items.size());
    for (const auto& [id, name] : items) ids.push_back(id);
    return ids;
  }

  void validate() const {
    std::map<std::string, std::string> seen;
    for (const auto& [item, entity] : item_to_entity) {
      if (!contains(item)) throw Error("item_to_entity references unknown item " + item);
      auto [it, fresh] = seen.emplace(entity, item);
      if (!fresh) throw Error("item_to_entity is not injective: " + it->second + " and " + item + " -> " + entity);
    }
  }
};

// Entities mentioned in a context, in order of appearance. Duplicates are
// kept; `is_item[i]` marks entries that came from item mentions.
struct PreferenceHistory {
  std::vector<int> entities;
  std::vector<bool> is_item;

  bool empty() const { return entities.empty(); }
  std::size_t size() const { return entities.size(); }

  void push(int entity, bool item) {
    entities.push_back(entity);
    is_item.push_back(item);
  }
};

}  // namespace crs
