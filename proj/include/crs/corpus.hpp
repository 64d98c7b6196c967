// Corpus loading (ReDial, OpenDialKG, canonical line-delimited records),
// tokenization, vocabulary extension with item tokens and construction of
// training examples.

#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "crs/kg.hpp"
#include "crs/types.hpp"

namespace crs {

using json = nlohmann::json;

// ---- tokenization ---------------------------------------------------------

// Word tokens are runs of alphanumerics (plus apostrophes and non-ASCII
// bytes); every other non-space byte is its own token. Case is preserved.
inline std::vector<std::string> tokenize_text(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  auto word_byte = [](unsigned char c) { return std::isalnum(c) != 0 || c == '\'' || c >= 0x80; };
  while (i < text.size()) {
    auto c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      ++i;
    } else if (word_byte(c)) {
      std::size_t j = i;
      while (j < text.size() && word_byte(static_cast<unsigned char>(text[j]))) ++j;
      out.emplace_back(text.substr(i, j - i));
      i = j;
    } else {
      out.emplace_back(1, text[i]);
      ++i;
    }
  }
  return out;
}

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// Base tokens V followed by a contiguous block of item tokens.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kEot = 4;

  Vocabulary() {
    for (const char* s : {"<pad>", "<s>", "</s>", "<unk>", "<eot>"}) add_base(s);
  }

  // Base tokens from the TRAIN split with at least min_count occurrences,
  // ordered by descending frequency then lexicographically.
  static Vocabulary build(const std::vector<Conversation>& convs, int min_count = 1) {
    std::map<std::string, int> counts;
    for (const auto& c : convs) {
      if (c.split != Split::kTrain) continue;
      for (const auto& u : c.utterances) {
        for (const auto& seg : segments(u)) {
          if (seg.item) continue;
          for (auto& t : tokenize_text(seg.text)) ++counts[t];
        }
      }
    }
    std::vector<std::pair<std::string, int>> sorted(counts.begin(), counts.end());
    std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    Vocabulary v;
    for (const auto& [tok, n] : sorted)
      if (n >= min_count) v.add_base(tok);
    return v;
  }

  static Vocabulary from_tokens(const std::vector<std::string>& base, const std::vector<std::string>& items) {
    Vocabulary v;
    v.base_.clear();
    v.base_index_.clear();
    for (const auto& t : base) v.add_base(t);
    if (v.base_.size() < 5 || v.base_[kEot] != "<eot>" || v.base_[kPad] != "<pad>") {
      throw Error("vocabulary: special tokens missing or out of place");
    }
    for (const auto& i : items) v.add_item(i);
    return v;
  }

  void add_base(const std::string& token) {
    if (!items_.empty()) throw Error("vocabulary: base tokens must precede item tokens");
    if (base_index_.emplace(token, static_cast<int>(base_.size())).second) base_.push_back(token);
  }

  // Appends one token per catalog item in catalog order; ids follow the base block.
  void extend_with_items(const ItemCatalog& catalog) {
    for (const auto& id : catalog.ordered_ids()) add_item(id);
  }

  int base_size() const { return static_cast<int>(base_.size()); }
  int num_items() const { return static_cast<int>(items_.size()); }
  int size() const { return base_size() + num_items(); }

  int id(const std::string& token) const {
    auto it = base_index_.find(token);
    return it == base_index_.end() ? kUnk : it->second;
  }

  bool contains_base(const std::string& token) const { return base_index_.count(token) != 0; }

  std::optional<int> item_token(const std::string& item_id) const {
    auto it = item_index_.find(item_id);
    if (it == item_index_.end()) return std::nullopt;
    return base_size() + it->second;
  }

  bool is_item_token(int id) const { return id >= base_size() && id < size(); }

  const std::string& item_of(int id) const {
    if (!is_item_token(id)) throw Error("not an item token: " + std::to_string(id));
    return items_[static_cast<std::size_t>(id - base_size())];
  }

  // Base tokens render as themselves, item tokens as "@<item id>".
  std::string token(int id) const {
    if (id >= 0 && id < base_size()) return base_[static_cast<std::size_t>(id)];
    if (is_item_token(id)) return "@" + item_of(id);
    throw Error("token id out of range: " + std::to_string(id));
  }

  const std::vector<std::string>& base_tokens() const { return base_; }
  const std::vector<std::string>& item_ids() const { return items_; }

  struct Segment {
    std::string text;
    bool item = false;
    std::string item_id;
  };

  // Splits an utterance into plain text and item mention segments.
  static std::vector<Segment> segments(const Utterance& u) {
    std::vector<Mention> ms = u.item_mentions;
    std::sort(ms.begin(), ms.end(), [](const Mention& a, const Mention& b) { return a.span.begin < b.span.begin; });
    std::vector<Segment> out;
    std::size_t pos = 0;
    for (const auto& m : ms) {
      if (m.span.begin < pos || m.span.end > u.text.size()) continue;
      if (m.span.begin > pos) out.push_back({u.text.substr(pos, m.span.begin - pos), false, {}});
      out.push_back({u.text.substr(m.span.begin, m.span.size()), true, m.id});
      pos = m.span.end;
    }
    if (pos < u.text.size()) out.push_back({u.text.substr(pos), false, {}});
    return out;
  }

  // Item mentions become single item tokens and are never sub-tokenized.
  std::vector<int> encode(const Utterance& u) const {
    std::vector<int> ids;
    for (const auto& seg : segments(u)) {
      if (seg.item) {
        if (auto t = item_token(seg.item_id)) {
          ids.push_back(*t);
          continue;
        }
      }
      for (const auto& t : tokenize_text(seg.text)) ids.push_back(id(t));
    }
    return ids;
  }

 private:
  void add_item(const std::string& item_id) {
    if (item_index_.emplace(item_id, static_cast<int>(items_.size())).second) items_.push_back(item_id);
  }

  std::vector<std::string> base_;
  std::unordered_map<std::string, int> base_index_;
  std::vector<std::string> items_;
  std::unordered_map<std::string, int> item_index_;
};

inline void tokenize_conversations(std::vector<Conversation>& convs, const Vocabulary& vocab) {
  for (auto& c : convs)
    for (auto& u : c.utterances) u.tokens = vocab.encode(u);
}

// ---- loading --------------------------------------------------------------

struct LoadStats {
  std::size_t records = 0;
  std::size_t skipped = 0;
  std::size_t unresolved_mentions = 0;
  std::size_t utterances = 0;
};

// Assigns TRAIN/VALID/TEST by position using cumulative fractions.
inline void assign_splits(std::vector<Conversation>& convs, double train_frac, double valid_frac) {
  const double n = static_cast<double>(convs.size());
  const auto train_end = static_cast<std::size_t>(std::llround(n * train_frac));
  const auto valid_end = static_cast<std::size_t>(std::llround(n * (train_frac + valid_frac)));
  for (std::size_t i = 0; i < convs.size(); ++i) {
    convs[i].split = i < train_end ? Split::kTrain : (i < valid_end ? Split::kValid : Split::kTest);
  }
}

namespace detail {

inline std::string json_id(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  if (v.is_number()) return std::to_string(v.get<double>());
  return v.dump();
}

// Parses one ReDial record; throws on structural problems.
inline Conversation parse_redial_record(const json& rec, ItemCatalog* catalog, LoadStats& stats) {
  Conversation conv;
  conv.id = json_id(rec.at("conversationId"));
  std::map<std::string, std::string> mentions;
  if (rec.contains("movieMentions") && rec["movieMentions"].is_object()) {
    for (auto it = rec["movieMentions"].begin(); it != rec["movieMentions"].end(); ++it) {
      mentions[it.key()] = it.value().is_string() ? it.value().get<std::string>() : std::string();
    }
  }
  const std::string initiator = json_id(rec.at("initiatorWorkerId"));
  static const std::regex mention_re("@(\\d+)");
  for (const auto& msg : rec.at("messages")) {
    Utterance u;
    u.text = msg.at("text").get<std::string>();
    u.speaker = json_id(msg.at("senderWorkerId")) == initiator ? Speaker::kSeeker : Speaker::kRecommender;
    for (auto it = std::sregex_iterator(u.text.begin(), u.text.end(), mention_re); it != std::sregex_iterator(); ++it) {
      const std::string id = (*it)[1].str();
      auto found = mentions.find(id);
      if (found == mentions.end()) {
        ++stats.unresolved_mentions;
        continue;
      }
      const auto begin = static_cast<std::size_t>(it->position(0));
      u.item_mentions.push_back({id, {begin, begin + static_cast<std::size_t>(it->length(0))}});
      if (catalog && !found->second.empty()) catalog->items.emplace(id, found->second);
      else if (catalog) catalog->items.emplace(id, "@" + id);
    }
    conv.utterances.push_back(std::move(u));
  }
  if (conv.utterances.size() < 2) throw Error("conversation has fewer than 2 utterances");
  return conv;
}

}  // namespace detail

// Line-delimited ReDial records. Malformed records are skipped and counted;
// "@id" patterns missing from the record's movieMentions stay plain text.
// Splits follow file order, 80/10/10.
inline std::vector<Conversation> load_redial(const std::string& path, ItemCatalog* catalog = nullptr,
                                             LoadStats* stats_out = nullptr) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open ReDial file: " + path);
  LoadStats stats;
  std::vector<Conversation> convs;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++stats.records;
    try {
      convs.push_back(detail::parse_redial_record(json::parse(line), catalog, stats));
      stats.utterances += convs.back().utterances.size();
    } catch (const std::exception& e) {
      ++stats.skipped;
    }
  }
  if (stats.skipped > 0) {
    std::cerr << "warning: skipped " << stats.skipped << " malformed ReDial record(s) in " << path << "\n";
  }
  assign_splits(convs, 0.8, 0.1);
  if (stats_out) *stats_out = stats;
  return convs;
}

namespace detail {

// RFC 4180 style CSV: quoted fields may contain commas, newlines and "" escapes.
inline std::vector<std::vector<std::string>> parse_csv(std::istream& in) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool any = false;
  char c;
  while (in.get(c)) {
    any = true;
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          field.push_back('"');
          in.get();
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
    } else if (c == '\n') {
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
      any = false;
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  if (any || !field.empty() || !row.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

// Case-insensitive, word-aligned occurrences of the given names, longest first.
inline std::vector<Mention> find_names(const std::string& text, const std::vector<std::string>& names) {
  std::vector<std::string> sorted = names;
  std::sort(sorted.begin(), sorted.end(), [](const std::string& a, const std::string& b) {
    return a.size() != b.size() ? a.size() > b.size() : a < b;
  });
  const std::string lower = to_lower(text);
  std::vector<Mention> out;
  auto boundary = [&](std::size_t pos) {
    return pos >= lower.size() || !std::isalnum(static_cast<unsigned char>(lower[pos]));
  };
  for (const auto& name : sorted) {
    if (name.empty()) continue;
    const std::string key = to_lower(name);
    for (std::size_t pos = lower.find(key); pos != std::string::npos; pos = lower.find(key, pos + 1)) {
      Span s{pos, pos + key.size()};
      if ((pos > 0 && !boundary(pos - 1)) || !boundary(s.end)) continue;
      bool clash = std::any_of(out.begin(), out.end(), [&](const Mention& m) { return m.span.overlaps(s); });
      if (!clash) out.push_back({name, s});
    }
  }
  std::sort(out.begin(), out.end(), [](const Mention& a, const Mention& b) { return a.span.begin < b.span.begin; });
  return out;
}

}  // namespace detail

// OpenDialKG release CSV (columns: Messages, User Rating, Assistant Rating).
// Entities come from the kgwalk path annotations and are located in the chat
// text by name. Names that match a catalog display name become item mentions.
// Splits follow file order, 70/15/15.
inline std::vector<Conversation> load_opendialkg(const std::string& path, ItemCatalog* catalog = nullptr,
                                                 LoadStats* stats_out = nullptr) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open OpenDialKG file: " + path);
  auto rows = detail::parse_csv(in);
  LoadStats stats;
  std::vector<Conversation> convs;
  if (rows.empty()) {
    if (stats_out) *stats_out = stats;
    return convs;
  }
  std::size_t msg_col = 0;
  std::size_t first = 0;
  if (!rows[0].empty() && rows[0][0] == "Messages") first = 1;

  std::map<std::string, std::string> name_to_item;
  if (catalog) {
    for (const auto& [id, name] : catalog->items) name_to_item.emplace(to_lower(name), id);
  }

  for (std::size_t r = first; r < rows.size(); ++r) {
    if (rows[r].size() <= msg_col || rows[r][msg_col].empty()) continue;
    ++stats.records;
    try {
      const json msgs = json::parse(rows[r][msg_col]);
      Conversation conv;
      conv.id = "odkg-" + std::to_string(r - first);
      std::vector<std::string> names;
      for (const auto& m : msgs) {
        if (m.value("type", "") != "action" || !m.contains("metadata")) continue;
        const auto& meta = m["metadata"];
        if (!meta.contains("path") || !meta["path"].is_array() || meta["path"].size() < 2) continue;
        for (const auto& t : meta["path"][1]) {
          if (t.is_array() && t.size() == 3) {
            names.push_back(t[0].get<std::string>());
            names.push_back(t[2].get<std::string>());
          }
        }
      }
      std::sort(names.begin(), names.end());
      names.erase(std::unique(names.begin(), names.end()), names.end());
      for (const auto& m : msgs) {
        if (m.value("type", "") != "chat") continue;
        Utterance u;
        u.text = m.at("message").get<std::string>();
        u.speaker = m.value("sender", "user") == "user" ? Speaker::kSeeker : Speaker::kRecommender;
        for (auto& found : detail::find_names(u.text, names)) {
          auto item = name_to_item.find(to_lower(found.id));
          if (item != name_to_item.end()) {
            u.item_mentions.push_back({item->second, found.span});
          } else {
            u.entity_mentions.push_back(std::move(found));
          }
        }
        conv.utterances.push_back(std::move(u));
      }
      if (conv.utterances.size() < 2) throw Error("conversation has fewer than 2 utterances");
      stats.utterances += conv.utterances.size();
      convs.push_back(std::move(conv));
    } catch (const std::exception&) {
      ++stats.skipped;
    }
  }
  if (stats.skipped > 0) {
    std::cerr << "warning: skipped " << stats.skipped << " malformed OpenDialKG record(s) in " << path << "\n";
  }
  assign_splits(convs, 0.70, 0.15);
  if (stats_out) *stats_out = stats;
  return convs;
}

// ---- canonical format -----------------------------------------------------

inline json mentions_to_json(const std::vector<Mention>& ms, const char* key) {
  json arr = json::array();
  for (const auto& m : ms) arr.push_back({{key, m.id}, {"start", m.span.begin}, {"end", m.span.end}});
  return arr;
}

inline std::vector<Mention> mentions_from_json(const json& arr, const char* key) {
  std::vector<Mention> out;
  for (const auto& m : arr) {
    out.push_back({m.at(key).get<std::string>(), {m.at("start").get<std::size_t>(), m.at("end").get<std::size_t>()}});
  }
  return out;
}

inline json to_json(const Conversation& c) {
  json utts = json::array();
  for (const auto& u : c.utterances) {
    utts.push_back({{"speaker", std::string(to_string(u.speaker))},
                    {"text", u.text},
                    {"item_mentions", mentions_to_json(u.item_mentions, "item_id")},
                    {"entity_mentions", mentions_to_json(u.entity_mentions, "entity_id")}});
  }
  return {{"id", c.id}, {"split", std::string(to_string(c.split))}, {"utterances", std::move(utts)}};
}

inline Conversation conversation_from_json(const json& j) {
  Conversation c;
  c.id = j.at("id").get<std::string>();
  c.split = split_from_string(j.at("split").get<std::string>());
  for (const auto& uj : j.at("utterances")) {
    Utterance u;
    u.speaker = speaker_from_string(uj.at("speaker").get<std::string>());
    u.text = uj.at("text").get<std::string>();
    u.item_mentions = mentions_from_json(uj.value("item_mentions", json::array()), "item_id");
    u.entity_mentions = mentions_from_json(uj.value("entity_mentions", json::array()), "entity_id");
    for (const auto* ms : {&u.item_mentions, &u.entity_mentions})
      for (const auto& m : *ms)
        if (m.span.begin > m.span.end || m.span.end > u.text.size()) throw Error("mention span out of bounds in " + c.id);
    c.utterances.push_back(std::move(u));
  }
  return c;
}

inline void save_canonical(const std::string& path, const std::vector<Conversation>& convs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  for (const auto& c : convs) out << to_json(c).dump() << '\n';
}

inline std::vector<Conversation> load_canonical(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open canonical corpus: " + path);
  std::vector<Conversation> convs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      convs.push_back(conversation_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw Error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return convs;
}

// Catalog TSV: item id, display name, optional entity identifier.
inline void save_catalog(const std::string& path, const ItemCatalog& catalog) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  for (const auto& [id, name] : catalog.items) {
    out << id << '\t' << name;
    if (auto e = catalog.entity_of(id)) out << '\t' << *e;
    out << '\n';
  }
}

inline ItemCatalog load_catalog(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open catalog: " + path);
  ItemCatalog cat;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string part;
    while (std::getline(ss, part, '\t')) f.push_back(part);
    if (f.size() < 2) throw Error("catalog line needs at least 2 fields: " + line);
    if (!cat.items.emplace(f[0], f[1]).second) throw Error("duplicate catalog item: " + f[0]);
    if (f.size() >= 3 && !f[2].empty()) cat.item_to_entity[f[0]] = f[2];
  }
  cat.validate();
  return cat;
}

// Adds alias-linked entity mentions to one utterance. Spans overlapping an
// item mention are not linked again. Mentions of item entities are recorded
// as item mentions.
inline void annotate_utterance(Utterance& u, const KnowledgeGraph& kg, const AliasIndex& aliases) {
  for (const auto& link : link_entities(u.text, aliases)) {
    bool clash = std::any_of(u.item_mentions.begin(), u.item_mentions.end(),
                             [&](const Mention& m) { return m.span.overlaps(link.span); });
    bool dup = std::any_of(u.entity_mentions.begin(), u.entity_mentions.end(),
                           [&](const Mention& m) { return m.span == link.span; });
    if (clash || dup) continue;
    if (auto item = kg.item_for_entity(link.entity)) {
      u.item_mentions.push_back({*item, link.span});
    } else {
      u.entity_mentions.push_back({kg.entity_name(link.entity), link.span});
    }
  }
  std::sort(u.item_mentions.begin(), u.item_mentions.end(),
            [](const Mention& a, const Mention& b) { return a.span.begin < b.span.begin; });
  std::sort(u.entity_mentions.begin(), u.entity_mentions.end(),
            [](const Mention& a, const Mention& b) { return a.span.begin < b.span.begin; });
}

inline void annotate_entities(std::vector<Conversation>& convs, const KnowledgeGraph& kg, const AliasIndex& aliases) {
  for (auto& c : convs)
    for (auto& u : c.utterances) annotate_utterance(u, kg, aliases);
}

// Marks "@<item id>" patterns naming catalog items as item mentions.
inline void mark_item_references(Utterance& u, const ItemCatalog& catalog) {
  static const std::regex ref_re("@([A-Za-z0-9_:.-]+)");
  for (auto it = std::sregex_iterator(u.text.begin(), u.text.end(), ref_re); it != std::sregex_iterator(); ++it) {
    const std::string id = (*it)[1].str();
    if (!catalog.contains(id)) continue;
    const auto begin = static_cast<std::size_t>(it->position(0));
    const Span span{begin, begin + static_cast<std::size_t>(it->length(0))};
    const bool seen = std::any_of(u.item_mentions.begin(), u.item_mentions.end(),
                                  [&](const Mention& m) { return m.span.overlaps(span); });
    if (!seen) u.item_mentions.push_back({id, span});
  }
  std::sort(u.item_mentions.begin(), u.item_mentions.end(),
            [](const Mention& a, const Mention& b) { return a.span.begin < b.span.begin; });
}

// ---- training examples ----------------------------------------------------

struct TrainingExample {
  std::string conversation_id;
  std::size_t turn = 0;
  Split split = Split::kTrain;
  std::vector<int> context_tokens;
  std::vector<int> target_tokens;
  std::vector<std::string> target_items;
  PreferenceHistory history;
  // Item mentions (mapped or not) in the context; used for cold-start bucketing.
  std::size_t items_mentioned = 0;
};

// Entities mentioned in the given utterances in textual order. Items resolve
// through the graph's item map; unmapped items are ignored.
inline PreferenceHistory extract_history(const std::vector<Utterance>& utterances, const KnowledgeGraph& kg) {
  PreferenceHistory h;
  for (const auto& u : utterances) {
    struct Hit {
      std::size_t pos;
      int entity;
      bool item;
    };
    std::vector<Hit> hits;
    for (const auto& m : u.item_mentions)
      if (auto e = kg.entity_for_item(m.id)) hits.push_back({m.span.begin, *e, true});
    for (const auto& m : u.entity_mentions)
      if (auto e = kg.entity_id(m.id)) hits.push_back({m.span.begin, *e, kg.item_mask()[static_cast<std::size_t>(*e)]});
    std::stable_sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) { return a.pos < b.pos; });
    for (const auto& hit : hits) h.push(hit.entity, hit.item);
  }
  return h;
}

// Joins utterance token sequences as [t_1; <eot>; t_2; ...; <eot>; t_m],
// dropping the oldest utterances whole until the result fits max_len. If the
// newest utterance alone exceeds max_len its last max_len tokens are kept.
inline std::vector<int> serialize_context(const std::vector<const std::vector<int>*>& turns, std::size_t max_len) {
  std::size_t first = turns.size();
  std::size_t total = 0;
  while (first > 0) {
    std::size_t add = turns[first - 1]->size() + (first < turns.size() ? 1 : 0);
    if (total + add > max_len && first < turns.size()) break;
    total += add;
    --first;
  }
  std::vector<int> out;
  for (std::size_t i = first; i < turns.size(); ++i) {
    if (i > first) out.push_back(Vocabulary::kEot);
    out.insert(out.end(), turns[i]->begin(), turns[i]->end());
  }
  if (out.size() > max_len) out.erase(out.begin(), out.end() - static_cast<std::ptrdiff_t>(max_len));
  return out;
}

// One example per recommender utterance that has tokens and at least one
// prior utterance. Utterance tokens are computed with `vocab`.
inline std::vector<TrainingExample> build_examples(const std::vector<Conversation>& convs, const ItemCatalog& catalog,
                                                   const Vocabulary& vocab, std::size_t max_len,
                                                   const KnowledgeGraph* kg = nullptr) {
  if (max_len == 0) throw Error("build_examples: max_len must be positive");
  for (const auto& id : vocab.item_ids())
    if (!catalog.contains(id)) throw Error("vocabulary item " + id + " missing from catalog");
  std::vector<TrainingExample> out;
  for (const auto& conv : convs) {
    std::vector<std::vector<int>> toks;
    toks.reserve(conv.utterances.size());
    for (const auto& u : conv.utterances) toks.push_back(vocab.encode(u));
    std::size_t items_so_far = 0;
    for (std::size_t k = 0; k < conv.utterances.size(); ++k) {
      const auto& u = conv.utterances[k];
      if (u.speaker == Speaker::kRecommender && !toks[k].empty() && k > 0) {
        TrainingExample ex;
        ex.conversation_id = conv.id;
        ex.turn = k;
        ex.split = conv.split;
        std::vector<const std::vector<int>*> prior;
        for (std::size_t j = 0; j < k; ++j) prior.push_back(&toks[j]);
        ex.context_tokens = serialize_context(prior, max_len);
        if (ex.context_tokens.empty()) ex.context_tokens.push_back(Vocabulary::kEot);
        ex.target_tokens = toks[k];
        std::vector<Mention> ms = u.item_mentions;
        std::sort(ms.begin(), ms.end(), [](const Mention& a, const Mention& b) { return a.span.begin < b.span.begin; });
        for (const auto& m : ms)
          if (std::find(ex.target_items.begin(), ex.target_items.end(), m.id) == ex.target_items.end())
            ex.target_items.push_back(m.id);
        if (kg) {
          std::vector<Utterance> before(conv.utterances.begin(), conv.utterances.begin() + static_cast<std::ptrdiff_t>(k));
          ex.history = extract_history(before, *kg);
        }
        ex.items_mentioned = items_so_far;
        out.push_back(std::move(ex));
      }
      items_so_far += u.item_mentions.size();
    }
  }
  return out;
}

inline std::string detokenize(const std::vector<int>& tokens, const Vocabulary& vocab, const ItemCatalog* catalog = nullptr) {
  std::string out;
  for (int t : tokens) {
    if (t == Vocabulary::kBos || t == Vocabulary::kEos || t == Vocabulary::kPad) continue;
    std::string piece;
    if (vocab.is_item_token(t) && catalog) {
      piece = catalog->name(vocab.item_of(t));
    } else {
      piece = vocab.token(t);
    }
    bool attach = piece.size() == 1 && std::ispunct(static_cast<unsigned char>(piece[0])) && piece != "@" &&
                  piece != "(" && piece != "\"";
    if (!out.empty() && !attach) out.push_back(' ');
    out += piece;
  }
  return out;
}

}  // namespace crs
