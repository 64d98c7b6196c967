// Stateful dialogue sessions over a shared read-only model, plus the HTTP
// routes that expose them. Sessions are journaled to an append-only file.

#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "crs/corpus.hpp"
#include "crs/model.hpp"

// After Eigen: <resolv.h> defines a `_res` macro that collides with Eigen names.
#include <httplib.h>
#ifdef _res
#undef _res
#endif

namespace crs {

struct NotFoundError : Error {
  using Error::Error;
};
struct CapacityError : Error {
  using Error::Error;
};
struct ValidationError : Error {
  using Error::Error;
};

struct ServiceOptions {
  std::size_t max_sessions = 1000;
  std::size_t max_context_len = 256;
  std::size_t top_k = 10;
  DecodeConfig decode;
  std::string journal_path;  // empty: no persistence
  std::uint64_t seed = 1;    // session id generator
};

class SessionService {
 public:
  SessionService(const CrsModel& model, ServiceOptions opts) : model_(model), opts_(std::move(opts)), ids_(opts_.seed) {
    opts_.decode.validate();
    // Fill the entity table cache before any concurrent reader exists.
    if (uses_entity(model_.config().variant)) model_.entity_table();
    if (!opts_.journal_path.empty()) replay_journal();
  }

  std::string create_session() {
    std::unique_lock lock(sessions_mutex_);
    if (sessions_.size() >= opts_.max_sessions) throw CapacityError("session capacity reached");
    std::string id;
    do {
      std::ostringstream o;
      o << std::hex << ids_();
      id = o.str();
    } while (sessions_.count(id));
    auto s = std::make_shared<Session>();
    s->id = id;
    s->created = s->updated = now();
    sessions_[id] = s;
    journal({{"op", "create"}, {"id", id}, {"t", s->created}});
    return id;
  }

  nlohmann::json post_message(const std::string& id, const std::string& text) {
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) throw ValidationError("message text is empty");
    auto s = find(id);
    std::lock_guard lock(s->mutex);

    Utterance seeker;
    seeker.speaker = Speaker::kSeeker;
    seeker.text = text;
    mark_item_references(seeker, model_.catalog());
    annotate_utterance(seeker, model_.kg(), model_.aliases());
    seeker.tokens = model_.vocab().encode(seeker);

    std::vector<Utterance> convo = s->utterances;
    convo.push_back(seeker);
    const PreferenceHistory history = extract_history(convo, model_.kg());
    std::vector<const std::vector<int>*> turns;
    for (const auto& u : convo) turns.push_back(&u.tokens);
    const ContextEncoding enc = model_.encode_context(serialize_context(turns, opts_.max_context_len));
    const Inference inf = model_.recommend(enc, history);
    const std::vector<int> out = model_.respond(enc, &inf.p_rec, opts_.decode);

    Utterance reply = render_response(out);
    annotate_utterance(reply, model_.kg(), model_.aliases());
    reply.tokens = model_.vocab().encode(reply);
    const std::string display = detokenize(out, model_.vocab(), &model_.catalog());

    nlohmann::json ranked = nlohmann::json::array();
    for (const auto& [item, p] : model_.ranked_items(inf.p_rec, opts_.top_k))
      ranked.push_back({{"item_id", item}, {"name", model_.catalog().name(item)}, {"prob", p}});

    s->utterances.push_back(seeker);
    s->display.push_back(seeker.text);
    s->utterances.push_back(reply);
    s->display.push_back(display);
    s->ranked_items = ranked;
    s->branch = inf.branch;
    s->updated = now();
    journal({{"op", "turn"},
             {"id", id},
             {"seeker", utterance_json(seeker)},
             {"recommender", utterance_json(reply)},
             {"display", display},
             {"ranked_items", ranked},
             {"branch", inf.branch},
             {"t", s->updated}});

    return {{"response_text", display},
            {"response_machine", reply.text},
            {"ranked_items", ranked},
            {"entity_history", entity_history(*s)},
            {"debug", {{"branch", inf.branch}, {"history_length", inf.history.size()}}}};
  }

  nlohmann::json get_session(const std::string& id) {
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    nlohmann::json messages = nlohmann::json::array();
    for (std::size_t i = 0; i < s->utterances.size(); ++i) {
      const auto& u = s->utterances[i];
      nlohmann::json items = nlohmann::json::array();
      for (const auto& m : u.item_mentions) items.push_back(m.id);
      messages.push_back({{"role", u.speaker == Speaker::kSeeker ? "seeker" : "recommender"},
                          {"text", s->display[i]},
                          {"machine_text", u.text},
                          {"item_mentions", items}});
    }
    return {{"id", s->id},
            {"created", s->created},
            {"updated", s->updated},
            {"messages", messages},
            {"ranked_items", s->ranked_items},
            {"entity_history", entity_history(*s)},
            {"debug", {{"branch", s->branch}}}};
  }

  nlohmann::json health() const {
    std::shared_lock lock(sessions_mutex_);
    const auto& cfg = model_.config();
    return {{"status", "ok"},
            {"sessions", sessions_.size()},
            {"config",
             {{"lambda", cfg.fusion.lambda},
              {"mu", cfg.fusion.mu},
              {"variant", to_string(cfg.variant)},
              {"beam", opts_.decode.beam_size},
              {"groups", opts_.decode.groups}}}};
  }

  std::size_t size() const {
    std::shared_lock lock(sessions_mutex_);
    return sessions_.size();
  }

 private:
  struct Session {
    std::string id;
    std::vector<Utterance> utterances;
    std::vector<std::string> display;
    nlohmann::json ranked_items = nlohmann::json::array();
    std::string branch;
    double created = 0.0, updated = 0.0;
    std::mutex mutex;
  };

  static double now() {
    using namespace std::chrono;
    return duration_cast<duration<double>>(system_clock::now().time_since_epoch()).count();
  }

  std::shared_ptr<Session> find(const std::string& id) const {
    std::shared_lock lock(sessions_mutex_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw NotFoundError("unknown session: " + id);
    return it->second;
  }

  // Item tokens become "@<item id>" item mentions; other tokens are joined by spaces.
  Utterance render_response(const std::vector<int>& tokens) const {
    Utterance u;
    u.speaker = Speaker::kRecommender;
    for (int t : tokens) {
      if (t == Vocabulary::kBos || t == Vocabulary::kEos || t == Vocabulary::kPad) continue;
      if (!u.text.empty()) u.text.push_back(' ');
      const std::string piece = model_.vocab().token(t);
      if (model_.vocab().is_item_token(t)) {
        u.item_mentions.push_back({model_.vocab().item_of(t), {u.text.size(), u.text.size() + piece.size()}});
      }
      u.text += piece;
    }
    return u;
  }

  // Entities the model attends to, oldest first, with recency weights
  // lambda^(i-1) / sum_j lambda^(j-1).
  nlohmann::json entity_history(const Session& s) const {
    const auto ids = model_.history_ids(extract_history(s.utterances, model_.kg()));
    const double lambda = model_.config().fusion.lambda;
    double z = 0.0;
    for (std::size_t i = 0; i < ids.size(); ++i) z += std::pow(lambda, static_cast<double>(i));
    nlohmann::json out = nlohmann::json::array();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const std::string entity = model_.kg().entity_name(ids[i]);
      const auto item = model_.kg().item_for_entity(ids[i]);
      out.push_back({{"entity_id", entity},
                     {"name", item ? model_.catalog().name(*item) : entity},
                     {"item_id", item ? nlohmann::json(*item) : nlohmann::json(nullptr)},
                     {"position", i + 1},
                     {"weight", std::pow(lambda, static_cast<double>(i)) / z}});
    }
    return out;
  }

  static nlohmann::json utterance_json(const Utterance& u) {
    return {{"text", u.text},
            {"item_mentions", mentions_to_json(u.item_mentions, "item")},
            {"entity_mentions", mentions_to_json(u.entity_mentions, "entity")}};
  }

  Utterance utterance_from_json(const nlohmann::json& j, Speaker speaker) const {
    Utterance u;
    u.speaker = speaker;
    u.text = j.at("text").get<std::string>();
    u.item_mentions = mentions_from_json(j.at("item_mentions"), "item");
    u.entity_mentions = mentions_from_json(j.at("entity_mentions"), "entity");
    u.tokens = model_.vocab().encode(u);
    return u;
  }

  void journal(const nlohmann::json& rec) {
    if (opts_.journal_path.empty()) return;
    std::lock_guard lock(journal_mutex_);
    std::ofstream out(opts_.journal_path, std::ios::app | std::ios::binary);
    if (!out) throw Error("cannot append to session journal: " + opts_.journal_path);
    out << rec.dump() << '\n';
    out.flush();
  }

  // Rebuilds sessions from the journal. A truncated final line is ignored.
  void replay_journal() {
    std::ifstream in(opts_.journal_path);
    if (!in) return;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      nlohmann::json rec;
      try {
        rec = nlohmann::json::parse(line);
      } catch (const std::exception&) {
        std::cerr << "warning: skipping unreadable session journal line\n";
        continue;
      }
      const std::string id = rec.at("id");
      if (rec.at("op") == "create") {
        auto s = std::make_shared<Session>();
        s->id = id;
        s->created = s->updated = rec.value("t", 0.0);
        sessions_[id] = s;
      } else if (rec.at("op") == "turn") {
        auto it = sessions_.find(id);
        if (it == sessions_.end()) continue;
        auto& s = *it->second;
        s.utterances.push_back(utterance_from_json(rec.at("seeker"), Speaker::kSeeker));
        s.display.push_back(s.utterances.back().text);
        s.utterances.push_back(utterance_from_json(rec.at("recommender"), Speaker::kRecommender));
        s.display.push_back(rec.at("display").get<std::string>());
        s.ranked_items = rec.at("ranked_items");
        s.branch = rec.value("branch", "");
        s.updated = rec.value("t", 0.0);
      }
    }
  }

  const CrsModel& model_;
  ServiceOptions opts_;
  mutable std::shared_mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::mt19937_64 ids_;
  std::mutex journal_mutex_;
};

inline void register_routes(httplib::Server& server, SessionService& service) {
  auto send = [](httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json; charset=utf-8");
  };
  auto guarded = [send](auto handler) {
    return [send, handler](const httplib::Request& req, httplib::Response& res) {
      try {
        handler(req, res);
      } catch (const NotFoundError& e) {
        send(res, 404, {{"error", e.what()}});
      } catch (const CapacityError& e) {
        send(res, 429, {{"error", e.what()}});
      } catch (const ValidationError& e) {
        send(res, 400, {{"error", e.what()}});
      } catch (const std::exception& e) {
        send(res, 500, {{"error", e.what()}});
      }
    };
  };

  server.Get("/api/health", guarded([&service, send](const httplib::Request&, httplib::Response& res) {
               send(res, 200, service.health());
             }));
  server.Post("/api/sessions", guarded([&service, send](const httplib::Request&, httplib::Response& res) {
                send(res, 201, {{"id", service.create_session()}});
              }));
  server.Get(R"(/api/sessions/([^/]+))", guarded([&service, send](const httplib::Request& req, httplib::Response& res) {
               send(res, 200, service.get_session(req.matches[1]));
             }));
  server.Post(R"(/api/sessions/([^/]+)/messages)",
              guarded([&service, send](const httplib::Request& req, httplib::Response& res) {
                nlohmann::json body;
                try {
                  body = nlohmann::json::parse(req.body);
                } catch (const std::exception&) {
                  throw ValidationError("request body must be JSON");
                }
                if (!body.is_object() || !body.contains("text") || !body["text"].is_string()) {
                  throw ValidationError("request body needs a string field 'text'");
                }
                send(res, 200, service.post_message(req.matches[1], body["text"].get<std::string>()));
              }));
}

}  // namespace crs
