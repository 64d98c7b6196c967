// Desk-scale corpus generator. Writes a ReDial-format dialogue file together
// with a movie knowledge graph, an alias table and an item catalog, so that
// the full loading path can be exercised without the real release.
//
// World: genres x directors x films. Each director makes films in one genre,
// half of them old and half recent; films star two actors from the genre's
// pool. A recommender's suggestion is a film by the director the seeker
// brought up most recently, in the era the seeker asked for. Earlier turns
// mention unrelated directors, actors or films. A fraction of conversations
// carry only genre and era words and mention nothing linkable.

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "crs/types.hpp"

namespace crs {

struct SynthConfig {
  int conversations = 500;
  int genres = 8;
  int directors_per_genre = 5;
  int films_per_director = 4;  // split evenly between old and recent
  int actors_per_genre = 10;
  double cold_start_fraction = 0.3;
  int max_distractors = 2;
  double genre_word_rate = 0.5;  // non-cold seekers who also name the genre
  std::uint64_t seed = 7;
};

struct SynthPaths {
  std::string dialogues;  // redial.jsonl
  std::string triples;    // kg.tsv
  std::string aliases;    // aliases.tsv
  std::string catalog;    // items.tsv
};

namespace detail {

inline const std::vector<std::string>& synth_genres() {
  static const std::vector<std::string> g{"comedy",   "horror", "romance", "thriller", "western",
                                          "musical",  "sci-fi", "fantasy", "war",      "mystery",
                                          "animated", "crime"};
  return g;
}

inline const std::vector<std::string>& synth_syllables() {
  static const std::vector<std::string> s{"ka", "lo", "mi", "ren", "sa", "tor", "vi", "del", "mar", "no", "qua", "bel",
                                          "dan", "fi", "gor", "hal", "jun", "pel", "ros", "ta", "ul", "wen", "zo", "cas"};
  return s;
}

inline std::string synth_name(std::mt19937_64& rng, int syllables) {
  const auto& syl = synth_syllables();
  std::uniform_int_distribution<std::size_t> pick(0, syl.size() - 1);
  std::string out;
  for (int i = 0; i < syllables; ++i) out += syl[pick(rng)];
  out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
  return out;
}

template <typename T>
const T& choose(const std::vector<T>& xs, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> d(0, xs.size() - 1);
  return xs[d(rng)];
}

}  // namespace detail

// Generates the four files under `dir` and returns their paths.
inline SynthPaths generate_synthetic(const std::string& dir, const SynthConfig& cfg) {
  using nlohmann::json;
  if (cfg.genres < 2 || cfg.genres > static_cast<int>(detail::synth_genres().size())) {
    throw Error("synth: genres must lie in [2, " + std::to_string(detail::synth_genres().size()) + "]");
  }
  if (cfg.films_per_director < 2 || cfg.films_per_director % 2 != 0) throw Error("synth: films_per_director must be even");
  if (cfg.directors_per_genre < 1 || cfg.actors_per_genre < 2) throw Error("synth: need directors and >= 2 actors per genre");
  std::filesystem::create_directories(dir);
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  struct Person {
    std::string full, last, entity;
  };
  struct Film {
    std::string id, title, entity;
    int genre, director;
    bool recent;
    std::vector<int> actors;
  };
  std::vector<Person> directors, actors;
  std::vector<std::vector<int>> genre_directors(static_cast<std::size_t>(cfg.genres));
  std::vector<std::vector<int>> genre_actors(static_cast<std::size_t>(cfg.genres));
  std::vector<std::vector<int>> director_films;
  std::vector<Film> films;
  std::set<std::string> used_names;
  auto unique_person = [&](const std::string& kind) {
    for (;;) {
      Person p;
      p.last = detail::synth_name(rng, 2);
      p.full = detail::synth_name(rng, 2) + " " + p.last;
      if (used_names.insert(p.last).second) {
        p.entity = kind + ":" + p.full;
        return p;
      }
    }
  };

  int next_id = 100001;
  for (int g = 0; g < cfg.genres; ++g) {
    for (int a = 0; a < cfg.actors_per_genre; ++a) {
      genre_actors[static_cast<std::size_t>(g)].push_back(static_cast<int>(actors.size()));
      actors.push_back(unique_person("actor"));
    }
    for (int d = 0; d < cfg.directors_per_genre; ++d) {
      const int did = static_cast<int>(directors.size());
      genre_directors[static_cast<std::size_t>(g)].push_back(did);
      directors.push_back(unique_person("director"));
      director_films.emplace_back();
      for (int f = 0; f < cfg.films_per_director; ++f) {
        Film film;
        film.id = std::to_string(next_id);
        next_id += 7;
        film.recent = f % 2 == 1;
        std::uniform_int_distribution<int> year(film.recent ? 2005 : 1955, film.recent ? 2019 : 1989);
        film.title = "The " + detail::synth_name(rng, 2) + " " + detail::synth_name(rng, 1) + " (" + std::to_string(year(rng)) + ")";
        film.entity = "film:" + film.id;
        film.genre = g;
        film.director = did;
        const auto& pool = genre_actors[static_cast<std::size_t>(g)];
        const std::size_t lead = films.size() % pool.size();
        std::uniform_int_distribution<std::size_t> offset(1, pool.size() - 1);
        film.actors = {pool[lead], pool[(lead + offset(rng)) % pool.size()]};
        director_films.back().push_back(static_cast<int>(films.size()));
        films.push_back(film);
      }
    }
  }

  SynthPaths paths{dir + "/redial.jsonl", dir + "/kg.tsv", dir + "/aliases.tsv", dir + "/items.tsv"};
  {
    std::ofstream kg(paths.triples, std::ios::binary);
    std::ofstream items(paths.catalog, std::ios::binary);
    for (const auto& f : films) {
      kg << f.entity << "\tdirected_by\t" << directors[static_cast<std::size_t>(f.director)].entity << '\n';
      for (int a : f.actors) kg << f.entity << "\tstarring\t" << actors[static_cast<std::size_t>(a)].entity << '\n';
      kg << f.entity << "\thas_genre\tgenre:" << detail::synth_genres()[static_cast<std::size_t>(f.genre)] << '\n';
      items << f.id << '\t' << f.title << '\t' << f.entity << '\n';
    }
    std::ofstream al(paths.aliases, std::ios::binary);
    for (const auto* group : {&directors, &actors}) {
      for (const auto& p : *group) {
        al << p.full << '\t' << p.entity << '\n';
        al << p.last << '\t' << p.entity << '\n';
      }
    }
  }

  const std::vector<std::string> greet{"Hi there!", "Hello!", "Hey, how are you?", "Hi, I need a movie for tonight."};
  const std::vector<std::string> recent_words{"something recent", "a newer movie", "a modern film"};
  const std::vector<std::string> old_words{"an old classic", "something older", "a vintage film"};
  const std::vector<std::string> ask{"What have you enjoyed lately?", "What kind of movies do you like?",
                                     "Tell me more about your taste."};
  const std::vector<std::string> thanks{"Thanks, I will check it out!", "Sounds great, thank you.", "Nice, I will watch it."};
  const std::vector<std::string> bye{"Enjoy the movie!", "Have a good night!", "You are welcome, bye!"};

  std::ofstream out(paths.dialogues, std::ios::binary);
  const int seeker = 1, recommender = 2;
  for (int c = 0; c < cfg.conversations; ++c) {
    json mentions = json::object();
    json messages = json::array();
    int message_id = 0;
    auto say = [&](int who, const std::string& text) {
      messages.push_back({{"timeOffset", message_id * 10}, {"text", text}, {"senderWorkerId", who}, {"messageId", message_id}});
      ++message_id;
    };
    auto mention = [&](const Film& f) {
      mentions[f.id] = f.title;
      return "@" + f.id;
    };
    std::uniform_int_distribution<int> genre_pick(0, cfg.genres - 1);
    const int genre = genre_pick(rng);
    const bool recent = unit(rng) < 0.5;
    const std::string& genre_word = detail::synth_genres()[static_cast<std::size_t>(genre)];
    const std::string era_words = detail::choose(recent ? recent_words : old_words, rng);
    auto era_films = [&](int director, bool want_recent) {
      std::vector<int> out_films;
      for (int f : director_films[static_cast<std::size_t>(director)])
        if (films[static_cast<std::size_t>(f)].recent == want_recent) out_films.push_back(f);
      return out_films;
    };

    if (unit(rng) < cfg.cold_start_fraction) {
      say(seeker, detail::choose(greet, rng) + " Can you suggest " + era_words + "? I am in the mood for a " + genre_word + ".");
      const int director = detail::choose(genre_directors[static_cast<std::size_t>(genre)], rng);
      const Film& target = films[static_cast<std::size_t>(detail::choose(era_films(director, recent), rng))];
      say(recommender, "Sure! " + mention(target) + " is a fun " + genre_word + " pick.");
      say(seeker, detail::choose(thanks, rng));
      say(recommender, detail::choose(bye, rng));
    } else {
      std::uniform_int_distribution<int> nd(1, std::max(1, cfg.max_distractors));
      const int distractors = nd(rng);
      std::string opener = detail::choose(greet, rng);
      for (int k = 0; k < distractors; ++k) {
        int other = genre_pick(rng);
        if (other == genre) other = (other + 1) % cfg.genres;
        const double kind = unit(rng);
        if (kind < 0.4) {
          const auto& d = directors[static_cast<std::size_t>(detail::choose(genre_directors[static_cast<std::size_t>(other)], rng))];
          opener += k == 0 ? " Years ago I watched everything by " + d.full + "." : " I also liked " + d.last + " back then.";
        } else if (kind < 0.7) {
          const auto& a = actors[static_cast<std::size_t>(detail::choose(genre_actors[static_cast<std::size_t>(other)], rng))];
          opener += k == 0 ? " I used to be a big fan of " + a.full + "." : " And " + a.full + " was great too.";
        } else {
          const int d = detail::choose(genre_directors[static_cast<std::size_t>(other)], rng);
          const Film& f = films[static_cast<std::size_t>(detail::choose(director_films[static_cast<std::size_t>(d)], rng))];
          opener += k == 0 ? " I once loved " + mention(f) + "." : " " + mention(f) + " was good too.";
        }
      }
      say(seeker, opener);
      say(recommender, detail::choose(ask, rng));

      const int director = detail::choose(genre_directors[static_cast<std::size_t>(genre)], rng);
      const auto& dir_person = directors[static_cast<std::size_t>(director)];
      const auto candidates = era_films(director, recent);
      // The signal always names one of the director's films from the other
      // era; half the time the director is named as well.
      const auto others = era_films(director, !recent);
      std::string signal = "Recently I saw " + mention(films[static_cast<std::size_t>(detail::choose(others, rng))]) +
                           " and loved it.";
      if (unit(rng) < 0.5) signal += " Lately I am really into films by " + dir_person.full + ".";
      if (unit(rng) < cfg.genre_word_rate) signal += " I am in the mood for a " + genre_word + ".";
      signal += " Could you find " + era_words + "?";
      say(seeker, signal);
      const int first = detail::choose(candidates, rng);
      say(recommender, "You should watch " + mention(films[static_cast<std::size_t>(first)]) + ", it is a great " +
                           genre_word + ".");
      if (unit(rng) < 0.5 && candidates.size() > 1) {
        say(seeker, "I have already seen that one. Anything else like it?");
        int second = first;
        while (second == first) second = detail::choose(candidates, rng);
        say(recommender, "Then try " + mention(films[static_cast<std::size_t>(second)]) + ".");
      }
      say(seeker, detail::choose(thanks, rng));
      say(recommender, detail::choose(bye, rng));
    }
    json rec{{"movieMentions", mentions},
             {"respondentQuestions", json::object()},
             {"messages", messages},
             {"conversationId", std::to_string(20000 + c)},
             {"respondentWorkerId", recommender},
             {"initiatorWorkerId", seeker},
             {"initiatorQuestions", json::object()}};
    out << rec.dump() << '\n';
  }
  return paths;
}

}  // namespace crs
