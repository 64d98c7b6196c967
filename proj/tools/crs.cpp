// crs: preprocessing, training, evaluation, sweeps and serving.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "crs/checkpoint.hpp"
#include "crs/config.hpp"
#include "crs/pipeline.hpp"
#include "crs/service.hpp"
#include "crs/synthetic.hpp"

namespace fs = std::filesystem;
using namespace crs;

namespace {

// Flags shared by every command that builds a RunConfig. Overrides apply in
// order: preset, config file, --set pairs, then the named flags.
struct ConfigFlags {
  bool desk = false;
  std::string config_file;
  std::vector<std::string> sets;
  std::string variant, dataset, dialogues, triples, aliases, catalog;
  std::optional<double> lambda, mu, gamma, length_penalty;
  std::optional<int> beam, groups, epochs;
  std::optional<std::uint64_t> seed;
  bool exclude_seen = false;

  void add_to(CLI::App* app, bool data_flags = true) {
    app->add_flag("--desk", desk, "Start from the small desk-scale preset");
    app->add_option("--config", config_file, "key = value configuration file")->check(CLI::ExistingFile);
    app->add_option("--set", sets, "Override any config key (key=value), repeatable");
    app->add_option("--variant", variant, "context | entity_selfattn | entity | full");
    if (data_flags) {
      app->add_option("--dataset", dataset, "redial | opendialkg | canonical");
      app->add_option("--dialogues", dialogues, "Dialogue file");
      app->add_option("--triples", triples, "Knowledge graph TSV");
      app->add_option("--aliases", aliases, "Alias TSV");
      app->add_option("--catalog", catalog, "Item catalog TSV");
    }
    app->add_option("--lambda", lambda, "Recency base for the entity summary");
    app->add_option("--mu", mu, "Fusion weight on the entity distribution");
    app->add_option("--gamma", gamma, "Weight of the recommendation loss");
    app->add_option("--beam", beam, "Beam size");
    app->add_option("--groups", groups, "Diverse beam groups");
    app->add_option("--length-penalty", length_penalty, "Length penalty exponent");
    app->add_option("--epochs", epochs, "Training epochs");
    app->add_option("--seed", seed, "Seed for model initialization and data order");
    app->add_flag("--exclude-seen", exclude_seen, "Drop already-mentioned items from rankings");
  }

  void apply(RunConfig& c) const {
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw Error("--set expects key=value, got '" + kv + "'");
      c.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!variant.empty()) c.set("model.variant", variant);
    if (!dataset.empty()) c.set("data.dataset", dataset);
    if (!dialogues.empty()) c.data.dialogues = dialogues;
    if (!triples.empty()) c.data.triples = triples;
    if (!aliases.empty()) c.data.aliases = aliases;
    if (!catalog.empty()) c.data.catalog = catalog;
    if (lambda) c.model.fusion.lambda = *lambda;
    if (mu) c.model.fusion.mu = *mu;
    if (gamma) c.train.gamma = *gamma;
    if (beam) c.decode.beam_size = *beam;
    if (groups) c.decode.groups = *groups;
    if (length_penalty) c.decode.length_penalty = *length_penalty;
    if (epochs) c.train.epochs = *epochs;
    if (seed) c.model.seed = c.train.seed = *seed;
    if (exclude_seen) c.exclude_seen = true;
  }

  RunConfig build() const {
    RunConfig c = desk ? RunConfig::desk() : RunConfig();
    if (!config_file.empty()) c.load_file(config_file);
    apply(c);
    c.resolve_paths();
    c.validate();
    return c;
  }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

void echo_config(const fs::path& dir, RunConfig& c) { write_text(dir / "config.txt", c.to_text()); }

fs::path prepare_dir(const std::string& dir) {
  fs::create_directories(dir);
  return fs::path(dir);
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    std::size_t pos = 0;
    const double v = std::stod(part, &pos);
    if (pos != part.size()) throw Error("bad grid value: '" + part + "'");
    out.push_back(v);
  }
  if (out.empty()) throw Error("--grid needs at least one value");
  return out;
}

EvalOptions eval_options(const RunConfig& c) {
  EvalOptions o;
  o.cutoffs = recall_cutoffs(c.data.kind);
  o.exclude_seen = c.exclude_seen;
  o.decode = c.decode;
  return o;
}

void print_report(const MetricsReport& r) {
  for (const auto& [k, v] : r) std::cout << k << " = " << v << '\n';
}

// ---- commands ---------------------------------------------------------------

struct SynthArgs {
  std::string out;
  SynthConfig cfg;
};

void cmd_synth(const SynthArgs& a) {
  const SynthPaths p = generate_synthetic(a.out, a.cfg);
  std::cout << "wrote " << p.dialogues << "\n      " << p.triples << "\n      " << p.aliases << "\n      " << p.catalog
            << '\n';
}

void cmd_preprocess(const ConfigFlags& flags, const std::string& out_dir) {
  RunConfig c = flags.build();
  const Dataset d = load_dataset(c.data, c.max_context_len, c.min_count);
  const fs::path dir = prepare_dir(out_dir);
  save_canonical((dir / "conversations.jsonl").string(), d.conversations);
  save_catalog((dir / "items.tsv").string(), d.catalog);
  save_triples((dir / "kg.tsv").string(), d.kg);
  save_aliases((dir / "aliases.tsv").string(), d.aliases, d.kg);

  std::size_t utterances = 0;
  for (const auto& conv : d.conversations) utterances += conv.utterances.size();
  nlohmann::json stats{{"conversations", d.conversations.size()},
                       {"utterances", utterances},
                       {"items", d.catalog.items.size()},
                       {"linked_items", d.kg.num_items()},
                       {"entities", d.kg.num_entities()},
                       {"relations", d.kg.num_base_relations()},
                       {"triples", d.kg.triples().size()},
                       {"vocabulary", d.vocab.size()},
                       {"examples", {{"train", d.train.size()}, {"valid", d.valid.size()}, {"test", d.test.size()}}},
                       {"skipped_records", d.stats.skipped}};
  write_text(dir / "stats.json", stats.dump(2) + "\n");
  echo_config(dir, c);
  std::cout << stats.dump(2) << '\n';
}

void train_into(RunConfig& c, const fs::path& dir, const std::string& resume) {
  std::unique_ptr<CrsModel> model;
  std::optional<LoadedCheckpoint> ck;
  if (!resume.empty()) {
    ck = load_checkpoint(resume);
    model = std::move(ck->model);
    model->mutable_config().fusion = c.model.fusion;
  }
  const Dataset d = load_dataset(c.data, c.max_context_len, c.min_count, model.get());
  if (!model) model = std::make_unique<CrsModel>(c.model, d.kg, d.catalog, d.vocab, d.aliases);
  std::cout << "data: " << d.train.size() << " train / " << d.valid.size() << " valid / " << d.test.size()
            << " test examples, " << d.kg.num_entities() << " entities\n";

  Trainer trainer(*model, c.train);
  if (ck) {
    restore_training_state(*ck, trainer);
    std::cout << "resuming at update " << ck->updates << ", epoch " << ck->epochs << '\n';
  }
  std::ofstream log(dir / "metrics.jsonl", ck ? std::ios::app : std::ios::trunc);
  if (!log) throw Error("cannot write " + (dir / "metrics.jsonl").string());
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult r = trainer.fit(d.train, d.valid, &log);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (const auto& e : r.epochs) {
    std::cout << "epoch " << e.epoch << "  gen " << e.gen_loss << "  rec " << e.rec_loss;
    if (e.valid_recall) std::cout << "  valid recall@" << c.train.select_k << " " << *e.valid_recall;
    std::cout << '\n';
  }
  save_checkpoint((dir / "model.ckpt").string(), c, *model, &trainer);
  nlohmann::json summary{{"best_epoch", r.best_epoch},
                         {"updates", r.updates},
                         {"diverged", r.diverged},
                         {"seconds", secs},
                         {"best_valid_recall", r.best_recall ? nlohmann::json(*r.best_recall) : nlohmann::json(nullptr)}};
  write_text(dir / "train_summary.json", summary.dump(2) + "\n");
  echo_config(dir, c);
  std::cout << "saved " << (dir / "model.ckpt").string() << " (" << r.updates << " updates, " << secs << " s)\n";
  if (r.diverged) throw Error("training diverged; last good parameters were saved");
}

void cmd_train(const ConfigFlags& flags, const std::string& out_dir, const std::string& resume) {
  RunConfig c = flags.build();
  train_into(c, prepare_dir(out_dir), resume);
}

// Checkpoint config overlaid with any flags given on the command line.
RunConfig checkpoint_config(const LoadedCheckpoint& ck, const ConfigFlags& flags) {
  RunConfig c = ck.config;
  flags.apply(c);
  c.resolve_paths();
  c.validate();
  return c;
}

struct EvalArgs {
  std::string checkpoint, out, split = "test";
  bool generate = false;
  std::size_t max_generate = 0;
};

void cmd_eval(const ConfigFlags& flags, const EvalArgs& a) {
  LoadedCheckpoint ck = load_checkpoint(a.checkpoint);
  RunConfig c = checkpoint_config(ck, flags);
  ck.model->mutable_config().fusion = c.model.fusion;
  const Dataset d = load_dataset(c.data, c.max_context_len, c.min_count, ck.model.get());
  const auto& examples = a.split == "valid" ? d.valid : d.test;
  const fs::path dir = prepare_dir(a.out);
  EvalOptions o = eval_options(c);
  o.generate = a.generate;
  o.max_generate = a.max_generate;
  if (a.generate) o.outputs_path = (dir / "outputs.jsonl").string();
  const MetricsReport r = evaluate_model(*ck.model, d.train, examples, o);
  write_report((dir / "report.txt").string(), r);
  echo_config(dir, c);
  print_report(r);
}

struct SweepArgs {
  std::string param, grid, checkpoint, out;
  bool generate = false;
  std::size_t max_generate = 0;
};

// lambda retrains one model per value; mu and length_penalty reuse a trained
// checkpoint because they only act at inference time.
void cmd_sweep(const ConfigFlags& flags, const SweepArgs& a) {
  const std::vector<double> grid = parse_grid(a.grid);
  const fs::path dir = prepare_dir(a.out);
  std::vector<std::pair<double, MetricsReport>> rows;
  if (a.param == "lambda") {
    RunConfig base = flags.build();
    for (double v : grid) {
      RunConfig c = base;
      c.model.fusion.lambda = v;
      c.validate();
      std::ostringstream name;
      name << "lambda_" << v;
      const fs::path sub = prepare_dir((dir / name.str()).string());
      train_into(c, sub, "");
      LoadedCheckpoint ck = load_checkpoint((sub / "model.ckpt").string());
      const Dataset d = load_dataset(c.data, c.max_context_len, c.min_count, ck.model.get());
      EvalOptions o = eval_options(c);
      o.generate = a.generate;
      o.max_generate = a.max_generate;
      rows.emplace_back(v, evaluate_model(*ck.model, d.train, d.test, o));
    }
    echo_config(dir, base);
  } else if (a.param == "mu" || a.param == "length_penalty") {
    if (a.checkpoint.empty()) throw Error("sweep over " + a.param + " needs --checkpoint");
    LoadedCheckpoint ck = load_checkpoint(a.checkpoint);
    RunConfig c = checkpoint_config(ck, flags);
    const Dataset d = load_dataset(c.data, c.max_context_len, c.min_count, ck.model.get());
    for (double v : grid) {
      EvalOptions o = eval_options(c);
      FusionConfig fusion = c.model.fusion;
      if (a.param == "mu") {
        fusion.mu = v;
        fusion.validate();
        o.generate = a.generate;
      } else {
        o.decode.length_penalty = v;
        o.generate = true;
      }
      o.max_generate = a.max_generate;
      rows.emplace_back(v, evaluate_model(*ck.model, d.train, d.test, o, &fusion));
    }
    echo_config(dir, c);
  } else {
    throw Error("--param must be lambda, mu or length_penalty");
  }

  std::vector<std::string> keys;
  for (const auto& [k, v] : rows.front().second)
    if (k.rfind("cold_start", 0) != 0) keys.push_back(k);
  std::ostringstream tsv;
  tsv << a.param;
  for (const auto& k : keys) tsv << '\t' << k;
  tsv << '\n';
  for (const auto& [v, r] : rows) {
    tsv << v;
    for (const auto& k : keys) {
      auto it = r.find(k);
      tsv << '\t';
      if (it != r.end()) tsv << it->second;
    }
    tsv << '\n';
  }
  write_text(dir / "sweep.tsv", tsv.str());
  std::cout << tsv.str();
}

struct ServeArgs {
  std::string checkpoint, host = "127.0.0.1", sessions_dir;
  int port = 8080;
  std::size_t max_sessions = 1000;
};

void cmd_serve(const ConfigFlags& flags, const ServeArgs& a) {
  LoadedCheckpoint ck = load_checkpoint(a.checkpoint);
  RunConfig c = checkpoint_config(ck, flags);
  ck.model->mutable_config().fusion = c.model.fusion;
  ServiceOptions o;
  o.max_sessions = a.max_sessions;
  o.max_context_len = c.max_context_len;
  o.decode = c.decode;
  o.seed = c.model.seed;
  if (!a.sessions_dir.empty()) {
    fs::create_directories(a.sessions_dir);
    o.journal_path = (fs::path(a.sessions_dir) / "sessions.jsonl").string();
    echo_config(a.sessions_dir, c);
  }
  SessionService service(*ck.model, o);
  httplib::Server server;
  register_routes(server, service);
  std::cout << "listening on http://" << a.host << ':' << a.port << " (" << service.size() << " sessions restored)"
            << std::endl;
  if (!server.listen(a.host, a.port)) throw Error("cannot listen on " + a.host + ":" + std::to_string(a.port));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knowledge-graph conversational recommender"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s_synth = app.add_subcommand("synth", "Write a synthetic ReDial-format corpus with its graph");
  s_synth->add_option("--out", synth.out, "Output directory")->required();
  s_synth->add_option("--conversations", synth.cfg.conversations, "Number of conversations");
  s_synth->add_option("--seed", synth.cfg.seed, "Generator seed");

  ConfigFlags pre_flags;
  std::string pre_out;
  auto* s_pre = app.add_subcommand("preprocess", "Normalize a dataset into canonical files");
  pre_flags.add_to(s_pre);
  s_pre->add_option("--out", pre_out, "Output directory")->required();

  ConfigFlags train_flags;
  std::string train_out, resume;
  auto* s_train = app.add_subcommand("train", "Train a model and write a checkpoint");
  train_flags.add_to(s_train);
  s_train->add_option("--out", train_out, "Output directory")->required();
  s_train->add_option("--resume", resume, "Continue from a checkpoint")->check(CLI::ExistingFile);

  ConfigFlags eval_flags;
  EvalArgs eval;
  auto* s_eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_flags.add_to(s_eval);
  s_eval->add_option("--checkpoint", eval.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  s_eval->add_option("--out", eval.out, "Output directory")->required();
  s_eval->add_option("--split", eval.split, "test | valid")->check(CLI::IsMember({"test", "valid"}));
  s_eval->add_flag("--generate", eval.generate, "Also decode responses and score generation");
  s_eval->add_option("--max-generate", eval.max_generate, "Cap on decoded examples (0: all)");

  ConfigFlags sweep_flags;
  SweepArgs sweep;
  auto* s_sweep = app.add_subcommand("sweep", "Evaluate over a grid of one hyperparameter");
  sweep_flags.add_to(s_sweep);
  s_sweep->add_option("--param", sweep.param, "lambda | mu | length_penalty")->required();
  s_sweep->add_option("--grid", sweep.grid, "Comma-separated values")->required();
  s_sweep->add_option("--checkpoint", sweep.checkpoint, "Checkpoint for mu / length_penalty");
  s_sweep->add_option("--out", sweep.out, "Output directory")->required();
  s_sweep->add_flag("--generate", sweep.generate, "Also score generation");
  s_sweep->add_option("--max-generate", sweep.max_generate, "Cap on decoded examples (0: all)");

  ConfigFlags serve_flags;
  ServeArgs serve;
  auto* s_serve = app.add_subcommand("serve", "Serve the session HTTP API");
  serve_flags.add_to(s_serve, false);
  s_serve->add_option("--checkpoint", serve.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  s_serve->add_option("--host", serve.host, "Bind address");
  s_serve->add_option("--port", serve.port, "Port");
  s_serve->add_option("--sessions-dir", serve.sessions_dir, "Directory for the session journal");
  s_serve->add_option("--max-sessions", serve.max_sessions, "Session capacity");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (s_synth->parsed()) cmd_synth(synth);
    else if (s_pre->parsed()) cmd_preprocess(pre_flags, pre_out);
    else if (s_train->parsed()) cmd_train(train_flags, train_out, resume);
    else if (s_eval->parsed()) cmd_eval(eval_flags, eval);
    else if (s_sweep->parsed()) cmd_sweep(sweep_flags, sweep);
    else if (s_serve->parsed()) cmd_serve(serve_flags, serve);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
