// Command-line front end: prepare | train | evaluate | search | analyze | report.
//
// Every command is driven by a JSON run-config file plus one master seed; the
// seed is split per subsystem so prepare/train/evaluate stay mutually
// consistent (the validation split drawn at train time is the same one
// evaluate sees). Artifacts land in --out and embed the hash of the config
// they were produced from.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "non/analysis.hpp"
#include "non/search.hpp"
#include "non/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunConfig {
  fs::path train_path, test_path, schema_path;
  std::int64_t min_frequency = 5;
  double valid_fraction = 0.2;
  std::uint64_t seed = 0;
  non::NONConfig model;
  non::TrainConfig training;
  non::SearchSpace space;
  std::size_t n_trials = 6;
  std::size_t workers = 1;
  std::uint64_t hash = 0;  // fingerprint of the whole config document
};

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw non::ConfigError("cannot open config file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw non::ConfigError("config " + path.string() + ": " + e.what());
  }
  non::detail::reject_unknown_keys(j, {"data", "model", "training", "search"}, "config");
  if (!j.contains("data")) throw non::ConfigError("config: missing data section");

  RunConfig cfg;
  cfg.hash = non::config_hash(j);

  const json& d = j.at("data");
  non::detail::reject_unknown_keys(
      d, {"train", "test", "schema", "min_frequency", "valid_fraction", "seed"},
      "config data");
  const fs::path base = path.parent_path();
  auto resolve = [&](const char* key) {
    fs::path p = d.at(key).get<std::string>();
    return p.is_absolute() ? p : base / p;
  };
  cfg.train_path = resolve("train");
  cfg.test_path = resolve("test");
  cfg.schema_path = resolve("schema");
  if (d.contains("min_frequency")) cfg.min_frequency = d.at("min_frequency").get<std::int64_t>();
  if (d.contains("valid_fraction")) cfg.valid_fraction = d.at("valid_fraction").get<double>();
  if (d.contains("seed")) cfg.seed = d.at("seed").get<std::uint64_t>();
  if (cfg.min_frequency < 1) throw non::ConfigError("data.min_frequency must be >= 1");
  if (!(cfg.valid_fraction > 0.0 && cfg.valid_fraction < 1.0)) {
    throw non::ConfigError("data.valid_fraction must lie strictly between 0 and 1");
  }

  if (j.contains("model")) cfg.model = non::model_config_from_json(j.at("model"));
  if (j.contains("training")) cfg.training = non::train_config_from_json(j.at("training"));
  if (j.contains("search")) {
    const json& s = j.at("search");
    non::detail::reject_unknown_keys(s, {"space", "n_trials", "workers"}, "config search");
    if (s.contains("space")) cfg.space = non::search_space_from_json(s.at("space"));
    if (s.contains("n_trials")) cfg.n_trials = s.at("n_trials").get<std::size_t>();
    if (s.contains("workers")) cfg.workers = s.at("workers").get<std::size_t>();
    if (cfg.n_trials < 1) throw non::ConfigError("search.n_trials must be >= 1");
    if (cfg.workers < 1) throw non::ConfigError("search.workers must be >= 1");
  }
  cfg.model.validate();
  cfg.training.validate();
  cfg.space.validate();
  return cfg;
}

struct Artifacts {
  fs::path dir;
  fs::path vocab() const { return dir / "vocab.json"; }
  fs::path stats() const { return dir / "stats.json"; }
  fs::path checkpoint() const { return dir / "checkpoint.json"; }
  fs::path metrics() const { return dir / "metrics.jsonl"; }
  fs::path trials() const { return dir / "trials.jsonl"; }
  fs::path best_checkpoint() const { return dir / "best-checkpoint.json"; }
  fs::path similarity() const { return dir / "similarity.json"; }
  fs::path embeddings() const { return dir / "embeddings.tsv"; }
};

json read_artifact(const fs::path& p, const std::string& produced_by) {
  std::ifstream in(p);
  if (!in) {
    throw non::DataError(p.string() + " not found; run `non " + produced_by + "` first");
  }
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw non::DataError("artifact " + p.string() + " is corrupt: " + e.what());
  }
  return j;
}

void write_json_file(const fs::path& p, const json& j) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p);
  out << j.dump(2) << '\n';
  if (!out) throw non::DataError("failed to write " + p.string());
}

struct Prepared {
  non::DatasetSchema schema;
  non::Vocabulary vocab;
  non::NormalizationStats stats;
};

Prepared load_prepared(const RunConfig& cfg, const Artifacts& art) {
  Prepared p;
  p.schema = non::load_schema(cfg.schema_path.string());
  json vj = read_artifact(art.vocab(), "prepare");
  if (vj.value("format", "") != "non-vocab-v1") {
    throw non::DataError(art.vocab().string() + " is not a vocabulary artifact");
  }
  p.vocab = non::vocabulary_from_json(vj.at("vocabulary"));
  json sj = read_artifact(art.stats(), "prepare");
  if (sj.value("format", "") != "non-stats-v1") {
    throw non::DataError(art.stats().string() + " is not a statistics artifact");
  }
  p.stats = non::stats_from_json(sj.at("stats"));
  return p;
}

non::EncodedTable load_encoded(const fs::path& path, const Prepared& p) {
  auto raw = non::read_delimited_file(path.string(), p.schema.delimiter);
  return non::encode_dataset(raw, p.schema, p.vocab, p.stats);
}

non::NONModel load_model(const RunConfig& cfg, const Artifacts& art, const fs::path& file,
                         const Prepared& p, const std::string& produced_by) {
  (void)cfg;
  return non::NONModel::from_checkpoint(read_artifact(file, produced_by), p.schema, p.vocab);
}

// ---- commands ----

int cmd_prepare(const RunConfig& cfg, const Artifacts& art, bool json_lines) {
  auto schema = non::load_schema(cfg.schema_path.string());
  auto raw = non::read_delimited_file(cfg.train_path.string(), schema.delimiter);
  auto vocab = non::build_vocabulary(raw, schema, cfg.min_frequency);
  auto stats = non::compute_normalization(raw, schema);

  write_json_file(art.vocab(), {{"format", "non-vocab-v1"},
                                {"config_hash", cfg.hash},
                                {"vocabulary", non::vocabulary_to_json(vocab)}});
  write_json_file(art.stats(), {{"format", "non-stats-v1"},
                                {"config_hash", cfg.hash},
                                {"stats", non::stats_to_json(stats)}});

  if (json_lines) {
    json sizes = json::object();
    for (std::size_t f = 0; f < vocab.num_fields(); ++f) {
      sizes[vocab.field_names[f]] = vocab.values[f].size();
    }
    std::cout << json{{"event", "prepared"},
                      {"rows", raw.rows.size()},
                      {"vocab_sizes", sizes},
                      {"out", art.dir.string()}}
                     .dump()
              << '\n';
  } else {
    std::printf("prepared %zu training rows\n", raw.rows.size());
    for (std::size_t f = 0; f < vocab.num_fields(); ++f) {
      std::printf("  %s: %zu values (unknown included)\n", vocab.field_names[f].c_str(),
                  vocab.values[f].size());
    }
    std::printf("wrote %s and %s\n", art.vocab().string().c_str(),
                art.stats().string().c_str());
  }
  return 0;
}

int cmd_train(const RunConfig& cfg, const Artifacts& art, std::uint64_t master,
              bool json_lines) {
  Prepared p = load_prepared(cfg, art);
  auto table = load_encoded(cfg.train_path, p);
  auto [train, valid] =
      non::split_train_valid(table, cfg.valid_fraction,
                             non::derive_seed(master, non::seed_stream::kSplit));

  non::NONModel model(p.schema, p.vocab, cfg.model,
                      non::derive_seed(master, non::seed_stream::kInit));

  fs::create_directories(art.dir);
  std::ofstream metric_log(art.metrics());
  auto report = non::fit(model, train, valid, cfg.training,
                         non::derive_seed(master, non::seed_stream::kShuffle),
                         [&](const non::EpochRecord& r) {
                           metric_log << non::epoch_record_to_json(r).dump() << '\n';
                           if (json_lines) {
                             std::cout << non::epoch_record_to_json(r).dump() << '\n';
                           } else {
                             std::printf(
                                 "epoch %zu  train loss %.6f  valid AUC %.4f  "
                                 "alpha %.4g  (%.2fs)\n",
                                 r.epoch, r.train_loss, r.valid_auc, r.alpha, r.seconds);
                           }
                         });
  if (!metric_log) throw non::DataError("failed to write " + art.metrics().string());

  json ck = model.to_checkpoint();
  ck["config_hash"] = cfg.hash;
  write_json_file(art.checkpoint(), ck);

  if (json_lines) {
    std::cout << json{{"event", "trained"},
                      {"best_epoch", report.best_epoch},
                      {"best_valid_auc", report.best_valid_auc},
                      {"checkpoint", art.checkpoint().string()}}
                     .dump()
              << '\n';
  } else {
    std::printf("best epoch %zu  valid AUC %.4f\nwrote %s\n", report.best_epoch,
                report.best_valid_auc, art.checkpoint().string().c_str());
  }
  return 0;
}

int cmd_evaluate(const RunConfig& cfg, const Artifacts& art, std::uint64_t master,
                 const std::string& split, bool json_lines) {
  Prepared p = load_prepared(cfg, art);
  non::NONModel model = load_model(cfg, art, art.checkpoint(), p, "train");

  non::EncodedTable table;
  if (split == "test") {
    table = load_encoded(cfg.test_path, p);
  } else {
    auto full = load_encoded(cfg.train_path, p);
    auto [train, valid] =
        non::split_train_valid(full, cfg.valid_fraction,
                               non::derive_seed(master, non::seed_stream::kSplit));
    table = split == "train" ? std::move(train) : std::move(valid);
  }

  auto result = non::evaluate(model, table, cfg.training.batch_size);
  if (json_lines) {
    std::cout << json{{"split", split},
                      {"rows", table.rows()},
                      {"auc", result.auc},
                      {"log_loss", result.mean_loss}}
                     .dump()
              << '\n';
  } else {
    std::printf("%s rows: %zu\nAUC: %.4f\nlog loss: %.6f\n", split.c_str(), table.rows(),
                result.auc, result.mean_loss);
  }
  return 0;
}

std::string describe_operations(const json& trial_config) {
  std::string ops;
  for (const auto& o : trial_config.at("model").at("operations")) {
    if (!ops.empty()) ops += "+";
    ops += o.get<std::string>();
  }
  return ops;
}

int cmd_search(const RunConfig& cfg, const Artifacts& art, std::uint64_t master,
               const std::string& fix_operations, bool json_lines) {
  Prepared p = load_prepared(cfg, art);
  auto table = load_encoded(cfg.train_path, p);
  auto [train, valid] =
      non::split_train_valid(table, cfg.valid_fraction,
                             non::derive_seed(master, non::seed_stream::kSplit));
  auto test = load_encoded(cfg.test_path, p);

  non::SearchSpace space = cfg.space;
  if (!fix_operations.empty()) {
    space.fixed_operations = non::parse_operations(fix_operations);
  }

  auto result = non::run_search(space, cfg.model, cfg.training, p.schema, p.vocab, train,
                                valid, test, cfg.n_trials, cfg.workers,
                                non::derive_seed(master, non::seed_stream::kSearch));

  fs::create_directories(art.dir);
  std::ofstream trial_log(art.trials());
  for (const auto& t : result.trials) {
    trial_log << non::trial_to_json(t).dump() << '\n';
    if (json_lines) {
      std::cout << non::trial_to_json(t).dump() << '\n';
    } else if (t.failed) {
      std::printf("trial %zu  FAILED: %s\n", t.id, t.error.c_str());
    } else {
      std::printf("trial %zu  valid AUC %.4f  test AUC %.4f  ops %s  lr %.4g  d %zu\n",
                  t.id, t.valid_auc, t.test_auc, describe_operations(t.config).c_str(),
                  t.config.at("training").at("learning_rate").get<double>(),
                  t.config.at("model").at("embedding_dim").get<std::size_t>());
    }
  }
  const non::TrialRecord& best = result.trials[result.best_id];
  json summary{{"summary", true},
               {"trials", result.trials.size()},
               {"best_trial", best.id},
               {"valid_auc", best.valid_auc},
               {"test_auc", best.test_auc},
               {"config_hash", cfg.hash}};
  trial_log << summary.dump() << '\n';
  if (!trial_log) throw non::DataError("failed to write " + art.trials().string());

  // materialize the winner: the trial seed makes the refit land on the exact
  // same parameters the search run scored
  non::NONConfig best_model_cfg = non::model_config_from_json(best.config.at("model"));
  non::TrainConfig best_train_cfg = non::train_config_from_json(best.config.at("training"));
  non::NONModel model(p.schema, p.vocab, best_model_cfg,
                      non::derive_seed(best.seed, non::seed_stream::kInit));
  non::fit(model, train, valid, best_train_cfg,
           non::derive_seed(best.seed, non::seed_stream::kShuffle));
  json ck = model.to_checkpoint();
  ck["config_hash"] = cfg.hash;
  write_json_file(art.best_checkpoint(), ck);

  if (json_lines) {
    std::cout << summary.dump() << '\n';
  } else {
    std::printf("best trial %zu  valid AUC %.4f  test AUC %.4f\nwrote %s and %s\n",
                best.id, best.valid_auc, best.test_auc, art.trials().string().c_str(),
                art.best_checkpoint().string().c_str());
  }
  return 0;
}

int cmd_analyze(const RunConfig& cfg, const Artifacts& art, std::uint64_t master,
                bool allow_untrained, bool json_lines) {
  Prepared p = load_prepared(cfg, art);
  non::NONModel model = load_model(cfg, art, art.checkpoint(), p, "train");
  if (!model.trained() && !allow_untrained) {
    throw non::ConfigError(
        "checkpoint is untrained; run `non train` first or pass --allow-untrained");
  }

  const std::uint64_t seed = non::derive_seed(master, non::seed_stream::kAnalysis);
  auto report = non::field_similarity(model, 200, seed);
  write_json_file(art.similarity(), {{"format", "non-similarity-v1"},
                                     {"config_hash", cfg.hash},
                                     {"report", non::similarity_report_to_json(report)}});

  std::vector<std::string> cat_fields;
  for (const auto& f : model.fields()) {
    if (f.kind == non::FieldKind::Categorical && f.vocab_size >= 1) {
      cat_fields.push_back(f.name);
    }
  }
  fs::create_directories(art.dir);
  std::ofstream tsv(art.embeddings());
  non::export_embeddings(model, p.vocab, cat_fields, tsv, 200, seed);
  if (!tsv) throw non::DataError("failed to write " + art.embeddings().string());

  if (json_lines) {
    std::cout << non::similarity_report_to_json(report).dump() << '\n';
  } else {
    for (const auto& f : report.fields) {
      std::printf("  %s: before %.6f  after %.6f  (%zu pairs)\n", f.field.c_str(),
                  f.before, f.after, f.pairs);
    }
    for (const auto& name : report.skipped) {
      std::printf("  %s: skipped (fewer than 2 values)\n", name.c_str());
    }
    std::printf("micro average: before %.6f  after %.6f\nwrote %s and %s\n",
                report.micro_before, report.micro_after, art.similarity().string().c_str(),
                art.embeddings().string().c_str());
  }
  return 0;
}

int cmd_report(const Artifacts& art, bool json_lines) {
  std::ifstream in(art.trials());
  if (!in) {
    throw non::DataError(art.trials().string() + " not found; run `non search` first");
  }
  std::vector<json> trials;
  json summary;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw non::DataError(art.trials().string() + ":" + std::to_string(line_no) + ": " +
                           e.what());
    }
    if (j.value("summary", false)) {
      summary = j;
    } else {
      trials.push_back(j);
    }
  }
  if (trials.empty()) throw non::DataError(art.trials().string() + " holds no trials");

  std::size_t failed = 0;
  for (const auto& t : trials) {
    if (t.value("failed", false)) ++failed;
  }
  if (json_lines) {
    json out{{"event", "report"}, {"trials", trials.size()}, {"failed", failed}};
    if (!summary.is_null()) {
      out["best_trial"] = summary.at("best_trial");
      out["valid_auc"] = summary.at("valid_auc");
      out["test_auc"] = summary.at("test_auc");
    }
    std::cout << out.dump() << '\n';
    return 0;
  }

  std::printf("%-6s %-8s %-10s %-10s %-18s %-8s %s\n", "trial", "status", "valid AUC",
              "test AUC", "operations", "lr", "d");
  for (const auto& t : trials) {
    const std::size_t id = t.at("trial").get<std::size_t>();
    if (t.value("failed", false)) {
      std::printf("%-6zu %-8s %s\n", id, "failed", t.value("error", "").c_str());
      continue;
    }
    std::printf("%-6zu %-8s %-10.4f %-10.4f %-18s %-8.4g %zu\n", id, "ok",
                t.at("valid_auc").get<double>(), t.at("test_auc").get<double>(),
                describe_operations(t.at("config")).c_str(),
                t.at("config").at("training").at("learning_rate").get<double>(),
                t.at("config").at("model").at("embedding_dim").get<std::size_t>());
  }
  if (!summary.is_null()) {
    std::printf("best: trial %zu  valid AUC %.4f  test AUC %.4f\n",
                summary.at("best_trial").get<std::size_t>(),
                summary.at("valid_auc").get<double>(),
                summary.at("test_auc").get<double>());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tabular binary classifier built from field-wise networks, "
               "across-field operations, and an operation-fusion network"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "artifacts";
  std::optional<std::uint64_t> seed_flag;
  bool json_lines = false;
  std::string split = "test";
  std::string fix_operations;
  bool allow_untrained = false;

  auto add_common = [&](CLI::App* cmd, bool needs_config) {
    auto* opt = cmd->add_option("--config", config_path, "run config file (JSON)");
    if (needs_config) opt->required();
    cmd->add_option("--seed", seed_flag, "master seed (overrides the config value)");
    cmd->add_option("--out", out_dir, "artifact directory");
    cmd->add_flag("--json-lines", json_lines, "machine-readable output, one JSON per line");
  };

  auto* prepare = app.add_subcommand("prepare", "build vocabulary and normalization artifacts");
  add_common(prepare, true);
  auto* train = app.add_subcommand("train", "fit a model and write a checkpoint");
  add_common(train, true);
  auto* evaluate = app.add_subcommand("evaluate", "score a checkpoint on a split");
  add_common(evaluate, true);
  evaluate->add_option("--split", split, "train, valid, or test")
      ->check(CLI::IsMember({"train", "valid", "test"}));
  auto* search = app.add_subcommand("search", "random hyperparameter search");
  add_common(search, true);
  search->add_option("--fix-operations", fix_operations,
                     "comma list pinning the operation set, e.g. lr,dnn");
  auto* analyze = app.add_subcommand("analyze", "embedding similarity before/after field-wise");
  add_common(analyze, true);
  analyze->add_flag("--allow-untrained", allow_untrained,
                    "analyze an untrained checkpoint anyway");
  auto* report = app.add_subcommand("report", "summarize search trial records");
  add_common(report, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // usage problems are exit 1, --help is 0
  }

  try {
    Artifacts art{fs::path(out_dir)};
    if (report->parsed()) return cmd_report(art, json_lines);

    RunConfig cfg = load_run_config(config_path);
    const std::uint64_t master = seed_flag.value_or(cfg.seed);
    if (prepare->parsed()) return cmd_prepare(cfg, art, json_lines);
    if (train->parsed()) return cmd_train(cfg, art, master, json_lines);
    if (evaluate->parsed()) return cmd_evaluate(cfg, art, master, split, json_lines);
    if (search->parsed()) return cmd_search(cfg, art, master, fix_operations, json_lines);
    if (analyze->parsed()) return cmd_analyze(cfg, art, master, allow_untrained, json_lines);
    return 1;
  } catch (const non::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
