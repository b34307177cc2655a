#pragma once

// Random hyperparameter search. Every trial derives its own seed from the
// master seed and the trial id, samples a configuration in a fixed draw
// order, trains an independent model and records validation/test AUC, so a
// search is reproducible bit for bit regardless of worker count or
// execution order.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "non/config.hpp"
#include "non/data.hpp"
#include "non/model.hpp"
#include "non/rng.hpp"
#include "non/training.hpp"
#include "json.hpp"

namespace non {

class SearchError : public std::runtime_error {
 public:
  explicit SearchError(const std::string& what) : std::runtime_error(what) {}
};

struct SearchSpace {
  std::pair<double, double> learning_rate{0.05, 0.5};  // sampled log-uniformly
  std::vector<std::size_t> embedding_dims{8, 16, 32, 64, 128};
  std::vector<std::size_t> dnn_widths{64, 128, 256, 512, 1024, 2048};
  std::size_t max_dnn_depth = 4;
  std::vector<double> fieldwise_multipliers{0.5, 1.0, 1.5, 2.0, 3.0};
  std::size_t max_fieldwise_depth = 4;
  std::pair<double, double> alpha{0.1, 1.0};
  std::pair<double, double> gamma{1e-5, 1e-4};
  std::optional<std::vector<Operation>> fixed_operations;
  bool disable_field_wise = false;  // ablation switch; otherwise depth >= 1

  void validate() const {
    auto range_ok = [](std::pair<double, double> r) {
      return r.first > 0.0 && r.second >= r.first;
    };
    if (!range_ok(learning_rate)) throw ConfigError("bad learning_rate range");
    if (!(alpha.second >= alpha.first && alpha.first >= 0.0)) {
      throw ConfigError("bad alpha range");
    }
    if (!range_ok(gamma)) throw ConfigError("bad gamma range");
    if (embedding_dims.empty() || dnn_widths.empty() || fieldwise_multipliers.empty()) {
      throw ConfigError("search space sets must be nonempty");
    }
    if (max_dnn_depth < 1 || max_fieldwise_depth < 1) {
      throw ConfigError("search depths must be >= 1");
    }
  }
};

// The 7 operation sets: every nonempty subset of {LR, BI, ATT}, plus DNN.
inline std::vector<std::vector<Operation>> operation_combinations() {
  const std::vector<Operation> extras{Operation::LR, Operation::BiInteraction,
                                      Operation::SelfAttention};
  std::vector<std::vector<Operation>> combos;
  for (unsigned mask = 1; mask < 8; ++mask) {
    std::vector<Operation> ops{Operation::DNN};
    for (unsigned b = 0; b < 3; ++b) {
      if (mask & (1u << b)) ops.push_back(extras[b]);
    }
    combos.push_back(normalize_operations(std::move(ops)));
  }
  return combos;
}

// One full draw from the space. The draw order is part of the format: any
// change breaks reproducibility of recorded trials.
inline std::pair<NONConfig, TrainConfig> sample_config(const SearchSpace& space,
                                                       const NONConfig& base_model,
                                                       const TrainConfig& base_train,
                                                       Rng& rng) {
  space.validate();
  NONConfig model = base_model;
  TrainConfig train = base_train;

  train.learning_rate = rng.log_uniform(space.learning_rate.first, space.learning_rate.second);
  model.embedding_dim = space.embedding_dims[rng.index(space.embedding_dims.size())];

  const std::size_t dnn_depth = 1 + rng.index(space.max_dnn_depth);
  model.dnn_widths.clear();
  for (std::size_t l = 0; l < dnn_depth; ++l) {
    model.dnn_widths.push_back(space.dnn_widths[rng.index(space.dnn_widths.size())]);
  }

  if (space.disable_field_wise) {
    model.field_wise.multipliers.clear();
    model.field_wise.refine = RefineMode::None;
  } else {
    const std::size_t fw_depth = 1 + rng.index(space.max_fieldwise_depth);
    model.field_wise.multipliers.clear();
    for (std::size_t l = 0; l < fw_depth; ++l) {
      model.field_wise.multipliers.push_back(
          space.fieldwise_multipliers[rng.index(space.fieldwise_multipliers.size())]);
    }
    if (model.field_wise.refine == RefineMode::Product ||
        model.field_wise.refine == RefineMode::Gate) {
      model.field_wise.multipliers.back() = 1.0;  // must map back to d
    }
  }

  train.alpha = rng.uniform(space.alpha.first, space.alpha.second);
  train.l2 = rng.uniform(space.gamma.first, space.gamma.second);

  if (space.fixed_operations) {
    model.operations = *space.fixed_operations;
  } else {
    auto combos = operation_combinations();
    model.operations = combos[rng.index(combos.size())];
  }
  model.validate();
  return {model, train};
}

struct TrialRecord {
  std::size_t id = 0;
  std::uint64_t seed = 0;
  nlohmann::json config;  // sampled model + training sections
  bool failed = false;
  std::string error;
  double valid_auc = 0.0;
  double test_auc = 0.0;
  std::size_t epochs_run = 0;
  double seconds = 0.0;
};

struct SearchResult {
  std::vector<TrialRecord> trials;
  std::size_t best_id = 0;  // argmax validation AUC over successful trials
};

inline nlohmann::json trial_to_json(const TrialRecord& t) {
  nlohmann::json j{{"trial", t.id},       {"seed", t.seed},
                   {"config", t.config},  {"failed", t.failed},
                   {"valid_auc", t.valid_auc}, {"test_auc", t.test_auc},
                   {"epochs_run", t.epochs_run}, {"elapsed_s", t.seconds}};
  if (t.failed) j["error"] = t.error;
  return j;
}

inline SearchResult run_search(const SearchSpace& space, const NONConfig& base_model,
                               const TrainConfig& base_train, const DatasetSchema& schema,
                               const Vocabulary& vocab, const EncodedTable& train,
                               const EncodedTable& valid, const EncodedTable& test,
                               std::size_t n_trials, std::size_t workers,
                               std::uint64_t master_seed) {
  if (n_trials < 1) throw ConfigError("n_trials must be >= 1");
  if (workers < 1) workers = 1;
  space.validate();

  SearchResult result;
  result.trials.resize(n_trials);

  auto run_trial = [&](std::size_t id) {
    TrialRecord& rec = result.trials[id];
    rec.id = id;
    rec.seed = derive_seed(master_seed, id);
    const auto started = std::chrono::steady_clock::now();
    try {
      Rng rng(rec.seed);
      auto [model_cfg, train_cfg] = sample_config(space, base_model, base_train, rng);
      rec.config = {{"model", model_config_to_json(model_cfg)},
                    {"training", train_config_to_json(train_cfg)}};
      NONModel model(schema, vocab, model_cfg, derive_seed(rec.seed, seed_stream::kInit));
      FitReport fit_report =
          fit(model, train, valid, train_cfg, derive_seed(rec.seed, seed_stream::kShuffle));
      rec.valid_auc = fit_report.best_valid_auc;
      rec.epochs_run = fit_report.epochs.size();
      rec.test_auc = evaluate(model, test, train_cfg.batch_size).auc;
    } catch (const std::exception& e) {
      rec.failed = true;
      rec.error = e.what();
    }
    rec.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  };

  if (workers == 1 || n_trials == 1) {
    for (std::size_t id = 0; id < n_trials; ++id) run_trial(id);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    const std::size_t n_workers = std::min(workers, n_trials);
    pool.reserve(n_workers);
    for (std::size_t w = 0; w < n_workers; ++w) {
      pool.emplace_back([&]() {
        for (std::size_t id = next.fetch_add(1); id < n_trials; id = next.fetch_add(1)) {
          run_trial(id);
        }
      });
    }
    for (auto& t : pool) t.join();
  }

  bool any_ok = false;
  for (const TrialRecord& t : result.trials) {
    if (t.failed) continue;
    if (!any_ok || t.valid_auc > result.trials[result.best_id].valid_auc) {
      result.best_id = t.id;
    }
    any_ok = true;
  }
  if (!any_ok) {
    std::string summary = "all " + std::to_string(n_trials) + " trials failed:";
    for (const TrialRecord& t : result.trials) {
      summary += "\n  trial " + std::to_string(t.id) + ": " + t.error;
    }
    throw SearchError(summary);
  }
  return result;
}

inline nlohmann::json search_space_to_json(const SearchSpace& s) {
  nlohmann::json j;
  j["learning_rate"] = {s.learning_rate.first, s.learning_rate.second};
  j["embedding_dims"] = s.embedding_dims;
  j["dnn_widths"] = s.dnn_widths;
  j["max_dnn_depth"] = s.max_dnn_depth;
  j["fieldwise_multipliers"] = s.fieldwise_multipliers;
  j["max_fieldwise_depth"] = s.max_fieldwise_depth;
  j["alpha"] = {s.alpha.first, s.alpha.second};
  j["gamma"] = {s.gamma.first, s.gamma.second};
  j["disable_field_wise"] = s.disable_field_wise;
  if (s.fixed_operations) {
    std::vector<std::string> names;
    for (Operation op : *s.fixed_operations) names.push_back(operation_name(op));
    j["fixed_operations"] = names;
  }
  return j;
}

inline SearchSpace search_space_from_json(const nlohmann::json& j) {
  detail::reject_unknown_keys(j,
                              {"learning_rate", "embedding_dims", "dnn_widths",
                               "max_dnn_depth", "fieldwise_multipliers",
                               "max_fieldwise_depth", "alpha", "gamma",
                               "disable_field_wise", "fixed_operations"},
                              "search space");
  SearchSpace s;
  auto read_range = [&](const char* key, std::pair<double, double>& out) {
    if (!j.contains(key)) return;
    auto v = j[key].get<std::vector<double>>();
    if (v.size() != 2) throw ConfigError(std::string(key) + " must be [lo, hi]");
    out = {v[0], v[1]};
  };
  read_range("learning_rate", s.learning_rate);
  read_range("alpha", s.alpha);
  read_range("gamma", s.gamma);
  if (j.contains("embedding_dims"))
    s.embedding_dims = j["embedding_dims"].get<std::vector<std::size_t>>();
  if (j.contains("dnn_widths"))
    s.dnn_widths = j["dnn_widths"].get<std::vector<std::size_t>>();
  s.max_dnn_depth = j.value("max_dnn_depth", s.max_dnn_depth);
  if (j.contains("fieldwise_multipliers"))
    s.fieldwise_multipliers = j["fieldwise_multipliers"].get<std::vector<double>>();
  s.max_fieldwise_depth = j.value("max_fieldwise_depth", s.max_fieldwise_depth);
  s.disable_field_wise = j.value("disable_field_wise", s.disable_field_wise);
  if (j.contains("fixed_operations")) {
    std::vector<Operation> ops;
    for (const auto& name : j["fixed_operations"])
      ops.push_back(operation_from_name(name.get<std::string>()));
    s.fixed_operations = normalize_operations(std::move(ops));
  }
  s.validate();
  return s;
}

}  // namespace non
