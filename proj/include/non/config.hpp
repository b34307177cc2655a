#pragma once

// Model and training configuration plus JSON (de)serialization. Parsers
// reject unknown keys so config typos fail loudly instead of silently
// falling back to defaults.

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "non/data.hpp"
#include "json.hpp"

namespace non {

enum class RefineMode { None, Concat, Product, Gate };

inline std::string refine_name(RefineMode m) {
  switch (m) {
    case RefineMode::None: return "none";
    case RefineMode::Concat: return "concat";
    case RefineMode::Product: return "product";
    case RefineMode::Gate: return "gate";
  }
  return "none";
}

inline RefineMode refine_from_name(const std::string& name) {
  if (name == "none") return RefineMode::None;
  if (name == "concat") return RefineMode::Concat;
  if (name == "product") return RefineMode::Product;
  if (name == "gate") return RefineMode::Gate;
  throw ConfigError("unknown refinement mode '" + name + "'");
}

// Canonical order doubles as the fusion concat order.
enum class Operation { LR = 0, DNN = 1, BiInteraction = 2, SelfAttention = 3 };

inline std::string operation_name(Operation op) {
  switch (op) {
    case Operation::LR: return "lr";
    case Operation::DNN: return "dnn";
    case Operation::BiInteraction: return "bi";
    case Operation::SelfAttention: return "attention";
  }
  return "dnn";
}

inline Operation operation_from_name(const std::string& name) {
  if (name == "lr") return Operation::LR;
  if (name == "dnn") return Operation::DNN;
  if (name == "bi") return Operation::BiInteraction;
  if (name == "attention") return Operation::SelfAttention;
  throw ConfigError("unknown operation '" + name + "' (expected lr, dnn, bi, attention)");
}

// Normalizes to canonical order, deduplicates, requires DNN.
inline std::vector<Operation> normalize_operations(std::vector<Operation> ops) {
  std::sort(ops.begin(), ops.end());
  ops.erase(std::unique(ops.begin(), ops.end()), ops.end());
  if (std::find(ops.begin(), ops.end(), Operation::DNN) == ops.end()) {
    throw ConfigError("operation set must contain dnn");
  }
  return ops;
}

// Comma-separated list, e.g. "lr,dnn" (the --fix-operations format).
inline std::vector<Operation> parse_operations(const std::string& list) {
  std::vector<Operation> ops;
  std::string cur;
  for (char ch : list + ",") {
    if (ch == ',') {
      if (!cur.empty()) ops.push_back(operation_from_name(cur));
      cur.clear();
    } else if (!std::isspace(static_cast<unsigned char>(ch))) {
      cur.push_back(ch);
    }
  }
  if (ops.empty()) throw ConfigError("empty operation list");
  return normalize_operations(ops);
}

struct FieldWiseSpec {
  std::vector<double> multipliers;  // layer widths as multiples of d; empty = off
  RefineMode refine = RefineMode::None;

  bool enabled() const { return !multipliers.empty(); }
};

struct AttentionSpec {
  std::size_t heads = 2;
  std::size_t head_dim = 8;  // d' per head
};

struct NONConfig {
  std::size_t embedding_dim = 16;  // d
  FieldWiseSpec field_wise{{1.0}, RefineMode::None};
  std::vector<Operation> operations{Operation::DNN};
  std::vector<std::size_t> dnn_widths{64, 64};
  AttentionSpec attention;
  std::vector<std::size_t> fusion_widths{64};  // hidden layers; empty = one linear layer
  bool aux_dnn = true;
  bool aux_fusion = true;

  bool has(Operation op) const {
    return std::find(operations.begin(), operations.end(), op) != operations.end();
  }

  void validate() const {
    if (embedding_dim < 1) throw ConfigError("embedding_dim must be >= 1");
    if (operations.empty() || !has(Operation::DNN)) {
      throw ConfigError("operation set must contain dnn");
    }
    if (dnn_widths.empty()) throw ConfigError("dnn_widths must have at least one layer");
    for (std::size_t w : dnn_widths)
      if (w < 1) throw ConfigError("dnn widths must be >= 1");
    for (std::size_t w : fusion_widths)
      if (w < 1) throw ConfigError("fusion widths must be >= 1");
    for (double m : field_wise.multipliers)
      if (!(m > 0.0)) throw ConfigError("field-wise multipliers must be positive");
    if (!field_wise.enabled() && field_wise.refine != RefineMode::None) {
      throw ConfigError("refinement requires at least one field-wise layer");
    }
    if (field_wise.enabled() &&
        (field_wise.refine == RefineMode::Product || field_wise.refine == RefineMode::Gate)) {
      // product/gate combine e' with e elementwise, so the last layer must map back to d
      const double last = field_wise.multipliers.back();
      if (last != 1.0) {
        throw ConfigError("refine mode " + refine_name(field_wise.refine) +
                          " requires the last field-wise multiplier to be 1.0");
      }
    }
    if (has(Operation::SelfAttention)) {
      if (attention.heads < 1 || attention.head_dim < 1) {
        throw ConfigError("attention requires heads >= 1 and head_dim >= 1");
      }
    }
  }
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j,
                                const std::vector<std::string>& known,
                                const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
      throw ConfigError("unknown key '" + it.key() + "' in " + where);
    }
  }
}

}  // namespace detail

inline nlohmann::json model_config_to_json(const NONConfig& c) {
  nlohmann::json j;
  j["embedding_dim"] = c.embedding_dim;
  j["field_wise"] = {{"multipliers", c.field_wise.multipliers},
                     {"refine", refine_name(c.field_wise.refine)}};
  std::vector<std::string> ops;
  for (Operation op : c.operations) ops.push_back(operation_name(op));
  j["operations"] = ops;
  j["dnn_widths"] = c.dnn_widths;
  j["attention"] = {{"heads", c.attention.heads}, {"head_dim", c.attention.head_dim}};
  j["fusion_widths"] = c.fusion_widths;
  j["aux_dnn"] = c.aux_dnn;
  j["aux_fusion"] = c.aux_fusion;
  return j;
}

inline NONConfig model_config_from_json(const nlohmann::json& j) {
  detail::reject_unknown_keys(j,
                              {"embedding_dim", "field_wise", "operations", "dnn_widths",
                               "attention", "fusion_widths", "aux_dnn", "aux_fusion"},
                              "model config");
  NONConfig c;
  if (j.contains("embedding_dim")) c.embedding_dim = j["embedding_dim"].get<std::size_t>();
  if (j.contains("field_wise")) {
    const auto& fj = j["field_wise"];
    detail::reject_unknown_keys(fj, {"multipliers", "refine"}, "field_wise");
    c.field_wise.multipliers = fj.value("multipliers", c.field_wise.multipliers);
    if (fj.contains("refine"))
      c.field_wise.refine = refine_from_name(fj["refine"].get<std::string>());
  }
  if (j.contains("operations")) {
    std::vector<Operation> ops;
    for (const auto& name : j["operations"])
      ops.push_back(operation_from_name(name.get<std::string>()));
    c.operations = normalize_operations(std::move(ops));
  }
  if (j.contains("dnn_widths")) c.dnn_widths = j["dnn_widths"].get<std::vector<std::size_t>>();
  if (j.contains("attention")) {
    const auto& aj = j["attention"];
    detail::reject_unknown_keys(aj, {"heads", "head_dim"}, "attention");
    c.attention.heads = aj.value("heads", c.attention.heads);
    c.attention.head_dim = aj.value("head_dim", c.attention.head_dim);
  }
  if (j.contains("fusion_widths"))
    c.fusion_widths = j["fusion_widths"].get<std::vector<std::size_t>>();
  if (j.contains("aux_dnn")) c.aux_dnn = j["aux_dnn"].get<bool>();
  if (j.contains("aux_fusion")) c.aux_fusion = j["aux_fusion"].get<bool>();
  c.validate();
  return c;
}

// nlohmann keeps object keys sorted, so dump() is a canonical rendering.
inline std::uint64_t config_hash(const nlohmann::json& j) { return fnv1a(j.dump()); }

struct TrainConfig {
  double learning_rate = 0.1;
  std::size_t batch_size = 256;
  std::size_t epochs = 20;
  std::size_t patience = 3;
  double alpha = 0.0;                   // auxiliary loss coefficient
  std::vector<double> alpha_per_layer;  // optional per-head override of alpha
  double alpha_decay = 1.0;             // per-epoch multiplier rho
  double l2 = 0.0;                      // gamma

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (alpha < 0.0) throw ConfigError("alpha must be >= 0");
    for (double a : alpha_per_layer)
      if (a < 0.0) throw ConfigError("alpha_per_layer entries must be >= 0");
    if (!(alpha_decay > 0.0 && alpha_decay <= 1.0)) {
      throw ConfigError("alpha_decay must lie in (0, 1]");
    }
    if (l2 < 0.0) throw ConfigError("l2 must be >= 0");
  }
};

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
          {"epochs", c.epochs},               {"patience", c.patience},
          {"alpha", c.alpha},                 {"alpha_per_layer", c.alpha_per_layer},
          {"alpha_decay", c.alpha_decay},     {"l2", c.l2}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  detail::reject_unknown_keys(j,
                              {"learning_rate", "batch_size", "epochs", "patience",
                               "alpha", "alpha_per_layer", "alpha_decay", "l2"},
                              "training config");
  TrainConfig c;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.patience = j.value("patience", c.patience);
  c.alpha = j.value("alpha", c.alpha);
  c.alpha_per_layer = j.value("alpha_per_layer", c.alpha_per_layer);
  c.alpha_decay = j.value("alpha_decay", c.alpha_decay);
  c.l2 = j.value("l2", c.l2);
  c.validate();
  return c;
}

}  // namespace non
