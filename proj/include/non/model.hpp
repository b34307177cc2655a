#pragma once

// The NON model: per-field embeddings, a shared-structure field-wise network
// executed as one stacked batched matmul, the across-field operation set
// (LR, DNN, Bi-Interaction, multi-head self-attention) and the operation
// fusion network producing a single logit. Auxiliary classifier heads hang
// off every hidden layer of the across-field DNN and the fusion network and
// are only evaluated when the caller asks for them (training).

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "non/config.hpp"
#include "non/data.hpp"
#include "non/rng.hpp"
#include "non/tensor.hpp"
#include "json.hpp"

namespace non {

struct ParamSlot {
  std::string name;
  Tensor tensor;
  bool regularized = false;  // participates in the L2 term
};

class NONModel {
 public:
  struct Forward {
    Tensor logit;             // [b,1]
    std::vector<Tensor> aux;  // auxiliary logits, [b,1] each
  };

  // Optional window into intermediate results for analysis and tests.
  struct Trace {
    std::vector<Tensor> embeddings;   // per field, [b,d]
    std::vector<Tensor> refined;      // per field, [b,dhat]
    std::vector<Tensor> attention;    // per head, [b,m,m] row-stochastic
    std::vector<Tensor> op_outputs;   // canonical operation order
    std::vector<Tensor> dnn_hidden;   // across-field DNN hidden states
  };

  NONModel(const DatasetSchema& schema, const Vocabulary& vocab, NONConfig config,
           std::uint64_t init_seed)
      : config_(std::move(config)), schema_hash_(schema_hash(schema, vocab)) {
    config_.validate();
    build_field_index(schema, vocab);
    Rng rng(init_seed);
    init_params(rng);
  }

  const NONConfig& config() const { return config_; }
  std::uint64_t schema_hash_value() const { return schema_hash_; }
  std::size_t num_fields() const { return fields_.size(); }
  bool trained() const { return trained_; }
  void mark_trained() { trained_ = true; }

  std::vector<ParamSlot>& params() { return params_; }
  const std::vector<ParamSlot>& params() const { return params_; }

  const Tensor& param(const std::string& name) const {
    auto it = param_index_.find(name);
    if (it == param_index_.end()) throw ConfigError("no parameter named '" + name + "'");
    return params_[it->second].tensor;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.size();
    return n;
  }

  // Dimension of each field's refined embedding.
  std::size_t refined_dim() const {
    const std::size_t d = config_.embedding_dim;
    if (!config_.field_wise.enabled()) return d;
    const std::size_t last = width_of(config_.field_wise.multipliers.back());
    switch (config_.field_wise.refine) {
      case RefineMode::None: return last;
      case RefineMode::Concat: return last + d;
      case RefineMode::Product:
      case RefineMode::Gate: return d;
    }
    return last;
  }

  Forward forward(const Batch& batch, bool with_aux, Trace* trace = nullptr) const {
    std::vector<Tensor> embeddings = embed_batch(batch);
    std::vector<Tensor> refined = field_wise(embeddings);
    if (trace) {
      trace->embeddings = embeddings;
      trace->refined = refined;
    }

    Forward out;
    std::vector<Tensor> op_outputs;
    std::vector<Tensor> dnn_hidden;
    for (Operation op : config_.operations) {
      switch (op) {
        case Operation::LR:
          op_outputs.push_back(op_linear(batch));
          break;
        case Operation::DNN:
          op_outputs.push_back(op_deep(refined, dnn_hidden));
          break;
        case Operation::BiInteraction:
          op_outputs.push_back(op_bi_interaction(refined));
          break;
        case Operation::SelfAttention:
          op_outputs.push_back(op_self_attention(refined, trace));
          break;
      }
    }
    if (trace) {
      trace->op_outputs = op_outputs;
      trace->dnn_hidden = dnn_hidden;
    }
    if (with_aux && config_.aux_dnn) {
      for (std::size_t l = 0; l < dnn_hidden.size(); ++l) {
        out.aux.push_back(matmul(dnn_hidden[l], param("dnn.aux.l" + std::to_string(l) + ".W")));
      }
    }

    Tensor x = op_outputs.size() == 1 ? op_outputs[0] : concat(op_outputs, 1);
    for (std::size_t l = 0; l < config_.fusion_widths.size(); ++l) {
      const std::string p = "fusion.l" + std::to_string(l);
      x = relu(add_bias(matmul(x, param(p + ".W")), param(p + ".b")));
      if (with_aux && config_.aux_fusion) {
        out.aux.push_back(matmul(x, param("fusion.aux.l" + std::to_string(l) + ".W")));
      }
    }
    out.logit = add_bias(matmul(x, param("fusion.out.W")), param("fusion.out.b"));
    return out;
  }

  // Plain probabilities, no tape, no auxiliary heads.
  std::vector<double> predict(const Batch& batch) const {
    Forward f = forward(batch, false);
    return sigmoid(f.logit).values();
  }

  // ---- components, exposed for oracles and analysis ----

  // Categorical field: gather columns of W_i. Numerical field: e_j = x_j * v_j.
  std::vector<Tensor> embed_batch(const Batch& batch) const {
    std::vector<Tensor> out;
    for (const auto& f : fields_) {
      if (f.kind == FieldKind::Categorical) {
        out.push_back(embedding_lookup(param("embed.cat." + f.name), batch.cat[f.slot]));
      } else {
        Tensor x = Tensor::constant({batch.size, 1}, batch.num[f.slot]);
        out.push_back(matmul(x, param("embed.num." + f.name)));
      }
    }
    return out;
  }

  // All fields share one layer structure, so the whole field-wise pass is a
  // stack of batched matmuls over [m,b,*] with one weight slice per field.
  std::vector<Tensor> field_wise(const std::vector<Tensor>& embeddings) const {
    if (!config_.field_wise.enabled()) return embeddings;
    const std::size_t m = fields_.size();
    const std::size_t b = embeddings[0].shape()[0];
    const std::size_t d = config_.embedding_dim;
    std::vector<Tensor> rows;
    for (const Tensor& e : embeddings) rows.push_back(reshape(e, {1, b, d}));
    Tensor stack = m == 1 ? rows[0] : concat(rows, 0);

    Tensor x = stack;
    for (std::size_t l = 0; l < config_.field_wise.multipliers.size(); ++l) {
      const std::string p = "fieldwise.l" + std::to_string(l);
      x = relu(add_bias(batched_matmul(x, param(p + ".W")), param(p + ".b")));
    }
    switch (config_.field_wise.refine) {
      case RefineMode::None:
        break;
      case RefineMode::Concat:
        x = concat({x, stack}, 2);
        break;
      case RefineMode::Product:
        x = mul(x, stack);
        break;
      case RefineMode::Gate: {
        Tensor both = concat({x, stack}, 2);
        Tensor g = sigmoid(add_bias(batched_matmul(both, param("fieldwise.gate.W")),
                                    param("fieldwise.gate.b")));
        Tensor ones = Tensor::full(g.shape(), 1.0);
        x = add(mul(g, x), mul(sub(ones, g), stack));
        break;
      }
    }
    const std::size_t dhat = refined_dim();
    std::vector<Tensor> refined;
    for (std::size_t f = 0; f < m; ++f)
      refined.push_back(reshape(slice_axis0(x, f), {b, dhat}));
    return refined;
  }

  // logit = bias + sum of active categorical weights + w . x over numericals;
  // raw features, not embeddings.
  Tensor op_linear(const Batch& batch) const {
    Tensor acc;
    for (const auto& f : fields_) {
      if (f.kind != FieldKind::Categorical) continue;
      Tensor w = embedding_lookup(param("lr.cat." + f.name), batch.cat[f.slot]);
      acc = acc.defined() ? add(acc, w) : w;
    }
    if (num_numerical_ > 0) {
      std::vector<double> flat(batch.size * num_numerical_);
      std::size_t col = 0;
      for (const auto& f : fields_) {
        if (f.kind != FieldKind::Numerical) continue;
        for (std::size_t i = 0; i < batch.size; ++i)
          flat[i * num_numerical_ + col] = batch.num[f.slot][i];
        ++col;
      }
      Tensor x = Tensor::constant({batch.size, num_numerical_}, std::move(flat));
      Tensor num_part = matmul(x, param("lr.num.W"));
      acc = acc.defined() ? add(acc, num_part) : num_part;
    }
    return add_bias(acc, param("lr.bias"));
  }

  // v = sum_{i<j} u_i (.) u_j via the expansion 0.5 * [(sum u)^2 - sum u^2].
  Tensor op_bi_interaction(const std::vector<Tensor>& refined) const {
    Tensor sum = refined[0];
    Tensor sq_sum = mul(refined[0], refined[0]);
    for (std::size_t f = 1; f < refined.size(); ++f) {
      sum = add(sum, refined[f]);
      sq_sum = add(sq_sum, mul(refined[f], refined[f]));
    }
    return scale(sub(mul(sum, sum), sq_sum), 0.5);
  }

  // Scaled dot-product attention over the m field positions, heads
  // concatenated, then a shared per-position output map; flattened to
  // one vector of length m * heads * head_dim per row.
  Tensor op_self_attention(const std::vector<Tensor>& refined, Trace* trace) const {
    const std::size_t m = refined.size();
    const std::size_t b = refined[0].shape()[0];
    const std::size_t dhat = refined[0].shape()[1];
    const std::size_t dp = config_.attention.head_dim;
    std::vector<Tensor> rows;
    for (const Tensor& r : refined) rows.push_back(reshape(r, {b, 1, dhat}));
    Tensor stack = m == 1 ? rows[0] : concat(rows, 1);  // [b,m,dhat]
    Tensor flat = reshape(stack, {b * m, dhat});

    std::vector<Tensor> heads;
    for (std::size_t h = 0; h < config_.attention.heads; ++h) {
      const std::string p = "attention.h" + std::to_string(h);
      Tensor q = reshape(matmul(flat, param(p + ".Wq")), {b, m, dp});
      Tensor k = reshape(matmul(flat, param(p + ".Wk")), {b, m, dp});
      Tensor v = reshape(matmul(flat, param(p + ".Wv")), {b, m, dp});
      Tensor scores = scale(batched_matmul(q, transpose(k)), 1.0 / std::sqrt(double(dp)));
      Tensor probs = softmax(scores, 2);
      if (trace) trace->attention.push_back(probs);
      heads.push_back(batched_matmul(probs, v));  // [b,m,dp]
    }
    Tensor ctx = heads.size() == 1 ? heads[0] : concat(heads, 2);  // [b,m,H*dp]
    const std::size_t hd = config_.attention.heads * dp;
    Tensor mixed = add_bias(matmul(reshape(ctx, {b * m, hd}), param("attention.Wo")),
                            param("attention.bo"));
    return reshape(mixed, {b, m * hd});
  }

  // Concatenated refined embeddings through fully connected ReLU layers,
  // hidden states retained for the auxiliary heads.
  Tensor op_deep(const std::vector<Tensor>& refined, std::vector<Tensor>& hidden) const {
    Tensor x = refined.size() == 1 ? refined[0] : concat(refined, 1);
    for (std::size_t l = 0; l < config_.dnn_widths.size(); ++l) {
      const std::string p = "dnn.l" + std::to_string(l);
      x = relu(add_bias(matmul(x, param(p + ".W")), param(p + ".b")));
      hidden.push_back(x);
    }
    return x;
  }

  // ---- checkpointing ----

  nlohmann::json to_checkpoint() const {
    nlohmann::json j;
    j["format"] = "non-checkpoint-v1";
    j["schema_hash"] = schema_hash_;
    j["trained"] = trained_;
    j["config"] = model_config_to_json(config_);
    nlohmann::json params = nlohmann::json::object();
    for (const auto& p : params_) {
      params[p.name] = {{"shape", p.tensor.shape()}, {"values", p.tensor.values()}};
    }
    j["params"] = std::move(params);
    return j;
  }

  static NONModel from_checkpoint(const nlohmann::json& j, const DatasetSchema& schema,
                                  const Vocabulary& vocab) {
    if (j.value("format", "") != "non-checkpoint-v1") {
      throw ConfigError("not a model checkpoint (bad format marker)");
    }
    NONConfig config = model_config_from_json(j.at("config"));
    NONModel model(schema, vocab, std::move(config), 0);
    const auto stored_hash = j.at("schema_hash").get<std::uint64_t>();
    if (stored_hash != model.schema_hash_) {
      throw ConfigError(
          "checkpoint schema hash mismatch: the checkpoint was produced against a "
          "different schema or vocabulary; re-run prepare and train");
    }
    const auto& pj = j.at("params");
    if (pj.size() != model.params_.size()) {
      throw ConfigError("checkpoint parameter set does not match the model");
    }
    for (auto& p : model.params_) {
      if (!pj.contains(p.name)) {
        throw ConfigError("checkpoint is missing parameter '" + p.name + "'");
      }
      const auto& entry = pj.at(p.name);
      auto shape = entry.at("shape").get<Shape>();
      auto values = entry.at("values").get<std::vector<double>>();
      if (shape != p.tensor.shape() || values.size() != p.tensor.size()) {
        throw ConfigError("checkpoint parameter '" + p.name + "' has wrong shape");
      }
      p.tensor.values() = std::move(values);
    }
    model.trained_ = j.value("trained", false);
    return model;
  }

  // Fields in schema order with their batch slots; used by analysis too.
  struct FieldInfo {
    std::string name;
    FieldKind kind;
    std::size_t slot;        // index into Batch::cat or Batch::num
    std::size_t vocab_size;  // categorical only
  };
  const std::vector<FieldInfo>& fields() const { return fields_; }

 private:
  std::size_t width_of(double multiplier) const {
    const double w = multiplier * double(config_.embedding_dim);
    const auto rounded = static_cast<std::size_t>(std::llround(w));
    return std::max<std::size_t>(rounded, 1);
  }

  void build_field_index(const DatasetSchema& schema, const Vocabulary& vocab) {
    std::size_t ci = 0, ni = 0;
    for (const auto& f : schema.fields) {
      FieldInfo info;
      info.name = f.name;
      info.kind = f.kind;
      if (f.kind == FieldKind::Categorical) {
        info.slot = ci;
        info.vocab_size = vocab.size(ci);
        ++ci;
      } else {
        info.slot = ni++;
        info.vocab_size = 0;
      }
      fields_.push_back(std::move(info));
    }
    num_numerical_ = ni;
  }

  void add_param(const std::string& name, Shape shape, std::vector<double> values,
                 bool regularized) {
    ParamSlot slot;
    slot.name = name;
    slot.tensor = Tensor::parameter(std::move(shape), std::move(values));
    slot.regularized = regularized;
    param_index_[name] = params_.size();
    params_.push_back(std::move(slot));
  }

  std::vector<double> glorot(Rng& rng, std::size_t fan_in, std::size_t fan_out,
                             std::size_t count) {
    const double limit = std::sqrt(6.0 / double(fan_in + fan_out));
    std::vector<double> v(count);
    for (double& x : v) x = rng.uniform(-limit, limit);
    return v;
  }

  void init_params(Rng& rng) {
    const std::size_t d = config_.embedding_dim;
    const std::size_t m = fields_.size();

    for (const auto& f : fields_) {
      if (f.kind == FieldKind::Categorical) {
        std::vector<double> v(d * f.vocab_size);
        for (double& x : v) x = rng.uniform(-0.01, 0.01);
        add_param("embed.cat." + f.name, {d, f.vocab_size}, std::move(v), false);
      } else {
        std::vector<double> v(d);
        for (double& x : v) x = rng.uniform(-0.01, 0.01);
        add_param("embed.num." + f.name, {1, d}, std::move(v), false);
      }
    }

    if (config_.field_wise.enabled()) {
      std::size_t in = d;
      for (std::size_t l = 0; l < config_.field_wise.multipliers.size(); ++l) {
        const std::size_t out = width_of(config_.field_wise.multipliers[l]);
        const std::string p = "fieldwise.l" + std::to_string(l);
        add_param(p + ".W", {m, in, out}, glorot(rng, in, out, m * in * out), true);
        add_param(p + ".b", {m, 1, out}, std::vector<double>(m * out, 0.0), false);
        in = out;
      }
      if (config_.field_wise.refine == RefineMode::Gate) {
        add_param("fieldwise.gate.W", {m, 2 * d, d}, glorot(rng, 2 * d, d, m * 2 * d * d),
                  true);
        add_param("fieldwise.gate.b", {m, 1, d}, std::vector<double>(m * d, 0.0), false);
      }
    }

    const std::size_t dhat = refined_dim();
    for (Operation op : config_.operations) {
      switch (op) {
        case Operation::LR: {
          for (const auto& f : fields_) {
            if (f.kind != FieldKind::Categorical) continue;
            add_param("lr.cat." + f.name, {1, f.vocab_size},
                      std::vector<double>(f.vocab_size, 0.0), false);
          }
          if (num_numerical_ > 0) {
            add_param("lr.num.W", {num_numerical_, 1},
                      std::vector<double>(num_numerical_, 0.0), true);
          }
          add_param("lr.bias", {1}, {0.0}, false);
          break;
        }
        case Operation::DNN: {
          std::size_t in = m * dhat;
          for (std::size_t l = 0; l < config_.dnn_widths.size(); ++l) {
            const std::size_t out = config_.dnn_widths[l];
            const std::string p = "dnn.l" + std::to_string(l);
            add_param(p + ".W", {in, out}, glorot(rng, in, out, in * out), true);
            add_param(p + ".b", {out}, std::vector<double>(out, 0.0), false);
            in = out;
          }
          if (config_.aux_dnn) {
            for (std::size_t l = 0; l < config_.dnn_widths.size(); ++l) {
              const std::size_t h = config_.dnn_widths[l];
              add_param("dnn.aux.l" + std::to_string(l) + ".W", {h, 1},
                        glorot(rng, h, 1, h), false);
            }
          }
          break;
        }
        case Operation::BiInteraction:
          break;  // parameter-free
        case Operation::SelfAttention: {
          const std::size_t dp = config_.attention.head_dim;
          for (std::size_t h = 0; h < config_.attention.heads; ++h) {
            const std::string p = "attention.h" + std::to_string(h);
            add_param(p + ".Wq", {dhat, dp}, glorot(rng, dhat, dp, dhat * dp), true);
            add_param(p + ".Wk", {dhat, dp}, glorot(rng, dhat, dp, dhat * dp), true);
            add_param(p + ".Wv", {dhat, dp}, glorot(rng, dhat, dp, dhat * dp), true);
          }
          const std::size_t hd = config_.attention.heads * dp;
          add_param("attention.Wo", {hd, hd}, glorot(rng, hd, hd, hd * hd), true);
          add_param("attention.bo", {hd}, std::vector<double>(hd, 0.0), false);
          break;
        }
      }
    }

    std::size_t fusion_in = 0;
    for (Operation op : config_.operations) fusion_in += operation_output_dim(op);
    std::size_t in = fusion_in;
    for (std::size_t l = 0; l < config_.fusion_widths.size(); ++l) {
      const std::size_t out = config_.fusion_widths[l];
      const std::string p = "fusion.l" + std::to_string(l);
      add_param(p + ".W", {in, out}, glorot(rng, in, out, in * out), true);
      add_param(p + ".b", {out}, std::vector<double>(out, 0.0), false);
      if (config_.aux_fusion) {
        add_param("fusion.aux.l" + std::to_string(l) + ".W", {out, 1},
                  glorot(rng, out, 1, out), false);
      }
      in = out;
    }
    add_param("fusion.out.W", {in, 1}, glorot(rng, in, 1, in), true);
    add_param("fusion.out.b", {1}, {0.0}, false);
  }

 public:
  std::size_t operation_output_dim(Operation op) const {
    switch (op) {
      case Operation::LR: return 1;
      case Operation::DNN: return config_.dnn_widths.back();
      case Operation::BiInteraction: return refined_dim();
      case Operation::SelfAttention:
        return fields_.size() * config_.attention.heads * config_.attention.head_dim;
    }
    return 0;
  }

 private:
  NONConfig config_;
  std::uint64_t schema_hash_ = 0;
  bool trained_ = false;
  std::vector<FieldInfo> fields_;
  std::size_t num_numerical_ = 0;
  std::vector<ParamSlot> params_;
  std::map<std::string, std::size_t> param_index_;
};

}  // namespace non
