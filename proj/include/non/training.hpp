#pragma once

// Loss construction (binary cross entropy + auxiliary losses + L2), the
// Adagrad optimizer and the epoch loop with validation-AUC model selection.
// Auxiliary heads contribute to training only; evaluation runs the plain
// forward pass.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "non/config.hpp"
#include "non/data.hpp"
#include "non/metrics.hpp"
#include "non/model.hpp"
#include "non/rng.hpp"
#include "non/tensor.hpp"

namespace non {

class TrainError : public std::runtime_error {
 public:
  explicit TrainError(const std::string& what) : std::runtime_error(what) {}
};

constexpr double kBceClamp = 1e-12;

// Mean of -[y log p + (1-y) log(1-p)] with p = sigmoid(logit); log arguments
// clamped so saturated probabilities cannot produce infinities.
inline Tensor bce(const Tensor& logit, const Tensor& labels, double eps = kBceClamp) {
  Tensor p = sigmoid(logit);
  Tensor ones = Tensor::full(p.shape(), 1.0);
  std::vector<double> inv(labels.size());
  for (std::size_t i = 0; i < inv.size(); ++i) inv[i] = 1.0 - labels.values()[i];
  Tensor y = reshape(labels, p.shape());
  Tensor y_inv = Tensor::constant(p.shape(), std::move(inv));
  Tensor pos = mul(y, log_clamped(p, eps));
  Tensor neg = mul(y_inv, log_clamped(sub(ones, p), eps));
  return scale(reduce_mean(add(pos, neg)), -1.0);
}

inline double alpha_at(const TrainConfig& cfg, std::size_t epoch) {
  return cfg.alpha * std::pow(cfg.alpha_decay, double(epoch));
}

// l(y', y) + alpha_epoch * sum_i l(aux_i, y) + gamma * ||W||^2 over the
// regularized parameter set (fully connected and attention weights; biases
// and embedding tables excluded).
inline Tensor total_loss(const NONModel::Forward& f, const Tensor& labels,
                         const std::vector<ParamSlot>& params, const TrainConfig& cfg,
                         std::size_t epoch) {
  Tensor loss = bce(f.logit, labels);
  if (!cfg.alpha_per_layer.empty() && cfg.alpha_per_layer.size() != f.aux.size()) {
    throw TrainError("alpha_per_layer has " + std::to_string(cfg.alpha_per_layer.size()) +
                     " entries but the model has " + std::to_string(f.aux.size()) +
                     " auxiliary heads");
  }
  const double decay = std::pow(cfg.alpha_decay, double(epoch));
  for (std::size_t i = 0; i < f.aux.size(); ++i) {
    const double coef =
        (cfg.alpha_per_layer.empty() ? cfg.alpha : cfg.alpha_per_layer[i]) * decay;
    if (coef > 0.0) loss = add(loss, scale(bce(f.aux[i], labels), coef));
  }
  if (cfg.l2 > 0.0) {
    for (const auto& p : params) {
      if (!p.regularized) continue;
      loss = add(loss, scale(reduce_sum(mul(p.tensor, p.tensor)), cfg.l2));
    }
  }
  return loss;
}

class Adagrad {
 public:
  explicit Adagrad(double learning_rate, double eps = 1e-10)
      : lr_(learning_rate), eps_(eps) {}

  // acc += g^2; theta -= lr * g / (sqrt(acc) + eps). Elements with zero
  // gradient (e.g. embedding columns untouched by the batch) stay put and
  // keep their accumulator.
  void step(std::vector<ParamSlot>& params) {
    if (acc_.empty()) {
      for (const auto& p : params) acc_.emplace_back(p.tensor.size(), 0.0);
    }
    if (acc_.size() != params.size()) {
      throw TrainError("optimizer state does not match the parameter set");
    }
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      auto& values = params[pi].tensor.values();
      const auto& grad = params[pi].tensor.grad();
      auto& acc = acc_[pi];
      for (std::size_t i = 0; i < values.size(); ++i) {
        const double g = grad[i];
        if (g == 0.0) continue;
        acc[i] += g * g;
        values[i] -= lr_ * g / (std::sqrt(acc[i]) + eps_);
      }
    }
  }

  const std::vector<double>& accumulator(std::size_t param_index) const {
    return acc_.at(param_index);
  }

 private:
  double lr_;
  double eps_;
  std::vector<std::vector<double>> acc_;
};

struct EvalResult {
  double auc = 0.0;
  double mean_loss = 0.0;
};

// Inference-mode AUC and mean bce over a table; deterministic batching.
inline EvalResult evaluate(const NONModel& model, const EncodedTable& table,
                           std::size_t batch_size = 256) {
  std::vector<double> scores, labels;
  scores.reserve(table.rows());
  labels.reserve(table.rows());
  double loss_sum = 0.0;
  for (const Batch& batch : make_batches(table, batch_size, false, 0)) {
    std::vector<double> probs = model.predict(batch);
    for (std::size_t i = 0; i < batch.size; ++i) {
      const double p = probs[i], y = batch.labels[i];
      loss_sum -= y * std::log(std::max(p, kBceClamp)) +
                  (1.0 - y) * std::log(std::max(1.0 - p, kBceClamp));
      scores.push_back(p);
      labels.push_back(y);
    }
  }
  EvalResult r;
  r.auc = auc(scores, labels);
  r.mean_loss = loss_sum / double(table.rows());
  return r;
}

// One pass over pre-built batches; returns the size-weighted mean loss.
inline double train_epoch(NONModel& model, const std::vector<Batch>& batches,
                          const TrainConfig& cfg, std::size_t epoch, Adagrad& opt) {
  double loss_sum = 0.0;
  std::size_t rows = 0;
  for (std::size_t bi = 0; bi < batches.size(); ++bi) {
    const Batch& batch = batches[bi];
    Tensor labels = Tensor::constant({batch.size, 1}, batch.labels);
    Tape tape;
    NONModel::Forward f = model.forward(batch, true);
    Tensor loss = total_loss(f, labels, model.params(), cfg, epoch);
    if (!std::isfinite(loss.scalar_value())) {
      throw TrainError("loss became non-finite at epoch " + std::to_string(epoch) +
                       ", batch " + std::to_string(bi) +
                       "; reduce the learning rate or check the data");
    }
    for (auto& p : model.params()) p.tensor.zero_grad();
    tape.backward(loss);
    opt.step(model.params());
    loss_sum += loss.scalar_value() * double(batch.size);
    rows += batch.size;
  }
  return rows ? loss_sum / double(rows) : 0.0;
}

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based in reports
  double train_loss = 0.0;
  double valid_auc = 0.0;
  double alpha = 0.0;
  double seconds = 0.0;
};

struct FitReport {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // 1-based
  double best_valid_auc = 0.0;
};

// Epoch loop: shuffle, train, score validation AUC, keep the best parameter
// snapshot, stop after `patience` epochs without improvement. The model ends
// up holding the best-epoch parameters.
inline FitReport fit(NONModel& model, const EncodedTable& train,
                     const EncodedTable& valid, const TrainConfig& cfg,
                     std::uint64_t shuffle_seed,
                     const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  cfg.validate();
  Adagrad opt(cfg.learning_rate);
  FitReport report;
  std::vector<std::vector<double>> best_params;
  std::size_t stale = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    auto batches = make_batches(train, cfg.batch_size, true,
                                derive_seed(shuffle_seed, epoch));
    const double train_loss = train_epoch(model, batches, cfg, epoch, opt);
    const double valid_auc = evaluate(model, valid, cfg.batch_size).auc;

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.train_loss = train_loss;
    rec.valid_auc = valid_auc;
    rec.alpha = alpha_at(cfg, epoch);
    rec.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    report.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (report.epochs.size() == 1 || valid_auc > report.best_valid_auc) {
      report.best_valid_auc = valid_auc;
      report.best_epoch = rec.epoch;
      best_params.clear();
      for (const auto& p : model.params()) best_params.push_back(p.tensor.values());
      stale = 0;
    } else {
      if (++stale >= cfg.patience) break;
    }
  }
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    model.params()[i].tensor.values() = best_params[i];
  }
  model.mark_trained();
  return report;
}

inline nlohmann::json epoch_record_to_json(const EpochRecord& rec) {
  return {{"epoch", rec.epoch},
          {"train_loss", rec.train_loss},
          {"valid_auc", rec.valid_auc},
          {"alpha", rec.alpha},
          {"elapsed_s", rec.seconds}};
}

}  // namespace non
