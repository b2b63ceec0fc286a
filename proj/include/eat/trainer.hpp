#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "eat/autodiff.hpp"
#include "eat/data.hpp"
#include "eat/energy.hpp"
#include "eat/model.hpp"
#include "eat/penalty.hpp"

namespace eat {

struct TrainConfig {
  int epochs = 1;
  double lr_initial = 0.1;
  double lr_decay = 0.95;    // applied per epoch
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int batch_size = 32;
  PenaltyConfig penalty;
  uint64_t seed = 0;
  bool shuffle = true;

  void validate() const {
    if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
    if (lr_initial <= 0.0) throw ConfigError("train: lr_initial must be > 0");
    if (lr_decay <= 0.0 || lr_decay > 1.0) {
      throw ConfigError("train: lr_decay must be in (0, 1]");
    }
    if (momentum < 0.0 || momentum >= 1.0) {
      throw ConfigError("train: momentum must be in [0, 1)");
    }
    if (weight_decay < 0.0) {
      throw ConfigError("train: weight_decay must be >= 0");
    }
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    penalty.validate();
  }
};

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;     // mean objective value over batches
  double mean_penalty = 0.0;  // mean normalized penalty value (before sign*lambda)
  double lr = 0.0;
  double train_accuracy = 0.0;
  std::optional<double> val_accuracy;
  std::optional<double> energy_ratio;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
};

inline double lr_at_epoch(const TrainConfig& cfg, int epoch) {
  if (epoch < 0) throw ConfigError("lr_at_epoch: epoch must be >= 0");
  return cfg.lr_initial * std::pow(cfg.lr_decay, epoch);
}

template <class S>
struct ObjectiveValue {
  double value = 0.0;          // cross_entropy + sign*lambda*penalty
  double cross_entropy = 0.0;
  double penalty = 0.0;        // normalized penalty (before sign*lambda)
  ActivationRecord<S> record;
};

// Objective value without gradients. With lambda == 0 the penalty path is not
// evaluated at all, so the result is bitwise equal to the plain cross-entropy.
template <class S>
ObjectiveValue<S> objective(const Model<S>& model, const BasicTensor<S>& batch,
                            const std::vector<int>& labels,
                            const PenaltyConfig& penalty) {
  penalty.validate();
  auto fwd = forward(model, batch);
  auto ce = kernels::softmax_cross_entropy_forward(fwd.logits, labels);
  ObjectiveValue<S> out;
  out.cross_entropy = static_cast<double>(ce.loss);
  out.value = out.cross_entropy;
  if (penalty.lambda > 0.0) {
    out.penalty =
        sparsity_penalty(fwd.record, penalty, model.parameter_count());
    out.value += penalty.sign * penalty.lambda * out.penalty;
  }
  out.record = std::move(fwd.record);
  return out;
}

template <class S>
struct ObjectiveGrads {
  ObjectiveValue<S> eval;
  std::vector<BasicTensor<S>> weight_grads;  // parallel to model.weights
};

// Objective plus its gradient w.r.t. every weight tensor, via one taped
// forward/backward. The lambda == 0 shortcut keeps the recorded graph (and
// hence the gradients) bitwise identical to a run with no penalty code at all.
template <class S>
ObjectiveGrads<S> objective_grad(const Model<S>& model,
                                 const BasicTensor<S>& batch,
                                 const std::vector<int>& labels,
                                 const PenaltyConfig& penalty) {
  penalty.validate();
  GradientTape<S> tape;
  auto fwd = forward(tape, model, batch);
  ValueId ce = softmax_cross_entropy(tape, fwd.logits, labels);
  ValueId obj = ce;
  ObjectiveGrads<S> out;
  out.eval.cross_entropy = static_cast<double>(tape.value(ce)[0]);
  if (penalty.lambda > 0.0) {
    ValueId pen = sparsity_penalty(tape, fwd, penalty, model.parameter_count());
    out.eval.penalty = static_cast<double>(tape.value(pen)[0]);
    obj = add(tape, ce, scale(tape, pen, penalty.sign * penalty.lambda));
  }
  out.eval.value = static_cast<double>(tape.value(obj)[0]);
  if (!std::isfinite(out.eval.value)) {
    throw NonFiniteError("objective value is non-finite");
  }
  tape.backward(obj);
  out.weight_grads.reserve(model.weights.size());
  for (ValueId id : fwd.weight_ids) out.weight_grads.push_back(tape.grad(id));
  out.eval.record = std::move(fwd.record);
  return out;
}

// One SGD step with momentum and decoupled-from-nothing classic L2 weight
// decay: g' = g + wd*w; v' = mu*v + g'; w' = w - lr*v'. In place.
template <class S>
void sgd_momentum_step(std::vector<BasicTensor<S>>& weights,
                       const std::vector<BasicTensor<S>>& grads,
                       std::vector<BasicTensor<S>>& velocity, double lr,
                       double momentum, double weight_decay) {
  if (weights.size() != grads.size() || weights.size() != velocity.size()) {
    throw ShapeError("sgd step: weights/grads/velocity count mismatch");
  }
  for (size_t t = 0; t < weights.size(); ++t) {
    BasicTensor<S>& w = weights[t];
    const BasicTensor<S>& g = grads[t];
    BasicTensor<S>& v = velocity[t];
    if (!w.same_shape(g) || !w.same_shape(v)) {
      throw ShapeError("sgd step: tensor shape mismatch at index " +
                       std::to_string(t));
    }
    for (size_t i = 0; i < w.numel(); ++i) {
      const S adjusted = g[i] + static_cast<S>(weight_decay) * w[i];
      v[i] = static_cast<S>(momentum) * v[i] + adjusted;
      w[i] -= static_cast<S>(lr) * v[i];
    }
  }
}

// Fraction of samples whose argmax logit equals the label; argmax ties break
// toward the lowest class index.
template <class S>
double evaluate_accuracy(const Model<S>& model, const Dataset<S>& dataset,
                         size_t batch_size = 256) {
  if (dataset.size() == 0) throw ConfigError("evaluate_accuracy: empty dataset");
  size_t correct = 0;
  std::vector<size_t> idx;
  for (size_t start = 0; start < dataset.size(); start += batch_size) {
    const size_t end = std::min(dataset.size(), start + batch_size);
    idx.clear();
    for (size_t i = start; i < end; ++i) idx.push_back(i);
    auto [batch, labels] = make_batch(dataset, idx);
    const auto fwd = forward(model, batch);
    const auto& logits = fwd.logits;
    const size_t classes = logits.dim(1);
    for (size_t s = 0; s < labels.size(); ++s) {
      const S* row = logits.data() + s * classes;
      size_t best = 0;
      for (size_t c = 1; c < classes; ++c) {
        if (row[c] > row[best]) best = c;
      }
      if (static_cast<int>(best) == labels[s]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

template <class S>
struct TrainOptions {
  const Dataset<S>* validation = nullptr;   // adds per-epoch val accuracy
  const CostModel* energy_cost = nullptr;   // adds per-epoch energy ratio
  const Dataset<S>* energy_set = nullptr;   // defaults to validation, then train
  // Applied to each assembled batch before the update (e.g. augmentation);
  // draws from a stream derived from cfg.seed.
  std::function<void(BasicTensor<S>&, Rng&)> batch_transform;
};

template <class S>
struct TrainResult {
  Model<S> model;
  TrainHistory history;
};

// Epoch/batch SGD loop over the signed objective. The input model is left
// untouched; training starts from a copy of its weights. Batch order, and
// everything else, is a pure function of cfg.seed.
template <class S>
TrainResult<S> train(const Model<S>& initial, const Dataset<S>& train_set,
                     const TrainConfig& cfg, const TrainOptions<S>& opt = {}) {
  cfg.validate();
  initial.validate();
  if (train_set.size() == 0) throw ConfigError("train: empty training set");
  TrainResult<S> result;
  result.model = initial;
  Model<S>& model = result.model;
  std::vector<BasicTensor<S>> velocity;
  velocity.reserve(model.weights.size());
  for (const auto& w : model.weights) velocity.emplace_back(w.shape());

  Rng shuffle_rng = Rng::derive(cfg.seed, 0x50FFu);
  Rng transform_rng = Rng::derive(cfg.seed, 0xA0Cu);
  std::vector<size_t> order(train_set.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  const size_t bs = static_cast<size_t>(cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.shuffle) shuffle_rng.shuffle(order);
    const double lr = lr_at_epoch(cfg, epoch);
    double sum_loss = 0.0, sum_penalty = 0.0;
    size_t batches = 0;
    for (size_t start = 0; start < order.size(); start += bs) {
      const size_t end = std::min(order.size(), start + bs);
      auto [batch, labels] = make_batch(
          train_set, std::span<const size_t>(order.data() + start, end - start));
      if (opt.batch_transform) opt.batch_transform(batch, transform_rng);
      ObjectiveGrads<S> og;
      try {
        og = objective_grad(model, batch, labels, cfg.penalty);
      } catch (const NonFiniteError& e) {
        throw DivergenceError(e.what(), epoch, static_cast<int>(batches));
      }
      sgd_momentum_step(model.weights, og.weight_grads, velocity, lr,
                        cfg.momentum, cfg.weight_decay);
      sum_loss += og.eval.value;
      sum_penalty += og.eval.penalty;
      ++batches;
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.mean_loss = sum_loss / static_cast<double>(batches);
    stats.mean_penalty = sum_penalty / static_cast<double>(batches);
    stats.lr = lr;
    stats.train_accuracy = evaluate_accuracy(model, train_set);
    if (opt.validation) {
      stats.val_accuracy = evaluate_accuracy(model, *opt.validation);
    }
    if (opt.energy_cost) {
      const Dataset<S>* es = opt.energy_set ? opt.energy_set
                             : opt.validation ? opt.validation
                                              : &train_set;
      stats.energy_ratio =
          energy_ratio_over_dataset(model, *es, *opt.energy_cost);
    }
    result.history.epochs.push_back(stats);
  }
  return result;
}

}  // namespace eat
