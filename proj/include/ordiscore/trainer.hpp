#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "ordiscore/objectives.hpp"
#include "ordiscore/rng.hpp"
#include "ordiscore/scorer.hpp"

namespace ordiscore {

// Training hyperparameters. The 1e-3 default suits the small scorer;
// reference_preset() switches to the 2e-5 / batch-1 setting used when
// fine-tuning a full-size speech LLM on the same task.
struct TrainConfig {
  double learning_rate = 1e-3;
  double weight_decay = 0.01;
  std::size_t batch_size = 1;
  std::size_t epochs = 1;
  std::uint64_t seed = 0;
  bool shuffle = true;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  static TrainConfig reference_preset() {
    TrainConfig cfg;
    cfg.learning_rate = 2e-5;
    cfg.weight_decay = 0.01;
    cfg.batch_size = 1;
    return cfg;
  }

  void validate() const {
    if (!(learning_rate >= 0.0))
      throw std::invalid_argument("train: learning_rate must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  }
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double mean_loss = 0.0;
  std::array<double, kAspectCount> per_aspect{};
  std::array<bool, kAspectCount> aspect_present{};
  double wall_seconds = 0.0;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  std::string checkpoint_path;  // filled by callers that persist the result
};

// AdamW with decoupled weight decay: the decay term lr*wd*theta is applied
// directly to weight coordinates (never biases), outside the moment update.
class AdamW {
 public:
  AdamW(std::size_t n_params, const TrainConfig& cfg)
      : cfg_(cfg), m_(n_params, 0.0), v_(n_params, 0.0) {}

  void step(ScorerParams& params, const std::vector<double>& grad) {
    ++t_;
    const double bias1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bias2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < grad.size(); ++i) {
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
      const double m_hat = m_[i] / bias1;
      const double v_hat = v_[i] / bias2;
      double update = cfg_.learning_rate * m_hat / (std::sqrt(v_hat) + cfg_.adam_eps);
      if (cfg_.weight_decay != 0.0 && !params.is_bias_index(i))
        update += cfg_.learning_rate * cfg_.weight_decay * params.values[i];
      params.values[i] -= update;
    }
  }

  std::uint64_t steps_taken() const { return t_; }

 private:
  TrainConfig cfg_;
  std::uint64_t t_ = 0;
  std::vector<double> m_;
  std::vector<double> v_;
};

inline LossValue evaluate_loss(const ScorerParams& params,
                               const std::vector<UtteranceRecord>& dataset) {
  return strategy_loss(params, dataset);
}

// Mini-batch training. Deterministic for a fixed config: the parameter init
// and the shuffle stream are derived from cfg.seed (purposes 0 and 1 of the
// splitmix chain), batches are visited in order, and gradient sums run in
// index order.
inline std::pair<ScorerParams, TrainLog> train(
    const std::vector<UtteranceRecord>& dataset, StrategySpec strategy,
    std::size_t hidden_dim, const TrainConfig& cfg) {
  cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  for (Aspect a : strategy.aspects())
    for (const auto& rec : dataset)
      if (!rec.has_aspect(a))
        throw std::invalid_argument("train: utterance '" + rec.id +
                                    "' lacks required aspect " + aspect_name(a));

  const std::size_t input_dim = dataset.front().features.size();
  ScorerParams params =
      init_params(input_dim, hidden_dim, strategy, derive_seed(cfg.seed, 0));
  AdamW optimizer(params.n_params(), cfg);
  Xoshiro256pp shuffle_rng(derive_seed(cfg.seed, 1));

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainLog log;
  std::vector<double> grad;
  std::vector<UtteranceRecord> batch;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    if (cfg.shuffle) shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    std::array<double, kAspectCount> aspect_sum{};
    std::array<bool, kAspectCount> aspect_present{};
    std::size_t step = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      ++step;
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      batch.clear();
      for (std::size_t k = start; k < end; ++k) batch.push_back(dataset[order[k]]);

      const LossValue loss = strategy_loss_and_gradient(params, batch, grad);
      if (!std::isfinite(loss.total))
        throw std::runtime_error("train: non-finite loss at epoch " +
                                 std::to_string(epoch) + ", step " +
                                 std::to_string(step));
      const double weight = static_cast<double>(batch.size());
      loss_sum += loss.total * weight;
      for (int a = 0; a < kAspectCount; ++a) {
        if (!loss.aspect_present[a]) continue;
        aspect_sum[a] += loss.per_aspect[a] * weight;
        aspect_present[a] = true;
      }
      optimizer.step(params, grad);
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.mean_loss = loss_sum / static_cast<double>(dataset.size());
    for (int a = 0; a < kAspectCount; ++a) {
      entry.per_aspect[a] = aspect_sum[a] / static_cast<double>(dataset.size());
      entry.aspect_present[a] = aspect_present[a];
    }
    entry.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                      epoch_start)
            .count();
    log.epochs.push_back(entry);
  }
  return {std::move(params), std::move(log)};
}

}  // namespace ordiscore
