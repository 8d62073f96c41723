#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "ordiscore/dataset.hpp"
#include "ordiscore/scorer.hpp"

namespace ordiscore {

// Floor on the probability fed to log() in the cross-entropy; hitting it is
// reported through LossValue::log_clamped rather than as an error.
inline constexpr double kLogProbEps = 1e-12;

// Loss of one batch. For multi-rubric strategies total is the mean of the
// three per-aspect values; per_utterance holds each utterance's contribution
// aggregated the same way, so its mean matches total.
struct LossValue {
  double total = 0.0;
  std::array<double, kAspectCount> per_aspect{};
  std::array<bool, kAspectCount> aspect_present{};
  std::vector<double> per_utterance;
  bool log_clamped = false;
};

struct MeanVar {
  double mean = 0.0;
  double variance = 0.0;
};

// ---------------------------------------------------------------------------
// The five objectives
// ---------------------------------------------------------------------------

// Cross-entropy over the five rubric classes: (1/N) sum_i -log p_hat[gold_i].
inline LossValue loss_dicl(
    const std::vector<std::array<double, kRubricLevelCount>>& class_probs,
    const std::vector<RubricLevel>& gold_levels) {
  if (class_probs.empty() || class_probs.size() != gold_levels.size())
    throw std::invalid_argument("loss_dicl: need equal, non-empty prediction/gold lists");
  LossValue out;
  const std::size_t n = class_probs.size();
  out.per_utterance.reserve(n);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double p = class_probs[i][static_cast<int>(gold_levels[i])];
    if (p < kLogProbEps) {
      p = kLogProbEps;
      out.log_clamped = true;
    }
    const double term = -std::log(p);
    out.per_utterance.push_back(term);
    acc += term;
  }
  out.total = acc / static_cast<double>(n);
  return out;
}

// Mean squared error: (1/N) sum_i (y_i - yhat_i)^2.
inline LossValue loss_srr_m(const std::vector<double>& pred_means,
                            const std::vector<double>& gold_means) {
  if (pred_means.empty() || pred_means.size() != gold_means.size())
    throw std::invalid_argument("loss_srr_m: need equal, non-empty prediction/gold lists");
  LossValue out;
  const std::size_t n = pred_means.size();
  out.per_utterance.reserve(n);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = gold_means[i] - pred_means[i];
    out.per_utterance.push_back(r * r);
    acc += r * r;
  }
  out.total = acc / static_cast<double>(n);
  return out;
}

// Mean of the per-aspect MSEs: (1/3) sum_aspect (1/N) sum_i (y - yhat)^2.
inline LossValue loss_mrr_m(
    const std::array<std::vector<double>, kAspectCount>& pred,
    const std::array<std::vector<double>, kAspectCount>& gold) {
  LossValue out;
  const std::size_t n = pred[0].size();
  for (int a = 0; a < kAspectCount; ++a)
    if (pred[a].size() != n || gold[a].size() != n || n == 0)
      throw std::invalid_argument("loss_mrr_m: all three aspects must carry N >= 1 values");
  out.per_utterance.assign(n, 0.0);
  double total = 0.0;
  for (int a = 0; a < kAspectCount; ++a) {
    const LossValue aspect_loss = loss_srr_m(pred[a], gold[a]);
    out.per_aspect[a] = aspect_loss.total;
    out.aspect_present[a] = true;
    total += aspect_loss.total;
    for (std::size_t i = 0; i < n; ++i)
      out.per_utterance[i] += aspect_loss.per_utterance[i] / 3.0;
  }
  out.total = total / 3.0;
  return out;
}

namespace detail {

inline double gnll_term(double mu, double sigma2, double gold_mean,
                        double extra_var) {
  if (!(sigma2 > 0.0))
    throw std::invalid_argument("gaussian NLL: non-positive variance " +
                                std::to_string(sigma2));
  const double r = gold_mean - mu;
  return (r * r + extra_var) / (2.0 * sigma2) + 0.5 * std::log(sigma2);
}

template <typename TermFn>
LossValue gnll_reduce(const std::array<std::vector<MeanVar>, kAspectCount>& pred,
                      std::size_t n, TermFn&& term) {
  LossValue out;
  out.per_utterance.assign(n, 0.0);
  double total = 0.0;
  for (int a = 0; a < kAspectCount; ++a) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double t = term(a, i, pred[a][i]);
      acc += t;
      out.per_utterance[i] += t / 3.0;
    }
    out.per_aspect[a] = acc / static_cast<double>(n);
    out.aspect_present[a] = true;
    total += out.per_aspect[a];
  }
  out.total = total / 3.0;
  return out;
}

}  // namespace detail

// Gaussian NLL against the gold mean:
// (1/3) sum_aspect (1/N) sum_i [ (ybar_i - mu_i)^2 / (2 sigma_i^2)
//                                + 1/2 log sigma_i^2 ].
// The constant 1/2 log(2 pi) of the textbook NLL is intentionally absent.
inline LossValue loss_mrr_g(
    const std::array<std::vector<MeanVar>, kAspectCount>& pred,
    const std::array<std::vector<double>, kAspectCount>& gold_means) {
  const std::size_t n = pred[0].size();
  for (int a = 0; a < kAspectCount; ++a)
    if (pred[a].size() != n || gold_means[a].size() != n || n == 0)
      throw std::invalid_argument("loss_mrr_g: all three aspects must carry N >= 1 values");
  return detail::gnll_reduce(pred, n, [&](int a, std::size_t i, const MeanVar& mv) {
    return detail::gnll_term(mv.mean, mv.variance, gold_means[a][i], 0.0);
  });
}

// Multi-rater Gaussian NLL: the inter-rater variance s_i^2 joins the squared
// residual in the numerator, (1/3N) sum_aspect sum_i
// [ ((ybar_i - mu_i)^2 + s_i^2) / (2 sigma_i^2) + 1/2 log sigma_i^2 ].
inline LossValue loss_mrr_gc(
    const std::array<std::vector<MeanVar>, kAspectCount>& pred,
    const std::array<std::vector<AspectStats>, kAspectCount>& gold) {
  const std::size_t n = pred[0].size();
  for (int a = 0; a < kAspectCount; ++a)
    if (pred[a].size() != n || gold[a].size() != n || n == 0)
      throw std::invalid_argument("loss_mrr_gc: all three aspects must carry N >= 1 values");
  return detail::gnll_reduce(pred, n, [&](int a, std::size_t i, const MeanVar& mv) {
    return detail::gnll_term(mv.mean, mv.variance, gold[a][i].mean,
                             gold[a][i].variance);
  });
}

// ---------------------------------------------------------------------------
// Gradients with respect to model outputs (per sample, unscaled; callers
// apply the 1/N and 1/3 prefactors)
// ---------------------------------------------------------------------------

// d/dlogit of -log softmax(z)[gold]: probs - onehot(gold).
inline std::array<double, kRubricLevelCount> dicl_logit_grad(
    const std::array<double, kRubricLevelCount>& probs, RubricLevel gold) {
  std::array<double, kRubricLevelCount> g = probs;
  g[static_cast<int>(gold)] -= 1.0;
  return g;
}

inline double mse_pred_grad(double pred, double gold) {
  return 2.0 * (pred - gold);
}

struct GnllGrad {
  double d_mu = 0.0;
  double d_sigma2 = 0.0;
};

// extra_var is s_i^2 for the multi-rater loss, 0 otherwise. The d_sigma2
// zero sits at sigma^2 = r^2 + extra_var, the loss's preferred variance.
inline GnllGrad gnll_grads(double mu, double sigma2, double gold_mean,
                           double extra_var) {
  const double r = gold_mean - mu;
  GnllGrad g;
  g.d_mu = (mu - gold_mean) / sigma2;
  g.d_sigma2 = -(r * r + extra_var) / (2.0 * sigma2 * sigma2) + 0.5 / sigma2;
  return g;
}

// ---------------------------------------------------------------------------
// Strategy-level glue: targets from records, batch loss, analytic parameter
// gradient, and the finite-difference gradient check
// ---------------------------------------------------------------------------

struct BatchTargets {
  std::vector<RubricLevel> levels;                              // DiCl
  std::array<std::vector<double>, kAspectCount> means;          // regression
  std::array<std::vector<AspectStats>, kAspectCount> stats;     // MRR_GC
};

inline BatchTargets build_targets(const std::vector<UtteranceRecord>& records,
                                  const StrategySpec& strategy) {
  BatchTargets t;
  for (Aspect a : strategy.aspects()) {
    const int ai = static_cast<int>(a);
    t.means[ai].reserve(records.size());
    if (strategy.kind == Strategy::MRR_GC) t.stats[ai].reserve(records.size());
    for (const auto& rec : records) {
      const AspectStats stats = rater_stats(rec, a);
      t.means[ai].push_back(stats.mean);
      if (strategy.kind == Strategy::MRR_GC) t.stats[ai].push_back(stats);
      if (strategy.kind == Strategy::DiCl && a == strategy.target)
        t.levels.push_back(discretize(stats.mean));
    }
  }
  return t;
}

// Loss of a strategy's own objective over prediction sets it produced.
inline LossValue strategy_loss_from_predictions(
    const StrategySpec& strategy, const std::vector<PredictionSet>& preds,
    const BatchTargets& targets) {
  const int ti = static_cast<int>(strategy.target);
  switch (strategy.kind) {
    case Strategy::DiCl: {
      std::vector<std::array<double, kRubricLevelCount>> probs;
      probs.reserve(preds.size());
      for (const auto& ps : preds) probs.push_back(ps.at(strategy.target).class_probs);
      LossValue out = loss_dicl(probs, targets.levels);
      out.per_aspect[ti] = out.total;
      out.aspect_present[ti] = true;
      return out;
    }
    case Strategy::SRR_M: {
      std::vector<double> mu;
      mu.reserve(preds.size());
      for (const auto& ps : preds) mu.push_back(ps.at(strategy.target).mean);
      LossValue out = loss_srr_m(mu, targets.means[ti]);
      out.per_aspect[ti] = out.total;
      out.aspect_present[ti] = true;
      return out;
    }
    case Strategy::MRR_M: {
      std::array<std::vector<double>, kAspectCount> mu;
      for (int a = 0; a < kAspectCount; ++a) {
        mu[a].reserve(preds.size());
        for (const auto& ps : preds)
          mu[a].push_back(ps.at(static_cast<Aspect>(a)).mean);
      }
      return loss_mrr_m(mu, targets.means);
    }
    case Strategy::MRR_G:
    case Strategy::MRR_GC: {
      std::array<std::vector<MeanVar>, kAspectCount> mv;
      for (int a = 0; a < kAspectCount; ++a) {
        mv[a].reserve(preds.size());
        for (const auto& ps : preds) {
          const auto& pred = ps.at(static_cast<Aspect>(a));
          mv[a].push_back(MeanVar{pred.mean, pred.variance});
        }
      }
      if (strategy.kind == Strategy::MRR_G) return loss_mrr_g(mv, targets.means);
      return loss_mrr_gc(mv, targets.stats);
    }
  }
  throw std::logic_error("unreachable strategy");
}

inline LossValue strategy_loss(const ScorerParams& params,
                               const std::vector<UtteranceRecord>& batch) {
  const BatchTargets targets = build_targets(batch, params.strategy);
  return strategy_loss_from_predictions(params.strategy,
                                        forward_batch(params, batch), targets);
}

namespace detail {

// Backprop of one sample given d(loss)/d(raw head outputs); accumulates into
// the flat gradient vector. head_dz has the same layout as
// ForwardTrace::head_raw.
inline void backprop_sample(const ScorerParams& p, std::span<const double> x,
                            const ForwardTrace& trace,
                            const std::vector<double>& head_dz,
                            std::vector<double>& grad) {
  const std::size_t h = p.hidden_dim;
  const std::size_t d = p.input_dim;
  const std::size_t width = p.head_width();
  std::vector<double> dhidden(h, 0.0);
  for (std::size_t head = 0; head < p.n_heads(); ++head) {
    const double* w2 = p.values.data() + p.w2_offset(head);
    double* gw2 = grad.data() + p.w2_offset(head);
    double* gb2 = grad.data() + p.b2_offset(head);
    for (std::size_t o = 0; o < width; ++o) {
      const double dz = head_dz[head * width + o];
      if (dz == 0.0) continue;
      gb2[o] += dz;
      const double* row = w2 + o * h;
      double* grow = gw2 + o * h;
      for (std::size_t i = 0; i < h; ++i) {
        grow[i] += dz * trace.hidden[i];
        dhidden[i] += dz * row[i];
      }
    }
  }
  double* gw1 = grad.data();
  double* gb1 = grad.data() + p.b1_offset();
  for (std::size_t i = 0; i < h; ++i) {
    const double a = trace.hidden[i];
    const double du = dhidden[i] * (1.0 - a * a);  // tanh'
    if (du == 0.0) continue;
    gb1[i] += du;
    double* grow = gw1 + i * d;
    for (std::size_t j = 0; j < d; ++j) grow[j] += du * x[j];
  }
}

}  // namespace detail

// Batch loss plus d(loss)/d(params) over the flat layout, computed by
// closed-form backprop through the one-hidden-layer scorer. Summation runs
// in index order, so results are reproducible.
inline LossValue strategy_loss_and_gradient(
    const ScorerParams& params, const std::vector<UtteranceRecord>& batch,
    std::vector<double>& grad_out) {
  if (batch.empty())
    throw std::invalid_argument("strategy_loss_and_gradient: empty batch");
  const StrategySpec& strategy = params.strategy;
  const BatchTargets targets = build_targets(batch, strategy);
  const std::size_t n = batch.size();
  const double scale = strategy_multi_aspect(strategy.kind)
                           ? 1.0 / (3.0 * static_cast<double>(n))
                           : 1.0 / static_cast<double>(n);
  const std::size_t width = params.head_width();
  const auto aspects = strategy.aspects();

  grad_out.assign(params.n_params(), 0.0);
  std::vector<PredictionSet> preds;
  preds.reserve(n);
  std::vector<double> head_dz(aspects.size() * width);

  for (std::size_t i = 0; i < n; ++i) {
    const ForwardTrace trace = forward_raw(params, batch[i].features);
    const PredictionSet ps = predictions_from_raw(params, trace);
    for (std::size_t head = 0; head < aspects.size(); ++head) {
      const int ai = static_cast<int>(aspects[head]);
      const AspectPrediction& pred = ps.at(aspects[head]);
      switch (strategy.kind) {
        case Strategy::DiCl: {
          const auto g = dicl_logit_grad(pred.class_probs, targets.levels[i]);
          for (std::size_t c = 0; c < kRubricLevelCount; ++c)
            head_dz[head * width + c] = scale * g[c];
          break;
        }
        case Strategy::SRR_M:
        case Strategy::MRR_M:
          head_dz[head * width] =
              scale * mse_pred_grad(pred.mean, targets.means[ai][i]);
          break;
        case Strategy::MRR_G:
        case Strategy::MRR_GC: {
          const double extra = strategy.kind == Strategy::MRR_GC
                                   ? targets.stats[ai][i].variance
                                   : 0.0;
          const GnllGrad g = gnll_grads(pred.mean, pred.variance,
                                        targets.means[ai][i], extra);
          const double z_var = trace.head_raw[head * width + 1];
          head_dz[head * width] = scale * g.d_mu;
          // d sigma^2 / d z = sigmoid(z) through the softplus link
          head_dz[head * width + 1] =
              scale * g.d_sigma2 * logistic_sigmoid(z_var);
          break;
        }
      }
    }
    detail::backprop_sample(params, batch[i].features, trace, head_dz, grad_out);
    preds.push_back(ps);
  }
  return strategy_loss_from_predictions(strategy, preds, targets);
}

// Central finite-difference check of the analytic gradient. Checks every
// coordinate for models up to a few thousand parameters, otherwise a seeded
// random subset of at least 200 coordinates. Returns the max relative error
// with denominator max(|g_analytic|, |g_numeric|, 1e-8).
inline double grad_check(const ScorerParams& params,
                         const std::vector<UtteranceRecord>& batch,
                         double epsilon, std::uint64_t subset_seed = 0) {
  if (!(epsilon > 0.0 && epsilon <= 1e-2))
    throw std::invalid_argument("grad_check: epsilon must be in (0, 1e-2]");
  std::vector<double> analytic;
  const LossValue loss = strategy_loss_and_gradient(params, batch, analytic);
  if (!std::isfinite(loss.total))
    throw std::runtime_error("grad_check: non-finite loss");

  const std::size_t n = params.n_params();
  std::vector<std::size_t> coords;
  constexpr std::size_t kFullCheckLimit = 4096;
  if (n <= kFullCheckLimit) {
    coords.resize(n);
    for (std::size_t i = 0; i < n; ++i) coords[i] = i;
  } else {
    Xoshiro256pp rng(subset_seed);
    const std::size_t count = std::max<std::size_t>(200, n / 20);
    for (std::size_t i = 0; i < count; ++i)
      coords.push_back(static_cast<std::size_t>(rng.bounded(n)));
  }

  ScorerParams shifted = params;
  double worst = 0.0;
  for (std::size_t idx : coords) {
    const double orig = shifted.values[idx];
    shifted.values[idx] = orig + epsilon;
    const double up = strategy_loss(shifted, batch).total;
    shifted.values[idx] = orig - epsilon;
    const double down = strategy_loss(shifted, batch).total;
    shifted.values[idx] = orig;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double denom =
        std::max({std::abs(analytic[idx]), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic[idx] - numeric) / denom);
  }
  return worst;
}

}  // namespace ordiscore
