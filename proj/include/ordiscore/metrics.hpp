#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ordiscore/conformal.hpp"
#include "ordiscore/dataset.hpp"
#include "ordiscore/scorer.hpp"

namespace ordiscore {

// Strict = exact match after clamping predictions to [1,10]; Tolerance1
// forgives one scale point; HighLowCal scores against the calibrated
// prediction interval and therefore needs intervals.
enum class EvalMode : int { Strict = 0, Tolerance1 = 1, HighLowCal = 2 };

inline constexpr const char* eval_mode_name(EvalMode m) {
  switch (m) {
    case EvalMode::Strict: return "strict";
    case EvalMode::Tolerance1: return "tolerance1";
    case EvalMode::HighLowCal: return "highlowcal";
  }
  return "?";
}

inline std::optional<EvalMode> eval_mode_from_name(std::string_view name) {
  for (EvalMode m : {EvalMode::Strict, EvalMode::Tolerance1, EvalMode::HighLowCal})
    if (name == eval_mode_name(m)) return m;
  return std::nullopt;
}

// Inclusive integer label range. Weights and marginals always span the full
// range, observed or not, so chance correction does not drift with the data.
struct LabelRange {
  int lo = 1;
  int hi = 10;
  int size() const { return hi - lo + 1; }
  bool contains(int v) const { return v >= lo && v <= hi; }
};

inline constexpr LabelRange kScoreLabels{1, 10};
inline constexpr LabelRange kLevelLabels{0, kRubricLevelCount - 1};

// A metric value plus a flag for the degenerate-denominator conventions
// (MCC -> 0, PCC -> 0, QWK of two identical constant raters -> 1).
struct MetricValue {
  double value = 0.0;
  bool degenerate = false;
};

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;  // population form
};

namespace detail {

inline void check_labels(const std::vector<int>& gold,
                         const std::vector<int>& pred, LabelRange labels,
                         const char* op) {
  if (gold.empty() || gold.size() != pred.size())
    throw std::invalid_argument(std::string(op) +
                                ": need equal, non-empty label lists");
  for (int v : gold)
    if (!labels.contains(v))
      throw std::invalid_argument(std::string(op) + ": gold label " +
                                  std::to_string(v) + " outside range");
  for (int v : pred)
    if (!labels.contains(v))
      throw std::invalid_argument(std::string(op) + ": predicted label " +
                                  std::to_string(v) + " outside range");
}

inline MeanSd mean_and_population_sd(const std::vector<double>& xs) {
  MeanSd out;
  if (xs.empty()) return out;
  for (double x : xs) out.mean += x;
  out.mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - out.mean) * (x - out.mean);
  out.sd = std::sqrt(var / static_cast<double>(xs.size()));
  return out;
}

}  // namespace detail

// Support-weighted mean of per-class F1. Classes without gold or predicted
// examples contribute an F1 of 0 at weight 0.
inline double weighted_f1(const std::vector<int>& gold,
                          const std::vector<int>& pred, LabelRange labels) {
  detail::check_labels(gold, pred, labels, "weighted_f1");
  const int k = labels.size();
  std::vector<std::size_t> tp(k, 0), fp(k, 0), fn(k, 0), support(k, 0);
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const int g = gold[i] - labels.lo;
    const int p = pred[i] - labels.lo;
    ++support[g];
    if (g == p) {
      ++tp[g];
    } else {
      ++fn[g];
      ++fp[p];
    }
  }
  double weighted = 0.0;
  for (int c = 0; c < k; ++c) {
    if (support[c] == 0) continue;
    const double denom_p = static_cast<double>(tp[c] + fp[c]);
    const double denom_r = static_cast<double>(tp[c] + fn[c]);
    const double precision = denom_p > 0.0 ? tp[c] / denom_p : 0.0;
    const double recall = denom_r > 0.0 ? tp[c] / denom_r : 0.0;
    const double f1 = (precision + recall) > 0.0
                          ? 2.0 * precision * recall / (precision + recall)
                          : 0.0;
    weighted += f1 * static_cast<double>(support[c]);
  }
  return weighted / static_cast<double>(gold.size());
}

// Multiclass Matthews correlation (the R_K statistic) from the confusion
// counts. A zero denominator (a constant side) degenerates to 0.
inline MetricValue mcc(const std::vector<int>& gold,
                       const std::vector<int>& pred, LabelRange labels) {
  detail::check_labels(gold, pred, labels, "mcc");
  const int k = labels.size();
  std::vector<double> true_count(k, 0.0), pred_count(k, 0.0);
  double correct = 0.0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    true_count[gold[i] - labels.lo] += 1.0;
    pred_count[pred[i] - labels.lo] += 1.0;
    if (gold[i] == pred[i]) correct += 1.0;
  }
  const double n = static_cast<double>(gold.size());
  double cross = 0.0, pred_sq = 0.0, true_sq = 0.0;
  for (int c = 0; c < k; ++c) {
    cross += pred_count[c] * true_count[c];
    pred_sq += pred_count[c] * pred_count[c];
    true_sq += true_count[c] * true_count[c];
  }
  const double numerator = correct * n - cross;
  const double denominator = std::sqrt(n * n - pred_sq) * std::sqrt(n * n - true_sq);
  if (denominator == 0.0) return MetricValue{0.0, true};
  return MetricValue{numerator / denominator, false};
}

// Pearson correlation; degenerates to 0 when either side is constant.
inline MetricValue pcc(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw std::invalid_argument("pcc: need two equally sized lists of length >= 2");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return MetricValue{0.0, true};
  return MetricValue{sxy / std::sqrt(sxx * syy), false};
}

inline double rmse(const std::vector<double>& gold, const std::vector<double>& pred) {
  if (gold.empty() || gold.size() != pred.size())
    throw std::invalid_argument("rmse: need equal, non-empty lists");
  double acc = 0.0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const double d = gold[i] - pred[i];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(gold.size()));
}

// Quadratic weighted kappa on a fixed scale:
//   kappa = 1 - sum(w o) / sum(w e),  w_ij = (i-j)^2 / (K-1)^2,
// with o the normalized joint histogram and e the outer product of the
// marginals. Two identical constant raters have no expected disagreement;
// that case returns 1 with the degenerate flag.
inline MetricValue qwk(const std::vector<int>& a, const std::vector<int>& b,
                       LabelRange scale) {
  detail::check_labels(a, b, scale, "qwk");
  if (a.size() < 2) throw std::invalid_argument("qwk: need at least 2 ratings");
  const int k = scale.size();
  const double n = static_cast<double>(a.size());
  // integer histograms, normalized only at the end
  std::vector<std::size_t> joint(static_cast<std::size_t>(k) * k, 0);
  std::vector<std::size_t> marg_a(k, 0), marg_b(k, 0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const int ia = a[i] - scale.lo;
    const int ib = b[i] - scale.lo;
    ++joint[static_cast<std::size_t>(ia) * k + ib];
    ++marg_a[ia];
    ++marg_b[ib];
  }
  const double wdenom =
      k > 1 ? static_cast<double>(k - 1) * static_cast<double>(k - 1) : 1.0;
  double observed = 0.0, expected = 0.0;
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) {
      const double w = static_cast<double>(i - j) * static_cast<double>(i - j) / wdenom;
      observed += w * static_cast<double>(joint[static_cast<std::size_t>(i) * k + j]);
      expected += w * static_cast<double>(marg_a[i]) * static_cast<double>(marg_b[j]);
    }
  }
  observed /= n;
  expected /= n * n;
  if (expected == 0.0) return MetricValue{1.0, true};
  return MetricValue{1.0 - observed / expected, false};
}

// QWK between the model's rounded predictions and each rater individually,
// summarized as mean +/- population SD over the R raters.
inline MeanSd qwk_model_rater(const std::vector<int>& pred_rounded,
                              const std::vector<UtteranceRecord>& records,
                              Aspect aspect, LabelRange scale = kScoreLabels) {
  if (records.empty() || pred_rounded.size() != records.size())
    throw std::invalid_argument("qwk_model_rater: prediction/record count mismatch");
  const std::size_t r = records.front().raters(aspect).size();
  std::vector<double> kappas;
  kappas.reserve(r);
  std::vector<int> rater_scores(records.size());
  for (std::size_t rater = 0; rater < r; ++rater) {
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto& ys = records[i].raters(aspect);
      if (ys.size() != r)
        throw std::invalid_argument("qwk_model_rater: utterance '" + records[i].id +
                                    "' has inconsistent rater count");
      rater_scores[i] = ys[rater];
    }
    kappas.push_back(qwk(pred_rounded, rater_scores, scale).value);
  }
  return detail::mean_and_population_sd(kappas);
}

// QWK over all unordered rater pairs (R=5 gives the ten pairs), mean +/-
// population SD.
inline MeanSd qwk_rater_rater(const std::vector<UtteranceRecord>& records,
                              Aspect aspect, LabelRange scale = kScoreLabels) {
  if (records.empty())
    throw std::invalid_argument("qwk_rater_rater: empty dataset");
  const std::size_t r = records.front().raters(aspect).size();
  if (r < 2)
    throw std::invalid_argument("qwk_rater_rater: need at least 2 raters, have " +
                                std::to_string(r));
  std::vector<std::vector<int>> by_rater(r, std::vector<int>(records.size()));
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& ys = records[i].raters(aspect);
    if (ys.size() != r)
      throw std::invalid_argument("qwk_rater_rater: utterance '" + records[i].id +
                                  "' has inconsistent rater count");
    for (std::size_t rater = 0; rater < r; ++rater) by_rater[rater][i] = ys[rater];
  }
  std::vector<double> kappas;
  kappas.reserve(r * (r - 1) / 2);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = i + 1; j < r; ++j)
      kappas.push_back(qwk(by_rater[i], by_rater[j], scale).value);
  return detail::mean_and_population_sd(kappas);
}

// ---------------------------------------------------------------------------
// Evaluation-mode adjustment and report assembly
// ---------------------------------------------------------------------------

// Continuous pairs after the mode's adjustment, plus the half-up rounded
// labels used for F1/MCC. Strict clamps predictions into [1,10]; Tolerance1
// additionally clamps them into [gold-1, gold+1]; HighLowCal replaces the
// prediction by the gold value projected onto the calibrated interval.
//
// Label rule for the lenient modes: a prediction the mode accepts (within
// one point of gold for Tolerance1, an interval covering gold for
// HighLowCal) takes the gold label; anything else rounds half-up from the
// adjusted value and so stays an (adjacent) error. The continuous pair is
// never promoted, only clamped, which keeps RMSE a contraction.
struct ModeAdjusted {
  std::vector<double> gold;
  std::vector<double> pred;
  std::vector<int> gold_labels;
  std::vector<int> pred_labels;
};

inline ModeAdjusted apply_mode(const std::vector<double>& gold_means,
                               const std::vector<double>& pred_means,
                               EvalMode mode,
                               const std::vector<PredictionInterval>* intervals = nullptr) {
  if (gold_means.size() != pred_means.size())
    throw std::invalid_argument("apply_mode: gold/pred size mismatch");
  if (mode == EvalMode::HighLowCal) {
    if (intervals == nullptr)
      throw std::invalid_argument("apply_mode: HighLowCal requires prediction intervals");
    if (intervals->size() != gold_means.size())
      throw std::invalid_argument("apply_mode: interval count mismatch");
  }
  ModeAdjusted out;
  const std::size_t n = gold_means.size();
  out.gold.resize(n);
  out.pred.resize(n);
  out.gold_labels.resize(n);
  out.pred_labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double g = gold_means[i];
    double p = pred_means[i];
    bool acceptable = false;
    switch (mode) {
      case EvalMode::Strict:
        break;
      case EvalMode::Tolerance1:
        acceptable = std::abs(p - g) <= 1.0;
        p = std::clamp(p, g - 1.0, g + 1.0);
        break;
      case EvalMode::HighLowCal: {
        const PredictionInterval& iv = (*intervals)[i];
        acceptable = g >= iv.low && g <= iv.high;
        p = std::clamp(g, iv.low, iv.high);
        break;
      }
    }
    p = std::clamp(p, kScoreMin, kScoreMax);
    out.gold[i] = g;
    out.pred[i] = p;
    out.gold_labels[i] = std::clamp(round_half_up(g), 1, 10);
    out.pred_labels[i] =
        acceptable ? out.gold_labels[i] : std::clamp(round_half_up(p), 1, 10);
  }
  return out;
}

// Row = gold label, column = predicted label, over the full label range.
struct ConfusionMatrix {
  LabelRange labels;
  std::vector<std::size_t> counts;  // size k*k, row-major
  std::size_t total = 0;

  std::size_t at(int gold_label, int pred_label) const {
    const int k = labels.size();
    return counts[static_cast<std::size_t>(gold_label - labels.lo) * k +
                  (pred_label - labels.lo)];
  }
  std::size_t row_total(int gold_label) const {
    const int k = labels.size();
    std::size_t sum = 0;
    for (int j = 0; j < k; ++j)
      sum += counts[static_cast<std::size_t>(gold_label - labels.lo) * k + j];
    return sum;
  }
  // percentage within the true class; 0 for empty rows
  double row_pct(int gold_label, int pred_label) const {
    const std::size_t denom = row_total(gold_label);
    return denom == 0 ? 0.0
                      : 100.0 * static_cast<double>(at(gold_label, pred_label)) /
                            static_cast<double>(denom);
  }
  double total_pct(int gold_label, int pred_label) const {
    return total == 0 ? 0.0
                      : 100.0 * static_cast<double>(at(gold_label, pred_label)) /
                            static_cast<double>(total);
  }
};

inline ConfusionMatrix confusion(const std::vector<int>& gold,
                                 const std::vector<int>& pred,
                                 LabelRange labels) {
  detail::check_labels(gold, pred, labels, "confusion");
  ConfusionMatrix m;
  m.labels = labels;
  const int k = labels.size();
  m.counts.assign(static_cast<std::size_t>(k) * k, 0);
  m.total = gold.size();
  for (std::size_t i = 0; i < gold.size(); ++i)
    ++m.counts[static_cast<std::size_t>(gold[i] - labels.lo) * k +
               (pred[i] - labels.lo)];
  return m;
}

struct ModeMetrics {
  double weighted_f1 = 0.0;
  MetricValue mcc;
  bool has_regression_metrics = false;  // false for DiCl
  MetricValue pcc;
  double rmse = 0.0;
};

struct AspectEvaluation {
  bool present = false;
  std::vector<std::pair<EvalMode, ModeMetrics>> modes;
  bool has_qwk = false;  // regression strategies, strict mode only
  MeanSd qwk_mr;
  std::vector<std::pair<EvalMode, ConfusionMatrix>> confusions;
};

struct EvaluationReport {
  Strategy strategy = Strategy::MRR_GC;
  std::array<AspectEvaluation, kAspectCount> aspects;
  std::string coverage_ref;  // file reference attached by the CLI
};

// Assembles the full per-aspect, per-mode report. Regression strategies get
// F1/MCC on rounded 1..10 labels plus PCC/RMSE on the adjusted continuous
// pairs, QWK (model vs rater) under strict only; DiCl gets F1/MCC on the
// five rubric levels. HighLowCal entries require intervals for the aspect.
inline EvaluationReport full_report(
    const std::vector<PredictionSet>& predictions,
    const std::vector<UtteranceRecord>& records, Strategy strategy,
    const std::vector<EvalMode>& modes,
    const std::vector<AspectIntervals>* intervals = nullptr) {
  if (predictions.size() != records.size())
    throw std::invalid_argument("full_report: prediction/record count mismatch");
  if (records.empty()) throw std::invalid_argument("full_report: empty dataset");

  EvaluationReport report;
  report.strategy = strategy;

  for (Aspect aspect : kAllAspects) {
    const int ai = static_cast<int>(aspect);
    if (!predictions.front().has(aspect)) continue;
    AspectEvaluation& eval = report.aspects[ai];
    eval.present = true;

    if (strategy == Strategy::DiCl) {
      std::vector<int> gold_labels, pred_labels;
      gold_labels.reserve(records.size());
      pred_labels.reserve(records.size());
      for (std::size_t i = 0; i < records.size(); ++i) {
        gold_labels.push_back(
            static_cast<int>(discretize(rater_stats(records[i], aspect).mean)));
        pred_labels.push_back(predictions[i].at(aspect).argmax_level());
      }
      ModeMetrics mm;
      mm.weighted_f1 = weighted_f1(gold_labels, pred_labels, kLevelLabels);
      mm.mcc = mcc(gold_labels, pred_labels, kLevelLabels);
      eval.modes.emplace_back(EvalMode::Strict, mm);
      eval.confusions.emplace_back(EvalMode::Strict,
                                   confusion(gold_labels, pred_labels, kLevelLabels));
      continue;
    }

    std::vector<double> gold_means;
    std::vector<double> pred_means;
    gold_means.reserve(records.size());
    pred_means.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
      gold_means.push_back(rater_stats(records[i], aspect).mean);
      pred_means.push_back(predictions[i].at(aspect).mean);
    }

    std::vector<PredictionInterval> aspect_intervals;
    const std::vector<PredictionInterval>* interval_ptr = nullptr;
    if (intervals != nullptr && !intervals->empty() && (*intervals)[0][ai]) {
      aspect_intervals.reserve(intervals->size());
      for (const auto& row : *intervals) {
        if (!row[ai])
          throw std::invalid_argument("full_report: missing interval for aspect " +
                                      std::string(aspect_name(aspect)));
        aspect_intervals.push_back(*row[ai]);
      }
      interval_ptr = &aspect_intervals;
    }

    for (EvalMode mode : modes) {
      const ModeAdjusted adj =
          apply_mode(gold_means, pred_means, mode,
                     mode == EvalMode::HighLowCal ? interval_ptr : nullptr);
      ModeMetrics mm;
      mm.weighted_f1 = weighted_f1(adj.gold_labels, adj.pred_labels, kScoreLabels);
      mm.mcc = mcc(adj.gold_labels, adj.pred_labels, kScoreLabels);
      mm.has_regression_metrics = true;
      mm.pcc = pcc(adj.gold, adj.pred);
      mm.rmse = rmse(adj.gold, adj.pred);
      eval.modes.emplace_back(mode, mm);
      eval.confusions.emplace_back(
          mode, confusion(adj.gold_labels, adj.pred_labels, kScoreLabels));
      if (mode == EvalMode::Strict) {
        eval.has_qwk = true;
        eval.qwk_mr = qwk_model_rater(adj.pred_labels, records, aspect);
      }
    }
  }
  return report;
}

}  // namespace ordiscore
