#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

#include "ordiscore/dataset.hpp"
#include "ordiscore/rng.hpp"
#include "ordiscore/scorer.hpp"

namespace ordiscore {

// Split-conformal quantile of a residual sample: the ceil((n+1)(1-alpha))-th
// smallest value. When that rank exceeds n the sample is too small for the
// requested coverage and q is +infinity with insufficient=true.
struct ConformalQuantile {
  double q = 0.0;
  bool insufficient = false;
  std::size_t n = 0;
  std::size_t rank = 0;  // 1-based order statistic used
};

inline ConformalQuantile conformal_quantile(std::vector<double> residuals,
                                            double alpha) {
  if (residuals.empty())
    throw std::invalid_argument("conformal_quantile: empty residual list");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw std::invalid_argument("conformal_quantile: alpha must be in (0,1)");
  for (double r : residuals)
    if (r < 0.0)
      throw std::invalid_argument("conformal_quantile: negative residual " +
                                  std::to_string(r));
  ConformalQuantile out;
  out.n = residuals.size();
  const double raw = (static_cast<double>(out.n) + 1.0) * (1.0 - alpha);
  // tolerate float droop just below an integer rank
  out.rank = static_cast<std::size_t>(std::ceil(raw - 1e-9));
  if (out.rank > out.n) {
    out.insufficient = true;
    out.q = std::numeric_limits<double>::infinity();
    return out;
  }
  std::nth_element(residuals.begin(), residuals.begin() + (out.rank - 1),
                   residuals.end());
  out.q = residuals[out.rank - 1];
  return out;
}

// Quantile attached to one evaluation fold: computed from the residuals of
// the other k-1 folds and used for that fold's out-of-fold intervals.
struct FoldQuantile {
  std::size_t fold = 0;
  std::size_t calib_size = 0;
  double q = 0.0;
  bool insufficient = false;
};

struct CalibrationResult {
  double alpha = 0.1;
  std::size_t k = 5;
  std::uint64_t seed = 0;
  std::array<bool, kAspectCount> aspect_present{};
  std::array<double, kAspectCount> q_aspect{};  // mean of the fold quantiles
  std::array<std::vector<FoldQuantile>, kAspectCount> fold_quantiles;
  std::vector<std::size_t> fold_of;  // per utterance

  double target_coverage() const { return 1.0 - alpha; }
};

// Deterministic fold assignment: a seeded permutation dealt round-robin into
// k folds (sizes differ by at most one).
inline std::vector<std::size_t> assign_folds(std::size_t n, std::size_t k,
                                             std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Xoshiro256pp rng(seed);
  rng.shuffle(perm);
  std::vector<std::size_t> fold_of(n);
  for (std::size_t pos = 0; pos < n; ++pos) fold_of[perm[pos]] = pos % k;
  return fold_of;
}

inline double normalized_residual(double gold_mean, double mu, double sigma) {
  return std::abs(gold_mean - mu) / sigma;
}

// k-fold cross-conformal calibration of the normalized residuals
// |ybar - mu| / sigma, one quantile set per aspect.
inline CalibrationResult calibrate_kfold(
    const std::vector<PredictionSet>& predictions,
    const std::array<std::vector<double>, kAspectCount>& gold_means,
    std::size_t k, double alpha, std::uint64_t seed) {
  const std::size_t n = predictions.size();
  if (k < 2) throw std::invalid_argument("calibrate_kfold: k must be >= 2");
  if (n < k)
    throw std::invalid_argument("calibrate_kfold: need at least k utterances (" +
                                std::to_string(n) + " < " + std::to_string(k) + ")");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw std::invalid_argument("calibrate_kfold: alpha must be in (0,1)");

  CalibrationResult out;
  out.alpha = alpha;
  out.k = k;
  out.seed = seed;
  out.fold_of = assign_folds(n, k, seed);

  for (Aspect aspect : kAllAspects) {
    const int ai = static_cast<int>(aspect);
    if (!predictions.front().has(aspect)) continue;
    if (!predictions.front().at(aspect).has_variance)
      throw std::invalid_argument(
          std::string("calibrate_kfold: predictions for ") + aspect_name(aspect) +
          " carry no variance");
    if (gold_means[ai].size() != n)
      throw std::invalid_argument("calibrate_kfold: gold size mismatch for " +
                                  std::string(aspect_name(aspect)));
    out.aspect_present[ai] = true;

    std::vector<double> residuals(n);
    for (std::size_t i = 0; i < n; ++i) {
      const AspectPrediction& pred = predictions[i].at(aspect);
      residuals[i] = normalized_residual(gold_means[ai][i], pred.mean,
                                         std::sqrt(pred.variance));
    }

    double q_sum = 0.0;
    std::size_t q_count = 0;
    for (std::size_t fold = 0; fold < k; ++fold) {
      std::vector<double> calib;
      calib.reserve(n);
      for (std::size_t i = 0; i < n; ++i)
        if (out.fold_of[i] != fold) calib.push_back(residuals[i]);
      const ConformalQuantile cq = conformal_quantile(std::move(calib), alpha);
      out.fold_quantiles[ai].push_back(
          FoldQuantile{fold, cq.n, cq.q, cq.insufficient});
      if (!cq.insufficient) {
        q_sum += cq.q;
        ++q_count;
      }
    }
    out.q_aspect[ai] = q_count == k
                           ? q_sum / static_cast<double>(k)
                           : std::numeric_limits<double>::infinity();
  }
  return out;
}

// Calibrated interval [mu - q sigma, mu + q sigma]; symmetric about mu and
// not clipped to the score scale (clipping is a report-time option).
struct PredictionInterval {
  double low = 0.0;
  double high = 0.0;
  double center = 0.0;
  double sigma = 0.0;
};

inline PredictionInterval make_interval(double mu, double sigma, double q) {
  if (!(sigma >= 0.0))
    throw std::invalid_argument("make_interval: negative sigma");
  return PredictionInterval{mu - q * sigma, mu + q * sigma, mu, sigma};
}

using AspectIntervals = std::array<std::optional<PredictionInterval>, kAspectCount>;

// Out-of-fold intervals: each utterance uses the quantile of its own fold,
// i.e. one computed without that utterance's residual.
inline std::vector<AspectIntervals> build_intervals(
    const std::vector<PredictionSet>& predictions,
    const CalibrationResult& calibration) {
  if (predictions.size() != calibration.fold_of.size())
    throw std::invalid_argument("build_intervals: prediction count differs from calibration");
  std::vector<AspectIntervals> out(predictions.size());
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    for (Aspect aspect : kAllAspects) {
      const int ai = static_cast<int>(aspect);
      if (!calibration.aspect_present[ai]) continue;
      const AspectPrediction& pred = predictions[i].at(aspect);
      if (!pred.has_variance)
        throw std::invalid_argument("build_intervals: prediction carries no variance");
      const FoldQuantile& fq =
          calibration.fold_quantiles[ai][calibration.fold_of[i]];
      out[i][ai] = make_interval(pred.mean, std::sqrt(pred.variance), fq.q);
    }
  }
  return out;
}

// Fixed-quantile variant (one q per aspect for every utterance).
inline std::vector<AspectIntervals> build_intervals(
    const std::vector<PredictionSet>& predictions,
    const std::array<double, kAspectCount>& q_aspect,
    const std::array<bool, kAspectCount>& aspect_present) {
  std::vector<AspectIntervals> out(predictions.size());
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    for (Aspect aspect : kAllAspects) {
      const int ai = static_cast<int>(aspect);
      if (!aspect_present[ai]) continue;
      const AspectPrediction& pred = predictions[i].at(aspect);
      if (!pred.has_variance)
        throw std::invalid_argument("build_intervals: prediction carries no variance");
      out[i][ai] =
          make_interval(pred.mean, std::sqrt(pred.variance), q_aspect[ai]);
    }
  }
  return out;
}

// Per-aspect histogram of how many of the R raters land inside each
// utterance's interval (inclusive endpoints), with both cumulative readings.
struct CoverageTable {
  std::size_t rater_count = 0;
  std::size_t n_utterances = 0;
  std::array<bool, kAspectCount> aspect_present{};
  std::array<std::vector<double>, kAspectCount> exact_pct;  // index N = 0..R
  std::array<std::vector<double>, kAspectCount> ge_pct;     // % with >= N raters inside
  std::array<std::vector<double>, kAspectCount> le_pct;     // % with <= N raters inside
};

inline CoverageTable coverage_analysis(
    const std::vector<AspectIntervals>& intervals,
    const std::vector<UtteranceRecord>& records) {
  if (intervals.size() != records.size())
    throw std::invalid_argument("coverage_analysis: interval/record count mismatch");
  if (records.empty())
    throw std::invalid_argument("coverage_analysis: empty dataset");

  CoverageTable table;
  table.n_utterances = records.size();
  table.rater_count = records.front().rater_count();
  for (const auto& rec : records)
    if (rec.rater_count() != table.rater_count)
      throw std::invalid_argument("coverage_analysis: utterance '" + rec.id +
                                  "' has rater count " +
                                  std::to_string(rec.rater_count()) +
                                  " != " + std::to_string(table.rater_count));

  const std::size_t r = table.rater_count;
  for (Aspect aspect : kAllAspects) {
    const int ai = static_cast<int>(aspect);
    if (!intervals.front()[ai].has_value()) continue;
    table.aspect_present[ai] = true;

    std::vector<std::size_t> hist(r + 1, 0);
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto& slot = intervals[i][ai];
      if (!slot)
        throw std::invalid_argument("coverage_analysis: missing interval for aspect " +
                                    std::string(aspect_name(aspect)));
      std::size_t inside = 0;
      for (int y : records[i].raters(aspect))
        if (y >= slot->low && y <= slot->high) ++inside;
      ++hist[inside];
    }

    const double to_pct = 100.0 / static_cast<double>(records.size());
    auto& exact = table.exact_pct[ai];
    auto& ge = table.ge_pct[ai];
    auto& le = table.le_pct[ai];
    exact.resize(r + 1);
    ge.resize(r + 1);
    le.resize(r + 1);
    for (std::size_t c = 0; c <= r; ++c) exact[c] = hist[c] * to_pct;
    std::size_t running = 0;
    for (std::size_t c = 0; c <= r; ++c) {
      running += hist[c];
      le[c] = running * to_pct;
    }
    running = 0;
    for (std::size_t c = r + 1; c-- > 0;) {
      running += hist[c];
      ge[c] = running * to_pct;
    }
  }
  return table;
}

// Fraction of utterances whose gold mean falls inside the interval, per
// aspect. This is the quantity the conformal guarantee speaks about.
inline std::array<double, kAspectCount> mean_coverage(
    const std::vector<AspectIntervals>& intervals,
    const std::array<std::vector<double>, kAspectCount>& gold_means,
    const std::array<bool, kAspectCount>& aspect_present) {
  std::array<double, kAspectCount> out{};
  for (Aspect aspect : kAllAspects) {
    const int ai = static_cast<int>(aspect);
    if (!aspect_present[ai]) continue;
    if (gold_means[ai].size() != intervals.size())
      throw std::invalid_argument("mean_coverage: gold size mismatch");
    std::size_t covered = 0;
    for (std::size_t i = 0; i < intervals.size(); ++i) {
      const auto& slot = intervals[i][ai];
      if (!slot) throw std::invalid_argument("mean_coverage: missing interval");
      const double g = gold_means[ai][i];
      if (g >= slot->low && g <= slot->high) ++covered;
    }
    out[ai] = static_cast<double>(covered) / static_cast<double>(intervals.size());
  }
  return out;
}

}  // namespace ordiscore
