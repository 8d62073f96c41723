#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ordiscore {

// The three scored dimensions of read speech. Ordering is fixed (Accuracy <
// Fluency < Prosody) and used whenever per-aspect values are aggregated.
enum class Aspect : int { Accuracy = 0, Fluency = 1, Prosody = 2 };

inline constexpr int kAspectCount = 3;
inline constexpr std::array<Aspect, 3> kAllAspects{
    Aspect::Accuracy, Aspect::Fluency, Aspect::Prosody};

inline constexpr const char* aspect_name(Aspect a) {
  switch (a) {
    case Aspect::Accuracy: return "accuracy";
    case Aspect::Fluency: return "fluency";
    case Aspect::Prosody: return "prosody";
  }
  return "?";
}

inline std::optional<Aspect> aspect_from_name(std::string_view name) {
  for (Aspect a : kAllAspects)
    if (name == aspect_name(a)) return a;
  return std::nullopt;
}

// Five ordinal rubric categories, values 0..4.
enum class RubricLevel : int { VeryPoor = 0, Poor = 1, Fair = 2, Good = 3, VeryGood = 4 };

inline constexpr int kRubricLevelCount = 5;

inline constexpr const char* rubric_level_name(RubricLevel level) {
  switch (level) {
    case RubricLevel::VeryPoor: return "very_poor";
    case RubricLevel::Poor: return "poor";
    case RubricLevel::Fair: return "fair";
    case RubricLevel::Good: return "good";
    case RubricLevel::VeryGood: return "very_good";
  }
  return "?";
}

inline constexpr double kScoreMin = 1.0;
inline constexpr double kScoreMax = 10.0;

// Rounding rule used everywhere a continuous score becomes an integer label:
// half-up, so 6.5 -> 7.
inline int round_half_up(double x) {
  return static_cast<int>(std::floor(x + 0.5));
}

// Maps a continuous score in [1,10] onto the five rubric categories:
// 1-2 very poor, 3-4 poor, 5-6 fair, 7-8 good, 9-10 very good, rounding
// half-up first.
inline RubricLevel discretize(double score) {
  if (!(score >= kScoreMin && score <= kScoreMax))
    throw std::invalid_argument("discretize: score " + std::to_string(score) +
                                " outside [1,10]");
  const int rounded = round_half_up(score);  // 1..10
  return static_cast<RubricLevel>((rounded - 1) / 2);
}

// Per-utterance per-aspect rater summary. Variance is the population form
// (divide by R), matching how inter-rater disagreement enters the losses.
struct AspectStats {
  double mean = 0.0;
  double variance = 0.0;
};

// One utterance: an id, a feature vector of fixed dataset-wide length, and
// per-aspect integer rater scores in [1,10]. An empty score list means the
// aspect is absent from this record; all present aspects share one rater
// count R.
struct UtteranceRecord {
  std::string id;
  std::vector<double> features;
  std::array<std::vector<int>, kAspectCount> scores;

  bool has_aspect(Aspect a) const {
    return !scores[static_cast<int>(a)].empty();
  }

  const std::vector<int>& raters(Aspect a) const {
    const auto& list = scores[static_cast<int>(a)];
    if (list.empty())
      throw std::invalid_argument("utterance '" + id + "' has no scores for aspect " +
                                  aspect_name(a));
    return list;
  }

  // R, taken from the first present aspect; 0 if the record has no scores.
  std::size_t rater_count() const {
    for (const auto& list : scores)
      if (!list.empty()) return list.size();
    return 0;
  }
};

inline AspectStats rater_stats(const UtteranceRecord& rec, Aspect aspect) {
  const std::vector<int>& ys = rec.raters(aspect);
  const double inv_r = 1.0 / static_cast<double>(ys.size());
  double mean = 0.0;
  for (int y : ys) mean += y;
  mean *= inv_r;
  double variance = 0.0;
  for (int y : ys) {
    const double d = y - mean;
    variance += d * d;
  }
  variance *= inv_r;
  return AspectStats{mean, variance};
}

// Checks the dataset invariants: integer scores in [1,10] (enforced by the
// int type plus the range check), equal R across the aspects of a record,
// and one feature length for the whole dataset.
inline void validate_dataset(const std::vector<UtteranceRecord>& records) {
  std::size_t feature_dim = 0;
  bool have_dim = false;
  for (const auto& rec : records) {
    if (!have_dim) {
      feature_dim = rec.features.size();
      have_dim = true;
    } else if (rec.features.size() != feature_dim) {
      throw std::runtime_error("utterance '" + rec.id + "': feature length " +
                               std::to_string(rec.features.size()) +
                               " differs from dataset feature length " +
                               std::to_string(feature_dim));
    }
    std::size_t rater_count = 0;
    bool have_raters = false;
    for (Aspect a : kAllAspects) {
      const auto& list = rec.scores[static_cast<int>(a)];
      if (list.empty()) continue;
      if (!have_raters) {
        rater_count = list.size();
        have_raters = true;
      } else if (list.size() != rater_count) {
        throw std::runtime_error("utterance '" + rec.id +
                                 "': rater count differs across aspects (" +
                                 std::to_string(list.size()) + " vs " +
                                 std::to_string(rater_count) + ")");
      }
      for (int y : list) {
        if (y < 1 || y > 10)
          throw std::runtime_error("utterance '" + rec.id + "': score " +
                                   std::to_string(y) + " outside [1,10]");
      }
    }
  }
}

inline std::vector<AspectStats> aspect_gold_stats(
    const std::vector<UtteranceRecord>& records, Aspect aspect) {
  std::vector<AspectStats> out;
  out.reserve(records.size());
  for (const auto& rec : records) out.push_back(rater_stats(rec, aspect));
  return out;
}

inline std::vector<double> aspect_gold_means(
    const std::vector<UtteranceRecord>& records, Aspect aspect) {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& rec : records) out.push_back(rater_stats(rec, aspect).mean);
  return out;
}

}  // namespace ordiscore
