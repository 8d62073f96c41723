#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ordiscore/dataio.hpp"
#include "ordiscore/dataset.hpp"
#include "ordiscore/rng.hpp"

namespace ordiscore {

// The five modeling strategies, ordered by increasing complexity: discrete
// 5-class classification, single-rubric MSE regression, multi-rubric MSE
// regression, multi-rubric Gaussian-NLL regression, and the multi-rater
// Gaussian-NLL variant used with conformal calibration.
enum class Strategy : int { DiCl = 0, SRR_M = 1, MRR_M = 2, MRR_G = 3, MRR_GC = 4 };

inline constexpr const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::DiCl: return "dicl";
    case Strategy::SRR_M: return "srr_m";
    case Strategy::MRR_M: return "mrr_m";
    case Strategy::MRR_G: return "mrr_g";
    case Strategy::MRR_GC: return "mrr_gc";
  }
  return "?";
}

inline std::optional<Strategy> strategy_from_name(std::string_view name) {
  for (Strategy s : {Strategy::DiCl, Strategy::SRR_M, Strategy::MRR_M,
                     Strategy::MRR_G, Strategy::MRR_GC})
    if (name == strategy_name(s)) return s;
  return std::nullopt;
}

// Multi-rubric strategies drive all three aspects from one shared trunk;
// DiCl and SRR_M are trained one aspect at a time.
inline constexpr bool strategy_multi_aspect(Strategy s) {
  return s == Strategy::MRR_M || s == Strategy::MRR_G || s == Strategy::MRR_GC;
}

inline constexpr bool strategy_has_variance(Strategy s) {
  return s == Strategy::MRR_G || s == Strategy::MRR_GC;
}

// Output width of one aspect head: 5 class logits, a single mean, or a
// (mean, raw-variance) pair.
inline constexpr std::size_t strategy_head_width(Strategy s) {
  switch (s) {
    case Strategy::DiCl: return 5;
    case Strategy::SRR_M:
    case Strategy::MRR_M: return 1;
    case Strategy::MRR_G:
    case Strategy::MRR_GC: return 2;
  }
  return 0;
}

struct StrategySpec {
  Strategy kind = Strategy::MRR_GC;
  Aspect target = Aspect::Accuracy;  // used by DiCl and SRR_M only

  std::vector<Aspect> aspects() const {
    if (strategy_multi_aspect(kind))
      return {Aspect::Accuracy, Aspect::Fluency, Aspect::Prosody};
    return {target};
  }
};

// Lower bound on predicted variance; keeps the Gaussian NLL away from its
// sigma^2 -> 0 singularity.
inline constexpr double kSigma2Min = 1e-4;

inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double softplus_inv(double y) { return std::log(std::expm1(y)); }

inline double logistic_sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                  : std::exp(x) / (1.0 + std::exp(x));
}

// One-hidden-layer scorer: tanh trunk shared across the aspect heads, one
// linear head per aspect. Parameters live in one flat vector, laid out as
//   W1 (hidden x input, row-major), b1 (hidden),
//   then per head in aspect order: W2 (width x hidden, row-major), b2 (width).
// The flat layout is shared by checkpoints, the optimizer, and gradients.
struct ScorerParams {
  StrategySpec strategy;
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  std::uint64_t seed = 0;
  std::vector<double> values;

  std::size_t n_heads() const { return strategy.aspects().size(); }
  std::size_t head_width() const { return strategy_head_width(strategy.kind); }

  std::size_t trunk_size() const { return hidden_dim * input_dim + hidden_dim; }
  std::size_t head_size() const { return head_width() * hidden_dim + head_width(); }
  std::size_t n_params() const { return trunk_size() + n_heads() * head_size(); }

  std::size_t w1_offset() const { return 0; }
  std::size_t b1_offset() const { return hidden_dim * input_dim; }
  std::size_t head_offset(std::size_t head) const {
    return trunk_size() + head * head_size();
  }
  std::size_t w2_offset(std::size_t head) const { return head_offset(head); }
  std::size_t b2_offset(std::size_t head) const {
    return head_offset(head) + head_width() * hidden_dim;
  }

  std::span<const double> w1() const {
    return {values.data(), hidden_dim * input_dim};
  }
  std::span<const double> b1() const {
    return {values.data() + b1_offset(), hidden_dim};
  }
  std::span<const double> w2(std::size_t head) const {
    return {values.data() + w2_offset(head), head_width() * hidden_dim};
  }
  std::span<const double> b2(std::size_t head) const {
    return {values.data() + b2_offset(head), head_width()};
  }

  // Decoupled weight decay applies to weight matrices only, never biases.
  bool is_bias_index(std::size_t i) const {
    if (i < trunk_size()) return i >= b1_offset();
    const std::size_t within = (i - trunk_size()) % head_size();
    return within >= head_width() * hidden_dim;
  }
};

// Seed-deterministic initialization: weights are gaussian draws scaled by
// 1/sqrt(fan_in), consumed in flat-layout order; biases are zero except the
// raw-variance bias, which is set so the initial predicted variance is 1.
inline ScorerParams init_params(std::size_t input_dim, std::size_t hidden_dim,
                                StrategySpec strategy, std::uint64_t seed) {
  if (input_dim < 1 || hidden_dim < 1)
    throw std::invalid_argument("init_params: dimensions must be >= 1");
  ScorerParams p;
  p.strategy = strategy;
  p.input_dim = input_dim;
  p.hidden_dim = hidden_dim;
  p.seed = seed;
  p.values.assign(p.n_params(), 0.0);

  Xoshiro256pp rng(seed);
  const double w1_scale = 1.0 / std::sqrt(static_cast<double>(input_dim));
  for (std::size_t i = 0; i < hidden_dim * input_dim; ++i)
    p.values[i] = w1_scale * rng.gaussian();

  const double w2_scale = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
  const std::size_t width = p.head_width();
  for (std::size_t head = 0; head < p.n_heads(); ++head) {
    double* w2 = p.values.data() + p.w2_offset(head);
    for (std::size_t i = 0; i < width * hidden_dim; ++i)
      w2[i] = w2_scale * rng.gaussian();
    if (strategy_has_variance(strategy.kind))
      p.values[p.b2_offset(head) + 1] = softplus_inv(1.0 - kSigma2Min);
  }
  return p;
}

struct AspectPrediction {
  double mean = 0.0;
  double variance = 0.0;
  bool has_variance = false;
  std::array<double, kRubricLevelCount> class_probs{};
  bool has_class_probs = false;

  int argmax_level() const {
    int best = 0;
    for (int c = 1; c < kRubricLevelCount; ++c)
      if (class_probs[c] > class_probs[best]) best = c;
    return best;
  }
};

struct PredictionSet {
  std::array<std::optional<AspectPrediction>, kAspectCount> by_aspect;

  bool has(Aspect a) const { return by_aspect[static_cast<int>(a)].has_value(); }
  const AspectPrediction& at(Aspect a) const {
    const auto& slot = by_aspect[static_cast<int>(a)];
    if (!slot)
      throw std::invalid_argument(std::string("no prediction for aspect ") +
                                  aspect_name(a));
    return *slot;
  }
};

// Pre-nonlinearity trace of one forward pass, kept around for backprop.
struct ForwardTrace {
  std::vector<double> hidden;    // tanh activations, size hidden_dim
  std::vector<double> head_raw;  // concatenated head outputs z, n_heads*width
};

inline ForwardTrace forward_raw(const ScorerParams& p, std::span<const double> x) {
  if (x.size() != p.input_dim)
    throw std::invalid_argument("forward: feature length " +
                                std::to_string(x.size()) + " != input_dim " +
                                std::to_string(p.input_dim));
  ForwardTrace t;
  t.hidden.resize(p.hidden_dim);
  const double* w1 = p.values.data();
  const double* b1 = p.values.data() + p.b1_offset();
  for (std::size_t i = 0; i < p.hidden_dim; ++i) {
    double acc = b1[i];
    const double* row = w1 + i * p.input_dim;
    for (std::size_t j = 0; j < p.input_dim; ++j) acc += row[j] * x[j];
    t.hidden[i] = std::tanh(acc);
  }
  const std::size_t width = p.head_width();
  t.head_raw.resize(p.n_heads() * width);
  for (std::size_t head = 0; head < p.n_heads(); ++head) {
    const double* w2 = p.values.data() + p.w2_offset(head);
    const double* b2 = p.values.data() + p.b2_offset(head);
    for (std::size_t o = 0; o < width; ++o) {
      double acc = b2[o];
      const double* row = w2 + o * p.hidden_dim;
      for (std::size_t i = 0; i < p.hidden_dim; ++i) acc += row[i] * t.hidden[i];
      t.head_raw[head * width + o] = acc;
    }
  }
  return t;
}

inline std::array<double, kRubricLevelCount> softmax5(
    std::span<const double> logits) {
  std::array<double, kRubricLevelCount> probs{};
  double max_logit = logits[0];
  for (std::size_t c = 1; c < kRubricLevelCount; ++c)
    max_logit = std::max(max_logit, logits[c]);
  double sum = 0.0;
  for (std::size_t c = 0; c < kRubricLevelCount; ++c) {
    probs[c] = std::exp(logits[c] - max_logit);
    sum += probs[c];
  }
  for (auto& v : probs) v /= sum;
  return probs;
}

// Turns raw head outputs into a PredictionSet: softmax over the five logits
// for DiCl, identity mean for the regression heads, and
// softplus(z) + kSigma2Min for predicted variance. Regression means are not
// squashed into [1,10] here; clamping is a report-time concern.
inline PredictionSet predictions_from_raw(const ScorerParams& p,
                                          const ForwardTrace& t) {
  PredictionSet out;
  const auto aspects = p.strategy.aspects();
  const std::size_t width = p.head_width();
  for (std::size_t head = 0; head < aspects.size(); ++head) {
    AspectPrediction pred;
    const double* z = t.head_raw.data() + head * width;
    switch (p.strategy.kind) {
      case Strategy::DiCl:
        pred.class_probs = softmax5(std::span<const double>(z, 5));
        pred.has_class_probs = true;
        break;
      case Strategy::SRR_M:
      case Strategy::MRR_M:
        pred.mean = z[0];
        break;
      case Strategy::MRR_G:
      case Strategy::MRR_GC:
        pred.mean = z[0];
        pred.variance = softplus(z[1]) + kSigma2Min;
        pred.has_variance = true;
        break;
    }
    out.by_aspect[static_cast<int>(aspects[head])] = pred;
  }
  return out;
}

inline PredictionSet forward(const ScorerParams& p, std::span<const double> x) {
  return predictions_from_raw(p, forward_raw(p, x));
}

inline std::vector<PredictionSet> forward_batch(
    const ScorerParams& p, const std::vector<std::vector<double>>& features) {
  std::vector<PredictionSet> out;
  out.reserve(features.size());
  for (const auto& x : features) out.push_back(forward(p, x));
  return out;
}

inline std::vector<PredictionSet> forward_batch(
    const ScorerParams& p, const std::vector<UtteranceRecord>& records) {
  std::vector<PredictionSet> out;
  out.reserve(records.size());
  for (const auto& rec : records) out.push_back(forward(p, rec.features));
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint file, all little-endian:
//   0   magic "OSCK"
//   4   u32 version (1)
//   8   u32 strategy
//   12  u32 target aspect, 0xffffffff for multi-aspect strategies
//   16  u32 input_dim
//   20  u32 hidden_dim
//   24  u64 seed
//   32  u64 parameter count
//   40  parameters, float64, flat layout order
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[4] = {'O', 'S', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const ScorerParams& p, const std::string& path) {
  std::string bytes;
  bytes.reserve(40 + 8 * p.values.size());
  bytes.append(kCheckpointMagic, 4);
  detail::put_u32_le(bytes, kCheckpointVersion);
  detail::put_u32_le(bytes, static_cast<std::uint32_t>(p.strategy.kind));
  detail::put_u32_le(bytes, strategy_multi_aspect(p.strategy.kind)
                                ? 0xffffffffu
                                : static_cast<std::uint32_t>(p.strategy.target));
  detail::put_u32_le(bytes, static_cast<std::uint32_t>(p.input_dim));
  detail::put_u32_le(bytes, static_cast<std::uint32_t>(p.hidden_dim));
  detail::put_u64_le(bytes, p.seed);
  detail::put_u64_le(bytes, p.values.size());
  for (double v : p.values) detail::put_f64_le(bytes, v);
  detail::write_file_bytes(path, bytes);
}

inline ScorerParams load_checkpoint(const std::string& path) {
  const std::string bytes = detail::read_file_bytes(path);
  if (bytes.size() < 40 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw std::runtime_error("'" + path + "' is not a scorer checkpoint (bad magic)");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint32_t version = detail::get_u32_le(p + 4);
  if (version != kCheckpointVersion)
    throw std::runtime_error("'" + path + "': unsupported checkpoint version " +
                             std::to_string(version));
  ScorerParams out;
  const std::uint32_t kind = detail::get_u32_le(p + 8);
  if (kind > 4)
    throw std::runtime_error("'" + path + "': unknown strategy id " +
                             std::to_string(kind));
  out.strategy.kind = static_cast<Strategy>(kind);
  const std::uint32_t target = detail::get_u32_le(p + 12);
  if (!strategy_multi_aspect(out.strategy.kind)) {
    if (target > 2)
      throw std::runtime_error("'" + path + "': invalid target aspect id " +
                               std::to_string(target));
    out.strategy.target = static_cast<Aspect>(target);
  }
  out.input_dim = detail::get_u32_le(p + 16);
  out.hidden_dim = detail::get_u32_le(p + 20);
  out.seed = detail::get_u64_le(p + 24);
  const std::uint64_t count = detail::get_u64_le(p + 32);
  if (count != out.n_params())
    throw std::runtime_error("'" + path + "': parameter count " +
                             std::to_string(count) + " does not match shape (" +
                             std::to_string(out.n_params()) + " expected)");
  if (bytes.size() != 40 + 8 * count)
    throw std::runtime_error("'" + path + "': truncated parameter blob");
  out.values.resize(count);
  for (std::uint64_t i = 0; i < count; ++i)
    out.values[i] = detail::get_f64_le(p + 40 + 8 * i);
  return out;
}

}  // namespace ordiscore
