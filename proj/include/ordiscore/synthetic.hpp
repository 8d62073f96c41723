#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "ordiscore/dataset.hpp"
#include "ordiscore/rng.hpp"

namespace ordiscore {

// Parameters of the synthetic multi-rater corpus. noise_low/noise_high bound
// the per-utterance rater-noise standard deviation.
struct SyntheticSpec {
  std::size_t n_utterances = 0;
  std::size_t feature_dim = 16;
  std::size_t n_raters = 5;
  double noise_low = 0.3;
  double noise_high = 1.8;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_utterances < 1) throw std::invalid_argument("synthetic: n_utterances must be >= 1");
    if (feature_dim < 1) throw std::invalid_argument("synthetic: feature_dim must be >= 1");
    if (n_raters < 1) throw std::invalid_argument("synthetic: n_raters must be >= 1");
    if (!(noise_low > 0.0)) throw std::invalid_argument("synthetic: noise_low must be > 0");
    if (noise_low > noise_high)
      throw std::invalid_argument("synthetic: noise_low must be <= noise_high");
  }
};

// Hidden generator state returned alongside the records: the latent
// (pre-noise) score per aspect and the rater-noise SD per utterance.
struct TruthTable {
  std::array<std::vector<double>, kAspectCount> latent;
  std::vector<double> noise_sd;
};

struct SyntheticDataset {
  std::vector<UtteranceRecord> records;
  TruthTable truth;
};

namespace detail {

inline double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace detail

// Deterministic synthetic corpus. Draw order, fixed so a seed pins the
// byte-exact output:
//   1. per aspect: d projection weights, then one bias         (gaussian)
//   2. d weights of the noise-SD projection                    (gaussian)
//   3. per utterance: d features (quantized to float32), then
//      n_raters noise draws per aspect, aspect-major           (gaussian)
// Latent score per aspect: 1 + 9 * logistic(1.5 * w_a.x / sqrt(d) + b_a).
// Noise SD: noise_low + (noise_high-noise_low) * logistic(1.5 * v.x / sqrt(d)),
// a function of the features so predicted uncertainty has something to
// recover. Rater score: round_half_up(clamp(latent + sd * gaussian, 1, 10)).
inline SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Xoshiro256pp rng(spec.seed);

  const std::size_t d = spec.feature_dim;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  std::array<std::vector<double>, kAspectCount> aspect_w;
  std::array<double, kAspectCount> aspect_b{};
  for (int a = 0; a < kAspectCount; ++a) {
    aspect_w[a].resize(d);
    for (std::size_t j = 0; j < d; ++j) aspect_w[a][j] = rng.gaussian();
    aspect_b[a] = 0.5 * rng.gaussian();
  }
  std::vector<double> noise_w(d);
  for (std::size_t j = 0; j < d; ++j) noise_w[j] = rng.gaussian();

  SyntheticDataset out;
  out.records.reserve(spec.n_utterances);
  for (int a = 0; a < kAspectCount; ++a)
    out.truth.latent[a].reserve(spec.n_utterances);
  out.truth.noise_sd.reserve(spec.n_utterances);

  for (std::size_t i = 0; i < spec.n_utterances; ++i) {
    UtteranceRecord rec;
    char id[16];
    std::snprintf(id, sizeof(id), "utt%06zu", i);
    rec.id = id;
    rec.features.resize(d);
    for (std::size_t j = 0; j < d; ++j)
      rec.features[j] = static_cast<double>(static_cast<float>(rng.gaussian()));

    double noise_z = 0.0;
    for (std::size_t j = 0; j < d; ++j) noise_z += noise_w[j] * rec.features[j];
    const double sd = spec.noise_low +
                      (spec.noise_high - spec.noise_low) *
                          detail::logistic(1.5 * noise_z * inv_sqrt_d);
    out.truth.noise_sd.push_back(sd);

    for (int a = 0; a < kAspectCount; ++a) {
      double z = 0.0;
      for (std::size_t j = 0; j < d; ++j) z += aspect_w[a][j] * rec.features[j];
      const double latent =
          1.0 + 9.0 * detail::logistic(1.5 * z * inv_sqrt_d + aspect_b[a]);
      out.truth.latent[a].push_back(latent);

      auto& ys = rec.scores[a];
      ys.reserve(spec.n_raters);
      for (std::size_t r = 0; r < spec.n_raters; ++r) {
        const double noisy =
            std::clamp(latent + sd * rng.gaussian(), kScoreMin, kScoreMax);
        ys.push_back(round_half_up(noisy));
      }
    }
    out.records.push_back(std::move(rec));
  }
  return out;
}

}  // namespace ordiscore
