#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "ordiscore/objectives.hpp"
#include "ordiscore/rng.hpp"
#include "ordiscore/scorer.hpp"
#include "ordiscore/synthetic.hpp"

using namespace ordiscore;

namespace {

std::vector<UtteranceRecord> synthetic_batch(std::size_t n, std::size_t d,
                                             std::uint64_t seed) {
  SyntheticSpec spec;
  spec.n_utterances = n;
  spec.feature_dim = d;
  spec.n_raters = 5;
  spec.seed = seed;
  return generate_synthetic(spec).records;
}

std::array<std::vector<double>, kAspectCount> random_triplet(std::size_t n,
                                                             Xoshiro256pp& rng,
                                                             double lo, double hi) {
  std::array<std::vector<double>, kAspectCount> out;
  for (auto& v : out) {
    v.resize(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
  }
  return out;
}

}  // namespace

TEST_CASE("cross-entropy loss hits its closed forms") {
  using Probs = std::array<double, kRubricLevelCount>;
  // perfect prediction
  CHECK(loss_dicl({Probs{0, 0, 1, 0, 0}}, {RubricLevel::Fair}).total ==
        Catch::Approx(0.0).margin(1e-12));
  // uniform prediction: ln 5
  CHECK(loss_dicl({Probs{0.2, 0.2, 0.2, 0.2, 0.2}}, {RubricLevel::Good}).total ==
        Catch::Approx(1.6094379124341003).margin(1e-12));
  // -ln 0.7 at the gold class
  CHECK(loss_dicl({Probs{0.1, 0.7, 0.1, 0.05, 0.05}}, {RubricLevel::Poor}).total ==
        Catch::Approx(0.35667494393873245).margin(1e-12));
  // zero probability at gold is clamped and flagged, not fatal
  const auto clamped = loss_dicl({Probs{1, 0, 0, 0, 0}}, {RubricLevel::VeryGood});
  CHECK(clamped.log_clamped);
  CHECK(std::isfinite(clamped.total));
  CHECK(clamped.total == Catch::Approx(-std::log(1e-12)).margin(1e-6));
}

TEST_CASE("single-rubric MSE loss") {
  CHECK(loss_srr_m({8.0}, {8.0}).total == Catch::Approx(0.0).margin(1e-15));
  CHECK(loss_srr_m({7.5}, {8.0}).total == Catch::Approx(0.25).margin(1e-12));
  CHECK(loss_srr_m({5.0}, {8.0}).total == Catch::Approx(9.0).margin(1e-12));
  CHECK(loss_srr_m({10.0, 1.0}, {1.0, 10.0}).total ==
        Catch::Approx(81.0).margin(1e-12));
  CHECK_THROWS_AS(loss_srr_m({}, {}), std::invalid_argument);
}

TEST_CASE("multi-rubric MSE aggregates the three aspects") {
  std::array<std::vector<double>, kAspectCount> pred{
      std::vector<double>{1.0}, std::vector<double>{2.0}, std::vector<double>{3.0}};
  auto gold = pred;
  CHECK(loss_mrr_m(pred, gold).total == Catch::Approx(0.0).margin(1e-15));

  // per-aspect MSEs 3, 0, 0 -> total 1
  gold[0] = {1.0 + std::sqrt(3.0)};
  const auto loss = loss_mrr_m(pred, gold);
  CHECK(loss.total == Catch::Approx(1.0).margin(1e-12));
  CHECK(loss.per_aspect[0] == Catch::Approx(3.0).margin(1e-12));
  CHECK(loss.per_aspect[1] == Catch::Approx(0.0).margin(1e-15));

  std::array<std::vector<double>, kAspectCount> missing = pred;
  missing[2].clear();
  CHECK_THROWS_AS(loss_mrr_m(missing, gold), std::invalid_argument);
}

TEST_CASE("mrr_m equals the mean of three srr_m calls") {
  Xoshiro256pp rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 7;
    const auto pred = random_triplet(n, rng, -2.0, 12.0);
    const auto gold = random_triplet(n, rng, 1.0, 10.0);
    const double composed = (loss_srr_m(pred[0], gold[0]).total +
                             loss_srr_m(pred[1], gold[1]).total +
                             loss_srr_m(pred[2], gold[2]).total) /
                            3.0;
    CHECK(loss_mrr_m(pred, gold).total == Catch::Approx(composed).margin(1e-12));
  }
}

TEST_CASE("gaussian NLL scalar cases") {
  std::array<std::vector<MeanVar>, kAspectCount> pred;
  std::array<std::vector<double>, kAspectCount> gold;
  for (int a = 0; a < kAspectCount; ++a) {
    pred[a] = {MeanVar{7.0, 1.0}};
    gold[a] = {7.0};
  }
  CHECK(loss_mrr_g(pred, gold).total == Catch::Approx(0.0).margin(1e-15));

  // one unit of residual at sigma^2 = 0.5: 1/(2*0.5) + 0.5 ln 0.5
  for (int a = 0; a < kAspectCount; ++a) pred[a] = {MeanVar{6.0, 0.5}};
  CHECK(loss_mrr_g(pred, gold).total ==
        Catch::Approx(1.0 + 0.5 * std::log(0.5)).margin(1e-12));
  CHECK(loss_mrr_g(pred, gold).total == Catch::Approx(0.65342640972002743).margin(1e-9));

  for (int a = 0; a < kAspectCount; ++a) pred[a] = {MeanVar{6.0, -0.1}};
  CHECK_THROWS_AS(loss_mrr_g(pred, gold), std::invalid_argument);
}

TEST_CASE("multi-rater gaussian NLL scalar case") {
  // raters [6,7,7,7,8]: mean 7, s^2 = 0.4; mu = 7, sigma^2 = 0.4
  UtteranceRecord rec;
  rec.id = "u";
  rec.scores[0] = {6, 7, 7, 7, 8};
  const AspectStats stats = rater_stats(rec, Aspect::Accuracy);
  std::array<std::vector<MeanVar>, kAspectCount> pred;
  std::array<std::vector<AspectStats>, kAspectCount> gold;
  for (int a = 0; a < kAspectCount; ++a) {
    pred[a] = {MeanVar{7.0, 0.4}};
    gold[a] = {stats};
  }
  const double expected = 0.4 / 0.8 + 0.5 * std::log(0.4);
  CHECK(loss_mrr_gc(pred, gold).total == Catch::Approx(expected).margin(1e-12));
  CHECK(loss_mrr_gc(pred, gold).total ==
        Catch::Approx(0.04185463406292245).margin(1e-9));
}

TEST_CASE("mrr_gc with zero inter-rater variance reduces to mrr_g") {
  Xoshiro256pp rng(15);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 5;
    std::array<std::vector<MeanVar>, kAspectCount> pred;
    std::array<std::vector<double>, kAspectCount> gold_means;
    std::array<std::vector<AspectStats>, kAspectCount> gold_stats;
    for (int a = 0; a < kAspectCount; ++a) {
      for (std::size_t i = 0; i < n; ++i) {
        pred[a].push_back(MeanVar{rng.uniform(0.0, 11.0), rng.uniform(0.05, 4.0)});
        const double mean = rng.uniform(1.0, 10.0);
        gold_means[a].push_back(mean);
        gold_stats[a].push_back(AspectStats{mean, 0.0});
      }
    }
    CHECK(loss_mrr_gc(pred, gold_stats).total ==
          Catch::Approx(loss_mrr_g(pred, gold_means).total).margin(1e-12));
  }
}

TEST_CASE("losses are permutation invariant over the utterance list") {
  Xoshiro256pp rng(23);
  const std::size_t n = 11;
  std::array<std::vector<MeanVar>, kAspectCount> pred;
  std::array<std::vector<AspectStats>, kAspectCount> gold;
  for (int a = 0; a < kAspectCount; ++a)
    for (std::size_t i = 0; i < n; ++i) {
      pred[a].push_back(MeanVar{rng.uniform(1.0, 10.0), rng.uniform(0.1, 3.0)});
      gold[a].push_back(AspectStats{rng.uniform(1.0, 10.0), rng.uniform(0.0, 2.0)});
    }
  const double base = loss_mrr_gc(pred, gold).total;

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (int trial = 0; trial < 10; ++trial) {
    rng.shuffle(perm);
    std::array<std::vector<MeanVar>, kAspectCount> pred2;
    std::array<std::vector<AspectStats>, kAspectCount> gold2;
    for (int a = 0; a < kAspectCount; ++a)
      for (std::size_t i = 0; i < n; ++i) {
        pred2[a].push_back(pred[a][perm[i]]);
        gold2[a].push_back(gold[a][perm[i]]);
      }
    CHECK(loss_mrr_gc(pred2, gold2).total == Catch::Approx(base).margin(1e-12));
  }
}

TEST_CASE("per-utterance contributions average to the total") {
  const auto batch = synthetic_batch(9, 6, 77);
  const auto params = init_params(6, 4, StrategySpec{Strategy::MRR_GC}, 3);
  const LossValue loss = strategy_loss(params, batch);
  REQUIRE(loss.per_utterance.size() == batch.size());
  double mean = 0.0;
  for (double v : loss.per_utterance) mean += v;
  mean /= static_cast<double>(batch.size());
  CHECK(mean == Catch::Approx(loss.total).margin(1e-10));
}

TEST_CASE("GNLL sigma^2 sweep is minimized at the residual scale") {
  // fixed residual r: d/dsigma^2 vanishes at sigma^2 = r^2 (plus s^2 for the
  // multi-rater form); a log-spaced sweep confirms the minimum
  auto sweep_argmin = [](double r2, double s2) {
    double best_sigma2 = 0.0;
    double best_val = std::numeric_limits<double>::infinity();
    const int points = 4000;
    for (int i = 0; i < points; ++i) {
      const double sigma2 =
          std::pow(10.0, -3.0 + 5.0 * static_cast<double>(i) / (points - 1));
      const double val = (r2 + s2) / (2.0 * sigma2) + 0.5 * std::log(sigma2);
      if (val < best_val) {
        best_val = val;
        best_sigma2 = sigma2;
      }
    }
    return best_sigma2;
  };
  const double step = std::pow(10.0, 5.0 / 3999.0);
  for (double r : {0.5, 1.0, 2.0}) {
    const double argmin = sweep_argmin(r * r, 0.0);
    CHECK(argmin / (r * r) < step * step);
    CHECK((r * r) / argmin < step * step);
  }
  for (double s2 : {0.4, 1.5}) {
    const double argmin = sweep_argmin(1.0, s2);
    CHECK(argmin / (1.0 + s2) < step * step);
    CHECK((1.0 + s2) / argmin < step * step);
  }
}

TEST_CASE("analytic gradients match finite differences per strategy") {
  const auto batch = synthetic_batch(16, 32, 41);
  const std::vector<StrategySpec> strategies{
      {Strategy::DiCl, Aspect::Accuracy}, {Strategy::SRR_M, Aspect::Fluency},
      {Strategy::MRR_M, Aspect::Accuracy}, {Strategy::MRR_G, Aspect::Accuracy},
      {Strategy::MRR_GC, Aspect::Accuracy}};
  for (const auto& strategy : strategies) {
    const auto params = init_params(32, 16, strategy, 4242);
    const double err = grad_check(params, batch, 1e-5);
    INFO("strategy " << strategy_name(strategy.kind));
    CHECK(err <= 1e-4);
  }
}

TEST_CASE("MSE strategies grad-check to near machine precision") {
  // the loss is quadratic in the head parameters, so central differences are
  // essentially exact there
  const auto batch = synthetic_batch(8, 4, 17);
  for (Strategy kind : {Strategy::SRR_M, Strategy::MRR_M}) {
    const auto params = init_params(4, 3, StrategySpec{kind, Aspect::Accuracy}, 5);
    CHECK(grad_check(params, batch, 1e-5) <= 1e-7);
  }
}

TEST_CASE("grad_check validates epsilon and rejects non-finite losses") {
  const auto batch = synthetic_batch(4, 4, 2);
  auto params = init_params(4, 3, StrategySpec{Strategy::MRR_G}, 5);
  CHECK_THROWS_AS(grad_check(params, batch, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(grad_check(params, batch, 0.5), std::invalid_argument);
  // an absurd mean-head bias overflows the squared residual to infinity
  params.values[params.b2_offset(0)] = 1e200;
  CHECK_THROWS_AS(grad_check(params, batch, 1e-5), std::runtime_error);
}
