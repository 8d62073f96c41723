// Library walkthrough: generate a synthetic multi-rater corpus, train the
// uncertainty-aware scorer, calibrate prediction intervals, and print the
// evaluation report.

#include <iostream>

#include "ordiscore/conformal.hpp"
#include "ordiscore/metrics.hpp"
#include "ordiscore/report_io.hpp"
#include "ordiscore/synthetic.hpp"
#include "ordiscore/trainer.hpp"

int main() {
  using namespace ordiscore;

  // one corpus, split into train/test so both halves share the latent
  // scoring function
  SyntheticSpec spec;
  spec.n_utterances = 2000;
  spec.feature_dim = 16;
  spec.n_raters = 5;
  spec.seed = 42;
  const SyntheticDataset corpus = generate_synthetic(spec);
  const std::vector<UtteranceRecord> train_set(corpus.records.begin(),
                                               corpus.records.begin() + 1200);
  const std::vector<UtteranceRecord> test_set(corpus.records.begin() + 1200,
                                              corpus.records.end());

  StrategySpec strategy{Strategy::MRR_GC};
  TrainConfig cfg;
  cfg.batch_size = 32;
  cfg.epochs = 40;
  cfg.seed = 7;
  auto [params, log] = train(train_set, strategy, 32, cfg);
  std::cout << "final training loss: " << log.epochs.back().mean_loss << "\n";

  const auto predictions = forward_batch(params, test_set);
  std::array<std::vector<double>, kAspectCount> gold_means;
  for (Aspect a : kAllAspects)
    gold_means[static_cast<int>(a)] = aspect_gold_means(test_set, a);

  const CalibrationResult calibration =
      calibrate_kfold(predictions, gold_means, 5, 0.1, 11);
  const auto intervals = build_intervals(predictions, calibration);
  const auto coverage =
      mean_coverage(intervals, gold_means, calibration.aspect_present);
  for (Aspect a : kAllAspects)
    std::cout << "mean coverage (" << aspect_name(a)
              << "): " << coverage[static_cast<int>(a)] << "\n";

  const EvaluationReport report = full_report(
      predictions, test_set, strategy.kind,
      {EvalMode::Strict, EvalMode::Tolerance1, EvalMode::HighLowCal}, &intervals);
  std::cout << "\n" << report_to_text(report);
  return 0;
}
