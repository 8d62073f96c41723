// ordiscore command-line pipeline: synthetic data generation, training,
// evaluation with optional conformal calibration, and rater agreement.
//
// Exit codes: 0 success, 1 runtime error, 2 usage error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ordiscore/conformal.hpp"
#include "ordiscore/dataio.hpp"
#include "ordiscore/dataset.hpp"
#include "ordiscore/metrics.hpp"
#include "ordiscore/objectives.hpp"
#include "ordiscore/report_io.hpp"
#include "ordiscore/scorer.hpp"
#include "ordiscore/synthetic.hpp"
#include "ordiscore/trainer.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Flag combinations that parse but make no sense; reported as usage errors.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void write_json_file(const std::string& path, const json& obj) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << obj.dump(2) << '\n';
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

void write_manifest(const std::string& dir, const std::string& command,
                    const json& flags) {
  json manifest;
  manifest["command"] = command;
  manifest["flags"] = flags;
  write_json_file((fs::path(dir) / "manifest.json").string(), manifest);
}

void ensure_out_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory '" + dir +
                                   "': " + ec.message());
}

ordiscore::DatasetFormat detect_format(const std::string& path,
                                       const std::string& format_flag) {
  if (format_flag == "jsonl") return ordiscore::DatasetFormat::AnnotationJsonl;
  if (format_flag == "binary") return ordiscore::DatasetFormat::FeaturesBinary;
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) break;
  return line.find("\"feat_ref\"") != std::string::npos
             ? ordiscore::DatasetFormat::FeaturesBinary
             : ordiscore::DatasetFormat::AnnotationJsonl;
}

std::vector<ordiscore::UtteranceRecord> load_records(
    const std::string& path, const std::string& format_flag,
    const std::string& features_path) {
  return ordiscore::load_dataset(path, detect_format(path, format_flag),
                                 features_path);
}

ordiscore::Aspect parse_aspect(const std::string& name) {
  const auto aspect = ordiscore::aspect_from_name(name);
  if (!aspect) throw UsageError("unknown aspect '" + name + "'");
  return *aspect;
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

struct GenerateOptions {
  std::string out_dir;
  std::size_t n = 2500;
  std::size_t dim = 16;
  std::size_t raters = 5;
  double noise_low = 0.3;
  double noise_high = 1.8;
  std::uint64_t seed = 0;
  bool inline_feat = false;
};

int cmd_generate(const GenerateOptions& opt) {
  ordiscore::SyntheticSpec spec;
  spec.n_utterances = opt.n;
  spec.feature_dim = opt.dim;
  spec.n_raters = opt.raters;
  spec.noise_low = opt.noise_low;
  spec.noise_high = opt.noise_high;
  spec.seed = opt.seed;

  const ordiscore::SyntheticDataset data = ordiscore::generate_synthetic(spec);
  ensure_out_dir(opt.out_dir);
  const fs::path dir(opt.out_dir);

  const auto format = opt.inline_feat ? ordiscore::DatasetFormat::AnnotationJsonl
                                      : ordiscore::DatasetFormat::FeaturesBinary;
  ordiscore::save_dataset(data.records, (dir / "data.jsonl").string(), format);

  json truth;
  truth["seed"] = spec.seed;
  truth["n_utterances"] = spec.n_utterances;
  json latent = json::object();
  for (ordiscore::Aspect a : ordiscore::kAllAspects)
    latent[ordiscore::aspect_name(a)] = data.truth.latent[static_cast<int>(a)];
  truth["latent"] = latent;
  truth["noise_sd"] = data.truth.noise_sd;
  write_json_file((dir / "truth.json").string(), truth);

  write_manifest(opt.out_dir, "generate",
                 json{{"n", opt.n},
                      {"dim", opt.dim},
                      {"raters", opt.raters},
                      {"noise_low", opt.noise_low},
                      {"noise_high", opt.noise_high},
                      {"seed", opt.seed},
                      {"inline_feat", opt.inline_feat}});
  std::cout << "wrote " << data.records.size() << " utterances to " << opt.out_dir
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOptions {
  std::string data_path;
  std::string features_path;
  std::string format = "auto";
  std::string out_dir;
  std::string strategy;
  std::string aspect;  // empty = all aspects for dicl/srr_m
  std::size_t hidden = 32;
  double lr = 1e-3;
  double weight_decay = 0.01;
  std::size_t batch = 32;
  std::size_t epochs = 30;
  std::uint64_t seed = 0;
  bool no_shuffle = false;
  bool reference_preset = false;
};

int cmd_train(const TrainOptions& opt) {
  const auto kind = ordiscore::strategy_from_name(opt.strategy);
  if (!kind) throw UsageError("unknown strategy '" + opt.strategy + "'");

  const auto records = load_records(opt.data_path, opt.format, opt.features_path);
  if (records.empty()) throw std::runtime_error("dataset is empty");
  ensure_out_dir(opt.out_dir);
  const fs::path dir(opt.out_dir);

  ordiscore::TrainConfig cfg;
  if (opt.reference_preset) cfg = ordiscore::TrainConfig::reference_preset();
  if (!opt.reference_preset) {
    cfg.learning_rate = opt.lr;
    cfg.batch_size = opt.batch;
  }
  cfg.weight_decay = opt.weight_decay;
  cfg.epochs = opt.epochs;
  cfg.seed = opt.seed;
  cfg.shuffle = !opt.no_shuffle;

  std::vector<ordiscore::Aspect> targets;
  const bool multi = ordiscore::strategy_multi_aspect(*kind);
  if (multi) {
    if (!opt.aspect.empty())
      throw UsageError("--aspect applies only to dicl and srr_m");
    targets.push_back(ordiscore::Aspect::Accuracy);  // placeholder, unused
  } else if (!opt.aspect.empty()) {
    targets.push_back(parse_aspect(opt.aspect));
  } else {
    targets.assign(ordiscore::kAllAspects.begin(), ordiscore::kAllAspects.end());
  }

  // one checkpoint per run; dicl/srr_m without --aspect runs once per aspect
  const bool per_aspect_files = !multi && targets.size() > 1;
  for (ordiscore::Aspect target : targets) {
    ordiscore::StrategySpec strategy{*kind, target};
    auto [params, log] = ordiscore::train(records, strategy, opt.hidden, cfg);

    const std::string suffix =
        per_aspect_files ? std::string("_") + ordiscore::aspect_name(target) : "";
    const std::string ckpt = (dir / ("checkpoint" + suffix + ".bin")).string();
    ordiscore::save_checkpoint(params, ckpt);
    log.checkpoint_path = ckpt;
    ordiscore::detail::write_text_file(
        (dir / ("trainlog" + suffix + ".jsonl")).string(),
        ordiscore::trainlog_to_jsonl(log));
    std::cout << "trained " << ordiscore::strategy_name(*kind)
              << (multi ? "" : std::string(" [") + ordiscore::aspect_name(target) + "]")
              << ": final loss " << log.epochs.back().mean_loss << ", checkpoint "
              << ckpt << "\n";
    if (multi) break;
  }

  write_manifest(opt.out_dir, "train",
                 json{{"data", opt.data_path},
                      {"strategy", opt.strategy},
                      {"aspect", opt.aspect},
                      {"hidden", opt.hidden},
                      {"lr", cfg.learning_rate},
                      {"weight_decay", cfg.weight_decay},
                      {"batch", cfg.batch_size},
                      {"epochs", cfg.epochs},
                      {"seed", cfg.seed},
                      {"shuffle", cfg.shuffle},
                      {"reference_preset", opt.reference_preset}});
  return 0;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct EvaluateOptions {
  std::string data_path;
  std::string features_path;
  std::string format = "auto";
  std::string out_dir;
  std::vector<std::string> checkpoints;
  std::string modes = "strict,tolerance1";
  bool calibrate = false;
  double alpha = 0.1;
  std::size_t folds = 5;
  std::uint64_t cal_seed = 0;
  bool clip_intervals = false;
};

std::vector<ordiscore::EvalMode> parse_modes(const std::string& csv) {
  std::vector<ordiscore::EvalMode> modes;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto mode = ordiscore::eval_mode_from_name(item);
    if (!mode) throw UsageError("unknown evaluation mode '" + item + "'");
    modes.push_back(*mode);
  }
  if (modes.empty()) throw UsageError("--modes selects no evaluation mode");
  return modes;
}

int cmd_evaluate(const EvaluateOptions& opt) {
  if (opt.checkpoints.empty()) throw UsageError("at least one --checkpoint is required");
  const auto records = load_records(opt.data_path, opt.format, opt.features_path);
  if (records.empty()) throw std::runtime_error("dataset is empty");

  std::vector<ordiscore::ScorerParams> models;
  models.reserve(opt.checkpoints.size());
  for (const auto& path : opt.checkpoints)
    models.push_back(ordiscore::load_checkpoint(path));

  const ordiscore::Strategy kind = models.front().strategy.kind;
  for (const auto& m : models) {
    if (m.strategy.kind != kind)
      throw std::runtime_error(std::string("checkpoints mix strategies ") +
                               ordiscore::strategy_name(kind) + " and " +
                               ordiscore::strategy_name(m.strategy.kind));
    if (m.input_dim != records.front().features.size())
      throw std::runtime_error(
          "checkpoint input_dim " + std::to_string(m.input_dim) +
          " does not match dataset feature length " +
          std::to_string(records.front().features.size()));
  }
  if (ordiscore::strategy_multi_aspect(kind) && models.size() > 1)
    throw UsageError("multi-aspect strategies take a single --checkpoint");

  std::vector<ordiscore::EvalMode> modes = parse_modes(opt.modes);
  if (kind == ordiscore::Strategy::DiCl)
    modes = {ordiscore::EvalMode::Strict};  // classification reports F1/MCC only
  const bool wants_highlow =
      std::find(modes.begin(), modes.end(), ordiscore::EvalMode::HighLowCal) !=
      modes.end();
  if (wants_highlow && !opt.calibrate)
    throw UsageError("mode highlowcal requires --calibrate");
  if (opt.calibrate && !ordiscore::strategy_has_variance(kind))
    throw UsageError(std::string("--calibrate requires a variance-predicting "
                                 "strategy (mrr_g or mrr_gc), got ") +
                     ordiscore::strategy_name(kind));

  // merge per-aspect prediction sets when several single-aspect checkpoints
  // are given
  std::vector<ordiscore::PredictionSet> predictions(records.size());
  for (const auto& m : models) {
    const auto part = ordiscore::forward_batch(m, records);
    for (std::size_t i = 0; i < records.size(); ++i)
      for (ordiscore::Aspect a : m.strategy.aspects()) {
        const int ai = static_cast<int>(a);
        if (predictions[i].by_aspect[ai])
          throw UsageError(std::string("two checkpoints predict aspect ") +
                           ordiscore::aspect_name(a));
        predictions[i].by_aspect[ai] = part[i].by_aspect[ai];
      }
  }

  for (ordiscore::Aspect a : ordiscore::kAllAspects)
    if (predictions.front().has(a))
      for (const auto& rec : records)
        if (!rec.has_aspect(a))
          throw std::runtime_error("utterance '" + rec.id +
                                   "' lacks gold scores for aspect " +
                                   ordiscore::aspect_name(a));

  ensure_out_dir(opt.out_dir);
  const fs::path dir(opt.out_dir);

  std::array<std::vector<double>, ordiscore::kAspectCount> gold_means;
  for (ordiscore::Aspect a : ordiscore::kAllAspects)
    if (predictions.front().has(a))
      gold_means[static_cast<int>(a)] = ordiscore::aspect_gold_means(records, a);

  std::vector<ordiscore::AspectIntervals> intervals;
  std::string coverage_ref;
  if (opt.calibrate) {
    const ordiscore::CalibrationResult calibration = ordiscore::calibrate_kfold(
        predictions, gold_means, opt.folds, opt.alpha, opt.cal_seed);
    intervals = ordiscore::build_intervals(predictions, calibration);
    if (opt.clip_intervals) {
      for (auto& row : intervals)
        for (auto& slot : row)
          if (slot) {
            slot->low = std::clamp(slot->low, ordiscore::kScoreMin, ordiscore::kScoreMax);
            slot->high = std::clamp(slot->high, ordiscore::kScoreMin, ordiscore::kScoreMax);
          }
    }
    const ordiscore::CoverageTable coverage =
        ordiscore::coverage_analysis(intervals, records);
    const auto cov = ordiscore::mean_coverage(intervals, gold_means,
                                              calibration.aspect_present);
    json coverage_json;
    coverage_json["calibration"] = ordiscore::calibration_to_json(calibration);
    coverage_json["coverage"] = ordiscore::coverage_to_json(coverage, &cov);
    write_json_file((dir / "coverage.json").string(), coverage_json);
    ordiscore::detail::write_text_file((dir / "coverage.csv").string(),
                                       ordiscore::coverage_to_csv(coverage));
    ordiscore::detail::write_text_file(
        (dir / "calibration.csv").string(),
        ordiscore::calibration_to_csv(calibration));
    ordiscore::detail::write_text_file(
        (dir / "intervals.csv").string(),
        ordiscore::intervals_to_csv(intervals, records));
    coverage_ref = "coverage.json";
  }

  ordiscore::EvaluationReport report = ordiscore::full_report(
      predictions, records, kind, modes, opt.calibrate ? &intervals : nullptr);
  report.coverage_ref = coverage_ref;

  write_json_file((dir / "report.json").string(),
                  ordiscore::report_to_json(report));
  const std::string text = ordiscore::report_to_text(report);
  ordiscore::detail::write_text_file((dir / "report.txt").string(), text);
  for (ordiscore::Aspect a : ordiscore::kAllAspects) {
    const auto& eval = report.aspects[static_cast<int>(a)];
    if (!eval.present) continue;
    for (const auto& [mode, matrix] : eval.confusions) {
      const std::string name = std::string("confusion_") + ordiscore::aspect_name(a) +
                               "_" + ordiscore::eval_mode_name(mode) + ".csv";
      ordiscore::detail::write_text_file((dir / name).string(),
                                         ordiscore::confusion_to_csv(matrix));
    }
  }

  write_manifest(opt.out_dir, "evaluate",
                 json{{"data", opt.data_path},
                      {"checkpoints", opt.checkpoints},
                      {"modes", opt.modes},
                      {"calibrate", opt.calibrate},
                      {"alpha", opt.alpha},
                      {"folds", opt.folds},
                      {"cal_seed", opt.cal_seed},
                      {"clip_intervals", opt.clip_intervals}});
  std::cout << text;
  return 0;
}

// ---------------------------------------------------------------------------
// agreement
// ---------------------------------------------------------------------------

struct AgreementOptions {
  std::string data_path;
  std::string features_path;
  std::string format = "auto";
  std::string out_dir;
};

int cmd_agreement(const AgreementOptions& opt) {
  const auto records = load_records(opt.data_path, opt.format, opt.features_path);
  if (records.empty()) throw std::runtime_error("dataset is empty");
  const std::size_t r = records.front().rater_count();
  if (r < 2)
    throw std::runtime_error("rater-rater agreement needs R >= 2 raters, dataset has " +
                             std::to_string(r));

  std::array<ordiscore::MeanSd, ordiscore::kAspectCount> qwk_rr;
  for (ordiscore::Aspect a : ordiscore::kAllAspects)
    qwk_rr[static_cast<int>(a)] = ordiscore::qwk_rater_rater(records, a);
  const std::size_t pairs = r * (r - 1) / 2;

  const std::string text = ordiscore::agreement_to_text(qwk_rr, pairs);
  std::cout << text;
  if (!opt.out_dir.empty()) {
    ensure_out_dir(opt.out_dir);
    const fs::path dir(opt.out_dir);
    write_json_file((dir / "agreement.json").string(),
                    ordiscore::agreement_to_json(qwk_rr, pairs));
    ordiscore::detail::write_text_file((dir / "agreement.txt").string(), text);
    write_manifest(opt.out_dir, "agreement", json{{"data", opt.data_path}});
  }
  return 0;
}

void add_dataset_options(CLI::App* cmd, std::string& data, std::string& features,
                         std::string& format) {
  cmd->add_option("--data", data, "annotation-jsonl dataset path")
      ->required()
      ->capture_default_str();
  cmd->add_option("--features", features,
                  "feature sidecar path (default: dataset path with .fbin)")
      ->capture_default_str();
  cmd->add_option("--format", format,
                  "dataset format: auto, jsonl (inline features) or binary (sidecar)")
      ->check(CLI::IsMember({"auto", "jsonl", "binary"}))
      ->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ordiscore: uncertainty-aware ordinal rubric scoring pipeline"};
  app.require_subcommand(1);

  GenerateOptions gen;
  CLI::App* generate = app.add_subcommand("generate", "write a synthetic multi-rater dataset");
  generate->add_option("--out", gen.out_dir, "output directory")->required();
  generate->add_option("--n", gen.n, "number of utterances")->capture_default_str();
  generate->add_option("--dim", gen.dim, "feature dimension")->capture_default_str();
  generate->add_option("--raters", gen.raters, "raters per utterance")->capture_default_str();
  generate->add_option("--noise-low", gen.noise_low, "lower rater-noise SD bound")
      ->capture_default_str();
  generate->add_option("--noise-high", gen.noise_high, "upper rater-noise SD bound")
      ->capture_default_str();
  generate->add_option("--seed", gen.seed, "generator seed")->capture_default_str();
  generate->add_flag("--inline-feat", gen.inline_feat,
                     "store features inline in the jsonl instead of a sidecar");

  TrainOptions tr;
  CLI::App* train = app.add_subcommand("train", "train a scorer on a dataset");
  add_dataset_options(train, tr.data_path, tr.features_path, tr.format);
  train->add_option("--out", tr.out_dir, "output directory")->required();
  train->add_option("--strategy", tr.strategy,
                    "objective: dicl, srr_m, mrr_m, mrr_g or mrr_gc")
      ->required()
      ->check(CLI::IsMember({"dicl", "srr_m", "mrr_m", "mrr_g", "mrr_gc"}));
  train->add_option("--aspect", tr.aspect,
                    "target aspect for dicl/srr_m (default: train all three)")
      ->check(CLI::IsMember({"accuracy", "fluency", "prosody"}))
      ->capture_default_str();
  train->add_option("--hidden", tr.hidden, "hidden layer width")->capture_default_str();
  auto* lr_opt = train->add_option("--lr", tr.lr, "learning rate")->capture_default_str();
  train->add_option("--weight-decay", tr.weight_decay, "decoupled weight decay")
      ->capture_default_str();
  auto* batch_opt = train->add_option("--batch", tr.batch, "mini-batch size")
                        ->capture_default_str();
  train->add_option("--epochs", tr.epochs, "training epochs")->capture_default_str();
  train->add_option("--seed", tr.seed, "seed for init and shuffling")->capture_default_str();
  train->add_flag("--no-shuffle", tr.no_shuffle, "keep dataset order every epoch");
  train->add_flag("--reference-preset", tr.reference_preset,
                  "use the reference full-model fine-tuning setting (lr 2e-5, batch 1)")
      ->excludes(lr_opt)
      ->excludes(batch_opt);

  EvaluateOptions ev;
  CLI::App* evaluate = app.add_subcommand("evaluate", "score a dataset against checkpoints");
  add_dataset_options(evaluate, ev.data_path, ev.features_path, ev.format);
  evaluate->add_option("--out", ev.out_dir, "output directory")->required();
  evaluate->add_option("--checkpoint", ev.checkpoints,
                       "checkpoint file (repeat for per-aspect models)")
      ->required();
  evaluate->add_option("--modes", ev.modes,
                       "comma list of strict, tolerance1, highlowcal")
      ->capture_default_str();
  evaluate->add_flag("--calibrate", ev.calibrate,
                     "run k-fold conformal calibration (mrr_g/mrr_gc)");
  evaluate->add_option("--alpha", ev.alpha, "miscoverage level (target 1-alpha)")
      ->capture_default_str();
  evaluate->add_option("--folds", ev.folds, "calibration folds")->capture_default_str();
  evaluate->add_option("--cal-seed", ev.cal_seed, "fold assignment seed")
      ->capture_default_str();
  evaluate->add_flag("--clip-intervals", ev.clip_intervals,
                     "clip prediction intervals to [1,10] before reporting");

  AgreementOptions ag;
  CLI::App* agreement =
      app.add_subcommand("agreement", "rater-rater QWK over all rater pairs");
  add_dataset_options(agreement, ag.data_path, ag.features_path, ag.format);
  agreement->add_option("--out", ag.out_dir, "optional output directory")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (generate->parsed()) return cmd_generate(gen);
    if (train->parsed()) return cmd_train(tr);
    if (evaluate->parsed()) return cmd_evaluate(ev);
    if (agreement->parsed()) return cmd_agreement(ag);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
