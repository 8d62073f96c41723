#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ordiscore/conformal.hpp"
#include "ordiscore/metrics.hpp"
#include "ordiscore/trainer.hpp"

namespace ordiscore {

namespace detail {

inline std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << text;
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// EvaluationReport
// ---------------------------------------------------------------------------

inline nlohmann::json metric_value_json(const MetricValue& v) {
  return nlohmann::json{{"value", v.value}, {"degenerate", v.degenerate}};
}

inline nlohmann::json report_to_json(const EvaluationReport& report) {
  nlohmann::json root;
  root["strategy"] = strategy_name(report.strategy);
  nlohmann::json aspects = nlohmann::json::object();
  for (Aspect a : kAllAspects) {
    const AspectEvaluation& eval = report.aspects[static_cast<int>(a)];
    if (!eval.present) continue;
    nlohmann::json node;
    nlohmann::json modes = nlohmann::json::object();
    for (const auto& [mode, mm] : eval.modes) {
      nlohmann::json m;
      m["weighted_f1"] = mm.weighted_f1;
      m["mcc"] = metric_value_json(mm.mcc);
      if (mm.has_regression_metrics) {
        m["pcc"] = metric_value_json(mm.pcc);
        m["rmse"] = mm.rmse;
      }
      modes[eval_mode_name(mode)] = m;
    }
    node["modes"] = modes;
    if (eval.has_qwk)
      node["qwk_model_rater"] = {{"mean", eval.qwk_mr.mean}, {"sd", eval.qwk_mr.sd}};
    aspects[aspect_name(a)] = node;
  }
  root["aspects"] = aspects;
  if (!report.coverage_ref.empty()) root["coverage_file"] = report.coverage_ref;
  return root;
}

// Aligned text table, one row per aspect and evaluation mode.
inline std::string report_to_text(const EvaluationReport& report) {
  std::ostringstream out;
  out << "strategy: " << strategy_name(report.strategy) << "\n\n";
  char line[160];
  std::snprintf(line, sizeof(line), "%-10s %-11s %8s %8s %8s %8s  %s\n", "aspect",
                "mode", "F1", "MCC", "PCC", "RMSE", "QWK (M-R)");
  out << line;
  out << std::string(68, '-') << "\n";
  for (Aspect a : kAllAspects) {
    const AspectEvaluation& eval = report.aspects[static_cast<int>(a)];
    if (!eval.present) continue;
    for (const auto& [mode, mm] : eval.modes) {
      std::string qwk_cell = "-";
      if (mode == EvalMode::Strict && eval.has_qwk)
        qwk_cell = detail::fmt(eval.qwk_mr.mean, 3) + " +/- " +
                   detail::fmt(eval.qwk_mr.sd, 3);
      const std::string pcc_cell =
          mm.has_regression_metrics ? detail::fmt(mm.pcc.value) : "-";
      const std::string rmse_cell =
          mm.has_regression_metrics ? detail::fmt(mm.rmse) : "-";
      std::snprintf(line, sizeof(line), "%-10s %-11s %8s %8s %8s %8s  %s\n",
                    aspect_name(a), eval_mode_name(mode),
                    detail::fmt(mm.weighted_f1).c_str(),
                    detail::fmt(mm.mcc.value).c_str(), pcc_cell.c_str(),
                    rmse_cell.c_str(), qwk_cell.c_str());
      out << line;
    }
  }
  return out.str();
}

// Long-form CSV, one row per cell, carrying the three per-cell values
// (count, percentage within the true class, percentage of all samples).
inline std::string confusion_to_csv(const ConfusionMatrix& m) {
  std::ostringstream out;
  out << "gold,pred,count,pct_of_gold_row,pct_of_total\n";
  for (int g = m.labels.lo; g <= m.labels.hi; ++g)
    for (int p = m.labels.lo; p <= m.labels.hi; ++p)
      out << g << ',' << p << ',' << m.at(g, p) << ','
          << detail::fmt(m.row_pct(g, p)) << ',' << detail::fmt(m.total_pct(g, p))
          << '\n';
  return out.str();
}

// ---------------------------------------------------------------------------
// Calibration + coverage
// ---------------------------------------------------------------------------

inline nlohmann::json calibration_to_json(const CalibrationResult& cal) {
  nlohmann::json root;
  root["alpha"] = cal.alpha;
  root["target_coverage"] = cal.target_coverage();
  root["folds"] = cal.k;
  root["seed"] = cal.seed;
  nlohmann::json q = nlohmann::json::object();
  nlohmann::json folds = nlohmann::json::object();
  for (Aspect a : kAllAspects) {
    const int ai = static_cast<int>(a);
    if (!cal.aspect_present[ai]) continue;
    q[aspect_name(a)] = cal.q_aspect[ai];
    nlohmann::json list = nlohmann::json::array();
    for (const FoldQuantile& fq : cal.fold_quantiles[ai])
      list.push_back({{"fold", fq.fold},
                      {"calib_size", fq.calib_size},
                      {"q", fq.q},
                      {"insufficient", fq.insufficient}});
    folds[aspect_name(a)] = list;
  }
  root["q_aspect"] = q;
  root["fold_quantiles"] = folds;
  return root;
}

inline nlohmann::json coverage_to_json(
    const CoverageTable& table,
    const std::array<double, kAspectCount>* mean_cov = nullptr) {
  nlohmann::json root;
  root["rater_count"] = table.rater_count;
  root["n_utterances"] = table.n_utterances;
  nlohmann::json aspects = nlohmann::json::object();
  for (Aspect a : kAllAspects) {
    const int ai = static_cast<int>(a);
    if (!table.aspect_present[ai]) continue;
    nlohmann::json node;
    node["exact_pct"] = table.exact_pct[ai];
    node["ge_pct"] = table.ge_pct[ai];
    node["le_pct"] = table.le_pct[ai];
    if (mean_cov != nullptr) node["mean_coverage"] = (*mean_cov)[ai];
    aspects[aspect_name(a)] = node;
  }
  root["aspects"] = aspects;
  return root;
}

inline std::string calibration_to_csv(const CalibrationResult& cal) {
  std::ostringstream out;
  out << "aspect,fold,calib_size,fold_q,insufficient,q_aspect,alpha,target_coverage\n";
  for (Aspect a : kAllAspects) {
    const int ai = static_cast<int>(a);
    if (!cal.aspect_present[ai]) continue;
    for (const FoldQuantile& fq : cal.fold_quantiles[ai])
      out << aspect_name(a) << ',' << fq.fold << ',' << fq.calib_size << ','
          << detail::fmt(fq.q, 6) << ',' << (fq.insufficient ? 1 : 0) << ','
          << detail::fmt(cal.q_aspect[ai], 6) << ',' << detail::fmt(cal.alpha, 6)
          << ',' << detail::fmt(cal.target_coverage(), 6) << '\n';
  }
  return out.str();
}

inline std::string coverage_to_csv(const CoverageTable& table) {
  std::ostringstream out;
  out << "aspect,raters_in_interval,exact_pct,ge_pct,le_pct\n";
  for (Aspect a : kAllAspects) {
    const int ai = static_cast<int>(a);
    if (!table.aspect_present[ai]) continue;
    for (std::size_t c = 0; c <= table.rater_count; ++c)
      out << aspect_name(a) << ',' << c << ',' << detail::fmt(table.exact_pct[ai][c])
          << ',' << detail::fmt(table.ge_pct[ai][c]) << ','
          << detail::fmt(table.le_pct[ai][c]) << '\n';
  }
  return out.str();
}

inline std::string intervals_to_csv(const std::vector<AspectIntervals>& intervals,
                                    const std::vector<UtteranceRecord>& records) {
  std::ostringstream out;
  out << "id,aspect,center,sigma,low,high\n";
  for (std::size_t i = 0; i < intervals.size(); ++i) {
    for (Aspect a : kAllAspects) {
      const auto& slot = intervals[i][static_cast<int>(a)];
      if (!slot) continue;
      out << records[i].id << ',' << aspect_name(a) << ','
          << detail::fmt(slot->center, 6) << ',' << detail::fmt(slot->sigma, 6)
          << ',' << detail::fmt(slot->low, 6) << ',' << detail::fmt(slot->high, 6)
          << '\n';
    }
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Train log (JSON lines, one record per epoch)
// ---------------------------------------------------------------------------

inline std::string trainlog_to_jsonl(const TrainLog& log) {
  std::ostringstream out;
  for (const EpochLog& e : log.epochs) {
    nlohmann::json obj;
    obj["epoch"] = e.epoch;
    obj["mean_loss"] = e.mean_loss;
    nlohmann::json per_aspect = nlohmann::json::object();
    for (Aspect a : kAllAspects)
      if (e.aspect_present[static_cast<int>(a)])
        per_aspect[aspect_name(a)] = e.per_aspect[static_cast<int>(a)];
    obj["per_aspect"] = per_aspect;
    obj["wall_seconds"] = e.wall_seconds;
    out << obj.dump() << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Rater-rater agreement
// ---------------------------------------------------------------------------

inline nlohmann::json agreement_to_json(
    const std::array<MeanSd, kAspectCount>& qwk_rr, std::size_t pair_count) {
  nlohmann::json root;
  root["rater_pairs"] = pair_count;
  nlohmann::json aspects = nlohmann::json::object();
  for (Aspect a : kAllAspects)
    aspects[aspect_name(a)] = {{"qwk_mean", qwk_rr[static_cast<int>(a)].mean},
                               {"qwk_sd", qwk_rr[static_cast<int>(a)].sd}};
  root["aspects"] = aspects;
  return root;
}

inline std::string agreement_to_text(
    const std::array<MeanSd, kAspectCount>& qwk_rr, std::size_t pair_count) {
  std::ostringstream out;
  out << "rater-rater QWK over " << pair_count << " rater pairs\n";
  for (Aspect a : kAllAspects) {
    const MeanSd& ms = qwk_rr[static_cast<int>(a)];
    out << "  " << aspect_name(a) << ": " << detail::fmt(ms.mean) << " +/- "
        << detail::fmt(ms.sd) << "\n";
  }
  return out.str();
}

}  // namespace ordiscore
