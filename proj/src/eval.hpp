#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "manifest.hpp"
#include "model.hpp"
#include "splits.hpp"

namespace dssc {

// Metrics for one plan (or an aggregate over plans). counts is the raw
// confusion matrix [true][pred]; confusion is its row-normalized form with
// all-zero rows where a true class has no support. Macro metrics average
// over classes with support only; a never-predicted class contributes
// precision 0.
struct EvalReport {
  std::string plan_id;
  int n_classes = 0;
  std::int64_t n_total = 0;
  double accuracy = 0.0;
  std::vector<std::int64_t> support;    // per true class
  std::vector<std::int64_t> counts;     // n_classes * n_classes
  std::vector<double> confusion;        // n_classes * n_classes, rows sum to 1
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
};

// Pure counting core; truth and pred are parallel and non-empty.
EvalReport report_from_predictions(const std::string& plan_id, int n_classes,
                                   const std::vector<int>& truth,
                                   const std::vector<int>& pred);

// Where the cached features of an utterance live: the manifest-relative path
// under cache_dir with its extension replaced by ".mel".
std::string cache_path_for(const std::string& cache_dir,
                           const std::string& utterance);

// Eval-mode inference over every test utterance of the plan, labels inherited
// from the test speaker's severity. Argmax ties resolve to the lower class
// index. All cached features must exist up front; the error lists every
// missing utterance.
EvalReport evaluate(const Model& model, const SplitPlan& plan,
                    const CorpusManifest& manifest,
                    const std::string& cache_dir);

// Unweighted mean accuracy; confusion rows averaged cellwise over the plans
// where that row has support, then re-normalized; macro metrics averaged
// over plans. Supports and counts are summed.
EvalReport aggregate(const std::vector<EvalReport>& reports);

// Header plus one row per report: plan_id, sizes, accuracy, macro metrics.
void write_report_csv(const std::string& path,
                      const std::vector<EvalReport>& reports);

// Row-major normalized confusion matrix, one CSV row per true class.
void write_confusion_csv(const std::string& path, const EvalReport& report);

// One row per test utterance: utterance_id,true_label,e1..e_d.
void export_embeddings(const Model& model, const SplitPlan& plan,
                       const CorpusManifest& manifest,
                       const std::string& cache_dir,
                       const std::string& out_path);

}  // namespace dssc
