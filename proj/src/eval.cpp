#include "eval.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "error.hpp"
#include "melspec.hpp"
#include "tensor.hpp"

namespace dssc {

namespace {

struct TestItem {
  std::string utterance;
  int label = 0;
};

// Test-side utterances in a fixed order: plan speakers sorted, then each
// speaker's manifest order.
std::vector<TestItem> collect_test_items(const SplitPlan& plan,
                                         const CorpusManifest& manifest) {
  std::vector<std::string> speakers = plan.test;
  std::sort(speakers.begin(), speakers.end());
  std::vector<TestItem> items;
  for (const auto& id : speakers) {
    const SpeakerEntry* s = find_speaker(manifest, id);
    if (!s) {
      throw Error(ErrorCode::invalid_argument,
                  "plan " + plan.plan_id + " references unknown speaker " + id);
    }
    for (const auto& u : s->utterances) {
      items.push_back({u, static_cast<int>(s->severity)});
    }
  }
  if (items.empty()) {
    throw Error(ErrorCode::invalid_argument,
                "plan " + plan.plan_id +
                    " has no test utterances; the manifest lists no audio for "
                    "its test speakers");
  }
  return items;
}

void require_model_matches(const Model& model, const CorpusManifest& manifest) {
  const int want = manifest_n_classes(manifest);
  if (model.config.n_classes != want) {
    throw Error(ErrorCode::config,
                "model has " + std::to_string(model.config.n_classes) +
                    " classes but the manifest implies " +
                    std::to_string(want));
  }
}

void require_cached(const std::vector<TestItem>& items,
                    const std::string& cache_dir) {
  std::vector<std::string> missing;
  for (const auto& it : items) {
    if (!std::filesystem::exists(cache_path_for(cache_dir, it.utterance))) {
      missing.push_back(it.utterance);
    }
  }
  if (!missing.empty()) {
    std::string msg = "missing cached features for " +
                      std::to_string(missing.size()) + " utterance(s): ";
    for (std::size_t i = 0; i < missing.size(); ++i) {
      if (i) msg += ", ";
      msg += missing[i];
    }
    msg += "; run the preprocess step first";
    throw Error(ErrorCode::not_found, msg);
  }
}

int argmax_lowest(const float* row, int n) {
  int best = 0;
  for (int k = 1; k < n; ++k) {
    if (row[k] > row[best]) best = k;
  }
  return best;
}

// Loads a batch of cached planes into [B,3,S,S] and runs eval-mode
// inference. visit sees (item index, logits row, embedding row).
template <typename Visit>
void batched_inference(const Model& model, const std::vector<TestItem>& items,
                       const std::string& cache_dir, const Visit& visit) {
  const int size = model.config.image_size;
  const int batch = 16;
  const std::int64_t plane = static_cast<std::int64_t>(size) * size;
  for (std::size_t start = 0; start < items.size(); start += batch) {
    const int b =
        static_cast<int>(std::min<std::size_t>(batch, items.size() - start));
    auto x = make_tensor<float>(std::vector<int>{b, 3, size, size});
    for (int j = 0; j < b; ++j) {
      const auto& it = items[start + j];
      Tensor<float> mel = read_mel_cache(cache_path_for(cache_dir, it.utterance));
      if (mel.dim(0) != size || mel.dim(1) != size) {
        throw Error(ErrorCode::shape_mismatch,
                    "cached features for " + it.utterance + " are " +
                        mel.shape_str() + ", model expects (" +
                        std::to_string(size) + ", " + std::to_string(size) +
                        ")");
      }
      float* dst = x->data() + static_cast<std::int64_t>(j) * 3 * plane;
      for (int c = 0; c < 3; ++c) {
        std::copy(mel.data(), mel.data() + plane, dst + c * plane);
      }
    }
    auto pred = classify(model, *x);
    const int d = pred.embedding.dim(1);
    for (int j = 0; j < b; ++j) {
      visit(start + j, pred.logits.data() + static_cast<std::int64_t>(j) *
                                                model.config.n_classes,
            pred.embedding.data() + static_cast<std::int64_t>(j) * d, d);
    }
  }
}

}  // namespace

EvalReport report_from_predictions(const std::string& plan_id, int n_classes,
                                   const std::vector<int>& truth,
                                   const std::vector<int>& pred) {
  if (n_classes < 2) {
    throw Error(ErrorCode::invalid_argument,
                "need at least two classes, got " + std::to_string(n_classes));
  }
  if (truth.empty() || truth.size() != pred.size()) {
    throw Error(ErrorCode::invalid_argument,
                "truth and prediction lists must be non-empty and parallel");
  }
  EvalReport r;
  r.plan_id = plan_id;
  r.n_classes = n_classes;
  r.n_total = static_cast<std::int64_t>(truth.size());
  r.support.assign(n_classes, 0);
  r.counts.assign(static_cast<std::size_t>(n_classes) * n_classes, 0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth[i], p = pred[i];
    if (t < 0 || t >= n_classes || p < 0 || p >= n_classes) {
      throw Error(ErrorCode::invalid_argument,
                  "label out of range at index " + std::to_string(i));
    }
    ++r.support[t];
    ++r.counts[static_cast<std::size_t>(t) * n_classes + p];
  }

  std::int64_t trace = 0;
  std::vector<std::int64_t> predicted(n_classes, 0);
  for (int t = 0; t < n_classes; ++t) {
    trace += r.counts[static_cast<std::size_t>(t) * n_classes + t];
    for (int p = 0; p < n_classes; ++p) {
      predicted[p] += r.counts[static_cast<std::size_t>(t) * n_classes + p];
    }
  }
  r.accuracy = static_cast<double>(trace) / static_cast<double>(r.n_total);

  r.confusion.assign(static_cast<std::size_t>(n_classes) * n_classes, 0.0);
  for (int t = 0; t < n_classes; ++t) {
    if (r.support[t] == 0) continue;
    for (int p = 0; p < n_classes; ++p) {
      r.confusion[static_cast<std::size_t>(t) * n_classes + p] =
          static_cast<double>(r.counts[static_cast<std::size_t>(t) * n_classes + p]) /
          static_cast<double>(r.support[t]);
    }
  }

  int supported = 0;
  double sp = 0.0, sr = 0.0, sf = 0.0;
  for (int c = 0; c < n_classes; ++c) {
    if (r.support[c] == 0) continue;
    ++supported;
    const auto tp = static_cast<double>(
        r.counts[static_cast<std::size_t>(c) * n_classes + c]);
    const double prec = predicted[c] > 0 ? tp / static_cast<double>(predicted[c]) : 0.0;
    const double rec = tp / static_cast<double>(r.support[c]);
    const double f1 = prec + rec > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
    sp += prec;
    sr += rec;
    sf += f1;
  }
  r.macro_precision = sp / supported;
  r.macro_recall = sr / supported;
  r.macro_f1 = sf / supported;
  return r;
}

std::string cache_path_for(const std::string& cache_dir,
                           const std::string& utterance) {
  std::string rel = utterance;
  const auto slash = rel.find_last_of('/');
  const auto dot = rel.find_last_of('.');
  if (dot != std::string::npos &&
      (slash == std::string::npos || dot > slash)) {
    rel.resize(dot);
  }
  rel += ".mel";
  return (std::filesystem::path(cache_dir) / rel).string();
}

EvalReport evaluate(const Model& model, const SplitPlan& plan,
                    const CorpusManifest& manifest,
                    const std::string& cache_dir) {
  require_model_matches(model, manifest);
  const auto items = collect_test_items(plan, manifest);
  require_cached(items, cache_dir);

  std::vector<int> truth(items.size()), pred(items.size());
  batched_inference(model, items, cache_dir,
                    [&](std::size_t i, const float* logits, const float*, int) {
                      truth[i] = items[i].label;
                      pred[i] = argmax_lowest(logits, model.config.n_classes);
                    });
  return report_from_predictions(plan.plan_id, model.config.n_classes, truth,
                                 pred);
}

EvalReport aggregate(const std::vector<EvalReport>& reports) {
  if (reports.empty()) {
    throw Error(ErrorCode::invalid_argument, "nothing to aggregate");
  }
  const int n = reports.front().n_classes;
  for (const auto& r : reports) {
    if (r.n_classes != n) {
      throw Error(ErrorCode::invalid_argument,
                  "mixed class sets: " + std::to_string(n) + " vs " +
                      std::to_string(r.n_classes) + " (plan " + r.plan_id +
                      ")");
    }
  }

  EvalReport out;
  out.plan_id = "aggregate";
  out.n_classes = n;
  out.support.assign(n, 0);
  out.counts.assign(static_cast<std::size_t>(n) * n, 0);
  out.confusion.assign(static_cast<std::size_t>(n) * n, 0.0);

  for (const auto& r : reports) {
    out.n_total += r.n_total;
    out.accuracy += r.accuracy;
    out.macro_precision += r.macro_precision;
    out.macro_recall += r.macro_recall;
    out.macro_f1 += r.macro_f1;
    for (int c = 0; c < n; ++c) out.support[c] += r.support[c];
    for (std::size_t k = 0; k < out.counts.size(); ++k) {
      out.counts[k] += r.counts[k];
    }
  }
  const auto m = static_cast<double>(reports.size());
  out.accuracy /= m;
  out.macro_precision /= m;
  out.macro_recall /= m;
  out.macro_f1 /= m;

  // Each row averages only the plans that actually saw that true class,
  // then is re-normalized to stay row-stochastic.
  for (int t = 0; t < n; ++t) {
    int with_support = 0;
    std::vector<double> row(n, 0.0);
    for (const auto& r : reports) {
      if (r.support[t] == 0) continue;
      ++with_support;
      for (int p = 0; p < n; ++p) {
        row[p] += r.confusion[static_cast<std::size_t>(t) * n + p];
      }
    }
    if (with_support == 0) continue;
    double sum = 0.0;
    for (double v : row) sum += v;
    for (int p = 0; p < n; ++p) {
      out.confusion[static_cast<std::size_t>(t) * n + p] =
          sum > 0.0 ? row[p] / sum : 0.0;
    }
  }
  return out;
}

void write_report_csv(const std::string& path,
                      const std::vector<EvalReport>& reports) {
  std::ofstream f(path, std::ios::trunc);
  if (!f.good()) {
    throw Error(ErrorCode::io, "cannot open " + path + " for writing");
  }
  f << "plan_id,n_classes,n_test,accuracy,macro_precision,macro_recall,"
       "macro_f1\n";
  char buf[256];
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof(buf), "%s,%d,%lld,%.17g,%.17g,%.17g,%.17g\n",
                  r.plan_id.c_str(), r.n_classes,
                  static_cast<long long>(r.n_total), r.accuracy,
                  r.macro_precision, r.macro_recall, r.macro_f1);
    f << buf;
  }
  if (!f.good()) throw Error(ErrorCode::io, "short write to " + path);
}

void write_confusion_csv(const std::string& path, const EvalReport& report) {
  std::ofstream f(path, std::ios::trunc);
  if (!f.good()) {
    throw Error(ErrorCode::io, "cannot open " + path + " for writing");
  }
  char buf[64];
  const int n = report.n_classes;
  for (int t = 0; t < n; ++t) {
    for (int p = 0; p < n; ++p) {
      std::snprintf(buf, sizeof(buf), "%.17g",
                    report.confusion[static_cast<std::size_t>(t) * n + p]);
      f << buf << (p + 1 < n ? "," : "\n");
    }
  }
  if (!f.good()) throw Error(ErrorCode::io, "short write to " + path);
}

void export_embeddings(const Model& model, const SplitPlan& plan,
                       const CorpusManifest& manifest,
                       const std::string& cache_dir,
                       const std::string& out_path) {
  require_model_matches(model, manifest);
  const auto items = collect_test_items(plan, manifest);
  require_cached(items, cache_dir);

  std::ofstream f(out_path, std::ios::trunc);
  if (!f.good()) {
    throw Error(ErrorCode::io, "cannot open " + out_path + " for writing");
  }
  f << "utterance_id,true_label";
  const int d = model.embedding_dim();
  for (int k = 1; k <= d; ++k) f << ",e" << k;
  f << "\n";

  // Rows land in item order because batches are visited in order.
  char buf[32];
  batched_inference(
      model, items, cache_dir,
      [&](std::size_t i, const float*, const float* emb, int dim) {
        f << items[i].utterance << "," << items[i].label;
        for (int k = 0; k < dim; ++k) {
          // %.9g round-trips binary32 exactly.
          std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(emb[k]));
          f << "," << buf;
        }
        f << "\n";
      });
  if (!f.good()) throw Error(ErrorCode::io, "short write to " + out_path);
}

}  // namespace dssc
