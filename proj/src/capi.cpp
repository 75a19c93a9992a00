#include "dssc.h"

#include <cstring>
#include <exception>
#include <string>
#include <utility>

#include "checkpoint.hpp"
#include "error.hpp"
#include "experiment.hpp"
#include "melspec.hpp"
#include "model.hpp"
#include "tensor.hpp"

namespace {

thread_local std::string g_last_error;

dssc_status status_of(dssc::ErrorCode code) {
  switch (code) {
    case dssc::ErrorCode::invalid_argument: return DSSC_E_INVALID_ARGUMENT;
    case dssc::ErrorCode::shape_mismatch: return DSSC_E_SHAPE_MISMATCH;
    case dssc::ErrorCode::io: return DSSC_E_IO;
    case dssc::ErrorCode::format: return DSSC_E_FORMAT;
    case dssc::ErrorCode::not_found: return DSSC_E_NOT_FOUND;
    case dssc::ErrorCode::config: return DSSC_E_CONFIG;
    case dssc::ErrorCode::numeric: return DSSC_E_NUMERIC;
    case dssc::ErrorCode::unsupported: return DSSC_E_UNSUPPORTED;
    case dssc::ErrorCode::internal: return DSSC_E_INTERNAL;
  }
  return DSSC_E_INTERNAL;
}

template <typename Fn>
dssc_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return DSSC_OK;
  } catch (const dssc::Error& e) {
    g_last_error = e.what();
    return status_of(e.code());
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return DSSC_E_INTERNAL;
  } catch (...) {
    g_last_error = "unknown failure";
    return DSSC_E_INTERNAL;
  }
}

dssc::RunOptions convert(const dssc_run_options* o) {
  dssc::RunOptions r;
  if (o == nullptr) return r;
  if (o->plan_id != nullptr) r.plan_id = o->plan_id;
  r.jobs = o->jobs > 0 ? o->jobs : 1;
  r.has_seed = o->has_seed != 0;
  r.seed = o->seed;
  if (o->out_dir != nullptr) r.out_dir = o->out_dir;
  if (o->cache_dir != nullptr) r.cache_dir = o->cache_dir;
  r.verbose = o->verbose != 0;
  return r;
}

void require_arg(const void* p, const char* name) {
  if (p == nullptr) {
    throw dssc::Error(dssc::ErrorCode::invalid_argument,
                      std::string(name) + " is null");
  }
}

// Lowest index wins a tie, matching the evaluation harness.
int argmax_row(const float* row, int n) {
  int best = 0;
  for (int k = 1; k < n; ++k) {
    if (row[k] > row[best]) best = k;
  }
  return best;
}

}  // namespace

struct dssc_model {
  dssc::Model model;
  std::string arch_json;
};

extern "C" {

const char* dssc_version(void) { return dssc::version(); }

const char* dssc_status_name(dssc_status status) {
  switch (status) {
    case DSSC_OK: return "ok";
    case DSSC_E_INVALID_ARGUMENT: return "invalid_argument";
    case DSSC_E_SHAPE_MISMATCH: return "shape_mismatch";
    case DSSC_E_IO: return "io";
    case DSSC_E_FORMAT: return "format";
    case DSSC_E_NOT_FOUND: return "not_found";
    case DSSC_E_CONFIG: return "config";
    case DSSC_E_NUMERIC: return "numeric";
    case DSSC_E_UNSUPPORTED: return "unsupported";
    case DSSC_E_INTERNAL: return "internal";
  }
  return "internal";
}

const char* dssc_last_error(void) { return g_last_error.c_str(); }

dssc_status dssc_synth(const char* spec_path, const char* out_dir,
                       int has_seed, unsigned long long seed,
                       int* n_files_out) {
  return guarded([&] {
    require_arg(spec_path, "spec_path");
    require_arg(out_dir, "out_dir");
    auto summary = dssc::cmd_synth(spec_path, out_dir, has_seed != 0, seed);
    if (n_files_out != nullptr) *n_files_out = summary.n_files;
  });
}

dssc_status dssc_preprocess(const char* config_path,
                            const dssc_run_options* options,
                            int64_t* n_utterances_out) {
  return guarded([&] {
    require_arg(config_path, "config_path");
    auto n = dssc::cmd_preprocess(dssc::load_experiment_config(config_path),
                                  convert(options));
    if (n_utterances_out != nullptr) *n_utterances_out = n;
  });
}

dssc_status dssc_splits(const char* config_path,
                        const dssc_run_options* options, int* n_plans_out) {
  return guarded([&] {
    require_arg(config_path, "config_path");
    auto ids = dssc::cmd_splits(dssc::load_experiment_config(config_path),
                                convert(options));
    if (n_plans_out != nullptr) *n_plans_out = static_cast<int>(ids.size());
  });
}

dssc_status dssc_train(const char* config_path,
                       const dssc_run_options* options,
                       double* mean_final_loss_out,
                       double* mean_final_accuracy_out) {
  return guarded([&] {
    require_arg(config_path, "config_path");
    auto summary = dssc::cmd_train(dssc::load_experiment_config(config_path),
                                   convert(options));
    if (mean_final_loss_out != nullptr) {
      *mean_final_loss_out = summary.mean_final_loss;
    }
    if (mean_final_accuracy_out != nullptr) {
      *mean_final_accuracy_out = summary.mean_final_accuracy;
    }
  });
}

dssc_status dssc_finetune(const char* config_path,
                          const dssc_run_options* options,
                          double* mean_final_loss_out,
                          double* mean_final_accuracy_out) {
  return guarded([&] {
    require_arg(config_path, "config_path");
    auto summary = dssc::cmd_finetune(
        dssc::load_experiment_config(config_path), convert(options));
    if (mean_final_loss_out != nullptr) {
      *mean_final_loss_out = summary.mean_final_loss;
    }
    if (mean_final_accuracy_out != nullptr) {
      *mean_final_accuracy_out = summary.mean_final_accuracy;
    }
  });
}

dssc_status dssc_eval(const char* config_path,
                      const dssc_run_options* options,
                      double* mean_accuracy_out, double* macro_f1_out) {
  return guarded([&] {
    require_arg(config_path, "config_path");
    auto summary = dssc::cmd_eval(dssc::load_experiment_config(config_path),
                                  convert(options));
    if (mean_accuracy_out != nullptr) {
      *mean_accuracy_out = summary.overall.accuracy;
    }
    if (macro_f1_out != nullptr) *macro_f1_out = summary.overall.macro_f1;
  });
}

dssc_status dssc_ablate(const char* config_path,
                        const dssc_run_options* options) {
  return guarded([&] {
    require_arg(config_path, "config_path");
    dssc::cmd_ablate(dssc::load_experiment_config(config_path),
                     convert(options));
  });
}

dssc_status dssc_export_embeddings(const char* config_path,
                                   const dssc_run_options* options,
                                   int* n_files_out) {
  return guarded([&] {
    require_arg(config_path, "config_path");
    auto n = dssc::cmd_export_embeddings(
        dssc::load_experiment_config(config_path), convert(options));
    if (n_files_out != nullptr) *n_files_out = n;
  });
}

dssc_status dssc_model_open(const char* checkpoint_path, dssc_model** out) {
  return guarded([&] {
    require_arg(checkpoint_path, "checkpoint_path");
    require_arg(out, "out");
    auto ckpt = dssc::load_checkpoint<float>(checkpoint_path);
    auto* handle = new dssc_model;
    handle->model = std::move(ckpt.model);
    handle->arch_json = dssc::arch_to_json(handle->model.config);
    *out = handle;
  });
}

void dssc_model_close(dssc_model* model) { delete model; }

int dssc_model_n_classes(const dssc_model* model) {
  return model == nullptr ? -1 : model->model.config.n_classes;
}

int dssc_model_embedding_dim(const dssc_model* model) {
  return model == nullptr ? -1 : model->model.embedding_dim();
}

dssc_status dssc_model_arch_json(const dssc_model* model, char* buf,
                                 size_t buf_size, size_t* needed) {
  return guarded([&] {
    require_arg(model, "model");
    const size_t want = model->arch_json.size() + 1;
    if (needed != nullptr) *needed = want;
    if (buf != nullptr && buf_size >= want) {
      std::memcpy(buf, model->arch_json.c_str(), want);
    }
  });
}

dssc_status dssc_model_classify_wav(dssc_model* model, const char* wav_path,
                                    double* probs, int* predicted) {
  return guarded([&] {
    require_arg(model, "model");
    require_arg(wav_path, "wav_path");
    const auto image = dssc::replicate_planes(dssc::wav_to_plane(wav_path));
    const auto pred = dssc::classify(model->model, image);
    const int n = model->model.config.n_classes;
    if (probs != nullptr) {
      for (int k = 0; k < n; ++k) probs[k] = pred.probs[k];
    }
    if (predicted != nullptr) *predicted = argmax_row(pred.probs.data(), n);
  });
}

dssc_status dssc_model_classify_mel(dssc_model* model, const float* mel,
                                    int rows, int cols, double* probs,
                                    int* predicted) {
  return guarded([&] {
    require_arg(model, "model");
    require_arg(mel, "mel");
    if (rows < 1 || cols < 1) {
      throw dssc::Error(dssc::ErrorCode::invalid_argument,
                        "mel dimensions must be positive");
    }
    auto plane = dssc::make_tensor<float>(std::vector<int>{rows, cols});
    std::memcpy(plane->data(), mel,
                sizeof(float) * static_cast<size_t>(rows) * cols);
    const auto pred =
        dssc::classify(model->model, dssc::replicate_planes(*plane));
    const int n = model->model.config.n_classes;
    if (probs != nullptr) {
      for (int k = 0; k < n; ++k) probs[k] = pred.probs[k];
    }
    if (predicted != nullptr) *predicted = argmax_row(pred.probs.data(), n);
  });
}

}  // extern "C"
