#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "eval.hpp"
#include "manifest.hpp"
#include "model.hpp"
#include "splits.hpp"
#include "train.hpp"

namespace dssc {

const char* version();

// One experiment = one config file. Command-line flags override only the
// scalar fields mirrored in RunOptions; everything else lives in the file.
struct ExperimentConfig {
  std::string manifest;     // corpus manifest path
  std::string audio_root;   // empty: the manifest's own directory
  std::string cache_dir;    // mel feature cache
  std::string out_dir;      // run artifacts
  std::string arch_preset;  // non-empty when the arch was named by preset
  ArchConfig arch;
  TrainConfig train;  // train.seed is the experiment seed
  Protocol protocol = Protocol::osps;
  std::string pretrain_checkpoint;  // consumed by finetune only
};

// Structural problems only; path existence is checked when a command runs.
std::vector<std::string> experiment_config_violations(
    const ExperimentConfig& c);

// Canonical single-line JSON (sorted keys). The arch round-trips as its
// preset name when one was given, otherwise inline.
std::string experiment_config_to_json(const ExperimentConfig& c);
ExperimentConfig experiment_config_from_json(const std::string& text);
ExperimentConfig load_experiment_config(const std::string& path);

// FNV-1a of the canonical JSON with the artifact locations (audio_root,
// cache_dir, out_dir) removed, 16 hex digits. Stamped into run metadata and
// into every checkpoint the run writes; identifies the experiment rather
// than where its files happen to live.
std::string experiment_config_hash(const ExperimentConfig& c);

struct RunOptions {
  std::string plan_id;  // empty: every plan of the protocol
  int jobs = 1;         // worker threads across plans (or utterances)
  bool has_seed = false;
  std::uint64_t seed = 0;  // replaces the config seed when has_seed
  std::string out_dir;     // empty: config's
  std::string cache_dir;   // empty: DSSC_CACHE env, then config's
  bool verbose = false;    // per-plan progress on stdout
};

// The config a run actually executes, with overrides and the DSSC_CACHE
// environment variable folded in.
ExperimentConfig resolve_config(const ExperimentConfig& c,
                                const RunOptions& opt);

struct SynthSummary {
  CorpusManifest manifest;
  int n_files = 0;
};

// Generates the corpus described by the spec file into out_dir and records
// run metadata beside it. A seed override replaces the spec's seed.
SynthSummary cmd_synth(const std::string& spec_path,
                       const std::string& out_dir, bool has_seed,
                       std::uint64_t seed);

// Extracts cached mel planes for every utterance in the manifest. Returns
// the number of utterances processed.
std::int64_t cmd_preprocess(const ExperimentConfig& c, const RunOptions& opt);

// Writes one plan file per split under <out>/plans. Returns the plan ids.
std::vector<std::string> cmd_splits(const ExperimentConfig& c,
                                    const RunOptions& opt);

struct PlanOutcome {
  std::string plan_id;
  double final_loss = 0.0;
  double final_accuracy = 0.0;
};

struct TrainSummary {
  std::vector<PlanOutcome> plans;
  double mean_final_loss = 0.0;
  double mean_final_accuracy = 0.0;
  std::int64_t n_params = 0;
};

// Trains one model per split plan; each plan writes
// <out>/<plan_id>/model.ckpt and train_log.csv.
TrainSummary cmd_train(const ExperimentConfig& c, const RunOptions& opt);

// Same sweep, but every model starts from pretrain_checkpoint with the head
// re-initialized when the class count differs.
TrainSummary cmd_finetune(const ExperimentConfig& c, const RunOptions& opt);

struct EvalSummary {
  std::vector<EvalReport> reports;  // one per plan, plan order
  EvalReport overall;               // aggregate over the plans
};

// Scores the checkpoints a train sweep left in <out>; writes per-plan
// confusion matrices and <out>/report.csv.
EvalSummary cmd_eval(const ExperimentConfig& c, const RunOptions& opt);

struct AblateRow {
  std::string preset;
  std::int64_t n_params = 0;
  double mean_final_loss = 0.0;
  double mean_accuracy = 0.0;
  double macro_f1 = 0.0;
};

// Train + eval sweeps for presets C1..C6 under <out>/<preset>, summarized
// in <out>/ablation.csv.
std::vector<AblateRow> cmd_ablate(const ExperimentConfig& c,
                                  const RunOptions& opt);

// Writes <out>/<plan_id>/embeddings.csv for the selected plans using their
// trained checkpoints. Returns the number of files written.
int cmd_export_embeddings(const ExperimentConfig& c, const RunOptions& opt);

}  // namespace dssc
