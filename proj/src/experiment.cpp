#include "experiment.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "checkpoint.hpp"
#include "dataset.hpp"
#include "error.hpp"
#include "hash.hpp"
#include "melspec.hpp"
#include "synth.hpp"

namespace dssc {

namespace {

using nlohmann::json;

namespace fs = std::filesystem;

std::string joined(const std::vector<std::string>& parts,
                   const char* sep = "; ") {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

[[noreturn]] void throw_config(const std::string& prefix,
                               const std::vector<std::string>& violations) {
  throw Error(ErrorCode::config, prefix + ": " + joined(violations));
}

std::string read_text(const std::string& path) {
  std::ifstream f(path);
  if (!f.good()) throw Error(ErrorCode::io, "cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  fs::create_directories(fs::path(path).parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f.good()) throw Error(ErrorCode::io, "cannot open " + path + " for writing");
  f << text;
  if (!f.good()) throw Error(ErrorCode::io, "short write to " + path);
}

// Referenced input paths must exist before a command starts touching disk.
void require_paths(const ExperimentConfig& c, bool need_pretrain) {
  std::vector<std::string> missing;
  if (!fs::exists(c.manifest)) missing.push_back("manifest " + c.manifest);
  if (!c.audio_root.empty() && !fs::is_directory(c.audio_root)) {
    missing.push_back("audio_root " + c.audio_root);
  }
  if (need_pretrain && c.pretrain_checkpoint.empty()) {
    throw Error(ErrorCode::config,
                "finetune requires pretrain_checkpoint in the config");
  }
  if (!c.pretrain_checkpoint.empty() && !fs::exists(c.pretrain_checkpoint)) {
    missing.push_back("pretrain_checkpoint " + c.pretrain_checkpoint);
  }
  if (!missing.empty()) {
    throw Error(ErrorCode::config,
                "missing input path(s): " + joined(missing, ", "));
  }
}

// The class count always follows the corpus. A preset adopts it silently;
// an inline arch must already agree.
ArchConfig resolved_arch(const ExperimentConfig& c, const CorpusManifest& m) {
  ArchConfig a = c.arch;
  const int nc = manifest_n_classes(m);
  if (!c.arch_preset.empty()) {
    a.n_classes = nc;
  } else if (a.n_classes != nc) {
    throw Error(ErrorCode::config,
                "arch declares " + std::to_string(a.n_classes) +
                    " classes but manifest '" + m.corpus_id + "' spans " +
                    std::to_string(nc));
  }
  return a;
}

std::string audio_root_of(const ExperimentConfig& c) {
  if (!c.audio_root.empty()) return c.audio_root;
  const auto parent = fs::path(c.manifest).parent_path();
  return parent.empty() ? std::string(".") : parent.string();
}

std::vector<SplitPlan> select_plans(const CorpusManifest& m, Protocol p,
                                    const std::string& plan_id) {
  auto plans = generate_plans(m, p);
  if (plan_id.empty()) return plans;
  for (auto& plan : plans) {
    if (plan.plan_id == plan_id) return {std::move(plan)};
  }
  throw Error(ErrorCode::invalid_argument,
              "unknown plan id '" + plan_id + "'; protocol " +
                  protocol_name(p) + " has " + std::to_string(plans.size()) +
                  " plans (" + plans.front().plan_id + ".." +
                  plans.back().plan_id + ")");
}

void require_cached_utterances(const std::vector<std::string>& utterances,
                               const std::string& cache_dir) {
  std::vector<std::string> missing;
  for (const auto& u : utterances) {
    if (!fs::exists(cache_path_for(cache_dir, u))) missing.push_back(u);
  }
  if (!missing.empty()) {
    throw Error(ErrorCode::not_found,
                "missing cached features for " +
                    std::to_string(missing.size()) + " utterance(s): " +
                    joined(missing, ", ") +
                    "; run the preprocess step first");
  }
}

// Train-side samples of a plan, in speaker order then manifest utterance
// order, so the dataset is identical across runs.
Dataset<float> dataset_from_cache(const CorpusManifest& m,
                                  const std::vector<std::string>& speaker_ids,
                                  const std::string& cache_dir) {
  std::vector<std::string> wanted;
  for (const auto& id : speaker_ids) {
    for (const auto& u : find_speaker(m, id)->utterances) {
      wanted.push_back(u);
    }
  }
  require_cached_utterances(wanted, cache_dir);

  Dataset<float> data;
  data.reserve(wanted.size());
  for (const auto& id : speaker_ids) {
    const SpeakerEntry* s = find_speaker(m, id);
    for (const auto& u : s->utterances) {
      Sample<float> sample;
      sample.image = std::make_shared<Tensor<float>>(
          replicate_planes(read_mel_cache(cache_path_for(cache_dir, u))));
      sample.label = static_cast<int>(s->severity);
      sample.source_id = u;
      sample.speaker_id = id;
      data.push_back(std::move(sample));
    }
  }
  return data;
}

// Runs fn(0..n-1) across a bounded worker pool. The first failure wins;
// remaining work is abandoned.
void parallel_for(std::size_t n, int jobs,
                  const std::function<void(std::size_t)>& fn) {
  const int workers =
      std::max(1, std::min<int>(jobs, static_cast<int>(n)));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
          next.store(n);
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::mutex print_mutex;

void progress(bool verbose, const std::string& line) {
  if (!verbose) return;
  std::lock_guard<std::mutex> lock(print_mutex);
  std::fputs((line + "\n").c_str(), stdout);
  std::fflush(stdout);
}

// Run metadata: enough to replay the run exactly, nothing volatile.
void write_run_metadata(const ExperimentConfig& resolved,
                        const std::string& command,
                        const std::vector<std::string>& plan_ids,
                        const std::string& dir) {
  json j;
  j["command"] = command;
  j["config"] = json::parse(experiment_config_to_json(resolved));
  j["config_hash"] = experiment_config_hash(resolved);
  j["seed"] = resolved.train.seed;
  j["version"] = version();
  j["protocol"] = protocol_name(resolved.protocol);
  if (!plan_ids.empty()) {
    j["n_plans"] = plan_ids.size();
    j["plans"] = plan_ids;
  }
  write_text((fs::path(dir) / ("run-" + command + ".json")).string(),
             j.dump() + "\n");
}

std::string plan_dir(const ExperimentConfig& c, const std::string& plan_id) {
  return (fs::path(c.out_dir) / plan_id).string();
}

struct SweepContext {
  ExperimentConfig cfg;  // resolved
  CorpusManifest manifest;
  ArchConfig arch;
  std::vector<SplitPlan> plans;
};

SweepContext open_sweep(const ExperimentConfig& c, const RunOptions& opt,
                        bool need_pretrain) {
  SweepContext ctx;
  ctx.cfg = resolve_config(c, opt);
  const auto violations = experiment_config_violations(ctx.cfg);
  if (!violations.empty()) throw_config("invalid experiment config", violations);
  require_paths(ctx.cfg, need_pretrain);
  ctx.manifest = load_manifest(ctx.cfg.manifest);
  ctx.arch = resolved_arch(ctx.cfg, ctx.manifest);
  ctx.plans = select_plans(ctx.manifest, ctx.cfg.protocol, opt.plan_id);
  return ctx;
}

std::vector<std::string> ids_of(const std::vector<SplitPlan>& plans) {
  std::vector<std::string> ids;
  for (const auto& p : plans) ids.push_back(p.plan_id);
  return ids;
}

TrainSummary run_training_sweep(const ExperimentConfig& c,
                                const RunOptions& opt, bool finetune_mode) {
  SweepContext ctx = open_sweep(c, opt, finetune_mode);
  const std::string config_hash = experiment_config_hash(ctx.cfg);

  // Every plan's cache requirements are checked before any training starts.
  {
    std::vector<std::string> wanted;
    for (const auto& plan : ctx.plans) {
      for (const auto& id : plan.train) {
        for (const auto& u : find_speaker(ctx.manifest, id)->utterances) {
          wanted.push_back(u);
        }
      }
    }
    std::sort(wanted.begin(), wanted.end());
    wanted.erase(std::unique(wanted.begin(), wanted.end()), wanted.end());
    require_cached_utterances(wanted, ctx.cfg.cache_dir);
  }

  CheckpointData<float> source;
  if (finetune_mode) {
    source = load_checkpoint<float>(ctx.cfg.pretrain_checkpoint);
  }

  TrainSummary summary;
  summary.plans.resize(ctx.plans.size());
  std::atomic<std::int64_t> params{0};

  parallel_for(ctx.plans.size(), opt.jobs, [&](std::size_t i) {
    const SplitPlan& plan = ctx.plans[i];
    Dataset<float> data =
        dataset_from_cache(ctx.manifest, plan.train, ctx.cfg.cache_dir);

    Model model;
    TrainResult<float> result;
    if (finetune_mode) {
      auto ft = finetune(source.model, ctx.arch, data, ctx.cfg.train);
      model = std::move(ft.model);
      result = std::move(ft.train);
    } else {
      model = build_model<float>(ctx.arch, ctx.cfg.train.seed);
      result = train(model, data, ctx.cfg.train);
    }
    params.store(param_count(model));

    const std::string dir = plan_dir(ctx.cfg, plan.plan_id);
    fs::create_directories(dir);
    CheckpointData<float> ckpt;
    ckpt.model = std::move(model);
    ckpt.corpus_id = ctx.manifest.corpus_id;
    ckpt.config_hash = config_hash;
    save_checkpoint((fs::path(dir) / "model.ckpt").string(), ckpt);
    write_training_log((fs::path(dir) / "train_log.csv").string(), result.log);

    PlanOutcome& out = summary.plans[i];
    out.plan_id = plan.plan_id;
    if (!result.log.empty()) {
      out.final_loss = result.log.back().loss;
      out.final_accuracy = result.log.back().accuracy;
    }
    char line[160];
    std::snprintf(line, sizeof(line), "[%s] loss %.6f acc %.4f",
                  plan.plan_id.c_str(), out.final_loss, out.final_accuracy);
    progress(opt.verbose, line);
  });

  for (const auto& p : summary.plans) {
    summary.mean_final_loss += p.final_loss;
    summary.mean_final_accuracy += p.final_accuracy;
  }
  summary.mean_final_loss /= static_cast<double>(summary.plans.size());
  summary.mean_final_accuracy /= static_cast<double>(summary.plans.size());
  summary.n_params = params.load();

  write_run_metadata(ctx.cfg, finetune_mode ? "finetune" : "train",
                     ids_of(ctx.plans), ctx.cfg.out_dir);
  return summary;
}

Model load_plan_model(const ExperimentConfig& c, const ArchConfig& arch,
                      const std::string& plan_id) {
  const auto path = fs::path(plan_dir(c, plan_id)) / "model.ckpt";
  if (!fs::exists(path)) {
    throw Error(ErrorCode::not_found,
                "no checkpoint at " + path.string() +
                    "; run the train step first");
  }
  auto ckpt = load_checkpoint<float>(path.string());
  if (!arch_equal(ckpt.model.config, arch)) {
    throw Error(ErrorCode::config,
                "checkpoint " + path.string() +
                    " was trained with a different architecture than the "
                    "config resolves to");
  }
  return std::move(ckpt.model);
}

EvalSummary run_eval_sweep(const ExperimentConfig& resolved,
                           const SweepContext& ctx, bool verbose) {
  EvalSummary summary;
  for (const auto& plan : ctx.plans) {
    Model model = load_plan_model(resolved, ctx.arch, plan.plan_id);
    EvalReport report =
        evaluate(model, plan, ctx.manifest, resolved.cache_dir);
    write_confusion_csv(
        (fs::path(plan_dir(resolved, plan.plan_id)) / "confusion.csv")
            .string(),
        report);
    char line[160];
    std::snprintf(line, sizeof(line), "[%s] acc %.4f f1 %.4f",
                  plan.plan_id.c_str(), report.accuracy, report.macro_f1);
    progress(verbose, line);
    summary.reports.push_back(std::move(report));
  }
  summary.overall = aggregate(summary.reports);
  auto rows = summary.reports;
  rows.push_back(summary.overall);
  write_report_csv((fs::path(resolved.out_dir) / "report.csv").string(), rows);
  return summary;
}

}  // namespace

const char* version() { return "0.1.0"; }

std::vector<std::string> experiment_config_violations(
    const ExperimentConfig& c) {
  std::vector<std::string> out;
  if (c.manifest.empty()) out.push_back("manifest path is empty");
  if (c.cache_dir.empty()) out.push_back("cache_dir is empty");
  if (c.out_dir.empty()) out.push_back("out_dir is empty");
  if (!c.arch_preset.empty()) {
    const auto& names = arch_preset_names();
    if (std::find(names.begin(), names.end(), c.arch_preset) == names.end()) {
      out.push_back("unknown arch preset '" + c.arch_preset + "'");
    }
  }
  for (const auto& v : arch_violations(c.arch)) out.push_back("arch: " + v);
  for (const auto& v : train_config_violations(c.train)) {
    out.push_back("train: " + v);
  }
  return out;
}

std::string experiment_config_to_json(const ExperimentConfig& c) {
  json j;
  j["manifest"] = c.manifest;
  j["audio_root"] = c.audio_root;
  j["cache_dir"] = c.cache_dir;
  j["out_dir"] = c.out_dir;
  if (!c.arch_preset.empty()) {
    j["arch"] = c.arch_preset;
  } else {
    j["arch"] = json::parse(arch_to_json(c.arch));
  }
  j["protocol"] = protocol_name(c.protocol);
  j["seed"] = c.train.seed;
  json t;
  t["batch_size"] = c.train.batch_size;
  t["learning_rate"] = c.train.learning_rate;
  t["epochs"] = c.train.epochs;
  t["adam_beta1"] = c.train.adam_beta1;
  t["adam_beta2"] = c.train.adam_beta2;
  t["adam_eps"] = c.train.adam_eps;
  switch (c.train.class_weight_mode) {
    case WeightMode::derived:
      t["class_weights"] = "derived";
      break;
    case WeightMode::uniform:
      t["class_weights"] = "uniform";
      break;
    case WeightMode::explicit_weights:
      t["class_weights"] = c.train.explicit_weights;
      break;
  }
  j["train"] = std::move(t);
  j["pretrain_checkpoint"] = c.pretrain_checkpoint;
  return j.dump();
}

ExperimentConfig experiment_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::format,
                std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) {
    throw Error(ErrorCode::format, "config must be a JSON object");
  }

  ExperimentConfig c;
  std::vector<std::string> violations;
  try {
    c.manifest = j.value("manifest", "");
    c.audio_root = j.value("audio_root", "");
    c.cache_dir = j.value("cache_dir", "");
    c.out_dir = j.value("out_dir", "");
    c.pretrain_checkpoint = j.value("pretrain_checkpoint", "");

    if (!j.contains("arch")) {
      violations.push_back("arch is missing (preset name or inline object)");
    } else if (j["arch"].is_string()) {
      c.arch_preset = j["arch"].get<std::string>();
      const auto& names = arch_preset_names();
      if (std::find(names.begin(), names.end(), c.arch_preset) !=
          names.end()) {
        c.arch = arch_preset(c.arch_preset);
      }
      // An unknown preset is reported by experiment_config_violations.
    } else {
      c.arch = arch_from_json(j["arch"].dump());
    }

    const auto protocol = j.value("protocol", std::string("osps"));
    try {
      c.protocol = protocol_from_name(protocol);
    } catch (const Error&) {
      violations.push_back("unknown protocol '" + protocol +
                           "' (expected osps or loso)");
    }

    if (j.contains("train")) {
      const json& t = j["train"];
      if (!t.is_object()) {
        throw Error(ErrorCode::format, "train must be a JSON object");
      }
      c.train.batch_size = t.value("batch_size", c.train.batch_size);
      c.train.learning_rate = t.value("learning_rate", c.train.learning_rate);
      c.train.epochs = t.value("epochs", c.train.epochs);
      c.train.adam_beta1 = t.value("adam_beta1", c.train.adam_beta1);
      c.train.adam_beta2 = t.value("adam_beta2", c.train.adam_beta2);
      c.train.adam_eps = t.value("adam_eps", c.train.adam_eps);
      if (t.contains("seed")) {
        violations.push_back(
            "train.seed is not a field; set the top-level seed");
      }
      if (t.contains("class_weights")) {
        const json& w = t["class_weights"];
        if (w.is_string()) {
          const auto s = w.get<std::string>();
          if (s == "derived") {
            c.train.class_weight_mode = WeightMode::derived;
          } else if (s == "uniform") {
            c.train.class_weight_mode = WeightMode::uniform;
          } else {
            violations.push_back(
                "class_weights '" + s +
                "' is not recognized (derived, uniform, or an array)");
          }
        } else if (w.is_array()) {
          c.train.class_weight_mode = WeightMode::explicit_weights;
          c.train.explicit_weights = w.get<std::vector<double>>();
        } else {
          violations.push_back(
              "class_weights must be a string or an array of numbers");
        }
      }
    }
    c.train.seed = j.value("seed", std::uint64_t{0});
  } catch (const json::exception& e) {
    throw Error(ErrorCode::format,
                std::string("config structure is wrong: ") + e.what());
  }

  for (const auto& v : experiment_config_violations(c)) violations.push_back(v);
  if (!violations.empty()) throw_config("invalid experiment config", violations);
  return c;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  return experiment_config_from_json(read_text(path));
}

std::string experiment_config_hash(const ExperimentConfig& c) {
  // Artifact locations don't change what gets trained, so two runs of the
  // same experiment into different directories share a hash.
  json j = json::parse(experiment_config_to_json(c));
  j.erase("audio_root");
  j.erase("cache_dir");
  j.erase("out_dir");
  return hex64(fnv1a64(j.dump()));
}

ExperimentConfig resolve_config(const ExperimentConfig& c,
                                const RunOptions& opt) {
  ExperimentConfig out = c;
  if (opt.has_seed) out.train.seed = opt.seed;
  if (!opt.out_dir.empty()) out.out_dir = opt.out_dir;
  if (!opt.cache_dir.empty()) {
    out.cache_dir = opt.cache_dir;
  } else if (const char* env = std::getenv("DSSC_CACHE");
             env != nullptr && *env != '\0') {
    out.cache_dir = env;
  }
  return out;
}

SynthSummary cmd_synth(const std::string& spec_path,
                       const std::string& out_dir, bool has_seed,
                       std::uint64_t seed) {
  SynthSpec spec = load_synth_spec(spec_path);
  if (has_seed) spec.seed = seed;

  SynthSummary summary;
  summary.manifest = generate_corpus(spec, out_dir);
  for (const auto& s : summary.manifest.speakers) {
    summary.n_files += static_cast<int>(s.utterances.size());
  }

  json j;
  j["command"] = "synth";
  j["config"] = json::parse(synth_spec_to_json(spec));
  j["config_hash"] = hex64(fnv1a64(synth_spec_to_json(spec)));
  j["seed"] = spec.seed;
  j["version"] = version();
  j["manifest_hash"] = manifest_hash(summary.manifest);
  write_text((fs::path(out_dir) / "run-synth.json").string(), j.dump() + "\n");
  return summary;
}

std::int64_t cmd_preprocess(const ExperimentConfig& c, const RunOptions& opt) {
  ExperimentConfig rc = resolve_config(c, opt);
  const auto violations = experiment_config_violations(rc);
  if (!violations.empty()) throw_config("invalid experiment config", violations);
  require_paths(rc, false);
  const CorpusManifest m = load_manifest(rc.manifest);
  const std::string root = audio_root_of(rc);

  struct Item {
    std::string utterance;
    std::string wav;
  };
  std::vector<Item> items;
  std::vector<std::string> missing;
  for (const auto& s : m.speakers) {
    for (const auto& u : s.utterances) {
      Item it;
      it.utterance = u;
      it.wav = (fs::path(root) / u).string();
      if (!fs::exists(it.wav)) missing.push_back(it.wav);
      items.push_back(std::move(it));
    }
  }
  if (!missing.empty()) {
    throw Error(ErrorCode::io,
                "missing audio file(s): " + joined(missing, ", "));
  }

  parallel_for(items.size(), opt.jobs, [&](std::size_t i) {
    const auto cache = cache_path_for(rc.cache_dir, items[i].utterance);
    fs::create_directories(fs::path(cache).parent_path());
    write_mel_cache(cache, wav_to_plane(items[i].wav));
    progress(opt.verbose, items[i].utterance);
  });

  // The cache documents the pipeline that produced it.
  const DspConfig dsp;
  json d;
  d["sample_rate"] = dsp.sample_rate;
  d["window"] = dsp.window;
  d["hop"] = dsp.hop;
  d["n_mels"] = dsp.n_mels;
  d["fmin"] = dsp.fmin;
  d["fmax"] = dsp.fmax;
  d["log_eps"] = dsp.log_eps;
  d["trim_threshold_db"] = dsp.trim_threshold_db;
  d["image_size"] = dsp.image_size;
  d["mel_scale"] = "htk";
  d["window_fn"] = "hann";
  write_text((fs::path(rc.cache_dir) / "dsp.json").string(), d.dump() + "\n");

  json j;
  j["command"] = "preprocess";
  j["config"] = json::parse(experiment_config_to_json(rc));
  j["config_hash"] = experiment_config_hash(rc);
  j["seed"] = rc.train.seed;
  j["version"] = version();
  j["n_utterances"] = items.size();
  write_text((fs::path(rc.cache_dir) / "run-preprocess.json").string(),
             j.dump() + "\n");
  return static_cast<std::int64_t>(items.size());
}

std::vector<std::string> cmd_splits(const ExperimentConfig& c,
                                    const RunOptions& opt) {
  SweepContext ctx = open_sweep(c, opt, false);
  const auto dir = fs::path(ctx.cfg.out_dir) / "plans";
  fs::create_directories(dir);
  std::vector<std::string> ids;
  for (const auto& plan : ctx.plans) {
    save_plan((dir / (plan.plan_id + ".json")).string(), plan);
    ids.push_back(plan.plan_id);
  }
  write_run_metadata(ctx.cfg, "splits", ids, ctx.cfg.out_dir);
  return ids;
}

TrainSummary cmd_train(const ExperimentConfig& c, const RunOptions& opt) {
  return run_training_sweep(c, opt, false);
}

TrainSummary cmd_finetune(const ExperimentConfig& c, const RunOptions& opt) {
  return run_training_sweep(c, opt, true);
}

EvalSummary cmd_eval(const ExperimentConfig& c, const RunOptions& opt) {
  SweepContext ctx = open_sweep(c, opt, false);
  EvalSummary summary = run_eval_sweep(ctx.cfg, ctx, opt.verbose);
  write_run_metadata(ctx.cfg, "eval", ids_of(ctx.plans), ctx.cfg.out_dir);
  return summary;
}

std::vector<AblateRow> cmd_ablate(const ExperimentConfig& c,
                                  const RunOptions& opt) {
  SweepContext ctx = open_sweep(c, opt, false);

  std::vector<AblateRow> rows;
  for (const char* preset : {"C1", "C2", "C3", "C4", "C5", "C6"}) {
    ExperimentConfig sub = ctx.cfg;
    sub.arch_preset = preset;
    sub.arch = arch_preset(preset);
    sub.out_dir = (fs::path(ctx.cfg.out_dir) / preset).string();

    RunOptions sub_opt = opt;
    sub_opt.out_dir.clear();
    sub_opt.cache_dir.clear();
    sub_opt.has_seed = false;  // already folded into ctx.cfg

    progress(opt.verbose, std::string("=== ") + preset + " ===");
    TrainSummary ts = cmd_train(sub, sub_opt);

    SweepContext sub_ctx = open_sweep(sub, sub_opt, false);
    EvalSummary es = run_eval_sweep(sub_ctx.cfg, sub_ctx, opt.verbose);

    AblateRow row;
    row.preset = preset;
    row.n_params = ts.n_params;
    row.mean_final_loss = ts.mean_final_loss;
    row.mean_accuracy = es.overall.accuracy;
    row.macro_f1 = es.overall.macro_f1;
    rows.push_back(std::move(row));
  }

  std::string csv =
      "preset,params,mean_final_train_loss,mean_accuracy,macro_f1\n";
  char buf[192];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%lld,%.17g,%.17g,%.17g\n",
                  r.preset.c_str(), static_cast<long long>(r.n_params),
                  r.mean_final_loss, r.mean_accuracy, r.macro_f1);
    csv += buf;
  }
  write_text((fs::path(ctx.cfg.out_dir) / "ablation.csv").string(), csv);
  write_run_metadata(ctx.cfg, "ablate", ids_of(ctx.plans), ctx.cfg.out_dir);
  return rows;
}

int cmd_export_embeddings(const ExperimentConfig& c, const RunOptions& opt) {
  SweepContext ctx = open_sweep(c, opt, false);
  int written = 0;
  for (const auto& plan : ctx.plans) {
    Model model = load_plan_model(ctx.cfg, ctx.arch, plan.plan_id);
    export_embeddings(
        model, plan, ctx.manifest, ctx.cfg.cache_dir,
        (fs::path(plan_dir(ctx.cfg, plan.plan_id)) / "embeddings.csv")
            .string());
    ++written;
    progress(opt.verbose, plan.plan_id);
  }
  write_run_metadata(ctx.cfg, "export-embeddings", ids_of(ctx.plans),
                     ctx.cfg.out_dir);
  return written;
}

}  // namespace dssc
