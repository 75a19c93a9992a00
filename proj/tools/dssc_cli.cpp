// Command-line front end. Everything goes through the C API in dssc.h; the
// C++ core stays behind the shared library boundary.

#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <string>

#include "dssc.h"

namespace {

struct Flags {
  std::string config;
  std::string plan;
  std::string out;
  std::uint64_t seed = 0;
  bool has_seed = false;
  int jobs = 1;
};

dssc_run_options options_of(const Flags& f, int verbose) {
  dssc_run_options o{};
  o.plan_id = f.plan.empty() ? nullptr : f.plan.c_str();
  o.jobs = f.jobs;
  o.has_seed = f.has_seed ? 1 : 0;
  o.seed = f.seed;
  o.out_dir = f.out.empty() ? nullptr : f.out.c_str();
  o.cache_dir = nullptr;  // DSSC_CACHE is honored by the library
  o.verbose = verbose;
  return o;
}

int finish(dssc_status status) {
  if (status == DSSC_OK) return 0;
  std::fprintf(stderr, "error[%s]: %s\n", dssc_status_name(status),
               dssc_last_error());
  return static_cast<int>(status);
}

void add_config(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "experiment config file")->required();
}

void add_seed(CLI::App* cmd, Flags& f) {
  auto* opt = cmd->add_option("--seed", f.seed, "override the config seed");
  cmd->parse_complete_callback([opt, &f] { f.has_seed = opt->count() > 0; });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dysarthric speech severity classification toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", dssc_version());

  Flags f;
  int rc = 0;

  auto* synth = app.add_subcommand(
      "synth", "generate a synthetic corpus from a spec file");
  synth->add_option("--config", f.config, "synthesis spec file")->required();
  synth->add_option("--out", f.out, "corpus output directory")->required();
  add_seed(synth, f);
  synth->callback([&] {
    int n = 0;
    rc = finish(dssc_synth(f.config.c_str(), f.out.c_str(),
                           f.has_seed ? 1 : 0, f.seed, &n));
    if (rc == 0) std::printf("wrote %d utterances under %s\n", n, f.out.c_str());
  });

  auto* preprocess = app.add_subcommand(
      "preprocess", "cache mel features for the config's corpus");
  add_config(preprocess, f);
  preprocess->add_option("--jobs", f.jobs, "worker threads");
  preprocess->callback([&] {
    int64_t n = 0;
    auto o = options_of(f, 0);
    rc = finish(dssc_preprocess(f.config.c_str(), &o, &n));
    if (rc == 0) std::printf("cached %lld utterances\n", (long long)n);
  });

  auto* splits = app.add_subcommand(
      "splits", "write the split plan files for the config's protocol");
  add_config(splits, f);
  splits->add_option("--out", f.out, "override the output directory");
  splits->callback([&] {
    int n = 0;
    auto o = options_of(f, 0);
    rc = finish(dssc_splits(f.config.c_str(), &o, &n));
    if (rc == 0) std::printf("wrote %d plan files\n", n);
  });

  auto* train =
      app.add_subcommand("train", "train one model per split plan");
  add_config(train, f);
  add_seed(train, f);
  train->add_option("--jobs", f.jobs, "worker threads across plans");
  train->add_option("--plan", f.plan, "train a single plan");
  train->add_option("--out", f.out, "override the output directory");
  train->callback([&] {
    double loss = 0.0, acc = 0.0;
    auto o = options_of(f, 1);
    rc = finish(dssc_train(f.config.c_str(), &o, &loss, &acc));
    if (rc == 0) {
      std::printf("mean final train loss %.6f, accuracy %.4f\n", loss, acc);
    }
  });

  auto* finetune = app.add_subcommand(
      "finetune", "train from the config's pretrain checkpoint");
  add_config(finetune, f);
  add_seed(finetune, f);
  finetune->add_option("--jobs", f.jobs, "worker threads across plans");
  finetune->add_option("--plan", f.plan, "train a single plan");
  finetune->add_option("--out", f.out, "override the output directory");
  finetune->callback([&] {
    double loss = 0.0, acc = 0.0;
    auto o = options_of(f, 1);
    rc = finish(dssc_finetune(f.config.c_str(), &o, &loss, &acc));
    if (rc == 0) {
      std::printf("mean final train loss %.6f, accuracy %.4f\n", loss, acc);
    }
  });

  auto* eval = app.add_subcommand(
      "eval", "score the checkpoints a training sweep produced");
  add_config(eval, f);
  eval->add_option("--plan", f.plan, "evaluate a single plan");
  eval->add_option("--out", f.out, "override the output directory");
  eval->callback([&] {
    double acc = 0.0, f1 = 0.0;
    auto o = options_of(f, 1);
    rc = finish(dssc_eval(f.config.c_str(), &o, &acc, &f1));
    if (rc == 0) std::printf("mean accuracy %.4f, macro F1 %.4f\n", acc, f1);
  });

  auto* ablate = app.add_subcommand(
      "ablate", "train and score every architecture preset C1..C6");
  add_config(ablate, f);
  add_seed(ablate, f);
  ablate->add_option("--jobs", f.jobs, "worker threads across plans");
  ablate->add_option("--plan", f.plan, "restrict to a single plan");
  ablate->add_option("--out", f.out, "override the output directory");
  ablate->callback([&] {
    auto o = options_of(f, 1);
    rc = finish(dssc_ablate(f.config.c_str(), &o));
    if (rc == 0) std::printf("wrote ablation.csv\n");
  });

  auto* embed = app.add_subcommand(
      "export-embeddings", "write per-plan embedding CSVs");
  add_config(embed, f);
  embed->add_option("--plan", f.plan, "export a single plan");
  embed->add_option("--out", f.out, "override the output directory");
  embed->callback([&] {
    int n = 0;
    auto o = options_of(f, 0);
    rc = finish(dssc_export_embeddings(f.config.c_str(), &o, &n));
    if (rc == 0) std::printf("wrote %d embedding file(s)\n", n);
  });

  CLI11_PARSE(app, argc, argv);
  return rc;
}
