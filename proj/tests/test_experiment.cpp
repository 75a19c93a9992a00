#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "error.hpp"
#include "eval.hpp"
#include "experiment.hpp"
#include "manifest.hpp"
#include "model.hpp"
#include "splits.hpp"
#include "synth.hpp"

using dssc::ArchConfig;
using dssc::Error;
using dssc::ErrorCode;
using dssc::ExperimentConfig;
using dssc::Protocol;
using dssc::RunOptions;
using dssc::WeightMode;

namespace {

namespace fs = std::filesystem;

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected a dssc::Error");
  return ErrorCode::internal;
}

std::string message_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  FAIL("expected a dssc::Error");
  return "";
}

std::string read_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::trunc);
  REQUIRE(f.good());
  f << text;
}

// One shared corpus: 3 severities x 2 speakers x 3 utterances, cached once.
struct Fixture {
  fs::path root;
  fs::path corpus;
  fs::path cache;
  dssc::CorpusManifest manifest;
};

const Fixture& fixture() {
  static Fixture fx = [] {
    Fixture f;
    f.root = fs::temp_directory_path() / "dssc_experiment";
    fs::remove_all(f.root);
    f.corpus = f.root / "corpus";
    f.cache = f.root / "cache";
    auto spec = dssc::default_synth_spec(3);
    spec.corpus_id = "expfix";
    spec.speakers_per_severity = 2;
    spec.utterances_per_speaker = 3;
    spec.seed = 21;
    f.manifest = dssc::generate_corpus(spec, f.corpus.string());

    ExperimentConfig c;
    c.manifest = (f.corpus / "corpus.manifest").string();
    c.cache_dir = f.cache.string();
    c.out_dir = (f.root / "seed_out").string();
    dssc::cmd_preprocess(c, {});
    return f;
  }();
  return fx;
}

// Cheap inline arch against the shared cache.
ArchConfig tiny_arch() {
  ArchConfig a;
  a.conv_filters = {2};
  a.se_reduction = 2;
  a.rb_widths = {4};
  a.n_classes = 3;
  a.image_size = 128;
  return a;
}

ExperimentConfig base_config(const std::string& out_tag) {
  const Fixture& fx = fixture();
  ExperimentConfig c;
  c.manifest = (fx.corpus / "corpus.manifest").string();
  c.cache_dir = fx.cache.string();
  c.out_dir = (fx.root / out_tag).string();
  c.arch = tiny_arch();
  c.train.epochs = 1;
  c.train.seed = 5;
  return c;
}

bool configs_equal(const ExperimentConfig& a, const ExperimentConfig& b) {
  return dssc::experiment_config_to_json(a) ==
         dssc::experiment_config_to_json(b);
}

}  // namespace

TEST_CASE("config json round trips") {
  ExperimentConfig c = base_config("rt");
  c.audio_root = "/somewhere";
  c.protocol = Protocol::loso;
  c.pretrain_checkpoint = "pre.ckpt";
  c.train.batch_size = 4;
  c.train.learning_rate = 0.01;
  c.train.adam_beta1 = 0.8;
  c.train.adam_beta2 = 0.99;
  c.train.adam_eps = 1e-7;
  c.train.seed = 77;

  SUBCASE("inline arch") {
    auto back =
        dssc::experiment_config_from_json(dssc::experiment_config_to_json(c));
    CHECK(configs_equal(c, back));
    CHECK(back.arch_preset.empty());
    CHECK(dssc::arch_equal(back.arch, c.arch));
    CHECK(back.protocol == Protocol::loso);
    CHECK(back.train.seed == 77);
    CHECK(back.train.adam_beta1 == 0.8);
  }
  SUBCASE("preset arch keeps its name") {
    c.arch_preset = "C4";
    c.arch = dssc::arch_preset("C4");
    auto text = dssc::experiment_config_to_json(c);
    CHECK(nlohmann::json::parse(text)["arch"] == "C4");
    auto back = dssc::experiment_config_from_json(text);
    CHECK(back.arch_preset == "C4");
    CHECK(dssc::arch_equal(back.arch, dssc::arch_preset("C4")));
  }
  SUBCASE("class weight modes") {
    c.train.class_weight_mode = WeightMode::uniform;
    auto u =
        dssc::experiment_config_from_json(dssc::experiment_config_to_json(c));
    CHECK(u.train.class_weight_mode == WeightMode::uniform);

    c.train.class_weight_mode = WeightMode::explicit_weights;
    c.train.explicit_weights = {0.5, 1.0, 1.5};
    auto e =
        dssc::experiment_config_from_json(dssc::experiment_config_to_json(c));
    CHECK(e.train.class_weight_mode == WeightMode::explicit_weights);
    CHECK(e.train.explicit_weights == std::vector<double>{0.5, 1.0, 1.5});
  }
  SUBCASE("defaults fill omitted fields") {
    auto back = dssc::experiment_config_from_json(
        R"({"manifest":"m","cache_dir":"c","out_dir":"o",
            "arch":{"conv_filters":[2],"use_se":true,"se_reduction":2,
                    "rb_widths":[4],"n_classes":3,"in_channels":3,
                    "image_size":128}})");
    CHECK(back.protocol == Protocol::osps);
    CHECK(back.train.batch_size == 16);
    CHECK(back.train.epochs == 10);
    CHECK(back.train.learning_rate == 0.001);
    CHECK(back.train.seed == 0);
    CHECK(back.train.class_weight_mode == WeightMode::derived);
    CHECK(back.pretrain_checkpoint.empty());
  }
}

TEST_CASE("config parsing rejects and itemizes") {
  CHECK(code_of([] { dssc::experiment_config_from_json("nope"); }) ==
        ErrorCode::format);
  CHECK(code_of([] { dssc::experiment_config_from_json("[1]"); }) ==
        ErrorCode::format);
  CHECK(code_of([] {
          dssc::experiment_config_from_json(
              R"({"manifest":"m","cache_dir":"c","out_dir":"o","train":3})");
        }) == ErrorCode::format);
  CHECK(code_of([] { dssc::load_experiment_config("/no/such.json"); }) ==
        ErrorCode::io);

  // Semantic problems arrive together, not one at a time.
  const auto msg = message_of([] {
    dssc::experiment_config_from_json(
        R"({"arch":"C9","protocol":"foo",
            "train":{"batch_size":0,"epochs":0,"seed":1,
                     "class_weights":"sometimes"}})");
  });
  for (const char* part :
       {"unknown arch preset 'C9'", "unknown protocol 'foo'",
        "manifest path is empty", "cache_dir is empty", "out_dir is empty",
        "batch_size", "epochs", "train.seed is not a field",
        "'sometimes' is not recognized"}) {
    INFO(part);
    CHECK(msg.find(part) != std::string::npos);
  }
}

TEST_CASE("config hash tracks the experiment, not its directories") {
  ExperimentConfig a = base_config("hash_a");
  const auto h = dssc::experiment_config_hash(a);
  CHECK(h.size() == 16);

  ExperimentConfig b = a;
  b.out_dir = "elsewhere";
  b.cache_dir = "other_cache";
  b.audio_root = "third_place";
  CHECK(dssc::experiment_config_hash(b) == h);

  b = a;
  b.train.seed = 6;
  CHECK(dssc::experiment_config_hash(b) != h);
  b = a;
  b.train.learning_rate = 0.5;
  CHECK(dssc::experiment_config_hash(b) != h);
  b = a;
  b.arch.rb_widths = {8};
  CHECK(dssc::experiment_config_hash(b) != h);
  b = a;
  b.manifest = "another.manifest";
  CHECK(dssc::experiment_config_hash(b) != h);
}

TEST_CASE("resolve_config applies overrides and the environment") {
  ExperimentConfig c = base_config("resolve");
  RunOptions opt;
  CHECK(configs_equal(dssc::resolve_config(c, opt), c));

  opt.has_seed = true;
  opt.seed = 99;
  opt.out_dir = "o2";
  auto r = dssc::resolve_config(c, opt);
  CHECK(r.train.seed == 99);
  CHECK(r.out_dir == "o2");
  CHECK(r.cache_dir == c.cache_dir);

  setenv("DSSC_CACHE", "env_cache", 1);
  r = dssc::resolve_config(c, RunOptions{});
  CHECK(r.cache_dir == "env_cache");
  RunOptions with_flag;
  with_flag.cache_dir = "flag_cache";
  r = dssc::resolve_config(c, with_flag);
  CHECK(r.cache_dir == "flag_cache");
  unsetenv("DSSC_CACHE");
  r = dssc::resolve_config(c, RunOptions{});
  CHECK(r.cache_dir == c.cache_dir);
}

TEST_CASE("preprocess fills the cache and documents itself") {
  const Fixture& fx = fixture();
  // The fixture already ran it; the artifacts must be in place.
  for (const auto& s : fx.manifest.speakers) {
    for (const auto& u : s.utterances) {
      CHECK(fs::exists(dssc::cache_path_for(fx.cache.string(), u)));
    }
  }
  CHECK(fs::exists(fx.cache / "dsp.json"));
  CHECK(fs::exists(fx.cache / "run-preprocess.json"));

  auto dsp = nlohmann::json::parse(read_bytes(fx.cache / "dsp.json"));
  CHECK(dsp["sample_rate"] == 16000);
  CHECK(dsp["n_mels"] == 128);
  CHECK(dsp["image_size"] == 128);

  // Re-running is idempotent.
  ExperimentConfig c = base_config("pp_again");
  CHECK(dssc::cmd_preprocess(c, {}) == 18);

  // A missing audio file is reported with its path.
  ExperimentConfig broken = c;
  auto moved_manifest = fx.root / "broken" / "corpus.manifest";
  write_file(moved_manifest, read_bytes(fx.corpus / "corpus.manifest"));
  broken.manifest = moved_manifest.string();
  const auto msg =
      message_of([&] { dssc::cmd_preprocess(broken, {}); });
  CHECK(msg.find("missing audio file") != std::string::npos);
  CHECK(msg.find("sev0_spk00/utt000.wav") != std::string::npos);

  // audio_root redirects resolution back to the real corpus.
  broken.audio_root = fx.corpus.string();
  CHECK(dssc::cmd_preprocess(broken, {}) == 18);
}

TEST_CASE("splits writes loadable plan files") {
  ExperimentConfig c = base_config("splits_out");
  auto ids = dssc::cmd_splits(c, {});
  CHECK(ids.size() == 8);  // 2^3 one-per-tier choices
  for (const auto& id : ids) {
    auto plan = dssc::load_plan(
        (fs::path(c.out_dir) / "plans" / (id + ".json")).string());
    CHECK(plan.plan_id == id);
    CHECK(plan.test.size() == 3);
    CHECK(plan.train.size() == 3);
  }
  auto meta = nlohmann::json::parse(
      read_bytes(fs::path(c.out_dir) / "run-splits.json"));
  CHECK(meta["command"] == "splits");
  CHECK(meta["n_plans"] == 8);
  CHECK(meta["version"] == dssc::version());
  CHECK(meta["plans"][0] == "osps_001");
}

TEST_CASE("train sweep produces deterministic artifacts") {
  ExperimentConfig c = base_config("train_a");

  RunOptions one;
  one.plan_id = "osps_003";
  auto s1 = dssc::cmd_train(c, one);
  REQUIRE(s1.plans.size() == 1);
  CHECK(s1.plans[0].plan_id == "osps_003");
  CHECK(s1.n_params == dssc::param_count(dssc::build_model<float>(c.arch, 0)));
  CHECK(fs::exists(fs::path(c.out_dir) / "osps_003" / "model.ckpt"));
  CHECK(fs::exists(fs::path(c.out_dir) / "osps_003" / "train_log.csv"));

  // Checkpoint records the corpus and the experiment hash.
  auto ckpt = dssc::load_checkpoint<float>(
      (fs::path(c.out_dir) / "osps_003" / "model.ckpt").string());
  CHECK(ckpt.corpus_id == "expfix");
  CHECK(ckpt.config_hash == dssc::experiment_config_hash(c));
  CHECK(ckpt.model.config.n_classes == 3);

  // Fresh rerun into the same out dir: byte-identical artifacts.
  const auto bytes =
      read_bytes(fs::path(c.out_dir) / "osps_003" / "model.ckpt");
  const auto meta_bytes = read_bytes(fs::path(c.out_dir) / "run-train.json");
  fs::remove_all(c.out_dir);
  dssc::cmd_train(c, one);
  CHECK(read_bytes(fs::path(c.out_dir) / "osps_003" / "model.ckpt") == bytes);
  CHECK(read_bytes(fs::path(c.out_dir) / "run-train.json") == meta_bytes);

  // The full sweep in parallel matches the serial sweep byte for byte.
  ExperimentConfig serial = base_config("train_serial");
  ExperimentConfig parallel = base_config("train_parallel");
  auto ss = dssc::cmd_train(serial, {});
  RunOptions four;
  four.jobs = 4;
  auto ps = dssc::cmd_train(parallel, four);
  REQUIRE(ss.plans.size() == 8);
  REQUIRE(ps.plans.size() == 8);
  CHECK(ss.mean_final_loss == ps.mean_final_loss);
  for (const auto& p : ss.plans) {
    CHECK(read_bytes(fs::path(serial.out_dir) / p.plan_id / "model.ckpt") ==
          read_bytes(fs::path(parallel.out_dir) / p.plan_id / "model.ckpt"));
  }

  // Run metadata replays to the same configuration.
  auto meta = nlohmann::json::parse(
      read_bytes(fs::path(serial.out_dir) / "run-train.json"));
  CHECK(meta["command"] == "train");
  CHECK(meta["config_hash"] == dssc::experiment_config_hash(serial));
  CHECK(meta["seed"] == 5);
  CHECK(meta["plans"].size() == 8);
  auto replay = dssc::experiment_config_from_json(meta["config"].dump());
  CHECK(configs_equal(replay, serial));
}

TEST_CASE("train error paths") {
  ExperimentConfig c = base_config("train_err");

  SUBCASE("unknown plan id") {
    RunOptions opt;
    opt.plan_id = "osps_099";
    const auto msg = message_of([&] { dssc::cmd_train(c, opt); });
    CHECK(msg.find("osps_099") != std::string::npos);
    CHECK(msg.find("osps_001..osps_008") != std::string::npos);
  }
  SUBCASE("missing manifest path") {
    c.manifest = (fixture().root / "ghost.manifest").string();
    CHECK(code_of([&] { dssc::cmd_train(c, {}); }) == ErrorCode::config);
  }
  SUBCASE("empty cache demands preprocess") {
    c.cache_dir = (fixture().root / "empty_cache").string();
    const auto msg = message_of([&] { dssc::cmd_train(c, {}); });
    CHECK(msg.find("run the preprocess step first") != std::string::npos);
  }
  SUBCASE("inline arch must match the corpus classes") {
    c.arch.n_classes = 4;
    const auto msg = message_of([&] { dssc::cmd_train(c, {}); });
    CHECK(msg.find("4 classes") != std::string::npos);
    CHECK(msg.find("spans 3") != std::string::npos);
  }
  SUBCASE("invalid config is rejected before any work") {
    c.train.epochs = 0;
    CHECK(code_of([&] { dssc::cmd_train(c, {}); }) == ErrorCode::config);
    CHECK(!fs::exists(c.out_dir));
  }
}

TEST_CASE("preset adopts the corpus class count") {
  ExperimentConfig c = base_config("preset_nc");
  c.arch_preset = "C4";
  c.arch = dssc::arch_preset("C4");
  c.train.learning_rate = 0.0;  // replay only; the arch is what's under test
  RunOptions opt;
  opt.plan_id = "osps_001";
  dssc::cmd_train(c, opt);
  auto ckpt = dssc::load_checkpoint<float>(
      (fs::path(c.out_dir) / "osps_001" / "model.ckpt").string());
  CHECK(ckpt.model.config.n_classes == 3);
  CHECK(ckpt.model.config.conv_filters == std::vector<int>{256});
}

TEST_CASE("eval scores a trained sweep") {
  ExperimentConfig c = base_config("evalrun");
  dssc::cmd_train(c, {});
  auto es = dssc::cmd_eval(c, {});
  REQUIRE(es.reports.size() == 8);
  CHECK(es.overall.plan_id == "aggregate");
  CHECK(es.overall.n_total == 8 * 9);
  CHECK(es.overall.accuracy >= 0.0);
  CHECK(es.overall.accuracy <= 1.0);
  for (const auto& r : es.reports) {
    CHECK(fs::exists(fs::path(c.out_dir) / r.plan_id / "confusion.csv"));
  }
  const auto report = read_bytes(fs::path(c.out_dir) / "report.csv");
  CHECK(report.find("plan_id,") == 0);
  CHECK(report.find("aggregate,") != std::string::npos);
  CHECK(fs::exists(fs::path(c.out_dir) / "run-eval.json"));

  SUBCASE("embeddings come from the same checkpoints") {
    RunOptions opt;
    opt.plan_id = "osps_002";
    CHECK(dssc::cmd_export_embeddings(c, opt) == 1);
    const auto csv =
        read_bytes(fs::path(c.out_dir) / "osps_002" / "embeddings.csv");
    CHECK(csv.find("utterance_id,true_label,e1,e2,e3,e4") == 0);
  }
  SUBCASE("missing checkpoints point at train") {
    ExperimentConfig fresh = base_config("eval_fresh");
    const auto msg = message_of([&] { dssc::cmd_eval(fresh, {}); });
    CHECK(msg.find("run the train step first") != std::string::npos);
  }
}

TEST_CASE("finetune starts from the checkpoint") {
  ExperimentConfig pre = base_config("ft_pre");
  RunOptions one;
  one.plan_id = "osps_001";
  dssc::cmd_train(pre, one);
  const auto source =
      (fs::path(pre.out_dir) / "osps_001" / "model.ckpt").string();

  ExperimentConfig ft = base_config("ft_run");
  ft.pretrain_checkpoint = source;
  ft.train.learning_rate = 0.0;
  RunOptions other;
  other.plan_id = "osps_002";
  auto fs_sum = dssc::cmd_finetune(ft, other);
  REQUIRE(fs_sum.plans.size() == 1);

  // Zero learning rate: the finetuned weights are the source weights.
  auto a = dssc::load_checkpoint<float>(source);
  auto b = dssc::load_checkpoint<float>(
      (fs::path(ft.out_dir) / "osps_002" / "model.ckpt").string());
  for (const auto& [name, tensor] : a.model.params) {
    const auto& other_t = b.model.params.at(name);
    CHECK(std::equal(tensor->data(), tensor->data() + tensor->size(),
                     other_t->data()));
  }

  SUBCASE("the checkpoint field is required") {
    ft.pretrain_checkpoint.clear();
    const auto msg = message_of([&] { dssc::cmd_finetune(ft, other); });
    CHECK(msg.find("pretrain_checkpoint") != std::string::npos);
  }
  SUBCASE("a missing checkpoint file is a config error") {
    ft.pretrain_checkpoint = (fixture().root / "ghost.ckpt").string();
    CHECK(code_of([&] { dssc::cmd_finetune(ft, other); }) ==
          ErrorCode::config);
  }
}

TEST_CASE("synth command records its run") {
  const auto dir = fs::temp_directory_path() / "dssc_exp_synth";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto spec_path = dir / "mini.spec";
  auto spec = dssc::default_synth_spec(3);
  spec.speakers_per_severity = 2;
  spec.utterances_per_speaker = 1;
  dssc::save_synth_spec(spec_path.string(), spec);

  auto summary = dssc::cmd_synth(spec_path.string(),
                                 (dir / "out").string(), false, 0);
  CHECK(summary.n_files == 6);
  CHECK(summary.manifest.speakers.size() == 6);
  CHECK(fs::exists(dir / "out" / "run-synth.json"));
  auto meta = nlohmann::json::parse(read_bytes(dir / "out" / "run-synth.json"));
  CHECK(meta["command"] == "synth");
  CHECK(meta["seed"] == 0);
  CHECK(meta["manifest_hash"] == dssc::manifest_hash(summary.manifest));

  // A seed override changes the audio but not the layout.
  auto seeded = dssc::cmd_synth(spec_path.string(),
                                (dir / "out2").string(), true, 9);
  CHECK(dssc::manifest_hash(seeded.manifest) ==
        dssc::manifest_hash(summary.manifest));
  CHECK(read_bytes(dir / "out2" / "sev0_spk00" / "utt000.wav") !=
        read_bytes(dir / "out" / "sev0_spk00" / "utt000.wav"));
}

TEST_CASE("ablate tabulates every preset") {
  ExperimentConfig c = base_config("ablrun");
  RunOptions opt;
  opt.plan_id = "osps_001";
  auto rows = dssc::cmd_ablate(c, opt);
  REQUIRE(rows.size() == 6);
  const std::vector<std::string> expect{"C1", "C2", "C3", "C4", "C5", "C6"};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].preset == expect[i]);
    CHECK(rows[i].n_params > 0);
    CHECK(rows[i].mean_final_loss > 0.0);
    CHECK(fs::exists(fs::path(c.out_dir) / expect[i] / "osps_001" /
                     "model.ckpt"));
    CHECK(fs::exists(fs::path(c.out_dir) / expect[i] / "report.csv"));
  }
  // C2 is C1 without SE; C6 keeps only the widest residual block.
  CHECK(rows[0].n_params > rows[1].n_params);
  CHECK(rows[0].n_params > rows[5].n_params);

  const auto csv = read_bytes(fs::path(c.out_dir) / "ablation.csv");
  CHECK(csv.find("preset,params,mean_final_train_loss,mean_accuracy,"
                 "macro_f1\n") == 0);
  CHECK(fs::exists(fs::path(c.out_dir) / "run-ablate.json"));
}
