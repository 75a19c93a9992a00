#include "synth.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "audio.hpp"
#include "error.hpp"
#include "melspec.hpp"
#include "rng.hpp"
#include "splits.hpp"

namespace dssc {

namespace {

using nlohmann::json;

constexpr int kRate = 16000;
constexpr int kBlock = 1600;  // 100 ms pause granularity

// Distinct deterministic streams per (tag, speaker, utterance).
std::uint64_t stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t a,
                     std::uint64_t b = 0) {
  return Rng::mix(Rng::mix(Rng::mix(seed, tag), a), b);
}

// Smallest gap between adjacent tiers; offsets are bounded by half of it.
double min_adjacent_gap(const std::vector<SeverityParams>& p,
                        double SeverityParams::*field) {
  double gap = 1e300;
  for (std::size_t i = 1; i < p.size(); ++i) {
    gap = std::min(gap, p[i].*field - p[i - 1].*field);
  }
  return gap;
}

struct SpeakerVoice {
  double pitch_hz;
  double jitter;
  double tilt_db_oct;
  double pause_prob;
};

SpeakerVoice voice_for(const SynthSpec& spec, int severity, int ordinal) {
  const SeverityParams& base = spec.severity_params[severity];
  Rng rng(stream(spec.seed, 1, static_cast<std::uint64_t>(ordinal)));
  const double jitter_gap = min_adjacent_gap(spec.severity_params,
                                             &SeverityParams::jitter);
  const double pause_gap = min_adjacent_gap(spec.severity_params,
                                            &SeverityParams::pause_prob);
  SpeakerVoice v;
  // Pitch is the main speaker cue; tiers share the same base.
  v.pitch_hz = std::clamp(base.base_pitch_hz + (rng.uniform() - 0.5) * 90.0,
                          80.0, 280.0);
  v.jitter = std::max(0.0, base.jitter + (rng.uniform() - 0.5) * 0.9 * jitter_gap);
  v.pause_prob =
      std::clamp(base.pause_prob + (rng.uniform() - 0.5) * 0.9 * pause_gap,
                 0.0, 0.95);
  v.tilt_db_oct = base.tilt_db_oct + (rng.uniform() - 0.5) * 1.0;
  return v;
}

std::vector<double> synth_utterance(const SpeakerVoice& v, Rng& rng) {
  const double dur = 0.5 + 1.5 * rng.uniform();
  const int n = static_cast<int>(std::lround(dur * kRate));
  const double f0 = v.pitch_hz * (0.95 + 0.1 * rng.uniform());
  const double amp = 0.25 + 0.15 * rng.uniform();

  // Harmonic amplitudes under the tier's spectral tilt, peak-normalized.
  const int n_harm = std::min(48, static_cast<int>(7400.0 / f0));
  std::vector<double> harm(static_cast<std::size_t>(n_harm));
  double total = 0.0;
  for (int h = 1; h <= n_harm; ++h) {
    // tilt dB/octave -> linear gain h^(tilt / (20*log10 2)).
    harm[h - 1] = std::pow(static_cast<double>(h),
                           v.tilt_db_oct / 6.0205999132796239);
    total += harm[h - 1];
  }
  for (auto& a : harm) a /= total;

  // Voicing gate per 100 ms block; the first block always speaks so an
  // utterance can never be silence end to end.
  const int n_blocks = (n + kBlock - 1) / kBlock;
  std::vector<char> voiced(static_cast<std::size_t>(n_blocks), 1);
  for (int b = 1; b < n_blocks; ++b) {
    voiced[b] = rng.uniform() >= v.pause_prob ? 1 : 0;
  }

  std::vector<double> out(static_cast<std::size_t>(n), 0.0);
  int pos = 0;
  while (pos < n) {
    // One glottal cycle with jittered length and shimmered amplitude.
    const double cf0 =
        std::clamp(f0 * (1.0 + v.jitter * rng.normal()), 60.0, 400.0);
    const int clen = std::max(8, static_cast<int>(std::lround(kRate / cf0)));
    const double camp =
        amp * std::max(0.0, 1.0 + 0.6 * v.jitter * rng.normal());
    for (int i = 0; i < clen && pos < n; ++i, ++pos) {
      if (!voiced[pos / kBlock]) continue;
      const double phase = static_cast<double>(i) / clen;
      double s = 0.0;
      for (int h = 1; h <= n_harm; ++h) {
        s += harm[h - 1] * std::sin(6.283185307179586 * h * phase);
      }
      // 5 ms fade at both ends keeps the edges click-free.
      const double env = std::min(
          {1.0, pos / 80.0, static_cast<double>(n - 1 - pos) / 80.0});
      out[pos] = camp * s * env;
    }
  }
  return out;
}

std::vector<double> probe_feature(const Tensor<float>& plane) {
  const int rows = plane.dim(0), cols = plane.dim(1);
  std::vector<double> f(static_cast<std::size_t>(rows), 0.0);
  for (int r = 0; r < rows; ++r) {
    double sum = 0.0;
    for (int c = 0; c < cols; ++c) {
      sum += plane[static_cast<std::int64_t>(r) * cols + c];
    }
    f[r] = sum / cols;
  }
  return f;
}

}  // namespace

SynthSpec default_synth_spec(int n_severities) {
  if (n_severities != 3 && n_severities != 4) {
    throw Error(ErrorCode::invalid_argument,
                "synthetic corpora support 3 or 4 severities, got " +
                    std::to_string(n_severities));
  }
  SynthSpec spec;
  spec.n_severities = n_severities;
  if (n_severities == 3) {
    spec.severity_params = {
        {140.0, 0.010, 0.0, 0.02},
        {140.0, 0.060, -2.0, 0.12},
        {140.0, 0.150, -4.0, 0.28},
    };
  } else {
    spec.severity_params = {
        {140.0, 0.010, 0.0, 0.02},
        {140.0, 0.050, -1.5, 0.10},
        {140.0, 0.110, -3.0, 0.20},
        {140.0, 0.200, -4.5, 0.32},
    };
  }
  return spec;
}

std::vector<std::string> synth_spec_violations(const SynthSpec& spec) {
  std::vector<std::string> out;
  if (spec.version != 1) {
    out.push_back("version must be 1, got " + std::to_string(spec.version));
  }
  if (spec.corpus_id.empty()) out.push_back("corpus_id is empty");
  if (spec.n_severities != 3 && spec.n_severities != 4) {
    out.push_back("n_severities must be 3 or 4, got " +
                  std::to_string(spec.n_severities));
  }
  if (spec.speakers_per_severity < 1) {
    out.push_back("speakers_per_severity must be at least 1");
  }
  if (spec.utterances_per_speaker < 1) {
    out.push_back("utterances_per_speaker must be at least 1");
  }
  if (static_cast<int>(spec.severity_params.size()) != spec.n_severities) {
    out.push_back("severity_params has " +
                  std::to_string(spec.severity_params.size()) +
                  " entries, expected " + std::to_string(spec.n_severities));
    return out;  // the positional checks below would misreport
  }
  for (std::size_t i = 0; i < spec.severity_params.size(); ++i) {
    const auto& p = spec.severity_params[i];
    const std::string tier = "severity " + std::to_string(i);
    if (!(p.base_pitch_hz >= 60.0 && p.base_pitch_hz <= 400.0)) {
      out.push_back(tier + ": base_pitch_hz must lie in [60, 400]");
    }
    if (!(p.jitter >= 0.0 && p.jitter <= 0.5)) {
      out.push_back(tier + ": jitter must lie in [0, 0.5]");
    }
    if (!(p.pause_prob >= 0.0 && p.pause_prob <= 0.9)) {
      out.push_back(tier + ": pause_prob must lie in [0, 0.9]");
    }
    if (!(p.tilt_db_oct >= -24.0 && p.tilt_db_oct <= 6.0)) {
      out.push_back(tier + ": tilt_db_oct must lie in [-24, 6]");
    }
  }
  for (std::size_t i = 1; i < spec.severity_params.size(); ++i) {
    if (!(spec.severity_params[i].jitter >
          spec.severity_params[i - 1].jitter)) {
      out.push_back("jitter must increase strictly with severity (tier " +
                    std::to_string(i) + " does not)");
    }
    if (!(spec.severity_params[i].pause_prob >
          spec.severity_params[i - 1].pause_prob)) {
      out.push_back("pause_prob must increase strictly with severity (tier " +
                    std::to_string(i) + " does not)");
    }
  }
  return out;
}

std::string synth_spec_to_json(const SynthSpec& spec) {
  json j;
  j["version"] = spec.version;
  j["corpus_id"] = spec.corpus_id;
  j["n_severities"] = spec.n_severities;
  j["speakers_per_severity"] = spec.speakers_per_severity;
  j["utterances_per_speaker"] = spec.utterances_per_speaker;
  j["seed"] = spec.seed;
  json params = json::array();
  for (const auto& p : spec.severity_params) {
    json e;
    e["base_pitch_hz"] = p.base_pitch_hz;
    e["jitter"] = p.jitter;
    e["tilt_db_oct"] = p.tilt_db_oct;
    e["pause_prob"] = p.pause_prob;
    params.push_back(std::move(e));
  }
  j["severity_params"] = std::move(params);
  return j.dump();
}

SynthSpec synth_spec_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::format,
                std::string("spec is not valid JSON: ") + e.what());
  }
  SynthSpec spec;
  try {
    spec.version = j.at("version").get<int>();
    if (spec.version != 1) {
      throw Error(ErrorCode::unsupported,
                  "spec version " + std::to_string(spec.version) +
                      " is not supported (expected 1)");
    }
    spec.corpus_id = j.at("corpus_id").get<std::string>();
    spec.n_severities = j.at("n_severities").get<int>();
    spec.speakers_per_severity = j.at("speakers_per_severity").get<int>();
    spec.utterances_per_speaker = j.at("utterances_per_speaker").get<int>();
    spec.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& e : j.at("severity_params")) {
      SeverityParams p;
      p.base_pitch_hz = e.at("base_pitch_hz").get<double>();
      p.jitter = e.at("jitter").get<double>();
      p.tilt_db_oct = e.at("tilt_db_oct").get<double>();
      p.pause_prob = e.at("pause_prob").get<double>();
      spec.severity_params.push_back(p);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::format,
                std::string("spec structure is wrong: ") + e.what());
  }
  const auto violations = synth_spec_violations(spec);
  if (!violations.empty()) {
    std::string msg = "invalid synthesis spec: " + violations[0];
    for (std::size_t i = 1; i < violations.size(); ++i) {
      msg += "; " + violations[i];
    }
    throw Error(ErrorCode::config, msg);
  }
  return spec;
}

void save_synth_spec(const std::string& path, const SynthSpec& spec) {
  std::ofstream f(path, std::ios::trunc);
  if (!f.good()) {
    throw Error(ErrorCode::io, "cannot open " + path + " for writing");
  }
  f << synth_spec_to_json(spec) << "\n";
  if (!f.good()) throw Error(ErrorCode::io, "short write to " + path);
}

SynthSpec load_synth_spec(const std::string& path) {
  std::ifstream f(path);
  if (!f.good()) throw Error(ErrorCode::io, "cannot open spec " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return synth_spec_from_json(ss.str());
}

CorpusManifest generate_corpus(const SynthSpec& spec,
                               const std::string& out_dir) {
  const auto violations = synth_spec_violations(spec);
  if (!violations.empty()) {
    std::string msg = "invalid synthesis spec: " + violations[0];
    for (std::size_t i = 1; i < violations.size(); ++i) {
      msg += "; " + violations[i];
    }
    throw Error(ErrorCode::config, msg);
  }

  CorpusManifest m;
  m.corpus_id = spec.corpus_id;
  int ordinal = 0;
  for (int sev = 0; sev < spec.n_severities; ++sev) {
    for (int k = 0; k < spec.speakers_per_severity; ++k, ++ordinal) {
      char id[32];
      std::snprintf(id, sizeof(id), "sev%d_spk%02d", sev, k);
      const SpeakerVoice voice = voice_for(spec, sev, ordinal);

      SpeakerEntry entry;
      entry.speaker_id = id;
      entry.severity = static_cast<Severity>(sev);
      const auto speaker_dir = std::filesystem::path(out_dir) / id;
      std::filesystem::create_directories(speaker_dir);
      for (int u = 0; u < spec.utterances_per_speaker; ++u) {
        Rng rng(stream(spec.seed, 2, static_cast<std::uint64_t>(ordinal),
                       static_cast<std::uint64_t>(u)));
        const auto samples = synth_utterance(voice, rng);
        char name[32];
        std::snprintf(name, sizeof(name), "utt%03d.wav", u);
        save_wav((speaker_dir / name).string(), samples, kRate);
        entry.utterances.push_back(std::string(id) + "/" + name);
      }
      entry.utterance_count = spec.utterances_per_speaker;
      m.speakers.push_back(std::move(entry));
    }
  }
  save_manifest((std::filesystem::path(out_dir) / "corpus.manifest").string(),
                m);
  return m;
}

DifficultyReport holdout_difficulty(const CorpusManifest& manifest,
                                    const std::string& audio_root) {
  const auto plans = generate_osps(manifest);

  // One probe feature per utterance, computed once.
  std::map<std::string, std::vector<double>> features;
  std::map<std::string, int> labels;
  for (const auto& s : manifest.speakers) {
    for (const auto& u : s.utterances) {
      const auto path = (std::filesystem::path(audio_root) / u).string();
      features[u] = probe_feature(wav_to_plane(path));
      labels[u] = static_cast<int>(s.severity);
    }
  }
  if (features.empty()) {
    throw Error(ErrorCode::invalid_argument,
                "manifest lists no utterances to probe");
  }
  const std::size_t dim = features.begin()->second.size();
  const int n_classes = manifest_n_classes(manifest);

  DifficultyReport report;
  report.n_classes = n_classes;
  report.n_plans = static_cast<int>(plans.size());
  report.min_accuracy = 1.0;

  for (const auto& plan : plans) {
    std::vector<std::vector<double>> centroid(
        static_cast<std::size_t>(n_classes), std::vector<double>(dim, 0.0));
    std::vector<int> count(static_cast<std::size_t>(n_classes), 0);
    for (const auto& id : plan.train) {
      const SpeakerEntry* s = find_speaker(manifest, id);
      for (const auto& u : s->utterances) {
        const auto& f = features.at(u);
        auto& c = centroid[static_cast<std::size_t>(labels.at(u))];
        for (std::size_t d = 0; d < dim; ++d) c[d] += f[d];
        ++count[static_cast<std::size_t>(labels.at(u))];
      }
    }
    for (int c = 0; c < n_classes; ++c) {
      if (count[c] == 0) continue;
      for (std::size_t d = 0; d < dim; ++d) centroid[c][d] /= count[c];
    }

    std::int64_t hit = 0, total = 0;
    for (const auto& id : plan.test) {
      const SpeakerEntry* s = find_speaker(manifest, id);
      for (const auto& u : s->utterances) {
        const auto& f = features.at(u);
        int best = -1;
        double best_d = 1e300;
        for (int c = 0; c < n_classes; ++c) {
          if (count[c] == 0) continue;
          double d2 = 0.0;
          for (std::size_t d = 0; d < dim; ++d) {
            const double diff = f[d] - centroid[c][d];
            d2 += diff * diff;
          }
          if (d2 < best_d) {
            best_d = d2;
            best = c;
          }
        }
        if (best == labels.at(u)) ++hit;
        ++total;
      }
    }
    const double acc = static_cast<double>(hit) / static_cast<double>(total);
    report.mean_accuracy += acc;
    report.min_accuracy = std::min(report.min_accuracy, acc);
    report.max_accuracy = std::max(report.max_accuracy, acc);
  }
  report.mean_accuracy /= static_cast<double>(plans.size());
  return report;
}

}  // namespace dssc
