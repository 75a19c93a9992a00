#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "manifest.hpp"

namespace dssc {

// Acoustic recipe for one severity tier. Severity is carried by jitter
// (cycle-length instability), spectral tilt, and pause insertion; pitch is
// deliberately identical across tiers so it stays a speaker cue only.
struct SeverityParams {
  double base_pitch_hz = 140.0;
  double jitter = 0.0;        // fractional f0 perturbation per cycle
  double tilt_db_oct = 0.0;   // harmonic rolloff, dB per octave
  double pause_prob = 0.0;    // chance a 100 ms block is silent
};

struct SynthSpec {
  int version = 1;
  std::string corpus_id = "synthetic";
  int n_severities = 3;  // 3 or 4
  int speakers_per_severity = 3;
  int utterances_per_speaker = 20;
  std::uint64_t seed = 0;
  std::vector<SeverityParams> severity_params;  // one per severity
};

SynthSpec default_synth_spec(int n_severities = 3);

// Jitter and pause probability must increase strictly with severity, so the
// tiers stay acoustically separable by construction.
std::vector<std::string> synth_spec_violations(const SynthSpec& spec);

std::string synth_spec_to_json(const SynthSpec& spec);
SynthSpec synth_spec_from_json(const std::string& text);
void save_synth_spec(const std::string& path, const SynthSpec& spec);
SynthSpec load_synth_spec(const std::string& path);

// Writes one mono 16 kHz WAV per utterance under
// out_dir/<speaker_id>/uttNNN.wav plus out_dir/corpus.manifest, and returns
// the manifest. Per-speaker parameter offsets stay inside half the smallest
// gap between adjacent tiers, so severity always dominates speaker identity.
// Regeneration with the same spec is byte-identical.
CorpusManifest generate_corpus(const SynthSpec& spec,
                               const std::string& out_dir);

struct DifficultyReport {
  int n_classes = 0;
  int n_plans = 0;
  double mean_accuracy = 0.0;
  double min_accuracy = 0.0;
  double max_accuracy = 0.0;
};

// Speaker-independent linear probe: per-band time means of each mel image,
// nearest class centroid, averaged over every one-per-severity holdout plan.
// Guards the corpus against being degenerate (too easy or unlearnable).
DifficultyReport holdout_difficulty(const CorpusManifest& manifest,
                                    const std::string& audio_root);

}  // namespace dssc
