#pragma once

#include <string>
#include <vector>

namespace dssc {

// Mono waveform with samples in [-1, 1].
struct AudioClip {
  std::vector<double> samples;
  int sample_rate = 0;
  std::string source_id;
};

// Reads a PCM WAV file (integer 8/16/24/32-bit or IEEE float 32/64-bit).
// Multichannel input is averaged down to mono; integer samples are scaled
// by their full-scale value. source_id is set to the file's stem.
AudioClip load_wav(const std::string& path);

// Writes mono 16-bit PCM. Samples are clamped to [-1, 1] before quantizing.
void save_wav(const std::string& path, const std::vector<double>& samples,
              int sample_rate);

// Drops leading and trailing 10 ms frames whose RMS falls more than
// |threshold_db| below the loudest frame's RMS. Cuts are frame-aligned, so
// the operation is idempotent. An all-silent clip collapses to its single
// loudest frame.
AudioClip trim_silence(const AudioClip& clip, double threshold_db = -40.0);

}  // namespace dssc
