#pragma once

#include <string>

#include "audio.hpp"
#include "tensor.hpp"

namespace dssc {

// Fixed parameters of the feature pipeline. The defaults are the ones every
// preprocessed cache and golden test is built against; change them and the
// caches are invalid.
struct DspConfig {
  int sample_rate = 16000;
  int window = 256;  // 16 ms
  int hop = 64;      // 4 ms
  int n_mels = 128;
  double fmin = 0.0;
  double fmax = 8000.0;
  double log_eps = 1e-6;
  double trim_threshold_db = -40.0;
  int image_size = 128;
};

// In-place iterative radix-2 FFT over re/im; the length must be a power of
// two. Forward transform with the e^{-i2πkn/N} convention.
void fft_inplace(std::vector<double>& re, std::vector<double>& im);

// Triangular filters on the HTK mel scale, returned as [n_mels, n_fft/2+1].
// Each weight is the triangle's mean value over the FFT bin's frequency
// interval rather than a point sample, so narrow low-frequency filters
// never vanish between bins.
Tensor<double> mel_filterbank(int n_mels, int n_fft, double sample_rate,
                              double fmin, double fmax);

// Log-power mel spectrogram, [n_mels, n_frames] with
// n_frames = floor((len - window)/hop) + 1. Hann window, power spectrum,
// natural log of (mel + log_eps).
Tensor<double> mel_spectrogram(const AudioClip& clip,
                               const DspConfig& cfg = {});

// Bilinear resize of a mel matrix to [image_size, image_size], stored float.
Tensor<float> to_mel_plane(const Tensor<double>& mel, int image_size = 128);

// [h,w] -> [3,h,w] with three bit-identical planes.
Tensor<float> replicate_planes(const Tensor<float>& plane);

// Feature cache entry: 16-byte header (magic "DSSC", version, height, width,
// reserved) followed by row-major float32 little-endian samples.
void write_mel_cache(const std::string& path, const Tensor<float>& plane);
Tensor<float> read_mel_cache(const std::string& path);

// Full pipeline: load -> trim -> mel -> plane.
Tensor<float> wav_to_plane(const std::string& path, const DspConfig& cfg = {});

}  // namespace dssc
