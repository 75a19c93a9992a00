#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "audio.hpp"
#include "error.hpp"
#include "melspec.hpp"
#include "rng.hpp"
#include "tensor.hpp"

using dssc::AudioClip;
using dssc::DspConfig;
using dssc::Error;
using dssc::ErrorCode;
using dssc::Rng;
using dssc::Tensor;

namespace {

std::string temp_path(const std::string& name) {
  static const std::filesystem::path dir = [] {
    auto d = std::filesystem::temp_directory_path() / "dssc_dsp_test";
    std::filesystem::create_directories(d);
    return d;
  }();
  return (dir / name).string();
}

void write_bytes(const std::string& path,
                 const std::vector<unsigned char>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  REQUIRE(f.good());
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  REQUIRE(f.good());
}

std::vector<unsigned char> read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
  return bytes;
}

void put_u16(std::vector<unsigned char>& v, std::uint32_t x) {
  v.push_back(x & 0xff);
  v.push_back((x >> 8) & 0xff);
}

void put_u32(std::vector<unsigned char>& v, std::uint32_t x) {
  v.push_back(x & 0xff);
  v.push_back((x >> 8) & 0xff);
  v.push_back((x >> 16) & 0xff);
  v.push_back((x >> 24) & 0xff);
}

// Minimal 16-bit WAV writer for fixtures; interleaved frames, any codec tag.
std::vector<unsigned char> wav_pcm16_bytes(
    const std::vector<std::int16_t>& interleaved, int channels, int rate,
    std::uint16_t codec_tag = 1) {
  std::vector<unsigned char> v;
  auto ascii = [&](const char* s) {
    while (*s) v.push_back(static_cast<unsigned char>(*s++));
  };
  const auto data_size = static_cast<std::uint32_t>(interleaved.size() * 2);
  ascii("RIFF");
  put_u32(v, 36 + data_size);
  ascii("WAVE");
  ascii("fmt ");
  put_u32(v, 16);
  put_u16(v, codec_tag);
  put_u16(v, static_cast<std::uint32_t>(channels));
  put_u32(v, static_cast<std::uint32_t>(rate));
  put_u32(v, static_cast<std::uint32_t>(rate * channels * 2));
  put_u16(v, static_cast<std::uint32_t>(channels * 2));
  put_u16(v, 16);
  ascii("data");
  put_u32(v, data_size);
  for (std::int16_t s : interleaved) {
    put_u16(v, static_cast<std::uint16_t>(s));
  }
  return v;
}

template <typename Fn>
ErrorCode code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected a dssc::Error");
  return ErrorCode::internal;
}

std::vector<double> sine(int n, double freq_hz, double amp, int rate) {
  std::vector<double> s(n);
  for (int i = 0; i < n; ++i) {
    s[i] = amp * std::sin(2.0 * M_PI * freq_hz * i / rate);
  }
  return s;
}

// Quadratic-time DFT, the reference the FFT is checked against.
void dft_oracle(const std::vector<double>& re_in,
                const std::vector<double>& im_in, std::vector<double>& re_out,
                std::vector<double>& im_out) {
  const std::size_t n = re_in.size();
  re_out.assign(n, 0.0);
  im_out.assign(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t t = 0; t < n; ++t) {
      const double ang = -2.0 * M_PI * static_cast<double>(k) *
                         static_cast<double>(t) / static_cast<double>(n);
      re_out[k] += re_in[t] * std::cos(ang) - im_in[t] * std::sin(ang);
      im_out[k] += re_in[t] * std::sin(ang) + im_in[t] * std::cos(ang);
    }
  }
}

}  // namespace

TEST_CASE("load_wav scales 16-bit samples by full scale") {
  const auto path = temp_path("const_half.wav");
  write_bytes(path, wav_pcm16_bytes(std::vector<std::int16_t>(800, 16384), 1,
                                    16000));
  const AudioClip clip = dssc::load_wav(path);
  CHECK(clip.sample_rate == 16000);
  CHECK(clip.source_id == "const_half");
  REQUIRE(clip.samples.size() == 800);
  for (double s : clip.samples) CHECK(s == 0.5);
}

TEST_CASE("load_wav averages stereo down to mono") {
  std::vector<std::int16_t> frames;
  for (int i = 0; i < 300; ++i) {
    frames.push_back(static_cast<std::int16_t>(1000 + i));
    frames.push_back(static_cast<std::int16_t>(-1000 - i));
  }
  const auto path = temp_path("stereo_cancel.wav");
  write_bytes(path, wav_pcm16_bytes(frames, 2, 16000));
  const AudioClip clip = dssc::load_wav(path);
  REQUIRE(clip.samples.size() == 300);
  for (double s : clip.samples) CHECK(s == 0.0);
}

TEST_CASE("save_wav then load_wav round-trips a sine within quantization") {
  const auto samples = sine(16000, 440.0, 0.8, 16000);
  const auto path = temp_path("sine440.wav");
  dssc::save_wav(path, samples, 16000);
  const AudioClip clip = dssc::load_wav(path);
  REQUIRE(clip.samples.size() == 16000);
  double peak = 0.0, max_err = 0.0;
  for (std::size_t i = 0; i < clip.samples.size(); ++i) {
    peak = std::max(peak, std::abs(clip.samples[i]));
    max_err = std::max(max_err, std::abs(clip.samples[i] - samples[i]));
  }
  CHECK(peak > 0.799);
  CHECK(peak <= 0.8001);
  // Encode multiplies by 32767, decode divides by 32768: half a step of
  // rounding plus amp/32768 of scale skew.
  CHECK(max_err <= (0.5 + 0.8) / 32768.0);
}

TEST_CASE("load_wav failure modes carry distinct error codes") {
  const auto empty = temp_path("empty_data.wav");
  write_bytes(empty, wav_pcm16_bytes({}, 1, 16000));
  CHECK(code_of([&] { dssc::load_wav(empty); }) ==
        ErrorCode::invalid_argument);

  const auto garbage = temp_path("garbage.wav");
  write_bytes(garbage, {'N', 'O', 'T', 'A', 'W', 'A', 'V', 'E', 0, 1, 2, 3,
                        4, 5, 6, 7});
  CHECK(code_of([&] { dssc::load_wav(garbage); }) == ErrorCode::format);

  const auto mp3ish = temp_path("mp3_tag.wav");
  write_bytes(mp3ish,
              wav_pcm16_bytes(std::vector<std::int16_t>(64, 100), 1, 16000,
                              85));
  CHECK(code_of([&] { dssc::load_wav(mp3ish); }) == ErrorCode::unsupported);

  CHECK(code_of([&] { dssc::load_wav(temp_path("absent.wav")); }) ==
        ErrorCode::io);
}

TEST_CASE("trim_silence cuts leading and trailing quiet on frame boundaries") {
  AudioClip clip;
  clip.sample_rate = 16000;
  clip.source_id = "padded_tone";
  clip.samples.assign(3200, 0.0);
  const auto tone = sine(9000, 440.0, 0.5, 16000);
  clip.samples.insert(clip.samples.end(), tone.begin(), tone.end());
  clip.samples.insert(clip.samples.end(), 3200, 0.0);

  const AudioClip trimmed = dssc::trim_silence(clip);
  // 3200 zeros are 20 whole frames; the tone tail spills 40 samples into
  // frame 76, so the cut keeps [3200, 12320).
  CHECK(trimmed.samples.size() == 9120);
  CHECK(trimmed.samples[0] == clip.samples[3200]);
  CHECK(trimmed.source_id == "padded_tone");
}

TEST_CASE("trim_silence leaves a uniformly loud clip alone") {
  AudioClip clip;
  clip.sample_rate = 16000;
  clip.samples.assign(5000, 0.1);
  const AudioClip trimmed = dssc::trim_silence(clip);
  CHECK(trimmed.samples == clip.samples);
}

TEST_CASE("trim_silence collapses an all-zero clip to one frame") {
  AudioClip clip;
  clip.sample_rate = 16000;
  clip.samples.assign(1000, 0.0);
  const AudioClip trimmed = dssc::trim_silence(clip);
  CHECK(trimmed.samples.size() == 160);
}

TEST_CASE("trim_silence is idempotent on randomized clips") {
  Rng rng(2024);
  for (int iter = 0; iter < 20; ++iter) {
    AudioClip clip;
    clip.sample_rate = 16000;
    const int n = 500 + static_cast<int>(rng.uniform_int(19500));
    clip.samples.assign(n, 0.0);
    const int bursts = 1 + static_cast<int>(rng.uniform_int(4));
    for (int b = 0; b < bursts; ++b) {
      const int len = 50 + static_cast<int>(rng.uniform_int(3000));
      const int start =
          static_cast<int>(rng.uniform_int(std::max(1, n - len)));
      const double amp = std::pow(10.0, rng.uniform(-3.0, 0.0));
      for (int i = start; i < std::min(n, start + len); ++i) {
        clip.samples[i] += amp * rng.uniform(-1.0, 1.0);
      }
    }
    const AudioClip once = dssc::trim_silence(clip);
    const AudioClip twice = dssc::trim_silence(once);
    CHECK(twice.samples == once.samples);
  }
}

TEST_CASE("fft_inplace matches the quadratic DFT") {
  Rng rng(7);
  std::vector<double> re(256), im(256);
  for (auto& v : re) v = rng.uniform(-1.0, 1.0);
  for (auto& v : im) v = rng.uniform(-1.0, 1.0);
  std::vector<double> re_ref, im_ref;
  dft_oracle(re, im, re_ref, im_ref);
  dssc::fft_inplace(re, im);
  double max_err = 0.0;
  for (int k = 0; k < 256; ++k) {
    max_err = std::max(max_err, std::abs(re[k] - re_ref[k]));
    max_err = std::max(max_err, std::abs(im[k] - im_ref[k]));
  }
  CHECK(max_err < 1e-9);
}

TEST_CASE("fft_inplace rejects bad lengths") {
  std::vector<double> re(100, 0.0), im(100, 0.0);
  CHECK(code_of([&] { dssc::fft_inplace(re, im); }) ==
        ErrorCode::invalid_argument);
  std::vector<double> re2(64, 0.0), im2(32, 0.0);
  CHECK(code_of([&] { dssc::fft_inplace(re2, im2); }) ==
        ErrorCode::invalid_argument);
}

TEST_CASE("mel filterbank covers every band and every bin") {
  const Tensor<double> fb = dssc::mel_filterbank(128, 256, 16000.0, 0.0,
                                                 8000.0);
  REQUIRE(fb.dim(0) == 128);
  REQUIRE(fb.dim(1) == 129);
  for (int m = 0; m < 128; ++m) {
    double row = 0.0;
    for (int b = 0; b < 129; ++b) row += fb.data()[m * 129 + b];
    CHECK(row > 0.0);
  }
  for (int b = 0; b < 129; ++b) {
    double col = 0.0;
    for (int m = 0; m < 128; ++m) col += fb.data()[m * 129 + b];
    CHECK(col > 0.0);
  }
  CHECK(code_of([] { dssc::mel_filterbank(0, 256, 16000.0, 0.0, 8000.0); }) ==
        ErrorCode::invalid_argument);
}

TEST_CASE("mel_spectrogram of silence is exactly the log floor") {
  AudioClip clip;
  clip.sample_rate = 16000;
  clip.samples.assign(16000, 0.0);
  const Tensor<double> mel = dssc::mel_spectrogram(clip);
  REQUIRE(mel.dim(0) == 128);
  REQUIRE(mel.dim(1) == 247);
  const double floor = std::log(1e-6);
  for (std::int64_t i = 0; i < mel.size(); ++i) CHECK(mel.data()[i] == floor);
}

TEST_CASE("mel_spectrogram of a steady tone keeps one dominant band") {
  AudioClip clip;
  clip.sample_rate = 16000;
  clip.samples = sine(16000, 1000.0, 0.5, 16000);
  const Tensor<double> mel = dssc::mel_spectrogram(clip);
  const int frames = mel.dim(1);
  int first_band = -1;
  for (int t = 0; t < frames; ++t) {
    int band = 0;
    double best = mel.data()[0 * frames + t];
    for (int m = 1; m < 128; ++m) {
      const double v = mel.data()[m * frames + t];
      if (v > best) {
        best = v;
        band = m;
      }
    }
    if (t == 0) first_band = band;
    CHECK(band == first_band);
  }
  CHECK(first_band > 10);
  CHECK(first_band < 120);
}

TEST_CASE("mel_spectrogram frame count follows the hop formula") {
  AudioClip clip;
  clip.sample_rate = 16000;
  clip.samples.assign(8000, 0.0);
  CHECK(dssc::mel_spectrogram(clip).dim(1) == (8000 - 256) / 64 + 1);

  clip.samples.assign(255, 0.0);
  CHECK(code_of([&] { dssc::mel_spectrogram(clip); }) ==
        ErrorCode::invalid_argument);

  clip.samples.assign(16000, 0.0);
  clip.sample_rate = 8000;
  CHECK(code_of([&] { dssc::mel_spectrogram(clip); }) ==
        ErrorCode::invalid_argument);
}

TEST_CASE("to_mel_plane preserves constants and is exact at native size") {
  Tensor<double> flat({37, 61}, 2.5);
  const Tensor<float> plane = dssc::to_mel_plane(flat, 128);
  REQUIRE(plane.dim(0) == 128);
  REQUIRE(plane.dim(1) == 128);
  for (std::int64_t i = 0; i < plane.size(); ++i) {
    CHECK(plane.data()[i] == 2.5f);
  }

  Rng rng(33);
  Tensor<double> native({128, 128});
  for (std::int64_t i = 0; i < native.size(); ++i) {
    native.data()[i] = rng.uniform(-14.0, 3.0);
  }
  const Tensor<float> id = dssc::to_mel_plane(native, 128);
  for (std::int64_t i = 0; i < id.size(); ++i) {
    CHECK(id.data()[i] == static_cast<float>(native.data()[i]));
  }
}

TEST_CASE("replicate_planes stacks three identical copies") {
  Rng rng(9);
  Tensor<float> plane({16, 16});
  for (std::int64_t i = 0; i < plane.size(); ++i) {
    plane.data()[i] = static_cast<float>(rng.uniform(-5.0, 5.0));
  }
  const Tensor<float> stacked = dssc::replicate_planes(plane);
  REQUIRE(stacked.dim(0) == 3);
  REQUIRE(stacked.dim(1) == 16);
  REQUIRE(stacked.dim(2) == 16);
  const std::size_t bytes = 16 * 16 * sizeof(float);
  CHECK(std::memcmp(stacked.data(), plane.data(), bytes) == 0);
  CHECK(std::memcmp(stacked.data() + 256, plane.data(), bytes) == 0);
  CHECK(std::memcmp(stacked.data() + 512, plane.data(), bytes) == 0);
}

TEST_CASE("mel cache round-trips bitwise with the documented layout") {
  Rng rng(55);
  Tensor<float> plane({128, 128});
  for (std::int64_t i = 0; i < plane.size(); ++i) {
    plane.data()[i] = static_cast<float>(rng.uniform(-20.0, 5.0));
  }
  const auto path = temp_path("roundtrip.mel");
  dssc::write_mel_cache(path, plane);
  CHECK(std::filesystem::file_size(path) == 16 + 4 * 128 * 128);
  const Tensor<float> back = dssc::read_mel_cache(path);
  REQUIRE(back.dim(0) == 128);
  REQUIRE(back.dim(1) == 128);
  CHECK(std::memcmp(back.data(), plane.data(),
                    plane.size() * sizeof(float)) == 0);
}

TEST_CASE("mel cache rejects corrupted headers") {
  Tensor<float> plane({8, 8}, 1.0f);
  const auto good = temp_path("good.mel");
  dssc::write_mel_cache(good, plane);
  const auto bytes = read_bytes(good);

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  const auto p1 = temp_path("bad_magic.mel");
  write_bytes(p1, bad_magic);
  CHECK(code_of([&] { dssc::read_mel_cache(p1); }) == ErrorCode::format);

  auto bad_version = bytes;
  bad_version[4] = 2;
  const auto p2 = temp_path("bad_version.mel");
  write_bytes(p2, bad_version);
  CHECK(code_of([&] { dssc::read_mel_cache(p2); }) == ErrorCode::unsupported);

  auto truncated = bytes;
  truncated.resize(16 + 10);
  const auto p3 = temp_path("truncated.mel");
  write_bytes(p3, truncated);
  CHECK(code_of([&] { dssc::read_mel_cache(p3); }) == ErrorCode::format);

  auto header_only = bytes;
  header_only.resize(8);
  const auto p4 = temp_path("header_only.mel");
  write_bytes(p4, header_only);
  CHECK(code_of([&] { dssc::read_mel_cache(p4); }) == ErrorCode::format);
}

TEST_CASE("wav_to_plane is deterministic end to end") {
  std::vector<double> samples(4000, 0.0);
  const auto tone = sine(12000, 700.0, 0.6, 16000);
  samples.insert(samples.end(), tone.begin(), tone.end());
  const auto path = temp_path("pipeline.wav");
  dssc::save_wav(path, samples, 16000);

  const Tensor<float> a = dssc::wav_to_plane(path);
  const Tensor<float> b = dssc::wav_to_plane(path);
  REQUIRE(a.dim(0) == 128);
  REQUIRE(a.dim(1) == 128);
  CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);

  const Tensor<float> stacked = dssc::replicate_planes(a);
  CHECK(stacked.dim(0) == 3);
  CHECK(stacked.dim(1) == 128);
  CHECK(stacked.dim(2) == 128);
}
