#include "audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "error.hpp"

namespace dssc {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xfffe;

std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

double decode_sample(const unsigned char* p, std::uint16_t format,
                     std::uint16_t bits) {
  if (format == kFormatFloat) {
    if (bits == 32) {
      float v;
      std::uint32_t u = read_u32(p);
      std::memcpy(&v, &u, 4);
      return v;
    }
    std::uint64_t u = static_cast<std::uint64_t>(read_u32(p)) |
                      (static_cast<std::uint64_t>(read_u32(p + 4)) << 32);
    double v;
    std::memcpy(&v, &u, 8);
    return v;
  }
  switch (bits) {
    case 8:
      // 8-bit WAV is unsigned with midpoint 128.
      return (static_cast<int>(p[0]) - 128) / 128.0;
    case 16: {
      const auto v = static_cast<std::int16_t>(read_u16(p));
      return v / 32768.0;
    }
    case 24: {
      std::int32_t v = p[0] | (p[1] << 8) | (p[2] << 16);
      if (v & 0x800000) v |= ~0xffffff;
      return v / 8388608.0;
    }
    case 32: {
      const auto v = static_cast<std::int32_t>(read_u32(p));
      return v / 2147483648.0;
    }
    default:
      throw Error(ErrorCode::unsupported,
                  "wav: unsupported PCM bit depth " + std::to_string(bits));
  }
}

}  // namespace

AudioClip load_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::io, "wav: cannot open " + path);
  }
  std::vector<unsigned char> raw((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  if (raw.size() < 12 || std::memcmp(raw.data(), "RIFF", 4) != 0 ||
      std::memcmp(raw.data() + 8, "WAVE", 4) != 0) {
    throw Error(ErrorCode::format, "wav: " + path + " is not a RIFF/WAVE file");
  }

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t sample_rate = 0;
  bool have_fmt = false;
  const unsigned char* data = nullptr;
  std::uint32_t data_size = 0;

  std::size_t pos = 12;
  while (pos + 8 <= raw.size()) {
    const unsigned char* chunk = raw.data() + pos;
    const std::uint32_t size = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + size > raw.size()) {
      throw Error(ErrorCode::format, "wav: truncated chunk in " + path);
    }
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16) {
        throw Error(ErrorCode::format, "wav: malformed fmt chunk in " + path);
      }
      format = read_u16(raw.data() + body);
      channels = read_u16(raw.data() + body + 2);
      sample_rate = read_u32(raw.data() + body + 4);
      bits = read_u16(raw.data() + body + 14);
      if (format == kFormatExtensible) {
        // The real format tag lives in the first two bytes of the subformat
        // GUID at offset 24 of the extension.
        if (size < 40) {
          throw Error(ErrorCode::format,
                      "wav: malformed extensible fmt chunk in " + path);
        }
        format = read_u16(raw.data() + body + 24);
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = raw.data() + body;
      data_size = size;
    }
    pos = body + size + (size & 1);
  }

  if (!have_fmt || data == nullptr) {
    throw Error(ErrorCode::format,
                "wav: missing fmt or data chunk in " + path);
  }
  if (format != kFormatPcm && format != kFormatFloat) {
    throw Error(ErrorCode::unsupported,
                "wav: unsupported codec tag " + std::to_string(format) +
                    " in " + path + " (PCM and IEEE float only)");
  }
  if (format == kFormatFloat && bits != 32 && bits != 64) {
    throw Error(ErrorCode::unsupported,
                "wav: unsupported float bit depth " + std::to_string(bits));
  }
  if (channels == 0 || sample_rate == 0 || bits % 8 != 0 || bits == 0) {
    throw Error(ErrorCode::format, "wav: malformed fmt fields in " + path);
  }

  const std::size_t bytes_per_sample = bits / 8;
  const std::size_t frame_size = bytes_per_sample * channels;
  const std::size_t n_frames = data_size / frame_size;
  if (n_frames == 0) {
    throw Error(ErrorCode::invalid_argument,
                "wav: zero-length audio in " + path);
  }

  AudioClip clip;
  clip.sample_rate = static_cast<int>(sample_rate);
  clip.source_id = std::filesystem::path(path).stem().string();
  clip.samples.resize(n_frames);
  for (std::size_t i = 0; i < n_frames; ++i) {
    double acc = 0.0;
    for (std::uint16_t c = 0; c < channels; ++c) {
      acc += decode_sample(data + i * frame_size + c * bytes_per_sample,
                           format, bits);
    }
    clip.samples[i] = acc / channels;
  }
  return clip;
}

void save_wav(const std::string& path, const std::vector<double>& samples,
              int sample_rate) {
  if (samples.empty() || sample_rate <= 0) {
    throw Error(ErrorCode::invalid_argument,
                "wav: refusing to write empty audio to " + path);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw Error(ErrorCode::io, "wav: cannot write " + path);
  }

  const std::uint32_t data_size = static_cast<std::uint32_t>(samples.size() * 2);
  unsigned char header[44];
  std::memcpy(header, "RIFF", 4);
  const std::uint32_t riff_size = 36 + data_size;
  header[4] = riff_size & 0xff;
  header[5] = (riff_size >> 8) & 0xff;
  header[6] = (riff_size >> 16) & 0xff;
  header[7] = (riff_size >> 24) & 0xff;
  std::memcpy(header + 8, "WAVEfmt ", 8);
  const std::uint32_t fmt_size = 16;
  header[16] = fmt_size & 0xff;
  header[17] = header[18] = header[19] = 0;
  header[20] = kFormatPcm;
  header[21] = 0;
  header[22] = 1;  // mono
  header[23] = 0;
  const auto sr = static_cast<std::uint32_t>(sample_rate);
  header[24] = sr & 0xff;
  header[25] = (sr >> 8) & 0xff;
  header[26] = (sr >> 16) & 0xff;
  header[27] = (sr >> 24) & 0xff;
  const std::uint32_t byte_rate = sr * 2;
  header[28] = byte_rate & 0xff;
  header[29] = (byte_rate >> 8) & 0xff;
  header[30] = (byte_rate >> 16) & 0xff;
  header[31] = (byte_rate >> 24) & 0xff;
  header[32] = 2;  // block align
  header[33] = 0;
  header[34] = 16;  // bits per sample
  header[35] = 0;
  std::memcpy(header + 36, "data", 4);
  header[40] = data_size & 0xff;
  header[41] = (data_size >> 8) & 0xff;
  header[42] = (data_size >> 16) & 0xff;
  header[43] = (data_size >> 24) & 0xff;
  out.write(reinterpret_cast<const char*>(header), sizeof(header));

  for (double s : samples) {
    const double clamped = std::clamp(s, -1.0, 1.0);
    const auto q = static_cast<std::int16_t>(
        std::lrint(clamped * 32767.0));
    const unsigned char bytes[2] = {
        static_cast<unsigned char>(q & 0xff),
        static_cast<unsigned char>((q >> 8) & 0xff)};
    out.write(reinterpret_cast<const char*>(bytes), 2);
  }
  if (!out) {
    throw Error(ErrorCode::io, "wav: short write to " + path);
  }
}

AudioClip trim_silence(const AudioClip& clip, double threshold_db) {
  if (clip.samples.empty()) {
    throw Error(ErrorCode::invalid_argument, "trim_silence: empty clip");
  }
  const std::size_t frame = std::max(1, clip.sample_rate / 100);  // 10 ms
  const std::size_t n = clip.samples.size();
  const std::size_t n_frames = (n + frame - 1) / frame;

  std::vector<double> rms(n_frames);
  double max_rms = 0.0;
  for (std::size_t f = 0; f < n_frames; ++f) {
    const std::size_t begin = f * frame;
    const std::size_t end = std::min(begin + frame, n);
    double acc = 0.0;
    for (std::size_t i = begin; i < end; ++i) {
      acc += clip.samples[i] * clip.samples[i];
    }
    rms[f] = std::sqrt(acc / static_cast<double>(end - begin));
    max_rms = std::max(max_rms, rms[f]);
  }

  AudioClip out;
  out.sample_rate = clip.sample_rate;
  out.source_id = clip.source_id;

  if (max_rms == 0.0) {
    // Degenerate all-silence: keep the single loudest (first) frame.
    out.samples.assign(clip.samples.begin(),
                       clip.samples.begin() +
                           static_cast<std::ptrdiff_t>(std::min(frame, n)));
    return out;
  }

  const double threshold = max_rms * std::pow(10.0, -std::abs(threshold_db) / 20.0);
  std::size_t first = 0;
  while (first < n_frames && rms[first] < threshold) ++first;
  std::size_t last = n_frames - 1;
  while (last > first && rms[last] < threshold) --last;

  const std::size_t begin = first * frame;
  const std::size_t end = std::min((last + 1) * frame, n);
  out.samples.assign(clip.samples.begin() + static_cast<std::ptrdiff_t>(begin),
                     clip.samples.begin() + static_cast<std::ptrdiff_t>(end));
  return out;
}

}  // namespace dssc
