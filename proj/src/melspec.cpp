#include "melspec.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

#include "error.hpp"
#include "ops.hpp"

static_assert(std::endian::native == std::endian::little,
              "cache and checkpoint formats assume a little-endian host");

namespace dssc {

namespace {

constexpr char kMelMagic[4] = {'D', 'S', 'S', 'C'};
constexpr std::uint16_t kMelVersion = 1;

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

}  // namespace

void fft_inplace(std::vector<double>& re, std::vector<double>& im) {
  const std::size_t n = re.size();
  if (n == 0 || (n & (n - 1)) != 0 || im.size() != n) {
    throw Error(ErrorCode::invalid_argument,
                "fft: length must be a power of two with matching re/im");
  }
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      std::swap(re[i], re[j]);
      std::swap(im[i], im[j]);
    }
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * M_PI / static_cast<double>(len);
    const double wr = std::cos(ang), wi = std::sin(ang);
    for (std::size_t i = 0; i < n; i += len) {
      double cr = 1.0, ci = 0.0;
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::size_t a = i + k, b = i + k + len / 2;
        const double tr = re[b] * cr - im[b] * ci;
        const double ti = re[b] * ci + im[b] * cr;
        re[b] = re[a] - tr;
        im[b] = im[a] - ti;
        re[a] += tr;
        im[a] += ti;
        const double ncr = cr * wr - ci * wi;
        ci = cr * wi + ci * wr;
        cr = ncr;
      }
    }
  }
}

namespace {

// Height of the triangle (left, center, right) at frequency hz.
double triangle(double hz, double left, double center, double right) {
  if (hz <= left || hz >= right) return 0.0;
  if (hz <= center) return (hz - left) / (center - left);
  return (right - hz) / (right - center);
}

// Mean of the triangle over [a, b], integrated piecewise between knots.
double triangle_mean(double a, double b, double left, double center,
                     double right) {
  if (b <= a) return 0.0;
  double total = 0.0;
  double knots[4] = {a, std::clamp(left, a, b), std::clamp(center, a, b),
                     std::clamp(right, a, b)};
  std::sort(knots, knots + 4);
  double prev = a;
  for (double k : knots) {
    if (k > prev) {
      total += 0.5 *
               (triangle(prev, left, center, right) +
                triangle(k, left, center, right)) *
               (k - prev);
      prev = k;
    }
  }
  if (b > prev) {
    total += 0.5 *
             (triangle(prev, left, center, right) +
              triangle(b, left, center, right)) *
             (b - prev);
  }
  return total / (b - a);
}

}  // namespace

Tensor<double> mel_filterbank(int n_mels, int n_fft, double sample_rate,
                              double fmin, double fmax) {
  if (n_mels < 1 || n_fft < 2 || fmin < 0 || fmax <= fmin ||
      fmax > sample_rate / 2.0 + 1e-9) {
    throw Error(ErrorCode::invalid_argument, "mel_filterbank: bad parameters");
  }
  const int n_bins = n_fft / 2 + 1;
  const double df = sample_rate / n_fft;
  const double mel_lo = hz_to_mel(fmin), mel_hi = hz_to_mel(fmax);

  std::vector<double> edges(static_cast<std::size_t>(n_mels) + 2);
  for (int i = 0; i < n_mels + 2; ++i) {
    edges[static_cast<std::size_t>(i)] =
        mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (n_mels + 1));
  }

  Tensor<double> fb({n_mels, n_bins});
  for (int m = 0; m < n_mels; ++m) {
    const double left = edges[static_cast<std::size_t>(m)];
    const double center = edges[static_cast<std::size_t>(m) + 1];
    const double right = edges[static_cast<std::size_t>(m) + 2];
    for (int b = 0; b < n_bins; ++b) {
      const double lo = std::max(fmin, (b - 0.5) * df);
      const double hi = std::min(fmax, (b + 0.5) * df);
      fb.data()[static_cast<std::size_t>(m) * n_bins + b] =
          triangle_mean(lo, hi, left, center, right);
    }
  }
  return fb;
}

Tensor<double> mel_spectrogram(const AudioClip& clip, const DspConfig& cfg) {
  if (clip.sample_rate != cfg.sample_rate) {
    throw Error(ErrorCode::invalid_argument,
                "mel_spectrogram: clip is " + std::to_string(clip.sample_rate) +
                    " Hz, pipeline expects " + std::to_string(cfg.sample_rate));
  }
  const int win = cfg.window, hop = cfg.hop;
  const auto len = static_cast<std::int64_t>(clip.samples.size());
  if (len < win) {
    throw Error(ErrorCode::invalid_argument,
                "mel_spectrogram: clip of " + std::to_string(len) +
                    " samples is shorter than one " + std::to_string(win) +
                    "-sample window; zero-pad upstream or reject it");
  }
  const int n_frames = static_cast<int>((len - win) / hop) + 1;
  const int n_bins = win / 2 + 1;

  std::vector<double> hann(static_cast<std::size_t>(win));
  for (int i = 0; i < win; ++i) {
    hann[static_cast<std::size_t>(i)] =
        0.5 - 0.5 * std::cos(2.0 * M_PI * i / win);
  }

  const auto fb = mel_filterbank(cfg.n_mels, win, cfg.sample_rate, cfg.fmin,
                                 cfg.fmax);

  Tensor<double> mel({cfg.n_mels, n_frames});
  std::vector<double> re(static_cast<std::size_t>(win));
  std::vector<double> im(static_cast<std::size_t>(win));
  std::vector<double> power(static_cast<std::size_t>(n_bins));

  for (int t = 0; t < n_frames; ++t) {
    const std::size_t off = static_cast<std::size_t>(t) * hop;
    for (int i = 0; i < win; ++i) {
      re[static_cast<std::size_t>(i)] =
          clip.samples[off + static_cast<std::size_t>(i)] *
          hann[static_cast<std::size_t>(i)];
    }
    std::fill(im.begin(), im.end(), 0.0);
    fft_inplace(re, im);
    for (int b = 0; b < n_bins; ++b) {
      power[static_cast<std::size_t>(b)] =
          re[static_cast<std::size_t>(b)] * re[static_cast<std::size_t>(b)] +
          im[static_cast<std::size_t>(b)] * im[static_cast<std::size_t>(b)];
    }
    for (int m = 0; m < cfg.n_mels; ++m) {
      double acc = 0.0;
      const double* row = fb.data() + static_cast<std::size_t>(m) * n_bins;
      for (int b = 0; b < n_bins; ++b) {
        acc += row[b] * power[static_cast<std::size_t>(b)];
      }
      mel.data()[static_cast<std::size_t>(m) * n_frames + t] =
          std::log(acc + cfg.log_eps);
    }
  }
  return mel;
}

Tensor<float> to_mel_plane(const Tensor<double>& mel, int image_size) {
  return ops::bilinear_resize(mel, image_size, image_size).cast<float>();
}

Tensor<float> replicate_planes(const Tensor<float>& plane) {
  if (plane.ndim() != 2) {
    throw Error(ErrorCode::shape_mismatch,
                "replicate_planes: expected [H,W], got " + plane.shape_str());
  }
  const int h = plane.dim(0), w = plane.dim(1);
  Tensor<float> out({3, h, w});
  const std::size_t n = static_cast<std::size_t>(h) * w;
  for (int p = 0; p < 3; ++p) {
    std::memcpy(out.data() + static_cast<std::size_t>(p) * n, plane.data(),
                n * sizeof(float));
  }
  return out;
}

void write_mel_cache(const std::string& path, const Tensor<float>& plane) {
  if (plane.ndim() != 2 || plane.dim(0) > 0xffff || plane.dim(1) > 0xffff) {
    throw Error(ErrorCode::invalid_argument,
                "mel cache: plane must be 2-D with extents < 65536, got " +
                    plane.shape_str());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw Error(ErrorCode::io, "mel cache: cannot write " + path);
  }
  unsigned char header[16] = {};
  std::memcpy(header, kMelMagic, 4);
  header[4] = kMelVersion & 0xff;
  header[5] = (kMelVersion >> 8) & 0xff;
  const auto h = static_cast<std::uint16_t>(plane.dim(0));
  const auto w = static_cast<std::uint16_t>(plane.dim(1));
  header[6] = h & 0xff;
  header[7] = (h >> 8) & 0xff;
  header[8] = w & 0xff;
  header[9] = (w >> 8) & 0xff;
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  out.write(reinterpret_cast<const char*>(plane.data()),
            static_cast<std::streamsize>(plane.size() * sizeof(float)));
  if (!out) {
    throw Error(ErrorCode::io, "mel cache: short write to " + path);
  }
}

Tensor<float> read_mel_cache(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::io, "mel cache: cannot open " + path);
  }
  unsigned char header[16];
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!in || std::memcmp(header, kMelMagic, 4) != 0) {
    throw Error(ErrorCode::format, "mel cache: bad magic in " + path);
  }
  const std::uint16_t version = header[4] | (header[5] << 8);
  if (version != kMelVersion) {
    throw Error(ErrorCode::unsupported,
                "mel cache: version " + std::to_string(version) +
                    " not supported (expected " +
                    std::to_string(kMelVersion) + ") in " + path);
  }
  const int h = header[6] | (header[7] << 8);
  const int w = header[8] | (header[9] << 8);
  if (h == 0 || w == 0) {
    throw Error(ErrorCode::format, "mel cache: zero extent in " + path);
  }
  Tensor<float> plane({h, w});
  in.read(reinterpret_cast<char*>(plane.data()),
          static_cast<std::streamsize>(plane.size() * sizeof(float)));
  if (!in || in.gcount() !=
                 static_cast<std::streamsize>(plane.size() * sizeof(float))) {
    throw Error(ErrorCode::format, "mel cache: truncated payload in " + path);
  }
  return plane;
}

Tensor<float> wav_to_plane(const std::string& path, const DspConfig& cfg) {
  const AudioClip clip = trim_silence(load_wav(path), cfg.trim_threshold_db);
  return to_mel_plane(mel_spectrogram(clip, cfg), cfg.image_size);
}

}  // namespace dssc
