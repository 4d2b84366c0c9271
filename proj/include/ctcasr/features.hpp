#pragma once

// Spectrogram features: Hann-windowed frames, zero-padded real DFT,
// |X|^power, then per-utterance standardization.

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "ctcasr/error.hpp"
#include "ctcasr/wav.hpp"

namespace ctcasr {

struct FeatureParams {
  int frame_length = 256;
  int frame_step = 160;
  int fft_length = 384;
  double magnitude_power = 0.5;
  double epsilon = 1e-10;
  int sample_rate = 16000;

  int num_bins() const { return fft_length / 2 + 1; }

  void validate() const {
    if (!(frame_step > 0 && frame_step <= frame_length && frame_length <= fft_length))
      raise(Errc::InvalidArgument, "need 0 < frame_step <= frame_length <= fft_length");
    if (fft_length % 2 != 0) raise(Errc::InvalidArgument, "fft_length must be even");
    if (!(epsilon > 0)) raise(Errc::InvalidArgument, "epsilon must be positive");
    if (sample_rate <= 0) raise(Errc::InvalidArgument, "sample_rate must be positive");
  }
};

/// Row-major T x F matrix.
struct FeatureMatrix {
  std::vector<double> frames;
  int num_frames = 0;
  int num_bins = 0;
  int source_length = 0;

  double& at(int t, int f) { return frames[static_cast<std::size_t>(t) * num_bins + f]; }
  double at(int t, int f) const { return frames[static_cast<std::size_t>(t) * num_bins + f]; }
};

inline int frame_count(std::size_t num_samples, int frame_length, int frame_step) {
  if (num_samples < static_cast<std::size_t>(frame_length)) return 0;
  return 1 + static_cast<int>((num_samples - frame_length) / frame_step);
}

/// Mixed-radix complex FFT (decimation in time). Radices are the prime
/// factors of the length; a large prime factor degrades to its own O(p^2)
/// butterfly, so any length is accepted.
class FftPlan {
 public:
  explicit FftPlan(int n) : n_(n), twiddle_(n) {
    if (n < 1) raise(Errc::InvalidArgument, "FFT length must be positive");
    for (int k = 0; k < n; ++k) {
      const double angle = -2.0 * std::numbers::pi * k / n;
      twiddle_[k] = {std::cos(angle), std::sin(angle)};
    }
    int m = n;
    for (int p = 2; p * p <= m; ++p)
      while (m % p == 0) { factors_.push_back(p); m /= p; }
    if (m > 1) factors_.push_back(m);
    scratch_.resize(n);
  }

  int size() const { return n_; }

  /// In-place forward transform, X[k] = sum_j x[j] exp(-2 pi i jk/n).
  void forward(std::vector<std::complex<double>>& data) {
    if (static_cast<int>(data.size()) != n_) raise(Errc::ShapeMismatch, "FFT input length mismatch");
    transform(data.data(), scratch_.data(), n_, 0);
  }

 private:
  // Transforms data[0, n) in place; tmp[0, n) is clobbered.
  void transform(std::complex<double>* data, std::complex<double>* tmp, int n, std::size_t level) {
    if (n == 1) return;
    const int p = factors_[level];
    const int m = n / p;
    // Gather the p decimated subsequences into tmp, transform each in place.
    for (int r = 0; r < p; ++r)
      for (int j = 0; j < m; ++j) tmp[r * m + j] = data[j * p + r];
    for (int r = 0; r < p; ++r) transform(tmp + r * m, data, m, level + 1);
    // Combine: X[k + q m] = sum_r W_n^{r(k + q m)} Y_r[k].
    const int tw_step = n_ / n;
    for (int k = 0; k < m; ++k) {
      for (int q = 0; q < p; ++q) {
        const int kk = k + q * m;
        std::complex<double> acc = tmp[k];
        for (int r = 1; r < p; ++r) {
          const int idx = static_cast<int>((static_cast<long long>(r) * kk % n) * tw_step);
          acc += twiddle_[idx] * tmp[r * m + k];
        }
        data[kk] = acc;
      }
    }
  }

  int n_;
  std::vector<std::complex<double>> twiddle_;
  std::vector<int> factors_;
  std::vector<std::complex<double>> scratch_;
};

/// Periodic Hann window of the given length.
inline std::vector<double> hann_window(int length) {
  std::vector<double> w(length);
  for (int i = 0; i < length; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / length);
  return w;
}

inline FeatureMatrix spectrogram(const Waveform& w, const FeatureParams& p) {
  p.validate();
  if (w.samples.size() < static_cast<std::size_t>(p.frame_length))
    raise(Errc::TooShort, "audio has " + std::to_string(w.samples.size()) + " samples, fewer than one frame of " +
                              std::to_string(p.frame_length));
  const int frames = frame_count(w.samples.size(), p.frame_length, p.frame_step);
  const int bins = p.num_bins();
  FeatureMatrix out;
  out.num_frames = frames;
  out.num_bins = bins;
  out.source_length = frames;
  out.frames.resize(static_cast<std::size_t>(frames) * bins);

  const auto window = hann_window(p.frame_length);
  FftPlan plan(p.fft_length);
  std::vector<std::complex<double>> buf(p.fft_length);
  for (int t = 0; t < frames; ++t) {
    const double* src = w.samples.data() + static_cast<std::size_t>(t) * p.frame_step;
    for (int i = 0; i < p.fft_length; ++i) buf[i] = i < p.frame_length ? src[i] * window[i] : 0.0;
    plan.forward(buf);
    for (int f = 0; f < bins; ++f) out.at(t, f) = std::pow(std::abs(buf[f]), p.magnitude_power);
  }
  return out;
}

/// Standardizes over all T*F cells of one utterance.
inline FeatureMatrix normalize(FeatureMatrix x, double epsilon) {
  const auto n = static_cast<double>(x.frames.size());
  if (x.frames.empty()) return x;
  const double mean = std::accumulate(x.frames.begin(), x.frames.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : x.frames) ss += (v - mean) * (v - mean);
  const double denom = std::sqrt(ss / n) + epsilon;
  for (double& v : x.frames) v = (v - mean) / denom;
  return x;
}

inline FeatureMatrix extract_features(const Waveform& w, const FeatureParams& p) {
  if (w.sample_rate != p.sample_rate)
    raise(Errc::UnsupportedFormat, "audio sample rate " + std::to_string(w.sample_rate) + " Hz, features expect " +
                                       std::to_string(p.sample_rate) + " Hz");
  return normalize(spectrogram(w, p), p.epsilon);
}

// Feature cache file: "CTCF", u32 version, u32 T, u32 F, u32 sample_rate,
// then T*F little-endian float64 values, row-major.
namespace detail {

template <typename T>
void put_le(std::ofstream& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::ifstream& in, const std::string& origin) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) raise(Errc::CorruptFile, origin + ": truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace detail

inline constexpr std::uint32_t kFeatureCacheVersion = 1;

inline void write_feature_cache(const FeatureMatrix& x, int sample_rate, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(Errc::IoFailure, "cannot write " + path.string());
  out.write("CTCF", 4);
  detail::put_le<std::uint32_t>(out, kFeatureCacheVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(x.num_frames));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(x.num_bins));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(sample_rate));
  for (double v : x.frames) detail::put_le<double>(out, v);
  if (!out) raise(Errc::IoFailure, "write failed for " + path.string());
}

struct CachedFeatures {
  FeatureMatrix features;
  int sample_rate = 0;
};

inline CachedFeatures read_feature_cache(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(Errc::IoFailure, "cannot open " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "CTCF", 4) != 0)
    raise(Errc::UnsupportedFormat, path.string() + " is not a feature cache file");
  const auto origin = path.string();
  if (detail::get_le<std::uint32_t>(in, origin) != kFeatureCacheVersion)
    raise(Errc::UnsupportedFormat, origin + ": unknown feature cache version");
  CachedFeatures c;
  c.features.num_frames = static_cast<int>(detail::get_le<std::uint32_t>(in, origin));
  c.features.num_bins = static_cast<int>(detail::get_le<std::uint32_t>(in, origin));
  c.features.source_length = c.features.num_frames;
  c.sample_rate = static_cast<int>(detail::get_le<std::uint32_t>(in, origin));
  c.features.frames.resize(static_cast<std::size_t>(c.features.num_frames) * c.features.num_bins);
  for (double& v : c.features.frames) v = detail::get_le<double>(in, origin);
  return c;
}

}  // namespace ctcasr
