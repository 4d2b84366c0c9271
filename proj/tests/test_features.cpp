#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <numeric>

#include "ctcasr/features.hpp"
#include "ctcasr/random.hpp"
#include "ctcasr/wav.hpp"
#include "support.hpp"

using namespace ctcasr;

namespace {

std::vector<std::complex<double>> naive_dft(const std::vector<std::complex<double>>& x) {
  const std::size_t n = x.size();
  std::vector<std::complex<double>> out(n);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t j = 0; j < n; ++j)
      out[k] += x[j] * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(j * k % n) / n);
  return out;
}

Waveform tone(double freq, int rate, int n, double amp = 0.5) {
  Waveform w;
  w.sample_rate = rate;
  for (int i = 0; i < n; ++i) w.samples.push_back(amp * std::sin(2 * std::numbers::pi * freq * i / rate));
  return w;
}

Waveform noise(int rate, int n, std::uint64_t seed) {
  Rng rng(seed);
  Waveform w;
  w.sample_rate = rate;
  for (int i = 0; i < n; ++i) w.samples.push_back(rng.uniform(-0.5, 0.5));
  return w;
}

std::vector<unsigned char> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

}  // namespace

TEST(Fft, MatchesNaiveDft) {
  Rng rng(3);
  for (int n : {1, 2, 3, 4, 5, 7, 8, 12, 30, 97, 128, 384}) {
    std::vector<std::complex<double>> x(n);
    for (auto& v : x) v = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const auto expect = naive_dft(x);
    FftPlan plan(n);
    plan.forward(x);
    for (int k = 0; k < n; ++k) EXPECT_NEAR(std::abs(x[k] - expect[k]), 0.0, 1e-9 * n) << "n=" << n << " k=" << k;
  }
}

TEST(HannWindow, Periodic) {
  const auto w = hann_window(8);
  EXPECT_DOUBLE_EQ(w[0], 0.0);
  EXPECT_NEAR(w[4], 1.0, 1e-15);
  EXPECT_NEAR(w[2], 0.5, 1e-15);
  EXPECT_NEAR(w[1], w[7], 1e-15);
}

TEST(FrameCount, Formula) {
  for (int len = 0; len < 2000; len += 7) {
    const int expect = len < 256 ? 0 : 1 + (len - 256) / 160;
    EXPECT_EQ(frame_count(len, 256, 160), expect) << len;
  }
  EXPECT_EQ(frame_count(16000, 256, 160), 99);
}

TEST(Spectrogram, MatchesDirectDft) {
  FeatureParams p;
  p.frame_length = 20;
  p.frame_step = 7;
  p.fft_length = 24;
  p.sample_rate = 1000;
  const Waveform w = noise(1000, 90, 9);
  const FeatureMatrix s = spectrogram(w, p);
  ASSERT_EQ(s.num_frames, 1 + (90 - 20) / 7);
  ASSERT_EQ(s.num_bins, 13);
  for (int t = 0; t < s.num_frames; ++t) {
    std::vector<std::complex<double>> frame(24);
    for (int i = 0; i < 20; ++i)
      frame[i] = w.samples[t * 7 + i] * (0.5 - 0.5 * std::cos(2 * std::numbers::pi * i / 20.0));
    const auto X = naive_dft(frame);
    for (int f = 0; f < 13; ++f) EXPECT_NEAR(s.at(t, f), std::sqrt(std::abs(X[f])), 1e-10);
  }
}

TEST(Spectrogram, ToneLandsInExpectedBin) {
  const FeatureParams p;  // 16 kHz, fft 384: bin spacing 41.67 Hz
  const FeatureMatrix s = spectrogram(tone(1000.0, 16000, 16000), p);
  ASSERT_EQ(s.num_bins, 193);
  for (int t = 0; t < s.num_frames; ++t) {
    int best = 0;
    for (int f = 1; f < s.num_bins; ++f)
      if (s.at(t, f) > s.at(t, best)) best = f;
    EXPECT_EQ(best, 24);
  }
}

TEST(Features, ShapeFollowsParams) {
  const FeatureParams p;
  const FeatureMatrix x = extract_features(noise(16000, 4000, 1), p);
  EXPECT_EQ(x.num_frames, 1 + (4000 - 256) / 160);
  EXPECT_EQ(x.num_bins, 193);
  EXPECT_EQ(x.source_length, x.num_frames);
}

TEST(Features, StandardizedPerUtterance) {
  const FeatureMatrix x = extract_features(noise(16000, 8000, 2), FeatureParams{});
  const double n = static_cast<double>(x.frames.size());
  const double mean = std::accumulate(x.frames.begin(), x.frames.end(), 0.0) / n;
  double ss = 0;
  for (double v : x.frames) ss += (v - mean) * (v - mean);
  EXPECT_NEAR(mean, 0.0, 1e-12);
  EXPECT_NEAR(std::sqrt(ss / n), 1.0, 1e-9);
}

TEST(Features, InvariantToAmplitudeScaling) {
  const FeatureParams p;
  Waveform a = noise(16000, 6000, 4);
  Waveform b = a;
  for (double& v : b.samples) v *= 0.125;
  const auto fa = extract_features(a, p);
  const auto fb = extract_features(b, p);
  for (std::size_t i = 0; i < fa.frames.size(); ++i) EXPECT_NEAR(fa.frames[i], fb.frames[i], 1e-8);
}

TEST(Features, Errors) {
  const FeatureParams p;
  try {
    extract_features(noise(16000, 100, 1), p);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::TooShort);
  }
  try {
    extract_features(noise(8000, 4000, 1), p);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::UnsupportedFormat);
  }
  FeatureParams bad;
  bad.frame_step = 0;
  EXPECT_THROW(bad.validate(), Error);
}

TEST(FeatureCache, RoundTripIsExact) {
  testing_support::TempDir dir("fc");
  const FeatureMatrix x = extract_features(noise(16000, 3000, 8), FeatureParams{});
  write_feature_cache(x, 16000, dir / "x.ctcf");
  const CachedFeatures c = read_feature_cache(dir / "x.ctcf");
  EXPECT_EQ(c.sample_rate, 16000);
  EXPECT_EQ(c.features.num_frames, x.num_frames);
  EXPECT_EQ(c.features.num_bins, x.num_bins);
  EXPECT_EQ(c.features.frames, x.frames);
}

TEST(FeatureCache, RejectsGarbage) {
  testing_support::TempDir dir("fc");
  testing_support::write_text(dir / "bad.ctcf", "NOPE0000");
  try {
    read_feature_cache(dir / "bad.ctcf");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::UnsupportedFormat);
  }
  testing_support::write_text(dir / "short.ctcf", "CTCF");
  try {
    read_feature_cache(dir / "short.ctcf");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::CorruptFile);
  }
}

TEST(Wav, EncodeParseRoundTrip) {
  const Waveform w = noise(8000, 501, 6);
  const Waveform r = parse_wav(bytes_of(encode_wav(w)));
  EXPECT_EQ(r.sample_rate, 8000);
  ASSERT_EQ(r.samples.size(), w.samples.size());
  for (std::size_t i = 0; i < w.samples.size(); ++i) EXPECT_NEAR(r.samples[i], w.samples[i], 0.5 / 32768 + 1e-12);
}

TEST(Wav, Pcm16Quantization) {
  EXPECT_EQ(to_pcm16(0.0), 0);
  EXPECT_EQ(to_pcm16(0.5), 16384);
  EXPECT_EQ(to_pcm16(-1.0), -32768);
  EXPECT_EQ(to_pcm16(1.0), 32767);
  EXPECT_EQ(to_pcm16(7.0), 32767);
}

TEST(Wav, SkipsOddSizedChunkWithPadByte) {
  const Waveform w = noise(8000, 10, 1);
  std::string bytes = encode_wav(w);
  // Insert "LIST" with 3 body bytes plus one pad byte before the fmt chunk.
  const std::string extra = std::string("LIST") + std::string("\x03\x00\x00\x00", 4) + "abc" + std::string(1, '\0');
  bytes.insert(12, extra);
  const auto riff_size = static_cast<std::uint32_t>(bytes.size() - 8);
  for (int i = 0; i < 4; ++i) bytes[4 + i] = static_cast<char>((riff_size >> (8 * i)) & 0xff);
  const Waveform r = parse_wav(bytes_of(bytes));
  EXPECT_EQ(r.samples.size(), 10u);
}

TEST(Wav, RejectsStereoAndTruncation) {
  std::string bytes = encode_wav(noise(8000, 10, 1));
  std::string stereo = bytes;
  stereo[22] = 2;
  try {
    parse_wav(bytes_of(stereo));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::UnsupportedFormat);
  }
  try {
    parse_wav(bytes_of(bytes.substr(0, bytes.size() - 4)));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::CorruptFile);
  }
  try {
    parse_wav(bytes_of("hello world, not a wav"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::UnsupportedFormat);
  }
}

TEST(Wav, FileRoundTrip) {
  testing_support::TempDir dir("wav");
  const Waveform w = tone(440, 16000, 1600);
  write_wav(w, dir / "a.wav");
  const Waveform r = read_wav(dir / "a.wav");
  EXPECT_EQ(r.samples.size(), 1600u);
  try {
    read_wav(dir / "missing.wav");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::IoFailure);
  }
}
