#pragma once

// RIFF/WAVE reading and writing, restricted to mono 16-bit PCM.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "ctcasr/error.hpp"

namespace ctcasr {

struct Waveform {
  std::vector<double> samples;  // in [-1, 1)
  int sample_rate = 16000;
};

namespace detail {

inline std::uint32_t read_u32le(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
         (std::uint32_t(p[3]) << 24);
}

inline std::uint16_t read_u16le(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline void put_u32le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u16le(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

inline std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(Errc::IoFailure, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

/// Quantizes x in [-1, 1] to a signed 16-bit sample (x * 32768, rounded, clamped).
inline std::int16_t to_pcm16(double x) {
  const double scaled = std::nearbyint(x * 32768.0);
  return static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0));
}

inline Waveform parse_wav(const std::vector<unsigned char>& bytes, const std::string& origin = "<memory>") {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    raise(Errc::UnsupportedFormat, origin + " is not a RIFF/WAVE file");

  bool have_fmt = false;
  Waveform w;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* hdr = bytes.data() + pos;
    const std::uint32_t size = detail::read_u32le(hdr + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size())
      raise(Errc::CorruptFile, origin + ": chunk '" + std::string(reinterpret_cast<const char*>(hdr), 4) +
                                   "' runs past end of file");
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (size < 16) raise(Errc::CorruptFile, origin + ": fmt chunk too short");
      const unsigned char* f = bytes.data() + body;
      const std::uint16_t format = detail::read_u16le(f);
      const std::uint16_t channels = detail::read_u16le(f + 2);
      const std::uint32_t rate = detail::read_u32le(f + 4);
      const std::uint16_t bits = detail::read_u16le(f + 14);
      if (format != 1 || channels != 1 || bits != 16)
        raise(Errc::UnsupportedFormat, origin + ": need PCM 16-bit mono (format " + std::to_string(format) +
                                           ", " + std::to_string(channels) + " channels, " +
                                           std::to_string(bits) + " bits)");
      if (rate == 0) raise(Errc::CorruptFile, origin + ": zero sample rate");
      w.sample_rate = static_cast<int>(rate);
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      if (!have_fmt) raise(Errc::CorruptFile, origin + ": data chunk before fmt chunk");
      if (size % 2 != 0) raise(Errc::CorruptFile, origin + ": odd byte count in 16-bit data");
      w.samples.resize(size / 2);
      const unsigned char* d = bytes.data() + body;
      for (std::size_t i = 0; i < w.samples.size(); ++i) {
        const auto v = static_cast<std::int16_t>(detail::read_u16le(d + 2 * i));
        w.samples[i] = static_cast<double>(v) / 32768.0;
      }
      if (w.samples.empty()) raise(Errc::CorruptFile, origin + ": no samples");
      return w;
    }
    pos = body + size + (size & 1u);
  }
  raise(Errc::CorruptFile, origin + (have_fmt ? ": missing data chunk" : ": missing fmt chunk"));
}

inline Waveform read_wav(const std::filesystem::path& path) {
  return parse_wav(detail::slurp(path), path.string());
}

inline std::string encode_wav(const Waveform& w) {
  const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  detail::put_u32le(out, 36 + data_bytes);
  out += "WAVEfmt ";
  detail::put_u32le(out, 16);
  detail::put_u16le(out, 1);  // PCM
  detail::put_u16le(out, 1);  // mono
  detail::put_u32le(out, static_cast<std::uint32_t>(w.sample_rate));
  detail::put_u32le(out, static_cast<std::uint32_t>(w.sample_rate) * 2);
  detail::put_u16le(out, 2);
  detail::put_u16le(out, 16);
  out += "data";
  detail::put_u32le(out, data_bytes);
  for (double x : w.samples) detail::put_u16le(out, static_cast<std::uint16_t>(to_pcm16(x)));
  return out;
}

inline void write_wav(const Waveform& w, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(Errc::IoFailure, "cannot write " + path.string());
  const std::string bytes = encode_wav(w);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) raise(Errc::IoFailure, "write failed for " + path.string());
}

}  // namespace ctcasr
