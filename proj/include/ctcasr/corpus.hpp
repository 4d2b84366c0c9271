#pragma once

// Utterance manifests (CSV), deterministic splits, grouping, and the
// synthetic tone corpus used for desk-scale training.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "ctcasr/error.hpp"
#include "ctcasr/random.hpp"
#include "ctcasr/textmap.hpp"
#include "ctcasr/wav.hpp"

namespace ctcasr {

enum class Gender { female, male, unknown };

inline std::string_view gender_name(Gender g) {
  switch (g) {
    case Gender::female: return "female";
    case Gender::male: return "male";
    case Gender::unknown: return "unknown";
  }
  return "unknown";
}

inline Gender parse_gender(std::string_view s) {
  if (s == "female") return Gender::female;
  if (s == "male") return Gender::male;
  return Gender::unknown;
}

struct Utterance {
  std::filesystem::path audio_path;
  std::string transcript;
  std::string speaker_id;
  Gender gender = Gender::unknown;
  std::string corpus_tag;

  bool operator==(const Utterance&) const = default;
};

struct Manifest {
  std::string name;
  std::vector<Utterance> utterances;

  std::size_t size() const { return utterances.size(); }
  bool empty() const { return utterances.empty(); }
};

inline constexpr std::string_view kManifestHeader = "audio_path,transcript,speaker_id,gender,corpus_tag";

namespace csv {

/// Splits one CSV record. Fields may be double-quoted; "" inside quotes is a
/// literal quote.
inline std::vector<std::string> split_record(std::string_view line, std::size_t line_no) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  bool was_quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') { cur.push_back('"'); ++i; }
        else quoted = false;
      } else {
        cur.push_back(c);
      }
    } else if (c == '"' && cur.empty() && !was_quoted) {
      quoted = was_quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
      was_quoted = false;
    } else {
      cur.push_back(c);
    }
  }
  if (quoted) raise(Errc::CorruptFile, "line " + std::to_string(line_no) + ": unterminated quoted field");
  fields.push_back(std::move(cur));
  return fields;
}

inline std::string quote(std::string_view field) {
  if (field.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace csv

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n\f\v");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n\f\v");
  return s.substr(first, last - first + 1);
}

/// Parses manifest CSV text. Relative audio paths are resolved against
/// `base_dir`; duplicates are detected on the path as written.
inline Manifest parse_manifest(std::istream& in, const std::filesystem::path& base_dir, std::string name) {
  Manifest m;
  m.name = std::move(name);
  std::string line;
  if (!std::getline(in, line)) raise(Errc::MissingHeader, m.name + ": file is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kManifestHeader)
    raise(Errc::MissingHeader, m.name + ": first line must be '" + std::string(kManifestHeader) + "'");

  std::set<std::string> seen;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = csv::split_record(line, line_no);
    if (fields.size() != 5)
      raise(Errc::CorruptFile, m.name + " line " + std::to_string(line_no) + ": expected 5 fields, got " +
                                   std::to_string(fields.size()));
    if (!seen.insert(fields[0]).second)
      raise(Errc::DuplicatePath, m.name + " line " + std::to_string(line_no) + ": audio_path '" + fields[0] +
                                     "' already listed");
    if (trim(fields[1]).empty())
      raise(Errc::EmptyTranscript, m.name + " line " + std::to_string(line_no) + ": blank transcript");
    Utterance u;
    std::filesystem::path p(fields[0]);
    u.audio_path = p.is_relative() && !base_dir.empty() ? (base_dir / p).lexically_normal() : p;
    u.transcript = std::move(fields[1]);
    u.speaker_id = std::move(fields[2]);
    u.gender = parse_gender(fields[3]);
    u.corpus_tag = std::move(fields[4]);
    m.utterances.push_back(std::move(u));
  }
  return m;
}

inline Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(Errc::IoFailure, "cannot open manifest " + path.string());
  return parse_manifest(in, path.parent_path(), path.stem().string());
}

/// Writes the manifest; audio paths inside the manifest's directory are
/// written relative to it.
inline void save_manifest(const Manifest& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(Errc::IoFailure, "cannot write manifest " + path.string());
  const auto base = path.parent_path();
  out << kManifestHeader << '\n';
  for (const auto& u : m.utterances) {
    std::filesystem::path p = u.audio_path;
    if (p.is_absolute() || !base.empty()) {
      auto rel = p.lexically_relative(base.empty() ? std::filesystem::path(".") : base);
      if (!rel.empty() && *rel.begin() != "..") p = rel;
    }
    out << csv::quote(p.generic_string()) << ',' << csv::quote(u.transcript) << ',' << csv::quote(u.speaker_id)
        << ',' << gender_name(u.gender) << ',' << csv::quote(u.corpus_tag) << '\n';
  }
  if (!out) raise(Errc::IoFailure, "write failed for " + path.string());
}

struct SplitFractions {
  double train = 0.746;
  double val = 0.124;
  double test = 0.130;
};

struct ManifestSplit {
  Manifest train, val, test;
};

/// Deterministic shuffle, then contiguous partition. Train and validation get
/// round(fraction * N) items; test absorbs the remainder.
inline ManifestSplit split_manifest(const Manifest& m, SplitFractions f, std::uint64_t seed) {
  if (f.train < 0 || f.val < 0 || f.test < 0 || f.train > 1 || f.val > 1 || f.test > 1)
    raise(Errc::BadFractions, "split fractions must lie in [0, 1]");
  if (std::abs(f.train + f.val + f.test - 1.0) > 1e-9) raise(Errc::BadFractions, "split fractions must sum to 1");
  if (m.empty()) raise(Errc::EmptyManifest, "cannot split an empty manifest");

  const auto n = m.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, {0x5b1u}));
  rng.shuffle(order);

  auto n_train = static_cast<std::size_t>(std::llround(f.train * static_cast<double>(n)));
  auto n_val = static_cast<std::size_t>(std::llround(f.val * static_cast<double>(n)));
  n_train = std::min(n_train, n);
  n_val = std::min(n_val, n - n_train);

  ManifestSplit out;
  out.train.name = m.name + "_train";
  out.val.name = m.name + "_val";
  out.test.name = m.name + "_test";
  for (std::size_t i = 0; i < n; ++i) {
    Manifest& dst = i < n_train ? out.train : (i < n_train + n_val ? out.val : out.test);
    dst.utterances.push_back(m.utterances[order[i]]);
  }
  return out;
}

enum class GroupKey { gender, corpus_tag, speaker_id };

inline std::string group_value(const Utterance& u, GroupKey key) {
  switch (key) {
    case GroupKey::gender: return std::string(gender_name(u.gender));
    case GroupKey::corpus_tag: return u.corpus_tag;
    case GroupKey::speaker_id: return u.speaker_id;
  }
  return {};
}

inline GroupKey parse_group_key(std::string_view s) {
  if (s == "gender") return GroupKey::gender;
  if (s == "corpus_tag") return GroupKey::corpus_tag;
  if (s == "speaker_id") return GroupKey::speaker_id;
  raise(Errc::InvalidArgument, "unknown group key '" + std::string(s) + "'");
}

inline std::map<std::string, Manifest> group_by(const Manifest& m, GroupKey key) {
  std::map<std::string, Manifest> groups;
  for (const auto& u : m.utterances) {
    const auto k = group_value(u, key);
    auto& g = groups[k];
    if (g.name.empty()) g.name = m.name + "_" + k;
    g.utterances.push_back(u);
  }
  return groups;
}

// ---------------------------------------------------------------------------
// Synthetic tone corpus

struct SynthSpec {
  std::string alphabet = "abc";  // UTF-8
  int num_utterances = 50;
  int min_chars = 2;
  int max_chars = 6;
  int sample_rate = 8000;
  double char_duration = 0.08;
  double base_freq = 300.0;
  double freq_step = 350.0;
  double noise_amplitude = 0.0;
  std::uint64_t seed = 1;
  double tone_amplitude = 0.5;
  /// Raised-cosine fade at each end of a tone, as a fraction of char_duration.
  double ramp_fraction = 0.15;
  std::string corpus_tag = "synth";
  /// Speakers cycle through this many ids; genders alternate female/male.
  int num_speakers = 4;

  void validate() const {
    const auto chars = utf8::decode(alphabet);
    if (chars.empty()) raise(Errc::InvalidArgument, "alphabet is empty");
    if (num_utterances < 1) raise(Errc::InvalidArgument, "num_utterances must be positive");
    if (min_chars < 1 || min_chars > max_chars) raise(Errc::InvalidArgument, "need 1 <= min_chars <= max_chars");
    if (sample_rate <= 0 || char_duration <= 0) raise(Errc::InvalidArgument, "sample_rate and char_duration must be positive");
    if (noise_amplitude < 0 || noise_amplitude >= 1) raise(Errc::InvalidArgument, "noise_amplitude must be in [0, 1)");
    if (num_speakers < 1) raise(Errc::InvalidArgument, "num_speakers must be positive");
    if (!(base_freq + freq_step * static_cast<double>(chars.size()) < sample_rate / 2.0))
      raise(Errc::NyquistViolation, "highest tone " + std::to_string(base_freq + freq_step * chars.size()) +
                                        " Hz is not below Nyquist " + std::to_string(sample_rate / 2.0) + " Hz");
  }

  int samples_per_char() const { return static_cast<int>(std::lround(char_duration * sample_rate)); }
};

/// Renders a transcript: alphabet[i] becomes a tone at base_freq + i*freq_step,
/// a space (or any character outside the alphabet) becomes silence.
inline Waveform render_tones(std::u32string_view text, const SynthSpec& spec, Rng& noise_rng) {
  const auto chars = utf8::decode(spec.alphabet);
  const int per_char = spec.samples_per_char();
  const int ramp = static_cast<int>(std::lround(spec.ramp_fraction * per_char));
  Waveform w;
  w.sample_rate = spec.sample_rate;
  w.samples.assign(text.size() * static_cast<std::size_t>(per_char), 0.0);
  for (std::size_t c = 0; c < text.size(); ++c) {
    const auto pos = chars.find(text[c]);
    if (text[c] == U' ' || pos == std::u32string::npos) continue;
    const double freq = spec.base_freq + static_cast<double>(pos) * spec.freq_step;
    for (int i = 0; i < per_char; ++i) {
      double gain = 1.0;
      if (ramp > 0 && i < ramp) gain = 0.5 - 0.5 * std::cos(std::numbers::pi * i / ramp);
      else if (ramp > 0 && i >= per_char - ramp) gain = 0.5 - 0.5 * std::cos(std::numbers::pi * (per_char - 1 - i) / ramp);
      w.samples[c * per_char + i] =
          spec.tone_amplitude * gain * std::sin(2.0 * std::numbers::pi * freq * i / spec.sample_rate);
    }
  }
  if (spec.noise_amplitude > 0)
    for (double& s : w.samples) s += spec.noise_amplitude * noise_rng.uniform(-1.0, 1.0);
  return w;
}

/// Writes utt_NNNNN.wav files plus manifest.csv into out_dir.
inline Manifest generate_synthetic_corpus(const SynthSpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) raise(Errc::IoFailure, "cannot create " + out_dir.string() + ": " + ec.message());

  const auto chars = utf8::decode(spec.alphabet);
  Rng text_rng(derive_seed(spec.seed, {1}));
  Rng noise_rng(derive_seed(spec.seed, {2}));
  Manifest m;
  m.name = out_dir.filename().string();
  for (int n = 0; n < spec.num_utterances; ++n) {
    std::u32string text;
    do {
      const auto len = spec.min_chars + static_cast<int>(text_rng.below(spec.max_chars - spec.min_chars + 1));
      text.clear();
      for (int i = 0; i < len; ++i) text.push_back(chars[text_rng.below(chars.size())]);
    } while (trim(utf8::encode(text)).empty());

    char name[32];
    std::snprintf(name, sizeof name, "utt_%05d.wav", n);
    Utterance u;
    u.audio_path = out_dir / name;
    u.transcript = utf8::encode(text);
    const int speaker = n % spec.num_speakers;
    u.speaker_id = "spk" + std::to_string(speaker);
    u.gender = speaker % 2 == 0 ? Gender::female : Gender::male;
    u.corpus_tag = spec.corpus_tag;
    write_wav(render_tones(text, spec, noise_rng), u.audio_path);
    m.utterances.push_back(std::move(u));
  }
  save_manifest(m, out_dir / "manifest.csv");
  return m;
}

}  // namespace ctcasr
