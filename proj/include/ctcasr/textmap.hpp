#pragma once

// Character vocabulary and the character <-> integer mapping.
//
// Index layout for a vocabulary of n characters:
//   0        out-of-vocabulary / empty string
//   1..n     chars[0..n-1]
//   n+1      CTC blank
// so a model over this vocabulary emits n+2 logits per frame.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ctcasr/error.hpp"

namespace ctcasr {

namespace utf8 {

inline std::u32string decode(std::string_view s) {
  std::u32string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    auto c = static_cast<unsigned char>(s[i]);
    char32_t cp;
    std::size_t extra;
    if (c < 0x80) { cp = c; extra = 0; }
    else if ((c >> 5) == 0x6) { cp = c & 0x1f; extra = 1; }
    else if ((c >> 4) == 0xe) { cp = c & 0x0f; extra = 2; }
    else if ((c >> 3) == 0x1e) { cp = c & 0x07; extra = 3; }
    else { out.push_back(U'\uFFFD'); ++i; continue; }
    bool ok = true;
    for (std::size_t k = 1; k <= extra; ++k) {
      if (i + k >= s.size()) { ok = false; break; }
      auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc >> 6) != 0x2) { ok = false; break; }
      cp = (cp << 6) | (cc & 0x3f);
    }
    if (!ok) { out.push_back(U'\uFFFD'); ++i; continue; }
    out.push_back(cp);
    i += extra + 1;
  }
  return out;
}

inline void append(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xc0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xe0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  } else {
    out.push_back(static_cast<char>(0xf0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3f)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  }
}

inline std::string encode(std::u32string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char32_t cp : s) append(out, cp);
  return out;
}

}  // namespace utf8

/// ASCII lowercasing; other code points pass through unchanged.
inline std::u32string to_lower(std::u32string s) {
  for (auto& c : s)
    if (c >= U'A' && c <= U'Z') c = c - U'A' + U'a';
  return s;
}

inline std::string to_lower(std::string s) {
  for (auto& c : s)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return s;
}

using LabelSequence = std::vector<int>;

class Vocabulary {
 public:
  static constexpr int kOovIndex = 0;

  Vocabulary() : Vocabulary(default_chars()) {}

  explicit Vocabulary(std::u32string chars) : chars_(std::move(chars)) {
    for (std::size_t i = 0; i < chars_.size(); ++i) {
      if (!index_.emplace(chars_[i], static_cast<int>(i) + 1).second)
        raise(Errc::InvalidArgument, "duplicate character in vocabulary");
    }
  }

  explicit Vocabulary(std::string_view utf8_chars) : Vocabulary(utf8::decode(utf8_chars)) {}

  /// Lowercase a-z, space and apostrophe.
  static std::u32string default_chars() { return U"abcdefghijklmnopqrstuvwxyz '"; }

  const std::u32string& chars() const { return chars_; }
  std::size_t size() const { return chars_.size(); }
  int oov_index() const { return kOovIndex; }
  int blank_index() const { return static_cast<int>(chars_.size()) + 1; }
  /// Logits per frame: characters + OOV + blank.
  int num_classes() const { return static_cast<int>(chars_.size()) + 2; }

  int index_of(char32_t c) const {
    auto it = index_.find(c);
    return it == index_.end() ? kOovIndex : it->second;
  }

  bool contains(char32_t c) const { return index_.count(c) != 0; }

 private:
  std::u32string chars_;
  std::unordered_map<char32_t, int> index_;
};

/// Lowercases, then maps each code point; unknown characters become 0.
inline LabelSequence encode_text(std::string_view text, const Vocabulary& v) {
  const std::u32string cps = to_lower(utf8::decode(text));
  LabelSequence ids;
  ids.reserve(cps.size());
  for (char32_t c : cps) ids.push_back(v.index_of(c));
  return ids;
}

/// OOV and blank indices decode to the empty string.
template <typename Ids>
std::string decode_ids(const Ids& ids, const Vocabulary& v) {
  std::u32string out;
  for (auto raw : ids) {
    const long id = static_cast<long>(raw);
    if (id < 0 || id > v.blank_index())
      raise(Errc::IndexOutOfRange, "label id " + std::to_string(id) + " outside [0, " +
                                       std::to_string(v.blank_index()) + "]");
    if (id == v.oov_index() || id == v.blank_index()) continue;
    out.push_back(v.chars()[static_cast<std::size_t>(id - 1)]);
  }
  return utf8::encode(out);
}

inline void save_vocabulary(const Vocabulary& v, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(Errc::IoFailure, "cannot write vocabulary file " + path.string());
  out << utf8::encode(v.chars()) << '\n';
  if (!out) raise(Errc::IoFailure, "write failed for " + path.string());
}

/// Reads the single-line vocabulary file. A trailing LF (or CRLF) is not part
/// of the character set; every other byte on the line is.
inline Vocabulary load_vocabulary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(Errc::IoFailure, "cannot read vocabulary file " + path.string());
  std::string line;
  std::getline(in, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line.empty()) raise(Errc::ConfigError, "vocabulary file " + path.string() + " is empty");
  return Vocabulary(std::string_view(line));
}

}  // namespace ctcasr
