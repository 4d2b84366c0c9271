#pragma once

// Word / character error rate from a minimum-edit-distance alignment.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ctcasr/corpus.hpp"
#include "ctcasr/error.hpp"
#include "ctcasr/textmap.hpp"

namespace ctcasr {

struct EditBreakdown {
  std::int64_t substitutions = 0;
  std::int64_t deletions = 0;
  std::int64_t insertions = 0;
  std::int64_t correct = 0;
  std::int64_t ref_length = 0;  // = substitutions + deletions + correct

  std::int64_t errors() const { return substitutions + deletions + insertions; }

  /// 100 * errors / N. With N = 0 this is 0 for no errors and +inf otherwise.
  double error_rate() const {
    if (ref_length == 0) return errors() == 0 ? 0.0 : std::numeric_limits<double>::infinity();
    return 100.0 * static_cast<double>(errors()) / static_cast<double>(ref_length);
  }

  EditBreakdown& operator+=(const EditBreakdown& o) {
    substitutions += o.substitutions;
    deletions += o.deletions;
    insertions += o.insertions;
    correct += o.correct;
    ref_length += o.ref_length;
    return *this;
  }

  bool operator==(const EditBreakdown&) const = default;
};

/// Unit-cost Levenshtein alignment. The backtrace prefers match, then
/// substitution, deletion, insertion, so the S/D/I split is deterministic.
template <typename Token>
EditBreakdown edit_ops(const std::vector<Token>& ref, const std::vector<Token>& hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::int64_t> d((n + 1) * (m + 1));
  auto D = [&](std::size_t i, std::size_t j) -> std::int64_t& { return d[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) D(i, 0) = static_cast<std::int64_t>(i);
  for (std::size_t j = 0; j <= m; ++j) D(0, j) = static_cast<std::int64_t>(j);
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j)
      D(i, j) = std::min({D(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1), D(i - 1, j) + 1, D(i, j - 1) + 1});

  EditBreakdown e;
  e.ref_length = static_cast<std::int64_t>(n);
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    const auto here = D(i, j);
    if (i > 0 && j > 0 && ref[i - 1] == hyp[j - 1] && D(i - 1, j - 1) == here) {
      ++e.correct; --i; --j;
    } else if (i > 0 && j > 0 && D(i - 1, j - 1) + 1 == here) {
      ++e.substitutions; --i; --j;
    } else if (i > 0 && D(i - 1, j) + 1 == here) {
      ++e.deletions; --i;
    } else {
      ++e.insertions; --j;
    }
  }
  return e;
}

/// Lowercase, trim, split on whitespace runs.
inline std::vector<std::string> word_tokens(std::string_view text) {
  std::istringstream in(to_lower(std::string(text)));
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(std::move(w));
  return out;
}

/// Lowercased code points; whitespace runs become a single space token and
/// leading/trailing whitespace is dropped.
inline std::vector<char32_t> char_tokens(std::string_view text) {
  const auto words = word_tokens(text);
  std::vector<char32_t> out;
  for (std::size_t w = 0; w < words.size(); ++w) {
    if (w) out.push_back(U' ');
    for (char32_t c : utf8::decode(words[w])) out.push_back(c);
  }
  return out;
}

struct ScoredPair {
  std::string id;
  std::string reference;
  std::string hypothesis;
  // Metadata used for grouping.
  Gender gender = Gender::unknown;
  std::string corpus_tag;
  std::string speaker_id;
};

struct UtteranceScore {
  std::string id;
  std::string reference;
  std::string hypothesis;
  EditBreakdown edits;
};

struct ScoreGroup;

struct ScoreReport {
  EditBreakdown totals;
  double error_rate = 0.0;  // percent, aggregate over counts
  std::vector<UtteranceScore> utterances;
  std::string group_key;            // empty when ungrouped
  std::vector<ScoreGroup> groups;   // sorted by name
};

struct ScoreGroup {
  std::string name;
  ScoreReport report;
};

enum class TokenUnit { word, character };

inline EditBreakdown score_pair(std::string_view ref, std::string_view hyp, TokenUnit unit) {
  return unit == TokenUnit::word ? edit_ops(word_tokens(ref), word_tokens(hyp))
                                 : edit_ops(char_tokens(ref), char_tokens(hyp));
}

namespace detail {

inline ScoreReport score_all(const std::vector<ScoredPair>& pairs, TokenUnit unit, bool require_reference) {
  ScoreReport r;
  for (const auto& p : pairs) {
    UtteranceScore u{p.id, p.reference, p.hypothesis, score_pair(p.reference, p.hypothesis, unit)};
    r.totals += u.edits;
    r.utterances.push_back(std::move(u));
  }
  if (require_reference && r.totals.ref_length == 0)
    raise(Errc::EmptyReferenceSet, "no reference tokens to score against");
  r.error_rate = r.totals.error_rate();
  return r;
}

inline std::vector<ScoredPair> as_pairs(const std::vector<std::pair<std::string, std::string>>& pairs) {
  std::vector<ScoredPair> out;
  for (std::size_t i = 0; i < pairs.size(); ++i)
    out.push_back({std::to_string(i), pairs[i].first, pairs[i].second, Gender::unknown, {}, {}});
  return out;
}

}  // namespace detail

/// Corpus-level WER = 100 * (sum S + sum D + sum I) / sum N.
inline ScoreReport wer(const std::vector<ScoredPair>& pairs) { return detail::score_all(pairs, TokenUnit::word, true); }
inline ScoreReport wer(const std::vector<std::pair<std::string, std::string>>& pairs) {
  return wer(detail::as_pairs(pairs));
}

inline ScoreReport cer(const std::vector<ScoredPair>& pairs) {
  return detail::score_all(pairs, TokenUnit::character, true);
}
inline ScoreReport cer(const std::vector<std::pair<std::string, std::string>>& pairs) {
  return cer(detail::as_pairs(pairs));
}

inline std::string pair_group_value(const ScoredPair& p, GroupKey key) {
  switch (key) {
    case GroupKey::gender: return std::string(gender_name(p.gender));
    case GroupKey::corpus_tag: return p.corpus_tag;
    case GroupKey::speaker_id: return p.speaker_id;
  }
  return {};
}

inline std::string_view group_key_name(GroupKey key) {
  switch (key) {
    case GroupKey::gender: return "gender";
    case GroupKey::corpus_tag: return "corpus_tag";
    case GroupKey::speaker_id: return "speaker_id";
  }
  return {};
}

/// Overall report plus one sub-report per distinct key value.
inline ScoreReport grouped_scores(const std::vector<ScoredPair>& pairs, GroupKey key,
                                  TokenUnit unit = TokenUnit::word) {
  ScoreReport overall = detail::score_all(pairs, unit, false);
  overall.group_key = std::string(group_key_name(key));
  std::map<std::string, std::vector<ScoredPair>> buckets;
  for (const auto& p : pairs) buckets[pair_group_value(p, key)].push_back(p);
  for (auto& [name, members] : buckets) overall.groups.push_back({name, detail::score_all(members, unit, false)});
  return overall;
}

inline std::string format_rate(double rate) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", rate);
  return buf;
}

/// utterance_id,ref,hyp,S,D,I,C,N,wer
inline void write_utterance_csv(const ScoreReport& r, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(Errc::IoFailure, "cannot write " + path.string());
  out << "utterance_id,ref,hyp,S,D,I,C,N,wer\n";
  for (const auto& u : r.utterances) {
    const auto& e = u.edits;
    out << csv::quote(u.id) << ',' << csv::quote(u.reference) << ',' << csv::quote(u.hypothesis) << ','
        << e.substitutions << ',' << e.deletions << ',' << e.insertions << ',' << e.correct << ',' << e.ref_length
        << ',' << format_rate(e.error_rate()) << '\n';
  }
  if (!out) raise(Errc::IoFailure, "write failed for " + path.string());
}

/// group_key,group,S,D,I,C,N,wer. The first row is the overall aggregate
/// (group_key "all", group "all"); then one row per group of each grouped
/// report. All reports must score the same set of pairs.
inline void write_summary_csv(const std::vector<ScoreReport>& reports, const std::filesystem::path& path) {
  if (reports.empty()) raise(Errc::InvalidArgument, "no report to summarize");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(Errc::IoFailure, "cannot write " + path.string());
  out << "group_key,group,S,D,I,C,N,wer\n";
  auto row = [&](std::string_view key, std::string_view group, const EditBreakdown& e) {
    out << csv::quote(key) << ',' << csv::quote(group) << ',' << e.substitutions << ',' << e.deletions << ','
        << e.insertions << ',' << e.correct << ',' << e.ref_length << ',' << format_rate(e.error_rate()) << '\n';
  };
  row("all", "all", reports.front().totals);
  for (const auto& r : reports)
    for (const auto& g : r.groups) row(r.group_key, g.name, g.report.totals);
  if (!out) raise(Errc::IoFailure, "write failed for " + path.string());
}

inline void write_summary_csv(const ScoreReport& report, const std::filesystem::path& path) {
  write_summary_csv(std::vector<ScoreReport>{report}, path);
}

}  // namespace ctcasr
