#pragma once

// Connectionist temporal classification: the collapse map, the log-space
// forward-backward loss with its logit gradient, an exhaustive enumeration
// oracle, and best-path decoding.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "ctcasr/error.hpp"
#include "ctcasr/logits.hpp"
#include "ctcasr/textmap.hpp"

namespace ctcasr {

inline constexpr double kLogZero = -std::numeric_limits<double>::infinity();

inline double log_add(double a, double b) {
  if (a == kLogZero) return b;
  if (b == kLogZero) return a;
  if (a < b) std::swap(a, b);
  return a + std::log1p(std::exp(b - a));
}

/// Merge runs of equal symbols, then drop blanks.
template <typename Path>
LabelSequence collapse(const Path& path, int blank_index) {
  LabelSequence out;
  bool have_prev = false;
  int prev = 0;
  for (auto raw : path) {
    const int s = static_cast<int>(raw);
    if (!(have_prev && s == prev) && s != blank_index) out.push_back(s);
    prev = s;
    have_prev = true;
  }
  return out;
}

/// Minimum number of frames any alignment of `label` needs: one per label
/// plus a separating blank between adjacent equal labels.
inline int min_frames_required(const LabelSequence& label) {
  int repeats = 0;
  for (std::size_t i = 1; i < label.size(); ++i) repeats += label[i] == label[i - 1];
  return static_cast<int>(label.size()) + repeats;
}

inline bool is_feasible(const LabelSequence& label, int frames) {
  return frames >= min_frames_required(label);
}

struct CtcResult {
  std::vector<double> loss;      // per item; +inf when infeasible
  std::vector<bool> infeasible;  // per item
  LogitBatch d_logits;           // gradient of sum(loss) over feasible items

  int num_infeasible() const { return static_cast<int>(std::count(infeasible.begin(), infeasible.end(), true)); }

  /// Mean over feasible items, NaN when none is feasible.
  double mean_feasible_loss() const {
    double sum = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < loss.size(); ++i)
      if (!infeasible[i]) { sum += loss[i]; ++n; }
    return n ? sum / n : std::numeric_limits<double>::quiet_NaN();
  }
};

namespace detail {

// Loss and logit gradient for one sequence. `logits` is T x K row-major,
// `grad` (same shape) is overwritten. Returns +inf when infeasible.
inline double ctc_single(const double* logits, int frames, int classes, const LabelSequence& label, double* grad) {
  const int blank = classes - 1;
  std::fill(grad, grad + static_cast<std::size_t>(frames) * classes, 0.0);
  if (!is_feasible(label, frames)) return std::numeric_limits<double>::infinity();

  const int states = 2 * static_cast<int>(label.size()) + 1;
  std::vector<int> ext(states, blank);
  for (std::size_t u = 0; u < label.size(); ++u) ext[2 * u + 1] = label[u];

  std::vector<double> logp(static_cast<std::size_t>(frames) * classes);
  for (int t = 0; t < frames; ++t) log_softmax(logits + static_cast<std::size_t>(t) * classes, &logp[t * classes], classes);
  auto lp = [&](int t, int s) { return logp[static_cast<std::size_t>(t) * classes + ext[s]]; };
  auto can_skip = [&](int s) { return s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]; };

  // alpha includes the emission at t; beta excludes it.
  std::vector<double> alpha(static_cast<std::size_t>(frames) * states, kLogZero);
  std::vector<double> beta(static_cast<std::size_t>(frames) * states, kLogZero);
  auto A = [&](int t, int s) -> double& { return alpha[static_cast<std::size_t>(t) * states + s]; };
  auto Bt = [&](int t, int s) -> double& { return beta[static_cast<std::size_t>(t) * states + s]; };

  A(0, 0) = lp(0, 0);
  if (states > 1) A(0, 1) = lp(0, 1);
  for (int t = 1; t < frames; ++t) {
    for (int s = 0; s < states; ++s) {
      double acc = A(t - 1, s);
      if (s >= 1) acc = log_add(acc, A(t - 1, s - 1));
      if (can_skip(s)) acc = log_add(acc, A(t - 1, s - 2));
      A(t, s) = acc == kLogZero ? kLogZero : acc + lp(t, s);
    }
  }
  double log_total = A(frames - 1, states - 1);
  if (states > 1) log_total = log_add(log_total, A(frames - 1, states - 2));
  if (log_total == kLogZero) return std::numeric_limits<double>::infinity();

  Bt(frames - 1, states - 1) = 0.0;
  if (states > 1) Bt(frames - 1, states - 2) = 0.0;
  for (int t = frames - 2; t >= 0; --t) {
    for (int s = 0; s < states; ++s) {
      double acc = Bt(t + 1, s) == kLogZero ? kLogZero : Bt(t + 1, s) + lp(t + 1, s);
      if (s + 1 < states && Bt(t + 1, s + 1) != kLogZero) acc = log_add(acc, Bt(t + 1, s + 1) + lp(t + 1, s + 1));
      if (s + 2 < states && can_skip(s + 2) && Bt(t + 1, s + 2) != kLogZero)
        acc = log_add(acc, Bt(t + 1, s + 2) + lp(t + 1, s + 2));
      Bt(t, s) = acc;
    }
  }

  // d(-log P)/d logit[t,k] = softmax[t,k] - sum_{s: ext[s]=k} exp(alpha+beta - log P)
  std::vector<double> occupancy(classes);
  for (int t = 0; t < frames; ++t) {
    std::fill(occupancy.begin(), occupancy.end(), kLogZero);
    for (int s = 0; s < states; ++s) {
      if (A(t, s) == kLogZero || Bt(t, s) == kLogZero) continue;
      occupancy[ext[s]] = log_add(occupancy[ext[s]], A(t, s) + Bt(t, s));
    }
    double* g = grad + static_cast<std::size_t>(t) * classes;
    for (int k = 0; k < classes; ++k) {
      const double post = occupancy[k] == kLogZero ? 0.0 : std::exp(occupancy[k] - log_total);
      g[k] = std::exp(logp[static_cast<std::size_t>(t) * classes + k]) - post;
    }
  }
  return -log_total;
}

}  // namespace detail

/// Per-item CTC loss over the first output_lengths[b] frames of each item.
/// The blank is the last class. Infeasible items get +inf loss, a zero
/// gradient, and their infeasible flag set.
inline CtcResult ctc_loss(const LogitBatch& logits, const std::vector<LabelSequence>& labels) {
  if (static_cast<int>(labels.size()) != logits.batch)
    raise(Errc::ShapeMismatch, "got " + std::to_string(labels.size()) + " labels for a batch of " +
                                   std::to_string(logits.batch));
  const int k = logits.classes;
  CtcResult r;
  r.loss.assign(logits.batch, 0.0);
  r.infeasible.assign(logits.batch, false);
  r.d_logits = LogitBatch(logits.batch, logits.frames, k);
  r.d_logits.output_lengths = logits.output_lengths;
  for (int b = 0; b < logits.batch; ++b) {
    for (int id : labels[b])
      if (id < 0 || id >= k - 1)
        raise(Errc::IndexOutOfRange, "label id " + std::to_string(id) + " outside [0, " + std::to_string(k - 1) + ")");
    const int frames = logits.output_lengths[b];
    if (frames < 1 || frames > logits.frames) raise(Errc::ShapeMismatch, "bad output length for item " + std::to_string(b));
    r.loss[b] = detail::ctc_single(logits.row(b, 0), frames, k, labels[b], r.d_logits.row(b, 0));
    r.infeasible[b] = std::isinf(r.loss[b]);
  }
  return r;
}

/// Single-sequence convenience form over a T x K logit matrix.
inline double ctc_loss_single(const std::vector<double>& logits, int frames, int classes, const LabelSequence& label,
                              std::vector<double>* grad = nullptr) {
  std::vector<double> g(static_cast<std::size_t>(frames) * classes);
  const double loss = detail::ctc_single(logits.data(), frames, classes, label, g.data());
  if (grad) *grad = std::move(g);
  return loss;
}

inline constexpr int kBruteForceMaxFrames = 8;
inline constexpr int kBruteForceMaxClasses = 5;

/// Enumerates all K^T alignments. `frame_probs` is T x K row-major
/// probabilities; the blank is the last class.
inline double ctc_loss_bruteforce(const std::vector<double>& frame_probs, int frames, int classes,
                                  const LabelSequence& label) {
  if (frames > kBruteForceMaxFrames || classes > kBruteForceMaxClasses)
    raise(Errc::TooLarge, "enumeration limited to T <= 8 and K <= 5");
  if (frames < 1 || classes < 2 || frame_probs.size() != static_cast<std::size_t>(frames) * classes)
    raise(Errc::ShapeMismatch, "frame_probs must be T x K");
  const int blank = classes - 1;
  std::vector<int> path(frames, 0);
  double total = 0.0;
  for (;;) {
    if (collapse(path, blank) == label) {
      double p = 1.0;
      for (int t = 0; t < frames; ++t) p *= frame_probs[static_cast<std::size_t>(t) * classes + path[t]];
      total += p;
    }
    int t = frames - 1;
    while (t >= 0 && ++path[t] == classes) path[t--] = 0;
    if (t < 0) break;
  }
  return -std::log(total);
}

/// Per-frame argmax (lowest index on ties) over the first output_length
/// frames, collapsed.
inline std::vector<LabelSequence> greedy_ids(const LogitBatch& logits) {
  std::vector<LabelSequence> out(logits.batch);
  const int blank = logits.classes - 1;
  std::vector<int> path;
  for (int b = 0; b < logits.batch; ++b) {
    path.clear();
    for (int t = 0; t < logits.output_lengths[b]; ++t) {
      const double* row = logits.row(b, t);
      path.push_back(static_cast<int>(std::max_element(row, row + logits.classes) - row));
    }
    out[b] = collapse(path, blank);
  }
  return out;
}

inline std::vector<std::string> greedy_decode(const LogitBatch& logits, const Vocabulary& v) {
  if (logits.classes != v.num_classes())
    raise(Errc::ShapeMismatch, "logits have " + std::to_string(logits.classes) + " classes, vocabulary needs " +
                                   std::to_string(v.num_classes()));
  std::vector<std::string> out;
  for (const auto& ids : greedy_ids(logits)) out.push_back(decode_ids(ids, v));
  return out;
}

}  // namespace ctcasr
