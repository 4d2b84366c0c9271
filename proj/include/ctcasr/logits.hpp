#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace ctcasr {

/// B x T' x K pre-softmax scores, row-major. Frames at or beyond
/// output_lengths[b] are padding.
struct LogitBatch {
  int batch = 0;
  int frames = 0;
  int classes = 0;
  std::vector<double> values;
  std::vector<int> output_lengths;

  LogitBatch() = default;
  LogitBatch(int b, int t, int k)
      : batch(b), frames(t), classes(k), values(static_cast<std::size_t>(b) * t * k, 0.0), output_lengths(b, t) {}

  double* row(int b, int t) { return values.data() + (static_cast<std::size_t>(b) * frames + t) * classes; }
  const double* row(int b, int t) const {
    return values.data() + (static_cast<std::size_t>(b) * frames + t) * classes;
  }
};

/// Numerically stable log-softmax of one row.
inline void log_softmax(const double* in, double* out, int k) {
  const double mx = *std::max_element(in, in + k);
  double sum = 0.0;
  for (int i = 0; i < k; ++i) sum += std::exp(in[i] - mx);
  const double lse = mx + std::log(sum);
  for (int i = 0; i < k; ++i) out[i] = in[i] - lse;
}

inline std::vector<double> softmax(const double* in, int k) {
  std::vector<double> out(k);
  log_softmax(in, out.data(), k);
  for (double& v : out) v = std::exp(v);
  return out;
}

}  // namespace ctcasr
