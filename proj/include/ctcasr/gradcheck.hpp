#pragma once

// Central-difference verification of the model's analytic CTC-loss gradient.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ctcasr/ctc.hpp"
#include "ctcasr/net.hpp"
#include "ctcasr/random.hpp"

namespace ctcasr {

/// A model small enough to difference every coordinate in seconds.
inline ModelConfig tiny_model_config() {
  ModelConfig cfg;
  cfg.conv_filters = 2;
  cfg.conv1_kernel = {3, 3};
  cfg.conv1_stride = {2, 2};
  cfg.conv2_kernel = {3, 3};
  cfg.conv2_stride = {1, 2};
  cfg.rnn_layers = 1;
  cfg.rnn_units = 4;
  cfg.rnn_bidirectional = true;
  cfg.dropout_rate = 0.3;
  cfg.vocab_size_with_blank = 5;
  cfg.feature_bins = 5;
  return cfg;
}

struct GradCheckOptions {
  double epsilon = 1e-5;
  int min_coordinates = 200;
  /// Models with at most this many parameters are checked exhaustively.
  std::size_t exhaustive_limit = 2000;
  int frames = 8;
  int batch = 1;
  bool train_mode = false;  // dropout on, mask frozen by the seed
  bool zero_input = false;
  bool empty_labels = false;
};

struct TensorCheck {
  std::string name;
  int checked = 0;
  int skipped_kinks = 0;
  double max_relative_error = 0.0;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  int coordinates_checked = 0;
  int skipped_kinks = 0;
  std::vector<TensorCheck> tensors;

  bool covers_every_tensor() const {
    return std::all_of(tensors.begin(), tensors.end(), [](const TensorCheck& t) { return t.checked > 0; });
  }
};

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

/// Compares backward() against (L(x+e) - L(x-e)) / 2e, L = summed CTC loss,
/// at a random point: Glorot weights, biases and inputs uniform in [-2, 2].
/// Coordinates whose two perturbed evaluations take different ReLU branches
/// straddle a kink and are skipped and counted rather than compared.
inline GradCheckReport grad_check(const ModelConfig& cfg, std::uint64_t seed, const GradCheckOptions& opt = {}) {
  ModelParams params = init_params(cfg, seed);
  Rng rng(derive_seed(seed, {0x6c}));
  for (auto& t : params.tensors)
    if (is_bias(t))
      for (double& v : t.values) v = rng.uniform(-2.0, 2.0);

  FeatureBatch batch;
  batch.batch = opt.batch;
  batch.frames = opt.frames;
  batch.bins = cfg.feature_bins;
  batch.values.assign(static_cast<std::size_t>(opt.batch) * opt.frames * cfg.feature_bins, 0.0);
  if (!opt.zero_input)
    for (double& v : batch.values) v = rng.uniform(-2.0, 2.0);
  batch.lengths.assign(opt.batch, opt.frames);
  for (int b = 1; b < opt.batch; ++b) batch.lengths[b] = std::max(1, opt.frames - b);

  std::vector<LabelSequence> labels(opt.batch);
  if (!opt.empty_labels) {
    for (int b = 0; b < opt.batch; ++b) {
      const int frames_out = output_length(batch.lengths[b], cfg);
      LabelSequence l;
      for (int u = 0; u < frames_out; ++u) {
        LabelSequence candidate = l;
        candidate.push_back(static_cast<int>(rng.below(cfg.vocab_size_with_blank - 1)));
        if (!is_feasible(candidate, frames_out) || candidate.size() > 3) break;
        l = std::move(candidate);
      }
      labels[b] = std::move(l);
    }
  }

  const ForwardMode mode = opt.train_mode ? ForwardMode::training(derive_seed(seed, {0xd0})) : ForwardMode::eval();
  auto evaluate = [&](std::vector<std::uint8_t>* pattern) {
    ForwardPass pass = forward(params, cfg, batch, mode);
    if (pattern) *pattern = pass.tape.relu_pattern();
    const CtcResult r = ctc_loss(pass.logits, labels);
    double sum = 0.0;
    for (std::size_t b = 0; b < r.loss.size(); ++b)
      if (!r.infeasible[b]) sum += r.loss[b];
    return sum;
  };

  ForwardPass pass = forward(params, cfg, batch, mode);
  const CtcResult base = ctc_loss(pass.logits, labels);
  const ModelParams analytic = backward(pass.tape, params, cfg, base.d_logits);

  GradCheckReport report;
  const std::size_t total = params.total_size();
  const bool exhaustive = total <= std::max(opt.exhaustive_limit, static_cast<std::size_t>(opt.min_coordinates));
  const int quota = std::max<int>(1, (opt.min_coordinates + static_cast<int>(params.tensors.size()) - 1) /
                                         static_cast<int>(params.tensors.size()));
  std::vector<std::uint8_t> plus_pattern, minus_pattern;
  for (std::size_t ti = 0; ti < params.tensors.size(); ++ti) {
    Tensor& t = params.tensors[ti];
    TensorCheck tc;
    tc.name = t.name;
    std::vector<std::size_t> coords(t.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (!exhaustive && coords.size() > static_cast<std::size_t>(quota)) {
      rng.shuffle(coords);
      coords.resize(quota);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t idx : coords) {
      const double saved = t.values[idx];
      t.values[idx] = saved + opt.epsilon;
      const double up = evaluate(&plus_pattern);
      t.values[idx] = saved - opt.epsilon;
      const double down = evaluate(&minus_pattern);
      t.values[idx] = saved;
      if (plus_pattern != minus_pattern) {
        ++tc.skipped_kinks;
        continue;
      }
      const double numeric = (up - down) / (2.0 * opt.epsilon);
      const double err = relative_error(analytic.tensors[ti].values[idx], numeric);
      tc.max_relative_error = std::max(tc.max_relative_error, err);
      ++tc.checked;
    }
    report.max_relative_error = std::max(report.max_relative_error, tc.max_relative_error);
    report.coordinates_checked += tc.checked;
    report.skipped_kinks += tc.skipped_kinks;
    report.tensors.push_back(std::move(tc));
  }
  return report;
}

}  // namespace ctcasr
