#pragma once

// Acoustic model: two 2-D convolutions (ReLU) over time x frequency, stacked
// GRU layers (optionally bidirectional) with dropout on each layer's output,
// and a per-frame linear projection to K logits.
//
// Activations are stored channels-last: a conv output is [T][F][C], so one
// frame flattened is F*C contiguous values, which is the GRU input.
//
// Batch items are processed independently over their own true length, which
// makes every logit of an item independent of how much padding its batch has.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ctcasr/error.hpp"
#include "ctcasr/logits.hpp"
#include "ctcasr/random.hpp"

namespace ctcasr {

inline int ceil_div(int a, int b) { return (a + b - 1) / b; }

struct ModelConfig {
  int conv_filters = 16;
  std::array<int, 2> conv1_kernel{11, 41};  // (time, frequency)
  std::array<int, 2> conv1_stride{2, 2};
  std::array<int, 2> conv2_kernel{11, 21};
  std::array<int, 2> conv2_stride{1, 2};
  int rnn_layers = 3;
  int rnn_units = 256;
  bool rnn_bidirectional = true;
  double dropout_rate = 0.3;
  int vocab_size_with_blank = 30;
  int feature_bins = 193;

  int directions() const { return rnn_bidirectional ? 2 : 1; }
  int conv1_bins() const { return ceil_div(feature_bins, conv1_stride[1]); }
  int conv2_bins() const { return ceil_div(conv1_bins(), conv2_stride[1]); }
  int rnn_input_size() const { return conv2_bins() * conv_filters; }
  int rnn_output_size() const { return rnn_units * directions(); }

  void validate() const {
    auto positive = [](const std::array<int, 2>& a) { return a[0] >= 1 && a[1] >= 1; };
    if (conv_filters < 1) raise(Errc::InvalidArgument, "conv_filters must be >= 1");
    if (!positive(conv1_kernel) || !positive(conv1_stride) || !positive(conv2_kernel) || !positive(conv2_stride))
      raise(Errc::InvalidArgument, "conv kernels and strides must be >= 1");
    if (rnn_layers < 1 || rnn_units < 1) raise(Errc::InvalidArgument, "rnn_layers and rnn_units must be >= 1");
    if (!(dropout_rate >= 0 && dropout_rate < 1)) raise(Errc::InvalidArgument, "dropout_rate must be in [0, 1)");
    if (vocab_size_with_blank < 2) raise(Errc::InvalidArgument, "vocab_size_with_blank must be >= 2");
    if (feature_bins < 1) raise(Errc::InvalidArgument, "feature_bins must be >= 1");
  }

  bool operator==(const ModelConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"conv_filters", c.conv_filters},
                     {"conv1_kernel", c.conv1_kernel},
                     {"conv1_stride", c.conv1_stride},
                     {"conv2_kernel", c.conv2_kernel},
                     {"conv2_stride", c.conv2_stride},
                     {"rnn_layers", c.rnn_layers},
                     {"rnn_units", c.rnn_units},
                     {"rnn_bidirectional", c.rnn_bidirectional},
                     {"dropout_rate", c.dropout_rate},
                     {"vocab_size_with_blank", c.vocab_size_with_blank},
                     {"feature_bins", c.feature_bins}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.conv_filters = j.value("conv_filters", c.conv_filters);
  c.conv1_kernel = j.value("conv1_kernel", c.conv1_kernel);
  c.conv1_stride = j.value("conv1_stride", c.conv1_stride);
  c.conv2_kernel = j.value("conv2_kernel", c.conv2_kernel);
  c.conv2_stride = j.value("conv2_stride", c.conv2_stride);
  c.rnn_layers = j.value("rnn_layers", c.rnn_layers);
  c.rnn_units = j.value("rnn_units", c.rnn_units);
  c.rnn_bidirectional = j.value("rnn_bidirectional", c.rnn_bidirectional);
  c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
  c.vocab_size_with_blank = j.value("vocab_size_with_blank", c.vocab_size_with_blank);
  c.feature_bins = j.value("feature_bins", c.feature_bins);
}

/// Frames after both convolutions: each maps L to ceil(L / time_stride).
inline int output_length(int input_frames, const ModelConfig& cfg) {
  if (input_frames < 1) raise(Errc::InvalidArgument, "input_frames must be >= 1");
  return ceil_div(ceil_div(input_frames, cfg.conv1_stride[0]), cfg.conv2_stride[0]);
}

struct Tensor {
  std::string name;
  std::vector<int> shape;
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
};

/// All trainable tensors in a fixed order:
///   conv1.kernel [kt,kf,1,C]  conv1.bias [C]
///   conv2.kernel [kt,kf,C,C]  conv2.bias [C]
///   gru{l}.{fw,bw}.input [In,3H]  .recurrent [H,3H]  .bias [3H]   (gates z|r|n)
///   dense.kernel [D,K]  dense.bias [K]
/// Gradients use the same type.
struct ModelParams {
  std::vector<Tensor> tensors;

  static constexpr std::size_t kConv1Kernel = 0, kConv1Bias = 1, kConv2Kernel = 2, kConv2Bias = 3;

  static std::size_t gru_index(const ModelConfig& cfg, int layer, int dir) {
    return 4 + static_cast<std::size_t>(layer * cfg.directions() + dir) * 3;
  }
  static std::size_t dense_index(const ModelConfig& cfg) {
    return 4 + static_cast<std::size_t>(cfg.rnn_layers * cfg.directions()) * 3;
  }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
  }

  const Tensor* find(std::string_view name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }

  void set_zero() {
    for (auto& t : tensors) std::fill(t.values.begin(), t.values.end(), 0.0);
  }

  bool all_finite() const {
    for (const auto& t : tensors)
      for (double v : t.values)
        if (!std::isfinite(v)) return false;
    return true;
  }
};

/// Zero-valued tensors with the shapes `cfg` implies.
inline ModelParams make_param_shapes(const ModelConfig& cfg) {
  cfg.validate();
  ModelParams p;
  auto add = [&](std::string name, std::vector<int> shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    p.tensors.push_back({std::move(name), std::move(shape), std::vector<double>(n, 0.0)});
  };
  const int c = cfg.conv_filters, h = cfg.rnn_units;
  add("conv1.kernel", {cfg.conv1_kernel[0], cfg.conv1_kernel[1], 1, c});
  add("conv1.bias", {c});
  add("conv2.kernel", {cfg.conv2_kernel[0], cfg.conv2_kernel[1], c, c});
  add("conv2.bias", {c});
  for (int l = 0; l < cfg.rnn_layers; ++l) {
    const int in = l == 0 ? cfg.rnn_input_size() : cfg.rnn_output_size();
    for (int d = 0; d < cfg.directions(); ++d) {
      const std::string prefix = "gru" + std::to_string(l) + (d == 0 ? ".fw" : ".bw");
      add(prefix + ".input", {in, 3 * h});
      add(prefix + ".recurrent", {h, 3 * h});
      add(prefix + ".bias", {3 * h});
    }
  }
  add("dense.kernel", {cfg.rnn_output_size(), cfg.vocab_size_with_blank});
  add("dense.bias", {cfg.vocab_size_with_blank});
  return p;
}

inline bool is_bias(const Tensor& t) { return t.shape.size() == 1; }

/// Glorot-uniform weights, zero biases. Convolution fans include the
/// receptive field size.
inline ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams p = make_param_shapes(cfg);
  for (std::size_t i = 0; i < p.tensors.size(); ++i) {
    Tensor& t = p.tensors[i];
    if (is_bias(t)) continue;
    double fan_in, fan_out;
    if (t.shape.size() == 4) {
      const double receptive = static_cast<double>(t.shape[0]) * t.shape[1];
      fan_in = receptive * t.shape[2];
      fan_out = receptive * t.shape[3];
    } else {
      fan_in = t.shape[0];
      fan_out = t.shape[1];
    }
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    Rng rng(derive_seed(seed, {i}));
    for (double& v : t.values) v = rng.uniform(-limit, limit);
  }
  return p;
}

/// Padded B x T x F features with each item's true frame count.
struct FeatureBatch {
  int batch = 0;
  int frames = 0;
  int bins = 0;
  std::vector<double> values;
  std::vector<int> lengths;

  const double* item(int b) const { return values.data() + static_cast<std::size_t>(b) * frames * bins; }
};

struct ForwardMode {
  bool train = false;
  std::uint64_t seed = 0;

  static ForwardMode eval() { return {}; }
  static ForwardMode training(std::uint64_t seed) { return {true, seed}; }
};

namespace net_detail {

struct ConvGeom {
  int kt, kf, st, sf, cin, cout;
  int pad_t() const { return (kt - 1) / 2; }
  int pad_f() const { return (kf - 1) / 2; }
};

// "Same" convolution with a fixed leading pad of (k-1)/2: output position o
// reads inputs o*s - pad .. o*s - pad + k - 1; out-of-range inputs are zero.
inline void conv_forward(const double* in, int t_in, int f_in, const ConvGeom& g, const double* kernel,
                         const double* bias, double* out, int t_out, int f_out) {
  for (int to = 0; to < t_out; ++to) {
    for (int fo = 0; fo < f_out; ++fo) {
      double* o = out + (static_cast<std::size_t>(to) * f_out + fo) * g.cout;
      std::copy(bias, bias + g.cout, o);
      for (int dt = 0; dt < g.kt; ++dt) {
        const int ti = to * g.st - g.pad_t() + dt;
        if (ti < 0 || ti >= t_in) continue;
        for (int df = 0; df < g.kf; ++df) {
          const int fi = fo * g.sf - g.pad_f() + df;
          if (fi < 0 || fi >= f_in) continue;
          const double* x = in + (static_cast<std::size_t>(ti) * f_in + fi) * g.cin;
          const double* w = kernel + (static_cast<std::size_t>(dt) * g.kf + df) * g.cin * g.cout;
          for (int ci = 0; ci < g.cin; ++ci) {
            const double xv = x[ci];
            if (xv == 0.0) continue;
            const double* wr = w + static_cast<std::size_t>(ci) * g.cout;
            for (int co = 0; co < g.cout; ++co) o[co] += xv * wr[co];
          }
        }
      }
    }
  }
}

// Accumulates kernel/bias gradients and (when din is non-null) the input
// gradient, given the gradient of the pre-activation output.
inline void conv_backward(const double* in, int t_in, int f_in, const ConvGeom& g, const double* kernel,
                          const double* dout, int t_out, int f_out, double* dkernel, double* dbias, double* din) {
  for (int to = 0; to < t_out; ++to) {
    for (int fo = 0; fo < f_out; ++fo) {
      const double* go = dout + (static_cast<std::size_t>(to) * f_out + fo) * g.cout;
      bool any = false;
      for (int co = 0; co < g.cout; ++co) {
        dbias[co] += go[co];
        any = any || go[co] != 0.0;
      }
      if (!any) continue;
      for (int dt = 0; dt < g.kt; ++dt) {
        const int ti = to * g.st - g.pad_t() + dt;
        if (ti < 0 || ti >= t_in) continue;
        for (int df = 0; df < g.kf; ++df) {
          const int fi = fo * g.sf - g.pad_f() + df;
          if (fi < 0 || fi >= f_in) continue;
          const std::size_t x_off = (static_cast<std::size_t>(ti) * f_in + fi) * g.cin;
          const std::size_t w_off = (static_cast<std::size_t>(dt) * g.kf + df) * g.cin * g.cout;
          for (int ci = 0; ci < g.cin; ++ci) {
            const double xv = in[x_off + ci];
            const double* wr = kernel + w_off + static_cast<std::size_t>(ci) * g.cout;
            double* dwr = dkernel + w_off + static_cast<std::size_t>(ci) * g.cout;
            if (xv != 0.0)
              for (int co = 0; co < g.cout; ++co) dwr[co] += xv * go[co];
            if (din) {
              double s = 0.0;
              for (int co = 0; co < g.cout; ++co) s += wr[co] * go[co];
              din[x_off + ci] += s;
            }
          }
        }
      }
    }
  }
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct GruDirTape {
  std::vector<double> z, r, n, h, hprev;  // each T x H, indexed by time
};

struct GruLayerTape {
  std::vector<GruDirTape> dirs;
  std::vector<double> mask;    // T x D dropout multipliers (empty in eval mode)
  std::vector<double> output;  // T x D after dropout
};

// One direction of one GRU layer. Output h is written to out[t*out_stride + out_offset + j].
inline void gru_forward(const double* x, int frames, int in_size, int h_size, bool reverse, const double* w,
                        const double* u, const double* b, GruDirTape& tape, double* out, int out_stride,
                        int out_offset) {
  const int g3 = 3 * h_size;
  std::vector<double> xw(static_cast<std::size_t>(frames) * g3);
  for (int t = 0; t < frames; ++t) {
    double* a = &xw[static_cast<std::size_t>(t) * g3];
    std::copy(b, b + g3, a);
    const double* xt = x + static_cast<std::size_t>(t) * in_size;
    for (int i = 0; i < in_size; ++i) {
      const double xv = xt[i];
      if (xv == 0.0) continue;
      const double* wr = w + static_cast<std::size_t>(i) * g3;
      for (int k = 0; k < g3; ++k) a[k] += xv * wr[k];
    }
  }
  const std::size_t cells = static_cast<std::size_t>(frames) * h_size;
  tape.z.assign(cells, 0.0);
  tape.r.assign(cells, 0.0);
  tape.n.assign(cells, 0.0);
  tape.h.assign(cells, 0.0);
  tape.hprev.assign(cells, 0.0);
  std::vector<double> h(h_size, 0.0), rec(g3), rh(h_size);
  for (int step = 0; step < frames; ++step) {
    const int t = reverse ? frames - 1 - step : step;
    const std::size_t off = static_cast<std::size_t>(t) * h_size;
    std::copy(h.begin(), h.end(), tape.hprev.begin() + off);
    std::fill(rec.begin(), rec.end(), 0.0);
    for (int j = 0; j < h_size; ++j) {
      const double hv = h[j];
      if (hv == 0.0) continue;
      const double* ur = u + static_cast<std::size_t>(j) * g3;
      for (int k = 0; k < 2 * h_size; ++k) rec[k] += hv * ur[k];
    }
    const double* a = &xw[static_cast<std::size_t>(t) * g3];
    for (int j = 0; j < h_size; ++j) {
      tape.z[off + j] = sigmoid(a[j] + rec[j]);
      tape.r[off + j] = sigmoid(a[h_size + j] + rec[h_size + j]);
      rh[j] = tape.r[off + j] * h[j];
    }
    for (int j = 0; j < h_size; ++j) {
      const double rv = rh[j];
      if (rv == 0.0) continue;
      const double* ur = u + static_cast<std::size_t>(j) * g3 + 2 * h_size;
      for (int k = 0; k < h_size; ++k) rec[2 * h_size + k] += rv * ur[k];
    }
    for (int j = 0; j < h_size; ++j) {
      const double n = std::tanh(a[2 * h_size + j] + rec[2 * h_size + j]);
      const double z = tape.z[off + j];
      tape.n[off + j] = n;
      h[j] = (1.0 - z) * n + z * h[j];
      tape.h[off + j] = h[j];
      out[static_cast<std::size_t>(t) * out_stride + out_offset + j] = h[j];
    }
  }
}

// Backprop through one direction. dout is indexed like the forward `out`.
// Accumulates dw/du/db and adds the input gradient into dx (if non-null).
inline void gru_backward(const double* x, int frames, int in_size, int h_size, bool reverse, const double* w,
                         const double* u, const GruDirTape& tape, const double* dout, int out_stride,
                         int out_offset, double* dw, double* du, double* db, double* dx) {
  const int g3 = 3 * h_size;
  std::vector<double> da(static_cast<std::size_t>(frames) * g3, 0.0);
  std::vector<double> carry(h_size, 0.0), dh(h_size), drh(h_size), rh(h_size);
  for (int step = frames - 1; step >= 0; --step) {
    const int t = reverse ? frames - 1 - step : step;
    const std::size_t off = static_cast<std::size_t>(t) * h_size;
    const double* z = &tape.z[off];
    const double* r = &tape.r[off];
    const double* n = &tape.n[off];
    const double* hp = &tape.hprev[off];
    double* a = &da[static_cast<std::size_t>(t) * g3];
    for (int j = 0; j < h_size; ++j) {
      dh[j] = dout[static_cast<std::size_t>(t) * out_stride + out_offset + j] + carry[j];
      const double dn = dh[j] * (1.0 - z[j]);
      const double dz = dh[j] * (hp[j] - n[j]);
      carry[j] = dh[j] * z[j];
      a[2 * h_size + j] = dn * (1.0 - n[j] * n[j]);
      a[j] = dz * z[j] * (1.0 - z[j]);
      rh[j] = r[j] * hp[j];
    }
    for (int j = 0; j < h_size; ++j) {
      const double* ur = u + static_cast<std::size_t>(j) * g3 + 2 * h_size;
      double* dur = du + static_cast<std::size_t>(j) * g3 + 2 * h_size;
      double s = 0.0;
      for (int k = 0; k < h_size; ++k) {
        s += ur[k] * a[2 * h_size + k];
        dur[k] += rh[j] * a[2 * h_size + k];
      }
      drh[j] = s;
    }
    for (int j = 0; j < h_size; ++j) {
      const double dr = drh[j] * hp[j];
      carry[j] += drh[j] * r[j];
      a[h_size + j] = dr * r[j] * (1.0 - r[j]);
    }
    for (int j = 0; j < h_size; ++j) {
      const double* ur = u + static_cast<std::size_t>(j) * g3;
      double* dur = du + static_cast<std::size_t>(j) * g3;
      double s = 0.0;
      for (int k = 0; k < 2 * h_size; ++k) {
        s += ur[k] * a[k];
        dur[k] += hp[j] * a[k];
      }
      carry[j] += s;
    }
  }
  for (int t = 0; t < frames; ++t) {
    const double* a = &da[static_cast<std::size_t>(t) * g3];
    const double* xt = x + static_cast<std::size_t>(t) * in_size;
    for (int k = 0; k < g3; ++k) db[k] += a[k];
    for (int i = 0; i < in_size; ++i) {
      const double* wr = w + static_cast<std::size_t>(i) * g3;
      double* dwr = dw + static_cast<std::size_t>(i) * g3;
      const double xv = xt[i];
      double s = 0.0;
      for (int k = 0; k < g3; ++k) {
        if (xv != 0.0) dwr[k] += xv * a[k];
        s += wr[k] * a[k];
      }
      if (dx) dx[static_cast<std::size_t>(t) * in_size + i] += s;
    }
  }
}

struct ItemTape {
  int in_frames = 0, t1 = 0, t2 = 0;
  std::vector<double> input;  // in_frames x F
  std::vector<double> a1;     // t1 x F1 x C, post-ReLU
  std::vector<double> a2;     // t2 x F2 x C, post-ReLU
  std::vector<GruLayerTape> layers;
};

}  // namespace net_detail

struct ForwardPass;
class Tape;
inline ForwardPass forward(const ModelParams&, const ModelConfig&, const FeatureBatch&, const ForwardMode&);
inline ModelParams backward(Tape&, const ModelParams&, const ModelConfig&, const LogitBatch&);

/// Activations recorded by forward(); consumed by exactly one backward().
class Tape {
 public:
  bool consumed() const { return consumed_; }

  /// One byte per ReLU unit: 1 when its output is positive. Two forward passes
  /// with equal patterns took the same branch at every ReLU.
  std::vector<std::uint8_t> relu_pattern() const {
    std::vector<std::uint8_t> out;
    for (const auto& it : items_) {
      for (double v : it.a1) out.push_back(v > 0.0);
      for (double v : it.a2) out.push_back(v > 0.0);
    }
    return out;
  }

 private:
  friend ForwardPass forward(const ModelParams&, const ModelConfig&, const FeatureBatch&, const ForwardMode&);
  friend ModelParams backward(Tape&, const ModelParams&, const ModelConfig&, const LogitBatch&);

  std::vector<net_detail::ItemTape> items_;
  int frames_out_ = 0;
  bool consumed_ = false;
};

struct ForwardPass {
  LogitBatch logits;
  Tape tape;
};

inline ForwardPass forward(const ModelParams& params, const ModelConfig& cfg, const FeatureBatch& batch,
                           const ForwardMode& mode) {
  using namespace net_detail;
  if (batch.bins != cfg.feature_bins)
    raise(Errc::ShapeMismatch, "features have " + std::to_string(batch.bins) + " bins, model expects " +
                                   std::to_string(cfg.feature_bins));
  if (batch.batch < 1 || batch.frames < 1 || static_cast<int>(batch.lengths.size()) != batch.batch ||
      batch.values.size() != static_cast<std::size_t>(batch.batch) * batch.frames * batch.bins)
    raise(Errc::ShapeMismatch, "feature batch dimensions are inconsistent");
  if (params.tensors.size() != ModelParams::dense_index(cfg) + 2)
    raise(Errc::ShapeMismatch, "parameter set does not match model config");

  const int c = cfg.conv_filters, h = cfg.rnn_units, k = cfg.vocab_size_with_blank;
  const int f0 = cfg.feature_bins, f1 = cfg.conv1_bins(), f2 = cfg.conv2_bins();
  const int dirs = cfg.directions(), d_out = cfg.rnn_output_size();
  const ConvGeom g1{cfg.conv1_kernel[0], cfg.conv1_kernel[1], cfg.conv1_stride[0], cfg.conv1_stride[1], 1, c};
  const ConvGeom g2{cfg.conv2_kernel[0], cfg.conv2_kernel[1], cfg.conv2_stride[0], cfg.conv2_stride[1], c, c};
  const auto& T = params.tensors;

  ForwardPass pass;
  const int frames_out = output_length(batch.frames, cfg);
  pass.logits = LogitBatch(batch.batch, frames_out, k);
  pass.tape.frames_out_ = frames_out;
  pass.tape.items_.resize(batch.batch);

  for (int b = 0; b < batch.batch; ++b) {
    const int len = batch.lengths[b];
    if (len < 1 || len > batch.frames)
      raise(Errc::ShapeMismatch, "item " + std::to_string(b) + " length " + std::to_string(len) + " outside [1, " +
                                     std::to_string(batch.frames) + "]");
    ItemTape& it = pass.tape.items_[b];
    it.in_frames = len;
    it.input.assign(batch.item(b), batch.item(b) + static_cast<std::size_t>(len) * f0);
    it.t1 = ceil_div(len, g1.st);
    it.t2 = ceil_div(it.t1, g2.st);

    it.a1.assign(static_cast<std::size_t>(it.t1) * f1 * c, 0.0);
    conv_forward(it.input.data(), len, f0, g1, T[ModelParams::kConv1Kernel].values.data(),
                 T[ModelParams::kConv1Bias].values.data(), it.a1.data(), it.t1, f1);
    for (double& v : it.a1) v = v > 0.0 ? v : 0.0;
    it.a2.assign(static_cast<std::size_t>(it.t2) * f2 * c, 0.0);
    conv_forward(it.a1.data(), it.t1, f1, g2, T[ModelParams::kConv2Kernel].values.data(),
                 T[ModelParams::kConv2Bias].values.data(), it.a2.data(), it.t2, f2);
    for (double& v : it.a2) v = v > 0.0 ? v : 0.0;

    const double* layer_in = it.a2.data();
    int in_size = cfg.rnn_input_size();
    it.layers.resize(cfg.rnn_layers);
    for (int l = 0; l < cfg.rnn_layers; ++l) {
      GruLayerTape& lt = it.layers[l];
      lt.dirs.resize(dirs);
      lt.output.assign(static_cast<std::size_t>(it.t2) * d_out, 0.0);
      for (int d = 0; d < dirs; ++d) {
        const std::size_t gi = ModelParams::gru_index(cfg, l, d);
        gru_forward(layer_in, it.t2, in_size, h, d == 1, T[gi].values.data(), T[gi + 1].values.data(),
                    T[gi + 2].values.data(), lt.dirs[d], lt.output.data(), d_out, d * h);
      }
      if (mode.train && cfg.dropout_rate > 0.0) {
        Rng rng(derive_seed(mode.seed, {static_cast<std::uint64_t>(b), static_cast<std::uint64_t>(l)}));
        const double keep_scale = 1.0 / (1.0 - cfg.dropout_rate);
        lt.mask.resize(lt.output.size());
        for (std::size_t i = 0; i < lt.output.size(); ++i) {
          lt.mask[i] = rng.uniform() < cfg.dropout_rate ? 0.0 : keep_scale;
          lt.output[i] *= lt.mask[i];
        }
      }
      layer_in = lt.output.data();
      in_size = d_out;
    }

    const double* wd = T[ModelParams::dense_index(cfg)].values.data();
    const double* bd = T[ModelParams::dense_index(cfg) + 1].values.data();
    for (int t = 0; t < it.t2; ++t) {
      double* row = pass.logits.row(b, t);
      std::copy(bd, bd + k, row);
      const double* y = layer_in + static_cast<std::size_t>(t) * d_out;
      for (int j = 0; j < d_out; ++j) {
        const double yv = y[j];
        if (yv == 0.0) continue;
        const double* wr = wd + static_cast<std::size_t>(j) * k;
        for (int q = 0; q < k; ++q) row[q] += yv * wr[q];
      }
    }
    pass.logits.output_lengths[b] = it.t2;
  }
  return pass;
}

/// Exact gradient of sum(logits * d_logits) with respect to every parameter.
/// Entries of d_logits at padding frames are ignored.
inline ModelParams backward(Tape& tape, const ModelParams& params, const ModelConfig& cfg,
                            const LogitBatch& d_logits) {
  using namespace net_detail;
  if (tape.consumed_) raise(Errc::TapeConsumed, "tape already used by a backward pass");
  if (d_logits.batch != static_cast<int>(tape.items_.size()) || d_logits.frames != tape.frames_out_ ||
      d_logits.classes != cfg.vocab_size_with_blank)
    raise(Errc::ShapeMismatch, "d_logits shape does not match the recorded forward pass");
  tape.consumed_ = true;

  const int c = cfg.conv_filters, h = cfg.rnn_units, k = cfg.vocab_size_with_blank;
  const int f0 = cfg.feature_bins, f1 = cfg.conv1_bins(), f2 = cfg.conv2_bins();
  const int dirs = cfg.directions(), d_out = cfg.rnn_output_size();
  const ConvGeom g1{cfg.conv1_kernel[0], cfg.conv1_kernel[1], cfg.conv1_stride[0], cfg.conv1_stride[1], 1, c};
  const ConvGeom g2{cfg.conv2_kernel[0], cfg.conv2_kernel[1], cfg.conv2_stride[0], cfg.conv2_stride[1], c, c};
  const auto& T = params.tensors;
  ModelParams grads = make_param_shapes(cfg);
  auto& G = grads.tensors;
  const std::size_t di = ModelParams::dense_index(cfg);

  for (std::size_t b = 0; b < tape.items_.size(); ++b) {
    const ItemTape& it = tape.items_[b];
    const int frames = it.t2;
    const double* top = it.layers.back().output.data();

    // Dense layer.
    std::vector<double> dy(static_cast<std::size_t>(frames) * d_out, 0.0);
    for (int t = 0; t < frames; ++t) {
      const double* g = d_logits.row(static_cast<int>(b), t);
      const double* y = top + static_cast<std::size_t>(t) * d_out;
      for (int q = 0; q < k; ++q) G[di + 1].values[q] += g[q];
      for (int j = 0; j < d_out; ++j) {
        const double* wr = T[di].values.data() + static_cast<std::size_t>(j) * k;
        double* dwr = G[di].values.data() + static_cast<std::size_t>(j) * k;
        double s = 0.0;
        for (int q = 0; q < k; ++q) {
          dwr[q] += y[j] * g[q];
          s += wr[q] * g[q];
        }
        dy[static_cast<std::size_t>(t) * d_out + j] = s;
      }
    }

    // GRU stack, top to bottom. dy holds the gradient w.r.t. the layer output
    // after dropout.
    std::vector<double> dx;
    for (int l = cfg.rnn_layers - 1; l >= 0; --l) {
      const GruLayerTape& lt = it.layers[l];
      if (!lt.mask.empty())
        for (std::size_t i = 0; i < dy.size(); ++i) dy[i] *= lt.mask[i];
      const double* layer_in = l == 0 ? it.a2.data() : it.layers[l - 1].output.data();
      const int in_size = l == 0 ? cfg.rnn_input_size() : d_out;
      dx.assign(static_cast<std::size_t>(frames) * in_size, 0.0);
      for (int d = 0; d < dirs; ++d) {
        const std::size_t gi = ModelParams::gru_index(cfg, l, d);
        gru_backward(layer_in, frames, in_size, h, d == 1, T[gi].values.data(), T[gi + 1].values.data(),
                     lt.dirs[d], dy.data(), d_out, d * h, G[gi].values.data(), G[gi + 1].values.data(),
                     G[gi + 2].values.data(), dx.data());
      }
      dy.swap(dx);
    }

    // dy is now the gradient w.r.t. a2; apply the ReLU mask.
    for (std::size_t i = 0; i < dy.size(); ++i)
      if (!(it.a2[i] > 0.0)) dy[i] = 0.0;
    std::vector<double> da1(it.a1.size(), 0.0);
    conv_backward(it.a1.data(), it.t1, f1, g2, T[ModelParams::kConv2Kernel].values.data(), dy.data(), it.t2, f2,
                  G[ModelParams::kConv2Kernel].values.data(), G[ModelParams::kConv2Bias].values.data(), da1.data());
    for (std::size_t i = 0; i < da1.size(); ++i)
      if (!(it.a1[i] > 0.0)) da1[i] = 0.0;
    conv_backward(it.input.data(), it.in_frames, f0, g1, T[ModelParams::kConv1Kernel].values.data(), da1.data(),
                  it.t1, f1, G[ModelParams::kConv1Kernel].values.data(), G[ModelParams::kConv1Bias].values.data(),
                  nullptr);
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Checkpoints
//
//   "CTCASRCK" | u32 version | u32 meta_len | meta JSON (model config + extras)
//   u32 tensor_count, then per tensor:
//   u32 name_len | name | u32 rank | u32 dims[rank] | f64 values (little-endian)

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  nlohmann::json metadata;  // whatever the writer attached besides "model"
};

namespace net_detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string origin) : bytes_(bytes), origin_(std::move(origin)) {}

  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) raise(Errc::CorruptFile, origin_ + ": truncated checkpoint");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= std::uint64_t(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace net_detail

inline void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg, const ModelParams& params,
                            nlohmann::json metadata = nlohmann::json::object()) {
  using net_detail::put_u32;
  metadata["model"] = cfg;
  const std::string meta = metadata.dump();
  std::string out = "CTCASRCK";
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(meta.size()));
  out += meta;
  put_u32(out, static_cast<std::uint32_t>(params.tensors.size()));
  for (const auto& t : params.tensors) {
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : t.values) net_detail::put_f64(out, v);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) raise(Errc::IoFailure, "cannot write checkpoint " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) raise(Errc::IoFailure, "write failed for " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) raise(Errc::IoFailure, "cannot open checkpoint " + path.string());
  const std::string bytes{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
  const std::string origin = path.string();
  net_detail::Reader r(bytes, origin);
  if (r.str(8) != "CTCASRCK") raise(Errc::UnsupportedFormat, origin + " is not a checkpoint");
  if (const auto v = r.u32(); v != kCheckpointVersion)
    raise(Errc::UnsupportedFormat, origin + ": unsupported checkpoint version " + std::to_string(v));

  Checkpoint ck;
  try {
    ck.metadata = nlohmann::json::parse(r.str(r.u32()));
    ck.config = ck.metadata.at("model").get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    raise(Errc::CorruptFile, origin + ": bad checkpoint header: " + e.what());
  }
  ck.metadata.erase("model");

  ck.params = make_param_shapes(ck.config);
  const auto count = r.u32();
  if (count != ck.params.tensors.size())
    raise(Errc::ShapeMismatch, origin + ": " + std::to_string(count) + " tensors, config implies " +
                                   std::to_string(ck.params.tensors.size()));
  for (auto& t : ck.params.tensors) {
    const std::string name = r.str(r.u32());
    std::vector<int> shape(r.u32());
    for (int& d : shape) d = static_cast<int>(r.u32());
    if (name != t.name || shape != t.shape)
      raise(Errc::ShapeMismatch, origin + ": tensor '" + name + "' does not match expected '" + t.name + "'");
    for (double& v : t.values) v = r.f64();
  }
  if (!r.done()) raise(Errc::CorruptFile, origin + ": trailing bytes after tensors");
  return ck;
}

}  // namespace ctcasr
