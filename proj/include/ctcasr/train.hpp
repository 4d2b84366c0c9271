#pragma once

// Batching, Adam, the epoch loop with its per-epoch validation callback, and
// evaluation.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ctcasr/corpus.hpp"
#include "ctcasr/ctc.hpp"
#include "ctcasr/error.hpp"
#include "ctcasr/features.hpp"
#include "ctcasr/log.hpp"
#include "ctcasr/metrics.hpp"
#include "ctcasr/net.hpp"
#include "ctcasr/random.hpp"
#include "ctcasr/textmap.hpp"

namespace ctcasr {

struct TrainConfig {
  int epochs = 150;
  int batch_size = 8;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-7;
  std::uint64_t seed = 1;
  int callback_sample_count = 2;
  int checkpoint_every = 10;  // epochs; 0 keeps only the final checkpoint
  double clip_norm = 500.0;   // global gradient norm; <= 0 disables

  void validate() const {
    if (epochs < 1) raise(Errc::InvalidArgument, "epochs must be >= 1");
    if (batch_size < 1) raise(Errc::InvalidArgument, "batch_size must be >= 1");
    if (!(learning_rate > 0)) raise(Errc::InvalidArgument, "learning_rate must be positive");
    if (!(adam_beta1 > 0 && adam_beta1 < 1) || !(adam_beta2 > 0 && adam_beta2 < 1))
      raise(Errc::InvalidArgument, "adam betas must lie in (0, 1)");
    if (!(adam_epsilon > 0)) raise(Errc::InvalidArgument, "adam_epsilon must be positive");
    if (callback_sample_count < 0 || checkpoint_every < 0)
      raise(Errc::InvalidArgument, "callback_sample_count and checkpoint_every must be >= 0");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"learning_rate", c.learning_rate},
                     {"adam_beta1", c.adam_beta1},
                     {"adam_beta2", c.adam_beta2},
                     {"adam_epsilon", c.adam_epsilon},
                     {"seed", c.seed},
                     {"callback_sample_count", c.callback_sample_count},
                     {"checkpoint_every", c.checkpoint_every},
                     {"clip_norm", c.clip_norm}};
}

/// One utterance after the feature and label pipeline.
struct Example {
  std::string id;
  FeatureMatrix features;
  LabelSequence labels;
  std::string transcript;
  Gender gender = Gender::unknown;
  std::string corpus_tag;
  std::string speaker_id;
};

inline Example prepare_example(const Utterance& u, const FeatureParams& fp, const Vocabulary& vocab) {
  Example e;
  e.id = u.audio_path.stem().string();
  e.features = extract_features(read_wav(u.audio_path), fp);
  e.labels = encode_text(u.transcript, vocab);
  e.transcript = u.transcript;
  e.gender = u.gender;
  e.corpus_tag = u.corpus_tag;
  e.speaker_id = u.speaker_id;
  return e;
}

inline std::vector<Example> prepare_examples(const Manifest& m, const FeatureParams& fp, const Vocabulary& vocab) {
  std::vector<Example> out;
  out.reserve(m.size());
  for (const auto& u : m.utterances) out.push_back(prepare_example(u, fp, vocab));
  return out;
}

struct Batch {
  FeatureBatch features;               // B x T_max x F, zero padded
  std::vector<LabelSequence> labels;   // true labels per item
  std::vector<int> label_lengths;
  std::vector<std::size_t> indices;    // positions in the source example list
  std::vector<std::string> ids;
};

inline Batch assemble_batch(const std::vector<Example>& examples, const std::vector<std::size_t>& members) {
  Batch b;
  const int bins = examples[members.front()].features.num_bins;
  int t_max = 0;
  for (auto i : members) t_max = std::max(t_max, examples[i].features.num_frames);
  b.features.batch = static_cast<int>(members.size());
  b.features.frames = t_max;
  b.features.bins = bins;
  b.features.values.assign(members.size() * static_cast<std::size_t>(t_max) * bins, 0.0);
  for (std::size_t k = 0; k < members.size(); ++k) {
    const Example& e = examples[members[k]];
    if (e.features.num_bins != bins) raise(Errc::ShapeMismatch, "examples in one batch differ in bin count");
    std::copy(e.features.frames.begin(), e.features.frames.end(),
              b.features.values.begin() + static_cast<std::ptrdiff_t>(k * t_max * bins));
    b.features.lengths.push_back(e.features.num_frames);
    b.labels.push_back(e.labels);
    b.label_lengths.push_back(static_cast<int>(e.labels.size()));
    b.indices.push_back(members[k]);
    b.ids.push_back(e.id);
  }
  return b;
}

/// Shuffles deterministically per (seed, epoch) when asked, then cuts
/// consecutive batches; the last one may be short.
inline std::vector<Batch> make_batches(const std::vector<Example>& examples, int batch_size, std::uint64_t seed,
                                       int epoch, bool shuffle) {
  if (batch_size < 1) raise(Errc::InvalidArgument, "batch_size must be >= 1");
  if (examples.empty()) raise(Errc::EmptyManifest, "no examples to batch");
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle) {
    Rng rng(derive_seed(seed, {0xba7c, static_cast<std::uint64_t>(epoch)}));
    rng.shuffle(order);
  }
  std::vector<Batch> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    out.push_back(assemble_batch(examples, {order.begin() + static_cast<std::ptrdiff_t>(start),
                                            order.begin() + static_cast<std::ptrdiff_t>(end)}));
  }
  return out;
}

/// Manifest form: runs `pipeline` on every utterance first.
inline std::vector<Batch> make_batches(const Manifest& m, const std::function<Example(const Utterance&)>& pipeline,
                                       int batch_size, std::uint64_t seed, int epoch, bool shuffle) {
  if (m.empty()) raise(Errc::EmptyManifest, "manifest '" + m.name + "' is empty");
  std::vector<Example> examples;
  for (const auto& u : m.utterances) examples.push_back(pipeline(u));
  return make_batches(examples, batch_size, seed, epoch, shuffle);
}

// ---------------------------------------------------------------------------
// Optimizer

struct OptimizerState {
  ModelParams first_moment;
  ModelParams second_moment;
  std::int64_t step = 0;

  static OptimizerState zeros_like(const ModelParams& p) {
    OptimizerState s;
    s.first_moment = p;
    s.first_moment.set_zero();
    s.second_moment = s.first_moment;
    return s;
  }
};

enum class StepStatus { applied, skipped_non_finite };

/// Bias-corrected Adam. A gradient containing NaN or inf leaves params and
/// state untouched.
inline StepStatus adam_step(ModelParams& params, const ModelParams& grads, OptimizerState& state,
                            const TrainConfig& cfg) {
  if (grads.tensors.size() != params.tensors.size() || state.first_moment.tensors.size() != params.tensors.size())
    raise(Errc::ShapeMismatch, "optimizer tensors do not match parameters");
  for (std::size_t i = 0; i < params.tensors.size(); ++i)
    if (grads.tensors[i].size() != params.tensors[i].size())
      raise(Errc::ShapeMismatch, "gradient for " + params.tensors[i].name + " has the wrong size");
  if (!grads.all_finite()) return StepStatus::skipped_non_finite;

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, t), c2 = 1.0 - std::pow(b2, t);
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    auto& theta = params.tensors[i].values;
    auto& m = state.first_moment.tensors[i].values;
    auto& v = state.second_moment.tensors[i].values;
    const auto& g = grads.tensors[i].values;
    for (std::size_t k = 0; k < theta.size(); ++k) {
      m[k] = b1 * m[k] + (1.0 - b1) * g[k];
      v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
      theta[k] -= cfg.learning_rate * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg.adam_epsilon);
    }
  }
  return StepStatus::applied;
}

/// Rescales grads so their global L2 norm is at most max_norm; returns the
/// norm before clipping.
inline double clip_global_norm(ModelParams& grads, double max_norm) {
  double ss = 0.0;
  for (const auto& t : grads.tensors)
    for (double v : t.values) ss += v * v;
  const double norm = std::sqrt(ss);
  if (max_norm > 0 && norm > max_norm && std::isfinite(norm)) {
    const double scale = max_norm / norm;
    for (auto& t : grads.tensors)
      for (double& v : t.values) v *= scale;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalResult {
  double mean_loss = 0.0;  // over feasible items
  int infeasible = 0;
  ScoreReport report;
  std::vector<std::pair<std::string, std::string>> samples;  // (target, prediction)
};

/// Eval-mode forward, greedy decoding and WER over all examples. Loss is
/// averaged per item, so the result does not depend on batch_size.
inline EvalResult evaluate(const ModelParams& params, const ModelConfig& cfg, const std::vector<Example>& examples,
                           const Vocabulary& vocab, int sample_count, int batch_size = 8) {
  if (examples.empty()) raise(Errc::EmptyManifest, "nothing to evaluate");
  std::vector<std::string> predictions(examples.size());
  double loss_sum = 0.0;
  int feasible = 0;
  EvalResult out;
  for (const Batch& batch : make_batches(examples, batch_size, 0, 0, false)) {
    ForwardPass pass = forward(params, cfg, batch.features, ForwardMode::eval());
    const CtcResult ctc = ctc_loss(pass.logits, batch.labels);
    for (std::size_t k = 0; k < ctc.loss.size(); ++k) {
      if (ctc.infeasible[k]) { ++out.infeasible; continue; }
      loss_sum += ctc.loss[k];
      ++feasible;
    }
    const auto decoded = greedy_decode(pass.logits, vocab);
    for (std::size_t k = 0; k < decoded.size(); ++k) predictions[batch.indices[k]] = decoded[k];
  }
  out.mean_loss = feasible ? loss_sum / feasible : std::numeric_limits<double>::quiet_NaN();

  std::vector<ScoredPair> pairs;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const Example& e = examples[i];
    pairs.push_back({e.id, e.transcript, predictions[i], e.gender, e.corpus_tag, e.speaker_id});
  }
  out.report = wer(pairs);
  for (std::size_t i = 0; i < examples.size() && static_cast<int>(i) < sample_count; ++i)
    out.samples.emplace_back(examples[i].transcript, predictions[i]);
  return out;
}

inline EvalResult evaluate(const ModelParams& params, const ModelConfig& cfg, const Manifest& m,
                           const FeatureParams& fp, const Vocabulary& vocab, int sample_count, int batch_size = 8) {
  if (m.empty()) raise(Errc::EmptyManifest, "manifest '" + m.name + "' is empty");
  return evaluate(params, cfg, prepare_examples(m, fp, vocab), vocab, sample_count, batch_size);
}

/// Table-style listing: "Target: ..." / "Prediction: ..." per pair.
inline std::string format_samples(const std::vector<std::pair<std::string, std::string>>& samples) {
  std::string out;
  for (const auto& [target, prediction] : samples) out += "Target: " + target + "\nPrediction: " + prediction + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Training loop

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_wer = 0.0;
  double seconds = 0.0;
  int infeasible = 0;  // train items skipped this epoch for lack of alignments
};

inline constexpr const char* kHistoryHeader = "epoch,train_loss,val_loss,val_wer,seconds";

inline std::string format_history_row(const EpochRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%d,%.10g,%.10g,%.4f,%.3f", r.epoch, r.train_loss, r.val_loss, r.val_wer,
                r.seconds);
  return buf;
}

struct TrainOptions {
  /// Called after every epoch; returning false ends training after that epoch.
  std::function<bool(const EpochRecord&, const ModelParams&)> on_epoch;
  /// Extra keys stored in every checkpoint header (features, vocabulary, ...).
  nlohmann::json checkpoint_metadata = nlohmann::json::object();
  /// Written to out_dir/run_config.json alongside the train/model sections.
  nlohmann::json run_snapshot = nlohmann::json::object();
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochRecord> history;
};

/// Runs cfg.epochs epochs of forward -> CTC -> backward -> clip -> Adam, then
/// validation. Writes history.csv (one row per epoch, flushed as it goes),
/// checkpoints/epoch_NNNN.ckpt every checkpoint_every epochs, model.ckpt at
/// the end, and run_config.json. Throws DivergedLoss if the training loss
/// becomes NaN, after saving the partial history.
inline TrainResult train_model(const TrainConfig& cfg, const ModelConfig& model_cfg,
                               const std::vector<Example>& train, const std::vector<Example>& val,
                               const Vocabulary& vocab, const std::filesystem::path& out_dir,
                               const TrainOptions& options = {}) {
  cfg.validate();
  model_cfg.validate();
  if (train.empty() || val.empty()) raise(Errc::EmptyManifest, "training and validation sets must be non-empty");
  if (model_cfg.vocab_size_with_blank != vocab.num_classes())
    raise(Errc::ShapeMismatch, "model emits " + std::to_string(model_cfg.vocab_size_with_blank) +
                                   " classes but the vocabulary needs " + std::to_string(vocab.num_classes()));

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) raise(Errc::IoFailure, "cannot create " + out_dir.string() + ": " + ec.message());
  {
    nlohmann::json snapshot = options.run_snapshot;
    snapshot["train"] = cfg;
    snapshot["model"] = model_cfg;
    std::ofstream f(out_dir / "run_config.json", std::ios::trunc);
    if (!f) raise(Errc::IoFailure, "cannot write run_config.json in " + out_dir.string());
    f << snapshot.dump(2) << '\n';
  }
  std::ofstream history_csv(out_dir / "history.csv", std::ios::trunc);
  if (!history_csv) raise(Errc::IoFailure, "cannot write history.csv in " + out_dir.string());
  history_csv << kHistoryHeader << '\n' << std::flush;

  TrainResult result;
  result.params = init_params(model_cfg, cfg.seed);
  OptimizerState opt = OptimizerState::zeros_like(result.params);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    double loss_sum = 0.0;
    int loss_items = 0;
    const auto batches = make_batches(train, cfg.batch_size, cfg.seed, epoch, true);
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const Batch& batch = batches[bi];
      ForwardPass pass = forward(result.params, model_cfg, batch.features,
                                 ForwardMode::training(derive_seed(cfg.seed, {0xd7, static_cast<std::uint64_t>(epoch),
                                                                              static_cast<std::uint64_t>(bi)})));
      CtcResult ctc = ctc_loss(pass.logits, batch.labels);
      const int feasible = batch.features.batch - ctc.num_infeasible();
      rec.infeasible += ctc.num_infeasible();
      if (feasible == 0) continue;
      for (std::size_t k = 0; k < ctc.loss.size(); ++k)
        if (!ctc.infeasible[k]) loss_sum += ctc.loss[k];
      loss_items += feasible;
      for (double& g : ctc.d_logits.values) g /= feasible;
      ModelParams grads = backward(pass.tape, result.params, model_cfg, ctc.d_logits);
      clip_global_norm(grads, cfg.clip_norm);
      if (adam_step(result.params, grads, opt, cfg) == StepStatus::skipped_non_finite)
        log::info("epoch ", epoch, " batch ", bi, ": non-finite gradient, step skipped");
    }
    if (rec.infeasible > 0)
      log::info("epoch ", epoch, ": ", rec.infeasible, " training items have no valid alignment and were skipped");
    rec.train_loss = loss_items ? loss_sum / loss_items : std::numeric_limits<double>::quiet_NaN();

    if (std::isnan(rec.train_loss)) {
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      rec.val_loss = std::numeric_limits<double>::quiet_NaN();
      rec.val_wer = 100.0;
      result.history.push_back(rec);
      history_csv << format_history_row(rec) << '\n' << std::flush;
      raise(Errc::DivergedLoss, "training loss became NaN at epoch " + std::to_string(epoch));
    }

    const EvalResult ev = evaluate(result.params, model_cfg, val, vocab, cfg.callback_sample_count, cfg.batch_size);
    rec.val_loss = ev.mean_loss;
    rec.val_wer = ev.report.error_rate;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.history.push_back(rec);
    history_csv << format_history_row(rec) << '\n' << std::flush;

    char line[160];
    std::snprintf(line, sizeof line, "epoch %d/%d  train_loss %.4f  val_loss %.4f  val_wer %.2f%%  (%.1fs)", epoch,
                  cfg.epochs, rec.train_loss, rec.val_loss, rec.val_wer, rec.seconds);
    log::info(line);
    if (!ev.samples.empty()) log::info(format_samples(ev.samples));

    if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0) {
      std::filesystem::create_directories(out_dir / "checkpoints", ec);
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%04d.ckpt", epoch);
      save_checkpoint(out_dir / "checkpoints" / name, model_cfg, result.params, options.checkpoint_metadata);
    }
    if (options.on_epoch && !options.on_epoch(rec, result.params)) break;
  }
  save_checkpoint(out_dir / "model.ckpt", model_cfg, result.params, options.checkpoint_metadata);
  return result;
}

}  // namespace ctcasr
