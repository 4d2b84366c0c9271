#pragma once

// End-to-end glue: config -> trained run directory, checkpoint -> transcripts.

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctcasr/config.hpp"
#include "ctcasr/corpus.hpp"
#include "ctcasr/features.hpp"
#include "ctcasr/metrics.hpp"
#include "ctcasr/net.hpp"
#include "ctcasr/textmap.hpp"
#include "ctcasr/train.hpp"
#include "ctcasr/wav.hpp"

namespace ctcasr {

/// Everything needed to turn audio into text: the network plus the feature
/// and vocabulary settings it was trained with.
struct ModelBundle {
  ModelConfig config;
  ModelParams params;
  FeatureParams features;
  Vocabulary vocab;
};

inline nlohmann::json bundle_metadata(const FeatureParams& fp, const Vocabulary& vocab) {
  return {{"features", fp}, {"vocabulary", utf8::encode(vocab.chars())}};
}

inline ModelBundle load_bundle(const std::filesystem::path& checkpoint) {
  Checkpoint ck = load_checkpoint(checkpoint);
  ModelBundle b{std::move(ck.config), std::move(ck.params), {}, {}};
  try {
    b.features = ck.metadata.at("features").get<FeatureParams>();
    b.vocab = Vocabulary(ck.metadata.at("vocabulary").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    raise(Errc::CorruptFile, checkpoint.string() + ": missing feature or vocabulary metadata (" + e.what() + ")");
  }
  if (b.config.feature_bins != b.features.num_bins() || b.config.vocab_size_with_blank != b.vocab.num_classes())
    raise(Errc::CorruptFile, checkpoint.string() + ": metadata does not match the stored model shape");
  return b;
}

inline std::string transcribe(const ModelBundle& b, const Waveform& w) {
  const FeatureMatrix f = extract_features(w, b.features);
  FeatureBatch batch;
  batch.batch = 1;
  batch.frames = f.num_frames;
  batch.bins = f.num_bins;
  batch.values = f.frames;
  batch.lengths = {f.num_frames};
  const ForwardPass pass = forward(b.params, b.config, batch, ForwardMode::eval());
  return greedy_decode(pass.logits, b.vocab).front();
}

/// Loads the config's manifests, trains, and writes the run directory.
inline TrainResult train_from_config(const RunConfig& rc, const std::filesystem::path& out_dir,
                                     const TrainOptions& base_options = {}) {
  require_inputs_exist(rc, true);
  const Vocabulary vocab = rc.vocabulary();
  const Manifest train_m = load_manifest(rc.train_manifest);
  const Manifest val_m = load_manifest(rc.val_manifest);
  if (train_m.empty()) raise(Errc::EmptyManifest, "train manifest " + rc.train_manifest.string() + " is empty");
  if (val_m.empty()) raise(Errc::EmptyManifest, "validation manifest " + rc.val_manifest.string() + " is empty");
  const auto train = prepare_examples(train_m, rc.features, vocab);
  const auto val = prepare_examples(val_m, rc.features, vocab);

  TrainOptions options = base_options;
  options.checkpoint_metadata.update(bundle_metadata(rc.features, vocab));
  RunConfig snapshot = rc;
  snapshot.out_dir = out_dir;
  options.run_snapshot = snapshot.to_json();
  return train_model(rc.train, rc.model, train, val, vocab, out_dir, options);
}

struct TestSetResult {
  std::string name;
  EvalResult eval;
  std::vector<ScoreReport> grouped;
};

/// Scores one manifest and writes <name>_utterances.csv and <name>_summary.csv.
inline TestSetResult evaluate_test_set(const ModelBundle& b, const NamedManifest& set,
                                       const std::vector<GroupKey>& keys, int samples,
                                       const std::filesystem::path& out_dir) {
  Manifest m = load_manifest(set.path);
  m.name = set.name;
  TestSetResult r{set.name, evaluate(b.params, b.config, m, b.features, b.vocab, samples), {}};
  std::vector<ScoredPair> pairs;
  for (const auto& u : r.eval.report.utterances) pairs.push_back({u.id, u.reference, u.hypothesis, {}, {}, {}});
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const Utterance& src = m.utterances[i];
    pairs[i].gender = src.gender;
    pairs[i].corpus_tag = src.corpus_tag;
    pairs[i].speaker_id = src.speaker_id;
  }
  for (GroupKey k : keys) r.grouped.push_back(grouped_scores(pairs, k));
  if (r.grouped.empty()) r.grouped.push_back(r.eval.report);

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) raise(Errc::IoFailure, "cannot create " + out_dir.string() + ": " + ec.message());
  write_utterance_csv(r.eval.report, out_dir / (set.name + "_utterances.csv"));
  write_summary_csv(r.grouped, out_dir / (set.name + "_summary.csv"));
  return r;
}

}  // namespace ctcasr
