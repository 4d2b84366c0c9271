#pragma once

// JSON run configuration shared by the train, eval and sweep commands.
//
// {
//   "out_dir": "runs/toy",
//   "seed": 1,
//   "vocab_path": "vocab.txt",              (optional; default a-z, space, ')
//   "train_manifest": "data/train/manifest.csv",
//   "val_manifest": "data/val/manifest.csv",
//   "test_sets": [{"name": "spcs", "manifest": "data/test/manifest.csv"}],
//   "features": { FeatureParams fields },
//   "model":    { ModelConfig fields; feature_bins and vocab_size_with_blank
//                 are derived when omitted },
//   "train":    { TrainConfig fields }
// }
//
// Relative paths are resolved against the directory holding the config file.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctcasr/error.hpp"
#include "ctcasr/features.hpp"
#include "ctcasr/net.hpp"
#include "ctcasr/textmap.hpp"
#include "ctcasr/train.hpp"

namespace ctcasr {

inline void to_json(nlohmann::json& j, const FeatureParams& p) {
  j = nlohmann::json{{"frame_length", p.frame_length}, {"frame_step", p.frame_step},
                     {"fft_length", p.fft_length},     {"magnitude_power", p.magnitude_power},
                     {"epsilon", p.epsilon},           {"sample_rate", p.sample_rate}};
}

inline void from_json(const nlohmann::json& j, FeatureParams& p) {
  j.at("frame_length").get_to(p.frame_length);
  j.at("frame_step").get_to(p.frame_step);
  j.at("fft_length").get_to(p.fft_length);
  j.at("magnitude_power").get_to(p.magnitude_power);
  j.at("epsilon").get_to(p.epsilon);
  j.at("sample_rate").get_to(p.sample_rate);
}

struct NamedManifest {
  std::string name;
  std::filesystem::path path;
};

struct RunConfig {
  std::filesystem::path out_dir = "run";
  std::optional<std::filesystem::path> vocab_path;
  std::filesystem::path train_manifest;
  std::filesystem::path val_manifest;
  std::vector<NamedManifest> test_sets;
  FeatureParams features;
  ModelConfig model;
  TrainConfig train;

  Vocabulary vocabulary() const { return vocab_path ? load_vocabulary(*vocab_path) : Vocabulary(); }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["out_dir"] = out_dir.generic_string();
    j["seed"] = train.seed;
    if (vocab_path) j["vocab_path"] = vocab_path->generic_string();
    j["train_manifest"] = train_manifest.generic_string();
    j["val_manifest"] = val_manifest.generic_string();
    j["test_sets"] = nlohmann::json::array();
    for (const auto& t : test_sets) j["test_sets"].push_back({{"name", t.name}, {"manifest", t.path.generic_string()}});
    j["features"] = features;
    j["model"] = model;
    j["train"] = train;
    return j;
  }
};

namespace config_detail {

/// 1-based line of the first occurrence of "key" in the source text, or 0.
inline int line_of_key(const std::string& text, const std::string& key) {
  const auto pos = text.find('"' + key + '"');
  if (pos == std::string::npos) return 0;
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos), '\n'));
}

class Schema {
 public:
  Schema(const std::string& text, std::string origin) : text_(text), origin_(std::move(origin)) {}

  [[noreturn]] void fail(const std::string& key, const std::string& message) const {
    const int line = line_of_key(text_, key);
    raise(Errc::ConfigError,
          origin_ + (line ? ":" + std::to_string(line) : std::string()) + ": '" + key + "': " + message);
  }

  void only_keys(const nlohmann::json& obj, const std::string& where, std::initializer_list<const char*> allowed) const {
    if (!obj.is_object()) fail(where, "must be an object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [k, v] : obj.items())
      if (!ok.count(k)) fail(k, "unknown key in " + where);
  }

  template <typename T>
  void read(const nlohmann::json& obj, const char* key, T& dst) const {
    if (!obj.contains(key)) return;
    try {
      dst = obj.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      fail(key, std::string("wrong type (") + e.what() + ")");
    }
  }

  template <typename T>
  void read_positive(const nlohmann::json& obj, const char* key, T& dst) const {
    read(obj, key, dst);
    if (obj.contains(key) && !(dst > 0)) fail(key, "must be positive");
  }

 private:
  const std::string& text_;
  std::string origin_;
};

}  // namespace config_detail

/// Parses and validates a run config. Errors carry the file name and the line
/// of the offending key.
inline RunConfig parse_run_config(const std::string& text, const std::filesystem::path& origin) {
  using config_detail::Schema;
  const Schema schema(text, origin.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    raise(Errc::ConfigError, origin.string() + ": " + e.what());
  }
  if (!j.is_object()) raise(Errc::ConfigError, origin.string() + ":1: top level must be a JSON object");
  schema.only_keys(j, "config", {"out_dir", "seed", "vocab_path", "train_manifest", "val_manifest", "test_sets",
                                 "features", "model", "train"});

  const auto base = origin.parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_relative() ? (base / path).lexically_normal() : path;
  };

  RunConfig c;
  std::string s;
  if (j.contains("out_dir")) { schema.read(j, "out_dir", s); c.out_dir = resolve(s); }
  if (j.contains("vocab_path")) { schema.read(j, "vocab_path", s); c.vocab_path = resolve(s); }
  if (j.contains("train_manifest")) { schema.read(j, "train_manifest", s); c.train_manifest = resolve(s); }
  if (j.contains("val_manifest")) { schema.read(j, "val_manifest", s); c.val_manifest = resolve(s); }
  if (j.contains("test_sets")) {
    if (!j["test_sets"].is_array()) schema.fail("test_sets", "must be an array of {name, manifest}");
    for (const auto& t : j["test_sets"]) {
      schema.only_keys(t, "test_sets", {"name", "manifest"});
      if (!t.contains("name") || !t.contains("manifest")) schema.fail("test_sets", "each entry needs name and manifest");
      NamedManifest nm;
      schema.read(t, "name", nm.name);
      schema.read(t, "manifest", s);
      nm.path = resolve(s);
      c.test_sets.push_back(std::move(nm));
    }
  }

  if (j.contains("features")) {
    const auto& f = j["features"];
    schema.only_keys(f, "features", {"frame_length", "frame_step", "fft_length", "magnitude_power", "epsilon",
                                     "sample_rate"});
    auto& p = c.features;
    schema.read_positive(f, "frame_length", p.frame_length);
    schema.read_positive(f, "frame_step", p.frame_step);
    schema.read_positive(f, "fft_length", p.fft_length);
    schema.read_positive(f, "magnitude_power", p.magnitude_power);
    schema.read_positive(f, "epsilon", p.epsilon);
    schema.read_positive(f, "sample_rate", p.sample_rate);
    try {
      p.validate();
    } catch (const Error& e) {
      schema.fail("features", e.what());
    }
  }

  if (c.vocab_path && !std::filesystem::exists(*c.vocab_path))
    schema.fail("vocab_path", "file not found: " + c.vocab_path->string());
  const Vocabulary vocab = c.vocabulary();
  c.model.feature_bins = c.features.num_bins();
  c.model.vocab_size_with_blank = vocab.num_classes();
  if (j.contains("model")) {
    const auto& m = j["model"];
    schema.only_keys(m, "model", {"conv_filters", "conv1_kernel", "conv1_stride", "conv2_kernel", "conv2_stride",
                                  "rnn_layers", "rnn_units", "rnn_bidirectional", "dropout_rate",
                                  "vocab_size_with_blank", "feature_bins"});
    auto& mc = c.model;
    schema.read_positive(m, "conv_filters", mc.conv_filters);
    schema.read(m, "conv1_kernel", mc.conv1_kernel);
    schema.read(m, "conv1_stride", mc.conv1_stride);
    schema.read(m, "conv2_kernel", mc.conv2_kernel);
    schema.read(m, "conv2_stride", mc.conv2_stride);
    schema.read_positive(m, "rnn_layers", mc.rnn_layers);
    schema.read_positive(m, "rnn_units", mc.rnn_units);
    schema.read(m, "rnn_bidirectional", mc.rnn_bidirectional);
    schema.read(m, "dropout_rate", mc.dropout_rate);
    int declared = 0;
    schema.read(m, "feature_bins", declared);
    if (m.contains("feature_bins") && declared != c.features.num_bins())
      schema.fail("feature_bins", "is " + std::to_string(declared) + " but features produce " +
                                      std::to_string(c.features.num_bins()) + " bins");
    schema.read(m, "vocab_size_with_blank", declared);
    if (m.contains("vocab_size_with_blank") && declared != vocab.num_classes())
      schema.fail("vocab_size_with_blank", "is " + std::to_string(declared) + " but the vocabulary needs " +
                                               std::to_string(vocab.num_classes()));
    try {
      mc.validate();
    } catch (const Error& e) {
      schema.fail("model", e.what());
    }
  }

  if (j.contains("train")) {
    const auto& t = j["train"];
    schema.only_keys(t, "train", {"epochs", "batch_size", "learning_rate", "adam_beta1", "adam_beta2",
                                  "adam_epsilon", "seed", "callback_sample_count", "checkpoint_every", "clip_norm"});
    auto& tc = c.train;
    schema.read_positive(t, "epochs", tc.epochs);
    schema.read_positive(t, "batch_size", tc.batch_size);
    schema.read_positive(t, "learning_rate", tc.learning_rate);
    schema.read(t, "adam_beta1", tc.adam_beta1);
    schema.read(t, "adam_beta2", tc.adam_beta2);
    schema.read_positive(t, "adam_epsilon", tc.adam_epsilon);
    schema.read(t, "seed", tc.seed);
    schema.read(t, "callback_sample_count", tc.callback_sample_count);
    schema.read(t, "checkpoint_every", tc.checkpoint_every);
    schema.read(t, "clip_norm", tc.clip_norm);
    try {
      tc.validate();
    } catch (const Error& e) {
      schema.fail("train", e.what());
    }
  }
  schema.read(j, "seed", c.train.seed);
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(Errc::ConfigError, "cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path);
}

/// Checks that every manifest (and the vocabulary file) the config names exists.
inline void require_inputs_exist(const RunConfig& c, bool need_train) {
  auto need = [](const std::filesystem::path& p, const char* what) {
    if (p.empty()) raise(Errc::ConfigError, std::string(what) + " is not set");
    if (!std::filesystem::exists(p)) raise(Errc::ConfigError, std::string(what) + " not found: " + p.string());
  };
  if (need_train) {
    need(c.train_manifest, "train_manifest");
    need(c.val_manifest, "val_manifest");
  }
  for (const auto& t : c.test_sets) need(t.path, ("test set '" + t.name + "' manifest").c_str());
  if (c.vocab_path) need(*c.vocab_path, "vocab_path");
}

}  // namespace ctcasr
