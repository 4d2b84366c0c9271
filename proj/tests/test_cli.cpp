#include <gtest/gtest.h>

#include <sstream>

#include "ctcasr/cli.hpp"
#include "support.hpp"
#include "toy.hpp"

using namespace ctcasr;
using testing_support::read_text;
using testing_support::TempDir;
using testing_support::write_text;

namespace {

struct CliRun {
  int code;
  std::string out, err;
};

CliRun cli(std::vector<std::string> args) {
  args.insert(args.begin(), "ctcasr");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

Errc config_error(const std::string& text, std::string* message = nullptr) {
  try {
    parse_run_config(text, "/cfg/run.json");
  } catch (const Error& e) {
    if (message) *message = e.what();
    return e.code();
  }
  ADD_FAILURE() << "config accepted";
  return Errc::InvalidArgument;
}

}  // namespace

TEST(RunConfig, ResolvesPathsAndDerivesShapes) {
  const RunConfig c = parse_run_config(
      R"({"out_dir": "runs/a", "train_manifest": "d/train.csv", "val_manifest": "/abs/val.csv",
          "test_sets": [{"name": "spcs", "manifest": "../t.csv"}],
          "features": {"fft_length": 128, "frame_length": 128, "frame_step": 64, "sample_rate": 8000},
          "model": {"conv_filters": 4}, "train": {"epochs": 3}, "seed": 9})",
      "/cfg/run.json");
  EXPECT_EQ(c.out_dir, std::filesystem::path("/cfg/runs/a"));
  EXPECT_EQ(c.train_manifest, std::filesystem::path("/cfg/d/train.csv"));
  EXPECT_EQ(c.val_manifest, std::filesystem::path("/abs/val.csv"));
  ASSERT_EQ(c.test_sets.size(), 1u);
  EXPECT_EQ(c.test_sets[0].name, "spcs");
  EXPECT_EQ(c.test_sets[0].path, std::filesystem::path("/t.csv"));
  EXPECT_EQ(c.model.feature_bins, 65);
  EXPECT_EQ(c.model.vocab_size_with_blank, 30);
  EXPECT_EQ(c.model.conv_filters, 4);
  EXPECT_EQ(c.model.rnn_units, 256);
  EXPECT_EQ(c.train.epochs, 3);
  EXPECT_EQ(c.train.seed, 9u);
}

TEST(RunConfig, DefaultsMatchReferenceSetup) {
  const RunConfig c = parse_run_config("{}", "x.json");
  EXPECT_EQ(c.features.frame_length, 256);
  EXPECT_EQ(c.features.frame_step, 160);
  EXPECT_EQ(c.features.fft_length, 384);
  EXPECT_EQ(c.model.feature_bins, 193);
  EXPECT_EQ(c.model.conv_filters, 16);
  EXPECT_EQ(c.model.rnn_layers, 3);
  EXPECT_EQ(c.train.learning_rate, 1e-3);
}

TEST(RunConfig, UnknownKeyReportsLine) {
  std::string msg;
  EXPECT_EQ(config_error("{\n  \"train\": {\n    \"epochs\": 2,\n    \"epoch_count\": 3\n  }\n}", &msg),
            Errc::ConfigError);
  EXPECT_NE(msg.find("run.json:4"), std::string::npos) << msg;
  EXPECT_NE(msg.find("epoch_count"), std::string::npos) << msg;
}

TEST(RunConfig, SyntaxErrorReportsPosition) {
  std::string msg;
  EXPECT_EQ(config_error("{\n  \"seed\": 1,,\n}", &msg), Errc::ConfigError);
  EXPECT_NE(msg.find("line 2"), std::string::npos) << msg;
}

TEST(RunConfig, SchemaViolations) {
  EXPECT_EQ(config_error(R"({"train": {"epochs": "ten"}})"), Errc::ConfigError);
  EXPECT_EQ(config_error(R"({"train": {"batch_size": 0}})"), Errc::ConfigError);
  EXPECT_EQ(config_error(R"({"model": {"feature_bins": 100}})"), Errc::ConfigError);
  EXPECT_EQ(config_error(R"({"model": {"dropout_rate": 1.5}})"), Errc::ConfigError);
  EXPECT_EQ(config_error(R"({"features": {"frame_step": 999}})"), Errc::ConfigError);
  EXPECT_EQ(config_error(R"({"test_sets": [{"name": "x"}]})"), Errc::ConfigError);
  EXPECT_EQ(config_error(R"({"vocab_path": "missing_vocab.txt"})"), Errc::ConfigError);
  EXPECT_EQ(config_error("[1, 2]"), Errc::ConfigError);
}

TEST(Svg, WellFormedWithOnePolylinePerSeries) {
  svg::Chart c{"t <&>", "epoch", "loss", {}};
  c.series.push_back({"a", {{1, 2}, {2, 1}, {3, std::nan("")}}, false, 0});
  c.series.push_back({"b", {{1, 3}, {2, 2}}, true, 1});
  const std::string s = svg::render(c);
  EXPECT_EQ(s.rfind("<?xml", 0), 0u);
  EXPECT_NE(s.find("t &lt;&amp;&gt;"), std::string::npos);
  std::size_t count = 0;
  for (auto p = s.find("<polyline"); p != std::string::npos; p = s.find("<polyline", p + 1)) ++count;
  EXPECT_EQ(count, 2u);
  EXPECT_NE(s.find("stroke-dasharray"), std::string::npos);
  EXPECT_EQ(s.find("nan"), std::string::npos);
  EXPECT_NE(s.find("</svg>"), std::string::npos);
}

TEST(Sweep, IntListParsing) {
  EXPECT_EQ(parse_int_list("16,32, 64"), (std::vector<int>{16, 32, 64}));
  EXPECT_THROW(parse_int_list("4,x"), Error);
  EXPECT_THROW(parse_int_list("4,-1"), Error);
  EXPECT_THROW(parse_int_list(""), Error);
}

TEST(Sweep, ReportRoundTripsAndRecordsFailures) {
  TempDir dir("rep");
  std::vector<SweepRun> runs(2);
  runs[0].filters = 4;
  runs[0].ok = true;
  runs[0].history = {{1, 10.0, 9.0, 80.0, 0.1, 0}, {2, 8.0, 7.5, 40.0, 0.1, 0}, {3, 7.0, 7.6, 50.0, 0.1, 0}};
  runs[1].filters = 8;
  runs[1].error = "DivergedLoss: boom";
  runs[1].history = {{1, 12.0, 11.0, 90.0, 0.1, 0}};
  const auto summary = write_sweep_report(runs, dir.path());
  ASSERT_EQ(summary.size(), 2u);
  EXPECT_EQ(summary[0].best_epoch, 2);
  EXPECT_DOUBLE_EQ(summary[0].best_val_wer, 40.0);
  EXPECT_EQ(summary[1].status, "failed: DivergedLoss: boom");
  for (const char* f : {"combined.csv", "loss.svg", "wer.svg", "summary.csv"}) EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;

  const auto back = read_history_table(dir / "combined.csv");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].filters, 4);
  ASSERT_EQ(back[0].history.size(), 3u);
  EXPECT_DOUBLE_EQ(back[0].history[1].val_wer, 40.0);
  EXPECT_EQ(read_text(dir / "summary.csv").substr(0, 13), "filters,statu");
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(cli({}).code, kExitUsage);
  EXPECT_EQ(cli({"--help"}).code, kExitOk);
  EXPECT_EQ(cli({"bogus"}).code, kExitUsage);
  EXPECT_EQ(cli({"synth", "--out", "/tmp/never", "--n", "0"}).code, kExitUsage);
  EXPECT_EQ(cli({"sweep", "--config", "x.json", "--filters", "a,b"}).code, kExitUsage);
  EXPECT_EQ(cli({"train"}).code, kExitUsage);
}

TEST(Cli, MissingManifestIsNamed) {
  TempDir dir("cfg");
  write_text(dir / "run.json", toy::run_config_json("nowhere/train.csv", "nowhere/val.csv", 1, "out"));
  const CliRun r = cli({"train", "--config", (dir / "run.json").string()});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("nowhere/train.csv"), std::string::npos) << r.err;
}

TEST(Cli, BrokenCheckpointIsIoError) {
  TempDir dir("bad");
  write_text(dir / "m.ckpt", "garbage");
  EXPECT_EQ(cli({"decode", "--checkpoint", (dir / "m.ckpt").string(), "--wav", "x.wav"}).code, kExitIo);
}

TEST(Cli, EndToEnd) {
  TempDir dir("e2e");
  const auto p = [&](const std::string& s) { return (dir / s).string(); };
  ASSERT_EQ(cli({"synth", "--out", p("train"), "--n", "16", "--seed", "1"}).code, 0);
  ASSERT_EQ(cli({"synth", "--out", p("val"), "--n", "6", "--seed", "2"}).code, 0);
  ASSERT_EQ(cli({"synth", "--out", p("other"), "--n", "6", "--seed", "3", "--corpus-tag", "other"}).code, 0);
  write_text(dir / "run.json", toy::run_config_json("train/manifest.csv", "val/manifest.csv", 2, "run",
                                                    R"({"name": "val", "manifest": "val/manifest.csv"})"));

  const CliRun tr = cli({"train", "--config", p("run.json")});
  ASSERT_EQ(tr.code, 0) << tr.err;
  const std::string hist = read_text(dir / "run/history.csv");
  EXPECT_EQ(std::count(hist.begin(), hist.end(), '\n'), 3);

  const Checkpoint ck = load_checkpoint(dir / "run/model.ckpt");
  EXPECT_EQ(ck.metadata.at("features").at("fft_length"), 128);
  EXPECT_EQ(ck.metadata.at("vocabulary"), "abcdefghijklmnopqrstuvwxyz '");

  const CliRun ev = cli({"eval", "--checkpoint", p("run/model.ckpt"), "--config", p("run.json"), "--test",
                         "other=" + p("other/manifest.csv"), "--group", "gender", "--group", "corpus_tag",
                         "--samples", "1", "--out", p("eval")});
  ASSERT_EQ(ev.code, 0) << ev.err;
  EXPECT_NE(ev.out.find("Target: "), std::string::npos);
  EXPECT_NE(ev.out.find("Prediction: "), std::string::npos);
  for (const char* f : {"val_utterances.csv", "val_summary.csv", "other_utterances.csv", "other_summary.csv"})
    EXPECT_TRUE(std::filesystem::exists(dir.path() / "eval" / f)) << f;
  const std::string summary = read_text(dir.path() / "eval" / "other_summary.csv");
  EXPECT_NE(summary.find("\ngender,female,"), std::string::npos);
  EXPECT_NE(summary.find("\ncorpus_tag,other,"), std::string::npos);

  const CliRun dec = cli({"decode", "--checkpoint", p("run/model.ckpt"), "--wav", p("val/utt_00000.wav")});
  EXPECT_EQ(dec.code, 0) << dec.err;
  EXPECT_EQ(std::count(dec.out.begin(), dec.out.end(), '\n'), 1);
  EXPECT_EQ(cli({"decode", "--checkpoint", p("run/model.ckpt"), "--wav", p("nope.wav")}).code, kExitIo);

  const CliRun rep = cli({"report", "--input", p("run/history.csv"), "--out", p("rep"), "--filters", "8"});
  EXPECT_EQ(rep.code, 0) << rep.err;
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "rep" / "wer.svg"));
}
