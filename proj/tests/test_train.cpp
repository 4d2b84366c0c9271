#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <set>

#include "ctcasr/train.hpp"
#include "support.hpp"
#include "toy.hpp"

using namespace ctcasr;

namespace {

ModelParams vector_params(std::vector<double> v) {
  ModelParams p;
  p.tensors.push_back({"w", {static_cast<int>(v.size())}, std::move(v)});
  return p;
}

class ToyData : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new testing_support::TempDir("train");
    const Vocabulary vocab;
    train_ = prepare_examples(toy::corpus(dir_->path() / "train", 20, 11), toy::features(), vocab);
    val_ = prepare_examples(toy::corpus(dir_->path() / "val", 11, 12), toy::features(), vocab);
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }

  static TrainConfig quick(int epochs) {
    TrainConfig c;
    c.epochs = epochs;
    c.checkpoint_every = 2;
    c.callback_sample_count = 0;
    return c;
  }

  static testing_support::TempDir* dir_;
  static std::vector<Example> train_, val_;
};

testing_support::TempDir* ToyData::dir_ = nullptr;
std::vector<Example> ToyData::train_, ToyData::val_;

std::string strip_seconds(const std::string& csv) {
  std::string out, line;
  std::istringstream in(csv);
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + "\n";
  return out;
}

}  // namespace

TEST(Adam, FirstStepMovesByLearningRate) {
  TrainConfig cfg;
  ModelParams p = vector_params({0.0, 1.0, -2.0});
  const ModelParams g = vector_params({1.0, -3.0, 1e-3});
  OptimizerState s = OptimizerState::zeros_like(p);
  ASSERT_EQ(adam_step(p, g, s, cfg), StepStatus::applied);
  // Bias-corrected m = g, v = g^2, so each step is lr * g / (|g| + eps).
  EXPECT_NEAR(p.tensors[0].values[0], -1e-3 / (1.0 + 1e-7), 1e-15);
  EXPECT_NEAR(p.tensors[0].values[1], 1.0 + 1e-3 * 3.0 / (3.0 + 1e-7), 1e-15);
  EXPECT_NEAR(p.tensors[0].values[2], -2.0 - 1e-3 * 1e-3 / (1e-3 + 1e-7), 1e-15);
  EXPECT_EQ(s.step, 1);
}

TEST(Adam, SecondStepMatchesHandComputation) {
  TrainConfig cfg;
  ModelParams p = vector_params({0.0});
  OptimizerState s = OptimizerState::zeros_like(p);
  adam_step(p, vector_params({1.0}), s, cfg);
  adam_step(p, vector_params({-1.0}), s, cfg);
  const double m = 0.9 * 0.1 - 0.1, v = 0.999 * 0.001 + 0.001;
  const double mhat = m / (1 - 0.81), vhat = v / (1 - 0.999 * 0.999);
  EXPECT_NEAR(p.tensors[0].values[0], -1e-3 / (1 + 1e-7) - 1e-3 * mhat / (std::sqrt(vhat) + 1e-7), 1e-15);
}

TEST(Adam, SkipsNonFiniteGradient) {
  TrainConfig cfg;
  ModelParams p = vector_params({1.0, 2.0});
  OptimizerState s = OptimizerState::zeros_like(p);
  EXPECT_EQ(adam_step(p, vector_params({std::numeric_limits<double>::quiet_NaN(), 1.0}), s, cfg),
            StepStatus::skipped_non_finite);
  EXPECT_EQ(p.tensors[0].values, (std::vector<double>{1.0, 2.0}));
  EXPECT_EQ(s.step, 0);
}

TEST(ClipGlobalNorm, RescalesOnlyAboveThreshold) {
  ModelParams g = vector_params({3.0, 4.0});
  EXPECT_DOUBLE_EQ(clip_global_norm(g, 1.0), 5.0);
  EXPECT_NEAR(g.tensors[0].values[0], 0.6, 1e-15);
  EXPECT_NEAR(g.tensors[0].values[1], 0.8, 1e-15);
  ModelParams h = vector_params({3.0, 4.0});
  clip_global_norm(h, 10.0);
  EXPECT_EQ(h.tensors[0].values, (std::vector<double>{3.0, 4.0}));
}

TEST_F(ToyData, BatchesCoverEveryExampleOnce) {
  const auto batches = make_batches(train_, 8, 1, 1, true);
  ASSERT_EQ(batches.size(), 3u);
  EXPECT_EQ(batches.back().features.batch, 4);
  std::multiset<std::size_t> seen;
  for (const auto& b : batches)
    for (std::size_t k = 0; k < b.indices.size(); ++k) {
      seen.insert(b.indices[k]);
      EXPECT_EQ(b.labels[k], train_[b.indices[k]].labels);
      EXPECT_EQ(b.features.lengths[k], train_[b.indices[k]].features.num_frames);
    }
  EXPECT_EQ(seen.size(), 20u);
  EXPECT_EQ(std::set<std::size_t>(seen.begin(), seen.end()).size(), 20u);
}

TEST_F(ToyData, ShuffleDependsOnSeedAndEpoch) {
  auto order = [&](std::uint64_t seed, int epoch, bool shuffle) {
    std::vector<std::size_t> out;
    for (const auto& b : make_batches(train_, 8, seed, epoch, shuffle)) out.insert(out.end(), b.indices.begin(), b.indices.end());
    return out;
  };
  EXPECT_EQ(order(1, 1, true), order(1, 1, true));
  EXPECT_NE(order(1, 1, true), order(1, 2, true));
  EXPECT_NE(order(1, 1, true), order(2, 1, true));
  std::vector<std::size_t> identity(20);
  std::iota(identity.begin(), identity.end(), std::size_t{0});
  EXPECT_EQ(order(1, 1, false), identity);
}

TEST_F(ToyData, EvaluationIndependentOfBatchSize) {
  const ModelConfig cfg = toy::model();
  const ModelParams p = init_params(cfg, 5);
  const Vocabulary vocab;
  const EvalResult one = evaluate(p, cfg, val_, vocab, 0, 1);
  const EvalResult eight = evaluate(p, cfg, val_, vocab, 0, 8);
  EXPECT_NEAR(one.mean_loss, eight.mean_loss, 1e-9);
  EXPECT_EQ(one.report.totals, eight.report.totals);
  for (std::size_t i = 0; i < val_.size(); ++i)
    EXPECT_EQ(one.report.utterances[i].hypothesis, eight.report.utterances[i].hypothesis);
}

TEST_F(ToyData, TrainingWritesArtifactsAndReducesLoss) {
  testing_support::TempDir out("run");
  const TrainResult r = train_model(quick(4), toy::model(), train_, val_, Vocabulary(), out.path());
  ASSERT_EQ(r.history.size(), 4u);
  EXPECT_LT(r.history.back().train_loss, r.history.front().train_loss);
  EXPECT_TRUE(std::filesystem::exists(out / "model.ckpt"));
  EXPECT_TRUE(std::filesystem::exists(out / "run_config.json"));
  EXPECT_TRUE(std::filesystem::exists(out.path() / "checkpoints" / "epoch_0002.ckpt"));
  EXPECT_TRUE(std::filesystem::exists(out.path() / "checkpoints" / "epoch_0004.ckpt"));
  const std::string history = testing_support::read_text(out / "history.csv");
  EXPECT_EQ(history.substr(0, history.find('\n')), kHistoryHeader);
  EXPECT_EQ(std::count(history.begin(), history.end(), '\n'), 5);
  const Checkpoint ck = load_checkpoint(out / "model.ckpt");
  for (std::size_t i = 0; i < r.params.tensors.size(); ++i)
    EXPECT_EQ(ck.params.tensors[i].values, r.params.tensors[i].values);
}

TEST_F(ToyData, SameSeedSameHistory) {
  testing_support::TempDir a("ra"), b("rb"), c("rc");
  train_model(quick(2), toy::model(), train_, val_, Vocabulary(), a.path());
  train_model(quick(2), toy::model(), train_, val_, Vocabulary(), b.path());
  TrainConfig other = quick(2);
  other.seed = 2;
  train_model(other, toy::model(), train_, val_, Vocabulary(), c.path());
  const auto ha = strip_seconds(testing_support::read_text(a / "history.csv"));
  EXPECT_EQ(ha, strip_seconds(testing_support::read_text(b / "history.csv")));
  EXPECT_NE(ha, strip_seconds(testing_support::read_text(c / "history.csv")));
}

TEST_F(ToyData, EpochCallbackCanStopEarly) {
  testing_support::TempDir out("stop");
  TrainOptions opt;
  int calls = 0;
  opt.on_epoch = [&](const EpochRecord& e, const ModelParams&) {
    ++calls;
    return e.epoch < 2;
  };
  const TrainResult r = train_model(quick(10), toy::model(), train_, val_, Vocabulary(), out.path(), opt);
  EXPECT_EQ(calls, 2);
  EXPECT_EQ(r.history.size(), 2u);
  EXPECT_TRUE(std::filesystem::exists(out / "model.ckpt"));
}

TEST_F(ToyData, DivergenceIsReportedAfterSavingHistory) {
  testing_support::TempDir out("nan");
  TrainConfig cfg = quick(5);
  cfg.learning_rate = 1e300;
  cfg.clip_norm = 0;
  try {
    train_model(cfg, toy::model(), train_, val_, Vocabulary(), out.path());
    FAIL() << "expected divergence";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::DivergedLoss);
  }
  const std::string history = testing_support::read_text(out / "history.csv");
  EXPECT_NE(history.find("nan"), std::string::npos);
}

TEST_F(ToyData, VocabularyMismatchRejected) {
  testing_support::TempDir out("vm");
  try {
    train_model(quick(1), toy::model(), train_, val_, Vocabulary(std::string_view("abc")), out.path());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ShapeMismatch);
  }
}

TEST(Samples, TargetPredictionPairs) {
  EXPECT_EQ(format_samples({{"ba re", "ba e"}}), "Target: ba re\nPrediction: ba e\n");
}
