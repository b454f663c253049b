#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "bridgefuse/serialize.hpp"
#include "bridgefuse/training.hpp"
#include "oracles.hpp"

using namespace bridgefuse;
namespace fs = std::filesystem;

namespace {

ModelConfig TinyConfig() {
  ModelConfig c;
  c.fusion.d_model = 8;
  c.fusion.n_heads_self = c.fusion.n_heads_cross = 2;
  c.fusion.n_bridge_tokens = 3;
  return c;
}

std::vector<UtteranceRecord> TinyData(int n = 100) {
  SynthSpec spec;
  spec.n_utterances = n;
  spec.d = 8;
  spec.max_len = 6;
  return GenerateSynthetic(spec);
}

TrainConfig TinyTrain(int epochs = 3) {
  TrainConfig t;
  t.learning_rate = 1e-2;
  t.epochs_per_fold = epochs;
  t.batch_size = 8;
  return t;
}

fs::path TempDir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("bridgefuse_test_training_" + name);
  fs::remove_all(dir);
  return dir;
}

void CheckSameReport(const EvalReport& a, const EvalReport& b) {
  CHECK(a.war == b.war);
  CHECK(a.uar == b.uar);
  CHECK(a.ccc_valence == b.ccc_valence);
  CHECK(a.ccc_arousal == b.ccc_arousal);
  CHECK(a.confusion == b.confusion);
  CHECK(a.loss == b.loss);
}

void CheckSameFold(const FoldResult& a, const FoldResult& b) {
  CHECK(a.best_epoch == b.best_epoch);
  CheckSameReport(a.test, b.test);
  REQUIRE(a.epochs.size() == b.epochs.size());
  for (std::size_t e = 0; e < a.epochs.size(); ++e) {
    CHECK(a.epochs[e].train_loss == b.epochs[e].train_loss);
    CHECK(a.epochs[e].val_loss == b.epochs[e].val_loss);
    CHECK(a.epochs[e].decision.masked == b.epochs[e].decision.masked);
  }
}

}  // namespace

TEST_CASE("adam update") {
  AdamConfig cfg{0.01};
  // Constant gradient: every bias-corrected step is lr * g / (|g| + eps).
  Eigen::VectorXd x = Eigen::VectorXd::Zero(3);
  const Eigen::Vector3d g(2.0, -0.5, 1e-3);
  AdamMoments m;
  for (int i = 0; i < 5; ++i) {
    const Eigen::VectorXd prev = x;
    AdamUpdate(x, g, m, cfg);
    for (int j = 0; j < 3; ++j) {
      const double expect = -cfg.learning_rate * g[j] / (std::abs(g[j]) + cfg.eps);
      CHECK(std::abs((x[j] - prev[j]) - expect) < 1e-12);
    }
  }
  CHECK(m.step == 5);

  // Zero gradient from rest leaves the parameter alone.
  Eigen::VectorXd y = Eigen::VectorXd::Constant(2, 0.7);
  AdamMoments my;
  AdamUpdate(y, Eigen::VectorXd::Zero(2), my, cfg);
  CHECK((y.array() == 0.7).all());

  // Minimises x^2.
  Eigen::VectorXd z = Eigen::VectorXd::Ones(1);
  AdamMoments mz;
  for (int i = 0; i < 50; ++i) AdamUpdate(z, 2.0 * z, mz, AdamConfig{0.1});
  CHECK(std::abs(z[0]) < 0.1);

  CHECK_THROWS(AdamUpdate(z, Eigen::VectorXd::Zero(2), mz, cfg));
}

TEST_CASE("gradient clipping") {
  Eigen::VectorXd a(2), b(2);
  a << 0.3, 0.0;
  b << 0.0, 0.4;
  std::vector<Eigen::VectorXd*> grads{&a, &b};
  CHECK(std::abs(ClipGradients(grads, 1.0) - 0.5) < 1e-15);
  CHECK(a[0] == 0.3);
  CHECK(b[1] == 0.4);

  std::mt19937_64 g(1);
  const Eigen::VectorXd u0 = oracle::RandomMatrix(5, 1, g), v0 = oracle::RandomMatrix(3, 1, g);
  const double norm = std::sqrt(u0.squaredNorm() + v0.squaredNorm());
  Eigen::VectorXd u = u0 * (4.0 / norm), v = v0 * (4.0 / norm);
  const Eigen::VectorXd u_before = u, v_before = v;
  std::vector<Eigen::VectorXd*> big{&u, &v};
  CHECK(std::abs(ClipGradients(big, 1.0) - 4.0) < 1e-12);
  CHECK((u - 0.25 * u_before).norm() < 1e-15);
  CHECK((v - 0.25 * v_before).norm() < 1e-15);
  const double after = std::sqrt(u.squaredNorm() + v.squaredNorm());
  CHECK(std::abs(after - 1.0) < 1e-12);
  const double cosine = (u.dot(u_before) + v.dot(v_before)) / (after * 4.0);
  CHECK(std::abs(cosine - 1.0) < 1e-12);
}

TEST_CASE("a few steps reduce the training loss") {
  Rng rng(3);
  FusionModel model = FusionModel::Init(TinyConfig(), rng);
  auto params = model.Parameters();
  Adam adam(AdamConfig{1e-2}, params);
  const auto data = TinyData(40);
  const Batch batch = MakeBatches(data, 40).front();
  auto loss = [&] {
    const Prediction p = model.Forward(batch);
    return MultitaskLoss(p.logits, batch.emotions, p.valence, batch.valence, p.arousal, batch.arousal, LossWeights{})
        .total;
  };
  const double start = loss().item();
  for (int i = 0; i < 5; ++i) {
    model.ZeroGrad();
    Backward(loss());
    adam.Step(params);
  }
  CHECK(loss().item() < start);
}

TEST_CASE("single-task weights zero the other branch") {
  Rng rng(4);
  FusionModel model = FusionModel::Init(TinyConfig(), rng);
  const Batch batch = MakeBatches(TinyData(20), 20).front();
  auto grads_of = [&](LossWeights w, ParamGroup group) {
    model.ZeroGrad();
    const Prediction p = model.Forward(batch);
    Backward(MultitaskLoss(p.logits, batch.emotions, p.valence, batch.valence, p.arousal, batch.arousal, w).total);
    double sq = 0.0;
    for (const auto& np : model.Parameters()) {
      if (np.group == group && np.tensor.has_grad()) sq += np.tensor.grad().squaredNorm();
    }
    return sq;
  };
  CHECK(grads_of({1.0, 0.0, 0.0}, ParamGroup::kRegressor) == 0.0);
  CHECK(grads_of({1.0, 0.0, 0.0}, ParamGroup::kClassifier) > 0.0);
  CHECK(grads_of({0.0, 0.5, 0.5}, ParamGroup::kClassifier) == 0.0);
  CHECK(grads_of({0.0, 0.5, 0.5}, ParamGroup::kRegressor) > 0.0);
}

TEST_CASE("bridge tokens add 2 L d parameters") {
  ModelConfig with = TinyConfig(), without = TinyConfig();
  without.fusion.use_bridge_tokens = false;
  Rng a(1), b(1);
  const Index delta = FusionModel::Init(with, a).ParameterCount() - FusionModel::Init(without, b).ParameterCount();
  CHECK(delta == 2 * with.fusion.n_bridge_tokens * with.fusion.d_model);
}

TEST_CASE("fold training is deterministic and resumable") {
  const auto data = TinyData();
  const Fold fold = MakeFoldPlan().folds[2];
  const TrainConfig train = TinyTrain(4);
  const RmmSchedule rmm;

  const FoldResult a = TrainFold(fold, data, TinyConfig(), train, rmm, 7);
  const FoldResult b = TrainFold(fold, data, TinyConfig(), train, rmm, 7);
  CheckSameFold(a, b);
  CHECK(a.epochs.size() == 4);
  Rng any(0);
  CHECK(a.parameter_count == FusionModel::Init(TinyConfig(), any).ParameterCount());

  const FoldResult other = TrainFold(fold, data, TinyConfig(), train, rmm, 8);
  CHECK(other.epochs[0].train_loss != a.epochs[0].train_loss);

  // Interrupt after epoch 1, resume, compare with the uninterrupted run.
  const fs::path dir = TempDir("resume");
  FoldRunOptions halt{dir, 1};
  CHECK_THROWS_AS(TrainFold(fold, data, TinyConfig(), train, rmm, 7, halt), TrainingInterrupted);
  CHECK(LoadCheckpoint(dir / "state.ckpt").epoch == 1);
  const FoldResult resumed = TrainFold(fold, data, TinyConfig(), train, rmm, 7, FoldRunOptions{dir, {}});
  CheckSameFold(a, resumed);

  // The best checkpoint reproduces the test metrics.
  const Checkpoint best = LoadCheckpoint(dir / "best.ckpt");
  CHECK(best.epoch == a.best_epoch);
  const std::array<int, 1> test_ids{fold.test_speaker};
  const auto test = SelectSpeakers(data, test_ids);
  CheckSameReport(Evaluate(best.model, test, train.batch_size, train.weights), a.test);

  // A checkpoint from another config is refused.
  ModelConfig bigger = TinyConfig();
  bigger.fusion.n_bridge_tokens = 4;
  CHECK_THROWS(TrainFold(fold, data, bigger, train, rmm, 7, FoldRunOptions{dir, {}}));
}

TEST_CASE("evaluation does not depend on batch size") {
  Rng rng(9);
  const FusionModel model = FusionModel::Init(TinyConfig(), rng);
  const auto data = TinyData(50);
  const EvalReport one = Evaluate(model, data, 1, LossWeights{});
  const EvalReport many = Evaluate(model, data, 16, LossWeights{});
  CHECK(one.war == many.war);
  CHECK(one.confusion == many.confusion);
  CHECK(std::abs(*one.ccc_valence - *many.ccc_valence) < 1e-9);
  CHECK(std::abs(*one.ccc_arousal - *many.ccc_arousal) < 1e-9);
  CHECK(std::abs(*one.loss - *many.loss) < 1e-9);
}

TEST_CASE("single-task runs complete") {
  const auto data = TinyData();
  const Fold fold = MakeFoldPlan().folds[0];
  RmmSchedule off;
  off.enabled = false;
  TrainConfig disc = TinyTrain(2);
  disc.weights = {1.0, 0.0, 0.0};
  const FoldResult d = TrainFold(fold, data, TinyConfig(), disc, off, 1);
  CHECK(d.best_epoch >= 0);
  CHECK(std::isfinite(d.test.war));

  TrainConfig con = TinyTrain(2);
  con.weights = {0.0, 0.5, 0.5};
  const FoldResult c = TrainFold(fold, data, TinyConfig(), con, off, 1);
  CHECK(c.best_epoch >= 0);
  REQUIRE(c.test.ccc_valence.has_value());
  CHECK(std::isfinite(*c.test.ccc_valence));
  // Selection falls back to validation loss: the best epoch has the lowest one.
  double lowest = c.epochs[0].val_loss;
  for (const auto& e : c.epochs) lowest = std::min(lowest, e.val_loss);
  CHECK(c.epochs[static_cast<std::size_t>(c.best_epoch)].val_loss == lowest);
}

TEST_CASE("seed aggregation") {
  auto fold = [](double war, double uar, double v, double a) {
    FoldResult f;
    f.test.war = war;
    f.test.uar = uar;
    f.test.ccc_valence = v;
    f.test.ccc_arousal = a;
    return f;
  };
  const SeedResult s1 = SummarizeSeed(1, {fold(0.7, 0.6, 0.5, 0.4), fold(0.9, 0.8, 0.7, 0.6)});
  CHECK(std::abs(s1.war - 0.8) < 1e-15);
  CHECK(std::abs(s1.uar - 0.7) < 1e-15);
  CHECK(std::abs(*s1.ccc_valence - 0.6) < 1e-15);

  ExperimentResult one;
  one.seeds = {s1};
  Aggregate(one);
  CHECK(one.war.std == 0.0);
  CHECK(one.war.mean == s1.war);

  const SeedResult s2 = SummarizeSeed(2, {fold(0.75, 0.6, 0.5, 0.4)});
  const SeedResult s3 = SummarizeSeed(3, {fold(0.95, 0.6, 0.5, 0.4)});
  ExperimentResult three;
  three.seeds = {s1, s2, s3};
  Aggregate(three);
  const std::vector<double> wars{s1.war, s2.war, s3.war};
  const auto [mean, sd] = oracle::MeanSampleStd(wars);
  CHECK(std::abs(three.war.mean - mean) < 1e-12);
  CHECK(std::abs(three.war.std - sd) < 1e-12);
  // Hand value: mean 0.8333..., sample std of {0.8, 0.75, 0.95}.
  CHECK(std::abs(three.war.std - std::sqrt(((0.8 - 2.5 / 3) * (0.8 - 2.5 / 3) + (0.75 - 2.5 / 3) * (0.75 - 2.5 / 3) +
                                            (0.95 - 2.5 / 3) * (0.95 - 2.5 / 3)) /
                                           2.0)) < 1e-12);

  // A missing CCC anywhere drops the summary.
  FoldResult nov = fold(0.5, 0.5, 0.5, 0.5);
  nov.test.ccc_valence.reset();
  ExperimentResult mixed;
  mixed.seeds = {s1, SummarizeSeed(4, {nov})};
  Aggregate(mixed);
  CHECK_FALSE(mixed.ccc_valence.has_value());
  CHECK(mixed.ccc_arousal.has_value());
}

TEST_CASE("run experiment writes its tree") {
  const auto data = TinyData();
  ExperimentConfig cfg;
  cfg.label = "tiny";
  cfg.model = TinyConfig();
  cfg.train = TinyTrain(2);
  cfg.train.seeds = {1, 2};
  cfg.folds = {0, 3};
  const fs::path dir = TempDir("experiment");
  const ExperimentResult r = RunExperiment(data, cfg, dir, 2);
  REQUIRE(r.seeds.size() == 2);
  CHECK(r.seeds[0].folds.size() == 2);
  for (int s : {1, 2}) {
    for (int k : {0, 3}) {
      const fs::path f = dir / ("seed_" + std::to_string(s)) / ("fold_" + std::to_string(k));
      CHECK(fs::exists(f / "state.ckpt"));
      CHECK(fs::exists(f / "best.ckpt"));
      CHECK(fs::exists(f / "fold_result.json"));
    }
  }
  CHECK(fs::exists(dir / "report.json"));

  // Serial and parallel agree; completed folds are reused.
  const ExperimentResult serial = RunExperiment(data, cfg, std::nullopt, 1);
  CHECK(serial.war.mean == r.war.mean);
  CHECK(serial.war.std == r.war.std);
  const ExperimentResult again = RunExperiment(data, cfg, dir, 1);
  CHECK(again.war.mean == r.war.mean);
  CHECK(ReadTextFile(dir / "report.json") == ToJson(again).dump(2) + "\n");
}
