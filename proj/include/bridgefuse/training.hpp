#ifndef BRIDGEFUSE_TRAINING_HPP_
#define BRIDGEFUSE_TRAINING_HPP_

#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bridgefuse/data.hpp"
#include "bridgefuse/losses.hpp"
#include "bridgefuse/model.hpp"
#include "bridgefuse/rmm.hpp"

namespace bridgefuse {

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thrown when a fold is stopped on purpose after a given epoch.
class TrainingInterrupted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- optimiser -----------------------------------------------------------

struct AdamConfig {
  double learning_rate = 3e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamMoments {
  Eigen::VectorXd first;
  Eigen::VectorXd second;
  long step = 0;
};

/// One bias-corrected Adam update of `param` in place.
void AdamUpdate(Eigen::Ref<Eigen::VectorXd> param, const Eigen::Ref<const Eigen::VectorXd>& grad,
                AdamMoments& moments, const AdamConfig& config);

/// Adam over a model's parameter list. Frozen groups keep both their values
/// and their moments untouched.
class Adam {
 public:
  Adam(AdamConfig config, std::span<const NamedParameter> params);

  void Step(std::span<NamedParameter> params, std::span<const ParamGroup> frozen = {});

  const AdamConfig& config() const { return config_; }
  std::vector<AdamMoments>& moments() { return moments_; }
  const std::vector<AdamMoments>& moments() const { return moments_; }

 private:
  AdamConfig config_;
  std::vector<AdamMoments> moments_;
};

double GlobalGradNorm(std::span<const Eigen::VectorXd* const> grads);

/// Rescales all gradients by max_norm / norm when the global L2 norm exceeds
/// max_norm. Returns the norm before clipping.
double ClipGradients(std::span<Eigen::VectorXd* const> grads, double max_norm);

// ---- configuration -------------------------------------------------------

enum class SelectionMetric { kValWar, kValTotalLoss };

struct TrainConfig {
  double learning_rate = 3e-5;
  int batch_size = 16;
  int epochs_per_fold = 20;
  double clip_norm = 1.0;
  LossWeights weights;
  std::vector<int> seeds{1, 2, 3};
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  SelectionMetric selection = SelectionMetric::kValWar;

  AdamConfig adam() const { return {learning_rate, adam_beta1, adam_beta2, adam_eps}; }
  void Validate() const;
};

struct ExperimentConfig {
  std::string label;
  ModelConfig model;
  TrainConfig train;
  RmmSchedule rmm;  // total_epochs is taken from train.epochs_per_fold
  std::vector<int> folds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};

  void Validate() const;
};

// ---- results -------------------------------------------------------------

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_war = 0.0;
  EpochMaskDecision decision;
};

struct FoldResult {
  int fold_index = 0;
  int seed = 0;
  int best_epoch = -1;
  Index parameter_count = 0;
  EvalReport test;
  std::vector<EpochLog> epochs;
};

struct FoldRunOptions {
  /// When set, checkpoints go here and an existing state is resumed.
  std::optional<std::filesystem::path> dir;
  /// Throws TrainingInterrupted after finishing this epoch (for tests).
  std::optional<int> halt_after_epoch;
};

/// Predictions and metrics on `records`, no parameter updates.
EvalReport Evaluate(const FusionModel& model, std::span<const UtteranceRecord> records, int batch_size,
                    const LossWeights& weights);

FoldResult TrainFold(const Fold& fold, std::span<const UtteranceRecord> data, const ModelConfig& model_config,
                     const TrainConfig& train_config, const RmmSchedule& rmm, int seed,
                     const FoldRunOptions& options = {});

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;
};

struct SeedResult {
  int seed = 0;
  std::vector<FoldResult> folds;
  double war = 0.0;
  double uar = 0.0;
  std::optional<double> ccc_valence;
  std::optional<double> ccc_arousal;
};

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<SeedResult> seeds;
  MetricSummary war;
  MetricSummary uar;
  std::optional<MetricSummary> ccc_valence;
  std::optional<MetricSummary> ccc_arousal;
};

/// Fold-averaged metrics of one seed.
SeedResult SummarizeSeed(int seed, std::vector<FoldResult> folds);
/// Mean and sample standard deviation (0 for a single value).
MetricSummary Summarize(std::span<const double> values);
/// Aggregates per-seed results into mean ± std.
void Aggregate(ExperimentResult& result);

/// Runs every (seed, fold) pair. With `run_dir`, each fold writes its
/// checkpoints and log under run_dir/seed_<s>/fold_<k>/ and completed folds
/// are reused. `jobs` > 1 trains folds on parallel threads.
ExperimentResult RunExperiment(std::span<const UtteranceRecord> data, const ExperimentConfig& config,
                               const std::optional<std::filesystem::path>& run_dir = std::nullopt, int jobs = 1);

}  // namespace bridgefuse

#endif  // BRIDGEFUSE_TRAINING_HPP_
