#include "bridgefuse/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "bridgefuse/serialize.hpp"

namespace bridgefuse {

namespace fs = std::filesystem;

// ---- optimiser -----------------------------------------------------------

void AdamUpdate(Eigen::Ref<Eigen::VectorXd> param, const Eigen::Ref<const Eigen::VectorXd>& grad,
                AdamMoments& moments, const AdamConfig& config) {
  if (param.size() != grad.size()) {
    throw ShapeError("AdamUpdate: parameter has " + std::to_string(param.size()) + " values, gradient " +
                     std::to_string(grad.size()));
  }
  if (moments.first.size() != param.size()) {
    moments.first = Eigen::VectorXd::Zero(param.size());
    moments.second = Eigen::VectorXd::Zero(param.size());
  }
  ++moments.step;
  moments.first = config.beta1 * moments.first + (1.0 - config.beta1) * grad;
  moments.second = config.beta2 * moments.second + (1.0 - config.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(moments.step));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(moments.step));
  param.array() -= config.learning_rate * (moments.first.array() / c1) /
                   ((moments.second.array() / c2).sqrt() + config.eps);
}

Adam::Adam(AdamConfig config, std::span<const NamedParameter> params)
    : config_(config), moments_(params.size()) {}

void Adam::Step(std::span<NamedParameter> params, std::span<const ParamGroup> frozen) {
  if (params.size() != moments_.size()) throw std::invalid_argument("Adam::Step: parameter list changed");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (std::find(frozen.begin(), frozen.end(), p.group) != frozen.end()) continue;
    if (!p.tensor.has_grad()) continue;
    AdamUpdate(p.tensor.mutable_data(), p.tensor.grad(), moments_[i], config_);
  }
}

double GlobalGradNorm(std::span<const Eigen::VectorXd* const> grads) {
  double sq = 0.0;
  for (const auto* g : grads) sq += g->squaredNorm();
  return std::sqrt(sq);
}

double ClipGradients(std::span<Eigen::VectorXd* const> grads, double max_norm) {
  std::vector<const Eigen::VectorXd*> view(grads.begin(), grads.end());
  const double norm = GlobalGradNorm(view);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto* g : grads) *g *= factor;
  }
  return norm;
}

// ---- configuration -------------------------------------------------------

void TrainConfig::Validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning_rate must be positive");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (epochs_per_fold < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (!(clip_norm > 0.0)) throw std::invalid_argument("TrainConfig: clip_norm must be positive");
  if (seeds.empty()) throw std::invalid_argument("TrainConfig: at least one seed required");
  if (!(adam_beta1 > 0 && adam_beta1 < 1 && adam_beta2 > 0 && adam_beta2 < 1 && adam_eps > 0)) {
    throw std::invalid_argument("TrainConfig: Adam hyperparameters out of range");
  }
  weights.Validate();
}

void ExperimentConfig::Validate() const {
  model.Validate();
  train.Validate();
  RmmSchedule r = rmm;
  r.total_epochs = train.epochs_per_fold;
  r.Validate();
  if (folds.empty()) throw std::invalid_argument("ExperimentConfig: no folds selected");
  for (int f : folds) {
    if (f < 0 || f >= kNumSpeakers) throw std::invalid_argument("ExperimentConfig: fold index outside [0,9]");
  }
}

// ---- evaluation ----------------------------------------------------------

EvalReport Evaluate(const FusionModel& model, std::span<const UtteranceRecord> records, int batch_size,
                    const LossWeights& weights) {
  const FusionModel frozen = model.Clone(false);
  const auto n = static_cast<Index>(records.size());
  RowMatrix logits(n, kNumEmotions);
  Eigen::VectorXd pv(n), pa(n), tv(n), ta(n);
  std::vector<int> pred_labels, true_labels;
  Index row = 0;
  for (const auto& batch : MakeBatches(records, batch_size)) {
    const Prediction p = frozen.Forward(batch);
    const auto l = p.logits.matrix();
    for (Index i = 0; i < batch.size(); ++i, ++row) {
      logits.row(row) = l.row(i);
      Index best = 0;
      l.row(i).maxCoeff(&best);
      pred_labels.push_back(static_cast<int>(best));
      true_labels.push_back(batch.emotions[static_cast<std::size_t>(i)]);
      pv[row] = p.valence.data()[i];
      pa[row] = p.arousal.data()[i];
      tv[row] = batch.valence[i];
      ta[row] = batch.arousal[i];
    }
  }
  EvalReport report = ComputeMetrics(pred_labels, true_labels, pv, tv, pa, ta);
  const LossTerms terms = MultitaskLoss(Tensor::FromMatrix(logits), true_labels, Tensor::FromVector(pv), tv,
                                        Tensor::FromVector(pa), ta, weights);
  report.loss = terms.total.item();
  return report;
}

// ---- fold training -------------------------------------------------------

namespace {

std::string RngState(const Rng& rng) {
  std::ostringstream s;
  s << rng;
  return s.str();
}

void RestoreRng(Rng& rng, const std::string& state) {
  std::istringstream s(state);
  s >> rng;
}

Json EpochsJson(const std::vector<EpochLog>& epochs) {
  FoldResult tmp;
  tmp.epochs = epochs;
  return ToJson(tmp).at("epochs");
}

std::vector<EpochLog> EpochsFromJson(const Json& j) {
  Json wrapper = {{"fold", 0}, {"seed", 0}, {"best_epoch", 0}, {"parameter_count", 0},
                  {"test", ToJson(EvalReport{})}, {"epochs", j}};
  return FoldResultFromJson(wrapper).epochs;
}

}  // namespace

FoldResult TrainFold(const Fold& fold, std::span<const UtteranceRecord> data, const ModelConfig& model_config,
                     const TrainConfig& train_config, const RmmSchedule& rmm_in, int seed,
                     const FoldRunOptions& options) {
  model_config.Validate();
  train_config.Validate();
  RmmSchedule rmm = rmm_in;
  rmm.total_epochs = train_config.epochs_per_fold;
  rmm.Validate();

  const auto train = SelectSpeakers(data, fold.train_speakers);
  const std::array<int, 1> val_ids{fold.val_speaker}, test_ids{fold.test_speaker};
  const auto val = SelectSpeakers(data, val_ids);
  const auto test = SelectSpeakers(data, test_ids);
  if (train.empty()) throw DataError("fold " + std::to_string(fold.index) + ": empty train split");
  if (val.empty() || test.empty()) {
    throw DataError("fold " + std::to_string(fold.index) + ": empty validation or test split");
  }

  const auto s = static_cast<std::uint64_t>(seed), k = static_cast<std::uint64_t>(fold.index);
  Rng init_rng = DeriveRng(s, k, 0);
  Rng data_rng = DeriveRng(s, k, 1);
  Rng rmm_rng = DeriveRng(s, k, 2);

  FusionModel model = FusionModel::Init(model_config, init_rng);
  auto params = model.Parameters();
  Adam adam(train_config.adam(), params);

  FoldResult result;
  result.fold_index = fold.index;
  result.seed = seed;
  result.parameter_count = model.ParameterCount();
  FusionModel best = model.Clone(false);
  double best_score = -std::numeric_limits<double>::infinity();
  double best_loss = std::numeric_limits<double>::infinity();
  int start_epoch = 0;

  std::optional<fs::path> state_path, best_path;
  if (options.dir) {
    fs::create_directories(*options.dir);
    state_path = *options.dir / "state.ckpt";
    best_path = *options.dir / "best.ckpt";
    if (fs::exists(*state_path)) {
      Checkpoint ck = LoadCheckpoint(*state_path);
      if (ck.config_hash != ConfigHash(model_config)) {
        throw std::runtime_error(state_path->string() + ": checkpoint belongs to a different model config");
      }
      model.LoadValues(ck.model);
      adam.moments() = ck.moments;
      start_epoch = ck.epoch + 1;
      RestoreRng(data_rng, ck.extra.at("data_rng").get<std::string>());
      RestoreRng(rmm_rng, ck.extra.at("rmm_rng").get<std::string>());
      result.best_epoch = ck.extra.at("best_epoch").get<int>();
      best_score = ck.extra.at("best_score").get<double>();
      best_loss = ck.extra.at("best_loss").get<double>();
      result.epochs = EpochsFromJson(ck.extra.at("epochs"));
      best.LoadValues(LoadCheckpoint(*best_path).model);
    }
  }

  const auto& weights = train_config.weights;
  for (int epoch = start_epoch; epoch < train_config.epochs_per_fold; ++epoch) {
    EpochLog log;
    log.epoch = epoch;
    log.decision = DecideEpoch(epoch, rmm, rmm_rng);
    const auto batches = MakeBatches(train, train_config.batch_size, data_rng);
    double loss_sum = 0.0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const MaskedBatch masked = ApplyMask(log.decision, batches[bi]);
      model.ZeroGrad();
      const Prediction pred = model.Forward(masked.batch);
      const LossTerms terms = MultitaskLoss(pred.logits, masked.batch.emotions, pred.valence, masked.batch.valence,
                                            pred.arousal, masked.batch.arousal, weights);
      const double total = terms.total.item();
      if (!std::isfinite(total)) {
        std::ostringstream msg;
        msg << "non-finite loss in fold " << fold.index << ", seed " << seed << ", epoch " << epoch << ", batch "
            << bi << " (ce=" << terms.categorical.value_or(0.0) << ", ccc_v=" << terms.valence.value_or(0.0)
            << ", ccc_a=" << terms.arousal.value_or(0.0) << ")";
        throw NumericError(msg.str());
      }
      if (terms.total.requires_grad()) Backward(terms.total);
      std::vector<Eigen::VectorXd*> grads;
      for (auto& p : params) {
        if (!p.tensor.has_grad()) continue;
        if (std::find(masked.frozen.begin(), masked.frozen.end(), p.group) != masked.frozen.end()) {
          p.tensor.zero_grad();
          continue;
        }
        grads.push_back(&p.tensor.mutable_grad());
      }
      ClipGradients(grads, train_config.clip_norm);
      adam.Step(params, masked.frozen);
      loss_sum += total;
    }
    model.ZeroGrad();
    log.train_loss = loss_sum / static_cast<double>(batches.size());

    const EvalReport val_report = Evaluate(model, val, train_config.batch_size, weights);
    log.val_loss = val_report.loss.value_or(0.0);
    log.val_war = val_report.war;
    if (!std::isfinite(log.val_loss)) {
      throw NumericError("non-finite validation loss in fold " + std::to_string(fold.index) + ", epoch " +
                         std::to_string(epoch));
    }
    // WAR ties (common once validation accuracy saturates) go to the lower
    // loss. Without a categorical term WAR carries no signal, so loss decides.
    const bool by_war = train_config.selection == SelectionMetric::kValWar && weights.categorical > 0.0;
    const double score = by_war ? val_report.war : -log.val_loss;
    if (score > best_score || (score == best_score && log.val_loss < best_loss)) {
      best_score = score;
      best_loss = log.val_loss;
      result.best_epoch = epoch;
      best.LoadValues(model);
      if (best_path) SaveCheckpoint(*best_path, best, epoch);
    }
    result.epochs.push_back(log);

    if (state_path) {
      Json extra = {{"data_rng", RngState(data_rng)},
                    {"rmm_rng", RngState(rmm_rng)},
                    {"best_epoch", result.best_epoch},
                    {"best_score", best_score},
                    {"best_loss", best_loss},
                    {"epochs", EpochsJson(result.epochs)}};
      SaveCheckpoint(*state_path, model, epoch, adam.moments(), extra);
    }
    if (options.halt_after_epoch && *options.halt_after_epoch == epoch) {
      throw TrainingInterrupted("fold " + std::to_string(fold.index) + " halted after epoch " +
                                std::to_string(epoch));
    }
  }

  result.test = Evaluate(best, test, train_config.batch_size, weights);
  return result;
}

// ---- experiments ---------------------------------------------------------

MetricSummary Summarize(std::span<const double> values) {
  MetricSummary s;
  if (values.empty()) return s;
  const double n = static_cast<double>(values.size());
  for (double v : values) s.mean += v;
  s.mean /= n;
  if (values.size() > 1) {
    double sq = 0.0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(sq / (n - 1.0));
  }
  return s;
}

SeedResult SummarizeSeed(int seed, std::vector<FoldResult> folds) {
  SeedResult r;
  r.seed = seed;
  r.folds = std::move(folds);
  if (r.folds.empty()) return r;
  const double n = static_cast<double>(r.folds.size());
  double v = 0.0, a = 0.0;
  bool have_v = true, have_a = true;
  for (const auto& f : r.folds) {
    r.war += f.test.war / n;
    r.uar += f.test.uar / n;
    have_v = have_v && f.test.ccc_valence.has_value();
    have_a = have_a && f.test.ccc_arousal.has_value();
    v += f.test.ccc_valence.value_or(0.0) / n;
    a += f.test.ccc_arousal.value_or(0.0) / n;
  }
  if (have_v) r.ccc_valence = v;
  if (have_a) r.ccc_arousal = a;
  return r;
}

void Aggregate(ExperimentResult& result) {
  std::vector<double> war, uar, v, a;
  bool have_v = true, have_a = true;
  for (const auto& s : result.seeds) {
    war.push_back(s.war);
    uar.push_back(s.uar);
    have_v = have_v && s.ccc_valence.has_value();
    have_a = have_a && s.ccc_arousal.has_value();
    if (s.ccc_valence) v.push_back(*s.ccc_valence);
    if (s.ccc_arousal) a.push_back(*s.ccc_arousal);
  }
  result.war = Summarize(war);
  result.uar = Summarize(uar);
  result.ccc_valence = have_v && !v.empty() ? std::optional(Summarize(v)) : std::nullopt;
  result.ccc_arousal = have_a && !a.empty() ? std::optional(Summarize(a)) : std::nullopt;
}

ExperimentResult RunExperiment(std::span<const UtteranceRecord> data, const ExperimentConfig& config,
                               const std::optional<fs::path>& run_dir, int jobs) {
  config.Validate();
  const FoldPlan plan = MakeFoldPlan();
  struct Job {
    int seed;
    int fold;
  };
  std::vector<Job> work;
  for (int seed : config.train.seeds)
    for (int fold : config.folds) work.push_back({seed, fold});

  std::vector<FoldResult> results(work.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < work.size(); i = next++) {
      try {
        const auto& job = work[i];
        std::optional<fs::path> dir;
        if (run_dir) {
          dir = *run_dir / ("seed_" + std::to_string(job.seed)) / ("fold_" + std::to_string(job.fold));
          const fs::path done = *dir / "fold_result.json";
          if (fs::exists(done)) {
            results[i] = FoldResultFromJson(Json::parse(ReadTextFile(done)));
            continue;
          }
        }
        FoldRunOptions options;
        options.dir = dir;
        results[i] = TrainFold(plan.folds[static_cast<std::size_t>(job.fold)], data, config.model, config.train,
                               config.rmm, job.seed, options);
        if (dir) WriteTextFile(*dir / "fold_result.json", ToJson(results[i]).dump(2) + "\n");
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = work.size();
      }
    }
  };
  const int n_threads = std::max(1, std::min<int>(jobs, static_cast<int>(work.size())));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (int t = 0; t < n_threads; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  ExperimentResult result;
  result.config = config;
  std::map<int, std::vector<FoldResult>> by_seed;
  for (std::size_t i = 0; i < work.size(); ++i) by_seed[work[i].seed].push_back(results[i]);
  for (int seed : config.train.seeds) {
    if (auto it = by_seed.find(seed); it != by_seed.end()) {
      result.seeds.push_back(SummarizeSeed(seed, std::move(it->second)));
      by_seed.erase(it);
    }
  }
  Aggregate(result);
  if (run_dir) WriteTextFile(*run_dir / "report.json", ToJson(result).dump(2) + "\n");
  return result;
}

}  // namespace bridgefuse
