#include "bridgefuse/losses.hpp"

#include <atomic>
#include <cmath>
#include <iostream>
#include <mutex>

namespace bridgefuse {

namespace {
std::atomic<bool> g_warnings_enabled{true};
std::mutex g_warn_mutex;
}  // namespace

void Warn(const std::string& message) {
  if (!g_warnings_enabled.load()) return;
  std::lock_guard<std::mutex> lock(g_warn_mutex);
  std::cerr << "warning: " << message << '\n';
}

void SetWarningsEnabled(bool enabled) { g_warnings_enabled.store(enabled); }

LossWeights LossWeights::Normalized(double categorical, double valence, double arousal) {
  const double total = categorical + valence + arousal;
  if (!(categorical >= 0 && valence >= 0 && arousal >= 0) || !(total > 0)) {
    throw std::invalid_argument("LossWeights: weights must be non-negative with a positive sum");
  }
  return {categorical / total, valence / total, arousal / total};
}

void LossWeights::Validate() const {
  if (!(categorical >= 0 && valence >= 0 && arousal >= 0)) {
    throw std::invalid_argument("LossWeights: weights must be non-negative");
  }
  if (std::abs(categorical + valence + arousal - 1.0) > 1e-9) {
    throw std::invalid_argument("LossWeights: weights must sum to 1, got " +
                                std::to_string(categorical + valence + arousal));
  }
}

Tensor CrossEntropy(const Tensor& logits, std::span<const int> targets) {
  if (logits.rank() != 2 || logits.rows() != static_cast<Index>(targets.size())) {
    throw ShapeError("CrossEntropy: logits " + ShapeString(logits.shape()) + " vs " +
                     std::to_string(targets.size()) + " targets");
  }
  const Index b = logits.rows(), c = logits.cols();
  for (int t : targets) {
    if (t < 0 || t >= c) throw std::out_of_range("CrossEntropy: target " + std::to_string(t) + " out of range");
  }
  const auto x = logits.matrix();
  RowMatrix probs(b, c);
  double total = 0.0;
  for (Index i = 0; i < b; ++i) {
    const double max = x.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (x.row(i).array() - max).exp();
    const double sum = e.sum();
    total += max + std::log(sum) - x(i, targets[static_cast<std::size_t>(i)]);
    probs.row(i) = e / sum;
  }
  std::vector<int> labels(targets.begin(), targets.end());
  return MakeOp({}, Eigen::VectorXd::Constant(1, total / static_cast<double>(b)), {logits},
                [probs = std::move(probs), labels = std::move(labels), b, c](
                    const Eigen::VectorXd&, const Eigen::VectorXd& g, std::span<Eigen::VectorXd* const> in) {
                  if (!in[0]) return;
                  Eigen::Map<RowMatrix> grad(in[0]->data(), b, c);
                  const double w = g[0] / static_cast<double>(b);
                  for (Index i = 0; i < b; ++i) {
                    grad.row(i) += w * probs.row(i);
                    grad(i, labels[static_cast<std::size_t>(i)]) -= w;
                  }
                });
}

Tensor CccLoss(const Tensor& pred, const Eigen::Ref<const Eigen::VectorXd>& truth) {
  if (pred.size() != truth.size()) {
    throw ShapeError("CccLoss: pred " + ShapeString(pred.shape()) + " vs " + std::to_string(truth.size()) +
                     " targets");
  }
  const Index n = pred.size();
  if (n < 2) throw std::invalid_argument("CccLoss: at least two samples required");
  const Eigen::ArrayXd p = pred.data().array();
  const Eigen::ArrayXd t = truth.array();
  const double bn = static_cast<double>(n);
  const double mp = p.mean(), mt = t.mean();
  const double cov = ((p - mp) * (t - mt)).mean();
  const double vp = (p - mp).square().mean();
  const double vt = (t - mt).square().mean();
  const double denom = vp + vt + (mp - mt) * (mp - mt);
  double value = 1.0;
  Eigen::VectorXd dccc = Eigen::VectorXd::Zero(n);
  const bool both_const = p.maxCoeff() == p.minCoeff() && t.maxCoeff() == t.minCoeff();
  if (both_const) {
    if (p(0) == t(0)) Warn("CccLoss: degenerate input (both vectors constant and equal); CCC taken as 0");
  } else {
    const double num = 2.0 * cov;
    value = 1.0 - num / denom;
    const Eigen::ArrayXd dnum = 2.0 * (t - mt) / bn;
    const Eigen::ArrayXd dden = 2.0 * (p - mp) / bn + 2.0 * (mp - mt) / bn;
    dccc = ((dnum * denom - num * dden) / (denom * denom)).matrix();
  }
  return MakeOp({}, Eigen::VectorXd::Constant(1, value), {pred},
                [dccc = std::move(dccc)](const Eigen::VectorXd&, const Eigen::VectorXd& g,
                                         std::span<Eigen::VectorXd* const> in) {
                  if (in[0]) *in[0] -= g[0] * dccc;
                });
}

LossTerms MultitaskLoss(const Tensor& logits, std::span<const int> targets, const Tensor& pred_valence,
                        const Eigen::Ref<const Eigen::VectorXd>& true_valence, const Tensor& pred_arousal,
                        const Eigen::Ref<const Eigen::VectorXd>& true_arousal, const LossWeights& weights) {
  weights.Validate();
  LossTerms terms;
  std::vector<Tensor> parts;
  if (weights.categorical > 0.0) {
    const Tensor ce = CrossEntropy(logits, targets);
    terms.categorical = ce.item();
    parts.push_back(Scale(ce, weights.categorical));
  }
  const bool ccc_defined = pred_valence.size() >= 2;
  if (!ccc_defined && (weights.valence > 0.0 || weights.arousal > 0.0)) {
    Warn("MultitaskLoss: batch of size 1 contributes cross-entropy only");
  }
  if (ccc_defined && weights.valence > 0.0) {
    const Tensor lv = CccLoss(pred_valence, true_valence);
    terms.valence = lv.item();
    parts.push_back(Scale(lv, weights.valence));
  }
  if (ccc_defined && weights.arousal > 0.0) {
    const Tensor la = CccLoss(pred_arousal, true_arousal);
    terms.arousal = la.item();
    parts.push_back(Scale(la, weights.arousal));
  }
  if (parts.empty()) {
    terms.total = Tensor::Scalar(0.0);
    return terms;
  }
  Tensor total = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i) total = Add(total, parts[i]);
  terms.total = total;
  return terms;
}

EvalReport ComputeMetrics(std::span<const int> pred_labels, std::span<const int> true_labels,
                          const Eigen::Ref<const Eigen::VectorXd>& pred_valence,
                          const Eigen::Ref<const Eigen::VectorXd>& true_valence,
                          const Eigen::Ref<const Eigen::VectorXd>& pred_arousal,
                          const Eigen::Ref<const Eigen::VectorXd>& true_arousal) {
  const auto n = static_cast<Index>(true_labels.size());
  if (static_cast<Index>(pred_labels.size()) != n || pred_valence.size() != n || true_valence.size() != n ||
      pred_arousal.size() != n || true_arousal.size() != n) {
    throw std::invalid_argument("ComputeMetrics: input lengths differ");
  }
  if (n < 1) throw std::invalid_argument("ComputeMetrics: no samples");
  EvalReport report;
  report.n_samples = n;
  long correct = 0;
  for (Index i = 0; i < n; ++i) {
    const int t = true_labels[static_cast<std::size_t>(i)], p = pred_labels[static_cast<std::size_t>(i)];
    if (t < 0 || t >= kNumEmotions || p < 0 || p >= kNumEmotions) {
      throw std::out_of_range("ComputeMetrics: label outside the 4-class set");
    }
    ++report.confusion(t, p);
    if (t == p) ++correct;
  }
  // Support-weighted recall collapses to accuracy.
  report.war = static_cast<double>(correct) / static_cast<double>(n);
  double recall_sum = 0.0;
  int classes = 0;
  for (int c = 0; c < kNumEmotions; ++c) {
    const long support = report.confusion.row(c).sum();
    if (support == 0) continue;
    recall_sum += static_cast<double>(report.confusion(c, c)) / static_cast<double>(support);
    ++classes;
  }
  report.uar = recall_sum / classes;
  if (n >= 2) {
    report.ccc_valence = Ccc(pred_valence, true_valence);
    report.ccc_arousal = Ccc(pred_arousal, true_arousal);
  }
  return report;
}

}  // namespace bridgefuse
