#ifndef BRIDGEFUSE_LOSSES_HPP_
#define BRIDGEFUSE_LOSSES_HPP_

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <stdexcept>
#include <string>

#include "bridgefuse/data.hpp"
#include "bridgefuse/tensor.hpp"

namespace bridgefuse {

/// Emits a warning line on stderr unless warnings are silenced.
void Warn(const std::string& message);
void SetWarningsEnabled(bool enabled);

/// Weights of the categorical, valence and arousal terms.
struct LossWeights {
  double categorical = 1.0 / 3.0;
  double valence = 1.0 / 3.0;
  double arousal = 1.0 / 3.0;

  /// Rescales non-negative weights to sum to one, e.g. (0.33, 0.33, 0.33).
  static LossWeights Normalized(double categorical, double valence, double arousal);
  void Validate() const;
  bool categorical_only() const { return valence == 0.0 && arousal == 0.0; }
  bool dimensional_only() const { return categorical == 0.0; }
};

/// Lin's concordance correlation coefficient with population statistics.
/// Returns 0 when both inputs are constant, with a warning if they are equal.
template <typename DerivedA, typename DerivedB>
double Ccc(const Eigen::MatrixBase<DerivedA>& pred, const Eigen::MatrixBase<DerivedB>& truth) {
  const Index n = pred.size();
  if (truth.size() != n) throw std::invalid_argument("Ccc: length mismatch");
  if (n < 2) throw std::invalid_argument("Ccc: at least two samples required");
  const auto p = pred.reshaped().array();
  const auto t = truth.reshaped().array();
  // Constant inputs are detected directly: their computed mean can differ
  // from the value by an ulp, which would leave a spurious 1e-33 variance.
  const bool p_const = p.maxCoeff() == p.minCoeff();
  const bool t_const = t.maxCoeff() == t.minCoeff();
  if (p_const && t_const) {
    if (p(0) == t(0)) Warn("Ccc: degenerate input (both vectors constant and equal); returning 0");
    return 0.0;
  }
  const double mp = p.mean();
  const double mt = t.mean();
  const double cov = ((p - mp) * (t - mt)).mean();
  const double vp = (p - mp).square().mean();
  const double vt = (t - mt).square().mean();
  const double denom = vp + vt + (mp - mt) * (mp - mt);
  return 2.0 * cov / denom;
}

/// Batch-mean negative log-likelihood of softmax(logits), via log-sum-exp.
Tensor CrossEntropy(const Tensor& logits, std::span<const int> targets);

/// 1 - Ccc(pred, truth); the gradient flows into `pred` only.
Tensor CccLoss(const Tensor& pred, const Eigen::Ref<const Eigen::VectorXd>& truth);

struct LossTerms {
  Tensor total;
  std::optional<double> categorical;
  std::optional<double> valence;
  std::optional<double> arousal;
};

/// h1·CE + h2·(1 - CCC_v) + h3·(1 - CCC_a). Zero-weighted terms are not
/// built at all. With fewer than two samples the CCC terms are skipped.
LossTerms MultitaskLoss(const Tensor& logits, std::span<const int> targets, const Tensor& pred_valence,
                        const Eigen::Ref<const Eigen::VectorXd>& true_valence, const Tensor& pred_arousal,
                        const Eigen::Ref<const Eigen::VectorXd>& true_arousal, const LossWeights& weights);

using ConfusionMatrix = Eigen::Matrix<long, kNumEmotions, kNumEmotions>;

struct EvalReport {
  double war = 0.0;
  double uar = 0.0;
  std::optional<double> ccc_valence;
  std::optional<double> ccc_arousal;
  ConfusionMatrix confusion = ConfusionMatrix::Zero();  // rows: truth, cols: prediction
  long n_samples = 0;
  std::optional<double> loss;
};

EvalReport ComputeMetrics(std::span<const int> pred_labels, std::span<const int> true_labels,
                          const Eigen::Ref<const Eigen::VectorXd>& pred_valence,
                          const Eigen::Ref<const Eigen::VectorXd>& true_valence,
                          const Eigen::Ref<const Eigen::VectorXd>& pred_arousal,
                          const Eigen::Ref<const Eigen::VectorXd>& true_arousal);

}  // namespace bridgefuse

#endif  // BRIDGEFUSE_LOSSES_HPP_
