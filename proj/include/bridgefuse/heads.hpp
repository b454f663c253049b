#ifndef BRIDGEFUSE_HEADS_HPP_
#define BRIDGEFUSE_HEADS_HPP_

#include <optional>

#include "bridgefuse/random.hpp"
#include "bridgefuse/tensor.hpp"

namespace bridgefuse {

/// linear -> relu -> linear
struct Mlp {
  Tensor hidden_weight;  // d_in × d_hidden
  Tensor hidden_bias;    // d_hidden
  Tensor out_weight;     // d_hidden × d_out
  Tensor out_bias;       // d_out

  static Mlp Init(Index d_in, Index d_hidden, Index d_out, Rng& rng);
  static Mlp Zero(Index d_in, Index d_hidden, Index d_out);
  Tensor Forward(const Tensor& x) const;
};

struct HeadConfig {
  Index d_model = 16;
  Index d_hidden = 0;  // 0 selects d_model / 2
  bool per_dimension_regressor = false;

  Index hidden() const { return d_hidden > 0 ? d_hidden : (d_model / 2 > 0 ? d_model / 2 : 1); }
};

/// Classifier over four emotions and a sigmoid regressor for valence and
/// arousal. With per_dimension_regressor, `regressor` predicts valence only
/// and `arousal_regressor` predicts arousal.
struct HeadParams {
  Mlp classifier;
  Mlp regressor;
  std::optional<Mlp> arousal_regressor;

  static HeadParams Init(const HeadConfig& config, Rng& rng);
  static HeadParams Zero(const HeadConfig& config);
};

struct Prediction {
  Tensor logits;   // B × 4, unnormalised
  Tensor valence;  // B, in (0,1)
  Tensor arousal;  // B, in (0,1)
};

/// `fused` is B × d_model, or a single d_model vector (treated as B = 1).
Prediction Predict(const Tensor& fused, const HeadParams& params);

}  // namespace bridgefuse

#endif  // BRIDGEFUSE_HEADS_HPP_
