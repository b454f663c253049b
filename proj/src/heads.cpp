#include "bridgefuse/heads.hpp"

#include "bridgefuse/attention.hpp"
#include "bridgefuse/data.hpp"

namespace bridgefuse {

Mlp Mlp::Init(Index d_in, Index d_hidden, Index d_out, Rng& rng) {
  return {Tensor::FromMatrix(GlorotUniform(d_in, d_hidden, rng), true), Tensor::Zeros({d_hidden}, true),
          Tensor::FromMatrix(GlorotUniform(d_hidden, d_out, rng), true), Tensor::Zeros({d_out}, true)};
}

Mlp Mlp::Zero(Index d_in, Index d_hidden, Index d_out) {
  return {Tensor::Zeros({d_in, d_hidden}, true), Tensor::Zeros({d_hidden}, true),
          Tensor::Zeros({d_hidden, d_out}, true), Tensor::Zeros({d_out}, true)};
}

Tensor Mlp::Forward(const Tensor& x) const {
  return Linear(Relu(Linear(x, hidden_weight, hidden_bias)), out_weight, out_bias);
}

HeadParams HeadParams::Init(const HeadConfig& config, Rng& rng) {
  HeadParams p;
  const Index h = config.hidden();
  p.classifier = Mlp::Init(config.d_model, h, kNumEmotions, rng);
  if (config.per_dimension_regressor) {
    p.regressor = Mlp::Init(config.d_model, h, 1, rng);
    p.arousal_regressor = Mlp::Init(config.d_model, h, 1, rng);
  } else {
    p.regressor = Mlp::Init(config.d_model, h, 2, rng);
  }
  return p;
}

HeadParams HeadParams::Zero(const HeadConfig& config) {
  HeadParams p;
  const Index h = config.hidden();
  p.classifier = Mlp::Zero(config.d_model, h, kNumEmotions);
  if (config.per_dimension_regressor) {
    p.regressor = Mlp::Zero(config.d_model, h, 1);
    p.arousal_regressor = Mlp::Zero(config.d_model, h, 1);
  } else {
    p.regressor = Mlp::Zero(config.d_model, h, 2);
  }
  return p;
}

Prediction Predict(const Tensor& fused, const HeadParams& params) {
  const Tensor x = fused.rank() == 1 ? fused.Reshape({1, fused.size()}) : fused;
  if (x.rank() != 2) throw ShapeError("Predict: expected B×d input, got " + ShapeString(fused.shape()));
  if (!x.data().allFinite()) throw DomainError("Predict: non-finite fused embedding");
  const Index b = x.rows();
  Prediction out;
  out.logits = params.classifier.Forward(x);
  if (params.arousal_regressor) {
    out.valence = Sigmoid(params.regressor.Forward(x)).Reshape({b});
    out.arousal = Sigmoid(params.arousal_regressor->Forward(x)).Reshape({b});
  } else {
    const Tensor reg = Sigmoid(params.regressor.Forward(x));
    out.valence = SliceCols(reg, 0, 1).Reshape({b});
    out.arousal = SliceCols(reg, 1, 1).Reshape({b});
  }
  return out;
}

}  // namespace bridgefuse
