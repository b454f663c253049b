#ifndef BRIDGEFUSE_MODEL_HPP_
#define BRIDGEFUSE_MODEL_HPP_

#include <optional>
#include <string>
#include <vector>

#include "bridgefuse/attention.hpp"
#include "bridgefuse/data.hpp"
#include "bridgefuse/heads.hpp"
#include "bridgefuse/rmm.hpp"

namespace bridgefuse {

struct ModelConfig {
  FusionConfig fusion;
  Index d_hidden = 0;  // 0 selects d_model / 2
  bool per_dimension_regressor = false;

  HeadConfig head() const { return {fusion.d_model, d_hidden, per_dimension_regressor}; }
  void Validate() const;
};

struct NamedParameter {
  std::string name;
  ParamGroup group;
  Tensor tensor;
};

/// Self-attention refinement per modality, cross-attention fusion (with or
/// without bridge tokens) and the classifier/regressor head.
class FusionModel {
 public:
  static FusionModel Init(const ModelConfig& config, Rng& rng);

  const ModelConfig& config() const { return config_; }

  /// Handles onto the live parameters, in a fixed order.
  std::vector<NamedParameter> Parameters() const;
  Index ParameterCount() const;
  void ZeroGrad();

  /// Deep copy. With `trainable == false` the copy records no gradients.
  FusionModel Clone(bool trainable = true) const;
  /// Overwrites parameter values; configs must match.
  void LoadValues(const FusionModel& other);

  /// Shared emotional embedding e_s (length d_model) of one padded sample.
  Tensor Embed(const Tensor& audio, const Tensor& text, const Mask& audio_mask, const Mask& text_mask) const;

  Prediction Forward(const Batch& batch) const;

  const std::optional<MultiHeadAttentionParams>& audio_refine() const { return audio_refine_; }
  const std::optional<MultiHeadAttentionParams>& text_refine() const { return text_refine_; }
  const std::optional<MultiHeadAttentionParams>& audio_keyed() const { return audio_keyed_; }
  const std::optional<MultiHeadAttentionParams>& text_keyed() const { return text_keyed_; }
  const std::optional<BridgeTokenBank>& bank() const { return bank_; }
  const HeadParams& heads() const { return heads_; }
  std::optional<BridgeTokenBank>& mutable_bank() { return bank_; }
  HeadParams& mutable_heads() { return heads_; }

 private:
  ModelConfig config_;
  std::optional<MultiHeadAttentionParams> audio_refine_;
  std::optional<MultiHeadAttentionParams> text_refine_;
  // Cross-attention producing e_a (audio keys) and e_t (text keys).
  std::optional<MultiHeadAttentionParams> audio_keyed_;
  std::optional<MultiHeadAttentionParams> text_keyed_;
  std::optional<BridgeTokenBank> bank_;
  HeadParams heads_;
};

}  // namespace bridgefuse

#endif  // BRIDGEFUSE_MODEL_HPP_
