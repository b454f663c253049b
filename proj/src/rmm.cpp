#include "bridgefuse/rmm.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace bridgefuse {

std::string_view ModalityName(Modality m) {
  switch (m) {
    case Modality::kNone:
      return "none";
    case Modality::kAudio:
      return "audio";
    case Modality::kText:
      return "text";
  }
  return "?";
}

std::string_view ParamGroupName(ParamGroup g) {
  switch (g) {
    case ParamGroup::kAudioRefine:
      return "audio_refine";
    case ParamGroup::kTextRefine:
      return "text_refine";
    case ParamGroup::kCrossAttention:
      return "cross_attention";
    case ParamGroup::kBridgeTokens:
      return "bridge_tokens";
    case ParamGroup::kClassifier:
      return "classifier";
    case ParamGroup::kRegressor:
      return "regressor";
  }
  return "?";
}

void RmmSchedule::Validate() const {
  if (!(floor >= 0.0 && floor < initial_probability && initial_probability <= 1.0)) {
    throw std::invalid_argument("RmmSchedule: require 0 <= floor < initial_probability <= 1");
  }
  if (!(text_mask_probability >= 0.0 && text_mask_probability <= 1.0)) {
    throw std::invalid_argument("RmmSchedule: text_mask_probability outside [0,1]");
  }
  if (total_epochs < 1) throw std::invalid_argument("RmmSchedule: total_epochs must be >= 1");
}

double MaskingProbability(int epoch, const RmmSchedule& schedule) {
  if (epoch < 0 || epoch >= schedule.total_epochs) {
    throw std::out_of_range("MaskingProbability: epoch " + std::to_string(epoch) + " outside [0, " +
                            std::to_string(schedule.total_epochs) + ")");
  }
  if (schedule.total_epochs == 1) return schedule.initial_probability;
  const double progress = static_cast<double>(epoch) / static_cast<double>(schedule.total_epochs - 1);
  const double raw = schedule.initial_probability * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return raw >= schedule.floor ? raw : 0.0;
}

EpochMaskDecision DecideEpoch(int epoch, const RmmSchedule& schedule, Rng& rng) {
  if (!schedule.enabled) return {};
  const double p = MaskingProbability(epoch, schedule);
  if (!(Uniform01(rng) < p)) return {};
  const bool text = Uniform01(rng) < schedule.text_mask_probability;
  return {true, text ? Modality::kText : Modality::kAudio};
}

MaskedBatch ApplyMask(const EpochMaskDecision& decision, const Batch& batch) {
  MaskedBatch out{batch, {}};
  if (!decision.mask_active || decision.masked == Modality::kNone) return out;
  if (decision.masked == Modality::kText) {
    out.batch.text = Tensor::Zeros(batch.text.shape());
    out.frozen.push_back(ParamGroup::kTextRefine);
  } else {
    out.batch.audio = Tensor::Zeros(batch.audio.shape());
    out.frozen.push_back(ParamGroup::kAudioRefine);
  }
  return out;
}

}  // namespace bridgefuse
