#ifndef BRIDGEFUSE_RMM_HPP_
#define BRIDGEFUSE_RMM_HPP_

#include <string_view>
#include <vector>

#include "bridgefuse/data.hpp"
#include "bridgefuse/random.hpp"

namespace bridgefuse {

enum class Modality { kNone, kAudio, kText };

std::string_view ModalityName(Modality m);

/// Random modality masking with a cosine-decayed per-epoch probability.
struct RmmSchedule {
  double initial_probability = 0.8;
  double floor = 0.1;
  double text_mask_probability = 0.6;
  int total_epochs = 20;
  bool enabled = true;

  void Validate() const;
};

struct EpochMaskDecision {
  bool mask_active = false;
  Modality masked = Modality::kNone;
};

/// p0 · ½(1 + cos(π·e/(E−1))), cut to 0 below the floor.
double MaskingProbability(int epoch, const RmmSchedule& schedule);

/// One uniform draw decides whether to mask; a second (only when masking)
/// picks text with text_mask_probability, audio otherwise. A disabled
/// schedule returns "no mask" without touching `rng`.
EpochMaskDecision DecideEpoch(int epoch, const RmmSchedule& schedule, Rng& rng);

/// Parameter groups of the fusion model, used for freezing.
enum class ParamGroup { kAudioRefine, kTextRefine, kCrossAttention, kBridgeTokens, kClassifier, kRegressor };

std::string_view ParamGroupName(ParamGroup g);

struct MaskedBatch {
  Batch batch;
  std::vector<ParamGroup> frozen;
};

/// Zeroes the masked modality's features (padding masks are untouched) and
/// names the refinement group that must not be updated.
MaskedBatch ApplyMask(const EpochMaskDecision& decision, const Batch& batch);

}  // namespace bridgefuse

#endif  // BRIDGEFUSE_RMM_HPP_
