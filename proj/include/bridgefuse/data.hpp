#ifndef BRIDGEFUSE_DATA_HPP_
#define BRIDGEFUSE_DATA_HPP_

#include <array>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "bridgefuse/random.hpp"
#include "bridgefuse/tensor.hpp"

namespace bridgefuse {

inline constexpr int kNumEmotions = 4;
inline constexpr int kNumSpeakers = 10;

enum class Emotion : int { kNeutral = 0, kHappy = 1, kSad = 2, kAngry = 3 };

std::string_view EmotionName(Emotion e);

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct UtteranceRecord {
  std::string utt_id;
  int speaker_id = 0;
  RowMatrix audio;  // T_a × d
  RowMatrix text;   // T_t × d
  Emotion emotion = Emotion::kNeutral;
  double valence = 0.5;
  double arousal = 0.5;

  Index feature_dim() const { return audio.cols(); }
  /// Throws DataError when an invariant does not hold.
  void Validate() const;
};

/// One padded minibatch. Sequences are laid out as B×N×d tensors.
struct Batch {
  Tensor audio;
  Tensor text;
  std::vector<Mask> audio_mask;  // B masks of length N
  std::vector<Mask> text_mask;
  std::vector<int> emotions;
  Eigen::VectorXd valence;
  Eigen::VectorXd arousal;

  Index size() const { return static_cast<Index>(emotions.size()); }
  Index seq_len() const { return audio.dim(1); }
  Index feature_dim() const { return audio.dim(2); }
  /// Sample b as an N×d constant tensor.
  Tensor AudioAt(Index b) const;
  Tensor TextAt(Index b) const;
};

struct Fold {
  int index = 0;
  std::array<int, 8> train_speakers{};
  int val_speaker = 0;
  int test_speaker = 0;
};

struct FoldPlan {
  std::vector<Fold> folds;
};

struct SynthSpec {
  int n_utterances = 500;
  int d = 16;
  int min_len = 4;
  int max_len = 12;
  double class_separation = 6.0;
  double dim_noise = 0.05;
  std::uint64_t seed = 1;

  void Validate() const;
};

/// (valence, arousal) anchors of the synthetic generator, indexed by Emotion.
inline constexpr std::array<std::array<double, 2>, kNumEmotions> kSyntheticAnchors{{
    {0.5, 0.3},    // neutral
    {0.8, 0.7},    // happy
    {0.2, 0.2},    // sad
    {0.15, 0.85},  // angry
}};

/// excited folds into happy; any label outside the four-class set is rejected.
Emotion MergeLabels(std::string_view raw_label);

FoldPlan MakeFoldPlan(int n_speakers = kNumSpeakers);

/// Shuffles with `rng` and pads every batch to its own longest sequence.
std::vector<Batch> MakeBatches(std::span<const UtteranceRecord> records, int batch_size, Rng& rng);
/// Same, preserving record order.
std::vector<Batch> MakeBatches(std::span<const UtteranceRecord> records, int batch_size);
Batch CollateBatch(std::span<const UtteranceRecord* const> records);

std::vector<UtteranceRecord> GenerateSynthetic(const SynthSpec& spec);

/// Records whose speaker is in `speakers`, in input order.
std::vector<UtteranceRecord> SelectSpeakers(std::span<const UtteranceRecord> records, std::span<const int> speakers);

// ---- on-disk format ------------------------------------------------------
//
// manifest.jsonl: one JSON object per line with keys utt_id, speaker_id,
// raw_label, valence, arousal, audio_path, text_path, T_a, T_t, d,
// raw_scale_0_5. Paths are relative to the manifest's directory. Feature
// files are raw little-endian float32, row-major, exactly T·d values.

std::vector<UtteranceRecord> LoadManifest(const std::filesystem::path& path);

/// Writes `records` under `dir` (manifest.jsonl + features/). Returns the
/// manifest path.
std::filesystem::path WriteDataset(const std::filesystem::path& dir, std::span<const UtteranceRecord> records);

RowMatrix ReadFeatureFile(const std::filesystem::path& path, Index rows, Index cols);
void WriteFeatureFile(const std::filesystem::path& path, const RowMatrix& m);

}  // namespace bridgefuse

#endif  // BRIDGEFUSE_DATA_HPP_
