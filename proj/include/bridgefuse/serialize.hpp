#ifndef BRIDGEFUSE_SERIALIZE_HPP_
#define BRIDGEFUSE_SERIALIZE_HPP_

// JSON forms of configs and results, the run configuration file, and the
// binary checkpoint format.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "bridgefuse/training.hpp"

namespace bridgefuse {

using Json = nlohmann::json;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::uint64_t Fnv1a64(std::string_view bytes);
std::string HexDigest(std::uint64_t value);

// Parsers reject unknown keys and fill absent keys with defaults.
Json ToJson(const ModelConfig& c);
ModelConfig ModelConfigFromJson(const Json& j);
Json ToJson(const TrainConfig& c);
TrainConfig TrainConfigFromJson(const Json& j);
Json ToJson(const RmmSchedule& s);
RmmSchedule RmmScheduleFromJson(const Json& j);
Json ToJson(const SynthSpec& s);
SynthSpec SynthSpecFromJson(const Json& j);
Json ToJson(const ExperimentConfig& c);

Json ToJson(const EvalReport& r);
EvalReport EvalReportFromJson(const Json& j);
Json ToJson(const FoldResult& r);
FoldResult FoldResultFromJson(const Json& j);
Json ToJson(const ExperimentResult& r);

/// Hash of the canonical JSON form of a model config.
std::uint64_t ConfigHash(const ModelConfig& c);

/// Everything `train` needs: experiment, data source and output location.
struct RunConfig {
  ExperimentConfig experiment;
  std::optional<std::filesystem::path> manifest;
  std::optional<SynthSpec> synthetic;
  std::filesystem::path output_dir;
  int jobs = 1;

  void Validate() const;
};

/// Relative manifest/output paths are resolved against `base_dir`.
RunConfig RunConfigFromJson(const Json& j, const std::filesystem::path& base_dir = {});
Json ToJson(const RunConfig& c);
RunConfig LoadRunConfig(const std::filesystem::path& path);

// ---- checkpoints ---------------------------------------------------------
//
// Little-endian binary: magic "BFCKPT01", u32 format version, u64 config
// hash, u32 config-JSON length + bytes, i32 epoch, u32 parameter count, then
// per parameter {u32 name length, name, u32 rank, u64 dims[rank], f64 data},
// u32 moment count, per moment {i64 step, f64 first[n], f64 second[n]}, and
// finally u32 length + bytes of a free-form JSON blob.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig model_config;
  std::uint64_t config_hash = 0;
  int epoch = 0;
  FusionModel model;
  std::vector<AdamMoments> moments;
  Json extra;
};

void SaveCheckpoint(const std::filesystem::path& path, const FusionModel& model, int epoch,
                    const std::vector<AdamMoments>& moments = {}, const Json& extra = Json::object());
Checkpoint LoadCheckpoint(const std::filesystem::path& path);

/// Writes `text` to `path` via a temporary file and rename.
void WriteTextFile(const std::filesystem::path& path, const std::string& text);
std::string ReadTextFile(const std::filesystem::path& path);

}  // namespace bridgefuse

#endif  // BRIDGEFUSE_SERIALIZE_HPP_
