#include "bridgefuse/serialize.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace bridgefuse {

namespace fs = std::filesystem;

namespace {

void CheckKeys(const Json& j, std::initializer_list<std::string_view> allowed, std::string_view where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError(std::string(where) + ": unknown key '" + key + "'");
    }
  }
}

template <typename T>
void Read(const Json& j, const char* key, T& out, std::string_view where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError(std::string(where) + "." + key + ": " + e.what());
  }
}

Json Optional(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

std::optional<double> OptionalFrom(const Json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

Json ToJson(const MetricSummary& s) { return {{"mean", s.mean}, {"std", s.std}}; }

// ---- binary helpers ------------------------------------------------------

template <typename T>
void Put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T Get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint truncated");
  return v;
}

void PutString(std::ostream& out, const std::string& s) {
  Put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string GetString(std::istream& in) {
  const auto n = Get<std::uint32_t>(in);
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw std::runtime_error("checkpoint truncated");
  return s;
}

void PutDoubles(std::ostream& out, const Eigen::VectorXd& v) {
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

Eigen::VectorXd GetDoubles(std::istream& in, Index n) {
  Eigen::VectorXd v(n);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw std::runtime_error("checkpoint truncated");
  return v;
}

constexpr char kMagic[8] = {'B', 'F', 'C', 'K', 'P', 'T', '0', '1'};

}  // namespace

std::uint64_t Fnv1a64(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string HexDigest(std::uint64_t value) {
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << value;
  return out.str();
}

// ---- configs -------------------------------------------------------------

Json ToJson(const ModelConfig& c) {
  const auto& f = c.fusion;
  return {{"d_model", f.d_model},
          {"n_heads_self", f.n_heads_self},
          {"n_heads_cross", f.n_heads_cross},
          {"n_bridge_tokens", f.n_bridge_tokens},
          {"use_self_attention", f.use_self_attention},
          {"use_cross_attention", f.use_cross_attention},
          {"use_bridge_tokens", f.use_bridge_tokens},
          {"mask_padded_keys", f.mask_padded_keys},
          {"d_hidden", c.d_hidden},
          {"per_dimension_regressor", c.per_dimension_regressor}};
}

ModelConfig ModelConfigFromJson(const Json& j) {
  constexpr std::string_view where = "model";
  CheckKeys(j,
            {"d_model", "n_heads_self", "n_heads_cross", "n_bridge_tokens", "use_self_attention",
             "use_cross_attention", "use_bridge_tokens", "mask_padded_keys", "d_hidden", "per_dimension_regressor"},
            where);
  ModelConfig c;
  auto& f = c.fusion;
  Read(j, "d_model", f.d_model, where);
  Read(j, "n_heads_self", f.n_heads_self, where);
  Read(j, "n_heads_cross", f.n_heads_cross, where);
  Read(j, "n_bridge_tokens", f.n_bridge_tokens, where);
  Read(j, "use_self_attention", f.use_self_attention, where);
  Read(j, "use_cross_attention", f.use_cross_attention, where);
  Read(j, "use_bridge_tokens", f.use_bridge_tokens, where);
  Read(j, "mask_padded_keys", f.mask_padded_keys, where);
  Read(j, "d_hidden", c.d_hidden, where);
  Read(j, "per_dimension_regressor", c.per_dimension_regressor, where);
  return c;
}

Json ToJson(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs_per_fold},
          {"clip_norm", c.clip_norm},
          {"loss_weights", {c.weights.categorical, c.weights.valence, c.weights.arousal}},
          {"seeds", c.seeds},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_eps", c.adam_eps},
          {"selection_metric", c.selection == SelectionMetric::kValWar ? "val_war" : "val_total_loss"}};
}

TrainConfig TrainConfigFromJson(const Json& j) {
  constexpr std::string_view where = "train";
  CheckKeys(j,
            {"learning_rate", "batch_size", "epochs", "clip_norm", "loss_weights", "seeds", "adam_beta1",
             "adam_beta2", "adam_eps", "selection_metric"},
            where);
  TrainConfig c;
  Read(j, "learning_rate", c.learning_rate, where);
  Read(j, "batch_size", c.batch_size, where);
  Read(j, "epochs", c.epochs_per_fold, where);
  Read(j, "clip_norm", c.clip_norm, where);
  Read(j, "seeds", c.seeds, where);
  Read(j, "adam_beta1", c.adam_beta1, where);
  Read(j, "adam_beta2", c.adam_beta2, where);
  Read(j, "adam_eps", c.adam_eps, where);
  if (j.contains("loss_weights")) {
    std::vector<double> w;
    Read(j, "loss_weights", w, where);
    if (w.size() != 3) throw ConfigError("train.loss_weights: expected three values");
    try {
      c.weights = LossWeights::Normalized(w[0], w[1], w[2]);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("train.loss_weights: ") + e.what());
    }
  }
  if (j.contains("selection_metric")) {
    std::string m;
    Read(j, "selection_metric", m, where);
    if (m == "val_war") {
      c.selection = SelectionMetric::kValWar;
    } else if (m == "val_total_loss") {
      c.selection = SelectionMetric::kValTotalLoss;
    } else {
      throw ConfigError("train.selection_metric: expected val_war or val_total_loss");
    }
  }
  return c;
}

Json ToJson(const RmmSchedule& s) {
  return {{"enabled", s.enabled},
          {"initial_probability", s.initial_probability},
          {"floor", s.floor},
          {"text_mask_probability", s.text_mask_probability}};
}

RmmSchedule RmmScheduleFromJson(const Json& j) {
  constexpr std::string_view where = "rmm";
  CheckKeys(j, {"enabled", "initial_probability", "floor", "text_mask_probability"}, where);
  RmmSchedule s;
  s.enabled = false;
  Read(j, "enabled", s.enabled, where);
  Read(j, "initial_probability", s.initial_probability, where);
  Read(j, "floor", s.floor, where);
  Read(j, "text_mask_probability", s.text_mask_probability, where);
  return s;
}

Json ToJson(const SynthSpec& s) {
  return {{"n_utterances", s.n_utterances}, {"d", s.d},
          {"min_len", s.min_len},           {"max_len", s.max_len},
          {"class_separation", s.class_separation}, {"dim_noise", s.dim_noise},
          {"seed", s.seed}};
}

SynthSpec SynthSpecFromJson(const Json& j) {
  constexpr std::string_view where = "data.synthetic";
  CheckKeys(j, {"n_utterances", "d", "min_len", "max_len", "class_separation", "dim_noise", "seed"}, where);
  SynthSpec s;
  Read(j, "n_utterances", s.n_utterances, where);
  Read(j, "d", s.d, where);
  Read(j, "min_len", s.min_len, where);
  Read(j, "max_len", s.max_len, where);
  Read(j, "class_separation", s.class_separation, where);
  Read(j, "dim_noise", s.dim_noise, where);
  Read(j, "seed", s.seed, where);
  return s;
}

Json ToJson(const ExperimentConfig& c) {
  Json rmm = ToJson(c.rmm);
  return {{"label", c.label}, {"model", ToJson(c.model)}, {"train", ToJson(c.train)}, {"rmm", rmm},
          {"folds", c.folds}};
}

std::uint64_t ConfigHash(const ModelConfig& c) { return Fnv1a64(ToJson(c).dump()); }

// ---- results -------------------------------------------------------------

Json ToJson(const EvalReport& r) {
  Json confusion = Json::array();
  for (int i = 0; i < kNumEmotions; ++i) {
    Json row = Json::array();
    for (int k = 0; k < kNumEmotions; ++k) row.push_back(r.confusion(i, k));
    confusion.push_back(row);
  }
  return {{"war", r.war},
          {"uar", r.uar},
          {"ccc_valence", Optional(r.ccc_valence)},
          {"ccc_arousal", Optional(r.ccc_arousal)},
          {"confusion", confusion},
          {"n_samples", r.n_samples},
          {"loss", Optional(r.loss)}};
}

EvalReport EvalReportFromJson(const Json& j) {
  EvalReport r;
  r.war = j.at("war").get<double>();
  r.uar = j.at("uar").get<double>();
  r.ccc_valence = OptionalFrom(j, "ccc_valence");
  r.ccc_arousal = OptionalFrom(j, "ccc_arousal");
  r.n_samples = j.at("n_samples").get<long>();
  r.loss = OptionalFrom(j, "loss");
  const auto& conf = j.at("confusion");
  for (int i = 0; i < kNumEmotions; ++i)
    for (int k = 0; k < kNumEmotions; ++k) r.confusion(i, k) = conf.at(i).at(k).get<long>();
  return r;
}

Json ToJson(const FoldResult& r) {
  Json epochs = Json::array();
  for (const auto& e : r.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"val_loss", e.val_loss},
                      {"val_war", e.val_war},
                      {"rmm_mask_active", e.decision.mask_active},
                      {"rmm_masked_modality", std::string(ModalityName(e.decision.masked))}});
  }
  return {{"fold", r.fold_index},
          {"seed", r.seed},
          {"best_epoch", r.best_epoch},
          {"parameter_count", r.parameter_count},
          {"test", ToJson(r.test)},
          {"epochs", epochs}};
}

FoldResult FoldResultFromJson(const Json& j) {
  FoldResult r;
  r.fold_index = j.at("fold").get<int>();
  r.seed = j.at("seed").get<int>();
  r.best_epoch = j.at("best_epoch").get<int>();
  r.parameter_count = j.at("parameter_count").get<Index>();
  r.test = EvalReportFromJson(j.at("test"));
  for (const auto& e : j.at("epochs")) {
    EpochLog log;
    log.epoch = e.at("epoch").get<int>();
    log.train_loss = e.at("train_loss").get<double>();
    log.val_loss = e.at("val_loss").get<double>();
    log.val_war = e.at("val_war").get<double>();
    log.decision.mask_active = e.at("rmm_mask_active").get<bool>();
    const auto m = e.at("rmm_masked_modality").get<std::string>();
    log.decision.masked = m == "text" ? Modality::kText : m == "audio" ? Modality::kAudio : Modality::kNone;
    r.epochs.push_back(log);
  }
  return r;
}

Json ToJson(const ExperimentResult& r) {
  Json seeds = Json::array();
  for (const auto& s : r.seeds) {
    seeds.push_back({{"seed", s.seed},
                     {"war", s.war},
                     {"uar", s.uar},
                     {"ccc_valence", Optional(s.ccc_valence)},
                     {"ccc_arousal", Optional(s.ccc_arousal)},
                     {"folds", s.folds.size()}});
  }
  const auto& f = r.config.model.fusion;
  const auto& w = r.config.train.weights;
  return {{"label", r.config.label},
          {"flags",
           {{"self_attention", f.use_self_attention},
            {"cross_attention", f.use_cross_attention},
            {"bridge_tokens", f.use_bridge_tokens},
            {"rmm", r.config.rmm.enabled},
            {"categorical", w.categorical > 0.0},
            {"dimensional", w.valence > 0.0 || w.arousal > 0.0}}},
          {"config_hash", HexDigest(ConfigHash(r.config.model))},
          {"per_seed", seeds},
          {"war", ToJson(r.war)},
          {"uar", ToJson(r.uar)},
          {"ccc_valence", r.ccc_valence ? ToJson(*r.ccc_valence) : Json(nullptr)},
          {"ccc_arousal", r.ccc_arousal ? ToJson(*r.ccc_arousal) : Json(nullptr)}};
}

// ---- run config ----------------------------------------------------------

void RunConfig::Validate() const {
  experiment.Validate();
  if (manifest.has_value() == synthetic.has_value()) {
    throw ConfigError("data: exactly one of 'manifest' or 'synthetic' is required");
  }
  if (synthetic) synthetic->Validate();
  if (synthetic && synthetic->d != experiment.model.fusion.d_model) {
    throw ConfigError("data.synthetic.d must equal model.d_model");
  }
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
}

RunConfig RunConfigFromJson(const Json& j, const fs::path& base_dir) {
  CheckKeys(j, {"label", "data", "model", "train", "rmm", "folds", "output_dir", "jobs"}, "config");
  RunConfig c;
  Read(j, "label", c.experiment.label, "config");
  if (j.contains("model")) c.experiment.model = ModelConfigFromJson(j.at("model"));
  if (j.contains("train")) c.experiment.train = TrainConfigFromJson(j.at("train"));
  c.experiment.rmm.enabled = false;
  if (j.contains("rmm")) c.experiment.rmm = RmmScheduleFromJson(j.at("rmm"));
  c.experiment.rmm.total_epochs = c.experiment.train.epochs_per_fold;
  Read(j, "folds", c.experiment.folds, "config");
  Read(j, "jobs", c.jobs, "config");
  if (j.contains("data")) {
    const auto& d = j.at("data");
    CheckKeys(d, {"manifest", "synthetic"}, "data");
    if (d.contains("manifest")) {
      fs::path p = d.at("manifest").get<std::string>();
      c.manifest = p.is_relative() ? base_dir / p : p;
    }
    if (d.contains("synthetic")) c.synthetic = SynthSpecFromJson(d.at("synthetic"));
  }
  if (j.contains("output_dir")) {
    fs::path p = j.at("output_dir").get<std::string>();
    c.output_dir = p.is_relative() ? base_dir / p : p;
  }
  return c;
}

Json ToJson(const RunConfig& c) {
  Json j = ToJson(c.experiment);
  Json data = Json::object();
  if (c.manifest) data["manifest"] = c.manifest->string();
  if (c.synthetic) data["synthetic"] = ToJson(*c.synthetic);
  j["data"] = data;
  j["output_dir"] = c.output_dir.string();
  j["jobs"] = c.jobs;
  return j;
}

RunConfig LoadRunConfig(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return RunConfigFromJson(j, path.parent_path());
}

// ---- files ---------------------------------------------------------------

void WriteTextFile(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
  }
  fs::rename(tmp, path);
}

std::string ReadTextFile(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void SaveCheckpoint(const fs::path& path, const FusionModel& model, int epoch,
                    const std::vector<AdamMoments>& moments, const Json& extra) {
  std::ostringstream out(std::ios::binary);
  out.write(kMagic, sizeof(kMagic));
  Put<std::uint32_t>(out, kCheckpointVersion);
  Put<std::uint64_t>(out, ConfigHash(model.config()));
  PutString(out, ToJson(model.config()).dump());
  Put<std::int32_t>(out, epoch);
  const auto params = model.Parameters();
  Put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    PutString(out, p.name);
    Put<std::uint32_t>(out, static_cast<std::uint32_t>(p.tensor.rank()));
    for (Index d : p.tensor.shape()) Put<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    PutDoubles(out, p.tensor.data());
  }
  Put<std::uint32_t>(out, static_cast<std::uint32_t>(moments.size()));
  for (const auto& m : moments) {
    Put<std::int64_t>(out, m.step);
    Put<std::uint64_t>(out, static_cast<std::uint64_t>(m.first.size()));
    PutDoubles(out, m.first);
    PutDoubles(out, m.second);
  }
  PutString(out, extra.dump());
  WriteTextFile(path, out.str());
}

Checkpoint LoadCheckpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error(path.string() + ": not a checkpoint");
  }
  const auto version = Get<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw std::runtime_error(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.config_hash = Get<std::uint64_t>(in);
  ck.model_config = ModelConfigFromJson(Json::parse(GetString(in)));
  if (ConfigHash(ck.model_config) != ck.config_hash) {
    throw std::runtime_error(path.string() + ": config hash does not match stored config");
  }
  ck.epoch = Get<std::int32_t>(in);
  Rng scratch(0);
  ck.model = FusionModel::Init(ck.model_config, scratch);
  auto params = ck.model.Parameters();
  const auto n = Get<std::uint32_t>(in);
  if (n != params.size()) throw std::runtime_error(path.string() + ": parameter count mismatch");
  for (auto& p : params) {
    const std::string name = GetString(in);
    const auto rank = Get<std::uint32_t>(in);
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<Index>(Get<std::uint64_t>(in)));
    if (name != p.name || shape != p.tensor.shape()) {
      throw std::runtime_error(path.string() + ": unexpected parameter " + name + " " + ShapeString(shape));
    }
    p.tensor.mutable_data() = GetDoubles(in, p.tensor.size());
  }
  const auto n_moments = Get<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < n_moments; ++i) {
    AdamMoments m;
    m.step = Get<std::int64_t>(in);
    const auto len = static_cast<Index>(Get<std::uint64_t>(in));
    m.first = GetDoubles(in, len);
    m.second = GetDoubles(in, len);
    ck.moments.push_back(std::move(m));
  }
  ck.extra = Json::parse(GetString(in));
  return ck;
}

}  // namespace bridgefuse
