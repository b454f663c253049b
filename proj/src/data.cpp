#include "bridgefuse/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

namespace bridgefuse {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "feature files are read as native little-endian");

std::string_view EmotionName(Emotion e) {
  switch (e) {
    case Emotion::kNeutral:
      return "neutral";
    case Emotion::kHappy:
      return "happy";
    case Emotion::kSad:
      return "sad";
    case Emotion::kAngry:
      return "angry";
  }
  return "?";
}

void UtteranceRecord::Validate() const {
  const std::string who = "record '" + utt_id + "': ";
  if (speaker_id < 0 || speaker_id >= kNumSpeakers) throw DataError(who + "speaker id outside [0,9]");
  if (audio.rows() < 1 || text.rows() < 1) throw DataError(who + "empty sequence");
  if (audio.cols() != text.cols() || audio.cols() < 1) throw DataError(who + "audio/text feature dims differ");
  const int e = static_cast<int>(emotion);
  if (e < 0 || e >= kNumEmotions) throw DataError(who + "emotion outside the 4-class set");
  if (!(valence >= 0.0 && valence <= 1.0)) throw DataError(who + "valence outside [0,1]");
  if (!(arousal >= 0.0 && arousal <= 1.0)) throw DataError(who + "arousal outside [0,1]");
  if (!audio.allFinite() || !text.allFinite()) throw DataError(who + "non-finite feature value");
}

Tensor Batch::AudioAt(Index b) const {
  const Index n = seq_len(), d = feature_dim();
  return Tensor({n, d}, audio.data().segment(b * n * d, n * d));
}

Tensor Batch::TextAt(Index b) const {
  const Index n = seq_len(), d = feature_dim();
  return Tensor({n, d}, text.data().segment(b * n * d, n * d));
}

void SynthSpec::Validate() const {
  if (n_utterances <= 0 || n_utterances % kNumSpeakers != 0) {
    throw std::invalid_argument("SynthSpec: n_utterances must be a positive multiple of 10");
  }
  if (d < kNumEmotions) throw std::invalid_argument("SynthSpec: d must be at least 4");
  if (min_len < 1 || max_len < min_len) throw std::invalid_argument("SynthSpec: invalid sequence length range");
  if (!(class_separation >= 0.0)) throw std::invalid_argument("SynthSpec: class_separation must be >= 0");
  if (!(dim_noise >= 0.0)) throw std::invalid_argument("SynthSpec: dim_noise must be >= 0");
}

Emotion MergeLabels(std::string_view raw_label) {
  if (raw_label == "neutral") return Emotion::kNeutral;
  if (raw_label == "happy" || raw_label == "excited") return Emotion::kHappy;
  if (raw_label == "sad") return Emotion::kSad;
  if (raw_label == "angry") return Emotion::kAngry;
  throw DataError("excluded class: '" + std::string(raw_label) + "'");
}

FoldPlan MakeFoldPlan(int n_speakers) {
  if (n_speakers != kNumSpeakers) {
    throw std::invalid_argument("MakeFoldPlan: exactly 10 speakers required, got " + std::to_string(n_speakers));
  }
  FoldPlan plan;
  for (int k = 0; k < kNumSpeakers; ++k) {
    Fold f;
    f.index = k;
    f.test_speaker = k;
    f.val_speaker = (k + 1) % kNumSpeakers;
    for (int i = 0; i < 8; ++i) f.train_speakers[static_cast<std::size_t>(i)] = (k + 2 + i) % kNumSpeakers;
    std::sort(f.train_speakers.begin(), f.train_speakers.end());
    plan.folds.push_back(f);
  }
  return plan;
}

Batch CollateBatch(std::span<const UtteranceRecord* const> records) {
  if (records.empty()) throw std::invalid_argument("CollateBatch: empty batch");
  const Index d = records.front()->feature_dim();
  Index n = 1;
  for (const auto* r : records) {
    if (r->feature_dim() != d) throw DataError("CollateBatch: records disagree on feature dim");
    n = std::max({n, r->audio.rows(), r->text.rows()});
  }
  const auto b = static_cast<Index>(records.size());
  Eigen::VectorXd audio = Eigen::VectorXd::Zero(b * n * d);
  Eigen::VectorXd text = Eigen::VectorXd::Zero(b * n * d);
  Batch batch;
  batch.valence.resize(b);
  batch.arousal.resize(b);
  for (Index i = 0; i < b; ++i) {
    const auto& r = *records[static_cast<std::size_t>(i)];
    Eigen::Map<RowMatrix>(audio.data() + i * n * d, n, d).topRows(r.audio.rows()) = r.audio;
    Eigen::Map<RowMatrix>(text.data() + i * n * d, n, d).topRows(r.text.rows()) = r.text;
    Mask am = Mask::Constant(n, false), tm = Mask::Constant(n, false);
    am.head(r.audio.rows()).setConstant(true);
    tm.head(r.text.rows()).setConstant(true);
    batch.audio_mask.push_back(std::move(am));
    batch.text_mask.push_back(std::move(tm));
    batch.emotions.push_back(static_cast<int>(r.emotion));
    batch.valence[i] = r.valence;
    batch.arousal[i] = r.arousal;
  }
  batch.audio = Tensor({b, n, d}, std::move(audio));
  batch.text = Tensor({b, n, d}, std::move(text));
  return batch;
}

namespace {

std::vector<Batch> BatchInOrder(const std::vector<const UtteranceRecord*>& order, int batch_size) {
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t count = std::min(order.size() - start, static_cast<std::size_t>(batch_size));
    batches.push_back(CollateBatch(std::span(order).subspan(start, count)));
  }
  return batches;
}

std::vector<const UtteranceRecord*> Pointers(std::span<const UtteranceRecord> records, int batch_size) {
  if (batch_size < 1) throw std::invalid_argument("MakeBatches: batch_size must be >= 1");
  if (records.empty()) throw std::invalid_argument("MakeBatches: no records");
  std::vector<const UtteranceRecord*> order;
  order.reserve(records.size());
  for (const auto& r : records) order.push_back(&r);
  return order;
}

}  // namespace

std::vector<Batch> MakeBatches(std::span<const UtteranceRecord> records, int batch_size, Rng& rng) {
  auto order = Pointers(records, batch_size);
  std::shuffle(order.begin(), order.end(), rng);
  return BatchInOrder(order, batch_size);
}

std::vector<Batch> MakeBatches(std::span<const UtteranceRecord> records, int batch_size) {
  return BatchInOrder(Pointers(records, batch_size), batch_size);
}

std::vector<UtteranceRecord> GenerateSynthetic(const SynthSpec& spec) {
  spec.Validate();
  Rng rng(spec.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const Index d = spec.d;
  // Class means sit on scaled basis vectors: every pair is class_separation apart.
  const double radius = spec.class_separation / std::sqrt(2.0);
  auto mean_of = [&](int c, bool text) {
    Eigen::RowVectorXd mu = Eigen::RowVectorXd::Zero(d);
    mu[text ? d - 1 - c : c] = radius;
    return mu;
  };

  std::vector<UtteranceRecord> records;
  records.reserve(static_cast<std::size_t>(spec.n_utterances));
  const int width = static_cast<int>(std::to_string(spec.n_utterances - 1).size());
  for (int i = 0; i < spec.n_utterances; ++i) {
    UtteranceRecord r;
    std::ostringstream id;
    id << "synth_" << std::setw(width) << std::setfill('0') << i;
    r.utt_id = id.str();
    r.speaker_id = i % kNumSpeakers;
    const int c = static_cast<int>(rng() % kNumEmotions);
    r.emotion = static_cast<Emotion>(c);
    const auto span = static_cast<std::uint64_t>(spec.max_len - spec.min_len + 1);
    const Index ta = spec.min_len + static_cast<Index>(rng() % span);
    const Index tt = spec.min_len + static_cast<Index>(rng() % span);
    r.audio.resize(ta, d);
    r.text.resize(tt, d);
    const Eigen::RowVectorXd mu_a = mean_of(c, false), mu_t = mean_of(c, true);
    // Values are rounded through float32 so the on-disk copy is exact.
    for (Index t = 0; t < ta; ++t)
      for (Index j = 0; j < d; ++j) r.audio(t, j) = static_cast<float>(mu_a[j] + noise(rng));
    for (Index t = 0; t < tt; ++t)
      for (Index j = 0; j < d; ++j) r.text(t, j) = static_cast<float>(mu_t[j] + noise(rng));
    const auto& anchor = kSyntheticAnchors[static_cast<std::size_t>(c)];
    const double dv = UniformIn(rng, -spec.dim_noise, spec.dim_noise);
    const double da = UniformIn(rng, -spec.dim_noise, spec.dim_noise);
    r.valence = std::clamp(anchor[0] + dv, 0.0, 1.0);
    r.arousal = std::clamp(anchor[1] + da, 0.0, 1.0);
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<UtteranceRecord> SelectSpeakers(std::span<const UtteranceRecord> records, std::span<const int> speakers) {
  std::vector<UtteranceRecord> out;
  for (const auto& r : records) {
    if (std::find(speakers.begin(), speakers.end(), r.speaker_id) != speakers.end()) out.push_back(r);
  }
  return out;
}

// ---- files ---------------------------------------------------------------

RowMatrix ReadFeatureFile(const fs::path& path, Index rows, Index cols) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open feature file " + path.string());
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<Index>(in.tellg());
  const Index expected = rows * cols * static_cast<Index>(sizeof(float));
  if (bytes != expected) {
    throw DataError("feature file " + path.string() + " holds " + std::to_string(bytes / 4) + " floats, expected " +
                    std::to_string(rows) + "x" + std::to_string(cols));
  }
  in.seekg(0);
  std::vector<float> buf(static_cast<std::size_t>(rows * cols));
  in.read(reinterpret_cast<char*>(buf.data()), expected);
  RowMatrix m(rows, cols);
  for (Index i = 0; i < rows * cols; ++i) m.data()[i] = buf[static_cast<std::size_t>(i)];
  return m;
}

void WriteFeatureFile(const fs::path& path, const RowMatrix& m) {
  std::vector<float> buf(static_cast<std::size_t>(m.size()));
  for (Index i = 0; i < m.size(); ++i) buf[static_cast<std::size_t>(i)] = static_cast<float>(m.data()[i]);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write feature file " + path.string());
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

namespace {

// Numeric fields may also arrive as strings ("4.5").
double NumberField(const json& row, const char* key) {
  const json& v = row.at(key);
  if (!v.is_string()) return v.get<double>();
  const std::string text = v.get<std::string>();
  std::size_t used = 0;
  double value = 0.0;
  try {
    value = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size()) throw DataError(std::string(key) + ": not a number: '" + text + "'");
  return value;
}

}  // namespace

std::vector<UtteranceRecord> LoadManifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("manifest not found: " + path.string());
  const fs::path base = path.parent_path();
  std::vector<UtteranceRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no) + ": ";
    try {
      const json row = json::parse(line);
      UtteranceRecord r;
      r.utt_id = row.at("utt_id").get<std::string>();
      r.speaker_id = row.at("speaker_id").get<int>();
      r.emotion = MergeLabels(row.at("raw_label").get<std::string>());
      const bool raw_scale = row.value("raw_scale_0_5", false);
      r.valence = NumberField(row, "valence");
      r.arousal = NumberField(row, "arousal");
      if (raw_scale) {
        r.valence /= 5.0;
        r.arousal /= 5.0;
      }
      const Index ta = row.at("T_a").get<Index>(), tt = row.at("T_t").get<Index>(), d = row.at("d").get<Index>();
      if (ta < 1 || tt < 1 || d < 1) throw DataError("declared lengths must be positive");
      r.audio = ReadFeatureFile(base / row.at("audio_path").get<std::string>(), ta, d);
      r.text = ReadFeatureFile(base / row.at("text_path").get<std::string>(), tt, d);
      r.Validate();
      records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw DataError(where + e.what());
    } catch (const DataError& e) {
      throw DataError(where + e.what());
    }
  }
  return records;
}

fs::path WriteDataset(const fs::path& dir, std::span<const UtteranceRecord> records) {
  fs::create_directories(dir / "features");
  const fs::path manifest = dir / "manifest.jsonl";
  std::ofstream out(manifest, std::ios::trunc);
  if (!out) throw DataError("cannot write manifest " + manifest.string());
  for (const auto& r : records) {
    r.Validate();
    const std::string audio_rel = "features/" + r.utt_id + ".audio.f32";
    const std::string text_rel = "features/" + r.utt_id + ".text.f32";
    WriteFeatureFile(dir / audio_rel, r.audio);
    WriteFeatureFile(dir / text_rel, r.text);
    json row = {{"utt_id", r.utt_id},
                {"speaker_id", r.speaker_id},
                {"raw_label", std::string(EmotionName(r.emotion))},
                {"valence", r.valence},
                {"arousal", r.arousal},
                {"audio_path", audio_rel},
                {"text_path", text_rel},
                {"T_a", r.audio.rows()},
                {"T_t", r.text.rows()},
                {"d", r.feature_dim()},
                {"raw_scale_0_5", false}};
    out << row.dump() << '\n';
  }
  return manifest;
}

}  // namespace bridgefuse
