#include "bridgefuse/model.hpp"

#include <stdexcept>

namespace bridgefuse {

namespace {

void AddAttention(std::vector<NamedParameter>& out, const std::string& prefix, ParamGroup group,
                  const MultiHeadAttentionParams& p) {
  out.push_back({prefix + ".query", group, p.query});
  out.push_back({prefix + ".key", group, p.key});
  out.push_back({prefix + ".value", group, p.value});
  out.push_back({prefix + ".output", group, p.output});
}

void AddMlp(std::vector<NamedParameter>& out, const std::string& prefix, ParamGroup group, const Mlp& m) {
  out.push_back({prefix + ".hidden_weight", group, m.hidden_weight});
  out.push_back({prefix + ".hidden_bias", group, m.hidden_bias});
  out.push_back({prefix + ".out_weight", group, m.out_weight});
  out.push_back({prefix + ".out_bias", group, m.out_bias});
}

Tensor Copy(const Tensor& t, bool trainable) { return Tensor(t.shape(), t.data(), trainable); }

MultiHeadAttentionParams Copy(const MultiHeadAttentionParams& p, bool trainable) {
  return {p.n_heads, p.d_model, Copy(p.query, trainable), Copy(p.key, trainable), Copy(p.value, trainable),
          Copy(p.output, trainable)};
}

Mlp Copy(const Mlp& m, bool trainable) {
  return {Copy(m.hidden_weight, trainable), Copy(m.hidden_bias, trainable), Copy(m.out_weight, trainable),
          Copy(m.out_bias, trainable)};
}

}  // namespace

void ModelConfig::Validate() const {
  fusion.Validate();
  if (d_hidden < 0) throw std::invalid_argument("ModelConfig: d_hidden must be >= 0");
}

FusionModel FusionModel::Init(const ModelConfig& config, Rng& rng) {
  config.Validate();
  FusionModel m;
  m.config_ = config;
  const auto& f = config.fusion;
  if (f.use_self_attention) {
    m.audio_refine_ = MultiHeadAttentionParams::Init(f.d_model, f.n_heads_self, rng);
    m.text_refine_ = MultiHeadAttentionParams::Init(f.d_model, f.n_heads_self, rng);
  }
  if (f.use_cross_attention) {
    m.audio_keyed_ = MultiHeadAttentionParams::Init(f.d_model, f.n_heads_cross, rng);
    m.text_keyed_ = MultiHeadAttentionParams::Init(f.d_model, f.n_heads_cross, rng);
  }
  if (f.use_bridge_tokens) m.bank_ = BridgeTokenBank::Init(f.n_bridge_tokens, f.d_model, rng);
  m.heads_ = HeadParams::Init(config.head(), rng);
  return m;
}

std::vector<NamedParameter> FusionModel::Parameters() const {
  std::vector<NamedParameter> out;
  if (audio_refine_) AddAttention(out, "audio_refine", ParamGroup::kAudioRefine, *audio_refine_);
  if (text_refine_) AddAttention(out, "text_refine", ParamGroup::kTextRefine, *text_refine_);
  if (audio_keyed_) AddAttention(out, "cross_audio_keyed", ParamGroup::kCrossAttention, *audio_keyed_);
  if (text_keyed_) AddAttention(out, "cross_text_keyed", ParamGroup::kCrossAttention, *text_keyed_);
  if (bank_) {
    out.push_back({"bridge.audio_queries", ParamGroup::kBridgeTokens, bank_->audio_queries});
    out.push_back({"bridge.text_queries", ParamGroup::kBridgeTokens, bank_->text_queries});
  }
  AddMlp(out, "classifier", ParamGroup::kClassifier, heads_.classifier);
  AddMlp(out, "regressor", ParamGroup::kRegressor, heads_.regressor);
  if (heads_.arousal_regressor) AddMlp(out, "arousal_regressor", ParamGroup::kRegressor, *heads_.arousal_regressor);
  return out;
}

Index FusionModel::ParameterCount() const {
  Index n = 0;
  for (const auto& p : Parameters()) n += p.tensor.size();
  return n;
}

void FusionModel::ZeroGrad() {
  for (auto& p : Parameters()) p.tensor.zero_grad();
}

FusionModel FusionModel::Clone(bool trainable) const {
  FusionModel m;
  m.config_ = config_;
  if (audio_refine_) m.audio_refine_ = Copy(*audio_refine_, trainable);
  if (text_refine_) m.text_refine_ = Copy(*text_refine_, trainable);
  if (audio_keyed_) m.audio_keyed_ = Copy(*audio_keyed_, trainable);
  if (text_keyed_) m.text_keyed_ = Copy(*text_keyed_, trainable);
  if (bank_) m.bank_ = BridgeTokenBank{Copy(bank_->audio_queries, trainable), Copy(bank_->text_queries, trainable)};
  m.heads_.classifier = Copy(heads_.classifier, trainable);
  m.heads_.regressor = Copy(heads_.regressor, trainable);
  if (heads_.arousal_regressor) m.heads_.arousal_regressor = Copy(*heads_.arousal_regressor, trainable);
  return m;
}

void FusionModel::LoadValues(const FusionModel& other) {
  auto mine = Parameters();
  const auto theirs = other.Parameters();
  if (mine.size() != theirs.size()) throw std::invalid_argument("FusionModel::LoadValues: parameter sets differ");
  for (std::size_t i = 0; i < mine.size(); ++i) {
    if (mine[i].name != theirs[i].name || mine[i].tensor.shape() != theirs[i].tensor.shape()) {
      throw std::invalid_argument("FusionModel::LoadValues: mismatch at " + mine[i].name);
    }
    mine[i].tensor.mutable_data() = theirs[i].tensor.data();
  }
}

Tensor FusionModel::Embed(const Tensor& audio, const Tensor& text, const Mask& audio_mask,
                          const Mask& text_mask) const {
  const auto& f = config_.fusion;
  if (audio.rank() != 2 || text.rank() != 2 || audio.rows() != text.rows() || audio.cols() != f.d_model ||
      text.cols() != f.d_model) {
    throw ShapeError("FusionModel::Embed: audio " + ShapeString(audio.shape()) + ", text " +
                     ShapeString(text.shape()) + ", d_model " + std::to_string(f.d_model));
  }
  const Tensor a = f.use_self_attention ? SelfRefine(audio, *audio_refine_, audio_mask, f.mask_padded_keys) : audio;
  const Tensor t = f.use_self_attention ? SelfRefine(text, *text_refine_, text_mask, f.mask_padded_keys) : text;
  if (f.use_cross_attention && f.use_bridge_tokens) {
    const auto e = BridgeCrossAttend(*bank_, *audio_keyed_, *text_keyed_, a, t, audio_mask, text_mask,
                                     f.mask_padded_keys);
    return Fuse(e.audio_keyed, e.text_keyed);
  }
  if (f.use_cross_attention) {
    const auto e = ClassicCrossAttend(*audio_keyed_, *text_keyed_, a, t, audio_mask, text_mask, f.mask_padded_keys);
    return Fuse(e.audio_keyed, e.text_keyed, audio_mask, text_mask);
  }
  return Fuse(a, t, audio_mask, text_mask);
}

Prediction FusionModel::Forward(const Batch& batch) const {
  if (batch.feature_dim() != config_.fusion.d_model) {
    throw ShapeError("FusionModel::Forward: batch feature dim " + std::to_string(batch.feature_dim()) +
                     " differs from d_model " + std::to_string(config_.fusion.d_model));
  }
  std::vector<Tensor> fused;
  fused.reserve(static_cast<std::size_t>(batch.size()));
  for (Index b = 0; b < batch.size(); ++b) {
    const auto i = static_cast<std::size_t>(b);
    fused.push_back(Embed(batch.AudioAt(b), batch.TextAt(b), batch.audio_mask[i], batch.text_mask[i]));
  }
  return Predict(Stack(fused), heads_);
}

}  // namespace bridgefuse
