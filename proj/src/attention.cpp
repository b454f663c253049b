#include "bridgefuse/attention.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace bridgefuse {

namespace {

std::vector<Index> TrueRows(const Mask& m) {
  std::vector<Index> rows;
  for (Index i = 0; i < m.size(); ++i) {
    if (m[i]) rows.push_back(i);
  }
  return rows;
}

Tensor PooledMean(const Tensor& x, const std::optional<Mask>& pool) {
  if (!pool) return MeanOverAxis(x, 0);
  if (pool->size() != x.rows()) throw ShapeError("Fuse: pooling mask length differs from row count");
  const auto rows = TrueRows(*pool);
  if (rows.empty()) throw DomainError("Fuse: pooling mask selects no rows");
  if (static_cast<Index>(rows.size()) == x.rows()) return MeanOverAxis(x, 0);
  return MeanOverAxis(SelectRows(x, rows), 0);
}

}  // namespace

RowMatrix GlorotUniform(Index rows, Index cols, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  RowMatrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = UniformIn(rng, -a, a);
  return m;
}

void MultiHeadAttentionParams::Validate() const {
  if (n_heads < 1 || d_model < 1 || d_model % n_heads != 0) {
    throw std::invalid_argument("MultiHeadAttentionParams: d_model " + std::to_string(d_model) +
                                " not divisible by n_heads " + std::to_string(n_heads));
  }
  const Index width = n_heads * d_head();
  for (const Tensor* t : {&query, &key, &value}) {
    if (t->rank() != 2 || t->rows() != d_model || t->cols() != width) {
      throw ShapeError("MultiHeadAttentionParams: input projection has shape " + ShapeString(t->shape()));
    }
  }
  if (output.rank() != 2 || output.rows() != width || output.cols() != d_model) {
    throw ShapeError("MultiHeadAttentionParams: output projection has shape " + ShapeString(output.shape()));
  }
}

MultiHeadAttentionParams MultiHeadAttentionParams::Init(Index d_model, Index n_heads, Rng& rng) {
  MultiHeadAttentionParams p;
  p.n_heads = n_heads;
  p.d_model = d_model;
  if (n_heads < 1 || d_model % n_heads != 0) p.Validate();  // throws
  const Index width = n_heads * p.d_head();
  // Per-head blocks are initialised with their own fan-out.
  auto projection = [&] {
    RowMatrix m(d_model, width);
    for (Index h = 0; h < n_heads; ++h) m.middleCols(h * p.d_head(), p.d_head()) = GlorotUniform(d_model, p.d_head(), rng);
    return Tensor::FromMatrix(m, true);
  };
  p.query = projection();
  p.key = projection();
  p.value = projection();
  p.output = Tensor::FromMatrix(GlorotUniform(width, d_model, rng), true);
  return p;
}

MultiHeadAttentionParams MultiHeadAttentionParams::Identity(Index d_model) {
  MultiHeadAttentionParams p;
  p.n_heads = 1;
  p.d_model = d_model;
  const RowMatrix eye = RowMatrix::Identity(d_model, d_model);
  p.query = Tensor::FromMatrix(eye);
  p.key = Tensor::FromMatrix(eye);
  p.value = Tensor::FromMatrix(eye);
  p.output = Tensor::FromMatrix(eye);
  return p;
}

BridgeTokenBank BridgeTokenBank::Init(Index n_tokens, Index d_model, Rng& rng) {
  if (n_tokens < 1) throw std::invalid_argument("BridgeTokenBank: need at least one token");
  return {Tensor::FromMatrix(GlorotUniform(n_tokens, d_model, rng), true),
          Tensor::FromMatrix(GlorotUniform(n_tokens, d_model, rng), true)};
}

void FusionConfig::Validate() const {
  if (d_model < 1) throw std::invalid_argument("FusionConfig: d_model must be positive");
  if (n_heads_self < 1 || d_model % n_heads_self != 0) {
    throw std::invalid_argument("FusionConfig: d_model must be divisible by n_heads_self");
  }
  if (n_heads_cross < 1 || d_model % n_heads_cross != 0) {
    throw std::invalid_argument("FusionConfig: d_model must be divisible by n_heads_cross");
  }
  if (use_bridge_tokens && !use_cross_attention) {
    throw std::invalid_argument("FusionConfig: bridge tokens require cross-attention");
  }
  if (use_bridge_tokens && n_bridge_tokens < 1) throw std::invalid_argument("FusionConfig: n_bridge_tokens < 1");
}

Tensor ScaledDotAttention(const Tensor& query, const Tensor& key, const Tensor& value,
                          const std::optional<Mask>& key_mask) {
  if (query.rank() != 2 || key.rank() != 2 || value.rank() != 2 || query.cols() != key.cols() ||
      key.rows() != value.rows()) {
    throw ShapeError("ScaledDotAttention: Q " + ShapeString(query.shape()) + ", K " + ShapeString(key.shape()) +
                     ", V " + ShapeString(value.shape()));
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(query.cols()));
  const Tensor scores = Scale(Matmul(query, Transpose(key)), scale);
  return Matmul(SoftmaxRows(scores, key_mask), value);
}

Tensor Multihead(const MultiHeadAttentionParams& params, const Tensor& query_in, const Tensor& key_in,
                 const Tensor& value_in, const std::optional<Mask>& key_mask) {
  const Index d = params.d_model;
  if (query_in.cols() != d || key_in.cols() != d || value_in.cols() != d || key_in.rows() != value_in.rows()) {
    throw ShapeError("Multihead: inputs Q " + ShapeString(query_in.shape()) + ", K " + ShapeString(key_in.shape()) +
                     ", V " + ShapeString(value_in.shape()) + " vs d_model " + std::to_string(d));
  }
  const Tensor q = Matmul(query_in, params.query);
  const Tensor k = Matmul(key_in, params.key);
  const Tensor v = Matmul(value_in, params.value);
  if (params.n_heads == 1) return Matmul(ScaledDotAttention(q, k, v, key_mask), params.output);

  const Index dh = params.d_head();
  std::vector<Tensor> heads;
  heads.reserve(static_cast<std::size_t>(params.n_heads));
  for (Index h = 0; h < params.n_heads; ++h) {
    heads.push_back(
        ScaledDotAttention(SliceCols(q, h * dh, dh), SliceCols(k, h * dh, dh), SliceCols(v, h * dh, dh), key_mask));
  }
  return Matmul(ConcatCols(heads), params.output);
}

Tensor SelfRefine(const Tensor& x, const MultiHeadAttentionParams& params, const Mask& pad_mask,
                  bool mask_padded_keys) {
  if (pad_mask.size() != x.rows()) throw ShapeError("SelfRefine: mask length differs from sequence length");
  const std::optional<Mask> keys = mask_padded_keys ? std::optional<Mask>(pad_mask) : std::nullopt;
  const Tensor y = Multihead(params, x, x, x, keys);
  return pad_mask.all() ? y : MaskRows(y, pad_mask);
}

CrossOutputs BridgeCrossAttend(const BridgeTokenBank& bank, const MultiHeadAttentionParams& audio_keyed,
                               const MultiHeadAttentionParams& text_keyed, const Tensor& audio, const Tensor& text,
                               const Mask& audio_mask, const Mask& text_mask, bool mask_padded_keys) {
  if (audio.rows() != text.rows() || audio_mask.size() != audio.rows() || text_mask.size() != text.rows()) {
    throw ShapeError("BridgeCrossAttend: sequences and masks must share length N");
  }
  const auto am = mask_padded_keys ? std::optional<Mask>(audio_mask) : std::nullopt;
  const auto tm = mask_padded_keys ? std::optional<Mask>(text_mask) : std::nullopt;
  return {Multihead(audio_keyed, bank.audio_queries, audio, text, am),
          Multihead(text_keyed, bank.text_queries, text, audio, tm)};
}

CrossOutputs ClassicCrossAttend(const MultiHeadAttentionParams& audio_query,
                                const MultiHeadAttentionParams& text_query, const Tensor& audio, const Tensor& text,
                                const Mask& audio_mask, const Mask& text_mask, bool mask_padded_keys) {
  if (audio.rows() != text.rows() || audio_mask.size() != audio.rows() || text_mask.size() != text.rows()) {
    throw ShapeError("ClassicCrossAttend: sequences and masks must share length N");
  }
  const auto am = mask_padded_keys ? std::optional<Mask>(audio_mask) : std::nullopt;
  const auto tm = mask_padded_keys ? std::optional<Mask>(text_mask) : std::nullopt;
  return {Multihead(audio_query, audio, text, text, tm), Multihead(text_query, text, audio, audio, am)};
}

Tensor Fuse(const Tensor& e_audio, const Tensor& e_text, const std::optional<Mask>& audio_pool,
            const std::optional<Mask>& text_pool) {
  if (e_audio.rank() != 2 || e_text.rank() != 2 || e_audio.cols() != e_text.cols()) {
    throw ShapeError("Fuse: e_a " + ShapeString(e_audio.shape()) + " vs e_t " + ShapeString(e_text.shape()));
  }
  return MeanOverAxis(Stack({PooledMean(e_audio, audio_pool), PooledMean(e_text, text_pool)}), 0);
}

}  // namespace bridgefuse
