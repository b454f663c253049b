#ifndef BRIDGEFUSE_ATTENTION_HPP_
#define BRIDGEFUSE_ATTENTION_HPP_

#include <optional>
#include <utility>

#include "bridgefuse/random.hpp"
#include "bridgefuse/tensor.hpp"

namespace bridgefuse {

/// Projections of one multi-head attention layer. Head i owns columns
/// [i·d_head, (i+1)·d_head) of each input projection, so the per-head
/// W_i^Q, W_i^K, W_i^V are column blocks of `query`, `key`, `value`.
struct MultiHeadAttentionParams {
  Index n_heads = 1;
  Index d_model = 0;
  Tensor query;   // d_model × (n_heads·d_head)
  Tensor key;     // d_model × (n_heads·d_head)
  Tensor value;   // d_model × (n_heads·d_head)
  Tensor output;  // (n_heads·d_head) × d_model

  Index d_head() const { return d_model / n_heads; }
  void Validate() const;

  /// Glorot-uniform initialisation of all four projections.
  static MultiHeadAttentionParams Init(Index d_model, Index n_heads, Rng& rng);
  /// n_heads = 1, every projection the identity.
  static MultiHeadAttentionParams Identity(Index d_model);
};

/// Learnable query tokens for the two bridge cross-attention layers.
struct BridgeTokenBank {
  Tensor audio_queries;  // L × d_model; attends over audio keys, text values
  Tensor text_queries;   // L × d_model; attends over text keys, audio values

  Index n_tokens() const { return audio_queries.rows(); }
  static BridgeTokenBank Init(Index n_tokens, Index d_model, Rng& rng);
};

struct FusionConfig {
  Index d_model = 16;
  Index n_heads_self = 32;
  Index n_heads_cross = 32;
  Index n_bridge_tokens = 30;
  bool use_self_attention = true;
  bool use_cross_attention = true;
  bool use_bridge_tokens = true;
  bool mask_padded_keys = true;

  void Validate() const;
};

/// Glorot-uniform draw: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
RowMatrix GlorotUniform(Index rows, Index cols, Rng& rng);

Tensor ScaledDotAttention(const Tensor& query, const Tensor& key, const Tensor& value,
                          const std::optional<Mask>& key_mask = std::nullopt);

Tensor Multihead(const MultiHeadAttentionParams& params, const Tensor& query_in, const Tensor& key_in,
                 const Tensor& value_in, const std::optional<Mask>& key_mask = std::nullopt);

/// Self-attention over one modality's padded sequence. Padded rows of the
/// result are zeroed so later layers see the same zero padding as the input.
Tensor SelfRefine(const Tensor& x, const MultiHeadAttentionParams& params, const Mask& pad_mask,
                  bool mask_padded_keys = true);

struct CrossOutputs {
  Tensor audio_keyed;  // e_a
  Tensor text_keyed;   // e_t
};

/// e_a = MHA(Q_a, K=a, V=t), e_t = MHA(Q_t, K=t, V=a). Each output is L × d.
CrossOutputs BridgeCrossAttend(const BridgeTokenBank& bank, const MultiHeadAttentionParams& audio_keyed,
                               const MultiHeadAttentionParams& text_keyed, const Tensor& audio, const Tensor& text,
                               const Mask& audio_mask, const Mask& text_mask, bool mask_padded_keys = true);

/// e_a = MHA(Q=a, K=t, V=t), e_t = MHA(Q=t, K=a, V=a). Each output is N × d.
CrossOutputs ClassicCrossAttend(const MultiHeadAttentionParams& audio_query,
                                const MultiHeadAttentionParams& text_query, const Tensor& audio, const Tensor& text,
                                const Mask& audio_mask, const Mask& text_mask, bool mask_padded_keys = true);

/// e_s = mean(stack(mean(e_a), mean(e_t))). When a pooling mask is given,
/// only rows flagged true enter that mean.
Tensor Fuse(const Tensor& e_audio, const Tensor& e_text, const std::optional<Mask>& audio_pool = std::nullopt,
            const std::optional<Mask>& text_pool = std::nullopt);

}  // namespace bridgefuse

#endif  // BRIDGEFUSE_ATTENTION_HPP_
