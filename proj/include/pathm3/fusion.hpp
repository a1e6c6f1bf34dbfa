#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pathm3/attention.hpp"

namespace pathm3 {

enum class FusionMode { ImageOnly, ImageAndText };

const char* fusion_mode_name(FusionMode mode);
FusionMode parse_fusion_mode(const std::string& text);

struct FusionConfig {
  std::size_t d_model = 768;
  std::size_t num_queries = 32;
  std::size_t num_blocks = 12;
  std::size_t num_heads = 8;
  std::size_t vocab_size = 64;
  std::size_t max_text_len = 64;
  std::size_t ffn_ratio = 4;

  AttentionConfig attention() const;
};

struct QueryBank {
  ParamId queries;  // K×d_model
  std::size_t count = 0;
  std::size_t d_model = 0;
};

struct TextEmbedding {
  ParamId tokens;     // V×d_model
  ParamId positions;  // max_text_len×d_model
};

struct FusionBlock {
  LayerNormWeights self_norm;
  MultiHeadWeights self_attn;
  LayerNormWeights cross_norm;
  MultiHeadWeights cross_attn;
  LayerNormWeights ffn_norm;
  FeedForwardWeights ffn;
};

struct FusionWeights {
  QueryBank queries;
  TextEmbedding text;
  std::vector<FusionBlock> blocks;
};

struct ImageProjection {
  ParamId w;  // d_enc×d_model
  ParamId b;  // d_model
};

template <typename Real>
FusionWeights add_fusion(ParameterStore<Real>& store, const std::string& prefix, const FusionConfig& cfg,
                         double init_std, Rng& rng);

template <typename Real>
ImageProjection add_image_projection(ParameterStore<Real>& store, const std::string& prefix, std::size_t d_enc,
                                     std::size_t d_model, double init_std, Rng& rng);

template <typename Real>
Var<Real> project_image_features(Binder<Real>& bind, Var<Real> e, const ImageProjection& proj);

// Token embedding plus learned position embedding, L×d_model.
template <typename Real>
Var<Real> embed_text(Binder<Real>& bind, std::span<const int> ids, const TextEmbedding& text, const FusionConfig& cfg);

// Runs the query transformer and returns the K query rows.
// `text` absent with ImageAndText, or non-empty with ImageOnly, is a
// ModeTextMismatch; an empty token list makes the two modes coincide.
template <typename Real>
Var<Real> fusion_forward(Binder<Real>& bind, Var<Real> image_feats, std::optional<std::span<const int>> text,
                         FusionMode mode, const FusionWeights& w, const FusionConfig& cfg, Real eps = Real(1e-5));

}  // namespace pathm3
