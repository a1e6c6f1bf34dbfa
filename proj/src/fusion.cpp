#include "pathm3/fusion.hpp"

namespace pathm3 {

const char* fusion_mode_name(FusionMode mode) {
  return mode == FusionMode::ImageOnly ? "image_only" : "image_and_text";
}

FusionMode parse_fusion_mode(const std::string& text) {
  if (text == "image_only") return FusionMode::ImageOnly;
  if (text == "image_and_text") return FusionMode::ImageAndText;
  fail(ErrorKind::RangeError, "mode: expected image_only or image_and_text, got '" + text + "'");
}

AttentionConfig FusionConfig::attention() const {
  AttentionConfig a;
  a.model_dim = d_model;
  a.num_heads = num_heads;
  return a;
}

template <typename Real>
FusionWeights add_fusion(ParameterStore<Real>& store, const std::string& prefix, const FusionConfig& cfg,
                         double init_std, Rng& rng) {
  const std::size_t d = cfg.d_model;
  FusionWeights w;
  w.queries = {store.add(prefix + ".queries", normal_tensor<Real>({cfg.num_queries, d}, init_std, rng)),
               cfg.num_queries, d};
  w.text.tokens = store.add(prefix + ".text.tokens", normal_tensor<Real>({cfg.vocab_size, d}, init_std, rng));
  w.text.positions = store.add(prefix + ".text.positions", normal_tensor<Real>({cfg.max_text_len, d}, init_std, rng));
  for (std::size_t i = 0; i < cfg.num_blocks; ++i) {
    const std::string p = prefix + ".block" + std::to_string(i);
    FusionBlock b;
    b.self_norm = add_layer_norm(store, p + ".self_ln", d);
    b.self_attn = add_multi_head(store, p + ".self_attn", d, init_std, rng);
    b.cross_norm = add_layer_norm(store, p + ".cross_ln", d);
    b.cross_attn = add_multi_head(store, p + ".cross_attn", d, init_std, rng);
    b.ffn_norm = add_layer_norm(store, p + ".ffn_ln", d);
    b.ffn = add_feed_forward(store, p + ".ffn", d, d * cfg.ffn_ratio, init_std, rng);
    w.blocks.push_back(b);
  }
  return w;
}

template <typename Real>
ImageProjection add_image_projection(ParameterStore<Real>& store, const std::string& prefix, std::size_t d_enc,
                                     std::size_t d_model, double init_std, Rng& rng) {
  return {store.add(prefix + ".w", normal_tensor<Real>({d_enc, d_model}, init_std, rng)),
          store.add(prefix + ".b", Tensor<Real>({d_model}))};
}

template <typename Real>
Var<Real> project_image_features(Binder<Real>& bind, Var<Real> e, const ImageProjection& proj) {
  Var<Real> w = bind(proj.w);
  if (e.cols() != w.rows()) {
    fail(ErrorKind::ShapeMismatch, "project_image_features: features have " + std::to_string(e.cols()) +
                                       " columns, projection expects " + std::to_string(w.rows()));
  }
  return affine(e, w, bind(proj.b));
}

template <typename Real>
Var<Real> embed_text(Binder<Real>& bind, std::span<const int> ids, const TextEmbedding& text, const FusionConfig& cfg) {
  if (ids.size() > cfg.max_text_len) {
    fail(ErrorKind::RangeError, "text of length " + std::to_string(ids.size()) + " exceeds max_text_len " +
                                    std::to_string(cfg.max_text_len));
  }
  Var<Real> tok = embedding(bind(text.tokens), ids);
  Var<Real> pos = slice_rows(bind(text.positions), 0, ids.size());
  return add(tok, pos);
}

template <typename Real>
Var<Real> fusion_forward(Binder<Real>& bind, Var<Real> image_feats, std::optional<std::span<const int>> text,
                         FusionMode mode, const FusionWeights& w, const FusionConfig& cfg, Real eps) {
  if (mode == FusionMode::ImageAndText && !text) {
    fail(ErrorKind::ModeTextMismatch, "fusion: image_and_text mode needs caption tokens");
  }
  if (mode == FusionMode::ImageOnly && text && !text->empty()) {
    fail(ErrorKind::ModeTextMismatch, "fusion: image_only mode must not receive caption tokens");
  }
  if (image_feats.cols() != cfg.d_model) {
    fail(ErrorKind::ShapeMismatch, "fusion: image features must have d_model=" + std::to_string(cfg.d_model) + " columns");
  }
  const std::size_t k = w.queries.count;
  const AttentionConfig attn = cfg.attention();

  Var<Real> x = bind(w.queries.queries);
  const bool with_text = mode == FusionMode::ImageAndText && !text->empty();
  if (with_text) {
    std::vector<Var<Real>> parts{x, embed_text(bind, *text, w.text, cfg)};
    x = concat_rows<Real>(parts);
  }

  for (const FusionBlock& b : w.blocks) {
    // Queries and text see each other without a mask.
    Var<Real> h = apply_layer_norm(bind, x, b.self_norm, eps);
    x = add(multi_head(bind, AttentionKind::Exact, h, h, b.self_attn, attn), x);

    // Only query rows read the image.
    Var<Real> q = with_text ? slice_rows(x, 0, k) : x;
    Var<Real> hq = apply_layer_norm(bind, q, b.cross_norm, eps);
    q = add(multi_head(bind, AttentionKind::Exact, hq, image_feats, b.cross_attn, attn), q);
    if (with_text) {
      std::vector<Var<Real>> parts{q, slice_rows(x, k, x.rows() - k)};
      x = concat_rows<Real>(parts);
    } else {
      x = q;
    }

    Var<Real> f = apply_layer_norm(bind, x, b.ffn_norm, eps);
    x = add(apply_feed_forward(bind, f, b.ffn), x);
  }
  return with_text ? slice_rows(x, 0, k) : x;
}

#define PATHM3_INSTANTIATE_FUSION(Real)                                                                              \
  template FusionWeights add_fusion(ParameterStore<Real>&, const std::string&, const FusionConfig&, double, Rng&);   \
  template ImageProjection add_image_projection(ParameterStore<Real>&, const std::string&, std::size_t, std::size_t, \
                                                double, Rng&);                                                       \
  template Var<Real> project_image_features(Binder<Real>&, Var<Real>, const ImageProjection&);                       \
  template Var<Real> embed_text(Binder<Real>&, std::span<const int>, const TextEmbedding&, const FusionConfig&);     \
  template Var<Real> fusion_forward(Binder<Real>&, Var<Real>, std::optional<std::span<const int>>, FusionMode,       \
                                    const FusionWeights&, const FusionConfig&, Real);

PATHM3_INSTANTIATE_FUSION(float)
PATHM3_INSTANTIATE_FUSION(double)

#undef PATHM3_INSTANTIATE_FUSION

}  // namespace pathm3
