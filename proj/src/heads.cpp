#include "pathm3/heads.hpp"

#include <cmath>

namespace pathm3 {

AttentionConfig DecoderConfig::attention() const {
  AttentionConfig a;
  a.model_dim = d_model;
  a.num_heads = num_heads;
  return a;
}

template <typename Real>
ClassifierHead add_classifier(ParameterStore<Real>& store, const std::string& prefix, std::size_t d_model,
                              std::size_t num_classes, double init_std, Rng& rng) {
  if (num_classes < 2) fail(ErrorKind::RangeError, "num_classes must be at least 2");
  return {store.add(prefix + ".w", normal_tensor<Real>({d_model, num_classes}, init_std, rng)),
          store.add(prefix + ".b", Tensor<Real>({num_classes})), num_classes};
}

template <typename Real>
ClassOutput<Real> classify_bag(Binder<Real>& bind, Var<Real> fused, const ClassifierHead& head) {
  Var<Real> w = bind(head.w);
  if (fused.cols() != w.rows()) {
    fail(ErrorKind::ShapeMismatch, "classify_bag: fused width " + std::to_string(fused.cols()) +
                                       " does not match head input " + std::to_string(w.rows()));
  }
  Var<Real> logits_mean = mean_rows(affine(fused, w, bind(head.b)));
  return {softmax_rows(logits_mean), logits_mean};
}

template <typename Real>
CaptionDecoder add_decoder(ParameterStore<Real>& store, const std::string& prefix, const DecoderConfig& cfg,
                           double init_std, Rng& rng) {
  const std::size_t d = cfg.d_model;
  CaptionDecoder dec;
  dec.tokens = store.add(prefix + ".tokens", normal_tensor<Real>({cfg.vocab_size, d}, init_std, rng));
  dec.positions = store.add(prefix + ".positions", normal_tensor<Real>({cfg.max_len, d}, init_std, rng));
  for (std::size_t i = 0; i < cfg.num_blocks; ++i) {
    const std::string p = prefix + ".block" + std::to_string(i);
    DecoderBlock b;
    b.self_norm = add_layer_norm(store, p + ".self_ln", d);
    b.self_attn = add_multi_head(store, p + ".self_attn", d, init_std, rng);
    b.cross_norm = add_layer_norm(store, p + ".cross_ln", d);
    b.cross_attn = add_multi_head(store, p + ".cross_attn", d, init_std, rng);
    b.ffn_norm = add_layer_norm(store, p + ".ffn_ln", d);
    b.ffn = add_feed_forward(store, p + ".ffn", d, d * cfg.ffn_ratio, init_std, rng);
    dec.blocks.push_back(b);
  }
  dec.final_norm = add_layer_norm(store, prefix + ".final_ln", d);
  dec.out_w = store.add(prefix + ".out.w", normal_tensor<Real>({d, cfg.vocab_size}, init_std, rng));
  dec.out_b = store.add(prefix + ".out.b", Tensor<Real>({cfg.vocab_size}));
  return dec;
}

template <typename Real>
Var<Real> decoder_logits(Binder<Real>& bind, Var<Real> fused, std::span<const int> inputs, const CaptionDecoder& dec,
                         const DecoderConfig& cfg, Real eps) {
  if (inputs.empty()) fail(ErrorKind::EmptyTarget, "decoder: empty input sequence");
  if (inputs.size() > cfg.max_len) {
    fail(ErrorKind::RangeError, "decoder: sequence of " + std::to_string(inputs.size()) + " positions exceeds max_len " +
                                    std::to_string(cfg.max_len));
  }
  const AttentionConfig attn = cfg.attention();
  Var<Real> x = add(embedding(bind(dec.tokens), inputs), slice_rows(bind(dec.positions), 0, inputs.size()));
  for (const DecoderBlock& b : dec.blocks) {
    Var<Real> h = apply_layer_norm(bind, x, b.self_norm, eps);
    x = add(multi_head(bind, AttentionKind::Exact, h, h, b.self_attn, attn, true), x);
    h = apply_layer_norm(bind, x, b.cross_norm, eps);
    x = add(multi_head(bind, AttentionKind::Exact, h, fused, b.cross_attn, attn), x);
    h = apply_layer_norm(bind, x, b.ffn_norm, eps);
    x = add(apply_feed_forward(bind, h, b.ffn), x);
  }
  x = apply_layer_norm(bind, x, dec.final_norm, eps);
  return affine(x, bind(dec.out_w), bind(dec.out_b));
}

template <typename Real>
Var<Real> caption_loss(Binder<Real>& bind, Var<Real> fused, std::span<const int> target, const CaptionDecoder& dec,
                       const DecoderConfig& cfg, Real eps) {
  if (target.empty()) fail(ErrorKind::EmptyTarget, "caption_loss: empty target caption");
  std::vector<int> targets(target.begin(), target.end());
  if (targets.back() != kEos) targets.push_back(kEos);
  for (int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= cfg.vocab_size) {
      fail(ErrorKind::TokenOutOfVocab, "caption_loss: token " + std::to_string(t) + " outside vocabulary of " +
                                           std::to_string(cfg.vocab_size));
    }
  }
  std::vector<int> inputs{kBos};
  inputs.insert(inputs.end(), targets.begin(), targets.end() - 1);
  return token_cross_entropy(decoder_logits(bind, fused, inputs, dec, cfg, eps), targets, kPad);
}

template <typename Real>
std::vector<int> greedy_decode(ParameterStore<Real>& store, const Tensor<Real>& fused, const CaptionDecoder& dec,
                               const DecoderConfig& cfg, std::size_t max_len, Real eps) {
  if (max_len < 1) fail(ErrorKind::RangeError, "greedy_decode: max_len must be at least 1");
  max_len = std::min(max_len, cfg.max_len);
  std::vector<int> seq{kBos};
  std::vector<int> out;
  while (out.size() < max_len) {
    Graph<Real> g;
    Binder<Real> bind(g, store);
    Var<Real> logits = decoder_logits(bind, g.constant(fused), seq, dec, cfg, eps);
    const Tensor<Real>& lv = logits.value();
    const std::size_t v = lv.cols(), last = lv.rows() - 1;
    int best = 0;
    for (std::size_t j = 1; j < v; ++j) {
      if (lv(last, j) > lv(last, static_cast<std::size_t>(best))) best = static_cast<int>(j);
    }
    if (best == kEos) break;
    out.push_back(best);
    seq.push_back(best);
  }
  return out;
}

template <typename Real>
Var<Real> multitask_loss(Var<Real> l_c, Var<Real> l_g, LossWeights w) {
  if (!(w.alpha >= 0.0 && w.alpha <= 1.0)) fail(ErrorKind::RangeError, "alpha must lie in [0, 1]");
  if (!std::isfinite(static_cast<double>(l_c.value()[0])) || !std::isfinite(static_cast<double>(l_g.value()[0]))) {
    fail(ErrorKind::NonFinite, "multitask_loss: non-finite component loss");
  }
  return add(scale(l_c, static_cast<Real>(w.alpha)), scale(l_g, static_cast<Real>(1.0 - w.alpha)));
}

#define PATHM3_INSTANTIATE_HEADS(Real)                                                                               \
  template ClassifierHead add_classifier(ParameterStore<Real>&, const std::string&, std::size_t, std::size_t, double, \
                                         Rng&);                                                                      \
  template ClassOutput<Real> classify_bag(Binder<Real>&, Var<Real>, const ClassifierHead&);                           \
  template CaptionDecoder add_decoder(ParameterStore<Real>&, const std::string&, const DecoderConfig&, double, Rng&); \
  template Var<Real> decoder_logits(Binder<Real>&, Var<Real>, std::span<const int>, const CaptionDecoder&,            \
                                    const DecoderConfig&, Real);                                                     \
  template Var<Real> caption_loss(Binder<Real>&, Var<Real>, std::span<const int>, const CaptionDecoder&,              \
                                  const DecoderConfig&, Real);                                                       \
  template std::vector<int> greedy_decode(ParameterStore<Real>&, const Tensor<Real>&, const CaptionDecoder&,          \
                                          const DecoderConfig&, std::size_t, Real);                                  \
  template Var<Real> multitask_loss(Var<Real>, Var<Real>, LossWeights);

PATHM3_INSTANTIATE_HEADS(float)
PATHM3_INSTANTIATE_HEADS(double)

#undef PATHM3_INSTANTIATE_HEADS

}  // namespace pathm3
