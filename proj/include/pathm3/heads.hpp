#pragma once

#include <span>
#include <vector>

#include "pathm3/fusion.hpp"

namespace pathm3 {

inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;

struct ClassifierHead {
  ParamId w;  // d_model×C
  ParamId b;  // C
  std::size_t num_classes = 0;
};

template <typename Real>
ClassifierHead add_classifier(ParameterStore<Real>& store, const std::string& prefix, std::size_t d_model,
                              std::size_t num_classes, double init_std, Rng& rng);

template <typename Real>
struct ClassOutput {
  Var<Real> probs;        // 1×C
  Var<Real> logits_mean;  // 1×C
};

// The same affine head on each of the K rows; logits averaged before softmax.
template <typename Real>
ClassOutput<Real> classify_bag(Binder<Real>& bind, Var<Real> fused, const ClassifierHead& head);

template <typename Real>
Var<Real> classification_loss(Var<Real> logits_mean, int label) {
  return cross_entropy_from_logits(logits_mean, label);
}

struct DecoderConfig {
  std::size_t vocab_size = 64;
  std::size_t d_model = 64;
  std::size_t num_heads = 4;
  std::size_t num_blocks = 1;
  std::size_t max_len = 32;  // positions, BOS included
  std::size_t ffn_ratio = 4;

  AttentionConfig attention() const;
};

// Causal self-attention, cross-attention to the fused vectors, feed-forward.
using DecoderBlock = FusionBlock;

struct CaptionDecoder {
  ParamId tokens;     // V×d
  ParamId positions;  // max_len×d
  std::vector<DecoderBlock> blocks;
  LayerNormWeights final_norm;
  ParamId out_w;  // d×V
  ParamId out_b;  // V
};

template <typename Real>
CaptionDecoder add_decoder(ParameterStore<Real>& store, const std::string& prefix, const DecoderConfig& cfg,
                           double init_std, Rng& rng);

// L×V next-token logits for the given input ids.
template <typename Real>
Var<Real> decoder_logits(Binder<Real>& bind, Var<Real> fused, std::span<const int> inputs, const CaptionDecoder& dec,
                         const DecoderConfig& cfg, Real eps = Real(1e-5));

// Inputs [BOS, t₁..t_{L−1}], targets [t₁..t_L] where t_L is EOS (appended
// when missing). Mean cross-entropy over non-PAD targets.
template <typename Real>
Var<Real> caption_loss(Binder<Real>& bind, Var<Real> fused, std::span<const int> target, const CaptionDecoder& dec,
                       const DecoderConfig& cfg, Real eps = Real(1e-5));

// Argmax decoding from BOS until EOS or max_len tokens; ties go to the
// lowest id. The returned caption excludes BOS and EOS.
template <typename Real>
std::vector<int> greedy_decode(ParameterStore<Real>& store, const Tensor<Real>& fused, const CaptionDecoder& dec,
                               const DecoderConfig& cfg, std::size_t max_len, Real eps = Real(1e-5));

struct LossWeights {
  double alpha = 0.5;
};

// α·L_C + (1 − α)·L_G
template <typename Real>
Var<Real> multitask_loss(Var<Real> l_c, Var<Real> l_g, LossWeights w);

}  // namespace pathm3
