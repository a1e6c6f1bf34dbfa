#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "pathm3/gradcheck.hpp"
#include "pathm3/heads.hpp"

namespace pathm3 {

struct ModelConfig {
  std::size_t d_enc = 1408;
  std::size_t d_model = 768;
  std::size_t num_heads = 8;
  std::size_t num_queries = 32;
  std::size_t num_blocks = 12;
  std::size_t decoder_blocks = 2;
  std::size_t num_classes = 3;
  std::size_t vocab_size = 64;
  std::size_t max_text_len = 64;
  std::size_t correlation_layers = 1;
  bool use_correlation = true;
  std::size_t landmark_count = 64;
  std::size_t pinv_iterations = 6;
  std::size_t nystrom_threshold = 256;
  double init_std = 0.02;

  AttentionConfig correlation() const;
  FusionConfig fusion() const;
  DecoderConfig decoder() const;
  void validate() const;
};

template <typename Real>
struct Model {
  ModelConfig cfg;
  ParameterStore<Real> store;
  std::vector<CorrelationLayer> correlation;
  ImageProjection projection;
  FusionWeights fusion;
  ClassifierHead head;
  CaptionDecoder decoder;

  static Model init(const ModelConfig& cfg, std::uint64_t seed);

  template <typename To>
  Model<To> cast() const {
    Model<To> out;
    out.cfg = cfg;
    out.store = store.template cast<To>();
    out.correlation = correlation;
    out.projection = projection;
    out.fusion = fusion;
    out.head = head;
    out.decoder = decoder;
    return out;
  }
};

// Correlation layers (when enabled) followed by the projection to d_model.
template <typename Real>
Var<Real> encode_bag(Binder<Real>& bind, const Model<Real>& model, Var<Real> features);

template <typename Real>
struct BagLosses {
  Var<Real> l_c;
  Var<Real> l_g;
  Var<Real> overall;
};

// L_C through the image+text fusion pass, L_G through the image-only pass;
// both share one encoding of the bag.
template <typename Real>
BagLosses<Real> bag_losses(Binder<Real>& bind, const Model<Real>& model, Var<Real> features,
                           std::span<const int> caption, int label, LossWeights weights);

template <typename Real>
Tensor<Real> predict_probs(Model<Real>& model, const Tensor<Real>& features, std::optional<std::span<const int>> caption,
                           FusionMode mode);

template <typename Real>
std::vector<int> caption_bag(Model<Real>& model, const Tensor<Real>& features, std::size_t max_len);

// Finite-difference check of every parameter of a double-precision model
// built from `cfg`, weights jittered away from their init. The loss sums two
// bags at alpha 0.5: one on the exact correlation path and, when the model
// has a correlation module, one long enough to take the Nyström path.
GradCheckReport model_grad_check(const ModelConfig& cfg, std::uint64_t seed, double step, double tol);

}  // namespace pathm3
