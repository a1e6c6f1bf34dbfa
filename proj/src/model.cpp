#include "pathm3/model.hpp"

namespace pathm3 {

AttentionConfig ModelConfig::correlation() const {
  AttentionConfig a;
  a.model_dim = d_enc;
  a.num_heads = num_heads;
  a.landmark_count = landmark_count;
  a.pinv_iterations = pinv_iterations;
  a.nystrom_threshold = nystrom_threshold;
  return a;
}

FusionConfig ModelConfig::fusion() const {
  FusionConfig f;
  f.d_model = d_model;
  f.num_queries = num_queries;
  f.num_blocks = num_blocks;
  f.num_heads = num_heads;
  f.vocab_size = vocab_size;
  f.max_text_len = max_text_len;
  return f;
}

DecoderConfig ModelConfig::decoder() const {
  DecoderConfig d;
  d.vocab_size = vocab_size;
  d.d_model = d_model;
  d.num_heads = num_heads;
  d.num_blocks = decoder_blocks;
  d.max_len = max_text_len + 1;  // BOS plus the longest caption
  return d;
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* key) {
    if (v == 0) fail(ErrorKind::RangeError, std::string(key) + " must be positive");
  };
  positive(d_enc, "d_enc");
  positive(d_model, "d_model");
  positive(num_heads, "num_heads");
  positive(num_queries, "num_queries");
  positive(vocab_size, "vocab_size");
  positive(max_text_len, "max_text_len");
  positive(landmark_count, "landmark_count");
  positive(pinv_iterations, "pinv_iterations");
  if (d_model % num_heads != 0) fail(ErrorKind::RangeError, "num_heads must divide d_model");
  if (use_correlation && d_enc % num_heads != 0) fail(ErrorKind::RangeError, "num_heads must divide d_enc");
  if (num_classes < 2) fail(ErrorKind::RangeError, "num_classes must be at least 2");
  if (vocab_size <= static_cast<std::size_t>(kEos)) fail(ErrorKind::RangeError, "vocab_size must exceed the reserved ids");
  if (nystrom_threshold < landmark_count) fail(ErrorKind::RangeError, "nystrom_threshold must be at least landmark_count");
  if (!(init_std > 0.0)) fail(ErrorKind::RangeError, "init_std must be positive");
}

template <typename Real>
Model<Real> Model<Real>::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  Model m;
  m.cfg = cfg;
  if (cfg.use_correlation) {
    for (std::size_t i = 0; i < cfg.correlation_layers; ++i) {
      m.correlation.push_back(add_correlation_layer(m.store, "corr" + std::to_string(i), cfg.d_enc, cfg.init_std, rng));
    }
  }
  m.projection = add_image_projection(m.store, "proj", cfg.d_enc, cfg.d_model, cfg.init_std, rng);
  m.fusion = add_fusion(m.store, "fusion", cfg.fusion(), cfg.init_std, rng);
  m.head = add_classifier(m.store, "head", cfg.d_model, cfg.num_classes, cfg.init_std, rng);
  m.decoder = add_decoder(m.store, "decoder", cfg.decoder(), cfg.init_std, rng);
  return m;
}

template <typename Real>
Var<Real> encode_bag(Binder<Real>& bind, const Model<Real>& model, Var<Real> features) {
  if (features.cols() != model.cfg.d_enc) {
    fail(ErrorKind::ShapeMismatch, "bag features have " + std::to_string(features.cols()) + " columns, model expects d_enc=" +
                                       std::to_string(model.cfg.d_enc));
  }
  const AttentionConfig corr = model.cfg.correlation();
  Var<Real> e = features;
  for (const CorrelationLayer& layer : model.correlation) e = correlation_block(bind, e, layer, corr);
  return project_image_features(bind, e, model.projection);
}

template <typename Real>
BagLosses<Real> bag_losses(Binder<Real>& bind, const Model<Real>& model, Var<Real> features,
                           std::span<const int> caption, int label, LossWeights weights) {
  const FusionConfig fcfg = model.cfg.fusion();
  Var<Real> image = encode_bag(bind, model, features);

  Var<Real> with_text = fusion_forward(bind, image, std::optional<std::span<const int>>(caption),
                                       FusionMode::ImageAndText, model.fusion, fcfg);
  Var<Real> l_c = classification_loss(classify_bag(bind, with_text, model.head).logits_mean, label);

  Var<Real> image_only = fusion_forward<Real>(bind, image, std::nullopt, FusionMode::ImageOnly, model.fusion, fcfg);
  Var<Real> l_g = caption_loss(bind, image_only, caption, model.decoder, model.cfg.decoder());

  return {l_c, l_g, multitask_loss(l_c, l_g, weights)};
}

template <typename Real>
Tensor<Real> predict_probs(Model<Real>& model, const Tensor<Real>& features, std::optional<std::span<const int>> caption,
                           FusionMode mode) {
  Graph<Real> g;
  Binder<Real> bind(g, model.store);
  Var<Real> image = encode_bag(bind, model, g.constant(features));
  if (mode == FusionMode::ImageOnly) caption.reset();
  Var<Real> fused = fusion_forward(bind, image, caption, mode, model.fusion, model.cfg.fusion());
  return classify_bag(bind, fused, model.head).probs.value();
}

template <typename Real>
std::vector<int> caption_bag(Model<Real>& model, const Tensor<Real>& features, std::size_t max_len) {
  Tensor<Real> fused;
  {
    Graph<Real> g;
    Binder<Real> bind(g, model.store);
    Var<Real> image = encode_bag(bind, model, g.constant(features));
    fused = fusion_forward<Real>(bind, image, std::nullopt, FusionMode::ImageOnly, model.fusion, model.cfg.fusion()).value();
  }
  return greedy_decode(model.store, fused, model.decoder, model.cfg.decoder(), max_len);
}

#define PATHM3_INSTANTIATE_MODEL(Real)                                                                              \
  template struct Model<Real>;                                                                                      \
  template Var<Real> encode_bag(Binder<Real>&, const Model<Real>&, Var<Real>);                                      \
  template BagLosses<Real> bag_losses(Binder<Real>&, const Model<Real>&, Var<Real>, std::span<const int>, int,      \
                                      LossWeights);                                                                 \
  template Tensor<Real> predict_probs(Model<Real>&, const Tensor<Real>&, std::optional<std::span<const int>>,       \
                                      FusionMode);                                                                  \
  template std::vector<int> caption_bag(Model<Real>&, const Tensor<Real>&, std::size_t);

PATHM3_INSTANTIATE_MODEL(float)
PATHM3_INSTANTIATE_MODEL(double)

#undef PATHM3_INSTANTIATE_MODEL

GradCheckReport model_grad_check(const ModelConfig& cfg, std::uint64_t seed, double step, double tol) {
  cfg.validate();
  auto model = Model<float>::init(cfg, seed).cast<double>();
  Rng rng(seed + 1);
  std::normal_distribution<double> jitter(0.0, 0.05);
  for (auto& p : model.store)
    for (auto& v : p.tensor.values()) v += jitter(rng);

  std::vector<std::size_t> lengths{std::min<std::size_t>(3, cfg.nystrom_threshold)};
  if (cfg.use_correlation) lengths.push_back(cfg.nystrom_threshold + 2);
  std::vector<Tensor<double>> bags;
  std::vector<std::vector<int>> captions;
  std::uniform_int_distribution<int> token(kEos + 1, static_cast<int>(cfg.vocab_size) - 1);
  for (std::size_t len : lengths) {
    bags.push_back(normal_tensor<double>({len, cfg.d_enc}, 1.0, rng));
    std::vector<int> cap(std::min<std::size_t>(3, cfg.max_text_len));
    for (int& t : cap) t = token(rng);
    captions.push_back(cap);
  }
  ScalarFn<double> fn = [&](Graph<double>& g) {
    Binder<double> bind(g, model.store);
    Var<double> total;
    for (std::size_t i = 0; i < bags.size(); ++i) {
      const int label = static_cast<int>(i % cfg.num_classes);
      Var<double> l = bag_losses(bind, model, g.constant(bags[i]), captions[i], label, {0.5}).overall;
      total = i == 0 ? l : add(total, l);
    }
    return total;
  };
  return grad_check(fn, model.store, step, tol);
}

}  // namespace pathm3
