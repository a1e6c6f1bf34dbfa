#include "pathm3/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "pathm3/metrics.hpp"

namespace pathm3 {

void TrainConfig::validate() const {
  if (epochs == 0) fail(ErrorKind::RangeError, "epochs must be positive");
  if (batch_size == 0) fail(ErrorKind::RangeError, "batch_size must be positive");
  if (!(alpha >= 0.0 && alpha <= 1.0)) fail(ErrorKind::RangeError, "alpha must lie in [0, 1]");
  if (!(lr >= 0.0)) fail(ErrorKind::RangeError, "lr must be non-negative");
  if (!(warmup_lr >= 0.0)) fail(ErrorKind::RangeError, "warmup_lr must be non-negative");
  if (!(adamw.beta1 >= 0.0 && adamw.beta1 < 1.0)) fail(ErrorKind::RangeError, "beta1 must lie in [0, 1)");
  if (!(adamw.beta2 >= 0.0 && adamw.beta2 < 1.0)) fail(ErrorKind::RangeError, "beta2 must lie in [0, 1)");
  if (!(adamw.weight_decay >= 0.0)) fail(ErrorKind::RangeError, "weight_decay must be non-negative");
  if (!(adamw.eps > 0.0)) fail(ErrorKind::RangeError, "adam_eps must be positive");
  if (decode_max_len == 0) fail(ErrorKind::RangeError, "decode_max_len must be positive");
}

namespace {

void check_compatible(const Manifest& m, const ModelConfig& cfg) {
  if (m.d_enc != cfg.d_enc) {
    fail(ErrorKind::DimMismatch, "manifest d_enc " + std::to_string(m.d_enc) + " differs from model d_enc " +
                                     std::to_string(cfg.d_enc));
  }
  if (m.num_classes != cfg.num_classes) {
    fail(ErrorKind::DimMismatch, "manifest has " + std::to_string(m.num_classes) + " classes, model expects " +
                                     std::to_string(cfg.num_classes));
  }
  if (m.vocab.size() != cfg.vocab_size) {
    fail(ErrorKind::DimMismatch, "manifest vocabulary has " + std::to_string(m.vocab.size()) +
                                     " tokens, model vocab_size is " + std::to_string(cfg.vocab_size));
  }
  for (const auto& b : m.bags) {
    if (b.caption.empty()) fail(ErrorKind::EmptyTarget, "bag " + b.bag_id + " has an empty caption");
    if (b.caption.size() > cfg.max_text_len) {
      fail(ErrorKind::RangeError, "bag " + b.bag_id + " caption exceeds max_text_len");
    }
  }
}

int argmax(const Tensor<float>& probs) {
  int best = 0;
  for (std::size_t j = 1; j < probs.size(); ++j)
    if (probs[j] > probs[static_cast<std::size_t>(best)]) best = static_cast<int>(j);
  return best;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

EvalReport evaluate(Model<float>& model, const std::vector<LoadedBag>& bags, Split split, FusionMode mode, double alpha,
                    bool with_captions, std::size_t decode_max_len) {
  if (bags.empty()) fail(ErrorKind::EmptySplit, std::string("split '") + split_name(split) + "' has no bags");
  EvalReport r;
  r.split = split_name(split);
  r.mode = mode;
  r.count = bags.size();
  const FusionConfig fcfg = model.cfg.fusion();
  std::size_t correct = 0;
  std::vector<std::vector<int>> refs;
  for (const LoadedBag& bag : bags) {
    const auto& caption = bag.record->caption;
    Tensor<float> image_only_fused;
    {
      Graph<float> g;
      Binder<float> bind(g, model.store);
      Var<float> image = encode_bag(bind, model, g.constant(bag.features));
      Var<float> with_text = fusion_forward(bind, image, std::optional<std::span<const int>>(caption),
                                            FusionMode::ImageAndText, model.fusion, fcfg);
      Var<float> image_only = fusion_forward<float>(bind, image, std::nullopt, FusionMode::ImageOnly, model.fusion, fcfg);
      auto text_out = classify_bag(bind, with_text, model.head);
      Var<float> l_c = classification_loss(text_out.logits_mean, bag.record->label);
      Var<float> l_g = caption_loss(bind, image_only, caption, model.decoder, model.cfg.decoder());
      r.loss_c += l_c.value()[0];
      r.loss_g += l_g.value()[0];
      r.loss_overall += multitask_loss(l_c, l_g, {alpha}).value()[0];

      const Tensor<float>& probs =
          mode == FusionMode::ImageAndText ? text_out.probs.value() : classify_bag(bind, image_only, model.head).probs.value();
      const int pred = argmax(probs);
      r.predictions.push_back(pred);
      correct += pred == bag.record->label;
      if (with_captions) image_only_fused = image_only.value();
    }
    if (with_captions) {
      r.captions.push_back(greedy_decode(model.store, image_only_fused, model.decoder, model.cfg.decoder(), decode_max_len));
      refs.push_back(caption);
    }
  }
  const double n = static_cast<double>(bags.size());
  r.accuracy = static_cast<double>(correct) / n;
  r.loss_c /= n;
  r.loss_g /= n;
  r.loss_overall /= n;
  if (with_captions) r.bleu4 = mean_bleu4(r.captions, refs);
  return r;
}

TrainResult train(const Manifest& manifest, const std::filesystem::path& data_root, const ModelConfig& model_cfg,
                  const TrainConfig& cfg, const StepHook& hook) {
  cfg.validate();
  model_cfg.validate();
  check_compatible(manifest, model_cfg);
  const auto t0 = std::chrono::steady_clock::now();

  const std::vector<LoadedBag> train_bags = load_split(manifest, data_root, Split::Train);
  const std::vector<LoadedBag> val_bags = load_split(manifest, data_root, Split::Val);
  const std::vector<LoadedBag> test_bags = load_split(manifest, data_root, Split::Test);
  if (train_bags.empty()) fail(ErrorKind::EmptySplit, "train split is empty");
  if (val_bags.empty()) fail(ErrorKind::EmptySplit, "val split is empty");

  TrainResult result;
  Model<float> model = Model<float>::init(model_cfg, cfg.seed);
  OptimizerState opt;
  const std::size_t steps_per_epoch = (train_bags.size() + cfg.batch_size - 1) / cfg.batch_size;
  const Schedule sched{cfg.lr, cfg.warmup_lr, cfg.warmup_steps, cfg.epochs * steps_per_epoch};
  if (sched.warmup_steps > sched.total_steps) {
    fail(ErrorKind::RangeError, "warmup_steps (" + std::to_string(sched.warmup_steps) + ") exceeds total steps (" +
                                    std::to_string(sched.total_steps) + ")");
  }

  std::mt19937_64 shuffle_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  std::vector<std::size_t> order(train_bags.size());
  std::iota(order.begin(), order.end(), 0);
  const LossWeights weights{cfg.alpha};
  bool have_best = false;
  std::size_t global_step = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double sum_c = 0.0, sum_g = 0.0, sum_o = 0.0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      const std::size_t begin = s * cfg.batch_size, end = std::min(begin + cfg.batch_size, order.size());
      const float inv_batch = 1.0f / static_cast<float>(end - begin);
      model.store.zero_grad();
      StepInfo info;
      info.epoch = epoch;
      info.step = global_step;
      info.lr = lr_at(global_step, sched);
      for (std::size_t i = begin; i < end; ++i) {
        const LoadedBag& bag = train_bags[order[i]];
        try {
          Graph<float> g;
          Binder<float> bind(g, model.store);
          auto l = bag_losses(bind, model, g.constant(bag.features), bag.record->caption, bag.record->label, weights);
          g.backward(scale(l.overall, inv_batch));
          info.loss_c += l.l_c.value()[0];
          info.loss_g += l.l_g.value()[0];
          info.loss_overall += l.overall.value()[0];
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::NonFinite) throw;
          fail(ErrorKind::DivergedLoss, "non-finite value at epoch " + std::to_string(epoch) + ", step " +
                                            std::to_string(global_step) + ", bag " + bag.record->bag_id +
                                            ", lr " + std::to_string(info.lr) + ": " + e.what());
        }
      }
      sum_c += info.loss_c;
      sum_g += info.loss_g;
      sum_o += info.loss_overall;
      const double bn = static_cast<double>(end - begin);
      info.loss_c /= bn;
      info.loss_g /= bn;
      info.loss_overall /= bn;
      if (hook) hook(info, model.store);
      adamw_step(model.store, opt, cfg.adamw, info.lr);
      for (const auto& p : model.store) {
        if (!p.tensor.all_finite()) {
          fail(ErrorKind::DivergedLoss, "parameter '" + p.name + "' became non-finite at step " + std::to_string(global_step));
        }
      }
      result.steps.push_back(info);
      ++global_step;
    }
    const double n = static_cast<double>(train_bags.size());
    result.rows.push_back({epoch, "train", sum_c / n, sum_g / n, sum_o / n, std::nullopt, std::nullopt, seconds_since(t0)});

    EvalReport val = evaluate(model, val_bags, Split::Val, cfg.select_mode, cfg.alpha, true, cfg.decode_max_len);
    result.rows.push_back({epoch, "val", val.loss_c, val.loss_g, val.loss_overall, val.accuracy, val.bleu4, seconds_since(t0)});
    // Later epochs win ties so captions keep improving once accuracy saturates.
    if (!have_best || val.accuracy >= result.best_val_accuracy) {
      have_best = true;
      result.best = model;
      result.best_epoch = epoch;
      result.best_val_accuracy = val.accuracy;
    }
  }
  result.last = model;

  if (!test_bags.empty()) {
    EvalReport test = evaluate(result.best, test_bags, Split::Test, cfg.select_mode, cfg.alpha, true, cfg.decode_max_len);
    result.rows.push_back({result.best_epoch, "test", test.loss_c, test.loss_g, test.loss_overall, test.accuracy,
                           test.bleu4, seconds_since(t0)});
  }
  return result;
}

void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::IoError, "cannot write '" + path.string() + "'");
  out << "epoch,split,loss_c,loss_g,loss_overall,accuracy,bleu4,wall_s\n";
  out.precision(9);
  for (const auto& r : rows) {
    out << r.epoch << ',' << r.split << ',' << r.loss_c << ',' << r.loss_g << ',' << r.loss_overall << ',';
    if (r.accuracy) out << *r.accuracy;
    out << ',';
    if (r.bleu4) out << *r.bleu4;
    out << ',' << r.wall_s << '\n';
  }
}

}  // namespace pathm3
