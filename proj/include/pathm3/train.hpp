#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pathm3/data.hpp"
#include "pathm3/model.hpp"
#include "pathm3/optim.hpp"

namespace pathm3 {

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  double alpha = 0.5;
  double lr = 1e-4;
  double warmup_lr = 1e-5;
  std::size_t warmup_steps = 1000;
  AdamWConfig adamw;
  std::uint64_t seed = 0;
  // Inference modality used to pick the best-validation checkpoint.
  FusionMode select_mode = FusionMode::ImageAndText;
  std::size_t decode_max_len = 16;

  void validate() const;
};

struct MetricsRow {
  std::size_t epoch = 0;
  std::string split;
  double loss_c = 0.0;
  double loss_g = 0.0;
  double loss_overall = 0.0;
  std::optional<double> accuracy;
  std::optional<double> bleu4;
  double wall_s = 0.0;
};

struct StepInfo {
  std::size_t epoch = 0;
  std::size_t step = 0;  // 0-based global step
  double lr = 0.0;
  double loss_c = 0.0;        // batch means
  double loss_g = 0.0;
  double loss_overall = 0.0;
};

// Called after gradients are averaged and before the optimizer update.
using StepHook = std::function<void(const StepInfo&, const ParameterStore<float>&)>;

struct TrainResult {
  Model<float> best;
  Model<float> last;
  std::size_t best_epoch = 0;
  double best_val_accuracy = 0.0;
  std::vector<MetricsRow> rows;
  std::vector<StepInfo> steps;
};

struct EvalReport {
  std::string split;
  FusionMode mode = FusionMode::ImageOnly;
  std::size_t count = 0;
  double accuracy = 0.0;
  double loss_c = 0.0;
  double loss_g = 0.0;
  double loss_overall = 0.0;
  std::optional<double> bleu4;
  std::vector<int> predictions;
  std::vector<std::vector<int>> captions;
};

TrainResult train(const Manifest& manifest, const std::filesystem::path& data_root, const ModelConfig& model_cfg,
                  const TrainConfig& cfg, const StepHook& hook = {});

// Accuracy under `mode`; mean losses use the training regime (L_C with text,
// L_G image-only) so they are comparable with the training rows.
EvalReport evaluate(Model<float>& model, const std::vector<LoadedBag>& bags, Split split, FusionMode mode, double alpha,
                    bool with_captions, std::size_t decode_max_len);

void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::filesystem::path& path);

}  // namespace pathm3
