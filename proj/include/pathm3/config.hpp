#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pathm3/bench.hpp"
#include "pathm3/data.hpp"
#include "pathm3/model.hpp"
#include "pathm3/train.hpp"

namespace pathm3 {

// Everything a command can be told. Defaults are the desk preset.
struct RunConfig {
  std::string preset = "desk";
  ModelConfig model;
  TrainConfig train;
  SyntheticSpec data;  // d_enc, num_classes and vocab_size follow `model`
  std::array<double, 3> split{0.2, 0.4, 0.4};
  bool stratify = false;

  std::string data_dir = "data";
  std::string runs_dir = "runs";
  std::string run;  // checkpoint run directory for eval/caption; empty = latest

  FusionMode eval_mode = FusionMode::ImageOnly;
  Split eval_split = Split::Test;

  BenchConfig bench;
  double gradcheck_step = 1e-3;
  double gradcheck_tol = 1e-2;

  // Synthetic spec with the shared dimensions filled in from the model.
  SyntheticSpec synthetic() const;
  // Raises RangeError/InvalidSpec naming the offending key.
  void validate() const;
};

struct KeyDoc {
  std::string name;
  std::string provenance;  // "paper" or "chosen"
  std::string default_value;
  std::string help;
};

std::vector<std::string> preset_names();

// Registry of every key in declaration order, with the default-preset values.
const std::vector<KeyDoc>& config_keys();

// defaults < preset < file < flags. The preset comes from `preset` when
// given, else from the file's "preset" entry, else "desk". Flag values are
// strings and are converted by the key's type.
RunConfig parse_config(const std::optional<std::filesystem::path>& file,
                       const std::vector<std::pair<std::string, std::string>>& overrides,
                       const std::optional<std::string>& preset = std::nullopt);

RunConfig preset_config(const std::string& name);

// Flat JSON object holding every key; parse_config_string accepts it back.
std::string config_to_json(const RunConfig& cfg);
RunConfig parse_config_string(const std::string& json_text,
                              const std::vector<std::pair<std::string, std::string>>& overrides = {});

}  // namespace pathm3
