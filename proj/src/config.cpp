#include "pathm3/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>
#include <type_traits>

#include <json.hpp>

namespace pathm3 {

namespace {

using json = nlohmann::json;

struct Key {
  std::string name;
  std::string provenance;
  std::string help;
  std::function<json(const RunConfig&)> get;
  std::function<void(RunConfig&, const json&)> set;        // typed JSON value
  std::function<json(const std::string&)> from_flag;       // flag text to JSON
};

[[noreturn]] void type_error(const std::string& key, const std::string& want, const std::string& got) {
  fail(ErrorKind::TypeError, "key '" + key + "' expects " + want + ", got " + got);
}

template <typename T>
T read_value(const std::string& key, const json& v) {
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) type_error(key, "a boolean", v.dump());
    return v.get<bool>();
  } else if constexpr (std::is_integral_v<T>) {
    if (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0) {
      fail(ErrorKind::RangeError, "key '" + key + "' must be non-negative, got " + v.dump());
    }
    if (!v.is_number_integer()) type_error(key, "a non-negative integer", v.dump());
    return v.get<T>();
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) type_error(key, "a number", v.dump());
    return v.get<T>();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) type_error(key, "a string", v.dump());
    return v.get<std::string>();
  } else if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
    if (!v.is_array()) type_error(key, "a list of non-negative integers", v.dump());
    std::vector<std::size_t> out;
    for (const auto& e : v) out.push_back(read_value<std::size_t>(key, e));
    return out;
  } else if constexpr (std::is_same_v<T, FusionMode> || std::is_same_v<T, Split>) {
    if (!v.is_string()) type_error(key, "a string", v.dump());
    const std::string text = v.get<std::string>();
    try {
      if constexpr (std::is_same_v<T, FusionMode>) {
        return parse_fusion_mode(text);
      } else {
        return parse_split(text);
      }
    } catch (const Error&) {
      const char* allowed = std::is_same_v<T, FusionMode> ? "image_only or image_and_text" : "train, val or test";
      fail(ErrorKind::RangeError, "key '" + key + "' expects " + allowed + ", got '" + text + "'");
    }
  }
}

template <typename T>
json write_value(const T& v) {
  if constexpr (std::is_same_v<T, FusionMode>) {
    return fusion_mode_name(v);
  } else if constexpr (std::is_same_v<T, Split>) {
    return split_name(v);
  } else {
    return json(v);
  }
}

template <typename T>
json flag_value(const std::string& key, const std::string& text) {
  if constexpr (std::is_same_v<T, bool>) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    type_error(key, "true or false", "'" + text + "'");
  } else if constexpr (std::is_arithmetic_v<T>) {
    json v = json::parse(text, nullptr, false);
    if (v.is_discarded() || !v.is_number()) type_error(key, "a number", "'" + text + "'");
    return v;
  } else if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
    json arr = json::array();
    std::stringstream ss(text);
    for (std::string item; std::getline(ss, item, ',');) {
      json v = json::parse(item, nullptr, false);
      if (v.is_discarded() || !v.is_number_integer()) type_error(key, "a comma-separated list of integers", "'" + text + "'");
      arr.push_back(v);
    }
    return arr;
  } else {
    return text;
  }
}

// `acc` maps a config to the field it owns; it is called on const and
// non-const configs alike.
template <typename Acc>
Key make_key(std::string name, std::string provenance, std::string help, Acc acc) {
  using T = std::remove_cvref_t<decltype(acc(std::declval<RunConfig&>()))>;
  Key k;
  k.name = name;
  k.provenance = std::move(provenance);
  k.help = std::move(help);
  k.get = [acc](const RunConfig& c) { return write_value<T>(acc(const_cast<RunConfig&>(c))); };
  k.set = [acc, name](RunConfig& c, const json& v) { acc(c) = read_value<T>(name, v); };
  k.from_flag = [name](const std::string& text) { return flag_value<T>(name, text); };
  return k;
}

#define PATHM3_KEY(name, prov, help, field) make_key(name, prov, help, [](RunConfig& c) -> auto& { return c.field; })

const std::vector<Key>& registry() {
  static const std::vector<Key> keys = [] {
    std::vector<Key> k;
    // model
    k.push_back(PATHM3_KEY("d_enc", "paper", "instance feature width (paper preset: 1408)", model.d_enc));
    k.push_back(PATHM3_KEY("d_model", "paper", "query / fusion width (paper preset: 768)", model.d_model));
    k.push_back(PATHM3_KEY("num_heads", "chosen", "attention heads everywhere", model.num_heads));
    k.push_back(PATHM3_KEY("num_queries", "paper", "learnable queries K (paper preset: 32)", model.num_queries));
    k.push_back(PATHM3_KEY("num_blocks", "paper", "fusion blocks N (paper preset: 12)", model.num_blocks));
    k.push_back(PATHM3_KEY("decoder_blocks", "chosen", "caption decoder blocks", model.decoder_blocks));
    k.push_back(PATHM3_KEY("num_classes", "paper", "bag classes", model.num_classes));
    k.push_back(PATHM3_KEY("vocab_size", "chosen", "caption vocabulary size incl. pad/bos/eos", model.vocab_size));
    k.push_back(PATHM3_KEY("max_text_len", "chosen", "longest caption in tokens", model.max_text_len));
    k.push_back(PATHM3_KEY("correlation_layers", "chosen", "residual self-attention layers over instances", model.correlation_layers));
    k.push_back(PATHM3_KEY("use_correlation", "paper", "enable the instance correlation module", model.use_correlation));
    k.push_back(PATHM3_KEY("landmark_count", "chosen", "Nystrom landmarks m", model.landmark_count));
    k.push_back(PATHM3_KEY("pinv_iterations", "chosen", "Newton-Schulz iterations for the pseudoinverse", model.pinv_iterations));
    k.push_back(PATHM3_KEY("nystrom_threshold", "chosen", "bags longer than this use Nystrom attention", model.nystrom_threshold));
    k.push_back(PATHM3_KEY("init_std", "chosen", "std of Gaussian weight init", model.init_std));
    // training
    k.push_back(PATHM3_KEY("epochs", "chosen", "training epochs", train.epochs));
    k.push_back(PATHM3_KEY("batch_size", "chosen", "bags per optimizer step (paper preset: 16)", train.batch_size));
    k.push_back(PATHM3_KEY("alpha", "chosen", "weight of L_C in alpha*L_C + (1-alpha)*L_G", train.alpha));
    k.push_back(PATHM3_KEY("lr", "chosen", "peak learning rate (paper preset: 1e-4)", train.lr));
    k.push_back(PATHM3_KEY("warmup_lr", "chosen", "learning rate at step 0 (paper preset: 1e-5)", train.warmup_lr));
    k.push_back(PATHM3_KEY("warmup_steps", "chosen", "linear warmup steps (paper preset: 1000)", train.warmup_steps));
    k.push_back(PATHM3_KEY("beta1", "paper", "AdamW beta1", train.adamw.beta1));
    k.push_back(PATHM3_KEY("beta2", "paper", "AdamW beta2", train.adamw.beta2));
    k.push_back(PATHM3_KEY("weight_decay", "paper", "AdamW decoupled weight decay", train.adamw.weight_decay));
    k.push_back(PATHM3_KEY("adam_eps", "chosen", "AdamW epsilon", train.adamw.eps));
    k.push_back(PATHM3_KEY("seed", "chosen", "model init and shuffling seed", train.seed));
    k.push_back(PATHM3_KEY("select_mode", "chosen", "inference mode used to pick the best-val checkpoint", train.select_mode));
    k.push_back(PATHM3_KEY("decode_max_len", "chosen", "greedy decoding length cap", train.decode_max_len));
    // synthetic data
    k.push_back(PATHM3_KEY("num_bags", "chosen", "synthetic bags", data.num_bags));
    k.push_back(PATHM3_KEY("min_instances", "chosen", "fewest instances per bag", data.min_instances));
    k.push_back(PATHM3_KEY("max_instances", "chosen", "most instances per bag", data.max_instances));
    k.push_back(PATHM3_KEY("motif_strength", "chosen", "class motif amplitude", data.motif_strength));
    k.push_back(PATHM3_KEY("noise_std", "chosen", "instance noise std", data.noise_std));
    k.push_back(PATHM3_KEY("motif_fraction_min", "chosen", "least fraction of motif instances", data.motif_fraction_min));
    k.push_back(PATHM3_KEY("motif_fraction_max", "chosen", "largest fraction of motif instances", data.motif_fraction_max));
    k.push_back(PATHM3_KEY("num_variants", "chosen", "caption variant words in use", data.num_variants));
    k.push_back(PATHM3_KEY("data_seed", "chosen", "corpus generation and split seed", data.seed));
    k.push_back(PATHM3_KEY("split_train", "paper", "train fraction", split[0]));
    k.push_back(PATHM3_KEY("split_val", "paper", "validation fraction", split[1]));
    k.push_back(PATHM3_KEY("split_test", "paper", "test fraction", split[2]));
    k.push_back(PATHM3_KEY("stratify", "chosen", "split within each class", stratify));
    // paths and evaluation
    k.push_back(PATHM3_KEY("data_dir", "chosen", "corpus directory (gen-data output, train input)", data_dir));
    k.push_back(PATHM3_KEY("runs_dir", "chosen", "parent of per-run directories", runs_dir));
    k.push_back(PATHM3_KEY("run", "chosen", "run directory holding the checkpoint; empty picks the latest", run));
    k.push_back(PATHM3_KEY("mode", "chosen", "inference mode for eval: image_only | image_and_text", eval_mode));
    k.push_back(PATHM3_KEY("eval_split", "chosen", "split for eval and caption", eval_split));
    // bench and gradcheck
    k.push_back(PATHM3_KEY("bench_lengths", "chosen", "sequence lengths M, comma separated", bench.lengths));
    k.push_back(PATHM3_KEY("bench_landmarks", "chosen", "landmarks m for the benchmark", bench.landmarks));
    k.push_back(PATHM3_KEY("bench_repeats", "chosen", "timed repeats per length (median kept)", bench.repeats));
    k.push_back(PATHM3_KEY("bench_head_dim", "chosen", "head width for the benchmark", bench.head_dim));
    k.push_back(PATHM3_KEY("gradcheck_step", "chosen", "central difference step", gradcheck_step));
    k.push_back(PATHM3_KEY("gradcheck_tol", "chosen", "max relative error per parameter", gradcheck_tol));
    return k;
  }();
  return keys;
}

#undef PATHM3_KEY

const Key& find_key(const std::string& name) {
  for (const Key& k : registry())
    if (k.name == name) return k;
  fail(ErrorKind::UnknownKey, "unknown config key '" + name + "'");
}

json to_json(const RunConfig& c) {
  json j = json::object();
  j["preset"] = c.preset;
  for (const Key& k : registry()) j[k.name] = k.get(c);
  return j;
}

json load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::IoError, "cannot read config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) return json::object();
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) fail(ErrorKind::TypeError, "config '" + path.string() + "' is not a JSON object");
  return j;
}

RunConfig resolve(const json& file, const std::vector<std::pair<std::string, std::string>>& overrides,
                  const std::optional<std::string>& preset) {
  std::string name = "desk";
  if (file.contains("preset")) name = read_value<std::string>("preset", file["preset"]);
  for (const auto& [k, v] : overrides)
    if (k == "preset") name = v;
  if (preset) name = *preset;
  RunConfig c = preset_config(name);
  for (const auto& [k, v] : file.items()) {
    if (k == "preset") continue;
    find_key(k).set(c, v);
  }
  for (const auto& [k, v] : overrides) {
    if (k == "preset") continue;
    const Key& key = find_key(k);
    key.set(c, key.from_flag(v));
  }
  c.validate();
  return c;
}

std::string value_text(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

}  // namespace

SyntheticSpec RunConfig::synthetic() const {
  SyntheticSpec s = data;
  s.d_enc = model.d_enc;
  s.num_classes = model.num_classes;
  s.vocab_size = model.vocab_size;
  return s;
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  try {
    synthetic().validate();
  } catch (const Error& e) {
    fail(ErrorKind::RangeError, e.what());
  }
  double total = 0.0;
  for (double f : split) {
    if (!(f >= 0.0 && f <= 1.0)) fail(ErrorKind::RangeError, "split_train/split_val/split_test must lie in [0, 1]");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) fail(ErrorKind::RangeError, "split_train + split_val + split_test must equal 1");
  if (bench.lengths.empty()) fail(ErrorKind::RangeError, "bench_lengths must not be empty");
  if (bench.repeats == 0) fail(ErrorKind::RangeError, "bench_repeats must be positive");
  if (bench.head_dim == 0) fail(ErrorKind::RangeError, "bench_head_dim must be positive");
  if (!(gradcheck_step > 0.0)) fail(ErrorKind::RangeError, "gradcheck_step must be positive");
  if (!(gradcheck_tol > 0.0)) fail(ErrorKind::RangeError, "gradcheck_tol must be positive");
}

std::vector<std::string> preset_names() { return {"desk", "paper", "tiny"}; }

RunConfig preset_config(const std::string& name) {
  RunConfig c;
  c.preset = name;
  ModelConfig& m = c.model;
  TrainConfig& t = c.train;
  // Shared desk-scale base.
  m.d_enc = 32;
  m.d_model = 64;
  m.num_heads = 4;
  m.num_queries = 4;
  m.num_blocks = 2;
  m.decoder_blocks = 1;
  m.num_classes = 3;
  m.vocab_size = 64;
  m.max_text_len = 16;
  m.correlation_layers = 1;
  m.use_correlation = true;
  m.landmark_count = 16;
  m.pinv_iterations = 6;
  m.nystrom_threshold = 256;
  m.init_std = 0.02;
  t.epochs = 30;
  t.batch_size = 4;
  t.alpha = 0.5;
  t.lr = 1e-3;
  t.warmup_lr = 1e-4;
  t.warmup_steps = 30;
  t.select_mode = FusionMode::ImageAndText;
  t.decode_max_len = 16;
  if (name == "desk") return c;
  if (name == "paper") {
    m.d_enc = 1408;
    m.d_model = 768;
    m.num_heads = 8;  // must divide both 1408 and 768
    m.num_queries = 32;
    m.num_blocks = 12;
    m.decoder_blocks = 2;
    m.landmark_count = 64;
    t.batch_size = 16;
    t.lr = 1e-4;
    t.warmup_lr = 1e-5;
    t.warmup_steps = 1000;
    return c;
  }
  if (name == "tiny") {
    m.d_enc = 8;
    m.d_model = 8;
    m.num_heads = 2;
    m.num_queries = 2;
    m.num_blocks = 1;
    m.landmark_count = 3;
    m.nystrom_threshold = 4;
    m.init_std = 0.3;
    t.epochs = 2;
    t.warmup_steps = 2;
    c.data.num_bags = 24;
    c.data.min_instances = 3;
    c.data.max_instances = 8;
    c.bench.lengths = {32, 64};
    c.bench.landmarks = 8;
    c.bench.head_dim = 8;
    return c;
  }
  fail(ErrorKind::RangeError, "key 'preset': unknown preset '" + name + "' (expected desk, paper or tiny)");
}

const std::vector<KeyDoc>& config_keys() {
  static const std::vector<KeyDoc> docs = [] {
    const RunConfig d = preset_config("desk");
    std::vector<KeyDoc> out;
    for (const Key& k : registry()) out.push_back({k.name, k.provenance, value_text(k.get(d)), k.help});
    return out;
  }();
  return docs;
}

RunConfig parse_config(const std::optional<std::filesystem::path>& file,
                       const std::vector<std::pair<std::string, std::string>>& overrides,
                       const std::optional<std::string>& preset) {
  return resolve(file ? load_file(*file) : json::object(), overrides, preset);
}

RunConfig parse_config_string(const std::string& json_text,
                              const std::vector<std::pair<std::string, std::string>>& overrides) {
  json j = json::parse(json_text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) fail(ErrorKind::TypeError, "config text is not a JSON object");
  return resolve(j, overrides, std::nullopt);
}

std::string config_to_json(const RunConfig& cfg) { return to_json(cfg).dump(2); }

}  // namespace pathm3
