#include "pathm3/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"
#include "pathm3/binary_io.hpp"

namespace pathm3 {

using nlohmann::json;

const char* split_name(Split s) {
  switch (s) {
    case Split::Train:
      return "train";
    case Split::Val:
      return "val";
    case Split::Test:
      return "test";
  }
  return "?";
}

Split parse_split(const std::string& text) {
  if (text == "train") return Split::Train;
  if (text == "val") return Split::Val;
  if (text == "test") return Split::Test;
  fail(ErrorKind::RangeError, "split: expected train, val or test, got '" + text + "'");
}

std::vector<const BagRecord*> Manifest::in_split(Split s) const {
  std::vector<const BagRecord*> out;
  for (const auto& b : bags) {
    auto it = splits.find(b.bag_id);
    if (it != splits.end() && it->second == s) out.push_back(&b);
  }
  return out;
}

void Manifest::validate() const {
  if (vocab.size() <= static_cast<std::size_t>(2)) fail(ErrorKind::InvalidSpec, "manifest: vocabulary lacks reserved ids");
  std::set<std::string> ids;
  for (const auto& b : bags) {
    if (!ids.insert(b.bag_id).second) fail(ErrorKind::InvalidSpec, "manifest: duplicate bag_id " + b.bag_id);
    if (b.num_instances < 1) fail(ErrorKind::InvalidSpec, "manifest: bag " + b.bag_id + " has no instances");
    if (b.label < 0 || static_cast<std::size_t>(b.label) >= num_classes) {
      fail(ErrorKind::LabelOutOfRange, "manifest: bag " + b.bag_id + " label out of range");
    }
    for (int t : b.caption) {
      if (t < 0 || static_cast<std::size_t>(t) >= vocab.size()) {
        fail(ErrorKind::TokenOutOfVocab, "manifest: bag " + b.bag_id + " caption token out of vocabulary");
      }
    }
  }
  for (const auto& [id, s] : splits) {
    if (!ids.contains(id)) fail(ErrorKind::InvalidSpec, "manifest: split names unknown bag " + id);
  }
}

std::string manifest_to_string(const Manifest& m) {
  json j;
  j["version"] = m.version;
  j["d_enc"] = m.d_enc;
  j["num_classes"] = m.num_classes;
  j["vocab"] = m.vocab;
  j["bags"] = json::array();
  for (const auto& b : m.bags) {
    j["bags"].push_back({{"bag_id", b.bag_id},
                         {"feature_path", b.feature_path},
                         {"num_instances", b.num_instances},
                         {"label", b.label},
                         {"caption", b.caption}});
  }
  j["splits"] = json::object();
  for (const auto& [id, s] : m.splits) j["splits"][id] = split_name(s);
  return j.dump(1);
}

Manifest manifest_from_string(const std::string& text) {
  Manifest m;
  try {
    const json j = json::parse(text);
    m.version = j.at("version").get<int>();
    m.d_enc = j.at("d_enc").get<std::size_t>();
    m.num_classes = j.at("num_classes").get<std::size_t>();
    m.vocab = j.at("vocab").get<std::vector<std::string>>();
    for (const auto& b : j.at("bags")) {
      m.bags.push_back({b.at("bag_id").get<std::string>(), b.at("feature_path").get<std::string>(),
                        b.at("num_instances").get<std::size_t>(), b.at("label").get<int>(),
                        b.at("caption").get<std::vector<int>>()});
    }
    if (j.contains("splits")) {
      for (const auto& [id, s] : j.at("splits").items()) m.splits[id] = parse_split(s.get<std::string>());
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::InvalidSpec, std::string("manifest: ") + e.what());
  }
  m.validate();
  return m;
}

void save_manifest(const Manifest& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::IoError, "cannot write '" + path.string() + "'");
  out << manifest_to_string(m) << '\n';
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::IoError, "cannot open manifest '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return manifest_from_string(ss.str());
}

namespace {

constexpr char kFeatureMagic[4] = {'P', 'M', '3', 'F'};

}  // namespace

void write_feature_file(const Tensor<float>& rows, const std::filesystem::path& path) {
  if (rows.rank() != 2) fail(ErrorKind::ShapeMismatch, "feature file rows must be a matrix");
  if (!rows.all_finite()) fail(ErrorKind::NonFinite, "feature rows contain NaN or Inf");
  io::Writer w;
  w.put_bytes(kFeatureMagic, 4);
  w.put<std::uint32_t>(kFeatureFileVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(rows.rows()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(rows.cols()));
  w.put_bytes(rows.values().data(), rows.size() * sizeof(float));
  w.save(path);
}

Tensor<float> read_feature_file(const std::filesystem::path& path) {
  io::Reader r(path);
  char magic[4];
  r.get_bytes(magic, 4);
  if (std::memcmp(magic, kFeatureMagic, 4) != 0) fail(ErrorKind::BadMagic, "'" + r.path() + "' is not a PM3F file");
  const auto version = r.get<std::uint32_t>();
  if (version != kFeatureFileVersion) fail(ErrorKind::IoError, "unsupported feature file version " + std::to_string(version));
  const std::size_t m = r.get<std::uint32_t>(), d = r.get<std::uint32_t>();
  if (m == 0 || d == 0) fail(ErrorKind::DimMismatch, "'" + r.path() + "' declares an empty matrix");
  if (r.remaining() != m * d * sizeof(float)) {
    fail(ErrorKind::DimMismatch, "'" + r.path() + "' header says " + std::to_string(m) + "x" + std::to_string(d) +
                                     " but payload holds " + std::to_string(r.remaining()) + " bytes");
  }
  std::vector<float> data(m * d);
  r.get_bytes(data.data(), data.size() * sizeof(float));
  return Tensor<float>({m, d}, std::move(data));
}

namespace {

const std::vector<std::string> kPrefix{"the", "specimen", "shows"};
const std::vector<std::vector<std::string>> kBodies{
    {"well", "differentiated", "tubular", "adenocarcinoma"},
    {"moderately", "differentiated", "tubular", "adenocarcinoma"},
    {"poorly", "differentiated", "adenocarcinoma", "of", "solid", "type"},
    {"signet", "ring", "cell", "carcinoma"},
    {"mucinous", "adenocarcinoma", "with", "extracellular", "mucin"},
    {"papillary", "adenocarcinoma"},
    {"chronic", "gastritis", "without", "malignancy"},
    {"tubular", "adenoma", "with", "low", "grade", "dysplasia"},
};
const std::vector<std::string> kSlotLead{"in", "the"};
const std::vector<std::string> kVariants{"mucosa", "submucosa", "muscularis", "serosa"};

}  // namespace

std::size_t max_template_classes() { return kBodies.size(); }

std::vector<std::string> class_template(std::size_t cls) {
  if (cls >= kBodies.size()) fail(ErrorKind::InvalidSpec, "no caption template for class " + std::to_string(cls));
  std::vector<std::string> out = kPrefix;
  out.insert(out.end(), kBodies[cls].begin(), kBodies[cls].end());
  out.insert(out.end(), kSlotLead.begin(), kSlotLead.end());
  return out;
}

std::vector<std::string> variant_words() { return kVariants; }

std::size_t caption_variant(const std::string& bag_id, std::size_t cls, std::size_t num_variants) {
  // FNV-1a over the id, then the class.
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : bag_id) h = (h ^ ch) * 1099511628211ull;
  h = (h ^ static_cast<std::uint64_t>(cls)) * 1099511628211ull;
  return static_cast<std::size_t>(h % num_variants);
}

std::vector<std::string> synthetic_vocabulary(const SyntheticSpec& spec) {
  std::vector<std::string> vocab{"<pad>", "<bos>", "<eos>"};
  auto add = [&](const std::string& w) {
    if (std::find(vocab.begin(), vocab.end(), w) == vocab.end()) vocab.push_back(w);
  };
  for (std::size_t c = 0; c < kBodies.size(); ++c)
    for (const auto& w : class_template(c)) add(w);
  for (const auto& w : kVariants) add(w);
  if (vocab.size() > spec.vocab_size) {
    fail(ErrorKind::InvalidSpec, "vocab_size " + std::to_string(spec.vocab_size) + " is smaller than the " +
                                     std::to_string(vocab.size()) + " words the templates need");
  }
  for (std::size_t k = 0; vocab.size() < spec.vocab_size; ++k) vocab.push_back("w" + std::to_string(k));
  return vocab;
}

void SyntheticSpec::validate() const {
  if (num_classes < 2) fail(ErrorKind::InvalidSpec, "num_classes must be at least 2");
  if (num_classes > max_template_classes()) {
    fail(ErrorKind::InvalidSpec, "at most " + std::to_string(max_template_classes()) + " classes have caption templates");
  }
  if (d_enc < num_classes) fail(ErrorKind::InvalidSpec, "d_enc must be at least num_classes for orthonormal motifs");
  if (min_instances < 1 || max_instances < min_instances) fail(ErrorKind::InvalidSpec, "instance range must satisfy 1 <= min <= max");
  if (!(motif_strength >= 0.0)) fail(ErrorKind::InvalidSpec, "motif_strength must be non-negative");
  if (!(noise_std > 0.0)) fail(ErrorKind::InvalidSpec, "noise_std must be positive");
  if (!(motif_fraction_min > 0.0 && motif_fraction_min <= motif_fraction_max && motif_fraction_max <= 1.0)) {
    fail(ErrorKind::InvalidSpec, "motif fractions must satisfy 0 < min <= max <= 1");
  }
  if (num_variants < 1 || num_variants > kVariants.size()) {
    fail(ErrorKind::InvalidSpec, "num_variants must lie in [1, " + std::to_string(kVariants.size()) + "]");
  }
}

Manifest generate_synthetic_corpus(const SyntheticSpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  Manifest m;
  m.d_enc = spec.d_enc;
  m.num_classes = spec.num_classes;
  m.vocab = synthetic_vocabulary(spec);

  std::error_code ec;
  std::filesystem::create_directories(out_dir / "features", ec);
  if (ec) fail(ErrorKind::IoError, "cannot create '" + (out_dir / "features").string() + "': " + ec.message());

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  // Orthonormal class directions by Gram–Schmidt on Gaussian vectors.
  std::vector<std::vector<double>> dirs;
  while (dirs.size() < spec.num_classes) {
    std::vector<double> u(spec.d_enc);
    for (auto& x : u) x = gauss(rng);
    for (const auto& v : dirs) {
      const double dot = std::inner_product(u.begin(), u.end(), v.begin(), 0.0);
      for (std::size_t i = 0; i < u.size(); ++i) u[i] -= dot * v[i];
    }
    const double norm = std::sqrt(std::inner_product(u.begin(), u.end(), u.begin(), 0.0));
    if (norm < 1e-6) continue;
    for (auto& x : u) x /= norm;
    dirs.push_back(std::move(u));
  }

  // Balanced labels in shuffled order.
  std::vector<std::size_t> labels(spec.num_bags);
  for (std::size_t b = 0; b < spec.num_bags; ++b) labels[b] = b % spec.num_classes;
  std::shuffle(labels.begin(), labels.end(), rng);
  std::uniform_int_distribution<std::size_t> pick_m(spec.min_instances, spec.max_instances);
  std::uniform_real_distribution<double> pick_frac(spec.motif_fraction_min, spec.motif_fraction_max);

  for (std::size_t b = 0; b < spec.num_bags; ++b) {
    char id[32];
    std::snprintf(id, sizeof id, "bag%04zu", b);
    const std::size_t cls = labels[b];
    const std::size_t n = pick_m(rng);
    const std::size_t motif_rows =
        std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(pick_frac(rng) * static_cast<double>(n))), 1, n);

    Tensor<float> rows({n, spec.d_enc});
    for (auto& x : rows.values()) x = static_cast<float>(spec.noise_std * gauss(rng));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t r = 0; r < motif_rows; ++r) {
      for (std::size_t j = 0; j < spec.d_enc; ++j) {
        rows(order[r], j) = static_cast<float>(rows(order[r], j) + spec.motif_strength * dirs[cls][j]);
      }
    }

    BagRecord rec;
    rec.bag_id = id;
    rec.feature_path = "features/" + rec.bag_id + ".pm3f";
    rec.num_instances = n;
    rec.label = static_cast<int>(cls);
    std::vector<std::string> words = class_template(cls);
    words.push_back(kVariants[caption_variant(rec.bag_id, cls, spec.num_variants)]);
    rec.caption = encode_caption(m.vocab, words);
    write_feature_file(rows, out_dir / rec.feature_path);
    m.bags.push_back(std::move(rec));
  }
  save_manifest(m, out_dir / "manifest.json");
  return m;
}

Manifest split_dataset(const Manifest& m, std::array<double, 3> fractions, std::uint64_t seed, bool stratify) {
  double total = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0) || !std::isfinite(f)) fail(ErrorKind::InvalidFractions, "split fractions must be non-negative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) fail(ErrorKind::InvalidFractions, "split fractions must sum to 1");

  Manifest out = m;
  out.splits.clear();
  std::mt19937_64 rng(seed);

  auto assign = [&](std::vector<std::size_t> group) {
    std::shuffle(group.begin(), group.end(), rng);
    const double n = static_cast<double>(group.size());
    // Guard against 0.4·10 landing a hair under 4.
    const auto n_val = static_cast<std::size_t>(std::floor(n * fractions[1] + 1e-9));
    const auto n_test = static_cast<std::size_t>(std::floor(n * fractions[2] + 1e-9));
    const std::size_t n_train = group.size() - n_val - n_test;
    for (std::size_t i = 0; i < group.size(); ++i) {
      const Split s = i < n_train ? Split::Train : i < n_train + n_val ? Split::Val : Split::Test;
      out.splits[m.bags[group[i]].bag_id] = s;
    }
  };

  if (stratify) {
    for (std::size_t c = 0; c < m.num_classes; ++c) {
      std::vector<std::size_t> group;
      for (std::size_t i = 0; i < m.bags.size(); ++i)
        if (static_cast<std::size_t>(m.bags[i].label) == c) group.push_back(i);
      assign(std::move(group));
    }
  } else {
    std::vector<std::size_t> all(m.bags.size());
    std::iota(all.begin(), all.end(), 0);
    assign(std::move(all));
  }
  return out;
}

std::vector<LoadedBag> load_split(const Manifest& m, const std::filesystem::path& root, Split s) {
  std::vector<LoadedBag> out;
  for (const BagRecord* rec : m.in_split(s)) {
    Tensor<float> f = read_feature_file(root / rec->feature_path);
    if (f.rows() != rec->num_instances || f.cols() != m.d_enc) {
      fail(ErrorKind::DimMismatch, "feature file for " + rec->bag_id + " is " + shape_string(f.shape()) +
                                       ", manifest expects " + std::to_string(rec->num_instances) + "x" +
                                       std::to_string(m.d_enc));
    }
    out.push_back({rec, std::move(f)});
  }
  return out;
}

std::vector<int> encode_caption(const std::vector<std::string>& vocab, const std::vector<std::string>& words) {
  std::vector<int> ids;
  for (const auto& w : words) {
    auto it = std::find(vocab.begin(), vocab.end(), w);
    if (it == vocab.end()) fail(ErrorKind::TokenOutOfVocab, "word '" + w + "' is not in the vocabulary");
    ids.push_back(static_cast<int>(it - vocab.begin()));
  }
  return ids;
}

std::string decode_caption(const std::vector<std::string>& vocab, const std::vector<int>& ids) {
  std::string out;
  for (int id : ids) {
    if (!out.empty()) out += ' ';
    out += id >= 0 && static_cast<std::size_t>(id) < vocab.size() ? vocab[static_cast<std::size_t>(id)] : "<unk>";
  }
  return out;
}

}  // namespace pathm3
