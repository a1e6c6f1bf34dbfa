#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "pathm3/tensor.hpp"

namespace pathm3 {

enum class Split { Train, Val, Test };

const char* split_name(Split s);
Split parse_split(const std::string& text);

struct BagRecord {
  std::string bag_id;
  std::string feature_path;  // relative to the manifest directory
  std::size_t num_instances = 0;
  int label = 0;
  std::vector<int> caption;  // no BOS/EOS

  bool operator==(const BagRecord&) const = default;
};

struct Manifest {
  int version = 1;
  std::size_t d_enc = 0;
  std::size_t num_classes = 0;
  std::vector<std::string> vocab;  // 0 = PAD, 1 = BOS, 2 = EOS
  std::vector<BagRecord> bags;
  std::map<std::string, Split> splits;

  bool operator==(const Manifest&) const = default;

  std::vector<const BagRecord*> in_split(Split s) const;
  void validate() const;
};

std::string manifest_to_string(const Manifest& m);
Manifest manifest_from_string(const std::string& text);
void save_manifest(const Manifest& m, const std::filesystem::path& path);
Manifest load_manifest(const std::filesystem::path& path);

// "PM3F", u32 version, u32 M, u32 d, M·d float32 little-endian.
inline constexpr std::uint32_t kFeatureFileVersion = 1;
void write_feature_file(const Tensor<float>& rows, const std::filesystem::path& path);
Tensor<float> read_feature_file(const std::filesystem::path& path);

struct SyntheticSpec {
  std::size_t num_bags = 300;
  std::size_t num_classes = 3;
  std::size_t d_enc = 32;
  std::size_t vocab_size = 64;
  std::size_t min_instances = 50;
  std::size_t max_instances = 200;
  double motif_strength = 3.0;
  double noise_std = 1.0;
  double motif_fraction_min = 0.1;
  double motif_fraction_max = 0.3;
  std::size_t num_variants = 3;
  std::uint64_t seed = 0;

  void validate() const;
};

// Built-in caption material: one template per class, the last token of each
// caption being a variant slot.
std::size_t max_template_classes();
std::vector<std::string> synthetic_vocabulary(const SyntheticSpec& spec);
std::vector<std::string> class_template(std::size_t cls);
std::vector<std::string> variant_words();
std::size_t caption_variant(const std::string& bag_id, std::size_t cls, std::size_t num_variants);

// Writes features/<bag_id>.pm3f and manifest.json under out_dir. The
// returned manifest carries no split assignment yet.
Manifest generate_synthetic_corpus(const SyntheticSpec& spec, const std::filesystem::path& out_dir);

// Seeded shuffle then contiguous cut; val and test get ⌊n·f⌋ bags, train the
// rest. With `stratify` the cut is made within each class.
Manifest split_dataset(const Manifest& m, std::array<double, 3> fractions, std::uint64_t seed, bool stratify = false);

struct LoadedBag {
  const BagRecord* record = nullptr;
  Tensor<float> features;
};

std::vector<LoadedBag> load_split(const Manifest& m, const std::filesystem::path& root, Split s);

std::vector<int> encode_caption(const std::vector<std::string>& vocab, const std::vector<std::string>& words);
std::string decode_caption(const std::vector<std::string>& vocab, const std::vector<int>& ids);

}  // namespace pathm3
