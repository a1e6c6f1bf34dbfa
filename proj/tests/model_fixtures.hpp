#pragma once

#include <string>
#include <vector>

#include "oracle.hpp"
#include "pathm3/model.hpp"

// Reads store parameters by name into oracle matrices.
template <typename Real>
struct WeightReader {
  const pathm3::ParameterStore<Real>& store;

  const pathm3::Tensor<Real>& tensor(const std::string& name) const {
    auto id = store.find(name);
    if (!id) throw std::runtime_error("no parameter " + name);
    return store[*id].tensor;
  }
  oracle::Mat mat(const std::string& name) const { return oracle::from_tensor(tensor(name)); }
  std::vector<double> vec(const std::string& name) const {
    const auto& t = tensor(name);
    return std::vector<double>(t.values().begin(), t.values().end());
  }
  oracle::Mat ln(const oracle::Mat& x, const std::string& prefix) const {
    return oracle::layer_norm(x, vec(prefix + ".gamma"), vec(prefix + ".beta"));
  }
  oracle::Mat attn(const oracle::Mat& xq, const oracle::Mat& xkv, const std::string& prefix, std::size_t heads,
                   bool causal = false) const {
    return oracle::multi_head(xq, xkv, mat(prefix + ".wq"), mat(prefix + ".wk"), mat(prefix + ".wv"),
                              mat(prefix + ".wo"), heads, causal);
  }
  oracle::Mat ffn(const oracle::Mat& x, const std::string& prefix) const {
    return oracle::feed_forward(x, mat(prefix + ".w1"), vec(prefix + ".b1"), mat(prefix + ".w2"), vec(prefix + ".b2"));
  }
  // Rows of an embedding table picked by id.
  oracle::Mat gather(const std::string& name, const std::vector<int>& ids) const {
    const oracle::Mat table = mat(name);
    oracle::Mat out(ids.size(), table.cols);
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t j = 0; j < table.cols; ++j) out(i, j) = table(static_cast<std::size_t>(ids[i]), j);
    return out;
  }
};

// Every parameter nudged away from its structured initial value so that
// layer-norm gains, biases and zero-initialised tensors all matter.
template <typename Real>
void perturb_all(pathm3::ParameterStore<Real>& store, std::uint64_t seed, double stddev) {
  pathm3::Rng rng(seed);
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& p : store)
    for (auto& v : p.tensor.values()) v = static_cast<Real>(v + dist(rng));
}

inline pathm3::ModelConfig tiny_model_config() {
  pathm3::ModelConfig cfg;
  cfg.d_enc = 8;
  cfg.d_model = 8;
  cfg.num_heads = 2;
  cfg.num_queries = 2;
  cfg.num_blocks = 1;
  cfg.decoder_blocks = 1;
  cfg.num_classes = 3;
  cfg.vocab_size = 11;
  cfg.max_text_len = 6;
  cfg.landmark_count = 3;
  cfg.nystrom_threshold = 4;
  cfg.init_std = 0.3;
  return cfg;
}
