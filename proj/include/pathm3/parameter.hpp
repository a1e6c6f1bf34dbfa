#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "pathm3/tensor.hpp"

namespace pathm3 {

template <typename Real>
struct Parameter {
  std::string name;
  Tensor<Real> tensor;
};

// Index of a parameter inside its store. Modules hold these rather than
// pointers so models stay copyable.
struct ParamId {
  std::size_t index = 0;
};

template <typename Real>
class ParameterStore {
 public:
  ParamId add(std::string name, Tensor<Real> init) {
    if (by_name_.contains(name)) fail(ErrorKind::DuplicateName, "parameter '" + name + "' already registered");
    init.set_requires_grad(true);
    by_name_.emplace(name, params_.size());
    params_.push_back({std::move(name), std::move(init)});
    return ParamId{params_.size() - 1};
  }

  Parameter<Real>& operator[](ParamId id) { return params_.at(id.index); }
  const Parameter<Real>& operator[](ParamId id) const { return params_.at(id.index); }

  std::optional<ParamId> find(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) return std::nullopt;
    return ParamId{it->second};
  }

  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.size();
    return n;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad() {
    for (auto& p : params_) p.tensor.clear_grad();
  }

  template <typename To>
  ParameterStore<To> cast() const {
    ParameterStore<To> out;
    for (const auto& p : params_) out.add(p.name, p.tensor.template cast<To>());
    return out;
  }

 private:
  std::vector<Parameter<Real>> params_;
  std::unordered_map<std::string, std::size_t> by_name_;
};

// Checkpoint file: "PM3W", u32 version, u32 count, then per entry
// u16 name length, UTF-8 name, u8 rank, u32 dims, float32 LE payload.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(const ParameterStore<float>& store, const std::filesystem::path& path);
ParameterStore<float> read_checkpoint(const std::filesystem::path& path);

// Loads values from a checkpoint into an existing store; names and shapes
// must match exactly.
void load_checkpoint_into(ParameterStore<float>& store, const std::filesystem::path& path);

}  // namespace pathm3
