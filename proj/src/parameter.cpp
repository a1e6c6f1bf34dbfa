#include "pathm3/parameter.hpp"

#include <limits>

#include "pathm3/binary_io.hpp"

namespace pathm3 {

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

namespace {

constexpr char kMagic[4] = {'P', 'M', '3', 'W'};

}  // namespace

void write_checkpoint(const ParameterStore<float>& store, const std::filesystem::path& path) {
  io::Writer w;
  w.put_bytes(kMagic, 4);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(store.size()));
  for (const auto& p : store) {
    if (p.name.size() > std::numeric_limits<std::uint16_t>::max()) {
      fail(ErrorKind::IoError, "parameter name too long: " + p.name);
    }
    w.put<std::uint16_t>(static_cast<std::uint16_t>(p.name.size()));
    w.put_bytes(p.name.data(), p.name.size());
    w.put<std::uint8_t>(static_cast<std::uint8_t>(p.tensor.rank()));
    for (std::size_t d : p.tensor.shape()) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    w.put_bytes(p.tensor.values().data(), p.tensor.size() * sizeof(float));
  }
  w.save(path);
}

ParameterStore<float> read_checkpoint(const std::filesystem::path& path) {
  io::Reader r(path);
  char magic[4];
  r.get_bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) fail(ErrorKind::BadMagic, "'" + r.path() + "' is not a PM3W checkpoint");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    fail(ErrorKind::IoError, "unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>();
  ParameterStore<float> store;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint16_t>();
    std::string name(name_len, '\0');
    r.get_bytes(name.data(), name_len);
    const auto rank = r.get<std::uint8_t>();
    if (rank == 0) fail(ErrorKind::DimMismatch, "parameter '" + name + "' has rank 0");
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint32_t>();
    std::vector<float> data(shape_size(shape));
    r.get_bytes(data.data(), data.size() * sizeof(float));
    store.add(std::move(name), Tensor<float>(std::move(shape), std::move(data)));
  }
  if (r.remaining() != 0) fail(ErrorKind::DimMismatch, "trailing bytes in checkpoint '" + r.path() + "'");
  return store;
}

void load_checkpoint_into(ParameterStore<float>& store, const std::filesystem::path& path) {
  ParameterStore<float> loaded = read_checkpoint(path);
  if (loaded.size() != store.size()) {
    fail(ErrorKind::DimMismatch, "checkpoint has " + std::to_string(loaded.size()) + " parameters, model expects " +
                                     std::to_string(store.size()));
  }
  for (auto& p : store) {
    auto id = loaded.find(p.name);
    if (!id) fail(ErrorKind::DimMismatch, "checkpoint is missing parameter '" + p.name + "'");
    const Tensor<float>& src = loaded[*id].tensor;
    if (src.shape() != p.tensor.shape()) {
      fail(ErrorKind::DimMismatch, "parameter '" + p.name + "' has shape " + shape_string(src.shape()) +
                                       ", model expects " + shape_string(p.tensor.shape()));
    }
    p.tensor = src;
    p.tensor.set_requires_grad(true);
  }
}

}  // namespace pathm3
