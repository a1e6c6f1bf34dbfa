#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "pathm3/error.hpp"

namespace pathm3::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

class Writer {
 public:
  template <typename T>
  void put(T value) {
    char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    buffer_.insert(buffer_.end(), bytes, bytes + sizeof(T));
  }

  void put_bytes(const void* data, std::size_t n) {
    const char* p = static_cast<const char*>(data);
    buffer_.insert(buffer_.end(), p, p + n);
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::IoError, "cannot open '" + path.string() + "' for writing");
    out.write(buffer_.data(), static_cast<std::streamsize>(buffer_.size()));
    if (!out) fail(ErrorKind::IoError, "write failed for '" + path.string() + "'");
  }

 private:
  std::vector<char> buffer_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path.string()) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::IoError, "cannot open '" + path_ + "'");
    buffer_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }

  template <typename T>
  T get() {
    require(sizeof(T));
    T value;
    std::memcpy(&value, buffer_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  void get_bytes(void* out, std::size_t n) {
    require(n);
    std::memcpy(out, buffer_.data() + pos_, n);
    pos_ += n;
  }

  std::size_t remaining() const { return buffer_.size() - pos_; }
  const std::string& path() const { return path_; }

 private:
  void require(std::size_t n) const {
    if (pos_ + n > buffer_.size()) fail(ErrorKind::DimMismatch, "unexpected end of file in '" + path_ + "'");
  }

  std::string path_;
  std::vector<char> buffer_;
  std::size_t pos_ = 0;
};

}  // namespace pathm3::io
