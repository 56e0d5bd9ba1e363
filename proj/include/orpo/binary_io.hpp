#pragma once

#include "orpo/mlp.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <type_traits>

namespace orpo {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Little-endian byte sink.
class ByteWriter {
 public:
  template <typename T>
  void put(T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1)
      std::reverse(bytes, bytes + sizeof(T));
    data_.append(bytes, sizeof(T));
  }
  void raw(const std::string& bytes) { data_ += bytes; }
  void vector(const Vector& v);
  void matrix(const Matrix& m);
  void network(const MlpNetwork& net);

  const std::string& data() const { return data_; }

 private:
  std::string data_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string data) : data_(std::move(data)) {}
  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > data_.size()) throw FormatError("unexpected end of file");
    char bytes[sizeof(T)];
    std::memcpy(bytes, data_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1)
      std::reverse(bytes, bytes + sizeof(T));
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  std::string bytes(std::size_t n);
  Vector vector();
  Matrix matrix();
  MlpNetwork network();

  std::size_t position() const { return pos_; }
  bool done() const { return pos_ == data_.size(); }

 private:
  std::string data_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& data);

// 8-byte magic followed by a u32 version; throws FormatError on mismatch.
void write_header(ByteWriter& out, const char (&magic)[9], std::uint32_t version);
void read_header(ByteReader& in, const char (&magic)[9], std::uint32_t version,
                 const std::string& what);

}  // namespace orpo
