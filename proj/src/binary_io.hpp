#pragma once

// Little-endian stream helpers shared by the binary file formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "hic/error.hpp"

namespace hic::io {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
T byteswap_if_big(T v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    T out;
    auto* src = reinterpret_cast<const std::uint8_t*>(&v);
    auto* dst = reinterpret_cast<std::uint8_t*>(&out);
    for (std::size_t i = 0; i < sizeof(T); ++i) dst[i] = src[sizeof(T) - 1 - i];
    return out;
  }
}

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw Error(ErrorCode::IoError, "cannot open for writing: " + path.string());
    path_ = path.string();
  }

  void bytes(const void* data, std::size_t n) {
    out_.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!out_) throw Error(ErrorCode::IoError, "write failed: " + path_);
  }

  template <typename T>
  void scalar(T v) {
    static_assert(std::is_arithmetic_v<T> || std::is_enum_v<T>);
    if constexpr (std::is_floating_point_v<T>) {
      using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
      Bits b;
      std::memcpy(&b, &v, sizeof(T));
      b = byteswap_if_big(b);
      bytes(&b, sizeof(b));
    } else {
      auto b = byteswap_if_big(v);
      bytes(&b, sizeof(b));
    }
  }

  void magic(const char tag[4]) { bytes(tag, 4); }

 private:
  std::ofstream out_;
  std::string path_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : in_(path, std::ios::binary) {
    if (!in_) throw Error(ErrorCode::IoError, "cannot open for reading: " + path.string());
    path_ = path.string();
  }

  void bytes(void* data, std::size_t n) {
    in_.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n));
    if (in_.gcount() != static_cast<std::streamsize>(n))
      throw Error(ErrorCode::CorruptRecord, "unexpected end of file: " + path_);
  }

  template <typename T>
  T scalar() {
    static_assert(std::is_arithmetic_v<T> || std::is_enum_v<T>);
    if constexpr (std::is_floating_point_v<T>) {
      using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
      Bits b;
      bytes(&b, sizeof(b));
      b = byteswap_if_big(b);
      T v;
      std::memcpy(&v, &b, sizeof(T));
      return v;
    } else {
      T v;
      bytes(&v, sizeof(v));
      return byteswap_if_big(v);
    }
  }

  void expect_magic(const char tag[4], const char* what) {
    char buf[4];
    bytes(buf, 4);
    if (std::memcmp(buf, tag, 4) != 0)
      throw Error(ErrorCode::CorruptRecord, std::string("bad magic for ") + what + ": " + path_);
  }

 private:
  std::ifstream in_;
  std::string path_;
};

}  // namespace hic::io
