#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pwlm/error.hpp"

namespace pwlm::detail {

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

class ByteWriter {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  void text(std::string_view s) { bytes(s.data(), s.size()); }
  template <typename T>
  void pod(T v) {
    bytes(&v, sizeof v);
  }
  template <typename T>
  void array(std::span<const T> v) {
    bytes(v.data(), v.size_bytes());
  }
  // u32 length followed by the bytes.
  void prefixed(std::string_view s) {
    pod(static_cast<std::uint32_t>(s.size()));
    text(s);
  }
  std::size_t size() const noexcept { return buf_.size(); }
  std::vector<std::uint8_t> take() { return std::move(buf_); }
  const std::vector<std::uint8_t>& buffer() const noexcept { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> data, std::string what)
      : data_(data), what_(std::move(what)) {}

  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw FormatError(what_ + ": truncated input");
  }
  std::span<const std::uint8_t> bytes(std::size_t n) {
    need(n);
    auto out = data_.subspan(pos_, n);
    pos_ += n;
    return out;
  }
  template <typename T>
  T pod() {
    T v;
    auto b = bytes(sizeof v);
    std::memcpy(&v, b.data(), sizeof v);
    return v;
  }
  template <typename T>
  std::vector<T> array(std::size_t count) {
    if (count > (data_.size() - pos_) / sizeof(T)) throw FormatError(what_ + ": truncated input");
    std::vector<T> v(count);
    auto b = bytes(count * sizeof(T));
    std::memcpy(v.data(), b.data(), b.size());
    return v;
  }
  std::string prefixed() {
    auto n = pod<std::uint32_t>();
    auto b = bytes(n);
    return std::string(reinterpret_cast<const char*>(b.data()), b.size());
  }
  std::size_t position() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }

 private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
  std::string what_;
};

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> data);

}  // namespace pwlm::detail
