#pragma once

// Little-endian binary encoding helpers shared by the replay and checkpoint formats.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dmwm/error.hpp"

namespace dmwm::io {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

class Writer {
 public:
  template <class T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    buf_.insert(buf_.end(), bytes, bytes + sizeof(T));
  }
  void put_bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void put_string(std::string_view s) {
    put<std::uint64_t>(s.size());
    put_bytes(s);
  }
  template <class T>
  void put_array(std::span<const T> values) {
    for (T v : values) put<T>(v);
  }

  const std::vector<char>& bytes() const { return buf_; }
  // Writes atomically via a temporary sibling file.
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(std::vector<char> data, std::string context) : data_(std::move(data)), context_(std::move(context)) {}
  static Reader from_file(const std::filesystem::path& path);

  template <class T>
  T get() {
    need(sizeof(T));
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, data_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, bytes, sizeof(T));
    return v;
  }
  std::string get_bytes(std::size_t n) {
    need(n);
    std::string s(data_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  std::string get_string() { return get_bytes(checked_count(get<std::uint64_t>(), 1)); }
  template <class T>
  void get_array(std::span<T> out) {
    need(out.size() * sizeof(T));
    for (T& v : out) v = get<T>();
  }

  // Validates that `count` elements of `elem_size` bytes can still be read.
  std::size_t checked_count(std::uint64_t count, std::size_t elem_size) const {
    if (elem_size != 0 && count > remaining() / elem_size) {
      throw TruncatedError(context_ + ": declared length " + std::to_string(count) +
                           " exceeds the remaining " + std::to_string(remaining()) + " bytes");
    }
    return static_cast<std::size_t>(count);
  }
  std::size_t remaining() const { return data_.size() - pos_; }
  const std::string& context() const { return context_; }

 private:
  void need(std::size_t n) const {
    if (n > remaining()) {
      throw TruncatedError(context_ + ": unexpected end of data (need " + std::to_string(n) +
                           " bytes, " + std::to_string(remaining()) + " left)");
    }
  }
  std::vector<char> data_;
  std::size_t pos_ = 0;
  std::string context_;
};

}  // namespace dmwm::io
