#pragma once

// Little-endian byte buffer helpers shared by the STSF/STSE/STSC codecs.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "stsae/errors.hpp"

namespace stsae::detail {

static_assert(std::endian::native == std::endian::little,
              "binary formats are little-endian; big-endian hosts need byte swapping");

class ByteWriter {
 public:
  void magic(std::string_view m) { bytes_.insert(bytes_.end(), m.begin(), m.end()); }

  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }

  void zeros(std::size_t n) { bytes_.insert(bytes_.end(), n, '\0'); }

  template <typename T>
  void array(std::span<const T> values) {
    const auto* p = reinterpret_cast<const char*>(values.data());
    bytes_.insert(bytes_.end(), p, p + values.size_bytes());
  }

  void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }

  const std::vector<char>& bytes() const { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class ByteReader {
 public:
  ByteReader(std::vector<char> bytes, std::string path)
      : bytes_(std::move(bytes)), path_(std::move(path)) {}

  std::size_t size() const { return bytes_.size(); }
  std::size_t offset() const { return pos_; }
  const std::string& path() const { return path_; }

  // Throws TruncatedError unless `total` bytes exist in the file.
  void require_total(std::size_t total) const {
    if (bytes_.size() < total) throw TruncatedError(path_, total, bytes_.size());
  }

  void expect_magic(std::string_view m) {
    require_total(pos_ + m.size());
    if (std::string_view(bytes_.data() + pos_, m.size()) != m) {
      throw FormatError(FormatErrc::bad_magic,
                        path_ + ": bad magic, expected \"" + std::string(m) + "\"");
    }
    pos_ += m.size();
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get() {
    require_total(pos_ + sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  void skip(std::size_t n) {
    require_total(pos_ + n);
    pos_ += n;
  }

  template <typename T>
  std::vector<T> array(std::size_t count) {
    require_total(pos_ + count * sizeof(T));
    std::vector<T> out(count);
    std::memcpy(out.data(), bytes_.data() + pos_, count * sizeof(T));
    pos_ += count * sizeof(T);
    return out;
  }

  std::string string(std::size_t n) {
    require_total(pos_ + n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  void expect_end() const {
    if (pos_ != bytes_.size()) {
      throw FormatError(FormatErrc::invalid_header,
                        path_ + ": " + std::to_string(bytes_.size() - pos_) +
                            " trailing bytes after payload");
    }
  }

 private:
  std::vector<char> bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

std::vector<char> read_file(const std::filesystem::path& path);

// Writes to a sibling temp file, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::span<const char> bytes);

}  // namespace stsae::detail
