#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace stsae {

enum class FormatErrc {
  io,
  bad_magic,
  unsupported_version,
  truncated,
  non_finite,
  invalid_header,
  bad_json,
};

const char* to_string(FormatErrc code) noexcept;

// Raised by every binary reader/writer (STSF, STSE, STSC).
class FormatError : public std::runtime_error {
 public:
  FormatError(FormatErrc code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  FormatErrc code() const noexcept { return code_; }

 private:
  FormatErrc code_;
};

// Truncated payloads carry the byte counts so callers can report them.
class TruncatedError : public FormatError {
 public:
  TruncatedError(const std::string& path, std::size_t expected, std::size_t actual);

  std::size_t expected() const noexcept { return expected_; }
  std::size_t actual() const noexcept { return actual_; }

 private:
  std::size_t expected_;
  std::size_t actual_;
};

// A loss term or gradient went non-finite during optimization.
class NumericError : public std::runtime_error {
 public:
  NumericError(std::string term, const std::string& what)
      : std::runtime_error(what), term_(std::move(term)) {}

  const std::string& term() const noexcept { return term_; }

 private:
  std::string term_;
};

}  // namespace stsae
