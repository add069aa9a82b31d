#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace epd {

// Precondition violations use std::invalid_argument directly.

/// Malformed file contents (bad magic, missing column, truncation).
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
  FormatError(const std::string& what, std::uint64_t byte_offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(byte_offset) + ")"),
        byte_offset_(byte_offset) {}

  [[nodiscard]] std::int64_t byte_offset() const noexcept { return byte_offset_; }

 private:
  std::int64_t byte_offset_ = -1;
};

class NotFoundError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A non-finite value showed up in an activation or a loss.
class NumericFailure : public std::runtime_error {
 public:
  NumericFailure(const std::string& what, std::string where)
      : std::runtime_error(what + " in " + where), where_(std::move(where)) {}

  [[nodiscard]] const std::string& where() const noexcept { return where_; }

 private:
  std::string where_;
};

/// Correlation requested over a constant or too-short column.
class UndefinedCorrelation : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace epd
