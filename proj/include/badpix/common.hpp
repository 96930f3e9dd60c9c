#pragma once

#include <stdexcept>
#include <string>

namespace badpix {

// Error taxonomy. The CLI maps these onto exit codes:
//   ConfigError -> 2, DataError -> 3, NumericError -> 4.

/// Fine-grained classification for data-level failures, so callers can
/// distinguish e.g. a malformed file header from a size mismatch.
enum class DataFault {
  malformed_header,
  dimension_mismatch,
  odd_dimensions,
  out_of_bounds,
  bad_value,
  io_failure,
  missing_model,
  empty_input,
};

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

class DataError : public std::runtime_error {
 public:
  DataError(DataFault fault, const std::string& what)
      : std::runtime_error(what), fault_(fault) {}
  DataFault fault() const { return fault_; }

 private:
  DataFault fault_;
};

class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

}  // namespace badpix
