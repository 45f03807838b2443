#pragma once

#include <stdexcept>
#include <string>

namespace obf {

// Exception families map onto the CLI exit codes: ConfigError -> 1,
// DataError -> 2, NumericError -> 3.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace obf
