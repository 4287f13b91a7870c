#pragma once

#include <stdexcept>
#include <string>

namespace sohtl {

// Broad failure classes. The C API and the CLI map these onto status codes.
enum class ErrorKind {
  contract,  // caller violated a precondition
  config,    // invalid or unreadable configuration
  data,      // missing/corrupt dataset files, IO failures, split problems
  numeric,   // non-finite values, divergence
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ContractError : Error {
  explicit ContractError(const std::string& what) : Error(ErrorKind::contract, what) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};
struct DataError : Error {
  explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};

}  // namespace sohtl
