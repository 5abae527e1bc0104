#pragma once

#include <stdexcept>
#include <string>

namespace cus3d {

enum class ErrorKind {
  InvalidArgument,
  Io,
  Format,      // manifest/blob shape or encoding problems
  Validation,  // type invariant violated
  Numeric,     // zero norm, non-finite activation, divergence
};

const char* to_string(ErrorKind kind);

// All fallible operations in the core throw this. `field` names the offending
// bundle field or argument when there is one.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string message, std::string field = {});

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& field() const noexcept { return field_; }

 private:
  ErrorKind kind_;
  std::string field_;
};

}  // namespace cus3d
