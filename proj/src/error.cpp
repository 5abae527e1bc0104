#include "cus3d/error.hpp"

namespace cus3d {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "invalid_argument";
    case ErrorKind::Io: return "io";
    case ErrorKind::Format: return "format";
    case ErrorKind::Validation: return "validation";
    case ErrorKind::Numeric: return "numeric";
  }
  return "unknown";
}

namespace {
std::string compose(const std::string& message, const std::string& field) {
  return field.empty() ? message : field + ": " + message;
}
}  // namespace

Error::Error(ErrorKind kind, std::string message, std::string field)
    : std::runtime_error(compose(message, field)), kind_(kind), field_(std::move(field)) {}

}  // namespace cus3d
