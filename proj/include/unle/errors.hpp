#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace unle {

enum class ErrorKind {
  unsupported,
  initialization_failure,
  sampler_failure,
  degenerate_bridge,
  training_failure,
  task_unsuitable,
  parse_error,
  io_error,
};

std::string_view to_string(ErrorKind kind);

/// Library failure that is not a plain invalid argument (those throw
/// std::invalid_argument). The kind is machine-readable; the CLI writes it
/// into its error record.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace unle
