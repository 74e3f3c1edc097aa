#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace resnet {

enum class ErrorKind {
  kShape,    // incompatible or invalid shapes
  kValue,    // argument outside its domain
  kFormat,   // corrupt or truncated file contents
  kIo,       // missing files, unreadable paths
  kNumeric,  // NaN / Inf encountered
  kConfig,   // invalid configuration
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace resnet
