#pragma once

#include <stdexcept>
#include <string>

namespace dssc {

// Error categories. These map one-to-one onto the dssc_status codes of the
// public C API, so keep the two lists in sync.
enum class ErrorCode {
  invalid_argument,
  shape_mismatch,
  io,
  format,
  not_found,
  config,
  numeric,
  unsupported,
  internal,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& msg)
      : std::runtime_error(msg), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace dssc
