#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace densedet {

enum class ErrorCode {
  kUsage,
  kInvalidConfig,
  kUnknownTrack,
  kEmptyInput,
  kShapeMismatch,
  kIo,
  kNanLoss,
  kNonFinite,
};

std::string_view to_string(ErrorCode code);

/// Coarse failure classes; the values are the CLI exit codes.
enum class ErrorClass { kUsage = 1, kData = 2, kNumeric = 3 };

ErrorClass classify(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace densedet
