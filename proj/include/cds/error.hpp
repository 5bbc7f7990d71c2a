#pragma once

#include <stdexcept>
#include <string>

namespace cds {

enum class ErrorCode {
  kInvalidArgument,
  kSeriesTooShort,
  kEmptyInput,
  kShapeMismatch,
  kSingularDesign,
  kDegenerateSeries,
  kInsufficientData,
  kFormatError,
  kEmptyGrid,
  kIoError,
  kNonFiniteUpdate,
};

const char* error_code_name(ErrorCode code);

// Every failure in the library surfaces as this exception; the code lets
// callers branch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code),
        detail_(message) {}

  ErrorCode code() const noexcept { return code_; }
  // Message without the code prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace cds
