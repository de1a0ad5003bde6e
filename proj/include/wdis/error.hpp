#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace wdis {

// Stable error codes. The CLI prints these verbatim, so never renumber or
// rename an existing entry.
enum class ErrorCode {
  kContractViolation,
  kNonFinite,
  kConfigInvalid,
  kConfigUnknownKey,
  kDatasetNotFound,
  kDatasetCorrupt,
  kCheckpointNotFound,
  kCheckpointCorrupt,
  kCheckpointVersion,
  kBackendFailure,
  kTrainingDiverged,
  kIo,
  kUsage,
  kImageCorrupt,
};

std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, const std::string& message) {
  if (!condition) fail(ErrorCode::kContractViolation, message);
}

}  // namespace wdis
