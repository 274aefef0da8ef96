// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MOEUP_CORE_ERROR_HPP_
#define MOEUP_CORE_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace moeup {

enum class ErrorCode {
  kConfig,
  kIo,
  kDimension,
  kInput,
  kInvalidGate,
  kOracleInvalid,
  kChecksum,
  kLength,
  kTruncated,
  kVersion,
  kSchema,
  kMissingTile,
  kOverlappingTile,
  kReplicaMismatch,
  kVerify,
  kFolding,
  kNumeric,
};

const char* error_code_name(ErrorCode code);

/// The single exception type thrown by the library. The code decides which
/// status the C API reports and therefore which exit code the CLI uses.
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

}  // namespace moeup

#endif  // MOEUP_CORE_ERROR_HPP_
