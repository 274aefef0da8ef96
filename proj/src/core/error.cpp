// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#include "moeup/core/error.hpp"

namespace moeup {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kDimension: return "dimension";
    case ErrorCode::kInput: return "input";
    case ErrorCode::kInvalidGate: return "invalid-gate";
    case ErrorCode::kOracleInvalid: return "oracle-invalid";
    case ErrorCode::kChecksum: return "checksum";
    case ErrorCode::kLength: return "length";
    case ErrorCode::kTruncated: return "truncated";
    case ErrorCode::kVersion: return "version";
    case ErrorCode::kSchema: return "schema";
    case ErrorCode::kMissingTile: return "missing-tile";
    case ErrorCode::kOverlappingTile: return "overlapping-tile";
    case ErrorCode::kReplicaMismatch: return "replica-mismatch";
    case ErrorCode::kVerify: return "verify";
    case ErrorCode::kFolding: return "folding";
    case ErrorCode::kNumeric: return "numeric";
  }
  return "unknown";
}

}  // namespace moeup
