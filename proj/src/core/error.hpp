// Copyright 2026 The cmcl Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace cmcl {

// Values are part of the C ABI (see include/cmcl/cmcl.h); append only.
enum class ErrorCode : int {
  kInvalidArgument = 1,
  kDimensionMismatch = 2,
  kZeroNormVector = 3,
  kEmptySequence = 4,
  kBatchTooSmall = 5,
  kIndexOutOfRange = 6,
  kLabelOutOfRange = 7,
  kGraphBatchMismatch = 8,
  kStaleCache = 9,
  kInvalidSpec = 10,
  kInvalidConfig = 11,
  kParseError = 12,
  kEmptyDataset = 13,
  kIoError = 14,
  kOracleUnavailable = 15,
  kDivergenceDetected = 16,
  kGradientCheckFailed = 17,
  kInternal = 18,
};

const char* error_code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace cmcl
