// Copyright 2026 The cmvp Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef CMVP_ERROR_HPP
#define CMVP_ERROR_HPP

#include <stdexcept>
#include <string>

namespace cmvp {

// Values are part of the C ABI (see cmvp.h); append only.
enum class ErrorCode : int {
  kOk = 0,
  kInvalidMatrix = 1,
  kNumericalFailure = 2,
  kInvalidTruncation = 3,
  kNotOrthonormal = 4,
  kDimensionMismatch = 5,
  kInvalidPartition = 6,
  kEmptyClass = 7,
  kInconsistentMessages = 8,
  kCorruptMessage = 9,
  kCoverageInfeasible = 10,
  kInvalidCount = 11,
  kConfigError = 12,
  kMetricUnavailable = 13,
  kIoError = 14,
  kInvalidArgument = 15,
};

const char* error_code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool condition, ErrorCode code, const char* what) {
  if (!condition) fail(code, what);
}

}  // namespace cmvp

#endif  // CMVP_ERROR_HPP
