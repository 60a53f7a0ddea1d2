// Copyright 2026 The cmvp Authors
// SPDX-License-Identifier: Apache-2.0

#include "cmvp/error.hpp"

#include <fstream>
#include <iterator>

#include "byte_io.hpp"

namespace cmvp {

const char* error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kOk: return "Ok";
    case ErrorCode::kInvalidMatrix: return "InvalidMatrix";
    case ErrorCode::kNumericalFailure: return "NumericalFailure";
    case ErrorCode::kInvalidTruncation: return "InvalidTruncation";
    case ErrorCode::kNotOrthonormal: return "NotOrthonormal";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kInvalidPartition: return "InvalidPartition";
    case ErrorCode::kEmptyClass: return "EmptyClass";
    case ErrorCode::kInconsistentMessages: return "InconsistentMessages";
    case ErrorCode::kCorruptMessage: return "CorruptMessage";
    case ErrorCode::kCoverageInfeasible: return "CoverageInfeasible";
    case ErrorCode::kInvalidCount: return "InvalidCount";
    case ErrorCode::kConfigError: return "ConfigError";
    case ErrorCode::kMetricUnavailable: return "MetricUnavailable";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

namespace detail {

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIoError, "cannot open " + path + " for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) fail(ErrorCode::kIoError, "read error on " + path);
  return bytes;
}

void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIoError, "cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::kIoError, "write error on " + path);
}

}  // namespace detail
}  // namespace cmvp
