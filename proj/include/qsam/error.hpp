// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace qsam {

enum class ErrorCode {
  MalformedStream,
  UnsupportedPrecisionValue,
  NoFrameHeader,
  UnsupportedComponents,
  MismatchedChromaTables,
  MissingTable,
  QfOutOfRange,
  ShapeMismatch,
  ModeError,
  IndexOutOfRange,
  EmptyBaseSplit,
  EmptyMetaSplit,
  InsufficientDistinctQsts,
  InsufficientSamples,
  EmptyQfList,
  BadSpec,
  BadRecordSize,
  BadContainer,
  IoError,
  InvalidArgument,
};

std::string_view to_string(ErrorCode code);

// All library failures surface as qsam::Error; code() identifies the
// contract violation so callers (the CLI in particular) can map it.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& what);

}  // namespace qsam
