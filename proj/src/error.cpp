// SPDX-License-Identifier: Apache-2.0
#include "qsam/error.hpp"

namespace qsam {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedStream: return "MalformedStream";
    case ErrorCode::UnsupportedPrecisionValue: return "UnsupportedPrecisionValue";
    case ErrorCode::NoFrameHeader: return "NoFrameHeader";
    case ErrorCode::UnsupportedComponents: return "UnsupportedComponents";
    case ErrorCode::MismatchedChromaTables: return "MismatchedChromaTables";
    case ErrorCode::MissingTable: return "MissingTable";
    case ErrorCode::QfOutOfRange: return "QfOutOfRange";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::ModeError: return "ModeError";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::EmptyBaseSplit: return "EmptyBaseSplit";
    case ErrorCode::EmptyMetaSplit: return "EmptyMetaSplit";
    case ErrorCode::InsufficientDistinctQsts: return "InsufficientDistinctQsts";
    case ErrorCode::InsufficientSamples: return "InsufficientSamples";
    case ErrorCode::EmptyQfList: return "EmptyQfList";
    case ErrorCode::BadSpec: return "BadSpec";
    case ErrorCode::BadRecordSize: return "BadRecordSize";
    case ErrorCode::BadContainer: return "BadContainer";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace qsam
