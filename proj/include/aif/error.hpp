#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace aif {

enum class ErrorCode {
  AllNegInf,
  DimMismatch,
  InvalidJoint,
  InvalidDistribution,
  NonPositiveArg,
  IndexOutOfRange,
  TooLarge,
  ModelContradiction,
  HorizonExhausted,
  NoFuture,
  EmptyPolicySet,
  NotFullyObserved,
  EmptyTrainingSet,
  BadParams,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::AllNegInf: return "AllNegInf";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::InvalidJoint: return "InvalidJoint";
    case ErrorCode::InvalidDistribution: return "InvalidDistribution";
    case ErrorCode::NonPositiveArg: return "NonPositiveArg";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::TooLarge: return "TooLarge";
    case ErrorCode::ModelContradiction: return "ModelContradiction";
    case ErrorCode::HorizonExhausted: return "HorizonExhausted";
    case ErrorCode::NoFuture: return "NoFuture";
    case ErrorCode::EmptyPolicySet: return "EmptyPolicySet";
    case ErrorCode::NotFullyObserved: return "NotFullyObserved";
    case ErrorCode::EmptyTrainingSet: return "EmptyTrainingSet";
    case ErrorCode::BadParams: return "BadParams";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so the
/// CLI can map it onto a stable exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace aif
