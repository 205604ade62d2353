#include "hpl/error.hpp"

namespace hpl {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidDimension: return "invalid-dimension";
    case ErrorCode::NoEligibleTrajectory: return "no-eligible-trajectory";
    case ErrorCode::MissingOracleRewards: return "missing-oracle-rewards";
    case ErrorCode::EmptyDataset: return "empty-dataset";
    case ErrorCode::Schema: return "schema";
    case ErrorCode::Io: return "io";
    case ErrorCode::ShapeMismatch: return "shape-mismatch";
    case ErrorCode::EmptySequence: return "empty-sequence";
    case ErrorCode::NonFinite: return "non-finite";
    case ErrorCode::IndexOutOfRange: return "index-out-of-range";
    case ErrorCode::DeltaOutOfRange: return "delta-out-of-range";
    case ErrorCode::KindMismatch: return "kind-mismatch";
    case ErrorCode::MissingVae: return "missing-vae";
    case ErrorCode::ModeMismatch: return "mode-mismatch";
    case ErrorCode::Config: return "config";
  }
  return "unknown";
}

}  // namespace hpl
