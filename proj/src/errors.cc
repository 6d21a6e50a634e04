#include "selm/errors.h"

namespace selm {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidValue: return "invalid-value";
    case ErrorCode::kShape: return "shape";
    case ErrorCode::kEmptyLoss: return "empty-loss";
    case ErrorCode::kOutOfVocabulary: return "out-of-vocabulary";
    case ErrorCode::kMissingGraph: return "missing-graph";
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kVocabulary: return "vocabulary";
    case ErrorCode::kContextOverflow: return "context-overflow";
    case ErrorCode::kData: return "data";
    case ErrorCode::kFormat: return "format";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kInput: return "input";
    case ErrorCode::kNumerical: return "numerical";
    case ErrorCode::kUndefinedConditional: return "undefined-conditional";
    case ErrorCode::kMetric: return "metric";
    case ErrorCode::kLeakage: return "leakage";
    case ErrorCode::kCheckpointMismatch: return "checkpoint-mismatch";
  }
  return "unknown";
}

}  // namespace selm
