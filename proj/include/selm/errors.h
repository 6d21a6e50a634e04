#ifndef SELM_ERRORS_H_
#define SELM_ERRORS_H_

#include <cstdint>
#include <stdexcept>
#include <string>

namespace selm {

enum class ErrorCode {
  kInvalidValue,
  kShape,
  kEmptyLoss,
  kOutOfVocabulary,
  kMissingGraph,
  kConfig,
  kVocabulary,
  kContextOverflow,
  kData,
  kFormat,
  kIo,
  kInput,
  kNumerical,
  kUndefinedConditional,
  kMetric,
  kLeakage,
  kCheckpointMismatch,
};

const char* error_code_name(ErrorCode code);

// Every failure raised by the library derives from Error; the code names the
// failure class and is what the CLI prints before the message.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

template <ErrorCode C>
class TypedError : public Error {
 public:
  explicit TypedError(const std::string& message) : Error(C, message) {}
};

using InvalidValueError = TypedError<ErrorCode::kInvalidValue>;
using ShapeError = TypedError<ErrorCode::kShape>;
using EmptyLossError = TypedError<ErrorCode::kEmptyLoss>;
using OutOfVocabularyError = TypedError<ErrorCode::kOutOfVocabulary>;
using MissingGraphError = TypedError<ErrorCode::kMissingGraph>;
using ConfigError = TypedError<ErrorCode::kConfig>;
using VocabularyError = TypedError<ErrorCode::kVocabulary>;
using ContextOverflowError = TypedError<ErrorCode::kContextOverflow>;
using DataError = TypedError<ErrorCode::kData>;
using IoError = TypedError<ErrorCode::kIo>;
using InputError = TypedError<ErrorCode::kInput>;
using NumericalError = TypedError<ErrorCode::kNumerical>;
using UndefinedConditionalError = TypedError<ErrorCode::kUndefinedConditional>;
using MetricError = TypedError<ErrorCode::kMetric>;
using LeakageError = TypedError<ErrorCode::kLeakage>;
using CheckpointMismatchError = TypedError<ErrorCode::kCheckpointMismatch>;

// Malformed binary input. Carries the byte offset where decoding failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& message, std::uint64_t offset)
      : Error(ErrorCode::kFormat,
              message + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace selm

#endif  // SELM_ERRORS_H_
