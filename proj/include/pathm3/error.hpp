#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pathm3 {

enum class ErrorKind {
  ShapeMismatch,
  NonFinite,
  LabelOutOfRange,
  NotScalar,
  DetachedRoot,
  NonDeterministic,
  InvalidLandmarkCount,
  ModeTextMismatch,
  EmptyTarget,
  TokenOutOfVocab,
  IoError,
  BadMagic,
  DimMismatch,
  InvalidFractions,
  InvalidSpec,
  MissingGrad,
  StepOutOfRange,
  EmptySplit,
  DivergedLoss,
  EmptyReference,
  UnknownKey,
  TypeError,
  RangeError,
  UnknownSubcommand,
  DuplicateName,
};

std::string_view error_kind_name(ErrorKind kind);

// Every failure raised by the library carries a kind so callers (and tests)
// can branch on the category without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(error_kind_name(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

}  // namespace pathm3
