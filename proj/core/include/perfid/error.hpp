#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace perfid {

enum class Errc {
  // midi
  MalformedHeader,
  UnsupportedFormat,
  MalformedTrack,
  // align
  EmptyInput,
  ZeroNotes,
  IndexMismatch,
  UnresolvableRow,
  DuplicateMatch,
  MalformedTable,
  // features
  TooFewNotes,
  DegenerateFit,
  UnknownCombination,
  EmptyTrainingSet,
  InvalidSchema,
  // dataset
  InvalidStyleConfig,
  InvalidRegistry,
  // neural
  ShapeMismatch,
  NotScalarLoss,
  BatchTooSmall,
  ZeroLength,
  LabelOutOfRange,
  InvalidConfig,
  BadCheckpoint,
  // experiment
  EmptySplit,
  DivergedLoss,
  SchemaMismatch,
  // io
  Io,
};

std::string_view to_string(Errc code) noexcept;

/// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace perfid
