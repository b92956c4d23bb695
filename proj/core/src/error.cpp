#include "perfid/error.hpp"

namespace perfid {

std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::MalformedHeader: return "MalformedHeader";
    case Errc::UnsupportedFormat: return "UnsupportedFormat";
    case Errc::MalformedTrack: return "MalformedTrack";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::ZeroNotes: return "ZeroNotes";
    case Errc::IndexMismatch: return "IndexMismatch";
    case Errc::UnresolvableRow: return "UnresolvableRow";
    case Errc::DuplicateMatch: return "DuplicateMatch";
    case Errc::MalformedTable: return "MalformedTable";
    case Errc::TooFewNotes: return "TooFewNotes";
    case Errc::DegenerateFit: return "DegenerateFit";
    case Errc::UnknownCombination: return "UnknownCombination";
    case Errc::EmptyTrainingSet: return "EmptyTrainingSet";
    case Errc::InvalidSchema: return "InvalidSchema";
    case Errc::InvalidStyleConfig: return "InvalidStyleConfig";
    case Errc::InvalidRegistry: return "InvalidRegistry";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::NotScalarLoss: return "NotScalarLoss";
    case Errc::BatchTooSmall: return "BatchTooSmall";
    case Errc::ZeroLength: return "ZeroLength";
    case Errc::LabelOutOfRange: return "LabelOutOfRange";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::BadCheckpoint: return "BadCheckpoint";
    case Errc::EmptySplit: return "EmptySplit";
    case Errc::DivergedLoss: return "DivergedLoss";
    case Errc::SchemaMismatch: return "SchemaMismatch";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace perfid
