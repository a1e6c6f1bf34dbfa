#include "pathm3/error.hpp"

namespace pathm3 {

std::string_view error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorKind::NotScalar: return "NotScalar";
    case ErrorKind::DetachedRoot: return "DetachedRoot";
    case ErrorKind::NonDeterministic: return "NonDeterministic";
    case ErrorKind::InvalidLandmarkCount: return "InvalidLandmarkCount";
    case ErrorKind::ModeTextMismatch: return "ModeTextMismatch";
    case ErrorKind::EmptyTarget: return "EmptyTarget";
    case ErrorKind::TokenOutOfVocab: return "TokenOutOfVocab";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::BadMagic: return "BadMagic";
    case ErrorKind::DimMismatch: return "DimMismatch";
    case ErrorKind::InvalidFractions: return "InvalidFractions";
    case ErrorKind::InvalidSpec: return "InvalidSpec";
    case ErrorKind::MissingGrad: return "MissingGrad";
    case ErrorKind::StepOutOfRange: return "StepOutOfRange";
    case ErrorKind::EmptySplit: return "EmptySplit";
    case ErrorKind::DivergedLoss: return "DivergedLoss";
    case ErrorKind::EmptyReference: return "EmptyReference";
    case ErrorKind::UnknownKey: return "UnknownKey";
    case ErrorKind::TypeError: return "TypeError";
    case ErrorKind::RangeError: return "RangeError";
    case ErrorKind::UnknownSubcommand: return "UnknownSubcommand";
    case ErrorKind::DuplicateName: return "DuplicateName";
  }
  return "Unknown";
}

}  // namespace pathm3
