#include "chartnet/error.hpp"

namespace chartnet {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InfeasibleConstraints: return "InfeasibleConstraints";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::TemplateInapplicable: return "TemplateInapplicable";
    case ErrorCode::UnansweredComposite: return "UnansweredComposite";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::MissingImage: return "MissingImage";
    case ErrorCode::CorruptManifest: return "CorruptManifest";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::EmptyQuestion: return "EmptyQuestion";
    case ErrorCode::KindMismatch: return "KindMismatch";
    case ErrorCode::DegenerateBox: return "DegenerateBox";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::VocabMismatch: return "VocabMismatch";
    case ErrorCode::PreconditionViolation: return "PreconditionViolation";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

}  // namespace chartnet
