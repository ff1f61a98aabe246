#include "ode/error.hpp"

namespace ode {

std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InvalidArgument: return "InvalidArgument";
        case ErrorKind::IoError: return "IoError";
        case ErrorKind::EmptyPayload: return "EmptyPayload";
        case ErrorKind::UnsupportedMime: return "UnsupportedMime";
        case ErrorKind::BankCapacityExceeded: return "BankCapacityExceeded";
        case ErrorKind::UnknownHandle: return "UnknownHandle";
        case ErrorKind::UnknownTool: return "UnknownTool";
        case ErrorKind::DegenerateRegion: return "DegenerateRegion";
        case ErrorKind::UnsupportedAngle: return "UnsupportedAngle";
        case ErrorKind::ProviderUnavailable: return "ProviderUnavailable";
        case ErrorKind::EmptyQuery: return "EmptyQuery";
        case ErrorKind::MalformedUrl: return "MalformedUrl";
        case ErrorKind::FetchFailed: return "FetchFailed";
        case ErrorKind::SandboxUnavailable: return "SandboxUnavailable";
        case ErrorKind::Timeout: return "Timeout";
        case ErrorKind::ExecutionError: return "ExecutionError";
        case ErrorKind::DecodeFailure: return "DecodeFailure";
        case ErrorKind::CallBudgetExhausted: return "CallBudgetExhausted";
        case ErrorKind::TokenBudgetExhausted: return "TokenBudgetExhausted";
        case ErrorKind::BackendFailure: return "BackendFailure";
        case ErrorKind::ScriptParseError: return "ScriptParseError";
        case ErrorKind::SerializationFailure: return "SerializationFailure";
        case ErrorKind::VerdictParseFailure: return "VerdictParseFailure";
        case ErrorKind::PathNotFound: return "PathNotFound";
        case ErrorKind::TypeMismatch: return "TypeMismatch";
        case ErrorKind::FindNotUnique: return "FindNotUnique";
        case ErrorKind::PostPatchInvalid: return "PostPatchInvalid";
        case ErrorKind::ConfigInvalid: return "ConfigInvalid";
        case ErrorKind::ExplorationUnderfilled: return "ExplorationUnderfilled";
        case ErrorKind::ImageFloorUnmet: return "ImageFloorUnmet";
        case ErrorKind::DisconnectedGraph: return "DisconnectedGraph";
        case ErrorKind::EnrichmentFailed: return "EnrichmentFailed";
        case ErrorKind::EmptyPool: return "EmptyPool";
        case ErrorKind::MissingDimension: return "MissingDimension";
        case ErrorKind::OutOfRange: return "OutOfRange";
        case ErrorKind::AnalysisParseFailure: return "AnalysisParseFailure";
        case ErrorKind::OptimizerParseFailure: return "OptimizerParseFailure";
    }
    return "Unknown";
}

}  // namespace ode
