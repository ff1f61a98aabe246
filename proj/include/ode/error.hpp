#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ode {

/// Failure categories surfaced by every module. Names are stable: they appear
/// in tool observations (error_kind), stage notes and CLI diagnostics.
enum class ErrorKind {
    InvalidArgument,
    IoError,
    // image bank
    EmptyPayload,
    UnsupportedMime,
    BankCapacityExceeded,
    UnknownHandle,
    // tools
    UnknownTool,
    DegenerateRegion,
    UnsupportedAngle,
    ProviderUnavailable,
    EmptyQuery,
    MalformedUrl,
    FetchFailed,
    SandboxUnavailable,
    Timeout,
    ExecutionError,
    DecodeFailure,
    // llm gateway
    CallBudgetExhausted,
    TokenBudgetExhausted,
    BackendFailure,
    ScriptParseError,
    // rollout / judge
    SerializationFailure,
    VerdictParseFailure,
    // config
    PathNotFound,
    TypeMismatch,
    FindNotUnique,
    PostPatchInvalid,
    ConfigInvalid,
    // forward
    ExplorationUnderfilled,
    ImageFloorUnmet,
    DisconnectedGraph,
    EnrichmentFailed,
    EmptyPool,
    // backward
    MissingDimension,
    OutOfRange,
    AnalysisParseFailure,
    OptimizerParseFailure,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

}  // namespace ode
