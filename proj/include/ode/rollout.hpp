#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ode/image_bank.hpp"
#include "ode/llm_gateway.hpp"
#include "ode/tools.hpp"

namespace ode {

using nlohmann::json;

struct PlannedStep {
    std::string kind;
    std::string description;
    friend bool operator==(const PlannedStep&, const PlannedStep&) = default;
};

struct TaskAnnotations {
    std::string domain;
    std::string profile;     // perception_only | perception_search | perception_reasoning | perception_search_reasoning
    std::string difficulty;  // easy | medium | hard | expert
    std::vector<PlannedStep> planned_steps;
    friend bool operator==(const TaskAnnotations&, const TaskAnnotations&) = default;
};

struct TaskImage {
    std::string mime;
    std::shared_ptr<const Bytes> payload;
};

/// A task carries its own images; images[k] becomes <image:k> in the rollout bank.
struct Task {
    std::string id;
    std::string question;
    std::vector<ImageHandle> initial_handles;
    std::string reference_answer;
    TaskAnnotations annotations;
    std::vector<TaskImage> images;
};

inline const std::vector<std::string> kProfiles = {"perception_only", "perception_search", "perception_reasoning",
                                                   "perception_search_reasoning"};
inline const std::vector<std::string> kDifficulties = {"easy", "medium", "hard", "expert"};

/// Throws InvalidArgument when the question or answer is empty or a handle has no image.
void validate_task(const Task& task);

/// Fresh bank holding the task images as <image:0>..<image:k-1>.
ImageBank make_task_bank(const Task& task, BankOptions options = {});

/// Images are written under `image_dir/<digest>` when given and referenced by digest.
json task_to_json(const Task& task, const std::optional<std::filesystem::path>& image_dir = {});
/// Image entries are {"mime", "digest"} (read from image_dir) or {"mime", "path"} relative to base_dir.
Task task_from_json(const json& j, const std::filesystem::path& image_dir, const std::filesystem::path& base_dir = {});
Task load_task(const std::filesystem::path& path);

struct Turn {
    std::string assistant_text;
    std::vector<ToolCall> actions;
    std::vector<ToolResult> results;
    int tokens_charged = 0;
    std::vector<std::string> parse_notes;
};

enum class StopReason { answered, call_budget, token_budget, backend_failure, script_exhausted };
std::string_view to_string(StopReason reason);
StopReason stop_reason_from_string(std::string_view s);

struct RolloutLimits {
    BudgetLimits budget;
    DecodeParams decode;
    BankOptions bank;
};

struct Trace {
    std::string task_id;
    Task task;
    RolloutLimits limits;
    std::vector<Turn> turns;
    ImageBank bank;
    std::optional<std::string> final_answer;
    StopReason stop_reason = StopReason::backend_failure;
    BudgetState budget;
};

struct FencedBlock {
    std::string tag;
    std::string body;
};

/// Every ```tag ... ``` block in order. An unterminated fence ends the scan.
std::vector<FencedBlock> fenced_blocks(std::string_view text, std::vector<std::string>* notes = nullptr);

struct ParsedActions {
    std::vector<ToolCall> actions;
    std::optional<std::string> final_answer;
    std::vector<std::string> notes;
};

/// Action envelope: ```tool blocks hold {"name": ..., "args": {...}}, one ```final block holds
/// the answer. Malformed blocks are skipped with a note. call_id is left empty.
ParsedActions parse_actions(std::string_view assistant_text);

struct RolloutOptions {
    /// Replaces the default harness system prompt.
    std::optional<std::string> system_prompt;
    /// Starting bank; defaults to make_task_bank(task).
    std::optional<ImageBank> bank;
    /// Prefix for call ids, so stage agents can share one bank without collisions.
    std::string call_prefix = "call";
};

std::string default_system_prompt();

/// Multi-turn loop: complete, parse, dispatch in order, observe. Never throws for
/// budget or backend failures; they end the trace with the matching stop reason.
Trace run_rollout(const Task& task, ChatBackend& policy, const ToolEnv& env, const RolloutLimits& limits,
                  RolloutOptions options = {});

json tool_call_to_json(const ToolCall& c);
ToolCall tool_call_from_json(const json& j);
json tool_result_to_json(const ToolResult& r);
ToolResult tool_result_from_json(const json& j);

/// Line-delimited trace: header, one line per turn, bank, footer. Deterministic.
std::string serialize_trace(const Trace& trace);
Trace deserialize_trace(std::string_view text, const std::filesystem::path& image_dir);

/// Writes `path` plus every image payload to `path.parent_path()/images/<digest>`.
void finalize_trace(const Trace& trace, const std::filesystem::path& path);
Trace read_trace(const std::filesystem::path& path);

}  // namespace ode
