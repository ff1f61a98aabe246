#pragma once

#include <array>
#include <cstddef>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ode/image_bank.hpp"
#include "ode/providers.hpp"
#include "ode/raster.hpp"
#include "ode/sandbox.hpp"

namespace ode {

using nlohmann::json;

enum class ToolName {
    web_search,
    image_search,
    scholar_search,
    visit,
    visual_search,
    zoom_in,
    rotation,
    flip,
    python_code,
};

inline constexpr std::array<ToolName, 9> kAllTools = {
    ToolName::web_search, ToolName::image_search, ToolName::scholar_search, ToolName::visit,  ToolName::visual_search,
    ToolName::zoom_in,    ToolName::rotation,     ToolName::flip,           ToolName::python_code,
};

std::string_view to_string(ToolName name);
/// Canonical name for `name`, accepting the aliases web_fetch and link_reader (both visit).
std::optional<ToolName> normalize_tool_name(std::string_view name);

struct ToolCall {
    std::string name;
    json args = json::object();
    std::string call_id;
};

enum class ToolStatus { ok, error };

struct ToolResult {
    std::string call_id;
    ToolStatus status = ToolStatus::ok;
    std::string text;
    std::vector<ImageHandle> new_handles;
    std::optional<std::string> error_kind;
};

struct ToolCaps {
    std::size_t max_text_results = 10;
    std::size_t max_images = 4;
    std::size_t observation_cap = 4000;
    double code_timeout_s = 10.0;
};

inline constexpr std::string_view kTruncationMarker = "\n[... truncated]";

/// Everything a tool call may touch besides the bank. Shared across trajectories.
struct ToolEnv {
    std::shared_ptr<SearchProvider> provider;
    std::shared_ptr<SandboxClient> sandbox;
    ToolCaps caps;
};

/// Where a call runs: the turn stamped on new images, and how many bank
/// records the caller may reference (handles registered later in the same
/// turn are not yet visible to the model).
struct CallSite {
    int turn = 0;
    std::size_t visible = std::numeric_limits<std::size_t>::max();
};

/// Routes a call to its tool. Unknown tool names throw Error(UnknownTool);
/// every other failure is returned as status=error with error_kind set.
ToolResult dispatch(const ToolCall& call, ImageBank& bank, const ToolEnv& env, CallSite site = {});

// Individual tools. They throw Error on failure; dispatch turns that into an observation.

ToolResult transform_zoom(const ToolCall& call, ImageHandle handle, CropBox box, ImageBank& bank, CallSite site);
ToolResult transform_rotate(const ToolCall& call, ImageHandle handle, int degrees, ImageBank& bank, CallSite site);
ToolResult transform_flip(const ToolCall& call, ImageHandle handle, FlipAxis axis, ImageBank& bank, CallSite site);
ToolResult text_search(ToolName kind, const std::string& call_id, const std::string& query, const ToolEnv& env);
ToolResult image_query(ToolName kind, const ToolCall& call, const ImageQueryInput& input, ImageBank& bank,
                       const ToolEnv& env, CallSite site);
ToolResult visit(const std::string& call_id, const std::string& url, const ToolEnv& env);
ToolResult run_code(const std::string& call_id, const std::string& source, const ToolEnv& env);

/// Truncates to at most `cap` bytes on a UTF-8 boundary and appends kTruncationMarker when cut.
std::string cap_observation(std::string text, std::size_t cap);

/// Short human-readable list of the nine tools and their argument shapes, for prompts.
std::string tool_catalog();

}  // namespace ode
