#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ode/llm_gateway.hpp"

namespace ode {

using nlohmann::json;

enum class Mode { sft, rl };
std::string_view to_string(Mode m);
Mode mode_from_string(std::string_view s);

struct RubricDimension {
    std::string name;
    double weight = 1.0;
};

struct RubricSpec {
    Mode mode = Mode::rl;
    std::vector<RubricDimension> dimensions;
    int score_min = -5;
    int score_max = 5;

    double weight_sum() const;
    /// Canonical seven-dimension rubric for a mode.
    static RubricSpec for_mode(Mode mode);
};

inline const std::vector<std::string> kStages = {"seed_proposer", "explorer", "graph_organizer", "curator"};

/// Frozen-for-the-run thresholds of the backward loop.
struct Thresholds {
    double stage_flag = 0.25;
    double too_hard = 0.30;
    double too_easy = 0.30;
    double sft_accept = 3.0;
    double rl_accept = 2.5;
    double regression_delta = 0.5;
    int max_patches_per_round = 5;
    int max_int_step = 2;
    double max_real_relative = 0.25;
    double max_ratio_absolute = 0.1;
};

struct SystemConfig {
    Mode mode = Mode::rl;
    std::string rollout_model = "policy";
    std::string judge_backend = "judge";
    std::string analyzer_backend = "analyzer";
    std::string optimizer_backend = "optimizer";
    /// Backend key per forward role (seed_proposer, seed_gate, explorer, graph_organizer,
    /// reasoning, perception, curator, enhancer); missing roles use the role name.
    std::map<std::string, std::string> stage_backends;
    RubricSpec rubric = RubricSpec::for_mode(Mode::rl);
    std::string tool_environment = "harness";
    std::string seed_type = "entity_with_image";
    std::vector<std::string> domains;
    std::vector<std::string> profiles;
    std::vector<std::string> difficulties;
    BudgetLimits limits;
    DecodeParams decode;
    Thresholds thresholds;
    /// Backend definitions by key, as written in the config file.
    std::map<std::string, BackendSpec> backends;

    std::string backend_for(const std::string& role) const;
    static SystemConfig defaults(Mode mode = Mode::rl);
};

/// Violations as (path, message); empty means valid.
struct Violation {
    std::string path;
    std::string message;
};
std::vector<Violation> validate(const SystemConfig& sys);

SystemConfig system_config_from_json(const json& j, const std::filesystem::path& base_dir = {});
json system_config_to_json(const SystemConfig& sys);
SystemConfig load_system_config(const std::filesystem::path& path);

enum class FieldType { integer, ratio, real, text, weight_map };

struct FieldSpec {
    std::string path;
    FieldType type;
};

/// Every addressable path, in a fixed order. Difficulty weights appear both as the
/// map path and as one real-valued terminal path per key.
const std::vector<FieldSpec>& evolvable_schema();
std::optional<FieldType> field_type(std::string_view path);

/// Stage owning a path (first segment) or "" for optimization_strategy.
std::string stage_of(std::string_view path);

/// The editable four-stage generator configuration. Immutable by convention:
/// patching returns a new value.
class EvolvableConfig {
public:
    EvolvableConfig() = default;
    explicit EvolvableConfig(json doc) : doc_(std::move(doc)) {}

    const json& doc() const { return doc_; }
    /// Throws PathNotFound.
    const json& at(std::string_view path) const;
    bool has(std::string_view path) const;

    int get_int(std::string_view path) const { return at(path).get<int>(); }
    double get_real(std::string_view path) const { return at(path).get<double>(); }
    std::string get_text(std::string_view path) const { return at(path).get<std::string>(); }
    std::map<std::string, double> difficulty_weights() const;

    /// Canonical text: sorted keys, two-space indent, trailing newline.
    std::string serialize() const;
    std::string digest() const;

    friend bool operator==(const EvolvableConfig& a, const EvolvableConfig& b) { return a.doc_ == b.doc_; }

    /// The sample configuration with its numeric fields and prompt texts.
    static EvolvableConfig sample();

private:
    friend EvolvableConfig with_value(const EvolvableConfig& c, std::string_view path, json value);
    json doc_;
};

std::vector<Violation> validate(const EvolvableConfig& config);

EvolvableConfig load_evolvable_config(const std::filesystem::path& path);

enum class PatchAction { update_param, append_text, replace_text, rewrite_text };
std::string_view to_string(PatchAction a);
std::optional<PatchAction> patch_action_from_string(std::string_view s);

struct ConfigPatch {
    PatchAction action = PatchAction::update_param;
    std::string path;
    /// {"new_value"} | {"appended_text"} | {"find", "replace"} | {"new_text"}
    json payload = json::object();
    std::string rationale;

    static ConfigPatch update(std::string path, json value, std::string rationale = {});
    static ConfigPatch append(std::string path, std::string text, std::string rationale = {});
    static ConfigPatch replace(std::string path, std::string find, std::string replace, std::string rationale = {});
    static ConfigPatch rewrite(std::string path, std::string text, std::string rationale = {});

    friend bool operator==(const ConfigPatch&, const ConfigPatch&) = default;
};

json patch_to_json(const ConfigPatch& p);
/// Throws TypeMismatch when the action or payload shape is wrong.
ConfigPatch patch_from_json(const json& j);

/// Pure. Throws PathNotFound, TypeMismatch, FindNotUnique, PostPatchInvalid.
EvolvableConfig apply_patch(const EvolvableConfig& config, const ConfigPatch& patch);
EvolvableConfig apply_patches(EvolvableConfig config, const std::vector<ConfigPatch>& patches);

/// Minimal list turning `a` into `b`: numeric fields as update_param, the difficulty
/// weights as one update_param of the whole map, text fields as rewrite_text.
std::vector<ConfigPatch> diff_configs(const EvolvableConfig& a, const EvolvableConfig& b);

}  // namespace ode
