#include "ode/ode_config.hpp"

#include <cmath>
#include <set>

#include "ode/digest.hpp"
#include "ode/error.hpp"

namespace ode {

std::string_view to_string(Mode m) { return m == Mode::sft ? "sft" : "rl"; }

Mode mode_from_string(std::string_view s) {
    if (s == "sft") return Mode::sft;
    if (s == "rl") return Mode::rl;
    throw Error(ErrorKind::ConfigInvalid, "mode must be sft or rl, got '" + std::string(s) + "'");
}

double RubricSpec::weight_sum() const {
    double s = 0;
    for (const auto& d : dimensions) s += d.weight;
    return s;
}

RubricSpec RubricSpec::for_mode(Mode mode) {
    RubricSpec r;
    r.mode = mode;
    if (mode == Mode::rl) {
        r.dimensions = {{"Information_Complexity", 1.0}, {"Visual_Dependency", 1.2},      {"Shortcut_Leakage", 1.2},
                        {"Verifiability", 1.0},          {"Capability_Requirement", 1.0}, {"Difficulty_Match", 2.0},
                        {"Learning_Utility", 1.6}};
    } else {
        r.dimensions = {{"Information_Complexity", 1.0}, {"Visual_Dependency", 1.2},    {"Shortcut_Leakage", 1.5},
                        {"Verifiability", 1.0},          {"Step_Appropriateness", 1.2}, {"Tool_Usage_Quality", 1.5},
                        {"Tool_Pattern_Diversity", 3.0}};
    }
    return r;
}

std::string SystemConfig::backend_for(const std::string& role) const {
    if (auto it = stage_backends.find(role); it != stage_backends.end()) return it->second;
    return role;
}

SystemConfig SystemConfig::defaults(Mode mode) {
    SystemConfig s;
    s.mode = mode;
    s.rubric = RubricSpec::for_mode(mode);
    // Topical labels are deployment data; this list is only a placeholder.
    s.domains = {"geography", "history",   "science",  "technology", "arts",         "culture",
                 "sports",    "economics", "politics", "nature",     "entertainment"};
    s.profiles = {"perception_only", "perception_search", "perception_reasoning", "perception_search_reasoning"};
    s.difficulties = {"easy", "medium", "hard", "expert"};
    return s;
}

std::vector<Violation> validate(const SystemConfig& sys) {
    std::vector<Violation> v;
    if (sys.domains.size() != 11) v.push_back({"sampling_axes.domains", "expected 11 domain labels"});
    if (sys.profiles.size() != 4) v.push_back({"sampling_axes.profiles", "expected 4 ability profiles"});
    if (sys.difficulties != std::vector<std::string>{"easy", "medium", "hard", "expert"}) {
        v.push_back({"sampling_axes.difficulties", "expected easy, medium, hard, expert"});
    }
    auto canon = RubricSpec::for_mode(sys.mode);
    bool rubric_ok = sys.rubric.mode == sys.mode && sys.rubric.dimensions.size() == canon.dimensions.size();
    for (std::size_t i = 0; rubric_ok && i < canon.dimensions.size(); ++i) {
        rubric_ok = sys.rubric.dimensions[i].name == canon.dimensions[i].name &&
                    std::abs(sys.rubric.dimensions[i].weight - canon.dimensions[i].weight) < 1e-12;
    }
    if (!rubric_ok) v.push_back({"rubric", "rubric does not match the " + std::string(to_string(sys.mode)) + " rubric"});
    if (sys.limits.max_calls < 1) v.push_back({"limits.max_calls", "must be >= 1"});
    if (sys.limits.per_turn_tokens < 1) v.push_back({"limits.per_turn_tokens", "must be >= 1"});
    if (sys.limits.total_tokens < 1) v.push_back({"limits.total_tokens", "must be >= 1"});
    try {
        sys.decode.validate();
    } catch (const Error& e) {
        v.push_back({"decode", e.what()});
    }
    const auto& t = sys.thresholds;
    auto share = [&](double x, const char* path) {
        if (!(x >= 0.0 && x <= 1.0)) v.push_back({path, "must be in [0, 1]"});
    };
    share(t.stage_flag, "thresholds.stage_flag");
    share(t.too_hard, "thresholds.too_hard");
    share(t.too_easy, "thresholds.too_easy");
    if (t.max_patches_per_round < 0) v.push_back({"thresholds.max_patches_per_round", "must be >= 0"});
    if (t.regression_delta < 0) v.push_back({"thresholds.regression_delta", "must be >= 0"});
    for (const auto& [key, spec] : sys.backends) {
        if (spec.type != "scripted" && spec.type != "openai") {
            v.push_back({"backends." + key + ".type", "must be scripted or openai"});
        }
    }
    return v;
}

SystemConfig system_config_from_json(const json& j, const std::filesystem::path& base_dir) {
    if (!j.is_object()) throw Error(ErrorKind::ConfigInvalid, "system config must be an object");
    try {
        SystemConfig s = SystemConfig::defaults(mode_from_string(j.value("mode", "rl")));
        s.rollout_model = j.value("rollout_model", s.rollout_model);
        s.judge_backend = j.value("judge", s.judge_backend);
        s.analyzer_backend = j.value("analyzer", s.analyzer_backend);
        s.optimizer_backend = j.value("optimizer", s.optimizer_backend);
        if (j.contains("stage_backends")) s.stage_backends = j["stage_backends"].get<std::map<std::string, std::string>>();
        if (j.contains("rubric")) {
            const auto& r = j["rubric"];
            s.rubric.mode = mode_from_string(r.value("mode", std::string(to_string(s.mode))));
            s.rubric.dimensions.clear();
            for (const auto& d : r.at("dimensions")) {
                s.rubric.dimensions.push_back({d.at("name").get<std::string>(), d.at("weight").get<double>()});
            }
        }
        s.tool_environment = j.value("tool_environment", s.tool_environment);
        s.seed_type = j.value("seed_type", s.seed_type);
        if (j.contains("sampling_axes")) {
            const auto& a = j["sampling_axes"];
            s.domains = a.value("domains", s.domains);
            s.profiles = a.value("profiles", s.profiles);
            s.difficulties = a.value("difficulties", s.difficulties);
        }
        if (j.contains("limits")) {
            const auto& l = j["limits"];
            s.limits.max_calls = l.value("max_calls", s.limits.max_calls);
            s.limits.per_turn_tokens = l.value("per_turn_tokens", s.limits.per_turn_tokens);
            s.limits.total_tokens = l.value("total_tokens", s.limits.total_tokens);
        }
        if (j.contains("decode")) {
            const auto& d = j["decode"];
            s.decode.temperature = d.value("temperature", s.decode.temperature);
            s.decode.top_p = d.value("top_p", s.decode.top_p);
            s.decode.max_turn_tokens = d.value("max_turn_tokens", s.decode.max_turn_tokens);
        }
        if (j.contains("thresholds")) {
            const auto& t = j["thresholds"];
            auto& o = s.thresholds;
            o.stage_flag = t.value("stage_flag", o.stage_flag);
            o.too_hard = t.value("too_hard", o.too_hard);
            o.too_easy = t.value("too_easy", o.too_easy);
            o.sft_accept = t.value("sft_accept", o.sft_accept);
            o.rl_accept = t.value("rl_accept", o.rl_accept);
            o.regression_delta = t.value("regression_delta", o.regression_delta);
            o.max_patches_per_round = t.value("max_patches_per_round", o.max_patches_per_round);
            o.max_int_step = t.value("max_int_step", o.max_int_step);
            o.max_real_relative = t.value("max_real_relative", o.max_real_relative);
            o.max_ratio_absolute = t.value("max_ratio_absolute", o.max_ratio_absolute);
        }
        if (j.contains("backends")) {
            for (const auto& [key, b] : j["backends"].items()) {
                BackendSpec spec;
                spec.type = b.at("type").get<std::string>();
                if (b.contains("path")) {
                    std::filesystem::path p = b["path"].get<std::string>();
                    spec.path = p.is_absolute() ? p : base_dir / p;
                }
                spec.base_url = b.value("base_url", "");
                spec.model = b.value("model", "");
                spec.api_key_env = b.value("api_key_env", "");
                s.backends[key] = std::move(spec);
            }
        }
        return s;
    } catch (const json::exception& e) {
        throw Error(ErrorKind::ConfigInvalid, std::string("system config: ") + e.what());
    }
}

json system_config_to_json(const SystemConfig& s) {
    json dims = json::array();
    for (const auto& d : s.rubric.dimensions) dims.push_back({{"name", d.name}, {"weight", d.weight}});
    json backends = json::object();
    for (const auto& [key, b] : s.backends) {
        backends[key] = {{"type", b.type},
                         {"path", b.path.string()},
                         {"base_url", b.base_url},
                         {"model", b.model},
                         {"api_key_env", b.api_key_env}};
    }
    const auto& t = s.thresholds;
    return {{"mode", to_string(s.mode)},
            {"rollout_model", s.rollout_model},
            {"judge", s.judge_backend},
            {"analyzer", s.analyzer_backend},
            {"optimizer", s.optimizer_backend},
            {"stage_backends", s.stage_backends},
            {"rubric", {{"mode", to_string(s.rubric.mode)}, {"dimensions", dims}}},
            {"tool_environment", s.tool_environment},
            {"seed_type", s.seed_type},
            {"sampling_axes", {{"domains", s.domains}, {"profiles", s.profiles}, {"difficulties", s.difficulties}}},
            {"limits",
             {{"max_calls", s.limits.max_calls},
              {"per_turn_tokens", s.limits.per_turn_tokens},
              {"total_tokens", s.limits.total_tokens}}},
            {"decode",
             {{"temperature", s.decode.temperature},
              {"top_p", s.decode.top_p},
              {"max_turn_tokens", s.decode.max_turn_tokens}}},
            {"thresholds",
             {{"stage_flag", t.stage_flag},
              {"too_hard", t.too_hard},
              {"too_easy", t.too_easy},
              {"sft_accept", t.sft_accept},
              {"rl_accept", t.rl_accept},
              {"regression_delta", t.regression_delta},
              {"max_patches_per_round", t.max_patches_per_round},
              {"max_int_step", t.max_int_step},
              {"max_real_relative", t.max_real_relative},
              {"max_ratio_absolute", t.max_ratio_absolute}}},
            {"backends", backends}};
}

namespace {

json parse_config_file(const std::filesystem::path& path) {
    std::string text;
    try {
        text = read_file_text(path);
    } catch (const Error& e) {
        throw Error(ErrorKind::ConfigInvalid, e.what());
    }
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw Error(ErrorKind::ConfigInvalid, path.string() + " is not valid JSON");
    return j;
}

}  // namespace

SystemConfig load_system_config(const std::filesystem::path& path) {
    return system_config_from_json(parse_config_file(path), path.parent_path());
}

// ---------------------------------------------------------------------------
// evolvable config

const std::vector<FieldSpec>& evolvable_schema() {
    static const std::vector<FieldSpec> schema = {
        {"seed_proposer.max_steps", FieldType::integer},
        {"seed_proposer.strategy", FieldType::text},
        {"seed_proposer.default_requirement", FieldType::text},
        {"seed_proposer.seed_prompt", FieldType::text},
        {"explorer.max_steps", FieldType::integer},
        {"explorer.params.number_of_anchors", FieldType::integer},
        {"explorer.params.max_nodes_per_phase", FieldType::integer},
        {"explorer.params.image_ratio", FieldType::ratio},
        {"explorer.strategy", FieldType::text},
        {"explorer.quality_requirements", FieldType::text},
        {"explorer.exploration_process_prompt", FieldType::text},
        {"graph_organizer.organization_strategy", FieldType::text},
        {"graph_organizer.complexity.reasoning_ratio", FieldType::ratio},
        {"graph_organizer.complexity.perception_ratio", FieldType::ratio},
        {"graph_organizer.complexity.reasoning_max_steps", FieldType::integer},
        {"graph_organizer.complexity.perception_max_steps", FieldType::integer},
        {"graph_organizer.complexity.reasoning_strategies_prompt", FieldType::text},
        {"graph_organizer.complexity.perception_strategies_prompt", FieldType::text},
        {"graph_organizer.complexity.enhancement_requirements", FieldType::text},
        {"curator.few_shot_difficulty_weights", FieldType::weight_map},
        {"curator.few_shot_difficulty_weights.easy", FieldType::real},
        {"curator.few_shot_difficulty_weights.medium", FieldType::real},
        {"curator.few_shot_difficulty_weights.hard", FieldType::real},
        {"curator.few_shot_difficulty_weights.expert", FieldType::real},
        {"curator.difficulty_control_prompt", FieldType::text},
        {"curator.strategy", FieldType::text},
        {"curator.quality_requirements_prompt", FieldType::text},
        {"curator.complexity_enhancement.requirements_prompt", FieldType::text},
        {"curator.complexity_enhancement.strategy_prompt", FieldType::text},
        {"optimization_strategy", FieldType::text},
    };
    return schema;
}

std::optional<FieldType> field_type(std::string_view path) {
    for (const auto& f : evolvable_schema()) {
        if (f.path == path) return f.type;
    }
    return std::nullopt;
}

std::string stage_of(std::string_view path) {
    auto seg = std::string(path.substr(0, path.find('.')));
    for (const auto& s : kStages) {
        if (s == seg) return seg;
    }
    return {};
}

namespace {

json::json_pointer pointer_for(std::string_view path) {
    std::string p;
    std::size_t pos = 0;
    while (true) {
        auto dot = path.find('.', pos);
        p += "/" + std::string(path.substr(pos, dot == std::string_view::npos ? std::string_view::npos : dot - pos));
        if (dot == std::string_view::npos) break;
        pos = dot + 1;
    }
    return json::json_pointer(p);
}

void collect_leaves(const json& j, const std::string& prefix, std::vector<std::string>& out) {
    if (j.is_object() && prefix != "curator.few_shot_difficulty_weights") {
        for (const auto& [k, v] : j.items()) collect_leaves(v, prefix.empty() ? k : prefix + "." + k, out);
    } else {
        out.push_back(prefix);
    }
}

}  // namespace

const json& EvolvableConfig::at(std::string_view path) const {
    if (!field_type(path)) throw Error(ErrorKind::PathNotFound, "'" + std::string(path) + "' is not a config path");
    auto ptr = pointer_for(path);
    if (!doc_.contains(ptr)) throw Error(ErrorKind::PathNotFound, "'" + std::string(path) + "' is missing");
    return doc_.at(ptr);
}

bool EvolvableConfig::has(std::string_view path) const {
    return field_type(path) && doc_.contains(pointer_for(path));
}

std::map<std::string, double> EvolvableConfig::difficulty_weights() const {
    return at("curator.few_shot_difficulty_weights").get<std::map<std::string, double>>();
}

std::string EvolvableConfig::serialize() const { return doc_.dump(2) + "\n"; }

std::string EvolvableConfig::digest() const { return sha256_hex(serialize()); }

EvolvableConfig with_value(const EvolvableConfig& c, std::string_view path, json value) {
    EvolvableConfig out = c;
    out.doc_[pointer_for(path)] = std::move(value);
    return out;
}

std::vector<Violation> validate(const EvolvableConfig& config) {
    std::vector<Violation> v;
    const json& doc = config.doc();
    if (!doc.is_object()) return {{"", "config must be an object"}};
    for (const auto& f : evolvable_schema()) {
        auto ptr = pointer_for(f.path);
        if (!doc.contains(ptr)) {
            v.push_back({f.path, "missing"});
            continue;
        }
        const json& x = doc.at(ptr);
        switch (f.type) {
            case FieldType::integer:
                if (!x.is_number_integer()) {
                    v.push_back({f.path, "must be an integer"});
                } else if (x.get<long long>() < 1) {
                    v.push_back({f.path, "must be >= 1"});
                }
                break;
            case FieldType::ratio:
                if (!x.is_number()) {
                    v.push_back({f.path, "must be a number"});
                } else if (double d = x.get<double>(); !(d >= 0.0 && d <= 1.0)) {
                    v.push_back({f.path, "must be in [0, 1]"});
                }
                break;
            case FieldType::real:
                if (!x.is_number()) {
                    v.push_back({f.path, "must be a number"});
                } else if (!(x.get<double>() >= 0.0)) {
                    v.push_back({f.path, "must be non-negative"});
                }
                break;
            case FieldType::text:
                if (!x.is_string()) v.push_back({f.path, "must be text"});
                break;
            case FieldType::weight_map: {
                if (!x.is_object()) {
                    v.push_back({f.path, "must be a map"});
                    break;
                }
                double sum = 0;
                bool numeric = true;
                for (const auto& [k, w] : x.items()) {
                    if (!w.is_number()) {
                        numeric = false;
                    } else {
                        sum += w.get<double>();
                    }
                }
                if (numeric && std::abs(sum - 1.0) > 1e-9) {
                    v.push_back({f.path, "weights sum to " + std::to_string(sum) + ", expected 1"});
                }
                break;
            }
        }
    }
    std::vector<std::string> leaves;
    collect_leaves(doc, "", leaves);
    for (const auto& leaf : leaves) {
        if (!field_type(leaf)) v.push_back({leaf, "unknown field"});
    }
    if (doc.contains(pointer_for("curator.few_shot_difficulty_weights"))) {
        const auto& m = doc.at(pointer_for("curator.few_shot_difficulty_weights"));
        if (m.is_object()) {
            for (const auto& [k, w] : m.items()) {
                if (!field_type("curator.few_shot_difficulty_weights." + k)) {
                    v.push_back({"curator.few_shot_difficulty_weights." + k, "unknown difficulty"});
                }
            }
        }
    }
    return v;
}

EvolvableConfig load_evolvable_config(const std::filesystem::path& path) {
    return EvolvableConfig(parse_config_file(path));
}

EvolvableConfig EvolvableConfig::sample() {
    json doc = {
        {"seed_proposer",
         {{"max_steps", 8},
          {"strategy",
           "Find seeds that pair a real entity with an information-bearing image and enough factual surface area "
           "for multi-hop verification and computation. Prefer labeled maps, museum placards, technical diagrams, "
           "archival documents, posters, charts, and timelines whose labels, dates, quantities, coordinates, or "
           "legends can be read from the image. Keep the batch diverse across domains. Reject decorative photos, "
           "common-knowledge trivia, paywalled images, and unstable social posts."},
          {"default_requirement",
           "Use web_search, image_search, and at least one visual_search. The image must be relevant, "
           "high-resolution, and readable under zoom. Support the entity or visible facts with at least two "
           "independent sources, preferably authoritative institutions. The seed must allow multi-hop lookup plus at "
           "least one reasoning operation."},
          {"seed_prompt",
           "Propose one multimodal seed. Search for a factual entity, locate an information-bearing image, verify "
           "that the image has readable content, and find an independent corroborating source. Output a record with "
           "entity, entity_type, image_url, image_source_page, supporting_sources, why_visual, multi_hop_potential, "
           "and rejection_risks."}}},
        {"explorer",
         {{"max_steps", 10},
          {"params", {{"number_of_anchors", 6}, {"max_nodes_per_phase", 2}, {"image_ratio", 0.5}}},
          {"strategy",
           "Expand the seed into a compact knowledge graph. Each node adds a new direction: a related artifact or "
           "version, upstream cause, downstream impact, comparable peer, geographic context, dataset or report, or "
           "historical milestone. Favor nodes with dates, measurements, counts, money, coordinates, legends, "
           "classification tables, competing claims, or details visible in images but not in text."},
          {"quality_requirements",
           "Build every node from fresh tool use. Each node needs at least two distinct tool calls, a clear "
           "definition, six to ten key facts, at least three numeric or date facts when available, and at least two "
           "independent sources. Image-bearing nodes state exactly what can be extracted visually."},
          {"exploration_process_prompt",
           "Start from the seed or previous node, pick a promising next node, use web_search to locate "
           "authoritative pages, visit to extract precise details, and image_search plus visual_search when the node "
           "should carry image evidence. Write each node with title, type, facts, images, and sources before "
           "choosing the next. Prefer fewer precise facts over long vague summaries."}}},
        {"graph_organizer",
         {{"organization_strategy",
           "Analyze the relationships among the collected nodes and turn them into a coherent knowledge graph: "
           "themes, edges, source relations, entity or event relations, and cross-modal dependencies."},
          {"complexity",
           {{"reasoning_ratio", 0.33},
            {"perception_ratio", 0.40},
            {"reasoning_max_steps", 5},
            {"perception_max_steps", 4},
            {"reasoning_strategies_prompt",
             "Create a reasoning-enhanced node through analysis or computation. You may call python_code and visit "
             "and must use at least one tool. Record the reasoning type, process, findings, computation, sources, "
             "and the connection back to the originating node."},
            {"perception_strategies_prompt",
             "Create a perception-enhanced node by operating on an image with zoom_in, flip, rotation, or "
             "visual_search. Choose transformations that reveal new information such as small labels, legends, "
             "angled text, logos, species, or landmarks, and document the finding as a new graph node."},
            {"enhancement_requirements",
             "Enhanced nodes must be useful for curation: a clear definition, explanation, key facts, provenance, "
             "and explicit connections."}}}}},
        {"curator",
         {{"few_shot_difficulty_weights", {{"easy", 0.05}, {"medium", 0.15}, {"hard", 0.50}, {"expert", 0.30}}},
          {"difficulty_control_prompt",
           "Avoid trivial tasks and brittle or unsolvable tasks; prefer hard-but-learnable ones. Combine at least one "
           "key image fact, one web-only fact, and one synthesis, comparison, or computation step. Use expert "
           "difficulty only when the evidence path stays clean and judgeable."},
          {"strategy",
           "Turn the evidence graph into diverse QA tasks with short, verifiable answers such as entities, numbers, "
           "dates, or names. Require multi-step tool use and specialized knowledge. Ask what to find, never how to "
           "find it."},
          {"quality_requirements_prompt",
           "Self-check answer format, uniqueness, objective verifiability, a complete evidence chain, natural image "
           "references, no numbered image indices, and no tool-name or strategy leakage. Never write questions that "
           "say \"zoom in\", \"search for\", \"use OCR\", \"calculate by\", or otherwise reveal the procedure."},
          {"complexity_enhancement",
           {{"requirements_prompt",
             "Preserve the ground-truth answer while increasing reasoning depth. Keep image references natural, "
             "avoid image tokens, remove strategy leakage, and keep the question answerable from the graph."},
            {"strategy_prompt",
             "Remove obvious clues, replace direct names with relationship-based descriptions, add intermediate "
             "lookups, comparisons, or computations, and turn single-hop questions into multi-hop ones while "
             "preserving visual dependency."}}}}},
        {"optimization_strategy",
         "Numerical edits are small, prompt edits are surgical, and patch sets are compact. Fix current-config "
         "faults first and prefer stable recurring failures over case-specific rules."},
    };
    return EvolvableConfig(std::move(doc));
}

// ---------------------------------------------------------------------------
// patches

std::string_view to_string(PatchAction a) {
    switch (a) {
        case PatchAction::update_param: return "update_param";
        case PatchAction::append_text: return "append_text";
        case PatchAction::replace_text: return "replace_text";
        case PatchAction::rewrite_text: return "rewrite_text";
    }
    return "update_param";
}

std::optional<PatchAction> patch_action_from_string(std::string_view s) {
    for (auto a : {PatchAction::update_param, PatchAction::append_text, PatchAction::replace_text,
                   PatchAction::rewrite_text}) {
        if (to_string(a) == s) return a;
    }
    return std::nullopt;
}

ConfigPatch ConfigPatch::update(std::string path, json value, std::string rationale) {
    return {PatchAction::update_param, std::move(path), {{"new_value", std::move(value)}}, std::move(rationale)};
}
ConfigPatch ConfigPatch::append(std::string path, std::string text, std::string rationale) {
    return {PatchAction::append_text, std::move(path), {{"appended_text", std::move(text)}}, std::move(rationale)};
}
ConfigPatch ConfigPatch::replace(std::string path, std::string find, std::string replace, std::string rationale) {
    return {PatchAction::replace_text, std::move(path), {{"find", std::move(find)}, {"replace", std::move(replace)}},
            std::move(rationale)};
}
ConfigPatch ConfigPatch::rewrite(std::string path, std::string text, std::string rationale) {
    return {PatchAction::rewrite_text, std::move(path), {{"new_text", std::move(text)}}, std::move(rationale)};
}

json patch_to_json(const ConfigPatch& p) {
    return {{"action", to_string(p.action)}, {"path", p.path}, {"payload", p.payload}, {"rationale", p.rationale}};
}

namespace {

void require_payload(const ConfigPatch& p) {
    auto need_string = [&](const char* key) {
        if (!p.payload.contains(key) || !p.payload[key].is_string()) {
            throw Error(ErrorKind::TypeMismatch, std::string(to_string(p.action)) + " needs text '" + key + "'");
        }
    };
    if (!p.payload.is_object()) throw Error(ErrorKind::TypeMismatch, "patch payload must be an object");
    switch (p.action) {
        case PatchAction::update_param:
            if (!p.payload.contains("new_value")) throw Error(ErrorKind::TypeMismatch, "update_param needs new_value");
            break;
        case PatchAction::append_text: need_string("appended_text"); break;
        case PatchAction::replace_text:
            need_string("find");
            need_string("replace");
            break;
        case PatchAction::rewrite_text: need_string("new_text"); break;
    }
}

}  // namespace

ConfigPatch patch_from_json(const json& j) {
    if (!j.is_object() || !j.contains("action") || !j["action"].is_string() || !j.contains("path") ||
        !j["path"].is_string()) {
        throw Error(ErrorKind::TypeMismatch, "patch needs action and path");
    }
    auto action = patch_action_from_string(j["action"].get<std::string>());
    if (!action) throw Error(ErrorKind::TypeMismatch, "unknown patch action '" + j["action"].get<std::string>() + "'");
    ConfigPatch p;
    p.action = *action;
    p.path = j["path"].get<std::string>();
    p.payload = j.value("payload", json::object());
    p.rationale = j.contains("rationale") && j["rationale"].is_string() ? j["rationale"].get<std::string>() : "";
    require_payload(p);
    return p;
}

EvolvableConfig apply_patch(const EvolvableConfig& config, const ConfigPatch& patch) {
    auto type = field_type(patch.path);
    if (!type) throw Error(ErrorKind::PathNotFound, "'" + patch.path + "' is not a config path");
    require_payload(patch);
    json value;
    if (patch.action == PatchAction::update_param) {
        const json& nv = patch.payload["new_value"];
        switch (*type) {
            case FieldType::integer:
                if (nv.is_number_integer()) {
                    value = nv.get<long long>();
                } else if (nv.is_number_float() && std::floor(nv.get<double>()) == nv.get<double>()) {
                    value = static_cast<long long>(nv.get<double>());
                } else {
                    throw Error(ErrorKind::TypeMismatch, patch.path + " takes an integer");
                }
                break;
            case FieldType::ratio:
            case FieldType::real:
                if (!nv.is_number()) throw Error(ErrorKind::TypeMismatch, patch.path + " takes a number");
                value = nv;
                break;
            case FieldType::weight_map:
                if (!nv.is_object()) throw Error(ErrorKind::TypeMismatch, patch.path + " takes a difficulty map");
                for (const auto& [k, w] : nv.items()) {
                    if (!w.is_number()) throw Error(ErrorKind::TypeMismatch, patch.path + "." + k + " takes a number");
                }
                value = nv;
                break;
            case FieldType::text:
                throw Error(ErrorKind::TypeMismatch, "update_param cannot target text field " + patch.path);
        }
    } else {
        if (*type != FieldType::text) {
            throw Error(ErrorKind::TypeMismatch, std::string(to_string(patch.action)) + " needs a text field, " +
                                                     patch.path + " is not one");
        }
        std::string current = config.get_text(patch.path);
        switch (patch.action) {
            case PatchAction::append_text: {
                auto add = patch.payload["appended_text"].get<std::string>();
                value = current.empty() ? add : current + "\n" + add;
                break;
            }
            case PatchAction::replace_text: {
                auto find = patch.payload["find"].get<std::string>();
                auto at = find.empty() ? std::string::npos : current.find(find);
                if (at == std::string::npos || current.find(find, at + 1) != std::string::npos) {
                    throw Error(ErrorKind::FindNotUnique, "'" + find + "' must occur exactly once in " + patch.path);
                }
                value = current.substr(0, at) + patch.payload["replace"].get<std::string>() +
                        current.substr(at + find.size());
                break;
            }
            case PatchAction::rewrite_text: value = patch.payload["new_text"]; break;
            case PatchAction::update_param: break;
        }
    }
    if (!config.has(patch.path)) throw Error(ErrorKind::PathNotFound, "'" + patch.path + "' is missing");
    auto out = with_value(config, patch.path, std::move(value));
    auto violations = validate(out);
    if (!violations.empty()) {
        std::string msg;
        for (const auto& v : violations) msg += (msg.empty() ? "" : "; ") + v.path + ": " + v.message;
        throw Error(ErrorKind::PostPatchInvalid, msg);
    }
    return out;
}

EvolvableConfig apply_patches(EvolvableConfig config, const std::vector<ConfigPatch>& patches) {
    for (const auto& p : patches) config = apply_patch(config, p);
    return config;
}

std::vector<ConfigPatch> diff_configs(const EvolvableConfig& a, const EvolvableConfig& b) {
    std::vector<ConfigPatch> out;
    for (const auto& f : evolvable_schema()) {
        if (f.type == FieldType::real) continue;  // covered by the weight map
        const json& x = a.at(f.path);
        const json& y = b.at(f.path);
        if (x == y) continue;
        if (f.type == FieldType::text) {
            out.push_back(ConfigPatch::rewrite(f.path, y.get<std::string>()));
        } else {
            out.push_back(ConfigPatch::update(f.path, y));
        }
    }
    return out;
}

}  // namespace ode
