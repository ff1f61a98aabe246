#include "ode/backward.hpp"

#include <algorithm>
#include <cmath>

#include "ode/digest.hpp"
#include "ode/error.hpp"
#include "ode/parallel.hpp"

namespace ode {

namespace {

constexpr std::string_view kRubricPrompt =
    "You are a professional data quality evaluator. Score the Agent execution trace based on the rubric. For each "
    "dimension, read the question, ground truth, visual materials, complete reasoning steps, tool calls, "
    "observations, and outcome, then return a score and explanation.";
constexpr std::string_view kScoringPrinciples =
    "Evaluate QA quality through task design and execution process. Synthesize evidence from the question, ground "
    "truth, visual materials, rollout steps, tool calls, observations, and final answer.";
constexpr std::string_view kDifficultyRule =
    "Difficulty_Match rule: classify the rollout into the five-stage difficulty diagnosis from too simple to too "
    "difficult or noisy. Do not reward long traces, repeated retries, or external failures by themselves. High "
    "scores require productive struggle with concrete intermediate progress.";
constexpr std::string_view kDiagnosisPrompt =
    "After rubric scoring, diagnose root causes using the forward construction record. Attribute each issue to "
    "seed_proposer, explorer, graph_organizer, or curator, report severity, affected dimensions, and a suggested "
    "config-side repair.";

constexpr std::string_view kOptimizerRole =
    "You are a professional AI training data system architect. Based on rubric score analysis and diagnosis "
    "feedback, generate precise, structured changes to the stage configuration.";
constexpr std::string_view kOptimizerActions =
    "Actions: update_param for numerical or boolean parameters, append_text for new prompt clauses, replace_text "
    "for exact-substring edits, and rewrite_text for consolidating an entire prompt field.";
constexpr std::string_view kOptimizerConstraints =
    "Constraints: numerical edits are small, prompt edits must be surgical, patch sets should be compact, parser "
    "noise is ignored, current-config faults are fixed before weak-reference drift, schema contracts are preserved, "
    "and stable recurring failures are preferred over case-specific rules.";

bool contains(const std::vector<std::string>& v, const std::string& s) {
    return std::find(v.begin(), v.end(), s) != v.end();
}

int stage_rank(const std::string& stage) {
    auto it = std::find(kStages.begin(), kStages.end(), stage);
    return it == kStages.end() ? static_cast<int>(kStages.size()) : static_cast<int>(it - kStages.begin());
}

bool excluded(const Diagnosis& d) { return d.infra || d.difficulty_tag == "infra_failure"; }

}  // namespace

json diagnosis_to_json(const Diagnosis& d) {
    json attributions = json::array();
    for (const auto& a : d.attributions) {
        attributions.push_back({{"stage", a.stage},
                                {"severity", a.severity},
                                {"note", a.note},
                                {"affected_dimensions", a.affected_dimensions}});
    }
    return {{"task_id", d.task_id},
            {"success", d.success ? "yes" : "no"},
            {"scores", d.scores},
            {"justifications", d.justifications},
            {"overall", d.overall},
            {"stage_attributions", attributions},
            {"difficulty_tag", d.difficulty_tag ? json(*d.difficulty_tag) : json(nullptr)},
            {"infra", d.infra},
            {"notes", d.notes}};
}

double score_diagnosis(const std::map<std::string, int>& scores, const RubricSpec& spec) {
    double num = 0, den = 0;
    for (const auto& dim : spec.dimensions) {
        auto it = scores.find(dim.name);
        if (it == scores.end()) throw Error(ErrorKind::MissingDimension, dim.name);
        if (it->second < spec.score_min || it->second > spec.score_max) {
            throw Error(ErrorKind::OutOfRange, dim.name + " = " + std::to_string(it->second));
        }
        num += dim.weight * it->second;
        den += dim.weight;
    }
    for (const auto& [name, _] : scores) {
        if (std::none_of(spec.dimensions.begin(), spec.dimensions.end(),
                         [&](const RubricDimension& d) { return d.name == name; })) {
            throw Error(ErrorKind::MissingDimension, "'" + name + "' is not a rubric dimension");
        }
    }
    return num / den;
}

// ---------------------------------------------------------------------------
// verification

Verification verify_task(const Task& task, const SystemConfig& system, BackendRegistry& backends, const ToolEnv& env,
                         int round) {
    validate_task(task);
    Verification v;
    RolloutLimits limits;
    limits.budget = system.limits;
    limits.decode = system.decode;
    auto policy = backends.get(system.rollout_model, {round, "policy", task.id});
    v.trace = run_rollout(task, *policy, env, limits);
    try {
        auto judge = backends.get(system.judge_backend, {round, "judge", task.id});
        v.verdict = adjudicate(task.question, task.reference_answer, extract_final_answer(v.trace),
                               full_response(v.trace), *judge, system.decode);
        v.success = v.verdict->correct;
    } catch (const Error& e) {
        v.success = false;
        v.notes.push_back(std::string("infra: judge failed: ") + e.what());
    }
    return v;
}

// ---------------------------------------------------------------------------
// analysis

Diagnosis parse_analysis(std::string_view reply, const std::string& task_id, bool success, const RubricSpec& spec) {
    auto fail = [](const std::string& why) { return Error(ErrorKind::AnalysisParseFailure, why); };
    auto j = first_json_object(reply);
    if (!j) throw fail("analyzer reply holds no JSON object");
    Diagnosis d;
    d.task_id = task_id;
    d.success = success;
    if (!j->contains("scores") || !(*j)["scores"].is_object()) throw fail("no scores object");
    for (const auto& [name, v] : (*j)["scores"].items()) {
        if (!v.is_number() || std::floor(v.get<double>()) != v.get<double>()) {
            throw fail("score for " + name + " is not an integer");
        }
        d.scores[name] = static_cast<int>(v.get<double>());
    }
    try {
        d.overall = score_diagnosis(d.scores, spec);
    } catch (const Error& e) {
        throw fail(e.what());
    }
    if (j->contains("justifications") && (*j)["justifications"].is_object()) {
        for (const auto& [name, v] : (*j)["justifications"].items()) {
            if (v.is_string()) d.justifications[name] = v.get<std::string>();
        }
    }
    if (j->contains("stage_attributions")) {
        const auto& list = (*j)["stage_attributions"];
        if (!list.is_array()) throw fail("stage_attributions is not a list");
        for (const auto& a : list) {
            StageAttribution sa;
            sa.stage = a.value("stage", "");
            sa.severity = a.value("severity", "");
            sa.note = a.value("note", "");
            if (a.contains("affected_dimensions") && a["affected_dimensions"].is_array()) {
                for (const auto& x : a["affected_dimensions"]) {
                    if (x.is_string()) sa.affected_dimensions.push_back(x.get<std::string>());
                }
            }
            if (!contains(kStages, sa.stage)) throw fail("attribution to unknown stage '" + sa.stage + "'");
            if (!contains(kSeverities, sa.severity)) throw fail("unknown severity '" + sa.severity + "'");
            d.attributions.push_back(std::move(sa));
        }
    }
    bool has_tag = j->contains("difficulty_tag") && !(*j)["difficulty_tag"].is_null();
    if (spec.mode == Mode::rl) {
        if (!has_tag || !(*j)["difficulty_tag"].is_string()) throw fail("RL diagnosis needs a difficulty_tag");
        auto tag = (*j)["difficulty_tag"].get<std::string>();
        if (!tag.empty() && tag.front() == '[' && tag.back() == ']') tag = tag.substr(1, tag.size() - 2);
        if (!contains(kDifficultyTags, tag)) throw fail("unknown difficulty tag '" + tag + "'");
        d.difficulty_tag = tag;
    } else if (has_tag) {
        d.notes.push_back("difficulty_tag ignored in SFT mode");
    }
    return d;
}

std::string render_analysis_prompt(const Trace& trace, bool success, const ForwardRecord* record,
                                   const SystemConfig& system) {
    std::string rubric;
    for (const auto& dim : system.rubric.dimensions) {
        rubric += "- " + dim.name + " (weight " + json(dim.weight).dump() + ")\n";
    }
    json turns = json::array();
    for (const auto& t : trace.turns) {
        json calls = json::array();
        for (std::size_t k = 0; k < t.actions.size(); ++k) {
            calls.push_back({{"call", tool_call_to_json(t.actions[k])}, {"result", t.results[k].text}});
        }
        turns.push_back({{"assistant", t.assistant_text}, {"tools", calls}});
    }
    json summary = {{"question", trace.task.question},
                    {"ground_truth", trace.task.reference_answer},
                    {"annotations",
                     {{"domain", trace.task.annotations.domain},
                      {"profile", trace.task.annotations.profile},
                      {"difficulty", trace.task.annotations.difficulty}}},
                    {"final_answer", trace.final_answer ? json(*trace.final_answer) : json(nullptr)},
                    {"stop_reason", to_string(trace.stop_reason)},
                    {"success", success ? "yes" : "no"},
                    {"turns", turns}};
    std::string out = std::string(kRubricPrompt) + "\n\n" + std::string(kScoringPrinciples) + "\n\nRubric (" +
                      std::string(to_string(system.mode)) + ", integer scores from -5 to 5):\n" + rubric + "\n";
    if (system.mode == Mode::rl) out += std::string(kDifficultyRule) + "\n\n";
    out += std::string(kDiagnosisPrompt) +
           "\n\nReply with one JSON object {\"scores\": {dimension: int}, \"justifications\": {dimension: text}, "
           "\"stage_attributions\": [{\"stage\", \"severity\" (minor, moderate, severe), \"note\", "
           "\"affected_dimensions\"}]";
    if (system.mode == Mode::rl) out += ", \"difficulty_tag\" (too_easy, good_match, too_hard, fake_hard, infra_failure)";
    out += "}.\n\nTrace:\n" + summary.dump(2) + "\n";
    if (record) out += "\nForward construction record:\n" + forward_record_to_json(*record).dump(2) + "\n";
    return out;
}

Diagnosis analyze_trace(const Trace& trace, bool success, const ForwardRecord* record, const SystemConfig& system,
                        BackendRegistry& backends, int round) {
    try {
        auto analyzer = backends.get(system.analyzer_backend, {round, "analyzer", trace.task_id});
        ChatRequest req;
        req.decode = system.decode;
        req.bank = &trace.bank;
        req.messages.push_back({ChatRole::user, render_analysis_prompt(trace, success, record, system), {}});
        BudgetState budget;
        budget.limits = system.limits;
        auto resp = complete(req, budget, *analyzer);
        return parse_analysis(resp.text, trace.task_id, success, system.rubric);
    } catch (const Error& e) {
        Diagnosis d;
        d.task_id = trace.task_id;
        d.success = success;
        d.infra = true;
        if (system.mode == Mode::rl) d.difficulty_tag = "infra_failure";
        d.notes.push_back(std::string("analysis failed: ") + e.what());
        return d;
    }
}

// ---------------------------------------------------------------------------
// aggregation

json signal_to_json(const RoundSignal& s) {
    json counts = json::object();
    for (const auto& [stage, c] : s.stage_issue_counts) {
        counts[stage] = {{"minor", c.minor}, {"moderate", c.moderate}, {"severe", c.severe}};
    }
    return {{"round", s.round},
            {"diagnoses", s.diagnoses},
            {"pass_rate", s.pass_rate},
            {"mean_overall", s.mean_overall ? json(*s.mean_overall) : json(nullptr)},
            {"per_dimension_mean", s.per_dimension_mean},
            {"tag_distribution", s.tag_distribution},
            {"stage_issue_counts", counts},
            {"flagged_stages", s.flagged_stages},
            {"difficulty_shift", s.difficulty_shift},
            {"infra_alarm", s.infra_alarm}};
}

RoundSignal signal_from_json(const json& j) {
    RoundSignal s;
    s.round = j.at("round").get<int>();
    s.diagnoses = j.at("diagnoses").get<int>();
    s.pass_rate = j.at("pass_rate").get<double>();
    if (j.at("mean_overall").is_number()) s.mean_overall = j["mean_overall"].get<double>();
    s.per_dimension_mean = j.at("per_dimension_mean").get<std::map<std::string, double>>();
    s.tag_distribution = j.at("tag_distribution").get<std::map<std::string, double>>();
    for (const auto& [stage, c] : j.at("stage_issue_counts").items()) {
        s.stage_issue_counts[stage] = {c.at("minor").get<int>(), c.at("moderate").get<int>(),
                                       c.at("severe").get<int>()};
    }
    s.flagged_stages = j.at("flagged_stages").get<std::set<std::string>>();
    s.difficulty_shift = j.at("difficulty_shift").get<bool>();
    s.infra_alarm = j.at("infra_alarm").get<bool>();
    return s;
}

RoundSignal aggregate_round(const std::vector<Diagnosis>& diagnoses, const Thresholds& thresholds, int round) {
    RoundSignal s;
    s.round = round;
    s.diagnoses = static_cast<int>(diagnoses.size());
    if (diagnoses.empty()) return s;

    int passed = 0, usable = 0, tagged = 0;
    double overall_sum = 0;
    std::map<std::string, double> dim_sum;
    std::map<std::string, int> tag_count;
    std::map<std::string, int> flag_hits;
    for (const auto& st : kStages) s.stage_issue_counts[st] = {};
    for (const auto& d : diagnoses) {
        if (d.success) ++passed;
        if (d.difficulty_tag) {
            ++tagged;
            tag_count[*d.difficulty_tag]++;
        }
        std::set<std::string> hit;
        for (const auto& a : d.attributions) {
            auto& c = s.stage_issue_counts[a.stage];
            if (a.severity == "minor") ++c.minor;
            if (a.severity == "moderate") ++c.moderate;
            if (a.severity == "severe") ++c.severe;
            if (a.severity != "minor") hit.insert(a.stage);
        }
        for (const auto& st : hit) flag_hits[st]++;
        if (excluded(d)) continue;
        ++usable;
        overall_sum += d.overall;
        for (const auto& [dim, v] : d.scores) dim_sum[dim] += v;
    }
    double n = static_cast<double>(diagnoses.size());
    s.pass_rate = passed / n;
    if (usable > 0) {
        s.mean_overall = overall_sum / usable;
        for (const auto& [dim, sum] : dim_sum) s.per_dimension_mean[dim] = sum / usable;
    }
    for (const auto& [tag, c] : tag_count) s.tag_distribution[tag] = static_cast<double>(c) / tagged;
    for (const auto& [stage, c] : flag_hits) {
        if (c / n >= thresholds.stage_flag) s.flagged_stages.insert(stage);
    }
    auto share = [&](const char* tag) {
        auto it = s.tag_distribution.find(tag);
        return it == s.tag_distribution.end() ? 0.0 : it->second;
    };
    s.difficulty_shift = share("too_hard") > thresholds.too_hard || share("too_easy") > thresholds.too_easy;
    s.infra_alarm = usable == 0;
    return s;
}

// ---------------------------------------------------------------------------
// optimization

std::vector<std::string> allowed_paths(const RoundSignal& signal) {
    std::vector<std::string> out;
    for (const auto& f : evolvable_schema()) {
        bool weights = f.path.rfind("curator.few_shot_difficulty_weights", 0) == 0;
        if (signal.flagged_stages.count(stage_of(f.path)) || (weights && signal.difficulty_shift)) {
            out.push_back(f.path);
        }
    }
    return out;
}

std::string render_optimizer_prompt(const RoundSignal& signal, const EvolvableConfig& config) {
    std::string paths;
    for (const auto& p : allowed_paths(signal)) paths += "- " + p + "\n";
    return std::string(kOptimizerRole) + "\n\n" + std::string(kOptimizerActions) + "\n" +
           std::string(kOptimizerConstraints) + "\n\n" + config.get_text("optimization_strategy") +
           "\n\nRound signal:\n" + signal_to_json(signal).dump(2) + "\n\nCurrent stage config:\n" +
           config.doc().dump(2) + "\n\nAvailable field paths:\n" + paths +
           "\nReply with one JSON object {\"patches\": [{\"action\", \"path\", \"payload\", \"rationale\"}]}; each "
           "rationale names the signal field it responds to.\n";
}

std::vector<ConfigPatch> propose_patches(const RoundSignal& signal, const EvolvableConfig& config,
                                         const SystemConfig& system, BackendRegistry& backends, int round) {
    if (signal.flagged_stages.empty() && !signal.difficulty_shift) return {};
    auto optimizer = backends.get(system.optimizer_backend, {round, "optimizer", {}});
    ChatRequest req;
    req.decode = system.decode;
    req.messages.push_back({ChatRole::user, render_optimizer_prompt(signal, config), {}});
    BudgetState budget;
    budget.limits = system.limits;
    auto resp = complete(req, budget, *optimizer);
    auto j = first_json_object(resp.text);
    if (!j || !j->contains("patches") || !(*j)["patches"].is_array()) {
        throw Error(ErrorKind::OptimizerParseFailure, "optimizer reply has no patch list");
    }
    std::vector<ConfigPatch> out;
    for (const auto& p : (*j)["patches"]) {
        try {
            out.push_back(patch_from_json(p));
        } catch (const Error& e) {
            throw Error(ErrorKind::OptimizerParseFailure, e.what());
        }
    }
    return out;
}

namespace {

bool within_real_step(double from, double to, const Thresholds& t) {
    double delta = std::abs(to - from);
    if (delta <= t.max_ratio_absolute + 1e-9) return true;
    return from != 0 && delta / std::abs(from) <= t.max_real_relative + 1e-9;
}

std::optional<std::string> step_violation(const ConfigPatch& p, const EvolvableConfig& config, const Thresholds& t) {
    if (p.action != PatchAction::update_param) return std::nullopt;
    auto type = field_type(p.path);
    if (!type || !config.has(p.path)) return std::nullopt;  // apply_patch reports it
    const json& nv = p.payload.at("new_value");
    const json& old = config.at(p.path);
    switch (*type) {
        case FieldType::integer:
            if (!nv.is_number()) return std::nullopt;
            if (std::abs(nv.get<double>() - old.get<double>()) > t.max_int_step) return "step limit";
            return std::nullopt;
        case FieldType::ratio:
        case FieldType::real:
            if (!nv.is_number()) return std::nullopt;
            if (!within_real_step(old.get<double>(), nv.get<double>(), t)) return "step limit";
            return std::nullopt;
        case FieldType::weight_map:
            if (!nv.is_object()) return std::nullopt;
            for (const auto& [k, v] : nv.items()) {
                double from = old.contains(k) && old[k].is_number() ? old[k].get<double>() : 0.0;
                if (v.is_number() && !within_real_step(from, v.get<double>(), t)) return "step limit";
            }
            return std::nullopt;
        case FieldType::text: return std::nullopt;
    }
    return std::nullopt;
}

}  // namespace

Review review_patches(const std::vector<ConfigPatch>& patches, const RoundSignal& signal, const EvolvableConfig& config,
                      const Thresholds& limits) {
    Review r;
    r.next = config;
    struct Candidate {
        std::size_t order;
        const ConfigPatch* patch;
        std::string stage;
    };
    std::vector<Candidate> candidates;
    for (std::size_t i = 0; i < patches.size(); ++i) {
        const auto& p = patches[i];
        auto stage = stage_of(p.path);
        bool weights = p.path.rfind("curator.few_shot_difficulty_weights", 0) == 0;
        if (!signal.flagged_stages.count(stage) && !(weights && signal.difficulty_shift)) {
            r.rejected.emplace_back(p, "unflagged stage");
            continue;
        }
        if (auto why = step_violation(p, config, limits)) {
            r.rejected.emplace_back(p, *why);
            continue;
        }
        if (p.rationale.empty()) {
            r.rejected.emplace_back(p, "rationale");
            continue;
        }
        candidates.push_back({i, &p, stage});
    }
    auto severity = [&](const std::string& stage) {
        auto it = signal.stage_issue_counts.find(stage);
        SeverityCounts c = it == signal.stage_issue_counts.end() ? SeverityCounts{} : it->second;
        return std::make_tuple(c.severe, c.moderate, c.minor);
    };
    std::stable_sort(candidates.begin(), candidates.end(), [&](const Candidate& a, const Candidate& b) {
        auto sa = severity(a.stage), sb = severity(b.stage);
        if (sa != sb) return sa > sb;
        return stage_rank(a.stage) < stage_rank(b.stage);
    });
    for (const auto& c : candidates) {
        if (static_cast<int>(r.accepted.size()) >= limits.max_patches_per_round) {
            r.rejected.emplace_back(*c.patch, "budget");
            continue;
        }
        try {
            r.next = apply_patch(r.next, *c.patch);
            r.accepted.push_back(*c.patch);
        } catch (const Error& e) {
            r.rejected.emplace_back(*c.patch, std::string("invalid: ") + e.what());
        }
    }
    return r;
}

// ---------------------------------------------------------------------------
// ledger

std::optional<EvolvableConfig> RoundLedger::next_config() const {
    if (rounds.empty()) return std::nullopt;
    return apply_patches(rounds.back().snapshot, rounds.back().applied);
}

bool RoundLedger::replayable() const {
    for (std::size_t i = 0; i + 1 < rounds.size(); ++i) {
        try {
            if (apply_patches(rounds[i].snapshot, rounds[i].applied).serialize() != rounds[i + 1].snapshot.serialize()) {
                return false;
            }
        } catch (const Error&) {
            return false;
        }
    }
    return true;
}

std::vector<std::string> rollback_notes(const RoundLedger& ledger, const EvolvableConfig& current,
                                        const EvolvableConfig& next, const std::vector<ConfigPatch>& applied) {
    std::vector<std::string> notes;
    std::set<std::string> seen;
    for (const auto& p : applied) {
        if (!seen.insert(p.path).second) continue;
        const json& before = current.at(p.path);
        const json& after = next.at(p.path);
        if (before == after) continue;
        for (const auto& e : ledger.rounds) {
            if (e.snapshot.has(p.path) && e.snapshot.at(p.path) == after) {
                notes.push_back(p.path + ": " + before.dump() + " -> " + after.dump() + " restores the value held at round " +
                                std::to_string(e.round));
                break;
            }
        }
    }
    return notes;
}

json ledger_entry_to_json(const LedgerEntry& e) {
    json applied = json::array(), rejected = json::array();
    for (const auto& p : e.applied) applied.push_back(patch_to_json(p));
    for (const auto& [p, why] : e.rejected) rejected.push_back({{"patch", patch_to_json(p)}, {"reason", why}});
    return {{"round", e.round},
            {"snapshot_digest", e.snapshot.digest()},
            {"applied", applied},
            {"rejected", rejected},
            {"signal", signal_to_json(e.signal)},
            {"regression_flag", e.regression_flag},
            {"rollback_notes", e.rollback_notes},
            {"accepted_tasks", e.accepted_tasks}};
}

LedgerEntry ledger_entry_from_json(const json& j, const std::filesystem::path& snapshot_dir) {
    try {
        LedgerEntry e;
        e.round = j.at("round").get<int>();
        auto digest = j.at("snapshot_digest").get<std::string>();
        e.snapshot = load_evolvable_config(snapshot_dir / (digest + ".json"));
        if (e.snapshot.digest() != digest) {
            throw Error(ErrorKind::SerializationFailure, "snapshot " + digest + " does not match its digest");
        }
        for (const auto& p : j.at("applied")) e.applied.push_back(patch_from_json(p));
        for (const auto& r : j.at("rejected")) {
            e.rejected.emplace_back(patch_from_json(r.at("patch")), r.at("reason").get<std::string>());
        }
        e.signal = signal_from_json(j.at("signal"));
        e.regression_flag = j.at("regression_flag").get<bool>();
        e.rollback_notes = j.at("rollback_notes").get<std::vector<std::string>>();
        e.accepted_tasks = j.at("accepted_tasks").get<int>();
        return e;
    } catch (const json::exception& ex) {
        throw Error(ErrorKind::SerializationFailure, std::string("bad ledger entry: ") + ex.what());
    }
}

void append_ledger(const LedgerEntry& e, const std::filesystem::path& dir) {
    auto snap = dir / "snapshots" / (e.snapshot.digest() + ".json");
    if (!std::filesystem::exists(snap)) write_file_atomic(snap, e.snapshot.serialize());
    auto next = apply_patches(e.snapshot, e.applied);
    auto next_snap = dir / "snapshots" / (next.digest() + ".json");
    if (!std::filesystem::exists(next_snap)) write_file_atomic(next_snap, next.serialize());
    auto path = dir / "ledger.jsonl";
    std::string existing = std::filesystem::exists(path) ? read_file_text(path) : std::string();
    write_file_atomic(path, existing + ledger_entry_to_json(e).dump() + "\n");
}

RoundLedger load_ledger(const std::filesystem::path& dir) {
    RoundLedger l;
    auto path = dir / "ledger.jsonl";
    if (!std::filesystem::exists(path)) return l;
    auto text = read_file_text(path);
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto eol = text.find('\n', pos);
        auto line = text.substr(pos, eol == std::string::npos ? std::string::npos : eol - pos);
        if (!line.empty()) {
            json j = json::parse(line, nullptr, false);
            if (j.is_discarded()) throw Error(ErrorKind::SerializationFailure, "bad ledger line");
            l.rounds.push_back(ledger_entry_from_json(j, dir / "snapshots"));
        }
        if (eol == std::string::npos) break;
        pos = eol + 1;
    }
    return l;
}

bool accept_task(const Diagnosis& d, const SystemConfig& system) {
    if (d.infra) return false;
    if (system.mode == Mode::sft) return d.success && d.overall >= system.thresholds.sft_accept;
    return d.difficulty_tag == "good_match" || d.overall >= system.thresholds.rl_accept;
}

RoundOutcome run_round(const CandidatePool& pool, const EvolvableConfig& config, const SystemConfig& system,
                       RoundLedger& ledger, BackendRegistry& backends, const ToolEnv& env, int workers) {
    if (pool.tasks.empty()) throw Error(ErrorKind::EmptyPool, "round " + std::to_string(pool.round) + " has no tasks");
    RoundOutcome out;
    std::size_t n = pool.tasks.size();
    out.verifications.resize(n);
    out.diagnoses.resize(n);
    parallel_for(n, workers, [&](std::size_t i) {
        const auto& task = pool.tasks[i];
        out.verifications[i] = verify_task(task, system, backends, env, pool.round);
        auto it = pool.provenance.find(task.id);
        out.diagnoses[i] = analyze_trace(out.verifications[i].trace, out.verifications[i].success,
                                         it == pool.provenance.end() ? nullptr : &it->second, system, backends,
                                         pool.round);
    });
    for (std::size_t i = 0; i < n; ++i) {
        if (accept_task(out.diagnoses[i], system)) out.accepted.push_back(pool.tasks[i]);
    }

    auto signal = aggregate_round(out.diagnoses, system.thresholds, pool.round);
    std::vector<ConfigPatch> proposed;
    try {
        proposed = propose_patches(signal, config, system, backends, pool.round);
    } catch (const Error& e) {
        out.notes.push_back(std::string("optimizer: ") + e.what());
    }
    auto review = review_patches(proposed, signal, config, system.thresholds);

    LedgerEntry& e = out.entry;
    e.round = pool.round;
    e.snapshot = config;
    e.applied = review.accepted;
    e.rejected = review.rejected;
    e.signal = signal;
    e.accepted_tasks = static_cast<int>(out.accepted.size());
    if (!ledger.rounds.empty() && ledger.rounds.back().signal.mean_overall && signal.mean_overall) {
        e.regression_flag =
            *ledger.rounds.back().signal.mean_overall - *signal.mean_overall > system.thresholds.regression_delta;
    }
    e.rollback_notes = rollback_notes(ledger, config, review.next, review.accepted);
    if (signal.infra_alarm) out.notes.push_back("infra alarm: no usable diagnosis this round");
    ledger.rounds.push_back(e);
    out.next = review.next;
    return out;
}

}  // namespace ode
