#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ode/forward.hpp"
#include "ode/judge.hpp"
#include "ode/ode_config.hpp"
#include "ode/rollout.hpp"

namespace ode {

using nlohmann::json;

inline const std::vector<std::string> kDifficultyTags = {"too_easy", "good_match", "too_hard", "fake_hard",
                                                         "infra_failure"};
inline const std::vector<std::string> kSeverities = {"minor", "moderate", "severe"};

struct StageAttribution {
    std::string stage;
    std::string severity;
    std::string note;
    std::vector<std::string> affected_dimensions;
};

struct Diagnosis {
    std::string task_id;
    bool success = false;
    std::map<std::string, int> scores;
    std::map<std::string, std::string> justifications;
    double overall = 0.0;
    std::vector<StageAttribution> attributions;
    std::optional<std::string> difficulty_tag;  // RL only
    /// Analyzer output was unusable; excluded from dimension means.
    bool infra = false;
    std::vector<std::string> notes;
};

json diagnosis_to_json(const Diagnosis& d);

/// Σ wᵢsᵢ / Σ wᵢ. Throws MissingDimension or OutOfRange.
double score_diagnosis(const std::map<std::string, int>& scores, const RubricSpec& spec);

struct Verification {
    Trace trace;
    bool success = false;
    std::optional<Verdict> verdict;
    std::vector<std::string> notes;
};

/// Rollout with the system's policy, then one judge call. A judge failure yields
/// success = false with an infra note instead of an exception.
Verification verify_task(const Task& task, const SystemConfig& system, BackendRegistry& backends, const ToolEnv& env,
                         int round = 0);

/// Analyzer reply: {"scores", "justifications", "stage_attributions": [{"stage", "severity",
/// "note", "affected_dimensions"}], "difficulty_tag"}. Throws AnalysisParseFailure.
Diagnosis parse_analysis(std::string_view reply, const std::string& task_id, bool success, const RubricSpec& spec);

std::string render_analysis_prompt(const Trace& trace, bool success, const ForwardRecord* record,
                                   const SystemConfig& system);

/// Never throws for malformed replies: those become infra diagnoses (tag infra_failure in RL mode).
Diagnosis analyze_trace(const Trace& trace, bool success, const ForwardRecord* record, const SystemConfig& system,
                        BackendRegistry& backends, int round = 0);

struct SeverityCounts {
    int minor = 0;
    int moderate = 0;
    int severe = 0;
    friend bool operator==(const SeverityCounts&, const SeverityCounts&) = default;
};

struct RoundSignal {
    int round = 0;
    int diagnoses = 0;
    double pass_rate = 0.0;
    std::optional<double> mean_overall;
    std::map<std::string, double> per_dimension_mean;
    std::map<std::string, double> tag_distribution;
    std::map<std::string, SeverityCounts> stage_issue_counts;
    std::set<std::string> flagged_stages;
    /// too_hard or too_easy share above its threshold.
    bool difficulty_shift = false;
    bool infra_alarm = false;
};

json signal_to_json(const RoundSignal& s);
RoundSignal signal_from_json(const json& j);

RoundSignal aggregate_round(const std::vector<Diagnosis>& diagnoses, const Thresholds& thresholds, int round = 0);

/// Paths the optimizer may edit: every path of a flagged stage, plus the
/// difficulty weights when the shift rule fired.
std::vector<std::string> allowed_paths(const RoundSignal& signal);

std::string render_optimizer_prompt(const RoundSignal& signal, const EvolvableConfig& config);

/// Empty without a backend call when nothing is flagged. Reply: {"patches": [...]}.
/// Throws OptimizerParseFailure.
std::vector<ConfigPatch> propose_patches(const RoundSignal& signal, const EvolvableConfig& config,
                                         const SystemConfig& system, BackendRegistry& backends, int round = 0);

struct Review {
    std::vector<ConfigPatch> accepted;  // in acceptance order
    std::vector<std::pair<ConfigPatch, std::string>> rejected;
    EvolvableConfig next;
};

/// Reasons: "unflagged stage", "step limit", "rationale", "budget", "invalid: ...".
/// Candidates are taken by the targeted stage's severity (severe, then moderate,
/// then minor counts), ties in stage order, then proposal order.
Review review_patches(const std::vector<ConfigPatch>& patches, const RoundSignal& signal, const EvolvableConfig& config,
                      const Thresholds& limits);

struct LedgerEntry {
    int round = 0;
    EvolvableConfig snapshot;
    std::vector<ConfigPatch> applied;
    std::vector<std::pair<ConfigPatch, std::string>> rejected;
    RoundSignal signal;
    bool regression_flag = false;
    std::vector<std::string> rollback_notes;
    int accepted_tasks = 0;
};

struct RoundLedger {
    std::vector<LedgerEntry> rounds;

    /// Snapshot after the last round's patches, or nullopt when empty.
    std::optional<EvolvableConfig> next_config() const;
    /// True when each round's patches turn its snapshot into the next snapshot.
    bool replayable() const;
};

/// Fields the patches restore to a value held in a strictly earlier round.
std::vector<std::string> rollback_notes(const RoundLedger& ledger, const EvolvableConfig& current,
                                        const EvolvableConfig& next, const std::vector<ConfigPatch>& applied);

json ledger_entry_to_json(const LedgerEntry& e);
LedgerEntry ledger_entry_from_json(const json& j, const std::filesystem::path& snapshot_dir);

/// Appends one line to `dir/ledger.jsonl` and stores the snapshot as `dir/snapshots/<digest>.json`.
void append_ledger(const LedgerEntry& e, const std::filesystem::path& dir);
RoundLedger load_ledger(const std::filesystem::path& dir);

/// SFT: success and overall >= sft_accept. RL: good_match, or overall >= rl_accept.
bool accept_task(const Diagnosis& d, const SystemConfig& system);

struct RoundOutcome {
    std::vector<Task> accepted;
    EvolvableConfig next;
    std::vector<Verification> verifications;
    std::vector<Diagnosis> diagnoses;
    LedgerEntry entry;
    std::vector<std::string> notes;
};

/// Verify and analyze every task (concurrently), accept by mode rule, aggregate,
/// propose and review patches, and append a ledger entry. Throws EmptyPool.
RoundOutcome run_round(const CandidatePool& pool, const EvolvableConfig& config, const SystemConfig& system,
                       RoundLedger& ledger, BackendRegistry& backends, const ToolEnv& env, int workers = 1);

}  // namespace ode
