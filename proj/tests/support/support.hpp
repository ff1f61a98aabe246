#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <random>
#include <memory>
#include <string>
#include <vector>

#include "ode/analytics.hpp"
#include "ode/backward.hpp"
#include "ode/forward.hpp"
#include "ode/ode_config.hpp"
#include "ode/providers.hpp"
#include "ode/rollout.hpp"
#include "ode/sandbox.hpp"

namespace ode::testing {

/// Removed on destruction.
class TempDir {
public:
    TempDir();
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    std::filesystem::path path_;
};

/// Deterministic gradient PNG; `tint` varies the content.
Bytes test_png(int width, int height, int tint = 0);

std::string tool_block(const std::string& name, const json& args);
std::string final_block(const std::string& body);
std::shared_ptr<ScriptedBackend> scripted(const std::vector<std::string>& texts, std::string label = "test");

/// Canned provider: every text search returns three hits on distinct hosts,
/// every image query returns `images_per_query` PNGs, pages echo their URL.
class FakeProvider : public SearchProvider {
public:
    explicit FakeProvider(int images_per_query = 1) : images_per_query_(images_per_query) {}
    TextSearchResponse text_search(std::string_view kind, const std::string& query) override;
    ImageQueryResponse image_query(std::string_view kind, const ImageQueryInput& input) override;
    PageResponse fetch(const std::string& url) override;

    std::map<std::string, ImageQueryResponse> visual_answers;  // by kind, overrides the default
    std::map<std::string, TextSearchResponse> text_answers;    // by query
    std::atomic<int> calls{0};

private:
    int images_per_query_;
};

// --- rollout replay of the mountain-pass example ---------------------------------

Task mountain_pass_task();
std::shared_ptr<FakeProvider> mountain_pass_provider();
/// zoom_in(<image:0>) -> visual_search(<image:1>) -> web_search -> zoom_in(<image:3>) -> final.
std::vector<std::string> mountain_pass_script();

// --- config fixtures ---------------------------------------------------------------

/// The first round's four numeric edits.
std::vector<ConfigPatch> first_update_patches();
/// The second round's edits, including the image_ratio rollback.
std::vector<ConfigPatch> second_update_patches();

// --- analyzer replies --------------------------------------------------------------

struct ScoreSheet {
    std::vector<int> scores;  // in rubric order
    std::string tag;          // RL only; empty omits it
    std::vector<StageAttribution> attributions;
};

std::string analyzer_reply(const RubricSpec& spec, const ScoreSheet& sheet);
/// Scores (4,5,3,5,5,3,3), good_match, the four stage diagnoses.
ScoreSheet first_round_sheet();
/// Scores (5,5,3,5,5,-3,3), too_hard, explorer and graph organizer at fault.
ScoreSheet second_round_sheet();

std::string judge_reply(bool correct);

/// Decision rules and calibration lines recovered from the wrapped prompt fixture:
/// continuation lines rejoined, markdown escapes removed, indentation dropped.
std::vector<std::string> judge_prompt_oracle_lines();

/// Random verdict-shaped object: usually well formed, often with one defect
/// (extra or missing key, wrong type, unknown value, broken coupling).
json fuzz_verdict(std::mt19937& rng);
/// Independent acceptance rule for a verdict object, nullopt when it must be rejected,
/// otherwise the expected `correct` flag.
std::optional<bool> expected_verdict(const json& j);

// --- scripted evolution ------------------------------------------------------------

/// backend key -> scope candidate ("r0/explorer/r0-seed-3") -> response texts.
using ScriptSet = std::map<std::string, std::map<std::string, std::vector<std::string>>>;

void install(BackendRegistry& reg, const ScriptSet& scripts);
/// Writes `<dir>/<key>/<candidate>.jsonl` and returns backend specs pointing at them.
std::map<std::string, BackendSpec> write_scripts(const std::filesystem::path& dir, const ScriptSet& scripts);

/// Forward and backward scripts for `rounds` rounds of `tasks` seeds each, one task per seed.
/// Round 0 analyses follow first_round_sheet, later rounds second_round_sheet.
ScriptSet evolution_scripts(int rounds, int tasks);

/// A seed with one banked image and `nodes` explored nodes, plus organizer (a chain of
/// edges), reasoning and perception scripts with `agent_runs` runs each, for round 0.
struct GraphScenario {
    SeedState state;
    std::vector<EvidenceNode> nodes;
    ScriptSet scripts;
};
GraphScenario graph_scenario(int nodes, int agent_runs);

/// In-process evolution over evolution_scripts(rounds, tasks): forward, verify,
/// analyze, review, with the config carried from round to round.
struct EvolutionRun {
    RoundLedger ledger;
    std::vector<CandidatePool> pools;
    std::vector<RoundOutcome> outcomes;
};
/// `provider` replaces the FakeProvider, e.g. to record fixtures.
EvolutionRun run_scripted_evolution(int rounds, int tasks, std::uint64_t seed = 0,
                                    std::shared_ptr<SearchProvider> provider = nullptr);

/// Tool environment for scripted forward runs: FakeProvider plus evolution_sandbox().
ToolEnv scripted_tool_env();

// --- analytics corpus --------------------------------------------------------------

/// Six rollouts: the mountain-pass replay, answer only, search only, a chain of four
/// transforms, compute plus an aliased browse, and image search feeding later calls.
std::vector<Trace> six_trace_corpus();

/// Statistics recounted from the recorded turns alone, sharing no code with the analytics module.
struct Recount {
    std::vector<TraceStats> per_trace;
    DiversityStats diversity;
};
Recount brute_force_recount(const std::vector<Trace>& traces);

/// Sandbox transcript for the reasoning agents' python_code call.
std::shared_ptr<TranscriptSandbox> evolution_sandbox();
void write_evolution_transcript(const std::filesystem::path& path);

/// The code the reasoning agents run and its recorded stdout.
inline constexpr const char* kReasoningCode = "print(round(10/11*100))";

}  // namespace ode::testing
