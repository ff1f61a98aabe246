#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ode/error.hpp"
#include "ode/image_bank.hpp"
#include "ode/llm_gateway.hpp"
#include "ode/ode_config.hpp"
#include "ode/rollout.hpp"
#include "ode/tools.hpp"

namespace ode {

using nlohmann::json;

struct ScheduleCell {
    std::string domain;
    std::string profile;
    std::string difficulty;
    friend bool operator==(const ScheduleCell&, const ScheduleCell&) = default;
};

/// Domains cycle with period 11 and profiles with period 4, so every block of 44
/// covers each (domain, profile) pair once; the order is then shuffled. Difficulty
/// is drawn from `weights`. Deterministic in `rng_seed` on every platform.
std::vector<ScheduleCell> sample_schedule(const SystemConfig& system, const std::map<std::string, double>& weights,
                                          int n, std::uint64_t rng_seed);

/// floor(ratio * n) with a 1e-9 guard so that 0.5 * 6 stays 3 under rounding noise.
int enrichment_count(double ratio, int base_nodes);

struct Seed {
    std::string id;
    std::string entity;
    std::string entity_type;
    ImageHandle image_handle;
    std::string image_url;
    std::string image_source_page;
    std::vector<std::string> supporting_sources;
    std::string why_visual;
    std::string multi_hop_potential;
    std::string rejection_risks;
    ScheduleCell cell;
};

json seed_to_json(const Seed& s);

/// Case-folded, whitespace-trimmed entity string used for deduplication.
std::string normalize_entity(std::string_view entity);

/// Number of distinct hosts among `urls` (unparseable URLs are ignored).
std::size_t distinct_hosts(const std::vector<std::string>& urls);

struct EvidenceNode {
    std::string node_id;
    std::string kind;  // entity | concept | image | reasoning | perception
    std::string title;
    std::vector<std::string> facts;
    std::vector<std::string> sources;
    std::vector<ImageHandle> image_handles;
    std::vector<std::pair<std::string, std::string>> relations;  // (target node_id, label)
    std::vector<std::string> provenance;                         // tool call ids
    int phase = -1;                                              // explorer turn that emitted the node
};

json node_to_json(const EvidenceNode& n);

inline const std::vector<std::string> kEdgeLabels = {"supports",    "explains",     "extends",    "exemplifies",
                                                     "realizes",    "derived_from", "cross_modal"};

struct GraphEdge {
    std::string from;
    std::string to;
    std::string label;
};

struct EvidenceGraph {
    std::string seed_id;
    std::vector<EvidenceNode> nodes;
    std::vector<GraphEdge> edges;
    std::vector<std::string> themes;
    int reasoning_added = 0;
    int perception_added = 0;

    const EvidenceNode* find(const std::string& node_id) const;
    /// Every node reachable from nodes[0] over edges taken in either direction.
    bool connected() const;
};

json graph_to_json(const EvidenceGraph& g);

/// Work area for one seed: the seed and its image bank, shared by all forward stages.
struct SeedState {
    Seed seed;
    ImageBank bank;
    std::vector<std::string> notes;
};

/// Shared resources for the forward stages.
struct StageContext {
    BackendRegistry* backends = nullptr;
    const ToolEnv* tools = nullptr;
    int round = 0;
    int workers = 1;
};

struct SeedProposal {
    std::optional<SeedState> state;  // set when accepted
    std::string stage;               // where it failed: "seed"
    std::string reason;
};

/// One proposer rollout per cell, then duplicate removal against `history` (which
/// accepted entities are appended to), then the gate: at least two distinct source
/// hosts, then an LLM check answering {"accept": bool, "reason": str}.
std::vector<SeedProposal> propose_seeds(const EvolvableConfig& config, const SystemConfig& system,
                                        const std::vector<ScheduleCell>& schedule, std::set<std::string>& history,
                                        const StageContext& ctx);

struct ExplorationResult {
    std::vector<EvidenceNode> nodes;
    std::vector<std::string> visited_urls;
    std::vector<std::string> notes;
};

/// Explorer rollout emitting ```node blocks. A phase is one explorer turn: at most
/// max_nodes_per_phase nodes per turn and number_of_anchors in total. Throws
/// ExplorationUnderfilled (< 2 nodes) or ImageFloorUnmet.
ExplorationResult explore_seed(SeedState& state, const EvolvableConfig& config, const SystemConfig& system,
                               const StageContext& ctx);

/// Edges from the organizer, then floor-ratio reasoning and perception enrichment
/// agents. Throws DisconnectedGraph or EnrichmentFailed.
EvidenceGraph organize_graph(SeedState& state, const std::vector<EvidenceNode>& nodes, const EvolvableConfig& config,
                             const SystemConfig& system, const StageContext& ctx);

struct CurationRecord {
    std::string task_id;
    json draft;
    bool enhanced = false;
    std::vector<std::string> cluster;
    std::vector<std::string> notes;
};

struct RejectedDraft {
    json draft;
    std::string reason;
};

struct CurationResult {
    std::vector<Task> tasks;
    std::vector<CurationRecord> records;  // aligned with tasks
    std::vector<RejectedDraft> rejected;
};

/// The procedural phrases a question may not contain: the fixed list plus every tool name and alias.
std::vector<std::string> banned_phrases();

/// Reason the draft fails the filter, or nullopt when it passes.
std::optional<std::string> filter_rejection(const std::string& question, const std::string& answer,
                                            const std::vector<ImageHandle>& images, const ImageBank& bank);

CurationResult curate_tasks(SeedState& state, const EvidenceGraph& graph, const EvolvableConfig& config,
                            const SystemConfig& system, const StageContext& ctx);

/// Seed, nodes, graph, and curation record behind one task.
struct ForwardRecord {
    Seed seed;
    std::vector<EvidenceNode> nodes;
    EvidenceGraph graph;
    CurationRecord curation;
};

json forward_record_to_json(const ForwardRecord& r);

struct CandidatePool {
    int round = 0;
    std::vector<Task> tasks;
    std::map<std::string, ForwardRecord> provenance;
    std::map<std::string, int> failures;  // stage -> count
    std::vector<std::string> notes;
};

/// Thrown by run_forward when no task survives.
class EmptyPoolError : public Error {
public:
    EmptyPoolError(std::map<std::string, int> histogram);
    const std::map<std::string, int>& histogram() const { return histogram_; }

private:
    std::map<std::string, int> histogram_;
};

CandidatePool run_forward(const EvolvableConfig& config, const SystemConfig& system, int n_seeds,
                          std::set<std::string>& history, const StageContext& ctx, std::uint64_t rng_seed);

/// Pool document: tasks with image digests plus provenance; images go to `image_dir`.
json pool_to_json(const CandidatePool& pool, const std::filesystem::path& image_dir);

/// First JSON object in `text`: a ```json or ```final block if present, else the
/// first balanced {...} that parses.
std::optional<json> first_json_object(std::string_view text);

}  // namespace ode
