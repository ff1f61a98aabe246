#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ode/rollout.hpp"

namespace ode {

using nlohmann::json;

struct TraceStats {
    int tool_calls = 0;
    /// Bank records produced by a tool.
    int dynamic_images = 0;
    /// Calls whose arguments reference at least one banked handle.
    int image_input_calls = 0;
    /// (call, handle) consumptions where the handle came from a tool.
    int secondary_reuse_count = 0;
    std::map<std::string, int> reuse_by_tool;  // consuming tool -> count
};

TraceStats trace_behavior_stats(const Trace& trace);

/// Handles referenced anywhere in the call's string arguments that exist in `bank`.
std::vector<ImageHandle> consumed_handles(const ToolCall& call, const ImageBank& bank);

/// tool name -> strategy class
using FamilyMap = std::map<std::string, std::string>;

/// search, browse, visual and compute classes over the nine tools.
FamilyMap default_family_map();

struct DiversityStats {
    int traces = 0;
    int distinct_chains = 0;
    int distinct_families = 0;
    double with_tool_images_share = 0.0;
    double four_plus_images_share = 0.0;
    double two_plus_calls_share = 0.0;
    /// visual class together with search or browse.
    double visual_plus_search_share = 0.0;
};

/// Ordered tool names of every call in the trace.
std::vector<std::string> tool_chain(const Trace& trace);
/// Set of classes present; tools missing from the map are their own class.
std::set<std::string> tool_family(const Trace& trace, const FamilyMap& families);

DiversityStats diversity_stats(const std::vector<Trace>& traces, const FamilyMap& families = default_family_map());

inline const std::vector<std::string> kStepBuckets = {"1-2", "3-4", "5-6", "7-8", "9+"};

/// Bucket label for a planned-step count; counts below 1 fall in the first bucket.
std::string step_bucket(std::size_t steps);

struct DatasetStats {
    int tasks = 0;
    std::map<std::string, double> domain_shares;
    /// Population std / mean of the observed domain shares.
    double domain_cv = 0.0;
    std::map<std::string, double> difficulty_shares;
    std::map<std::string, double> step_buckets;
    double mean_planned_steps = 0.0;
};

DatasetStats dataset_stats(const std::vector<Task>& tasks);

json trace_stats_to_json(const TraceStats& s);
json diversity_to_json(const DiversityStats& s);
json dataset_stats_to_json(const DatasetStats& s);

/// Plain-text tables for every metric. Either input may be empty.
std::string render_report(const std::vector<Trace>& traces, const std::vector<Task>& tasks,
                          const FamilyMap& families = default_family_map());

/// report.txt, one .tsv per metric table, and plot.json (series and axis labels).
void write_report(const std::filesystem::path& dir, const std::vector<Trace>& traces, const std::vector<Task>& tasks,
                  const FamilyMap& families = default_family_map());

}  // namespace ode
