#include "ode/analytics.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "ode/digest.hpp"
#include "ode/tools.hpp"

namespace ode {

namespace {

void collect_refs(const json& j, std::vector<ImageHandle>& out) {
    if (j.is_string()) {
        for (auto h : parse_refs(j.get_ref<const std::string&>())) out.push_back(h);
    } else if (j.is_structured()) {
        for (const auto& v : j) collect_refs(v, out);
    }
}

std::string canonical(const std::string& name) {
    auto t = normalize_tool_name(name);
    return t ? std::string(to_string(*t)) : name;
}

std::map<std::string, double> shares(const std::map<std::string, int>& counts, int total) {
    std::map<std::string, double> out;
    for (const auto& [k, c] : counts) out[k] = static_cast<double>(c) / total;
    return out;
}

std::string fmt(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << v;
    return os.str();
}

}  // namespace

std::vector<ImageHandle> consumed_handles(const ToolCall& call, const ImageBank& bank) {
    std::vector<ImageHandle> refs;
    collect_refs(call.args, refs);
    std::vector<ImageHandle> out;
    for (auto h : refs) {
        if (bank.contains(h)) out.push_back(h);
    }
    return out;
}

TraceStats trace_behavior_stats(const Trace& trace) {
    TraceStats s;
    for (const auto& r : trace.bank.records()) {
        if (r.origin.is_tool()) ++s.dynamic_images;
    }
    for (const auto& turn : trace.turns) {
        for (const auto& call : turn.actions) {
            ++s.tool_calls;
            auto used = consumed_handles(call, trace.bank);
            if (!used.empty()) ++s.image_input_calls;
            for (auto h : used) {
                if (trace.bank.resolve(h).origin.is_tool()) {
                    ++s.secondary_reuse_count;
                    s.reuse_by_tool[canonical(call.name)]++;
                }
            }
        }
    }
    return s;
}

FamilyMap default_family_map() {
    return {{"web_search", "search"}, {"image_search", "search"}, {"scholar_search", "search"},
            {"visual_search", "search"}, {"visit", "browse"},     {"zoom_in", "visual"},
            {"rotation", "visual"},      {"flip", "visual"},      {"python_code", "compute"}};
}

std::vector<std::string> tool_chain(const Trace& trace) {
    std::vector<std::string> chain;
    for (const auto& turn : trace.turns) {
        for (const auto& call : turn.actions) chain.push_back(canonical(call.name));
    }
    return chain;
}

std::set<std::string> tool_family(const Trace& trace, const FamilyMap& families) {
    std::set<std::string> out;
    for (const auto& name : tool_chain(trace)) {
        auto it = families.find(name);
        out.insert(it == families.end() ? name : it->second);
    }
    return out;
}

DiversityStats diversity_stats(const std::vector<Trace>& traces, const FamilyMap& families) {
    DiversityStats s;
    s.traces = static_cast<int>(traces.size());
    if (traces.empty()) return s;
    std::set<std::vector<std::string>> chains;
    std::set<std::set<std::string>> fams;
    int with_images = 0, four_plus = 0, two_calls = 0, vis_search = 0;
    for (const auto& t : traces) {
        auto chain = tool_chain(t);
        auto fam = tool_family(t, families);
        auto stats = trace_behavior_stats(t);
        chains.insert(chain);
        fams.insert(fam);
        if (stats.dynamic_images >= 1) ++with_images;
        if (stats.dynamic_images >= 4) ++four_plus;
        if (chain.size() >= 2) ++two_calls;
        if (fam.count("visual") && (fam.count("search") || fam.count("browse"))) ++vis_search;
    }
    double n = static_cast<double>(traces.size());
    s.distinct_chains = static_cast<int>(chains.size());
    s.distinct_families = static_cast<int>(fams.size());
    s.with_tool_images_share = with_images / n;
    s.four_plus_images_share = four_plus / n;
    s.two_plus_calls_share = two_calls / n;
    s.visual_plus_search_share = vis_search / n;
    return s;
}

std::string step_bucket(std::size_t steps) {
    if (steps <= 2) return "1-2";
    if (steps <= 4) return "3-4";
    if (steps <= 6) return "5-6";
    if (steps <= 8) return "7-8";
    return "9+";
}

DatasetStats dataset_stats(const std::vector<Task>& tasks) {
    DatasetStats s;
    s.tasks = static_cast<int>(tasks.size());
    for (const auto& b : kStepBuckets) s.step_buckets[b] = 0.0;
    if (tasks.empty()) return s;
    std::map<std::string, int> domains, difficulties, buckets;
    double steps = 0;
    for (const auto& t : tasks) {
        domains[t.annotations.domain]++;
        difficulties[t.annotations.difficulty]++;
        buckets[step_bucket(t.annotations.planned_steps.size())]++;
        steps += static_cast<double>(t.annotations.planned_steps.size());
    }
    s.domain_shares = shares(domains, s.tasks);
    s.difficulty_shares = shares(difficulties, s.tasks);
    for (const auto& [b, share] : shares(buckets, s.tasks)) s.step_buckets[b] = share;
    s.mean_planned_steps = steps / s.tasks;

    // std/mean of the shares equals std/mean of the counts; integer sums keep a uniform pool at exactly 0
    long long k = static_cast<long long>(domains.size()), sum_sq = 0;
    for (const auto& [_, c] : domains) sum_sq += static_cast<long long>(c) * c;
    long long total = s.tasks;
    s.domain_cv = std::sqrt(static_cast<double>(k * sum_sq - total * total)) / static_cast<double>(total);
    return s;
}

json trace_stats_to_json(const TraceStats& s) {
    return {{"tool_calls", s.tool_calls},
            {"dynamic_images", s.dynamic_images},
            {"image_input_calls", s.image_input_calls},
            {"secondary_reuse_count", s.secondary_reuse_count},
            {"reuse_by_tool", s.reuse_by_tool}};
}

json diversity_to_json(const DiversityStats& s) {
    return {{"traces", s.traces},
            {"distinct_chains", s.distinct_chains},
            {"distinct_families", s.distinct_families},
            {"with_tool_images_share", s.with_tool_images_share},
            {"four_plus_images_share", s.four_plus_images_share},
            {"two_plus_calls_share", s.two_plus_calls_share},
            {"visual_plus_search_share", s.visual_plus_search_share}};
}

json dataset_stats_to_json(const DatasetStats& s) {
    return {{"tasks", s.tasks},
            {"domain_shares", s.domain_shares},
            {"domain_cv", s.domain_cv},
            {"difficulty_shares", s.difficulty_shares},
            {"step_buckets", s.step_buckets},
            {"mean_planned_steps", s.mean_planned_steps}};
}

namespace {

struct Table {
    std::string name;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::string text() const {
        std::vector<std::size_t> width(header.size(), 0);
        auto grow = [&](const std::vector<std::string>& r) {
            for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
        };
        grow(header);
        for (const auto& r : rows) grow(r);
        std::ostringstream os;
        os << "== " << name << " ==\n";
        auto line = [&](const std::vector<std::string>& r) {
            for (std::size_t i = 0; i < r.size(); ++i) {
                os << std::left << std::setw(static_cast<int>(width[i]) + 2) << r[i];
            }
            os << "\n";
        };
        line(header);
        for (const auto& r : rows) line(r);
        return os.str();
    }

    std::string tsv() const {
        std::string out;
        auto line = [&](const std::vector<std::string>& r) {
            for (std::size_t i = 0; i < r.size(); ++i) out += (i ? "\t" : "") + r[i];
            out += "\n";
        };
        line(header);
        for (const auto& r : rows) line(r);
        return out;
    }
};

std::vector<Table> build_tables(const std::vector<Trace>& traces, const std::vector<Task>& tasks,
                                const FamilyMap& families) {
    std::vector<Table> out;
    if (!traces.empty()) {
        Table per{"trace_behavior", {"task_id", "tool_calls", "dynamic_images", "image_input_calls",
                                     "secondary_reuse", "reuse_by_tool"}, {}};
        for (const auto& t : traces) {
            auto s = trace_behavior_stats(t);
            std::string reuse;
            for (const auto& [k, v] : s.reuse_by_tool) reuse += (reuse.empty() ? "" : ",") + k + "=" + std::to_string(v);
            per.rows.push_back({t.task_id, std::to_string(s.tool_calls), std::to_string(s.dynamic_images),
                                std::to_string(s.image_input_calls), std::to_string(s.secondary_reuse_count),
                                reuse.empty() ? "-" : reuse});
        }
        out.push_back(per);
        auto d = diversity_stats(traces, families);
        out.push_back({"diversity",
                       {"metric", "value"},
                       {{"traces", std::to_string(d.traces)},
                        {"distinct_chains", std::to_string(d.distinct_chains)},
                        {"distinct_families", std::to_string(d.distinct_families)},
                        {"with_tool_images_share", fmt(d.with_tool_images_share)},
                        {"four_plus_images_share", fmt(d.four_plus_images_share)},
                        {"two_plus_calls_share", fmt(d.two_plus_calls_share)},
                        {"visual_plus_search_share", fmt(d.visual_plus_search_share)}}});
        std::map<std::string, int> fam_counts;
        for (const auto& t : traces) {
            std::string key;
            for (const auto& f : tool_family(t, families)) key += (key.empty() ? "" : "+") + f;
            fam_counts[key.empty() ? "none" : key]++;
        }
        Table fam{"families", {"family", "traces"}, {}};
        for (const auto& [k, c] : fam_counts) fam.rows.push_back({k, std::to_string(c)});
        out.push_back(fam);
    }
    if (!tasks.empty()) {
        auto s = dataset_stats(tasks);
        Table dom{"domains", {"domain", "share"}, {}};
        for (const auto& [k, v] : s.domain_shares) dom.rows.push_back({k, fmt(v)});
        dom.rows.push_back({"cv", fmt(s.domain_cv)});
        out.push_back(dom);
        Table diff{"difficulty", {"difficulty", "share"}, {}};
        for (const auto& [k, v] : s.difficulty_shares) diff.rows.push_back({k, fmt(v)});
        out.push_back(diff);
        Table steps{"step_buckets", {"bucket", "share"}, {}};
        for (const auto& b : kStepBuckets) steps.rows.push_back({b, fmt(s.step_buckets.at(b))});
        steps.rows.push_back({"mean", fmt(s.mean_planned_steps)});
        out.push_back(steps);
    }
    return out;
}

}  // namespace

std::string render_report(const std::vector<Trace>& traces, const std::vector<Task>& tasks,
                          const FamilyMap& families) {
    std::string out;
    for (const auto& t : build_tables(traces, tasks, families)) out += t.text() + "\n";
    return out;
}

void write_report(const std::filesystem::path& dir, const std::vector<Trace>& traces, const std::vector<Task>& tasks,
                  const FamilyMap& families) {
    json plot = {{"series", json::array()}};
    for (const auto& t : build_tables(traces, tasks, families)) {
        write_file_atomic(dir / (t.name + ".tsv"), t.tsv());
        json series = {{"name", t.name}, {"x_label", t.header[0]}, {"y_label", t.header[1]}, {"points", json::array()}};
        for (const auto& r : t.rows) series["points"].push_back({r[0], r[1]});
        plot["series"].push_back(series);
    }
    write_file_atomic(dir / "report.txt", render_report(traces, tasks, families));
    write_file_atomic(dir / "plot.json", plot.dump(2) + "\n");
}

}  // namespace ode
