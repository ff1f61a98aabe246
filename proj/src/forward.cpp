#include "ode/forward.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>

#include "ode/parallel.hpp"
#include "ode/providers.hpp"

namespace ode {

namespace {

double unit_interval(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

std::vector<std::string> string_list(const json& j, const char* key) {
    std::vector<std::string> out;
    if (!j.contains(key) || !j[key].is_array()) return out;
    for (const auto& v : j[key]) {
        if (v.is_string()) out.push_back(v.get<std::string>());
    }
    return out;
}

std::string text_field(const json& j, const char* key) {
    return j.contains(key) && j[key].is_string() ? j[key].get<std::string>() : std::string();
}

std::vector<std::string> unique(std::vector<std::string> v) {
    std::vector<std::string> out;
    for (auto& s : v) {
        if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(std::move(s));
    }
    return out;
}

// Brace matching that skips string literals. Returns the index one past the closing brace.
std::optional<std::size_t> object_end(std::string_view text, std::size_t start) {
    int depth = 0;
    bool in_string = false;
    for (std::size_t i = start; i < text.size(); ++i) {
        char c = text[i];
        if (in_string) {
            if (c == '\\') {
                ++i;
            } else if (c == '"') {
                in_string = false;
            }
        } else if (c == '"') {
            in_string = true;
        } else if (c == '{') {
            ++depth;
        } else if (c == '}') {
            if (--depth == 0) return i + 1;
        }
    }
    return std::nullopt;
}

RolloutLimits stage_limits(const SystemConfig& system, int max_steps) {
    RolloutLimits l;
    l.budget = system.limits;
    l.budget.max_calls = max_steps;
    l.decode = system.decode;
    return l;
}

std::string envelope_help() {
    return "Tools:\n" + tool_catalog() +
           "\nCall a tool with a fenced block tagged tool holding {\"name\": ..., \"args\": {...}}. Images are "
           "referenced as <image:N>.";
}

ChatResponse single_completion(ChatBackend& backend, const std::string& system_text, const std::string& user_text,
                               const SystemConfig& system, const ImageBank* bank,
                               std::vector<ImageHandle> images = {}) {
    ChatRequest req;
    req.decode = system.decode;
    req.bank = bank;
    req.messages.push_back({ChatRole::system, system_text, {}});
    req.messages.push_back({ChatRole::user, user_text, std::move(images)});
    BudgetState budget;
    budget.limits = system.limits;
    return complete(req, budget, backend);
}

std::vector<std::string> ok_call_ids(const Turn& t) {
    std::vector<std::string> out;
    for (const auto& r : t.results) {
        if (r.status == ToolStatus::ok) out.push_back(r.call_id);
    }
    return out;
}

std::vector<std::string> all_ok_calls(const Trace& tr) {
    std::vector<std::string> out;
    for (const auto& t : tr.turns) {
        auto ids = ok_call_ids(t);
        out.insert(out.end(), ids.begin(), ids.end());
    }
    return out;
}

std::vector<ImageHandle> handles_from(const json& j, const char* key) {
    std::vector<ImageHandle> out;
    for (const auto& s : string_list(j, key)) {
        auto h = parse_handle(s);
        if (!h) throw Error(ErrorKind::InvalidArgument, "'" + s + "' is not an image handle");
        out.push_back(*h);
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// schedule

std::vector<ScheduleCell> sample_schedule(const SystemConfig& system, const std::map<std::string, double>& weights,
                                          int n, std::uint64_t rng_seed) {
    if (n < 1) throw Error(ErrorKind::InvalidArgument, "schedule size must be >= 1");
    if (system.domains.empty() || system.profiles.empty()) {
        throw Error(ErrorKind::ConfigInvalid, "sampling axes are empty");
    }
    std::vector<std::pair<std::string, double>> cumulative;
    double total = 0;
    for (const auto& d : system.difficulties) {
        auto it = weights.find(d);
        double w = it == weights.end() ? 0.0 : it->second;
        if (w < 0) throw Error(ErrorKind::ConfigInvalid, "negative difficulty weight for " + d);
        total += w;
        cumulative.emplace_back(d, total);
    }
    if (total <= 0) throw Error(ErrorKind::ConfigInvalid, "difficulty weights are all zero");

    std::mt19937_64 rng(rng_seed);
    std::vector<ScheduleCell> cells;
    cells.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        ScheduleCell c;
        c.domain = system.domains[static_cast<std::size_t>(i) % system.domains.size()];
        c.profile = system.profiles[static_cast<std::size_t>(i) % system.profiles.size()];
        cells.push_back(std::move(c));
    }
    for (std::size_t i = cells.size(); i > 1; --i) {
        std::swap(cells[i - 1], cells[rng() % i]);
    }
    for (auto& c : cells) {
        double u = unit_interval(rng) * total;
        c.difficulty = cumulative.back().first;
        for (const auto& [d, cum] : cumulative) {
            if (u < cum) {
                c.difficulty = d;
                break;
            }
        }
    }
    return cells;
}

int enrichment_count(double ratio, int base_nodes) {
    return static_cast<int>(std::floor(ratio * base_nodes + 1e-9));
}

// ---------------------------------------------------------------------------
// records

json seed_to_json(const Seed& s) {
    return {{"id", s.id},
            {"entity", s.entity},
            {"entity_type", s.entity_type},
            {"image", s.image_handle.render()},
            {"image_url", s.image_url},
            {"image_source_page", s.image_source_page},
            {"supporting_sources", s.supporting_sources},
            {"why_visual", s.why_visual},
            {"multi_hop_potential", s.multi_hop_potential},
            {"rejection_risks", s.rejection_risks},
            {"cell", {{"domain", s.cell.domain}, {"profile", s.cell.profile}, {"difficulty", s.cell.difficulty}}}};
}

std::string normalize_entity(std::string_view entity) {
    auto b = entity.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    auto e = entity.find_last_not_of(" \t\r\n");
    return lower(entity.substr(b, e - b + 1));
}

std::size_t distinct_hosts(const std::vector<std::string>& urls) {
    std::set<std::string> hosts;
    for (const auto& u : urls) {
        if (auto p = parse_url(u)) {
            auto h = lower(p->host);
            if (h.rfind("www.", 0) == 0) h = h.substr(4);
            hosts.insert(h);
        }
    }
    return hosts.size();
}

json node_to_json(const EvidenceNode& n) {
    json images = json::array();
    for (const auto& h : n.image_handles) images.push_back(h.render());
    json relations = json::array();
    for (const auto& [t, l] : n.relations) relations.push_back({{"target", t}, {"label", l}});
    return {{"id", n.node_id},    {"kind", n.kind},       {"title", n.title},
            {"facts", n.facts},   {"sources", n.sources}, {"images", images},
            {"relations", relations}, {"provenance", n.provenance}, {"phase", n.phase}};
}

const EvidenceNode* EvidenceGraph::find(const std::string& node_id) const {
    for (const auto& n : nodes) {
        if (n.node_id == node_id) return &n;
    }
    return nullptr;
}

bool EvidenceGraph::connected() const {
    if (nodes.empty()) return false;
    std::set<std::string> seen{nodes.front().node_id};
    bool grew = true;
    while (grew) {
        grew = false;
        for (const auto& e : edges) {
            bool a = seen.count(e.from), b = seen.count(e.to);
            if (a != b) {
                seen.insert(a ? e.to : e.from);
                grew = true;
            }
        }
    }
    return seen.size() == nodes.size();
}

json graph_to_json(const EvidenceGraph& g) {
    json nodes = json::array(), edges = json::array();
    for (const auto& n : g.nodes) nodes.push_back(node_to_json(n));
    for (const auto& e : g.edges) edges.push_back({{"from", e.from}, {"to", e.to}, {"label", e.label}});
    return {{"seed_id", g.seed_id},
            {"nodes", nodes},
            {"edges", edges},
            {"themes", g.themes},
            {"reasoning_added", g.reasoning_added},
            {"perception_added", g.perception_added}};
}

std::optional<json> first_json_object(std::string_view text) {
    for (const auto& b : fenced_blocks(text)) {
        if (b.tag == "json" || b.tag == "final") {
            json j = json::parse(b.body, nullptr, false);
            if (!j.is_discarded() && j.is_object()) return j;
        }
    }
    for (auto open = text.find('{'); open != std::string_view::npos; open = text.find('{', open + 1)) {
        auto end = object_end(text, open);
        if (!end) continue;
        json j = json::parse(text.substr(open, *end - open), nullptr, false);
        if (!j.is_discarded() && j.is_object()) return j;
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// seed proposal

namespace {

BackendScope scope_for(const StageContext& ctx, const std::string& role, const std::string& id) {
    return {ctx.round, role, id};
}

std::string scope_id(std::size_t index) { return "seed-" + std::to_string(index); }

struct ProposerRun {
    std::optional<Seed> seed;
    ImageBank bank;
    std::string reason;
};

ProposerRun run_proposer(const ScheduleCell& cell, std::size_t index, const EvolvableConfig& config,
                         const SystemConfig& system, const StageContext& ctx) {
    ProposerRun out;
    std::string id = "r" + std::to_string(ctx.round) + "-seed-" + std::to_string(index);
    out.bank = ImageBank(id);
    std::string system_text = config.get_text("seed_proposer.strategy") + "\n\n" +
                              config.get_text("seed_proposer.default_requirement") + "\n\n" + envelope_help() +
                              "\nFinish with a fenced block tagged final holding the seed record as JSON with keys "
                              "entity, entity_type, image (an <image:N> handle), image_url, image_source_page, "
                              "supporting_sources, why_visual, multi_hop_potential, rejection_risks.";
    Task pseudo;
    pseudo.id = id;
    pseudo.question = config.get_text("seed_proposer.seed_prompt") + "\n\nTarget: seed type " + system.seed_type +
                      ", domain " + cell.domain + ", ability profile " + cell.profile + ", difficulty " +
                      cell.difficulty + ".";
    pseudo.reference_answer = "-";
    auto backend = ctx.backends->get(system.backend_for("seed_proposer"), scope_for(ctx, "seed_proposer", scope_id(index)));
    RolloutOptions opts;
    opts.system_prompt = system_text;
    opts.bank = ImageBank(id);
    opts.call_prefix = "seed";
    auto trace = run_rollout(pseudo, *backend, *ctx.tools,
                             stage_limits(system, config.get_int("seed_proposer.max_steps")), std::move(opts));
    out.bank = std::move(trace.bank);
    if (!trace.final_answer) {
        out.reason = "proposer stopped without a record (" + std::string(to_string(trace.stop_reason)) + ")";
        return out;
    }
    auto j = first_json_object("```final\n" + *trace.final_answer + "\n```");
    if (!j) {
        out.reason = "proposer record is not a JSON object";
        return out;
    }
    Seed s;
    s.id = id;
    s.cell = cell;
    s.entity = text_field(*j, "entity");
    s.entity_type = text_field(*j, "entity_type");
    s.image_url = text_field(*j, "image_url");
    s.image_source_page = text_field(*j, "image_source_page");
    s.supporting_sources = unique(string_list(*j, "supporting_sources"));
    s.why_visual = text_field(*j, "why_visual");
    s.multi_hop_potential = text_field(*j, "multi_hop_potential");
    s.rejection_risks = text_field(*j, "rejection_risks");
    auto h = parse_handle(text_field(*j, "image"));
    if (s.entity.empty()) {
        out.reason = "record has no entity";
    } else if (!h || !out.bank.contains(*h)) {
        out.reason = "record image does not resolve in the seed bank";
    } else {
        s.image_handle = *h;
        out.seed = std::move(s);
    }
    return out;
}

}  // namespace

std::vector<SeedProposal> propose_seeds(const EvolvableConfig& config, const SystemConfig& system,
                                        const std::vector<ScheduleCell>& schedule, std::set<std::string>& history,
                                        const StageContext& ctx) {
    if (schedule.empty()) throw Error(ErrorKind::InvalidArgument, "empty schedule");
    std::vector<ProposerRun> runs(schedule.size());
    parallel_for(schedule.size(), ctx.workers, [&](std::size_t i) {
        try {
            runs[i] = run_proposer(schedule[i], i, config, system, ctx);
        } catch (const Error& e) {
            runs[i].reason = e.what();
        }
    });

    // Dedup and gating are serialized so the history grows in schedule order.
    std::vector<SeedProposal> out(schedule.size());
    for (std::size_t i = 0; i < runs.size(); ++i) {
        auto& run = runs[i];
        auto& p = out[i];
        p.stage = "seed";
        if (!run.seed) {
            p.reason = run.reason;
            continue;
        }
        auto key = normalize_entity(run.seed->entity);
        if (history.count(key)) {
            p.reason = "duplicate entity '" + run.seed->entity + "'";
            continue;
        }
        if (distinct_hosts(run.seed->supporting_sources) < 2) {
            p.reason = "needs at least two independent sources";
            continue;
        }
        try {
            auto backend = ctx.backends->get(system.backend_for("seed_gate"), scope_for(ctx, "seed_gate", scope_id(i)));
            auto resp = single_completion(
                *backend,
                "You review proposed seeds. Keep a seed only if its image carries information that must be read "
                "visually and its facts are supported by at least two independent web sources. Reply with one JSON "
                "object {\"accept\": true or false, \"reason\": \"...\"}.",
                seed_to_json(*run.seed).dump(2), system, &run.bank, {run.seed->image_handle});
            auto verdict = first_json_object(resp.text);
            if (!verdict || !verdict->contains("accept") || !(*verdict)["accept"].is_boolean()) {
                p.reason = "gate reply is not a decision";
                continue;
            }
            if (!(*verdict)["accept"].get<bool>()) {
                p.reason = "gate rejected: " + text_field(*verdict, "reason");
                continue;
            }
        } catch (const Error& e) {
            p.reason = std::string("gate failed: ") + e.what();
            continue;
        }
        history.insert(key);
        p.state = SeedState{std::move(*run.seed), std::move(run.bank), {}};
    }
    return out;
}

// ---------------------------------------------------------------------------
// exploration

ExplorationResult explore_seed(SeedState& state, const EvolvableConfig& config, const SystemConfig& system,
                               const StageContext& ctx) {
    int anchors = config.get_int("explorer.params.number_of_anchors");
    int per_phase = config.get_int("explorer.params.max_nodes_per_phase");
    double image_ratio = config.get_real("explorer.params.image_ratio");

    std::string system_text =
        config.get_text("explorer.strategy") + "\n\n" + config.get_text("explorer.quality_requirements") + "\n\n" +
        config.get_text("explorer.exploration_process_prompt") + "\n\n" + envelope_help() +
        "\nRecord each node in a fenced block tagged node holding JSON with keys id, kind (entity, concept, or "
        "image), title, facts, sources, images (<image:N> handles), relations ([{\"target\", \"label\"}]). Collect at "
        "most " +
        std::to_string(anchors) + " nodes, at most " + std::to_string(per_phase) +
        " per message. At least a share of " + std::to_string(image_ratio) +
        " of the nodes must carry images. Finish with a fenced block tagged final.";
    Task pseudo;
    pseudo.id = state.seed.id + "-explore";
    pseudo.question = "Seed:\n" + seed_to_json(state.seed).dump(2);
    pseudo.reference_answer = "-";
    pseudo.initial_handles = {state.seed.image_handle};
    auto backend = ctx.backends->get(system.backend_for("explorer"), scope_for(ctx, "explorer", state.seed.id));

    std::size_t base = state.bank.size();
    RolloutOptions opts;
    opts.system_prompt = system_text;
    opts.bank = state.bank;
    opts.call_prefix = "explore";
    auto trace =
        run_rollout(pseudo, *backend, *ctx.tools, stage_limits(system, config.get_int("explorer.max_steps")), opts);
    state.bank = std::move(trace.bank);

    ExplorationResult out;
    std::vector<std::string> window;
    std::set<std::string> ids;
    for (std::size_t t = 0; t < trace.turns.size(); ++t) {
        const auto& turn = trace.turns[t];
        // Node blocks are written before this turn's calls run, so they rest on earlier calls only.
        std::size_t visible = base;
        for (std::size_t r = base; r < state.bank.size(); ++r) {
            if (state.bank.records()[r].created_turn < static_cast<int>(t)) visible = r + 1;
        }
        int accepted_here = 0;
        for (const auto& block : fenced_blocks(turn.assistant_text)) {
            if (block.tag != "node") continue;
            std::string where = "turn " + std::to_string(t) + ": ";
            if (static_cast<int>(out.nodes.size()) >= anchors) {
                out.notes.push_back(where + "node beyond number_of_anchors dropped");
                continue;
            }
            if (accepted_here >= per_phase) {
                out.notes.push_back(where + "node beyond max_nodes_per_phase dropped");
                continue;
            }
            json j = json::parse(block.body, nullptr, false);
            if (j.is_discarded() || !j.is_object()) {
                out.notes.push_back(where + "node block is not a JSON object");
                continue;
            }
            EvidenceNode n;
            n.kind = text_field(j, "kind");
            n.title = text_field(j, "title");
            n.facts = string_list(j, "facts");
            n.sources = unique(string_list(j, "sources"));
            n.provenance = window;
            n.phase = static_cast<int>(t);
            if (j.contains("relations") && j["relations"].is_array()) {
                for (const auto& r : j["relations"]) {
                    if (r.is_object()) n.relations.emplace_back(text_field(r, "target"), text_field(r, "label"));
                }
            }
            try {
                n.image_handles = handles_from(j, "images");
            } catch (const Error& e) {
                out.notes.push_back(where + e.what());
                continue;
            }
            if (n.kind != "entity" && n.kind != "concept" && n.kind != "image") {
                out.notes.push_back(where + "node kind '" + n.kind + "' is not entity, concept, or image");
                continue;
            }
            if (n.title.empty()) {
                out.notes.push_back(where + "node has no title");
                continue;
            }
            if (n.sources.size() < 2) {
                out.notes.push_back(where + "node '" + n.title + "' has fewer than two sources");
                continue;
            }
            if (n.provenance.size() < 2) {
                out.notes.push_back(where + "node '" + n.title + "' rests on fewer than two tool calls");
                continue;
            }
            if (std::any_of(n.image_handles.begin(), n.image_handles.end(),
                            [&](ImageHandle h) { return h.index >= visible; })) {
                out.notes.push_back(where + "node '" + n.title + "' references an image not in the bank");
                continue;
            }
            auto wanted = text_field(j, "id");
            n.node_id = !wanted.empty() && !ids.count(wanted) ? wanted : "n" + std::to_string(out.nodes.size() + 1);
            ids.insert(n.node_id);
            out.nodes.push_back(std::move(n));
            ++accepted_here;
        }
        if (accepted_here > 0) window.clear();
        auto calls = ok_call_ids(turn);
        window.insert(window.end(), calls.begin(), calls.end());
        for (std::size_t k = 0; k < turn.actions.size(); ++k) {
            const auto& a = turn.actions[k];
            if (a.name == "visit" || a.name == "web_fetch" || a.name == "link_reader") {
                if (turn.results[k].status == ToolStatus::ok && a.args.contains("url") && a.args["url"].is_string()) {
                    out.visited_urls.push_back(a.args["url"].get<std::string>());
                }
            }
        }
    }

    state.notes.insert(state.notes.end(), out.notes.begin(), out.notes.end());
    if (out.nodes.size() < 2) {
        throw Error(ErrorKind::ExplorationUnderfilled,
                    state.seed.id + " produced " + std::to_string(out.nodes.size()) + " valid nodes");
    }
    int with_images = static_cast<int>(std::count_if(out.nodes.begin(), out.nodes.end(),
                                                     [](const EvidenceNode& n) { return !n.image_handles.empty(); }));
    int floor_needed = enrichment_count(image_ratio, static_cast<int>(out.nodes.size()));
    if (with_images < floor_needed) {
        throw Error(ErrorKind::ImageFloorUnmet, state.seed.id + ": " + std::to_string(with_images) + " of " +
                                                    std::to_string(out.nodes.size()) + " nodes carry images, need " +
                                                    std::to_string(floor_needed));
    }
    return out;
}

// ---------------------------------------------------------------------------
// graph organization

namespace {

EvidenceNode run_enrichment(SeedState& state, const EvidenceGraph& graph, bool reasoning, int k, int of,
                            const EvolvableConfig& config, const SystemConfig& system, const StageContext& ctx) {
    const std::string role = reasoning ? "reasoning" : "perception";
    std::string prompt_path = reasoning ? "graph_organizer.complexity.reasoning_strategies_prompt"
                                        : "graph_organizer.complexity.perception_strategies_prompt";
    std::string steps_path = reasoning ? "graph_organizer.complexity.reasoning_max_steps"
                                       : "graph_organizer.complexity.perception_max_steps";
    std::string system_text =
        config.get_text(prompt_path) + "\n\n" + config.get_text("graph_organizer.complexity.enhancement_requirements") +
        "\n\n" + envelope_help() +
        "\nFinish with a fenced block tagged final holding JSON with keys title, facts, sources, images (<image:N> "
        "handles), attach_to (ids of the nodes or edge endpoints the finding connects to).";
    Task pseudo;
    pseudo.id = state.seed.id + "-" + role + "-" + std::to_string(k);
    pseudo.question = "Evidence graph:\n" + graph_to_json(graph).dump(2) + "\n\nCreate " + role + " node " +
                      std::to_string(k + 1) + " of " + std::to_string(of) + ".";
    pseudo.reference_answer = "-";
    for (const auto& n : graph.nodes) {
        pseudo.initial_handles.insert(pseudo.initial_handles.end(), n.image_handles.begin(), n.image_handles.end());
    }
    auto backend = ctx.backends->get(system.backend_for(role), scope_for(ctx, role, state.seed.id));
    RolloutOptions opts;
    opts.system_prompt = system_text;
    opts.bank = state.bank;
    opts.call_prefix = role + "-" + std::to_string(k);
    auto trace = run_rollout(pseudo, *backend, *ctx.tools, stage_limits(system, config.get_int(steps_path)), opts);
    state.bank = std::move(trace.bank);

    std::string what = role + " node " + std::to_string(k + 1) + ": ";
    if (!trace.final_answer) throw Error(ErrorKind::EnrichmentFailed, what + "agent gave no final record");
    auto j = first_json_object("```final\n" + *trace.final_answer + "\n```");
    if (!j) throw Error(ErrorKind::EnrichmentFailed, what + "final record is not JSON");
    EvidenceNode n;
    n.kind = role;
    n.node_id = (reasoning ? "r" : "p") + std::to_string(k + 1);
    n.title = text_field(*j, "title");
    n.facts = string_list(*j, "facts");
    n.sources = unique(string_list(*j, "sources"));
    n.provenance = all_ok_calls(trace);
    try {
        n.image_handles = handles_from(*j, "images");
    } catch (const Error& e) {
        throw Error(ErrorKind::EnrichmentFailed, what + e.what());
    }
    if (n.title.empty()) throw Error(ErrorKind::EnrichmentFailed, what + "no title");
    if (n.provenance.empty()) throw Error(ErrorKind::EnrichmentFailed, what + "no successful tool call");
    for (const auto& h : n.image_handles) {
        if (!state.bank.contains(h)) throw Error(ErrorKind::EnrichmentFailed, what + h.render() + " does not resolve");
    }
    for (const auto& target : string_list(*j, "attach_to")) {
        if (!graph.find(target)) throw Error(ErrorKind::EnrichmentFailed, what + "unknown attach target " + target);
        n.relations.emplace_back(target, reasoning ? "derived_from" : "cross_modal");
    }
    if (n.relations.empty()) throw Error(ErrorKind::EnrichmentFailed, what + "not attached to the graph");
    return n;
}

}  // namespace

EvidenceGraph organize_graph(SeedState& state, const std::vector<EvidenceNode>& nodes, const EvolvableConfig& config,
                             const SystemConfig& system, const StageContext& ctx) {
    if (nodes.size() < 2) throw Error(ErrorKind::ExplorationUnderfilled, "graph needs at least two nodes");
    EvidenceGraph g;
    g.seed_id = state.seed.id;
    g.nodes = nodes;

    json listing = json::array();
    for (const auto& n : nodes) listing.push_back(node_to_json(n));
    auto backend =
        ctx.backends->get(system.backend_for("graph_organizer"), scope_for(ctx, "graph_organizer", state.seed.id));
    auto resp = single_completion(
        *backend,
        config.get_text("graph_organizer.organization_strategy") +
            "\n\nReply with one JSON object {\"themes\": [...], \"edges\": [{\"from\", \"to\", \"label\"}]}. Labels: " +
            join(kEdgeLabels, ", ") + ".",
        "Nodes:\n" + listing.dump(2), system, &state.bank);
    auto j = first_json_object(resp.text);
    if (!j) throw Error(ErrorKind::DisconnectedGraph, state.seed.id + ": organizer reply is not JSON");
    g.themes = string_list(*j, "themes");
    if (j->contains("edges") && (*j)["edges"].is_array()) {
        for (const auto& e : (*j)["edges"]) {
            GraphEdge edge{text_field(e, "from"), text_field(e, "to"), text_field(e, "label")};
            if (!g.find(edge.from) || !g.find(edge.to) || edge.from == edge.to) {
                state.notes.push_back("edge " + edge.from + "->" + edge.to + " references unknown nodes");
                continue;
            }
            if (std::find(kEdgeLabels.begin(), kEdgeLabels.end(), edge.label) == kEdgeLabels.end()) {
                state.notes.push_back("edge label '" + edge.label + "' is not allowed");
                continue;
            }
            g.edges.push_back(std::move(edge));
        }
    }
    if (!g.connected()) throw Error(ErrorKind::DisconnectedGraph, state.seed.id + ": organizer left nodes unconnected");

    int base = static_cast<int>(nodes.size());
    int reasoning = enrichment_count(config.get_real("graph_organizer.complexity.reasoning_ratio"), base);
    int perception = enrichment_count(config.get_real("graph_organizer.complexity.perception_ratio"), base);
    for (int k = 0; k < reasoning; ++k) {
        auto n = run_enrichment(state, g, true, k, reasoning, config, system, ctx);
        for (const auto& [target, label] : n.relations) g.edges.push_back({n.node_id, target, label});
        g.nodes.push_back(std::move(n));
        ++g.reasoning_added;
    }
    for (int k = 0; k < perception; ++k) {
        auto n = run_enrichment(state, g, false, k, perception, config, system, ctx);
        for (const auto& [target, label] : n.relations) g.edges.push_back({n.node_id, target, label});
        g.nodes.push_back(std::move(n));
        ++g.perception_added;
    }
    return g;
}

// ---------------------------------------------------------------------------
// curation

std::vector<std::string> banned_phrases() {
    std::vector<std::string> out = {"zoom in", "search for", "use ocr", "calculate by"};
    for (auto t : kAllTools) out.emplace_back(to_string(t));
    out.emplace_back("web_fetch");
    out.emplace_back("link_reader");
    return out;
}

std::optional<std::string> filter_rejection(const std::string& question, const std::string& answer,
                                            const std::vector<ImageHandle>& images, const ImageBank& bank) {
    if (normalize_entity(question).empty()) return "empty question";
    auto a = normalize_entity(answer);
    if (a.empty()) return "empty answer";
    std::size_t words = 0;
    bool in_word = false;
    for (char c : a) {
        bool space = std::isspace(static_cast<unsigned char>(c));
        if (!space && !in_word) ++words;
        in_word = !space;
    }
    if (words > 12) return "answer longer than 12 words";
    auto q = lower(question);
    for (const auto& phrase : banned_phrases()) {
        if (q.find(phrase) != std::string::npos) return "question contains banned phrase '" + phrase + "'";
    }
    if (!parse_refs(question).empty()) return "question contains an image handle";
    for (const auto& h : images) {
        if (!bank.contains(h)) return "image reference " + h.render() + " does not resolve";
    }
    return std::nullopt;
}

CurationResult curate_tasks(SeedState& state, const EvidenceGraph& graph, const EvolvableConfig& config,
                            const SystemConfig& system, const StageContext& ctx) {
    if (!graph.connected()) throw Error(ErrorKind::DisconnectedGraph, "curation needs a connected graph");
    CurationResult out;
    std::string system_text =
        config.get_text("curator.strategy") + "\n\n" + config.get_text("curator.difficulty_control_prompt") + "\n\n" +
        config.get_text("curator.quality_requirements_prompt") +
        "\n\nReply with one JSON object {\"tasks\": [{\"question\", \"answer\", \"images\" (<image:N> handles shown "
        "to the solver), \"profile\", \"difficulty\", \"planned_steps\" ([{\"kind\", \"description\"}]), "
        "\"cluster\" (node ids)}]}.";
    std::string user_text = "Target: domain " + state.seed.cell.domain + ", profile " + state.seed.cell.profile +
                            ", difficulty " + state.seed.cell.difficulty + ".\n\nEvidence graph:\n" +
                            graph_to_json(graph).dump(2);
    auto backend = ctx.backends->get(system.backend_for("curator"), scope_for(ctx, "curator", state.seed.id));
    auto resp = single_completion(*backend, system_text, user_text, system, &state.bank);
    auto j = first_json_object(resp.text);
    if (!j || !j->contains("tasks") || !(*j)["tasks"].is_array()) {
        out.rejected.push_back({json(resp.text), "curator reply has no task list"});
        return out;
    }

    auto enhancer = ctx.backends->get(system.backend_for("enhancer"), scope_for(ctx, "enhancer", state.seed.id));
    int k = 0;
    for (const auto& draft : (*j)["tasks"]) {
        if (!draft.is_object()) {
            out.rejected.push_back({draft, "draft is not an object"});
            continue;
        }
        CurationRecord rec;
        rec.draft = draft;
        rec.cluster = string_list(draft, "cluster");
        std::string question = text_field(draft, "question");
        std::string answer = text_field(draft, "answer");
        std::vector<ImageHandle> images;
        try {
            images = handles_from(draft, "images");
        } catch (const Error& e) {
            out.rejected.push_back({draft, e.what()});
            continue;
        }
        if (auto bad = std::find_if(rec.cluster.begin(), rec.cluster.end(),
                                    [&](const std::string& id) { return !graph.find(id); });
            bad != rec.cluster.end()) {
            out.rejected.push_back({draft, "cluster references unknown node " + *bad});
            continue;
        }

        try {
            auto er = single_completion(
                *enhancer,
                config.get_text("curator.complexity_enhancement.requirements_prompt") + "\n\n" +
                    config.get_text("curator.complexity_enhancement.strategy_prompt") +
                    "\n\nReply with one JSON object {\"question\", \"answer\"}; the answer must stay the same.",
                json{{"question", question}, {"answer", answer}}.dump(2), system, &state.bank);
            auto ej = first_json_object(er.text);
            if (!ej || text_field(*ej, "question").empty()) {
                rec.notes.push_back("enhancement reply unusable; draft kept");
            } else if (normalize_entity(text_field(*ej, "answer")) != normalize_entity(answer)) {
                rec.notes.push_back("enhancement changed the answer; draft kept");
            } else {
                question = text_field(*ej, "question");
                rec.enhanced = true;
            }
        } catch (const Error& e) {
            rec.notes.push_back(std::string("enhancement failed; draft kept: ") + e.what());
        }

        if (auto why = filter_rejection(question, answer, images, state.bank)) {
            out.rejected.push_back({draft, *why});
            continue;
        }
        std::string profile = text_field(draft, "profile");
        std::replace(profile.begin(), profile.end(), '+', '_');
        if (profile.empty()) profile = state.seed.cell.profile;
        std::string difficulty = text_field(draft, "difficulty");
        if (difficulty.empty()) difficulty = state.seed.cell.difficulty;
        if (std::find(system.profiles.begin(), system.profiles.end(), profile) == system.profiles.end()) {
            out.rejected.push_back({draft, "unknown ability profile '" + profile + "'"});
            continue;
        }
        if (std::find(system.difficulties.begin(), system.difficulties.end(), difficulty) ==
            system.difficulties.end()) {
            out.rejected.push_back({draft, "unknown difficulty '" + difficulty + "'"});
            continue;
        }

        Task t;
        t.id = state.seed.id + "-t" + std::to_string(k++);
        t.question = question;
        t.reference_answer = answer;
        t.annotations.domain = state.seed.cell.domain;
        t.annotations.profile = profile;
        t.annotations.difficulty = difficulty;
        if (draft.contains("planned_steps") && draft["planned_steps"].is_array()) {
            for (const auto& s : draft["planned_steps"]) {
                if (s.is_object()) t.annotations.planned_steps.push_back({text_field(s, "kind"), text_field(s, "description")});
            }
        }
        std::vector<ImageHandle> seen;
        for (const auto& h : images) {
            if (std::find(seen.begin(), seen.end(), h) != seen.end()) continue;
            seen.push_back(h);
            const auto& r = state.bank.resolve(h);
            t.initial_handles.push_back({t.images.size()});
            t.images.push_back({r.mime, r.payload()});
        }
        rec.task_id = t.id;
        out.tasks.push_back(std::move(t));
        out.records.push_back(std::move(rec));
    }
    return out;
}

// ---------------------------------------------------------------------------
// composition

json forward_record_to_json(const ForwardRecord& r) {
    json nodes = json::array();
    for (const auto& n : r.nodes) nodes.push_back(node_to_json(n));
    return {{"seed", seed_to_json(r.seed)},
            {"nodes", nodes},
            {"graph", graph_to_json(r.graph)},
            {"curation",
             {{"task_id", r.curation.task_id},
              {"draft", r.curation.draft},
              {"enhanced", r.curation.enhanced},
              {"cluster", r.curation.cluster},
              {"notes", r.curation.notes}}}};
}

namespace {

std::string histogram_text(const std::map<std::string, int>& h) {
    json j = h;
    return j.dump();
}

}  // namespace

EmptyPoolError::EmptyPoolError(std::map<std::string, int> histogram)
    : Error(ErrorKind::EmptyPool, "every seed failed; stage failures " + histogram_text(histogram)),
      histogram_(std::move(histogram)) {}

CandidatePool run_forward(const EvolvableConfig& config, const SystemConfig& system, int n_seeds,
                          std::set<std::string>& history, const StageContext& ctx, std::uint64_t rng_seed) {
    if (n_seeds < 1) throw Error(ErrorKind::InvalidArgument, "n_seeds must be >= 1");
    auto schedule = sample_schedule(system, config.difficulty_weights(), n_seeds, rng_seed);
    auto proposals = propose_seeds(config, system, schedule, history, ctx);

    CandidatePool pool;
    pool.round = ctx.round;
    struct SeedOutput {
        std::vector<Task> tasks;
        std::vector<ForwardRecord> records;
        std::string failed_stage;
        std::vector<std::string> notes;
    };
    std::vector<SeedOutput> outputs(proposals.size());
    parallel_for(proposals.size(), ctx.workers, [&](std::size_t i) {
        auto& p = proposals[i];
        auto& o = outputs[i];
        if (!p.state) {
            o.failed_stage = "seed";
            o.notes.push_back("seed-" + std::to_string(i) + ": " + p.reason);
            return;
        }
        auto& st = *p.state;
        std::string stage = "explorer";
        try {
            auto explored = explore_seed(st, config, system, ctx);
            stage = "graph_organizer";
            auto graph = organize_graph(st, explored.nodes, config, system, ctx);
            stage = "curator";
            auto cur = curate_tasks(st, graph, config, system, ctx);
            for (const auto& r : cur.rejected) o.notes.push_back(st.seed.id + ": draft rejected: " + r.reason);
            if (cur.tasks.empty()) {
                o.failed_stage = "curator";
                return;
            }
            for (std::size_t k = 0; k < cur.tasks.size(); ++k) {
                o.records.push_back({st.seed, explored.nodes, graph, cur.records[k]});
                o.tasks.push_back(std::move(cur.tasks[k]));
            }
        } catch (const Error& e) {
            o.failed_stage = stage;
            o.notes.push_back(st.seed.id + ": " + e.what());
        }
        for (const auto& n : st.notes) o.notes.push_back(st.seed.id + ": " + n);
    });

    for (auto& o : outputs) {
        if (!o.failed_stage.empty()) pool.failures[o.failed_stage]++;
        pool.notes.insert(pool.notes.end(), o.notes.begin(), o.notes.end());
        for (std::size_t k = 0; k < o.tasks.size(); ++k) {
            pool.provenance[o.tasks[k].id] = std::move(o.records[k]);
            pool.tasks.push_back(std::move(o.tasks[k]));
        }
    }
    if (pool.tasks.empty()) throw EmptyPoolError(pool.failures);
    return pool;
}

json pool_to_json(const CandidatePool& pool, const std::filesystem::path& image_dir) {
    json tasks = json::array();
    json provenance = json::object();
    for (const auto& t : pool.tasks) {
        tasks.push_back(task_to_json(t, image_dir));
        auto it = pool.provenance.find(t.id);
        if (it != pool.provenance.end()) {
            json rec = forward_record_to_json(it->second);
            provenance[t.id] = {{"digest", sha256_hex(rec.dump())}, {"record", rec}};
        }
    }
    return {{"round", pool.round},
            {"tasks", tasks},
            {"provenance", provenance},
            {"failures", pool.failures},
            {"notes", pool.notes}};
}

}  // namespace ode
