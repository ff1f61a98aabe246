#include "support/support.hpp"

#include <random>
#include <regex>
#include <set>
#include <sstream>

#include "ode/digest.hpp"
#include "ode/raster.hpp"

namespace ode::testing {

namespace fs = std::filesystem;

TempDir::TempDir() {
    std::random_device rd;
    for (;;) {
        auto p = fs::temp_directory_path() / ("ode-test-" + std::to_string(rd()) + std::to_string(rd()));
        if (fs::create_directory(p)) {
            path_ = p;
            return;
        }
    }
}

TempDir::~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
}

Bytes test_png(int width, int height, int tint) {
    Raster r;
    r.width = width;
    r.height = height;
    r.channels = 3;
    r.pixels.resize(static_cast<std::size_t>(width) * height * 3);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            auto* p = r.at(x, y);
            p[0] = static_cast<std::uint8_t>(x * 7 + tint);
            p[1] = static_cast<std::uint8_t>(y * 5 + tint * 3);
            p[2] = static_cast<std::uint8_t>(x + y + tint * 11);
        }
    }
    return encode_image(r, "image/png");
}

std::string tool_block(const std::string& name, const json& args) {
    return "```tool\n" + json{{"name", name}, {"args", args}}.dump() + "\n```\n";
}

std::string final_block(const std::string& body) { return "```final\n" + body + "\n```\n"; }

std::shared_ptr<ScriptedBackend> scripted(const std::vector<std::string>& texts, std::string label) {
    std::vector<ScriptEntry> entries;
    for (const auto& t : texts) entries.push_back({t, std::nullopt});
    return std::make_shared<ScriptedBackend>(std::move(entries), std::move(label));
}

namespace {

int tint_of(std::string_view text) { return std::stoi(sha256_hex(text).substr(0, 2), nullptr, 16); }

}  // namespace

TextSearchResponse FakeProvider::text_search(std::string_view kind, const std::string& query) {
    ++calls;
    if (auto it = text_answers.find(query); it != text_answers.end()) return it->second;
    TextSearchResponse r;
    const char* hosts[] = {"https://www.archive.example.org/", "https://museum.example.net/", "https://data.example.com/"};
    for (int i = 0; i < 3; ++i) {
        r.results.push_back({std::string(kind) + " hit " + std::to_string(i + 1) + " for " + query,
                             hosts[i] + std::to_string(tint_of(query)) + "/" + std::to_string(i),
                             "Snippet " + std::to_string(i + 1) + " about " + query + "."});
    }
    return r;
}

ImageQueryResponse FakeProvider::image_query(std::string_view kind, const ImageQueryInput& input) {
    ++calls;
    if (auto it = visual_answers.find(std::string(kind)); it != visual_answers.end()) return it->second;
    std::string key = input.image ? sha256_hex(*input.image) : input.query;
    ImageQueryResponse r;
    r.matches.push_back({"Match for " + key.substr(0, 12), "https://images.example.org/" + key.substr(0, 8),
                         "A page showing the queried image."});
    for (int i = 0; i < images_per_query_; ++i) {
        r.images.push_back({"Result " + std::to_string(i + 1), "https://images.example.org/" + key.substr(0, 8) + "/" +
                                                                   std::to_string(i),
                            "image/png", test_png(40, 30, tint_of(key) + i)});
    }
    return r;
}

PageResponse FakeProvider::fetch(const std::string& url) {
    ++calls;
    return {"Page text of " + url + ". The chart lists the channel depth and the adjacent terminal."};
}

// ---------------------------------------------------------------------------

Task mountain_pass_task() {
    Task t;
    t.id = "mountain-pass";
    t.question = "What is the location?";
    t.reference_answer = "Zheduo Mountain Pass";
    t.annotations = {"geography", "perception_search", "medium",
                     {{"perception", "crop the mountain region"},
                      {"search", "reverse-search the crop"},
                      {"search", "verify the candidate name"},
                      {"perception", "read the labelled answer"}}};
    t.images.push_back({"image/png", std::make_shared<const Bytes>(test_png(64, 48, 5))});
    t.initial_handles = {{0}};
    return t;
}

std::shared_ptr<FakeProvider> mountain_pass_provider() {
    auto p = std::make_shared<FakeProvider>();
    ImageQueryResponse vs;
    vs.matches = {{"Zheduo Mountain Pass - Wikipedia", "https://en.wikipedia.org/wiki/Zheduo_Mountain",
                   "Zheduo Mountain Pass (4,298 m) lies on China National Highway 318 west of Kangding."},
                  {"Kangding travel photos", "https://travel.example.com/kangding", "Prayer flags above the road."}};
    vs.images = {{"Candidate view", "https://travel.example.com/kangding/1.png", "image/png", test_png(48, 36, 17)},
                 {"Clearer photo with sign", "https://travel.example.com/kangding/2.png", "image/png",
                  test_png(80, 60, 29)}};
    p->visual_answers["visual_search"] = vs;
    p->text_answers["Zheduo Mountain Pass Sichuan"] = {
        {{"Zheduo Mountain - Wikipedia", "https://en.wikipedia.org/wiki/Zheduo_Mountain",
          "Zheduo Mountain Pass is a pass in Garze, Sichuan, on National Highway 318."},
         {"G318 pass list", "https://roads.example.org/g318", "Passes: Zheduo, Gaoersi, Jianziwan."}}};
    return p;
}

std::vector<std::string> mountain_pass_script() {
    return {
        "The mountain region is small. Crop it first.\n" +
            tool_block("zoom_in", {{"image", "<image:0>"}, {"box", {0.25, 0.1, 0.75, 0.6}}}),
        "Search with the crop.\n" + tool_block("visual_search", {{"image", "<image:1>"}}),
        "Candidate: Zheduo Mountain Pass. Verify it.\n" +
            tool_block("web_search", {{"query", "Zheduo Mountain Pass Sichuan"}}),
        "Read the sign on the clearer photo.\n" +
            tool_block("zoom_in", {{"image", "<image:3>"}, {"box", {0.0, 0.6, 0.5, 1.0}}}),
        "The sign reads the pass name.\n" + final_block("Zheduo Mountain Pass"),
    };
}

// ---------------------------------------------------------------------------

std::vector<ConfigPatch> first_update_patches() {
    return {
        ConfigPatch::update("seed_proposer.max_steps", 10, "seed_proposer moderate: identity lock needs more steps"),
        ConfigPatch::update("explorer.params.image_ratio", 0.40, "explorer severe: thin per-node visual evidence"),
        ConfigPatch::update("graph_organizer.complexity.reasoning_max_steps", 6,
                            "graph_organizer moderate: enrichment headroom"),
        ConfigPatch::update("graph_organizer.complexity.perception_max_steps", 5,
                            "graph_organizer moderate: missing perception enrichment"),
    };
}

std::vector<ConfigPatch> second_update_patches() {
    return {
        ConfigPatch::update("explorer.params.max_nodes_per_phase", 1, "too_hard dominates: deeper, slower traversal"),
        ConfigPatch::update("explorer.params.image_ratio", 0.50, "failure traces to image-poor nodes"),
        ConfigPatch::update("graph_organizer.complexity.reasoning_max_steps", 7, "graph_organizer moderate"),
        ConfigPatch::update("graph_organizer.complexity.perception_max_steps", 6, "graph_organizer moderate"),
    };
}

std::string analyzer_reply(const RubricSpec& spec, const ScoreSheet& sheet) {
    json scores = json::object(), why = json::object();
    for (std::size_t i = 0; i < spec.dimensions.size() && i < sheet.scores.size(); ++i) {
        scores[spec.dimensions[i].name] = sheet.scores[i];
        why[spec.dimensions[i].name] = "score " + std::to_string(sheet.scores[i]);
    }
    json attributions = json::array();
    for (const auto& a : sheet.attributions) {
        attributions.push_back({{"stage", a.stage},
                                {"severity", a.severity},
                                {"note", a.note},
                                {"affected_dimensions", a.affected_dimensions}});
    }
    json j = {{"scores", scores}, {"justifications", why}, {"stage_attributions", attributions}};
    if (!sheet.tag.empty()) j["difficulty_tag"] = sheet.tag;
    return "Scoring follows.\n```json\n" + j.dump(2) + "\n```\n";
}

ScoreSheet first_round_sheet() {
    return {{4, 5, 3, 5, 5, 3, 3},
            "good_match",
            {{"seed_proposer", "moderate", "identity and provenance not locked to one artifact",
              {"Difficulty_Match", "Learning_Utility", "Visual_Dependency", "Verifiability"}},
             {"explorer", "severe", "six thin nodes, no zoom-validated extractables",
              {"Information_Complexity", "Visual_Dependency", "Capability_Requirement"}},
             {"graph_organizer", "moderate", "no perception enrichment for legend categories",
              {"Visual_Dependency", "Capability_Requirement"}},
             {"curator", "moderate", "evidence chain rests on a low-resolution count",
              {"Verifiability", "Difficulty_Match"}}}};
}

ScoreSheet second_round_sheet() {
    return {{5, 5, 3, 5, 5, -3, 3},
            "too_hard",
            {{"explorer", "severe", "too many shallow nodes per phase", {"Difficulty_Match"}},
             {"graph_organizer", "moderate", "enrichment ran out of steps", {"Capability_Requirement"}}}};
}

std::string judge_reply(bool correct) {
    json j = {{"correct", correct ? "yes" : "no"},
              {"equivalence", correct ? "exact" : "wrong"},
              {"reason", correct ? "names the same terminal" : "a different terminal"}};
    return j.dump();
}

// ---------------------------------------------------------------------------

void install(BackendRegistry& reg, const ScriptSet& scripts) {
    for (const auto& [key, by_scope] : scripts) {
        for (const auto& [scope, texts] : by_scope) {
            std::vector<ScriptEntry> entries;
            for (const auto& t : texts) entries.push_back({t, std::nullopt});
            reg.add_scoped(key, scope, std::make_shared<ScriptedBackend>(std::move(entries), scope));
        }
    }
}

std::map<std::string, BackendSpec> write_scripts(const fs::path& dir, const ScriptSet& scripts) {
    std::map<std::string, BackendSpec> specs;
    for (const auto& [key, by_scope] : scripts) {
        for (const auto& [scope, texts] : by_scope) {
            std::string body;
            for (const auto& t : texts) body += json(t).dump() + "\n";
            write_file_atomic(dir / key / (scope + ".jsonl"), body);
        }
        BackendSpec spec;
        spec.type = "scripted";
        spec.path = dir / key;
        specs[key] = spec;
    }
    return specs;
}

namespace {

std::string r(int round) { return "r" + std::to_string(round); }

json node(const std::string& id, const std::string& kind, const std::string& title, const json& images) {
    return {{"id", id},
            {"kind", kind},
            {"title", title},
            {"facts", {title + " is documented in two sources."}},
            {"sources", {"https://www.archive.example.org/" + id, "https://museum.example.net/" + id}},
            {"images", images},
            {"relations", json::array()}};
}

std::string node_block(const json& n) { return "```node\n" + n.dump() + "\n```\n"; }

}  // namespace

ScriptSet evolution_scripts(int rounds, int tasks) {
    ScriptSet s;
    auto spec = RubricSpec::for_mode(Mode::rl);
    for (int round = 0; round < rounds; ++round) {
        const std::string R = r(round);
        for (int i = 0; i < tasks; ++i) {
            const std::string idx = std::to_string(i);
            const std::string seed_id = R + "-seed-" + idx;
            const std::string entity = "Harbor chart " + R + "-" + idx;

            json record = {{"entity", entity},
                           {"entity_type", "nautical chart"},
                           {"image", "<image:0>"},
                           {"image_url", "https://charts.example.gov/" + R + "/" + idx + ".png"},
                           {"image_source_page", "https://charts.example.gov/" + R + "/" + idx},
                           {"supporting_sources",
                            {"https://charts.example.gov/" + R + "/" + idx, "https://www.port.example.org/" + idx}},
                           {"why_visual", "channel styling and terminal labels are only on the chart"},
                           {"multi_hop_potential", "chart to channel program to contract record"},
                           {"rejection_risks", "low-resolution copies"}};
            s["seed_proposer"][R + "/seed_proposer/seed-" + idx] = {
                "Look for a chart image.\n" + tool_block("image_search", {{"query", entity}}),
                final_block(record.dump())};
            s["seed_gate"][R + "/seed_gate/seed-" + idx] = {
                json{{"accept", true}, {"reason", "labels are legible and sources independent"}}.dump()};

            s["explorer"][R + "/explorer/" + seed_id] = {
                tool_block("web_search", {{"query", entity + " channel"}}) +
                    tool_block("image_search", {{"query", entity + " terminal"}}),
                node_block(node("n1", "entity", entity, {"<image:1>"})) +
                    node_block(node("n2", "concept", "Federal channel " + idx, json::array())) +
                    tool_block("web_search", {{"query", "dredging program " + idx}}) +
                    tool_block("visit", {{"url", "https://www.port.example.org/" + idx}}),
                node_block(node("n3", "image", "Terminal excerpt " + idx, {"<image:0>"})) +
                    node_block(node("n4", "concept", "Dredging contract " + idx, json::array())) +
                    final_block("explored"),
            };
            s["graph_organizer"][R + "/graph_organizer/" + seed_id] = {
                json{{"themes", {"charting", "channel maintenance"}},
                     {"edges",
                      {{{"from", "n1"}, {"to", "n2"}, {"label", "supports"}},
                       {{"from", "n1"}, {"to", "n3"}, {"label", "exemplifies"}},
                       {{"from", "n2"}, {"to", "n4"}, {"label", "explains"}}}}}
                    .dump()};
            s["reasoning"][R + "/reasoning/" + seed_id] = {
                tool_block("python_code", {{"code", kReasoningCode}}),
                final_block(json{{"title", "Share of listed reaches"},
                                 {"facts", {"10 of 11 reaches rounds to 91%"}},
                                 {"sources", {"https://data.example.com/reaches"}},
                                 {"images", json::array()},
                                 {"attach_to", {"n2", "n4"}}}
                                .dump())};
            s["perception"][R + "/perception/" + seed_id] = {
                tool_block("zoom_in", {{"image", "<image:0>"}, {"box", {0.1, 0.1, 0.6, 0.6}}}),
                final_block(json{{"title", "Purple-outlined reach"},
                                 {"facts", {"the deep-draft reach is outlined in purple"}},
                                 {"sources", {"https://charts.example.gov/legend"}},
                                 {"images", {"<image:2>"}},
                                 {"attach_to", {"n3"}}}
                                .dump())};

            const std::string answer = "Seagirt Marine Terminal";
            json draft = {{"question", "Which terminal borders the purple-outlined deep-draft reach on this chart (" +
                                           entity + ")?"},
                          {"answer", answer},
                          {"images", {"<image:0>", "<image:2>"}},
                          {"profile", "perception+search"},
                          {"difficulty", "hard"},
                          {"planned_steps",
                           {{{"kind", "perception"}, {"description", "locate the outlined reach"}},
                            {{"kind", "perception"}, {"description", "read the adjacent label"}},
                            {{"kind", "search"}, {"description", "confirm the terminal name"}},
                            {{"kind", "search"}, {"description", "check the chart edition"}},
                            {{"kind", "reasoning"}, {"description", "reconcile chart and source"}}}},
                          {"cluster", {"n1", "n3", "p1"}}};
            s["curator"][R + "/curator/" + seed_id] = {json{{"tasks", {draft}}}.dump()};
            s["enhancer"][R + "/enhancer/" + seed_id] = {
                json{{"question", "On this chart excerpt of " + entity +
                                      ", which terminal lies beside the reach drawn with a purple outline?"},
                     {"answer", answer}}
                    .dump()};

            const std::string task_id = seed_id + "-t0";
            bool correct = i % 2 == 0;
            s["policy"][R + "/policy/" + task_id] = {
                tool_block("zoom_in", {{"image", "<image:0>"}, {"box", {0.0, 0.0, 0.5, 0.5}}}),
                tool_block("visual_search", {{"image", "<image:2>"}}),
                final_block(correct ? answer : "Dundalk Marine Terminal")};
            s["judge"][R + "/judge/" + task_id] = {judge_reply(correct)};
            s["analyzer"][R + "/analyzer/" + task_id] = {
                analyzer_reply(spec, round == 0 ? first_round_sheet() : second_round_sheet())};
        }

        json patches = json::array();
        if (round == 0) {
            for (const auto& p : first_update_patches()) patches.push_back(patch_to_json(p));
            patches.push_back(patch_to_json(ConfigPatch::append(
                "seed_proposer.default_requirement",
                "Lock the seed to one canonical artifact: record its identifier, revision, and date, and require a "
                "high-resolution copy.",
                "seed_proposer moderate: drift to a different artifact")));
            patches.push_back(patch_to_json(ConfigPatch::update("explorer.max_steps", 20, "explorer severe")));
        } else {
            for (const auto& p : second_update_patches()) patches.push_back(patch_to_json(p));
            patches.push_back(patch_to_json(ConfigPatch::update(
                "curator.few_shot_difficulty_weights",
                json{{"easy", 0.10}, {"medium", 0.20}, {"hard", 0.45}, {"expert", 0.25}}, "too_hard share above 0.30")));
            patches.push_back(patch_to_json(ConfigPatch::update("seed_proposer.max_steps", 11, "more seed budget")));
        }
        s["optimizer"][R + "/optimizer"] = {"Proposed changes:\n```json\n" + json{{"patches", patches}}.dump(2) +
                                            "\n```\n"};
    }
    return s;
}

GraphScenario graph_scenario(int nodes, int agent_runs) {
    GraphScenario g;
    g.state.seed.id = "r0-seed-0";
    g.state.seed.entity = "Harbor chart";
    g.state.seed.cell = {"geography", "perception_search", "hard"};
    g.state.bank = ImageBank(g.state.seed.id);
    g.state.bank.register_image(test_png(48, 32, 9), "image/png", ImageOrigin::tool("image_search", "seed-0-0"), 0);
    json edges = json::array();
    for (int i = 1; i <= nodes; ++i) {
        EvidenceNode n;
        n.node_id = "n" + std::to_string(i);
        n.kind = i % 2 ? "entity" : "concept";
        n.title = "Node " + std::to_string(i);
        n.sources = {"https://a.example.org/" + n.node_id, "https://b.example.net/" + n.node_id};
        n.provenance = {"explore-0-0", "explore-0-1"};
        if (i == 1) n.image_handles = {{0}};
        g.nodes.push_back(n);
        if (i > 1) edges.push_back({{"from", "n" + std::to_string(i - 1)}, {"to", n.node_id}, {"label", "extends"}});
    }
    const std::string scope = "r0/graph_organizer/" + g.state.seed.id;
    g.scripts["graph_organizer"][scope] = {json{{"themes", {"harbor"}}, {"edges", edges}}.dump()};
    for (int k = 0; k < agent_runs; ++k) {
        auto& rs = g.scripts["reasoning"]["r0/reasoning/" + g.state.seed.id];
        rs.push_back(tool_block("python_code", {{"code", kReasoningCode}}));
        rs.push_back(final_block(json{{"title", "Computed share " + std::to_string(k + 1)},
                                      {"facts", {"91 percent"}},
                                      {"sources", {"https://data.example.com/x"}},
                                      {"images", json::array()},
                                      {"attach_to", {"n1", "n2"}}}
                                     .dump()));
        auto& ps = g.scripts["perception"]["r0/perception/" + g.state.seed.id];
        ps.push_back(tool_block("zoom_in", {{"image", "<image:0>"}, {"box", {0.0, 0.0, 0.5, 0.5}}}));
        // each run's crop lands on the next handle
        ps.push_back(final_block(json{{"title", "Crop " + std::to_string(k + 1)},
                                      {"facts", {"a label is legible"}},
                                      {"sources", {"https://charts.example.gov/legend"}},
                                      {"images", {"<image:" + std::to_string(k + 1) + ">"}},
                                      {"attach_to", {"n1"}}}
                                     .dump()));
    }
    return g;
}

ToolEnv scripted_tool_env() {
    ToolEnv env;
    env.provider = std::make_shared<FakeProvider>();
    env.sandbox = evolution_sandbox();
    return env;
}

EvolutionRun run_scripted_evolution(int rounds, int tasks, std::uint64_t seed,
                                    std::shared_ptr<SearchProvider> provider) {
    BackendRegistry reg;
    install(reg, evolution_scripts(rounds, tasks));
    auto env = scripted_tool_env();
    if (provider) env.provider = std::move(provider);
    auto system = SystemConfig::defaults(Mode::rl);
    auto config = EvolvableConfig::sample();
    std::set<std::string> history;
    EvolutionRun run;
    for (int round = 0; round < rounds; ++round) {
        StageContext ctx{&reg, &env, round, 1};
        run.pools.push_back(run_forward(config, system, tasks, history, ctx, seed * 1000003ULL + round));
        run.outcomes.push_back(run_round(run.pools.back(), config, system, run.ledger, reg, env));
        config = run.outcomes.back().next;
    }
    return run;
}

std::shared_ptr<TranscriptSandbox> evolution_sandbox() {
    auto sb = std::make_shared<TranscriptSandbox>();
    ExecResponse resp;
    resp.status = ExecStatus::ok;
    resp.stdout_text = "91\n";
    resp.wall_time_s = 0.02;
    sb->add(kReasoningCode, resp);
    return sb;
}

void write_evolution_transcript(const fs::path& path) {
    ExecRequest req;
    req.id = "recorded";
    req.code = kReasoningCode;
    ExecResponse resp;
    resp.id = "recorded";
    resp.stdout_text = "91\n";
    resp.wall_time_s = 0.02;
    write_file_atomic(path, json{{"request", to_json(req)}, {"response", to_json(resp)}}.dump() + "\n");
}

}  // namespace ode::testing

namespace ode::testing {

std::vector<std::string> judge_prompt_oracle_lines() {
    std::string raw = read_file_text(fs::path(ODE_TEST_FIXTURES) / "judge_prompt_wrapped.txt");
    std::vector<std::string> logical;
    std::istringstream in(raw);
    std::string line;
    while (std::getline(in, line)) {
        bool continuation = !line.empty() && line[0] != ' ' && !logical.empty();
        if (continuation) {
            auto& prev = logical.back();
            if (!prev.ends_with("/")) prev += " ";
            prev += line;
        } else {
            auto b = line.find_first_not_of(' ');
            logical.push_back(b == std::string::npos ? std::string() : line.substr(b));
        }
    }
    std::vector<std::string> out;
    for (auto l : logical) {
        for (std::string esc : {"\\{", "\\}", "\\_"}) {
            for (auto pos = l.find(esc); pos != std::string::npos; pos = l.find(esc, pos)) l.erase(pos, 1);
        }
        static const std::regex rule(R"(^([1-9]|1[0-9]|2[0-2])\. )");
        if (std::regex_search(l, rule) || l.starts_with("- Correct:") || l.starts_with("- Wrong:")) out.push_back(l);
    }
    return out;
}

json fuzz_verdict(std::mt19937& rng) {
    static const std::vector<std::string> eqs = {"exact", "format", "semantic", "wrong", "missing", "ambiguous",
                                                 "partial", "EXACT", ""};
    static const std::vector<std::string> corrects = {"yes", "no", "Yes", "true", ""};
    auto pick = [&](const std::vector<std::string>& v) {
        return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
    };
    std::uniform_int_distribution<int> coin(0, 9);
    json j = {{"correct", coin(rng) < 8 ? pick({"yes", "no"}) : pick(corrects)},
              {"equivalence", coin(rng) < 8 ? pick({"exact", "format", "semantic", "wrong", "missing", "ambiguous"})
                                            : pick(eqs)},
              {"reason", "fuzzed " + std::to_string(coin(rng))}};
    switch (coin(rng)) {
        case 0: j["extra"] = 1; break;
        case 1: j.erase(pick({"correct", "equivalence", "reason"})); break;
        case 2: j[pick({"correct", "equivalence", "reason"})] = coin(rng) % 2 == 0; break;
        case 3: j["reason"] = nullptr; break;
        default: break;
    }
    return j;
}

std::optional<bool> expected_verdict(const json& j) {
    if (!j.is_object() || j.size() != 3) return std::nullopt;
    for (const char* key : {"correct", "equivalence", "reason"}) {
        if (!j.contains(key) || !j[key].is_string()) return std::nullopt;
    }
    const std::string c = j["correct"], e = j["equivalence"];
    static const std::set<std::string> positive = {"exact", "format", "semantic"};
    static const std::set<std::string> negative = {"wrong", "missing", "ambiguous"};
    if (c == "yes" && positive.count(e)) return true;
    if (c == "no" && negative.count(e)) return false;
    return std::nullopt;
}

}  // namespace ode::testing

namespace ode::testing {

namespace {

Task corpus_task(const std::string& id) {
    Task t;
    t.id = id;
    t.question = "What is shown?";
    t.reference_answer = "a chart";
    t.images.push_back({"image/png", std::make_shared<const Bytes>(test_png(40, 30, 3))});
    t.initial_handles = {{0}};
    return t;
}

Trace corpus_rollout(const std::string& id, const std::vector<std::string>& script) {
    ToolEnv env;
    env.provider = std::make_shared<FakeProvider>(2);
    env.sandbox = evolution_sandbox();
    return run_rollout(corpus_task(id), *scripted(script), env, {});
}

}  // namespace

std::vector<Trace> six_trace_corpus() {
    std::vector<Trace> out;
    ToolEnv mountain;
    mountain.provider = mountain_pass_provider();
    out.push_back(run_rollout(mountain_pass_task(), *scripted(mountain_pass_script()), mountain, {}));
    out.push_back(corpus_rollout("answer-only", {final_block("a chart")}));
    out.push_back(corpus_rollout("search-only", {tool_block("web_search", {{"query", "chart"}}) +
                                                     tool_block("scholar_search", {{"query", "chart survey"}}),
                                                 final_block("a chart")}));
    out.push_back(corpus_rollout(
        "transforms", {tool_block("zoom_in", {{"image", "<image:0>"}, {"box", {0.0, 0.0, 0.5, 0.5}}}),
                       tool_block("rotation", {{"image", "<image:1>"}, {"degrees", 90}}),
                       tool_block("flip", {{"image", "<image:2>"}, {"axis", "horizontal"}}),
                       tool_block("zoom_in", {{"image", "<image:3>"}, {"box", {0.2, 0.2, 0.8, 0.8}}}),
                       final_block("a chart")}));
    out.push_back(corpus_rollout("compute-browse", {tool_block("python_code", {{"code", kReasoningCode}}) +
                                                        tool_block("web_fetch", {{"url", "https://x.example.org/p"}}),
                                                    final_block("a chart")}));
    out.push_back(corpus_rollout(
        "search-images", {tool_block("image_search", {{"query", "chart"}}),
                          tool_block("visual_search", {{"image", "<image:2>"}}) +
                              tool_block("zoom_in", {{"image", "<image:1>"}, {"box", {0.0, 0.0, 0.5, 0.5}}}) +
                              tool_block("zoom_in", {{"image", "<image:40>"}, {"box", {0.0, 0.0, 0.5, 0.5}}}),
                          final_block("a chart")}));
    return out;
}

Recount brute_force_recount(const std::vector<Trace>& traces) {
    static const std::map<std::string, std::string> alias = {{"web_fetch", "visit"}, {"link_reader", "visit"}};
    static const std::map<std::string, std::string> cls = {
        {"web_search", "search"}, {"image_search", "search"}, {"scholar_search", "search"}, {"visual_search", "search"},
        {"visit", "browse"},      {"zoom_in", "visual"},      {"rotation", "visual"},      {"flip", "visual"},
        {"python_code", "compute"}};
    static const std::regex handle_re("<image:([0-9]+)>");

    Recount rc;
    std::set<std::vector<std::string>> chains;
    std::set<std::set<std::string>> families;
    int with_images = 0, four_plus = 0, two_calls = 0, vis_search = 0;
    for (const auto& tr : traces) {
        std::set<std::size_t> produced;
        for (const auto& turn : tr.turns) {
            for (const auto& r : turn.results) {
                for (auto h : r.new_handles) produced.insert(h.index);
            }
        }
        TraceStats s;
        s.dynamic_images = static_cast<int>(produced.size());
        std::vector<std::string> chain;
        std::set<std::string> fam;
        for (const auto& turn : tr.turns) {
            for (const auto& call : turn.actions) {
                ++s.tool_calls;
                std::string name = alias.count(call.name) ? alias.at(call.name) : call.name;
                chain.push_back(name);
                fam.insert(cls.count(name) ? cls.at(name) : name);
                std::string dumped = call.args.dump();
                bool any = false;
                for (std::sregex_iterator it(dumped.begin(), dumped.end(), handle_re), end; it != end; ++it) {
                    auto idx = std::stoul((*it)[1].str());
                    if (idx >= tr.bank.size()) continue;
                    any = true;
                    if (produced.count(idx)) {
                        ++s.secondary_reuse_count;
                        s.reuse_by_tool[name]++;
                    }
                }
                if (any) ++s.image_input_calls;
            }
        }
        with_images += s.dynamic_images >= 1;
        four_plus += s.dynamic_images >= 4;
        two_calls += chain.size() >= 2;
        vis_search += fam.count("visual") && (fam.count("search") || fam.count("browse"));
        chains.insert(chain);
        families.insert(fam);
        rc.per_trace.push_back(s);
    }
    double n = static_cast<double>(traces.size());
    rc.diversity.traces = static_cast<int>(traces.size());
    rc.diversity.distinct_chains = static_cast<int>(chains.size());
    rc.diversity.distinct_families = static_cast<int>(families.size());
    rc.diversity.with_tool_images_share = with_images / n;
    rc.diversity.four_plus_images_share = four_plus / n;
    rc.diversity.two_plus_calls_share = two_calls / n;
    rc.diversity.visual_plus_search_share = vis_search / n;
    return rc;
}

}  // namespace ode::testing
