#include <gtest/gtest.h>

#include <functional>
#include <numeric>
#include <random>
#include <set>

#include "ode/error.hpp"
#include "ode/forward.hpp"
#include "support/support.hpp"

using namespace ode;
using namespace ode::testing;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "no exception";
    return ErrorKind::InvalidArgument;
}

struct ForwardRig {
    BackendRegistry reg;
    ToolEnv env = scripted_tool_env();
    SystemConfig system = SystemConfig::defaults(Mode::rl);
    EvolvableConfig config = EvolvableConfig::sample();
    StageContext ctx{&reg, &env, 0, 1};
};

std::string node_block(json n) { return "```node\n" + n.dump() + "\n```\n"; }

json node(const std::string& id, json images = json::array(), std::string kind = "entity") {
    return {{"id", id},
            {"kind", kind},
            {"title", "Title " + id},
            {"sources", {"https://a.example.org/" + id, "https://b.example.net/" + id}},
            {"images", images}};
}

SeedState seed_state() {
    SeedState s;
    s.seed.id = "r0-seed-0";
    s.seed.entity = "Harbor";
    s.bank = ImageBank(s.seed.id);
    s.bank.register_image(test_png(30, 20), "image/png", ImageOrigin::tool("image_search", "seed-0-0"), 0);
    return s;
}

const std::string kTwoCalls = tool_block("web_search", {{"query", "a"}}) + tool_block("web_search", {{"query", "b"}});

}  // namespace

TEST(Schedule, BlocksOf44CoverEveryPairOnce) {
    auto system = SystemConfig::defaults();
    auto weights = EvolvableConfig::sample().difficulty_weights();
    for (int blocks : {1, 2, 3}) {
        auto cells = sample_schedule(system, weights, 44 * blocks, 17);
        std::map<std::pair<std::string, std::string>, int> seen;
        for (const auto& c : cells) seen[{c.domain, c.profile}]++;
        ASSERT_EQ(seen.size(), 44u);
        for (const auto& [pair, n] : seen) EXPECT_EQ(n, blocks);
    }
}

TEST(Schedule, DeterministicAndWeighted) {
    auto system = SystemConfig::defaults();
    std::map<std::string, double> weights = {{"easy", 0.05}, {"medium", 0.15}, {"hard", 0.50}, {"expert", 0.30}};
    auto a = sample_schedule(system, weights, 4000, 3);
    EXPECT_EQ(a, sample_schedule(system, weights, 4000, 3));
    EXPECT_NE(a, sample_schedule(system, weights, 4000, 4));
    std::map<std::string, int> counts;
    for (const auto& c : a) counts[c.difficulty]++;
    for (const auto& [d, w] : weights) EXPECT_NEAR(counts[d] / 4000.0, w, 0.03) << d;

    auto only_hard = sample_schedule(system, {{"hard", 1.0}}, 50, 1);
    for (const auto& c : only_hard) EXPECT_EQ(c.difficulty, "hard");
    EXPECT_EQ(kind_of([&] { sample_schedule(system, {{"hard", 0.0}}, 5, 1); }), ErrorKind::ConfigInvalid);
    EXPECT_EQ(kind_of([&] { sample_schedule(system, weights, 0, 1); }), ErrorKind::InvalidArgument);
}

TEST(Enrichment, CountIsFloorOfRatioTimesNodes) {
    // ratios as exact hundredths so the oracle is integer arithmetic
    for (int hundredths : {0, 25, 33, 40, 50, 100}) {
        for (int n = 2; n <= 12; ++n) {
            EXPECT_EQ(enrichment_count(hundredths / 100.0, n), hundredths * n / 100) << hundredths << " " << n;
        }
    }
}

TEST(Enrichment, SixNodesGiveOneReasoningAndTwoPerception) {
    ForwardRig rig;
    auto scenario = graph_scenario(6, 3);
    install(rig.reg, scenario.scripts);
    auto g = organize_graph(scenario.state, scenario.nodes, rig.config, rig.system, rig.ctx);
    EXPECT_EQ(g.reasoning_added, 1);
    EXPECT_EQ(g.perception_added, 2);
    ASSERT_EQ(g.nodes.size(), 9u);
    EXPECT_EQ(g.nodes[6].node_id, "r1");
    EXPECT_EQ(g.nodes[6].kind, "reasoning");
    EXPECT_EQ(g.nodes[7].node_id, "p1");
    EXPECT_EQ(g.nodes[8].image_handles, (std::vector<ImageHandle>{{2}}));
    EXPECT_TRUE(g.connected());
    // reasoning provenance is the agent's own successful calls
    EXPECT_EQ(g.nodes[6].provenance, (std::vector<std::string>{"reasoning-0-0-0"}));
    EXPECT_EQ(scenario.state.bank.size(), 3u);
}

TEST(Enrichment, UnattachedNodeFails) {
    ForwardRig rig;
    auto scenario = graph_scenario(4, 1);
    scenario.scripts["reasoning"]["r0/reasoning/r0-seed-0"][1] =
        final_block(json{{"title", "t"}, {"attach_to", {"n9"}}}.dump());
    install(rig.reg, scenario.scripts);
    EXPECT_EQ(kind_of([&] { organize_graph(scenario.state, scenario.nodes, rig.config, rig.system, rig.ctx); }),
              ErrorKind::EnrichmentFailed);
}

TEST(Graph, DisconnectedOrganizerOutput) {
    ForwardRig rig;
    auto scenario = graph_scenario(4, 1);
    scenario.scripts["graph_organizer"]["r0/graph_organizer/r0-seed-0"] = {
        json{{"edges", {{{"from", "n1"}, {"to", "n2"}, {"label", "supports"}},
                        {{"from", "n3"}, {"to", "n4"}, {"label", "teleports"}},
                        {{"from", "n3"}, {"to", "n9"}, {"label", "supports"}}}}}
            .dump()};
    install(rig.reg, scenario.scripts);
    EXPECT_EQ(kind_of([&] { organize_graph(scenario.state, scenario.nodes, rig.config, rig.system, rig.ctx); }),
              ErrorKind::DisconnectedGraph);
    EXPECT_EQ(scenario.state.notes.size(), 2u);
}

TEST(Graph, ConnectivityProperty) {
    std::mt19937 rng(8);
    for (int trial = 0; trial < 300; ++trial) {
        int n = std::uniform_int_distribution<int>(1, 8)(rng);
        EvidenceGraph g;
        for (int i = 0; i < n; ++i) g.nodes.push_back({"n" + std::to_string(i)});
        std::vector<int> parent(n);
        std::iota(parent.begin(), parent.end(), 0);
        std::function<int(int)> root = [&](int x) { return parent[x] == x ? x : parent[x] = root(parent[x]); };
        int m = std::uniform_int_distribution<int>(0, 10)(rng);
        for (int e = 0; e < m; ++e) {
            int a = std::uniform_int_distribution<int>(0, n - 1)(rng), b = std::uniform_int_distribution<int>(0, n - 1)(rng);
            g.edges.push_back({"n" + std::to_string(a), "n" + std::to_string(b), "supports"});
            parent[root(a)] = root(b);
        }
        std::set<int> roots;
        for (int i = 0; i < n; ++i) roots.insert(root(i));
        ASSERT_EQ(g.connected(), roots.size() == 1);
    }
    EXPECT_FALSE(EvidenceGraph{}.connected());
}

TEST(Curation, BannedPhraseFilter) {
    ImageBank bank("b");
    bank.register_image(test_png(4, 4), "image/png", ImageOrigin::initial());
    auto phrases = banned_phrases();
    for (const char* p : {"zoom in", "search for", "use ocr", "calculate by", "visual_search", "web_fetch"}) {
        EXPECT_NE(std::find(phrases.begin(), phrases.end(), p), phrases.end()) << p;
    }
    EXPECT_TRUE(filter_rejection("Zoom in on the legend: which terminal?", "Seagirt", {}, bank));
    EXPECT_TRUE(filter_rejection("Use python_code to find the year.", "1990", {}, bank));
    EXPECT_TRUE(filter_rejection("Which terminal is in <image:0>?", "Seagirt", {}, bank));
    EXPECT_TRUE(filter_rejection("Which terminal?", "", {}, bank));
    EXPECT_TRUE(filter_rejection("Which terminal?", "one two three four five six seven eight nine ten eleven twelve 13",
                                 {}, bank));
    EXPECT_TRUE(filter_rejection("Which terminal?", "Seagirt", {{3}}, bank));
    EXPECT_FALSE(filter_rejection("Which terminal borders the outlined reach?", "Seagirt Marine Terminal", {{0}}, bank));
    EXPECT_FALSE(filter_rejection("Which zoom lens?", "one two three four five six seven eight nine ten eleven twelve",
                                  {}, bank));
}

TEST(Helpers, EntitiesHostsAndJson) {
    EXPECT_EQ(normalize_entity("  Zheduo PASS\n"), "zheduo pass");
    EXPECT_EQ(distinct_hosts({"https://www.a.org/x", "http://a.org/y", "https://b.org", "not a url"}), 2u);
    EXPECT_EQ(first_json_object("prose {\"a\": {\"b\": \"}\"}} tail")->at("a").at("b"), "}");
    EXPECT_EQ(first_json_object("```json\n{\"x\":1}\n```\n{\"y\":2}")->at("x"), 1);
    EXPECT_EQ(first_json_object("{broken {\"z\":3}")->at("z"), 3);
    EXPECT_FALSE(first_json_object("no objects [1,2]"));
}

TEST(Seeds, DuplicatesHostsAndGate) {
    ForwardRig rig;
    auto scripts = evolution_scripts(1, 4);
    // seed 1 repeats seed 0's entity, seed 2 cites one host twice, seed 3 is refused by the gate
    auto& sp = scripts["seed_proposer"];
    auto retarget = [&](int i, std::function<void(json&)> edit) {
        auto& texts = sp["r0/seed_proposer/seed-" + std::to_string(i)];
        auto rec = first_json_object(texts.back());
        edit(*rec);
        texts.back() = final_block(rec->dump());
    };
    retarget(1, [](json& r) { r["entity"] = " harbor CHART r0-0 "; });
    retarget(2, [](json& r) { r["supporting_sources"] = {"https://www.x.org/1", "https://x.org/2"}; });
    scripts["seed_gate"]["r0/seed_gate/seed-3"] = {R"({"accept": false, "reason": "decorative"})"};
    install(rig.reg, scripts);
    std::set<std::string> history;
    auto cells = sample_schedule(rig.system, rig.config.difficulty_weights(), 4, 1);
    auto out = propose_seeds(rig.config, rig.system, cells, history, rig.ctx);
    ASSERT_EQ(out.size(), 4u);
    EXPECT_TRUE(out[0].state);
    EXPECT_EQ(out[1].reason.rfind("duplicate entity", 0), 0u) << out[1].reason;
    EXPECT_EQ(out[2].reason, "needs at least two independent sources");
    EXPECT_EQ(out[3].reason, "gate rejected: decorative");
    EXPECT_EQ(history, (std::set<std::string>{"harbor chart r0-0"}));
    EXPECT_EQ(out[0].state->seed.cell, cells[0]);
    EXPECT_EQ(out[0].state->bank.size(), 1u);
}

TEST(Explore, PhaseCapsAndProvenance) {
    ForwardRig rig;
    rig.config = apply_patch(rig.config, ConfigPatch::update("explorer.params.number_of_anchors", 3));
    auto state = seed_state();
    rig.reg.add_scoped("explorer", "r0/explorer/r0-seed-0",
                       scripted({kTwoCalls + tool_block("image_search", {{"query", "x"}}),
                                 node_block(node("a", {"<image:0>"})) + node_block(node("b", {"<image:1>"})) +
                                     node_block(node("c")) + kTwoCalls,
                                 node_block(node("d")) + node_block(node("e")) + final_block("done")}));
    auto out = explore_seed(state, rig.config, rig.system, rig.ctx);
    ASSERT_EQ(out.nodes.size(), 3u);
    EXPECT_EQ(out.nodes[0].node_id, "a");
    EXPECT_EQ(out.nodes[0].provenance,
              (std::vector<std::string>{"explore-0-0", "explore-0-1", "explore-0-2"}));
    EXPECT_EQ(out.nodes[1].phase, 1);
    // the window restarts after a turn that accepted nodes
    EXPECT_EQ(out.nodes[2].node_id, "d");
    EXPECT_EQ(out.nodes[2].provenance, (std::vector<std::string>{"explore-1-0", "explore-1-1"}));
    bool per_phase = false, anchors = false;
    for (const auto& n : out.notes) {
        per_phase |= n.find("max_nodes_per_phase") != std::string::npos;
        anchors |= n.find("number_of_anchors") != std::string::npos;
    }
    EXPECT_TRUE(per_phase);
    EXPECT_TRUE(anchors);
}

TEST(Explore, SameTurnImagesAreNotCitable) {
    ForwardRig rig;
    auto state = seed_state();
    rig.reg.add_scoped("explorer", "r0/explorer/r0-seed-0",
                       scripted({kTwoCalls,
                                 node_block(node("a", {"<image:1>"})) + node_block(node("b", {"<image:0>"})) +
                                     tool_block("image_search", {{"query", "x"}}),
                                 final_block("done")}));
    try {
        explore_seed(state, rig.config, rig.system, rig.ctx);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::ExplorationUnderfilled);
    }
    EXPECT_NE(state.notes.at(0).find("references an image not in the bank"), std::string::npos);
}

TEST(Explore, ImageFloor) {
    ForwardRig rig;
    auto state = seed_state();
    rig.reg.add_scoped("explorer", "r0/explorer/r0-seed-0",
                       scripted({kTwoCalls, node_block(node("a")) + node_block(node("b", json::array(), "concept")) +
                                                final_block("done")}));
    EXPECT_EQ(kind_of([&] { explore_seed(state, rig.config, rig.system, rig.ctx); }), ErrorKind::ImageFloorUnmet);
}

TEST(Curation, EnhancementAndRejections) {
    ForwardRig rig;
    auto scenario = graph_scenario(2, 0);
    EvidenceGraph g;
    g.seed_id = scenario.state.seed.id;
    g.nodes = scenario.nodes;
    g.edges = {{"n1", "n2", "supports"}};
    auto draft = [](std::string q, std::string a, json extra = json::object()) {
        json d = {{"question", q}, {"answer", a}, {"images", {"<image:0>"}}, {"cluster", {"n1"}}};
        d.update(extra);
        return d;
    };
    json tasks = {draft("Which terminal is drawn in purple?", "Seagirt", {{"profile", "perception+search"}}),
                  draft("Which berth is marked?", "Berth 4"),
                  draft("Zoom in on the legend. Which year?", "1990"),
                  draft("Which pier?", "Pier 7", {{"cluster", {"n8"}}}),
                  draft("Which dock?", "Dock 2", {{"difficulty", "impossible"}})};
    rig.reg.add_scoped("curator", "r0/curator/r0-seed-0", scripted({json{{"tasks", tasks}}.dump()}));
    rig.reg.add_scoped("enhancer", "r0/enhancer/r0-seed-0",
                       scripted({R"({"question": "Beside the purple reach, which terminal sits?", "answer": "seagirt"})",
                                 R"({"question": "Which berth?", "answer": "Berth 5"})",
                                 R"({"question": "Zoom in please", "answer": "1990"})",
                                 R"({"question": "q", "answer": "Dock 2"})"}));
    auto out = curate_tasks(scenario.state, g, rig.config, rig.system, rig.ctx);
    ASSERT_EQ(out.tasks.size(), 2u);
    EXPECT_EQ(out.tasks[0].question, "Beside the purple reach, which terminal sits?");
    EXPECT_EQ(out.tasks[0].annotations.profile, "perception_search");
    EXPECT_EQ(out.tasks[0].annotations.difficulty, "hard");  // from the seed cell
    EXPECT_EQ(out.tasks[0].id, "r0-seed-0-t0");
    EXPECT_TRUE(out.records[0].enhanced);
    EXPECT_EQ(out.tasks[1].question, "Which berth is marked?");
    EXPECT_FALSE(out.records[1].enhanced);
    EXPECT_EQ(out.records[1].notes.at(0), "enhancement changed the answer; draft kept");
    ASSERT_EQ(out.rejected.size(), 3u);
    EXPECT_NE(out.rejected[0].reason.find("zoom in"), std::string::npos);
    EXPECT_EQ(out.rejected[1].reason, "cluster references unknown node n8");
    EXPECT_EQ(out.rejected[2].reason, "unknown difficulty 'impossible'");
    ASSERT_EQ(out.tasks[0].images.size(), 1u);
    EXPECT_EQ(*out.tasks[0].images[0].payload, *scenario.state.bank.resolve({0}).payload());
}

TEST(Forward, ScriptedRoundProducesOneTaskPerSeed) {
    ForwardRig rig;
    install(rig.reg, evolution_scripts(1, 3));
    std::set<std::string> history;
    auto pool = run_forward(rig.config, rig.system, 3, history, rig.ctx, 42);
    ASSERT_EQ(pool.tasks.size(), 3u);
    EXPECT_TRUE(pool.failures.empty());
    for (const auto& t : pool.tasks) {
        ASSERT_TRUE(pool.provenance.count(t.id));
        const auto& rec = pool.provenance.at(t.id);
        EXPECT_EQ(rec.graph.reasoning_added, 1);
        EXPECT_EQ(rec.graph.perception_added, 1);
        EXPECT_EQ(rec.nodes.size(), 4u);
        EXPECT_EQ(t.images.size(), 2u);
        EXPECT_EQ(t.reference_answer, "Seagirt Marine Terminal");
        EXPECT_NO_THROW(validate_task(t));
    }
    TempDir dir;
    auto j = pool_to_json(pool, dir / "images");
    EXPECT_EQ(j["tasks"].size(), 3u);
    EXPECT_EQ(j["provenance"].size(), 3u);
}

TEST(Forward, EmptyPoolCarriesTheStageHistogram) {
    ForwardRig rig;
    auto scripts = evolution_scripts(1, 2);
    scripts["explorer"]["r0/explorer/r0-seed-1"] = {final_block("nothing found")};
    scripts["seed_gate"]["r0/seed_gate/seed-0"] = {R"({"accept": false, "reason": "blurry"})"};
    install(rig.reg, scripts);
    std::set<std::string> history;
    try {
        run_forward(rig.config, rig.system, 2, history, rig.ctx, 1);
        FAIL();
    } catch (const EmptyPoolError& e) {
        EXPECT_EQ(e.kind(), ErrorKind::EmptyPool);
        EXPECT_EQ(e.histogram(), (std::map<std::string, int>{{"explorer", 1}, {"seed", 1}}));
    }
}
