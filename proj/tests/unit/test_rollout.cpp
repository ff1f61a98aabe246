#include <gtest/gtest.h>

#include "ode/error.hpp"
#include "ode/rollout.hpp"
#include "support/support.hpp"

using namespace ode;
using namespace ode::testing;

namespace {

ToolEnv mountain_env() {
    ToolEnv env;
    env.provider = mountain_pass_provider();
    return env;
}

/// Answers nothing, ever.
class Stubborn : public ChatBackend {
public:
    explicit Stubborn(std::string text, std::optional<int> tokens = std::nullopt)
        : text_(std::move(text)), tokens_(tokens) {}
    BackendOutput generate(const ChatRequest&) override { return {text_, tokens_}; }

private:
    std::string text_;
    std::optional<int> tokens_;
};

}  // namespace

TEST(Envelope, ToolAndFinalBlocks) {
    auto p = parse_actions("think\n" + tool_block("web_search", {{"query", "a"}}) + "then\n" +
                           tool_block("visit", {{"url", "https://x.org"}}) + final_block("  Answer  "));
    ASSERT_EQ(p.actions.size(), 2u);
    EXPECT_EQ(p.actions[0].name, "web_search");
    EXPECT_EQ(p.actions[1].args["url"], "https://x.org");
    EXPECT_TRUE(p.actions[0].call_id.empty());
    EXPECT_EQ(p.final_answer, "Answer");
    EXPECT_TRUE(p.notes.empty());
}

TEST(Envelope, MalformedBlocksAreSkippedWithNotes) {
    auto p = parse_actions("```tool\nnot json\n```\n```tool\n{\"args\":{}}\n```\n```tool\n{\"name\":\"x\",\"args\":[1]}\n```\n"
                           "```final\n\n```\n```final\nA\n```\n```final\nB\n```\n```python\nprint(1)\n```\n```tool\n{");
    EXPECT_TRUE(p.actions.empty());
    EXPECT_EQ(p.final_answer, "A");
    EXPECT_EQ(p.notes.size(), 6u);
}

TEST(Envelope, FencedBlocksProperty) {
    // rendering blocks and scanning them back is the identity
    std::vector<FencedBlock> blocks = {{"tool", "{\"a\":1}\n"}, {"final", "x y\n"}, {"", "plain\n"}};
    std::string text = "lead ";
    for (const auto& b : blocks) text += "```" + b.tag + "\n" + b.body + "```\n between \n";
    auto back = fenced_blocks(text);
    ASSERT_EQ(back.size(), blocks.size());
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        EXPECT_EQ(back[i].tag, blocks[i].tag);
        EXPECT_EQ(back[i].body, blocks[i].body);
    }
}

TEST(Rollout, MountainPassReplay) {
    auto task = mountain_pass_task();
    auto policy = scripted(mountain_pass_script());
    auto trace = run_rollout(task, *policy, mountain_env(), {});
    EXPECT_EQ(trace.stop_reason, StopReason::answered);
    EXPECT_EQ(trace.final_answer, "Zheduo Mountain Pass");
    ASSERT_EQ(trace.turns.size(), 5u);
    // handles are issued sequentially and stamped with the producing turn
    ASSERT_EQ(trace.bank.size(), 5u);
    std::vector<int> turns;
    for (std::size_t i = 0; i < trace.bank.size(); ++i) {
        EXPECT_EQ(trace.bank.records()[i].handle.index, i);
        turns.push_back(trace.bank.records()[i].created_turn);
    }
    EXPECT_EQ(turns, (std::vector<int>{-1, 0, 1, 1, 3}));
    EXPECT_EQ(trace.turns[0].results[0].call_id, "call-0-0");
    EXPECT_EQ(trace.turns[1].results[0].new_handles, (std::vector<ImageHandle>{{2}, {3}}));
    for (const auto& t : trace.turns)
        for (const auto& r : t.results) EXPECT_EQ(r.status, ToolStatus::ok) << r.text;

    // each observation goes back to the model with the new images attached
    auto reqs = policy->requests();
    ASSERT_EQ(reqs.size(), 5u);
    const auto& second = reqs[1].messages;
    ASSERT_EQ(second.size(), 4u);
    EXPECT_EQ(second[0].role, ChatRole::system);
    EXPECT_EQ(second[1].images, (std::vector<ImageHandle>{{0}}));
    EXPECT_NE(second[1].text.find("<image:0>"), std::string::npos);
    EXPECT_EQ(second[3].images, (std::vector<ImageHandle>{{1}}));
    EXPECT_NE(second[3].text.find("[observation call-0-0 zoom_in ok]"), std::string::npos);
}

TEST(Rollout, NeverAnsweringPolicyHitsCallBudget) {
    Stubborn policy("Still thinking.");
    RolloutLimits limits;
    limits.budget.total_tokens = 1 << 30;
    auto trace = run_rollout(mountain_pass_task(), policy, {}, limits);
    EXPECT_EQ(trace.turns.size(), 50u);
    EXPECT_EQ(trace.budget.calls_used, 50);
    EXPECT_EQ(trace.stop_reason, StopReason::call_budget);
    EXPECT_FALSE(trace.final_answer);
}

TEST(Rollout, TokenHeavyPolicyHitsTokenBudget) {
    Stubborn policy("Long deliberation.", 7000);
    auto trace = run_rollout(mountain_pass_task(), policy, {}, {});
    EXPECT_EQ(trace.stop_reason, StopReason::token_budget);
    EXPECT_LE(trace.budget.total_tokens_used, 16000);
    EXPECT_EQ(trace.budget.total_tokens_used, 16000);
    EXPECT_EQ(trace.turns.size(), 3u);  // 7000 + 7000 + 2000
}

TEST(Rollout, ExhaustedScriptAndToolErrors) {
    auto policy = scripted({tool_block("teleport", json::object()) + tool_block("zoom_in", {{"image", "<image:9>"}})});
    auto trace = run_rollout(mountain_pass_task(), *policy, {}, {});
    EXPECT_EQ(trace.stop_reason, StopReason::script_exhausted);
    ASSERT_EQ(trace.turns.size(), 1u);
    EXPECT_EQ(trace.turns[0].results[0].error_kind, "UnknownTool");
    EXPECT_EQ(trace.turns[0].results[1].error_kind, "UnknownHandle");
}

TEST(Rollout, TraceSerializationRoundTrip) {
    TempDir dir;
    auto policy = scripted(mountain_pass_script());
    auto trace = run_rollout(mountain_pass_task(), *policy, mountain_env(), {});
    auto path = dir / "t.jsonl";
    finalize_trace(trace, path);
    auto back = read_trace(path);
    EXPECT_EQ(serialize_trace(back), serialize_trace(trace));
    EXPECT_EQ(back.final_answer, trace.final_answer);
    EXPECT_EQ(back.stop_reason, trace.stop_reason);
    EXPECT_EQ(back.budget, trace.budget);
    ASSERT_EQ(back.bank.size(), trace.bank.size());
    for (std::size_t i = 0; i < back.bank.size(); ++i) {
        EXPECT_EQ(*back.bank.resolve({i}).payload(), *trace.bank.resolve({i}).payload());
        EXPECT_EQ(back.bank.records()[i].origin, trace.bank.records()[i].origin);
    }
    EXPECT_THROW(deserialize_trace("{\"type\":\"turn\"}\n", dir.path()), Error);
}

TEST(Rollout, TaskJsonRoundTrip) {
    TempDir dir;
    auto task = mountain_pass_task();
    auto j = task_to_json(task, dir / "images");
    auto back = task_from_json(j, dir / "images");
    EXPECT_EQ(back.id, task.id);
    EXPECT_EQ(back.annotations, task.annotations);
    EXPECT_EQ(back.initial_handles, task.initial_handles);
    ASSERT_EQ(back.images.size(), 1u);
    EXPECT_EQ(*back.images[0].payload, *task.images[0].payload);

    auto bad = task;
    bad.reference_answer = "";
    EXPECT_THROW(validate_task(bad), Error);
    bad = task;
    bad.initial_handles.push_back({4});
    EXPECT_THROW(validate_task(bad), Error);
}

TEST(Rollout, StopReasonStrings) {
    for (auto r : {StopReason::answered, StopReason::call_budget, StopReason::token_budget,
                   StopReason::backend_failure, StopReason::script_exhausted}) {
        EXPECT_EQ(stop_reason_from_string(to_string(r)), r);
    }
    EXPECT_THROW(stop_reason_from_string("bored"), Error);
}

TEST(Rollout, CallPrefixAndSharedBank) {
    auto task = mountain_pass_task();
    ImageBank bank = make_task_bank(task);
    bank.register_image(test_png(10, 10), "image/png", ImageOrigin::tool("zoom_in", "x-0-0"), 0);
    RolloutOptions opts;
    opts.bank = std::move(bank);
    opts.call_prefix = "perception";
    opts.system_prompt = "custom";
    auto policy = scripted({tool_block("flip", {{"image", "<image:1>"}, {"axis", "vertical"}}), final_block("done")});
    auto trace = run_rollout(task, *policy, {}, {}, opts);
    EXPECT_EQ(trace.turns[0].results[0].call_id, "perception-0-0");
    EXPECT_EQ(trace.turns[0].results[0].status, ToolStatus::ok);
    EXPECT_EQ(trace.bank.size(), 3u);
    EXPECT_EQ(policy->requests()[0].messages[0].text, "custom");
}
