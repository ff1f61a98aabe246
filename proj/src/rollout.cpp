#include "ode/rollout.hpp"

#include <sstream>

#include "ode/error.hpp"

namespace ode {

void validate_task(const Task& task) {
    if (task.question.empty()) throw Error(ErrorKind::InvalidArgument, "task '" + task.id + "' has no question");
    if (task.reference_answer.empty()) {
        throw Error(ErrorKind::InvalidArgument, "task '" + task.id + "' has no reference answer");
    }
    for (const auto& img : task.images) {
        if (!img.payload || img.payload->empty()) throw Error(ErrorKind::EmptyPayload, "task image without payload");
    }
    for (const auto& h : task.initial_handles) {
        if (h.index >= task.images.size()) {
            throw Error(ErrorKind::UnknownHandle, "task '" + task.id + "' references missing " + h.render());
        }
    }
}

ImageBank make_task_bank(const Task& task, BankOptions options) {
    ImageBank bank(task.id, std::move(options));
    for (const auto& img : task.images) bank.register_image(*img.payload, img.mime, ImageOrigin::initial());
    return bank;
}

json task_to_json(const Task& task, const std::optional<std::filesystem::path>& image_dir) {
    json steps = json::array();
    for (const auto& s : task.annotations.planned_steps) steps.push_back({{"kind", s.kind}, {"description", s.description}});
    json images = json::array();
    for (const auto& img : task.images) {
        auto digest = sha256_hex(*img.payload);
        if (image_dir) {
            auto p = *image_dir / digest;
            if (!std::filesystem::exists(p)) write_file_atomic(p, *img.payload);
        }
        images.push_back({{"mime", img.mime}, {"digest", digest}});
    }
    json handles = json::array();
    for (const auto& h : task.initial_handles) handles.push_back(h.index);
    return {{"id", task.id},
            {"question", task.question},
            {"initial_handles", handles},
            {"reference_answer", task.reference_answer},
            {"annotations",
             {{"domain", task.annotations.domain},
              {"profile", task.annotations.profile},
              {"difficulty", task.annotations.difficulty},
              {"planned_steps", steps}}},
            {"images", images}};
}

Task task_from_json(const json& j, const std::filesystem::path& image_dir, const std::filesystem::path& base_dir) {
    try {
        Task t;
        t.id = j.at("id").get<std::string>();
        t.question = j.at("question").get<std::string>();
        t.reference_answer = j.at("reference_answer").get<std::string>();
        if (j.contains("annotations")) {
            const auto& a = j["annotations"];
            t.annotations.domain = a.value("domain", "");
            t.annotations.profile = a.value("profile", "");
            t.annotations.difficulty = a.value("difficulty", "");
            for (const auto& s : a.value("planned_steps", json::array())) {
                t.annotations.planned_steps.push_back({s.value("kind", ""), s.value("description", "")});
            }
        }
        for (const auto& img : j.value("images", json::array())) {
            TaskImage ti;
            ti.mime = img.at("mime").get<std::string>();
            std::filesystem::path p = img.contains("digest") ? image_dir / img["digest"].get<std::string>()
                                                             : base_dir / img.at("path").get<std::string>();
            ti.payload = std::make_shared<const Bytes>(read_file_bytes(p));
            t.images.push_back(std::move(ti));
        }
        if (j.contains("initial_handles")) {
            for (const auto& h : j["initial_handles"]) t.initial_handles.push_back({h.get<std::size_t>()});
        } else {
            for (std::size_t k = 0; k < t.images.size(); ++k) t.initial_handles.push_back({k});
        }
        return t;
    } catch (const json::exception& e) {
        throw Error(ErrorKind::SerializationFailure, std::string("bad task document: ") + e.what());
    }
}

Task load_task(const std::filesystem::path& path) {
    json j = json::parse(read_file_text(path), nullptr, false);
    if (j.is_discarded()) throw Error(ErrorKind::SerializationFailure, path.string() + " is not JSON");
    auto base = path.parent_path();
    return task_from_json(j, base / "images", base);
}

std::string_view to_string(StopReason reason) {
    switch (reason) {
        case StopReason::answered: return "answered";
        case StopReason::call_budget: return "call_budget";
        case StopReason::token_budget: return "token_budget";
        case StopReason::backend_failure: return "backend_failure";
        case StopReason::script_exhausted: return "script_exhausted";
    }
    return "backend_failure";
}

StopReason stop_reason_from_string(std::string_view s) {
    for (auto r : {StopReason::answered, StopReason::call_budget, StopReason::token_budget, StopReason::backend_failure,
                   StopReason::script_exhausted}) {
        if (to_string(r) == s) return r;
    }
    throw Error(ErrorKind::SerializationFailure, "unknown stop reason '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// action envelope

namespace {

std::string trim(std::string_view s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

}  // namespace

std::vector<FencedBlock> fenced_blocks(std::string_view text, std::vector<std::string>* notes) {
    std::vector<FencedBlock> out;
    std::size_t pos = 0;
    while (true) {
        auto open = text.find("```", pos);
        if (open == std::string_view::npos) break;
        auto eol = text.find('\n', open + 3);
        if (eol == std::string_view::npos) {
            if (notes) notes->push_back("unterminated fence at offset " + std::to_string(open));
            break;
        }
        std::string tag = trim(text.substr(open + 3, eol - open - 3));
        auto close = text.find("```", eol + 1);
        if (close == std::string_view::npos) {
            if (notes) notes->push_back("unterminated '" + tag + "' block at offset " + std::to_string(open));
            break;
        }
        out.push_back({tag, std::string(text.substr(eol + 1, close - eol - 1))});
        pos = close + 3;
    }
    return out;
}

ParsedActions parse_actions(std::string_view assistant_text) {
    ParsedActions p;
    auto blocks = fenced_blocks(assistant_text, &p.notes);
    int index = 0;
    for (const auto& b : blocks) {
        ++index;
        if (b.tag == "tool") {
            json j = json::parse(b.body, nullptr, false);
            if (j.is_discarded() || !j.is_object()) {
                p.notes.push_back("block " + std::to_string(index) + ": tool block is not a JSON object");
                continue;
            }
            if (!j.contains("name") || !j["name"].is_string() || j["name"].get<std::string>().empty()) {
                p.notes.push_back("block " + std::to_string(index) + ": tool block lacks a name");
                continue;
            }
            json args = j.value("args", json::object());
            if (!args.is_object()) {
                p.notes.push_back("block " + std::to_string(index) + ": args must be an object");
                continue;
            }
            p.actions.push_back({j["name"].get<std::string>(), std::move(args), {}});
        } else if (b.tag == "final") {
            if (p.final_answer) {
                p.notes.push_back("block " + std::to_string(index) + ": extra final block ignored");
                continue;
            }
            auto answer = trim(b.body);
            if (answer.empty()) {
                p.notes.push_back("block " + std::to_string(index) + ": empty final block");
                continue;
            }
            p.final_answer = std::move(answer);
        }
    }
    return p;
}

// ---------------------------------------------------------------------------
// agent loop

std::string default_system_prompt() {
    return "You are a multimodal deep-search agent. Images are referenced by handles of the form <image:N>; "
           "every image a tool returns is added to the bank under the next handle and may be passed to later "
           "tool calls.\n\nTools:\n" +
           tool_catalog() +
           "\nTo call a tool, write a fenced block tagged tool containing one JSON object, for example:\n"
           "```tool\n{\"name\": \"zoom_in\", \"args\": {\"image\": \"<image:0>\", \"box\": [0.1, 0.1, 0.5, 0.5]}}\n```\n"
           "Several tool blocks in one message run in order. When you know the answer, write it in a fenced "
           "block tagged final:\n```final\nyour short answer\n```\n";
}

namespace {

std::string render_observation(const ToolCall& call, const ToolResult& r) {
    std::string s = "[observation " + call.call_id + " " + call.name + " " +
                    (r.status == ToolStatus::ok ? "ok" : "error") + "]\n" + r.text;
    return s;
}

}  // namespace

Trace run_rollout(const Task& task, ChatBackend& policy, const ToolEnv& env, const RolloutLimits& limits,
                  RolloutOptions options) {
    Trace tr;
    tr.task_id = task.id;
    tr.task = task;
    tr.limits = limits;
    tr.bank = options.bank ? std::move(*options.bank) : make_task_bank(task, limits.bank);
    tr.budget.limits = limits.budget;

    std::vector<ChatMessage> messages;
    messages.push_back({ChatRole::system, options.system_prompt.value_or(default_system_prompt()), {}});
    std::string question = task.question;
    if (!task.initial_handles.empty()) {
        question += "\n\nImages:";
        for (const auto& h : task.initial_handles) question += " " + h.render();
    }
    messages.push_back({ChatRole::user, question, task.initial_handles});

    for (int turn = 0;; ++turn) {
        ChatRequest req{messages, limits.decode, &tr.bank};
        ChatResponse resp;
        try {
            resp = complete(req, tr.budget, policy);
        } catch (const ScriptExhausted&) {
            tr.stop_reason = StopReason::script_exhausted;
            break;
        } catch (const Error& e) {
            if (e.kind() == ErrorKind::CallBudgetExhausted) {
                tr.stop_reason = StopReason::call_budget;
            } else if (e.kind() == ErrorKind::TokenBudgetExhausted) {
                tr.stop_reason = StopReason::token_budget;
            } else {
                tr.stop_reason = StopReason::backend_failure;
            }
            break;
        }

        auto parsed = parse_actions(resp.text);
        Turn t;
        t.assistant_text = resp.text;
        t.tokens_charged = resp.charged_tokens;
        t.parse_notes = std::move(parsed.notes);
        CallSite site{turn, tr.bank.size()};
        std::string observation;
        std::vector<ImageHandle> attached;
        for (std::size_t k = 0; k < parsed.actions.size(); ++k) {
            ToolCall call = std::move(parsed.actions[k]);
            call.call_id = options.call_prefix + "-" + std::to_string(turn) + "-" + std::to_string(k);
            ToolResult r;
            try {
                r = dispatch(call, tr.bank, env, site);
            } catch (const Error& e) {
                r.call_id = call.call_id;
                r.status = ToolStatus::error;
                r.error_kind = std::string(to_string(e.kind()));
                r.text = "error[" + *r.error_kind + "]: " + e.what();
            }
            if (!observation.empty()) observation += "\n\n";
            observation += render_observation(call, r);
            attached.insert(attached.end(), r.new_handles.begin(), r.new_handles.end());
            t.actions.push_back(std::move(call));
            t.results.push_back(std::move(r));
        }
        tr.turns.push_back(std::move(t));
        messages.push_back({ChatRole::assistant, resp.text, {}});

        if (parsed.final_answer) {
            tr.final_answer = std::move(parsed.final_answer);
            tr.stop_reason = StopReason::answered;
            break;
        }
        if (observation.empty()) {
            observation = "No tool block or final block was found. Call a tool or give the final answer.";
        }
        messages.push_back({ChatRole::user, std::move(observation), std::move(attached)});
    }
    return tr;
}

// ---------------------------------------------------------------------------
// serialization

json tool_call_to_json(const ToolCall& c) { return {{"name", c.name}, {"args", c.args}, {"call_id", c.call_id}}; }

ToolCall tool_call_from_json(const json& j) {
    return {j.at("name").get<std::string>(), j.value("args", json::object()), j.value("call_id", "")};
}

json tool_result_to_json(const ToolResult& r) {
    json handles = json::array();
    for (const auto& h : r.new_handles) handles.push_back(h.index);
    json j = {{"call_id", r.call_id},
              {"status", r.status == ToolStatus::ok ? "ok" : "error"},
              {"text", r.text},
              {"new_handles", handles}};
    j["error_kind"] = r.error_kind ? json(*r.error_kind) : json(nullptr);
    return j;
}

ToolResult tool_result_from_json(const json& j) {
    ToolResult r;
    r.call_id = j.at("call_id").get<std::string>();
    r.status = j.at("status").get<std::string>() == "ok" ? ToolStatus::ok : ToolStatus::error;
    r.text = j.at("text").get<std::string>();
    for (const auto& h : j.at("new_handles")) r.new_handles.push_back({h.get<std::size_t>()});
    if (j.contains("error_kind") && j["error_kind"].is_string()) r.error_kind = j["error_kind"].get<std::string>();
    return r;
}

namespace {

json limits_to_json(const RolloutLimits& l) {
    return {{"max_calls", l.budget.max_calls},
            {"per_turn_tokens", l.budget.per_turn_tokens},
            {"total_tokens", l.budget.total_tokens},
            {"bank_capacity", l.bank.capacity}};
}

json decode_to_json(const DecodeParams& d) {
    return {{"temperature", d.temperature}, {"top_p", d.top_p}, {"max_turn_tokens", d.max_turn_tokens}};
}

}  // namespace

std::string serialize_trace(const Trace& trace) {
    std::string out;
    auto line = [&](const json& j) {
        out += j.dump();
        out += '\n';
    };
    line({{"type", "header"},
          {"task_id", trace.task_id},
          {"task", task_to_json(trace.task)},
          {"limits", limits_to_json(trace.limits)},
          {"decode", decode_to_json(trace.limits.decode)}});
    for (std::size_t i = 0; i < trace.turns.size(); ++i) {
        const auto& t = trace.turns[i];
        json actions = json::array(), results = json::array();
        for (const auto& a : t.actions) actions.push_back(tool_call_to_json(a));
        for (const auto& r : t.results) results.push_back(tool_result_to_json(r));
        line({{"type", "turn"},
              {"index", i},
              {"assistant_text", t.assistant_text},
              {"tokens_charged", t.tokens_charged},
              {"parse_notes", t.parse_notes},
              {"actions", actions},
              {"results", results}});
    }
    json records = json::array();
    for (const auto& r : trace.bank.records()) {
        json origin = r.origin.is_tool()
                          ? json{{"kind", "tool"}, {"tool", r.origin.tool_name}, {"call_id", r.origin.call_id}}
                          : json{{"kind", "initial"}};
        records.push_back({{"index", r.handle.index},
                           {"mime", r.mime},
                           {"origin", origin},
                           {"created_turn", r.created_turn},
                           {"digest", r.digest}});
    }
    line({{"type", "bank"}, {"owner", trace.bank.owner()}, {"records", records}});
    line({{"type", "footer"},
          {"final_answer", trace.final_answer ? json(*trace.final_answer) : json(nullptr)},
          {"stop_reason", to_string(trace.stop_reason)},
          {"budget", {{"calls_used", trace.budget.calls_used}, {"total_tokens_used", trace.budget.total_tokens_used}}}});
    return out;
}

Trace deserialize_trace(std::string_view text, const std::filesystem::path& image_dir) {
    Trace tr;
    bool header = false, footer = false;
    std::istringstream in{std::string(text)};
    std::string raw;
    try {
        while (std::getline(in, raw)) {
            if (raw.empty()) continue;
            json j = json::parse(raw);
            auto type = j.at("type").get<std::string>();
            if (type == "header") {
                tr.task_id = j.at("task_id").get<std::string>();
                tr.task = task_from_json(j.at("task"), image_dir);
                const auto& l = j.at("limits");
                tr.limits.budget = {l.at("max_calls").get<int>(), l.at("per_turn_tokens").get<int>(),
                                    l.at("total_tokens").get<int>()};
                tr.limits.bank.capacity = l.at("bank_capacity").get<std::size_t>();
                const auto& d = j.at("decode");
                tr.limits.decode = {d.at("temperature").get<double>(), d.at("top_p").get<double>(),
                                    d.at("max_turn_tokens").get<int>()};
                header = true;
            } else if (type == "turn") {
                Turn t;
                t.assistant_text = j.at("assistant_text").get<std::string>();
                t.tokens_charged = j.at("tokens_charged").get<int>();
                t.parse_notes = j.at("parse_notes").get<std::vector<std::string>>();
                for (const auto& a : j.at("actions")) t.actions.push_back(tool_call_from_json(a));
                for (const auto& r : j.at("results")) t.results.push_back(tool_result_from_json(r));
                tr.turns.push_back(std::move(t));
            } else if (type == "bank") {
                BankOptions opts = tr.limits.bank;
                ImageBank bank(j.at("owner").get<std::string>(), opts);
                for (const auto& r : j.at("records")) {
                    const auto& o = r.at("origin");
                    ImageOrigin origin = o.at("kind").get<std::string>() == "tool"
                                             ? ImageOrigin::tool(o.at("tool").get<std::string>(),
                                                                 o.at("call_id").get<std::string>())
                                             : ImageOrigin::initial();
                    auto digest = r.at("digest").get<std::string>();
                    auto h = bank.register_image(read_file_bytes(image_dir / digest), r.at("mime").get<std::string>(),
                                                 origin, r.at("created_turn").get<int>());
                    if (h.index != r.at("index").get<std::size_t>() || bank.resolve(h).digest != digest) {
                        throw Error(ErrorKind::SerializationFailure, "bank record " + h.render() + " does not match");
                    }
                }
                tr.bank = std::move(bank);
            } else if (type == "footer") {
                const auto& fa = j.at("final_answer");
                if (fa.is_string()) tr.final_answer = fa.get<std::string>();
                tr.stop_reason = stop_reason_from_string(j.at("stop_reason").get<std::string>());
                tr.budget.limits = tr.limits.budget;
                tr.budget.calls_used = j.at("budget").at("calls_used").get<int>();
                tr.budget.total_tokens_used = j.at("budget").at("total_tokens_used").get<int>();
                footer = true;
            } else {
                throw Error(ErrorKind::SerializationFailure, "unknown trace record '" + type + "'");
            }
        }
    } catch (const json::exception& e) {
        throw Error(ErrorKind::SerializationFailure, std::string("bad trace line: ") + e.what());
    }
    if (!header || !footer) throw Error(ErrorKind::SerializationFailure, "trace lacks header or footer");
    return tr;
}

void finalize_trace(const Trace& trace, const std::filesystem::path& path) {
    if (trace.final_answer.has_value() != (trace.stop_reason == StopReason::answered)) {
        throw Error(ErrorKind::SerializationFailure, "final answer and stop reason disagree");
    }
    for (const auto& t : trace.turns) {
        if (t.actions.size() != t.results.size()) {
            throw Error(ErrorKind::SerializationFailure, "turn results do not align with actions");
        }
    }
    auto image_dir = path.parent_path() / "images";
    try {
        for (const auto& r : trace.bank.records()) {
            auto p = image_dir / r.digest;
            if (!std::filesystem::exists(p)) write_file_atomic(p, *r.payload());
        }
        for (const auto& img : trace.task.images) {
            auto p = image_dir / sha256_hex(*img.payload);
            if (!std::filesystem::exists(p)) write_file_atomic(p, *img.payload);
        }
        write_file_atomic(path, serialize_trace(trace));
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::SerializationFailure) throw;
        throw Error(ErrorKind::SerializationFailure, e.what());
    }
}

Trace read_trace(const std::filesystem::path& path) {
    return deserialize_trace(read_file_text(path), path.parent_path() / "images");
}

}  // namespace ode
