#include "ode/llm_gateway.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <sstream>

#include "ode/providers.hpp"

namespace ode {

using nlohmann::json;

std::string_view to_string(ChatRole role) {
    switch (role) {
        case ChatRole::system: return "system";
        case ChatRole::user: return "user";
        case ChatRole::assistant: return "assistant";
    }
    return "user";
}

void DecodeParams::validate() const {
    if (!(temperature >= 0.0)) throw Error(ErrorKind::InvalidArgument, "temperature must be >= 0");
    if (!(top_p > 0.0 && top_p <= 1.0)) throw Error(ErrorKind::InvalidArgument, "top_p must be in (0, 1]");
    if (max_turn_tokens < 1) throw Error(ErrorKind::InvalidArgument, "max_turn_tokens must be >= 1");
}

// ---------------------------------------------------------------------------
// token approximation

namespace {

enum class CharClass { space, word, symbol };

CharClass classify(unsigned char c) {
    if (std::isspace(c)) return CharClass::space;
    if (c >= 0x80 || std::isalnum(c)) return CharClass::word;
    return CharClass::symbol;
}

// Tokens added by appending `cur` after `prev`.
int increment(CharClass prev, CharClass cur) {
    int inc = 0;
    if (cur != CharClass::space && prev == CharClass::space) ++inc;  // new whitespace unit
    if (cur == CharClass::symbol && prev != CharClass::symbol) ++inc;  // new symbol run
    return inc;
}

}  // namespace

int count_tokens(std::string_view text) {
    int n = 0;
    CharClass prev = CharClass::space;
    for (char ch : text) {
        auto cur = classify(static_cast<unsigned char>(ch));
        n += increment(prev, cur);
        prev = cur;
    }
    return n;
}

std::string truncate_to_tokens(std::string_view text, int max_tokens) {
    int n = 0;
    CharClass prev = CharClass::space;
    std::size_t i = 0;
    for (; i < text.size(); ++i) {
        auto cur = classify(static_cast<unsigned char>(text[i]));
        int inc = increment(prev, cur);
        if (n + inc > max_tokens) break;
        n += inc;
        prev = cur;
    }
    return std::string(text.substr(0, i));
}

ChatResponse complete(const ChatRequest& req, BudgetState& budget, ChatBackend& backend) {
    req.decode.validate();
    if (budget.calls_used >= budget.limits.max_calls) {
        throw Error(ErrorKind::CallBudgetExhausted,
                    std::to_string(budget.calls_used) + " of " + std::to_string(budget.limits.max_calls) + " calls used");
    }
    if (budget.token_headroom() < 1) {
        throw Error(ErrorKind::TokenBudgetExhausted, std::to_string(budget.total_tokens_used) + " of " +
                                                         std::to_string(budget.limits.total_tokens) + " tokens used");
    }
    BackendOutput out = backend.generate(req);
    ChatResponse resp;
    resp.reported_output_tokens = std::max(0, out.output_tokens.value_or(count_tokens(out.text)));
    int cap = std::min({budget.limits.per_turn_tokens, req.decode.max_turn_tokens, budget.token_headroom()});
    resp.charged_tokens = std::min(resp.reported_output_tokens, cap);
    if (resp.reported_output_tokens > cap) {
        resp.text = truncate_to_tokens(out.text, cap);
        resp.truncated = true;
    } else {
        resp.text = std::move(out.text);
    }
    budget.calls_used += 1;
    budget.total_tokens_used += resp.charged_tokens;
    return resp;
}

// ---------------------------------------------------------------------------
// scripted backend

ScriptedBackend::ScriptedBackend(std::vector<ScriptEntry> entries, std::string label)
    : entries_(std::move(entries)), label_(std::move(label)) {}

BackendOutput ScriptedBackend::generate(const ChatRequest& req) {
    std::lock_guard lock(mu_);
    seen_.push_back(req);
    if (next_ >= entries_.size()) {
        throw ScriptExhausted("script " + label_ + " exhausted after " + std::to_string(entries_.size()) + " entries");
    }
    const auto& e = entries_[next_++];
    return {e.text, e.output_tokens};
}

std::size_t ScriptedBackend::served() const {
    std::lock_guard lock(mu_);
    return next_;
}

std::vector<ChatRequest> ScriptedBackend::requests() const {
    std::lock_guard lock(mu_);
    return seen_;
}

std::vector<ScriptEntry> parse_script(std::string_view content, const std::string& origin) {
    std::vector<ScriptEntry> entries;
    std::istringstream in{std::string(content)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j = json::parse(line, nullptr, false);
        ScriptEntry e;
        if (j.is_string()) {
            e.text = j.get<std::string>();
        } else if (j.is_object() && j.contains("text") && j["text"].is_string()) {
            e.text = j["text"].get<std::string>();
            if (j.contains("output_tokens")) {
                if (!j["output_tokens"].is_number_integer()) {
                    throw Error(ErrorKind::ScriptParseError, origin + ":" + std::to_string(lineno) + ": bad output_tokens");
                }
                e.output_tokens = j["output_tokens"].get<int>();
            }
        } else {
            throw Error(ErrorKind::ScriptParseError, origin + ":" + std::to_string(lineno) + ": expected string or {text}");
        }
        entries.push_back(std::move(e));
    }
    if (entries.empty()) throw Error(ErrorKind::ScriptParseError, origin + " has no entries");
    return entries;
}

std::shared_ptr<ScriptedBackend> load_script(const std::filesystem::path& path) {
    if (!std::filesystem::is_regular_file(path)) throw Error(ErrorKind::ScriptParseError, "no script at " + path.string());
    return std::make_shared<ScriptedBackend>(parse_script(read_file_text(path), path.string()), path.string());
}

// ---------------------------------------------------------------------------
// OpenAI-compatible backend

OpenAiChatBackend::OpenAiChatBackend(std::string base_url, std::string model, std::string api_key)
    : base_url_(std::move(base_url)), model_(std::move(model)), api_key_(std::move(api_key)) {}

BackendOutput OpenAiChatBackend::generate(const ChatRequest& req) {
    auto u = parse_url(base_url_);
    if (!u) throw Error(ErrorKind::BackendFailure, "bad backend url " + base_url_);
    json messages = json::array();
    for (const auto& m : req.messages) {
        if (m.images.empty() || !req.bank) {
            messages.push_back({{"role", to_string(m.role)}, {"content", m.text}});
            continue;
        }
        json parts = json::array({{{"type", "text"}, {"text", m.text}}});
        for (const auto& h : m.images) {
            const auto& rec = req.bank->resolve(h);
            parts.push_back({{"type", "image_url"},
                             {"image_url", {{"url", "data:" + rec.mime + ";base64," + base64_encode(*rec.payload())}}}});
        }
        messages.push_back({{"role", to_string(m.role)}, {"content", parts}});
    }
    json body = {{"model", model_},
                 {"messages", messages},
                 {"temperature", req.decode.temperature},
                 {"top_p", req.decode.top_p},
                 {"max_tokens", req.decode.max_turn_tokens}};
    httplib::Client cli(u->scheme + "://" + u->host + ":" + std::to_string(u->port));
    cli.set_read_timeout(300);
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
    std::string path = u->path;
    if (path.empty() || path.back() != '/') path += "/";
    auto res = cli.Post(path + "chat/completions", headers, body.dump(), "application/json");
    if (!res || res->status != 200) {
        throw Error(ErrorKind::BackendFailure,
                    "chat completion failed" + (res ? " with status " + std::to_string(res->status) : std::string()));
    }
    json doc = json::parse(res->body, nullptr, false);
    if (doc.is_discarded() || !doc.contains("choices") || doc["choices"].empty()) {
        throw Error(ErrorKind::BackendFailure, "malformed chat completion");
    }
    BackendOutput out;
    out.text = doc["choices"][0]["message"].value("content", "");
    if (doc.contains("usage") && doc["usage"].contains("completion_tokens")) {
        out.output_tokens = doc["usage"]["completion_tokens"].get<int>();
    }
    return out;
}

// ---------------------------------------------------------------------------
// registry

std::vector<std::string> scope_candidates(const BackendScope& scope) {
    std::vector<std::string> out;
    auto add = [&](const std::string& prefix) {
        if (scope.role.empty()) return;
        if (!scope.id.empty()) out.push_back(prefix + scope.role + "/" + scope.id);
        out.push_back(prefix + scope.role);
    };
    if (scope.round) add("r" + std::to_string(*scope.round) + "/");
    add("");
    return out;
}

void BackendRegistry::define(const std::string& key, BackendSpec spec) {
    std::lock_guard lock(mu_);
    specs_[key] = std::move(spec);
}

void BackendRegistry::add(const std::string& key, std::shared_ptr<ChatBackend> backend) {
    std::lock_guard lock(mu_);
    fixed_[key] = std::move(backend);
}

void BackendRegistry::add_scoped(const std::string& key, const std::string& scope_key,
                                 std::shared_ptr<ChatBackend> backend) {
    std::lock_guard lock(mu_);
    scoped_[key][scope_key] = std::move(backend);
}

bool BackendRegistry::has(const std::string& key) const {
    std::lock_guard lock(mu_);
    return specs_.count(key) || fixed_.count(key) || scoped_.count(key);
}

std::shared_ptr<ChatBackend> BackendRegistry::get(const std::string& key, const BackendScope& scope) {
    std::lock_guard lock(mu_);
    auto candidates = scope_candidates(scope);
    if (auto it = scoped_.find(key); it != scoped_.end()) {
        for (const auto& c : candidates) {
            if (auto b = it->second.find(c); b != it->second.end()) return b->second;
        }
    }
    if (auto it = fixed_.find(key); it != fixed_.end()) return it->second;
    auto spec_it = specs_.find(key);
    if (spec_it == specs_.end()) throw Error(ErrorKind::BackendFailure, "no backend named '" + key + "'");
    const auto& spec = spec_it->second;
    if (spec.type == "openai") {
        const char* k = spec.api_key_env.empty() ? nullptr : std::getenv(spec.api_key_env.c_str());
        auto b = std::make_shared<OpenAiChatBackend>(spec.base_url, spec.model, k ? k : "");
        fixed_[key] = b;
        return b;
    }
    if (spec.type != "scripted") throw Error(ErrorKind::BackendFailure, "unknown backend type '" + spec.type + "'");
    std::filesystem::path file;
    if (std::filesystem::is_directory(spec.path)) {
        for (const auto& c : candidates) {
            auto p = spec.path / (c + ".jsonl");
            if (std::filesystem::is_regular_file(p)) {
                file = p;
                break;
            }
        }
        if (file.empty()) {
            throw Error(ErrorKind::BackendFailure,
                        "no script for " + (candidates.empty() ? key : candidates.front()) + " in " + spec.path.string());
        }
    } else {
        file = spec.path;
    }
    if (auto it = loaded_.find(file); it != loaded_.end()) return it->second;
    auto b = load_script(file);
    loaded_[file] = b;
    return b;
}

}  // namespace ode
