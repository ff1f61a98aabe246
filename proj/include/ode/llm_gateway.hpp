#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ode/error.hpp"
#include "ode/image_bank.hpp"

namespace ode {

enum class ChatRole { system, user, assistant };
std::string_view to_string(ChatRole role);

struct ChatMessage {
    ChatRole role = ChatRole::user;
    std::string text;
    std::vector<ImageHandle> images;  // attachments, resolved against ChatRequest::bank
};

struct DecodeParams {
    double temperature = 0.6;
    double top_p = 0.95;
    int max_turn_tokens = 8192;

    /// Throws InvalidArgument unless temperature >= 0, 0 < top_p <= 1, max_turn_tokens >= 1.
    void validate() const;
};

struct ChatRequest {
    std::vector<ChatMessage> messages;
    DecodeParams decode;
    const ImageBank* bank = nullptr;
};

struct BudgetLimits {
    int max_calls = 50;
    int per_turn_tokens = 8192;
    int total_tokens = 16000;
};

struct BudgetState {
    int calls_used = 0;
    int total_tokens_used = 0;
    BudgetLimits limits;

    int token_headroom() const { return limits.total_tokens - total_tokens_used; }
    friend bool operator==(const BudgetState& a, const BudgetState& b) {
        return a.calls_used == b.calls_used && a.total_tokens_used == b.total_tokens_used &&
               a.limits.max_calls == b.limits.max_calls && a.limits.per_turn_tokens == b.limits.per_turn_tokens &&
               a.limits.total_tokens == b.limits.total_tokens;
    }
};

/// What a backend produced; output_tokens is the backend's usage report when it has one.
struct BackendOutput {
    std::string text;
    std::optional<int> output_tokens;
};

struct ChatResponse {
    std::string text;
    int reported_output_tokens = 0;
    int charged_tokens = 0;
    bool truncated = false;
};

class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    /// Throws Error(BackendFailure) when no generation is possible.
    virtual BackendOutput generate(const ChatRequest& req) = 0;
};

/// Thrown by scripted backends once every entry has been served.
class ScriptExhausted : public Error {
public:
    explicit ScriptExhausted(const std::string& message) : Error(ErrorKind::BackendFailure, message) {}
};

/// Budget-checked completion. Calls are checked before tokens; a call is refused
/// unless calls_used < max_calls and at least one token of headroom remains. The
/// charge is min(output tokens, per-turn cap, remaining headroom) and the text is
/// truncated to match, so the counters can never exceed their limits.
ChatResponse complete(const ChatRequest& req, BudgetState& budget, ChatBackend& backend);

/// Whitespace-delimited units plus maximal runs of non-alphanumeric symbols.
/// "answer: 91" -> 3. Bytes >= 0x80 count as alphanumeric so UTF-8 text stays intact.
int count_tokens(std::string_view text);

/// Longest prefix of `text` whose count_tokens is at most `max_tokens`.
std::string truncate_to_tokens(std::string_view text, int max_tokens);

struct ScriptEntry {
    std::string text;
    std::optional<int> output_tokens;
};

/// Replays a fixed response sequence in call order. Thread-safe.
class ScriptedBackend : public ChatBackend {
public:
    explicit ScriptedBackend(std::vector<ScriptEntry> entries, std::string label = {});

    BackendOutput generate(const ChatRequest& req) override;
    std::size_t served() const;
    std::size_t size() const { return entries_.size(); }
    /// Every request this backend has seen, in order.
    std::vector<ChatRequest> requests() const;

private:
    std::vector<ScriptEntry> entries_;
    std::string label_;
    mutable std::mutex mu_;
    std::size_t next_ = 0;
    std::vector<ChatRequest> seen_;
};

/// Line-delimited script: each non-blank line is a JSON string (the response text)
/// or an object {"text": ..., "output_tokens": N}. Empty or malformed files throw ScriptParseError.
std::shared_ptr<ScriptedBackend> load_script(const std::filesystem::path& path);
std::vector<ScriptEntry> parse_script(std::string_view content, const std::string& origin = "<memory>");

/// OpenAI-compatible chat-completions endpoint; attached images go as data URLs.
class OpenAiChatBackend : public ChatBackend {
public:
    OpenAiChatBackend(std::string base_url, std::string model, std::string api_key);
    BackendOutput generate(const ChatRequest& req) override;

private:
    std::string base_url_;
    std::string model_;
    std::string api_key_;
};

/// Which conversation a backend serves: the evolution round (if any), the
/// pipeline role, and an item id (seed, task).
struct BackendScope {
    std::optional<int> round;
    std::string role;
    std::string id;
};

/// Lookup keys tried in order: r<round>/<role>/<id>, r<round>/<role>, <role>/<id>, <role>.
std::vector<std::string> scope_candidates(const BackendScope& scope);

struct BackendSpec {
    std::string type;  // "scripted" or "openai"
    std::filesystem::path path;  // scripted: a .jsonl file, or a directory laid out by scope
    std::string base_url;
    std::string model;
    std::string api_key_env;
};

/// Maps config backend keys to backends. Scripted directories resolve per scope
/// (see scope_candidates) to `<dir>/<candidate>.jsonl`; each file is loaded once,
/// so a shared role script is consumed in sequence across scopes.
class BackendRegistry {
public:
    void define(const std::string& key, BackendSpec spec);
    void add(const std::string& key, std::shared_ptr<ChatBackend> backend);
    /// In-memory backend for one scope candidate string, e.g. "r0/explorer/seed-1".
    void add_scoped(const std::string& key, const std::string& scope_key, std::shared_ptr<ChatBackend> backend);

    bool has(const std::string& key) const;
    std::shared_ptr<ChatBackend> get(const std::string& key, const BackendScope& scope = {});

private:
    mutable std::mutex mu_;
    std::map<std::string, BackendSpec> specs_;
    std::map<std::string, std::shared_ptr<ChatBackend>> fixed_;
    std::map<std::string, std::map<std::string, std::shared_ptr<ChatBackend>>> scoped_;
    std::map<std::filesystem::path, std::shared_ptr<ChatBackend>> loaded_;
};

}  // namespace ode
