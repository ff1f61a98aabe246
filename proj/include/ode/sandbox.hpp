#pragma once

#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace ode {

using nlohmann::json;

inline constexpr int kSandboxProtocolVersion = 1;

// Wire protocol (one JSON object per line in each direction):
//   -> {"op":"handshake","protocol_version":1}
//   <- {"protocol_version":1,"interpreter_version":"...","limits_supported":[...]}
//   -> {"op":"execute","id":"...","code":"...","timeout_s":2.0,"limits":{"memory_mb":512,"no_network":true}}
//   <- {"id":"...","status":"ok|error|timeout","stdout":"...","stderr":"...","wall_time_s":0.01}

struct ExecRequest {
    std::string id;
    std::string code;
    double timeout_s = 10.0;
    int memory_mb = 512;
    bool no_network = true;
};

enum class ExecStatus { ok, error, timeout };

struct ExecResponse {
    std::string id;
    ExecStatus status = ExecStatus::ok;
    std::string stdout_text;
    std::string stderr_text;
    double wall_time_s = 0.0;
};

struct SandboxCapabilities {
    int protocol_version = 0;
    std::string interpreter_version;
    std::vector<std::string> limits_supported;
};

json to_json(const ExecRequest& req);
ExecResponse exec_response_from_json(const json& j);
json to_json(const ExecResponse& resp);
std::string_view to_string(ExecStatus status);

/// Client side of the code-execution worker. Transport problems throw
/// Error(SandboxUnavailable); a worker that stops answering throws Error(Timeout).
class SandboxClient {
public:
    virtual ~SandboxClient() = default;
    virtual ExecResponse execute(const ExecRequest& req) = 0;
};

/// One worker subprocess spoken to over its stdin/stdout.
class SubprocessWorker {
public:
    explicit SubprocessWorker(std::vector<std::string> argv);
    ~SubprocessWorker();
    SubprocessWorker(const SubprocessWorker&) = delete;
    SubprocessWorker& operator=(const SubprocessWorker&) = delete;

    /// Must be called exactly once before execute(); version mismatch is fatal.
    SandboxCapabilities handshake(std::chrono::milliseconds wait = std::chrono::seconds(10));
    ExecResponse execute(const ExecRequest& req);
    bool alive() const { return pid_ > 0; }

private:
    void send_line(const std::string& line);
    std::optional<std::string> read_line(std::chrono::steady_clock::time_point deadline);
    void kill_worker();

    std::vector<std::string> argv_;
    int pid_ = -1;
    int to_child_ = -1;
    int from_child_ = -1;
    bool handshaken_ = false;
    std::string buffer_;
};

/// Fixed-size pool of workers; each request checks out one worker.
/// Dead workers (killed after a hang) are respawned on next checkout.
class WorkerPool : public SandboxClient {
public:
    WorkerPool(std::vector<std::string> argv, std::size_t size);
    ExecResponse execute(const ExecRequest& req) override;

private:
    std::unique_ptr<SubprocessWorker> spawn();

    std::vector<std::string> argv_;
    std::mutex mu_;
    std::condition_variable cv_;
    std::vector<std::unique_ptr<SubprocessWorker>> idle_;
    std::size_t outstanding_ = 0;
    std::size_t size_;
};

/// Replays a recorded transcript: JSONL of {"request":{...},"response":{...}},
/// matched on the request's code. Unknown code is SandboxUnavailable.
class TranscriptSandbox : public SandboxClient {
public:
    static std::shared_ptr<TranscriptSandbox> load(const std::filesystem::path& path);
    void add(const std::string& code, ExecResponse response);
    ExecResponse execute(const ExecRequest& req) override;

private:
    std::map<std::string, ExecResponse> by_code_;
};

}  // namespace ode
