#include "ode/sandbox.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <sstream>

#include "ode/digest.hpp"
#include "ode/error.hpp"

namespace ode {

std::string_view to_string(ExecStatus status) {
    switch (status) {
        case ExecStatus::ok: return "ok";
        case ExecStatus::error: return "error";
        case ExecStatus::timeout: return "timeout";
    }
    return "error";
}

json to_json(const ExecRequest& req) {
    return {{"op", "execute"},
            {"id", req.id},
            {"code", req.code},
            {"timeout_s", req.timeout_s},
            {"limits", {{"memory_mb", req.memory_mb}, {"no_network", req.no_network}}}};
}

json to_json(const ExecResponse& resp) {
    return {{"id", resp.id},
            {"status", to_string(resp.status)},
            {"stdout", resp.stdout_text},
            {"stderr", resp.stderr_text},
            {"wall_time_s", resp.wall_time_s}};
}

ExecResponse exec_response_from_json(const json& j) {
    if (!j.is_object() || !j.contains("id") || !j.contains("status")) {
        throw Error(ErrorKind::SandboxUnavailable, "malformed worker response");
    }
    ExecResponse r;
    r.id = j.at("id").get<std::string>();
    auto status = j.at("status").get<std::string>();
    if (status == "ok") {
        r.status = ExecStatus::ok;
    } else if (status == "error") {
        r.status = ExecStatus::error;
    } else if (status == "timeout") {
        r.status = ExecStatus::timeout;
    } else {
        throw Error(ErrorKind::SandboxUnavailable, "unknown worker status '" + status + "'");
    }
    r.stdout_text = j.value("stdout", "");
    r.stderr_text = j.value("stderr", "");
    r.wall_time_s = j.value("wall_time_s", 0.0);
    return r;
}

// ---------------------------------------------------------------------------
// SubprocessWorker

SubprocessWorker::SubprocessWorker(std::vector<std::string> argv) : argv_(std::move(argv)) {
    if (argv_.empty()) throw Error(ErrorKind::SandboxUnavailable, "empty worker command");
    int in_pipe[2];
    int out_pipe[2];
    if (pipe(in_pipe) != 0 || pipe(out_pipe) != 0) {
        throw Error(ErrorKind::SandboxUnavailable, std::string("pipe: ") + std::strerror(errno));
    }
    std::vector<char*> args;
    for (auto& a : argv_) args.push_back(a.data());
    args.push_back(nullptr);
    pid_ = fork();
    if (pid_ < 0) throw Error(ErrorKind::SandboxUnavailable, std::string("fork: ") + std::strerror(errno));
    if (pid_ == 0) {
        dup2(in_pipe[0], STDIN_FILENO);
        dup2(out_pipe[1], STDOUT_FILENO);
        close(in_pipe[0]);
        close(in_pipe[1]);
        close(out_pipe[0]);
        close(out_pipe[1]);
        execvp(args[0], args.data());
        _exit(127);
    }
    close(in_pipe[0]);
    close(out_pipe[1]);
    to_child_ = in_pipe[1];
    from_child_ = out_pipe[0];
    // A worker that dies must not take the client down with SIGPIPE.
    signal(SIGPIPE, SIG_IGN);
}

SubprocessWorker::~SubprocessWorker() { kill_worker(); }

void SubprocessWorker::kill_worker() {
    if (to_child_ >= 0) close(to_child_);
    if (from_child_ >= 0) close(from_child_);
    to_child_ = from_child_ = -1;
    if (pid_ > 0) {
        kill(pid_, SIGKILL);
        waitpid(pid_, nullptr, 0);
    }
    pid_ = -1;
}

void SubprocessWorker::send_line(const std::string& line) {
    std::string data = line + "\n";
    std::size_t off = 0;
    while (off < data.size()) {
        ssize_t n = write(to_child_, data.data() + off, data.size() - off);
        if (n < 0) {
            if (errno == EINTR) continue;
            kill_worker();
            throw Error(ErrorKind::SandboxUnavailable, "worker closed its input");
        }
        off += static_cast<std::size_t>(n);
    }
}

std::optional<std::string> SubprocessWorker::read_line(std::chrono::steady_clock::time_point deadline) {
    for (;;) {
        if (auto nl = buffer_.find('\n'); nl != std::string::npos) {
            std::string line = buffer_.substr(0, nl);
            buffer_.erase(0, nl + 1);
            return line;
        }
        auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        if (left.count() <= 0) return std::nullopt;
        pollfd pfd{from_child_, POLLIN, 0};
        int rc = poll(&pfd, 1, static_cast<int>(left.count()));
        if (rc < 0 && errno == EINTR) continue;
        if (rc <= 0) return std::nullopt;
        char chunk[4096];
        ssize_t n = read(from_child_, chunk, sizeof chunk);
        if (n <= 0) {
            kill_worker();
            throw Error(ErrorKind::SandboxUnavailable, "worker exited");
        }
        buffer_.append(chunk, static_cast<std::size_t>(n));
    }
}

SandboxCapabilities SubprocessWorker::handshake(std::chrono::milliseconds wait) {
    if (handshaken_) throw Error(ErrorKind::SandboxUnavailable, "handshake already completed");
    send_line(json{{"op", "handshake"}, {"protocol_version", kSandboxProtocolVersion}}.dump());
    auto line = read_line(std::chrono::steady_clock::now() + wait);
    if (!line) {
        kill_worker();
        throw Error(ErrorKind::SandboxUnavailable, "handshake timed out");
    }
    json j = json::parse(*line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("protocol_version")) {
        kill_worker();
        throw Error(ErrorKind::SandboxUnavailable, "garbled handshake: " + line->substr(0, 80));
    }
    SandboxCapabilities caps;
    caps.protocol_version = j.value("protocol_version", 0);
    caps.interpreter_version = j.value("interpreter_version", "");
    caps.limits_supported = j.value("limits_supported", std::vector<std::string>{});
    if (caps.protocol_version != kSandboxProtocolVersion) {
        kill_worker();
        throw Error(ErrorKind::SandboxUnavailable,
                    "worker speaks protocol " + std::to_string(caps.protocol_version));
    }
    handshaken_ = true;
    return caps;
}

ExecResponse SubprocessWorker::execute(const ExecRequest& req) {
    if (!alive()) throw Error(ErrorKind::SandboxUnavailable, "worker is not running");
    if (!handshaken_) throw Error(ErrorKind::SandboxUnavailable, "execute before handshake");
    send_line(to_json(req).dump());
    // The worker enforces timeout_s itself; the grace covers interpreter startup.
    auto deadline = std::chrono::steady_clock::now() +
                    std::chrono::milliseconds(static_cast<long>(req.timeout_s * 1000.0) + 5000);
    auto line = read_line(deadline);
    if (!line) {
        kill_worker();
        throw Error(ErrorKind::Timeout, "worker did not answer request " + req.id);
    }
    json j = json::parse(*line, nullptr, false);
    if (j.is_discarded()) throw Error(ErrorKind::SandboxUnavailable, "garbled worker response");
    auto resp = exec_response_from_json(j);
    if (resp.id != req.id) {
        throw Error(ErrorKind::SandboxUnavailable, "response id " + resp.id + " does not match " + req.id);
    }
    return resp;
}

// ---------------------------------------------------------------------------
// WorkerPool

WorkerPool::WorkerPool(std::vector<std::string> argv, std::size_t size)
    : argv_(std::move(argv)), size_(size == 0 ? 1 : size) {}

std::unique_ptr<SubprocessWorker> WorkerPool::spawn() {
    auto w = std::make_unique<SubprocessWorker>(argv_);
    w->handshake();
    return w;
}

ExecResponse WorkerPool::execute(const ExecRequest& req) {
    std::unique_ptr<SubprocessWorker> worker;
    {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return !idle_.empty() || outstanding_ < size_; });
        if (!idle_.empty()) {
            worker = std::move(idle_.back());
            idle_.pop_back();
        }
        ++outstanding_;
    }
    auto release = [&](std::unique_ptr<SubprocessWorker> w) {
        std::lock_guard lock(mu_);
        --outstanding_;
        if (w && w->alive()) idle_.push_back(std::move(w));
        cv_.notify_one();
    };
    try {
        if (!worker || !worker->alive()) worker = spawn();
        auto resp = worker->execute(req);
        release(std::move(worker));
        return resp;
    } catch (...) {
        release(nullptr);
        throw;
    }
}

// ---------------------------------------------------------------------------
// TranscriptSandbox

std::shared_ptr<TranscriptSandbox> TranscriptSandbox::load(const std::filesystem::path& path) {
    auto sb = std::make_shared<TranscriptSandbox>();
    std::istringstream in(read_file_text(path));
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.contains("request") || !j.contains("response")) {
            throw Error(ErrorKind::SandboxUnavailable, "bad transcript line in " + path.string());
        }
        sb->add(j["request"].at("code").get<std::string>(), exec_response_from_json(j["response"]));
    }
    return sb;
}

void TranscriptSandbox::add(const std::string& code, ExecResponse response) {
    by_code_[code] = std::move(response);
}

ExecResponse TranscriptSandbox::execute(const ExecRequest& req) {
    auto it = by_code_.find(req.code);
    if (it == by_code_.end()) throw Error(ErrorKind::SandboxUnavailable, "no transcript entry for request " + req.id);
    ExecResponse resp = it->second;
    resp.id = req.id;
    return resp;
}

}  // namespace ode
