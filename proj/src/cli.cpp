#include "ode/cli.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "ode/analytics.hpp"
#include "ode/backward.hpp"
#include "ode/digest.hpp"
#include "ode/error.hpp"
#include "ode/forward.hpp"
#include "ode/parallel.hpp"

namespace ode {

namespace fs = std::filesystem;

namespace {

/// Exit with a code carried out of nested helpers.
struct ExitCode {
    int code;
    std::string message;
};

class DirLock {
public:
    explicit DirLock(const fs::path& dir) {
        fs::create_directories(dir);
        fd_ = ::open((dir / ".lock").c_str(), O_CREAT | O_RDWR | O_CLOEXEC, 0644);
        if (fd_ < 0 || ::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
            if (fd_ >= 0) ::close(fd_);
            throw ExitCode{kExitUsage, dir.string() + " is in use by another ode process"};
        }
    }
    ~DirLock() {
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
    }
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

private:
    int fd_ = -1;
};

SystemConfig load_system(const RunManifest& m) {
    SystemConfig sys;
    try {
        sys = m.system ? load_system_config(*m.system) : SystemConfig::defaults();
        if (m.mode) {
            sys.mode = mode_from_string(*m.mode);
            sys.rubric = RubricSpec::for_mode(sys.mode);
        }
    } catch (const Error& e) {
        throw ExitCode{kExitUsage, e.what()};
    }
    auto violations = validate(sys);
    if (!violations.empty()) {
        std::string msg = "invalid system config:";
        for (const auto& v : violations) msg += "\n  " + v.path + ": " + v.message;
        throw ExitCode{kExitUsage, msg};
    }
    return sys;
}

EvolvableConfig load_config(const RunManifest& m) {
    EvolvableConfig c;
    try {
        c = m.config ? load_evolvable_config(*m.config) : EvolvableConfig::sample();
    } catch (const Error& e) {
        throw ExitCode{kExitUsage, e.what()};
    }
    auto violations = validate(c);
    if (!violations.empty()) {
        std::string msg = "invalid stage config:";
        for (const auto& v : violations) msg += "\n  " + v.path + ": " + v.message;
        throw ExitCode{kExitUsage, msg};
    }
    return c;
}

ToolEnv make_env(const RunManifest& m) {
    if (m.providers != ProviderMode::live) {
        if (!m.fixtures) throw ExitCode{kExitFixtures, std::string(to_string(m.providers)) + " mode needs --fixtures"};
        if (m.providers == ProviderMode::replay &&
            (!fs::is_directory(*m.fixtures) || fs::is_empty(*m.fixtures))) {
            throw ExitCode{kExitFixtures, "fixture directory " + m.fixtures->string() + " is missing or empty"};
        }
    }
    ToolEnv env;
    env.provider = make_provider(m.providers, m.fixtures);
    if (m.sandbox_transcript) {
        try {
            env.sandbox = TranscriptSandbox::load(*m.sandbox_transcript);
        } catch (const Error& e) {
            throw ExitCode{kExitFixtures, e.what()};
        }
    } else if (m.sandbox_worker) {
        std::istringstream is(*m.sandbox_worker);
        std::vector<std::string> argv;
        for (std::string w; is >> w;) argv.push_back(w);
        if (argv.empty()) throw ExitCode{kExitUsage, "--sandbox-worker is empty"};
        env.sandbox = std::make_shared<WorkerPool>(argv, static_cast<std::size_t>(std::max(1, m.workers)));
    }
    return env;
}

void define_backends(BackendRegistry& reg, const SystemConfig& sys) {
    for (const auto& [key, spec] : sys.backends) reg.define(key, spec);
}

json verdict_json(const Verification& v) {
    json j = {{"task_id", v.trace.task_id}, {"success", v.success}, {"notes", v.notes}};
    if (v.verdict) {
        j["verdict"] = {{"correct", v.verdict->correct ? "yes" : "no"},
                        {"equivalence", to_string(v.verdict->equivalence)},
                        {"reason", v.verdict->reason}};
    } else {
        j["verdict"] = nullptr;
    }
    return j;
}

std::vector<Task> load_tasks_from(const fs::path& p) {
    std::vector<Task> tasks;
    auto load_pool = [&](const fs::path& file) {
        json j = json::parse(read_file_text(file), nullptr, false);
        if (j.is_discarded() || !j.contains("tasks")) {
            throw Error(ErrorKind::SerializationFailure, file.string() + " is not a pool document");
        }
        auto dir = file.parent_path();
        for (const auto& t : j["tasks"]) tasks.push_back(task_from_json(t, dir / "images", dir));
    };
    if (fs::is_directory(p)) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(p)) {
            if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            if (f.filename() == "pool.json") {
                load_pool(f);
            } else {
                tasks.push_back(load_task(f));
            }
        }
    } else if (p.filename() == "pool.json") {
        load_pool(p);
    } else {
        tasks.push_back(load_task(p));
    }
    return tasks;
}

std::string safe_name(const std::string& id) {
    std::string s = id;
    for (char& c : s) {
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) c = '_';
    }
    return s;
}

std::string jsonl(const std::vector<json>& rows) {
    std::string out;
    for (const auto& r : rows) out += r.dump() + "\n";
    return out;
}

}  // namespace

int cmd_rollout(const RunManifest& m, std::ostream& out, std::ostream&) {
    if (!m.task) throw ExitCode{kExitUsage, "--task is required"};
    auto sys = load_system(m);
    auto env = make_env(m);
    Task task;
    try {
        task = load_task(*m.task);
        validate_task(task);
    } catch (const Error& e) {
        throw ExitCode{kExitUsage, e.what()};
    }
    DirLock lock(m.out);
    BackendRegistry backends;
    define_backends(backends, sys);
    auto v = verify_task(task, sys, backends, env);
    auto base = m.out / safe_name(task.id);
    finalize_trace(v.trace, base.string() + ".trace.jsonl");
    write_file_atomic(base.string() + ".verdict.json", verdict_json(v).dump(2) + "\n");
    write_file_atomic(base.string() + ".stats.json", trace_stats_to_json(trace_behavior_stats(v.trace)).dump(2) + "\n");
    out << task.id << ": stop=" << to_string(v.trace.stop_reason) << " success=" << (v.success ? "yes" : "no") << "\n";
    return kExitOk;
}

int cmd_verify(const RunManifest& m, std::ostream& out, std::ostream&) {
    if (!m.inputs) throw ExitCode{kExitUsage, "--inputs is required"};
    auto sys = load_system(m);
    auto env = make_env(m);
    std::vector<Task> tasks;
    try {
        tasks = load_tasks_from(*m.inputs);
    } catch (const Error& e) {
        throw ExitCode{kExitUsage, e.what()};
    }
    if (tasks.empty()) throw ExitCode{kExitUsage, "no tasks under " + m.inputs->string()};
    DirLock lock(m.out);
    BackendRegistry backends;
    define_backends(backends, sys);
    std::vector<Verification> results(tasks.size());
    parallel_for(tasks.size(), m.workers, [&](std::size_t i) { results[i] = verify_task(tasks[i], sys, backends, env); });
    std::vector<json> rows;
    int passed = 0;
    for (const auto& v : results) {
        finalize_trace(v.trace, m.out / "traces" / (safe_name(v.trace.task_id) + ".jsonl"));
        rows.push_back(verdict_json(v));
        if (v.success) ++passed;
    }
    write_file_atomic(m.out / "verdicts.jsonl", jsonl(rows));
    out << "verified " << results.size() << " tasks, " << passed << " correct\n";
    return kExitOk;
}

int cmd_evolve(const RunManifest& m, std::ostream& out, std::ostream& err) {
    if (m.rounds < 1) throw ExitCode{kExitUsage, "--rounds must be >= 1"};
    if (m.tasks_per_round < 1) throw ExitCode{kExitUsage, "--tasks-per-round must be >= 1"};
    auto sys = load_system(m);
    auto config = load_config(m);
    auto env = make_env(m);
    out << "rounds=" << m.rounds << " tasks_per_round=" << m.tasks_per_round << " seed=" << m.seed << "\n";

    if (fs::exists(m.out) && !m.resume) {
        for (const auto& e : fs::directory_iterator(m.out)) {
            if (e.path().filename() != ".lock") {
                throw ExitCode{kExitUsage, m.out.string() + " is not empty; pass --resume to continue it"};
            }
        }
    }
    DirLock lock(m.out);
    RoundLedger ledger = load_ledger(m.out);
    std::set<std::string> history;
    if (auto next = ledger.next_config()) config = *next;
    if (fs::exists(m.out / "history.json")) {
        history = json::parse(read_file_text(m.out / "history.json")).get<std::set<std::string>>();
    }
    write_file_atomic(m.out / "configs" / "round-0.json", ledger.rounds.empty() ? config.serialize()
                                                                                : ledger.rounds.front().snapshot.serialize());

    BackendRegistry backends;
    define_backends(backends, sys);
    for (int round = static_cast<int>(ledger.rounds.size()); round < m.rounds; ++round) {
        auto dir = m.out / ("round-" + std::to_string(round));
        StageContext ctx{&backends, &env, round, m.workers};
        CandidatePool pool;
        try {
            pool = run_forward(config, sys, m.tasks_per_round, history, ctx, m.seed * 1000003ULL + round);
        } catch (const EmptyPoolError& e) {
            std::string hist;
            for (const auto& [stage, n] : e.histogram()) hist += " " + stage + "=" + std::to_string(n);
            err << "round " << round << ": empty pool;" << hist << "\n";
            return kExitEmptyPool;
        }
        if (static_cast<int>(pool.tasks.size()) > m.tasks_per_round) {
            for (std::size_t i = m.tasks_per_round; i < pool.tasks.size(); ++i) pool.provenance.erase(pool.tasks[i].id);
            pool.tasks.resize(m.tasks_per_round);
        }
        write_file_atomic(dir / "pool.json", pool_to_json(pool, dir / "images").dump(2) + "\n");

        auto outcome = run_round(pool, config, sys, ledger, backends, env, m.workers);
        std::vector<json> diags, verdicts;
        for (std::size_t i = 0; i < outcome.verifications.size(); ++i) {
            const auto& v = outcome.verifications[i];
            finalize_trace(v.trace, dir / "traces" / (safe_name(v.trace.task_id) + ".jsonl"));
            verdicts.push_back(verdict_json(v));
            diags.push_back(diagnosis_to_json(outcome.diagnoses[i]));
        }
        json accepted = json::array();
        for (const auto& t : outcome.accepted) accepted.push_back(t.id);
        write_file_atomic(dir / "verdicts.jsonl", jsonl(verdicts));
        write_file_atomic(dir / "diagnoses.jsonl", jsonl(diags));
        write_file_atomic(dir / "accepted.json", accepted.dump(2) + "\n");
        write_file_atomic(dir / "notes.json", json(outcome.notes).dump(2) + "\n");
        append_ledger(outcome.entry, m.out);
        write_file_atomic(m.out / "configs" / ("round-" + std::to_string(round + 1) + ".json"), outcome.next.serialize());
        write_file_atomic(m.out / "history.json", json(history).dump(2) + "\n");

        const auto& sig = outcome.entry.signal;
        out << "round " << round << ": tasks=" << pool.tasks.size() << " accepted=" << outcome.accepted.size()
            << " pass_rate=" << sig.pass_rate;
        if (sig.mean_overall) out << " mean_overall=" << *sig.mean_overall;
        out << " applied=" << outcome.entry.applied.size() << " rejected=" << outcome.entry.rejected.size();
        if (outcome.entry.regression_flag) out << " REGRESSION";
        out << "\n";
        for (const auto& n : outcome.entry.rollback_notes) out << "  rollback: " << n << "\n";
        for (const auto& n : outcome.notes) err << "  " << n << "\n";
        config = outcome.next;
    }
    return kExitOk;
}

int cmd_report(const RunManifest& m, std::ostream& out, std::ostream&) {
    fs::path dir = m.inputs ? *m.inputs : m.out;
    if (!fs::is_directory(dir)) throw ExitCode{kExitUsage, dir.string() + " is not a directory"};
    std::vector<fs::path> trace_files, pool_files;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        const auto& p = e.path();
        if (p.filename() == "pool.json") {
            pool_files.push_back(p);
        } else if (p.extension() == ".jsonl") {
            auto text = read_file_text(p);
            auto first = json::parse(text.substr(0, text.find('\n')), nullptr, false);
            if (!first.is_discarded() && first.is_object() && first.value("type", "") == "header") {
                trace_files.push_back(p);
            }
        }
    }
    std::sort(trace_files.begin(), trace_files.end());
    std::sort(pool_files.begin(), pool_files.end());
    if (trace_files.empty() && pool_files.empty()) {
        throw ExitCode{kExitUsage, dir.string() + " holds no traces or pools"};
    }
    std::vector<Trace> traces;
    std::vector<Task> tasks;
    try {
        for (const auto& p : trace_files) traces.push_back(read_trace(p));
        for (const auto& p : pool_files) {
            auto t = load_tasks_from(p);
            tasks.insert(tasks.end(), t.begin(), t.end());
        }
    } catch (const Error& e) {
        throw ExitCode{kExitUsage, e.what()};
    }
    write_report(m.out / "report", traces, tasks);
    out << render_report(traces, tasks);
    return kExitOk;
}

int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Open data evolution: rollouts, verification, evolution rounds, reports"};
    app.require_subcommand(1);
    RunManifest m;
    std::string providers = "live";
    std::string config, system, mode, fixtures, out_dir = "ode-out", task, inputs, transcript, worker;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--system", system, "System config JSON");
        sub->add_option("--mode", mode, "sft or rl")->check(CLI::IsMember({"sft", "rl"}));
        sub->add_option("--providers", providers, "live, record or replay")
            ->check(CLI::IsMember({"live", "record", "replay"}));
        sub->add_option("--fixtures", fixtures, "Provider fixture directory");
        sub->add_option("--out", out_dir, "Output directory");
        sub->add_option("--workers", m.workers, "Concurrent tasks")->check(CLI::PositiveNumber);
        sub->add_option("--sandbox-transcript", transcript, "Recorded code-execution transcript");
        sub->add_option("--sandbox-worker", worker, "Command line of a code-execution worker");
    };
    auto* rollout = app.add_subcommand("rollout", "One rollout plus adjudication");
    common(rollout);
    rollout->add_option("--task", task, "Task JSON")->required();
    auto* record = app.add_subcommand("record", "Rollout that records provider fixtures");
    common(record);
    record->add_option("--task", task, "Task JSON")->required();
    auto* verify = app.add_subcommand("verify", "Rollout and judge a batch of tasks");
    common(verify);
    verify->add_option("--inputs", inputs, "Task file, task directory or pool.json")->required();
    auto* evolve = app.add_subcommand("evolve", "Forward construction and backward evolution rounds");
    common(evolve);
    evolve->add_option("--config", config, "Stage config JSON (built-in sample when unset)");
    evolve->add_option("--seed", m.seed, "RNG seed");
    evolve->add_option("--rounds", m.rounds, "Evolution rounds");
    evolve->add_option("--tasks-per-round", m.tasks_per_round, "Curated tasks per round");
    evolve->add_flag("--resume", m.resume, "Continue an existing output directory");
    auto* report = app.add_subcommand("report", "Analytics tables over traces and pools");
    report->add_option("--inputs", inputs, "Directory to scan (defaults to --out)");
    report->add_option("--out", out_dir, "Output directory; the report goes to <out>/report");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    }

    auto opt = [](const std::string& s) { return s.empty() ? std::nullopt : std::optional<fs::path>(s); };
    m.command = app.get_subcommands().front()->get_name();
    m.config = opt(config);
    m.system = opt(system);
    if (!mode.empty()) m.mode = mode;
    m.providers = provider_mode_from_string(providers);
    m.fixtures = opt(fixtures);
    m.out = out_dir;
    m.task = opt(task);
    m.inputs = opt(inputs);
    m.sandbox_transcript = opt(transcript);
    if (!worker.empty()) m.sandbox_worker = worker;

    try {
        if (m.command == "rollout") return cmd_rollout(m, out, err);
        if (m.command == "record") {
            if (m.providers != ProviderMode::record) {
                err << "error: record needs --providers record\n";
                return kExitUsage;
            }
            return cmd_rollout(m, out, err);
        }
        if (m.command == "verify") return cmd_verify(m, out, err);
        if (m.command == "evolve") return cmd_evolve(m, out, err);
        return cmd_report(m, out, err);
    } catch (const ExitCode& e) {
        err << "error: " << e.message << "\n";
        return e.code;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return e.kind() == ErrorKind::EmptyPool ? kExitEmptyPool : kExitFailure;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
}

}  // namespace ode
