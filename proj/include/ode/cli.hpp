#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ode/providers.hpp"

namespace ode {

/// Exit codes: infrastructure only, never answer correctness.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitFixtures = 3;
inline constexpr int kExitEmptyPool = 4;

struct RunManifest {
    std::string command;
    std::optional<std::filesystem::path> config;  // evolvable config; the built-in sample when unset
    std::optional<std::filesystem::path> system;  // system config; defaults when unset
    std::optional<std::string> mode;              // overrides the system config's mode
    ProviderMode providers = ProviderMode::live;
    std::optional<std::filesystem::path> fixtures;
    std::filesystem::path out = "ode-out";
    std::uint64_t seed = 0;
    int rounds = 5;
    int tasks_per_round = 32;
    int workers = 1;
    bool resume = false;
    std::optional<std::filesystem::path> task;    // rollout, record
    std::optional<std::filesystem::path> inputs;  // verify: task file or directory; report: input directory
    std::optional<std::filesystem::path> sandbox_transcript;
    std::optional<std::string> sandbox_worker;    // command line of a worker process
};

/// Parses argv and runs the subcommand (rollout, verify, evolve, report, record).
int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err);

int cmd_rollout(const RunManifest& m, std::ostream& out, std::ostream& err);
int cmd_verify(const RunManifest& m, std::ostream& out, std::ostream& err);
int cmd_evolve(const RunManifest& m, std::ostream& out, std::ostream& err);
int cmd_report(const RunManifest& m, std::ostream& out, std::ostream& err);

}  // namespace ode
