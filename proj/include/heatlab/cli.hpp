#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "heatlab/params.hpp"

namespace heatlab {

/// Fully resolved settings for one command.
struct RunConfig {
    std::string command;
    StableParams params;
    // [grid]
    double L = 8.0;
    int n = 128;
    std::vector<double> times = {1.0};
    // [drift]
    std::string drift = "zero";
    // [run]
    std::uint64_t seed = 1;
    std::size_t N = 100000;
    double dt = 0.0;            // 0: T / 512 with T the largest time
    double tolerance = 1e-6;
    double t_star = 0.0;        // 0: estimated
    double lambda = 1.0;
    double threshold = 0.05;    // compare: L1 bound
    std::vector<double> x0;     // default: origin
    std::vector<int> levels = {5, 6, 7, 8};
    unsigned threads = 0;
    std::string out;

    /// Throws DomainError with the key path when a value is out of range.
    void validate() const;
};

const std::vector<std::string>& cli_commands();

/// Reads an INI/TOML-style file: sections [params] [grid] [drift] [run]; unknown
/// sections or keys are rejected. Values may be quoted, lists may be bracketed.
void load_config_file(const std::string& path, RunConfig& cfg);

/// Parses argv (command, --config, overrides); flags override file values.
/// Throws DomainError on any parse or validation failure.
RunConfig parse_config(int argc, const char* const* argv);

/// The effective configuration as JSON text with sorted keys.
std::string config_json(const RunConfig& cfg);

/// Output directory: --out, else $HEATLAB_OUT/<command>, else heatlab_out/<command>.
std::filesystem::path output_dir(const RunConfig& cfg);

/// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& file);

/// Runs the command, writes artifacts, returns the process exit status
/// (0 iff every asserted invariant holds). Failures are named on stderr.
int run(const RunConfig& cfg);

/// Entry point used by the heatlab binary.
int cli_main(int argc, const char* const* argv);

}  // namespace heatlab
