#pragma once

#include "dlnlab/costs.hpp"
#include "dlnlab/serialize.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dln {

/// Configuration problem: reported with a field path, exits the CLI with
/// status 2 before any output is written.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

inline constexpr const char* kKindNames[] = {"run",        "greedy",      "escape_sweep",
                                             "regime_sweep", "ntk_check", "refine_path",
                                             "figure1",    "figure3"};

struct RunOptions {
    int jobs = 1;
    std::optional<std::uint64_t> seed_override;
};

/// Validates a raw config and returns the fully resolved version (presets
/// expanded, defaults filled in). Throws ConfigError with a field
/// diagnostic.
Json resolve_config(const Json& raw);

/// Built-in preset configs; every preset round-trips through
/// resolve_config.
std::vector<std::string> preset_names();
Json preset_config(const std::string& name);
/// Human-readable preset list with desk-scaling notes.
std::string presets_text();

/// Executes a config against an output directory: writes one CSV per
/// trajectory, summary.json with derived statistics and declared checks,
/// and manifest.json listing every output with a content hash.
/// Returns the process exit status: 0 ok, 2 config error, 3 non-finite
/// (partial outputs preserved).
int run_experiment(const std::filesystem::path& config_path, const std::filesystem::path& out_dir,
                   const RunOptions& opts = {});

/// Same, from an already-loaded JSON value.
int run_experiment_json(const Json& raw, const std::filesystem::path& out_dir,
                        const RunOptions& opts = {});

/// Seeded matrix-completion task: rank-k teacher U diag(s) V^T with
/// orthonormal seeded factors and the given singular values, observing
/// `observed` uniformly sampled entries.
McCost make_mc_task(int rows, int cols, const std::vector<double>& singular_values, int observed,
                    std::uint64_t seed);

/// Seeded low-rank teacher from two Gaussian factors, scaled.
Matrix random_low_rank(int rows, int cols, int rank, double scale, std::uint64_t seed);

} // namespace dln
