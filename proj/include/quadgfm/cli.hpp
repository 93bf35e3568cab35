#pragma once

// Run configuration, run reports and the subcommand dispatcher behind the
// quadgfm executable.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "quadgfm/reason.hpp"
#include "quadgfm/train.hpp"

namespace quadgfm::cli {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Precision { Fp32, Bf16, Fp64 };

struct RunPaths {
    std::filesystem::path graph;
    std::filesystem::path embeddings;        // graph table (file provider)
    std::filesystem::path query_embeddings;  // query table (file provider)
    std::filesystem::path checkpoint;        // default <output_dir>/model.gfm
    std::filesystem::path dataset;
    std::filesystem::path manifest;
    std::filesystem::path plan;              // default <output_dir>/plan.json
    std::filesystem::path output_dir = "runs";
};

struct RunConfig {
    RunPaths paths;
    train::TrainingConfig train = train::TrainingConfig::full();
    reason::LlmConfig llm;
    bool prompt_extra_sections = false;
    std::string embed_provider = "hash";  // hash | file
    std::uint64_t hash_seed = 0;
    std::size_t k = 5;
    std::size_t workers = 1;
    Precision precision = Precision::Fp32;
    std::uint64_t seed = 0;

    std::filesystem::path checkpoint_path() const;
    std::filesystem::path plan_path() const;
};

nlohmann::json to_json(const RunConfig& config);

// defaults <- file <- overrides. Both layers use the layout of to_json().
// Unknown keys are errors unless `lax`.
RunConfig config_from_json(const nlohmann::json& layered, bool lax = false);
RunConfig load_config(const std::optional<std::filesystem::path>& path, const nlohmann::json& overrides = {},
                      bool lax = false);

struct RunReport {
    std::string command;
    nlohmann::json config;
    double wall_time_s = 0;
    nlohmann::json result;  // metrics, loss history, stats
    std::vector<std::string> warnings;
};

nlohmann::json to_json(const RunReport& report);

// Writes <dir>/report-<command>-<UTC timestamp>[-n].json, never overwriting.
std::filesystem::path write_report(const RunReport& report, const std::filesystem::path& dir);

// Parses argv and runs one subcommand. 0 on success, 1 on a domain error,
// 2 on a usage or configuration error.
int run_command(int argc, const char* const* argv);
int run_command(const std::vector<std::string>& args);  // args exclude the program name

}  // namespace quadgfm::cli
