#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ocs/anderson.hpp"
#include "ocs/model.hpp"

namespace ocs {

using json = nlohmann::json;

struct ExperimentKind {
    std::string name;
    std::string summary;
    std::vector<std::string> required;  // top-level and params fields
    json defaults;                      // params defaults
    json example;                       // a complete, valid config
};

const std::vector<ExperimentKind>& experiment_registry();
const ExperimentKind& experiment_kind(const std::string& name);

// Builders for the operator description format.  Field paths in errors are
// relative to `where`.
OneChannelOperator build_operator(const json& model, std::uint64_t seed, const std::string& where = "/model");
DisorderSpec parse_disorder(const json& j, const std::string& where);
SizeLaw parse_size_law(const json& j, const std::string& where);
StretchedAntitreeSpec parse_stretched(const json& model, const std::string& where);
PartialAntitreeSpec parse_partial(const json& model, const std::string& where);
std::vector<double> parse_grid(const json& j, const std::string& where);

// Checks the config, inlines a referenced model file (relative to base_dir)
// and fills defaults.  Throws ValidationError with a field path.
json normalize_config(const json& cfg, const std::filesystem::path& base_dir = {});

struct RunOptions {
    std::filesystem::path out_dir = "out";
    int threads = 1;
    bool verbose = false;
};

struct RunResult {
    int exit_code = 0;  // 0 ok, 3 numerical, 4 acceptance
    json summary;
    std::vector<std::filesystem::path> artifacts;
    std::string message;
};

// Runs a normalized config.  ValidationError escapes before anything is
// written; numerical errors stop the run and keep finished artifacts.
RunResult run_experiment(const json& config, const RunOptions& o);

std::string sha256_hex(const std::string& bytes);
json version_info();

}  // namespace ocs
