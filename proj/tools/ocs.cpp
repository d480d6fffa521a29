#include <fstream>
#include <iostream>

#include "CLI11.hpp"

#include "ocs/errors.hpp"
#include "ocs/experiments.hpp"

namespace {

int load(const std::string& path, ocs::json& out)
{
    std::ifstream f(path);
    if (!f) {
        std::cerr << "error: cannot open " << path << "\n";
        return 2;
    }
    ocs::json raw;
    try {
        raw = ocs::json::parse(f);
    } catch (const ocs::json::parse_error& e) {
        std::cerr << "error: " << path << ": invalid JSON: " << e.what() << "\n";
        return 2;
    }
    try {
        out = ocs::normalize_config(raw, std::filesystem::path(path).parent_path());
    } catch (const ocs::ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"one-channel spectral experiments"};
    app.require_subcommand(1);

    std::string config;
    ocs::RunOptions opts;
    auto* run = app.add_subcommand("run", "run an experiment config");
    run->add_option("config", config, "experiment config (JSON)")->required();
    std::string out = "out";
    run->add_option("--out", out, "output directory");
    run->add_option("--threads", opts.threads, "worker threads")->check(CLI::PositiveNumber);
    run->add_flag("--verbose", opts.verbose, "log progress to stderr");

    auto* list = app.add_subcommand("list", "list experiment kinds");
    auto* validate = app.add_subcommand("validate", "check a config without running it");
    std::string vconfig;
    validate->add_option("config", vconfig, "experiment config (JSON)")->required();

    CLI11_PARSE(app, argc, argv);

    if (*list) {
        for (const auto& k : ocs::experiment_registry()) {
            std::cout << k.name << "\n  " << k.summary << "\n  required:";
            for (const auto& f : k.required)
                std::cout << " " << f;
            std::cout << "\n  defaults: " << k.defaults.dump() << "\n  example: " << k.example.dump() << "\n\n";
        }
        return 0;
    }
    if (*validate) {
        ocs::json cfg;
        if (int rc = load(vconfig, cfg))
            return rc;
        std::cout << cfg.dump(2) << "\n";
        return 0;
    }
    ocs::json cfg;
    if (int rc = load(config, cfg))
        return rc;
    opts.out_dir = out;
    try {
        const ocs::RunResult r = ocs::run_experiment(cfg, opts);
        std::cout << r.summary.dump(2) << "\n";
        if (!r.message.empty())
            std::cerr << (r.exit_code == 3 ? "numerical error: " : "check failed: ") << r.message << "\n";
        return r.exit_code;
    } catch (const ocs::ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 2;
    } catch (const ocs::NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
