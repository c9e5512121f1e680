#include "dlnlab/experiment.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <string>

int main(int argc, char** argv) {
    CLI::App app{"dln-lab: deep linear network training-dynamics laboratory"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    int jobs = 1;
    if (const char* env = std::getenv("DLN_LAB_JOBS")) {
        try {
            jobs = std::max(1, std::stoi(env));
        } catch (...) {
            std::cerr << "warning: ignoring invalid DLN_LAB_JOBS='" << env << "'\n";
        }
    }
    long long seed_override = -1;

    CLI::App* run = app.add_subcommand("run", "execute an experiment config");
    run->add_option("config", config_path, "JSON experiment config")->required();
    run->add_option("--out", out_dir, "output directory")->required();
    run->add_option("--jobs", jobs, "concurrent sweep points (default: DLN_LAB_JOBS or 1)");
    run->add_option("--seed-override", seed_override, "replace the config seed");

    CLI::App* presets = app.add_subcommand("presets", "list built-in presets");

    CLI11_PARSE(app, argc, argv);

    if (presets->parsed()) {
        std::cout << dln::presets_text();
        return 0;
    }

    dln::RunOptions opts;
    opts.jobs = jobs;
    if (seed_override >= 0) opts.seed_override = static_cast<std::uint64_t>(seed_override);
    return dln::run_experiment(config_path, out_dir, opts);
}
