// Command-line front end for the auto-prompt ensemble pipeline. Each
// subcommand runs one stage against a persistent run directory; `all` runs
// the full pipeline in order.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "ape/pipeline.hpp"

namespace {

constexpr const char* kStageHelp[][2] = {
    {"ingest", "validate the dataset and write the canonical copy"},
    {"split", "seeded train/calibration/test split"},
    {"judge", "vanilla judgments for every split"},
    {"discover", "mine failure cases and propose evaluation dimensions"},
    {"filter", "drop dimensions whose score separation is too small"},
    {"select", "coverage matrix and top-K dimension selection"},
    {"calibrate", "sweep override gates on the calibration split"},
    {"ensemble", "jury votes and gated decisions on the test split"},
    {"metrics", "agreement and calibration metrics from the decisions"},
};

int run(int argc, char** argv) {
    CLI::App app{"Auto-prompt ensemble pipeline for LLM-judge evaluation"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may follow the subcommand

    std::string config_path;
    std::string run_dir;
    std::string dimensions_path;
    std::string mock_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> k;
    std::optional<int> t_gate;
    std::optional<double> holdout;
    bool full_range = false;
    bool force = false;

    app.add_option("--config", config_path, "run configuration file (JSON)");
    app.add_option("--run-dir", run_dir, "run directory for pipeline artifacts")->required();
    app.add_option("--dimensions", dimensions_path,
                   "dimension store to apply instead of this run's selection (ensemble)");
    app.add_option("--mock", mock_path, "scripted mock backend (JSON rules file)");
    app.add_option("--seed", seed, "override the split seed");
    app.add_option("--k", k, "override the number of selected dimensions");
    app.add_option("--t-gate", t_gate, "override the override gate");
    app.add_option("--holdout", holdout, "fraction of failures held out as validation");
    app.add_flag("--full-range", full_range, "bin confidences over [0,1] instead of [0.5,1]");
    app.add_flag("--force", force, "rerun stages even when outputs are up to date");

    for (const auto& [name, help] : kStageHelp) app.add_subcommand(name, help);
    app.add_subcommand("all", "run every stage in order");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;  // flag misuse is a configuration error
    }

    ape::RunConfig cfg;
    if (!config_path.empty()) cfg = ape::load_run_config(config_path);
    if (seed) cfg.seed = *seed;
    if (k) cfg.k_dimensions = *k;
    if (t_gate) cfg.t_gate = *t_gate;
    if (holdout) cfg.holdout = *holdout;
    if (!mock_path.empty()) cfg.mock_script = mock_path;
    if (full_range) {
        cfg.bin_lo = 0.0;
        cfg.bin_hi = 1.0;
    }

    ape::RunOptions opts;
    if (!dimensions_path.empty()) opts.dimensions_override = dimensions_path;
    if (t_gate) opts.t_gate_override = *t_gate;
    opts.force = force;

    ape::RunDirectory dir{run_dir};
    ape::RunLock lock{dir};
    ape::Pipeline pipeline{cfg, run_dir, opts};

    const std::string command = app.get_subcommands().front()->get_name();
    if (command == "all") {
        pipeline.run_all();
    } else {
        auto stage = ape::stage_from_string(command);
        if (!stage) throw ape::ConfigError("unknown stage: " + command);
        pipeline.run(*stage);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ape::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ape::StageError& e) {
        std::cerr << "stage error: " << e.what() << "\n";
        return 3;
    } catch (const ape::BackendError& e) {
        std::cerr << "backend error: " << e.what() << "\n";
        return 4;
    } catch (const ape::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 5;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
