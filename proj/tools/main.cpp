#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mixlink/cli.hpp"

// mixlink: build, inspect, verify and train mixed-link networks.
//
// Exit codes: 0 success, 1 verification/training failure, 2 usage or
// configuration error.

namespace {

using mixlink::cli::RunConfig;

struct CommonFlags {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> preset;
    std::optional<std::string> output_path;
    std::optional<std::string> format;

    void attach(CLI::App* app) {
        app->add_option("--config", config_path, "JSON configuration file");
        app->add_option("--seed", seed, "RNG seed (default 0)");
        app->add_option("--preset", preset,
                        "named network preset (mixnet-100/250/190/105/121/141)");
        app->add_option("--out", output_path, "write the report/history to this path");
        app->add_option("--format", format, "output format: table, json or csv");
    }

    RunConfig resolve() const {
        RunConfig cfg = config_path.empty() ? RunConfig{}
                                            : mixlink::cli::load_config_file(config_path);
        if (seed) cfg.seed = *seed;
        if (preset) {
            cfg.preset = *preset;
            cfg.explicit_network.reset();
        }
        if (output_path) cfg.output.path = *output_path;
        if (format) {
            if (*format != "table" && *format != "json" && *format != "csv")
                throw mixlink::cli::ConfigError("--format must be table, json or csv");
            cfg.output.format = *format;
        }
        return cfg;
    }
};

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"mixed-link network library: build, describe, verify, gradcheck, train"};
    app.require_subcommand(1);

    CommonFlags describe_flags, count_flags, verify_flags, grad_flags, train_flags;

    auto* describe = app.add_subcommand("describe", "per-layer shape and width table");
    describe_flags.attach(describe);

    auto* count = app.add_subcommand("count-params", "parameter/FLOP accounting");
    count_flags.attach(count);
    bool grid = false;
    count->add_flag("--grid", grid, "sweep the (m, theta) grid over all presets");

    auto* verify = app.add_subcommand("verify-topology", "numerical topology equivalence suites");
    verify_flags.attach(verify);
    std::optional<std::string> suite;
    std::optional<int> arch, verify_trials;
    verify->add_option("--suite", suite, "all, unrolling, reduction, width-law or witness");
    verify->add_option("--arch", arch, "reduction sub-selection: 1, 2 or 3");
    verify->add_option("--trials", verify_trials, "trials per suite (default 100)");

    auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    grad_flags.attach(grad);
    std::optional<std::string> op, dtype;
    std::optional<int> grad_trials;
    grad->add_option("--op", op, "single op to check (default: all)");
    grad->add_option("--trials", grad_trials, "trials per op (default 100)");
    grad->add_option("--dtype", dtype, "64bit (tol 1e-4) or 32bit (tol 1e-2)");

    auto* train = app.add_subcommand("train-toy", "train on the synthetic desk-scale task");
    train_flags.attach(train);
    std::optional<std::string> ablate;
    std::optional<int> epochs;
    train->add_option("--ablate", ablate, "paired runs: position or k2");
    train->add_option("--epochs", epochs, "override epoch count");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : mixlink::cli::kExitUsage;
    }

    try {
        if (describe->parsed())
            return mixlink::cli::cmd_describe(describe_flags.resolve(), std::cout, std::cerr);
        if (count->parsed()) {
            RunConfig cfg = count_flags.resolve();
            if (grid) cfg.count_params.grid = true;
            return mixlink::cli::cmd_count_params(cfg, std::cout, std::cerr);
        }
        if (verify->parsed()) {
            RunConfig cfg = verify_flags.resolve();
            if (suite) cfg.verify.suite = *suite;
            if (arch) cfg.verify.arch = *arch;
            if (verify_trials) cfg.verify.trials = *verify_trials;
            return mixlink::cli::cmd_verify_topology(cfg, std::cout, std::cerr);
        }
        if (grad->parsed()) {
            RunConfig cfg = grad_flags.resolve();
            if (op) cfg.gradcheck.op = *op;
            if (grad_trials) cfg.gradcheck.trials = *grad_trials;
            if (dtype) {
                cfg.gradcheck.dtype = *dtype;
                if (*dtype == "32bit") cfg.gradcheck.tolerance = 1e-2;
            }
            return mixlink::cli::cmd_gradcheck(cfg, std::cout, std::cerr);
        }
        if (train->parsed()) {
            RunConfig cfg = train_flags.resolve();
            if (ablate) cfg.train.ablate = *ablate;
            if (epochs) cfg.train.train.epochs = *epochs;
            return mixlink::cli::cmd_train_toy(cfg, std::cout, std::cerr);
        }
    } catch (const mixlink::cli::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return mixlink::cli::kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return mixlink::cli::kExitFailure;
    }
    return mixlink::cli::kExitUsage;
}
