// Command-line driver: run experiments, validate configs, calibrate detection
// thresholds, and replay recorded runs bit-identically.

#include <cstdio>
#include <exception>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fedsim/attack.hpp"
#include "fedsim/config.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/report.hpp"
#include "fedsim/simulator.hpp"
#include "fedsim/version.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;    // bad flags, unreadable/invalid config
constexpr int kExitRuntime = 2;  // failure while running or writing results

struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> detection;  // "on" | "off"
    std::optional<int> replications;
    std::optional<int> agents;
    std::optional<int> interval;
    std::optional<double> threshold;
    std::optional<std::string> attack;  // kind name, attacker set defaults to {0}
    std::optional<int> threads;
};

void add_override_flags(CLI::App& cmd, Overrides& o) {
    cmd.add_option("--seed", o.seed, "Master seed override");
    cmd.add_option("--detection", o.detection, "Detection on|off")
        ->check(CLI::IsMember({"on", "off"}));
    cmd.add_option("--replications", o.replications, "Replication count override")
        ->check(CLI::PositiveNumber);
    cmd.add_option("--agents", o.agents, "Agent count override")->check(CLI::PositiveNumber);
    cmd.add_option("--interval", o.interval, "Detection interval length (rounds) override")
        ->check(CLI::PositiveNumber);
    cmd.add_option("--threshold", o.threshold,
                   "Fixed detection threshold (skips warmup calibration)");
    cmd.add_option("--attack", o.attack,
                   "Attack kind override: none|constant-output|label-flip|randomized "
                   "(attacker set defaults to {0})")
        ->check(CLI::IsMember({"none", "constant-output", "label-flip", "randomized"}));
    cmd.add_option("--threads", o.threads, "Worker threads for replications")
        ->check(CLI::PositiveNumber);
}

/// Applies flag overrides on top of a parsed config, then re-validates.
fedsim::ExperimentConfig apply_overrides(fedsim::ExperimentConfig config, const Overrides& o) {
    if (o.seed) config.master_seed = *o.seed;
    if (o.detection) config.detection.enabled = (*o.detection == "on");
    if (o.replications) config.replications = *o.replications;
    if (o.agents) {
        config.num_agents = *o.agents;
        config.weights.clear();  // back to uniform; stale weights would mismatch
    }
    if (o.interval) config.detection.interval_rounds = *o.interval;
    if (o.threshold) config.detection.threshold = *o.threshold;
    if (o.attack) {
        fedsim::AttackSpec& a = config.attack;
        if (*o.attack == "none") {
            a = fedsim::AttackSpec{};
        } else {
            if (*o.attack == "constant-output") a.kind = fedsim::AttackKind::kConstantOutput;
            if (*o.attack == "label-flip") {
                a.kind = fedsim::AttackKind::kLabelFlip;
                if (a.flip_table.empty() &&
                    config.model.num_classes == static_cast<int>(fedsim::default_flip_table().size()))
                    a.flip_table = fedsim::default_flip_table();
            }
            if (*o.attack == "randomized") a.kind = fedsim::AttackKind::kRandomized;
            if (a.attackers.empty()) a.attackers = {0};
        }
    }
    if (o.threads) config.threads = *o.threads;
    config.validate();
    return config;
}

/// Loads + validates; any failure here is a usage/validation error (exit 1).
fedsim::ExperimentConfig load_config(const std::string& path, const Overrides& o) {
    return apply_overrides(fedsim::parse_config(path), o);
}

int run_experiment(const fedsim::ExperimentConfig& config, const std::string& out_dir) {
    try {
        fedsim::ExperimentResult result = fedsim::run_replications(config);
        fedsim::RunManifest manifest{config, out_dir};
        fedsim::emit_results(result, manifest);
        std::printf("wrote %s/{rounds.csv,detector.csv,quantiles.csv,manifest.json}\n",
                    out_dir.c_str());
        return kExitOk;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Federated-learning data-injection attack & detection simulator"};
    app.set_version_flag("--version", fedsim::kVersion);
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::string manifest_path;
    int calib_replication = 0;
    Overrides overrides;

    CLI::App* cmd_run = app.add_subcommand("run", "Run an experiment and write result files");
    cmd_run->add_option("--config", config_path, "Experiment config (JSON)")
        ->required()
        ->check(CLI::ExistingFile);
    cmd_run->add_option("--out", out_dir, "Output directory")->required();
    add_override_flags(*cmd_run, overrides);

    CLI::App* cmd_validate = app.add_subcommand("validate", "Parse and validate a config");
    cmd_validate->add_option("--config", config_path, "Experiment config (JSON)")
        ->required()
        ->check(CLI::ExistingFile);

    CLI::App* cmd_calibrate =
        app.add_subcommand("calibrate", "Run the warmup calibration and print the threshold");
    cmd_calibrate->add_option("--config", config_path, "Experiment config (JSON)")
        ->required()
        ->check(CLI::ExistingFile);
    cmd_calibrate->add_option("--replication", calib_replication,
                              "Replication index to calibrate (default 0)")
        ->check(CLI::NonNegativeNumber);
    add_override_flags(*cmd_calibrate, overrides);

    CLI::App* cmd_replay =
        app.add_subcommand("replay", "Re-run from a manifest; outputs are byte-identical");
    cmd_replay->add_option("manifest", manifest_path, "manifest.json from a previous run")
        ->required()
        ->check(CLI::ExistingFile);
    cmd_replay->add_option("--out", out_dir, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    if (*cmd_validate) {
        try {
            fedsim::parse_config(config_path).validate();
        } catch (const std::exception& e) {
            std::fprintf(stderr, "invalid: %s\n", e.what());
            return kExitUsage;
        }
        std::printf("ok\n");
        return kExitOk;
    }

    if (*cmd_run) {
        fedsim::ExperimentConfig config;
        try {
            config = load_config(config_path, overrides);
        } catch (const std::exception& e) {
            std::fprintf(stderr, "invalid: %s\n", e.what());
            return kExitUsage;
        }
        return run_experiment(config, out_dir);
    }

    if (*cmd_calibrate) {
        fedsim::ExperimentConfig config;
        try {
            config = load_config(config_path, overrides);
            if (calib_replication >= config.replications)
                throw fedsim::ConfigError("--replication must be < replications (" +
                                          std::to_string(config.replications) + ")");
        } catch (const std::exception& e) {
            std::fprintf(stderr, "invalid: %s\n", e.what());
            return kExitUsage;
        }
        try {
            fedsim::DataPools pools = fedsim::load_pools(config.data, config.master_seed);
            double threshold = fedsim::calibrate_threshold(config, calib_replication, pools);
            std::printf("replication %d threshold %s\n", calib_replication,
                        fedsim::format_number(threshold).c_str());
            return kExitOk;
        } catch (const std::exception& e) {
            std::fprintf(stderr, "error: %s\n", e.what());
            return kExitRuntime;
        }
    }

    // replay
    fedsim::ExperimentConfig config;
    try {
        config = fedsim::parse_manifest(manifest_path);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "invalid: %s\n", e.what());
        return kExitUsage;
    }
    return run_experiment(config, out_dir);
}
