// Command-line front end: simulate, identify, run, pe-check and replay.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "pwaid/harness.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;

// Resolves --system (preset name or spec JSON file) and --config into one experiment.
pwaid::ExperimentConfig resolve(const std::string& config_path, const std::string& system) {
    nlohmann::json j = nlohmann::json::object();
    if (!config_path.empty()) {
        std::ifstream f(config_path);
        if (!f) throw pwaid::ConfigError("config", "cannot open '" + config_path + "'");
        try {
            f >> j;
        } catch (const nlohmann::json::exception& e) {
            throw pwaid::ConfigError("config", std::string("invalid JSON: ") + e.what());
        }
    }
    if (!system.empty()) {
        if (system == "exp1" || system == "exp2") {
            j["system"] = system;
        } else {
            std::ifstream f(system);
            if (!f) throw pwaid::ConfigError("system", "'" + system + "' is neither a preset nor a readable file");
            try {
                j["system"] = nlohmann::json::parse(f);
            } catch (const nlohmann::json::exception& e) {
                throw pwaid::ConfigError("system", std::string("invalid JSON: ") + e.what());
            }
        }
    }
    return pwaid::experiment_from_json(j);
}

void print_summary(const pwaid::RunReport& r) {
    std::cout << "seed=" << r.seed << " s_hat=" << r.s_hat << " K=" << r.K_final
              << " misclassification=" << r.misclassification << " rmse_hard=" << r.rmse_hard
              << " rmse_smooth=" << r.rmse_smooth << " seconds=" << r.seconds << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Streaming identification of switched affine systems"};
    app.require_subcommand(1);

    std::string config_path, system, out, input, checkpoint;
    std::optional<std::uint64_t> seed;
    long n_samples = 0;
    long window = 100;
    long repeats = 0;

    auto* sim = app.add_subcommand("simulate", "Emit a trajectory CSV from a system spec");
    sim->add_option("--system", system, "Preset name (exp1, exp2) or spec JSON file")->required();
    sim->add_option("--N", n_samples, "Number of samples (defaults to the preset's N)");
    sim->add_option("--seed", seed, "Random seed");
    sim->add_option("--out", out, "Output CSV path")->required();

    auto* ident = app.add_subcommand("identify", "Run the identifier on a trajectory CSV or a live preset");
    ident->add_option("--input", input, "Trajectory CSV (t,phi_*,psi_*[,true_mode])");
    ident->add_option("--system", system, "Preset name or spec JSON file");
    ident->add_option("--config", config_path, "Experiment JSON overriding defaults");
    ident->add_option("--seed", seed, "Random seed");
    ident->add_option("--out", out, "Output directory")->required();

    auto* run = app.add_subcommand("run", "Full experiment with evaluation, logs and plots");
    run->add_option("--config", config_path, "Experiment JSON overriding defaults");
    run->add_option("--system", system, "Preset name or spec JSON file");
    run->add_option("--seed", seed, "Random seed")->required();
    run->add_option("--repeats", repeats, "Number of seeds to run");
    run->add_option("--out", out, "Output directory")->required();

    auto* pe = app.add_subcommand("pe-check", "Windowed excitation bounds of a trajectory");
    pe->add_option("--input", input, "Trajectory CSV");
    pe->add_option("--system", system, "Preset name or spec JSON file, simulated when no --input");
    pe->add_option("--N", n_samples, "Samples to simulate");
    pe->add_option("--seed", seed, "Random seed");
    pe->add_option("--window", window, "Window length T")->check(CLI::PositiveNumber);

    auto* rep = app.add_subcommand("replay", "Resume a run from a checkpoint");
    rep->add_option("--checkpoint", checkpoint, "checkpoint.json written by run")->required();
    rep->add_option("--out", out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*sim) {
            auto cfg = resolve("", system);
            const long n = n_samples > 0 ? n_samples : cfg.N;
            auto traj = pwaid::generate_trajectory(cfg.system, n, seed.value_or(cfg.seed));
            pwaid::write_trajectory_csv(traj, out);
            std::cout << "wrote " << traj.samples.size() << " samples to " << out << '\n';
        } else if (*ident) {
            auto cfg = resolve(config_path, system);
            if (seed) cfg.seed = *seed;
            std::filesystem::create_directories(out);
            if (input.empty()) {
                print_summary(pwaid::run_experiment(cfg, cfg.seed, out));
            } else {
                // A recorded stream carries no ground truth, so only the model and the log are written.
                auto traj = pwaid::read_trajectory_csv(input);
                if (traj.samples.front().phi.size() != cfg.system.d || traj.samples.front().psi.size() != cfg.system.m)
                    throw pwaid::ConfigError("input", "trajectory dimensions do not match the system spec");
                auto ic = cfg.identifier;
                ic.seed = cfg.seed;
                pwaid::Identifier id(ic, cfg.system.m, cfg.system.d);
                pwaid::RecordLog log;
                id.set_record_sink([&log](const pwaid::SampleRecord& r) { log.push(r); });
                pwaid::ReplaySource src(traj, cfg.cycle, ic.level_count() * ic.max_iters_per_level);
                id.run(src);
                auto model = id.finalize();
                nlohmann::json modes = nlohmann::json::array(), cells = nlohmann::json::array();
                for (const auto& m : model.modes) modes.push_back(pwaid::detail::mat_to_json(m));
                for (std::size_t j = 0; j < model.K(); ++j)
                    cells.push_back({{"phi_hat", pwaid::detail::vec_to_json(model.phi_hats[j])}, {"mode", model.cell_mode[j]}});
                pwaid::write_text(std::filesystem::path(out) / "samples.csv", log.csv());
                pwaid::write_text(std::filesystem::path(out) / "model.json",
                                  nlohmann::json{{"s_hat", model.s_hat()}, {"K", model.K()}, {"modes", modes}, {"cells", cells}}.dump(2));
                pwaid::write_text(std::filesystem::path(out) / "checkpoint.json", id.checkpoint().dump(2));
                std::cout << "s_hat=" << model.s_hat() << " K=" << model.K() << '\n';
            }
        } else if (*run) {
            auto cfg = resolve(config_path, system);
            cfg.seed = *seed;
            if (repeats > 0) cfg.repeats = repeats;
            cfg.output_dir = out;
            cfg.validate();
            std::filesystem::create_directories(out);
            auto reports = pwaid::run_repeats(cfg, out);
            for (const auto& r : reports) print_summary(r);
            if (reports.size() > 1)
                pwaid::write_text(std::filesystem::path(out) / "aggregate.json", pwaid::aggregate(reports).dump(2));
        } else if (*pe) {
            pwaid::Trajectory traj;
            if (!input.empty()) {
                traj = pwaid::read_trajectory_csv(input);
            } else {
                auto cfg = resolve("", system.empty() ? "exp2" : system);
                traj = pwaid::generate_trajectory(cfg.system, n_samples > 0 ? n_samples : cfg.N, seed.value_or(cfg.seed));
            }
            auto res = pwaid::pe_check(traj, window);
            std::cout << nlohmann::json{{"alpha_min", res.alpha_min}, {"beta_max", res.beta_max}, {"holds", res.holds()}}.dump()
                      << '\n';
        } else if (*rep) {
            std::ifstream f(checkpoint);
            if (!f) throw pwaid::ConfigError("checkpoint", "cannot open '" + checkpoint + "'");
            nlohmann::json j;
            try {
                f >> j;
            } catch (const nlohmann::json::exception& e) {
                throw pwaid::ConfigError("checkpoint", std::string("invalid JSON: ") + e.what());
            }
            print_summary(pwaid::replay_checkpoint(j, out));
        }
    } catch (const pwaid::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const pwaid::NumericalDivergence& e) {
        std::cerr << "divergence: " << e.what() << '\n';
        return kExitDivergence;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitOk;
}
