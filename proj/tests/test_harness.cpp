#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "pwaid/harness.hpp"

using namespace pwaid;
namespace fs = std::filesystem;

namespace {

Eigen::VectorXd v(std::initializer_list<double> xs) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(xs.size()));
    Eigen::Index i = 0;
    for (double x : xs) out(i++) = x;
    return out;
}

Eigen::MatrixXd row(std::initializer_list<double> xs) { return v(xs).transpose(); }

fs::path fresh_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("pwaid_test_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream o;
    o << f.rdbuf();
    return o.str();
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(PWAID_CLI) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Exact cell layout of the first experiment: nearest-prototype boundaries at -1 and 2.
EstimatedHybridModel perfect_exp1_model() {
    return {{row({1, 2}), row({-1, 0})}, {v({-3, 1}), v({1, 1}), v({3, 1})}, {0, 1, 0}};
}

}  // namespace

TEST(MatchModes, IdentityAssignment) {
    const auto m = match_modes({row({1, 2}), row({-1, 0})}, {row({1, 2}), row({-1, 0})});
    ASSERT_EQ(m.size(), 2u);
    EXPECT_EQ(m[0].identified, 0);
    EXPECT_EQ(m[1].identified, 1);
    EXPECT_EQ(m[0].err_inf, 0.0);
}

TEST(MatchModes, PermutedAndPerturbed) {
    const auto m = match_modes({row({-0.9, 0.2}), row({1.1, 1.7})}, {row({1, 2}), row({-1, 0})});
    EXPECT_EQ(m[0].identified, 1);
    EXPECT_EQ(m[1].identified, 0);
    EXPECT_NEAR(m[0].err_inf, 0.3, 1e-12);
    EXPECT_NEAR(m[1].err_inf, 0.2, 1e-12);
}

TEST(MatchModes, TooFewIdentifiedLeavesTruthUnmatched) {
    const auto m = match_modes({row({0, 0})}, {row({1, 2}), row({-1, 0})});
    EXPECT_EQ(m[0].identified, -1);
    EXPECT_EQ(m[1].identified, 0);
    EXPECT_TRUE(std::isinf(m[0].err_inf));
}

TEST(ModeAccuracy, PerfectPartitionHasNoMisses) {
    const auto cfg = default_experiment("exp1");
    const auto eval = evaluation_set(cfg, 0);
    ASSERT_EQ(eval.size(), 801u);
    EXPECT_EQ(evaluate_mode_accuracy(perfect_exp1_model(), cfg.system, eval), 0.0);
}

TEST(ModeAccuracy, ShiftedBoundaryCountsGridPoints) {
    // Moving the right prototype to 3.5 shifts the right boundary to 2.25, so
    // grid points in (2, 2.25] go to the inner cell: r = 2.01 .. 2.25 gives 25 of 801.
    auto model = perfect_exp1_model();
    model.phi_hats[2] = v({3.5, 1});
    const auto cfg = default_experiment("exp1");
    EXPECT_NEAR(evaluate_mode_accuracy(model, cfg.system, evaluation_set(cfg, 0)), 25.0 / 801.0, 1e-15);
}

TEST(ModeAccuracy, SingleModeSystemIsAlwaysRight) {
    auto cfg = default_experiment("exp1");
    cfg.system.modes = {{row({0.3, 0.1}), {Halfspace{v({1, 0}), 10.0}}}};
    EstimatedHybridModel model{{row({5, 5})}, {v({0, 1}), v({2, 1})}, {0, 0}};
    EXPECT_EQ(evaluate_mode_accuracy(model, cfg.system, evaluation_set(cfg, 0)), 0.0);
    EXPECT_THROW(evaluate_mode_accuracy(model, cfg.system, {}), InvalidInput);
}

TEST(EvaluationSet, SecondExperimentIsNoiseFreeSimulation) {
    const auto cfg = default_experiment("exp2");
    const auto eval = evaluation_set(cfg, 3);
    ASSERT_EQ(static_cast<long>(eval.size()), cfg.N);
    for (const auto& s : eval)
        EXPECT_LE((cfg.system.modes[static_cast<std::size_t>(s.true_mode)].theta * s.phi - s.psi).norm(), 1e-15);
}

TEST(RunExperiment, ReportMatchesLastLogRow) {
    const auto dir = fresh_dir("consistency");
    for (const std::string name : {"exp1", "exp2"}) {
        const auto rep = run_experiment(default_experiment(name), 11, dir / name);
        std::istringstream csv(slurp(dir / name / "samples.csv"));
        std::string header, line, last;
        std::getline(csv, header);
        while (std::getline(csv, line)) last = line;
        const auto cols = split_csv(header), cells = split_csv(last);
        const auto col = [&](const std::string& n) {
            return static_cast<std::size_t>(std::find(cols.begin(), cols.end(), n) - cols.begin());
        };
        EXPECT_EQ(std::stoul(cells[col("K")]), rep.K_final);
        EXPECT_EQ(std::stoul(cells[col("s_hat")]), rep.s_hat);
        const auto j = nlohmann::json::parse(slurp(dir / name / "report.json"));
        EXPECT_EQ(j.at("s_hat").get<std::size_t>(), rep.s_hat);
        EXPECT_EQ(j.at("K_final").get<std::size_t>(), rep.K_final);
        EXPECT_GE(rep.misclassification, 0.0);
        EXPECT_LE(rep.misclassification, 1.0);
        for (const char* f : {"bifurcation.svg", "theta_convergence.svg", "prediction.svg", "checkpoint.json"})
            EXPECT_TRUE(fs::exists(dir / name / f)) << f;
    }
    fs::remove_all(dir);
}

TEST(RunExperiment, SameSeedSameLog) {
    const auto dir = fresh_dir("determinism");
    const auto cfg = default_experiment("exp1");
    run_experiment(cfg, 5, dir / "a");
    run_experiment(cfg, 5, dir / "b");
    run_experiment(cfg, 6, dir / "c");
    EXPECT_EQ(slurp(dir / "a" / "samples.csv"), slurp(dir / "b" / "samples.csv"));
    EXPECT_NE(slurp(dir / "a" / "samples.csv"), slurp(dir / "c" / "samples.csv"));
    fs::remove_all(dir);
}

TEST(RunRepeats, DistinctSeedsAndAggregate) {
    const auto dir = fresh_dir("repeats");
    auto cfg = default_experiment("exp1");
    cfg.repeats = 5;
    cfg.seed = 40;
    const auto reports = run_repeats(cfg, dir, 3);
    ASSERT_EQ(reports.size(), 5u);
    std::set<std::uint64_t> seeds;
    for (const auto& r : reports) seeds.insert(r.seed);
    EXPECT_EQ(seeds, (std::set<std::uint64_t>{40, 41, 42, 43, 44}));
    for (int k = 0; k < 5; ++k) EXPECT_TRUE(fs::exists(dir / ("run_" + std::to_string(k)) / "report.json"));
    // Threads do not change results.
    const auto serial = run_experiment(cfg, 42);
    EXPECT_EQ(serial.modes.size(), reports[2].modes.size());
    for (std::size_t i = 0; i < serial.modes.size(); ++i) EXPECT_EQ(serial.modes[i], reports[2].modes[i]);
    const auto agg = aggregate(reports);
    EXPECT_EQ(agg.at("runs").size(), 5u);
    int total = 0;
    for (const auto& [k, c] : agg.at("s_hat_histogram").items()) total += c.get<int>();
    EXPECT_EQ(total, 5);
    fs::remove_all(dir);
}

TEST(ReplayCheckpoint, ResumedRunEqualsUninterruptedRun) {
    const auto dir = fresh_dir("replay");
    for (const std::string name : {"exp1", "exp2"}) {
        auto cfg = default_experiment(name);
        cfg.checkpoint_levels = true;
        const auto full = run_experiment(cfg, 3, dir / name);
        const auto ckpt = nlohmann::json::parse(slurp(dir / name / "checkpoint_level3.json"));
        const auto resumed = replay_checkpoint(ckpt, dir / (name + "_resumed"));
        EXPECT_EQ(resumed.samples, full.samples);
        EXPECT_EQ(resumed.levels.size(), full.levels.size());
        ASSERT_EQ(resumed.modes.size(), full.modes.size());
        for (std::size_t i = 0; i < full.modes.size(); ++i) EXPECT_EQ(resumed.modes[i], full.modes[i]);
        EXPECT_EQ(resumed.misclassification, full.misclassification);
    }
    fs::remove_all(dir);
}

TEST(TrajectoryCsv, RoundTrip) {
    const auto dir = fresh_dir("csv");
    const auto traj = generate_trajectory(preset_exp2(), 40, 2);
    write_trajectory_csv(traj, dir / "t.csv");
    const auto back = read_trajectory_csv(dir / "t.csv");
    ASSERT_EQ(back.samples.size(), traj.samples.size());
    for (std::size_t i = 0; i < traj.samples.size(); ++i) {
        EXPECT_EQ(back.samples[i].t, traj.samples[i].t);
        EXPECT_EQ(back.samples[i].phi, traj.samples[i].phi);
        EXPECT_EQ(back.samples[i].psi, traj.samples[i].psi);
        EXPECT_EQ(back.samples[i].true_mode, traj.samples[i].true_mode);
    }
    fs::remove_all(dir);
}

TEST(TrajectoryCsv, MalformedInputIsRejected) {
    const auto dir = fresh_dir("badcsv");
    write_text(dir / "bad.csv", "t,phi_0,psi_0\n0,1,oops\n");
    EXPECT_ANY_THROW(read_trajectory_csv(dir / "bad.csv"));
    EXPECT_ANY_THROW(read_trajectory_csv(dir / "missing.csv"));
    fs::remove_all(dir);
}

TEST(ExperimentConfigTest, ErrorsNameTheField) {
    auto field_of = [](const nlohmann::json& j) {
        try {
            experiment_from_json(j);
        } catch (const ConfigError& e) {
            return e.field();
        }
        return std::string();
    };
    EXPECT_EQ(field_of(nlohmann::json::object()), "");
    EXPECT_EQ(field_of({{"N", 0}}), "N");
    EXPECT_EQ(field_of({{"repeats", 0}}), "repeats");
    EXPECT_EQ(field_of({{"N", "many"}}), "N");
    EXPECT_EQ(field_of({{"system", "exp9"}}), "system");
    EXPECT_EQ(field_of({{"identifier", {{"gamma", 2.0}}}}), "identifier.gamma");
    EXPECT_EQ(field_of({{"system", "exp2"}, {"plot_coordinate", 3}}), "plot_coordinate");
}

TEST(ExperimentConfigTest, JsonRoundTripWithCustomSystem) {
    auto cfg = default_experiment("exp1");
    cfg.system_name = "custom";
    cfg.system.noise_std = 0.05;
    cfg.identifier.K_max = 7;
    cfg.identifier.theta_init.reset();
    const auto back = experiment_from_json(nlohmann::json::parse(to_json(cfg).dump()));
    EXPECT_EQ(back.system_name, "custom");
    EXPECT_EQ(back.system.noise_std, 0.05);
    EXPECT_EQ(back.identifier.K_max, 7u);
    EXPECT_EQ(back.N, cfg.N);
}

TEST(Plots, EmptyLogStillWritesFiles) {
    const auto dir = fresh_dir("plots");
    emit_plots(RecordLog{}, default_experiment("exp1"), nullptr, {}, dir);
    for (const char* f : {"bifurcation.svg", "theta_convergence.svg", "prediction.svg"}) {
        ASSERT_TRUE(fs::exists(dir / f)) << f;
        EXPECT_NE(slurp(dir / f).find("<svg"), std::string::npos);
    }
    EXPECT_THROW(emit_plots(RecordLog{}, default_experiment("exp1"), nullptr, {}, dir / "no" / "such"), std::runtime_error);
    fs::remove_all(dir);
}

TEST(Cli, ExitCodes) {
    const auto dir = fresh_dir("cli");
    const std::string out = (dir / "run").string();
    EXPECT_EQ(run_cli("run --system exp1 --seed 1 --out " + out), 0);
    EXPECT_TRUE(fs::exists(dir / "run" / "report.json"));
    EXPECT_EQ(run_cli("run --system exp1 --out " + out), 2);
    EXPECT_EQ(run_cli("run --system exp7 --seed 1 --out " + out), 2);
    write_text(dir / "bad.json", R"({"identifier": {"gamma": 3}})");
    EXPECT_EQ(run_cli("run --config " + (dir / "bad.json").string() + " --seed 1 --out " + out), 2);
    write_text(dir / "blowup.json",
               R"({"identifier": {"normalized_gain": false, "alpha": {"kind": "constant", "c": 1.0}}})");
    EXPECT_EQ(run_cli("run --config " + (dir / "blowup.json").string() + " --seed 1 --out " + out), 3);
    EXPECT_EQ(run_cli("simulate --system exp2 --seed 4 --out " + (dir / "traj.csv").string()), 0);
    EXPECT_EQ(read_trajectory_csv(dir / "traj.csv").samples.size(), 300u);
    EXPECT_EQ(run_cli("pe-check --input " + (dir / "traj.csv").string() + " --window 100"), 0);
    EXPECT_EQ(run_cli("identify --input " + (dir / "traj.csv").string() + " --system exp2 --out " + (dir / "id").string()), 0);
    EXPECT_TRUE(fs::exists(dir / "id" / "model.json"));
    EXPECT_EQ(run_cli("replay --checkpoint " + (dir / "run" / "checkpoint.json").string() + " --out " + (dir / "rep").string()), 0);
    EXPECT_EQ(run_cli("replay --checkpoint " + (dir / "nothing.json").string() + " --out " + (dir / "rep").string()), 2);
    fs::remove_all(dir);
}
