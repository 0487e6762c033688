#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "pwaid/errors.hpp"
#include "pwaid/hybrid.hpp"
#include "pwaid/simulate.hpp"
#include "pwaid/svg.hpp"

namespace pwaid {

struct ExperimentConfig {
    std::string system_name = "exp1";  // preset name, or "custom" for an inline spec
    SwitchedSystemSpec system = preset_exp1();
    IdentifierConfig identifier;
    long N = 150;
    long repeats = 1;
    std::uint64_t seed = 0;
    std::string output_dir;
    // Replay the N recorded samples cyclically (true) or stream N live samples once (false).
    bool cycle = true;
    // Split the live sample budget evenly across temperature levels.
    bool spread_live_budget = true;
    double lambda_eval = 0.01;  // temperature of the smooth predictor
    long eval_points = 801;
    int plot_coordinate = -1;  // regressor entry for the bifurcation plot; -1 picks the current input
    bool checkpoint_levels = false;

    void validate() const {
        system.validate();
        identifier.validate();
        if (N < 1) throw ConfigError("N", "must be at least 1");
        if (repeats < 1) throw ConfigError("repeats", "must be at least 1");
        if (!(lambda_eval > 0.0 && lambda_eval < 1.0)) throw ConfigError("lambda_eval", "must lie in (0, 1)");
        if (eval_points < 2) throw ConfigError("eval_points", "must be at least 2");
        if (plot_coordinate >= system.d) throw ConfigError("plot_coordinate", "must index the regressor");
        if (identifier.theta_init &&
            (identifier.theta_init->rows() != system.m || identifier.theta_init->cols() != system.d))
            throw ConfigError("identifier.theta_init", "must be m x d");
    }

    int bifurcation_coordinate() const {
        if (plot_coordinate >= 0) return plot_coordinate;
        return system.kind == ModelKind::StateSpace ? system.m : system.m * system.n_a;
    }
};

// Defaults reproducing the two reference experiments; any other name is a ConfigError.
inline ExperimentConfig default_experiment(const std::string& name) {
    ExperimentConfig c;
    c.system_name = name;
    c.system = preset(name);
    if (name == "exp1") {
        c.N = 150;
        c.cycle = true;
        c.identifier.lambda_min = 0.2;
        c.identifier.max_iters_per_level = 900;
        c.identifier.theta_init = Eigen::MatrixXd::Ones(1, 2);
    } else {
        c.N = 300;
        c.cycle = false;
        c.identifier.lambda_min = 0.1;
        c.identifier.theta_init = Eigen::MatrixXd::Ones(2, 3);
        c.plot_coordinate = 2;
    }
    return c;
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
    nlohmann::json j = {{"identifier", to_json(c.identifier)},
                        {"N", c.N},
                        {"repeats", c.repeats},
                        {"seed", c.seed},
                        {"output_dir", c.output_dir},
                        {"cycle", c.cycle},
                        {"spread_live_budget", c.spread_live_budget},
                        {"lambda_eval", c.lambda_eval},
                        {"eval_points", c.eval_points},
                        {"plot_coordinate", c.plot_coordinate},
                        {"checkpoint_levels", c.checkpoint_levels}};
    if (c.system_name == "custom") j["system"] = to_json(c.system);
    else j["system"] = c.system_name;
    return j;
}

// Starts from the preset named by "system" (exp1 when absent) and overlays the other keys.
inline ExperimentConfig experiment_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config", "must be a JSON object");
    ExperimentConfig c;
    if (j.contains("system") && j.at("system").is_object()) {
        c = default_experiment("exp1");
        c.system_name = "custom";
        c.system = spec_from_json(j.at("system"));
        c.identifier = IdentifierConfig{};
        c.identifier.theta_init.reset();
        c.plot_coordinate = -1;
    } else if (j.contains("system")) {
        if (!j.at("system").is_string()) throw ConfigError("system", "must be a preset name or an object");
        c = default_experiment(j.at("system").get<std::string>());
    } else {
        c = default_experiment("exp1");
    }
    std::string field;
    try {
        field = "N";
        if (j.contains("N")) c.N = j.at("N").get<long>();
        field = "repeats";
        if (j.contains("repeats")) c.repeats = j.at("repeats").get<long>();
        field = "seed";
        if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
        field = "output_dir";
        if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
        field = "cycle";
        if (j.contains("cycle")) c.cycle = j.at("cycle").get<bool>();
        field = "spread_live_budget";
        if (j.contains("spread_live_budget")) c.spread_live_budget = j.at("spread_live_budget").get<bool>();
        field = "lambda_eval";
        if (j.contains("lambda_eval")) c.lambda_eval = j.at("lambda_eval").get<double>();
        field = "eval_points";
        if (j.contains("eval_points")) c.eval_points = j.at("eval_points").get<long>();
        field = "plot_coordinate";
        if (j.contains("plot_coordinate")) c.plot_coordinate = j.at("plot_coordinate").get<int>();
        field = "checkpoint_levels";
        if (j.contains("checkpoint_levels")) c.checkpoint_levels = j.at("checkpoint_levels").get<bool>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(field, e.what());
    }
    if (j.contains("identifier")) {
        try {
            c.identifier = identifier_config_from_json(j.at("identifier"), c.identifier);
        } catch (const ConfigError& e) {
            throw ConfigError("identifier." + e.field(), e.what());
        }
    }
    c.validate();
    return c;
}

inline ExperimentConfig load_experiment(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config", "cannot open '" + path + "'");
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config", std::string("invalid JSON: ") + e.what());
    }
    return experiment_from_json(j);
}

// --- metrics -----------------------------------------------------------------

struct ModeMatch {
    int true_index = -1;
    int identified = -1;  // -1 when no identified mode was left to assign
    double err_inf = std::numeric_limits<double>::infinity();
};

// Greedy assignment: repeatedly pair the closest remaining (identified, true) modes.
inline std::vector<ModeMatch> match_modes(const std::vector<Eigen::MatrixXd>& identified,
                                          const std::vector<Eigen::MatrixXd>& truth) {
    std::vector<ModeMatch> out(truth.size());
    for (std::size_t i = 0; i < truth.size(); ++i) out[i].true_index = static_cast<int>(i);
    std::vector<bool> used_id(identified.size(), false), used_true(truth.size(), false);
    for (std::size_t k = 0; k < std::min(identified.size(), truth.size()); ++k) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t bi = 0, bt = 0;
        for (std::size_t i = 0; i < identified.size(); ++i) {
            if (used_id[i]) continue;
            for (std::size_t t = 0; t < truth.size(); ++t) {
                if (used_true[t]) continue;
                const double dist = (identified[i] - truth[t]).norm();
                if (dist < best) best = dist, bi = i, bt = t;
            }
        }
        used_id[bi] = used_true[bt] = true;
        out[bt].identified = static_cast<int>(bi);
        out[bt].err_inf = (identified[bi] - truth[bt]).cwiseAbs().maxCoeff();
    }
    return out;
}

// Noise-free evaluation points: a dense input grid for static maps with a
// uniform input, otherwise a fresh noise-free simulated trajectory.
inline std::vector<Sample> evaluation_set(const ExperimentConfig& cfg, std::uint64_t seed) {
    SwitchedSystemSpec clean = cfg.system;
    clean.noise_std = 0.0;
    const bool static_map = clean.kind == ModelKind::Pwarx && clean.n_a == 0 && clean.n_b == 0 &&
                            clean.input.kind == InputSignal::Kind::UniformRandom;
    std::vector<Sample> out;
    if (static_map) {
        Rng unused(0);
        for (long k = 0; k < cfg.eval_points; ++k) {
            const double r = clean.input.lo + (clean.input.hi - clean.input.lo) * static_cast<double>(k) /
                                                  static_cast<double>(cfg.eval_points - 1);
            Eigen::VectorXd phi(2);
            phi << r, 1.0;
            auto [psi, mode] = step(clean, phi, unused, k);
            out.push_back({k, phi, psi, mode});
        }
        return out;
    }
    return generate_trajectory(clean, cfg.N, seed ^ 0xE7A1ULL).samples;
}

// Fraction of points whose identified mode, mapped to the nearest true parameter
// matrix, differs from the true active mode's parameters.
inline double evaluate_mode_accuracy(const EstimatedHybridModel& model, const SwitchedSystemSpec& spec,
                                     const std::vector<Sample>& eval) {
    if (eval.empty()) throw InvalidInput("evaluate_mode_accuracy: empty evaluation set");
    const auto [truth, cls] = distinct_thetas(spec);
    std::vector<int> to_true(model.modes.size());
    for (std::size_t i = 0; i < model.modes.size(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t t = 0; t < truth.size(); ++t) {
            const double dist = (model.modes[i] - truth[t]).norm();
            if (dist < best) best = dist, to_true[i] = static_cast<int>(t);
        }
    }
    long miss = 0;
    for (const auto& s : eval) {
        const int want = cls[static_cast<std::size_t>(active_mode(spec, s.phi, s.t))];
        if (to_true[static_cast<std::size_t>(mode_of(model, s.phi))] != want) ++miss;
    }
    return static_cast<double>(miss) / static_cast<double>(eval.size());
}

struct RunReport {
    std::uint64_t seed = 0;
    std::size_t s_hat = 0;
    std::size_t K_final = 0;
    std::vector<Eigen::MatrixXd> modes;
    std::vector<Eigen::MatrixXd> true_modes;
    std::vector<ModeMatch> matches;
    double misclassification = 0.0;
    double rmse_hard = 0.0;
    double rmse_smooth = 0.0;
    double seconds = 0.0;
    long samples = 0;
    std::vector<LevelSummary> levels;
    EstimatedHybridModel model;
};

inline nlohmann::json to_json(const RunReport& r) {
    nlohmann::json modes = nlohmann::json::array(), truth = nlohmann::json::array(), matches = nlohmann::json::array();
    for (const auto& m : r.modes) modes.push_back(detail::mat_to_json(m));
    for (const auto& m : r.true_modes) truth.push_back(detail::mat_to_json(m));
    for (const auto& m : r.matches)
        matches.push_back({{"true_index", m.true_index},
                           {"identified", m.identified},
                           {"err_inf", std::isfinite(m.err_inf) ? nlohmann::json(m.err_inf) : nlohmann::json(nullptr)}});
    nlohmann::json levels = nlohmann::json::array();
    for (const auto& l : r.levels)
        levels.push_back({{"lambda", l.lambda}, {"K", l.K}, {"s_hat", l.s_hat}, {"iterations", l.iterations}, {"converged", l.converged}});
    nlohmann::json cells = nlohmann::json::array();
    for (std::size_t j = 0; j < r.model.K(); ++j)
        cells.push_back({{"phi_hat", detail::vec_to_json(r.model.phi_hats[j])}, {"mode", r.model.cell_mode[j]}});
    return {{"seed", r.seed},
            {"s_hat", r.s_hat},
            {"K_final", r.K_final},
            {"modes", modes},
            {"true_modes", truth},
            {"matches", matches},
            {"cells", cells},
            {"misclassification", r.misclassification},
            {"rmse_hard", r.rmse_hard},
            {"rmse_smooth", r.rmse_smooth},
            {"seconds", r.seconds},
            {"samples", r.samples},
            {"levels", levels},
            {"rng", kRngAlgorithm}};
}

// --- logs --------------------------------------------------------------------

// Buffers per-sample records and writes them with a header wide enough for
// the largest mode and codevector counts seen; absent entries are left empty.
class RecordLog {
public:
    void push(const SampleRecord& r) { rows_.push_back(r); }
    const std::vector<SampleRecord>& rows() const { return rows_; }

    std::string csv() const {
        std::size_t smax = 0, kmax = 0;
        Eigen::Index m = 0, d = 0;
        for (const auto& r : rows_) {
            smax = std::max(smax, r.mode_thetas.size());
            kmax = std::max(kmax, r.phi_hats.size());
            if (!r.mode_thetas.empty()) m = r.mode_thetas[0].rows(), d = r.mode_thetas[0].cols();
        }
        std::ostringstream o;
        o << "t,lambda,K,s_hat,winner,err_norm";
        for (std::size_t i = 0; i < smax; ++i)
            for (Eigen::Index r = 0; r < m; ++r)
                for (Eigen::Index c = 0; c < d; ++c) o << ",theta" << i << '_' << r << '_' << c;
        for (std::size_t j = 0; j < kmax; ++j)
            for (Eigen::Index k = 0; k < d; ++k) o << ",phi" << j << '_' << k;
        o << '\n';
        for (const auto& rec : rows_) {
            o << rec.t << ',' << format_double(rec.lambda) << ',' << rec.K << ',' << rec.s_hat << ',' << rec.winner << ','
              << format_double(rec.err_norm);
            for (std::size_t i = 0; i < smax; ++i)
                for (Eigen::Index r = 0; r < m; ++r)
                    for (Eigen::Index c = 0; c < d; ++c) {
                        o << ',';
                        if (i < rec.mode_thetas.size()) o << format_double(rec.mode_thetas[i](r, c));
                    }
            for (std::size_t j = 0; j < kmax; ++j)
                for (Eigen::Index k = 0; k < d; ++k) {
                    o << ',';
                    if (j < rec.phi_hats.size()) o << format_double(rec.phi_hats[j](k));
                }
            o << '\n';
        }
        return o.str();
    }

private:
    std::vector<SampleRecord> rows_;
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    f << text;
    if (!f) throw std::runtime_error("failed writing '" + path.string() + "'");
}

inline void write_trajectory_csv(const Trajectory& traj, const std::filesystem::path& path) {
    std::ostringstream o;
    if (!traj.samples.empty()) {
        o << 't';
        for (Eigen::Index k = 0; k < traj.samples[0].phi.size(); ++k) o << ",phi_" << k;
        for (Eigen::Index k = 0; k < traj.samples[0].psi.size(); ++k) o << ",psi_" << k;
        o << ",true_mode\n";
    }
    for (const auto& s : traj.samples) {
        o << s.t;
        for (Eigen::Index k = 0; k < s.phi.size(); ++k) o << ',' << format_double(s.phi(k));
        for (Eigen::Index k = 0; k < s.psi.size(); ++k) o << ',' << format_double(s.psi(k));
        o << ',' << s.true_mode << '\n';
    }
    write_text(path, o.str());
}

// Reads `t,phi_0..,psi_0..[,true_mode]`; column roles come from the header names.
inline Trajectory read_trajectory_csv(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw InvalidInput("cannot open trajectory '" + path.string() + "'");
    std::string line;
    if (!std::getline(f, line)) throw InvalidInput("trajectory '" + path.string() + "' is empty");
    auto split = [](const std::string& s) {
        std::vector<std::string> out;
        std::stringstream ss(s);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            if (!cell.empty() && cell.back() == '\r') cell.pop_back();
            out.push_back(cell);
        }
        return out;
    };
    const auto header = split(line);
    std::vector<std::size_t> phi_cols, psi_cols;
    std::optional<std::size_t> t_col, mode_col;
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == "t") t_col = i;
        else if (header[i].rfind("phi_", 0) == 0) phi_cols.push_back(i);
        else if (header[i].rfind("psi_", 0) == 0) psi_cols.push_back(i);
        else if (header[i] == "true_mode") mode_col = i;
        else throw InvalidInput("trajectory: unexpected column '" + header[i] + "'");
    }
    if (!t_col || phi_cols.empty() || psi_cols.empty())
        throw InvalidInput("trajectory: header needs t, phi_* and psi_* columns");
    Trajectory traj;
    long row = 1;
    while (std::getline(f, line)) {
        ++row;
        if (line.empty()) continue;
        const auto cells = split(line);
        if (cells.size() != header.size())
            throw InvalidInput("trajectory: row " + std::to_string(row) + " has the wrong number of fields");
        auto num = [&](std::size_t i) {
            double v = 0.0;
            const auto& c = cells[i];
            auto res = std::from_chars(c.data(), c.data() + c.size(), v);
            if (res.ec != std::errc() || res.ptr != c.data() + c.size())
                throw InvalidInput("trajectory: bad number '" + c + "' at row " + std::to_string(row));
            return v;
        };
        Sample s;
        s.t = static_cast<long>(num(*t_col));
        s.phi.resize(static_cast<Eigen::Index>(phi_cols.size()));
        s.psi.resize(static_cast<Eigen::Index>(psi_cols.size()));
        for (std::size_t k = 0; k < phi_cols.size(); ++k) s.phi(static_cast<Eigen::Index>(k)) = num(phi_cols[k]);
        for (std::size_t k = 0; k < psi_cols.size(); ++k) s.psi(static_cast<Eigen::Index>(k)) = num(psi_cols[k]);
        if (mode_col) s.true_mode = static_cast<int>(num(*mode_col));
        traj.samples.push_back(std::move(s));
    }
    if (traj.samples.empty()) throw InvalidInput("trajectory: no samples");
    return traj;
}

// --- plots -------------------------------------------------------------------

// Writes bifurcation.svg, theta_convergence.svg and prediction.svg.
inline void emit_plots(const RecordLog& log, const ExperimentConfig& cfg, const EstimatedHybridModel* model,
                       const std::vector<Sample>& eval, const std::filesystem::path& dir) {
    const auto& rows = log.rows();
    const std::size_t stride = std::max<std::size_t>(1, rows.size() / 1500);
    const int coord = cfg.bifurcation_coordinate();

    SvgPlot bif("Codevector evolution", "iteration", "phi_hat coordinate " + std::to_string(coord));
    SvgPlot::Series pts{"", SvgPlot::palette(0), {}, {}, true, false};
    for (std::size_t i = 0; i < rows.size(); i += stride)
        for (const auto& p : rows[i].phi_hats) {
            pts.x.push_back(static_cast<double>(rows[i].t));
            pts.y.push_back(p(coord));
        }
    bif.add(std::move(pts));
    bif.write((dir / "bifurcation.svg").string());

    SvgPlot conv("Parameter convergence", "iteration", "theta entries");
    const auto [truth, cls] = distinct_thetas(cfg.system);
    double t_end = rows.empty() ? 1.0 : static_cast<double>(rows.back().t);
    std::size_t smax = 0;
    for (const auto& r : rows) smax = std::max(smax, r.mode_thetas.size());
    std::size_t color = 0;
    for (std::size_t i = 0; i < smax; ++i) {
        const Eigen::Index m = cfg.system.m, d = cfg.system.d;
        for (Eigen::Index r = 0; r < m; ++r)
            for (Eigen::Index c = 0; c < d; ++c) {
                SvgPlot::Series s{"theta" + std::to_string(i) + "_" + std::to_string(r) + "_" + std::to_string(c),
                                  SvgPlot::palette(color++), {}, {}, false, false};
                for (std::size_t k = 0; k < rows.size(); k += stride)
                    if (i < rows[k].mode_thetas.size()) {
                        s.x.push_back(static_cast<double>(rows[k].t));
                        s.y.push_back(rows[k].mode_thetas[i](r, c));
                    }
                conv.add(std::move(s));
            }
    }
    for (const auto& th : truth)
        for (Eigen::Index r = 0; r < th.rows(); ++r)
            for (Eigen::Index c = 0; c < th.cols(); ++c)
                conv.add({"", "#000000", {0.0, t_end}, {th(r, c), th(r, c)}, false, true});
    conv.write((dir / "theta_convergence.svg").string());

    SvgPlot pred("Prediction on noise-free evaluation set", "evaluation point", "output");
    if (model && !eval.empty()) {
        const bool grid = eval.size() > 1 && cfg.system.kind == ModelKind::Pwarx && cfg.system.n_a == 0;
        auto xof = [&](const Sample& s) { return grid ? s.phi(0) : static_cast<double>(s.t); };
        for (Eigen::Index k = 0; k < eval.front().psi.size(); ++k) {
            SvgPlot::Series truth_s{"true psi_" + std::to_string(k), "#000000", {}, {}, false, false};
            SvgPlot::Series hard{"hard psi_" + std::to_string(k), SvgPlot::palette(1 + 2 * k), {}, {}, false, true};
            SvgPlot::Series smooth{"smooth psi_" + std::to_string(k), SvgPlot::palette(2 + 2 * k), {}, {}, false, false};
            for (const auto& s : eval) {
                truth_s.x.push_back(xof(s));
                truth_s.y.push_back(s.psi(k));
                hard.x.push_back(xof(s));
                hard.y.push_back(predict_hard(*model, s.phi)(k));
                smooth.x.push_back(xof(s));
                smooth.y.push_back(predict_smooth(*model, s.phi, cfg.lambda_eval)(k));
            }
            pred.add(std::move(truth_s));
            pred.add(std::move(hard));
            pred.add(std::move(smooth));
        }
        // Shade runs of consecutive points by identified mode.
        std::size_t start = 0;
        for (std::size_t i = 1; i <= eval.size(); ++i) {
            if (i < eval.size() && mode_of(*model, eval[i].phi) == mode_of(*model, eval[start].phi)) continue;
            const double x0 = xof(eval[start]), x1 = xof(eval[i - 1]);
            pred.add_band({x0, x1, SvgPlot::palette(3 + static_cast<std::size_t>(mode_of(*model, eval[start].phi)))});
            start = i;
        }
    }
    pred.write((dir / "prediction.svg").string());
}

// --- experiment --------------------------------------------------------------

namespace detail {

inline IdentifierConfig identifier_for(const ExperimentConfig& cfg, std::uint64_t seed) {
    IdentifierConfig ic = cfg.identifier;
    ic.seed = seed ^ 0x5DEECE66DULL;
    if (!cfg.cycle && cfg.spread_live_budget) {
        const long levels = std::max(1L, ic.level_count());
        ic.max_iters_per_level = std::max(1L, (cfg.N + levels - 1) / levels);
    }
    return ic;
}

struct StreamOwner {
    std::unique_ptr<ObservationSource> source;
};

inline StreamOwner open_stream(const ExperimentConfig& cfg, const IdentifierConfig& ic, std::uint64_t seed,
                               long start) {
    StreamOwner s;
    if (cfg.cycle) {
        auto src = std::make_unique<ReplaySource>(generate_trajectory(cfg.system, cfg.N, seed), true, ic.level_count() * ic.max_iters_per_level);
        src->seek(start);
        s.source = std::move(src);
    } else {
        auto src = std::make_unique<LiveSource>(cfg.system, seed, cfg.N);
        src->skip(start);
        s.source = std::move(src);
    }
    return s;
}

inline nlohmann::json harness_checkpoint(const ExperimentConfig& cfg, std::uint64_t seed, const Identifier& id,
                                         const std::vector<LevelSummary>& levels) {
    nlohmann::json lv = nlohmann::json::array();
    for (const auto& l : levels)
        lv.push_back({{"lambda", l.lambda}, {"K", l.K}, {"s_hat", l.s_hat}, {"iterations", l.iterations}, {"converged", l.converged}});
    return {{"experiment", to_json(cfg)}, {"seed", seed}, {"identifier", id.checkpoint()}, {"levels", lv}};
}

// Drives the identifier to the end, evaluates and writes artifacts.
inline RunReport finish_run(const ExperimentConfig& cfg, std::uint64_t seed, Identifier& id, ObservationSource& source,
                            std::vector<LevelSummary> levels, const std::filesystem::path& out) {
    RecordLog log;
    id.set_record_sink([&log](const SampleRecord& r) { log.push(r); });
    if (!out.empty()) std::filesystem::create_directories(out);
    const auto t0 = std::chrono::steady_clock::now();
    while (id.can_run_level()) {
        const long before = id.samples_seen();
        levels.push_back(id.run_level(source));
        if (!out.empty() && cfg.checkpoint_levels)
            write_text(out / ("checkpoint_level" + std::to_string(id.level()) + ".json"),
                       harness_checkpoint(cfg, seed, id, levels).dump(2));
        if (id.samples_seen() == before) break;
    }
    RunReport rep;
    rep.seed = seed;
    rep.model = id.finalize();
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rep.levels = std::move(levels);
    rep.samples = id.samples_seen();
    rep.s_hat = rep.model.s_hat();
    rep.K_final = rep.model.K();
    rep.modes = rep.model.modes;
    rep.true_modes = distinct_thetas(cfg.system).first;
    rep.matches = match_modes(rep.modes, rep.true_modes);
    const auto eval = evaluation_set(cfg, seed);
    rep.misclassification = evaluate_mode_accuracy(rep.model, cfg.system, eval);
    double sh = 0.0, ss = 0.0;
    for (const auto& s : eval) {
        sh += (predict_hard(rep.model, s.phi) - s.psi).squaredNorm();
        ss += (predict_smooth(rep.model, s.phi, cfg.lambda_eval) - s.psi).squaredNorm();
    }
    rep.rmse_hard = std::sqrt(sh / static_cast<double>(eval.size()));
    rep.rmse_smooth = std::sqrt(ss / static_cast<double>(eval.size()));

    if (!out.empty()) {
        std::filesystem::create_directories(out);
        write_text(out / "samples.csv", log.csv());
        write_text(out / "report.json", to_json(rep).dump(2));
        write_text(out / "checkpoint.json", harness_checkpoint(cfg, seed, id, rep.levels).dump(2));
        emit_plots(log, cfg, &rep.model, eval, out);
    }
    return rep;
}

}  // namespace detail

// One full run for `seed`; artifacts go to `out` unless it is empty.
inline RunReport run_experiment(const ExperimentConfig& cfg, std::uint64_t seed, const std::filesystem::path& out = {}) {
    cfg.validate();
    const IdentifierConfig ic = detail::identifier_for(cfg, seed);
    Identifier id(ic, cfg.system.m, cfg.system.d);
    auto stream = detail::open_stream(cfg, ic, seed, 0);
    return detail::finish_run(cfg, seed, id, *stream.source, {}, out);
}

// Resumes from a checkpoint written by run_experiment and completes the run.
inline RunReport replay_checkpoint(const nlohmann::json& ckpt, const std::filesystem::path& out = {}) {
    ExperimentConfig cfg;
    std::uint64_t seed = 0;
    std::vector<LevelSummary> levels;
    try {
        cfg = experiment_from_json(ckpt.at("experiment"));
        seed = ckpt.at("seed").get<std::uint64_t>();
        for (const auto& l : ckpt.at("levels"))
            levels.push_back({l.at("lambda").get<double>(), l.at("K").get<std::size_t>(), l.at("s_hat").get<std::size_t>(),
                              l.at("iterations").get<long>(), l.at("converged").get<bool>()});
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("checkpoint", e.what());
    }
    Identifier id = Identifier::restore(ckpt.at("identifier"));
    auto stream = detail::open_stream(cfg, id.config(), seed, id.samples_seen());
    return detail::finish_run(cfg, seed, id, *stream.source, std::move(levels), out);
}

// Runs cfg.repeats seeds (cfg.seed, cfg.seed+1, ...) on worker threads.
// Each repeat writes to out/run_<k> when there is more than one.
inline std::vector<RunReport> run_repeats(const ExperimentConfig& cfg, const std::filesystem::path& out = {},
                                          unsigned threads = 0) {
    cfg.validate();
    const auto n = static_cast<std::size_t>(cfg.repeats);
    std::vector<RunReport> reports(n);
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    auto worker = [&] {
        for (std::size_t k = next++; k < n; k = next++) {
            try {
                std::filesystem::path dir = out;
                if (!out.empty() && n > 1) dir = out / ("run_" + std::to_string(k));
                reports[k] = run_experiment(cfg, cfg.seed + k, dir);
            } catch (...) {
                errors[k] = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < std::min<std::size_t>(threads, n); ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
    return reports;
}

inline nlohmann::json aggregate(const std::vector<RunReport>& reports) {
    nlohmann::json runs = nlohmann::json::array();
    std::map<std::size_t, int> s_hist;
    double mis = 0.0, secs = 0.0;
    for (const auto& r : reports) {
        runs.push_back({{"seed", r.seed}, {"s_hat", r.s_hat}, {"K_final", r.K_final}, {"misclassification", r.misclassification}});
        ++s_hist[r.s_hat];
        mis += r.misclassification;
        secs += r.seconds;
    }
    nlohmann::json hist = nlohmann::json::object();
    for (const auto& [s, c] : s_hist) hist[std::to_string(s)] = c;
    const double n = static_cast<double>(std::max<std::size_t>(1, reports.size()));
    return {{"runs", runs}, {"s_hat_histogram", hist}, {"mean_misclassification", mis / n}, {"mean_seconds", secs / n}};
}

}  // namespace pwaid
