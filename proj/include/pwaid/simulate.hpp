#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "pwaid/errors.hpp"

namespace pwaid {

// Every stochastic component draws from this engine so runs are reproducible
// from a single integer seed. The identifier is written into run metadata.
using Rng = std::mt19937_64;
inline constexpr const char* kRngAlgorithm = "mt19937_64+std::normal_distribution";

// Closed halfspace a'phi <= b.
struct Halfspace {
    Eigen::VectorXd a;
    double b = 0.0;

    bool contains(const Eigen::VectorXd& phi) const { return a.dot(phi) <= b; }
};

struct AffineMode {
    Eigen::MatrixXd theta;  // m x d
    std::vector<Halfspace> region;

    bool contains(const Eigen::VectorXd& phi) const {
        for (const auto& h : region)
            if (!h.contains(phi)) return false;
        return true;
    }
};

struct InputSignal {
    enum class Kind { Sinusoid, UniformRandom, Sequence };
    Kind kind = Kind::Sinusoid;
    double amplitude = 1.0;
    double frequency = 1.0;  // cycles per unit of simulated time t*dt
    double lo = -1.0;
    double hi = 1.0;
    std::vector<double> values;

    double at(long t, double dt, Rng& rng) const {
        switch (kind) {
            case Kind::Sinusoid:
                return amplitude * std::cos(2.0 * std::numbers::pi * frequency * static_cast<double>(t) * dt);
            case Kind::UniformRandom: return std::uniform_real_distribution<double>(lo, hi)(rng);
            case Kind::Sequence:
                if (t < 0 || static_cast<std::size_t>(t) >= values.size())
                    throw InvalidInput("input sequence exhausted at t=" + std::to_string(t));
                return values[static_cast<std::size_t>(t)];
        }
        return 0.0;
    }
};

// Pwarx: phi = [y_{t-1} .. y_{t-na}, u_t .. u_{t-nb}, 1] and psi = y_t.
// StateSpace: phi = [x_t; u_t] and psi = x_{t+1}, fed back as the next state.
enum class ModelKind { Pwarx, StateSpace };

struct SwitchedSystemSpec {
    ModelKind kind = ModelKind::Pwarx;
    int m = 1;
    int d = 1;
    std::vector<AffineMode> modes;
    double noise_std = 0.0;
    double dt = 1.0;
    InputSignal input;
    int n_a = 0;
    int n_b = 0;
    Eigen::VectorXd x0;  // initial state (state space) or initial past outputs (PWARX); zeros if empty

    int state_dim() const { return m; }

    void validate() const {
        if (m < 1) throw ConfigError("m", "must be at least 1");
        if (d < 1) throw ConfigError("d", "must be at least 1");
        if (modes.empty()) throw ConfigError("modes", "at least one mode is required");
        if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) throw ConfigError("noise_std", "must be finite and >= 0");
        if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("dt", "must be positive");
        if (n_a < 0 || n_b < 0) throw ConfigError("n_a/n_b", "orders must be nonnegative");
        if (kind == ModelKind::StateSpace && d != m + 1)
            throw ConfigError("d", "state-space model with scalar input requires d == m + 1");
        if (kind == ModelKind::Pwarx && d != m * n_a + (n_b + 1) + 1)
            throw ConfigError("d", "PWARX regressor length must equal m*n_a + (n_b+1) + 1");
        if (x0.size() != 0 && x0.size() != (kind == ModelKind::StateSpace ? m : m * n_a))
            throw ConfigError("x0", "initial condition has the wrong length");
        if (input.kind == InputSignal::Kind::UniformRandom && !(input.lo <= input.hi))
            throw ConfigError("input", "uniform input needs lo <= hi");
        for (std::size_t i = 0; i < modes.size(); ++i) {
            const auto& mode = modes[i];
            const std::string f = "modes[" + std::to_string(i) + "]";
            if (mode.theta.rows() != m || mode.theta.cols() != d)
                throw ConfigError(f + ".theta", "must be m x d");
            if (!mode.theta.allFinite()) throw ConfigError(f + ".theta", "entries must be finite");
            if (mode.region.empty()) throw ConfigError(f + ".region", "needs at least one halfspace");
            for (const auto& h : mode.region) {
                if (h.a.size() != d) throw ConfigError(f + ".region", "halfspace normal must have length d");
                if (h.a.isZero(0.0)) throw ConfigError(f + ".region", "halfspace normal must be nonzero");
            }
        }
    }
};

struct Sample {
    long t = 0;
    Eigen::VectorXd phi;
    Eigen::VectorXd psi;
    int true_mode = -1;  // -1 when unknown, for example streams read from CSV
};

struct Trajectory {
    std::vector<Sample> samples;
};

// Lowest-index mode whose region contains phi.
inline int active_mode(const SwitchedSystemSpec& spec, const Eigen::VectorXd& phi, long t = -1) {
    if (!phi.allFinite()) throw InvalidInput("active_mode: non-finite regressor");
    if (phi.size() != spec.d) throw ContractViolation("active_mode: regressor dimension mismatch");
    for (std::size_t i = 0; i < spec.modes.size(); ++i)
        if (spec.modes[i].contains(phi)) return static_cast<int>(i);
    throw OutOfDomain("regressor lies in no mode region at t=" + std::to_string(t), t);
}

inline std::pair<Eigen::VectorXd, int> step(const SwitchedSystemSpec& spec, const Eigen::VectorXd& phi, Rng& rng,
                                            long t = -1) {
    const int mode = active_mode(spec, phi, t);
    Eigen::VectorXd psi = spec.modes[static_cast<std::size_t>(mode)].theta * phi;
    if (spec.noise_std > 0.0) {
        std::normal_distribution<double> noise(0.0, spec.noise_std);
        for (Eigen::Index k = 0; k < psi.size(); ++k) psi(k) += noise(rng);
    }
    return {psi, mode};
}

// Stacks [y_{t-1} .. y_{t-na}, u_t .. u_{t-nb}]. `ys` and `us` are ordered
// oldest first and `us` already contains u_t as its last element.
inline Eigen::VectorXd build_regressor(const std::vector<Eigen::VectorXd>& ys, const std::vector<Eigen::VectorXd>& us,
                                       int n_a, int n_b) {
    if (n_a < 0 || n_b < 0) throw InvalidInput("build_regressor: negative order");
    if (ys.size() < static_cast<std::size_t>(n_a) || us.size() < static_cast<std::size_t>(n_b + 1))
        throw InvalidInput("build_regressor: insufficient history");
    Eigen::Index len = 0;
    for (int k = 1; k <= n_a; ++k) len += ys[ys.size() - k].size();
    for (int k = 0; k <= n_b; ++k) len += us[us.size() - 1 - k].size();
    Eigen::VectorXd r(len);
    Eigen::Index pos = 0;
    for (int k = 1; k <= n_a; ++k) {
        const auto& y = ys[ys.size() - k];
        r.segment(pos, y.size()) = y;
        pos += y.size();
    }
    for (int k = 0; k <= n_b; ++k) {
        const auto& u = us[us.size() - 1 - k];
        r.segment(pos, u.size()) = u;
        pos += u.size();
    }
    return r;
}

// Steps a spec one sample at a time. State-space presets feed each emitted
// psi back as the next state; PWARX presets rebuild the regressor from the
// emitted outputs.
class Simulator {
public:
    Simulator(SwitchedSystemSpec spec, std::uint64_t seed, const std::optional<Eigen::VectorXd>& initial_state = std::nullopt)
        : spec_(std::move(spec)), rng_(seed) {
        spec_.validate();
        const Eigen::VectorXd init = initial_state ? *initial_state : spec_.x0;
        if (spec_.kind == ModelKind::StateSpace) {
            x_ = init.size() ? init : Eigen::VectorXd::Zero(spec_.m);
            if (x_.size() != spec_.m) throw InvalidInput("Simulator: initial state length must equal m");
            return;
        }
        if (init.size() && init.size() != spec_.m * spec_.n_a)
            throw InvalidInput("Simulator: initial outputs must have length m*n_a");
        // Output history is kept oldest first; init lists the most recent output first.
        for (int k = spec_.n_a - 1; k >= 0; --k)
            ys_.push_back(init.size() ? Eigen::VectorXd(init.segment(k * spec_.m, spec_.m)) : Eigen::VectorXd::Zero(spec_.m));
        for (int k = 0; k < spec_.n_b; ++k) us_.push_back(Eigen::VectorXd::Zero(1));
    }

    Sample next() {
        const long t = t_++;
        const double u = spec_.input.at(t, spec_.dt, rng_);
        Eigen::VectorXd phi(spec_.d);
        if (spec_.kind == ModelKind::StateSpace) {
            phi << x_, u;
        } else {
            us_.push_back(Eigen::VectorXd::Constant(1, u));
            phi << build_regressor(ys_, us_, spec_.n_a, spec_.n_b), 1.0;
        }
        auto [psi, mode] = step(spec_, phi, rng_, t);
        if (spec_.kind == ModelKind::StateSpace) {
            x_ = psi;
        } else {
            ys_.push_back(psi);
            trim(ys_, static_cast<std::size_t>(spec_.n_a));
            trim(us_, static_cast<std::size_t>(spec_.n_b + 1));
        }
        return {t, phi, psi, mode};
    }

    const SwitchedSystemSpec& spec() const { return spec_; }

private:
    static void trim(std::vector<Eigen::VectorXd>& h, std::size_t keep) {
        if (h.size() > keep) h.erase(h.begin(), h.end() - static_cast<std::ptrdiff_t>(keep));
    }

    SwitchedSystemSpec spec_;
    Rng rng_;
    long t_ = 0;
    Eigen::VectorXd x_;
    std::vector<Eigen::VectorXd> ys_;
    std::vector<Eigen::VectorXd> us_;
};

inline Trajectory generate_trajectory(const SwitchedSystemSpec& spec, long N, std::uint64_t seed,
                                      const std::optional<Eigen::VectorXd>& initial_state = std::nullopt) {
    if (N < 1) throw InvalidInput("generate_trajectory: N must be at least 1");
    Simulator sim(spec, seed, initial_state);
    Trajectory traj;
    traj.samples.reserve(static_cast<std::size_t>(N));
    for (long t = 0; t < N; ++t) traj.samples.push_back(sim.next());
    return traj;
}

struct PeResult {
    double alpha_min = 0.0;
    double beta_max = 0.0;
    bool holds() const { return alpha_min > 0.0 && std::isfinite(beta_max); }
};

// Extremal eigenvalues of the Gram matrices over every window of T+1
// consecutive regressors. Eigenvalues within rounding of zero are reported as 0.
inline PeResult pe_check(const Trajectory& traj, long T) {
    const long n = static_cast<long>(traj.samples.size());
    if (T < 1) throw InvalidInput("pe_check: window must be at least 1");
    if (n <= T) throw InvalidInput("pe_check: window longer than trajectory");
    const Eigen::Index d = traj.samples.front().phi.size();
    PeResult res{std::numeric_limits<double>::infinity(), 0.0};
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver;
    for (long t = 0; t + T < n; ++t) {
        Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(d, d);
        for (long k = t; k <= t + T; ++k) {
            const auto& phi = traj.samples[static_cast<std::size_t>(k)].phi;
            gram.selfadjointView<Eigen::Lower>().rankUpdate(phi);
        }
        solver.compute(gram.selfadjointView<Eigen::Lower>(), Eigen::EigenvaluesOnly);
        const double hi = solver.eigenvalues().maxCoeff();
        double lo = solver.eigenvalues().minCoeff();
        if (lo <= 64.0 * std::numeric_limits<double>::epsilon() * std::max(hi, 1.0) * static_cast<double>(d)) lo = 0.0;
        res.alpha_min = std::min(res.alpha_min, lo);
        res.beta_max = std::max(res.beta_max, hi);
    }
    return res;
}

// --- presets -----------------------------------------------------------------

// Static scalar map y = theta' [r, 1] with r uniform on [-4, 4] and three
// intervals, the outer two sharing the same parameters.
inline SwitchedSystemSpec preset_exp1() {
    SwitchedSystemSpec s;
    s.kind = ModelKind::Pwarx;
    s.m = 1;
    s.d = 2;
    s.n_a = 0;
    s.n_b = 0;
    s.noise_std = 0.2;
    s.dt = 1.0;
    s.input.kind = InputSignal::Kind::UniformRandom;
    s.input.lo = -4.0;
    s.input.hi = 4.0;
    auto hs = [](double a0, double b) { return Halfspace{Eigen::Vector2d(a0, 0.0), b}; };
    Eigen::MatrixXd outer(1, 2), inner(1, 2);
    outer << 1.0, 2.0;
    inner << -1.0, 0.0;
    s.modes.push_back({outer, {hs(1.0, -1.0), hs(-1.0, 4.0)}});  // r in [-4, -1]
    s.modes.push_back({inner, {hs(-1.0, 1.0), hs(1.0, 2.0)}});   // r in (-1, 2)
    s.modes.push_back({outer, {hs(-1.0, -2.0), hs(1.0, 4.0)}});  // r in [2, 4]
    return s;
}

// Forward-Euler double integrator that is actuated only when |u| > 1 and
// otherwise damps its velocity. Boundary points |u| = 1 belong to the
// unactuated mode, so it is listed first.
inline SwitchedSystemSpec preset_exp2() {
    SwitchedSystemSpec s;
    s.kind = ModelKind::StateSpace;
    s.m = 2;
    s.d = 3;
    s.dt = 0.01;
    s.noise_std = std::sqrt(0.1);
    s.input.kind = InputSignal::Kind::Sinusoid;
    s.input.amplitude = 2.0;
    s.input.frequency = 1.0;
    s.x0 = Eigen::VectorXd::Zero(2);
    const double dt = s.dt;
    Eigen::MatrixXd actuated(2, 3), damped(2, 3);
    actuated << 1.0, dt, 0.0, 0.0, 1.0, dt;
    damped << 1.0, dt, 0.0, 0.0, 1.0 - dt, 0.0;
    auto hu = [](double a2, double b) { return Halfspace{Eigen::Vector3d(0.0, 0.0, a2), b}; };
    s.modes.push_back({damped, {hu(1.0, 1.0), hu(-1.0, 1.0)}});  // |u| <= 1
    s.modes.push_back({actuated, {hu(1.0, -1.0)}});               // u <= -1
    s.modes.push_back({actuated, {hu(-1.0, -1.0)}});              // u >= 1
    return s;
}

inline SwitchedSystemSpec preset(const std::string& name) {
    if (name == "exp1") return preset_exp1();
    if (name == "exp2") return preset_exp2();
    throw ConfigError("system", "unknown preset '" + name + "'");
}

// Distinct parameter matrices of a spec and, for each mode, the index of its distinct class.
inline std::pair<std::vector<Eigen::MatrixXd>, std::vector<int>> distinct_thetas(const SwitchedSystemSpec& spec) {
    std::vector<Eigen::MatrixXd> uniq;
    std::vector<int> cls;
    for (const auto& mode : spec.modes) {
        int found = -1;
        for (std::size_t j = 0; j < uniq.size(); ++j)
            if (uniq[j] == mode.theta) found = static_cast<int>(j);
        if (found < 0) {
            uniq.push_back(mode.theta);
            found = static_cast<int>(uniq.size()) - 1;
        }
        cls.push_back(found);
    }
    return {uniq, cls};
}

// --- JSON --------------------------------------------------------------------

namespace detail {

inline nlohmann::json vec_to_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Eigen::VectorXd vec_from_json(const nlohmann::json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// Row-major nested arrays, the serialized layout for every parameter matrix.
inline nlohmann::json mat_to_json(const Eigen::MatrixXd& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(vec_to_json(m.row(r).transpose()));
    return rows;
}

inline Eigen::MatrixXd mat_from_json(const nlohmann::json& j) {
    const auto rows = j.get<std::vector<std::vector<double>>>();
    if (rows.empty()) return {};
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != rows[0].size()) throw InvalidInput("matrix rows have unequal length");
        for (std::size_t c = 0; c < rows[r].size(); ++c)
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
    return m;
}

}  // namespace detail

inline nlohmann::json to_json(const InputSignal& in) {
    switch (in.kind) {
        case InputSignal::Kind::Sinusoid:
            return {{"kind", "sinusoid"}, {"amplitude", in.amplitude}, {"frequency", in.frequency}};
        case InputSignal::Kind::UniformRandom: return {{"kind", "uniform"}, {"lo", in.lo}, {"hi", in.hi}};
        case InputSignal::Kind::Sequence: return {{"kind", "sequence"}, {"values", in.values}};
    }
    return {};
}

inline InputSignal input_from_json(const nlohmann::json& j) {
    InputSignal in;
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "sinusoid") {
        in.kind = InputSignal::Kind::Sinusoid;
        in.amplitude = j.at("amplitude").get<double>();
        in.frequency = j.at("frequency").get<double>();
    } else if (kind == "uniform") {
        in.kind = InputSignal::Kind::UniformRandom;
        in.lo = j.at("lo").get<double>();
        in.hi = j.at("hi").get<double>();
    } else if (kind == "sequence") {
        in.kind = InputSignal::Kind::Sequence;
        in.values = j.at("values").get<std::vector<double>>();
    } else {
        throw ConfigError("input.kind", "unknown input kind '" + kind + "'");
    }
    return in;
}

inline nlohmann::json to_json(const SwitchedSystemSpec& s) {
    nlohmann::json modes = nlohmann::json::array();
    for (const auto& mode : s.modes) {
        nlohmann::json region = nlohmann::json::array();
        for (const auto& h : mode.region) region.push_back({{"a", detail::vec_to_json(h.a)}, {"b", h.b}});
        modes.push_back({{"theta", detail::mat_to_json(mode.theta)}, {"region", region}});
    }
    nlohmann::json j = {{"kind", s.kind == ModelKind::Pwarx ? "pwarx" : "state_space"},
                        {"m", s.m},
                        {"d", s.d},
                        {"modes", modes},
                        {"noise_std", s.noise_std},
                        {"dt", s.dt},
                        {"input", to_json(s.input)},
                        {"n_a", s.n_a},
                        {"n_b", s.n_b}};
    if (s.x0.size()) j["x0"] = detail::vec_to_json(s.x0);
    return j;
}

// Parses and validates a system description. Missing or ill-typed keys
// surface as ConfigError naming the field.
inline SwitchedSystemSpec spec_from_json(const nlohmann::json& j) {
    SwitchedSystemSpec s;
    std::string field;
    try {
        field = "kind";
        const auto kind = j.value("kind", std::string("pwarx"));
        if (kind == "pwarx") s.kind = ModelKind::Pwarx;
        else if (kind == "state_space") s.kind = ModelKind::StateSpace;
        else throw ConfigError("kind", "must be 'pwarx' or 'state_space'");
        field = "m";
        s.m = j.at("m").get<int>();
        field = "d";
        s.d = j.at("d").get<int>();
        field = "noise_std";
        s.noise_std = j.value("noise_std", 0.0);
        field = "dt";
        s.dt = j.value("dt", 1.0);
        field = "n_a";
        s.n_a = j.value("n_a", 0);
        field = "n_b";
        s.n_b = j.value("n_b", 0);
        field = "x0";
        if (j.contains("x0")) s.x0 = detail::vec_from_json(j.at("x0"));
        field = "input";
        if (j.contains("input")) s.input = input_from_json(j.at("input"));
        field = "modes";
        for (const auto& jm : j.at("modes")) {
            AffineMode mode;
            mode.theta = detail::mat_from_json(jm.at("theta"));
            for (const auto& jh : jm.at("region")) mode.region.push_back({detail::vec_from_json(jh.at("a")), jh.at("b").get<double>()});
            s.modes.push_back(std::move(mode));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(field, e.what());
    } catch (const InvalidInput& e) {
        throw ConfigError(field, e.what());
    }
    s.validate();
    return s;
}

}  // namespace pwaid
