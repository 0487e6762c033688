#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "pwaid/errors.hpp"

namespace pwaid {

// One local affine model: psi = Theta * phi. The vectorized form is the
// column-major vec(Theta), so kron(phi', I_m) * vec(Theta) == Theta * phi.
struct LocalModel {
    Eigen::MatrixXd theta;

    Eigen::Index m() const { return theta.rows(); }
    Eigen::Index d() const { return theta.cols(); }
};

inline Eigen::VectorXd vec(const Eigen::MatrixXd& theta) {
    return Eigen::Map<const Eigen::VectorXd>(theta.data(), theta.size());
}

inline Eigen::MatrixXd unvec(const Eigen::VectorXd& v, Eigen::Index m, Eigen::Index d) {
    if (v.size() != m * d) throw ContractViolation("unvec: length does not equal m*d");
    return Eigen::Map<const Eigen::MatrixXd>(v.data(), m, d);
}

// kron(phi', I_m), the m x (m*d) regression matrix acting on vec(Theta).
inline Eigen::MatrixXd regression_matrix(const Eigen::VectorXd& phi, Eigen::Index m) {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(m, m * phi.size());
    for (Eigen::Index k = 0; k < phi.size(); ++k)
        out.block(0, k * m, m, m) = phi(k) * Eigen::MatrixXd::Identity(m, m);
    return out;
}

// Stepsize sequence indexed by an integer counter starting at zero.
struct StepSchedule {
    enum class Kind { Harmonic, HarmonicLog, Power, Constant };
    Kind kind = Kind::Harmonic;
    double c = 0.01;  // rate for Harmonic and HarmonicLog, exponent for Power, value for Constant

    static StepSchedule harmonic(double c) { return {Kind::Harmonic, c}; }
    static StepSchedule harmonic_log(double c) { return {Kind::HarmonicLog, c}; }
    static StepSchedule power(double p) { return {Kind::Power, p}; }
    static StepSchedule constant(double g) { return {Kind::Constant, g}; }

    double operator()(double t) const {
        switch (kind) {
            case Kind::Harmonic: return 1.0 / (1.0 + c * t);
            // ln(t+1) keeps t = 0 well defined with value 1.
            case Kind::HarmonicLog: return 1.0 / (1.0 + c * t * std::log(t + 1.0));
            case Kind::Power: return 1.0 / std::pow(1.0 + t, c);
            case Kind::Constant: return c;
        }
        return c;
    }

    void validate(const std::string& field) const {
        if (!std::isfinite(c)) throw ConfigError(field, "schedule parameter must be finite");
        if (kind == Kind::Constant && !(c > 0.0 && c <= 1.0))
            throw ConfigError(field, "constant stepsize must lie in (0, 1]");
        if (kind != Kind::Constant && c < 0.0) throw ConfigError(field, "schedule rate must be nonnegative");
    }
};

inline std::string to_string(StepSchedule::Kind k) {
    switch (k) {
        case StepSchedule::Kind::Harmonic: return "harmonic";
        case StepSchedule::Kind::HarmonicLog: return "harmonic_log";
        case StepSchedule::Kind::Power: return "power";
        case StepSchedule::Kind::Constant: return "constant";
    }
    return "unknown";
}

inline StepSchedule::Kind schedule_kind_from_string(const std::string& s) {
    if (s == "harmonic") return StepSchedule::Kind::Harmonic;
    if (s == "harmonic_log") return StepSchedule::Kind::HarmonicLog;
    if (s == "power") return StepSchedule::Kind::Power;
    if (s == "constant") return StepSchedule::Kind::Constant;
    throw InvalidInput("unknown schedule kind '" + s + "'");
}

inline Eigen::VectorXd predict(const LocalModel& model, const Eigen::VectorXd& phi) {
    if (phi.size() != model.d()) throw ContractViolation("predict: regressor dimension mismatch");
    return model.theta * phi;
}

// Prediction error eps = Theta*phi - psi, the gradient factor of 0.5*|eps|^2.
inline Eigen::VectorXd prediction_error(const LocalModel& model, const Eigen::VectorXd& phi,
                                        const Eigen::VectorXd& psi) {
    if (phi.size() != model.d() || psi.size() != model.m())
        throw ContractViolation("prediction_error: dimension mismatch");
    return model.theta * phi - psi;
}

// Theta <- Theta - alpha * eps * phi'. Returns the pre-update error.
inline Eigen::VectorXd sgd_update(LocalModel& model, const Eigen::VectorXd& phi, const Eigen::VectorXd& psi,
                                  double alpha) {
    if (!(alpha > 0.0)) throw ContractViolation("sgd_update: stepsize must be positive");
    if (!phi.allFinite() || !psi.allFinite()) throw InvalidInput("sgd_update: non-finite sample");
    Eigen::VectorXd eps = prediction_error(model, phi, psi);
    model.theta.noalias() -= alpha * eps * phi.transpose();
    if (!model.theta.allFinite()) throw NumericalDivergence("sgd_update: parameters became non-finite");
    return eps;
}

struct ConvergenceTrace {
    LocalModel model;
    std::vector<double> error_history;  // Frobenius error to the reference after each step
};

// Runs the recursion over a single-mode stream. Pass `gain` for a constant
// stepsize or leave it empty to use `schedule` indexed by step count.
inline ConvergenceTrace converge_single(LocalModel model, const std::vector<Eigen::VectorXd>& phis,
                                        const std::vector<Eigen::VectorXd>& psis, const StepSchedule& schedule,
                                        const std::optional<Eigen::MatrixXd>& reference = std::nullopt) {
    if (phis.size() != psis.size()) throw ContractViolation("converge_single: stream length mismatch");
    ConvergenceTrace out{std::move(model), {}};
    if (reference) out.error_history.reserve(phis.size());
    for (std::size_t t = 0; t < phis.size(); ++t) {
        sgd_update(out.model, phis[t], psis[t], schedule(static_cast<double>(t)));
        if (reference) out.error_history.push_back((out.model.theta - *reference).norm());
    }
    return out;
}

}  // namespace pwaid
