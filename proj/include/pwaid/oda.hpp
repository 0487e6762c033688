#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "pwaid/divergence.hpp"
#include "pwaid/errors.hpp"
#include "pwaid/simulate.hpp"

namespace pwaid {

// Annealing prototype. `sigma` and `rho` are exponentially weighted sums whose
// ratio is the prototype location; `theta_index` points into the parameter list.
struct Codevector {
    Eigen::VectorXd phi_hat;
    double rho = 1.0;
    Eigen::VectorXd sigma;
    int theta_index = 0;
    bool candidate = false;  // carries a freshly cloned parameter vector awaiting confirmation

    static Codevector at(const Eigen::VectorXd& phi, double rho, int theta_index) {
        return {phi, rho, phi * rho, theta_index, false};
    }
};

enum class UpdateOrder { Synchronous, Sequential };

// Association weights are floored here so a codevector's mass never
// underflows to exactly zero when it is far from every sample.
inline constexpr double kMinAssociation = 1e-280;

// mu = [Theta*phi; phi_hat], the codevector lifted into the joint output-input space.
inline Eigen::VectorXd augmented_codevector(const Codevector& cv, const Eigen::VectorXd& phi,
                                            const Eigen::MatrixXd& theta) {
    if (phi.size() != theta.cols() || cv.phi_hat.size() != phi.size())
        throw ContractViolation("augmented_codevector: dimension mismatch");
    Eigen::VectorXd mu(theta.rows() + phi.size());
    mu << theta * phi, cv.phi_hat;
    return mu;
}

inline Eigen::VectorXd augmented_point(const Eigen::VectorXd& psi, const Eigen::VectorXd& phi) {
    Eigen::VectorXd x(psi.size() + phi.size());
    x << psi, phi;
    return x;
}

inline double temperature_factor(double lambda) {
    if (!(lambda > 0.0 && lambda < 1.0)) throw ContractViolation("temperature must lie in (0, 1)");
    return (1.0 - lambda) / lambda;
}

// Divergence from the augmented point to every augmented codevector.
inline Eigen::VectorXd augmented_divergences(const std::vector<Codevector>& cvs, const Eigen::VectorXd& x,
                                             const Eigen::VectorXd& phi, const std::vector<Eigen::MatrixXd>& thetas,
                                             Divergence div) {
    Eigen::VectorXd d(static_cast<Eigen::Index>(cvs.size()));
    for (std::size_t i = 0; i < cvs.size(); ++i) {
        const auto ti = static_cast<std::size_t>(cvs[i].theta_index);
        if (ti >= thetas.size()) throw ContractViolation("codevector references a missing parameter vector");
        d(static_cast<Eigen::Index>(i)) = eval(div, x, augmented_codevector(cvs[i], phi, thetas[ti]));
    }
    return d;
}

// Gibbs weights from precomputed divergences, shifted by the minimum before exponentiating.
inline Eigen::VectorXd gibbs_from_divergences(const Eigen::VectorXd& d, const Eigen::VectorXd& rho, double lambda) {
    if (d.size() == 0) throw InvalidInput("gibbs_probs: no codevectors");
    if (d.hasNaN()) throw InvalidInput("gibbs_probs: NaN divergence");
    if ((rho.array() <= 0.0).any()) throw ContractViolation("gibbs_probs: codevector mass must be positive");
    const double f = temperature_factor(lambda);
    const double dmin = d.minCoeff();
    Eigen::VectorXd w = rho.array() * (-f * (d.array() - dmin)).exp();
    w /= w.sum();
    return w.cwiseMax(kMinAssociation);
}

inline Eigen::VectorXd masses(const std::vector<Codevector>& cvs) {
    Eigen::VectorXd rho(static_cast<Eigen::Index>(cvs.size()));
    for (std::size_t i = 0; i < cvs.size(); ++i) rho(static_cast<Eigen::Index>(i)) = cvs[i].rho;
    return rho;
}

inline Eigen::VectorXd gibbs_probs(const std::vector<Codevector>& cvs, const Eigen::VectorXd& x,
                                   const Eigen::VectorXd& phi, const std::vector<Eigen::MatrixXd>& thetas,
                                   double lambda, Divergence div = Divergence::SquaredEuclidean) {
    if (cvs.empty()) throw InvalidInput("gibbs_probs: no codevectors");
    return gibbs_from_divergences(augmented_divergences(cvs, x, phi, thetas, div), masses(cvs), lambda);
}

namespace detail {

inline void accumulate(Codevector& cv, const Eigen::VectorXd& phi, double p, double beta) {
    cv.rho += beta * (p - cv.rho);
    cv.sigma += beta * (phi * p - cv.sigma);
    if (!(cv.rho > 0.0)) throw NumericalDivergence("oda_update: codevector mass vanished");
    cv.phi_hat = cv.sigma / cv.rho;
}

}  // namespace detail

// One stochastic-approximation step of the mass and location accumulators.
// Returns the association probabilities used for the update.
inline Eigen::VectorXd oda_update(std::vector<Codevector>& cvs, const Eigen::VectorXd& x, const Eigen::VectorXd& phi,
                                  const std::vector<Eigen::MatrixXd>& thetas, double lambda, double beta,
                                  Divergence div = Divergence::SquaredEuclidean,
                                  UpdateOrder order = UpdateOrder::Synchronous) {
    if (!(beta > 0.0 && beta <= 1.0)) throw ContractViolation("oda_update: stepsize must lie in (0, 1]");
    Eigen::VectorXd p = gibbs_probs(cvs, x, phi, thetas, lambda, div);
    if (order == UpdateOrder::Synchronous) {
        for (std::size_t i = 0; i < cvs.size(); ++i) detail::accumulate(cvs[i], phi, p(static_cast<Eigen::Index>(i)), beta);
        return p;
    }
    for (std::size_t i = 0; i < cvs.size(); ++i) {
        const Eigen::VectorXd pi = gibbs_probs(cvs, x, phi, thetas, lambda, div);
        detail::accumulate(cvs[i], phi, pi(static_cast<Eigen::Index>(i)), beta);
        p(static_cast<Eigen::Index>(i)) = pi(static_cast<Eigen::Index>(i));
    }
    return p;
}

inline Eigen::VectorXd random_unit_vector(Eigen::Index d, Rng& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::VectorXd v(d);
    do {
        for (Eigen::Index k = 0; k < d; ++k) v(k) = n(rng);
    } while (v.norm() == 0.0);
    return v / v.norm();
}

// Replaces codevectors by perturbed pairs phi_hat +/- delta*v, halving their
// mass. When doubling would exceed k_max only the heaviest k_max - K are split.
// The second child of each pair is tagged as a candidate; `clone` may give it
// a new parameter index, otherwise it keeps the parent's.
inline std::vector<Codevector> perturb_split(const std::vector<Codevector>& cvs, double delta, std::size_t k_max,
                                             Rng& rng, const std::function<int(int)>& clone = {}) {
    if (delta < 0.0) throw ContractViolation("perturb_split: delta must be nonnegative");
    const std::size_t budget = k_max > cvs.size() ? k_max - cvs.size() : 0;
    std::vector<bool> split(cvs.size(), false);
    std::vector<std::size_t> order(cvs.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return cvs[a].rho > cvs[b].rho; });
    for (std::size_t k = 0; k < std::min(budget, order.size()); ++k) split[order[k]] = true;

    std::vector<Codevector> out;
    out.reserve(cvs.size() * 2);
    for (std::size_t i = 0; i < cvs.size(); ++i) {
        if (!split[i]) {
            out.push_back(cvs[i]);
            continue;
        }
        const Eigen::VectorXd v = random_unit_vector(cvs[i].phi_hat.size(), rng);
        Codevector a = Codevector::at(cvs[i].phi_hat + delta * v, cvs[i].rho / 2.0, cvs[i].theta_index);
        Codevector b = Codevector::at(cvs[i].phi_hat - delta * v, cvs[i].rho / 2.0, cvs[i].theta_index);
        a.candidate = cvs[i].candidate;
        b.candidate = true;
        if (clone) b.theta_index = clone(cvs[i].theta_index);
        out.push_back(std::move(a));
        out.push_back(std::move(b));
    }
    return out;
}

// Greedily coalesces pairs with ((1-lambda)/lambda) d(phi_i, phi_j) <= eps_n,
// the lower index absorbing the other's accumulators, until no pair qualifies.
// `allowed(i, j)` can veto individual pairs.
inline std::vector<Codevector> merge(std::vector<Codevector> cvs, double lambda, double eps_n,
                                     Divergence div = Divergence::SquaredEuclidean,
                                     const std::function<bool(const Codevector&, const Codevector&)>& allowed = {}) {
    const double f = temperature_factor(lambda);
    bool changed = true;
    while (changed) {
        changed = false;
        for (std::size_t i = 0; i < cvs.size() && !changed; ++i) {
            for (std::size_t j = i + 1; j < cvs.size(); ++j) {
                if (f * eval(div, cvs[i].phi_hat, cvs[j].phi_hat) > eps_n) continue;
                if (allowed && !allowed(cvs[i], cvs[j])) continue;
                cvs[i].rho += cvs[j].rho;
                cvs[i].sigma += cvs[j].sigma;
                cvs[i].phi_hat = cvs[i].sigma / cvs[i].rho;
                cvs.erase(cvs.begin() + static_cast<std::ptrdiff_t>(j));
                changed = true;
                break;
            }
        }
    }
    return cvs;
}

struct FreeEnergy {
    double F = 0.0;
    double D = 0.0;
    double H = 0.0;
};

// Empirical distortion, association entropy and F = (1-lambda) D - lambda H.
inline FreeEnergy free_energy(const std::vector<Sample>& data, const std::vector<Codevector>& cvs,
                              const std::vector<Eigen::MatrixXd>& thetas, double lambda,
                              Divergence div = Divergence::SquaredEuclidean) {
    if (data.empty()) throw InvalidInput("free_energy: empty dataset");
    FreeEnergy fe;
    for (const auto& s : data) {
        const Eigen::VectorXd x = augmented_point(s.psi, s.phi);
        const Eigen::VectorXd d = augmented_divergences(cvs, x, s.phi, thetas, div);
        const Eigen::VectorXd p = gibbs_from_divergences(d, masses(cvs), lambda);
        fe.D += p.dot(d);
        for (Eigen::Index i = 0; i < p.size(); ++i)
            if (p(i) > kMinAssociation) fe.H -= p(i) * std::log(p(i));
    }
    const double n = static_cast<double>(data.size());
    fe.D /= n;
    fe.H /= n;
    fe.F = (1.0 - lambda) * fe.D - lambda * fe.H;
    return fe;
}

// Association-weighted mean of the regressors for each codevector over a batch.
inline std::vector<Eigen::VectorXd> batch_centroids(const std::vector<Sample>& data, const std::vector<Codevector>& cvs,
                                                    const std::vector<Eigen::MatrixXd>& thetas, double lambda,
                                                    Divergence div = Divergence::SquaredEuclidean) {
    if (data.empty()) throw InvalidInput("batch_centroids: empty dataset");
    std::vector<Eigen::VectorXd> num(cvs.size(), Eigen::VectorXd::Zero(data.front().phi.size()));
    std::vector<double> den(cvs.size(), 0.0);
    for (const auto& s : data) {
        const Eigen::VectorXd p = gibbs_probs(cvs, augmented_point(s.psi, s.phi), s.phi, thetas, lambda, div);
        for (std::size_t i = 0; i < cvs.size(); ++i) {
            num[i] += p(static_cast<Eigen::Index>(i)) * s.phi;
            den[i] += p(static_cast<Eigen::Index>(i));
        }
    }
    for (std::size_t i = 0; i < cvs.size(); ++i) num[i] /= den[i];
    return num;
}

inline nlohmann::json to_json(const Codevector& cv) {
    return {{"phi_hat", detail::vec_to_json(cv.phi_hat)},
            {"rho", cv.rho},
            {"sigma", detail::vec_to_json(cv.sigma)},
            {"theta_index", cv.theta_index},
            {"candidate", cv.candidate}};
}

inline Codevector codevector_from_json(const nlohmann::json& j) {
    Codevector cv;
    cv.phi_hat = detail::vec_from_json(j.at("phi_hat"));
    cv.rho = j.at("rho").get<double>();
    cv.sigma = detail::vec_from_json(j.at("sigma"));
    cv.theta_index = j.at("theta_index").get<int>();
    cv.candidate = j.value("candidate", false);
    return cv;
}

}  // namespace pwaid
