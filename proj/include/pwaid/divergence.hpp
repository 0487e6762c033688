#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <string>
#include <vector>

#include "pwaid/errors.hpp"

namespace pwaid {

// Bregman divergence family. Only the squared Euclidean member is provided;
// thresholds elsewhere assume its quadratic scaling.
enum class Divergence { SquaredEuclidean };

inline std::string to_string(Divergence div) {
    switch (div) {
        case Divergence::SquaredEuclidean: return "squared_euclidean";
    }
    return "unknown";
}

inline Divergence divergence_from_string(const std::string& name) {
    if (name == "squared_euclidean") return Divergence::SquaredEuclidean;
    throw InvalidInput("unknown divergence '" + name + "'");
}

namespace detail {

// Shared kernel without validation, for inner loops whose inputs are already checked.
template <typename A, typename B>
double eval_unchecked(Divergence, const Eigen::MatrixBase<A>& x, const Eigen::MatrixBase<B>& mu) {
    return (x - mu).squaredNorm();
}

}  // namespace detail

template <typename A, typename B>
double eval(Divergence div, const Eigen::MatrixBase<A>& x, const Eigen::MatrixBase<B>& mu) {
    if (x.size() != mu.size() || x.size() == 0)
        throw ContractViolation("divergence: dimension mismatch (" + std::to_string(x.size()) + " vs " +
                                std::to_string(mu.size()) + ")");
    if (!x.allFinite() || !mu.allFinite()) throw InvalidInput("divergence: non-finite input");
    return detail::eval_unchecked(div, x, mu);
}

// Index of the closest prototype; ties resolve to the lowest index.
inline std::size_t nearest(Divergence div, const Eigen::VectorXd& x,
                           const std::vector<Eigen::VectorXd>& prototypes) {
    if (prototypes.empty()) throw InvalidInput("nearest: empty prototype list");
    std::size_t best = 0;
    double best_d = eval(div, x, prototypes[0]);
    for (std::size_t j = 1; j < prototypes.size(); ++j) {
        const double d = eval(div, x, prototypes[j]);
        if (d < best_d) {
            best_d = d;
            best = j;
        }
    }
    return best;
}

// Affine form a'x - b whose sign matches d(x, p_i) - d(x, p_j) under squared Euclidean geometry.
struct Hyperplane {
    Eigen::VectorXd a;
    double b = 0.0;
};

inline Hyperplane bisector(const Eigen::VectorXd& p_i, const Eigen::VectorXd& p_j) {
    return {2.0 * (p_j - p_i), p_j.squaredNorm() - p_i.squaredNorm()};
}

}  // namespace pwaid
