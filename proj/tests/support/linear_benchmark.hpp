#pragma once

// Linear-Gaussian test problem shared by unit and acceptance tests.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <numbers>

#include "ekisub/eki_dynamics.hpp"
#include "ekisub/forward_problem.hpp"
#include "ekisub/random.hpp"

namespace ekisub::testing {

struct LinearBenchmark {
    Eigen::MatrixXd a;
    Eigen::VectorXd truth;
    InverseProblem problem;
};

inline Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, Philox& rng) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.normal();
    return m;
}

inline Eigen::VectorXd random_vector(Eigen::Index n, Philox& rng) { return random_matrix(n, 1, rng).col(0); }

/// y = A u_true + 0.1 * noise, Gamma = Id, D0 = Id.
inline LinearBenchmark linear_benchmark(Eigen::Index d = 2, Eigen::Index n_obs = 10, double alpha = 1.0,
                                        std::uint64_t seed = 7) {
    Philox rng(seed, 11);
    Eigen::MatrixXd a = random_matrix(n_obs, d, rng);
    Eigen::VectorXd truth = random_vector(d, rng);
    Eigen::VectorXd y = a * truth + 0.1 * random_vector(n_obs, rng);
    InverseProblem p = InverseProblem::linear(a, y, NoiseModel::identity(n_obs),
                                              PriorModel(Eigen::MatrixXd::Identity(d, d), alpha));
    return {std::move(a), std::move(truth), std::move(p)};
}

/// Three particles on a circle of radius s around `centre` in the plane of
/// the first two coordinates (an equilateral triangle).
inline Ensemble triangle_ensemble(const Eigen::VectorXd& centre, double s) {
    Eigen::MatrixXd u(centre.size(), 3);
    for (int j = 0; j < 3; ++j) {
        const double phi = 2.0 * std::numbers::pi * j / 3.0 + 0.3;
        u.col(j) = centre;
        u(0, j) += s * std::cos(phi);
        u(1, j) += s * std::sin(phi);
    }
    return Ensemble(u);
}

inline FlowConfig tight_flow(double t_end) {
    FlowConfig cfg;
    cfg.variant = FlowVariant::regularised;
    cfg.t_end = t_end;
    cfg.rel_tol = 1e-9;
    cfg.abs_tol = 1e-12;
    cfg.min_step = 1e-14;
    cfg.first_sample = 1e-3;
    cfg.samples_per_decade = 16;
    return cfg;
}

}  // namespace ekisub::testing
