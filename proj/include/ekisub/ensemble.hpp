#pragma once

#include <Eigen/Dense>
#include <span>
#include <vector>

namespace ekisub {

/// Unknown parameters in rescaled (nondimensional) coordinates.
using ParameterVector = Eigen::VectorXd;
/// Flattened observation (distance map, possibly augmented).
using ObservationVector = Eigen::VectorXd;

/// A set of particles in R^d stored column-wise, plus the flow time they
/// belong to. Particles must be finite and the ensemble nonempty; flows that
/// need covariances additionally require at least two particles.
class Ensemble {
public:
    explicit Ensemble(Eigen::MatrixXd particles, double time = 0.0);

    static Ensemble from_particles(std::span<const ParameterVector> particles, double time = 0.0);

    Eigen::Index size() const noexcept { return particles_.cols(); }
    Eigen::Index dim() const noexcept { return particles_.rows(); }
    double time() const noexcept { return time_; }

    const Eigen::MatrixXd& particles() const noexcept { return particles_; }
    ParameterVector particle(Eigen::Index j) const { return particles_.col(j); }

private:
    Eigen::MatrixXd particles_;
    double time_;
};

ParameterVector ensemble_mean(const Ensemble& e);

/// Componentwise mean of forward outputs.
ObservationVector observation_mean(std::span<const ObservationVector> g_values);
/// Same, for outputs stored as the columns of a matrix.
ObservationVector observation_mean(const Eigen::MatrixXd& g_values);

/// Columns minus their mean. Shifted by the first column first, so identical
/// columns give exact zeros.
Eigen::MatrixXd deviations(const Eigen::MatrixXd& columns);

/// d x N_obs matrix (1/(J-1)) sum_j (u_j - u_mean)(g_j - g_mean)^T.
/// `g_values` holds one column per particle.
Eigen::MatrixXd cross_covariance(const Ensemble& e, const Eigen::MatrixXd& g_values);
Eigen::MatrixXd cross_covariance(const Ensemble& e, std::span<const ObservationVector> g_values);

/// d x d empirical covariance with divisor J-1.
Eigen::MatrixXd parameter_covariance(const Ensemble& e);

/// V_e = (1/J) sum_j 0.5 |u_j - u_mean|^2.
double ensemble_spread(const Ensemble& e);

/// Column-stacks observation vectors; all must share one length.
Eigen::MatrixXd stack_columns(std::span<const ObservationVector> values);

}  // namespace ekisub
