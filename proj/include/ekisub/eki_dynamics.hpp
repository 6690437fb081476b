#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "ekisub/ensemble.hpp"
#include "ekisub/forward_problem.hpp"
#include "ekisub/ode.hpp"

namespace ekisub {

enum class FlowVariant { plain, regularised, variance_inflated };

/// What to do when a particle's forward evaluation fails inside a flow.
enum class FailurePolicy {
    /// Drop the particle's data-misfit term for that evaluation, keep the
    /// regulariser pull, log the event.
    regulariser_only,
    fail,
};

struct FlowConfig {
    FlowVariant variant = FlowVariant::regularised;
    double rho_vi = 0.0;  ///< variance-inflation weight in [0, 1)
    double t_end = 1.0;
    double rel_tol = 1e-6;
    double abs_tol = 1e-9;
    double min_step = 1e-12;
    double max_step = std::numeric_limits<double>::infinity();
    double initial_step = 0.0;
    /// Diagnostics are sampled at t0, on a log grid starting at first_sample,
    /// and at t_end.
    double first_sample = 1e-3;
    int samples_per_decade = 64;
    /// Evaluate the full potential at every sample (costs N_ens forward runs).
    bool record_residual = true;
    FailurePolicy failure_policy = FailurePolicy::regulariser_only;
    unsigned workers = 1;

    void validate() const;
};

struct TrajectorySample {
    double time = 0.0;
    Eigen::MatrixXd particles;  ///< d x N_ens
    double mean_residual = std::numeric_limits<double>::quiet_NaN();
    double spread = 0.0;      ///< V_e
    double lambda_min = 0.0;  ///< smallest covariance eigenvalue on the initial span
};

struct SwitchEvent {
    double time = 0.0;
    int index = 0;  ///< zero-based subset index active from `time` on
};

struct FailureEvent {
    double time = 0.0;
    Eigen::Index particle = 0;
    std::string message;
};

struct Trajectory {
    std::vector<TrajectorySample> samples;
    /// Forward runs made by right-hand-side evaluations.
    std::size_t forward_evaluations = 0;
    /// Forward runs made only to record residual diagnostics.
    std::size_t diagnostic_evaluations = 0;
    OdeStats ode;
    Eigen::Index span_rank = 0;
    std::vector<SwitchEvent> switches;
    std::vector<FailureEvent> failures;

    std::vector<double> times() const;
    std::vector<double> series(double TrajectorySample::*field) const;
    Ensemble final_ensemble() const;
};

/// Forward outputs of every particle; failed particles have ok[j] == false.
struct EnsembleEvaluation {
    Eigen::MatrixXd outputs;  ///< N_obs x N_ens
    std::vector<bool> ok;
    std::vector<std::string> messages;

    Eigen::Index failures() const;
};

/// Evaluates G on every particle, concurrently on `workers` threads. With
/// `tolerate_failures` EvaluationError is recorded instead of propagated.
EnsembleEvaluation evaluate_ensemble(const Eigen::MatrixXd& particles, const InverseProblem& p, unsigned workers = 1,
                                     bool tolerate_failures = false);

/// Core drift, shared by every flow:
///   D_j = -C^{uG} Gamma^{-1}(g_j - y) - C^u C0^{-1} u_j
///   drift_j = (1 - rho) D_j + rho * mean_k D_k
/// `c0_inverse` == nullptr drops the regulariser (plain flow). `ok` masks
/// failed particles: they are left out of C^{uG} and receive only the
/// regulariser term.
Eigen::MatrixXd eki_drift(const Eigen::MatrixXd& particles, const Eigen::MatrixXd& outputs,
                          const ObservationVector& data, const NoiseModel& noise, const Eigen::MatrixXd* c0_inverse,
                          double rho, const std::vector<bool>* ok = nullptr);

Eigen::MatrixXd rhs_plain(const Ensemble& e, const InverseProblem& p);
Eigen::MatrixXd rhs_regularised(const Ensemble& e, const InverseProblem& p);
Eigen::MatrixXd rhs_variance_inflated(const Ensemble& e, const InverseProblem& p, double rho_vi);
/// The variance-inflated drift written as the regularised drift plus the two
/// rho-weighted correction terms; algebraically equal to rhs_variance_inflated.
Eigen::MatrixXd rhs_variance_inflated_expanded(const Ensemble& e, const InverseProblem& p, double rho_vi);

/// Sample times: t0, first_sample * 10^(k / per_decade) inside (t0, t_end), t_end.
std::vector<double> diagnostic_times(double t0, double t_end, double first_sample, int per_decade);

/// Dimension of the affine span of the ensemble (rank of the deviations).
Eigen::Index deviation_rank(const Eigen::MatrixXd& particles);

/// Records per-sample diagnostics against the full (whitened) problem.
class TrajectoryRecorder {
public:
    TrajectoryRecorder(const InverseProblem& full, const Ensemble& e0, const FlowConfig& cfg);

    void record(double t, const Eigen::MatrixXd& particles);
    Trajectory& trajectory() noexcept { return traj_; }

private:
    const InverseProblem& full_;
    FlowConfig cfg_;
    Trajectory traj_;
};

/// Integrates the coupled particle system of the configured variant from
/// e0.time() to cfg.t_end with adaptive RK45. The problem is whitened first.
Trajectory integrate(const Ensemble& e0, const InverseProblem& p, const FlowConfig& cfg);

}  // namespace ekisub
