#pragma once

// Internals shared by the full-data and subsampled flow drivers.

#include <Eigen/Dense>
#include <cstddef>

#include "ekisub/eki_dynamics.hpp"

namespace ekisub::detail {

/// Remembers the last ensemble evaluation so a right-hand side queried again
/// at the same state (first stage after a step or after a data switch) does
/// not rerun the forward model.
class CachedEvaluator {
public:
    CachedEvaluator(const InverseProblem& p, const FlowConfig& cfg) : p_(p), cfg_(cfg) {}

    const EnsembleEvaluation& operator()(double t, const Eigen::MatrixXd& particles, Trajectory& traj) {
        if (valid_ && key_.size() == particles.size() && key_ == particles) return value_;
        const bool tolerate = cfg_.failure_policy == FailurePolicy::regulariser_only;
        value_ = evaluate_ensemble(particles, p_, cfg_.workers, tolerate);
        traj.forward_evaluations += static_cast<std::size_t>(particles.cols());
        for (Eigen::Index j = 0; j < particles.cols(); ++j)
            if (!value_.ok[static_cast<std::size_t>(j)])
                traj.failures.push_back({t, j, value_.messages[static_cast<std::size_t>(j)]});
        key_ = particles;
        valid_ = true;
        return value_;
    }

private:
    const InverseProblem& p_;
    const FlowConfig& cfg_;
    Eigen::MatrixXd key_;
    EnsembleEvaluation value_;
    bool valid_ = false;
};

inline Eigen::Map<const Eigen::MatrixXd> as_particles(const Eigen::VectorXd& y, Eigen::Index d) {
    return {y.data(), d, y.size() / d};
}

inline Eigen::VectorXd flatten(const Eigen::MatrixXd& particles) {
    return Eigen::Map<const Eigen::VectorXd>(particles.data(), particles.size());
}

}  // namespace ekisub::detail
