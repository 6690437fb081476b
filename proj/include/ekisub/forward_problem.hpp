#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <vector>

#include "ekisub/ensemble.hpp"

namespace ekisub {

/// Black-box forward operator u -> G(u). Must be safe to call concurrently.
using ForwardMap = std::function<ObservationVector(const ParameterVector&)>;

/// Symmetric inverse square root of an SPD matrix via eigendecomposition.
/// Throws ConfigError if `m` is not symmetric positive definite.
Eigen::MatrixXd inverse_sqrt_spd(const Eigen::MatrixXd& m, const char* what = "matrix");

/// Observational noise covariance, block-diagonal with identity, diagonal or
/// dense blocks. Weighted norms use |r|_Gamma^2 = r^T Gamma^{-1} r.
class NoiseModel {
public:
    static NoiseModel identity(Eigen::Index n);
    static NoiseModel diagonal(const Eigen::VectorXd& variances);
    static NoiseModel block_diagonal(const std::vector<Eigen::MatrixXd>& blocks);
    static NoiseModel dense(const Eigen::MatrixXd& covariance);
    /// blockdiag(a, b)
    static NoiseModel stacked(const NoiseModel& a, const NoiseModel& b);

    Eigen::Index dim() const noexcept { return dim_; }
    bool is_identity() const noexcept;

    Eigen::VectorXd whiten(const Eigen::VectorXd& r) const;          // Gamma^{-1/2} r
    Eigen::VectorXd apply_inverse(const Eigen::VectorXd& r) const;   // Gamma^{-1} r
    Eigen::MatrixXd apply_inverse(const Eigen::MatrixXd& r) const;   // column-wise
    double weighted_norm_sq(const Eigen::VectorXd& r) const;

    /// Noise of the entries [offset, offset + length). Dense blocks must lie
    /// entirely inside or outside the range.
    NoiseModel restrict(Eigen::Index offset, Eigen::Index length) const;

    /// Dense covariance; intended for small problems and tests.
    Eigen::MatrixXd covariance() const;

private:
    enum class Kind { identity, diagonal, dense };
    struct Segment {
        Kind kind = Kind::identity;
        Eigen::Index size = 0;
        Eigen::VectorXd variances;    // diagonal
        Eigen::MatrixXd cov;          // dense
        Eigen::MatrixXd inv_sqrt;     // dense
        Eigen::MatrixXd inv;          // dense
    };
    template <typename Fn>
    void for_each_segment(Fn&& fn) const;

    std::vector<Segment> segments_;
    Eigen::Index dim_ = 0;
};

/// Gaussian prior N(0, D0) with Tikhonov weight alpha; C0 = (scale/alpha) D0,
/// scale = 1 for the full data and N_sub for each subset problem.
class PriorModel {
public:
    PriorModel(Eigen::MatrixXd d0, double alpha, double scale = 1.0);

    const Eigen::MatrixXd& d0() const noexcept { return d0_; }
    double alpha() const noexcept { return alpha_; }
    double scale() const noexcept { return scale_; }
    Eigen::Index dim() const noexcept { return d0_.rows(); }

    /// C0 is only defined for alpha > 0.
    bool has_covariance() const noexcept { return alpha_ > 0.0; }
    Eigen::MatrixXd c0() const;
    const Eigen::MatrixXd& c0_inverse() const noexcept { return c0_inv_; }
    const Eigen::MatrixXd& c0_inverse_sqrt() const noexcept { return c0_inv_sqrt_; }

    PriorModel rescaled(double scale) const { return PriorModel(d0_, alpha_, scale); }

private:
    Eigen::MatrixXd d0_;
    double alpha_;
    double scale_;
    Eigen::MatrixXd c0_inv_;
    Eigen::MatrixXd c0_inv_sqrt_;
};

/// y = G(u) + eta with eta ~ N(0, Gamma), prior N(0, D0) weighted by alpha.
class InverseProblem {
public:
    InverseProblem(ForwardMap forward, ObservationVector data, NoiseModel noise, PriorModel prior, Eigen::Index dim_u);

    /// G(u) = A u; keeps A for closed-form oracles.
    static InverseProblem linear(Eigen::MatrixXd a, ObservationVector data, NoiseModel noise, PriorModel prior);

    /// Evaluates G(u); throws EvaluationError if the output length is wrong or
    /// contains non-finite entries.
    ObservationVector evaluate(const ParameterVector& u) const;

    const ForwardMap& forward() const noexcept { return forward_; }
    const ObservationVector& data() const noexcept { return data_; }
    const NoiseModel& noise() const noexcept { return noise_; }
    const PriorModel& prior() const noexcept { return prior_; }
    Eigen::Index dim_u() const noexcept { return dim_u_; }
    Eigen::Index dim_y() const noexcept { return data_.size(); }
    const std::optional<Eigen::MatrixXd>& linear_matrix() const noexcept { return linear_matrix_; }

    InverseProblem with_prior(PriorModel prior) const;

private:
    ForwardMap forward_;
    ObservationVector data_;
    NoiseModel noise_;
    PriorModel prior_;
    Eigen::Index dim_u_;
    std::optional<Eigen::MatrixXd> linear_matrix_;
};

/// Phi^reg(u) = 0.5 |y - G(u)|_Gamma^2 + 0.5 u^T C0^{-1} u.
double potential(const InverseProblem& p, const ParameterVector& u);
/// Same, reusing an already computed forward value g = G(u).
double potential_from_output(const InverseProblem& p, const ParameterVector& u, const ObservationVector& g);

/// Tikhonov-regularised problem rewritten as an unregularised one:
/// G~(u) = (G(u), C0^{-1/2} u), y~ = (y, 0), noise blockdiag(Gamma, Id).
struct AugmentedProblem {
    InverseProblem base;
    InverseProblem augmented;
};

AugmentedProblem augment(const InverseProblem& p);

/// Equivalent problem with Gamma = Id: y' = Gamma^{-1/2} y, G' = Gamma^{-1/2} G.
InverseProblem whiten(const InverseProblem& p);

/// argmin Phi^reg for linear G = A via the normal equations.
ParameterVector tikhonov_solution(const InverseProblem& p);

}  // namespace ekisub
