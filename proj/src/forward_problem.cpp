#include "ekisub/forward_problem.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "ekisub/errors.hpp"

namespace ekisub {

Eigen::MatrixXd inverse_sqrt_spd(const Eigen::MatrixXd& m, const char* what) {
    if (m.rows() != m.cols() || m.rows() == 0) throw ConfigError(std::string(what) + " must be square and nonempty");
    if (!m.allFinite()) throw ConfigError(std::string(what) + " has non-finite entries");
    const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-12 * std::max(1.0, m.cwiseAbs().maxCoeff()))
        throw ConfigError(std::string(what) + " is not symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
    const Eigen::VectorXd& lambda = eig.eigenvalues();
    if (!(lambda.minCoeff() > 0.0))
        throw ConfigError(std::string(what) + " is not positive definite (min eigenvalue " +
                          std::to_string(lambda.minCoeff()) + ")");
    return eig.eigenvectors() * lambda.cwiseSqrt().cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
}

// ---------------------------------------------------------------- NoiseModel

NoiseModel NoiseModel::identity(Eigen::Index n) {
    if (n <= 0) throw ConfigError("noise dimension must be positive");
    NoiseModel m;
    Segment s;
    s.kind = Kind::identity;
    s.size = n;
    m.segments_.push_back(std::move(s));
    m.dim_ = n;
    return m;
}

NoiseModel NoiseModel::diagonal(const Eigen::VectorXd& variances) {
    if (variances.size() == 0) throw ConfigError("noise dimension must be positive");
    if (!(variances.array() > 0.0).all() || !variances.allFinite())
        throw ConfigError("diagonal noise variances must be positive and finite");
    NoiseModel m;
    Segment s;
    s.kind = Kind::diagonal;
    s.size = variances.size();
    s.variances = variances;
    m.segments_.push_back(std::move(s));
    m.dim_ = variances.size();
    return m;
}

NoiseModel NoiseModel::block_diagonal(const std::vector<Eigen::MatrixXd>& blocks) {
    if (blocks.empty()) throw ConfigError("block-diagonal noise needs at least one block");
    NoiseModel m;
    for (const auto& b : blocks) {
        Segment s;
        s.kind = Kind::dense;
        s.size = b.rows();
        s.cov = b;
        s.inv_sqrt = inverse_sqrt_spd(b, "noise covariance block");
        s.inv = s.inv_sqrt * s.inv_sqrt;
        m.dim_ += s.size;
        m.segments_.push_back(std::move(s));
    }
    return m;
}

NoiseModel NoiseModel::dense(const Eigen::MatrixXd& covariance) { return block_diagonal({covariance}); }

NoiseModel NoiseModel::stacked(const NoiseModel& a, const NoiseModel& b) {
    NoiseModel m = a;
    m.segments_.insert(m.segments_.end(), b.segments_.begin(), b.segments_.end());
    m.dim_ = a.dim_ + b.dim_;
    return m;
}

bool NoiseModel::is_identity() const noexcept {
    for (const auto& s : segments_)
        if (s.kind != Kind::identity) return false;
    return true;
}

template <typename Fn>
void NoiseModel::for_each_segment(Fn&& fn) const {
    Eigen::Index offset = 0;
    for (const auto& s : segments_) {
        fn(s, offset);
        offset += s.size;
    }
}

Eigen::VectorXd NoiseModel::whiten(const Eigen::VectorXd& r) const {
    if (r.size() != dim_) throw InvalidInput("residual length does not match noise dimension");
    Eigen::VectorXd out(r.size());
    for_each_segment([&](const Segment& s, Eigen::Index off) {
        auto src = r.segment(off, s.size);
        auto dst = out.segment(off, s.size);
        switch (s.kind) {
            case Kind::identity: dst = src; break;
            case Kind::diagonal: dst = src.cwiseQuotient(s.variances.cwiseSqrt()); break;
            case Kind::dense: dst = s.inv_sqrt * src; break;
        }
    });
    return out;
}

Eigen::VectorXd NoiseModel::apply_inverse(const Eigen::VectorXd& r) const {
    if (r.size() != dim_) throw InvalidInput("residual length does not match noise dimension");
    Eigen::VectorXd out(r.size());
    for_each_segment([&](const Segment& s, Eigen::Index off) {
        auto src = r.segment(off, s.size);
        auto dst = out.segment(off, s.size);
        switch (s.kind) {
            case Kind::identity: dst = src; break;
            case Kind::diagonal: dst = src.cwiseQuotient(s.variances); break;
            case Kind::dense: dst = s.inv * src; break;
        }
    });
    return out;
}

Eigen::MatrixXd NoiseModel::apply_inverse(const Eigen::MatrixXd& r) const {
    if (is_identity()) return r;
    Eigen::MatrixXd out(r.rows(), r.cols());
    for (Eigen::Index j = 0; j < r.cols(); ++j) out.col(j) = apply_inverse(Eigen::VectorXd(r.col(j)));
    return out;
}

double NoiseModel::weighted_norm_sq(const Eigen::VectorXd& r) const {
    if (is_identity()) {
        if (r.size() != dim_) throw InvalidInput("residual length does not match noise dimension");
        return r.squaredNorm();
    }
    return r.dot(apply_inverse(r));
}

NoiseModel NoiseModel::restrict(Eigen::Index offset, Eigen::Index length) const {
    if (offset < 0 || length <= 0 || offset + length > dim_)
        throw InvalidInput("noise restriction [" + std::to_string(offset) + ", " + std::to_string(offset + length) +
                           ") out of range");
    NoiseModel m;
    const Eigen::Index end = offset + length;
    for_each_segment([&](const Segment& s, Eigen::Index off) {
        const Eigen::Index lo = std::max(off, offset);
        const Eigen::Index hi = std::min(off + s.size, end);
        if (lo >= hi) return;
        if (s.kind == Kind::dense) {
            if (lo != off || hi != off + s.size)
                throw ConfigError("noise block [" + std::to_string(off) + ", " + std::to_string(off + s.size) +
                                  ") straddles a subset boundary");
            m.segments_.push_back(s);
        } else {
            Segment t;
            t.kind = s.kind;
            t.size = hi - lo;
            if (s.kind == Kind::diagonal) t.variances = s.variances.segment(lo - off, hi - lo);
            m.segments_.push_back(std::move(t));
        }
        m.dim_ += hi - lo;
    });
    return m;
}

Eigen::MatrixXd NoiseModel::covariance() const {
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(dim_, dim_);
    for_each_segment([&](const Segment& s, Eigen::Index off) {
        auto blk = c.block(off, off, s.size, s.size);
        switch (s.kind) {
            case Kind::identity: blk.setIdentity(); break;
            case Kind::diagonal: blk = s.variances.asDiagonal(); break;
            case Kind::dense: blk = s.cov; break;
        }
    });
    return c;
}

// ---------------------------------------------------------------- PriorModel

PriorModel::PriorModel(Eigen::MatrixXd d0, double alpha, double scale)
    : d0_(std::move(d0)), alpha_(alpha), scale_(scale) {
    if (!(alpha_ >= 0.0) || !std::isfinite(alpha_)) throw ConfigError("regularisation weight alpha must be >= 0");
    if (!(scale_ > 0.0) || !std::isfinite(scale_)) throw ConfigError("prior scale must be positive");
    const Eigen::MatrixXd d0_inv_sqrt = inverse_sqrt_spd(d0_, "prior covariance D0");
    const double w = alpha_ / scale_;
    c0_inv_ = w * (d0_inv_sqrt * d0_inv_sqrt);
    c0_inv_sqrt_ = std::sqrt(w) * d0_inv_sqrt;
}

Eigen::MatrixXd PriorModel::c0() const {
    if (!has_covariance()) throw ConfigError("C0 = (scale/alpha) D0 is undefined for alpha = 0");
    return (scale_ / alpha_) * d0_;
}

// ------------------------------------------------------------ InverseProblem

InverseProblem::InverseProblem(ForwardMap forward, ObservationVector data, NoiseModel noise, PriorModel prior,
                               Eigen::Index dim_u)
    : forward_(std::move(forward)),
      data_(std::move(data)),
      noise_(std::move(noise)),
      prior_(std::move(prior)),
      dim_u_(dim_u) {
    if (!forward_) throw ConfigError("forward operator is empty");
    if (dim_u_ <= 0) throw ConfigError("parameter dimension must be positive");
    if (data_.size() == 0) throw ConfigError("data vector is empty");
    if (noise_.dim() != data_.size())
        throw ConfigError("noise dimension " + std::to_string(noise_.dim()) + " does not match data length " +
                          std::to_string(data_.size()));
    if (prior_.dim() != dim_u_)
        throw ConfigError("prior dimension " + std::to_string(prior_.dim()) + " does not match parameter dimension " +
                          std::to_string(dim_u_));
}

InverseProblem InverseProblem::linear(Eigen::MatrixXd a, ObservationVector data, NoiseModel noise, PriorModel prior) {
    const Eigen::Index d = a.cols();
    if (a.rows() != data.size()) throw ConfigError("linear operator rows do not match data length");
    auto shared = std::make_shared<const Eigen::MatrixXd>(a);
    InverseProblem p([shared](const ParameterVector& u) -> ObservationVector { return (*shared) * u; },
                     std::move(data), std::move(noise), std::move(prior), d);
    p.linear_matrix_ = std::move(a);
    return p;
}

ObservationVector InverseProblem::evaluate(const ParameterVector& u) const {
    if (u.size() != dim_u_)
        throw InvalidInput("parameter has dimension " + std::to_string(u.size()) + ", expected " +
                           std::to_string(dim_u_));
    ObservationVector g = forward_(u);
    if (g.size() != data_.size())
        throw EvaluationError("forward output has length " + std::to_string(g.size()) + ", expected " +
                              std::to_string(data_.size()));
    if (!g.allFinite()) throw EvaluationError("forward output contains non-finite values");
    return g;
}

InverseProblem InverseProblem::with_prior(PriorModel prior) const {
    InverseProblem p = *this;
    if (prior.dim() != dim_u_) throw ConfigError("prior dimension does not match parameter dimension");
    p.prior_ = std::move(prior);
    return p;
}

// ------------------------------------------------------------------ potential

double potential_from_output(const InverseProblem& p, const ParameterVector& u, const ObservationVector& g) {
    const double misfit = p.noise().weighted_norm_sq(p.data() - g);
    const double reg = u.dot(p.prior().c0_inverse() * u);
    return 0.5 * misfit + 0.5 * reg;
}

double potential(const InverseProblem& p, const ParameterVector& u) {
    return potential_from_output(p, u, p.evaluate(u));
}

AugmentedProblem augment(const InverseProblem& p) {
    if (!p.prior().has_covariance()) throw ConfigError("augmentation needs a positive-definite C0 (alpha > 0)");
    const Eigen::MatrixXd tail = p.prior().c0_inverse_sqrt();
    const Eigen::Index n = p.dim_y();
    const Eigen::Index d = p.dim_u();
    ForwardMap base_forward = p.forward();
    ForwardMap forward = [base_forward, tail, n, d](const ParameterVector& u) -> ObservationVector {
        ObservationVector out(n + d);
        out.head(n) = base_forward(u);
        out.tail(d) = tail * u;
        return out;
    };
    ObservationVector data = ObservationVector::Zero(n + d);
    data.head(n) = p.data();
    NoiseModel noise = NoiseModel::stacked(p.noise(), NoiseModel::identity(d));
    PriorModel none(p.prior().d0(), 0.0);
    if (p.linear_matrix()) {
        Eigen::MatrixXd a(n + d, d);
        a.topRows(n) = *p.linear_matrix();
        a.bottomRows(d) = tail;
        return {p, InverseProblem::linear(std::move(a), std::move(data), std::move(noise), std::move(none))};
    }
    return {p, InverseProblem(std::move(forward), std::move(data), std::move(noise), std::move(none), d)};
}

InverseProblem whiten(const InverseProblem& p) {
    if (p.noise().is_identity()) return p;
    const NoiseModel noise = p.noise();
    ObservationVector data = noise.whiten(p.data());
    if (p.linear_matrix()) {
        const Eigen::MatrixXd& a = *p.linear_matrix();
        Eigen::MatrixXd wa(a.rows(), a.cols());
        for (Eigen::Index k = 0; k < a.cols(); ++k) wa.col(k) = noise.whiten(Eigen::VectorXd(a.col(k)));
        return InverseProblem::linear(std::move(wa), std::move(data), NoiseModel::identity(p.dim_y()), p.prior());
    }
    ForwardMap base_forward = p.forward();
    ForwardMap forward = [base_forward, noise](const ParameterVector& u) -> ObservationVector {
        return noise.whiten(base_forward(u));
    };
    return InverseProblem(std::move(forward), std::move(data), NoiseModel::identity(p.dim_y()), p.prior(), p.dim_u());
}

ParameterVector tikhonov_solution(const InverseProblem& p) {
    if (!p.linear_matrix()) throw InvalidInput("closed-form Tikhonov solution needs a linear forward operator");
    const Eigen::MatrixXd& a = *p.linear_matrix();
    const Eigen::MatrixXd gi_a = p.noise().apply_inverse(a);
    const Eigen::MatrixXd normal = a.transpose() * gi_a + p.prior().c0_inverse();
    const Eigen::VectorXd rhs = gi_a.transpose() * p.data();
    Eigen::LDLT<Eigen::MatrixXd> ldlt(normal);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.vectorD().minCoeff() <= 0.0)
        throw NumericalError("normal matrix of the Tikhonov problem is singular");
    ParameterVector u = ldlt.solve(rhs);
    if (!u.allFinite()) throw NumericalError("Tikhonov solve produced non-finite values");
    return u;
}

}  // namespace ekisub
