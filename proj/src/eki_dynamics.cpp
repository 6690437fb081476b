#include "ekisub/eki_dynamics.hpp"

#include <algorithm>
#include <cmath>

#include "ekisub/errors.hpp"
#include "ekisub/parallel.hpp"
#include "flow_support.hpp"

namespace ekisub {

void FlowConfig::validate() const {
    if (!(rho_vi >= 0.0 && rho_vi < 1.0)) throw ConfigError("variance-inflation weight must satisfy 0 <= rho < 1");
    if (!(t_end > 0.0) || !std::isfinite(t_end)) throw ConfigError("flow end time must be positive and finite");
    if (!(rel_tol > 0.0) || !(abs_tol > 0.0)) throw ConfigError("integrator tolerances must be positive");
    if (!(min_step > 0.0) || !(max_step > 0.0) || min_step > max_step)
        throw ConfigError("integrator step bounds must satisfy 0 < min_step <= max_step");
    if (!(first_sample > 0.0)) throw ConfigError("first diagnostic sample time must be positive");
    if (samples_per_decade < 1) throw ConfigError("samples_per_decade must be at least 1");
}

std::vector<double> Trajectory::times() const {
    std::vector<double> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.time);
    return out;
}

std::vector<double> Trajectory::series(double TrajectorySample::*field) const {
    std::vector<double> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.*field);
    return out;
}

Ensemble Trajectory::final_ensemble() const {
    if (samples.empty()) throw InvalidInput("trajectory is empty");
    return Ensemble(samples.back().particles, samples.back().time);
}

Eigen::Index EnsembleEvaluation::failures() const {
    return static_cast<Eigen::Index>(std::count(ok.begin(), ok.end(), false));
}

EnsembleEvaluation evaluate_ensemble(const Eigen::MatrixXd& particles, const InverseProblem& p, unsigned workers,
                                     bool tolerate_failures) {
    const auto n = static_cast<std::size_t>(particles.cols());
    EnsembleEvaluation ev;
    ev.outputs = Eigen::MatrixXd::Zero(p.dim_y(), particles.cols());
    ev.ok.assign(n, true);
    ev.messages.assign(n, {});
    parallel_for(n, workers, [&](std::size_t j) {
        const auto col = static_cast<Eigen::Index>(j);
        try {
            ev.outputs.col(col) = p.evaluate(particles.col(col));
        } catch (const EvaluationError& err) {
            if (!tolerate_failures) throw;
            ev.ok[j] = false;
            ev.messages[j] = err.what();
        }
    });
    return ev;
}

Eigen::MatrixXd eki_drift(const Eigen::MatrixXd& particles, const Eigen::MatrixXd& outputs,
                          const ObservationVector& data, const NoiseModel& noise, const Eigen::MatrixXd* c0_inverse,
                          double rho, const std::vector<bool>* ok) {
    const Eigen::Index d = particles.rows();
    const Eigen::Index J = particles.cols();
    if (J < 2) throw InvalidInput("EKI drift needs at least two particles");
    if (outputs.cols() != J) throw InvalidInput("expected one forward output per particle");
    if (outputs.rows() != data.size()) throw InvalidInput("forward outputs and data differ in length");

    std::vector<Eigen::Index> good;
    for (Eigen::Index j = 0; j < J; ++j)
        if (!ok || (*ok)[static_cast<std::size_t>(j)]) good.push_back(j);
    const auto J_ok = static_cast<Eigen::Index>(good.size());
    if (J_ok < 2)
        throw EvaluationError("only " + std::to_string(J_ok) + " particle(s) have a valid forward evaluation");

    Eigen::MatrixXd drift = Eigen::MatrixXd::Zero(d, J);

    // Data term: -C^{uG} Gamma^{-1} (g_j - y), with C^{uG} over valid particles.
    Eigen::MatrixXd u_ok(d, J_ok), g_ok(outputs.rows(), J_ok);
    for (Eigen::Index k = 0; k < J_ok; ++k) {
        u_ok.col(k) = particles.col(good[static_cast<std::size_t>(k)]);
        g_ok.col(k) = outputs.col(good[static_cast<std::size_t>(k)]);
    }
    const Eigen::MatrixXd du = deviations(u_ok);
    const Eigen::MatrixXd dg = deviations(g_ok);
    const Eigen::MatrixXd weighted = noise.apply_inverse(Eigen::MatrixXd(g_ok.colwise() - data));
    // (DG^T W) is J_ok x J_ok; never forms the d x N_obs covariance.
    const Eigen::MatrixXd data_drift = -du * (dg.transpose() * weighted) / static_cast<double>(J_ok - 1);
    for (Eigen::Index k = 0; k < J_ok; ++k) drift.col(good[static_cast<std::size_t>(k)]) = data_drift.col(k);

    if (c0_inverse) {
        const Eigen::MatrixXd du_all = deviations(particles);
        const Eigen::MatrixXd cu = du_all * du_all.transpose() / static_cast<double>(J - 1);
        drift -= cu * (*c0_inverse) * particles;
    }

    if (rho != 0.0) {
        const Eigen::VectorXd mean_drift = drift.rowwise().mean();
        drift = (1.0 - rho) * drift;
        drift.colwise() += rho * mean_drift;
    }
    return drift;
}

namespace {

void check_rho(double rho) {
    if (!(rho >= 0.0 && rho < 1.0)) throw ConfigError("variance-inflation weight must satisfy 0 <= rho < 1");
}

}  // namespace

Eigen::MatrixXd rhs_plain(const Ensemble& e, const InverseProblem& p) {
    const auto ev = evaluate_ensemble(e.particles(), p);
    return eki_drift(e.particles(), ev.outputs, p.data(), p.noise(), nullptr, 0.0);
}

Eigen::MatrixXd rhs_regularised(const Ensemble& e, const InverseProblem& p) {
    const auto ev = evaluate_ensemble(e.particles(), p);
    return eki_drift(e.particles(), ev.outputs, p.data(), p.noise(), &p.prior().c0_inverse(), 0.0);
}

Eigen::MatrixXd rhs_variance_inflated(const Ensemble& e, const InverseProblem& p, double rho_vi) {
    check_rho(rho_vi);
    const auto ev = evaluate_ensemble(e.particles(), p);
    return eki_drift(e.particles(), ev.outputs, p.data(), p.noise(), &p.prior().c0_inverse(), rho_vi);
}

Eigen::MatrixXd rhs_variance_inflated_expanded(const Ensemble& e, const InverseProblem& p, double rho_vi) {
    check_rho(rho_vi);
    const auto ev = evaluate_ensemble(e.particles(), p);
    const Eigen::MatrixXd& u = e.particles();
    const Eigen::MatrixXd& g = ev.outputs;
    const Eigen::MatrixXd cug = cross_covariance(e, g);
    const Eigen::MatrixXd cu = parameter_covariance(e);
    const Eigen::MatrixXd& c0_inv = p.prior().c0_inverse();
    const Eigen::VectorXd u_mean = u.rowwise().mean();
    const Eigen::VectorXd g_mean = g.rowwise().mean();
    Eigen::MatrixXd out(u.rows(), u.cols());
    for (Eigen::Index j = 0; j < u.cols(); ++j) {
        const Eigen::VectorXd gj = g.col(j);
        const Eigen::VectorXd uj = u.col(j);
        out.col(j) = -cug * p.noise().apply_inverse(Eigen::VectorXd(gj - p.data())) - cu * c0_inv * uj +
                     rho_vi * cug * p.noise().apply_inverse(Eigen::VectorXd(gj - g_mean)) +
                     rho_vi * cu * c0_inv * (uj - u_mean);
    }
    return out;
}

std::vector<double> diagnostic_times(double t0, double t_end, double first_sample, int per_decade) {
    std::vector<double> out{t0};
    if (!(t_end > t0)) return out;
    for (int k = 0;; ++k) {
        const double t = first_sample * std::pow(10.0, static_cast<double>(k) / per_decade);
        if (t >= t_end * (1.0 - 1e-12)) break;
        if (t > t0) out.push_back(t);
    }
    out.push_back(t_end);
    return out;
}

Eigen::Index deviation_rank(const Eigen::MatrixXd& particles) {
    const Eigen::MatrixXd du = deviations(particles);
    if (du.size() == 0) return 0;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(du);
    const Eigen::VectorXd& s = svd.singularValues();
    if (s.size() == 0 || s(0) == 0.0) return 0;
    const double tol = s(0) * 1e-10 * static_cast<double>(std::max(du.rows(), du.cols()));
    return static_cast<Eigen::Index>((s.array() > tol).count());
}

TrajectoryRecorder::TrajectoryRecorder(const InverseProblem& full, const Ensemble& e0, const FlowConfig& cfg)
    : full_(full), cfg_(cfg) {
    traj_.span_rank = deviation_rank(e0.particles());
}

void TrajectoryRecorder::record(double t, const Eigen::MatrixXd& particles) {
    TrajectorySample s;
    s.time = t;
    s.particles = particles;
    const Ensemble e(particles, t);
    s.spread = ensemble_spread(e);
    if (particles.cols() >= 2 && traj_.span_rank > 0) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(parameter_covariance(e), Eigen::EigenvaluesOnly);
        s.lambda_min = eig.eigenvalues()(particles.rows() - traj_.span_rank);
    }
    if (cfg_.record_residual) {
        const auto ev = evaluate_ensemble(particles, full_, cfg_.workers, true);
        traj_.diagnostic_evaluations += static_cast<std::size_t>(particles.cols());
        double sum = 0.0;
        for (Eigen::Index j = 0; j < particles.cols(); ++j) {
            if (!ev.ok[static_cast<std::size_t>(j)]) {
                sum = std::numeric_limits<double>::quiet_NaN();
                break;
            }
            sum += potential_from_output(full_, particles.col(j), ev.outputs.col(j));
        }
        s.mean_residual = sum / static_cast<double>(particles.cols());
    }
    traj_.samples.push_back(std::move(s));
}

Trajectory integrate(const Ensemble& e0, const InverseProblem& p_in, const FlowConfig& cfg) {
    cfg.validate();
    if (e0.size() < 2) throw InvalidInput("EKI flow needs at least two particles");
    if (e0.dim() != p_in.dim_u()) throw InvalidInput("ensemble dimension does not match the problem");
    if (!(cfg.t_end > e0.time())) throw ConfigError("flow end time must exceed the ensemble time");

    const InverseProblem p = whiten(p_in);
    const Eigen::Index d = e0.dim();
    const Eigen::MatrixXd* c0_inv = cfg.variant == FlowVariant::plain ? nullptr : &p.prior().c0_inverse();
    const double rho = cfg.variant == FlowVariant::variance_inflated ? cfg.rho_vi : 0.0;

    TrajectoryRecorder recorder(p, e0, cfg);
    Trajectory& traj = recorder.trajectory();
    detail::CachedEvaluator evaluate(p, cfg);

    const DormandPrince::Rhs rhs = [&](double t, const Eigen::VectorXd& y, Eigen::VectorXd& dy) {
        const Eigen::MatrixXd u = detail::as_particles(y, d);
        const EnsembleEvaluation& ev = evaluate(t, u, traj);
        dy = detail::flatten(eki_drift(u, ev.outputs, p.data(), p.noise(), c0_inv, rho, &ev.ok));
    };

    const std::vector<double> times = diagnostic_times(e0.time(), cfg.t_end, cfg.first_sample, cfg.samples_per_decade);
    recorder.record(e0.time(), e0.particles());

    DormandPrince ode({cfg.rel_tol, cfg.abs_tol, cfg.min_step, cfg.max_step, cfg.initial_step});
    double t = e0.time();
    Eigen::VectorXd y = detail::flatten(e0.particles());
    ode.integrate(rhs, t, y, cfg.t_end, times,
                  [&](double ts, const Eigen::VectorXd& ys) { recorder.record(ts, detail::as_particles(ys, d)); });
    traj.ode = ode.stats();
    return std::move(traj);
}

}  // namespace ekisub
