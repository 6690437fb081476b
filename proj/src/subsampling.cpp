#include "ekisub/subsampling.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ekisub/errors.hpp"
#include "flow_support.hpp"

namespace ekisub {

void LearningRateSchedule::validate() const {
    if (!(a >= 0.0) || !std::isfinite(a)) throw ConfigError("learning-rate slope a must be finite and >= 0");
    if (!(b > 0.0) || !std::isfinite(b)) throw ConfigError("learning-rate offset b must be finite and > 0");
    if (!(t_cutoff >= 0.0)) throw ConfigError("switch cutoff time must be >= 0");
    if (n_post_switches < 0) throw ConfigError("post-cutoff switch count must be >= 0");
    if (n_post_switches > 0) {
        if (!std::isfinite(t_cutoff) || !std::isfinite(horizon))
            throw ConfigError("post-cutoff switches need a finite cutoff and horizon");
        if (!(horizon > t_cutoff)) throw ConfigError("switch horizon must exceed the cutoff time");
    }
}

Eigen::MatrixXd transition_rate_matrix(int n_sub, double eta_t) {
    if (n_sub < 2) throw ConfigError("transition rate matrix needs N_sub >= 2");
    if (!(eta_t > 0.0)) throw ConfigError("learning rate must be positive");
    const double off = 1.0 / ((n_sub - 1) * eta_t);
    const double diag = static_cast<double>(n_sub) / ((n_sub - 1) * eta_t);
    return Eigen::MatrixXd::Constant(n_sub, n_sub, off) - diag * Eigen::MatrixXd::Identity(n_sub, n_sub);
}

double holding_time_survival(double t0, double dt, const LearningRateSchedule& sched) {
    if (dt < 0.0) return 1.0;
    return std::exp(-sched.integrated_rate(t0, dt));
}

double sample_holding_time(double t0, const LearningRateSchedule& sched, Philox& rng) {
    if (!(t0 >= 0.0)) throw InvalidInput("holding time must start at t0 >= 0");
    // Solve a/2 dt^2 + c dt = E with E = -log U in the cancellation-free form.
    const double target = -std::log(rng.uniform());
    const double c = sched.a * t0 + sched.b;
    return 2.0 * target / (c + std::sqrt(c * c + 2.0 * sched.a * target));
}

// -------------------------------------------------------------- IndexProcess

IndexProcess::IndexProcess(int n_sub, LearningRateSchedule sched, std::uint64_t seed, std::uint64_t stream)
    : n_sub_(n_sub), sched_(sched), rng_(seed, stream) {
    if (n_sub_ < 2) throw ConfigError("index process needs N_sub >= 2");
    sched_.validate();
    index_ = static_cast<int>(rng_.uniform_index(static_cast<std::uint32_t>(n_sub_)));
    initial_index_ = index_;
    schedule_next(0.0);
}

void IndexProcess::schedule_next(double from) {
    if (from < sched_.t_cutoff) {
        const double candidate = from + sample_holding_time(from, sched_, rng_);
        if (candidate <= sched_.t_cutoff || !std::isfinite(sched_.t_cutoff)) {
            next_ = candidate;
            return;
        }
    }
    if (post_switches_done_ < sched_.n_post_switches) {
        const double spacing = (sched_.horizon - sched_.t_cutoff) / sched_.n_post_switches;
        next_ = sched_.t_cutoff + spacing * (post_switches_done_ + 1);
        if (post_switches_done_ + 1 == sched_.n_post_switches) next_ = sched_.horizon;
    } else {
        next_ = std::numeric_limits<double>::infinity();
    }
}

void IndexProcess::advance(double t) {
    if (t < time_) throw InvalidInput("index process cannot move backwards in time");
    while (next_ <= t) {
        const double at = next_;
        const auto r = static_cast<int>(rng_.uniform_index(static_cast<std::uint32_t>(n_sub_ - 1)));
        index_ = r < index_ ? r : r + 1;
        log_.push_back({at, index_});
        if (at > sched_.t_cutoff) ++post_switches_done_;
        schedule_next(at);
    }
    time_ = t;
}

IndexProcess advance_index(IndexProcess proc, double t) {
    proc.advance(t);
    return proc;
}

// ------------------------------------------------------------- DataPartition

DataPartition::DataPartition(const InverseProblem& p, std::vector<SubsetRange> ranges)
    : full_(p),
      subset_prior_(p.prior().rescaled(static_cast<double>(ranges.size()))),
      ranges_(std::move(ranges)) {
    noises_.reserve(ranges_.size());
    for (const auto& r : ranges_) noises_.push_back(p.noise().restrict(r.offset, r.length));
}

DataPartition DataPartition::from_ranges(const InverseProblem& p, std::vector<SubsetRange> ranges) {
    if (ranges.empty()) throw ConfigError("partition needs at least one subset");
    Eigen::Index expected = 0;
    for (const auto& r : ranges) {
        if (r.offset != expected || r.length <= 0)
            throw ConfigError("subsets must tile the data contiguously without gaps or empty subsets");
        expected += r.length;
    }
    if (expected != p.dim_y()) throw ConfigError("subsets do not cover the whole data vector");
    return DataPartition(p, std::move(ranges));
}

ObservationVector DataPartition::subset_data(int i) const {
    const auto& r = ranges_.at(static_cast<std::size_t>(i));
    return full_.data().segment(r.offset, r.length);
}

const NoiseModel& DataPartition::subset_noise(int i) const { return noises_.at(static_cast<std::size_t>(i)); }

Eigen::MatrixXd DataPartition::restrict(int i, const Eigen::MatrixXd& full_outputs) const {
    const auto& r = ranges_.at(static_cast<std::size_t>(i));
    if (full_outputs.rows() != full_.dim_y()) throw InvalidInput("forward outputs do not have the full data length");
    return full_outputs.middleRows(r.offset, r.length);
}

double DataPartition::subset_potential(int i, const ParameterVector& u) const {
    const ObservationVector g = restrict(i, full_.evaluate(u));
    const double misfit = subset_noise(i).weighted_norm_sq(subset_data(i) - g);
    return 0.5 * misfit + 0.5 * u.dot(subset_prior_.c0_inverse() * u);
}

ObservationVector DataPartition::reassemble(const std::vector<ObservationVector>& parts) const {
    if (parts.size() != ranges_.size()) throw InvalidInput("expected one part per subset");
    ObservationVector out(full_.dim_y());
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (parts[i].size() != ranges_[i].length) throw InvalidInput("subset part has the wrong length");
        out.segment(ranges_[i].offset, ranges_[i].length) = parts[i];
    }
    return out;
}

DataPartition partition(const InverseProblem& p, int n_sub, PartitionScheme scheme, std::optional<ImageLayout> layout) {
    const Eigen::Index n_obs = p.dim_y();
    if (n_sub < 2) throw ConfigError("N_sub must be at least 2, got " + std::to_string(n_sub));
    if (n_sub > n_obs)
        throw ConfigError("N_sub = " + std::to_string(n_sub) + " exceeds the data length " + std::to_string(n_obs));
    std::vector<SubsetRange> ranges;
    if (scheme == PartitionScheme::horizontal_bands) {
        if (!layout) throw ConfigError("horizontal bands need the image layout");
        if (layout->width * layout->height != n_obs)
            throw ConfigError("image layout " + std::to_string(layout->width) + "x" + std::to_string(layout->height) +
                              " does not match the data length " + std::to_string(n_obs));
        if (n_sub > layout->height) throw ConfigError("more bands than image rows");
        for (int k = 0; k < n_sub; ++k) {
            const Eigen::Index r0 = layout->height * k / n_sub;
            const Eigen::Index r1 = layout->height * (k + 1) / n_sub;
            ranges.push_back({r0 * layout->width, (r1 - r0) * layout->width});
        }
    } else {
        for (int k = 0; k < n_sub; ++k) {
            const Eigen::Index i0 = n_obs * k / n_sub;
            const Eigen::Index i1 = n_obs * (k + 1) / n_sub;
            ranges.push_back({i0, i1 - i0});
        }
    }
    return DataPartition::from_ranges(p, std::move(ranges));
}

// ------------------------------------------------------------ subsampled flow

namespace {

Eigen::MatrixXd subset_drift(const Eigen::MatrixXd& particles, const EnsembleEvaluation& ev, const DataPartition& part,
                             int i, bool regularised, double rho) {
    const Eigen::MatrixXd* c0_inv = regularised ? &part.subset_prior().c0_inverse() : nullptr;
    return static_cast<double>(part.size()) * eki_drift(particles, part.restrict(i, ev.outputs), part.subset_data(i),
                                                        part.subset_noise(i), c0_inv, rho, &ev.ok);
}

}  // namespace

Eigen::MatrixXd rhs_subsampled(const Ensemble& e, const DataPartition& part, int i, double rho_vi) {
    if (!(rho_vi >= 0.0 && rho_vi < 1.0)) throw ConfigError("variance-inflation weight must satisfy 0 <= rho < 1");
    if (i < 0 || i >= part.size()) throw InvalidInput("subset index " + std::to_string(i) + " out of range");
    const auto ev = evaluate_ensemble(e.particles(), part.full());
    return subset_drift(e.particles(), ev, part, i, true, rho_vi);
}

Trajectory integrate_subsampled(const Ensemble& e0, const DataPartition& part, const FlowConfig& cfg,
                                const LearningRateSchedule& sched, std::uint64_t seed) {
    cfg.validate();
    if (e0.size() < 2) throw InvalidInput("EKI flow needs at least two particles");
    if (e0.dim() != part.full().dim_u()) throw InvalidInput("ensemble dimension does not match the problem");
    if (!(cfg.t_end > e0.time())) throw ConfigError("flow end time must exceed the ensemble time");
    if (part.size() < 2) throw ConfigError("subsampled flow needs N_sub >= 2");

    const Eigen::Index d = e0.dim();
    const bool regularised = cfg.variant != FlowVariant::plain;
    const double rho = cfg.variant == FlowVariant::variance_inflated ? cfg.rho_vi : 0.0;
    const InverseProblem& full = part.full();

    TrajectoryRecorder recorder(full, e0, cfg);
    Trajectory& traj = recorder.trajectory();
    detail::CachedEvaluator evaluate(full, cfg);

    IndexProcess process(part.size(), sched, seed);
    process.advance(e0.time());
    traj.switches.push_back({e0.time(), process.index()});

    const std::vector<double> times = diagnostic_times(e0.time(), cfg.t_end, cfg.first_sample, cfg.samples_per_decade);
    recorder.record(e0.time(), e0.particles());

    DormandPrince ode({cfg.rel_tol, cfg.abs_tol, cfg.min_step, cfg.max_step, cfg.initial_step});
    const DormandPrince::Observer observe = [&](double ts, const Eigen::VectorXd& ys) {
        recorder.record(ts, detail::as_particles(ys, d));
    };

    double t = e0.time();
    Eigen::VectorXd y = detail::flatten(e0.particles());
    while (t < cfg.t_end) {
        const int active = process.index();
        const double boundary = std::min(process.next_switch_time(), cfg.t_end);
        const DormandPrince::Rhs rhs = [&](double ts, const Eigen::VectorXd& ys, Eigen::VectorXd& dy) {
            const Eigen::MatrixXd u = detail::as_particles(ys, d);
            const EnsembleEvaluation& ev = evaluate(ts, u, traj);
            dy = detail::flatten(subset_drift(u, ev, part, active, regularised, rho));
        };
        ode.integrate(rhs, t, y, boundary, times, observe);
        t = boundary;
        // A switch landing exactly on t_end is still logged.
        const std::size_t before = process.switch_log().size();
        process.advance(t);
        for (std::size_t k = before; k < process.switch_log().size(); ++k)
            traj.switches.push_back(process.switch_log()[k]);
    }
    traj.ode = ode.stats();
    return std::move(traj);
}

}  // namespace ekisub
