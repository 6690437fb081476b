// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero if any fails. `acceptance 3 7` runs a subset.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ekisub/cli_harness.hpp"
#include "ekisub/cosserat_rod.hpp"
#include "ekisub/diagnostics.hpp"
#include "ekisub/eki_dynamics.hpp"
#include "ekisub/imaging.hpp"
#include "ekisub/subsampling.hpp"
#include "../support/linear_benchmark.hpp"
#include "../support/oracles.hpp"

using namespace ekisub;
using namespace ekisub::testing;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    int id;
    std::string name;
    double budget_s;
    std::function<Outcome()> run;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

// ------------------------------------------------------------------ imaging

Outcome worked_grid() {
    BinaryImage img(6, 6, 255);
    for (auto [x, y] : std::vector<std::pair<int, int>>{{3, 1}, {4, 1}, {5, 1}, {3, 2}, {4, 2}, {3, 3}})
        img.at(x, y) = 0;
    const int expected[6][6] = {{4, 3, 2, 1, 1, 1}, {3, 2, 1, 0, 0, 0}, {3, 2, 1, 0, 0, 1},
                                {3, 2, 1, 0, 1, 2}, {4, 3, 2, 1, 2, 3}, {5, 4, 3, 2, 3, 4}};
    const auto t0 = std::chrono::steady_clock::now();
    const DistanceMap dm = distance_transform(img, Metric::manhattan);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    int wrong = 0;
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 6; ++x)
            if (dm.at(x, y) != static_cast<double>(expected[y][x])) ++wrong;
    return {wrong == 0 && secs < 1e-3, fmt("%.0f of 36 cells differ, %.1f us", wrong, secs * 1e6)};
}

Outcome transform_oracle() {
    Philox rng(2024, 3);
    int mismatches = 0;
    for (int k = 0; k < 200; ++k) {
        const int w = 1 + static_cast<int>(rng.uniform_index(64));
        const int h = 1 + static_cast<int>(rng.uniform_index(64));
        const double density = 0.002 + 0.3 * rng.uniform() * rng.uniform();
        const BinaryImage img = random_binary(w, h, density, rng);
        for (Metric m : {Metric::euclidean, Metric::manhattan}) {
            const DistanceMap dm = distance_transform(img, m, 1 + k % 3);
            const auto ref = brute_force_distance(img, m);
            for (std::size_t i = 0; i < ref.size(); ++i) {
                const double want = m == Metric::euclidean ? std::sqrt(static_cast<double>(ref[i]))
                                                           : static_cast<double>(ref[i]);
                if (dm.values[i] != want) ++mismatches;
            }
        }
    }
    return {mismatches == 0, fmt("%.0f mismatching pixels over 200 images x 2 metrics", mismatches)};
}

// -------------------------------------------------------------- linear EKI

Outcome tikhonov_oracle() {
    const auto b = linear_benchmark();
    const Eigen::VectorXd u_star = tikhonov_solution(b.problem);
    const Trajectory tr = integrate(triangle_ensemble(Eigen::VectorXd::Zero(2), 20.0), b.problem, tight_flow(1e3));
    const double rel = (ensemble_mean(tr.final_ensemble()) - u_star).norm() / u_star.norm();
    return {rel < 1e-3, fmt("relative error %.3e at t=1e3 (limit 1e-3)", rel)};
}

Outcome collapse_rate() {
    const auto b = linear_benchmark();
    const Trajectory tr = integrate(triangle_ensemble(Eigen::VectorXd::Zero(2), 20.0), b.problem, tight_flow(1e3));
    const RateFit fit = fit_power_law(spread_series(tr), 10.0, 1e3);
    return {fit.slope >= -1.3 && fit.slope <= -0.7, fmt("slope %.4f, R^2 %.6f", fit.slope, fit.r_squared)};
}

double distance_to_span(const Eigen::MatrixXd& basis, const Eigen::VectorXd& origin, const Eigen::VectorXd& u) {
    const Eigen::VectorXd r = u - origin;
    return (r - basis * (basis.transpose() * r)).norm();
}

Outcome subspace_property() {
    double worst = 0.0;
    for (int d : {2, 6}) {
        const auto b = linear_benchmark(d, 10, 1.0, 31);
        Philox rng(5, 1);
        const Ensemble e0(random_matrix(d, 3, rng) * 5.0);
        for (FlowVariant v : {FlowVariant::plain, FlowVariant::regularised, FlowVariant::variance_inflated}) {
            FlowConfig cfg = tight_flow(1e3);
            cfg.variant = v;
            cfg.rho_vi = 0.5;
            const Trajectory tr = integrate(e0, b.problem, cfg);
            const Eigen::VectorXd origin = e0.particles().col(0);
            const Eigen::MatrixXd dev = e0.particles().rightCols(2).colwise() - origin;
            const Eigen::MatrixXd basis = Eigen::HouseholderQR<Eigen::MatrixXd>(dev).householderQ() *
                                          Eigen::MatrixXd::Identity(d, 2);
            for (const auto& s : tr.samples)
                for (Eigen::Index j = 0; j < s.particles.cols(); ++j)
                    worst = std::max(worst, distance_to_span(basis, origin, s.particles.col(j)));
        }
    }
    return {worst < 1e-8, fmt("max distance to the initial affine span %.3e", worst)};
}

Outcome subsampling_limit() {
    const auto b = linear_benchmark();
    const DataPartition part = partition(b.problem, 4, PartitionScheme::contiguous_blocks);
    FlowConfig cfg = tight_flow(100.0);
    cfg.rel_tol = 1e-6;
    cfg.abs_tol = 1e-9;
    cfg.record_residual = false;
    const Ensemble e0 = triangle_ensemble(Eigen::VectorXd::Zero(2), 20.0);
    const Eigen::VectorXd full = ensemble_mean(integrate(e0, b.problem, cfg).final_ensemble());
    LearningRateSchedule sched;  // eta(t) = 1 / (10 t + 10)
    double worst = 0.0;
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const Eigen::VectorXd sub = ensemble_mean(integrate_subsampled(e0, part, cfg, sched, seed).final_ensemble());
        worst = std::max(worst, (sub - full).norm() / full.norm());
    }
    return {worst < 1e-2, fmt("worst relative deviation of the final mean %.3e over 3 seeds", worst)};
}

Outcome flow_average() {
    const auto b = linear_benchmark(2, 20);
    const DataPartition part = partition(b.problem, 5, PartitionScheme::contiguous_blocks);
    Philox rng(77, 2);
    double worst = 0.0;
    for (int k = 0; k < 50; ++k) {
        const Ensemble e(random_matrix(2, 3 + k % 4, rng) * (1.0 + 3.0 * rng.uniform()));
        Eigen::MatrixXd avg = Eigen::MatrixXd::Zero(2, e.size());
        for (int i = 0; i < part.size(); ++i) avg += rhs_subsampled(e, part, i, 0.0);
        avg /= part.size();
        const Eigen::MatrixXd full = rhs_regularised(e, b.problem);
        worst = std::max(worst, (avg - full).cwiseAbs().maxCoeff() / std::max(1.0, full.cwiseAbs().maxCoeff()));
    }
    return {worst < 1e-12, fmt("max scaled deviation %.3e", worst)};
}

// ---------------------------------------------------------------- CTMP laws

double ks_statistic(std::vector<double> xs, const std::function<double(double)>& cdf) {
    std::sort(xs.begin(), xs.end());
    const double n = static_cast<double>(xs.size());
    double d = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double f = cdf(xs[i]);
        d = std::max({d, (i + 1) / n - f, f - i / n});
    }
    return d;
}

Outcome ctmp_laws() {
    const int n = 10000;
    const double ks_crit = 1.628 / std::sqrt(static_cast<double>(n));  // 1% level
    std::ostringstream detail;
    bool ok = true;
    for (auto [a, b] : std::vector<std::pair<double, double>>{{0.0, 1.0}, {10.0, 10.0}}) {
        LearningRateSchedule s;
        s.a = a;
        s.b = b;
        for (double t0 : {0.0, 2.5}) {
            Philox rng(static_cast<std::uint64_t>(1000 * a + b + 10 * t0), 4);
            std::vector<double> xs(n);
            for (auto& x : xs) x = sample_holding_time(t0, s, rng);
            const double d = ks_statistic(xs, [&](double dt) { return 1.0 - holding_time_survival(t0, dt, s); });
            ok = ok && d < ks_crit;
            detail << "KS(a=" << a << ",b=" << b << ",t0=" << t0 << ")=" << d << " ";
        }
    }
    detail << "crit " << ks_crit << "; ";

    // Jump chain: the offset (new - old - 1) mod N is uniform on N - 1 values.
    LearningRateSchedule s;
    IndexProcess proc(5, s, 99);
    int prev = proc.index();
    std::vector<double> counts(4, 0.0);
    proc.advance(40.0);
    for (const auto& ev : proc.switch_log()) {
        counts[static_cast<std::size_t>((ev.index - prev - 1 + 5) % 5)] += 1.0;
        prev = ev.index;
    }
    double total = 0.0;
    for (double c : counts) total += c;
    double chi2 = 0.0;
    for (double c : counts) chi2 += (c - total / 4) * (c - total / 4) / (total / 4);
    ok = ok && chi2 < 11.345;  // chi^2_3 at 1%
    detail << "chi2=" << chi2 << " (" << total << " jumps, crit 11.345); ";

    double mean_count = 0.0;
    bool counts_ok = true;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto sw = advance_index(IndexProcess(5, s, seed), 10.0).switch_log().size();
        counts_ok = counts_ok && sw >= 400 && sw <= 800;
        mean_count += static_cast<double>(sw) / 5.0;
    }
    ok = ok && counts_ok;
    detail << "switches on [0,10] mean " << mean_count << " over 5 seeds";
    return {ok, detail.str()};
}

// -------------------------------------------------------------------- rod

RodConfig cantilever(int n) {
    RodConfig c;
    c.length = 1.0;
    c.radius = 0.02;
    c.n_elements = n;
    c.density = 1000.0;
    c.youngs_modulus = 1e6;
    c.gravity.setZero();
    const double i2 = std::numbers::pi * std::pow(c.radius, 4) / 4.0;
    const double force = 0.02 * 3.0 * c.youngs_modulus * i2 / std::pow(c.length, 3);  // delta / L = 0.02
    c.tip_force = Eigen::Vector3d(0.0, -force, 0.0);
    const double area = std::numbers::pi * c.radius * c.radius;
    const double w1 = 3.516 * std::sqrt(c.youngs_modulus * i2 / (c.density * area * std::pow(c.length, 4)));
    c.damping = 2.0 * w1;
    c.t_end = 12.0 / w1;
    return c;
}

Outcome rod_oracle() {
    const RodConfig c = cantilever(20);
    const double i2 = std::numbers::pi * std::pow(c.radius, 4) / 4.0;
    const double expected = -c.tip_force.y() * std::pow(c.length, 3) / (3.0 * c.youngs_modulus * i2);
    const double tip20 = -solve_rod(c).tip().y();
    const double tip40 = -solve_rod(cantilever(40)).tip().y();
    const double eb_err = std::abs(tip20 / expected - 1.0);
    const double mesh = std::abs(tip40 / tip20 - 1.0);

    RodConfig idle = c;
    idle.tip_force.setZero();
    idle.t_end = 0.5;
    const RodState rest = build_rod(idle);
    const RodState after = solve_rod(idle);
    double drift = 0.0;
    for (std::size_t i = 0; i < rest.positions.size(); ++i)
        drift = std::max(drift, (after.positions[i] - rest.positions[i]).norm());

    return {eb_err < 0.05 && drift < 1e-9 && mesh < 0.02,
            fmt("tip/EB-1 = %.3e, zero-load drift %.2e m, mesh-doubling change %.3e", eb_err, drift, mesh)};
}

// ------------------------------------------------------------- end to end

Outcome end_to_end() {
    RunConfig cfg = RunConfig::defaults();
    const auto dir = std::filesystem::temp_directory_path() / "ekisub_acceptance_e2e";
    std::filesystem::remove_all(dir);
    cfg.out = (dir / "full").string();
    const InversionResult full = cmd_invert(cfg);
    cfg.out = (dir / "sub").string();
    const InversionResult sub = cmd_invert_subsampled(cfg);

    auto rel = [&](const InversionResult& r, int k) { return std::abs(r.estimate_physical[k] / cfg.truth[k] - 1.0); };
    const double worst = std::max({rel(full, 0), rel(full, 1), rel(sub, 0), rel(sub, 1)});
    const double ratio = full.terminal_residual / sub.terminal_residual;
    std::ostringstream detail;
    detail.precision(4);
    detail << "full (" << full.estimate_physical[0] << ", " << full.estimate_physical[1] << ") sub ("
           << sub.estimate_physical[0] << ", " << sub.estimate_physical[1] << ") truth (" << cfg.truth[0] << ", "
           << cfg.truth[1] << "), worst rel error " << worst << ", residual ratio " << ratio;
    return {worst < 0.10 && ratio >= 0.5 && ratio <= 2.0, detail.str()};
}

// ---------------------------------------------------------------- algebra

ForwardMap smooth_map(Eigen::Index d, Eigen::Index n_obs) {
    Philox rng(123, 9);
    const Eigen::MatrixXd a = random_matrix(n_obs, d, rng);
    return [a](const ParameterVector& u) -> ObservationVector {
        return (a * u).array().sin() + 0.3 * (a * u).array().square();
    };
}

Outcome algebraic_identities() {
    const Eigen::Index d = 3, n_obs = 12;
    Philox rng(4, 4);
    const Eigen::MatrixXd l = random_matrix(d, d, rng);
    const PriorModel prior(l * l.transpose() + Eigen::MatrixXd::Identity(d, d), 0.7);
    const Eigen::VectorXd var = (random_vector(n_obs, rng).array().square() + 0.5).matrix();
    const InverseProblem p(smooth_map(d, n_obs), random_vector(n_obs, rng), NoiseModel::diagonal(var), prior, d);
    const AugmentedProblem aug = augment(p);

    double drift_vi = 0.0, drift_aug = 0.0, phi = 0.0;
    for (int k = 0; k < 20; ++k) {
        const Ensemble e(random_matrix(d, 4, rng));
        const double rho = 0.1 + 0.8 * rng.uniform();
        const Eigen::MatrixXd a = rhs_variance_inflated(e, p, rho);
        const Eigen::MatrixXd b = rhs_variance_inflated_expanded(e, p, rho);
        drift_vi = std::max(drift_vi, (a - b).cwiseAbs().maxCoeff() / std::max(1.0, a.cwiseAbs().maxCoeff()));
        const Eigen::MatrixXd r = rhs_regularised(e, p);
        const Eigen::MatrixXd q = rhs_plain(e, aug.augmented);
        drift_aug = std::max(drift_aug, (r - q).cwiseAbs().maxCoeff() / std::max(1.0, r.cwiseAbs().maxCoeff()));
        for (Eigen::Index j = 0; j < e.size(); ++j) {
            const ParameterVector u = e.particle(j);
            const double lhs = potential(p, u);
            const ObservationVector res = aug.augmented.data() - aug.augmented.evaluate(u);
            const double rhs = 0.5 * aug.augmented.noise().weighted_norm_sq(res);
            phi = std::max(phi, std::abs(lhs - rhs) / std::abs(lhs));
        }
    }
    return {drift_vi < 1e-12 && drift_aug < 1e-12 && phi < 1e-10,
            fmt("inflated drift forms %.2e, augmented flow %.2e, potential %.2e (relative)", drift_vi, drift_aug, phi)};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> all = {
        {1, "manhattan transform of the 6x6 worked grid", 1e-3, worked_grid},
        {2, "distance transforms equal brute force", 10, transform_oracle},
        {3, "regularised EKI reaches the Tikhonov minimiser", 5, tikhonov_oracle},
        {4, "ensemble collapse rate", 5, collapse_rate},
        {5, "particles stay in the initial affine span", 5, subspace_property},
        {6, "subsampled flow matches the full-data limit", 30, subsampling_limit},
        {7, "subset drifts average to the full drift", 1, flow_average},
        {8, "index process holding times, jumps and switch count", 10, ctmp_laws},
        {9, "cantilever against Euler-Bernoulli", 60, rod_oracle},
        {10, "synthetic rod inversion, full and subsampled", 900, end_to_end},
        {11, "algebraic identities of the flows", 1, algebraic_identities},
    };
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

    int failures = 0;
    for (const auto& c : all) {
        if (!only.empty() && !only.count(c.id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = secs <= c.budget_s;
        const bool pass = o.pass && in_time;
        if (!pass) ++failures;
        std::printf("%s [%2d] %s: %s; %.3fs (budget %gs%s)\n", pass ? "PASS" : "FAIL", c.id, c.name.c_str(),
                    o.detail.c_str(), secs, c.budget_s, in_time ? "" : ", exceeded");
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
