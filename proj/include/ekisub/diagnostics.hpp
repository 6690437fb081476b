#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ekisub/eki_dynamics.hpp"
#include "ekisub/forward_problem.hpp"

namespace ekisub {

struct TimeSeries {
    std::vector<double> time;
    std::vector<double> value;

    std::size_t size() const noexcept { return time.size(); }
};

/// (1/N_ens) sum_j Phi^reg(u_j(t)) at every sample, against the full data of p.
TimeSeries mean_residual(const Trajectory& traj, const InverseProblem& p);
/// The residual recorded during integration.
TimeSeries recorded_residual(const Trajectory& traj);
TimeSeries spread_series(const Trajectory& traj);
TimeSeries lambda_min_series(const Trajectory& traj);

struct RateFit {
    double slope = 0.0;
    double intercept = 0.0;  ///< log value at log t = 0
    double t_lo = 0.0;
    double t_hi = 0.0;
    double r_squared = 0.0;
    std::size_t samples = 0;
};

/// Least squares of log value on log t over samples with t in [t_lo, t_hi].
/// Needs at least 8 samples with t > 0; FitError names nonpositive values.
RateFit fit_power_law(const TimeSeries& series, double t_lo, double t_hi);

struct ComparisonReport {
    double t_lo = 0.0;  ///< common support
    double t_hi = 0.0;
    double tail_start = 0.0;
    double terminal_a = 0.0;
    double terminal_b = 0.0;
    double terminal_ratio = 0.0;     ///< terminal_a / terminal_b
    double max_log_distance = 0.0;   ///< max |log a - log b| over the tail
    std::vector<double> grid;
    std::vector<double> a;
    std::vector<double> b;
};

/// Log-log interpolation of both series onto `points` log-spaced times over
/// the common positive support. The tail is the upper `tail_fraction` of the
/// grid in log time. ComparisonError on disjoint supports.
ComparisonReport compare_runs(const TimeSeries& a, const TimeSeries& b, int points = 64, double tail_fraction = 0.5);
ComparisonReport compare_runs(const Trajectory& a, const Trajectory& b, int points = 64, double tail_fraction = 0.5);

/// Linear interpolation in (log t, log v); clamps outside the support.
double interpolate_log_log(const TimeSeries& s, double t);

/// Two-column CSV `t,<name>`.
void write_series_csv(const std::filesystem::path& path, const std::string& name, const TimeSeries& s);
void write_comparison_csv(const std::filesystem::path& path, const ComparisonReport& r);
std::string format_fit(const std::string& label, const RateFit& fit);
std::string format_comparison(const ComparisonReport& r);

}  // namespace ekisub
