#include "ekisub/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "ekisub/errors.hpp"

namespace ekisub {

namespace {

TimeSeries from_field(const Trajectory& traj, double TrajectorySample::*field) {
    return {traj.times(), traj.series(field)};
}

}  // namespace

TimeSeries mean_residual(const Trajectory& traj, const InverseProblem& p) {
    if (traj.samples.empty()) throw InvalidInput("trajectory is empty");
    TimeSeries out;
    for (const auto& s : traj.samples) {
        double sum = 0.0;
        for (Eigen::Index j = 0; j < s.particles.cols(); ++j) sum += potential(p, s.particles.col(j));
        out.time.push_back(s.time);
        out.value.push_back(sum / static_cast<double>(s.particles.cols()));
    }
    return out;
}

TimeSeries recorded_residual(const Trajectory& traj) { return from_field(traj, &TrajectorySample::mean_residual); }
TimeSeries spread_series(const Trajectory& traj) { return from_field(traj, &TrajectorySample::spread); }
TimeSeries lambda_min_series(const Trajectory& traj) { return from_field(traj, &TrajectorySample::lambda_min); }

RateFit fit_power_law(const TimeSeries& series, double t_lo, double t_hi) {
    if (series.time.size() != series.value.size()) throw InvalidInput("series time and value lengths differ");
    if (!(t_hi > t_lo)) throw FitError("empty fit window");
    std::vector<double> lx, ly;
    std::vector<double> bad;
    for (std::size_t i = 0; i < series.size(); ++i) {
        const double t = series.time[i];
        if (t < t_lo || t > t_hi || t <= 0.0) continue;
        if (!(series.value[i] > 0.0)) {
            bad.push_back(t);
            continue;
        }
        lx.push_back(std::log(t));
        ly.push_back(std::log(series.value[i]));
    }
    if (!bad.empty()) {
        std::ostringstream msg;
        msg.precision(6);
        msg << "power-law fit needs positive values; nonpositive at t =";
        for (double t : bad) msg << ' ' << t;
        throw FitError(msg.str());
    }
    if (lx.size() < 8)
        throw FitError("power-law fit needs at least 8 samples in [" + std::to_string(t_lo) + ", " +
                       std::to_string(t_hi) + "], found " + std::to_string(lx.size()));

    const auto n = static_cast<double>(lx.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        mx += lx[i];
        my += ly[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        sxx += (lx[i] - mx) * (lx[i] - mx);
        sxy += (lx[i] - mx) * (ly[i] - my);
        syy += (ly[i] - my) * (ly[i] - my);
    }
    if (sxx == 0.0) throw FitError("fit window holds a single time");
    RateFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    fit.t_lo = t_lo;
    fit.t_hi = t_hi;
    fit.samples = lx.size();
    double ss_res = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        const double r = ly[i] - (fit.intercept + fit.slope * lx[i]);
        ss_res += r * r;
    }
    fit.r_squared = syy > 0.0 ? 1.0 - ss_res / syy : 1.0;
    return fit;
}

double interpolate_log_log(const TimeSeries& s, double t) {
    if (s.size() == 0) throw InvalidInput("cannot interpolate an empty series");
    const auto it = std::lower_bound(s.time.begin(), s.time.end(), t);
    if (it == s.time.begin()) return s.value.front();
    if (it == s.time.end()) return s.value.back();
    const auto i = static_cast<std::size_t>(it - s.time.begin());
    const double t0 = s.time[i - 1], t1 = s.time[i];
    const double v0 = s.value[i - 1], v1 = s.value[i];
    if (t == t1) return v1;
    if (!(t0 > 0.0) || !(v0 > 0.0) || !(v1 > 0.0))
        throw ComparisonError("log-log interpolation needs positive times and values near t = " + std::to_string(t));
    const double w = std::log(t / t0) / std::log(t1 / t0);
    return std::exp((1.0 - w) * std::log(v0) + w * std::log(v1));
}

ComparisonReport compare_runs(const TimeSeries& a, const TimeSeries& b, int points, double tail_fraction) {
    if (points < 2) throw InvalidInput("comparison grid needs at least two points");
    if (!(tail_fraction > 0.0 && tail_fraction <= 1.0)) throw InvalidInput("tail fraction must lie in (0, 1]");
    auto positive_min = [](const TimeSeries& s) {
        for (double t : s.time)
            if (t > 0.0) return t;
        throw ComparisonError("series has no positive sample time");
    };
    if (a.size() == 0 || b.size() == 0) throw ComparisonError("cannot compare an empty series");
    ComparisonReport r;
    r.t_lo = std::max(positive_min(a), positive_min(b));
    r.t_hi = std::min(a.time.back(), b.time.back());
    if (!(r.t_hi > r.t_lo))
        throw ComparisonError("time supports do not overlap: [" + std::to_string(a.time.front()) + ", " +
                              std::to_string(a.time.back()) + "] vs [" + std::to_string(b.time.front()) + ", " +
                              std::to_string(b.time.back()) + "]");
    const double l0 = std::log(r.t_lo), l1 = std::log(r.t_hi);
    r.tail_start = std::exp(l1 - tail_fraction * (l1 - l0));
    for (int k = 0; k < points; ++k) {
        const double t = k + 1 == points ? r.t_hi : std::exp(l0 + (l1 - l0) * k / (points - 1));
        r.grid.push_back(t);
        r.a.push_back(interpolate_log_log(a, t));
        r.b.push_back(interpolate_log_log(b, t));
        if (t >= r.tail_start * (1.0 - 1e-12)) {
            if (!(r.a.back() > 0.0) || !(r.b.back() > 0.0))
                throw ComparisonError("nonpositive residual at t = " + std::to_string(t));
            r.max_log_distance = std::max(r.max_log_distance, std::abs(std::log(r.a.back() / r.b.back())));
        }
    }
    r.terminal_a = r.a.back();
    r.terminal_b = r.b.back();
    r.terminal_ratio = r.terminal_a / r.terminal_b;
    return r;
}

ComparisonReport compare_runs(const Trajectory& a, const Trajectory& b, int points, double tail_fraction) {
    return compare_runs(recorded_residual(a), recorded_residual(b), points, tail_fraction);
}

void write_series_csv(const std::filesystem::path& path, const std::string& name, const TimeSeries& s) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out.precision(17);
    out << "t," << name << '\n';
    for (std::size_t i = 0; i < s.size(); ++i) out << s.time[i] << ',' << s.value[i] << '\n';
    if (!out) throw IoError("failed writing " + path.string());
}

void write_comparison_csv(const std::filesystem::path& path, const ComparisonReport& r) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out.precision(17);
    out << "t,residual_a,residual_b\n";
    for (std::size_t i = 0; i < r.grid.size(); ++i) out << r.grid[i] << ',' << r.a[i] << ',' << r.b[i] << '\n';
    if (!out) throw IoError("failed writing " + path.string());
}

std::string format_fit(const std::string& label, const RateFit& fit) {
    std::ostringstream s;
    s.precision(6);
    s << label << ": slope " << fit.slope << ", intercept " << fit.intercept << ", R^2 " << fit.r_squared << " over ["
      << fit.t_lo << ", " << fit.t_hi << "] (" << fit.samples << " samples)";
    return s.str();
}

std::string format_comparison(const ComparisonReport& r) {
    std::ostringstream s;
    s.precision(6);
    s << "common support [" << r.t_lo << ", " << r.t_hi << "]\n"
      << "terminal residual a " << r.terminal_a << ", b " << r.terminal_b << ", ratio a/b " << r.terminal_ratio << '\n'
      << "max |log a - log b| for t >= " << r.tail_start << ": " << r.max_log_distance;
    return s.str();
}

}  // namespace ekisub
