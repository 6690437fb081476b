#include "ekisub/ode.hpp"

#include <algorithm>
#include <cmath>

#include "ekisub/errors.hpp"

namespace ekisub {

namespace {

// Dormand-Prince tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192, a75 = -2187.0 / 6784, a76 = 11.0 / 84;
// b - b*, used for the embedded error estimate
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200, e6 = 22.0 / 525,
                 e7 = -1.0 / 40;
// continuous extension
constexpr double d1 = -12715105075.0 / 11282082432, d3 = 87487479700.0 / 32700410799,
                 d4 = -10690763975.0 / 1880347072, d5 = 701980252875.0 / 199316789632,
                 d6 = -1453857185.0 / 822651844, d7 = 69997945.0 / 29380423;

constexpr double kSafety = 0.9;
constexpr double kMinFactor = 0.2;
constexpr double kMaxFactor = 5.0;

}  // namespace

void DormandPrince::integrate(const Rhs& rhs, double& t, Eigen::VectorXd& y, double t_end,
                              std::span<const double> samples, const Observer& observe) {
    if (!(t_end >= t)) throw InvalidInput("integration end time precedes the current time");
    auto next = std::upper_bound(samples.begin(), samples.end(), t);
    if (t_end == t) return;

    const Eigen::Index n = y.size();
    Eigen::VectorXd k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), ys(n), ynew(n);

    auto scale_of = [&](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
        return (options_.abs_tol + options_.rel_tol * a.cwiseAbs().cwiseMax(b.cwiseAbs()).array()).matrix();
    };

    rhs(t, y, k1);
    ++stats_.rhs_calls;

    if (h_ <= 0.0) {
        if (options_.initial_step > 0.0) {
            h_ = options_.initial_step;
        } else {
            const Eigen::VectorXd sc = scale_of(y, y);
            const double d0 = n ? std::sqrt(y.cwiseQuotient(sc).squaredNorm() / n) : 0.0;
            const double d1n = n ? std::sqrt(k1.cwiseQuotient(sc).squaredNorm() / n) : 0.0;
            h_ = (d0 < 1e-5 || d1n < 1e-5) ? 1e-6 : 0.01 * d0 / d1n;
        }
        h_ = std::max(h_, options_.min_step);
    }

    while (t < t_end) {
        double h = std::min(h_, options_.max_step);
        bool clipped = false;
        if (t + 1.01 * h >= t_end) {
            h = t_end - t;
            clipped = true;
        }
        if (h < options_.min_step && !clipped)
            throw StiffnessError("step size " + std::to_string(h) + " fell below the minimum", t);

        ys = y + h * a21 * k1;
        rhs(t + c2 * h, ys, k2);
        ys = y + h * (a31 * k1 + a32 * k2);
        rhs(t + c3 * h, ys, k3);
        ys = y + h * (a41 * k1 + a42 * k2 + a43 * k3);
        rhs(t + c4 * h, ys, k4);
        ys = y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
        rhs(t + c5 * h, ys, k5);
        ys = y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
        rhs(t + h, ys, k6);
        ynew = y + h * (a71 * k1 + a73 * k3 + a74 * k4 + a75 * k5 + a76 * k6);
        rhs(t + h, ynew, k7);
        stats_.rhs_calls += 6;

        if (!ynew.allFinite()) throw NumericalError("integrator produced non-finite state at t=" + std::to_string(t));

        const Eigen::VectorXd err_vec = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
        const double err = n ? std::sqrt(err_vec.cwiseQuotient(scale_of(y, ynew)).squaredNorm() / n) : 0.0;

        if (err <= 1.0) {
            ++stats_.accepted;
            const double t_new = clipped ? t_end : t + h;
            if (observe) {
                // rcont layout follows the classic DOPRI5 dense output
                const Eigen::VectorXd diff = ynew - y;
                const Eigen::VectorXd bspl = h * k1 - diff;
                const Eigen::VectorXd r4 = diff - h * k7 - bspl;
                const Eigen::VectorXd r5 = h * (d1 * k1 + d3 * k3 + d4 * k4 + d5 * k5 + d6 * k6 + d7 * k7);
                for (; next != samples.end() && *next <= t_new; ++next) {
                    if (*next == t_new) {
                        observe(*next, ynew);
                        continue;
                    }
                    const double th = (*next - t) / h;
                    const double th1 = 1.0 - th;
                    observe(*next, y + th * (diff + th1 * (bspl + th * (r4 + th1 * r5))));
                }
            }
            t = t_new;
            y = ynew;
            k1 = k7;
            const double fac = err == 0.0 ? kMaxFactor
                                          : std::clamp(kSafety * std::pow(err, -0.2), kMinFactor, kMaxFactor);
            if (!clipped) h_ = h * fac;
        } else {
            ++stats_.rejected;
            h_ = h * std::max(kMinFactor, kSafety * std::pow(err, -0.2));
            if (h_ < options_.min_step)
                throw StiffnessError("step size " + std::to_string(h_) + " fell below the minimum", t);
        }
    }
}

}  // namespace ekisub
