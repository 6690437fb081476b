#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>

namespace ekisub {

struct OdeOptions {
    double rel_tol = 1e-6;
    double abs_tol = 1e-9;
    double min_step = 1e-12;
    double max_step = std::numeric_limits<double>::infinity();
    /// 0 selects a step from the initial state and slope.
    double initial_step = 0.0;
};

struct OdeStats {
    std::size_t accepted = 0;
    std::size_t rejected = 0;
    std::size_t rhs_calls = 0;
};

/// Dormand-Prince 5(4) with first-same-as-last reuse and the order-4
/// continuous extension for output between steps.
class DormandPrince {
public:
    using Rhs = std::function<void(double t, const Eigen::VectorXd& y, Eigen::VectorXd& dydt)>;
    using Observer = std::function<void(double t, const Eigen::VectorXd& y)>;

    explicit DormandPrince(OdeOptions options = {}) : options_(options) {}

    /// Advances (t, y) to t_end. `samples` must be sorted; every sample in
    /// (t, t_end] is reported through `observe` using dense output. The last
    /// step size is kept as the hint for the next call. A fresh slope is
    /// computed at the start of every call, so callers may change the
    /// right-hand side between calls.
    void integrate(const Rhs& rhs, double& t, Eigen::VectorXd& y, double t_end, std::span<const double> samples = {},
                   const Observer& observe = {});

    const OdeStats& stats() const noexcept { return stats_; }
    const OdeOptions& options() const noexcept { return options_; }
    double step_hint() const noexcept { return h_; }

private:
    OdeOptions options_;
    OdeStats stats_;
    double h_ = 0.0;
};

}  // namespace ekisub
