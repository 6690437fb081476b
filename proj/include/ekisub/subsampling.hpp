#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "ekisub/eki_dynamics.hpp"
#include "ekisub/forward_problem.hpp"
#include "ekisub/random.hpp"

namespace ekisub {

/// Learning rate eta(t) = 1 / (a t + b). Up to t_cutoff switch times follow
/// the random holding-time law; afterwards n_post_switches switches happen at
/// equally spaced times on (t_cutoff, horizon].
struct LearningRateSchedule {
    double a = 10.0;
    double b = 10.0;
    double t_cutoff = std::numeric_limits<double>::infinity();
    int n_post_switches = 0;
    double horizon = std::numeric_limits<double>::infinity();

    double eta(double t) const { return 1.0 / (a * t + b); }
    /// int_0^dt eta(t0 + s)^{-1} ds
    double integrated_rate(double t0, double dt) const { return 0.5 * a * dt * dt + (a * t0 + b) * dt; }
    void validate() const;
};

/// N_sub x N_sub generator 1/((N-1) eta) * ones - N/((N-1) eta) * Id.
Eigen::MatrixXd transition_rate_matrix(int n_sub, double eta_t);

/// P(Delta >= dt | t0) = exp(-integrated_rate(t0, dt)).
double holding_time_survival(double t0, double dt, const LearningRateSchedule& sched);

/// Inverse-transform sample of the holding time that starts at t0.
double sample_holding_time(double t0, const LearningRateSchedule& sched, Philox& rng);

/// Piecewise-constant index process on {0, ..., N_sub - 1}.
/// The initial index is uniform; each switch moves to a uniformly chosen
/// different index.
class IndexProcess {
public:
    IndexProcess(int n_sub, LearningRateSchedule sched, std::uint64_t seed, std::uint64_t stream = 0);

    int n_sub() const noexcept { return n_sub_; }
    int index() const noexcept { return index_; }
    int initial_index() const noexcept { return initial_index_; }
    /// Time up to which the process has been advanced.
    double time() const noexcept { return time_; }
    /// Time of the next pending switch (infinity if none).
    double next_switch_time() const noexcept { return next_; }
    const std::vector<SwitchEvent>& switch_log() const noexcept { return log_; }
    const LearningRateSchedule& schedule() const noexcept { return sched_; }

    /// Performs every switch with time <= t. Requires t >= time().
    void advance(double t);

private:
    void schedule_next(double from);

    int n_sub_;
    LearningRateSchedule sched_;
    Philox rng_;
    int index_ = 0;
    int initial_index_ = 0;
    double time_ = 0.0;
    double next_ = std::numeric_limits<double>::infinity();
    int post_switches_done_ = 0;
    std::vector<SwitchEvent> log_;
};

IndexProcess advance_index(IndexProcess proc, double t);

enum class PartitionScheme { horizontal_bands, contiguous_blocks };

/// Row-major image geometry of the observation vector.
struct ImageLayout {
    Eigen::Index width = 0;
    Eigen::Index height = 0;
};

struct SubsetRange {
    Eigen::Index offset = 0;
    Eigen::Index length = 0;
};

/// Split of the data into contiguous subsets with their noise blocks and the
/// prior rescaled to C0 = (N_sub / alpha) D0.
class DataPartition {
public:
    /// Any number of subsets (including one) tiling [0, N_obs) in order.
    static DataPartition from_ranges(const InverseProblem& p, std::vector<SubsetRange> ranges);

    int size() const noexcept { return static_cast<int>(ranges_.size()); }
    const InverseProblem& full() const noexcept { return full_; }
    const PriorModel& subset_prior() const noexcept { return subset_prior_; }
    const std::vector<SubsetRange>& ranges() const noexcept { return ranges_; }

    ObservationVector subset_data(int i) const;
    const NoiseModel& subset_noise(int i) const;
    /// Rows of the subset i out of full forward outputs (vector or column-wise).
    Eigen::MatrixXd restrict(int i, const Eigen::MatrixXd& full_outputs) const;
    /// Phi_i^reg(u) = 0.5 |y_i - G_i(u)|^2_{Gamma_i} + 0.5 u^T C0^{-1} u.
    double subset_potential(int i, const ParameterVector& u) const;
    /// Concatenates per-subset vectors back into one observation vector.
    ObservationVector reassemble(const std::vector<ObservationVector>& parts) const;

private:
    DataPartition(const InverseProblem& p, std::vector<SubsetRange> ranges);

    InverseProblem full_;
    PriorModel subset_prior_;
    std::vector<SubsetRange> ranges_;
    std::vector<NoiseModel> noises_;
};

/// horizontal_bands needs `layout` and splits whole image rows (band heights
/// differ by at most one); contiguous_blocks splits the flat vector.
DataPartition partition(const InverseProblem& p, int n_sub, PartitionScheme scheme,
                        std::optional<ImageLayout> layout = std::nullopt);

/// Drift of the subsampled flow on subset i, multiplied by N_sub so that the
/// subset average reproduces the full-data regularised drift:
///   N_sub * [(1 - rho) D_j^{(i)} + rho * mean_k D_k^{(i)}],
///   D_j^{(i)} = -C^{uG_i} Gamma_i^{-1}(G_i(u_j) - y_i) - C^u C0^{-1} u_j.
/// One full forward run per particle; G_i is a slice of it.
Eigen::MatrixXd rhs_subsampled(const Ensemble& e, const DataPartition& part, int i, double rho_vi);

/// Flow driven by an IndexProcess; switch times are hard integration
/// boundaries. Diagnostics use the full-data potential.
Trajectory integrate_subsampled(const Ensemble& e0, const DataPartition& part, const FlowConfig& cfg,
                                const LearningRateSchedule& sched, std::uint64_t seed);

}  // namespace ekisub
