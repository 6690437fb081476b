#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ekisub/cosserat_rod.hpp"
#include "ekisub/diagnostics.hpp"
#include "ekisub/eki_dynamics.hpp"
#include "ekisub/imaging.hpp"
#include "ekisub/subsampling.hpp"

namespace ekisub {

inline constexpr const char* kVersion = "0.1.0";

/// physical = offset + scale .* rescaled, componentwise.
struct ParameterScaling {
    Eigen::Vector2d offset{900.0, 4.0e6};
    Eigen::Vector2d scale{400.0, 2.0e6};

    Eigen::VectorXd to_physical(const Eigen::VectorXd& u) const;
    Eigen::VectorXd to_rescaled(const Eigen::VectorXd& physical) const;
};

struct EnsembleSpec {
    int size = 3;
    Eigen::Vector2d mean{0.0, 0.0};
    double spread = 0.25;
    /// Falls back to the run seed when absent.
    std::optional<std::uint64_t> seed;
};

struct DiagnoseSpec {
    std::vector<std::string> runs;
    /// Window of the spread fit as fractions of the final time.
    double fit_lo_fraction = 1e-2;
    double fit_hi_fraction = 1.0;
};

struct RunConfig {
    RodConfig rod;
    CameraConfig camera;
    int sigma = 128;
    Metric metric = Metric::euclidean;
    /// Physical (density, modulus) of the synthetic ground truth.
    Eigen::Vector2d truth{1100.0, 5.0e6};
    ParameterScaling scaling;
    double noise_std = 1.0;
    /// Add N(0, noise_std^2) to synthesised data (seeded by `seed`).
    bool synthetic_noise = true;
    double alpha = 1e-2;
    Eigen::Matrix2d d0 = Eigen::Matrix2d::Identity();
    EnsembleSpec ensemble;
    FlowConfig flow;
    LearningRateSchedule schedule;
    int n_sub = 5;
    PartitionScheme partition = PartitionScheme::horizontal_bands;
    /// Image to invert; empty means synthesise from `truth`.
    std::string data;
    std::string out = "out";
    std::uint64_t seed = 1;
    DiagnoseSpec diagnose;

    /// Desk-scale defaults used when a key is absent.
    static RunConfig defaults();
    void validate(bool subsampled = false) const;
};

/// Reads a config file. A manifest (object with "config") is accepted too.
/// Unknown keys are configuration errors.
RunConfig load_config(const std::filesystem::path& path);
RunConfig config_from_json_text(const std::string& text);
std::string config_to_json_text(const RunConfig& cfg);

/// Forward operator u (rescaled) -> flattened distance map of the settled rod.
/// Stateless between calls and safe to share across threads.
class RodImageForward {
public:
    explicit RodImageForward(const RunConfig& cfg);
    ObservationVector operator()(const ParameterVector& u) const;
    RodState solve(const ParameterVector& u) const;
    Eigen::Index output_size() const;

private:
    RodConfig rod_;
    CameraConfig camera_;
    int sigma_;
    Metric metric_;
    ParameterScaling scaling_;
};

/// Observation data (file or synthetic truth) and the assembled problem.
InverseProblem build_problem(const RunConfig& cfg, ObservationVector data);
ObservationVector load_or_synthesise_data(const RunConfig& cfg);
Ensemble initial_ensemble(const RunConfig& cfg);

struct ForwardResult {
    RodState rod;
    RenderResult render;
    BinaryImage binary;
    DistanceMap distance;
};

struct InversionResult {
    Trajectory trajectory;
    Eigen::VectorXd estimate_rescaled;
    Eigen::VectorXd estimate_physical;
    double terminal_residual = 0.0;
};

ForwardResult run_forward(const RunConfig& cfg, const Eigen::Vector2d& physical);
ForwardResult cmd_forward(const RunConfig& cfg);
InversionResult cmd_invert(const RunConfig& cfg);
InversionResult cmd_invert_subsampled(const RunConfig& cfg);
/// Writes report.txt, fits.csv, comparisons.csv and plot-ready series;
/// returns the text.
std::string cmd_diagnose(const RunConfig& cfg);

// CSV artefacts.
void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj);
/// Parses a trajectory CSV written above; ParseError carries the line.
Trajectory read_trajectory_csv(const std::filesystem::path& path);
void write_switch_csv(const std::filesystem::path& path, const std::vector<SwitchEvent>& switches);
std::vector<SwitchEvent> read_switch_csv(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& dir, const std::string& command, const RunConfig& cfg);

/// Process exit code for an exception: 2 config, 3 I/O, 4 solver, 5 parse,
/// 1 anything else.
int exit_code_for(const std::exception& e);

}  // namespace ekisub
