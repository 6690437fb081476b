#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <vector>

#include "ekisub/ensemble.hpp"

namespace ekisub {

/// Clamped-free Cosserat rod. Units are SI; density is volumetric.
struct RodConfig {
    double length = 0.5;
    double radius = 0.02;
    int n_elements = 12;
    double density = 1000.0;
    double youngs_modulus = 1e8;
    /// 0 selects E / (2 (1 + poisson_ratio)).
    double shear_modulus = 0.0;
    double poisson_ratio = 0.5;
    double shear_correction = 4.0 / 3.0;
    Eigen::Vector3d tip_force{0.0, -1.0, 0.0};
    Eigen::Vector3d gravity{0.0, -9.81, 0.0};
    double damping = 0.0;  ///< velocity damping rate [1/s]
    /// 0 selects stable_dt() for the current density and modulus.
    double dt = 0.0;
    double t_end = 1.0;
    Eigen::Vector3d base{0.0, 0.0, 0.0};
    Eigen::Vector3d direction{1.0, 0.0, 0.0};  ///< rest tangent d3
    Eigen::Vector3d normal{0.0, 1.0, 0.0};     ///< rest d1
    double min_slenderness = 20.0;  ///< required L / r

    double effective_shear_modulus() const;
    /// 0.3 * min(L / n, 2 r) * sqrt(density / E). The radius term bounds the
    /// shear-rotation mode, whose frequency scales like 1 / r.
    double stable_dt() const;
    double time_step() const { return dt > 0.0 ? dt : stable_dt(); }
    void validate() const;
};

struct RodStiffness {
    double area = 0.0;
    Eigen::Vector3d second_moments = Eigen::Vector3d::Zero();  ///< I1, I2, I3
    Eigen::Vector3d bend = Eigen::Vector3d::Zero();            ///< diag B: E I1, E I2, G I3
    Eigen::Vector3d shear = Eigen::Vector3d::Zero();           ///< diag S: a G A, a G A, E A
    double line_density = 0.0;                                 ///< density * area [kg/m]

    static RodStiffness from_config(const RodConfig& cfg);
};

/// Nodes carry position and velocity; elements carry a director frame Q
/// (rows d1, d2, d3, so local = Q * lab) and an angular velocity in the
/// local frame. The clamped end fixes node 0 and the base frame; element 0
/// bends against the base frame through a half-length joint.
struct RodState {
    std::vector<Eigen::Vector3d> positions;   ///< n + 1
    std::vector<Eigen::Vector3d> velocities;  ///< n + 1
    std::vector<Eigen::Matrix3d> directors;   ///< n
    std::vector<Eigen::Vector3d> omega;       ///< n
    std::vector<double> rest_lengths;         ///< n
    Eigen::Matrix3d clamp_frame = Eigen::Matrix3d::Identity();
    double time = 0.0;
    std::size_t steps = 0;

    int n_elements() const noexcept { return static_cast<int>(directors.size()); }
    std::vector<double> stretch() const;
    std::vector<Eigen::Vector3d> shear_strain() const;
    std::vector<Eigen::Vector3d> curvature() const;  ///< n - 1, at interior nodes
    Eigen::MatrixX3d centerline() const;
    Eigen::Vector3d tip() const { return positions.back(); }
    double centerline_length() const;
    /// max over frames of ||Q^T Q - Id||_F
    double orthonormality_error() const;
};

RodState build_rod(const RodConfig& cfg);

/// One position-Verlet step: half drift, forces and torques, kick, half drift.
/// Throws SolverDivergence on non-finite or runaway state.
void step(RodState& state, const RodStiffness& stiff, const RodConfig& cfg);
RodState step(const RodState& state, const RodStiffness& stiff, const RodConfig& cfg);

struct RodEnergy {
    double kinetic = 0.0;
    double elastic = 0.0;
    double total() const { return kinetic + elastic; }
};

RodEnergy rod_energy(const RodState& state, const RodStiffness& stiff, const RodConfig& cfg);

/// Called every `every` steps with the current state.
using RodObserver = std::function<void(const RodState&)>;

/// Steps from build_rod to t_end.
RodState solve_rod(const RodConfig& cfg, const RodObserver& observer = {}, std::size_t every = 1);
/// Same with u = (density [kg/m^3], Young's modulus [Pa]); DomainError if
/// either is not positive.
RodState solve_rod(const ParameterVector& physical, RodConfig cfg);

/// CSV header `s,x,y,z`, one row per node; s is the rest arc length.
void write_rod_csv(const std::filesystem::path& path, const RodState& state);

}  // namespace ekisub
