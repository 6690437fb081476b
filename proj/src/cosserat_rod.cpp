#include "ekisub/cosserat_rod.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <string>

#include "ekisub/errors.hpp"

namespace ekisub {

namespace {

using Eigen::Matrix3d;
using Eigen::Vector3d;

Matrix3d skew(const Vector3d& w) {
    Matrix3d k;
    k << 0.0, -w.z(), w.y(), w.z(), 0.0, -w.x(), -w.y(), w.x(), 0.0;
    return k;
}

// exp(skew(theta)) via Rodrigues.
Matrix3d rotation(const Vector3d& theta) {
    const double a2 = theta.squaredNorm();
    const Matrix3d k = skew(theta);
    double s, c;
    if (a2 < 1e-12) {
        s = 1.0 - a2 / 6.0;
        c = 0.5 - a2 / 24.0;
    } else {
        const double a = std::sqrt(a2);
        s = std::sin(a) / a;
        c = (1.0 - std::cos(a)) / a2;
    }
    return Matrix3d::Identity() + s * k + c * k * k;
}

// Inverse of rotation() for angles below pi.
Vector3d rotation_log(const Matrix3d& r) {
    const Vector3d v(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
    const double cos_a = std::clamp(0.5 * (r.trace() - 1.0), -1.0, 1.0);
    const double a = std::acos(cos_a);
    const double sin_a = std::sin(a);
    const double factor = a < 1e-6 ? 0.5 * (1.0 + a * a / 6.0) : 0.5 * a / sin_a;
    return factor * v;
}

Matrix3d rest_frame(const RodConfig& cfg) {
    const Vector3d d3 = cfg.direction.normalized();
    const Vector3d d1 = (cfg.normal - cfg.normal.dot(d3) * d3).normalized();
    const Vector3d d2 = d3.cross(d1);
    Matrix3d q;
    q.row(0) = d1.transpose();
    q.row(1) = d2.transpose();
    q.row(2) = d3.transpose();
    return q;
}

double node_mass(const RodState& s, const RodStiffness& k, int i) {
    const int n = s.n_elements();
    double len = 0.0;
    if (i > 0) len += s.rest_lengths[static_cast<std::size_t>(i - 1)];
    if (i < n) len += s.rest_lengths[static_cast<std::size_t>(i)];
    return 0.5 * k.line_density * len;
}

Vector3d element_inertia(const RodConfig& cfg, const RodStiffness& k, double rest_length) {
    return cfg.density * k.second_moments * rest_length;
}

double voronoi_rest_length(const RodState& s, std::size_t j) {
    return 0.5 * (s.rest_lengths[j] + s.rest_lengths[j + 1]);
}

void half_drift(RodState& s, double h) {
    for (std::size_t i = 0; i < s.positions.size(); ++i) s.positions[i] += h * s.velocities[i];
    for (std::size_t k = 0; k < s.directors.size(); ++k) s.directors[k] = rotation(-h * s.omega[k]) * s.directors[k];
}

void apply_clamp(RodState& s, const RodConfig& cfg) {
    s.positions[0] = cfg.base;
    s.velocities[0].setZero();
}

void check_state(const RodState& s, const RodConfig& cfg) {
    const double limit = 100.0 * cfg.length;
    for (std::size_t i = 0; i < s.positions.size(); ++i) {
        if (!s.positions[i].allFinite() || !s.velocities[i].allFinite() || (s.positions[i] - cfg.base).norm() > limit)
            throw SolverDivergence("rod state diverged at node " + std::to_string(i) + " (t = " +
                                       std::to_string(s.time) + ")",
                                   s.steps);
    }
    for (std::size_t k = 0; k < s.omega.size(); ++k)
        if (!s.omega[k].allFinite() || !s.directors[k].allFinite())
            throw SolverDivergence("rod frame diverged at element " + std::to_string(k), s.steps);
}

}  // namespace

// ------------------------------------------------------------------ config

double RodConfig::effective_shear_modulus() const {
    return shear_modulus > 0.0 ? shear_modulus : youngs_modulus / (2.0 * (1.0 + poisson_ratio));
}

double RodConfig::stable_dt() const {
    const double spacing = std::min(length / n_elements, 2.0 * radius);
    return 0.3 * spacing * std::sqrt(density / youngs_modulus);
}

void RodConfig::validate() const {
    if (n_elements < 4) throw ConfigError("rod needs at least 4 elements, got " + std::to_string(n_elements));
    if (!(length > 0.0) || !(radius > 0.0)) throw ConfigError("rod length and radius must be positive");
    if (length / radius < min_slenderness)
        throw ConfigError("rod is not slender: L / r = " + std::to_string(length / radius) + " < " +
                          std::to_string(min_slenderness));
    if (!(density > 0.0) || !std::isfinite(density)) throw ConfigError("rod density must be positive");
    if (!(youngs_modulus > 0.0) || !std::isfinite(youngs_modulus))
        throw ConfigError("Young's modulus must be positive");
    if (shear_modulus < 0.0) throw ConfigError("shear modulus must be >= 0");
    if (!(poisson_ratio > -1.0 && poisson_ratio <= 0.5)) throw ConfigError("Poisson ratio must lie in (-1, 0.5]");
    if (!(shear_correction > 0.0)) throw ConfigError("shear correction factor must be positive");
    if (!(damping >= 0.0)) throw ConfigError("damping must be >= 0");
    if (!(t_end > 0.0)) throw ConfigError("rod end time must be positive");
    if (dt < 0.0) throw ConfigError("rod time step must be >= 0");
    if (dt > stable_dt() * (1.0 + 1e-12))
        throw ConfigError("rod time step " + std::to_string(dt) + " exceeds the stability bound " +
                          std::to_string(stable_dt()));
    if (!tip_force.allFinite() || !gravity.allFinite() || !base.allFinite())
        throw ConfigError("rod loads and base must be finite");
    if (direction.norm() == 0.0) throw ConfigError("rod direction must be nonzero");
    if (direction.normalized().cross(normal).norm() < 1e-9)
        throw ConfigError("rod normal must not be parallel to its direction");
}

RodStiffness RodStiffness::from_config(const RodConfig& cfg) {
    RodStiffness k;
    const double r2 = cfg.radius * cfg.radius;
    k.area = std::numbers::pi * r2;
    const double i1 = std::numbers::pi * r2 * r2 / 4.0;
    k.second_moments = Vector3d(i1, i1, 2.0 * i1);
    const double g = cfg.effective_shear_modulus();
    k.bend = Vector3d(cfg.youngs_modulus * i1, cfg.youngs_modulus * i1, g * 2.0 * i1);
    k.shear = Vector3d(cfg.shear_correction * g * k.area, cfg.shear_correction * g * k.area, cfg.youngs_modulus * k.area);
    k.line_density = cfg.density * k.area;
    return k;
}

// ------------------------------------------------------------------- state

std::vector<double> RodState::stretch() const {
    std::vector<double> e(directors.size());
    for (std::size_t k = 0; k < e.size(); ++k) e[k] = (positions[k + 1] - positions[k]).norm() / rest_lengths[k];
    return e;
}

std::vector<Eigen::Vector3d> RodState::shear_strain() const {
    std::vector<Vector3d> s(directors.size());
    for (std::size_t k = 0; k < s.size(); ++k)
        s[k] = directors[k] * (positions[k + 1] - positions[k]) / rest_lengths[k] - Vector3d::UnitZ();
    return s;
}

std::vector<Eigen::Vector3d> RodState::curvature() const {
    std::vector<Vector3d> kappa(directors.empty() ? 0 : directors.size() - 1);
    for (std::size_t j = 0; j < kappa.size(); ++j)
        kappa[j] = rotation_log(directors[j] * directors[j + 1].transpose()) / voronoi_rest_length(*this, j);
    return kappa;
}

Eigen::MatrixX3d RodState::centerline() const {
    Eigen::MatrixX3d out(static_cast<Eigen::Index>(positions.size()), 3);
    for (std::size_t i = 0; i < positions.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = positions[i].transpose();
    return out;
}

double RodState::centerline_length() const {
    double len = 0.0;
    for (std::size_t i = 0; i + 1 < positions.size(); ++i) len += (positions[i + 1] - positions[i]).norm();
    return len;
}

double RodState::orthonormality_error() const {
    double worst = 0.0;
    for (const auto& q : directors) worst = std::max(worst, (q.transpose() * q - Matrix3d::Identity()).norm());
    return worst;
}

RodState build_rod(const RodConfig& cfg) {
    cfg.validate();
    const int n = cfg.n_elements;
    const Vector3d d3 = cfg.direction.normalized();
    const Matrix3d q0 = rest_frame(cfg);
    RodState s;
    s.positions.resize(static_cast<std::size_t>(n + 1));
    for (int i = 0; i <= n; ++i) s.positions[static_cast<std::size_t>(i)] = cfg.base + (cfg.length * i / n) * d3;
    s.velocities.assign(static_cast<std::size_t>(n + 1), Vector3d::Zero());
    s.directors.assign(static_cast<std::size_t>(n), q0);
    s.clamp_frame = q0;
    s.omega.assign(static_cast<std::size_t>(n), Vector3d::Zero());
    s.rest_lengths.resize(static_cast<std::size_t>(n));
    for (std::size_t k = 0; k < s.rest_lengths.size(); ++k)
        s.rest_lengths[k] = (s.positions[k + 1] - s.positions[k]).norm();
    return s;
}

// -------------------------------------------------------------------- step

void step(RodState& s, const RodStiffness& stiff, const RodConfig& cfg) {
    const std::size_t n = s.directors.size();
    const double h = cfg.time_step();

    half_drift(s, 0.5 * h);
    apply_clamp(s, cfg);

    // Element kinematics and internal shear/stretch stresses.
    std::vector<Vector3d> tangent(n), stress_local(n), stress_lab(n);
    std::vector<double> dil(n), current(n);
    for (std::size_t k = 0; k < n; ++k) {
        const Vector3d dx = s.positions[k + 1] - s.positions[k];
        current[k] = dx.norm();
        dil[k] = current[k] / s.rest_lengths[k];
        tangent[k] = dx / current[k];
        const Vector3d sigma = s.directors[k] * dx / s.rest_lengths[k] - Vector3d::UnitZ();
        stress_local[k] = stiff.shear.cwiseProduct(sigma);
        stress_lab[k] = s.directors[k].transpose() * stress_local[k] / dil[k];
    }

    // Bend/twist couples at interior nodes.
    const std::size_t nv = n - 1;
    std::vector<Vector3d> couple_term(nv), transport_term(nv);
    for (std::size_t j = 0; j < nv; ++j) {
        const double rest_v = voronoi_rest_length(s, j);
        const double eps = (current[j] + current[j + 1]) / (s.rest_lengths[j] + s.rest_lengths[j + 1]);
        const double inv_cube = 1.0 / (eps * eps * eps);
        const Vector3d kappa = rotation_log(s.directors[j] * s.directors[j + 1].transpose()) / rest_v;
        const Vector3d couple = stiff.bend.cwiseProduct(kappa);
        couple_term[j] = couple * inv_cube;
        transport_term[j] = kappa.cross(couple) * rest_v * inv_cube;
    }

    // Half-length joint between the fixed base frame and element 0.
    const double rest_c = 0.5 * s.rest_lengths[0];
    const double inv_cube_c = 1.0 / (dil[0] * dil[0] * dil[0]);
    const Vector3d kappa_c = rotation_log(s.clamp_frame * s.directors[0].transpose()) / rest_c;
    const Vector3d couple_c = stiff.bend.cwiseProduct(kappa_c);
    const Vector3d clamp_couple = couple_c * inv_cube_c;
    const Vector3d clamp_transport = kappa_c.cross(couple_c) * rest_c * inv_cube_c;

    // Linear momentum.
    for (std::size_t i = 1; i <= n; ++i) {
        Vector3d f = (i < n ? stress_lab[i] : Vector3d::Zero()) - stress_lab[i - 1];
        const double m = node_mass(s, stiff, static_cast<int>(i));
        f += m * cfg.gravity;
        if (i == n) f += cfg.tip_force;
        s.velocities[i] += (h / m) * f;
    }

    // Angular momentum.
    for (std::size_t k = 0; k < n; ++k) {
        const Vector3d zero = Vector3d::Zero();
        const Vector3d& c_next = k < nv ? couple_term[k] : zero;
        const Vector3d& t_next = k < nv ? transport_term[k] : zero;
        const Vector3d& c_prev = k > 0 ? couple_term[k - 1] : clamp_couple;
        const Vector3d& t_prev = k > 0 ? transport_term[k - 1] : clamp_transport;
        Vector3d torque = c_next - c_prev;
        torque += 0.5 * (t_next + t_prev);
        torque += (s.directors[k] * tangent[k]).cross(stress_local[k]) * s.rest_lengths[k];
        const Vector3d j_inertia = element_inertia(cfg, stiff, s.rest_lengths[k]);
        const Vector3d j_omega_e = j_inertia.cwiseProduct(s.omega[k]) / dil[k];
        torque += j_omega_e.cross(s.omega[k]);
        const double dil_rate = tangent[k].dot(s.velocities[k + 1] - s.velocities[k]) / s.rest_lengths[k];
        torque += j_omega_e * dil_rate / dil[k];
        s.omega[k] += h * torque.cwiseQuotient(j_inertia) * dil[k];
    }

    if (cfg.damping > 0.0) {
        const double decay = std::exp(-cfg.damping * h);
        for (auto& v : s.velocities) v *= decay;
        for (auto& w : s.omega) w *= decay;
    }

    half_drift(s, 0.5 * h);
    apply_clamp(s, cfg);
    s.time += h;
    ++s.steps;
    check_state(s, cfg);
}

RodState step(const RodState& state, const RodStiffness& stiff, const RodConfig& cfg) {
    RodState next = state;
    step(next, stiff, cfg);
    return next;
}

RodEnergy rod_energy(const RodState& s, const RodStiffness& stiff, const RodConfig& cfg) {
    RodEnergy out;
    const std::size_t n = s.directors.size();
    for (std::size_t i = 0; i <= n; ++i)
        out.kinetic += 0.5 * node_mass(s, stiff, static_cast<int>(i)) * s.velocities[i].squaredNorm();
    const auto sigma = s.shear_strain();
    for (std::size_t k = 0; k < n; ++k) {
        const Vector3d j_inertia = element_inertia(cfg, stiff, s.rest_lengths[k]);
        out.kinetic += 0.5 * s.omega[k].dot(j_inertia.cwiseProduct(s.omega[k]));
        out.elastic += 0.5 * sigma[k].dot(stiff.shear.cwiseProduct(sigma[k])) * s.rest_lengths[k];
    }
    const auto kappa = s.curvature();
    for (std::size_t j = 0; j < kappa.size(); ++j)
        out.elastic += 0.5 * kappa[j].dot(stiff.bend.cwiseProduct(kappa[j])) * voronoi_rest_length(s, j);
    const double rest_c = 0.5 * s.rest_lengths[0];
    const Vector3d kappa_c = rotation_log(s.clamp_frame * s.directors[0].transpose()) / rest_c;
    out.elastic += 0.5 * kappa_c.dot(stiff.bend.cwiseProduct(kappa_c)) * rest_c;
    return out;
}

// ------------------------------------------------------------------- solve

RodState solve_rod(const RodConfig& cfg, const RodObserver& observer, std::size_t every) {
    cfg.validate();
    const auto n_steps = static_cast<std::size_t>(std::ceil(cfg.t_end / cfg.time_step() - 1e-9));
    RodConfig run = cfg;
    run.dt = cfg.t_end / static_cast<double>(n_steps);
    const RodStiffness stiff = RodStiffness::from_config(run);
    RodState s = build_rod(run);
    if (observer) observer(s);
    for (std::size_t i = 0; i < n_steps; ++i) {
        step(s, stiff, run);
        if (observer && every > 0 && (s.steps % every == 0 || i + 1 == n_steps)) observer(s);
    }
    return s;
}

RodState solve_rod(const ParameterVector& physical, RodConfig cfg) {
    if (physical.size() != 2) throw InvalidInput("rod parameters must be (density, Young's modulus)");
    if (!(physical[0] > 0.0) || !(physical[1] > 0.0) || !physical.allFinite())
        throw DomainError("rod parameters must be positive, got density " + std::to_string(physical[0]) +
                          " and modulus " + std::to_string(physical[1]));
    cfg.density = physical[0];
    cfg.youngs_modulus = physical[1];
    if (cfg.dt > cfg.stable_dt()) cfg.dt = 0.0;
    return solve_rod(cfg);
}

void write_rod_csv(const std::filesystem::path& path, const RodState& state) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write rod snapshot to " + path.string());
    out.precision(17);
    out << "s,x,y,z\n";
    double s = 0.0;
    for (std::size_t i = 0; i < state.positions.size(); ++i) {
        const auto& p = state.positions[i];
        out << s << ',' << p.x() << ',' << p.y() << ',' << p.z() << '\n';
        if (i < state.rest_lengths.size()) s += state.rest_lengths[i];
    }
    if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace ekisub
