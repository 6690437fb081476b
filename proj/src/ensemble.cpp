#include "ekisub/ensemble.hpp"

#include <cmath>
#include <string>

#include "ekisub/errors.hpp"

namespace ekisub {

Ensemble::Ensemble(Eigen::MatrixXd particles, double time) : particles_(std::move(particles)), time_(time) {
    if (particles_.cols() == 0) throw InvalidInput("ensemble must contain at least one particle");
    if (particles_.rows() == 0) throw InvalidInput("ensemble particles must have positive dimension");
    if (!particles_.allFinite()) throw InvalidInput("ensemble particles must be finite");
    if (!(time_ >= 0.0) || !std::isfinite(time_)) throw InvalidInput("ensemble time must be finite and nonnegative");
}

Ensemble Ensemble::from_particles(std::span<const ParameterVector> particles, double time) {
    if (particles.empty()) throw InvalidInput("ensemble must contain at least one particle");
    const Eigen::Index d = particles.front().size();
    Eigen::MatrixXd m(d, static_cast<Eigen::Index>(particles.size()));
    for (std::size_t j = 0; j < particles.size(); ++j) {
        if (particles[j].size() != d)
            throw InvalidInput("particle " + std::to_string(j) + " has dimension " +
                               std::to_string(particles[j].size()) + ", expected " + std::to_string(d));
        m.col(static_cast<Eigen::Index>(j)) = particles[j];
    }
    return Ensemble(std::move(m), time);
}

ParameterVector ensemble_mean(const Ensemble& e) { return e.particles().rowwise().mean(); }

Eigen::MatrixXd stack_columns(std::span<const ObservationVector> values) {
    if (values.empty()) throw InvalidInput("no observation vectors given");
    const Eigen::Index n = values.front().size();
    Eigen::MatrixXd m(n, static_cast<Eigen::Index>(values.size()));
    for (std::size_t j = 0; j < values.size(); ++j) {
        if (values[j].size() != n)
            throw InvalidInput("observation vector " + std::to_string(j) + " has length " +
                               std::to_string(values[j].size()) + ", expected " + std::to_string(n));
        m.col(static_cast<Eigen::Index>(j)) = values[j];
    }
    return m;
}

ObservationVector observation_mean(std::span<const ObservationVector> g_values) {
    return observation_mean(stack_columns(g_values));
}

ObservationVector observation_mean(const Eigen::MatrixXd& g_values) {
    if (g_values.cols() == 0) throw InvalidInput("no observation vectors given");
    return g_values.rowwise().mean();
}

Eigen::MatrixXd deviations(const Eigen::MatrixXd& columns) {
    if (columns.cols() == 0) return columns;
    const Eigen::MatrixXd shifted = columns.colwise() - Eigen::VectorXd(columns.col(0));
    return shifted.colwise() - shifted.rowwise().mean();
}

namespace {

void require_pair(const Ensemble& e) {
    if (e.size() < 2)
        throw InvalidInput("covariance needs at least two particles, got " + std::to_string(e.size()));
}

}  // namespace

Eigen::MatrixXd cross_covariance(const Ensemble& e, const Eigen::MatrixXd& g_values) {
    require_pair(e);
    if (g_values.cols() != e.size())
        throw InvalidInput("expected one forward value per particle (" + std::to_string(e.size()) + "), got " +
                           std::to_string(g_values.cols()));
    const Eigen::MatrixXd du = deviations(e.particles());
    const Eigen::MatrixXd dg = deviations(g_values);
    return du * dg.transpose() / static_cast<double>(e.size() - 1);
}

Eigen::MatrixXd cross_covariance(const Ensemble& e, std::span<const ObservationVector> g_values) {
    return cross_covariance(e, stack_columns(g_values));
}

Eigen::MatrixXd parameter_covariance(const Ensemble& e) {
    require_pair(e);
    const Eigen::MatrixXd du = deviations(e.particles());
    return du * du.transpose() / static_cast<double>(e.size() - 1);
}

double ensemble_spread(const Ensemble& e) {
    const Eigen::MatrixXd du = deviations(e.particles());
    return 0.5 * du.colwise().squaredNorm().mean();
}

}  // namespace ekisub
