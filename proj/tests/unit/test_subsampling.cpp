#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "ekisub/errors.hpp"
#include "ekisub/subsampling.hpp"
#include "../support/linear_benchmark.hpp"

using namespace ekisub;
using namespace ekisub::testing;

namespace {

double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

LearningRateSchedule schedule(double a, double b) {
    LearningRateSchedule s;
    s.a = a;
    s.b = b;
    return s;
}

}  // namespace

TEST_CASE("transition rate matrix") {
    const Eigen::MatrixXd two = transition_rate_matrix(2, 1.0);
    CHECK(two.isApprox((Eigen::Matrix2d() << -1, 1, 1, -1).finished()));
    for (int n : {2, 3, 5, 9})
        for (double eta : {0.01, 0.5, 3.0}) {
            const Eigen::MatrixXd q = transition_rate_matrix(n, eta);
            CHECK(q.rowwise().sum().cwiseAbs().maxCoeff() < 1e-12 * q.cwiseAbs().maxCoeff());
            CHECK(transition_rate_matrix(n, 4.0 * eta).isApprox(q / 4.0));
        }
    CHECK_THROWS_AS(transition_rate_matrix(1, 1.0), ConfigError);
}

TEST_CASE("holding time law") {
    const LearningRateSchedule constant = schedule(0.0, 2.0);
    CHECK(holding_time_survival(0.0, 0.0, constant) == 1.0);
    CHECK(holding_time_survival(3.0, 0.0, schedule(10, 10)) == 1.0);

    Philox rng(17);
    std::vector<double> xs(10000);
    for (auto& x : xs) x = sample_holding_time(0.0, constant, rng);
    // Rate 1/eta = b, mean 1/b.
    CHECK(mean_of(xs) == doctest::Approx(1.0 / constant.b).epsilon(0.05));
    CHECK(std::all_of(xs.begin(), xs.end(), [](double x) { return x > 0.0; }));

    Philox r0(5), r1(5);
    std::vector<double> flat(10000), decaying(10000);
    for (auto& x : flat) x = sample_holding_time(1.0, schedule(0.0, 10.0), r0);
    for (auto& x : decaying) x = sample_holding_time(1.0, schedule(10.0, 10.0), r1);
    CHECK(mean_of(decaying) < mean_of(flat));
}

TEST_CASE("sampled holding times solve the survival equation") {
    const LearningRateSchedule s = schedule(10.0, 10.0);
    Philox a(3), b(3);
    for (int k = 0; k < 100; ++k) {
        const double t0 = 0.37 * k;
        const double u = b.uniform();
        const double dt = sample_holding_time(t0, s, a);
        CHECK(holding_time_survival(t0, dt, s) == doctest::Approx(u).epsilon(1e-10));
    }
}

TEST_CASE("index process") {
    const LearningRateSchedule s = schedule(10.0, 10.0);
    const IndexProcess a = advance_index(IndexProcess(5, s, 11), 3.0);
    const IndexProcess b = advance_index(IndexProcess(5, s, 11), 3.0);
    CHECK(a.index() == b.index());
    CHECK(a.switch_log().size() == b.switch_log().size());
    CHECK(a.time() == 3.0);

    int prev = a.initial_index();
    double last = 0.0;
    for (const auto& ev : a.switch_log()) {
        CHECK(ev.index != prev);
        CHECK(ev.index >= 0);
        CHECK(ev.index < 5);
        CHECK(ev.time > last);
        prev = ev.index;
        last = ev.time;
    }
    CHECK(a.next_switch_time() > 3.0);

    IndexProcess c(5, s, 11);
    c.advance(2.0);
    CHECK_THROWS_AS(c.advance(1.0), InvalidInput);
}

TEST_CASE("initial index is uniform over seeds") {
    std::vector<double> counts(5, 0.0);
    for (std::uint64_t seed = 0; seed < 10000; ++seed) counts[IndexProcess(5, schedule(10, 10), seed).index()] += 1.0;
    double chi2 = 0.0;
    for (double c : counts) chi2 += (c - 2000.0) * (c - 2000.0) / 2000.0;
    CHECK(chi2 < 13.277);  // chi^2_4 at 1%
}

TEST_CASE("jump chain is uniform over the other states") {
    IndexProcess p(4, schedule(0.0, 1000.0), 8);
    p.advance(12.0);
    const auto& log = p.switch_log();
    REQUIRE(log.size() >= 10000);
    std::vector<double> counts(4 * 4, 0.0);
    int prev = p.initial_index();
    for (const auto& ev : log) {
        counts[static_cast<std::size_t>(prev * 4 + ev.index)] += 1.0;
        prev = ev.index;
    }
    double chi2 = 0.0;
    for (int from = 0; from < 4; ++from) {
        double row = 0.0;
        for (int to = 0; to < 4; ++to) row += counts[static_cast<std::size_t>(from * 4 + to)];
        CHECK(counts[static_cast<std::size_t>(from * 5)] == 0.0);
        for (int to = 0; to < 4; ++to)
            if (to != from) {
                const double c = counts[static_cast<std::size_t>(from * 4 + to)];
                chi2 += (c - row / 3) * (c - row / 3) / (row / 3);
            }
    }
    CHECK(chi2 < 20.09);  // chi^2_8 at 1%
}

TEST_CASE("switch count on [0, 10] with a = b = 10") {
    const LearningRateSchedule s = schedule(10.0, 10.0);
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto n = advance_index(IndexProcess(5, s, seed), 10.0).switch_log().size();
        CHECK(n >= 400);
        CHECK(n <= 800);
    }
}

TEST_CASE("post-cutoff switches are equally spaced and end at the horizon") {
    LearningRateSchedule s = schedule(10.0, 10.0);
    s.t_cutoff = 1.0;
    s.n_post_switches = 4;
    s.horizon = 3.0;
    const IndexProcess p = advance_index(IndexProcess(3, s, 2), 10.0);
    std::vector<double> late;
    for (const auto& ev : p.switch_log()) {
        if (ev.time > 1.0) late.push_back(ev.time);
        else CHECK(ev.time <= 1.0);
    }
    REQUIRE(late.size() == 4);
    CHECK(late[0] == doctest::Approx(1.5));
    CHECK(late[1] == doctest::Approx(2.0));
    CHECK(late[2] == doctest::Approx(2.5));
    CHECK(late[3] == 3.0);
    CHECK(std::isinf(p.next_switch_time()));

    LearningRateSchedule bad = s;
    bad.horizon = 0.5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = schedule(-1.0, 1.0);
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = schedule(1.0, 0.0);
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("partition geometry") {
    const Eigen::Index w = 705, h = 555;
    const InverseProblem image([](const ParameterVector&) -> ObservationVector { return Eigen::VectorXd::Zero(705 * 555); },
                               Eigen::VectorXd::LinSpaced(w * h, 0.0, 1.0), NoiseModel::identity(w * h),
                               PriorModel(Eigen::Matrix2d::Identity(), 1.0), 2);
    const DataPartition bands = partition(image, 5, PartitionScheme::horizontal_bands, ImageLayout{w, h});
    REQUIRE(bands.size() == 5);
    for (int i = 0; i < 5; ++i) {
        CHECK(bands.ranges()[static_cast<std::size_t>(i)].length == 111 * w);
        CHECK(bands.ranges()[static_cast<std::size_t>(i)].offset == 111 * w * i);
    }
    std::vector<ObservationVector> parts;
    for (int i = 0; i < 5; ++i) parts.push_back(bands.subset_data(i));
    CHECK(bands.reassemble(parts) == image.data());

    CHECK_THROWS_AS(partition(image, 5, PartitionScheme::horizontal_bands), ConfigError);
    CHECK_THROWS_AS(partition(image, 1, PartitionScheme::contiguous_blocks), ConfigError);

    const auto b = linear_benchmark(2, 2);
    const DataPartition halves = partition(b.problem, 2, PartitionScheme::contiguous_blocks);
    CHECK(halves.subset_data(0)[0] == b.problem.data()[0]);
    CHECK(halves.subset_data(1)[0] == b.problem.data()[1]);
    CHECK_THROWS_AS(partition(b.problem, 3, PartitionScheme::contiguous_blocks), ConfigError);

    const auto odd = linear_benchmark(2, 10);
    const DataPartition p4 = partition(odd.problem, 4, PartitionScheme::contiguous_blocks);
    Eigen::Index total = 0;
    for (const auto& r : p4.ranges()) {
        CHECK(r.length >= 2);
        CHECK(r.length <= 3);
        total += r.length;
    }
    CHECK(total == 10);
}

TEST_CASE("subset potentials sum to the full potential") {
    const auto b = linear_benchmark(3, 12, 0.6);
    const DataPartition part = partition(b.problem, 4, PartitionScheme::contiguous_blocks);
    CHECK(part.subset_prior().scale() == 4.0);
    Philox rng(3);
    for (int k = 0; k < 20; ++k) {
        const Eigen::VectorXd u = random_vector(3, rng) * 2.0;
        double sum = 0.0;
        for (int i = 0; i < part.size(); ++i) sum += part.subset_potential(i, u);
        const double full = potential(b.problem, u);
        CHECK(std::abs(sum - full) <= 1e-10 * full);
    }
}

TEST_CASE("subsampled drift") {
    const auto b = linear_benchmark(2, 12);
    const DataPartition part = partition(b.problem, 3, PartitionScheme::contiguous_blocks);
    Philox rng(4);

    SUBCASE("a single subset reduces to the regularised drift") {
        const DataPartition one = DataPartition::from_ranges(b.problem, {{0, 12}});
        const Ensemble e(random_matrix(2, 4, rng));
        const Eigen::MatrixXd d = rhs_subsampled(e, one, 0, 0.0) - rhs_regularised(e, b.problem);
        CHECK(d.cwiseAbs().maxCoeff() < 1e-13);
    }
    SUBCASE("identical particles have no drift") {
        const Ensemble same(Eigen::MatrixXd::Constant(2, 3, 0.9));
        for (int i = 0; i < part.size(); ++i) CHECK(rhs_subsampled(same, part, i, 0.0).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("average over subsets is the full drift") {
        for (int k = 0; k < 50; ++k) {
            const Ensemble e(random_matrix(2, 3 + k % 3, rng) * 2.0);
            Eigen::MatrixXd avg = Eigen::MatrixXd::Zero(2, e.size());
            for (int i = 0; i < part.size(); ++i) avg += rhs_subsampled(e, part, i, 0.0);
            avg /= part.size();
            const Eigen::MatrixXd full = rhs_regularised(e, b.problem);
            CHECK((avg - full).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, full.cwiseAbs().maxCoeff()));
        }
    }
    SUBCASE("argument checks") {
        const Ensemble e(random_matrix(2, 3, rng));
        CHECK_THROWS_AS(rhs_subsampled(e, part, 3, 0.0), InvalidInput);
        CHECK_THROWS_AS(rhs_subsampled(e, part, 0, 1.0), ConfigError);
    }
}

TEST_CASE("subsampled flow") {
    const auto b = linear_benchmark();
    const DataPartition part = partition(b.problem, 4, PartitionScheme::contiguous_blocks);
    FlowConfig cfg = tight_flow(20.0);
    cfg.rel_tol = 1e-6;
    cfg.abs_tol = 1e-9;
    const Ensemble e0 = triangle_ensemble(Eigen::VectorXd::Zero(2), 20.0);
    const LearningRateSchedule s = schedule(10.0, 10.0);

    const Trajectory a = integrate_subsampled(e0, part, cfg, s, 5);
    const Trajectory c = integrate_subsampled(e0, part, cfg, s, 5);
    REQUIRE(a.switches.size() == c.switches.size());
    for (std::size_t k = 0; k < a.switches.size(); ++k) {
        CHECK(a.switches[k].time == c.switches[k].time);
        CHECK(a.switches[k].index == c.switches[k].index);
    }
    CHECK(a.final_ensemble().particles() == c.final_ensemble().particles());
    CHECK(a.switches.front().time == 0.0);
    for (const auto& smp : a.samples) CHECK(std::isfinite(smp.mean_residual));

    const Trajectory other = integrate_subsampled(e0, part, cfg, s, 6);
    CHECK(other.switches.size() != a.switches.size());

    const Eigen::VectorXd full = ensemble_mean(integrate(e0, b.problem, cfg).final_ensemble());
    const Eigen::VectorXd sub = ensemble_mean(a.final_ensemble());
    CHECK((sub - full).norm() / full.norm() < 5e-2);
}
