// Command-line front end: forward, invert, invert-sub, diagnose.

#include <CLI11.hpp>
#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "ekisub/cli_harness.hpp"

namespace {

struct Overrides {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> workers;
    std::optional<std::string> out;
    std::optional<std::string> metric;
    std::optional<int> sigma;
    std::optional<std::string> data;
    std::vector<std::string> runs;
};

ekisub::RunConfig resolve(const Overrides& o) {
    ekisub::RunConfig cfg = o.config.empty() ? ekisub::RunConfig::defaults() : ekisub::load_config(o.config);
    if (o.seed) cfg.seed = *o.seed;
    if (o.workers) cfg.flow.workers = *o.workers;
    if (o.out) cfg.out = *o.out;
    if (o.metric) cfg.metric = ekisub::parse_metric(*o.metric);
    if (o.sigma) cfg.sigma = *o.sigma;
    if (o.data) cfg.data = *o.data;
    if (!o.runs.empty()) cfg.diagnose.runs = o.runs;
    return cfg;
}

void print_estimate(const ekisub::InversionResult& r, const ekisub::RunConfig& cfg) {
    std::cout.precision(8);
    std::cout << "density " << r.estimate_physical[0] << " kg/m^3\n"
              << "youngs_modulus " << r.estimate_physical[1] << " Pa\n"
              << "terminal mean residual " << r.terminal_residual << '\n'
              << "outputs in " << cfg.out << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Ensemble Kalman inversion of rod material parameters from images"};
    app.require_subcommand(1);
    app.set_version_flag("--version", ekisub::kVersion);

    Overrides o;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config, "JSON config or manifest")->check(CLI::ExistingFile);
        sub->add_option("--seed", o.seed, "Run seed");
        sub->add_option("--workers", o.workers, "Threads for forward evaluations")->check(CLI::Range(1u, 1024u));
        sub->add_option("--out", o.out, "Output directory");
        sub->add_option("--metric", o.metric, "Distance metric")->check(CLI::IsMember({"euclidean", "manhattan"}));
        sub->add_option("--sigma", o.sigma, "Threshold level")->check(CLI::Range(1, 255));
    };

    auto* forward = app.add_subcommand("forward", "Render the ground-truth rod and write its images");
    add_common(forward);
    auto* invert = app.add_subcommand("invert", "Full-data EKI");
    add_common(invert);
    invert->add_option("--data", o.data, "Image to invert (P5 or P6)");
    auto* invert_sub = app.add_subcommand("invert-sub", "EKI with randomly switched data subsets");
    add_common(invert_sub);
    invert_sub->add_option("--data", o.data, "Image to invert (P5 or P6)");
    auto* diagnose = app.add_subcommand("diagnose", "Rate fits and run comparisons");
    add_common(diagnose);
    diagnose->add_option("runs", o.runs, "Run directories or trajectory CSV files");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        const ekisub::RunConfig cfg = resolve(o);
        if (forward->parsed()) {
            const auto r = ekisub::cmd_forward(cfg);
            std::cout << "tip " << r.rod.tip().x() << ' ' << r.rod.tip().y() << " m\n"
                      << "image " << r.render.image.width << 'x' << r.render.image.height
                      << (r.render.clipped ? " (rod clipped at the frame)" : "") << '\n'
                      << "outputs in " << cfg.out << '\n';
            if (r.render.clipped) std::cerr << "warning: rod extends beyond the camera frame\n";
        } else if (invert->parsed()) {
            print_estimate(ekisub::cmd_invert(cfg), cfg);
        } else if (invert_sub->parsed()) {
            print_estimate(ekisub::cmd_invert_subsampled(cfg), cfg);
        } else if (diagnose->parsed()) {
            std::cout << ekisub::cmd_diagnose(cfg);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return ekisub::exit_code_for(e);
    }
    return 0;
}
