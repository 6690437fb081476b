#include "ekisub/cli_harness.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <set>
#include <sstream>

#include "ekisub/errors.hpp"
#include "ekisub/random.hpp"

namespace ekisub {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

Eigen::VectorXd ParameterScaling::to_physical(const Eigen::VectorXd& u) const {
    if (u.size() != 2) throw InvalidInput("expected two parameters (density, modulus)");
    return offset + scale.cwiseProduct(u);
}

Eigen::VectorXd ParameterScaling::to_rescaled(const Eigen::VectorXd& physical) const {
    if (physical.size() != 2) throw InvalidInput("expected two parameters (density, modulus)");
    return (physical - offset).cwiseQuotient(scale);
}

// ------------------------------------------------------------------ config

RunConfig RunConfig::defaults() {
    RunConfig c;
    c.rod.length = 0.5;
    c.rod.radius = 0.02;
    c.rod.n_elements = 10;
    c.rod.density = 1100.0;
    c.rod.youngs_modulus = 5.0e6;
    c.rod.tip_force = Eigen::Vector3d(0.0, 2.0, 0.0);
    c.rod.gravity = Eigen::Vector3d(0.0, -9.81, 0.0);
    c.rod.damping = 19.0;
    c.rod.t_end = 0.85;
    c.camera.origin_y = 96.0;
    c.camera.stroke_radius = c.rod.radius * c.camera.scale;
    c.scaling.offset = Eigen::Vector2d(900.0, 4.0e6);
    c.scaling.scale = Eigen::Vector2d(400.0, 2.0e6);
    c.ensemble.spread = 0.25;
    c.flow.variant = FlowVariant::variance_inflated;
    c.flow.rho_vi = 0.9;
    c.flow.t_end = 100.0;
    c.flow.rel_tol = 1e-3;
    c.flow.abs_tol = 1e-4;
    c.flow.min_step = 1e-10;
    c.flow.first_sample = 1e-3;
    c.flow.samples_per_decade = 8;
    c.schedule.a = 10.0;
    c.schedule.b = 10.0;
    c.schedule.t_cutoff = 10.0;
    c.schedule.n_post_switches = 100;
    c.schedule.horizon = c.flow.t_end;
    return c;
}

void RunConfig::validate(bool subsampled) const {
    rod.validate();
    camera.validate();
    if (sigma < 1 || sigma > 255) throw ConfigError("sigma must be in [1, 255], got " + std::to_string(sigma));
    if (!(noise_std > 0.0)) throw ConfigError("noise_std must be positive");
    if (!(alpha >= 0.0)) throw ConfigError("alpha must be >= 0");
    if (!(scaling.scale.array() > 0.0).all()) throw ConfigError("parameter scales must be positive");
    if (ensemble.size < 2) throw ConfigError("ensemble size must be at least 2");
    if (!(ensemble.spread >= 0.0)) throw ConfigError("ensemble spread must be >= 0");
    flow.validate();
    if (subsampled) {
        schedule.validate();
        if (ensemble.size <= 2) throw ConfigError("subsampled runs need N_ens > d = 2");
        if (n_sub < 2) throw ConfigError("n_sub must be at least 2");
    }
    if (!data.empty() && !fs::exists(data)) throw IoError("data image not found: " + data);
}

namespace {

double number_or_inf(const json& v) {
    if (v.is_null()) return std::numeric_limits<double>::infinity();
    return v.get<double>();
}

json inf_or_number(double v) { return std::isinf(v) ? json(nullptr) : json(v); }

// Reads known keys of one JSON object; anything left over is an error.
class Section {
public:
    Section(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
        if (!obj_.is_object()) throw ConfigError("config section '" + path_ + "' must be an object");
    }

    template <class Fn>
    void with(const std::string& key, Fn&& fn) {
        used_.insert(key);
        const auto it = obj_.find(key);
        if (it == obj_.end()) return;
        try {
            fn(*it);
        } catch (const json::exception& e) {
            throw ConfigError("bad value for '" + qualified(key) + "': " + e.what());
        }
    }

    template <class T>
    void get(const std::string& key, T& out) {
        with(key, [&](const json& v) { out = v.get<T>(); });
    }

    void get_inf(const std::string& key, double& out) {
        with(key, [&](const json& v) { out = number_or_inf(v); });
    }

    template <int N>
    void get_vec(const std::string& key, Eigen::Matrix<double, N, 1>& out) {
        with(key, [&](const json& v) {
            const auto vals = v.get<std::vector<double>>();
            if (vals.size() != static_cast<std::size_t>(N))
                throw ConfigError("'" + qualified(key) + "' needs " + std::to_string(N) + " entries");
            for (int i = 0; i < N; ++i) out[i] = vals[static_cast<std::size_t>(i)];
        });
    }

    const json* child(const std::string& key) {
        used_.insert(key);
        const auto it = obj_.find(key);
        return it == obj_.end() ? nullptr : &*it;
    }

    std::string qualified(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    void finish() const {
        for (auto it = obj_.begin(); it != obj_.end(); ++it)
            if (!used_.count(it.key())) throw ConfigError("unknown config key '" + qualified(it.key()) + "'");
    }

private:
    const json& obj_;
    std::string path_;
    std::set<std::string> used_;
};

FlowVariant parse_variant(const std::string& s) {
    if (s == "plain") return FlowVariant::plain;
    if (s == "regularised") return FlowVariant::regularised;
    if (s == "variance_inflated") return FlowVariant::variance_inflated;
    throw ConfigError("unknown flow variant '" + s + "'");
}

std::string variant_name(FlowVariant v) {
    switch (v) {
        case FlowVariant::plain: return "plain";
        case FlowVariant::regularised: return "regularised";
        case FlowVariant::variance_inflated: return "variance_inflated";
    }
    return "regularised";
}

FailurePolicy parse_policy(const std::string& s) {
    if (s == "regulariser_only") return FailurePolicy::regulariser_only;
    if (s == "fail") return FailurePolicy::fail;
    throw ConfigError("unknown failure policy '" + s + "'");
}

PartitionScheme parse_scheme(const std::string& s) {
    if (s == "horizontal_bands") return PartitionScheme::horizontal_bands;
    if (s == "contiguous_blocks") return PartitionScheme::contiguous_blocks;
    throw ConfigError("unknown partition scheme '" + s + "'");
}

json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

void read_rod(const json& j, RodConfig& r) {
    Section s(j, "rod");
    s.get("length", r.length);
    s.get("radius", r.radius);
    s.get("n_elements", r.n_elements);
    s.get("density", r.density);
    s.get("youngs_modulus", r.youngs_modulus);
    s.get("shear_modulus", r.shear_modulus);
    s.get("poisson_ratio", r.poisson_ratio);
    s.get("shear_correction", r.shear_correction);
    s.get_vec<3>("tip_force", r.tip_force);
    s.get_vec<3>("gravity", r.gravity);
    s.get("damping", r.damping);
    s.get("dt", r.dt);
    s.get("t_end", r.t_end);
    s.get_vec<3>("base", r.base);
    s.get_vec<3>("direction", r.direction);
    s.get_vec<3>("normal", r.normal);
    s.get("min_slenderness", r.min_slenderness);
    s.finish();
}

json write_rod(const RodConfig& r) {
    return json{{"length", r.length},
                {"radius", r.radius},
                {"n_elements", r.n_elements},
                {"density", r.density},
                {"youngs_modulus", r.youngs_modulus},
                {"shear_modulus", r.shear_modulus},
                {"poisson_ratio", r.poisson_ratio},
                {"shear_correction", r.shear_correction},
                {"tip_force", vec_json(r.tip_force)},
                {"gravity", vec_json(r.gravity)},
                {"damping", r.damping},
                {"dt", r.dt},
                {"t_end", r.t_end},
                {"base", vec_json(r.base)},
                {"direction", vec_json(r.direction)},
                {"normal", vec_json(r.normal)},
                {"min_slenderness", r.min_slenderness}};
}

void read_camera(const json& j, CameraConfig& c) {
    Section s(j, "camera");
    s.get("width", c.width);
    s.get("height", c.height);
    s.get("scale", c.scale);
    s.get("origin_x", c.origin_x);
    s.get("origin_y", c.origin_y);
    s.get("stroke_radius", c.stroke_radius);
    s.finish();
}

json write_camera(const CameraConfig& c) {
    return json{{"width", c.width},       {"height", c.height},     {"scale", c.scale},
                {"origin_x", c.origin_x}, {"origin_y", c.origin_y}, {"stroke_radius", c.stroke_radius}};
}

void read_flow(const json& j, FlowConfig& f) {
    Section s(j, "flow");
    s.with("variant", [&](const json& v) { f.variant = parse_variant(v.get<std::string>()); });
    s.get("rho_vi", f.rho_vi);
    s.get("t_end", f.t_end);
    s.get("rel_tol", f.rel_tol);
    s.get("abs_tol", f.abs_tol);
    s.get("min_step", f.min_step);
    s.get_inf("max_step", f.max_step);
    s.get("initial_step", f.initial_step);
    s.get("first_sample", f.first_sample);
    s.get("samples_per_decade", f.samples_per_decade);
    s.get("record_residual", f.record_residual);
    s.with("failure_policy", [&](const json& v) { f.failure_policy = parse_policy(v.get<std::string>()); });
    s.get("workers", f.workers);
    s.finish();
}

json write_flow(const FlowConfig& f) {
    return json{{"variant", variant_name(f.variant)},
                {"rho_vi", f.rho_vi},
                {"t_end", f.t_end},
                {"rel_tol", f.rel_tol},
                {"abs_tol", f.abs_tol},
                {"min_step", f.min_step},
                {"max_step", inf_or_number(f.max_step)},
                {"initial_step", f.initial_step},
                {"first_sample", f.first_sample},
                {"samples_per_decade", f.samples_per_decade},
                {"record_residual", f.record_residual},
                {"failure_policy", f.failure_policy == FailurePolicy::fail ? "fail" : "regulariser_only"},
                {"workers", f.workers}};
}

void read_schedule(const json& j, LearningRateSchedule& l) {
    Section s(j, "schedule");
    s.get("a", l.a);
    s.get("b", l.b);
    s.get_inf("t_cutoff", l.t_cutoff);
    s.get("n_post_switches", l.n_post_switches);
    s.get_inf("horizon", l.horizon);
    s.finish();
}

json write_schedule(const LearningRateSchedule& l) {
    return json{{"a", l.a},
                {"b", l.b},
                {"t_cutoff", inf_or_number(l.t_cutoff)},
                {"n_post_switches", l.n_post_switches},
                {"horizon", inf_or_number(l.horizon)}};
}

void apply_json(const json& root, RunConfig& c) {
    Section s(root, "");
    if (const json* j = s.child("rod")) read_rod(*j, c.rod);
    if (const json* j = s.child("camera")) read_camera(*j, c.camera);
    s.get("sigma", c.sigma);
    s.with("metric", [&](const json& v) { c.metric = parse_metric(v.get<std::string>()); });
    s.get_vec<2>("truth", c.truth);
    if (const json* j = s.child("scaling")) {
        Section sc(*j, "scaling");
        sc.get_vec<2>("offset", c.scaling.offset);
        sc.get_vec<2>("scale", c.scaling.scale);
        sc.finish();
    }
    s.get("noise_std", c.noise_std);
    s.get("synthetic_noise", c.synthetic_noise);
    if (const json* j = s.child("prior")) {
        Section sp(*j, "prior");
        sp.get("alpha", c.alpha);
        sp.with("d0", [&](const json& v) {
            const auto rows = v.get<std::vector<std::vector<double>>>();
            if (rows.size() != 2 || rows[0].size() != 2 || rows[1].size() != 2)
                throw ConfigError("'prior.d0' must be a 2x2 matrix");
            c.d0 << rows[0][0], rows[0][1], rows[1][0], rows[1][1];
        });
        sp.finish();
    }
    if (const json* j = s.child("ensemble")) {
        Section se(*j, "ensemble");
        se.get("size", c.ensemble.size);
        se.get_vec<2>("mean", c.ensemble.mean);
        se.get("spread", c.ensemble.spread);
        se.with("seed", [&](const json& v) {
            if (v.is_null())
                c.ensemble.seed.reset();
            else
                c.ensemble.seed = v.get<std::uint64_t>();
        });
        se.finish();
    }
    if (const json* j = s.child("flow")) read_flow(*j, c.flow);
    if (const json* j = s.child("schedule")) read_schedule(*j, c.schedule);
    s.get("n_sub", c.n_sub);
    s.with("partition", [&](const json& v) { c.partition = parse_scheme(v.get<std::string>()); });
    s.get("data", c.data);
    s.get("out", c.out);
    s.get("seed", c.seed);
    if (const json* j = s.child("diagnose")) {
        Section sd(*j, "diagnose");
        sd.get("runs", c.diagnose.runs);
        sd.get("fit_lo_fraction", c.diagnose.fit_lo_fraction);
        sd.get("fit_hi_fraction", c.diagnose.fit_hi_fraction);
        sd.finish();
    }
    s.finish();
}

json to_json(const RunConfig& c) {
    return json{
        {"rod", write_rod(c.rod)},
        {"camera", write_camera(c.camera)},
        {"sigma", c.sigma},
        {"metric", to_string(c.metric)},
        {"truth", vec_json(c.truth)},
        {"scaling", {{"offset", vec_json(c.scaling.offset)}, {"scale", vec_json(c.scaling.scale)}}},
        {"noise_std", c.noise_std},
        {"synthetic_noise", c.synthetic_noise},
        {"prior",
         {{"alpha", c.alpha},
          {"d0", std::vector<std::vector<double>>{{c.d0(0, 0), c.d0(0, 1)}, {c.d0(1, 0), c.d0(1, 1)}}}}},
        {"ensemble",
         {{"size", c.ensemble.size},
          {"mean", vec_json(c.ensemble.mean)},
          {"spread", c.ensemble.spread},
          {"seed", c.ensemble.seed ? json(*c.ensemble.seed) : json(nullptr)}}},
        {"flow", write_flow(c.flow)},
        {"schedule", write_schedule(c.schedule)},
        {"n_sub", c.n_sub},
        {"partition", c.partition == PartitionScheme::horizontal_bands ? "horizontal_bands" : "contiguous_blocks"},
        {"data", c.data},
        {"out", c.out},
        {"seed", c.seed},
        {"diagnose",
         {{"runs", c.diagnose.runs},
          {"fit_lo_fraction", c.diagnose.fit_lo_fraction},
          {"fit_hi_fraction", c.diagnose.fit_hi_fraction}}},
    };
}

}  // namespace

RunConfig config_from_json_text(const std::string& text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (root.is_object() && root.contains("config") && root.contains("command")) root = root["config"];
    RunConfig c = RunConfig::defaults();
    apply_json(root, c);
    return c;
}

RunConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return config_from_json_text(ss.str());
}

std::string config_to_json_text(const RunConfig& cfg) { return to_json(cfg).dump(2); }

// ----------------------------------------------------------- forward model

RodImageForward::RodImageForward(const RunConfig& cfg)
    : rod_(cfg.rod), camera_(cfg.camera), sigma_(cfg.sigma), metric_(cfg.metric), scaling_(cfg.scaling) {}

RodState RodImageForward::solve(const ParameterVector& u) const {
    return solve_rod(scaling_.to_physical(u), rod_);
}

ObservationVector RodImageForward::operator()(const ParameterVector& u) const {
    return segment(solve(u), camera_, sigma_, metric_);
}

Eigen::Index RodImageForward::output_size() const {
    return static_cast<Eigen::Index>(camera_.width) * camera_.height;
}

ForwardResult run_forward(const RunConfig& cfg, const Eigen::Vector2d& physical) {
    ForwardResult r;
    r.rod = solve_rod(physical, cfg.rod);
    r.render = render(r.rod, cfg.camera);
    r.binary = threshold(to_grey(r.render.image), cfg.sigma);
    r.distance = distance_transform(r.binary, cfg.metric, cfg.flow.workers);
    return r;
}

ObservationVector load_or_synthesise_data(const RunConfig& cfg) {
    if (!cfg.data.empty()) return ingest(cfg.data, cfg.sigma, cfg.metric, cfg.camera.width, cfg.camera.height);
    ObservationVector y = run_forward(cfg, cfg.truth).distance.flatten();
    if (cfg.synthetic_noise) {
        Philox rng(cfg.seed, 2);
        for (Eigen::Index i = 0; i < y.size(); ++i) y[i] += cfg.noise_std * rng.normal();
    }
    return y;
}

InverseProblem build_problem(const RunConfig& cfg, ObservationVector data) {
    const RodImageForward forward(cfg);
    if (data.size() != forward.output_size()) throw ConfigError("data length does not match the camera image size");
    const Eigen::Index n = data.size();
    NoiseModel noise = cfg.noise_std == 1.0 ? NoiseModel::identity(n)
                                            : NoiseModel::diagonal(Eigen::VectorXd::Constant(n, cfg.noise_std * cfg.noise_std));
    return InverseProblem(forward, std::move(data), std::move(noise), PriorModel(cfg.d0, cfg.alpha), 2);
}

Ensemble initial_ensemble(const RunConfig& cfg) {
    Philox rng(cfg.ensemble.seed.value_or(cfg.seed), 1);
    Eigen::MatrixXd particles(2, cfg.ensemble.size);
    for (int j = 0; j < cfg.ensemble.size; ++j)
        for (int i = 0; i < 2; ++i) particles(i, j) = cfg.ensemble.mean[i] + cfg.ensemble.spread * rng.normal();
    return Ensemble(particles);
}

// -------------------------------------------------------------------- CSV

namespace {

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out.precision(17);
    return out;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream ss(line);
    while (std::getline(ss, cur, ',')) out.push_back(cur);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double parse_double(const std::string& s, std::size_t line) {
    std::string t = s;
    while (!t.empty() && (t.back() == '\r' || t.back() == ' ')) t.pop_back();
    double v = 0.0;
    const auto* first = t.data();
    const auto* last = t.data() + t.size();
    if (!t.empty() && *first == '+') ++first;
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (t.empty() || ec != std::errc() || ptr != last) throw ParseError("not a number: '" + s + "'", line);
    return v;
}

std::ifstream open_in(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    return in;
}

void write_estimate(const fs::path& path, const Eigen::VectorXd& rescaled, const Eigen::VectorXd& physical) {
    auto out = open_out(path);
    out << "parameter,rescaled,physical\n";
    out << "density," << rescaled[0] << ',' << physical[0] << '\n';
    out << "youngs_modulus," << rescaled[1] << ',' << physical[1] << '\n';
}

void write_final_ensemble(const fs::path& path, const Ensemble& e, const ParameterScaling& scaling) {
    auto out = open_out(path);
    out << "particle,u0,u1,density,youngs_modulus\n";
    for (Eigen::Index j = 0; j < e.size(); ++j) {
        const Eigen::VectorXd u = e.particle(j);
        const Eigen::VectorXd p = scaling.to_physical(u);
        out << j << ',' << u[0] << ',' << u[1] << ',' << p[0] << ',' << p[1] << '\n';
    }
}

void write_failures(const fs::path& path, const std::vector<FailureEvent>& failures) {
    auto out = open_out(path);
    out << "t,particle,message\n";
    for (const auto& f : failures) {
        std::string msg = f.message;
        for (char& ch : msg)
            if (ch == ',' || ch == '\n') ch = ' ';
        out << f.time << ',' << f.particle << ',' << msg << '\n';
    }
}

}  // namespace

void write_trajectory_csv(const fs::path& path, const Trajectory& traj) {
    auto out = open_out(path);
    out << "t,mean_residual,spread,lambda_min";
    const Eigen::Index d = traj.samples.empty() ? 0 : traj.samples.front().particles.rows();
    const Eigen::Index n = traj.samples.empty() ? 0 : traj.samples.front().particles.cols();
    for (Eigen::Index i = 0; i < d; ++i) out << ",mean_u" << i;
    for (Eigen::Index j = 0; j < n; ++j)
        for (Eigen::Index i = 0; i < d; ++i) out << ",p" << j << "_u" << i;
    out << '\n';
    for (const auto& s : traj.samples) {
        out << s.time << ',' << s.mean_residual << ',' << s.spread << ',' << s.lambda_min;
        const Eigen::VectorXd mean = s.particles.rowwise().mean();
        for (Eigen::Index i = 0; i < d; ++i) out << ',' << mean[i];
        for (Eigen::Index j = 0; j < n; ++j)
            for (Eigen::Index i = 0; i < d; ++i) out << ',' << s.particles(i, j);
        out << '\n';
    }
    if (!out) throw IoError("failed writing " + path.string());
}

Trajectory read_trajectory_csv(const fs::path& path) {
    auto in = open_in(path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path.string() + ": empty file", 1);
    const auto header = split_csv(line);
    if (header.size() < 4 || header[0] != "t" || header[1] != "mean_residual" || header[2] != "spread" ||
        header[3] != "lambda_min")
        throw ParseError(path.string() + ": expected header t,mean_residual,spread,lambda_min,...", 1);
    // mean_u* columns are derived from the particles and skipped.
    std::size_t first = 4;
    while (first < header.size() && header[first].rfind("mean_u", 0) == 0) ++first;
    Eigen::Index n = 0, d = 0;
    for (std::size_t k = first; k < header.size(); ++k) {
        int j = -1, i = -1;
        if (std::sscanf(header[k].c_str(), "p%d_u%d", &j, &i) != 2 || j < 0 || i < 0)
            throw ParseError(path.string() + ": bad particle column '" + header[k] + "'", 1);
        n = std::max<Eigen::Index>(n, j + 1);
        d = std::max<Eigen::Index>(d, i + 1);
    }
    if (static_cast<std::size_t>(n * d) + first != header.size())
        throw ParseError(path.string() + ": particle columns do not form a full grid", 1);

    Trajectory traj;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        const auto cells = split_csv(line);
        if (cells.size() != header.size())
            throw ParseError(path.string() + ": expected " + std::to_string(header.size()) + " fields, found " +
                                 std::to_string(cells.size()),
                             lineno);
        TrajectorySample s;
        s.time = parse_double(cells[0], lineno);
        s.mean_residual = parse_double(cells[1], lineno);
        s.spread = parse_double(cells[2], lineno);
        s.lambda_min = parse_double(cells[3], lineno);
        s.particles.resize(d, n);
        std::size_t k = first;
        for (Eigen::Index j = 0; j < n; ++j)
            for (Eigen::Index i = 0; i < d; ++i) s.particles(i, j) = parse_double(cells[k++], lineno);
        if (!traj.samples.empty() && !(s.time > traj.samples.back().time))
            throw ParseError(path.string() + ": sample times must increase", lineno);
        traj.samples.push_back(std::move(s));
    }
    if (traj.samples.empty()) throw ParseError(path.string() + ": no samples", lineno);
    return traj;
}

void write_switch_csv(const fs::path& path, const std::vector<SwitchEvent>& switches) {
    auto out = open_out(path);
    out << "switch_time,new_index\n";
    for (const auto& s : switches) out << s.time << ',' << s.index << '\n';
    if (!out) throw IoError("failed writing " + path.string());
}

std::vector<SwitchEvent> read_switch_csv(const fs::path& path) {
    auto in = open_in(path);
    std::string line;
    if (!std::getline(in, line) || split_csv(line) != std::vector<std::string>{"switch_time", "new_index"})
        throw ParseError(path.string() + ": expected header switch_time,new_index", 1);
    std::vector<SwitchEvent> out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto cells = split_csv(line);
        if (cells.size() != 2) throw ParseError(path.string() + ": expected 2 fields", lineno);
        const double idx = parse_double(cells[1], lineno);
        if (idx != std::floor(idx) || idx < 0) throw ParseError(path.string() + ": index must be a natural number", lineno);
        out.push_back({parse_double(cells[0], lineno), static_cast<int>(idx)});
    }
    return out;
}

void write_manifest(const fs::path& dir, const std::string& command, const RunConfig& cfg) {
    const json m{{"version", kVersion}, {"command", command}, {"config", to_json(cfg)}};
    auto out = open_out(dir / "manifest.json");
    out << m.dump(2) << '\n';
    if (!out) throw IoError("failed writing manifest in " + dir.string());
}

// --------------------------------------------------------------- commands

namespace {

fs::path prepare_out(const RunConfig& cfg) {
    const fs::path dir(cfg.out);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
    return dir;
}

InversionResult finish_inversion(const RunConfig& cfg, const fs::path& dir, Trajectory traj, const char* command) {
    InversionResult r;
    const Ensemble final = traj.final_ensemble();
    r.estimate_rescaled = ensemble_mean(final);
    r.estimate_physical = cfg.scaling.to_physical(r.estimate_rescaled);
    r.terminal_residual = traj.samples.back().mean_residual;

    write_trajectory_csv(dir / "trajectory.csv", traj);
    write_final_ensemble(dir / "final_ensemble.csv", final, cfg.scaling);
    write_estimate(dir / "estimate.csv", r.estimate_rescaled, r.estimate_physical);
    write_failures(dir / "failures.csv", traj.failures);
    {
        auto out = open_out(dir / "summary.txt");
        out.precision(10);
        out << "command " << command << '\n'
            << "final time " << traj.samples.back().time << '\n'
            << "estimate density " << r.estimate_physical[0] << " kg/m^3\n"
            << "estimate youngs_modulus " << r.estimate_physical[1] << " Pa\n"
            << "terminal mean residual " << r.terminal_residual << '\n'
            << "forward evaluations " << traj.forward_evaluations << '\n'
            << "diagnostic evaluations " << traj.diagnostic_evaluations << '\n'
            << "accepted steps " << traj.ode.accepted << '\n'
            << "rejected steps " << traj.ode.rejected << '\n'
            << "failed evaluations " << traj.failures.size() << '\n';
        if (!traj.switches.empty()) out << "data switches " << traj.switches.size() - 1 << '\n';
    }
    write_manifest(dir, command, cfg);
    r.trajectory = std::move(traj);
    return r;
}

}  // namespace

ForwardResult cmd_forward(const RunConfig& cfg) {
    cfg.validate();
    const fs::path dir = prepare_out(cfg);
    ForwardResult r = run_forward(cfg, cfg.truth);
    write_ppm(dir / "render.ppm", r.render.image);
    write_pgm(dir / "binary.pgm", r.binary);
    write_pgm(dir / "distance.pgm", distance_to_grey(r.distance));
    write_distance_csv(dir / "distance.csv", r.distance);
    write_rod_csv(dir / "rod.csv", r.rod);
    write_manifest(dir, "forward", cfg);
    return r;
}

InversionResult cmd_invert(const RunConfig& cfg) {
    cfg.validate();
    const fs::path dir = prepare_out(cfg);
    const InverseProblem problem = build_problem(cfg, load_or_synthesise_data(cfg));
    Trajectory traj = integrate(initial_ensemble(cfg), problem, cfg.flow);
    return finish_inversion(cfg, dir, std::move(traj), "invert");
}

InversionResult cmd_invert_subsampled(const RunConfig& cfg) {
    cfg.validate(true);
    const fs::path dir = prepare_out(cfg);
    const InverseProblem problem = build_problem(cfg, load_or_synthesise_data(cfg));
    const DataPartition part =
        partition(problem, cfg.n_sub, cfg.partition, ImageLayout{cfg.camera.width, cfg.camera.height});
    Trajectory traj = integrate_subsampled(initial_ensemble(cfg), part, cfg.flow, cfg.schedule, cfg.seed);
    write_switch_csv(dir / "switches.csv", traj.switches);
    return finish_inversion(cfg, dir, std::move(traj), "invert-sub");
}

std::string cmd_diagnose(const RunConfig& cfg) {
    if (cfg.diagnose.runs.empty()) throw ConfigError("diagnose needs at least one run directory or trajectory file");
    std::vector<Trajectory> runs;
    for (const auto& r : cfg.diagnose.runs) {
        fs::path p(r);
        if (fs::is_directory(p)) p /= "trajectory.csv";
        if (!fs::exists(p)) throw IoError("trajectory not found: " + p.string());
        runs.push_back(read_trajectory_csv(p));
    }
    const fs::path dir = prepare_out(cfg);

    std::ostringstream text;
    auto fits = open_out(dir / "fits.csv");
    fits << "run,quantity,slope,intercept,r_squared,t_lo,t_hi,samples,status\n";
    for (std::size_t k = 0; k < runs.size(); ++k) {
        const auto& traj = runs[k];
        const double t_final = traj.samples.back().time;
        const double lo = cfg.diagnose.fit_lo_fraction * t_final, hi = cfg.diagnose.fit_hi_fraction * t_final;
        const std::string tag = "run" + std::to_string(k);
        write_series_csv(dir / (tag + "_residual.csv"), "mean_residual", recorded_residual(traj));
        write_series_csv(dir / (tag + "_spread.csv"), "spread", spread_series(traj));
        write_series_csv(dir / (tag + "_lambda_min.csv"), "lambda_min", lambda_min_series(traj));
        text << tag << " = " << cfg.diagnose.runs[k] << '\n';
        const std::pair<const char*, TimeSeries> series[] = {{"spread", spread_series(traj)},
                                                             {"mean_residual", recorded_residual(traj)},
                                                             {"lambda_min", lambda_min_series(traj)}};
        for (const auto& [name, s] : series) {
            try {
                const RateFit f = fit_power_law(s, lo, hi);
                fits << tag << ',' << name << ',' << f.slope << ',' << f.intercept << ',' << f.r_squared << ','
                     << f.t_lo << ',' << f.t_hi << ',' << f.samples << ",ok\n";
                text << "  " << format_fit(name, f) << '\n';
            } catch (const FitError& e) {
                std::string msg = e.what();
                for (char& ch : msg)
                    if (ch == ',') ch = ';';
                fits << tag << ',' << name << ",,,,,,," << msg << '\n';
                text << "  " << name << ": no fit (" << e.what() << ")\n";
            }
        }
    }

    auto cmp = open_out(dir / "comparisons.csv");
    cmp << "run_a,run_b,t_lo,t_hi,terminal_a,terminal_b,terminal_ratio,max_log_distance\n";
    for (std::size_t k = 1; k < runs.size(); ++k) {
        const ComparisonReport r = compare_runs(runs[0], runs[k]);
        cmp << "run0,run" << k << ',' << r.t_lo << ',' << r.t_hi << ',' << r.terminal_a << ',' << r.terminal_b << ','
            << r.terminal_ratio << ',' << r.max_log_distance << '\n';
        write_comparison_csv(dir / ("comparison_run0_run" + std::to_string(k) + ".csv"), r);
        text << "run0 vs run" << k << ":\n" << format_comparison(r) << '\n';
    }
    {
        auto out = open_out(dir / "report.txt");
        out << text.str();
    }
    write_manifest(dir, "diagnose", cfg);
    return text.str();
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ParseError*>(&e)) return 5;
    if (dynamic_cast<const ConfigError*>(&e)) return 2;
    if (dynamic_cast<const IoError*>(&e)) return 3;
    if (dynamic_cast<const NumericalError*>(&e) || dynamic_cast<const EvaluationError*>(&e)) return 4;
    return 1;
}

}  // namespace ekisub
