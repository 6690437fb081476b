#include "ekisub/imaging.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "ekisub/errors.hpp"
#include "ekisub/parallel.hpp"

namespace ekisub {

RgbImage::RgbImage(int w, int h, std::uint8_t fill) : width(w), height(h) {
    if (w <= 0 || h <= 0) throw ConfigError("image dimensions must be positive");
    data.assign(3 * static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill);
}

GreyImage::GreyImage(int w, int h, std::uint8_t fill) : width(w), height(h) {
    if (w <= 0 || h <= 0) throw ConfigError("image dimensions must be positive");
    data.assign(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill);
}

Metric parse_metric(const std::string& name) {
    if (name == "euclidean") return Metric::euclidean;
    if (name == "manhattan") return Metric::manhattan;
    throw ConfigError("unknown metric '" + name + "' (expected euclidean or manhattan)");
}

std::string to_string(Metric m) { return m == Metric::euclidean ? "euclidean" : "manhattan"; }

ObservationVector DistanceMap::flatten() const {
    return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

void CameraConfig::validate() const {
    if (width <= 0 || height <= 0) throw ConfigError("camera image size must be positive");
    if (!(scale > 0.0) || !std::isfinite(scale)) throw ConfigError("camera scale must be positive");
    if (!(stroke_radius >= 0.0) || !std::isfinite(stroke_radius))
        throw ConfigError("stroke radius must be finite and >= 0");
    if (!std::isfinite(origin_x) || !std::isfinite(origin_y)) throw ConfigError("camera origin must be finite");
}

// ------------------------------------------------------------------ render

namespace {

double point_segment_distance_sq(double px, double py, double ax, double ay, double bx, double by) {
    const double dx = bx - ax, dy = by - ay;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0.0 ? ((px - ax) * dx + (py - ay) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double qx = ax + t * dx - px, qy = ay + t * dy - py;
    return qx * qx + qy * qy;
}

}  // namespace

RenderResult render_polyline(const Eigen::MatrixX3d& points, const CameraConfig& cam) {
    cam.validate();
    RenderResult out{RgbImage(cam.width, cam.height, 255), false};
    if (points.rows() < 2 || !points.allFinite()) return out;

    const Eigen::Index n = points.rows();
    Eigen::VectorXd px(n), py(n);
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        px[i] = cam.origin_x + cam.scale * points(i, 0);
        py[i] = cam.origin_y - cam.scale * points(i, 1);
        if (i > 0) total += std::hypot(px[i] - px[i - 1], py[i] - py[i - 1]);
    }
    if (total == 0.0) return out;

    const double r = cam.stroke_radius;
    const double r2 = r * r;
    for (Eigen::Index i = 0; i + 1 < n; ++i) {
        const double x0 = std::min(px[i], px[i + 1]) - r, x1 = std::max(px[i], px[i + 1]) + r;
        const double y0 = std::min(py[i], py[i + 1]) - r, y1 = std::max(py[i], py[i + 1]) + r;
        if (x0 < -0.5 || y0 < -0.5 || x1 > cam.width - 0.5 || y1 > cam.height - 0.5) out.clipped = true;
        const int ix0 = std::max(0, static_cast<int>(std::ceil(x0)));
        const int ix1 = std::min(cam.width - 1, static_cast<int>(std::floor(x1)));
        const int iy0 = std::max(0, static_cast<int>(std::ceil(y0)));
        const int iy1 = std::min(cam.height - 1, static_cast<int>(std::floor(y1)));
        for (int y = iy0; y <= iy1; ++y)
            for (int x = ix0; x <= ix1; ++x)
                if (point_segment_distance_sq(x, y, px[i], py[i], px[i + 1], py[i + 1]) <= r2) {
                    std::uint8_t* p = out.image.pixel(x, y);
                    p[0] = p[1] = p[2] = 0;
                }
    }
    return out;
}

RenderResult render(const RodState& rod, const CameraConfig& cam) { return render_polyline(rod.centerline(), cam); }

// ------------------------------------------------------------ grey / binary

GreyImage to_grey(const RgbImage& img) {
    GreyImage out(img.width, img.height);
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        const double luma = 0.299 * img.data[3 * i] + 0.587 * img.data[3 * i + 1] + 0.114 * img.data[3 * i + 2];
        out.data[i] = static_cast<std::uint8_t>(std::clamp(std::lround(luma), 0L, 255L));
    }
    return out;
}

BinaryImage threshold(const GreyImage& img, int sigma) {
    if (sigma < 1 || sigma > 255) throw ConfigError("threshold level must be in [1, 255], got " + std::to_string(sigma));
    BinaryImage out(img.width, img.height);
    for (std::size_t i = 0; i < img.data.size(); ++i) out.data[i] = img.data[i] <= sigma ? 0 : 255;
    return out;
}

// -------------------------------------------------------- distance transform

namespace {

constexpr double kUnreached = std::numeric_limits<double>::infinity();

// d[q] = min_v (q - v)^2 + f[v] over the finite entries of f, by the lower
// envelope of parabolas. `v` and `z` are scratch buffers.
void envelope_1d(const double* f, double* d, int n, std::vector<int>& v, std::vector<double>& z) {
    v.resize(static_cast<std::size_t>(n));
    z.resize(static_cast<std::size_t>(n) + 1);
    int k = -1;
    for (int q = 0; q < n; ++q) {
        if (f[q] == kUnreached) continue;
        const double fq = f[q] + static_cast<double>(q) * q;
        double s = -kUnreached;
        while (k >= 0) {
            const int p = v[static_cast<std::size_t>(k)];
            s = (fq - (f[p] + static_cast<double>(p) * p)) / (2.0 * (q - p));
            if (s > z[static_cast<std::size_t>(k)]) break;
            --k;
        }
        ++k;
        v[static_cast<std::size_t>(k)] = q;
        z[static_cast<std::size_t>(k)] = k == 0 ? -kUnreached : s;
        z[static_cast<std::size_t>(k) + 1] = kUnreached;
    }
    if (k < 0) {
        std::fill(d, d + n, kUnreached);
        return;
    }
    int j = 0;
    for (int q = 0; q < n; ++q) {
        while (z[static_cast<std::size_t>(j) + 1] < q) ++j;
        const int p = v[static_cast<std::size_t>(j)];
        const double dq = q - p;
        d[q] = dq * dq + f[p];
    }
}

// d[q] = min_v |q - v| + f[v] by a forward and a backward sweep.
void sweep_1d(const double* f, double* d, int n) {
    double run = kUnreached;
    for (int q = 0; q < n; ++q) {
        run = std::min(f[q], run + 1.0);
        d[q] = run;
    }
    run = kUnreached;
    for (int q = n - 1; q >= 0; --q) {
        run = std::min(d[q], run + 1.0);
        d[q] = run;
    }
}

}  // namespace

DistanceMap distance_transform(const BinaryImage& img, Metric metric, unsigned workers) {
    const int w = img.width, h = img.height;
    if (w <= 0 || h <= 0) throw InvalidInput("distance transform of an empty image");
    if (std::none_of(img.data.begin(), img.data.end(), [](std::uint8_t v) { return v == 0; }))
        throw DegenerateInput("distance transform needs at least one set pixel");

    std::vector<double> grid(img.data.size());
    for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = img.data[i] == 0 ? 0.0 : kUnreached;

    // Columns.
    std::vector<double> cols(grid.size());
    parallel_for(static_cast<std::size_t>(w), workers, [&](std::size_t x) {
        std::vector<double> f(static_cast<std::size_t>(h)), d(static_cast<std::size_t>(h));
        std::vector<int> v;
        std::vector<double> z;
        for (int y = 0; y < h; ++y) f[static_cast<std::size_t>(y)] = grid[static_cast<std::size_t>(y) * w + x];
        if (metric == Metric::euclidean)
            envelope_1d(f.data(), d.data(), h, v, z);
        else
            sweep_1d(f.data(), d.data(), h);
        for (int y = 0; y < h; ++y) cols[static_cast<std::size_t>(y) * w + x] = d[static_cast<std::size_t>(y)];
    });

    // Rows.
    DistanceMap out{w, h, std::vector<double>(grid.size())};
    parallel_for(static_cast<std::size_t>(h), workers, [&](std::size_t y) {
        const std::size_t row = y * static_cast<std::size_t>(w);
        std::vector<int> v;
        std::vector<double> z;
        if (metric == Metric::euclidean) {
            envelope_1d(cols.data() + row, out.values.data() + row, w, v, z);
            for (int x = 0; x < w; ++x) out.values[row + x] = std::sqrt(out.values[row + x]);
        } else {
            sweep_1d(cols.data() + row, out.values.data() + row, w);
        }
    });
    return out;
}

ObservationVector segment(const RodState& rod, const CameraConfig& cam, int sigma, Metric metric) {
    return distance_transform(threshold(to_grey(render(rod, cam).image), sigma), metric).flatten();
}

// ---------------------------------------------------------------- file I/O

namespace {

struct Header {
    std::string magic;
    int width = 0;
    int height = 0;
    int maxval = 0;
};

Header read_header(std::istream& in, const std::filesystem::path& path) {
    Header h;
    auto token = [&]() {
        std::string t;
        char c;
        while (in.get(c)) {
            if (c == '#') {
                std::string skip;
                std::getline(in, skip);
                continue;
            }
            if (std::isspace(static_cast<unsigned char>(c))) {
                if (!t.empty()) break;
                continue;
            }
            t.push_back(c);
        }
        if (t.empty()) throw IoError("truncated image header in " + path.string());
        return t;
    };
    h.magic = token();
    try {
        h.width = std::stoi(token());
        h.height = std::stoi(token());
        h.maxval = std::stoi(token());
    } catch (const std::logic_error&) {
        throw IoError("malformed image header in " + path.string());
    }
    if (h.width <= 0 || h.height <= 0 || h.maxval <= 0 || h.maxval > 255)
        throw IoError("unsupported image header in " + path.string() + " (need 8-bit samples)");
    return h;
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image " + path.string());
    return in;
}

void read_samples(std::istream& in, std::vector<std::uint8_t>& data, const std::filesystem::path& path) {
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (in.gcount() != static_cast<std::streamsize>(data.size()))
        throw IoError("image " + path.string() + " is shorter than its header declares");
}

template <class Image>
void write_any(const std::filesystem::path& path, const char* magic, const Image& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write image " + path.string());
    out << magic << '\n' << img.width << ' ' << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
    if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

void write_pgm(const std::filesystem::path& path, const GreyImage& img) { write_any(path, "P5", img); }
void write_ppm(const std::filesystem::path& path, const RgbImage& img) { write_any(path, "P6", img); }

GreyImage read_pgm(const std::filesystem::path& path) {
    auto in = open_in(path);
    const Header h = read_header(in, path);
    if (h.magic != "P5") throw IoError(path.string() + " is not a binary greymap (P5)");
    GreyImage img(h.width, h.height);
    read_samples(in, img.data, path);
    return img;
}

RgbImage read_ppm(const std::filesystem::path& path) {
    auto in = open_in(path);
    const Header h = read_header(in, path);
    if (h.magic != "P6") throw IoError(path.string() + " is not a binary pixmap (P6)");
    RgbImage img(h.width, h.height);
    read_samples(in, img.data, path);
    return img;
}

GreyImage read_grey_any(const std::filesystem::path& path) {
    auto in = open_in(path);
    const Header h = read_header(in, path);
    in.close();
    if (h.magic == "P5") return read_pgm(path);
    if (h.magic == "P6") return to_grey(read_ppm(path));
    throw IoError(path.string() + ": unsupported image format '" + h.magic + "' (expected P5 or P6)");
}

ObservationVector ingest(const std::filesystem::path& path, int sigma, Metric metric, int expected_width,
                         int expected_height) {
    const GreyImage grey = read_grey_any(path);
    if ((expected_width > 0 && grey.width != expected_width) || (expected_height > 0 && grey.height != expected_height))
        throw IoError(path.string() + " is " + std::to_string(grey.width) + "x" + std::to_string(grey.height) +
                      ", expected " + std::to_string(expected_width) + "x" + std::to_string(expected_height));
    return distance_transform(threshold(grey, sigma), metric).flatten();
}

void write_distance_csv(const std::filesystem::path& path, const DistanceMap& map) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out.precision(17);
    out << "x,y,distance\n";
    for (int y = 0; y < map.height; ++y)
        for (int x = 0; x < map.width; ++x) out << x << ',' << y << ',' << map.at(x, y) << '\n';
    if (!out) throw IoError("failed writing " + path.string());
}

GreyImage distance_to_grey(const DistanceMap& map) {
    GreyImage out(map.width, map.height);
    const double top = *std::max_element(map.values.begin(), map.values.end());
    for (std::size_t i = 0; i < map.values.size(); ++i)
        out.data[i] = top > 0.0 ? static_cast<std::uint8_t>(std::lround(255.0 * map.values[i] / top)) : 0;
    return out;
}

}  // namespace ekisub
