#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ekisub/cosserat_rod.hpp"
#include "ekisub/ensemble.hpp"

namespace ekisub {

/// Interleaved 8-bit RGB, row-major from the top-left pixel.
struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;  ///< 3 * width * height

    RgbImage() = default;
    RgbImage(int w, int h, std::uint8_t fill = 255);
    std::uint8_t* pixel(int x, int y) { return &data[3 * (static_cast<std::size_t>(y) * width + x)]; }
    const std::uint8_t* pixel(int x, int y) const { return &data[3 * (static_cast<std::size_t>(y) * width + x)]; }
};

struct GreyImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;

    GreyImage() = default;
    GreyImage(int w, int h, std::uint8_t fill = 0);
    std::uint8_t& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
};

/// Grey image holding only 0 (set, black) and 255.
struct BinaryImage : GreyImage {
    using GreyImage::GreyImage;
    bool is_set(int x, int y) const { return at(x, y) == 0; }
};

enum class Metric { euclidean, manhattan };

Metric parse_metric(const std::string& name);
std::string to_string(Metric m);

/// Distances to the nearest set pixel, row-major.
struct DistanceMap {
    int width = 0;
    int height = 0;
    std::vector<double> values;

    double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
    ObservationVector flatten() const;
};

/// Orthographic projection onto the lab xy plane:
///   px = origin_x + scale * x,  py = origin_y - scale * y
/// Pixel centres sit at integer coordinates; a pixel is dark when its centre
/// lies within stroke_radius of the projected centreline.
struct CameraConfig {
    int width = 256;
    int height = 192;
    double scale = 400.0;  ///< pixels per metre
    double origin_x = 24.0;
    double origin_y = 60.0;
    double stroke_radius = 8.0;  ///< pixels

    void validate() const;
};

struct RenderResult {
    RgbImage image;
    bool clipped = false;  ///< part of the stroke fell outside the frame
};

RenderResult render(const RodState& rod, const CameraConfig& cam);
/// Same rasteriser for an explicit centreline (n x 3 lab coordinates).
RenderResult render_polyline(const Eigen::MatrixX3d& points, const CameraConfig& cam);

GreyImage to_grey(const RgbImage& img);

/// value <= sigma -> 0, otherwise 255. sigma in [1, 255].
BinaryImage threshold(const GreyImage& img, int sigma);

/// Exact transform: lower envelope of parabolas for euclidean, two chamfer
/// sweeps for manhattan. Rows and columns are split over `workers` threads;
/// the result does not depend on the worker count.
DistanceMap distance_transform(const BinaryImage& img, Metric metric, unsigned workers = 1);

ObservationVector segment(const RodState& rod, const CameraConfig& cam, int sigma, Metric metric);

/// Reads a P5 (grey) or P6 (RGB) image and runs grey -> threshold -> distance.
/// Non-positive expected sizes skip the size check.
ObservationVector ingest(const std::filesystem::path& path, int sigma, Metric metric, int expected_width = 0,
                         int expected_height = 0);

// Portable any-map I/O.
void write_pgm(const std::filesystem::path& path, const GreyImage& img);
void write_ppm(const std::filesystem::path& path, const RgbImage& img);
GreyImage read_pgm(const std::filesystem::path& path);
RgbImage read_ppm(const std::filesystem::path& path);

/// Either P5 or P6; RGB input is converted with to_grey.
GreyImage read_grey_any(const std::filesystem::path& path);

/// CSV with header `x,y,distance`, one row per pixel in row-major order.
void write_distance_csv(const std::filesystem::path& path, const DistanceMap& map);
/// Distances scaled so the maximum maps to 255.
GreyImage distance_to_grey(const DistanceMap& map);

}  // namespace ekisub
