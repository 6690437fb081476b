#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <vector>

#include "ekisub/imaging.hpp"
#include "ekisub/random.hpp"

namespace ekisub::testing {

/// Nearest set pixel by exhaustive scan. Returns squared euclidean or L1
/// integer distances, row-major.
inline std::vector<std::int64_t> brute_force_distance(const BinaryImage& img, Metric metric) {
    std::vector<std::pair<int, int>> set;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            if (img.is_set(x, y)) set.emplace_back(x, y);
    std::vector<std::int64_t> out(static_cast<std::size_t>(img.width) * img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            std::int64_t best = std::numeric_limits<std::int64_t>::max();
            for (const auto& [sx, sy] : set) {
                const std::int64_t dx = x - sx, dy = y - sy;
                const std::int64_t d = metric == Metric::euclidean ? dx * dx + dy * dy : std::abs(dx) + std::abs(dy);
                best = std::min(best, d);
            }
            out[static_cast<std::size_t>(y) * img.width + x] = best;
        }
    return out;
}

/// Random binary image with at least one set pixel.
inline BinaryImage random_binary(int w, int h, double density, Philox& rng) {
    BinaryImage img(w, h, 255);
    for (auto& v : img.data) v = rng.uniform() < density ? 0 : 255;
    if (std::none_of(img.data.begin(), img.data.end(), [](std::uint8_t v) { return v == 0; }))
        img.data[rng.uniform_index(static_cast<std::uint32_t>(img.data.size()))] = 0;
    return img;
}

}  // namespace ekisub::testing
