#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "scl/rpm.hpp"

namespace scl::rpm {

/// Centre and half-width (pixels) of one component's region.
struct Region {
    double cx = 0;
    double cy = 0;
    double half_width = 0;
};

Region region(Layout layout, int component, int px);

/// Circumradius of an object of size `s` in a region of half-width `hw`.
inline double circumradius(int s, double hw) { return (0.15 + 0.55 * s / 5.0) * hw; }
/// Fill intensity of colour `c`: 0 is white, 9 is nearly black.
inline std::uint8_t fill_intensity(int c) { return static_cast<std::uint8_t>((255 * (10 - c) + 5) / 10); }

/// Rasterizes one panel: regular polygons (triangle, square, pentagon,
/// hexagon) or a circle with a black outline, on white. Row-major px*px bytes.
std::vector<std::uint8_t> render_panel(const Panel& panel, Layout layout, int px);

/// 8 context panels then 8 candidates, 16*px*px bytes.
void render_problem(const ProblemSpec& p, int px, std::span<std::uint8_t> out);
std::vector<std::uint8_t> render_problem(const ProblemSpec& p, int px);

}  // namespace scl::rpm
