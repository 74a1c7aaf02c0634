#include "scl/render.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "scl/errors.hpp"

namespace scl::rpm {

namespace {

constexpr double kOutline = 1.0;  // pixels
constexpr std::uint8_t kWhite = 255;
constexpr std::uint8_t kBlack = 0;

struct Canvas {
    std::vector<std::uint8_t>& pixels;
    int px;

    // Pixels whose centres fall in [xa, xb) on row y.
    void span(int y, double xa, double xb, std::uint8_t value) {
        const int from = std::max(0, static_cast<int>(std::ceil(xa - 0.5)));
        const int to = std::min(px, static_cast<int>(std::ceil(xb - 0.5)));
        for (int x = from; x < to; ++x) pixels[static_cast<std::size_t>(y * px + x)] = value;
    }
};

void fill_circle(Canvas& cv, double cx, double cy, double r, std::uint8_t value) {
    if (r <= 0) return;
    for (int y = 0; y < cv.px; ++y) {
        const double dy = y + 0.5 - cy;
        if (std::fabs(dy) >= r) continue;
        const double half = std::sqrt(r * r - dy * dy);
        cv.span(y, cx - half, cx + half, value);
    }
}

// Scanline fill of a regular n-gon with circumradius r.
void fill_polygon(Canvas& cv, int n, double cx, double cy, double r, std::uint8_t value) {
    if (r <= 0) return;
    // Pointy top, except the square which sits axis-aligned.
    const double start = n == 4 ? -std::numbers::pi / 4 : -std::numbers::pi / 2;
    std::vector<std::pair<double, double>> v(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
        const double th = start + 2 * std::numbers::pi * k / n;
        v[static_cast<std::size_t>(k)] = {cx + r * std::cos(th), cy + r * std::sin(th)};
    }
    std::vector<double> xs;
    for (int y = 0; y < cv.px; ++y) {
        const double yc = y + 0.5;
        xs.clear();
        for (int k = 0; k < n; ++k) {
            const auto [x1, y1] = v[static_cast<std::size_t>(k)];
            const auto [x2, y2] = v[static_cast<std::size_t>((k + 1) % n)];
            if ((y1 <= yc && yc < y2) || (y2 <= yc && yc < y1)) xs.push_back(x1 + (yc - y1) * (x2 - x1) / (y2 - y1));
        }
        std::sort(xs.begin(), xs.end());
        for (std::size_t i = 0; i + 1 < xs.size(); i += 2) cv.span(y, xs[i], xs[i + 1], value);
    }
}

void draw_object(Canvas& cv, const Object& obj, const Region& reg, std::uint8_t fill) {
    const int type = obj[static_cast<int>(Attribute::Type)];
    const double r = circumradius(obj[static_cast<int>(Attribute::Size)], reg.half_width);
    if (type == 4) {
        fill_circle(cv, reg.cx, reg.cy, r, kBlack);
        fill_circle(cv, reg.cx, reg.cy, r - kOutline, fill);
        return;
    }
    const int n = type + 3;
    // Moving every edge inward by kOutline shrinks the circumradius by kOutline / cos(pi/n).
    const double inset = kOutline / std::cos(std::numbers::pi / n);
    fill_polygon(cv, n, reg.cx, reg.cy, r, kBlack);
    fill_polygon(cv, n, reg.cx, reg.cy, r - inset, fill);
}

}  // namespace

Region region(Layout layout, int component, int px) {
    const double p = px, h = p / 2;
    switch (layout) {
        case Layout::Center: return {h, h, h};
        case Layout::LeftRight: return {component == 0 ? p / 4 : 3 * p / 4, h, p / 4};
        case Layout::UpDown: return {h, component == 0 ? p / 4 : 3 * p / 4, p / 4};
        case Layout::OutInCenter: return {h, h, component == 0 ? h : 0.33 * h};
    }
    return {};
}

std::vector<std::uint8_t> render_panel(const Panel& panel, Layout layout, int px) {
    if (static_cast<int>(panel.size()) != component_count(layout))
        throw ContractError("panel has " + std::to_string(panel.size()) + " objects, layout " + to_string(layout) +
                            " needs " + std::to_string(component_count(layout)));
    std::vector<std::uint8_t> pixels(static_cast<std::size_t>(px * px), kWhite);
    Canvas cv{pixels, px};
    for (int c = 0; c < component_count(layout); ++c) {
        const Object& obj = panel[static_cast<std::size_t>(c)];
        for (Attribute a : kAttributes)
            if (!domain(layout, c, a).contains(obj[static_cast<int>(a)]))
                throw DomainError(to_string(a) + " value " + std::to_string(obj[static_cast<int>(a)]) +
                                  " outside its domain");
        const bool frame = layout == Layout::OutInCenter && c == 0;
        draw_object(cv, obj, region(layout, c, px),
                    frame ? kWhite : fill_intensity(obj[static_cast<int>(Attribute::Color)]));
    }
    return pixels;
}

void render_problem(const ProblemSpec& p, int px, std::span<std::uint8_t> out) {
    const std::size_t n = static_cast<std::size_t>(px * px);
    if (out.size() != 16 * n) throw DimensionError("render_problem: output buffer has wrong size");
    for (int i = 0; i < 16; ++i) {
        const Panel& panel = i < 8 ? p.panels[static_cast<std::size_t>(i)] : p.candidates[static_cast<std::size_t>(i - 8)];
        auto img = render_panel(panel, p.layout, px);
        std::copy(img.begin(), img.end(), out.begin() + static_cast<std::ptrdiff_t>(i * n));
    }
}

std::vector<std::uint8_t> render_problem(const ProblemSpec& p, int px) {
    std::vector<std::uint8_t> out(static_cast<std::size_t>(16 * px * px));
    render_problem(p, px, out);
    return out;
}

}  // namespace scl::rpm
