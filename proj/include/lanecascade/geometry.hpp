#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lanecascade/errors.hpp"

namespace lanecascade {

// Fixed maximum number of boundary instances a scene can carry.
inline constexpr int kMaxInstances = 4;

// Sentinel for "no x sample at this row". Kept far outside any image so it can
// never collide with a real coordinate.
inline constexpr double kMissingX = -1.0e9;

inline bool is_missing(double x) { return x == kMissingX; }

struct Pixel {
    int x = 0;
    int y = 0;
    bool operator==(const Pixel&) const = default;
};

// A lane boundary as ordered (x, y) samples at fixed row positions.
// rows are strictly increasing; cols is aligned with rows and may hold
// kMissingX where the boundary has no sample.
struct Polyline {
    std::vector<int> rows;
    std::vector<double> cols;

    bool operator==(const Polyline&) const = default;

    std::size_t size() const { return rows.size(); }
    bool empty() const { return rows.empty(); }

    // Number of rows that actually carry an x sample.
    int point_count() const {
        int n = 0;
        for (double c : cols)
            if (!is_missing(c)) ++n;
        return n;
    }

    void push_point(int row, double x) {
        rows.push_back(row);
        cols.push_back(x);
    }

    // (row, x) pairs for the non-missing samples, in row order.
    std::vector<std::pair<int, double>> points() const {
        std::vector<std::pair<int, double>> out;
        out.reserve(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i)
            if (!is_missing(cols[i])) out.emplace_back(rows[i], cols[i]);
        return out;
    }

    void validate() const {
        if (cols.size() != rows.size()) throw InvalidArgumentError("polyline rows/cols length mismatch");
        for (std::size_t i = 1; i < rows.size(); ++i)
            if (rows[i] <= rows[i - 1]) throw InvalidArgumentError("polyline rows must be strictly increasing");
        if (!rows.empty() && point_count() == 0)
            throw InvalidArgumentError("non-empty polyline needs at least one x sample");
    }
};

// Rescales a polyline between resolutions. Rows are rounded to integers; when
// two source rows collapse onto one target row the first sample wins.
inline Polyline scale_polyline(const Polyline& poly, double sx, double sy) {
    Polyline out;
    int last_row = std::numeric_limits<int>::min();
    for (std::size_t i = 0; i < poly.rows.size(); ++i) {
        if (is_missing(poly.cols[i])) continue;
        const int row = static_cast<int>(std::lround(poly.rows[i] * sy));
        if (row == last_row) continue;
        out.push_point(row, poly.cols[i] * sx);
        last_row = row;
    }
    return out;
}

// H x W integer image; 0 is background, 1..kMaxInstances are boundary ids.
struct InstanceMap {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;

    InstanceMap() = default;
    InstanceMap(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h, 0) {}

    std::uint8_t& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }

    bool operator==(const InstanceMap&) const = default;
};

namespace detail {

// Euclidean distance from point (px, py) to segment (x0,y0)-(x1,y1).
inline double point_segment_distance(double px, double py, double x0, double y0, double x1, double y1) {
    const double dx = x1 - x0;
    const double dy = y1 - y0;
    const double len2 = dx * dx + dy * dy;
    double t = 0.0;
    if (len2 > 0.0) t = std::clamp(((px - x0) * dx + (py - y0) * dy) / len2, 0.0, 1.0);
    const double fx = x0 + t * dx - px;
    const double fy = y0 + t * dy - py;
    return std::sqrt(fx * fx + fy * fy);
}

// Minimum distance from a pixel center to the segment chain through the
// polyline's non-missing samples. A single sample degenerates to a point.
inline double point_chain_distance(const Polyline& poly, double px, double py) {
    double best = std::numeric_limits<double>::infinity();
    double prev_x = 0.0, prev_y = 0.0;
    bool have_prev = false;
    for (std::size_t i = 0; i < poly.rows.size(); ++i) {
        if (is_missing(poly.cols[i])) continue;
        const double x = poly.cols[i];
        const double y = poly.rows[i];
        if (have_prev) {
            best = std::min(best, point_segment_distance(px, py, prev_x, prev_y, x, y));
        } else {
            best = std::min(best, std::hypot(px - x, py - y));
        }
        prev_x = x;
        prev_y = y;
        have_prev = true;
    }
    return best;
}

}  // namespace detail

// Projects boundary polylines onto an instance map with strokes of the given
// odd pixel width. A pixel belongs to boundary i when its center lies within
// width_px/2 of the boundary's segment chain; where strokes overlap the lower
// instance index wins.
inline InstanceMap rasterize_boundaries(std::span<const Polyline> boundaries, int width_px, int map_width,
                                        int map_height) {
    if (static_cast<int>(boundaries.size()) > kMaxInstances)
        throw InstanceBudgetError("rasterize_boundaries: " + std::to_string(boundaries.size()) +
                                  " boundaries exceed the instance budget of " + std::to_string(kMaxInstances));
    if (width_px < 1 || width_px % 2 == 0)
        throw InvalidArgumentError("rasterize_boundaries: stroke width must be odd and >= 1, got " +
                                   std::to_string(width_px));
    InstanceMap map(map_width, map_height);
    const double radius = width_px / 2.0;

    for (std::size_t b = 0; b < boundaries.size(); ++b) {
        const auto pts = boundaries[b].points();
        if (pts.empty()) continue;
        const auto label = static_cast<std::uint8_t>(b + 1);
        auto paint_near = [&](double x0, double y0, double x1, double y1) {
            const int min_x = std::max(0, static_cast<int>(std::floor(std::min(x0, x1) - radius)));
            const int max_x = std::min(map_width - 1, static_cast<int>(std::ceil(std::max(x0, x1) + radius)));
            const int min_y = std::max(0, static_cast<int>(std::floor(std::min(y0, y1) - radius)));
            const int max_y = std::min(map_height - 1, static_cast<int>(std::ceil(std::max(y0, y1) + radius)));
            for (int y = min_y; y <= max_y; ++y)
                for (int x = min_x; x <= max_x; ++x) {
                    if (map.at(x, y) != 0) continue;  // lower index painted first and wins
                    if (detail::point_segment_distance(x, y, x0, y0, x1, y1) <= radius) map.at(x, y) = label;
                }
        };
        if (pts.size() == 1) {
            paint_near(pts[0].second, pts[0].first, pts[0].second, pts[0].first);
        } else {
            for (std::size_t i = 0; i + 1 < pts.size(); ++i)
                paint_near(pts[i].second, pts[i].first, pts[i + 1].second, pts[i + 1].first);
        }
    }
    return map;
}

// Collapses a pixel set to one x per row by averaging the x coordinates.
// Internally sorts, so the result is independent of input ordering.
inline Polyline row_average(std::span<const Pixel> pixels) {
    std::vector<Pixel> sorted(pixels.begin(), pixels.end());
    std::sort(sorted.begin(), sorted.end(), [](const Pixel& a, const Pixel& b) {
        return a.y != b.y ? a.y < b.y : a.x < b.x;
    });
    Polyline out;
    std::size_t i = 0;
    while (i < sorted.size()) {
        const int row = sorted[i].y;
        double sum = 0.0;
        int count = 0;
        while (i < sorted.size() && sorted[i].y == row) {
            sum += sorted[i].x;
            ++count;
            ++i;
        }
        out.push_point(row, sum / count);
    }
    return out;
}

struct PointMatch {
    int matched = 0;
    int gt_total = 0;
};

// Counts ground-truth points whose predicted x at the same row lies strictly
// within threshold_px.
inline PointMatch point_match_count(const Polyline& pred, const Polyline& gt, double threshold_px) {
    if (threshold_px <= 0.0) throw InvalidArgumentError("point_match_count: threshold must be positive");
    std::map<int, double> pred_by_row;
    for (std::size_t i = 0; i < pred.rows.size(); ++i)
        if (!is_missing(pred.cols[i])) pred_by_row[pred.rows[i]] = pred.cols[i];

    PointMatch out;
    for (std::size_t i = 0; i < gt.rows.size(); ++i) {
        if (is_missing(gt.cols[i])) continue;
        ++out.gt_total;
        const auto it = pred_by_row.find(gt.rows[i]);
        if (it != pred_by_row.end() && std::abs(it->second - gt.cols[i]) < threshold_px) ++out.matched;
    }
    return out;
}

// Mean |x_pred - x_gt| over rows both polylines sample. Empty optional when
// the polylines share no rows, which callers treat as "not comparable".
inline std::optional<double> average_distance(const Polyline& pred, const Polyline& gt) {
    std::map<int, double> pred_by_row;
    for (std::size_t i = 0; i < pred.rows.size(); ++i)
        if (!is_missing(pred.cols[i])) pred_by_row[pred.rows[i]] = pred.cols[i];

    double sum = 0.0;
    int count = 0;
    for (std::size_t i = 0; i < gt.rows.size(); ++i) {
        if (is_missing(gt.cols[i])) continue;
        const auto it = pred_by_row.find(gt.rows[i]);
        if (it == pred_by_row.end()) continue;
        sum += std::abs(it->second - gt.cols[i]);
        ++count;
    }
    if (count == 0) return std::nullopt;
    return sum / count;
}

}  // namespace lanecascade
