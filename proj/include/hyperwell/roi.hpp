#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "hyperwell/errors.hpp"
#include "hyperwell/hypercube.hpp"

namespace hyperwell::roi {

struct HoughParams {
    double r_min = 5.0;
    double r_max = 40.0;
    double accumulator_threshold = 0.35; // fraction of the ideal circumference support
    double min_center_dist = 10.0;
    double edge_threshold = 0.25; // fraction of the max gradient magnitude

    void validate() const {
        require(r_min > 0.0 && r_min <= r_max, ErrorKind::InvalidArgument,
                "radii must satisfy 0 < r_min <= r_max");
        require(min_center_dist > 0.0, ErrorKind::InvalidArgument, "min_center_dist must be > 0");
        require(accumulator_threshold > 0.0 && accumulator_threshold <= 1.0,
                ErrorKind::InvalidArgument, "accumulator_threshold must be in (0,1]");
        require(edge_threshold > 0.0 && edge_threshold <= 1.0, ErrorKind::InvalidArgument,
                "edge_threshold must be in (0,1]");
    }
};

struct Circle {
    double cx = 0.0; // sample axis
    double cy = 0.0; // line axis
    double r = 0.0;
    int index = -1; // row-major well number
};

// x = sample, y = line; same membership rule is used by the synthetic scene
// generator so pixel counts can be cross-checked exactly.
inline bool in_disk(std::size_t x, std::size_t y, double cx, double cy, double r) {
    const double dx = static_cast<double>(x) - cx;
    const double dy = static_cast<double>(y) - cy;
    return dx * dx + dy * dy <= r * r;
}

struct RoiSet {
    std::vector<Circle> circles;                        // ordered by index
    std::vector<std::vector<std::uint32_t>> masks;      // sorted linear pixel ids, per circle
    std::vector<std::size_t> excluded;                  // saturation-removed pixel counts
    std::vector<std::uint8_t> usable;                   // 0 when the mask emptied out
    HoughParams params;

    std::size_t size() const { return circles.size(); }
};

namespace detail {

struct Candidate {
    double cx, cy, r;
    std::size_t support;
    double coverage; // fraction of angular sectors with edge support
};

struct EdgePixel {
    double x, y, dx, dy; // position and unit gradient direction
};

inline std::vector<EdgePixel> find_edges(const cube::GrayImage& img, double edge_threshold) {
    const std::size_t h = img.lines, w = img.samples;
    std::vector<double> mag(h * w, 0.0), gx(h * w, 0.0), gy(h * w, 0.0);
    double max_mag = 0.0;
    for (std::size_t y = 1; y + 1 < h; ++y) {
        for (std::size_t x = 1; x + 1 < w; ++x) {
            bool ok = true;
            for (std::size_t yy = y - 1; yy <= y + 1 && ok; ++yy)
                for (std::size_t xx = x - 1; xx <= x + 1; ++xx)
                    if (!img.valid[yy * w + xx]) {
                        ok = false;
                        break;
                    }
            if (!ok) continue;
            auto v = [&](std::size_t yy, std::size_t xx) { return img.values[yy * w + xx]; };
            const double sx = (v(y - 1, x + 1) + 2 * v(y, x + 1) + v(y + 1, x + 1)) -
                              (v(y - 1, x - 1) + 2 * v(y, x - 1) + v(y + 1, x - 1));
            const double sy = (v(y + 1, x - 1) + 2 * v(y + 1, x) + v(y + 1, x + 1)) -
                              (v(y - 1, x - 1) + 2 * v(y - 1, x) + v(y - 1, x + 1));
            const std::size_t i = y * w + x;
            gx[i] = sx;
            gy[i] = sy;
            mag[i] = std::hypot(sx, sy);
            max_mag = std::max(max_mag, mag[i]);
        }
    }
    std::vector<EdgePixel> edges;
    if (max_mag <= 0.0) return edges;
    const double cut = edge_threshold * max_mag;
    for (std::size_t y = 1; y + 1 < h; ++y)
        for (std::size_t x = 1; x + 1 < w; ++x) {
            const std::size_t i = y * w + x;
            if (mag[i] >= cut)
                edges.push_back({static_cast<double>(x), static_cast<double>(y), gx[i] / mag[i],
                                 gy[i] / mag[i]});
        }
    return edges;
}

// Algebraic (Kasa) circle fit through a set of edge pixels, solved on
// centered coordinates for conditioning. Returns false when degenerate.
inline bool fit_circle(const std::vector<EdgePixel>& edges, const std::vector<std::size_t>& idx,
                       double& cx, double& cy, double& r) {
    if (idx.size() < 6) return false;
    double mx = 0.0, my = 0.0;
    for (std::size_t i : idx) {
        mx += edges[i].x;
        my += edges[i].y;
    }
    mx /= static_cast<double>(idx.size());
    my /= static_cast<double>(idx.size());

    double a[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};
    double rhs[3] = {0, 0, 0};
    for (std::size_t i : idx) {
        const double x = edges[i].x - mx;
        const double y = edges[i].y - my;
        const double z = x * x + y * y;
        const double row[3] = {x, y, 1.0};
        for (int j = 0; j < 3; ++j) {
            for (int k = 0; k < 3; ++k) a[j][k] += row[j] * row[k];
            rhs[j] += row[j] * z;
        }
    }
    // 3x3 Gaussian elimination with partial pivoting
    int perm[3] = {0, 1, 2};
    for (int col = 0; col < 3; ++col) {
        int piv = col;
        for (int row = col + 1; row < 3; ++row)
            if (std::abs(a[perm[row]][col]) > std::abs(a[perm[piv]][col])) piv = row;
        std::swap(perm[col], perm[piv]);
        if (std::abs(a[perm[col]][col]) < 1e-12) return false;
        for (int row = col + 1; row < 3; ++row) {
            const double f = a[perm[row]][col] / a[perm[col]][col];
            for (int k = col; k < 3; ++k) a[perm[row]][k] -= f * a[perm[col]][k];
            rhs[perm[row]] -= f * rhs[perm[col]];
        }
    }
    double sol[3];
    for (int col = 2; col >= 0; --col) {
        double s = rhs[perm[col]];
        for (int k = col + 1; k < 3; ++k) s -= a[perm[col]][k] * sol[k];
        sol[col] = s / a[perm[col]][col];
    }
    const double ucx = sol[0] / 2.0, ucy = sol[1] / 2.0;
    const double r2 = sol[2] + ucx * ucx + ucy * ucy;
    if (!(r2 > 0.0)) return false;
    cx = ucx + mx;
    cy = ucy + my;
    r = std::sqrt(r2);
    return std::isfinite(cx) && std::isfinite(cy) && std::isfinite(r);
}

// Turns an accumulator peak into subpixel circles, one per gradient
// polarity. Edges whose gradient points outward (dark interior, bright
// surround) and edges pointing inward (bright interior) belong to different
// physical boundaries, so each polarity is refined on its own: that keeps
// two nearby concentric edges (well aperture vs glare ring) from being
// averaged into a biased blend. Each pass re-reads the dominant radius bin
// from the current center and fits a circle (Kasa) through that ring's
// pixels. Alignment gating also keeps arcs of neighboring wells from being
// stitched into phantom circles.
inline std::vector<Candidate> refine_candidate(const std::vector<EdgePixel>& edges, double cx,
                                               double cy, const HoughParams& p) {
    auto ring_members = [&edges](double qx, double qy, double qr, double tol, int polarity) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < edges.size(); ++i) {
            const double rx = edges[i].x - qx;
            const double ry = edges[i].y - qy;
            const double d = std::hypot(rx, ry);
            if (d <= 0.0 || std::abs(d - qr) > tol) continue;
            if (polarity * (rx * edges[i].dx + ry * edges[i].dy) / d < 0.7) continue;
            idx.push_back(i);
        }
        return idx;
    };

    const int nbins = static_cast<int>(std::ceil(p.r_max)) + 2;
    auto dominant_radius = [&](double qx, double qy, int polarity) -> int {
        std::vector<std::size_t> hist(static_cast<std::size_t>(nbins) + 1, 0);
        for (const auto& e : edges) {
            const double rx = e.x - qx;
            const double ry = e.y - qy;
            const double d = std::hypot(rx, ry);
            if (d < p.r_min - 1.0 || d > p.r_max + 1.0 || d <= 0.0) continue;
            if (polarity * (rx * e.dx + ry * e.dy) / d < 0.7) continue;
            const int bin = static_cast<int>(std::lround(d));
            if (bin >= 0 && bin <= nbins) ++hist[static_cast<std::size_t>(bin)];
        }
        int best_bin = -1;
        std::size_t best = 0;
        for (int bin = 0; bin <= nbins; ++bin)
            if (hist[static_cast<std::size_t>(bin)] > best) {
                best = hist[static_cast<std::size_t>(bin)];
                best_bin = bin;
            }
        return best_bin;
    };

    std::vector<Candidate> out;
    for (int polarity : {1, -1}) {
        double fx = cx, fy = cy, fr = 0.0;
        bool ok = true;
        for (int pass = 0; pass < 3 && ok; ++pass) {
            const int bin = dominant_radius(fx, fy, polarity);
            if (bin < 0) {
                ok = false;
                break;
            }
            const auto members = ring_members(fx, fy, static_cast<double>(bin), 1.5, polarity);
            ok = fit_circle(edges, members, fx, fy, fr);
        }
        if (!ok || fr < p.r_min || fr > p.r_max) continue;
        if (std::hypot(fx - cx, fy - cy) > 8.0) continue; // runaway fit

        const auto support_set = ring_members(fx, fy, fr, 1.0, polarity);
        std::uint32_t sectors = 0;
        for (std::size_t i : support_set) {
            const double angle = std::atan2(edges[i].y - fy, edges[i].x - fx);
            const int sector = static_cast<int>((angle + 3.14159265358979323846) /
                                                (2.0 * 3.14159265358979323846) * 16.0);
            sectors |= 1u << std::clamp(sector, 0, 15);
        }
        const double coverage = static_cast<double>(std::popcount(sectors)) / 16.0;
        out.push_back({fx, fy, fr, support_set.size(), coverage});
    }
    return out;
}

inline void assign_row_major_indices(std::vector<Circle>& circles) {
    if (circles.empty()) return;
    std::vector<double> radii;
    radii.reserve(circles.size());
    for (const auto& c : circles) radii.push_back(c.r);
    std::nth_element(radii.begin(), radii.begin() + radii.size() / 2, radii.end());
    const double row_gap = radii[radii.size() / 2];

    std::sort(circles.begin(), circles.end(), [](const Circle& a, const Circle& b) {
        return a.cy < b.cy || (a.cy == b.cy && a.cx < b.cx);
    });
    std::vector<std::vector<Circle>> rows;
    for (const auto& c : circles) {
        if (rows.empty() || c.cy - rows.back().back().cy > row_gap)
            rows.push_back({c});
        else
            rows.back().push_back(c);
    }
    circles.clear();
    int index = 0;
    for (auto& row : rows) {
        std::sort(row.begin(), row.end(),
                  [](const Circle& a, const Circle& b) { return a.cx < b.cx; });
        for (auto& c : row) {
            c.index = index++;
            circles.push_back(c);
        }
    }
}

} // namespace detail

// Two-stage gradient Hough: edge pixels vote for centers along their
// gradient line, candidate centers are local accumulator maxima, radii come
// from a per-center distance histogram. Candidates are kept when their ring
// support reaches accumulator_threshold of the ideal circumference, then
// greedily filtered (highest support first) to enforce non-overlap.
inline RoiSet detect_circles(const cube::GrayImage& img, const HoughParams& params) {
    params.validate();
    require(img.lines >= 1 && img.samples >= 1 && !img.values.empty(), ErrorKind::InvalidArgument,
            "circle detection needs a non-empty image");
    require(static_cast<double>(img.lines) >= 2.0 * params.r_max &&
                static_cast<double>(img.samples) >= 2.0 * params.r_max,
            ErrorKind::InvalidArgument, "image must be at least 2*r_max in each dimension");

    RoiSet out;
    out.params = params;

    const auto edges = detail::find_edges(img, params.edge_threshold);
    if (edges.empty()) return out;

    const std::size_t h = img.lines, w = img.samples;
    std::vector<std::uint32_t> acc(h * w, 0);
    const int r_lo = static_cast<int>(std::floor(params.r_min));
    const int r_hi = static_cast<int>(std::ceil(params.r_max));
    for (const auto& e : edges) {
        for (int sign : {1, -1}) {
            for (int r = r_lo; r <= r_hi; ++r) {
                const long x = std::lround(e.x + sign * r * e.dx);
                const long y = std::lround(e.y + sign * r * e.dy);
                if (x < 0 || y < 0 || x >= static_cast<long>(w) || y >= static_cast<long>(h))
                    continue;
                ++acc[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
            }
        }
    }

    std::uint32_t max_votes = 0;
    for (std::uint32_t v : acc) max_votes = std::max(max_votes, v);
    // ghost peaks (rays leaving the circles) carry far fewer votes than
    // genuine centers, so a relative floor prunes them cheaply
    const std::uint32_t vote_floor =
        std::max<std::uint32_t>(3, static_cast<std::uint32_t>(0.2 * max_votes));

    struct Peak {
        std::size_t x, y;
        std::uint32_t votes;
    };
    std::vector<Peak> peaks;
    for (std::size_t y = 1; y + 1 < h; ++y) {
        for (std::size_t x = 1; x + 1 < w; ++x) {
            const std::uint32_t v = acc[y * w + x];
            if (v < vote_floor) continue;
            bool peak = true;
            for (std::size_t yy = y - 1; yy <= y + 1 && peak; ++yy)
                for (std::size_t xx = x - 1; xx <= x + 1; ++xx) {
                    if (yy == y && xx == x) continue;
                    if (acc[yy * w + xx] > v ||
                        (acc[yy * w + xx] == v && (yy < y || (yy == y && xx < x)))) {
                        peak = false;
                        break;
                    }
                }
            if (peak) peaks.push_back({x, y, v});
        }
    }
    std::stable_sort(peaks.begin(), peaks.end(),
                     [](const Peak& a, const Peak& b) { return a.votes > b.votes; });

    // spatial buckets so each refinement only scans nearby edges
    const double cell = params.r_max + 3.0;
    const std::size_t bx = static_cast<std::size_t>(std::ceil(static_cast<double>(w) / cell));
    const std::size_t by = static_cast<std::size_t>(std::ceil(static_cast<double>(h) / cell));
    std::vector<std::vector<std::size_t>> buckets(bx * by);
    for (std::size_t i = 0; i < edges.size(); ++i) {
        const auto cxi = static_cast<std::size_t>(edges[i].x / cell);
        const auto cyi = static_cast<std::size_t>(edges[i].y / cell);
        buckets[cyi * bx + cxi].push_back(i);
    }
    auto local_edges = [&](double px, double py) {
        std::vector<detail::EdgePixel> out;
        const auto cxi = static_cast<long>(px / cell);
        const auto cyi = static_cast<long>(py / cell);
        for (long yy = cyi - 1; yy <= cyi + 1; ++yy)
            for (long xx = cxi - 1; xx <= cxi + 1; ++xx) {
                if (xx < 0 || yy < 0 || xx >= static_cast<long>(bx) || yy >= static_cast<long>(by))
                    continue;
                for (std::size_t i : buckets[static_cast<std::size_t>(yy) * bx +
                                             static_cast<std::size_t>(xx)])
                    out.push_back(edges[i]);
            }
        return out;
    };

    std::vector<detail::Candidate> candidates;
    std::vector<std::pair<double, double>> refined_seeds;
    for (const auto& peak : peaks) {
        const double px = static_cast<double>(peak.x);
        const double py = static_cast<double>(peak.y);
        // peaks of the same vote blob refine to the same circle; skip them
        bool duplicate = false;
        for (const auto& [sx, sy] : refined_seeds)
            if (std::hypot(px - sx, py - sy) < 0.5 * params.min_center_dist) {
                duplicate = true;
                break;
            }
        if (duplicate) continue;
        refined_seeds.emplace_back(px, py);

        const auto nearby = local_edges(px, py);
        for (const auto& cand : detail::refine_candidate(nearby, px, py, params)) {
            if (cand.support == 0 || cand.r < params.r_min || cand.r > params.r_max) continue;
            const double fraction =
                static_cast<double>(cand.support) / (2.0 * 3.14159265358979323846 * cand.r);
            // coverage gate rejects coherent partial arcs (ghost circles)
            if (fraction < params.accumulator_threshold || cand.coverage < 0.5) continue;
            candidates.push_back(cand);
        }
    }

    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const detail::Candidate& a, const detail::Candidate& b) {
                         return a.support > b.support;
                     });

    std::vector<Circle> accepted;
    for (const auto& cand : candidates) {
        if (cand.cx - cand.r < 0.0 || cand.cy - cand.r < 0.0 ||
            cand.cx + cand.r > static_cast<double>(w - 1) ||
            cand.cy + cand.r > static_cast<double>(h - 1))
            continue;
        bool ok = true;
        for (const auto& c : accepted) {
            const double dist = std::hypot(cand.cx - c.cx, cand.cy - c.cy);
            if (dist < cand.r + c.r || dist < params.min_center_dist) {
                ok = false;
                break;
            }
        }
        if (ok) accepted.push_back({cand.cx, cand.cy, cand.r, -1});
    }

    detail::assign_row_major_indices(accepted);
    out.circles = std::move(accepted);
    out.masks.assign(out.circles.size(), {});
    out.excluded.assign(out.circles.size(), 0);
    out.usable.assign(out.circles.size(), 1);
    return out;
}

// Bounded grid sweep: widen the radius window, then walk the accumulator
// threshold downward, until exactly `expected` wells are found. The winning
// parameters are returned so later frames can skip the sweep.
inline std::pair<RoiSet, HoughParams> auto_tune(const cube::GrayImage& img, std::size_t expected,
                                                const HoughParams& init) {
    require(expected >= 1, ErrorKind::InvalidArgument, "expected well count must be >= 1");
    init.validate();

    std::size_t best_count = 0;
    const double max_dim = static_cast<double>(std::min(img.lines, img.samples));
    for (double thr = 0.9; thr >= 0.095; thr -= 0.1) {
        for (int widen = 0; widen <= 3; ++widen) {
            HoughParams p = init;
            p.accumulator_threshold = thr;
            p.r_min = std::max(2.0, init.r_min * (1.0 - 0.15 * widen));
            p.r_max = std::max(std::min(init.r_max * (1.0 + 0.15 * widen), max_dim / 2.0), p.r_min);
            RoiSet rois;
            try {
                rois = detect_circles(img, p);
            } catch (const Error&) {
                continue; // window outgrew the image; keep sweeping
            }
            if (rois.size() == expected) return {std::move(rois), p};
            if (best_count == 0 ||
                std::llabs(static_cast<long long>(rois.size()) - static_cast<long long>(expected)) <
                    std::llabs(static_cast<long long>(best_count) -
                               static_cast<long long>(expected)))
                best_count = rois.size();
        }
    }
    raise(ErrorKind::TuningFailure, "auto-tune could not find exactly " + std::to_string(expected) +
                                        " wells; best count achieved: " +
                                        std::to_string(best_count));
}

// Populates per-well pixel masks from the raw frame: a pixel is kept iff it
// lies inside its circle and stays below sat_level at every band. Wells whose
// mask empties out are flagged unusable instead of raising.
inline RoiSet build_masks(RoiSet rois, const cube::Hypercube& raw, std::uint16_t sat_level = 65535) {
    raw.validate();
    rois.masks.assign(rois.circles.size(), {});
    rois.excluded.assign(rois.circles.size(), 0);
    rois.usable.assign(rois.circles.size(), 1);

    for (std::size_t ci = 0; ci < rois.circles.size(); ++ci) {
        const Circle& c = rois.circles[ci];
        require(c.cx - c.r >= -0.5 && c.cy - c.r >= -0.5 &&
                    c.cx + c.r <= static_cast<double>(raw.samples - 1) + 0.5 &&
                    c.cy + c.r <= static_cast<double>(raw.lines - 1) + 0.5,
                ErrorKind::InvalidArgument,
                "circle " + std::to_string(c.index) + " lies outside the frame");
        const auto y0 = static_cast<std::size_t>(std::max(0.0, std::floor(c.cy - c.r)));
        const auto y1 = static_cast<std::size_t>(
            std::min(static_cast<double>(raw.lines - 1), std::ceil(c.cy + c.r)));
        const auto x0 = static_cast<std::size_t>(std::max(0.0, std::floor(c.cx - c.r)));
        const auto x1 = static_cast<std::size_t>(
            std::min(static_cast<double>(raw.samples - 1), std::ceil(c.cx + c.r)));
        for (std::size_t y = y0; y <= y1; ++y) {
            for (std::size_t x = x0; x <= x1; ++x) {
                if (!in_disk(x, y, c.cx, c.cy, c.r)) continue;
                bool clean = true;
                for (std::size_t band = 0; band < raw.bands && clean; ++band)
                    clean = raw.at(y, x, band) < sat_level;
                if (clean)
                    rois.masks[ci].push_back(static_cast<std::uint32_t>(y * raw.samples + x));
                else
                    ++rois.excluded[ci];
            }
        }
        rois.usable[ci] = rois.masks[ci].empty() ? 0 : 1;
    }
    return rois;
}

inline nlohmann::ordered_json to_json(const RoiSet& rois) {
    nlohmann::ordered_json j;
    j["circles"] = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < rois.circles.size(); ++i) {
        const Circle& c = rois.circles[i];
        j["circles"].push_back({{"index", c.index},
                                {"cx", c.cx},
                                {"cy", c.cy},
                                {"r", c.r},
                                {"excluded", i < rois.excluded.size() ? rois.excluded[i] : 0}});
    }
    j["params"] = {{"r_min", rois.params.r_min},
                   {"r_max", rois.params.r_max},
                   {"accumulator_threshold", rois.params.accumulator_threshold},
                   {"min_center_dist", rois.params.min_center_dist},
                   {"edge_threshold", rois.params.edge_threshold}};
    return j;
}

inline RoiSet roi_set_from_json(const nlohmann::json& j) {
    RoiSet rois;
    try {
        for (const auto& c : j.at("circles")) {
            rois.circles.push_back({c.at("cx").get<double>(), c.at("cy").get<double>(),
                                    c.at("r").get<double>(), c.at("index").get<int>()});
            rois.excluded.push_back(c.value("excluded", std::size_t{0}));
        }
        const auto& p = j.at("params");
        rois.params.r_min = p.at("r_min").get<double>();
        rois.params.r_max = p.at("r_max").get<double>();
        rois.params.accumulator_threshold = p.at("accumulator_threshold").get<double>();
        rois.params.min_center_dist = p.at("min_center_dist").get<double>();
        rois.params.edge_threshold = p.at("edge_threshold").get<double>();
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorKind::Format, std::string("bad ROI JSON: ") + e.what());
    }
    rois.masks.assign(rois.circles.size(), {});
    rois.usable.assign(rois.circles.size(), 1);
    return rois;
}

} // namespace hyperwell::roi
