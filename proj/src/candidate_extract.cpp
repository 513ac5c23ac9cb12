#include "swintempo/candidate_extract.hpp"

#include "swintempo/errors.hpp"
#include "swintempo/text.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>
#include <tuple>

namespace swintempo {

namespace fs = std::filesystem;

namespace {

constexpr const char* kCandidateHeader = "series_id,coord_x,coord_y,coord_z,radius_mm,probability";

std::size_t find_root(std::vector<std::size_t>& parent, std::size_t i) {
    while (parent[i] != i) {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    return i;
}

void unite(std::vector<std::size_t>& parent, std::size_t a, std::size_t b) {
    a = find_root(parent, a);
    b = find_root(parent, b);
    if (a != b) {
        // Smaller index stays the root so component order follows raster order.
        parent[std::max(a, b)] = std::min(a, b);
    }
}

double squared_distance(const std::array<double, 3>& a, const std::array<double, 3>& b) {
    const double dx = a[0] - b[0];
    const double dy = a[1] - b[1];
    const double dz = a[2] - b[2];
    return dx * dx + dy * dy + dz * dz;
}

}  // namespace

std::size_t Mask2D::count() const {
    return static_cast<std::size_t>(std::count(data.begin(), data.end(), std::uint8_t{1}));
}

Mask2D threshold_map(const ProbabilityMap& map, double t) {
    if (!(t > 0.0 && t < 1.0)) {
        throw ValidationError("threshold_map: threshold must lie in (0, 1)");
    }
    Mask2D mask(map.values.height, map.values.width);
    for (std::size_t i = 0; i < mask.data.size(); ++i) {
        const double v = map.values.values[i];
        if (!std::isfinite(v)) {
            throw ValidationError("threshold_map: non-finite probability in slice " + std::to_string(map.slice_index));
        }
        mask.data[i] = v > t ? 1 : 0;
    }
    return mask;
}

std::vector<Component> find_contours(const Mask2D& mask) {
    const std::size_t h = mask.height;
    const std::size_t w = mask.width;
    std::vector<std::size_t> parent(h * w);
    std::iota(parent.begin(), parent.end(), 0);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            if (!mask.at(y, x)) {
                continue;
            }
            const std::size_t i = y * w + x;
            // Already-visited half of the 8-neighbourhood.
            if (x > 0 && mask.at(y, x - 1)) {
                unite(parent, i, i - 1);
            }
            if (y > 0) {
                if (x > 0 && mask.at(y - 1, x - 1)) {
                    unite(parent, i, i - w - 1);
                }
                if (mask.at(y - 1, x)) {
                    unite(parent, i, i - w);
                }
                if (x + 1 < w && mask.at(y - 1, x + 1)) {
                    unite(parent, i, i - w + 1);
                }
            }
        }
    }
    std::map<std::size_t, std::size_t> slot;
    std::vector<Component> out;
    for (std::size_t i = 0; i < h * w; ++i) {
        if (!mask.data[i]) {
            continue;
        }
        const std::size_t root = find_root(parent, i);
        auto [it, inserted] = slot.try_emplace(root, out.size());
        if (inserted) {
            out.emplace_back();
        }
        const Pixel p{i / w, i % w};
        Component& c = out[it->second];
        c.pixels.push_back(p);
        const bool edge = p.y == 0 || p.x == 0 || p.y + 1 == h || p.x + 1 == w;
        if (edge || !mask.at(p.y - 1, p.x) || !mask.at(p.y + 1, p.x) || !mask.at(p.y, p.x - 1) ||
            !mask.at(p.y, p.x + 1)) {
            c.boundary.push_back(p);
        }
    }
    return out;
}

SliceDetection summarize_contour(const Component& component, const ProbabilityMap& map) {
    if (component.pixels.empty()) {
        throw ValidationError("summarize_contour: empty component");
    }
    SliceDetection d;
    d.slice_index = map.slice_index;
    double sx = 0.0;
    double sy = 0.0;
    double best = 0.0;
    for (const Pixel& p : component.pixels) {
        sx += static_cast<double>(p.x);
        sy += static_cast<double>(p.y);
        best = std::max(best, map.values.at(p.y, p.x));
    }
    const auto n = static_cast<double>(component.pixels.size());
    d.centroid_x = sx / n;
    d.centroid_y = sy / n;
    d.area_px = n;
    d.radius2d_px = std::sqrt(n / std::numbers::pi);
    d.score = std::clamp(best, 0.0, 1.0);
    return d;
}

std::vector<int> dbscan(std::span<const std::array<double, 3>> points, double eps, std::size_t min_pts) {
    if (!(eps > 0.0) || !std::isfinite(eps)) {
        throw ValidationError("dbscan: eps must be positive");
    }
    if (min_pts < 1) {
        throw ValidationError("dbscan: min_pts must be at least 1");
    }
    const std::size_t n = points.size();
    using Cell = std::array<std::int64_t, 3>;
    // Cells twice the radius keep every neighbour within one cell even when the division
    // rounds across a cell edge.
    const double cell = 2.0 * eps;
    auto cell_of = [cell](const std::array<double, 3>& p) {
        return Cell{static_cast<std::int64_t>(std::floor(p[0] / cell)), static_cast<std::int64_t>(std::floor(p[1] / cell)),
                    static_cast<std::int64_t>(std::floor(p[2] / cell))};
    };
    std::map<Cell, std::vector<std::size_t>> grid;
    for (std::size_t i = 0; i < n; ++i) {
        grid[cell_of(points[i])].push_back(i);
    }
    const double eps2 = eps * eps;
    std::vector<std::vector<std::size_t>> neighbours(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Cell c = cell_of(points[i]);
        for (std::int64_t dz = -1; dz <= 1; ++dz) {
            for (std::int64_t dy = -1; dy <= 1; ++dy) {
                for (std::int64_t dx = -1; dx <= 1; ++dx) {
                    const auto it = grid.find(Cell{c[0] + dz, c[1] + dy, c[2] + dx});
                    if (it == grid.end()) {
                        continue;
                    }
                    for (std::size_t j : it->second) {
                        if (squared_distance(points[i], points[j]) <= eps2) {
                            neighbours[i].push_back(j);
                        }
                    }
                }
            }
        }
        std::sort(neighbours[i].begin(), neighbours[i].end());
    }

    std::vector<bool> core(n);
    for (std::size_t i = 0; i < n; ++i) {
        core[i] = neighbours[i].size() >= min_pts;
    }
    std::vector<int> label(n, -1);
    int next = 0;
    std::vector<std::size_t> queue;
    for (std::size_t i = 0; i < n; ++i) {
        if (!core[i] || label[i] != -1) {
            continue;
        }
        label[i] = next;
        queue.assign(1, i);
        while (!queue.empty()) {
            const std::size_t p = queue.back();
            queue.pop_back();
            for (std::size_t q : neighbours[p]) {
                if (core[q] && label[q] == -1) {
                    label[q] = next;
                    queue.push_back(q);
                }
            }
        }
        ++next;
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (core[i]) {
            continue;
        }
        for (std::size_t j : neighbours[i]) {
            if (core[j]) {
                label[i] = label[j];
                break;
            }
        }
    }
    return label;
}

std::vector<NoduleCandidate> cluster_3d(std::span<const SliceDetection> detections, double eps_mm,
                                        std::size_t min_pts, const SeriesGeometry& geometry) {
    const double sz = geometry.spacing_mm[0];
    const double sy = geometry.spacing_mm[1];
    const double sx = geometry.spacing_mm[2];
    std::vector<std::array<double, 3>> points;
    points.reserve(detections.size());
    for (const auto& d : detections) {
        points.push_back({static_cast<double>(d.slice_index) * sz, d.centroid_y * sy, d.centroid_x * sx});
    }
    const std::vector<int> label = dbscan(points, eps_mm, min_pts);
    const int clusters = label.empty() ? 0 : *std::max_element(label.begin(), label.end()) + 1;

    std::vector<NoduleCandidate> out;
    for (int c = 0; c < clusters; ++c) {
        double mx = 0.0;
        double my = 0.0;
        double mz = 0.0;
        double r2d = 0.0;
        double best = 0.0;
        double zmin = std::numeric_limits<double>::infinity();
        double zmax = -std::numeric_limits<double>::infinity();
        std::size_t members = 0;
        for (std::size_t i = 0; i < detections.size(); ++i) {
            if (label[i] != c) {
                continue;
            }
            const auto& d = detections[i];
            const auto z = static_cast<double>(d.slice_index);
            mx += d.centroid_x;
            my += d.centroid_y;
            mz += z;
            r2d = std::max(r2d, d.radius2d_px);
            best = std::max(best, d.score);
            zmin = std::min(zmin, z);
            zmax = std::max(zmax, z);
            ++members;
        }
        const auto m = static_cast<double>(members);
        NoduleCandidate cand;
        cand.series_id = geometry.series_id;
        cand.center_mm = WorldPoint{geometry.origin_mm[2] + mx / m * sx, geometry.origin_mm[1] + my / m * sy,
                                    geometry.origin_mm[0] + mz / m * sz};
        cand.radius_mm = std::max({r2d * sx, (zmax - zmin) * sz / 2.0, kRadiusFloorMm});
        cand.probability = best;
        out.push_back(std::move(cand));
    }
    return out;
}

void sort_candidates(std::vector<NoduleCandidate>& candidates) {
    std::stable_sort(candidates.begin(), candidates.end(), [](const NoduleCandidate& a, const NoduleCandidate& b) {
        if (a.probability != b.probability) {
            return a.probability > b.probability;
        }
        return std::tie(a.center_mm.z, a.center_mm.y, a.center_mm.x) <
               std::tie(b.center_mm.z, b.center_mm.y, b.center_mm.x);
    });
}

std::vector<NoduleCandidate> extract(std::span<const ProbabilityMap> maps, const ExtractOptions& options,
                                     const SeriesGeometry& geometry) {
    std::vector<SliceDetection> detections;
    for (const auto& map : maps) {
        for (const auto& component : find_contours(threshold_map(map, options.threshold))) {
            detections.push_back(summarize_contour(component, map));
        }
    }
    auto candidates = cluster_3d(detections, options.eps_mm, options.min_pts, geometry);
    sort_candidates(candidates);
    return candidates;
}

void write_candidates(std::span<const NoduleCandidate> candidates, const fs::path& path) {
    std::string out = std::string(kCandidateHeader) + "\n";
    for (const auto& c : candidates) {
        out += c.series_id + "," + text::format_double(c.center_mm.x) + "," + text::format_double(c.center_mm.y) +
               "," + text::format_double(c.center_mm.z) + "," + text::format_double(c.radius_mm) + "," +
               text::format_double(c.probability) + "\n";
    }
    text::write_file(path.string(), out);
}

std::vector<NoduleCandidate> read_candidates(const fs::path& path) {
    const std::string contents = text::read_file(path.string());
    std::vector<NoduleCandidate> out;
    std::istringstream in(contents);
    std::string line;
    std::size_t line_number = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_number;
        const std::string_view row = text::trim(line);
        if (row.empty()) {
            continue;
        }
        const std::string where = path.string() + ":" + std::to_string(line_number) + ": ";
        if (!header_seen) {
            if (row != kCandidateHeader) {
                throw FormatError(where + "expected header '" + kCandidateHeader + "'");
            }
            header_seen = true;
            continue;
        }
        const auto fields = text::split(row, ',');
        double values[5] = {};
        bool ok = fields.size() == 6 && !text::trim(fields[0]).empty();
        for (std::size_t i = 0; ok && i < 5; ++i) {
            ok = text::parse_double(fields[i + 1], values[i]) && std::isfinite(values[i]);
        }
        if (!ok) {
            throw FormatError(where + "malformed candidate row");
        }
        if (!(values[3] > 0.0) || values[4] < 0.0 || values[4] > 1.0) {
            throw ValidationError(where + "radius must be positive and probability within [0, 1]");
        }
        out.push_back({std::string(text::trim(fields[0])), WorldPoint{values[0], values[1], values[2]}, values[3],
                       values[4]});
    }
    if (!header_seen) {
        throw FormatError(path.string() + ": missing header");
    }
    return out;
}

}  // namespace swintempo
