#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "eval_oracles.hpp"
#include "tempdir.hpp"
#include "swintempo/candidate_extract.hpp"
#include "swintempo/errors.hpp"
#include "swintempo/random.hpp"
#include "swintempo/text.hpp"

#include <cmath>
#include <numbers>
#include <set>

using namespace swintempo;
using namespace swintempo::testing;

namespace {

ProbabilityMap blank(std::size_t h, std::size_t w, long z = 0) { return {Image(h, w), z, "s"}; }

ProbabilityMap random_map(Rng& rng, std::size_t h, std::size_t w) {
    ProbabilityMap pm = blank(h, w);
    for (auto& v : pm.values.values) {
        v = rng.uniform();
    }
    return pm;
}

SliceDetection detection(long z, double x, double y, double score, double r = 1.0) {
    return {z, x, y, std::numbers::pi * r * r, r, score};
}

}  // namespace

TEST_CASE("threshold_map") {
    Rng rng(1);
    SUBCASE("all-zero map gives an empty mask") {
        for (double t : {0.01, 0.5, 0.99}) {
            CHECK(threshold_map(blank(8, 8), t).count() == 0);
        }
    }
    SUBCASE("one bright pixel") {
        ProbabilityMap pm = blank(8, 8);
        pm.values.at(3, 5) = 0.9;
        pm.values.at(1, 1) = 0.5;  // strictly greater than t is required
        const Mask2D m = threshold_map(pm, 0.5);
        CHECK(m.count() == 1);
        CHECK(m.at(3, 5) == 1);
    }
    SUBCASE("lower thresholds give supersets") {
        for (int k = 0; k < 50; ++k) {
            const ProbabilityMap pm = random_map(rng, 16, 12);
            const Mask2D lo = threshold_map(pm, 0.3);
            const Mask2D hi = threshold_map(pm, 0.7);
            for (std::size_t i = 0; i < lo.data.size(); ++i) {
                CHECK(lo.data[i] >= hi.data[i]);
            }
        }
    }
    SUBCASE("threshold outside (0, 1) is rejected") {
        CHECK_THROWS_AS(threshold_map(blank(2, 2), 0.0), ValidationError);
        CHECK_THROWS_AS(threshold_map(blank(2, 2), 1.0), ValidationError);
    }
}

TEST_CASE("find_contours") {
    SUBCASE("diagonal neighbours are one component") {
        Mask2D m(4, 4);
        m.data[1 * 4 + 1] = 1;
        m.data[2 * 4 + 2] = 1;
        const auto c = find_contours(m);
        REQUIRE(c.size() == 1);
        CHECK(c[0].pixels.size() == 2);
    }
    SUBCASE("a background row separates components") {
        Mask2D m(5, 4);
        for (std::size_t x = 0; x < 4; ++x) {
            m.data[1 * 4 + x] = 1;
            m.data[3 * 4 + x] = 1;
        }
        const auto c = find_contours(m);
        REQUIRE(c.size() == 2);
        CHECK(c[0].pixels.front() == Pixel{1, 0});
        CHECK(c[1].pixels.front() == Pixel{3, 0});
    }
    SUBCASE("boundary of a filled square is its outer ring") {
        Mask2D m(7, 7);
        for (std::size_t y = 1; y < 6; ++y) {
            for (std::size_t x = 1; x < 6; ++x) {
                m.data[y * 7 + x] = 1;
            }
        }
        const auto c = find_contours(m);
        REQUIRE(c.size() == 1);
        CHECK(c[0].pixels.size() == 25);
        CHECK(c[0].boundary.size() == 16);
    }
    SUBCASE("random masks match the flood-fill oracle") {
        Rng rng(2);
        for (int k = 0; k < 200; ++k) {
            const std::size_t h = 1 + static_cast<std::size_t>(rng.uniform_int(0, 30));
            const std::size_t w = 1 + static_cast<std::size_t>(rng.uniform_int(0, 30));
            const double density = rng.uniform(0.05, 0.7);
            Mask2D m(h, w);
            for (auto& v : m.data) {
                v = rng.uniform() < density ? 1 : 0;
            }
            const auto got = find_contours(m);
            const auto expected = flood_fill_components(m);
            CHECK(as_sets(got) == expected);
            std::size_t total = 0;
            for (const auto& c : got) {
                total += c.pixels.size();
                CHECK(std::is_sorted(c.pixels.begin(), c.pixels.end()));
            }
            CHECK(total == m.count());
        }
    }
}

TEST_CASE("summarize_contour") {
    SUBCASE("single pixel") {
        ProbabilityMap pm = blank(20, 20, 3);
        pm.values.at(12, 10) = 0.8;
        const auto c = find_contours(threshold_map(pm, 0.5));
        REQUIRE(c.size() == 1);
        const SliceDetection d = summarize_contour(c[0], pm);
        CHECK(d.score == 0.8);
        CHECK(d.centroid_x == 10.0);
        CHECK(d.centroid_y == 12.0);
        CHECK(d.slice_index == 3);
        CHECK(d.radius2d_px == doctest::Approx(std::sqrt(1.0 / std::numbers::pi)));
        CHECK(d.radius2d_px == doctest::Approx(0.564).epsilon(1e-3));
    }
    SUBCASE("rasterized disc radius is recovered within 10%") {
        for (double r : {3.0, 5.5, 9.0}) {
            ProbabilityMap pm = blank(40, 40);
            for (std::size_t y = 0; y < 40; ++y) {
                for (std::size_t x = 0; x < 40; ++x) {
                    const double dx = static_cast<double>(x) - 19.3;
                    const double dy = static_cast<double>(y) - 20.1;
                    if (dx * dx + dy * dy <= r * r) {
                        pm.values.at(y, x) = 0.9;
                    }
                }
            }
            const auto c = find_contours(threshold_map(pm, 0.5));
            REQUIRE(c.size() == 1);
            CHECK(std::abs(summarize_contour(c[0], pm).radius2d_px - r) < 0.1 * r);
        }
    }
    SUBCASE("score is the component maximum") {
        Rng rng(3);
        for (int k = 0; k < 20; ++k) {
            const ProbabilityMap pm = random_map(rng, 10, 10);
            for (const auto& c : find_contours(threshold_map(pm, 0.4))) {
                double best = 0.0;
                for (const auto& p : c.pixels) {
                    best = std::max(best, pm.values.at(p.y, p.x));
                }
                CHECK(summarize_contour(c, pm).score == best);
            }
        }
    }
    SUBCASE("empty component is rejected") {
        CHECK_THROWS_AS(summarize_contour(Component{}, blank(2, 2)), ValidationError);
    }
}

TEST_CASE("dbscan matches the brute-force reference") {
    Rng rng(4);
    for (int k = 0; k < 100; ++k) {
        const std::size_t n = static_cast<std::size_t>(rng.uniform_int(0, 200));
        const double extent = rng.uniform(5.0, 60.0);
        const double eps = rng.uniform(0.5, 6.0);
        const auto min_pts = static_cast<std::size_t>(rng.uniform_int(1, 5));
        std::vector<std::array<double, 3>> pts;
        for (std::size_t i = 0; i < n; ++i) {
            if (i > 0 && rng.uniform() < 0.1) {
                pts.push_back(pts[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
            } else if (rng.uniform() < 0.3) {
                // Lattice points put many pairs exactly eps apart.
                pts.push_back({eps * static_cast<double>(rng.uniform_int(0, 6)),
                               eps * static_cast<double>(rng.uniform_int(0, 6)),
                               eps * static_cast<double>(rng.uniform_int(0, 6))});
            } else {
                pts.push_back({rng.uniform(0.0, extent), rng.uniform(0.0, extent), rng.uniform(-extent, extent)});
            }
        }
        const auto got = dbscan(pts, eps, min_pts);
        const auto expected = brute_force_dbscan(pts, eps, min_pts);
        CHECK(canonical_partition(got) == canonical_partition(expected));
        CHECK(got == expected);
    }
}

TEST_CASE("cluster_3d") {
    const SeriesGeometry geom{"s", {2.0, 0.7, 0.7}, {-10.0, 5.0, 3.0}};
    SUBCASE("empty input") { CHECK(cluster_3d({}, 2.5, 1, geom).empty()); }
    SUBCASE("same spot on consecutive slices merges") {
        const std::vector<SliceDetection> d = {detection(4, 10, 12, 0.6), detection(5, 10, 12, 0.9),
                                               detection(6, 10, 12, 0.7)};
        const auto c = cluster_3d(d, 2.5, 1, geom);
        REQUIRE(c.size() == 1);
        CHECK(c[0].probability == 0.9);
        CHECK(c[0].center_mm.x == doctest::Approx(3.0 + 10 * 0.7));
        CHECK(c[0].center_mm.y == doctest::Approx(5.0 + 12 * 0.7));
        CHECK(c[0].center_mm.z == doctest::Approx(-10.0 + 5 * 2.0));
        // z-extent 4 mm halves to 2 mm, above the 0.7 mm in-plane radius.
        CHECK(c[0].radius_mm == doctest::Approx(2.0));
        CHECK(c[0].series_id == "s");
    }
    SUBCASE("far apart detections stay separate") {
        const std::vector<SliceDetection> d = {detection(4, 10, 12, 0.6), detection(4, 30, 12, 0.9)};
        CHECK(cluster_3d(d, 2.5, 1, geom).size() == 2);
    }
    SUBCASE("radius rules") {
        CHECK(cluster_3d(std::vector{detection(0, 1, 1, 0.5, 0.3)}, 2.5, 1, geom)[0].radius_mm == kRadiusFloorMm);
        CHECK(cluster_3d(std::vector{detection(0, 1, 1, 0.5, 4.0)}, 2.5, 1, geom)[0].radius_mm ==
              doctest::Approx(4.0 * 0.7));
    }
    SUBCASE("min_pts above 1 drops isolated detections") {
        const std::vector<SliceDetection> d = {detection(4, 10, 12, 0.6), detection(5, 10, 12, 0.9),
                                               detection(9, 40, 40, 0.99)};
        const auto c = cluster_3d(d, 2.5, 2, geom);
        REQUIRE(c.size() == 1);
        CHECK(c[0].probability == 0.9);
    }
    SUBCASE("min_pts = 1 partitions the detections") {
        Rng rng(5);
        std::vector<SliceDetection> d;
        for (int i = 0; i < 150; ++i) {
            d.push_back(detection(rng.uniform_int(0, 15), rng.uniform(0, 63), rng.uniform(0, 63), rng.uniform()));
        }
        std::vector<std::array<double, 3>> pts;
        for (const auto& x : d) {
            pts.push_back({static_cast<double>(x.slice_index) * 2.0, x.centroid_y * 0.7, x.centroid_x * 0.7});
        }
        const auto labels = dbscan(pts, 2.5, 1);
        CHECK(std::all_of(labels.begin(), labels.end(), [](int l) { return l >= 0; }));
        const auto c = cluster_3d(d, 2.5, 1, geom);
        CHECK(c.size() == static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end()) + 1));
    }
    SUBCASE("invalid parameters") {
        CHECK_THROWS_AS(cluster_3d(std::vector{detection(0, 1, 1, 0.5)}, 0.0, 1, geom), ValidationError);
        CHECK_THROWS_AS(cluster_3d(std::vector{detection(0, 1, 1, 0.5)}, 1.0, 0, geom), ValidationError);
    }
}

TEST_CASE("extract") {
    CTVolume vol;
    vol.series_id = "sphere";
    vol.shape = {16, 64, 64};
    vol.spacing_mm = {2.0, 0.8, 0.8};
    vol.origin_mm = {-30.0, 10.0, -20.0};

    auto stack_from = [&](const BinaryVolume& mask, double p) {
        std::vector<ProbabilityMap> maps;
        for (std::size_t z = 0; z < vol.shape[0]; ++z) {
            ProbabilityMap pm{Image(64, 64), static_cast<long>(z), vol.series_id};
            for (std::size_t i = 0; i < 64 * 64; ++i) {
                pm.values.values[i] = mask.data[z * 64 * 64 + i] ? p : 0.0;
            }
            maps.push_back(std::move(pm));
        }
        return maps;
    };

    SUBCASE("all-zero stack gives no candidates") {
        const auto maps = stack_from(BinaryVolume(vol.shape), 0.0);
        CHECK(extract(maps, {}, SeriesGeometry::of(vol)).empty());
    }
    SUBCASE("a painted sphere comes back as one candidate") {
        for (double diameter : {8.0, 12.0, 16.0}) {
            const Annotation a{"sphere", vol.voxel_to_world(7.3, 30.2, 25.6), diameter};
            const BinaryVolume mask = rasterize_annotations(vol.shape, vol.spacing_mm, vol.origin_mm, std::vector{a});
            const auto maps = stack_from(mask, 0.9);
            const auto c = extract(maps, {}, SeriesGeometry::of(vol));
            REQUIRE(c.size() == 1);
            CHECK(c[0].probability == 0.9);
            CHECK(std::abs(c[0].center_mm.x - a.center_mm.x) <= vol.spacing_mm[2]);
            CHECK(std::abs(c[0].center_mm.y - a.center_mm.y) <= vol.spacing_mm[1]);
            CHECK(std::abs(c[0].center_mm.z - a.center_mm.z) <= vol.spacing_mm[0]);
            CHECK(std::abs(c[0].radius_mm - diameter / 2.0) <= 0.25 * diameter / 2.0);
        }
    }
    SUBCASE("output is sorted with a deterministic tie-break and bounded by the stack maximum") {
        Rng rng(6);
        std::vector<ProbabilityMap> maps;
        double global = 0.0;
        for (long z = 0; z < 6; ++z) {
            ProbabilityMap pm{Image(32, 32), z, vol.series_id};
            for (auto& v : pm.values.values) {
                v = rng.uniform() < 0.05 ? (rng.uniform() < 0.5 ? 0.75 : rng.uniform()) : 0.0;
                global = std::max(global, v);
            }
            maps.push_back(std::move(pm));
        }
        const auto c = extract(maps, {}, SeriesGeometry::of(vol));
        REQUIRE(c.size() > 2);
        for (std::size_t i = 0; i + 1 < c.size(); ++i) {
            const auto& a = c[i];
            const auto& b = c[i + 1];
            CHECK(a.probability >= b.probability);
            if (a.probability == b.probability) {
                CHECK(std::tie(a.center_mm.z, a.center_mm.y, a.center_mm.x) <
                      std::tie(b.center_mm.z, b.center_mm.y, b.center_mm.x));
            }
        }
        for (const auto& x : c) {
            CHECK(x.probability <= global);
            CHECK(x.radius_mm > 0.0);
        }
        auto shuffled = c;
        std::reverse(shuffled.begin(), shuffled.end());
        sort_candidates(shuffled);
        for (std::size_t i = 0; i < c.size(); ++i) {
            CHECK(shuffled[i].center_mm.x == c[i].center_mm.x);
        }
    }
}

TEST_CASE("candidates CSV") {
    TempDir dir("cands");
    const std::vector<NoduleCandidate> c = {{"a", {1.5, -2.25, 3.0}, 2.5, 0.9}, {"b", {0.1, 0.2, 0.3}, 1.0, 0.125}};
    write_candidates(c, dir / "c.csv");
    CHECK(text::read_file((dir / "c.csv").string()).starts_with(
        "series_id,coord_x,coord_y,coord_z,radius_mm,probability\na,1.5,-2.25,3,2.5,0.9\n"));
    const auto back = read_candidates(dir / "c.csv");
    REQUIRE(back.size() == 2);
    CHECK(back[1].series_id == "b");
    CHECK(back[1].center_mm.y == 0.2);
    CHECK(back[1].probability == 0.125);

    text::write_file((dir / "bad.csv").string(), "series_id,coord_x,coord_y,coord_z,radius_mm,probability\na,1,2\n");
    CHECK_THROWS_AS(read_candidates(dir / "bad.csv"), FormatError);
    text::write_file((dir / "bad2.csv").string(), "series_id,coord_x,coord_y,coord_z,radius_mm,probability\na,1,2,3,1,1.5\n");
    CHECK_THROWS_AS(read_candidates(dir / "bad2.csv"), ValidationError);
}
