#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "f2bev/bev_geometry.hpp"
#include "f2bev/synth.hpp"

#include <cmath>
#include <random>
#include <sstream>

using namespace f2bev;
using namespace f2bev::bev;

namespace {

// Camera at `center` looking along +x of the ego frame.
camera::FisheyeCamera forward_camera(const Eigen::Vector3d& center) {
    Eigen::Matrix3d r;
    r << 0, -1, 0, 0, 0, -1, 1, 0, 0;
    return camera::FisheyeCamera({40, 40, 0, 64, 64, 0.8}, {}, 128, 128, r, -r * center);
}

EgoMotion planar_motion(double yaw, double tx, double ty) {
    const Pose p = Pose::planar(yaw, tx, ty);
    return {p.rotation, p.translation};
}

}  // namespace

TEST_CASE("cell_to_world on the 50 x 50 grid") {
    const BevGrid g = BevGrid::paper_default();
    auto c = g.cell_to_world(25, 25);
    CHECK(c.x == 0.0);
    CHECK(c.y == 0.0);
    c = g.cell_to_world(0, 0);
    CHECK(c.x == -25 * 0.33);
    CHECK(c.y == -25 * 0.33);
    CHECK(std::abs(c.x + 8.25) < 1e-12);
    c = g.cell_to_world(49, 25);
    CHECK(std::abs(c.x - 7.92) < 1e-12);
    CHECK(c.y == 0.0);
    CHECK_THROWS_AS(g.cell_to_world(50, 0), PreconditionError);
    CHECK_THROWS_AS(g.cell_to_world(0, -1), PreconditionError);
}

TEST_CASE("cell_to_world is affine with slope l") {
    const BevGrid g(20, 30, 0.4, {0.0});
    for (int y = 0; y + 1 < g.h(); ++y) {
        for (int x = 0; x + 1 < g.w(); ++x) {
            const auto a = g.cell_to_world(x, y);
            CHECK(std::abs(g.cell_to_world(x + 1, y).x - a.x - 0.4) < 1e-12);
            CHECK(std::abs(g.cell_to_world(x, y + 1).y - a.y - 0.4) < 1e-12);
        }
    }
}

TEST_CASE("grid invariants") {
    CHECK_THROWS_AS(BevGrid(0, 4, 1.0, {0.0}), PreconditionError);
    CHECK_THROWS_AS(BevGrid(4, 4, 0.0, {0.0}), PreconditionError);
    CHECK_THROWS_AS(BevGrid(4, 4, 1.0, {}), PreconditionError);
    CHECK_THROWS_AS(BevGrid(4, 4, 1.0, {0.5, 0.5}), PreconditionError);
}

TEST_CASE("anchor points") {
    const BevGrid g = BevGrid::paper_default();
    const auto pts = g.anchor_points(25, 25);
    REQUIRE(pts.size() == 3);
    CHECK(pts[0] == Eigen::Vector3d(0, 0, 0));
    CHECK(pts[1] == Eigen::Vector3d(0, 0, 0.25));
    CHECK(pts[2] == Eigen::Vector3d(0, 0, 1.8));
    const BevGrid single(50, 50, 0.33, {0.0});
    CHECK(single.anchor_points(3, 4).size() == 1);
    for (const auto& p : g.anchor_points(0, 0)) {
        CHECK(std::abs(p.x() + 8.25) < 1e-12);
        CHECK(std::abs(p.y() + 8.25) < 1e-12);
    }
}

TEST_CASE("reference table with a single forward camera") {
    const BevGrid g(20, 20, 0.5, {0.0, 1.0});
    const std::vector<camera::FisheyeCamera> cams{forward_camera({0.0, 0.0, 1.2})};
    const auto table = build_reference_table(g, cams);
    // Cell 4 m behind the camera.
    CHECK(table.valid_views(g.index(2, 10)).empty());
    // Cell 4 m ahead.
    const auto ahead = table.valid_views(g.index(18, 10));
    REQUIRE(ahead.size() == 1);
    CHECK(ahead[0] == 0);
}

TEST_CASE("reference table on the synthetic rig") {
    const auto rig = synth::default_rig({});
    const BevGrid g(16, 16, 1.0, {0.0, 0.25, 1.8});
    const auto table = build_reference_table(g, rig);
    // Ego-car center: every projection lands on the car body or the rim.
    CHECK(table.valid_views(g.index(8, 8)).empty());
    // 5 m ahead: the front camera sees it.
    const auto views = table.valid_views(g.index(13, 8));
    CHECK(std::find(views.begin(), views.end(), 0) != views.end());

    // Soundness: every valid entry re-verifies.
    for (int p = 0; p < g.n_cells(); ++p) {
        const auto pts = g.anchor_points(p % g.w(), p / g.w());
        for (int j = 0; j < g.n_anchors(); ++j) {
            for (int i = 0; i < table.n_cameras(); ++i) {
                const auto& e = table.entry(p, j, i);
                const auto proj = rig[static_cast<std::size_t>(i)].project(pts[static_cast<std::size_t>(j)]);
                CHECK(proj.valid == e.valid);
                if (e.valid) {
                    CHECK(rig[static_cast<std::size_t>(i)].pixel_valid(e.u, e.v));
                    CHECK(proj.u == e.u);
                }
            }
        }
        const auto vv = table.valid_views(p);
        for (int i = 0; i < table.n_cameras(); ++i) {
            bool any = false;
            for (int j = 0; j < g.n_anchors(); ++j) any = any || table.entry(p, j, i).valid;
            CHECK(any == (std::find(vv.begin(), vv.end(), i) != vv.end()));
        }
    }
    const auto again = build_reference_table(g, rig);
    for (int p = 0; p < g.n_cells(); ++p) {
        const bool same = again.entry(p, 1, 2).u == table.entry(p, 1, 2).u || std::isnan(table.entry(p, 1, 2).u);
        CHECK(same);
    }
}

TEST_CASE("reference table CSV dump") {
    const BevGrid g(2, 3, 1.0, {0.0});
    const std::vector<camera::FisheyeCamera> cams{forward_camera({-3.0, 0.0, 1.0})};
    std::ostringstream out;
    build_reference_table(g, cams).write_csv(out);
    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);
    CHECK(line == "cell_x,cell_y,anchor_index,camera_index,u,v,valid");
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 6);
}

TEST_CASE("ego motion bookkeeping") {
    const Pose a = Pose::planar(0.3, 1.0, -2.0);
    const Pose b = Pose::planar(0.5, 1.4, -1.7);
    const Pose c = Pose::planar(0.2, 2.0, -1.0);
    const EgoMotion ab = EgoMotion::between(a, b);
    const EgoMotion bc = EgoMotion::between(b, c);
    const EgoMotion ac = EgoMotion::between(a, c);
    const EgoMotion chained = EgoMotion::chain(ab, bc);
    CHECK((chained.rotation - ac.rotation).norm() < 1e-12);
    CHECK((chained.translation - ac.translation).norm() < 1e-12);
    // A point at the current ego origin sits at b's origin expressed in a's frame.
    const Eigen::Vector3d p = ab.apply(Eigen::Vector3d::Zero());
    CHECK((a.apply(p) - b.translation).norm() < 1e-12);
    CHECK(std::abs(ab.yaw() - 0.2) < 1e-12);
}

TEST_CASE("identity alignment is exact") {
    const BevGrid g(7, 9, 0.5, {0.0});
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-1, 1);
    std::vector<double> f(7 * 9 * 3);
    for (auto& v : f) v = u(rng);
    const auto out = align_previous<double>(f, 3, EgoMotion::identity(), g);
    CHECK(out.features == f);
    for (auto v : out.valid) CHECK(v == 1);
}

TEST_CASE("one-cell translation shifts by one cell") {
    const BevGrid g(6, 8, 0.5, {0.0});
    std::vector<float> f(6 * 8 * 2);
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = static_cast<float>(i % 13) - 4.0f;
    const auto out = align_previous<float>(f, 2, planar_motion(0.0, 0.5, 0.0), g);
    for (int y = 0; y < 6; ++y) {
        for (int x = 0; x < 8; ++x) {
            for (int c = 0; c < 2; ++c) {
                const float expected = x + 1 < 8 ? f[(static_cast<std::size_t>(y) * 8 + x + 1) * 2 + c] : 0.0f;
                CHECK(out.features[(static_cast<std::size_t>(y) * 8 + x) * 2 + c] == expected);
            }
            CHECK(out.valid[static_cast<std::size_t>(y) * 8 + x] == (x + 1 < 8 ? 1 : 0));
        }
    }
}

TEST_CASE("180 degree rotation reverses indices") {
    const int h = 6, w = 8;
    const BevGrid g(h, w, 0.25, {0.0});
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-1, 1);
    std::vector<double> f(static_cast<std::size_t>(h) * w);
    for (auto& v : f) v = u(rng);
    const auto out = align_previous<double>(f, 1, planar_motion(M_PI, 0.0, 0.0), g);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double expected = (x >= 1 && y >= 1) ? f[static_cast<std::size_t>(h - y) * w + (w - x)] : 0.0;
            CHECK(std::abs(out.features[static_cast<std::size_t>(y) * w + x] - expected) < 1e-6);
        }
    }
}

TEST_CASE("alignment composes") {
    const int h = 24, w = 24;
    const BevGrid g(h, w, 0.5, {0.0});
    // Bilinear resampling reproduces an affine field exactly, so two hops
    // must agree with one combined hop wherever both are defined.
    std::vector<double> f(static_cast<std::size_t>(h) * w * 2);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            f[(static_cast<std::size_t>(y) * w + x) * 2] = 0.3 * x - 0.2 * y + 1.0;
            f[(static_cast<std::size_t>(y) * w + x) * 2 + 1] = -0.1 * x + 0.05 * y;
        }
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> yaw(-0.3, 0.3), t(-1.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        const EgoMotion m1 = planar_motion(yaw(rng), t(rng), t(rng));
        const EgoMotion m2 = planar_motion(yaw(rng), t(rng), t(rng));
        const auto once = align_previous<double>(f, 2, m1, g);
        const auto twice = align_previous<double>(once.features, 2, m2, g);
        const auto direct = align_previous<double>(f, 2, EgoMotion::chain(m1, m2), g);
        int compared = 0;
        for (int y = 2; y < h - 2; ++y) {
            for (int x = 2; x < w - 2; ++x) {
                const std::size_t i = static_cast<std::size_t>(y) * w + x;
                if (!direct.valid[i] || !twice.valid[i]) continue;
                // The second hop must read only valid first-hop cells.
                const double c = std::cos(m2.yaw()), sn = std::sin(m2.yaw());
                const double px = c * (x - w / 2.0) - sn * (y - h / 2.0) + m2.translation.x() / 0.5 + w / 2.0;
                const double py = sn * (x - w / 2.0) + c * (y - h / 2.0) + m2.translation.y() / 0.5 + h / 2.0;
                const int x0 = static_cast<int>(std::floor(px)), y0 = static_cast<int>(std::floor(py));
                bool interior = x0 >= 0 && y0 >= 0 && x0 + 1 < w && y0 + 1 < h;
                for (int dy = 0; dy <= 1 && interior; ++dy)
                    for (int dx = 0; dx <= 1 && interior; ++dx)
                        interior = once.valid[static_cast<std::size_t>(y0 + dy) * w + x0 + dx] != 0;
                if (!interior) continue;
                ++compared;
                CHECK(std::abs(twice.features[i * 2] - direct.features[i * 2]) < 2e-6);
                CHECK(std::abs(twice.features[i * 2 + 1] - direct.features[i * 2 + 1]) < 2e-6);
            }
        }
        CHECK(compared > 0);
    }
}
