#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support/attention_cases.hpp"
#include "unit/test_util.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <numbers>

using namespace f2bev;
using namespace f2bev::attn;
using cases::uniform;
using dc::Rng;
using dc::Tensor;

namespace {

template <typename T>
void set_identity(nn::Linear<T>& lin) {
    auto w = lin.weight.data();
    const std::size_t n = lin.weight.dim(1);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = (i / n == i % n) ? T(1) : T(0);
    for (auto& b : lin.bias.data()) b = T(0);
}

template <typename T>
void zero(nn::Linear<T>& lin) {
    for (auto& v : lin.weight.data()) v = T(0);
    for (auto& v : lin.bias.data()) v = T(0);
}

// Smallest distance of any sampling coordinate to a texel line (or the
// zero-padding border), where bilinear sampling has a kink.
template <typename T>
double kink_margin(const CrossAttentionPlan<T>& plan, const Tensor<T>& queries, const DeformableAttnParams<T>& p) {
    const auto off = p.offsets(queries);
    const std::size_t width = off.dim(1);
    double margin = 1e9;
    for (const auto& view : plan.views)
        for (std::size_t r = 0; r < view.cells.size(); ++r)
            for (std::size_t m = 0; m < p.n_heads; ++m)
                for (std::size_t l = 0; l < p.n_levels; ++l)
                    for (std::size_t k = 0; k < p.n_points; ++k)
                        for (std::size_t xy = 0; xy < 2; ++xy) {
                            const std::size_t idx = (((m * p.n_levels + l) * p.n_points + k) * 2) + xy;
                            const double v = static_cast<double>(view.refs[(r * p.n_levels + l) * 2 + xy]) +
                                             static_cast<double>(off[view.cells[r] * width + idx]);
                            margin = std::min(margin, std::abs(v - std::round(v)));
                        }
    return margin;
}

template <typename T>
bool rows_bitwise_equal(const Tensor<T>& a, const Tensor<T>& b, std::size_t row) {
    const std::size_t d = a.dim(1);
    for (std::size_t c = 0; c < d; ++c)
        if (a[row * d + c] != b[row * d + c]) return false;
    return true;
}

template <typename T>
void expect_grads(const std::function<Tensor<T>()>& f, std::vector<dc::NamedParam<T>> inputs,
                  std::size_t max_probes = 0) {
    dc::GradCheckOptions opt;
    opt.max_probes = max_probes;
    const auto report = dc::grad_check<T>(f, std::move(inputs), opt);
    for (const auto& e : report.entries) {
        INFO(e.name << " err " << e.max_error << " analytic " << e.analytic << " numeric " << e.numeric);
        CHECK(e.max_error <= report.tolerance);
    }
}

}  // namespace

TEST_CASE("initial offsets form a ring and weights are uniform") {
    Rng rng(1);
    dc::ParamStore<double> store;
    DeformableAttnParams<double> p(store, "a", 8, 4, 2, 3, rng);
    const auto b = p.offsets.bias;
    // head 1 points along +y, head 2 along -x
    const std::size_t h1 = ((1 * 2 + 0) * 3 + 2) * 2;
    CHECK(b[h1] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(b[h1 + 1] == doctest::Approx(3.0));
    const std::size_t h2 = ((2 * 2 + 1) * 3 + 0) * 2;
    CHECK(b[h2] == doctest::Approx(-1.0));
    for (double v : p.offsets.weight.data()) CHECK(v == 0.0);
    for (double v : p.weights.weight.data()) CHECK(v == 0.0);
    for (double v : p.weights.bias.data()) CHECK(v == 0.0);
    CHECK_THROWS_AS(DeformableAttnParams<double>(store, "bad", 6, 4, 1, 1, rng), PreconditionError);
}

TEST_CASE("deformable attention matches the dense oracle") {
    double worst_d = 0.0, worst_f = 0.0;
    for (std::uint64_t s = 0; s < 100; ++s) {
        worst_d = std::max(worst_d, cases::deformable_case<double>(1000 + s));
        worst_f = std::max(worst_f, cases::deformable_case<float>(1000 + s));
    }
    CHECK(worst_d < 1e-9);
    CHECK(worst_f < 1e-4);
}

TEST_CASE("one-hot weight on a zero offset reads a single texel") {
    Rng rng(2);
    dc::ParamStore<double> store;
    DeformableAttnParams<double> p(store, "a", 4, 2, 2, 2, rng);
    zero(p.offsets);
    zero(p.weights);
    set_identity(p.output);
    // Head m puts all mass on (level 0, point 1).
    for (std::size_t m = 0; m < 2; ++m) p.weights.bias.data()[(m * 2 + 0) * 2 + 1] = 80.0;
    const std::vector<Tensor<double>> levels{uniform<double>({4, 5, 6}, rng, -1, 1), uniform<double>({4, 3, 3}, rng, -1, 1)};
    const auto q = uniform<double>({1, 4}, rng, -1, 1);
    const std::vector<double> refs{2.0, 3.0, 0.7, 0.2};
    const auto y = deformable_attention(q, std::span<const double>(refs), levels, p);
    for (std::size_t c = 0; c < 4; ++c) CHECK(y[c] == doctest::Approx(levels[0][(c * 5 + 3) * 6 + 2]).epsilon(1e-12));
}

TEST_CASE("constant feature maps make the output independent of offsets") {
    Rng rng(3);
    dc::ParamStore<double> store;
    DeformableAttnParams<double> p(store, "a", 8, 2, 2, 3, rng);
    cases::randomize(p, rng);
    set_identity(p.output);
    std::vector<Tensor<double>> levels;
    for (std::size_t side : {40, 30}) {
        std::vector<double> v(8 * side * side);
        for (std::size_t c = 0; c < 8; ++c)
            for (std::size_t i = 0; i < side * side; ++i) v[c * side * side + i] = 0.25 * static_cast<double>(c) - 1.0;
        levels.emplace_back(dc::Shape{8, side, side}, v);
    }
    const auto q = uniform<double>({3, 8}, rng, -1, 1);
    const std::vector<double> refs{20.3, 19.6, 14.2, 15.1, 18.0, 21.5, 13.4, 12.9, 22.2, 17.7, 15.5, 14.0};
    const auto a = deformable_attention(q, std::span<const double>(refs), levels, p);
    cases::randomize(p.offsets, rng, 0.6, 2.5);
    const auto b = deformable_attention(q, std::span<const double>(refs), levels, p);
    for (std::size_t i = 0; i < a.numel(); ++i) {
        CHECK(std::abs(a[i] - b[i]) < 1e-12);
        // Weights normalize to one per head, so the constant passes through.
        CHECK(std::abs(a[i] - (0.25 * static_cast<double>(i % 8) - 1.0)) < 1e-12);
    }
}

TEST_CASE("spatial cross attention matches the dense oracle") {
    double worst_d = 0.0, worst_f = 0.0;
    for (std::uint64_t s = 0; s < 100; ++s) {
        worst_d = std::max(worst_d, cases::spatial_case<double>(2000 + s));
        worst_f = std::max(worst_f, cases::spatial_case<float>(2000 + s));
    }
    CHECK(worst_d < 1e-9);
    CHECK(worst_f < 1e-4);
}

TEST_CASE("one view and one anchor reduce to plain deformable attention") {
    Rng rng(4);
    const std::vector<camera::FisheyeCamera> one{cases::small_rig().front()};
    const bev::BevGrid grid(12, 12, 0.9, {0.0});
    const bev::ReferencePointTable table(grid, one);
    dc::ParamStore<double> store;
    DeformableAttnParams<double> p(store, "a", 8, 2, 3, 2, rng);
    cases::randomize(p, rng);
    const auto q = uniform<double>({144, 8}, rng, -1, 1);
    const auto pyrs = cases::random_pyramids<double>(1, 8, one.front().width(), rng);
    const auto out = da_sca(q, pyrs, table, p);
    std::size_t checked = 0;
    for (int cell = 0; cell < 144; ++cell) {
        const auto& e = table.entry(cell, 0, 0);
        if (!e.valid) {
            for (std::size_t c = 0; c < 8; ++c) CHECK(out[static_cast<std::size_t>(cell) * 8 + c] == 0.0);
            continue;
        }
        std::vector<double> refs;
        for (int s : {4, 8, 16}) {
            refs.push_back(e.u / s - 0.5);
            refs.push_back(e.v / s - 0.5);
        }
        const auto single = deformable_attention(dc::gather_rows(q, std::vector<std::size_t>{static_cast<std::size_t>(cell)}),
                                                 std::span<const double>(refs), pyrs[0].levels, p);
        for (std::size_t c = 0; c < 8; ++c) CHECK(std::abs(single[c] - out[static_cast<std::size_t>(cell) * 8 + c]) < 1e-12);
        ++checked;
    }
    CHECK(checked > 5);
}

TEST_CASE("features of invalid views do not reach a cell") {
    Rng rng(5);
    const auto& rig = cases::small_rig();
    const bev::BevGrid grid(10, 10, 0.7, {0.0, 0.25, 1.8});
    const bev::ReferencePointTable table(grid, rig);
    const auto plan = make_cross_attention_plan<float>(table, std::vector<int>{4, 8, 16});
    dc::ParamStore<float> store;
    DeformableAttnParams<float> p(store, "a", 8, 2, 3, 2, rng);
    cases::randomize(p, rng);
    const auto q = uniform<float>({100, 8}, rng, -1, 1);
    auto pyrs = cases::random_pyramids<float>(rig.size(), 8, rig.front().width(), rng);
    const auto base = da_sca(q, pyrs, plan, p);
    std::size_t pairs = 0;
    std::size_t empty = 0;
    for (std::size_t i = 0; i < rig.size(); ++i) {
        auto perturbed = pyrs;
        for (auto& l : perturbed[i].levels) l = uniform<float>(l.shape(), rng, -5, 5);
        const auto out = da_sca(q, perturbed, plan, p);
        for (int cell = 0; cell < 100; ++cell) {
            const auto views = table.valid_views(cell);
            if (views.empty()) ++empty;
            if (std::find(views.begin(), views.end(), static_cast<int>(i)) != views.end()) continue;
            CHECK(rows_bitwise_equal(base, out, static_cast<std::size_t>(cell)));
            ++pairs;
        }
    }
    CHECK(pairs > 100);
    CHECK(empty > 0);
}

TEST_CASE("duplicating a camera leaves the output unchanged") {
    Rng rng(6);
    const auto cam = cases::small_rig()[1];
    const bev::BevGrid grid(7, 7, 0.6, {0.0, 1.0});
    const std::vector<camera::FisheyeCamera> one{cam};
    const std::vector<camera::FisheyeCamera> two{cam, cam};
    dc::ParamStore<double> store;
    DeformableAttnParams<double> p(store, "a", 8, 2, 3, 2, rng);
    cases::randomize(p, rng);
    const auto q = uniform<double>({49, 8}, rng, -1, 1);
    const auto pyr = cases::random_pyramids<double>(1, 8, cam.width(), rng);
    const auto a = da_sca(q, pyr, bev::ReferencePointTable(grid, one), p);
    const auto b = da_sca(q, {pyr[0], pyr[0]}, bev::ReferencePointTable(grid, two), p);
    double worst = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    CHECK(worst < 1e-6);
}

TEST_CASE("mirrored rig and features give mirrored outputs") {
    const double pitch = 40.0 * std::numbers::pi / 180.0;
    const double c = std::cos(pitch), s = std::sin(pitch);
    camera::Intrinsics in;
    in.gamma1 = in.gamma2 = 30.0;
    in.c1 = in.c2 = 32.0;
    in.xi = 1.0;
    const camera::Distortion k{-0.02, 0.003, 0.0, 0.0};
    auto make = [&](double side) {
        Eigen::Matrix3d r;
        r.row(0) = Eigen::Vector3d(side, 0, 0);
        r.row(2) = Eigen::Vector3d(0, side * c, -s);
        r.row(1) = Eigen::Vector3d(r.row(2)).cross(Eigen::Vector3d(r.row(0)));
        const Eigen::Vector3d center(0.0, side, 1.0);
        return camera::FisheyeCamera(in, k, 64, 64, r, -r * center);
    };
    const std::vector<camera::FisheyeCamera> rig{make(1.0), make(-1.0)};
    const int n = 8;
    const bev::BevGrid grid(n, n, 0.5, {0.0, 0.8});
    const bev::ReferencePointTable table(grid, rig);

    Rng rng(7);
    dc::ParamStore<double> store;
    DeformableAttnParams<double> p(store, "a", 8, 2, 3, 2, rng);
    cases::randomize(p, rng);
    // Offsets along image v only, so mirroring commutes with sampling.
    auto ow = p.offsets.weight.data();
    for (std::size_t i = 0; i < ow.size(); ++i)
        if ((i % p.offsets.weight.dim(1)) % 2 == 0) ow[i] = 0.0;
    auto ob = p.offsets.bias.data();
    for (std::size_t i = 0; i < ob.size(); i += 2) ob[i] = 0.0;

    auto pyrs = cases::random_pyramids<double>(2, 8, 64, rng);
    for (std::size_t l = 0; l < 3; ++l) {
        const auto& a = pyrs[0].levels[l];
        auto& b = pyrs[1].levels[l];
        const std::size_t hh = a.dim(1), ww = a.dim(2);
        for (std::size_t ch = 0; ch < 8; ++ch)
            for (std::size_t y = 0; y < hh; ++y)
                for (std::size_t x = 0; x < ww; ++x) b.data()[(ch * hh + y) * ww + x] = a[(ch * hh + y) * ww + (ww - 1 - x)];
    }
    auto q = uniform<double>({static_cast<std::size_t>(n * n), 8}, rng, -1, 1);
    for (int y = 1; y < n; ++y)
        for (int x = 0; x < n; ++x)
            for (std::size_t ch = 0; ch < 8; ++ch)
                q.data()[static_cast<std::size_t>((n - y) * n + x) * 8 + ch] = q[static_cast<std::size_t>(y * n + x) * 8 + ch];
    const auto out = da_sca(q, pyrs, table, p);
    double worst = 0.0;
    std::size_t nonzero = 0;
    for (int y = 1; y < n; ++y)
        for (int x = 0; x < n; ++x)
            for (std::size_t ch = 0; ch < 8; ++ch) {
                const double a = out[static_cast<std::size_t>(y * n + x) * 8 + ch];
                const double b = out[static_cast<std::size_t>((n - y) * n + x) * 8 + ch];
                worst = std::max(worst, std::abs(a - b));
                if (a != 0.0) ++nonzero;
            }
    CHECK(worst < 1e-6);
    CHECK(nonzero > 100);
}

TEST_CASE("temporal self attention matches the dense oracle") {
    double worst_d = 0.0, worst_f = 0.0;
    for (std::uint64_t s = 0; s < 100; ++s) {
        worst_d = std::max(worst_d, cases::temporal_case<double>(3000 + s));
        worst_f = std::max(worst_f, cases::temporal_case<float>(3000 + s));
    }
    CHECK(worst_d < 1e-9);
    CHECK(worst_f < 1e-4);
}

TEST_CASE("history equal to the queries matches the first-frame path") {
    Rng rng(8);
    dc::ParamStore<double> store;
    TemporalAttnParams<double> p(store, "t", 8, 2, 3, rng);
    cases::randomize(p.offsets, rng, 0.6, 2.0);
    cases::randomize(p.weights, rng, 1.0, 1.0);
    const auto q = uniform<double>({20, 8}, rng, -1, 1);
    const std::vector<std::uint8_t> all(20, 1);
    const auto first = temporal_self_attention(q, Tensor<double>(), std::span<const std::uint8_t>(), 4, 5, p);
    const auto dup = temporal_self_attention(q, q.clone(), std::span<const std::uint8_t>(all), 4, 5, p);
    for (std::size_t i = 0; i < first.numel(); ++i) CHECK(std::abs(first[i] - dup[i]) < 1e-6);
    const auto other = uniform<double>({20, 8}, rng, -1, 1);
    const std::vector<std::uint8_t> none(20, 0);
    const auto masked = temporal_self_attention(q, other, std::span<const std::uint8_t>(none), 4, 5, p);
    for (std::size_t i = 0; i < first.numel(); ++i) CHECK(masked[i] == first[i]);
    CHECK_THROWS_AS(temporal_self_attention(q, uniform<double>({19, 8}, rng, -1, 1), std::span<const std::uint8_t>(all), 4, 5, p),
                    ShapeError);
}

TEST_CASE("multi-head attention examples") {
    Rng rng(9);
    dc::ParamStore<double> store;
    MultiHeadAttnParams<double> p(store, "m", 8, 2, rng);
    const auto q = uniform<double>({3, 8}, rng, -1, 1);
    const auto kv = uniform<double>({1, 8}, rng, -1, 1);
    const auto r = multi_head_attention(q, kv, kv, p);
    const auto expect = p.o(p.v(kv));
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t c = 0; c < 8; ++c) CHECK(r.output[i * 8 + c] == doctest::Approx(expect[c]).epsilon(1e-12));
    std::vector<double> krows;
    for (int i = 0; i < 5; ++i) krows.insert(krows.end(), kv.data().begin(), kv.data().end());
    const Tensor<double> k({5, 8}, krows);
    const auto v = uniform<double>({5, 8}, rng, -1, 1);
    const auto u = multi_head_attention(q, k, v, p);
    REQUIRE(u.attn_maps.shape() == dc::Shape{2, 3, 5});
    for (double a : u.attn_maps.data()) CHECK(a == doctest::Approx(0.2));
    REQUIRE(u.mean_scores.shape() == dc::Shape{3, 5});
    // mean over heads of q_h . k_h / sqrt(d_h)
    const auto qp = p.q(q), kp = p.k(k);
    double expect_score = 0.0;
    for (std::size_t c = 0; c < 8; ++c) expect_score += qp[8 + c] * kp[c];
    expect_score /= 2.0 * 2.0;
    CHECK(u.mean_scores[5] == doctest::Approx(expect_score).epsilon(1e-12));
    CHECK_THROWS_AS(multi_head_attention(q, uniform<double>({2, 8}, rng, -1, 1), v, p), ShapeError);
    CHECK_THROWS_AS(MultiHeadAttnParams<double>(store, "bad", 8, 3, rng), PreconditionError);
}

TEST_CASE("multi-head attention gradients") {
    Rng rng(10);
    dc::ParamStore<double> sd;
    MultiHeadAttnParams<double> pd(sd, "m", 8, 2, rng);
    auto q = uniform<double>({3, 8}, rng, -1, 1);
    auto k = uniform<double>({4, 8}, rng, -1, 1);
    auto v = uniform<double>({4, 8}, rng, -1, 1);
    testutil::Probe<double> probe({3, 8}, rng);
    testutil::Probe<double> sprobe({3, 4}, rng);
    expect_grads<double>(
        [&] {
            const auto r = multi_head_attention(q, k, v, pd);
            return dc::add(probe(r.output), sprobe(r.mean_scores));
        },
        {{"q", q}, {"k", k}, {"v", v}, {"wq", pd.q.weight}, {"wo", pd.o.weight}});
    dc::ParamStore<float> sf;
    MultiHeadAttnParams<float> pf(sf, "m", 8, 2, rng);
    auto qf = uniform<float>({3, 8}, rng, -1, 1);
    auto kf = uniform<float>({4, 8}, rng, -1, 1);
    testutil::Probe<float> pf_probe({3, 8}, rng);
    expect_grads<float>([&] { return pf_probe(multi_head_attention(qf, kf, kf, pf).output); },
                        {{"q", qf}, {"k", kf}, {"wk", pf.k.weight}});
}

TEST_CASE("deformable and temporal attention gradients") {
    Rng rng(11);
    dc::ParamStore<double> store;
    DeformableAttnParams<double> p(store, "a", 8, 2, 2, 2, rng);
    cases::randomize(p, rng);
    auto q = uniform<double>({3, 8}, rng, -1, 1);
    std::vector<Tensor<double>> levels{uniform<double>({8, 6, 7}, rng, -1, 1), uniform<double>({8, 3, 4}, rng, -1, 1)};
    const std::vector<double> refs{2.3, 3.1, 1.2, 1.4, 4.6, 0.7, 2.1, 0.3, 0.2, 4.4, 0.6, 1.8};
    testutil::Probe<double> probe({3, 8}, rng);
    expect_grads<double>([&] { return probe(deformable_attention(q, std::span<const double>(refs), levels, p)); },
                         {{"query", q},
                          {"level0", levels[0]},
                          {"level1", levels[1]},
                          {"offsets", p.offsets.weight},
                          {"weights", p.weights.weight},
                          {"output", p.output.weight}});

    dc::ParamStore<double> ts;
    TemporalAttnParams<double> tp(ts, "t", 8, 2, 2, rng);
    cases::randomize(tp.offsets, rng, 0.6, 2.0);
    cases::randomize(tp.weights, rng, 1.0, 1.0);
    auto tq = uniform<double>({12, 8}, rng, -1, 1);
    auto hist = uniform<double>({12, 8}, rng, -1, 1);
    std::vector<std::uint8_t> valid(12, 1);
    valid[3] = valid[7] = 0;
    testutil::Probe<double> tprobe({12, 8}, rng);
    expect_grads<double>(
        [&] { return tprobe(temporal_self_attention(tq, hist, std::span<const std::uint8_t>(valid), 3, 4, tp)); },
        {{"queries", tq}, {"history", hist}, {"offsets", tp.offsets.weight}, {"weights", tp.weights.weight}});
}

TEST_CASE_TEMPLATE("end-to-end gradients through spatial cross attention", T, float, double) {
    Rng rng(12);
    const auto& rig = cases::small_rig();
    const bev::BevGrid grid(3, 3, 1.6, {0.0, 1.0});
    const bev::ReferencePointTable table(grid, rig);
    const auto plan = make_cross_attention_plan<T>(table, std::vector<int>{4, 8, 16});
    dc::ParamStore<T> store;
    DeformableAttnParams<T> p(store, "a", 4, 2, 3, 1, rng);
    Tensor<T> q;
    // Keep every sample away from texel lines by more than the probe step.
    int attempts = 0;
    do {
        cases::randomize(p, rng);
        q = uniform<T>({9, 4}, rng, -1, 1);
        REQUIRE(++attempts < 200);
    } while (kink_margin(plan, q, p) < 5e-3);
    auto pyrs = cases::random_pyramids<T>(rig.size(), 4, rig.front().width(), rng);
    testutil::Probe<T> probe({9, 4}, rng);
    expect_grads<T>([&] { return probe(da_sca(q, pyrs, plan, p)); },
                    {{"query", q},
                     {"front.level0", pyrs[0].levels[0]},
                     {"left.level1", pyrs[1].levels[1]},
                     {"rear.level2", pyrs[2].levels[2]},
                     {"offsets", p.offsets.weight},
                     {"weights", p.weights.weight}},
                    64);
}
