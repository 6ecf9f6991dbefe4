// Seeded random attention instances evaluated by both the library kernels and
// the dense oracle. Each runner returns the max absolute difference.
#pragma once

#include "f2bev/attention.hpp"
#include "f2bev/synth.hpp"
#include "oracles/dense_attention.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

namespace cases {

using f2bev::dc::ParamStore;
using f2bev::dc::Rng;
using f2bev::dc::Tensor;

template <typename T>
Tensor<T> uniform(const f2bev::dc::Shape& shape, Rng& rng, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<T> v(f2bev::dc::numel(shape));
    for (auto& x : v) x = static_cast<T>(u(rng));
    return Tensor<T>(shape, std::move(v), true);
}

template <typename T>
void fill(Tensor<T> t, Rng& rng, double scale) {
    std::uniform_real_distribution<double> u(-scale, scale);
    for (auto& v : t.data()) v = static_cast<T>(u(rng));
}

template <typename T>
void randomize(f2bev::nn::Linear<T>& lin, Rng& rng, double w_scale, double b_scale) {
    fill(lin.weight, rng, w_scale);
    fill(lin.bias, rng, b_scale);
}

template <typename T>
oracle::Affine affine(const f2bev::nn::Linear<T>& lin) {
    oracle::Affine a;
    a.in = lin.weight.dim(0);
    a.out = lin.weight.dim(1);
    a.w.assign(lin.weight.data().begin(), lin.weight.data().end());
    a.b.assign(lin.bias.data().begin(), lin.bias.data().end());
    return a;
}

template <typename T>
oracle::Map map_of(const Tensor<T>& t) {
    return {t.dim(0), t.dim(1), t.dim(2), std::vector<double>(t.data().begin(), t.data().end())};
}

template <typename T>
std::vector<std::vector<double>> rows_of(const Tensor<T>& t) {
    std::vector<std::vector<double>> out(t.dim(0));
    for (std::size_t r = 0; r < t.dim(0); ++r)
        for (std::size_t c = 0; c < t.dim(1); ++c) out[r].push_back(static_cast<double>(t[r * t.dim(1) + c]));
    return out;
}

template <typename T>
double max_diff(const Tensor<T>& fast, const std::vector<std::vector<double>>& ref) {
    double worst = 0.0;
    const std::size_t d = fast.dim(1);
    for (std::size_t r = 0; r < ref.size(); ++r)
        for (std::size_t c = 0; c < d; ++c)
            worst = std::max(worst, std::abs(static_cast<double>(fast[r * d + c]) - ref[r][c]));
    return worst;
}

template <typename T>
void randomize(f2bev::attn::DeformableAttnParams<T>& p, Rng& rng) {
    randomize(p.offsets, rng, 0.6, 2.5);
    randomize(p.weights, rng, 1.0, 1.0);
    randomize(p.output, rng, 0.5, 0.5);
}

template <typename T>
oracle::DeformParams oracle_params(const f2bev::attn::DeformableAttnParams<T>& p) {
    return {p.d, p.n_heads, p.n_levels, p.n_points, affine(p.offsets), affine(p.weights), affine(p.output)};
}

// d = 8, 2 heads, 2 levels, 2 points, a handful of queries.
template <typename T>
double deformable_case(std::uint64_t seed) {
    Rng rng(seed);
    ParamStore<T> store;
    f2bev::attn::DeformableAttnParams<T> p(store, "da", 8, 2, 2, 2, rng);
    randomize(p, rng);
    const std::size_t n = 5;
    const auto q = uniform<T>({n, 8}, rng, -1, 1);
    const std::vector<Tensor<T>> levels{uniform<T>({8, 7, 9}, rng, -1, 1), uniform<T>({8, 4, 5}, rng, -1, 1)};
    std::uniform_real_distribution<double> ux(-1.0, 9.0);
    std::vector<T> refs;
    for (std::size_t i = 0; i < n * 2; ++i) {
        refs.push_back(static_cast<T>(ux(rng) * (i % 2 == 0 ? 1.0 : 0.5)));
        refs.push_back(static_cast<T>(ux(rng) * (i % 2 == 0 ? 0.8 : 0.45)));
    }
    const auto fast = f2bev::attn::deformable_attention(q, std::span<const T>(refs), levels, p);
    const auto op = oracle_params(p);
    const std::vector<oracle::Map> maps{map_of(levels[0]), map_of(levels[1])};
    const auto qs = rows_of(q);
    std::vector<std::vector<double>> ref;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::pair<double, double>> r;
        for (std::size_t l = 0; l < 2; ++l) r.emplace_back(refs[(i * 2 + l) * 2], refs[(i * 2 + l) * 2 + 1]);
        ref.push_back(oracle::deformable(qs[i], r, maps, op));
    }
    return max_diff(fast, ref);
}

inline const std::vector<f2bev::camera::FisheyeCamera>& small_rig() {
    static const auto rig = f2bev::synth::default_rig({64, 95.0});
    return rig;
}

template <typename T>
std::vector<f2bev::attn::FeaturePyramid<T>> random_pyramids(std::size_t n_cams, std::size_t d, int image, Rng& rng) {
    std::vector<f2bev::attn::FeaturePyramid<T>> out(n_cams);
    for (auto& pyr : out) {
        for (int s : {4, 8, 16}) {
            const auto side = static_cast<std::size_t>(image / s);
            pyr.levels.push_back(uniform<T>({d, side, side}, rng, -1, 1));
            pyr.strides.push_back(s);
        }
    }
    return out;
}

template <typename T>
std::vector<std::vector<oracle::Map>> oracle_pyramids(const std::vector<f2bev::attn::FeaturePyramid<T>>& pyrs) {
    std::vector<std::vector<oracle::Map>> out;
    for (const auto& p : pyrs) {
        out.emplace_back();
        for (const auto& l : p.levels) out.back().push_back(map_of(l));
    }
    return out;
}

inline std::vector<oracle::ViewRef> valid_refs(const f2bev::bev::ReferencePointTable& table) {
    std::vector<oracle::ViewRef> refs;
    const auto& g = table.grid();
    for (int p = 0; p < g.n_cells(); ++p)
        for (int j = 0; j < g.n_anchors(); ++j)
            for (int i = 0; i < table.n_cameras(); ++i) {
                const auto& e = table.entry(p, j, i);
                if (e.valid) refs.push_back({static_cast<std::size_t>(p), static_cast<std::size_t>(i), e.u, e.v});
            }
    return refs;
}

// Small synthetic rig, random grid size and pitch, d = 8, 2 heads, 3 levels,
// 2 points.
template <typename T>
double spatial_case(std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> cell(0.35, 1.2);
    std::uniform_int_distribution<int> side(4, 7);
    const int gh = side(rng);
    const int gw = side(rng);
    const f2bev::bev::BevGrid grid(gh, gw, cell(rng), {0.0, 0.6, 1.5});
    const auto& rig = small_rig();
    const f2bev::bev::ReferencePointTable table(grid, rig);
    ParamStore<T> store;
    f2bev::attn::DeformableAttnParams<T> p(store, "sca", 8, 2, 3, 2, rng);
    randomize(p, rng);
    const auto n = static_cast<std::size_t>(grid.n_cells());
    const auto q = uniform<T>({n, 8}, rng, -1, 1);
    const auto pyrs = random_pyramids<T>(rig.size(), 8, rig.front().width(), rng);
    const auto fast = f2bev::attn::da_sca(q, pyrs, table, p);
    const auto ref = oracle::spatial_cross(rows_of(q), valid_refs(table), oracle_pyramids(pyrs), {4, 8, 16},
                                           oracle_params(p));
    return max_diff(fast, ref);
}

// Random BEV plane, history present in two thirds of the instances with a
// random validity raster.
template <typename T>
double temporal_case(std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_int_distribution<int> side(3, 6);
    const std::size_t h = static_cast<std::size_t>(side(rng));
    const std::size_t w = static_cast<std::size_t>(side(rng));
    ParamStore<T> store;
    f2bev::attn::TemporalAttnParams<T> p(store, "tsa", 8, 2, 3, rng);
    randomize(p.offsets, rng, 0.6, 2.0);
    randomize(p.weights, rng, 1.0, 1.0);
    randomize(p.output, rng, 0.5, 0.5);
    const auto q = uniform<T>({h * w, 8}, rng, -1, 1);
    const bool with_history = seed % 3 != 0;
    Tensor<T> history;
    std::vector<std::uint8_t> valid(h * w, 0);
    std::bernoulli_distribution coin(0.7);
    if (with_history) {
        history = uniform<T>({h * w, 8}, rng, -1, 1);
        for (auto& v : valid) v = coin(rng) ? 1 : 0;
    }
    const auto fast = f2bev::attn::temporal_self_attention(q, history, std::span<const std::uint8_t>(valid), h, w, p);
    const oracle::TemporalParams op{8, 2, 3, affine(p.offsets), affine(p.weights), affine(p.output)};
    const auto hist_rows = with_history ? rows_of(history) : std::vector<std::vector<double>>{};
    const std::vector<unsigned char> vv(valid.begin(), valid.end());
    const auto ref = oracle::temporal(rows_of(q), with_history ? &hist_rows : nullptr, vv, h, w, op);
    return max_diff(fast, ref);
}

}  // namespace cases
