// Dense reference implementations written against plain arrays, without the
// tensor library, used to validate the fused attention kernels.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace oracle {

struct Map {
    std::size_t c = 0, h = 0, w = 0;
    std::vector<double> v;  // [c][h][w]
    double at(std::size_t ch, long y, long x) const {
        if (y < 0 || x < 0 || y >= static_cast<long>(h) || x >= static_cast<long>(w)) return 0.0;
        return v[(ch * h + static_cast<std::size_t>(y)) * w + static_cast<std::size_t>(x)];
    }
    // Bilinear read with integer texel centers and zeros outside.
    double sample(std::size_t ch, double x, double y) const {
        const double fx = std::floor(x), fy = std::floor(y);
        const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
        const double ax = x - fx, ay = y - fy;
        return (1 - ax) * (1 - ay) * at(ch, y0, x0) + ax * (1 - ay) * at(ch, y0, x0 + 1) +
               (1 - ax) * ay * at(ch, y0 + 1, x0) + ax * ay * at(ch, y0 + 1, x0 + 1);
    }
};

// y = x W + b with W stored [in][out].
struct Affine {
    std::size_t in = 0, out = 0;
    std::vector<double> w, b;
    std::vector<double> operator()(const std::vector<double>& x) const {
        std::vector<double> y(b);
        for (std::size_t i = 0; i < in; ++i)
            for (std::size_t j = 0; j < out; ++j) y[j] += x[i] * w[i * out + j];
        return y;
    }
};

inline void softmax_inplace(double* v, std::size_t n) {
    double mx = v[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, v[i]);
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) s += (v[i] = std::exp(v[i] - mx));
    for (std::size_t i = 0; i < n; ++i) v[i] /= s;
}

struct DeformParams {
    std::size_t d = 0, heads = 0, levels = 0, points = 0;
    Affine offsets, weights, output;
};

// One query. refs[l] = (x, y) in level-l texel units.
inline std::vector<double> deformable(const std::vector<double>& q, const std::vector<std::pair<double, double>>& refs,
                                      const std::vector<Map>& maps, const DeformParams& p) {
    const auto off = p.offsets(q);
    auto logit = p.weights(q);
    const std::size_t lp = p.levels * p.points;
    for (std::size_t m = 0; m < p.heads; ++m) softmax_inplace(&logit[m * lp], lp);
    const std::size_t dh = p.d / p.heads;
    std::vector<double> acc(p.d, 0.0);
    for (std::size_t m = 0; m < p.heads; ++m)
        for (std::size_t l = 0; l < p.levels; ++l)
            for (std::size_t k = 0; k < p.points; ++k) {
                const std::size_t idx = (m * p.levels + l) * p.points + k;
                const double x = refs[l].first + off[idx * 2];
                const double y = refs[l].second + off[idx * 2 + 1];
                for (std::size_t c = 0; c < dh; ++c) acc[m * dh + c] += logit[idx] * maps[l].sample(m * dh + c, x, y);
            }
    return p.output(acc);
}

// Per cell average over valid views of the per-anchor deformable outputs.
struct ViewRef {
    std::size_t cell, camera;
    double u, v;  // pixels
};

inline std::vector<std::vector<double>> spatial_cross(const std::vector<std::vector<double>>& queries,
                                                      const std::vector<ViewRef>& valid_refs,
                                                      const std::vector<std::vector<Map>>& pyramids,
                                                      const std::vector<int>& strides, const DeformParams& p) {
    const std::size_t n = queries.size();
    std::vector<std::vector<double>> out(n, std::vector<double>(p.d, 0.0));
    std::vector<std::vector<char>> seen(n, std::vector<char>(pyramids.size(), 0));
    for (const auto& r : valid_refs) seen[r.cell][r.camera] = 1;
    for (const auto& r : valid_refs) {
        std::vector<std::pair<double, double>> refs;
        for (int s : strides) refs.emplace_back(r.u / s - 0.5, r.v / s - 0.5);
        const auto y = deformable(queries[r.cell], refs, pyramids[r.camera], p);
        std::size_t views = 0;
        for (char c : seen[r.cell]) views += c;
        for (std::size_t c = 0; c < p.d; ++c) out[r.cell][c] += y[c] / static_cast<double>(views);
    }
    return out;
}

struct TemporalParams {
    std::size_t d = 0, heads = 0, points = 0;
    Affine offsets, weights, output;
};

// queries/history: [h*w][d]; rows with valid == 0 (or no history) fall back
// to the queries.
inline std::vector<std::vector<double>> temporal(const std::vector<std::vector<double>>& queries,
                                                 const std::vector<std::vector<double>>* history,
                                                 const std::vector<unsigned char>& valid, std::size_t h, std::size_t w,
                                                 const TemporalParams& p) {
    Map cur{p.d, h, w, std::vector<double>(p.d * h * w)};
    Map hist = cur;
    for (std::size_t r = 0; r < h * w; ++r)
        for (std::size_t c = 0; c < p.d; ++c) {
            cur.v[c * h * w + r] = queries[r][c];
            const bool use = history != nullptr && valid[r] != 0;
            hist.v[c * h * w + r] = use ? (*history)[r][c] : queries[r][c];
        }
    const Map* sources[2] = {&cur, &hist};
    const std::size_t dh = p.d / p.heads;
    std::vector<std::vector<double>> out;
    for (std::size_t r = 0; r < h * w; ++r) {
        const double x0 = static_cast<double>(r % w), y0 = static_cast<double>(r / w);
        const auto off = p.offsets(queries[r]);
        auto logit = p.weights(queries[r]);
        for (std::size_t m = 0; m < p.heads; ++m)
            for (std::size_t s = 0; s < 2; ++s) softmax_inplace(&logit[(m * 2 + s) * p.points], p.points);
        std::vector<double> acc(p.d, 0.0);
        for (std::size_t m = 0; m < p.heads; ++m)
            for (std::size_t s = 0; s < 2; ++s)
                for (std::size_t k = 0; k < p.points; ++k) {
                    const std::size_t idx = (m * 2 + s) * p.points + k;
                    const double x = x0 + off[idx * 2], y = y0 + off[idx * 2 + 1];
                    for (std::size_t c = 0; c < dh; ++c)
                        acc[m * dh + c] += 0.5 * logit[idx] * sources[s]->sample(m * dh + c, x, y);
                }
        out.push_back(p.output(acc));
    }
    return out;
}

}  // namespace oracle
