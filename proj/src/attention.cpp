#include "f2bev/attention.hpp"

#include <cmath>
#include <numbers>

namespace f2bev::attn {
namespace {

// Zero weights, ring-pattern bias: head m looks along angle 2*pi*m/M, point p
// sits p+1 texels out. `groups` repeats the pattern (levels or sources).
template <typename T>
void init_offsets(nn::Linear<T>& lin, std::size_t heads, std::size_t groups, std::size_t points) {
    for (auto& v : lin.weight.data()) v = T(0);
    auto b = lin.bias.data();
    for (std::size_t m = 0; m < heads; ++m) {
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(m) / static_cast<double>(heads);
        double dx = std::cos(angle);
        double dy = std::sin(angle);
        const double norm = std::max(std::abs(dx), std::abs(dy));
        dx /= norm;
        dy /= norm;
        for (std::size_t g = 0; g < groups; ++g) {
            for (std::size_t p = 0; p < points; ++p) {
                const std::size_t s = ((m * groups + g) * points + p) * 2;
                b[s] = static_cast<T>(dx * static_cast<double>(p + 1));
                b[s + 1] = static_cast<T>(dy * static_cast<double>(p + 1));
            }
        }
    }
}

template <typename T>
void zero_linear(nn::Linear<T>& lin) {
    for (auto& v : lin.weight.data()) v = T(0);
    for (auto& v : lin.bias.data()) v = T(0);
}

}  // namespace

template <typename T>
DeformableAttnParams<T>::DeformableAttnParams(ParamStore<T>& store, const std::string& name,
                                              std::size_t d_, std::size_t n_heads_,
                                              std::size_t n_levels_, std::size_t n_points_, Rng& rng)
    : d(d_), n_heads(n_heads_), n_levels(n_levels_), n_points(n_points_),
      offsets(store, name + ".offsets", d_, n_heads_ * n_levels_ * n_points_ * 2, rng),
      weights(store, name + ".weights", d_, n_heads_ * n_levels_ * n_points_, rng),
      output(store, name + ".output", d_, d_, rng) {
    if (d % n_heads != 0) throw PreconditionError("deformable attention: d must be divisible by n_heads");
    init_offsets(offsets, n_heads, n_levels, n_points);
    zero_linear(weights);
}

template <typename T>
Tensor<T> deformable_attention(const Tensor<T>& query, std::span<const T> refs,
                               const std::vector<Tensor<T>>& levels,
                               const DeformableAttnParams<T>& params) {
    if (query.rank() != 2 || query.dim(1) != params.d) {
        throw ShapeError("deformable_attention: query must be [N, d], got " + dc::to_string(query.shape()));
    }
    const std::size_t n = query.dim(0);
    const std::size_t heads = params.n_heads;
    const std::size_t nl = params.n_levels;
    const std::size_t np = params.n_points;
    if (levels.size() != nl) throw ShapeError("deformable_attention: level count mismatch");
    if (refs.size() != n * nl * 2) throw ShapeError("deformable_attention: reference count mismatch");

    std::vector<T> expanded(n * heads * nl * np * 2);
    for (std::size_t q = 0; q < n; ++q) {
        for (std::size_t m = 0; m < heads; ++m) {
            for (std::size_t l = 0; l < nl; ++l) {
                for (std::size_t p = 0; p < np; ++p) {
                    const std::size_t s = (((q * heads + m) * nl + l) * np + p) * 2;
                    expanded[s] = refs[(q * nl + l) * 2];
                    expanded[s + 1] = refs[(q * nl + l) * 2 + 1];
                }
            }
        }
    }
    const dc::Shape loc_shape{n, heads, nl, np, 2};
    const Tensor<T> ref_tensor(loc_shape, std::move(expanded));
    const Tensor<T> locations = dc::add(dc::reshape(params.offsets(query), loc_shape), ref_tensor);
    const Tensor<T> logits = dc::reshape(params.weights(query), {n, heads, nl * np});
    const Tensor<T> attn = dc::reshape(dc::softmax(logits, 2), {n, heads, nl, np});
    return params.output(dc::deformable_sample(levels, locations, attn));
}

template <typename T>
CrossAttentionPlan<T> make_cross_attention_plan(const bev::ReferencePointTable& table,
                                                std::span<const int> strides) {
    CrossAttentionPlan<T> plan;
    const auto& grid = table.grid();
    plan.n_cells = static_cast<std::size_t>(grid.n_cells());
    plan.n_levels = strides.size();
    plan.views.resize(static_cast<std::size_t>(table.n_cameras()));
    for (int p = 0; p < grid.n_cells(); ++p) {
        const auto views = table.valid_views(p);
        if (views.empty()) continue;
        const T weight = T(1) / static_cast<T>(views.size());
        for (int cam : views) {
            auto& view = plan.views[static_cast<std::size_t>(cam)];
            for (int j = 0; j < grid.n_anchors(); ++j) {
                const auto& e = table.entry(p, j, cam);
                if (!e.valid) continue;
                view.cells.push_back(static_cast<std::size_t>(p));
                view.weights.push_back(weight);
                for (int s : strides) {
                    view.refs.push_back(static_cast<T>(e.u / s - 0.5));
                    view.refs.push_back(static_cast<T>(e.v / s - 0.5));
                }
            }
        }
    }
    return plan;
}

template <typename T>
Tensor<T> da_sca(const Tensor<T>& queries, const std::vector<FeaturePyramid<T>>& pyramids,
                 const CrossAttentionPlan<T>& plan, const DeformableAttnParams<T>& params) {
    if (queries.rank() != 2 || queries.dim(0) != plan.n_cells || queries.dim(1) != params.d) {
        throw ShapeError("da_sca: queries must be [cells, d], got " + dc::to_string(queries.shape()));
    }
    if (pyramids.size() != plan.views.size()) throw ShapeError("da_sca: one pyramid per camera required");
    std::vector<Tensor<T>> parts;
    std::vector<std::size_t> rows;
    std::vector<T> weights;
    for (std::size_t i = 0; i < plan.views.size(); ++i) {
        const auto& view = plan.views[i];
        if (view.cells.empty()) continue;
        if (pyramids[i].levels.size() != plan.n_levels) throw ShapeError("da_sca: pyramid level count");
        const Tensor<T> q = dc::gather_rows(queries, std::span<const std::size_t>(view.cells));
        parts.push_back(deformable_attention(q, std::span<const T>(view.refs), pyramids[i].levels, params));
        rows.insert(rows.end(), view.cells.begin(), view.cells.end());
        weights.insert(weights.end(), view.weights.begin(), view.weights.end());
    }
    if (parts.empty()) return Tensor<T>({plan.n_cells, params.d});
    const Tensor<T> stacked = parts.size() == 1 ? parts.front() : dc::concat_rows(parts);
    return dc::scatter_add_rows(stacked, std::span<const std::size_t>(rows), std::span<const T>(weights),
                                plan.n_cells);
}

template <typename T>
Tensor<T> da_sca(const Tensor<T>& queries, const std::vector<FeaturePyramid<T>>& pyramids,
                 const bev::ReferencePointTable& table, const DeformableAttnParams<T>& params) {
    if (pyramids.empty()) throw ShapeError("da_sca: no pyramids");
    const auto plan = make_cross_attention_plan<T>(table, pyramids.front().strides);
    return da_sca(queries, pyramids, plan, params);
}

template <typename T>
TemporalAttnParams<T>::TemporalAttnParams(ParamStore<T>& store, const std::string& name,
                                          std::size_t d_, std::size_t n_heads_, std::size_t n_points_,
                                          Rng& rng)
    : d(d_), n_heads(n_heads_), n_points(n_points_),
      offsets(store, name + ".offsets", d_, n_heads_ * 2 * n_points_ * 2, rng),
      weights(store, name + ".weights", d_, n_heads_ * 2 * n_points_, rng),
      output(store, name + ".output", d_, d_, rng) {
    if (d % n_heads != 0) throw PreconditionError("temporal attention: d must be divisible by n_heads");
    init_offsets(offsets, n_heads, 2, n_points);
    zero_linear(weights);
}

template <typename T>
Tensor<T> temporal_self_attention(const Tensor<T>& queries, const Tensor<T>& history,
                                  std::span<const std::uint8_t> history_valid, std::size_t h,
                                  std::size_t w, const TemporalAttnParams<T>& params) {
    const std::size_t n = h * w;
    if (queries.rank() != 2 || queries.dim(0) != n || queries.dim(1) != params.d) {
        throw ShapeError("temporal_self_attention: queries must be [h*w, d]");
    }
    Tensor<T> hist_source = queries;
    if (history.defined()) {
        if (history.shape() != queries.shape()) throw ShapeError("temporal_self_attention: history shape");
        if (history_valid.size() != n) throw ShapeError("temporal_self_attention: validity raster size");
        hist_source = dc::blend_rows(history, queries, history_valid);
    }
    const std::vector<Tensor<T>> sources{dc::rows_to_chw(queries, h, w), dc::rows_to_chw(hist_source, h, w)};

    const std::size_t heads = params.n_heads;
    const std::size_t np = params.n_points;
    std::vector<T> expanded(n * heads * 2 * np * 2);
    for (std::size_t q = 0; q < n; ++q) {
        const T x = static_cast<T>(q % w);
        const T y = static_cast<T>(q / w);
        for (std::size_t k = 0; k < heads * 2 * np; ++k) {
            expanded[(q * heads * 2 * np + k) * 2] = x;
            expanded[(q * heads * 2 * np + k) * 2 + 1] = y;
        }
    }
    const dc::Shape loc_shape{n, heads, 2, np, 2};
    const Tensor<T> locations =
        dc::add(dc::reshape(params.offsets(queries), loc_shape), Tensor<T>(loc_shape, std::move(expanded)));
    // Softmax per source over its points, then halve: the two sources are averaged.
    const Tensor<T> logits = dc::reshape(params.weights(queries), {n, heads, 2, np});
    const Tensor<T> attn = dc::scale(dc::softmax(logits, 3), T(0.5));
    return params.output(dc::deformable_sample(sources, locations, attn));
}

template <typename T>
MultiHeadAttnParams<T>::MultiHeadAttnParams(ParamStore<T>& store, const std::string& name,
                                            std::size_t d_, std::size_t n_heads_, Rng& rng)
    : d(d_), n_heads(n_heads_),
      q(store, name + ".q", d_, d_, rng),
      k(store, name + ".k", d_, d_, rng),
      v(store, name + ".v", d_, d_, rng),
      o(store, name + ".o", d_, d_, rng) {
    if (n_heads == 0 || d % n_heads != 0) throw PreconditionError("multi-head attention: d must be divisible by n_heads");
}

template <typename T>
AttentionResult<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                        const MultiHeadAttnParams<T>& params) {
    const std::size_t d = params.d;
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.dim(1) != d || k.dim(1) != d ||
        v.dim(1) != d || k.dim(0) != v.dim(0)) {
        throw ShapeError("multi_head_attention: expected q [Nq, d], k and v [Nk, d]");
    }
    const std::size_t heads = params.n_heads;
    const std::size_t dh = d / heads;
    const std::size_t nq = q.dim(0);
    const std::size_t nk = k.dim(0);
    const Tensor<T> qp = params.q(q);
    const Tensor<T> kp = params.k(k);
    const Tensor<T> vp = params.v(v);
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
    std::vector<Tensor<T>> outs;
    std::vector<Tensor<T>> maps;
    Tensor<T> score_sum;
    for (std::size_t hh = 0; hh < heads; ++hh) {
        const Tensor<T> qh = dc::slice_cols(qp, hh * dh, (hh + 1) * dh);
        const Tensor<T> kh = dc::slice_cols(kp, hh * dh, (hh + 1) * dh);
        const Tensor<T> vh = dc::slice_cols(vp, hh * dh, (hh + 1) * dh);
        const Tensor<T> scores = dc::scale(dc::matmul_nt(qh, kh), inv_sqrt);
        const Tensor<T> attn = dc::softmax(scores, 1);
        outs.push_back(dc::matmul(attn, vh));
        maps.push_back(attn);
        score_sum = score_sum.defined() ? dc::add(score_sum, scores) : scores;
    }
    AttentionResult<T> result;
    result.output = params.o(heads == 1 ? outs.front() : dc::concat_cols(outs));
    result.attn_maps = dc::reshape(heads == 1 ? maps.front() : dc::concat_rows(maps), {heads, nq, nk});
    result.mean_scores = dc::scale(score_sum, T(1) / static_cast<T>(heads));
    return result;
}

#define F2BEV_INSTANTIATE_ATTENTION(T)                                                                  \
    template struct DeformableAttnParams<T>;                                                            \
    template struct TemporalAttnParams<T>;                                                              \
    template struct MultiHeadAttnParams<T>;                                                             \
    template Tensor<T> deformable_attention(const Tensor<T>&, std::span<const T>,                       \
                                            const std::vector<Tensor<T>>&, const DeformableAttnParams<T>&); \
    template CrossAttentionPlan<T> make_cross_attention_plan<T>(const bev::ReferencePointTable&,        \
                                                                std::span<const int>);                  \
    template Tensor<T> da_sca(const Tensor<T>&, const std::vector<FeaturePyramid<T>>&,                  \
                              const CrossAttentionPlan<T>&, const DeformableAttnParams<T>&);            \
    template Tensor<T> da_sca(const Tensor<T>&, const std::vector<FeaturePyramid<T>>&,                  \
                              const bev::ReferencePointTable&, const DeformableAttnParams<T>&);         \
    template Tensor<T> temporal_self_attention(const Tensor<T>&, const Tensor<T>&,                      \
                                               std::span<const std::uint8_t>, std::size_t, std::size_t, \
                                               const TemporalAttnParams<T>&);                           \
    template AttentionResult<T> multi_head_attention(const Tensor<T>&, const Tensor<T>&,                \
                                                     const Tensor<T>&, const MultiHeadAttnParams<T>&);

F2BEV_INSTANTIATE_ATTENTION(float)
F2BEV_INSTANTIATE_ATTENTION(double)

}  // namespace f2bev::attn
