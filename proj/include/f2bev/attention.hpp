#pragma once

#include "f2bev/bev_geometry.hpp"
#include "f2bev/layers.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace f2bev::attn {

using dc::ParamStore;
using dc::Rng;
using dc::Tensor;

// Multi-scale features of one camera view: level s is [d, H_s, W_s] at
// strides[s] relative to the input image.
template <typename T>
struct FeaturePyramid {
    std::vector<Tensor<T>> levels;
    std::vector<int> strides;
};

// Query-conditioned sampling offsets and attention weights, plus the output
// projection. Offsets are in texel units of each level.
template <typename T>
struct DeformableAttnParams {
    std::size_t d = 0;
    std::size_t n_heads = 0;
    std::size_t n_levels = 0;
    std::size_t n_points = 0;
    nn::Linear<T> offsets;  // d -> heads * levels * points * 2
    nn::Linear<T> weights;  // d -> heads * levels * points
    nn::Linear<T> output;   // d -> d

    DeformableAttnParams() = default;
    // Offsets start from a zero weight and a ring-shaped bias (one direction
    // per head, radius growing with the point index); attention logits start
    // at zero, i.e. uniform weights.
    DeformableAttnParams(ParamStore<T>& store, const std::string& name, std::size_t d,
                         std::size_t n_heads, std::size_t n_levels, std::size_t n_points, Rng& rng);
};

// query [N, d]; refs holds N * n_levels (x, y) pairs already expressed in each
// level's texel coordinates. Returns [N, d].
template <typename T>
Tensor<T> deformable_attention(const Tensor<T>& query, std::span<const T> refs,
                               const std::vector<Tensor<T>>& levels,
                               const DeformableAttnParams<T>& params);

// Sampling rows for the view-averaged cross attention, derived once per
// reference table and pyramid stride plan.
template <typename T>
struct CrossAttentionPlan {
    std::size_t n_cells = 0;
    std::size_t n_levels = 0;
    struct View {
        std::vector<std::size_t> cells;  // one row per valid (cell, anchor)
        std::vector<T> refs;             // rows * n_levels * 2 level coordinates
        std::vector<T> weights;          // 1 / |valid views of cell|
    };
    std::vector<View> views;
};

// Reference pixel (u, v) maps to level coordinate u / stride - 0.5, which puts
// texel centers at integers.
template <typename T>
CrossAttentionPlan<T> make_cross_attention_plan(const bev::ReferencePointTable& table,
                                                std::span<const int> strides);

// Distortion-aware spatial cross attention: for each cell, the average over
// its valid views of the sum over valid anchors of deformable attention at the
// anchor's projection. Cells without a valid view produce zeros.
template <typename T>
Tensor<T> da_sca(const Tensor<T>& queries, const std::vector<FeaturePyramid<T>>& pyramids,
                 const CrossAttentionPlan<T>& plan, const DeformableAttnParams<T>& params);

template <typename T>
Tensor<T> da_sca(const Tensor<T>& queries, const std::vector<FeaturePyramid<T>>& pyramids,
                 const bev::ReferencePointTable& table, const DeformableAttnParams<T>& params);

// Temporal self attention parameters: two value sources (current queries and
// aligned history), each with its own offsets and weights.
template <typename T>
struct TemporalAttnParams {
    std::size_t d = 0;
    std::size_t n_heads = 0;
    std::size_t n_points = 0;
    nn::Linear<T> offsets;  // d -> heads * 2 * points * 2
    nn::Linear<T> weights;  // d -> heads * 2 * points
    nn::Linear<T> output;

    TemporalAttnParams() = default;
    TemporalAttnParams(ParamStore<T>& store, const std::string& name, std::size_t d,
                       std::size_t n_heads, std::size_t n_points, Rng& rng);
};

// queries [h*w, d]. `history` is the aligned previous BEV [h*w, d] or an
// undefined tensor at the first frame; rows where history_valid is 0 (or all
// rows without history) fall back to the current queries. Each query samples
// around its own cell in both sources and the two results are averaged.
template <typename T>
Tensor<T> temporal_self_attention(const Tensor<T>& queries, const Tensor<T>& history,
                                  std::span<const std::uint8_t> history_valid, std::size_t h,
                                  std::size_t w, const TemporalAttnParams<T>& params);

template <typename T>
struct MultiHeadAttnParams {
    std::size_t d = 0;
    std::size_t n_heads = 0;
    nn::Linear<T> q, k, v, o;

    MultiHeadAttnParams() = default;
    MultiHeadAttnParams(ParamStore<T>& store, const std::string& name, std::size_t d,
                        std::size_t n_heads, Rng& rng);
};

template <typename T>
struct AttentionResult {
    Tensor<T> output;       // [Nq, d]
    Tensor<T> attn_maps;    // [heads, Nq, Nk], rows sum to one
    Tensor<T> mean_scores;  // [Nq, Nk], pre-softmax scaled scores averaged over heads
};

template <typename T>
AttentionResult<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                        const MultiHeadAttnParams<T>& params);

}  // namespace f2bev::attn
