#pragma once

#include "f2bev/tensor.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <vector>

// Differentiable primitives. Every op validates shapes (ShapeError), computes
// its forward value eagerly and, in grad mode, records a backward closure.
namespace f2bev::dc {

using Rng = std::mt19937_64;

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T> Tensor<T> relu(const Tensor<T>& a);

// Inverted dropout: in training, zeroes each element with probability p and
// rescales survivors by 1/(1-p). Identity in eval mode.
template <typename T> Tensor<T> dropout(const Tensor<T>& a, double p, bool training, Rng& rng);

template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
template <typename T> Tensor<T> transpose2d(const Tensor<T>& a);
// [h*w, d] rows (cell-major) <-> [d, h, w] channel planes.
template <typename T> Tensor<T> rows_to_chw(const Tensor<T>& x, std::size_t h, std::size_t w);
template <typename T> Tensor<T> chw_to_rows(const Tensor<T>& x);

// x [..., in] * weight [in, out] + bias [out]; bias may be undefined.
template <typename T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);
// [M, K] x [K, N]
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// [M, K] x [N, K]^T
template <typename T> Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> slice_cols(const Tensor<T>& a, std::size_t begin, std::size_t end);
template <typename T> Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts);
template <typename T> Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts);

// Max-subtracted softmax along `axis`.
template <typename T> Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

// Normalizes over the last axis, then applies gamma [d] and beta [d].
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5));

// Cross-correlation of x [C_in, H, W] with weight [C_out, C_in, k, k], zero padding.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride, std::size_t padding);
template <typename T>
Tensor<T> conv3x3(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

// 2x bilinear upsampling of [C, H, W] with half-pixel centers (edge clamped).
template <typename T> Tensor<T> upsample2x(const Tensor<T>& x);

// Samples feature [C, H, W] at pts [N, 2] = (x, y) in texel units, texel
// centers at integers; corners outside the map read as zero. Returns [N, C],
// differentiable with respect to both feature and pts.
template <typename T> Tensor<T> bilinear_sample(const Tensor<T>& feature, const Tensor<T>& pts);

template <typename T> Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> rows);
// out[rows[k]] += weights[k] * src[k]; out has n_rows rows.
template <typename T>
Tensor<T> scatter_add_rows(const Tensor<T>& src, std::span<const std::size_t> rows,
                           std::span<const T> weights, std::size_t n_rows);
// Row r of the result is a[r] where mask[r] != 0, otherwise b[r].
template <typename T>
Tensor<T> blend_rows(const Tensor<T>& a, const Tensor<T>& b, std::span<const std::uint8_t> mask);

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);

// Multi-scale deformable sampling core.
//   levels[l]: [C, H_l, W_l] value maps
//   locations: [N, M, L, P, 2] sampling points in each level's texel units
//   weights:   [N, M, L, P] attention weights
// Head m reads channels [m*C/M, (m+1)*C/M). Returns [N, C] with
//   out[n, m, c] = sum_{l,p} weights[n,m,l,p] * bilinear(levels[l], locations[n,m,l,p])[m, c].
template <typename T>
Tensor<T> deformable_sample(const std::vector<Tensor<T>>& levels, const Tensor<T>& locations,
                            const Tensor<T>& weights);

}  // namespace f2bev::dc
