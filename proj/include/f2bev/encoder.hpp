#pragma once

#include "f2bev/attention.hpp"
#include "f2bev/image_io.hpp"

#include <memory>
#include <optional>
#include <vector>

namespace f2bev::enc {

using dc::ParamStore;
using dc::Rng;
using dc::Tensor;

struct EncoderConfig {
    std::size_t d = 32;
    std::size_t n_blocks = 3;
    std::size_t ffn_hidden = 64;
    std::size_t n_heads = 4;
    std::size_t n_points = 4;
    // Output channels of the six trunk convolutions (strides 2,2,1,2,2,1).
    std::vector<std::size_t> backbone_channels{16, 32, 32, 32, 32, 32};

    void validate() const;
};

// Pyramid strides relative to the input image.
inline constexpr int kPyramidStrides[3] = {4, 8, 16};

// Maps an 8-bit RGB image to a [3, H, W] tensor with values in [-0.5, 0.5].
template <typename T>
Tensor<T> image_to_tensor(const Image8& image);

template <typename T>
struct BevState {
    Tensor<T> features;  // [h*w, d]
    int timestamp = 0;
    bev::Pose pose;
};

template <typename T>
struct Backbone {
    std::vector<nn::Conv2d<T>> trunk;
    std::vector<nn::Conv2d<T>> laterals;  // 1x1, one per pyramid level

    Backbone() = default;
    Backbone(ParamStore<T>& store, const std::string& name, const EncoderConfig& config, Rng& rng);

    // image [3, H, W] with H, W divisible by 16.
    attn::FeaturePyramid<T> operator()(const Tensor<T>& image) const;
};

template <typename T>
struct EncoderBlock {
    attn::TemporalAttnParams<T> temporal;
    nn::LayerNorm<T> norm_temporal;
    attn::DeformableAttnParams<T> spatial;
    nn::LayerNorm<T> norm_spatial;
    nn::Linear<T> ffn_in;
    nn::Linear<T> ffn_out;
    nn::LayerNorm<T> norm_ffn;
};

template <typename T>
class Encoder {
public:
    Encoder(ParamStore<T>& store, const std::string& name, const EncoderConfig& config,
            std::shared_ptr<const bev::ReferencePointTable> table, Rng& rng);

    const EncoderConfig& config() const { return config_; }
    const bev::BevGrid& grid() const { return table_->grid(); }
    const bev::ReferencePointTable& table() const { return *table_; }
    std::size_t n_cameras() const { return static_cast<std::size_t>(table_->n_cameras()); }

    attn::FeaturePyramid<T> extract_pyramid(const Tensor<T>& image) const { return backbone_(image); }

    // One frame. `previous` (if any) is detached and aligned with `motion`,
    // which maps current ego coordinates into the previous ego frame.
    BevState<T> encode(const std::vector<Tensor<T>>& images, const BevState<T>* previous,
                       const bev::EgoMotion& motion, int timestamp = 0,
                       const bev::Pose& pose = {}) const;

    // Same, from precomputed pyramids.
    BevState<T> encode_pyramids(const std::vector<attn::FeaturePyramid<T>>& pyramids,
                                const BevState<T>* previous, const bev::EgoMotion& motion,
                                int timestamp = 0, const bev::Pose& pose = {}) const;

    Tensor<T> initial_queries() const;
    std::vector<EncoderBlock<T>>& blocks() { return blocks_; }

private:
    EncoderConfig config_;
    std::shared_ptr<const bev::ReferencePointTable> table_;
    attn::CrossAttentionPlan<T> plan_;
    Backbone<T> backbone_;
    Tensor<T> query_embed_;
    Tensor<T> pos_embed_;
    std::vector<EncoderBlock<T>> blocks_;
};

extern template class Encoder<float>;
extern template class Encoder<double>;

}  // namespace f2bev::enc
