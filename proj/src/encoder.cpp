#include "f2bev/encoder.hpp"

#include <cmath>
#include <string>

namespace f2bev::enc {

void EncoderConfig::validate() const {
    if (d == 0 || n_blocks == 0 || ffn_hidden == 0 || n_points == 0) {
        throw PreconditionError("encoder config: sizes must be positive");
    }
    if (n_heads == 0 || d % n_heads != 0) throw PreconditionError("encoder config: d must be divisible by n_heads");
    if (backbone_channels.size() != 6) throw PreconditionError("encoder config: backbone needs 6 channel counts");
    for (auto c : backbone_channels) {
        if (c == 0) throw PreconditionError("encoder config: backbone channels must be positive");
    }
}

template <typename T>
Tensor<T> image_to_tensor(const Image8& image) {
    if (image.channels != 3) throw ShapeError("image_to_tensor: RGB image required");
    const std::size_t h = static_cast<std::size_t>(image.height);
    const std::size_t w = static_cast<std::size_t>(image.width);
    std::vector<T> values(3 * h * w);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t c = 0; c < 3; ++c) {
                values[(c * h + y) * w + x] =
                    static_cast<T>(image.pixels[(y * w + x) * 3 + c]) / T(255) - T(0.5);
            }
        }
    }
    return Tensor<T>({3, h, w}, std::move(values));
}

namespace {
constexpr std::size_t kTrunkStrides[6] = {2, 2, 1, 2, 2, 1};
// Trunk layers whose outputs feed the pyramid (strides 4, 8, 16).
constexpr std::size_t kTaps[3] = {2, 3, 5};
}  // namespace

template <typename T>
Backbone<T>::Backbone(ParamStore<T>& store, const std::string& name, const EncoderConfig& config, Rng& rng) {
    std::size_t in = 3;
    for (std::size_t i = 0; i < 6; ++i) {
        const std::size_t out = config.backbone_channels[i];
        trunk.emplace_back(store, name + ".trunk" + std::to_string(i), in, out, 3, kTrunkStrides[i], rng);
        in = out;
    }
    for (std::size_t s = 0; s < 3; ++s) {
        laterals.emplace_back(store, name + ".lateral" + std::to_string(s),
                              config.backbone_channels[kTaps[s]], config.d, 1, 1, rng, 1.0);
    }
}

template <typename T>
attn::FeaturePyramid<T> Backbone<T>::operator()(const Tensor<T>& image) const {
    if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) % 16 != 0 || image.dim(2) % 16 != 0 ||
        image.dim(1) == 0 || image.dim(2) == 0) {
        throw ShapeError("backbone: expected [3, H, W] with H, W divisible by 16, got " +
                         dc::to_string(image.shape()));
    }
    std::vector<Tensor<T>> taps;
    Tensor<T> x = image;
    for (std::size_t i = 0; i < trunk.size(); ++i) {
        x = dc::relu(trunk[i](x));
        if (i == kTaps[taps.size()]) taps.push_back(x);
        if (taps.size() == 3) break;
    }
    attn::FeaturePyramid<T> pyramid;
    pyramid.levels.resize(3);
    Tensor<T> top = laterals[2](taps[2]);
    pyramid.levels[2] = top;
    for (int s = 1; s >= 0; --s) {
        top = dc::add(laterals[static_cast<std::size_t>(s)](taps[static_cast<std::size_t>(s)]), dc::upsample2x(top));
        pyramid.levels[static_cast<std::size_t>(s)] = top;
    }
    pyramid.strides.assign(std::begin(kPyramidStrides), std::end(kPyramidStrides));
    return pyramid;
}

template <typename T>
Encoder<T>::Encoder(ParamStore<T>& store, const std::string& name, const EncoderConfig& config,
                    std::shared_ptr<const bev::ReferencePointTable> table, Rng& rng)
    : config_(config), table_(std::move(table)) {
    config_.validate();
    if (!table_) throw PreconditionError("encoder: reference table required");
    plan_ = attn::make_cross_attention_plan<T>(*table_, std::span<const int>(kPyramidStrides));
    backbone_ = Backbone<T>(store, name + ".backbone", config_, rng);
    const std::size_t cells = static_cast<std::size_t>(grid().n_cells());
    const std::size_t d = config_.d;
    query_embed_ = store.add(name + ".query_embed", {cells, d}, dc::normal_init<T>(cells * d, 0.02, rng));
    pos_embed_ = store.add(name + ".pos_embed", {cells, d}, dc::normal_init<T>(cells * d, 0.02, rng));
    for (std::size_t b = 0; b < config_.n_blocks; ++b) {
        const std::string prefix = name + ".block" + std::to_string(b);
        EncoderBlock<T> block;
        block.temporal = attn::TemporalAttnParams<T>(store, prefix + ".tsa", d, config_.n_heads, config_.n_points, rng);
        block.norm_temporal = nn::LayerNorm<T>(store, prefix + ".norm_tsa", d);
        block.spatial = attn::DeformableAttnParams<T>(store, prefix + ".sca", d, config_.n_heads, 3, config_.n_points, rng);
        block.norm_spatial = nn::LayerNorm<T>(store, prefix + ".norm_sca", d);
        block.ffn_in = nn::Linear<T>(store, prefix + ".ffn_in", d, config_.ffn_hidden, rng, std::sqrt(2.0));
        block.ffn_out = nn::Linear<T>(store, prefix + ".ffn_out", config_.ffn_hidden, d, rng);
        block.norm_ffn = nn::LayerNorm<T>(store, prefix + ".norm_ffn", d);
        blocks_.push_back(std::move(block));
    }
}

template <typename T>
Tensor<T> Encoder<T>::initial_queries() const {
    return dc::add(query_embed_, pos_embed_);
}

template <typename T>
BevState<T> Encoder<T>::encode(const std::vector<Tensor<T>>& images, const BevState<T>* previous,
                               const bev::EgoMotion& motion, int timestamp, const bev::Pose& pose) const {
    if (images.size() != n_cameras()) throw ShapeError("encode: one image per camera required");
    std::vector<attn::FeaturePyramid<T>> pyramids;
    pyramids.reserve(images.size());
    for (const auto& image : images) pyramids.push_back(backbone_(image));
    return encode_pyramids(pyramids, previous, motion, timestamp, pose);
}

template <typename T>
BevState<T> Encoder<T>::encode_pyramids(const std::vector<attn::FeaturePyramid<T>>& pyramids,
                                        const BevState<T>* previous, const bev::EgoMotion& motion,
                                        int timestamp, const bev::Pose& pose) const {
    const auto& g = grid();
    const std::size_t h = static_cast<std::size_t>(g.h());
    const std::size_t w = static_cast<std::size_t>(g.w());
    const std::size_t d = config_.d;

    Tensor<T> history;
    std::vector<std::uint8_t> history_valid;
    if (previous != nullptr && previous->features.defined()) {
        if (previous->features.shape() != dc::Shape{h * w, d}) throw ShapeError("encode: previous BEV shape");
        auto aligned = bev::align_previous<T>(previous->features.data(), static_cast<int>(d), motion, g);
        history = Tensor<T>({h * w, d}, std::move(aligned.features));
        history_valid = std::move(aligned.valid);
    }

    Tensor<T> x = initial_queries();
    for (const auto& block : blocks_) {
        x = block.norm_temporal(dc::add(x, attn::temporal_self_attention(x, history, history_valid, h, w, block.temporal)));
        x = block.norm_spatial(dc::add(x, attn::da_sca(x, pyramids, plan_, block.spatial)));
        x = block.norm_ffn(dc::add(x, block.ffn_out(dc::relu(block.ffn_in(x)))));
    }
    return BevState<T>{x, timestamp, pose};
}

template Tensor<float> image_to_tensor<float>(const Image8&);
template Tensor<double> image_to_tensor<double>(const Image8&);
template struct Backbone<float>;
template struct Backbone<double>;
template class Encoder<float>;
template class Encoder<double>;

}  // namespace f2bev::enc
