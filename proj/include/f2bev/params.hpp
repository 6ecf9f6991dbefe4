#pragma once

#include "f2bev/ops.hpp"
#include "f2bev/tensor.hpp"

#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

namespace f2bev::dc {

template <typename T>
struct NamedParam {
    std::string name;
    Tensor<T> tensor;
};

// Ordered registry of a model's learnable tensors. Names are unique; the
// registration order fixes the checkpoint layout.
template <typename T>
class ParamStore {
public:
    Tensor<T> add(const std::string& name, Shape shape, std::vector<T> values);
    const Tensor<T>& get(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.contains(name); }

    const std::vector<NamedParam<T>>& params() const { return params_; }
    std::size_t total_elements() const;
    void zero_grad();

    // Checkpoint: magic "F2BEVCKPT1", then per parameter
    //   u32 name length, name bytes, u8 dtype (0 = f32, 1 = f64),
    //   u32 rank, u64 dims[rank], raw little-endian values.
    void save(const std::filesystem::path& path) const;
    // Loads values by name; every registered parameter must be present with a
    // matching shape. Values are converted if the stored dtype differs.
    void load(const std::filesystem::path& path);

private:
    std::vector<NamedParam<T>> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Weight initializers. The uniform bound is gain * sqrt(3 / fan_in).
template <typename T>
std::vector<T> kaiming_uniform(std::size_t count, std::size_t fan_in, double gain, Rng& rng);
template <typename T>
std::vector<T> normal_init(std::size_t count, double stddev, Rng& rng);

template <typename T>
struct SgdConfig {
    T learning_rate = T(0.01);
    T momentum = T(0.9);
    T clip_norm = T(0);  // <= 0 disables global-norm clipping
};

// Plain SGD with heavy-ball momentum: v <- mu v + g; w <- w - lr v.
template <typename T>
class SgdMomentum {
public:
    SgdMomentum(ParamStore<T>& store, SgdConfig<T> config);

    // Applies one update from the accumulated gradients, then zeroes them.
    // Returns the gradient norm before clipping.
    T step();
    void set_learning_rate(T lr) { config_.learning_rate = lr; }
    const SgdConfig<T>& config() const { return config_; }

private:
    ParamStore<T>* store_;
    SgdConfig<T> config_;
    std::vector<std::vector<T>> velocity_;
};

extern template class ParamStore<float>;
extern template class ParamStore<double>;
extern template class SgdMomentum<float>;
extern template class SgdMomentum<double>;

}  // namespace f2bev::dc
