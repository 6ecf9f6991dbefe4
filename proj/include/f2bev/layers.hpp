#pragma once

#include "f2bev/ops.hpp"
#include "f2bev/params.hpp"

#include <string>

namespace f2bev::nn {

using dc::ParamStore;
using dc::Rng;
using dc::Tensor;

template <typename T>
struct Linear {
    Tensor<T> weight;  // [in, out]
    Tensor<T> bias;    // [out]

    Linear() = default;
    Linear(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
           double gain = 1.0)
        : weight(store.add(name + ".weight", {in, out}, dc::kaiming_uniform<T>(in * out, in, gain, rng))),
          bias(store.add(name + ".bias", {out}, std::vector<T>(out, T(0)))) {}

    Tensor<T> operator()(const Tensor<T>& x) const { return dc::linear(x, weight, bias); }
};

template <typename T>
struct LayerNorm {
    Tensor<T> gamma;
    Tensor<T> beta;

    LayerNorm() = default;
    LayerNorm(ParamStore<T>& store, const std::string& name, std::size_t d)
        : gamma(store.add(name + ".gamma", {d}, std::vector<T>(d, T(1)))),
          beta(store.add(name + ".beta", {d}, std::vector<T>(d, T(0)))) {}

    Tensor<T> operator()(const Tensor<T>& x) const { return dc::layer_norm(x, gamma, beta); }
};

template <typename T>
struct Conv2d {
    Tensor<T> weight;  // [out, in, k, k]
    Tensor<T> bias;
    std::size_t stride = 1;
    std::size_t padding = 1;

    Conv2d() = default;
    Conv2d(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
           std::size_t kernel, std::size_t stride_, Rng& rng, double gain = 1.4142135623730951)
        : weight(store.add(name + ".weight", {out, in, kernel, kernel},
                           dc::kaiming_uniform<T>(out * in * kernel * kernel, in * kernel * kernel, gain, rng))),
          bias(store.add(name + ".bias", {out}, std::vector<T>(out, T(0)))),
          stride(stride_),
          padding(kernel / 2) {}

    Tensor<T> operator()(const Tensor<T>& x) const { return dc::conv2d(x, weight, bias, stride, padding); }
};

}  // namespace f2bev::nn
