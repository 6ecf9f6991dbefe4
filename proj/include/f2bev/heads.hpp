#pragma once

#include "f2bev/attention.hpp"

#include <string>
#include <vector>

namespace f2bev::heads {

using dc::ParamStore;
using dc::Rng;
using dc::Tensor;

enum class Task { Height, Segmentation };

// Height: 0 below, 1 at, 2 above car level.
// Segmentation: 0 ground, 1 car, 2 bus, 3 EV charger, 4 non-driveable.
std::size_t n_classes(Task task);
std::string to_string(Task task);
Task parse_task(const std::string& name);

template <typename T>
struct HeadOutput {
    Task task = Task::Height;
    Tensor<T> primary;                 // [C, H_out, W_out]
    std::vector<Tensor<T>> auxiliary;  // deep-supervision logits, last equals primary
};

// Class queries attend over the BEV features through a stack of multi-head
// attention modules; each module's head-averaged scaled scores, reshaped to
// [C, h, w], are the logits of that layer. Queries are refined between
// modules as Q <- LN(Q + attention output).
template <typename T>
class AttentionHead {
public:
    AttentionHead() = default;
    AttentionHead(ParamStore<T>& store, const std::string& name, Task task, std::size_t d,
                  std::size_t n_heads, std::size_t n_modules, Rng& rng);

    Task task() const { return task_; }
    HeadOutput<T> operator()(const Tensor<T>& bev, std::size_t h, std::size_t w) const;

private:
    Task task_ = Task::Height;
    Tensor<T> class_queries_;
    std::vector<attn::MultiHeadAttnParams<T>> modules_;
    std::vector<nn::LayerNorm<T>> norms_;
};

struct ConvHeadConfig {
    std::vector<std::size_t> channels{32, 16, 16};  // one per upsampling block
    double dropout = 0.1;
};

// Shared cascade of (2x bilinear upsample, dropout, 3x3 conv, relu) blocks
// followed by one 3x3 prediction conv per task. Output is 8x the grid.
template <typename T>
class ConvHead {
public:
    ConvHead() = default;
    ConvHead(ParamStore<T>& store, const std::string& name, std::vector<Task> tasks, std::size_t d,
             const ConvHeadConfig& config, Rng& rng);

    const std::vector<Task>& tasks() const { return tasks_; }
    std::vector<HeadOutput<T>> operator()(const Tensor<T>& bev, std::size_t h, std::size_t w,
                                          bool training, Rng& rng) const;

private:
    std::vector<Task> tasks_;
    ConvHeadConfig config_;
    std::vector<nn::Conv2d<T>> blocks_;
    std::vector<nn::Conv2d<T>> predictors_;
};

extern template class AttentionHead<float>;
extern template class AttentionHead<double>;
extern template class ConvHead<float>;
extern template class ConvHead<double>;

}  // namespace f2bev::heads
