#pragma once

#include "f2bev/image_io.hpp"
#include "f2bev/tensor.hpp"

#include <cstdint>
#include <vector>

namespace f2bev::metrics {

using dc::Tensor;

// Class maps are single-channel Image8 rasters holding class indices.

// Mean over pixels of -log softmax(logits)[target]; logits [C, H, W].
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const Image8& target);

// Mean over pixels of -(1 - p_t)^gamma log p_t.
template <typename T>
Tensor<T> focal_loss(const Tensor<T>& logits, const Image8& target, double gamma);

// Per-pixel argmax over the class axis of [C, H, W] logits.
template <typename T>
Image8 argmax(const Tensor<T>& logits);

// Keeps every `factor`-th pixel starting at 0 in both axes.
Image8 downscale_nearest(const Image8& map, int factor);

// counts[target * C + pred]; pooled over any number of maps.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::size_t n_classes);
    void add(const Image8& pred, const Image8& target);
    void merge(const ConfusionMatrix& other);
    std::size_t n_classes() const { return n_; }
    std::uint64_t at(std::size_t target, std::size_t pred) const { return counts_[target * n_ + pred]; }

private:
    std::size_t n_;
    std::vector<std::uint64_t> counts_;
};

struct IoUReport {
    std::vector<double> per_class;
    double mean = 0.0;
    double freq_weighted = 0.0;
    std::vector<std::size_t> excluded;
    std::vector<std::uint64_t> target_counts;
    std::vector<std::uint64_t> pred_counts;
};

// Classes absent from both prediction and target score 1. The mean runs
// over all classes; the frequency-weighted mean runs over the non-excluded
// classes with weights proportional to their target pixel counts (plain
// mean of those classes if none of them occurs in the target).
IoUReport iou_report(const ConfusionMatrix& confusion, const std::vector<std::size_t>& excluded);
IoUReport iou_report(const Image8& pred, const Image8& target, std::size_t n_classes,
                     const std::vector<std::size_t>& excluded);

}  // namespace f2bev::metrics
