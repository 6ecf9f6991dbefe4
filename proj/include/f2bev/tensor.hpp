#pragma once

#include "f2bev/error.hpp"

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace f2bev::dc {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

// While a NoGradGuard is alive on the current thread, operations do not
// record the graph (inference and finite-difference probes).
bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Allocates on 64-byte boundaries, so vectorized kernels split every buffer
// into the same head/body/tail and reductions round identically on every run.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};

    AlignedAllocator() noexcept = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

namespace detail {

template <typename T>
struct Node {
    Shape shape;
    Buffer<T> value;
    Buffer<T> grad;  // empty until a backward pass reaches the node
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into the parents' grads.
    std::function<void(Node&)> backward;

    bool is_leaf() const { return !backward; }
    Buffer<T>& ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
        return grad;
    }
};

}  // namespace detail

// Dense row-major tensor with optional reverse-mode gradient tracking.
// Copies share storage (like a handle); use clone() for a deep copy.
template <typename T>
class Tensor {
public:
    using Node = detail::Node<T>;
    using BackwardFn = std::function<void(Node&)>;

    Tensor() = default;
    explicit Tensor(Shape shape, bool requires_grad = false);
    Tensor(Shape shape, const std::vector<T>& values, bool requires_grad = false);
    static Tensor from_buffer(Shape shape, Buffer<T> values, bool requires_grad = false);

    static Tensor full(Shape shape, T value, bool requires_grad = false);
    static Tensor scalar(T value, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t numel() const { return node_->value.size(); }

    std::span<T> data() { return node_->value; }
    std::span<const T> data() const { return node_->value; }
    T item() const;
    T operator[](std::size_t i) const { return node_->value[i]; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    bool has_grad() const { return node_->grad.size() == node_->value.size(); }
    // Empty span before the first backward pass that reaches this tensor.
    std::span<const T> grad() const { return node_->grad; }
    std::span<T> mutable_grad() { return node_->ensure_grad(); }
    void zero_grad();

    // Reverse pass from a single-element tensor. Leaf gradients accumulate
    // across calls; intermediate gradients are recomputed each call.
    void backward() const;

    Tensor detach() const;
    Tensor clone() const;

    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& node_ptr() const { return node_; }

    // Builds an op result. Parents and the backward closure are only kept
    // when grad mode is on and some parent requires a gradient.
    static Tensor make(Shape shape, Buffer<T> values,
                       std::vector<std::shared_ptr<Node>> parents, BackwardFn backward);
    static Tensor make(Shape shape, const std::vector<T>& values,
                       std::vector<std::shared_ptr<Node>> parents, BackwardFn backward);

private:
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
    std::shared_ptr<Node> node_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace f2bev::dc
