#include "f2bev/tensor.hpp"

#include <unordered_set>

namespace f2bev::dc {

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string to_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
Tensor<T>::Tensor(Shape shape, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value.assign(dc::numel(shape), T(0));
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, const std::vector<T>& values, bool requires_grad)
    : Tensor(from_buffer(std::move(shape), Buffer<T>(values.begin(), values.end()), requires_grad)) {}

template <typename T>
Tensor<T> Tensor<T>::from_buffer(Shape shape, Buffer<T> values, bool requires_grad) {
    if (values.size() != dc::numel(shape)) {
        throw ShapeError("tensor: " + std::to_string(values.size()) + " values for shape " +
                         to_string(shape));
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
    const std::size_t n = dc::numel(shape);
    return from_buffer(std::move(shape), Buffer<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
    return from_buffer(Shape{}, Buffer<T>{value}, requires_grad);
}

template <typename T>
T Tensor<T>::item() const {
    if (numel() != 1) throw ShapeError("item() on tensor with shape " + to_string(shape()));
    return node_->value[0];
}

template <typename T>
void Tensor<T>::zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
    return from_buffer(node_->shape, node_->value, false);
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
    return from_buffer(node_->shape, node_->value, node_->requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::make(Shape shape, const std::vector<T>& values,
                          std::vector<std::shared_ptr<Node>> parents, BackwardFn backward) {
    return make(std::move(shape), Buffer<T>(values.begin(), values.end()), std::move(parents), std::move(backward));
}

template <typename T>
Tensor<T> Tensor<T>::make(Shape shape, Buffer<T> values,
                          std::vector<std::shared_ptr<Node>> parents, BackwardFn backward) {
    Tensor out = from_buffer(std::move(shape), std::move(values), false);
    if (!grad_enabled()) return out;
    bool any = false;
    for (const auto& p : parents) any = any || (p && p->requires_grad);
    if (!any) return out;
    out.node_->requires_grad = true;
    out.node_->parents = std::move(parents);
    out.node_->backward = std::move(backward);
    return out;
}

template <typename T>
void Tensor<T>::backward() const {
    if (numel() != 1) throw ShapeError("backward() needs a single-element tensor");
    if (!node_->requires_grad) throw PreconditionError("backward() on a tensor without grad");

    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent && parent->requires_grad && !seen.contains(parent)) {
                seen.insert(parent);
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (Node* n : order) {
        if (!n->is_leaf()) n->grad.assign(n->value.size(), T(0));
    }
    if (node_->is_leaf()) {
        node_->ensure_grad()[0] += T(1);
        return;
    }
    node_->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->is_leaf()) continue;
        for (auto& p : n->parents) {
            if (p && p->requires_grad) p->ensure_grad();
        }
        n->backward(*n);
    }
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace f2bev::dc
