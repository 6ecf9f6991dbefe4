#include "f2bev/heads.hpp"

namespace f2bev::heads {

std::size_t n_classes(Task task) { return task == Task::Height ? 3 : 5; }

std::string to_string(Task task) { return task == Task::Height ? "height" : "segmentation"; }

Task parse_task(const std::string& name) {
    if (name == "height") return Task::Height;
    if (name == "segmentation" || name == "seg") return Task::Segmentation;
    throw ParseError("unknown task: " + name);
}

template <typename T>
AttentionHead<T>::AttentionHead(ParamStore<T>& store, const std::string& name, Task task, std::size_t d,
                                std::size_t n_heads, std::size_t n_modules, Rng& rng)
    : task_(task) {
    if (n_modules == 0) throw PreconditionError("attention head: at least one module");
    const std::size_t c = n_classes(task);
    class_queries_ = store.add(name + ".class_queries", {c, d}, dc::normal_init<T>(c * d, 0.02, rng));
    for (std::size_t m = 0; m < n_modules; ++m) {
        const std::string prefix = name + ".mha" + std::to_string(m);
        modules_.emplace_back(store, prefix, d, n_heads, rng);
        if (m + 1 < n_modules) norms_.emplace_back(store, prefix + ".norm", d);
    }
}

template <typename T>
HeadOutput<T> AttentionHead<T>::operator()(const Tensor<T>& bev, std::size_t h, std::size_t w) const {
    if (bev.rank() != 2 || bev.dim(0) != h * w || bev.dim(1) != class_queries_.dim(1)) {
        throw ShapeError("attention head: BEV must be [h*w, d], got " + dc::to_string(bev.shape()));
    }
    const std::size_t c = n_classes(task_);
    HeadOutput<T> out;
    out.task = task_;
    Tensor<T> q = class_queries_;
    for (std::size_t m = 0; m < modules_.size(); ++m) {
        auto res = attn::multi_head_attention(q, bev, bev, modules_[m]);
        out.auxiliary.push_back(dc::reshape(res.mean_scores, {c, h, w}));
        if (m + 1 < modules_.size()) q = norms_[m](dc::add(q, res.output));
    }
    out.primary = out.auxiliary.back();
    return out;
}

template <typename T>
ConvHead<T>::ConvHead(ParamStore<T>& store, const std::string& name, std::vector<Task> tasks, std::size_t d,
                      const ConvHeadConfig& config, Rng& rng)
    : tasks_(std::move(tasks)), config_(config) {
    if (tasks_.empty()) throw PreconditionError("conv head: no task");
    if (config_.channels.size() != 3) throw PreconditionError("conv head: three upsampling blocks required");
    if (config_.dropout < 0.0 || config_.dropout >= 1.0) throw PreconditionError("conv head: dropout in [0, 1)");
    std::size_t in = d;
    for (std::size_t b = 0; b < config_.channels.size(); ++b) {
        blocks_.emplace_back(store, name + ".up" + std::to_string(b), in, config_.channels[b], 3, 1, rng);
        in = config_.channels[b];
    }
    for (Task t : tasks_) {
        predictors_.emplace_back(store, name + ".predict_" + to_string(t), in, n_classes(t), 3, 1, rng, 1.0);
    }
}

template <typename T>
std::vector<HeadOutput<T>> ConvHead<T>::operator()(const Tensor<T>& bev, std::size_t h, std::size_t w,
                                                   bool training, Rng& rng) const {
    Tensor<T> x = dc::rows_to_chw(bev, h, w);
    for (const auto& conv : blocks_) {
        x = dc::relu(conv(dc::dropout(dc::upsample2x(x), config_.dropout, training, rng)));
    }
    std::vector<HeadOutput<T>> outs;
    for (std::size_t i = 0; i < tasks_.size(); ++i) {
        HeadOutput<T> o;
        o.task = tasks_[i];
        o.primary = predictors_[i](x);
        outs.push_back(std::move(o));
    }
    return outs;
}

template class AttentionHead<float>;
template class AttentionHead<double>;
template class ConvHead<float>;
template class ConvHead<double>;

}  // namespace f2bev::heads
