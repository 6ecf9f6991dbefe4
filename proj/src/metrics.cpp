#include "f2bev/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace f2bev::metrics {
namespace {

void check_target(const dc::Shape& shape, const Image8& target) {
    if (shape.size() != 3) throw ShapeError("loss: logits must be [C, H, W], got " + dc::to_string(shape));
    if (target.channels != 1 || static_cast<std::size_t>(target.height) != shape[1] ||
        static_cast<std::size_t>(target.width) != shape[2]) {
        throw ShapeError("loss: target map does not match logits " + dc::to_string(shape));
    }
    for (auto v : target.pixels) {
        if (v >= shape[0]) throw PreconditionError("loss: target class " + std::to_string(v) + " out of range");
    }
}

// Shared fused softmax loss: value and gradient of the per-pixel
// f(p_t) = -(1 - p_t)^gamma log p_t.
template <typename T>
Tensor<T> softmax_loss(const Tensor<T>& logits, const Image8& target, double gamma) {
    check_target(logits.shape(), target);
    if (!(gamma >= 0.0)) throw PreconditionError("focal loss: gamma must be >= 0");
    const std::size_t c = logits.dim(0);
    const std::size_t n = logits.dim(1) * logits.dim(2);
    const auto z = logits.data();
    std::vector<double> probs(c * n);
    std::vector<double> dloss_dp(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double mx = -INFINITY;
        for (std::size_t k = 0; k < c; ++k) mx = std::max(mx, static_cast<double>(z[k * n + i]));
        double s = 0.0;
        for (std::size_t k = 0; k < c; ++k) {
            probs[k * n + i] = std::exp(static_cast<double>(z[k * n + i]) - mx);
            s += probs[k * n + i];
        }
        for (std::size_t k = 0; k < c; ++k) probs[k * n + i] /= s;
        const std::size_t t = target.pixels[i];
        const double logp = static_cast<double>(z[t * n + i]) - mx - std::log(s);
        const double p = std::exp(logp);
        const double q = 1.0 - p;
        if (gamma == 0.0) {
            total += -logp;
            dloss_dp[i] = -1.0 / p;
        } else {
            const double mod = std::pow(std::max(q, 0.0), gamma);
            total += -mod * logp;
            const double dmod = q > 0.0 ? gamma * std::pow(q, gamma - 1.0) : 0.0;
            dloss_dp[i] = dmod * logp - mod / p;
        }
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    auto node = logits.node_ptr();
    return Tensor<T>::make({}, dc::Buffer<T>{static_cast<T>(total * inv_n)}, {node},
        [node, probs = std::move(probs), dloss_dp = std::move(dloss_dp), target_px = target.pixels, c, n,
         inv_n](typename Tensor<T>::Node& self) {
            auto& g = node->ensure_grad();
            const double up = static_cast<double>(self.grad[0]) * inv_n;
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t t = target_px[i];
                const double pt = probs[t * n + i];
                // dp_t/dz_k = p_t (delta_tk - p_k)
                const double base = up * dloss_dp[i] * pt;
                for (std::size_t k = 0; k < c; ++k) {
                    const double delta = k == t ? 1.0 : 0.0;
                    g[k * n + i] += static_cast<T>(base * (delta - probs[k * n + i]));
                }
            }
        });
}

}  // namespace

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const Image8& target) {
    return softmax_loss(logits, target, 0.0);
}

template <typename T>
Tensor<T> focal_loss(const Tensor<T>& logits, const Image8& target, double gamma) {
    return softmax_loss(logits, target, gamma);
}

template <typename T>
Image8 argmax(const Tensor<T>& logits) {
    if (logits.rank() != 3) throw ShapeError("argmax: logits must be [C, H, W]");
    const std::size_t c = logits.dim(0);
    const std::size_t h = logits.dim(1);
    const std::size_t w = logits.dim(2);
    const std::size_t n = h * w;
    Image8 out(static_cast<int>(w), static_cast<int>(h), 1);
    const auto z = logits.data();
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < c; ++k) {
            if (z[k * n + i] > z[best * n + i]) best = k;
        }
        out.pixels[i] = static_cast<std::uint8_t>(best);
    }
    return out;
}

Image8 downscale_nearest(const Image8& map, int factor) {
    if (factor < 1 || map.width % factor != 0 || map.height % factor != 0) {
        throw PreconditionError("downscale_nearest: size must be a multiple of the factor");
    }
    Image8 out(map.width / factor, map.height / factor, map.channels);
    for (int y = 0; y < out.height; ++y) {
        for (int x = 0; x < out.width; ++x) {
            for (int c = 0; c < map.channels; ++c) out.at(x, y, c) = map.at(x * factor, y * factor, c);
        }
    }
    return out;
}

ConfusionMatrix::ConfusionMatrix(std::size_t n_classes) : n_(n_classes), counts_(n_classes * n_classes, 0) {
    if (n_classes == 0) throw PreconditionError("confusion matrix: no classes");
}

void ConfusionMatrix::add(const Image8& pred, const Image8& target) {
    if (pred.width != target.width || pred.height != target.height || pred.channels != 1 ||
        target.channels != 1) {
        throw ShapeError("iou: prediction and target maps differ in shape");
    }
    for (std::size_t i = 0; i < pred.pixels.size(); ++i) {
        const std::size_t p = pred.pixels[i];
        const std::size_t t = target.pixels[i];
        if (p >= n_ || t >= n_) throw PreconditionError("iou: class index out of range");
        ++counts_[t * n_ + p];
    }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    if (other.n_ != n_) throw ShapeError("confusion matrix: class count mismatch");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

IoUReport iou_report(const ConfusionMatrix& confusion, const std::vector<std::size_t>& excluded) {
    const std::size_t n = confusion.n_classes();
    IoUReport r;
    r.excluded = excluded;
    r.per_class.assign(n, 0.0);
    r.target_counts.assign(n, 0);
    r.pred_counts.assign(n, 0);
    for (std::size_t t = 0; t < n; ++t) {
        for (std::size_t p = 0; p < n; ++p) {
            r.target_counts[t] += confusion.at(t, p);
            r.pred_counts[p] += confusion.at(t, p);
        }
    }
    for (std::size_t k = 0; k < n; ++k) {
        const std::uint64_t inter = confusion.at(k, k);
        const std::uint64_t uni = r.target_counts[k] + r.pred_counts[k] - inter;
        r.per_class[k] = uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
    }
    double total = 0.0;
    for (double v : r.per_class) total += v;
    r.mean = total / static_cast<double>(n);

    double weight_sum = 0.0;
    double weighted = 0.0;
    double plain = 0.0;
    std::size_t kept = 0;
    for (std::size_t k = 0; k < n; ++k) {
        if (std::find(excluded.begin(), excluded.end(), k) != excluded.end()) continue;
        weight_sum += static_cast<double>(r.target_counts[k]);
        weighted += static_cast<double>(r.target_counts[k]) * r.per_class[k];
        plain += r.per_class[k];
        ++kept;
    }
    if (weight_sum > 0.0) {
        r.freq_weighted = weighted / weight_sum;
    } else {
        r.freq_weighted = kept > 0 ? plain / static_cast<double>(kept) : 1.0;
    }
    return r;
}

IoUReport iou_report(const Image8& pred, const Image8& target, std::size_t n_classes,
                     const std::vector<std::size_t>& excluded) {
    ConfusionMatrix m(n_classes);
    m.add(pred, target);
    return iou_report(m, excluded);
}

template Tensor<float> cross_entropy(const Tensor<float>&, const Image8&);
template Tensor<double> cross_entropy(const Tensor<double>&, const Image8&);
template Tensor<float> focal_loss(const Tensor<float>&, const Image8&, double);
template Tensor<double> focal_loss(const Tensor<double>&, const Image8&, double);
template Image8 argmax(const Tensor<float>&);
template Image8 argmax(const Tensor<double>&);

}  // namespace f2bev::metrics
