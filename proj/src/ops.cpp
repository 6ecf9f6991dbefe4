#include "f2bev/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

namespace f2bev::dc {
namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

template <typename T>
using NodeT = detail::Node<T>;

template <typename T>
bool wants(const NodeT<T>& n, std::size_t parent) {
    return n.parents[parent] && n.parents[parent]->requires_grad;
}

template <typename T>
Buffer<T>& grad_of(NodeT<T>& n, std::size_t parent) {
    return n.parents[parent]->ensure_grad();
}

template <typename T>
const Buffer<T>& value_of(const NodeT<T>& n, std::size_t parent) {
    return n.parents[parent]->value;
}

void require(bool ok, const std::string& msg) {
    if (!ok) throw ShapeError(msg);
}

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* op) {
    require(t.defined() && t.rank() == rank,
            std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                (t.defined() ? to_string(t.shape()) : std::string("undefined")));
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.shape() == b.shape(), "add: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    Buffer<T> out(a.numel());
    const auto av = a.data();
    const auto bv = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    return Tensor<T>::make(a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()}, [](NodeT<T>& n) {
        for (std::size_t k = 0; k < 2; ++k) {
            if (!wants(n, k)) continue;
            auto& g = grad_of(n, k);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
        }
    });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.shape() == b.shape(), "sub: shape mismatch");
    Buffer<T> out(a.numel());
    const auto av = a.data();
    const auto bv = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    return Tensor<T>::make(a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()}, [](NodeT<T>& n) {
        if (wants(n, 0)) {
            auto& g = grad_of(n, 0);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
        }
        if (wants(n, 1)) {
            auto& g = grad_of(n, 1);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
        }
    });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.shape() == b.shape(), "mul: shape mismatch");
    Buffer<T> out(a.numel());
    const auto av = a.data();
    const auto bv = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    return Tensor<T>::make(a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()}, [](NodeT<T>& n) {
        const auto& av = value_of(n, 0);
        const auto& bv = value_of(n, 1);
        if (wants(n, 0)) {
            auto& g = grad_of(n, 0);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * bv[i];
        }
        if (wants(n, 1)) {
            auto& g = grad_of(n, 1);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * av[i];
        }
    });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
    Buffer<T> out(a.data().begin(), a.data().end());
    for (auto& v : out) v *= factor;
    return Tensor<T>::make(a.shape(), std::move(out), {a.node_ptr()}, [factor](NodeT<T>& n) {
        auto& g = grad_of(n, 0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * n.grad[i];
    });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    Buffer<T> out(a.data().begin(), a.data().end());
    for (auto& v : out) v = v > T(0) ? v : T(0);
    return Tensor<T>::make(a.shape(), std::move(out), {a.node_ptr()}, [](NodeT<T>& n) {
        auto& g = grad_of(n, 0);
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (n.value[i] > T(0)) g[i] += n.grad[i];
        }
    });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& a, double p, bool training, Rng& rng) {
    if (p < 0.0 || p >= 1.0) throw PreconditionError("dropout probability must be in [0, 1)");
    if (!training || p == 0.0) return a;
    std::bernoulli_distribution keep(1.0 - p);
    const T factor = static_cast<T>(1.0 / (1.0 - p));
    Buffer<T> mask(a.numel());
    for (auto& m : mask) m = keep(rng) ? factor : T(0);
    Buffer<T> out(a.numel());
    const auto av = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * mask[i];
    return Tensor<T>::make(a.shape(), std::move(out), {a.node_ptr()},
                           [mask = std::move(mask)](NodeT<T>& n) {
                               auto& g = grad_of(n, 0);
                               for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * mask[i];
                           });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    require(numel(shape) == a.numel(), "reshape: " + to_string(a.shape()) + " -> " + to_string(shape));
    Buffer<T> out(a.data().begin(), a.data().end());
    return Tensor<T>::make(std::move(shape), std::move(out), {a.node_ptr()}, [](NodeT<T>& n) {
        auto& g = grad_of(n, 0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    });
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& a) {
    require_rank(a, 2, "transpose2d");
    const std::size_t rows = a.dim(0);
    const std::size_t cols = a.dim(1);
    Buffer<T> out(a.numel());
    MapR<T>(out.data(), static_cast<Eigen::Index>(cols), static_cast<Eigen::Index>(rows)) =
        CMapR<T>(a.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)).transpose();
    return Tensor<T>::make({cols, rows}, std::move(out), {a.node_ptr()}, [rows, cols](NodeT<T>& n) {
        auto& g = grad_of(n, 0);
        MapR<T>(g.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)) +=
            CMapR<T>(n.grad.data(), static_cast<Eigen::Index>(cols), static_cast<Eigen::Index>(rows)).transpose();
    });
}

template <typename T>
Tensor<T> rows_to_chw(const Tensor<T>& x, std::size_t h, std::size_t w) {
    require_rank(x, 2, "rows_to_chw");
    require(x.dim(0) == h * w, "rows_to_chw: row count does not match h*w");
    return reshape(transpose2d(x), Shape{x.dim(1), h, w});
}

template <typename T>
Tensor<T> chw_to_rows(const Tensor<T>& x) {
    require_rank(x, 3, "chw_to_rows");
    return transpose2d(reshape(x, Shape{x.dim(0), x.dim(1) * x.dim(2)}));
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
    require(x.defined() && x.rank() >= 1, "linear: input must have rank >= 1");
    require_rank(weight, 2, "linear weight");
    const std::size_t in = weight.dim(0);
    const std::size_t out_dim = weight.dim(1);
    require(x.shape().back() == in, "linear: trailing dim " + std::to_string(x.shape().back()) +
                                        " != weight rows " + std::to_string(in));
    const bool has_bias = bias.defined();
    if (has_bias) require(bias.rank() == 1 && bias.dim(0) == out_dim, "linear: bias shape");
    const std::size_t rows = x.numel() / in;
    Shape shape = x.shape();
    shape.back() = out_dim;
    Buffer<T> out(rows * out_dim);
    const auto R = static_cast<Eigen::Index>(rows);
    const auto I = static_cast<Eigen::Index>(in);
    const auto O = static_cast<Eigen::Index>(out_dim);
    MapR<T> y(out.data(), R, O);
    y.noalias() = CMapR<T>(x.data().data(), R, I) * CMapR<T>(weight.data().data(), I, O);
    if (has_bias) {
        y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.data().data(), O);
    }
    std::vector<std::shared_ptr<NodeT<T>>> parents{x.node_ptr(), weight.node_ptr()};
    if (has_bias) parents.push_back(bias.node_ptr());
    return Tensor<T>::make(std::move(shape), std::move(out), std::move(parents), [R, I, O, has_bias](NodeT<T>& n) {
        CMapR<T> dy(n.grad.data(), R, O);
        if (wants(n, 0)) {
            MapR<T>(grad_of(n, 0).data(), R, I).noalias() += dy * CMapR<T>(value_of(n, 1).data(), I, O).transpose();
        }
        if (wants(n, 1)) {
            MapR<T>(grad_of(n, 1).data(), I, O).noalias() += CMapR<T>(value_of(n, 0).data(), R, I).transpose() * dy;
        }
        if (has_bias && wants(n, 2)) {
            Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(grad_of(n, 2).data(), O) += dy.colwise().sum();
        }
    });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    require_rank(a, 2, "matmul lhs");
    require_rank(b, 2, "matmul rhs");
    require(a.dim(1) == b.dim(0), "matmul: inner dimensions differ");
    const auto M = static_cast<Eigen::Index>(a.dim(0));
    const auto K = static_cast<Eigen::Index>(a.dim(1));
    const auto N = static_cast<Eigen::Index>(b.dim(1));
    Buffer<T> out(static_cast<std::size_t>(M * N));
    MapR<T>(out.data(), M, N).noalias() = CMapR<T>(a.data().data(), M, K) * CMapR<T>(b.data().data(), K, N);
    return Tensor<T>::make({a.dim(0), b.dim(1)}, std::move(out), {a.node_ptr(), b.node_ptr()}, [M, K, N](NodeT<T>& n) {
        CMapR<T> dy(n.grad.data(), M, N);
        if (wants(n, 0)) {
            MapR<T>(grad_of(n, 0).data(), M, K).noalias() += dy * CMapR<T>(value_of(n, 1).data(), K, N).transpose();
        }
        if (wants(n, 1)) {
            MapR<T>(grad_of(n, 1).data(), K, N).noalias() += CMapR<T>(value_of(n, 0).data(), M, K).transpose() * dy;
        }
    });
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
    require_rank(a, 2, "matmul_nt lhs");
    require_rank(b, 2, "matmul_nt rhs");
    require(a.dim(1) == b.dim(1), "matmul_nt: inner dimensions differ");
    const auto M = static_cast<Eigen::Index>(a.dim(0));
    const auto K = static_cast<Eigen::Index>(a.dim(1));
    const auto N = static_cast<Eigen::Index>(b.dim(0));
    Buffer<T> out(static_cast<std::size_t>(M * N));
    MapR<T>(out.data(), M, N).noalias() = CMapR<T>(a.data().data(), M, K) * CMapR<T>(b.data().data(), N, K).transpose();
    return Tensor<T>::make({a.dim(0), b.dim(0)}, std::move(out), {a.node_ptr(), b.node_ptr()}, [M, K, N](NodeT<T>& n) {
        CMapR<T> dy(n.grad.data(), M, N);
        if (wants(n, 0)) {
            MapR<T>(grad_of(n, 0).data(), M, K).noalias() += dy * CMapR<T>(value_of(n, 1).data(), N, K);
        }
        if (wants(n, 1)) {
            MapR<T>(grad_of(n, 1).data(), N, K).noalias() += dy.transpose() * CMapR<T>(value_of(n, 0).data(), M, K);
        }
    });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, std::size_t begin, std::size_t end) {
    require_rank(a, 2, "slice_cols");
    require(begin < end && end <= a.dim(1), "slice_cols: bad column range");
    const std::size_t rows = a.dim(0);
    const std::size_t cols = a.dim(1);
    const std::size_t width = end - begin;
    Buffer<T> out(rows * width);
    const auto av = a.data();
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(av.begin() + static_cast<std::ptrdiff_t>(r * cols + begin), width, out.begin() + static_cast<std::ptrdiff_t>(r * width));
    }
    return Tensor<T>::make({rows, width}, std::move(out), {a.node_ptr()}, [rows, cols, begin, width](NodeT<T>& n) {
        auto& g = grad_of(n, 0);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < width; ++c) g[r * cols + begin + c] += n.grad[r * width + c];
        }
    });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
    require(!parts.empty(), "concat_cols: no inputs");
    const std::size_t rows = parts.front().dim(0);
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        require_rank(p, 2, "concat_cols");
        require(p.dim(0) == rows, "concat_cols: row counts differ");
        widths.push_back(p.dim(1));
        total += p.dim(1);
    }
    Buffer<T> out(rows * total);
    std::vector<std::shared_ptr<NodeT<T>>> parents;
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto pv = parts[k].data();
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(r * widths[k]), widths[k],
                        out.begin() + static_cast<std::ptrdiff_t>(r * total + offset));
        }
        offset += widths[k];
        parents.push_back(parts[k].node_ptr());
    }
    return Tensor<T>::make({rows, total}, std::move(out), std::move(parents), [rows, total, widths](NodeT<T>& n) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
            if (wants(n, k)) {
                auto& g = grad_of(n, k);
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t c = 0; c < widths[k]; ++c) g[r * widths[k] + c] += n.grad[r * total + off + c];
                }
            }
            off += widths[k];
        }
    });
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
    require(!parts.empty(), "concat_rows: no inputs");
    const std::size_t cols = parts.front().dim(1);
    std::vector<std::size_t> sizes;
    std::size_t rows = 0;
    Buffer<T> out;
    std::vector<std::shared_ptr<NodeT<T>>> parents;
    for (const auto& p : parts) {
        require_rank(p, 2, "concat_rows");
        require(p.dim(1) == cols, "concat_rows: column counts differ");
        rows += p.dim(0);
        sizes.push_back(p.numel());
        out.insert(out.end(), p.data().begin(), p.data().end());
        parents.push_back(p.node_ptr());
    }
    return Tensor<T>::make({rows, cols}, std::move(out), std::move(parents), [sizes](NodeT<T>& n) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < sizes.size(); ++k) {
            if (wants(n, k)) {
                auto& g = grad_of(n, k);
                for (std::size_t i = 0; i < sizes[k]; ++i) g[i] += n.grad[off + i];
            }
            off += sizes[k];
        }
    });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
    require(axis < x.rank(), "softmax: axis out of range");
    std::size_t outer = 1;
    std::size_t inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
    for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
    const std::size_t len = x.dim(axis);
    Buffer<T> out(x.numel());
    const auto xv = x.data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            T mx = xv[base];
            for (std::size_t k = 1; k < len; ++k) mx = std::max(mx, xv[base + k * inner]);
            T total = 0;
            for (std::size_t k = 0; k < len; ++k) {
                const T e = std::exp(xv[base + k * inner] - mx);
                out[base + k * inner] = e;
                total += e;
            }
            for (std::size_t k = 0; k < len; ++k) out[base + k * inner] /= total;
        }
    }
    return Tensor<T>::make(x.shape(), std::move(out), {x.node_ptr()}, [outer, inner, len](NodeT<T>& n) {
        auto& g = grad_of(n, 0);
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = o * len * inner + in;
                T dot = 0;
                for (std::size_t k = 0; k < len; ++k) dot += n.value[base + k * inner] * n.grad[base + k * inner];
                for (std::size_t k = 0; k < len; ++k) {
                    const std::size_t i = base + k * inner;
                    g[i] += n.value[i] * (n.grad[i] - dot);
                }
            }
        }
    });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
    require(x.defined() && x.rank() >= 1, "layer_norm: input rank");
    const std::size_t d = x.shape().back();
    require(gamma.numel() == d && beta.numel() == d, "layer_norm: gamma/beta size");
    const std::size_t rows = x.numel() / d;
    Buffer<T> out(x.numel());
    Buffer<T> xhat(x.numel());
    Buffer<T> inv_std(rows);
    const auto xv = x.data();
    const auto gv = gamma.data();
    const auto bv = beta.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = xv.data() + r * d;
        T mu = 0;
        for (std::size_t c = 0; c < d; ++c) mu += row[c];
        mu /= static_cast<T>(d);
        T var = 0;
        for (std::size_t c = 0; c < d; ++c) var += (row[c] - mu) * (row[c] - mu);
        var /= static_cast<T>(d);
        const T is = T(1) / std::sqrt(var + eps);
        inv_std[r] = is;
        for (std::size_t c = 0; c < d; ++c) {
            const T h = (row[c] - mu) * is;
            xhat[r * d + c] = h;
            out[r * d + c] = h * gv[c] + bv[c];
        }
    }
    return Tensor<T>::make(x.shape(), std::move(out), {x.node_ptr(), gamma.node_ptr(), beta.node_ptr()},
                           [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](NodeT<T>& n) {
        const auto& gv = value_of(n, 1);
        if (wants(n, 0)) {
            auto& g = grad_of(n, 0);
            for (std::size_t r = 0; r < rows; ++r) {
                T sum_dh = 0;
                T sum_dh_h = 0;
                for (std::size_t c = 0; c < d; ++c) {
                    const T dh = n.grad[r * d + c] * gv[c];
                    sum_dh += dh;
                    sum_dh_h += dh * xhat[r * d + c];
                }
                const T inv_d = T(1) / static_cast<T>(d);
                for (std::size_t c = 0; c < d; ++c) {
                    const T dh = n.grad[r * d + c] * gv[c];
                    g[r * d + c] += inv_std[r] * (dh - inv_d * sum_dh - xhat[r * d + c] * inv_d * sum_dh_h);
                }
            }
        }
        if (wants(n, 1)) {
            auto& g = grad_of(n, 1);
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t c = 0; c < d; ++c) g[c] += n.grad[r * d + c] * xhat[r * d + c];
            }
        }
        if (wants(n, 2)) {
            auto& g = grad_of(n, 2);
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t c = 0; c < d; ++c) g[c] += n.grad[r * d + c];
            }
        }
    });
}

namespace {

struct ConvGeometry {
    std::size_t cin, h, w, cout, k, stride, pad, ho, wo;
};

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
    const std::size_t plane = g.ho * g.wo;
    for (std::size_t c = 0; c < g.cin; ++c) {
        for (std::size_t ky = 0; ky < g.k; ++ky) {
            for (std::size_t kx = 0; kx < g.k; ++kx) {
                T* dst = cols + ((c * g.k + ky) * g.k + kx) * plane;
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
                    if (iy < 0 || iy >= static_cast<long>(g.h)) {
                        std::fill_n(dst + oy * g.wo, g.wo, T(0));
                        continue;
                    }
                    const T* src = x + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
                    for (std::size_t ox = 0; ox < g.wo; ++ox) {
                        const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
                        dst[oy * g.wo + ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? T(0) : src[ix];
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* dx) {
    const std::size_t plane = g.ho * g.wo;
    for (std::size_t c = 0; c < g.cin; ++c) {
        for (std::size_t ky = 0; ky < g.k; ++ky) {
            for (std::size_t kx = 0; kx < g.k; ++kx) {
                const T* src = cols + ((c * g.k + ky) * g.k + kx) * plane;
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
                    if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
                    T* dst = dx + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
                    for (std::size_t ox = 0; ox < g.wo; ++ox) {
                        const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
                        if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += src[oy * g.wo + ox];
                    }
                }
            }
        }
    }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride, std::size_t padding) {
    require_rank(x, 3, "conv2d input");
    require_rank(weight, 4, "conv2d weight");
    require(stride >= 1, "conv2d: stride must be >= 1");
    ConvGeometry g{};
    g.cin = x.dim(0);
    g.h = x.dim(1);
    g.w = x.dim(2);
    g.cout = weight.dim(0);
    g.k = weight.dim(2);
    g.stride = stride;
    g.pad = padding;
    require(weight.dim(1) == g.cin && weight.dim(3) == g.k,
            "conv2d: weight " + to_string(weight.shape()) + " incompatible with input " + to_string(x.shape()));
    require(g.h >= 1 && g.w >= 1, "conv2d: empty input");
    require(g.h + 2 * g.pad >= g.k && g.w + 2 * g.pad >= g.k, "conv2d: kernel larger than padded input");
    g.ho = (g.h + 2 * g.pad - g.k) / g.stride + 1;
    g.wo = (g.w + 2 * g.pad - g.k) / g.stride + 1;
    const bool has_bias = bias.defined();
    if (has_bias) require(bias.numel() == g.cout, "conv2d: bias size");

    const auto K = static_cast<Eigen::Index>(g.cin * g.k * g.k);
    const auto P = static_cast<Eigen::Index>(g.ho * g.wo);
    const auto Co = static_cast<Eigen::Index>(g.cout);
    Buffer<T> cols(static_cast<std::size_t>(K * P));
    im2col(x.data().data(), g, cols.data());
    Buffer<T> out(static_cast<std::size_t>(Co * P));
    MapR<T> y(out.data(), Co, P);
    y.noalias() = CMapR<T>(weight.data().data(), Co, K) * CMapR<T>(cols.data(), K, P);
    if (has_bias) {
        y.colwise() += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(bias.data().data(), Co);
    }
    std::vector<std::shared_ptr<NodeT<T>>> parents{x.node_ptr(), weight.node_ptr()};
    if (has_bias) parents.push_back(bias.node_ptr());
    const bool need_cols = grad_enabled();
    return Tensor<T>::make({g.cout, g.ho, g.wo}, std::move(out), std::move(parents),
                           [g, K, P, Co, has_bias, cols = need_cols ? std::move(cols) : Buffer<T>{}](NodeT<T>& n) {
        CMapR<T> dy(n.grad.data(), Co, P);
        if (wants(n, 1)) {
            MapR<T>(grad_of(n, 1).data(), Co, K).noalias() += dy * CMapR<T>(cols.data(), K, P).transpose();
        }
        if (has_bias && wants(n, 2)) {
            Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(grad_of(n, 2).data(), Co) += dy.rowwise().sum();
        }
        if (wants(n, 0)) {
            MatR<T> dcols = CMapR<T>(value_of(n, 1).data(), Co, K).transpose() * dy;
            col2im_add(dcols.data(), g, grad_of(n, 0).data());
        }
    });
}

template <typename T>
Tensor<T> conv3x3(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
    require_rank(weight, 4, "conv3x3 weight");
    require(weight.dim(2) == 3 && weight.dim(3) == 3, "conv3x3: kernel must be 3x3");
    return conv2d(x, weight, bias, 1, 1);
}

namespace {

struct Tap {
    std::size_t i0, i1;
    double l0, l1;
};

// Source taps for 2x upsampling along one axis (half-pixel centers).
std::vector<Tap> upsample_taps(std::size_t in) {
    std::vector<Tap> taps(2 * in);
    for (std::size_t o = 0; o < 2 * in; ++o) {
        double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
        if (src < 0.0) src = 0.0;
        const auto i0 = static_cast<std::size_t>(std::floor(src));
        const std::size_t i1 = std::min(i0 + 1, in - 1);
        const double l1 = src - static_cast<double>(i0);
        taps[o] = {i0, i1, 1.0 - l1, l1};
    }
    return taps;
}

}  // namespace

template <typename T>
Tensor<T> upsample2x(const Tensor<T>& x) {
    require_rank(x, 3, "upsample2x");
    const std::size_t c = x.dim(0);
    const std::size_t h = x.dim(1);
    const std::size_t w = x.dim(2);
    const auto ty = upsample_taps(h);
    const auto tx = upsample_taps(w);
    const std::size_t ho = 2 * h;
    const std::size_t wo = 2 * w;
    Buffer<T> out(c * ho * wo);
    const auto xv = x.data();
    for (std::size_t ch = 0; ch < c; ++ch) {
        const T* src = xv.data() + ch * h * w;
        T* dst = out.data() + ch * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
            const Tap& a = ty[oy];
            for (std::size_t ox = 0; ox < wo; ++ox) {
                const Tap& b = tx[ox];
                dst[oy * wo + ox] = static_cast<T>(
                    a.l0 * (b.l0 * src[a.i0 * w + b.i0] + b.l1 * src[a.i0 * w + b.i1]) +
                    a.l1 * (b.l0 * src[a.i1 * w + b.i0] + b.l1 * src[a.i1 * w + b.i1]));
            }
        }
    }
    return Tensor<T>::make({c, ho, wo}, std::move(out), {x.node_ptr()}, [c, h, w, ho, wo, ty, tx](NodeT<T>& n) {
        auto& g = grad_of(n, 0);
        for (std::size_t ch = 0; ch < c; ++ch) {
            T* dst = g.data() + ch * h * w;
            const T* dy = n.grad.data() + ch * ho * wo;
            for (std::size_t oy = 0; oy < ho; ++oy) {
                const Tap& a = ty[oy];
                for (std::size_t ox = 0; ox < wo; ++ox) {
                    const Tap& b = tx[ox];
                    const T gv = dy[oy * wo + ox];
                    dst[a.i0 * w + b.i0] += static_cast<T>(a.l0 * b.l0) * gv;
                    dst[a.i0 * w + b.i1] += static_cast<T>(a.l0 * b.l1) * gv;
                    dst[a.i1 * w + b.i0] += static_cast<T>(a.l1 * b.l0) * gv;
                    dst[a.i1 * w + b.i1] += static_cast<T>(a.l1 * b.l1) * gv;
                }
            }
        }
    });
}

namespace {

// Bilinear corner set of a continuous point; out-of-range corners are flagged.
template <typename T>
struct Corners {
    long x0, y0;
    T fx, fy;
    bool in[4];  // (x0,y0) (x0+1,y0) (x0,y0+1) (x0+1,y0+1)

    Corners(T x, T y, std::size_t w, std::size_t h) {
        const T flx = std::floor(x);
        const T fly = std::floor(y);
        x0 = static_cast<long>(flx);
        y0 = static_cast<long>(fly);
        fx = x - flx;
        fy = y - fly;
        const auto W = static_cast<long>(w);
        const auto H = static_cast<long>(h);
        const bool x0in = x0 >= 0 && x0 < W;
        const bool x1in = x0 + 1 >= 0 && x0 + 1 < W;
        const bool y0in = y0 >= 0 && y0 < H;
        const bool y1in = y0 + 1 >= 0 && y0 + 1 < H;
        in[0] = x0in && y0in;
        in[1] = x1in && y0in;
        in[2] = x0in && y1in;
        in[3] = x1in && y1in;
    }
    std::size_t idx(int k, std::size_t w) const {
        const long cx = x0 + (k & 1);
        const long cy = y0 + (k >> 1);
        return static_cast<std::size_t>(cy) * w + static_cast<std::size_t>(cx);
    }
    T weight(int k) const {
        const T wx = (k & 1) ? fx : T(1) - fx;
        const T wy = (k >> 1) ? fy : T(1) - fy;
        return wx * wy;
    }
    // d weight / dx and d weight / dy
    T dwx(int k) const { return ((k & 1) ? T(1) : T(-1)) * ((k >> 1) ? fy : T(1) - fy); }
    T dwy(int k) const { return ((k >> 1) ? T(1) : T(-1)) * ((k & 1) ? fx : T(1) - fx); }
};

// Far-away or non-finite points would overflow the integer corner math.
template <typename T>
bool sample_possible(T x, T y, std::size_t w, std::size_t h) {
    return std::isfinite(x) && std::isfinite(y) && x > T(-2) && y > T(-2) &&
           x < static_cast<T>(w) + T(1) && y < static_cast<T>(h) + T(1);
}

}  // namespace

template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& feature, const Tensor<T>& pts) {
    require_rank(feature, 3, "bilinear_sample feature");
    require_rank(pts, 2, "bilinear_sample pts");
    require(pts.dim(1) == 2, "bilinear_sample: pts must be [N, 2]");
    const std::size_t c = feature.dim(0);
    const std::size_t h = feature.dim(1);
    const std::size_t w = feature.dim(2);
    const std::size_t np = pts.dim(0);
    const std::size_t plane = h * w;
    Buffer<T> out(np * c, T(0));
    const auto fv = feature.data();
    const auto pv = pts.data();
    for (std::size_t i = 0; i < np; ++i) {
        const T x = pv[2 * i];
        const T y = pv[2 * i + 1];
        if (!sample_possible(x, y, w, h)) continue;
        const Corners<T> cr(x, y, w, h);
        for (int k = 0; k < 4; ++k) {
            if (!cr.in[k]) continue;
            const T wk = cr.weight(k);
            const std::size_t off = cr.idx(k, w);
            for (std::size_t ch = 0; ch < c; ++ch) out[i * c + ch] += wk * fv[ch * plane + off];
        }
    }
    return Tensor<T>::make({np, c}, std::move(out), {feature.node_ptr(), pts.node_ptr()}, [c, h, w, np, plane](NodeT<T>& n) {
        const auto& fv = value_of(n, 0);
        const auto& pv = value_of(n, 1);
        const bool df = wants(n, 0);
        const bool dp = wants(n, 1);
        for (std::size_t i = 0; i < np; ++i) {
            const T x = pv[2 * i];
            const T y = pv[2 * i + 1];
            if (!sample_possible(x, y, w, h)) continue;
            const Corners<T> cr(x, y, w, h);
            const T* dy = n.grad.data() + i * c;
            T gx = 0;
            T gy = 0;
            for (int k = 0; k < 4; ++k) {
                if (!cr.in[k]) continue;
                const std::size_t off = cr.idx(k, w);
                const T wk = cr.weight(k);
                T dotv = 0;
                for (std::size_t ch = 0; ch < c; ++ch) {
                    if (df) grad_of(n, 0)[ch * plane + off] += wk * dy[ch];
                    dotv += dy[ch] * fv[ch * plane + off];
                }
                gx += cr.dwx(k) * dotv;
                gy += cr.dwy(k) * dotv;
            }
            if (dp) {
                auto& g = grad_of(n, 1);
                g[2 * i] += gx;
                g[2 * i + 1] += gy;
            }
        }
    });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> rows) {
    require_rank(x, 2, "gather_rows");
    const std::size_t cols = x.dim(1);
    const std::size_t n_src = x.dim(0);
    Buffer<T> out(rows.size() * cols);
    const auto xv = x.data();
    for (std::size_t k = 0; k < rows.size(); ++k) {
        require(rows[k] < n_src, "gather_rows: row index out of range");
        std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(rows[k] * cols), cols, out.begin() + static_cast<std::ptrdiff_t>(k * cols));
    }
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    return Tensor<T>::make({rows.size(), cols}, std::move(out), {x.node_ptr()}, [cols, idx = std::move(idx)](NodeT<T>& n) {
        auto& g = grad_of(n, 0);
        for (std::size_t k = 0; k < idx.size(); ++k) {
            for (std::size_t c = 0; c < cols; ++c) g[idx[k] * cols + c] += n.grad[k * cols + c];
        }
    });
}

template <typename T>
Tensor<T> scatter_add_rows(const Tensor<T>& src, std::span<const std::size_t> rows,
                           std::span<const T> weights, std::size_t n_rows) {
    require_rank(src, 2, "scatter_add_rows");
    require(src.dim(0) == rows.size() && weights.size() == rows.size(), "scatter_add_rows: index/weight count");
    const std::size_t cols = src.dim(1);
    Buffer<T> out(n_rows * cols, T(0));
    const auto sv = src.data();
    for (std::size_t k = 0; k < rows.size(); ++k) {
        require(rows[k] < n_rows, "scatter_add_rows: row index out of range");
        for (std::size_t c = 0; c < cols; ++c) out[rows[k] * cols + c] += weights[k] * sv[k * cols + c];
    }
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    Buffer<T> wts(weights.begin(), weights.end());
    return Tensor<T>::make({n_rows, cols}, std::move(out), {src.node_ptr()},
                           [cols, idx = std::move(idx), wts = std::move(wts)](NodeT<T>& n) {
        auto& g = grad_of(n, 0);
        for (std::size_t k = 0; k < idx.size(); ++k) {
            for (std::size_t c = 0; c < cols; ++c) g[k * cols + c] += wts[k] * n.grad[idx[k] * cols + c];
        }
    });
}

template <typename T>
Tensor<T> blend_rows(const Tensor<T>& a, const Tensor<T>& b, std::span<const std::uint8_t> mask) {
    require_rank(a, 2, "blend_rows");
    require(a.shape() == b.shape(), "blend_rows: shape mismatch");
    require(mask.size() == a.dim(0), "blend_rows: mask length");
    const std::size_t cols = a.dim(1);
    Buffer<T> out(a.numel());
    const auto av = a.data();
    const auto bv = b.data();
    for (std::size_t r = 0; r < mask.size(); ++r) {
        const auto& srcv = mask[r] ? av : bv;
        std::copy_n(srcv.begin() + static_cast<std::ptrdiff_t>(r * cols), cols, out.begin() + static_cast<std::ptrdiff_t>(r * cols));
    }
    std::vector<std::uint8_t> m(mask.begin(), mask.end());
    return Tensor<T>::make(a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()}, [cols, m = std::move(m)](NodeT<T>& n) {
        for (std::size_t r = 0; r < m.size(); ++r) {
            const std::size_t k = m[r] ? 0 : 1;
            if (!wants(n, k)) continue;
            auto& g = grad_of(n, k);
            for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += n.grad[r * cols + c];
        }
    });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    T total = 0;
    for (T v : x.data()) total += v;
    return Tensor<T>::make({}, Buffer<T>{total}, {x.node_ptr()}, [](NodeT<T>& n) {
        auto& g = grad_of(n, 0);
        for (auto& v : g) v += n.grad[0];
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    require(x.numel() > 0, "mean: empty tensor");
    return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> deformable_sample(const std::vector<Tensor<T>>& levels, const Tensor<T>& locations,
                            const Tensor<T>& weights) {
    require(!levels.empty(), "deformable_sample: no levels");
    require_rank(locations, 5, "deformable_sample locations");
    require_rank(weights, 4, "deformable_sample weights");
    const std::size_t nq = locations.dim(0);
    const std::size_t nh = locations.dim(1);
    const std::size_t nl = locations.dim(2);
    const std::size_t np = locations.dim(3);
    require(locations.dim(4) == 2, "deformable_sample: locations last dim must be 2");
    require(weights.shape() == Shape({nq, nh, nl, np}), "deformable_sample: weights shape");
    require(levels.size() == nl, "deformable_sample: level count");
    const std::size_t c = levels.front().dim(0);
    require(c % nh == 0, "deformable_sample: channels not divisible by heads");
    const std::size_t dh = c / nh;
    std::vector<std::size_t> hs, ws;
    for (const auto& lv : levels) {
        require_rank(lv, 3, "deformable_sample level");
        require(lv.dim(0) == c, "deformable_sample: level channel count");
        hs.push_back(lv.dim(1));
        ws.push_back(lv.dim(2));
    }
    Buffer<T> out(nq * c, T(0));
    const auto loc = locations.data();
    const auto att = weights.data();
    for (std::size_t q = 0; q < nq; ++q) {
        for (std::size_t m = 0; m < nh; ++m) {
            T* dst = out.data() + q * c + m * dh;
            for (std::size_t l = 0; l < nl; ++l) {
                const T* val = levels[l].data().data() + m * dh * hs[l] * ws[l];
                const std::size_t plane = hs[l] * ws[l];
                for (std::size_t p = 0; p < np; ++p) {
                    const std::size_t s = ((q * nh + m) * nl + l) * np + p;
                    const T x = loc[2 * s];
                    const T y = loc[2 * s + 1];
                    if (!sample_possible(x, y, ws[l], hs[l])) continue;
                    const Corners<T> cr(x, y, ws[l], hs[l]);
                    const T a = att[s];
                    for (int k = 0; k < 4; ++k) {
                        if (!cr.in[k]) continue;
                        const T wk = a * cr.weight(k);
                        const std::size_t off = cr.idx(k, ws[l]);
                        for (std::size_t ch = 0; ch < dh; ++ch) dst[ch] += wk * val[ch * plane + off];
                    }
                }
            }
        }
    }
    std::vector<std::shared_ptr<NodeT<T>>> parents{locations.node_ptr(), weights.node_ptr()};
    for (const auto& lv : levels) parents.push_back(lv.node_ptr());
    return Tensor<T>::make({nq, c}, std::move(out), std::move(parents), [nq, nh, nl, np, c, dh, hs, ws](NodeT<T>& n) {
        const auto& loc = value_of(n, 0);
        const auto& att = value_of(n, 1);
        const bool dloc = wants(n, 0);
        const bool datt = wants(n, 1);
        for (std::size_t q = 0; q < nq; ++q) {
            for (std::size_t m = 0; m < nh; ++m) {
                const T* dy = n.grad.data() + q * c + m * dh;
                for (std::size_t l = 0; l < nl; ++l) {
                    const std::size_t plane = hs[l] * ws[l];
                    const T* val = value_of(n, 2 + l).data() + m * dh * plane;
                    T* dval = wants(n, 2 + l) ? grad_of(n, 2 + l).data() + m * dh * plane : nullptr;
                    for (std::size_t p = 0; p < np; ++p) {
                        const std::size_t s = ((q * nh + m) * nl + l) * np + p;
                        const T x = loc[2 * s];
                        const T y = loc[2 * s + 1];
                        if (!sample_possible(x, y, ws[l], hs[l])) continue;
                        const Corners<T> cr(x, y, ws[l], hs[l]);
                        const T a = att[s];
                        T gsample = 0;  // d out / d weight
                        T gx = 0;
                        T gy = 0;
                        for (int k = 0; k < 4; ++k) {
                            if (!cr.in[k]) continue;
                            const std::size_t off = cr.idx(k, ws[l]);
                            T dotv = 0;
                            for (std::size_t ch = 0; ch < dh; ++ch) dotv += dy[ch] * val[ch * plane + off];
                            gsample += cr.weight(k) * dotv;
                            gx += cr.dwx(k) * dotv;
                            gy += cr.dwy(k) * dotv;
                            if (dval) {
                                const T wk = a * cr.weight(k);
                                for (std::size_t ch = 0; ch < dh; ++ch) dval[ch * plane + off] += wk * dy[ch];
                            }
                        }
                        if (datt) grad_of(n, 1)[s] += gsample;
                        if (dloc) {
                            auto& g = grad_of(n, 0);
                            g[2 * s] += a * gx;
                            g[2 * s + 1] += a * gy;
                        }
                    }
                }
            }
        }
    });
}

#define F2BEV_INSTANTIATE_OPS(T)                                                                       \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                        \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                        \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                        \
    template Tensor<T> scale(const Tensor<T>&, T);                                                     \
    template Tensor<T> relu(const Tensor<T>&);                                                         \
    template Tensor<T> dropout(const Tensor<T>&, double, bool, Rng&);                                  \
    template Tensor<T> reshape(const Tensor<T>&, Shape);                                               \
    template Tensor<T> transpose2d(const Tensor<T>&);                                                  \
    template Tensor<T> rows_to_chw(const Tensor<T>&, std::size_t, std::size_t);                        \
    template Tensor<T> chw_to_rows(const Tensor<T>&);                                                  \
    template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                   \
    template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                     \
    template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);                                  \
    template Tensor<T> slice_cols(const Tensor<T>&, std::size_t, std::size_t);                         \
    template Tensor<T> concat_cols(const std::vector<Tensor<T>>&);                                     \
    template Tensor<T> concat_rows(const std::vector<Tensor<T>>&);                                     \
    template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                         \
    template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);            \
    template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t,       \
                              std::size_t);                                                            \
    template Tensor<T> conv3x3(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                  \
    template Tensor<T> upsample2x(const Tensor<T>&);                                                   \
    template Tensor<T> bilinear_sample(const Tensor<T>&, const Tensor<T>&);                            \
    template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::size_t>);                    \
    template Tensor<T> scatter_add_rows(const Tensor<T>&, std::span<const std::size_t>,                \
                                        std::span<const T>, std::size_t);                              \
    template Tensor<T> blend_rows(const Tensor<T>&, const Tensor<T>&, std::span<const std::uint8_t>);  \
    template Tensor<T> sum(const Tensor<T>&);                                                          \
    template Tensor<T> mean(const Tensor<T>&);                                                         \
    template Tensor<T> deformable_sample(const std::vector<Tensor<T>>&, const Tensor<T>&,              \
                                         const Tensor<T>&);

F2BEV_INSTANTIATE_OPS(float)
F2BEV_INSTANTIATE_OPS(double)

}  // namespace f2bev::dc
