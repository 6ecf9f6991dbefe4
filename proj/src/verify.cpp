#include "f2bev/verify.hpp"

#include "f2bev/attention.hpp"
#include "f2bev/heads.hpp"
#include "f2bev/metrics.hpp"
#include "f2bev/synth.hpp"

#include <chrono>
#include <cmath>
#include <random>

namespace f2bev::verify {

namespace {

using dc::NamedParam;
using dc::Rng;
using dc::Shape;
using dc::Tensor;

constexpr double kMargin = 5e-3;

template <typename T>
Tensor<T> uniform(const Shape& shape, Rng& rng, double lo, double hi, bool grad = true) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<T> v(dc::numel(shape));
    for (auto& x : v) x = static_cast<T>(u(rng));
    return Tensor<T>(shape, v, grad);
}

// |x| in [lo, hi], random sign.
template <typename T>
Tensor<T> away_from_zero(const Shape& shape, Rng& rng, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::bernoulli_distribution sign(0.5);
    std::vector<T> v(dc::numel(shape));
    for (auto& x : v) x = static_cast<T>(sign(rng) ? u(rng) : -u(rng));
    return Tensor<T>(shape, v, true);
}

double grid_distance(double v) { return std::abs(v - std::round(v)); }

double off_grid(Rng& rng, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    for (;;) {
        const double v = u(rng);
        if (grid_distance(v) >= 0.1) return v;
    }
}

template <typename T>
class Probe {
public:
    Probe(const Shape& shape, Rng& rng) : w_(uniform<T>(shape, rng, -1.0, 1.0, false)) {}
    Tensor<T> operator()(const Tensor<T>& out) const { return dc::sum(dc::mul(out, w_)); }

private:
    Tensor<T> w_;
};

Image8 random_labels(int w, int h, int classes, Rng& rng) {
    std::uniform_int_distribution<int> u(0, classes - 1);
    Image8 img(w, h, 1);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(u(rng));
    return img;
}

template <typename T>
void randomize(const nn::Linear<T>& lin, Rng& rng, double w_scale, double b_scale) {
    std::uniform_real_distribution<double> uw(-w_scale, w_scale), ub(-b_scale, b_scale);
    auto w = lin.weight;
    auto b = lin.bias;
    for (auto& v : w.data()) v = static_cast<T>(uw(rng));
    for (auto& v : b.data()) v = static_cast<T>(ub(rng));
}

template <typename T>
void randomize(dc::ParamStore<T>& store, Rng& rng, double scale) {
    std::uniform_real_distribution<double> u(-scale, scale);
    for (const auto& p : store.params()) {
        auto t = p.tensor;
        for (auto& v : t.data()) v = static_cast<T>(u(rng));
    }
}

// Zero biases put pre-activations of all-zero inputs exactly on the relu kink.
template <typename T>
void randomize_biases(dc::ParamStore<T>& store, Rng& rng, double scale) {
    std::uniform_real_distribution<double> u(-scale, scale);
    for (const auto& p : store.params()) {
        if (!p.name.ends_with(".bias")) continue;
        auto t = p.tensor;
        for (auto& v : t.data()) v = static_cast<T>(u(rng));
    }
}

template <typename T>
void randomize(const attn::DeformableAttnParams<T>& p, Rng& rng) {
    randomize(p.offsets, rng, 0.6, 2.5);
    randomize(p.weights, rng, 1.0, 1.0);
    randomize(p.output, rng, 0.5, 0.5);
}

// Smallest distance of any sample coordinate (reference plus predicted
// offset) to a texel line.
template <typename T>
double deformable_margin(const Tensor<T>& query, std::span<const T> refs, const attn::DeformableAttnParams<T>& p) {
    dc::NoGradGuard guard;
    const auto off = p.offsets(query);
    const std::size_t width = off.dim(1);
    double margin = 1e9;
    for (std::size_t n = 0; n < query.dim(0); ++n)
        for (std::size_t m = 0; m < p.n_heads; ++m)
            for (std::size_t l = 0; l < p.n_levels; ++l)
                for (std::size_t k = 0; k < p.n_points; ++k)
                    for (std::size_t xy = 0; xy < 2; ++xy) {
                        const std::size_t idx = ((m * p.n_levels + l) * p.n_points + k) * 2 + xy;
                        margin = std::min(margin, grid_distance(static_cast<double>(refs[(n * p.n_levels + l) * 2 + xy]) +
                                                                static_cast<double>(off[n * width + idx])));
                    }
    return margin;
}

template <typename T>
double plan_margin(const attn::CrossAttentionPlan<T>& plan, const Tensor<T>& query,
                   const attn::DeformableAttnParams<T>& p) {
    dc::NoGradGuard guard;
    const auto off = p.offsets(query);
    const std::size_t width = off.dim(1);
    double margin = 1e9;
    for (const auto& view : plan.views)
        for (std::size_t r = 0; r < view.cells.size(); ++r)
            for (std::size_t m = 0; m < p.n_heads; ++m)
                for (std::size_t l = 0; l < p.n_levels; ++l)
                    for (std::size_t k = 0; k < p.n_points; ++k)
                        for (std::size_t xy = 0; xy < 2; ++xy) {
                            const std::size_t idx = ((m * p.n_levels + l) * p.n_points + k) * 2 + xy;
                            margin = std::min(margin, grid_distance(static_cast<double>(view.refs[(r * p.n_levels + l) * 2 + xy]) +
                                                                    static_cast<double>(off[view.cells[r] * width + idx])));
                        }
    return margin;
}

// Temporal samples sit at integer cells plus the predicted offsets.
template <typename T>
double temporal_margin(const Tensor<T>& query, const attn::TemporalAttnParams<T>& p) {
    dc::NoGradGuard guard;
    const auto off = p.offsets(query);
    double margin = 1e9;
    for (T v : off.data()) margin = std::min(margin, grid_distance(static_cast<double>(v)));
    return margin;
}

// Smallest |pre-activation| over the relu units of a conv head's upsampling
// blocks (eval mode), recomputed from the stored parameters.
template <typename T>
double relu_margin(const dc::ParamStore<T>& store, const std::string& name, const Tensor<T>& bev, std::size_t h,
                   std::size_t w) {
    dc::NoGradGuard guard;
    Tensor<T> x = dc::rows_to_chw(bev, h, w);
    double margin = 1e9;
    for (int b = 0; store.contains(name + ".up" + std::to_string(b) + ".weight"); ++b) {
        const std::string prefix = name + ".up" + std::to_string(b);
        const auto z = dc::conv3x3(dc::upsample2x(x), store.get(prefix + ".weight"), store.get(prefix + ".bias"));
        for (T v : z.data()) margin = std::min(margin, std::abs(static_cast<double>(v)));
        x = dc::relu(z);
    }
    return margin;
}

template <typename T>
class Runner {
public:
    Runner(std::vector<CheckResult>& out, const std::function<void(const CheckResult&)>& cb) : out_(out), cb_(cb) {}

    void operator()(const std::string& group, const std::string& name, const std::function<Tensor<T>()>& f,
                    std::vector<NamedParam<T>> inputs, std::size_t max_probes = 0) {
        dc::GradCheckOptions opt;
        opt.max_probes = max_probes;
        const auto t0 = std::chrono::steady_clock::now();
        CheckResult r{group, name, dc::grad_check<T>(f, std::move(inputs), opt), 0.0};
        r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        out_.push_back(r);
        if (cb_) cb_(out_.back());
    }

private:
    std::vector<CheckResult>& out_;
    const std::function<void(const CheckResult&)>& cb_;
};

template <typename T>
void diffcore_checks(Runner<T>& run, Rng& rng) {
    using namespace dc;
    auto a = uniform<T>({3, 4}, rng, -1, 1);
    auto b = uniform<T>({3, 4}, rng, -1, 1);
    Probe<T> p34({3, 4}, rng), p43({4, 3}, rng);
    run("diffcore", "add", [&] { return p34(add(a, b)); }, {{"a", a}, {"b", b}});
    run("diffcore", "sub", [&] { return p34(sub(a, b)); }, {{"a", a}, {"b", b}});
    run("diffcore", "mul", [&] { return p34(mul(a, b)); }, {{"a", a}, {"b", b}});
    run("diffcore", "scale", [&] { return p34(scale(a, T(2.5))); }, {{"a", a}});
    auto r = away_from_zero<T>({3, 4}, rng, 0.1, 1.0);
    run("diffcore", "relu", [&] { return p34(relu(r)); }, {{"x", r}});
    run("diffcore", "dropout", [&] {
            Rng mask_rng(17);
            return p34(dropout(a, 0.3, true, mask_rng));
        },
        {{"x", a}});
    run("diffcore", "reshape", [&] { return p43(reshape(a, {4, 3})); }, {{"a", a}});
    run("diffcore", "transpose2d", [&] { return p43(transpose2d(a)); }, {{"a", a}});
    run("diffcore", "sum", [&] { return sum(mul(a, a)); }, {{"a", a}});
    run("diffcore", "mean", [&] { return mean(mul(a, a)); }, {{"a", a}});

    auto x = uniform<T>({4, 8}, rng, -1, 1);
    auto w = uniform<T>({8, 3}, rng, -1, 1);
    auto bias = uniform<T>({3}, rng, -1, 1);
    Probe<T> p43b({4, 3}, rng);
    run("diffcore", "linear", [&] { return p43b(linear(x, w, bias)); }, {{"x", x}, {"w", w}, {"b", bias}});
    auto c = uniform<T>({4, 5}, rng, -1, 1);
    auto e = uniform<T>({5, 4}, rng, -1, 1);
    Probe<T> p35({3, 5}, rng);
    run("diffcore", "matmul", [&] { return p35(matmul(a, c)); }, {{"a", a}, {"b", c}});
    run("diffcore", "matmul_nt", [&] { return p35(matmul_nt(a, e)); }, {{"a", a}, {"b", e}});
    Probe<T> p32({3, 2}, rng), p38({3, 8}, rng), p64({6, 4}, rng);
    run("diffcore", "slice_cols", [&] { return p32(slice_cols(a, 1, 3)); }, {{"a", a}});
    run("diffcore", "concat_cols", [&] { return p38(concat_cols<T>({a, b})); }, {{"a", a}, {"b", b}});
    run("diffcore", "concat_rows", [&] { return p64(concat_rows<T>({a, b})); }, {{"a", a}, {"b", b}});

    auto s = uniform<T>({3, 4, 5}, rng, -3, 3);
    Probe<T> p345({3, 4, 5}, rng);
    for (std::size_t axis = 0; axis < 3; ++axis)
        run("diffcore", "softmax axis " + std::to_string(axis), [&] { return p345(softmax(s, axis)); }, {{"x", s}});

    auto gamma = uniform<T>({4}, rng, 0.5, 1.5);
    auto beta = uniform<T>({4}, rng, -0.5, 0.5);
    run("diffcore", "layer_norm", [&] { return p34(layer_norm(a, gamma, beta)); },
        {{"x", a}, {"gamma", gamma}, {"beta", beta}});

    auto img = uniform<T>({2, 4, 4}, rng, -0.5, 0.5);
    auto k3 = uniform<T>({2, 2, 3, 3}, rng, -0.5, 0.5);
    auto kb = uniform<T>({2}, rng, -1, 1);
    Probe<T> p244({2, 4, 4}, rng), p222({2, 2, 2}, rng);
    run("diffcore", "conv3x3", [&] { return p244(conv3x3(img, k3, kb)); }, {{"x", img}, {"w", k3}, {"b", kb}});
    run("diffcore", "conv2d stride 2", [&] { return p222(conv2d(img, k3, kb, 2, 1)); },
        {{"x", img}, {"w", k3}, {"b", kb}});

    auto small = uniform<T>({2, 3, 4}, rng, -1, 1);
    Probe<T> p268({2, 6, 8}, rng);
    run("diffcore", "upsample2x", [&] { return p268(upsample2x(small)); }, {{"x", small}});

    Probe<T> p4234({4, 2, 3}, rng);
    auto rows = uniform<T>({6, 4}, rng, -1, 1);
    run("diffcore", "rows_to_chw", [&] { return p4234(rows_to_chw(rows, 2, 3)); }, {{"x", rows}});
    Probe<T> p64b({6, 4}, rng);
    auto chw = uniform<T>({4, 2, 3}, rng, -1, 1);
    run("diffcore", "chw_to_rows", [&] { return p64b(chw_to_rows(chw)); }, {{"x", chw}});

    auto feature = uniform<T>({3, 5, 6}, rng, -1, 1);
    std::vector<T> pts;
    for (int i = 0; i < 10; ++i) {
        pts.push_back(static_cast<T>(off_grid(rng, -0.8, 5.8)));
        pts.push_back(static_cast<T>(off_grid(rng, -0.8, 4.8)));
    }
    auto pt = Tensor<T>({10, 2}, pts, true);
    Probe<T> p103({10, 3}, rng);
    run("diffcore", "bilinear_sample", [&] { return p103(bilinear_sample(feature, pt)); },
        {{"feature", feature}, {"pts", pt}});

    const std::vector<std::size_t> pick{2, 0, 2};
    Probe<T> p3x4({3, 4}, rng);
    run("diffcore", "gather_rows", [&] { return p3x4(gather_rows(a, std::span<const std::size_t>(pick))); }, {{"x", a}});
    const std::vector<T> sw{T(0.5), T(-1.5), T(2.0)};
    Probe<T> p54({5, 4}, rng);
    run("diffcore", "scatter_add_rows",
        [&] { return p54(scatter_add_rows(a, std::span<const std::size_t>(pick), std::span<const T>(sw), 5)); },
        {{"src", a}});
    const std::vector<std::uint8_t> mask{1, 0, 1};
    run("diffcore", "blend_rows", [&] { return p34(blend_rows(a, b, std::span<const std::uint8_t>(mask))); },
        {{"a", a}, {"b", b}});

    // Two levels, 3 queries, 2 heads, 2 points.
    auto l0 = uniform<T>({4, 5, 6}, rng, -1, 1);
    auto l1 = uniform<T>({4, 3, 3}, rng, -1, 1);
    std::vector<T> loc;
    for (int i = 0; i < 3 * 2 * 2 * 2; ++i) {
        loc.push_back(static_cast<T>(off_grid(rng, -0.7, 4.7)));
        loc.push_back(static_cast<T>(off_grid(rng, -0.7, 2.7)));
    }
    auto locations = Tensor<T>({3, 2, 2, 2, 2}, loc, true);
    auto weights = uniform<T>({3, 2, 2, 2}, rng, 0, 1);
    Probe<T> p3x4b({3, 4}, rng);
    run("diffcore", "deformable_sample",
        [&] { return p3x4b(deformable_sample<T>({l0, l1}, locations, weights)); },
        {{"level0", l0}, {"level1", l1}, {"locations", locations}, {"weights", weights}});
}

template <typename T>
void attention_checks(Runner<T>& run, Rng& rng) {
    using namespace attn;
    {
        dc::ParamStore<T> store;
        DeformableAttnParams<T> p(store, "a", 8, 2, 2, 2, rng);
        const std::vector<T> refs{T(2.3), T(3.1), T(1.2), T(1.4), T(4.6), T(0.7),
                                  T(2.1), T(0.3), T(0.2), T(4.4), T(0.6), T(1.8)};
        Tensor<T> q;
        do {
            randomize(p, rng);
            q = uniform<T>({3, 8}, rng, -1, 1);
        } while (deformable_margin(q, std::span<const T>(refs), p) < kMargin);
        std::vector<Tensor<T>> levels{uniform<T>({8, 6, 7}, rng, -1, 1), uniform<T>({8, 3, 4}, rng, -1, 1)};
        Probe<T> probe({3, 8}, rng);
        run("attention", "deformable_attention",
            [&] { return probe(deformable_attention(q, std::span<const T>(refs), levels, p)); },
            {{"query", q},
             {"level0", levels[0]},
             {"level1", levels[1]},
             {"offsets", p.offsets.weight},
             {"weights", p.weights.weight},
             {"output", p.output.weight}});
    }
    {
        static const auto rig = synth::default_rig({64, 95.0});
        const bev::BevGrid grid(3, 3, 1.6, {0.0, 1.0});
        const bev::ReferencePointTable table(grid, rig);
        const std::vector<int> strides{4, 8, 16};
        const auto plan = make_cross_attention_plan<T>(table, strides);
        dc::ParamStore<T> store;
        DeformableAttnParams<T> p(store, "a", 4, 2, 3, 1, rng);
        Tensor<T> q;
        do {
            randomize(p, rng);
            q = uniform<T>({9, 4}, rng, -1, 1);
        } while (plan_margin(plan, q, p) < kMargin);
        std::vector<FeaturePyramid<T>> pyramids;
        for (std::size_t c = 0; c < rig.size(); ++c) {
            FeaturePyramid<T> pyr;
            pyr.strides = strides;
            for (int s : strides) {
                const std::size_t side = static_cast<std::size_t>(64 / s);
                pyr.levels.push_back(uniform<T>({4, side, side}, rng, -1, 1));
            }
            pyramids.push_back(std::move(pyr));
        }
        Probe<T> probe({9, 4}, rng);
        run("attention", "da_sca",
            [&] { return probe(da_sca(q, pyramids, plan, p)); },
            {{"query", q},
             {"front.level0", pyramids[0].levels[0]},
             {"left.level1", pyramids[1].levels[1]},
             {"rear.level2", pyramids[2].levels[2]},
             {"right.level0", pyramids[3].levels[0]},
             {"offsets", p.offsets.weight},
             {"weights", p.weights.weight},
             {"output", p.output.weight}},
            64);
    }
    {
        dc::ParamStore<T> store;
        TemporalAttnParams<T> p(store, "t", 8, 2, 2, rng);
        Tensor<T> q;
        do {
            randomize(p.offsets, rng, 0.6, 2.0);
            randomize(p.weights, rng, 1.0, 1.0);
            randomize(p.output, rng, 0.5, 0.5);
            q = uniform<T>({12, 8}, rng, -1, 1);
        } while (temporal_margin(q, p) < kMargin);
        auto hist = uniform<T>({12, 8}, rng, -1, 1);
        std::vector<std::uint8_t> valid(12, 1);
        valid[3] = valid[7] = 0;
        Probe<T> probe({12, 8}, rng);
        run("attention", "temporal_self_attention",
            [&] { return probe(temporal_self_attention(q, hist, std::span<const std::uint8_t>(valid), 3, 4, p)); },
            {{"queries", q},
             {"history", hist},
             {"offsets", p.offsets.weight},
             {"weights", p.weights.weight},
             {"output", p.output.weight}});
    }
    {
        dc::ParamStore<T> store;
        MultiHeadAttnParams<T> p(store, "m", 8, 2, rng);
        auto q = uniform<T>({3, 8}, rng, -1, 1);
        auto k = uniform<T>({4, 8}, rng, -1, 1);
        auto v = uniform<T>({4, 8}, rng, -1, 1);
        Probe<T> probe({3, 8}, rng), sprobe({3, 4}, rng);
        run("attention", "multi_head_attention",
            [&] {
                const auto r = multi_head_attention(q, k, v, p);
                return dc::add(probe(r.output), sprobe(r.mean_scores));
            },
            {{"q", q}, {"k", k}, {"v", v}, {"wq", p.q.weight}, {"wk", p.k.weight}, {"wv", p.v.weight}, {"wo", p.o.weight}});
    }
}

template <typename T>
Tensor<T> deep_ce(const heads::HeadOutput<T>& o, const Image8& target) {
    Tensor<T> l = metrics::cross_entropy(o.auxiliary[0], target);
    for (std::size_t k = 1; k < o.auxiliary.size(); ++k) l = dc::add(l, metrics::cross_entropy(o.auxiliary[k], target));
    return l;
}

template <typename T>
void head_checks(Runner<T>& run, Rng& rng) {
    using heads::Task;
    {
        dc::ParamStore<T> single_store, multi_store;
        heads::AttentionHead<T> single(single_store, "h", Task::Height, 8, 2, 3, rng);
        heads::AttentionHead<T> mh(multi_store, "height", Task::Height, 8, 2, 3, rng);
        heads::AttentionHead<T> ms(multi_store, "seg", Task::Segmentation, 8, 2, 3, rng);
        randomize(single_store, rng, 0.5);
        randomize(multi_store, rng, 0.5);
        auto bev = uniform<T>({6, 8}, rng, -1, 1);
        const auto th = random_labels(3, 2, 3, rng);
        const auto ts = random_labels(3, 2, 5, rng);
        auto inputs = single_store.params();
        inputs.push_back({"bev", bev});
        run("heads", "attention single-task", [&] { return deep_ce(single(bev, 2, 3), th); }, inputs);
        auto minputs = multi_store.params();
        minputs.push_back({"bev", bev});
        run("heads", "attention multitask",
            [&] { return dc::add(deep_ce(mh(bev, 2, 3), th), deep_ce(ms(bev, 2, 3), ts)); }, minputs);
    }
    {
        heads::ConvHeadConfig config;
        config.channels = {4, 4, 3};
        dc::ParamStore<T> single_store, multi_store;
        heads::ConvHead<T> single(single_store, "c", {Task::Height}, 6, config, rng);
        heads::ConvHead<T> multi(multi_store, "m", {Task::Height, Task::Segmentation}, 6, config, rng);
        Tensor<T> bev;
        do {
            randomize_biases(single_store, rng, 0.3);
            randomize_biases(multi_store, rng, 0.3);
            bev = uniform<T>({2, 6}, rng, -1, 1);
        } while (std::min(relu_margin(single_store, "c", bev, 2, 1), relu_margin(multi_store, "m", bev, 2, 1)) < kMargin);
        const auto th = random_labels(8, 16, 3, rng);
        const auto ts = random_labels(8, 16, 5, rng);
        auto inputs = single_store.params();
        inputs.push_back({"bev", bev});
        run("heads", "conv single-task",
            [&] {
                Rng r(0);
                return metrics::cross_entropy(single(bev, 2, 1, false, r)[0].primary, th);
            },
            inputs);
        auto minputs = multi_store.params();
        minputs.push_back({"bev", bev});
        run("heads", "conv multitask",
            [&] {
                Rng r(0);
                const auto o = multi(bev, 2, 1, false, r);
                return dc::add(metrics::cross_entropy(o[0].primary, th), metrics::cross_entropy(o[1].primary, ts));
            },
            minputs);
    }
}

template <typename T>
void loss_checks(Runner<T>& run, Rng& rng) {
    const auto target = random_labels(5, 4, 5, rng);
    auto logits = uniform<T>({5, 4, 5}, rng, -2, 2);
    run("losses", "cross_entropy", [&] { return metrics::cross_entropy(logits, target); }, {{"logits", logits}});
    run("losses", "focal gamma 2", [&] { return metrics::focal_loss(logits, target, 2.0); }, {{"logits", logits}});
    run("losses", "focal gamma 0.5", [&] { return metrics::focal_loss(logits, target, 0.5); }, {{"logits", logits}});
}

}  // namespace

template <typename T>
std::vector<CheckResult> gradient_suite(std::uint64_t seed, const std::function<void(const CheckResult&)>& on_result) {
    std::vector<CheckResult> out;
    Runner<T> run(out, on_result);
    Rng rng(seed);
    diffcore_checks(run, rng);
    attention_checks(run, rng);
    head_checks(run, rng);
    loss_checks(run, rng);
    return out;
}

template std::vector<CheckResult> gradient_suite<float>(std::uint64_t, const std::function<void(const CheckResult&)>&);
template std::vector<CheckResult> gradient_suite<double>(std::uint64_t, const std::function<void(const CheckResult&)>&);

}  // namespace f2bev::verify
