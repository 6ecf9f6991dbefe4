#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "f2bev/heads.hpp"
#include "f2bev/metrics.hpp"
#include "unit/test_util.hpp"

#include <algorithm>

using namespace f2bev;
using namespace f2bev::heads;
using dc::Rng;
using dc::Tensor;
using testutil::random_tensor;

namespace {

template <typename T>
bool same(const Tensor<T>& a, const Tensor<T>& b) {
    return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

Image8 random_labels(std::size_t w, std::size_t h, std::size_t classes, Rng& rng) {
    Image8 img(static_cast<int>(w), static_cast<int>(h), 1);
    std::uniform_int_distribution<int> u(0, static_cast<int>(classes) - 1);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(u(rng));
    return img;
}

template <typename T>
std::vector<dc::NamedParam<T>> params_with(const dc::ParamStore<T>& store, const std::string& prefix) {
    std::vector<dc::NamedParam<T>> out;
    for (const auto& p : store.params())
        if (p.name.rfind(prefix, 0) == 0) out.push_back(p);
    return out;
}

template <typename T>
bool has_nonzero_grad(const Tensor<T>& t) {
    if (!t.has_grad()) return false;
    return std::any_of(t.grad().begin(), t.grad().end(), [](T g) { return g != T(0); });
}

template <typename T>
void expect_grads(const std::function<Tensor<T>()>& f, std::vector<dc::NamedParam<T>> inputs) {
    dc::GradCheckOptions opt;
    opt.max_probes = 12;
    const auto report = dc::grad_check<T>(f, std::move(inputs), opt);
    for (const auto& e : report.entries) {
        INFO(e.name << " err " << e.max_error << " analytic " << e.analytic << " numeric " << e.numeric);
        CHECK(e.max_error <= report.tolerance);
    }
}

}  // namespace

TEST_CASE("task names and class counts") {
    CHECK(n_classes(Task::Height) == 3);
    CHECK(n_classes(Task::Segmentation) == 5);
    CHECK(parse_task(to_string(Task::Segmentation)) == Task::Segmentation);
    CHECK(parse_task("height") == Task::Height);
    CHECK_THROWS_AS(parse_task("depth"), ParseError);
}

TEST_CASE("attention head shapes and deep supervision outputs") {
    Rng rng(1);
    dc::ParamStore<float> store;
    AttentionHead<float> head(store, "h", Task::Height, 16, 4, 3, rng);
    const auto bev = random_tensor<float>({5 * 6, 16}, rng, -1, 1, false);
    const auto out = head(bev, 5, 6);
    CHECK(out.task == Task::Height);
    CHECK(out.primary.shape() == dc::Shape{3, 5, 6});
    REQUIRE(out.auxiliary.size() == 3);
    for (const auto& a : out.auxiliary) CHECK(a.shape() == dc::Shape{3, 5, 6});
    CHECK(same(out.primary, out.auxiliary.back()));
    const auto prob = dc::softmax(out.primary, 0);
    for (std::size_t i = 0; i < 30; ++i) {
        double s = 0.0;
        for (std::size_t c = 0; c < 3; ++c) s += prob[c * 30 + i];
        CHECK(std::abs(s - 1.0) < 1e-6);
    }
    CHECK_THROWS_AS(head(bev, 5, 5), ShapeError);
    AttentionHead<float> seg(store, "s", Task::Segmentation, 16, 4, 3, rng);
    CHECK(seg(bev, 5, 6).primary.shape() == dc::Shape{5, 5, 6});
}

TEST_CASE("replacing an auxiliary map by the one-hot target lowers the loss") {
    Rng rng(2);
    dc::ParamStore<double> store;
    AttentionHead<double> head(store, "h", Task::Segmentation, 16, 4, 3, rng);
    const auto bev = random_tensor<double>({16, 16}, rng, -1, 1, false);
    const auto out = head(bev, 4, 4);
    const auto target = random_labels(4, 4, 5, rng);
    auto total = [&](const std::vector<Tensor<double>>& aux) {
        double s = 0.0;
        for (const auto& a : aux) s += metrics::cross_entropy(a, target).item();
        return s;
    };
    std::vector<double> onehot(5 * 16, 0.0);
    for (std::size_t i = 0; i < 16; ++i) onehot[target.pixels[i] * 16 + i] = 1.0;
    const double base = total(out.auxiliary);
    for (std::size_t k = 0; k < out.auxiliary.size(); ++k) {
        auto aux = out.auxiliary;
        aux[k] = Tensor<double>({5, 4, 4}, onehot);
        CHECK(total(aux) < base);
    }
}

TEST_CASE("conv head resolution and dropout") {
    Rng rng(3);
    dc::ParamStore<float> store;
    ConvHead<float> head(store, "c", {Task::Segmentation}, 16, {}, rng);
    const auto bev = random_tensor<float>({50 * 50, 16}, rng, -1, 1, false);
    Rng r1(9), r2(10);
    const auto a = head(bev, 50, 50, false, r1);
    const auto b = head(bev, 50, 50, false, r2);
    REQUIRE(a.size() == 1);
    CHECK(a[0].primary.shape() == dc::Shape{5, 400, 400});
    CHECK(a[0].auxiliary.empty());
    CHECK(same(a[0].primary, b[0].primary));
    const auto small = random_tensor<float>({4 * 3, 16}, rng, -1, 1, false);
    Rng r3(1), r4(2);
    const auto t1 = head(small, 4, 3, true, r3);
    const auto t2 = head(small, 4, 3, true, r4);
    CHECK(t1[0].primary.shape() == dc::Shape{5, 32, 24});
    CHECK_FALSE(same(t1[0].primary, t2[0].primary));
}

TEST_CASE("conv head shares its trunk between tasks") {
    Rng rng(4);
    dc::ParamStore<double> multi;
    ConvHead<double> head(multi, "c", {Task::Height, Task::Segmentation}, 16, {}, rng);
    dc::ParamStore<double> h_only, s_only;
    ConvHead<double> hh(h_only, "c", {Task::Height}, 16, {}, rng);
    ConvHead<double> sh(s_only, "c", {Task::Segmentation}, 16, {}, rng);
    CHECK(multi.total_elements() < h_only.total_elements() + s_only.total_elements());

    const auto bev = random_tensor<double>({3 * 3, 16}, rng, -1, 1, false);
    const auto outs = head(bev, 3, 3, false, rng);
    REQUIRE(outs.size() == 2);
    CHECK(outs[0].primary.shape() == dc::Shape{3, 24, 24});
    CHECK(outs[1].primary.shape() == dc::Shape{5, 24, 24});
    metrics::cross_entropy(outs[0].primary, random_labels(24, 24, 3, rng)).backward();
    CHECK(has_nonzero_grad(multi.get("c.up0.weight")));
    CHECK(has_nonzero_grad(multi.get("c.predict_height.weight")));
    CHECK_FALSE(has_nonzero_grad(multi.get("c.predict_segmentation.weight")));
}

TEST_CASE("attention heads for two tasks are isolated") {
    Rng rng(5);
    dc::ParamStore<double> store;
    AttentionHead<double> height(store, "height", Task::Height, 16, 4, 3, rng);
    AttentionHead<double> seg(store, "seg", Task::Segmentation, 16, 4, 3, rng);
    auto bev = random_tensor<double>({12, 16}, rng, -1, 1);
    const auto h0 = height(bev, 3, 4);
    auto q = store.get("seg.class_queries");
    for (auto& v : q.data()) v = 0.0;
    const auto h1 = height(bev, 3, 4);
    CHECK(same(h0.primary, h1.primary));

    testutil::randomize(store, rng, 0.5);
    const auto ho = height(bev, 3, 4);
    const auto so = seg(bev, 3, 4);
    CHECK(ho.primary.shape() == dc::Shape{3, 3, 4});
    CHECK(so.primary.shape() == dc::Shape{5, 3, 4});
    Tensor<double> loss = metrics::cross_entropy(ho.primary, random_labels(4, 3, 3, rng));
    loss = dc::add(loss, metrics::cross_entropy(so.primary, random_labels(4, 3, 5, rng)));
    loss.backward();
    CHECK(has_nonzero_grad(store.get("height.class_queries")));
    CHECK(has_nonzero_grad(store.get("seg.class_queries")));
    CHECK(has_nonzero_grad(store.get("height.mha0.k.weight")));
    CHECK(has_nonzero_grad(store.get("seg.mha2.q.weight")));
}

TEST_CASE_TEMPLATE("attention head gradients", T, float, double) {
    Rng rng(6);
    dc::ParamStore<T> store;
    AttentionHead<T> height(store, "height", Task::Height, 8, 2, 3, rng);
    AttentionHead<T> seg(store, "seg", Task::Segmentation, 8, 2, 3, rng);
    testutil::randomize(store, rng, 0.5);
    auto bev = random_tensor<T>({6, 8}, rng, -1, 1);
    const auto th = random_labels(3, 2, 3, rng);
    const auto ts = random_labels(3, 2, 5, rng);
    auto single = [&] {
        const auto o = height(bev, 2, 3);
        Tensor<T> l = metrics::cross_entropy(o.auxiliary[0], th);
        for (std::size_t k = 1; k < o.auxiliary.size(); ++k) l = dc::add(l, metrics::cross_entropy(o.auxiliary[k], th));
        return l;
    };
    auto inputs = params_with(store, "height");
    inputs.push_back({"bev", bev});
    expect_grads<T>(single, inputs);
    auto multi = [&] {
        return dc::add(metrics::cross_entropy(height(bev, 2, 3).primary, th),
                       metrics::cross_entropy(seg(bev, 2, 3).primary, ts));
    };
    auto all = store.params();
    all.push_back({"bev", bev});
    expect_grads<T>(multi, all);
}

TEST_CASE_TEMPLATE("conv head gradients", T, float, double) {
    Rng rng(7);
    ConvHeadConfig config;
    config.channels = {4, 4, 3};
    dc::ParamStore<T> single_store;
    ConvHead<T> single(single_store, "c", {Task::Height}, 6, config, rng);
    dc::ParamStore<T> multi_store;
    ConvHead<T> multi(multi_store, "m", {Task::Height, Task::Segmentation}, 6, config, rng);
    auto bev = random_tensor<T>({2 * 2, 6}, rng, -1, 1);
    const auto th = random_labels(16, 16, 3, rng);
    const auto ts = random_labels(16, 16, 5, rng);
    auto f_single = [&] {
        Rng r(0);
        return metrics::cross_entropy(single(bev, 2, 2, false, r)[0].primary, th);
    };
    auto inputs = single_store.params();
    inputs.push_back({"bev", bev});
    expect_grads<T>(f_single, inputs);
    auto f_multi = [&] {
        Rng r(0);
        const auto o = multi(bev, 2, 2, false, r);
        return dc::add(metrics::cross_entropy(o[0].primary, th), metrics::cross_entropy(o[1].primary, ts));
    };
    auto minputs = multi_store.params();
    minputs.push_back({"bev", bev});
    expect_grads<T>(f_multi, minputs);
}
