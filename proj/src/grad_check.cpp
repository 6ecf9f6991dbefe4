#include "f2bev/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace f2bev::dc {

template <typename T>
GradCheckReport grad_check(const std::function<Tensor<T>()>& f, std::vector<NamedParam<T>> inputs,
                           GradCheckOptions options) {
    constexpr bool single = std::is_same_v<T, float>;
    const double eps = options.eps > 0.0 ? options.eps : (single ? 1e-3 : 1e-6);
    GradCheckReport report;
    report.tolerance = options.tolerance > 0.0 ? options.tolerance : (single ? 1e-3 : 1e-6);

    for (auto& in : inputs) {
        if (!in.tensor.requires_grad()) {
            throw PreconditionError("grad_check: input '" + in.name + "' does not require grad");
        }
        in.tensor.zero_grad();
    }
    const Tensor<T> out = f();
    if (out.numel() != 1) throw ShapeError("grad_check: f must return a scalar");
    out.backward();

    for (auto& in : inputs) {
        GradCheckEntry entry;
        entry.name = in.name;
        const std::vector<T> analytic = in.tensor.has_grad()
                                            ? std::vector<T>(in.tensor.grad().begin(), in.tensor.grad().end())
                                            : std::vector<T>(in.tensor.numel(), T(0));
        auto values = in.tensor.data();
        const std::size_t n = values.size();
        const std::size_t stride =
            (options.max_probes == 0 || n <= options.max_probes) ? 1 : (n + options.max_probes - 1) / options.max_probes;
        for (std::size_t i = 0; i < n; i += stride) {
            const T original = values[i];
            double plus = 0.0;
            double minus = 0.0;
            {
                NoGradGuard guard;
                values[i] = static_cast<T>(original + eps);
                const double step_plus = static_cast<double>(values[i]) - original;
                plus = f().item();
                values[i] = static_cast<T>(original - eps);
                const double step_minus = original - static_cast<double>(values[i]);
                minus = f().item();
                values[i] = original;
                // Use the representable step actually taken.
                const double numeric = (plus - minus) / (step_plus + step_minus);
                const double a = analytic[i];
                const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
                if (err >= entry.max_error) {
                    entry.max_error = err;
                    entry.worst_index = i;
                    entry.analytic = a;
                    entry.numeric = numeric;
                }
            }
        }
        report.max_error = std::max(report.max_error, entry.max_error);
        report.entries.push_back(std::move(entry));
    }
    for (auto& in : inputs) in.tensor.zero_grad();
    report.passed = report.max_error <= report.tolerance;
    return report;
}

template GradCheckReport grad_check<float>(const std::function<Tensor<float>()>&,
                                           std::vector<NamedParam<float>>, GradCheckOptions);
template GradCheckReport grad_check<double>(const std::function<Tensor<double>()>&,
                                            std::vector<NamedParam<double>>, GradCheckOptions);

}  // namespace f2bev::dc
