#pragma once

#include "f2bev/params.hpp"
#include "f2bev/tensor.hpp"

#include <functional>
#include <string>
#include <vector>

namespace f2bev::dc {

struct GradCheckOptions {
    double eps = 0.0;        // 0 picks 1e-3 (float) or 1e-6 (double)
    double tolerance = 0.0;  // 0 picks 1e-3 (float) or 1e-6 (double)
    // Probe at most this many elements per input (evenly strided); 0 = all.
    std::size_t max_probes = 0;
};

struct GradCheckEntry {
    std::string name;
    double max_error = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_error = 0.0;
    double tolerance = 0.0;
    bool passed = false;
};

// Compares reverse-mode gradients of the scalar f() against central
// differences for every listed leaf tensor. The error per element is
// |analytic - numeric| / max(1, |analytic|, |numeric|), i.e. relative for
// large gradients and absolute for small ones.
template <typename T>
GradCheckReport grad_check(const std::function<Tensor<T>()>& f, std::vector<NamedParam<T>> inputs,
                           GradCheckOptions options = {});

}  // namespace f2bev::dc
