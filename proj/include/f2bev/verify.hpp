#pragma once

#include "f2bev/grad_check.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace f2bev::verify {

struct CheckResult {
    std::string group;  // diffcore, attention, heads, losses
    std::string name;
    dc::GradCheckReport report;
    double seconds = 0.0;
};

// Gradient checks over small seeded instances of every differentiable
// primitive, the attention kernels, the four head variants and both losses.
// Sampling-based cases are drawn so that no bilinear sample sits within
// probing distance of a texel line. on_result, when set, is called after
// each check.
template <typename T>
std::vector<CheckResult> gradient_suite(std::uint64_t seed = 1,
                                        const std::function<void(const CheckResult&)>& on_result = {});

}  // namespace f2bev::verify
