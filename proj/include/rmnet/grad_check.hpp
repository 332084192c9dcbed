#pragma once

#include <functional>
#include <string>
#include <vector>

#include "rmnet/tensor.hpp"

namespace rmnet {

using DifferentiableFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::size_t worst_input = 0;
    Index worst_element = 0;
};

// Compares the reverse-mode gradient of <r, fn(inputs)> against central
// differences for every element of every input that requires a gradient.
// `r` is a fixed pseudo-random projection so non-scalar outputs are covered.
// Error per element is |analytic - numeric| / max(1, |analytic|).
GradCheckResult grad_check_detailed(const std::string& name, const DifferentiableFn& fn,
                                    std::vector<Tensor<double>> inputs, double epsilon = 1e-4);

inline double grad_check(const std::string& name, const DifferentiableFn& fn,
                         std::vector<Tensor<double>> inputs, double epsilon = 1e-4) {
    return grad_check_detailed(name, fn, std::move(inputs), epsilon).max_relative_error;
}

}  // namespace rmnet
