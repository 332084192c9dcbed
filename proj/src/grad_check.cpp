#include "rmnet/grad_check.hpp"

#include <cmath>

#include "rmnet/random.hpp"

namespace rmnet {

namespace {

double projected(const Tensor<double>& out, const Buffer<double>& weights, const std::string& name) {
    if (!out.data().allFinite()) throw NumericError("grad_check: non-finite output from op '" + name + "'");
    return (out.data() * weights).sum();
}

}  // namespace

GradCheckResult grad_check_detailed(const std::string& name, const DifferentiableFn& fn,
                                    std::vector<Tensor<double>> inputs, double epsilon) {
    for (auto& in : inputs) in.zero_grad();
    Tensor<double> out = fn(inputs);
    Rng rng(0x5eed);
    Buffer<double> weights(out.size());
    for (Index i = 0; i < out.size(); ++i) weights[i] = rng.uniform(-1.0, 1.0);
    projected(out, weights, name);
    if (out.requires_grad()) out.backward(weights);

    GradCheckResult result;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        Tensor<double>& in = inputs[t];
        if (!in.requires_grad()) continue;
        const Buffer<double> analytic = in.has_grad() ? in.grad() : Buffer<double>::Zero(in.size());
        if (!analytic.allFinite()) throw NumericError("grad_check: non-finite gradient from op '" + name + "'");
        NoGradGuard no_grad;
        for (Index e = 0; e < in.size(); ++e) {
            const double saved = in.data()[e];
            in.data()[e] = saved + epsilon;
            const double plus = projected(fn(inputs), weights, name);
            in.data()[e] = saved - epsilon;
            const double minus = projected(fn(inputs), weights, name);
            in.data()[e] = saved;
            const double numeric = (plus - minus) / (2.0 * epsilon);
            const double err = std::abs(analytic[e] - numeric) / std::max(1.0, std::abs(analytic[e]));
            if (err > result.max_relative_error) result = {err, t, e};
        }
    }
    return result;
}

}  // namespace rmnet
