#include "rmnet/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "rmnet/errors.hpp"

namespace rmnet {

double filter_ratio(std::span<const double> weights) {
    if (weights.empty()) throw DimensionError("filter ratio of an empty filter");
    double lo = std::abs(weights[0]);
    double hi = lo;
    for (double w : weights) {
        const double a = std::abs(w);
        lo = std::min(lo, a);
        hi = std::max(hi, a);
    }
    if (hi == 0.0) return 1.0;  // an all-zero filter has no spread
    return hi / std::max(lo, kRatioFloor);
}

double quantile(std::vector<double> values, double q) {
    if (values.empty()) throw DimensionError("quantile of an empty set");
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto below = static_cast<std::size_t>(std::floor(pos));
    const std::size_t above = std::min(below + 1, values.size() - 1);
    return values[below] + (pos - static_cast<double>(below)) * (values[above] - values[below]);
}

namespace {

void summarize(const std::vector<double>& ratios, double threshold, double& median, double& p90, double& max,
               std::size_t& noisy) {
    median = quantile(ratios, 0.5);
    p90 = quantile(ratios, 0.9);
    max = *std::max_element(ratios.begin(), ratios.end());
    noisy = static_cast<std::size_t>(std::count_if(ratios.begin(), ratios.end(), [&](double r) { return r > threshold; }));
}

}  // namespace

template <typename S>
FilterRatioReport filter_ratio_report(Model<S>& model, double threshold) {
    FilterRatioReport report;
    report.threshold = threshold;
    const auto infos = model.layers();
    const auto weights = model.layer_weights();
    if (infos.size() != weights.size()) throw ContractError("layer walker and weight list disagree");
    std::vector<double> all;
    std::vector<double> filter;
    for (std::size_t l = 0; l < infos.size(); ++l) {
        const Tensor<S>& w = weights[l].tensor;
        if (weights[l].path != infos[l].path) {
            throw ContractError("weight " + weights[l].path + " out of step with layer " + infos[l].path);
        }
        LayerRatios layer;
        layer.path = infos[l].path;
        layer.kind = infos[l].kind;
        const bool columns = w.rank() == 2;
        const Index filters = columns ? w.dim(1) : w.dim(0);
        const Index taps = w.size() / filters;
        filter.resize(static_cast<std::size_t>(taps));
        for (Index f = 0; f < filters; ++f) {
            for (Index t = 0; t < taps; ++t) {
                const Index at = columns ? t * filters + f : f * taps + t;
                filter[static_cast<std::size_t>(t)] = static_cast<double>(w.data()[at]);
            }
            layer.ratios.push_back(filter_ratio(filter));
        }
        summarize(layer.ratios, threshold, layer.median, layer.p90, layer.max, layer.noisy);
        all.insert(all.end(), layer.ratios.begin(), layer.ratios.end());
        report.layers.push_back(std::move(layer));
    }
    report.filters = all.size();
    summarize(all, threshold, report.median, report.p90, report.max, report.noisy);
    return report;
}

RatioComparison compare_ratio_reports(const FilterRatioReport& first, const FilterRatioReport& second,
                                      std::string first_label, std::string second_label) {
    if (first.layers.size() != second.layers.size()) {
        throw DimensionError(fmt::format("ratio reports cover {} and {} layers", first.layers.size(), second.layers.size()));
    }
    RatioComparison out;
    out.first_label = std::move(first_label);
    out.second_label = std::move(second_label);
    for (std::size_t l = 0; l < first.layers.size(); ++l) {
        const auto& a = first.layers[l];
        const auto& b = second.layers[l];
        if (a.path != b.path || a.ratios.size() != b.ratios.size()) {
            throw DimensionError("ratio reports disagree at layer " + a.path + " / " + b.path);
        }
        LayerRatioPair pair;
        pair.path = a.path;
        pair.order.resize(a.ratios.size());
        std::iota(pair.order.begin(), pair.order.end(), std::size_t{0});
        std::stable_sort(pair.order.begin(), pair.order.end(),
                         [&](std::size_t i, std::size_t j) { return b.ratios[i] > b.ratios[j]; });
        for (std::size_t i : pair.order) {
            pair.first.push_back(a.ratios[i]);
            pair.second.push_back(b.ratios[i]);
        }
        pair.noisy_first = a.noisy;
        pair.noisy_second = b.noisy;
        out.filters += a.ratios.size();
        out.noisy_first += a.noisy;
        out.noisy_second += b.noisy;
        out.layers.push_back(std::move(pair));
    }
    return out;
}

template FilterRatioReport filter_ratio_report(Model<float>&, double);
template FilterRatioReport filter_ratio_report(Model<double>&, double);

}  // namespace rmnet
