#pragma once

#include <span>
#include <string>
#include <vector>

#include "rmnet/model.hpp"

namespace rmnet {

inline constexpr double kRatioFloor = 1e-12;
inline constexpr double kNoisyRatio = 1e3;

/// max |w| / max(min |w|, 1e-12) over the weights of one filter.
double filter_ratio(std::span<const double> weights);

// Ratios of every output filter of one layer, in filter order.
struct LayerRatios {
    std::string path;
    LayerKind kind = LayerKind::conv;
    std::vector<double> ratios;
    double median = 1.0;
    double p90 = 1.0;
    double max = 1.0;
    std::size_t noisy = 0;  // ratios above the report threshold
};

struct FilterRatioReport {
    double threshold = kNoisyRatio;
    std::vector<LayerRatios> layers;  // walker order, one entry per weight-bearing layer
    std::size_t filters = 0;
    std::size_t noisy = 0;
    double median = 1.0;
    double p90 = 1.0;
    double max = 1.0;
};

/// Linear-interpolated quantile of unsorted values, q in [0, 1].
double quantile(std::vector<double> values, double q);

/// One entry per layer of `model.layers()`. A filter is an output channel: a
/// row of a conv or depthwise kernel, a column of a head matrix.
template <typename S>
FilterRatioReport filter_ratio_report(Model<S>& model, double threshold = kNoisyRatio);

// One layer of two runs, filters ordered by decreasing ratio in the second run.
struct LayerRatioPair {
    std::string path;
    std::vector<std::size_t> order;  // filter indices
    std::vector<double> first;       // ratios in `order`
    std::vector<double> second;
    std::size_t noisy_first = 0;
    std::size_t noisy_second = 0;
};

struct RatioComparison {
    std::string first_label;
    std::string second_label;
    std::vector<LayerRatioPair> layers;
    std::size_t filters = 0;
    std::size_t noisy_first = 0;
    std::size_t noisy_second = 0;
};

/// Pairs two reports layer by layer; raises DimensionError when the layer
/// lists or filter counts differ.
RatioComparison compare_ratio_reports(const FilterRatioReport& first, const FilterRatioReport& second,
                                      std::string first_label = "elu", std::string second_label = "relu");

}  // namespace rmnet
