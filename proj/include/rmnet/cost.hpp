#pragma once

#include <string>
#include <vector>

#include "rmnet/model.hpp"

namespace rmnet {

struct LayerCost {
    std::string path;
    LayerKind kind = LayerKind::conv;
    Index params = 0;  // weights plus BN affine terms
    Index macs = 0;
    Index out_height = 1;
    Index out_width = 1;
};

struct CostReport {
    Index input_height = 0;
    Index input_width = 0;
    std::vector<LayerCost> layers;
    Index total_params = 0;
    Index total_flops = 0;  // 2 x MACs; BN, bias and activation work excluded
};

// Walks the layer list of a built model, tracking spatial extents.
CostReport cost_report(const std::vector<LayerInfo>& layers, Index input_height, Index input_width);

template <typename S>
Index count_flops(Model<S>& model, Index input_height, Index input_width) {
    return cost_report(model.layers(), input_height, input_width).total_flops;
}

// Closed-form sums evaluated straight from the spec, with no model or layer list.
Index closed_form_params(const ModelSpec& spec);
Index closed_form_flops(const ModelSpec& spec, Index input_height, Index input_width);

}  // namespace rmnet
