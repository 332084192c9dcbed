#include "rmnet/cost.hpp"

namespace rmnet {

CostReport cost_report(const std::vector<LayerInfo>& layers, Index input_height, Index input_width) {
    if (input_height < 1 || input_width < 1) throw ConfigError("cost: input dimensions must be positive");
    CostReport report;
    report.input_height = input_height;
    report.input_width = input_width;
    Index h = input_height;
    Index w = input_width;
    for (const auto& layer : layers) {
        LayerCost c;
        c.path = layer.path;
        c.kind = layer.kind;
        const Index k2 = layer.kernel * layer.kernel;
        const Index weights = layer.kind == LayerKind::depthwise ? layer.out_channels * k2
                                                                 : layer.in_channels * layer.out_channels * k2;
        c.params = weights + (layer.batch_norm ? 2 * layer.out_channels : 0);
        if (layer.kind == LayerKind::linear) {
            c.macs = weights;
        } else {
            h = window_output(h, layer.kernel, layer.stride, layer.kernel / 2);
            w = window_output(w, layer.kernel, layer.stride, layer.kernel / 2);
            c.out_height = h;
            c.out_width = w;
            c.macs = h * w * weights;
        }
        report.total_params += c.params;
        report.total_flops += 2 * c.macs;
        report.layers.push_back(std::move(c));
    }
    return report;
}

Index closed_form_params(const ModelSpec& spec) {
    const auto& bb = spec.backbone;
    const Index bn = bb.use_batch_norm ? 2 : 0;
    Index total = 9 * bb.input_channels * bb.stem_channels + bn * bb.stem_channels;
    Index in = bb.stem_channels;
    for (const auto& stage : bb.stages) {
        const Index out = stage.channels;
        const Index mid = out / 4;
        const Index block = in * mid + 9 * mid + mid * out + bn * (mid + mid + out);
        // only the first block of a stage can change width
        const Index rest = out * mid + 9 * mid + mid * out + bn * (mid + mid + out);
        total += block + (stage.blocks - 1) * rest;
        in = out;
    }
    const auto& h = spec.head;
    total += h.input_channels * h.expansion_channels + h.expansion_channels * h.embedding_dim +
             h.embedding_dim * h.embedding_dim;
    return total;
}

Index closed_form_flops(const ModelSpec& spec, Index input_height, Index input_width) {
    const auto& bb = spec.backbone;
    auto down = [](Index x, Index stride) { return (x - 1) / stride + 1; };  // 3x3, pad 1
    Index h = down(input_height, bb.stem_stride);
    Index w = down(input_width, bb.stem_stride);
    Index macs = h * w * 9 * bb.input_channels * bb.stem_channels;
    Index in = bb.stem_channels;
    for (const auto& stage : bb.stages) {
        const Index out = stage.channels;
        const Index mid = out / 4;
        for (int b = 0; b < stage.blocks; ++b) {
            const Index area_in = h * w;
            h = down(h, stage.stride);
            w = down(w, stage.stride);
            macs += area_in * in * mid + h * w * (9 * mid + mid * out);
            in = out;
        }
    }
    const auto& hd = spec.head;
    macs += hd.input_channels * hd.expansion_channels + hd.expansion_channels * hd.embedding_dim +
            hd.embedding_dim * hd.embedding_dim;
    return 2 * macs;
}

}  // namespace rmnet
