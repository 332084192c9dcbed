#include "rmnet/model.hpp"

#include <Eigen/QR>

#include <cmath>
#include <sstream>

#include "rmnet/random.hpp"

namespace rmnet {

std::string to_string(Activation act) { return act == Activation::elu ? "elu" : "relu"; }

Activation parse_activation(const std::string& text) {
    if (text == "elu") return Activation::elu;
    if (text == "relu") return Activation::relu;
    throw ConfigError("unknown activation '" + text + "' (expected elu or relu)");
}

BlockSpec BlockSpec::make(Index in, Index out, Index stride, double dropout, Activation act, bool batch_norm) {
    BlockSpec b;
    b.in_channels = in;
    b.out_channels = out;
    b.internal_channels = out / 4;
    b.stride = stride;
    b.dropout_ratio = dropout;
    b.activation = act;
    b.use_batch_norm = batch_norm;
    return b;
}

void BlockSpec::validate() const {
    std::ostringstream os;
    if (stride != 1 && stride != 2) os << "stride must be 1 or 2, got " << stride;
    else if (stride == 2 && out_channels != 2 * in_channels)
        os << "reduction block must double channels: " << in_channels << " -> " << out_channels;
    else if (stride == 1 && out_channels != in_channels)
        os << "regular block must preserve channels: " << in_channels << " -> " << out_channels;
    else if (out_channels % 4 != 0 || internal_channels * 4 != out_channels)
        os << "internal channels must be out_channels / 4 exactly (" << out_channels << ", " << internal_channels << ")";
    else if (out_channels > 256)
        os << "out_channels " << out_channels << " exceeds the 256 channel limit";
    else if (!(dropout_ratio >= 0.0 && dropout_ratio < 1.0))
        os << "dropout ratio " << dropout_ratio << " outside [0, 1)";
    const std::string msg = os.str();
    if (!msg.empty()) throw SpecError("block spec: " + msg);
}

BackboneSpec BackboneSpec::full() {
    BackboneSpec s;
    s.stages = {{4, 32, 1}, {1, 64, 2}, {8, 64, 1}, {1, 128, 2}, {10, 128, 1}, {1, 256, 2}, {11, 256, 1}};
    return s;
}

BackboneSpec BackboneSpec::mini() {
    BackboneSpec s;
    s.stages = {{1, 32, 1}, {1, 64, 2}, {1, 64, 1}, {1, 128, 2}, {1, 128, 1}, {1, 256, 2}, {1, 256, 1}};
    return s;
}

std::vector<BlockSpec> BackboneSpec::expand_blocks() const {
    std::vector<BlockSpec> out;
    Index channels = stem_channels;
    for (const auto& stage : stages) {
        for (int b = 0; b < stage.blocks; ++b) {
            out.push_back(BlockSpec::make(channels, stage.channels, stage.stride, dropout_ratio, activation, use_batch_norm));
            channels = stage.channels;
        }
    }
    return out;
}

Index BackboneSpec::output_channels() const { return stages.empty() ? stem_channels : stages.back().channels; }

std::vector<Index> BackboneSpec::stage_scales() const {
    std::vector<Index> scales;
    Index scale = stem_stride;
    for (const auto& stage : stages) {
        for (int b = 0; b < stage.blocks; ++b) scale *= stage.stride;
        scales.push_back(scale);
    }
    return scales;
}

Index BackboneSpec::total_stride() const {
    const auto scales = stage_scales();
    return scales.empty() ? stem_stride : scales.back();
}

void BackboneSpec::validate() const {
    if (input_channels < 1) throw SpecError("backbone: input_channels must be positive");
    if (stem_channels < 1 || stem_channels > 256) throw SpecError("backbone: stem channels must lie in [1, 256]");
    if (stem_stride < 1) throw SpecError("backbone: stem stride must be >= 1");
    for (std::size_t i = 0; i < stages.size(); ++i) {
        if (stages[i].blocks < 1) throw SpecError("backbone: stage " + std::to_string(i + 1) + " has no blocks");
        if (stages[i].stride == 2 && stages[i].blocks != 1) {
            throw SpecError("backbone: reduction stage " + std::to_string(i + 1) + " must hold exactly one block");
        }
    }
    for (const auto& b : expand_blocks()) b.validate();
}

ModelSpec ModelSpec::profile(const std::string& name) {
    if (name == "full") return full();
    if (name == "mini") return mini();
    throw ConfigError("unknown model profile '" + name + "' (expected full or mini)");
}

void ModelSpec::validate() const {
    backbone.validate();
    if (backbone.output_channels() != head.input_channels) {
        throw SpecError("head input channels " + std::to_string(head.input_channels) +
                        " do not match backbone output channels " + std::to_string(backbone.output_channels()));
    }
    if (head.expansion_channels < 1 || head.embedding_dim < 1) throw SpecError("head dimensions must be positive");
}

std::string format_model_spec(const ModelSpec& spec) {
    std::ostringstream os;
    const auto& b = spec.backbone;
    os << "input_channels = " << b.input_channels << '\n'
       << "stem = " << b.stem_channels << ' ' << b.stem_stride << '\n';
    for (const auto& s : b.stages) os << "stage = " << s.blocks << ' ' << s.channels << ' ' << s.stride << '\n';
    os << "head = " << spec.head.input_channels << ' ' << spec.head.expansion_channels << ' '
       << spec.head.embedding_dim << '\n'
       << "activation = " << to_string(b.activation) << '\n'
       << "batch_norm = " << (b.use_batch_norm ? "true" : "false") << '\n'
       << "dropout = " << b.dropout_ratio << '\n';
    return os.str();
}

ModelSpec parse_model_spec(const std::string& text) {
    ModelSpec spec;
    spec.backbone.stages.clear();
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const auto eq = line.find('=');
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        if (eq == std::string::npos) throw ConfigError("architecture line " + std::to_string(lineno) + ": expected key = value");
        std::istringstream key_in(line.substr(0, eq));
        std::string key;
        key_in >> key;
        std::istringstream vals(line.substr(eq + 1));
        auto fail = [&] { throw ConfigError("architecture line " + std::to_string(lineno) + ": bad value for '" + key + "'"); };
        if (key == "input_channels") {
            if (!(vals >> spec.backbone.input_channels)) fail();
        } else if (key == "stem") {
            if (!(vals >> spec.backbone.stem_channels >> spec.backbone.stem_stride)) fail();
        } else if (key == "stage") {
            StageSpec s;
            if (!(vals >> s.blocks >> s.channels >> s.stride)) fail();
            spec.backbone.stages.push_back(s);
        } else if (key == "head") {
            if (!(vals >> spec.head.input_channels >> spec.head.expansion_channels >> spec.head.embedding_dim)) fail();
        } else if (key == "activation") {
            std::string v;
            if (!(vals >> v)) fail();
            spec.backbone.activation = parse_activation(v);
        } else if (key == "batch_norm") {
            std::string v;
            if (!(vals >> v) || (v != "true" && v != "false")) fail();
            spec.backbone.use_batch_norm = v == "true";
        } else if (key == "dropout") {
            if (!(vals >> spec.backbone.dropout_ratio)) fail();
        } else {
            throw ConfigError("architecture line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        }
    }
    spec.validate();
    return spec;
}

void ModelParams::set(ParamRecord record) {
    if (auto it = index_.find(record.path); it != index_.end()) {
        records_[it->second] = std::move(record);
        return;
    }
    index_.emplace(record.path, records_.size());
    records_.push_back(std::move(record));
}

const ParamRecord& ModelParams::at(const std::string& path) const {
    auto it = index_.find(path);
    if (it == index_.end()) throw LoadError("missing parameter '" + path + "'");
    return records_[it->second];
}

template <typename S>
void ModelParams::set_tensor(const std::string& path, const Tensor<S>& t) {
    ParamRecord r;
    r.path = path;
    r.dtype = std::is_same_v<S, float> ? DType::f32 : DType::f64;
    r.shape = t.shape();
    r.values.assign(t.raw(), t.raw() + t.size());
    set(std::move(r));
}

template <typename S>
void ModelParams::set_buffer(const std::string& path, const Buffer<S>& b) {
    ParamRecord r;
    r.path = path;
    r.dtype = std::is_same_v<S, float> ? DType::f32 : DType::f64;
    r.shape = {b.size()};
    r.values.assign(b.data(), b.data() + b.size());
    set(std::move(r));
}

template void ModelParams::set_tensor(const std::string&, const Tensor<float>&);
template void ModelParams::set_tensor(const std::string&, const Tensor<double>&);
template void ModelParams::set_buffer(const std::string&, const Buffer<float>&);
template void ModelParams::set_buffer(const std::string&, const Buffer<double>&);

bool ModelParams::operator==(const ModelParams& other) const {
    if (records_.size() != other.records_.size()) return false;
    for (std::size_t i = 0; i < records_.size(); ++i) {
        const auto& a = records_[i];
        const auto& b = other.records_[i];
        if (a.path != b.path || a.dtype != b.dtype || a.shape != b.shape || a.values != b.values) return false;
    }
    return true;
}

namespace {

template <typename S>
ConvUnit<S> make_unit(std::string path, Index out, Index in_per_filter, Index kernel, Index stride,
                      bool depthwise, bool batch_norm) {
    ConvUnit<S> u;
    u.path = std::move(path);
    u.weight = Tensor<S>({out, in_per_filter, kernel, kernel}, S(0), true);
    u.stride = stride;
    u.padding = kernel / 2;
    u.depthwise = depthwise;
    u.batch_norm = batch_norm;
    if (batch_norm) {
        u.gamma = Tensor<S>({out}, S(1), true);
        u.beta = Tensor<S>({out}, S(0), true);
        u.stats = RunningStats<S>(out);
    }
    return u;
}

template <typename S>
void collect_unit(const ConvUnit<S>& u, std::vector<NamedTensor<S>>& out) {
    out.push_back({u.path + ".weight", u.weight});
    if (u.batch_norm) {
        out.push_back({u.path + ".gamma", u.gamma});
        out.push_back({u.path + ".beta", u.beta});
    }
}

LayerInfo unit_info(const std::string& path, LayerKind kind, Index in, Index out, Index kernel, Index stride, bool bn) {
    return LayerInfo{path, kind, in, out, kernel, stride, bn};
}

}  // namespace

template <typename S>
Model<S>::Model(ModelSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    const auto& bb = spec_.backbone;
    const bool bn = bb.use_batch_norm;
    stem_ = make_unit<S>("stem", bb.stem_channels, bb.input_channels, 3, bb.stem_stride, false, bn);
    std::size_t block_index = 0;
    Index channels = bb.stem_channels;
    for (std::size_t s = 0; s < bb.stages.size(); ++s) {
        for (int b = 0; b < bb.stages[s].blocks; ++b, ++block_index) {
            RmBlock<S> blk;
            blk.spec = BlockSpec::make(channels, bb.stages[s].channels, bb.stages[s].stride, bb.dropout_ratio,
                                       bb.activation, bn);
            blk.path = "stage" + std::to_string(s + 1) + ".block" + std::to_string(b);
            const Index internal = blk.spec.internal_channels;
            blk.reduce = make_unit<S>(blk.path + ".reduce", internal, channels, 1, 1, false, bn);
            blk.depthwise = make_unit<S>(blk.path + ".depthwise", internal, 1, 3, blk.spec.stride, true, bn);
            blk.expand = make_unit<S>(blk.path + ".expand", blk.spec.out_channels, internal, 1, 1, false, bn);
            blocks_.push_back(std::move(blk));
            channels = bb.stages[s].channels;
        }
    }
    const auto& h = spec_.head;
    head_expand_ = Tensor<S>({h.input_channels, h.expansion_channels}, S(0), true);
    head_project_ = Tensor<S>({h.expansion_channels, h.embedding_dim}, S(0), true);
    head_calibration_ = Tensor<S>({h.embedding_dim, h.embedding_dim}, S(0), true);
    head_expand_stats_ = RunningStats<S>(bn ? h.expansion_channels : 0);
    head_project_stats_ = RunningStats<S>(bn ? h.embedding_dim : 0);
}

template <typename S>
Tensor<S> Model<S>::activate(const Tensor<S>& x) const {
    return spec_.backbone.activation == Activation::elu ? elu(x) : relu(x);
}

template <typename S>
Tensor<S> Model<S>::apply_unit(ConvUnit<S>& unit, const Tensor<S>& x, const ForwardOptions& options, bool act) {
    Tensor<S> y = unit.depthwise ? depthwise_conv2d(x, unit.weight, unit.stride, unit.padding)
                                 : conv2d(x, unit.weight, unit.stride, unit.padding);
    if (unit.batch_norm) y = batch_norm(y, unit.gamma, unit.beta, unit.stats, options.mode, options.bn_momentum);
    return act ? activate(y) : y;
}

template <typename S>
Tensor<S> Model<S>::forward_block(std::size_t index, const Tensor<S>& input, const ForwardOptions& options) {
    RmBlock<S>& blk = blocks_.at(index);
    if (input.rank() != 4 || input.dim(1) != blk.spec.in_channels) {
        throw DimensionError("block " + blk.path + ": expected " + std::to_string(blk.spec.in_channels) +
                             " input channels on axis 1, got shape " + shape_string(input.shape()));
    }
    Tensor<S> r = apply_unit(blk.reduce, input, options, true);
    r = apply_unit(blk.depthwise, r, options, true);
    r = apply_unit(blk.expand, r, options, false);
    if (options.dropout_enabled && blk.spec.dropout_ratio > 0.0) {
        r = dropout(r, blk.spec.dropout_ratio, options.mode, derive_seed(options.dropout_seed, index));
    }
    Tensor<S> skip = input;
    if (blk.spec.is_reduction()) skip = pad_channels(max_pool2d(input, 3, 2, 1), blk.spec.out_channels);
    return activate(add(skip, r));
}

template <typename S>
Tensor<S> Model<S>::forward_backbone(const Tensor<S>& images, const ForwardOptions& options) {
    if (images.rank() != 4 || images.dim(1) != spec_.backbone.input_channels) {
        throw DimensionError("model input must be [N, " + std::to_string(spec_.backbone.input_channels) +
                             ", H, W], got " + shape_string(images.shape()));
    }
    Tensor<S> x = apply_unit(stem_, images, options, true);
    for (std::size_t i = 0; i < blocks_.size(); ++i) x = forward_block(i, x, options);
    return x;
}

template <typename S>
Embeddings<S> Model<S>::forward(const Tensor<S>& images, const ForwardOptions& options) {
    Embeddings<S> e;
    e.feature = forward_backbone(images, options);
    const bool bn = spec_.backbone.use_batch_norm;
    auto normalize = [&](const Tensor<S>& x, RunningStats<S>& stats) {
        if (!bn) return x;
        const Index c = x.dim(1);
        return batch_norm(x, Tensor<S>({c}, S(1)), Tensor<S>({c}, S(0)), stats, options.mode, options.bn_momentum);
    };
    Tensor<S> h = activate(normalize(linear(global_max_pool(e.feature), head_expand_), head_expand_stats_));
    e.internal = l2_normalize(normalize(linear(h, head_project_), head_project_stats_));
    e.output = l2_normalize(linear(e.internal, head_calibration_));
    return e;
}

template <typename S>
std::vector<NamedTensor<S>> Model<S>::parameters() {
    std::vector<NamedTensor<S>> out;
    collect_unit(stem_, out);
    for (const auto& blk : blocks_) {
        collect_unit(blk.reduce, out);
        collect_unit(blk.depthwise, out);
        collect_unit(blk.expand, out);
    }
    out.push_back({"head.expand.weight", head_expand_});
    out.push_back({"head.project.weight", head_project_});
    out.push_back({"head.calibration.weight", head_calibration_});
    return out;
}

template <typename S>
std::vector<LayerInfo> Model<S>::layers() const {
    std::vector<LayerInfo> out;
    const auto& bb = spec_.backbone;
    out.push_back(unit_info("stem", LayerKind::conv, bb.input_channels, bb.stem_channels, 3, bb.stem_stride, bb.use_batch_norm));
    for (const auto& blk : blocks_) {
        const auto& s = blk.spec;
        out.push_back(unit_info(blk.reduce.path, LayerKind::conv, s.in_channels, s.internal_channels, 1, 1, s.use_batch_norm));
        out.push_back(unit_info(blk.depthwise.path, LayerKind::depthwise, s.internal_channels, s.internal_channels, 3,
                                s.stride, s.use_batch_norm));
        out.push_back(unit_info(blk.expand.path, LayerKind::conv, s.internal_channels, s.out_channels, 1, 1, s.use_batch_norm));
    }
    const auto& h = spec_.head;
    out.push_back(unit_info("head.expand", LayerKind::linear, h.input_channels, h.expansion_channels, 1, 1, false));
    out.push_back(unit_info("head.project", LayerKind::linear, h.expansion_channels, h.embedding_dim, 1, 1, false));
    out.push_back(unit_info("head.calibration", LayerKind::linear, h.embedding_dim, h.embedding_dim, 1, 1, false));
    return out;
}

template <typename S>
std::vector<NamedTensor<S>> Model<S>::layer_weights() {
    std::vector<NamedTensor<S>> out;
    out.push_back({stem_.path, stem_.weight});
    for (const auto& blk : blocks_) {
        out.push_back({blk.reduce.path, blk.reduce.weight});
        out.push_back({blk.depthwise.path, blk.depthwise.weight});
        out.push_back({blk.expand.path, blk.expand.weight});
    }
    out.push_back({"head.expand", head_expand_});
    out.push_back({"head.project", head_project_});
    out.push_back({"head.calibration", head_calibration_});
    return out;
}

template <typename S>
ModelParams Model<S>::export_params() const {
    ModelParams p;
    auto put_unit = [&p](const ConvUnit<S>& u) {
        p.set_tensor(u.path + ".weight", u.weight);
        if (u.batch_norm) {
            p.set_tensor(u.path + ".gamma", u.gamma);
            p.set_tensor(u.path + ".beta", u.beta);
            p.set_buffer(u.path + ".running_mean", u.stats.mean);
            p.set_buffer(u.path + ".running_var", u.stats.var);
        }
    };
    put_unit(stem_);
    for (const auto& blk : blocks_) {
        put_unit(blk.reduce);
        put_unit(blk.depthwise);
        put_unit(blk.expand);
    }
    p.set_tensor("head.expand.weight", head_expand_);
    p.set_tensor("head.project.weight", head_project_);
    p.set_tensor("head.calibration.weight", head_calibration_);
    if (spec_.backbone.use_batch_norm) {
        p.set_buffer("head.expand.running_mean", head_expand_stats_.mean);
        p.set_buffer("head.expand.running_var", head_expand_stats_.var);
        p.set_buffer("head.project.running_mean", head_project_stats_.mean);
        p.set_buffer("head.project.running_var", head_project_stats_.var);
    }
    return p;
}

namespace {

template <typename S>
void load_values(const ModelParams& params, const std::string& path, const Shape& shape, S* dst) {
    if (!params.contains(path)) throw LoadError("checkpoint is missing layer '" + path + "'");
    const auto& r = params.at(path);
    if (r.shape != shape) {
        throw LoadError("layer '" + path + "' has shape " + shape_string(r.shape) + " in checkpoint, model expects " +
                        shape_string(shape));
    }
    for (std::size_t i = 0; i < r.values.size(); ++i) dst[i] = static_cast<S>(r.values[i]);
}

}  // namespace

template <typename S>
void Model<S>::import_params(const ModelParams& params) {
    // Validate everything first so a failed load never leaves a half-written model.
    const ModelParams reference = export_params();
    for (const auto& r : reference.records()) {
        if (!params.contains(r.path)) throw LoadError("checkpoint is missing layer '" + r.path + "'");
        const auto& got = params.at(r.path);
        if (got.shape != r.shape) {
            throw LoadError("layer '" + r.path + "' has shape " + shape_string(got.shape) +
                            " in checkpoint, model expects " + shape_string(r.shape));
        }
    }
    for (const auto& got : params.records()) {
        if (got.path.rfind("state.", 0) == 0) continue;
        if (!reference.contains(got.path)) throw LoadError("checkpoint layer '" + got.path + "' does not exist in this model");
    }
    auto get_unit = [&params](ConvUnit<S>& u) {
        load_values(params, u.path + ".weight", u.weight.shape(), u.weight.raw());
        if (u.batch_norm) {
            load_values(params, u.path + ".gamma", u.gamma.shape(), u.gamma.raw());
            load_values(params, u.path + ".beta", u.beta.shape(), u.beta.raw());
            load_values(params, u.path + ".running_mean", Shape{u.stats.mean.size()}, u.stats.mean.data());
            load_values(params, u.path + ".running_var", Shape{u.stats.var.size()}, u.stats.var.data());
        }
    };
    get_unit(stem_);
    for (auto& blk : blocks_) {
        get_unit(blk.reduce);
        get_unit(blk.depthwise);
        get_unit(blk.expand);
    }
    load_values(params, "head.expand.weight", head_expand_.shape(), head_expand_.raw());
    load_values(params, "head.project.weight", head_project_.shape(), head_project_.raw());
    load_values(params, "head.calibration.weight", head_calibration_.shape(), head_calibration_.raw());
    if (spec_.backbone.use_batch_norm) {
        auto get_stats = [&params](const std::string& path, RunningStats<S>& st) {
            load_values(params, path + ".running_mean", Shape{st.mean.size()}, st.mean.data());
            load_values(params, path + ".running_var", Shape{st.var.size()}, st.var.data());
        };
        get_stats("head.expand", head_expand_stats_);
        get_stats("head.project", head_project_stats_);
    }
}

template <typename S>
void Model<S>::reset_batch_norm() {
    auto reset = [](ConvUnit<S>& u) {
        if (!u.batch_norm) return;
        u.gamma.data().setOnes();
        u.beta.data().setZero();
        u.stats.mean.setZero();
        u.stats.var.setOnes();
    };
    reset(stem_);
    for (auto& blk : blocks_) {
        reset(blk.reduce);
        reset(blk.depthwise);
        reset(blk.expand);
    }
    for (auto* st : {&head_expand_stats_, &head_project_stats_}) {
        st->mean.setZero();
        st->var.setOnes();
    }
}

template <typename S>
void Model<S>::zero_grad() {
    for (auto& p : parameters()) p.tensor.zero_grad();
}

template <typename S>
Index count_params(Model<S>& model) {
    Index total = 0;
    for (const auto& p : model.parameters()) total += p.tensor.size();
    return total;
}

Eigen::MatrixXd orthogonal_matrix(Index rows, Index cols, std::uint64_t seed) {
    const bool transpose = rows > cols;
    if (transpose) {
        warn("orthogonal init: " + std::to_string(rows) + " rows exceed " + std::to_string(cols) +
             " columns, falling back to orthonormal columns");
    }
    const Index tall = transpose ? rows : cols;
    const Index narrow = transpose ? cols : rows;
    Rng rng(seed);
    Eigen::MatrixXd a(tall, narrow);
    for (Index j = 0; j < narrow; ++j)
        for (Index i = 0; i < tall; ++i) a(i, j) = rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(tall, narrow);
    const Eigen::MatrixXd r = qr.matrixQR().topRows(narrow).template triangularView<Eigen::Upper>();
    for (Index j = 0; j < narrow; ++j) {
        if (r(j, j) < 0) q.col(j) = -q.col(j);
    }
    if (transpose) return q;  // rows x cols with orthonormal columns
    return q.transpose();     // rows x cols with orthonormal rows
}

template <typename S>
ModelParams init_params(Model<S>& model, std::uint64_t seed) {
    std::uint64_t tag = 0;
    auto msra = [&](Tensor<S>& w, Index fan_in) {
        Rng rng(derive_seed(seed, tag++));
        const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
        for (Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<S>(rng.normal() * sd);
    };
    auto named = model.layer_weights();
    for (auto& nw : named) {
        Tensor<S>& w = nw.tensor;
        if (w.rank() == 2) {
            msra(w, w.dim(0));
        } else if (nw.path.size() > 7 && nw.path.compare(nw.path.size() - 7, 7, ".reduce") == 0) {
            const Eigen::MatrixXd q = orthogonal_matrix(w.dim(0), w.dim(1), derive_seed(seed, tag++));
            for (Index r = 0; r < w.dim(0); ++r)
                for (Index c = 0; c < w.dim(1); ++c) w.data()[r * w.dim(1) + c] = static_cast<S>(q(r, c));
        } else {
            msra(w, w.dim(1) * w.dim(2) * w.dim(3));
        }
    }
    model.reset_batch_norm();
    return model.export_params();
}

template class Model<float>;
template class Model<double>;
template Index count_params(Model<float>&);
template Index count_params(Model<double>&);
template ModelParams init_params(Model<float>&, std::uint64_t);
template ModelParams init_params(Model<double>&, std::uint64_t);

}  // namespace rmnet
