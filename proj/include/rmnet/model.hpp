#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rmnet/ops.hpp"

namespace rmnet {

enum class Activation { elu, relu };

std::string to_string(Activation act);
Activation parse_activation(const std::string& text);

// One RM-block. Internal width is always a quarter of the output width.
struct BlockSpec {
    Index in_channels = 32;
    Index out_channels = 32;
    Index internal_channels = 8;
    Index stride = 1;
    double dropout_ratio = 0.1;
    Activation activation = Activation::elu;
    bool use_batch_norm = true;

    static BlockSpec make(Index in, Index out, Index stride, double dropout = 0.1,
                          Activation act = Activation::elu, bool batch_norm = true);

    bool is_reduction() const { return stride == 2; }
    void validate() const;
};

// `blocks` consecutive RM-blocks producing `channels` at `stride`.
struct StageSpec {
    int blocks = 1;
    Index channels = 32;
    Index stride = 1;
};

struct BackboneSpec {
    Index input_channels = 3;
    Index stem_channels = 32;
    Index stem_stride = 2;
    std::vector<StageSpec> stages;
    Activation activation = Activation::elu;
    bool use_batch_norm = true;
    double dropout_ratio = 0.1;

    // The reference stage table: 4/1/8/1/10/1/11 blocks, 32..256 channels, x1/16.
    static BackboneSpec full();
    // Same stage structure with one block per stage.
    static BackboneSpec mini();

    std::vector<BlockSpec> expand_blocks() const;
    Index output_channels() const;
    // Denominator of the spatial scale after each stage (2, 2, 4, 4, ...).
    std::vector<Index> stage_scales() const;
    Index total_stride() const;
    void validate() const;
};

struct HeadSpec {
    Index input_channels = 256;
    Index expansion_channels = 512;
    Index embedding_dim = 256;
};

struct ModelSpec {
    BackboneSpec backbone;
    HeadSpec head;

    static ModelSpec full() { return {BackboneSpec::full(), HeadSpec{}}; }
    static ModelSpec mini() { return {BackboneSpec::mini(), HeadSpec{}}; }
    static ModelSpec profile(const std::string& name);

    void validate() const;
};

// Declarative text form: `key = value` lines, `stage = <blocks> <channels> <stride>`.
std::string format_model_spec(const ModelSpec& spec);
ModelSpec parse_model_spec(const std::string& text);

enum class DType : std::uint8_t { f32 = 1, f64 = 2, u64 = 3 };

// Values are held as double: f32 and u64 (< 2^53) round-trip exactly.
struct ParamRecord {
    std::string path;
    DType dtype = DType::f32;
    Shape shape;
    std::vector<double> values;
};

// Ordered path -> tensor map; insertion order is the serialization order.
class ModelParams {
public:
    void set(ParamRecord record);
    bool contains(const std::string& path) const { return index_.count(path) != 0; }
    const ParamRecord& at(const std::string& path) const;
    const std::vector<ParamRecord>& records() const { return records_; }
    std::size_t size() const { return records_.size(); }

    template <typename S>
    void set_tensor(const std::string& path, const Tensor<S>& t);
    template <typename S>
    void set_buffer(const std::string& path, const Buffer<S>& b);

    bool operator==(const ModelParams& other) const;

private:
    std::vector<ParamRecord> records_;
    std::map<std::string, std::size_t> index_;
};

enum class LayerKind { conv, depthwise, linear };

// What the spec walker reports for every weight-bearing layer.
struct LayerInfo {
    std::string path;
    LayerKind kind = LayerKind::conv;
    Index in_channels = 0;
    Index out_channels = 0;
    Index kernel = 1;
    Index stride = 1;
    bool batch_norm = false;
};

template <typename S>
struct ConvUnit {
    std::string path;
    Tensor<S> weight;
    Index stride = 1;
    Index padding = 0;
    bool depthwise = false;
    bool batch_norm = false;
    Tensor<S> gamma;
    Tensor<S> beta;
    RunningStats<S> stats;
};

template <typename S>
struct RmBlock {
    std::string path;
    BlockSpec spec;
    ConvUnit<S> reduce;
    ConvUnit<S> depthwise;
    ConvUnit<S> expand;
};

template <typename S>
struct NamedTensor {
    std::string path;
    Tensor<S> tensor;
};

template <typename S>
struct Embeddings {
    Tensor<S> feature;   // backbone output [N, C, H/16, W/16]
    Tensor<S> internal;  // L2-normalized, trained by the local structure losses
    Tensor<S> output;    // L2-normalized calibrated embedding, the network output
};

struct ForwardOptions {
    Mode mode = Mode::eval;
    std::uint64_t dropout_seed = 0;
    bool dropout_enabled = true;
    double bn_momentum = 0.1;
};

template <typename S>
class Model {
public:
    explicit Model(ModelSpec spec);

    const ModelSpec& spec() const { return spec_; }
    const std::vector<RmBlock<S>>& blocks() const { return blocks_; }

    Embeddings<S> forward(const Tensor<S>& images, const ForwardOptions& options = {});
    Tensor<S> forward_backbone(const Tensor<S>& images, const ForwardOptions& options = {});
    Tensor<S> forward_block(std::size_t index, const Tensor<S>& input, const ForwardOptions& options = {});

    // Learnable tensors only, in a fixed order.
    std::vector<NamedTensor<S>> parameters();
    std::vector<LayerInfo> layers() const;
    // Conv and head weights keyed by layer path, for filter diagnostics.
    std::vector<NamedTensor<S>> layer_weights();

    ModelParams export_params() const;
    // Throws LoadError naming the first missing or mis-shaped path.
    void import_params(const ModelParams& params);

    void zero_grad();
    // gamma = 1, beta = 0, running mean 0, running variance 1.
    void reset_batch_norm();

private:
    Tensor<S> apply_unit(ConvUnit<S>& unit, const Tensor<S>& x, const ForwardOptions& options, bool activate);
    Tensor<S> activate(const Tensor<S>& x) const;

    ModelSpec spec_;
    ConvUnit<S> stem_;
    std::vector<RmBlock<S>> blocks_;
    Tensor<S> head_expand_;
    Tensor<S> head_project_;
    Tensor<S> head_calibration_;
    // Parameter-free batch norm after the head expand and project layers; only
    // the running statistics are state.
    RunningStats<S> head_expand_stats_;
    RunningStats<S> head_project_stats_;
};

/// Learnable scalar count (BN affine terms included, running statistics and
/// the classifier matrix excluded), from walking the built model.
template <typename S>
Index count_params(Model<S>& model);

/// Orthogonal rows for the input 1x1 conv of every block, MSRA normal
/// (variance 2 / fan_in) for every other weight, BN gamma = 1 and beta = 0.
/// Writes into `model` and returns the exported parameters.
template <typename S>
ModelParams init_params(Model<S>& model, std::uint64_t seed);

/// rows x cols matrix with orthonormal rows (or columns when rows > cols).
Eigen::MatrixXd orthogonal_matrix(Index rows, Index cols, std::uint64_t seed);

}  // namespace rmnet
