#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "rmnet/ops.hpp"

namespace rmnet {

// Class weight matrix W [dim, classes] with unit-norm columns, plus scale s and margin m.
template <typename S>
struct AmSoftmaxParams {
    Tensor<S> weight;
    double scale = 30.0;
    double margin = 0.35;

    static AmSoftmaxParams init(Index dim, Index classes, std::uint64_t seed, double scale = 30.0,
                                double margin = 0.35);
    Index num_classes() const { return weight.dim(1); }
    void renormalize();
};

// One unit-norm center per training identity; rows of a [classes, dim] tensor.
// Rows start at zero and are set from the first embedding seen for the class.
template <typename S>
class CenterBank {
public:
    CenterBank() = default;
    CenterBank(Index classes, Index dim);

    Tensor<S>& centers() { return centers_; }
    const Tensor<S>& centers() const { return centers_; }
    Index num_classes() const { return centers_.dim(0); }
    Index dim() const { return centers_.dim(1); }

    bool initialized(int label) const { return initialized_.at(static_cast<std::size_t>(label)) != 0; }
    bool all_initialized() const;
    const std::vector<std::uint8_t>& initialized_mask() const { return initialized_; }
    void set_initialized_mask(std::vector<std::uint8_t> mask);

    // Seeds still-empty rows from the first matching embedding in batch order.
    void observe(const Tensor<S>& embeddings, std::span<const int> labels);

private:
    Tensor<S> centers_;
    std::vector<std::uint8_t> initialized_;
};

/// Gradient step on the accumulated center gradients followed by row
/// renormalization; rows with zero gradient are left bit-identical.
/// Clears the gradient buffer.
template <typename S>
void update_centers(CenterBank<S>& bank, double learning_rate);

// Margin source for the two push losses. The smart kind grows the margin with
// the running intra-class cosine spread of the anchor identity:
//   m = clamp(m_min + beta * spread_ema, m_min, m_max)
class MarginPolicy {
public:
    enum class Kind { fixed, smart };

    static MarginPolicy fixed(double margin);
    static MarginPolicy smart(Index classes, double beta = 1.0, double m_min = 0.1, double m_max = 0.6,
                              double momentum = 0.9);

    Kind kind() const { return kind_; }
    double margin(int identity, int competitor) const;
    // Folds a new spread measurement for `identity` into its running average.
    void observe(int identity, double spread);

    double base_margin() const { return base_; }
    double beta() const { return beta_; }
    double min_margin() const { return m_min_; }
    double max_margin() const { return m_max_; }
    const std::vector<double>& spreads() const { return spread_; }
    const std::vector<std::uint8_t>& observed() const { return seen_; }
    // Without a mask every identity counts as observed.
    void set_spreads(std::vector<double> spreads, std::vector<std::uint8_t> observed = {});

private:
    Kind kind_ = Kind::fixed;
    double base_ = 0.35;
    double beta_ = 1.0;
    double m_min_ = 0.1;
    double m_max_ = 0.6;
    double momentum_ = 0.9;
    std::vector<double> spread_;
    std::vector<std::uint8_t> seen_;
};

enum LossTerm : std::size_t { kGlob = 0, kCenter = 1, kGPush = 2, kPush = 3 };
using LossVector = std::array<double, 4>;

// w1..w4 for glob, center, gpush and push. In running-magnitude mode each active
// weight is base_i / EMA(|L_i|), rescaled so the weights sum to sum(base).
struct LossWeights {
    enum class Mode { fixed, running_magnitude };

    LossVector base{1.0, 1.0, 1.0, 1.0};
    Mode mode = Mode::running_magnitude;
    double momentum = 0.9;
    double magnitude_floor = 0.05;
    LossVector ema{0.0, 0.0, 0.0, 0.0};
    bool ema_ready = false;

    void validate() const;
    void observe(const LossVector& values);
    LossVector current() const;
};

/// Mean negative log of the additive-margin softmax probability of the true class.
/// `embeddings` [N, D] and the columns of `params.weight` must be unit-norm (1e-3).
template <typename S>
Tensor<S> am_softmax(const Tensor<S>& embeddings, std::span<const int> labels, const AmSoftmaxParams<S>& params);

/// Batch mean of d(f_i, c_{y_i}) with d(a, b) = 1 - a.b.
template <typename S>
Tensor<S> center_loss(const Tensor<S>& embeddings, std::span<const int> labels, const Tensor<S>& centers);

/// Mean over ordered pairs with different identities of
/// [m + d(f_i, c_{y_i}) - d(f_i, f_j)]+. Zero (with a warning) for one identity.
template <typename S>
Tensor<S> push_plus(const Tensor<S>& embeddings, std::span<const int> labels, const Tensor<S>& centers,
                    const MarginPolicy& policy);

/// Mean over samples and competitor centers k != y_i of
/// [m + d(f_i, c_{y_i}) - d(f_i, c_k)]+. Zero (with a warning) for one class.
template <typename S>
Tensor<S> glob_push_plus(const Tensor<S>& embeddings, std::span<const int> labels, const Tensor<S>& centers,
                         const MarginPolicy& policy);

// Per-sample summands of the losses above; their means are the batch losses.
template <typename S>
Eigen::VectorXd am_softmax_per_sample(const Tensor<S>& embeddings, std::span<const int> labels,
                                      const AmSoftmaxParams<S>& params);
template <typename S>
Eigen::VectorXd center_loss_per_sample(const Tensor<S>& embeddings, std::span<const int> labels,
                                       const Tensor<S>& centers);
template <typename S>
Eigen::VectorXd glob_push_per_sample(const Tensor<S>& embeddings, std::span<const int> labels,
                                     const Tensor<S>& centers, const MarginPolicy& policy);

template <typename S>
struct LossBatch {
    Tensor<S> internal;  // local structure losses attach here
    Tensor<S> output;    // global structure loss attaches here
    std::vector<int> labels;
};

template <typename S>
struct TotalLoss {
    Tensor<S> total;
    LossVector terms{};
    LossVector weights{};
};

/// w1 L_glob(output) + w2 L_center + w3 L_gpush + w4 L_push (all on internal).
template <typename S>
TotalLoss<S> total_loss(const LossBatch<S>& batch, const AmSoftmaxParams<S>& am, const CenterBank<S>& bank,
                        const MarginPolicy& policy, const LossVector& weights);

}  // namespace rmnet
