#pragma once

#include <cstdint>
#include <span>

#include "rmnet/tensor.hpp"

namespace rmnet {

inline constexpr double kNormEpsilon = 1e-5;
inline constexpr double kProbabilityFloor = 1e-12;

// Output extent of a strided window sweep: floor((in + 2 pad - k) / stride) + 1.
inline Index window_output(Index in, Index kernel, Index stride, Index padding) {
    return (in + 2 * padding - kernel) / stride + 1;
}

/// Dense 2-D convolution, NCHW input and KCHW weight, no bias.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& input, const Tensor<S>& weight, Index stride, Index padding);

/// One 2-D filter per channel, weight laid out as [C, 1, kh, kw].
template <typename S>
Tensor<S> depthwise_conv2d(const Tensor<S>& input, const Tensor<S>& weight, Index stride, Index padding);

template <typename S>
Tensor<S> elu(const Tensor<S>& input);

template <typename S>
Tensor<S> relu(const Tensor<S>& input);

/// Window max; padded cells never win. Backward routes to the first maximal
/// element in row-major scan order.
template <typename S>
Tensor<S> max_pool2d(const Tensor<S>& input, Index kernel, Index stride, Index padding = 0);

/// [N, C, H, W] -> [N, C], same tie rule as max_pool2d.
template <typename S>
Tensor<S> global_max_pool(const Tensor<S>& input);

template <typename S>
struct RunningStats {
    Buffer<S> mean;
    Buffer<S> var;

    explicit RunningStats(Index channels = 0)
        : mean(Buffer<S>::Zero(channels)), var(Buffer<S>::Ones(channels)) {}
};

/// Per-channel batch normalization over (N, H, W) for 4-D input or N for 2-D input.
/// Train mode normalizes with batch statistics (biased variance) and folds the
/// unbiased variance into `stats`; eval mode reads `stats` only.
template <typename S>
Tensor<S> batch_norm(const Tensor<S>& input, const Tensor<S>& gamma, const Tensor<S>& beta,
                     RunningStats<S>& stats, Mode mode, double momentum = 0.1,
                     double epsilon = kNormEpsilon);

/// Inverted dropout. The keep mask is a pure function of `seed`.
template <typename S>
Tensor<S> dropout(const Tensor<S>& input, double ratio, Mode mode, std::uint64_t seed);

/// Row-wise x / max(|x|, epsilon) on [N, D].
template <typename S>
Tensor<S> l2_normalize(const Tensor<S>& input, double epsilon = kNormEpsilon);

/// [N, D] x [D, K] -> [N, K].
template <typename S>
Tensor<S> linear(const Tensor<S>& input, const Tensor<S>& weight);

/// [R, C] -> [C, R].
template <typename S>
Tensor<S> transpose(const Tensor<S>& input);

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b);

template <typename S>
Tensor<S> scale(const Tensor<S>& input, S factor);

/// Zero-extends the channel axis of [N, C, H, W] to `channels`.
template <typename S>
Tensor<S> pad_channels(const Tensor<S>& input, Index channels);

/// Row-wise softmax on [N, K].
template <typename S>
Tensor<S> softmax(const Tensor<S>& logits);

/// Mean of -log p[i, y_i] over the batch. Rows must sum to one within 1e-6.
/// Probabilities below 1e-12 are clamped and reported through `clamped`.
template <typename S>
Tensor<S> cross_entropy(const Tensor<S>& probabilities, std::span<const int> labels,
                        bool* clamped = nullptr);

}  // namespace rmnet
