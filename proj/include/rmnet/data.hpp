#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rmnet/tensor.hpp"

namespace rmnet {

// Interleaved RGB, row-major, values in [0, 1].
struct Image {
    Index height = 0;
    Index width = 0;
    std::vector<float> pixels;

    Image() = default;
    Image(Index h, Index w, float fill = 0.0f)
        : height(h), width(w), pixels(static_cast<std::size_t>(h * w * 3), fill) {}

    float& at(Index y, Index x, Index c) { return pixels[static_cast<std::size_t>((y * width + x) * 3 + c)]; }
    float at(Index y, Index x, Index c) const {
        return pixels[static_cast<std::size_t>((y * width + x) * 3 + c)];
    }
    bool operator==(const Image& other) const = default;
};

/// Binary PPM (P6, maxval 255). Pixels are quantized to 8 bits on write.
void write_ppm(const Image& image, const std::filesystem::path& path);
Image read_ppm(const std::filesystem::path& path);
/// Dispatches on extension: .ppm always, .jpg/.jpeg when built with JPEG support.
Image read_image(const std::filesystem::path& path);
bool jpeg_supported();

Image resize_bilinear(const Image& image, Index height, Index width);
Image flip_horizontal(const Image& image);

enum class Split { train, query, gallery };
std::string to_string(Split split);

// Identity value carried by distractor and junk files; never trained on.
inline constexpr int kDistractorIdentity = -1;

// Fields of a benchmark filename such as 0002_c1s1_000451_03.
struct MarketName {
    int identity = 0;  // raw value: -1 junk, 0 distractor, > 0 person
    int camera = 1;
    int sequence = 1;
    int frame = 0;
    int box = 0;
    bool operator==(const MarketName&) const = default;
};

std::optional<MarketName> parse_market_name(const std::string& stem);
std::string format_market_name(const MarketName& name);

struct LabeledImage {
    int identity = kDistractorIdentity;  // person id, or the distractor sentinel
    int label = -1;                      // contiguous training class, -1 outside the train split
    int camera = 0;
    Split split = Split::train;
    std::string name;
    std::filesystem::path path;          // decoded on demand when pixels are absent
    std::shared_ptr<const Image> pixels;
};

/// Pixels of a record, reading them from disk when not held in memory.
Image load_pixels(const LabeledImage& record);

struct Dataset {
    std::vector<LabeledImage> train;
    std::vector<LabeledImage> query;
    std::vector<LabeledImage> gallery;
    std::vector<int> class_identities;  // person id of every training class
    std::size_t skipped_files = 0;

    int num_classes() const { return static_cast<int>(class_identities.size()); }
};

/// Reads bounding_box_train, query and bounding_box_test. Pixels stay on disk.
Dataset load_market_layout(const std::filesystem::path& root);
/// Writes every record as PPM under the same three folders; returns file count.
std::size_t write_market_layout(const Dataset& dataset, const std::filesystem::path& root);

struct SynthSpec {
    int num_identities = 20;
    int images_per_identity = 30;
    int query_per_identity = 2;
    int gallery_per_identity = 8;  // the remainder goes to train
    Index height = 160;
    Index width = 64;
    int num_cameras = 6;
    double illumination_jitter = 0.15;
    int pose_shift = 4;
    double attribute_jitter = 0.02;
    double pixel_noise = 0.02;

    int train_per_identity() const { return images_per_identity - query_per_identity - gallery_per_identity; }
    void validate() const;
};

// Stable appearance attributes realized in one rendered image.
struct SynthAttributes {
    int identity = 0;
    int camera = 0;
    std::vector<double> values;  // shirt hue, trouser hue, body width, head size, band period, band phase
};

struct SynthDataset {
    Dataset dataset;
    std::vector<SynthAttributes> attributes;  // one per image, generation order
};

SynthDataset generate_synthetic(const SynthSpec& spec, std::uint64_t seed);

inline constexpr double kDefaultPixelMean = 0.5;
inline constexpr double kDefaultPixelStd = 0.25;

/// Resizes to height x width when needed and stacks (x - mean) / std as [N, 3, H, W].
template <typename S>
Tensor<S> to_model_input(std::span<const Image> images, Index height, Index width,
                         double mean = kDefaultPixelMean, double stddev = kDefaultPixelStd);

}  // namespace rmnet
