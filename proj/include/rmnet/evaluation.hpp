#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "rmnet/data.hpp"
#include "rmnet/model.hpp"

namespace rmnet {

enum class DistanceMetric { cosine, euclidean };

// Embeddings as rows plus the identity and camera of every row.
struct EmbeddingSet {
    Eigen::MatrixXd embeddings;
    std::vector<int> identities;
    std::vector<int> cameras;

    Index size() const { return embeddings.rows(); }
    Index dim() const { return embeddings.cols(); }
    void validate(const char* what) const;
};

/// D(q, g) = 1 - q.g (cosine) or |q - g| (euclidean).
Eigen::MatrixXd distance_matrix(const Eigen::MatrixXd& queries, const Eigen::MatrixXd& gallery,
                                DistanceMetric metric = DistanceMetric::cosine);

struct RankingResult {
    // Per evaluated query: valid gallery indices by increasing distance, ties by index.
    std::vector<std::vector<Index>> orderings;
    std::vector<Index> evaluated_queries;
    std::vector<double> average_precision;
    std::vector<double> cmc;  // cmc[k] = fraction with a first hit within rank k + 1
    double mean_ap = 0.0;
    double rank1 = 0.0;
    std::size_t skipped_queries = 0;

    double cmc_at(std::size_t rank) const;
};

/// Single-query protocol: gallery entries sharing identity and camera with the
/// query are dropped; queries left without a relevant entry are skipped and counted.
RankingResult evaluate(const Eigen::MatrixXd& distances, const EmbeddingSet& queries, const EmbeddingSet& gallery);
RankingResult evaluate(const EmbeddingSet& queries, const EmbeddingSet& gallery,
                       DistanceMetric metric = DistanceMetric::cosine);

struct RerankOptions {
    int k1 = 20;
    int k2 = 6;
    double lambda = 0.3;
    void validate() const;
};

/// k-reciprocal re-ranking. The result blends the Jaccard distance of expanded
/// reciprocal neighbour sets with the original query-gallery distance, the latter
/// weighted by lambda. Distances are cosine over the raw embeddings.
Eigen::MatrixXd rerank_k_reciprocal(const Eigen::MatrixXd& queries, const Eigen::MatrixXd& gallery,
                                    const RerankOptions& options = {});

struct EmbedOptions {
    Index height = 160;
    Index width = 64;
    double pixel_mean = kDefaultPixelMean;
    double pixel_std = kDefaultPixelStd;
    Index batch = 32;
};

/// Output embeddings of `images` in eval mode without recording a graph.
template <typename S>
Eigen::MatrixXd embed_images(Model<S>& model, std::span<const Image> images, const EmbedOptions& options = {});

/// concat(embed(image), embed(hflip(image))), renormalized to unit length.
template <typename S>
Eigen::MatrixXd flip_concat_embedding(Model<S>& model, std::span<const Image> images,
                                      const EmbedOptions& options = {});

/// Embeds every record of a split and attaches identities and cameras.
template <typename S>
EmbeddingSet embed_split(Model<S>& model, std::span<const LabeledImage> records, bool flip,
                         const EmbedOptions& options = {});

// Dump layout: u32 count, u32 dim, then per record u32 identity, u32 camera and
// dim f32 values, all little-endian. The distractor identity is stored as 0xFFFFFFFF.
std::string encode_embeddings(const EmbeddingSet& set);
EmbeddingSet decode_embeddings(const std::string& bytes);
void save_embeddings(const EmbeddingSet& set, const std::filesystem::path& path);
EmbeddingSet load_embeddings(const std::filesystem::path& path);

}  // namespace rmnet
