#include "rmnet/evaluation.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "byte_io.hpp"

namespace rmnet {

namespace {

constexpr double kUnitTolerance = 1e-5;

// Row indices of `row` sorted by value, ties by index.
std::vector<Index> argsort_row(const Eigen::MatrixXd& m, Index row) {
    std::vector<Index> order(static_cast<std::size_t>(m.cols()));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return m(row, a) < m(row, b); });
    return order;
}

// Entries of forward[0..k] whose own top-k list contains `probe`.
std::vector<Index> reciprocal_neighbours(const std::vector<std::vector<Index>>& rank, Index probe, int k) {
    std::vector<Index> out;
    const auto& forward = rank[static_cast<std::size_t>(probe)];
    const std::size_t reach = std::min<std::size_t>(static_cast<std::size_t>(k) + 1, forward.size());
    for (std::size_t i = 0; i < reach; ++i) {
        const auto& back = rank[static_cast<std::size_t>(forward[i])];
        const std::size_t back_reach = std::min<std::size_t>(static_cast<std::size_t>(k) + 1, back.size());
        if (std::find(back.begin(), back.begin() + static_cast<std::ptrdiff_t>(back_reach), probe) !=
            back.begin() + static_cast<std::ptrdiff_t>(back_reach)) {
            out.push_back(forward[i]);
        }
    }
    return out;
}

template <typename S>
Tensor<S> embed_batch(Model<S>& model, std::span<const Image> images, const EmbedOptions& options) {
    Tensor<S> input = to_model_input<S>(images, options.height, options.width, options.pixel_mean, options.pixel_std);
    return model.forward(input, ForwardOptions{}).output;
}

}  // namespace

void EmbeddingSet::validate(const char* what) const {
    if (static_cast<Index>(identities.size()) != size() || static_cast<Index>(cameras.size()) != size()) {
        throw DimensionError(std::string(what) + ": label count does not match embedding rows");
    }
    for (Index i = 0; i < size(); ++i) {
        const double norm = embeddings.row(i).norm();
        if (std::abs(norm - 1.0) > kUnitTolerance) {
            std::ostringstream os;
            os << what << ": embedding " << i << " has norm " << norm << ", expected unit norm";
            throw ContractError(os.str());
        }
    }
}

Eigen::MatrixXd distance_matrix(const Eigen::MatrixXd& queries, const Eigen::MatrixXd& gallery, DistanceMetric metric) {
    if (queries.cols() != gallery.cols()) {
        throw DimensionError("distance_matrix: query dim " + std::to_string(queries.cols()) + " vs gallery dim " +
                             std::to_string(gallery.cols()));
    }
    if (metric == DistanceMetric::cosine) {
        return (1.0 - (queries * gallery.transpose()).array()).matrix();
    }
    Eigen::MatrixXd d(queries.rows(), gallery.rows());
    for (Index i = 0; i < queries.rows(); ++i) {
        for (Index j = 0; j < gallery.rows(); ++j) d(i, j) = (queries.row(i) - gallery.row(j)).norm();
    }
    return d;
}

double RankingResult::cmc_at(std::size_t rank) const {
    if (cmc.empty() || rank == 0) return 0.0;
    return cmc[std::min(rank, cmc.size()) - 1];
}

RankingResult evaluate(const Eigen::MatrixXd& distances, const EmbeddingSet& queries, const EmbeddingSet& gallery) {
    const Index nq = static_cast<Index>(queries.identities.size());
    const Index ng = static_cast<Index>(gallery.identities.size());
    if (distances.rows() != nq || distances.cols() != ng) {
        throw DimensionError("evaluate: distance matrix does not match query and gallery sizes");
    }
    RankingResult result;
    std::vector<std::size_t> hits_at(static_cast<std::size_t>(ng), 0);
    for (Index q = 0; q < nq; ++q) {
        const int qid = queries.identities[static_cast<std::size_t>(q)];
        const int qcam = queries.cameras[static_cast<std::size_t>(q)];
        std::vector<Index> order;
        std::size_t relevant = 0;
        for (Index g = 0; g < ng; ++g) {
            const int gid = gallery.identities[static_cast<std::size_t>(g)];
            if (gid == qid && gallery.cameras[static_cast<std::size_t>(g)] == qcam) continue;
            order.push_back(g);
            relevant += gid == qid;
        }
        if (relevant == 0) {
            ++result.skipped_queries;
            continue;
        }
        std::stable_sort(order.begin(), order.end(),
                         [&](Index a, Index b) { return distances(q, a) < distances(q, b); });
        double precision_sum = 0.0;
        std::size_t hits = 0, first_hit = 0;
        for (std::size_t r = 0; r < order.size(); ++r) {
            if (gallery.identities[static_cast<std::size_t>(order[r])] != qid) continue;
            if (hits == 0) first_hit = r;
            ++hits;
            precision_sum += static_cast<double>(hits) / static_cast<double>(r + 1);
        }
        ++hits_at[first_hit];
        result.average_precision.push_back(precision_sum / static_cast<double>(relevant));
        result.orderings.push_back(std::move(order));
        result.evaluated_queries.push_back(q);
    }
    const std::size_t evaluated = result.evaluated_queries.size();
    if (result.skipped_queries > 0) {
        warn("evaluate: " + std::to_string(result.skipped_queries) + " queries have no valid gallery match");
    }
    result.cmc.assign(static_cast<std::size_t>(ng), 0.0);
    if (evaluated == 0) return result;
    std::size_t cumulative = 0;
    for (std::size_t r = 0; r < hits_at.size(); ++r) {
        cumulative += hits_at[r];
        result.cmc[r] = static_cast<double>(cumulative) / static_cast<double>(evaluated);
    }
    result.mean_ap = std::accumulate(result.average_precision.begin(), result.average_precision.end(), 0.0) /
                     static_cast<double>(evaluated);
    result.rank1 = result.cmc_at(1);
    return result;
}

RankingResult evaluate(const EmbeddingSet& queries, const EmbeddingSet& gallery, DistanceMetric metric) {
    queries.validate("query set");
    gallery.validate("gallery set");
    return evaluate(distance_matrix(queries.embeddings, gallery.embeddings, metric), queries, gallery);
}

void RerankOptions::validate() const {
    if (!(k2 >= 1 && k1 > k2)) {
        throw ConfigError("rerank needs k1 > k2 >= 1, got k1=" + std::to_string(k1) + " k2=" + std::to_string(k2));
    }
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("rerank lambda must lie in [0, 1]");
}

Eigen::MatrixXd rerank_k_reciprocal(const Eigen::MatrixXd& queries, const Eigen::MatrixXd& gallery,
                                    const RerankOptions& options) {
    options.validate();
    if (queries.cols() != gallery.cols()) throw DimensionError("rerank: query and gallery dims differ");
    const Index nq = queries.rows(), ng = gallery.rows(), n = nq + ng;
    int k1 = options.k1, k2 = options.k2;
    if (k1 >= ng) {
        k1 = static_cast<int>(std::max<Index>(ng - 1, 1));
        warn("rerank: k1 exceeds gallery size, clamped to " + std::to_string(k1));
    }
    k2 = std::min(k2, k1);

    Eigen::MatrixXd all(n, queries.cols());
    all << queries, gallery;
    const Eigen::MatrixXd dist = distance_matrix(all, all);
    std::vector<std::vector<Index>> rank(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) rank[static_cast<std::size_t>(i)] = argsort_row(dist, i);

    Eigen::MatrixXd v = Eigen::MatrixXd::Zero(n, n);
    const int half = static_cast<int>(std::nearbyint(k1 / 2.0));
    for (Index i = 0; i < n; ++i) {
        const std::vector<Index> core = reciprocal_neighbours(rank, i, k1);
        std::vector<Index> expansion = core;
        for (Index candidate : core) {
            const std::vector<Index> cand = reciprocal_neighbours(rank, candidate, half);
            std::size_t shared = 0;
            for (Index c : cand) shared += std::find(core.begin(), core.end(), c) != core.end();
            if (static_cast<double>(shared) > 2.0 / 3.0 * static_cast<double>(cand.size())) {
                expansion.insert(expansion.end(), cand.begin(), cand.end());
            }
        }
        std::sort(expansion.begin(), expansion.end());
        expansion.erase(std::unique(expansion.begin(), expansion.end()), expansion.end());
        double total = 0.0;
        for (Index j : expansion) total += std::exp(-dist(i, j));
        for (Index j : expansion) v(i, j) = std::exp(-dist(i, j)) / total;
    }
    if (k2 > 1) {
        Eigen::MatrixXd expanded = Eigen::MatrixXd::Zero(n, n);
        for (Index i = 0; i < n; ++i) {
            for (int r = 0; r < k2; ++r) expanded.row(i) += v.row(rank[static_cast<std::size_t>(i)][static_cast<std::size_t>(r)]);
            expanded.row(i) /= static_cast<double>(k2);
        }
        v = std::move(expanded);
    }

    // The blend reads the query-gallery block computed on its own: a block cut
    // from the joint product can differ in the last bit.
    const Eigen::MatrixXd original = distance_matrix(queries, gallery);
    Eigen::MatrixXd result(nq, ng);
    for (Index q = 0; q < nq; ++q) {
        for (Index g = 0; g < ng; ++g) {
            const double overlap = v.row(q).cwiseMin(v.row(nq + g)).sum();
            const double jaccard = 1.0 - overlap / (2.0 - overlap);
            result(q, g) = jaccard * (1.0 - options.lambda) + original(q, g) * options.lambda;
        }
    }
    return result;
}

template <typename S>
Eigen::MatrixXd embed_images(Model<S>& model, std::span<const Image> images, const EmbedOptions& options) {
    NoGradGuard no_grad;
    const Index dim = model.spec().head.embedding_dim;
    Eigen::MatrixXd out(static_cast<Index>(images.size()), dim);
    for (std::size_t start = 0; start < images.size(); start += static_cast<std::size_t>(options.batch)) {
        const std::size_t count = std::min(images.size() - start, static_cast<std::size_t>(options.batch));
        Tensor<S> e = embed_batch(model, images.subspan(start, count), options);
        out.middleRows(static_cast<Index>(start), static_cast<Index>(count)) =
            Eigen::Map<const MatrixR<S>>(e.raw(), static_cast<Index>(count), dim).template cast<double>();
    }
    return out;
}

template <typename S>
Eigen::MatrixXd flip_concat_embedding(Model<S>& model, std::span<const Image> images, const EmbedOptions& options) {
    std::vector<Image> flipped;
    flipped.reserve(images.size());
    for (const Image& img : images) flipped.push_back(flip_horizontal(img));
    const Eigen::MatrixXd a = embed_images(model, images, options);
    const Eigen::MatrixXd b = embed_images(model, std::span<const Image>(flipped), options);
    Eigen::MatrixXd out(a.rows(), a.cols() + b.cols());
    out << a, b;
    out.rowwise().normalize();
    return out;
}

template <typename S>
EmbeddingSet embed_split(Model<S>& model, std::span<const LabeledImage> records, bool flip,
                         const EmbedOptions& options) {
    EmbeddingSet set;
    std::vector<Image> images;
    images.reserve(records.size());
    for (const auto& r : records) {
        images.push_back(load_pixels(r));
        set.identities.push_back(r.identity);
        set.cameras.push_back(r.camera);
    }
    set.embeddings = flip ? flip_concat_embedding(model, std::span<const Image>(images), options)
                          : embed_images(model, std::span<const Image>(images), options);
    return set;
}

std::string encode_embeddings(const EmbeddingSet& set) {
    using detail::put_le;
    std::string out;
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(set.size()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(set.dim()));
    for (Index i = 0; i < set.size(); ++i) {
        put_le(out, static_cast<std::uint32_t>(set.identities[static_cast<std::size_t>(i)]));
        put_le(out, static_cast<std::uint32_t>(set.cameras[static_cast<std::size_t>(i)]));
        for (Index d = 0; d < set.dim(); ++d) {
            put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(set.embeddings(i, d))));
        }
    }
    return out;
}

EmbeddingSet decode_embeddings(const std::string& bytes) {
    detail::ByteReader in(bytes, "embedding dump");
    const auto count = in.get<std::uint32_t>("count");
    const auto dim = in.get<std::uint32_t>("dim");
    EmbeddingSet set;
    set.embeddings.resize(count, dim);
    for (std::uint32_t i = 0; i < count; ++i) {
        set.identities.push_back(static_cast<int>(in.get<std::uint32_t>("identity")));
        set.cameras.push_back(static_cast<int>(in.get<std::uint32_t>("camera")));
        for (std::uint32_t d = 0; d < dim; ++d) {
            set.embeddings(i, d) = std::bit_cast<float>(in.get<std::uint32_t>("value"));
        }
    }
    if (!in.done()) throw LoadError("embedding dump has trailing bytes");
    return set;
}

void save_embeddings(const EmbeddingSet& set, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    const std::string bytes = encode_embeddings(set);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + path.string());
}

EmbeddingSet load_embeddings(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return decode_embeddings(buffer.str());
}

#define RMNET_INSTANTIATE_EVAL(S)                                                                            \
    template Eigen::MatrixXd embed_images<S>(Model<S>&, std::span<const Image>, const EmbedOptions&);       \
    template Eigen::MatrixXd flip_concat_embedding<S>(Model<S>&, std::span<const Image>, const EmbedOptions&); \
    template EmbeddingSet embed_split<S>(Model<S>&, std::span<const LabeledImage>, bool, const EmbedOptions&);

RMNET_INSTANTIATE_EVAL(float)
RMNET_INSTANTIATE_EVAL(double)

}  // namespace rmnet
