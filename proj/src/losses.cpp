#include "rmnet/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "rmnet/random.hpp"

namespace rmnet {

namespace {

using MatrixD = Eigen::MatrixXd;

constexpr double kUnitTolerance = 1e-3;

template <typename S>
MatrixD as_matrix(const Tensor<S>& t) {
    return Eigen::Map<const MatrixR<S>>(t.raw(), t.dim(0), t.dim(1)).template cast<double>();
}

template <typename S>
void accumulate(Node<S>& node, const MatrixD& delta) {
    if (!node.requires_grad) return;
    Eigen::Map<MatrixR<S>> g(node.grad_buffer().data(), delta.rows(), delta.cols());
    g += delta.cast<S>();
}

template <typename S>
void check_embeddings(const char* op, const Tensor<S>& embeddings, std::span<const int> labels) {
    if (embeddings.rank() != 2) {
        throw DimensionError(std::string(op) + ": embeddings must have rank 2, got " +
                             shape_string(embeddings.shape()));
    }
    if (static_cast<Index>(labels.size()) != embeddings.dim(0)) {
        std::ostringstream os;
        os << op << ": " << labels.size() << " labels for " << embeddings.dim(0) << " embeddings";
        throw DimensionError(os.str());
    }
}

void check_labels(const char* op, std::span<const int> labels, Index classes) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= classes) {
            std::ostringstream os;
            os << op << ": label " << labels[i] << " at position " << i << " is outside [0, " << classes << ")";
            throw IndexError(os.str());
        }
    }
}

template <typename S>
void check_centers(const char* op, const Tensor<S>& embeddings, const Tensor<S>& centers) {
    if (centers.rank() != 2 || centers.dim(1) != embeddings.dim(1)) {
        std::ostringstream os;
        os << op << ": centers " << shape_string(centers.shape()) << " do not match embedding width "
           << embeddings.dim(1);
        throw DimensionError(os.str());
    }
}

void check_unit_rows(const char* op, const char* what, const MatrixD& m) {
    for (Index i = 0; i < m.rows(); ++i) {
        const double norm = m.row(i).norm();
        if (std::abs(norm - 1.0) > kUnitTolerance) {
            std::ostringstream os;
            os << op << ": " << what << " " << i << " has norm " << norm << ", expected unit norm";
            throw ContractError(os.str());
        }
    }
}

MatrixD gather_rows(const MatrixD& table, std::span<const int> labels) {
    MatrixD out(static_cast<Index>(labels.size()), table.cols());
    for (std::size_t i = 0; i < labels.size(); ++i) out.row(static_cast<Index>(i)) = table.row(labels[i]);
    return out;
}

std::size_t distinct_count(std::span<const int> labels) {
    std::vector<int> sorted(labels.begin(), labels.end());
    std::sort(sorted.begin(), sorted.end());
    return static_cast<std::size_t>(std::unique(sorted.begin(), sorted.end()) - sorted.begin());
}

template <typename S>
Tensor<S> scalar_result(const char* op, double value, std::vector<std::shared_ptr<Node<S>>> inputs,
                        std::function<void(Node<S>&)> backward) {
    Buffer<S> v(1);
    v[0] = static_cast<S>(value);
    return make_result<S>(op, {1}, std::move(v), std::move(inputs), std::move(backward));
}

template <typename S>
Tensor<S> zero_loss() {
    return Tensor<S>({1}, S(0));
}

// Softmax over s * (cos - m onehot) and the per-sample negative log-likelihood.
struct AmForward {
    MatrixD probabilities;
    Eigen::VectorXd per_sample;
};

AmForward am_forward(const MatrixD& f, const MatrixD& w, std::span<const int> labels, double s, double m) {
    MatrixD logits = s * (f * w);
    for (std::size_t i = 0; i < labels.size(); ++i) logits(static_cast<Index>(i), labels[i]) -= s * m;
    AmForward out;
    out.probabilities.resize(logits.rows(), logits.cols());
    out.per_sample.resize(logits.rows());
    for (Index i = 0; i < logits.rows(); ++i) {
        const double top = logits.row(i).maxCoeff();
        const Eigen::RowVectorXd e = (logits.row(i).array() - top).exp().matrix();
        const double total = e.sum();
        out.probabilities.row(i) = e / total;
        out.per_sample[i] = std::log(total) + top - logits(i, labels[static_cast<std::size_t>(i)]);
    }
    return out;
}

template <typename S>
void check_am_inputs(const char* op, const Tensor<S>& embeddings, std::span<const int> labels,
                     const AmSoftmaxParams<S>& params) {
    check_embeddings(op, embeddings, labels);
    if (params.weight.rank() != 2 || params.weight.dim(0) != embeddings.dim(1)) {
        std::ostringstream os;
        os << op << ": class weight " << shape_string(params.weight.shape()) << " does not match embedding width "
           << embeddings.dim(1);
        throw DimensionError(os.str());
    }
    check_labels(op, labels, params.num_classes());
}

// Hinge activity for glob-push: A(i, k) = 1 where the margin is violated, k != y_i.
struct GlobPushForward {
    MatrixD active;
    Eigen::VectorXd per_sample;
};

GlobPushForward glob_push_forward(const MatrixD& f, const MatrixD& c, std::span<const int> labels,
                                  const MarginPolicy& policy) {
    const Index n = f.rows(), classes = c.rows();
    const MatrixD sim = f * c.transpose();
    GlobPushForward out;
    out.active = MatrixD::Zero(n, classes);
    out.per_sample = Eigen::VectorXd::Zero(n);
    for (Index i = 0; i < n; ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        const double d_own = 1.0 - sim(i, y);
        double total = 0.0;
        for (Index k = 0; k < classes; ++k) {
            if (k == y) continue;
            const double h = policy.margin(y, static_cast<int>(k)) + d_own - (1.0 - sim(i, k));
            if (h > 0.0) {
                total += h;
                out.active(i, k) = 1.0;
            }
        }
        out.per_sample[i] = total / static_cast<double>(classes - 1);
    }
    return out;
}

}  // namespace

template <typename S>
AmSoftmaxParams<S> AmSoftmaxParams<S>::init(Index dim, Index classes, std::uint64_t seed, double scale,
                                            double margin) {
    Rng rng(derive_seed(seed, 0xa3));
    Buffer<S> values(dim * classes);
    for (Index i = 0; i < values.size(); ++i) values[i] = static_cast<S>(rng.normal());
    AmSoftmaxParams p;
    p.weight = Tensor<S>({dim, classes}, std::move(values), true);
    p.scale = scale;
    p.margin = margin;
    p.renormalize();
    return p;
}

template <typename S>
void AmSoftmaxParams<S>::renormalize() {
    Eigen::Map<MatrixR<S>> w(weight.raw(), weight.dim(0), weight.dim(1));
    for (Index k = 0; k < w.cols(); ++k) {
        const S norm = w.col(k).norm();
        if (norm > S(0)) w.col(k) /= norm;
    }
}

template <typename S>
CenterBank<S>::CenterBank(Index classes, Index dim)
    : centers_({classes, dim}, S(0), true), initialized_(static_cast<std::size_t>(classes), 0) {}

template <typename S>
bool CenterBank<S>::all_initialized() const {
    return std::all_of(initialized_.begin(), initialized_.end(), [](std::uint8_t v) { return v != 0; });
}

template <typename S>
void CenterBank<S>::set_initialized_mask(std::vector<std::uint8_t> mask) {
    if (static_cast<Index>(mask.size()) != num_classes()) {
        throw DimensionError("center bank mask has " + std::to_string(mask.size()) + " entries for " +
                             std::to_string(num_classes()) + " classes");
    }
    initialized_ = std::move(mask);
}

template <typename S>
void CenterBank<S>::observe(const Tensor<S>& embeddings, std::span<const int> labels) {
    check_embeddings("CenterBank::observe", embeddings, labels);
    check_centers("CenterBank::observe", embeddings, centers_);
    check_labels("CenterBank::observe", labels, num_classes());
    const Index d = dim();
    Eigen::Map<MatrixR<S>> c(centers_.raw(), num_classes(), d);
    Eigen::Map<const MatrixR<S>> f(embeddings.raw(), embeddings.dim(0), d);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto& flag = initialized_[static_cast<std::size_t>(labels[i])];
        if (flag) continue;
        const S norm = f.row(static_cast<Index>(i)).norm();
        if (norm <= S(0)) continue;
        c.row(labels[i]) = f.row(static_cast<Index>(i)) / norm;
        flag = 1;
    }
}

template <typename S>
void update_centers(CenterBank<S>& bank, double learning_rate) {
    auto& centers = bank.centers();
    if (!centers.has_grad()) return;
    const Index classes = bank.num_classes(), d = bank.dim();
    Eigen::Map<MatrixR<S>> c(centers.raw(), classes, d);
    Eigen::Map<const MatrixR<S>> g(centers.grad().data(), classes, d);
    for (Index k = 0; k < classes; ++k) {
        if ((g.row(k).array() == S(0)).all()) continue;
        c.row(k) -= static_cast<S>(learning_rate) * g.row(k);
        const S norm = c.row(k).norm();
        if (norm > S(0)) c.row(k) /= norm;
    }
    centers.zero_grad();
}

MarginPolicy MarginPolicy::fixed(double margin) {
    if (!(margin >= 0.0)) throw ConfigError("margin must be non-negative, got " + std::to_string(margin));
    MarginPolicy p;
    p.kind_ = Kind::fixed;
    p.base_ = margin;
    return p;
}

MarginPolicy MarginPolicy::smart(Index classes, double beta, double m_min, double m_max, double momentum) {
    if (!(m_min >= 0.0 && m_min <= m_max)) {
        throw ConfigError("smart margin needs 0 <= m_min <= m_max, got " + std::to_string(m_min) + " and " +
                          std::to_string(m_max));
    }
    if (!(beta >= 0.0)) throw ConfigError("smart margin beta must be non-negative");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("smart margin momentum must lie in [0, 1)");
    MarginPolicy p;
    p.kind_ = Kind::smart;
    p.base_ = m_min;
    p.beta_ = beta;
    p.m_min_ = m_min;
    p.m_max_ = m_max;
    p.momentum_ = momentum;
    p.spread_.assign(static_cast<std::size_t>(classes), 0.0);
    p.seen_.assign(static_cast<std::size_t>(classes), 0);
    return p;
}

double MarginPolicy::margin(int identity, int /*competitor*/) const {
    if (kind_ == Kind::fixed) return base_;
    const double spread = spread_.at(static_cast<std::size_t>(identity));
    return std::clamp(base_ + beta_ * spread, m_min_, m_max_);
}

void MarginPolicy::observe(int identity, double spread) {
    if (kind_ == Kind::fixed) return;
    auto& value = spread_.at(static_cast<std::size_t>(identity));
    auto& seen = seen_[static_cast<std::size_t>(identity)];
    value = seen ? momentum_ * value + (1.0 - momentum_) * spread : spread;
    seen = 1;
}

void MarginPolicy::set_spreads(std::vector<double> spreads, std::vector<std::uint8_t> observed) {
    if (spreads.size() != spread_.size()) throw DimensionError("spread table size does not match class count");
    if (!observed.empty() && observed.size() != spread_.size()) {
        throw DimensionError("observed mask size does not match class count");
    }
    spread_ = std::move(spreads);
    if (observed.empty()) {
        std::fill(seen_.begin(), seen_.end(), 1);
    } else {
        seen_ = std::move(observed);
    }
}

void LossWeights::validate() const {
    double total = 0.0;
    for (double b : base) {
        if (!(b >= 0.0) || !std::isfinite(b)) throw ConfigError("loss weights must be finite and non-negative");
        total += b;
    }
    if (total <= 0.0) throw ConfigError("at least one loss weight must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("loss weight momentum must lie in [0, 1)");
    if (!(magnitude_floor > 0.0)) throw ConfigError("loss magnitude floor must be positive");
}

void LossWeights::observe(const LossVector& values) {
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double v = std::abs(values[i]);
        ema[i] = ema_ready ? momentum * ema[i] + (1.0 - momentum) * v : v;
    }
    ema_ready = true;
}

LossVector LossWeights::current() const {
    if (mode == Mode::fixed || !ema_ready) return base;
    LossVector w{};
    double raw_total = 0.0, base_total = 0.0;
    for (std::size_t i = 0; i < base.size(); ++i) {
        base_total += base[i];
        if (base[i] == 0.0) continue;
        w[i] = base[i] / std::max(ema[i], magnitude_floor);
        raw_total += w[i];
    }
    for (double& v : w) v *= base_total / raw_total;
    return w;
}

template <typename S>
Eigen::VectorXd am_softmax_per_sample(const Tensor<S>& embeddings, std::span<const int> labels,
                                      const AmSoftmaxParams<S>& params) {
    check_am_inputs("am_softmax", embeddings, labels, params);
    return am_forward(as_matrix(embeddings), as_matrix(params.weight), labels, params.scale, params.margin)
        .per_sample;
}

template <typename S>
Tensor<S> am_softmax(const Tensor<S>& embeddings, std::span<const int> labels, const AmSoftmaxParams<S>& params) {
    check_am_inputs("am_softmax", embeddings, labels, params);
    const MatrixD f = as_matrix(embeddings);
    const MatrixD w = as_matrix(params.weight);
    check_unit_rows("am_softmax", "embedding", f);
    check_unit_rows("am_softmax", "class weight column", w.transpose());
    const double s = params.scale;
    AmForward fw = am_forward(f, w, labels, s, params.margin);
    const Index n = f.rows();
    std::vector<int> y(labels.begin(), labels.end());
    auto probs = std::make_shared<MatrixD>(std::move(fw.probabilities));
    auto backward = [probs, y, s, n](Node<S>& self) {
        auto& fn = *self.inputs[0];
        auto& wn = *self.inputs[1];
        MatrixD dcos = *probs;
        for (Index i = 0; i < n; ++i) dcos(i, y[static_cast<std::size_t>(i)]) -= 1.0;
        dcos *= s * static_cast<double>(self.grad[0]) / static_cast<double>(n);
        const Index d = fn.shape[1], classes = wn.shape[1];
        const auto fv = Eigen::Map<const MatrixR<S>>(fn.value.data(), n, d).template cast<double>();
        const auto wv = Eigen::Map<const MatrixR<S>>(wn.value.data(), d, classes).template cast<double>();
        if (fn.requires_grad) accumulate(fn, dcos * wv.transpose());
        if (wn.requires_grad) accumulate(wn, fv.transpose() * dcos);
    };
    return scalar_result<S>("am_softmax", fw.per_sample.mean(), {embeddings.node(), params.weight.node()},
                            backward);
}

template <typename S>
Eigen::VectorXd center_loss_per_sample(const Tensor<S>& embeddings, std::span<const int> labels,
                                       const Tensor<S>& centers) {
    check_embeddings("center_loss", embeddings, labels);
    check_centers("center_loss", embeddings, centers);
    check_labels("center_loss", labels, centers.dim(0));
    const MatrixD f = as_matrix(embeddings);
    const MatrixD cy = gather_rows(as_matrix(centers), labels);
    return (1.0 - (f.array() * cy.array()).rowwise().sum()).matrix();
}

template <typename S>
Tensor<S> center_loss(const Tensor<S>& embeddings, std::span<const int> labels, const Tensor<S>& centers) {
    const Eigen::VectorXd per_sample = center_loss_per_sample(embeddings, labels, centers);
    const Index n = embeddings.dim(0);
    std::vector<int> y(labels.begin(), labels.end());
    auto backward = [y, n](Node<S>& self) {
        auto& fn = *self.inputs[0];
        auto& cn = *self.inputs[1];
        const Index d = fn.shape[1], classes = cn.shape[0];
        const double g = static_cast<double>(self.grad[0]) / static_cast<double>(n);
        const auto fv = Eigen::Map<const MatrixR<S>>(fn.value.data(), n, d).template cast<double>();
        const auto cv = Eigen::Map<const MatrixR<S>>(cn.value.data(), classes, d).template cast<double>();
        if (fn.requires_grad) accumulate(fn, -g * gather_rows(cv, y));
        if (cn.requires_grad) {
            MatrixD dc = MatrixD::Zero(classes, d);
            for (Index i = 0; i < n; ++i) dc.row(y[static_cast<std::size_t>(i)]) -= g * fv.row(i);
            accumulate(cn, dc);
        }
    };
    return scalar_result<S>("center_loss", per_sample.mean(), {embeddings.node(), centers.node()}, backward);
}

template <typename S>
Tensor<S> push_plus(const Tensor<S>& embeddings, std::span<const int> labels, const Tensor<S>& centers,
                    const MarginPolicy& policy) {
    check_embeddings("push_plus", embeddings, labels);
    check_centers("push_plus", embeddings, centers);
    check_labels("push_plus", labels, centers.dim(0));
    if (distinct_count(labels) < 2) {
        warn("push_plus: batch holds a single identity, loss is zero");
        return zero_loss<S>();
    }
    const Index n = embeddings.dim(0);
    const MatrixD f = as_matrix(embeddings);
    const MatrixD cy = gather_rows(as_matrix(centers), labels);
    const Eigen::VectorXd d_own = (1.0 - (f.array() * cy.array()).rowwise().sum()).matrix();
    const MatrixD sim = f * f.transpose();
    auto active = std::make_shared<MatrixD>(MatrixD::Zero(n, n));
    double total = 0.0;
    Index pairs = 0;
    for (Index i = 0; i < n; ++i) {
        const int yi = labels[static_cast<std::size_t>(i)];
        for (Index j = 0; j < n; ++j) {
            const int yj = labels[static_cast<std::size_t>(j)];
            if (yi == yj) continue;
            ++pairs;
            const double h = policy.margin(yi, yj) + d_own[i] - (1.0 - sim(i, j));
            if (h > 0.0) {
                total += h;
                (*active)(i, j) = 1.0;
            }
        }
    }
    *active /= static_cast<double>(pairs);
    std::vector<int> y(labels.begin(), labels.end());
    auto backward = [active, y, n](Node<S>& self) {
        auto& fn = *self.inputs[0];
        auto& cn = *self.inputs[1];
        const Index d = fn.shape[1], classes = cn.shape[0];
        const double g = static_cast<double>(self.grad[0]);
        const auto fv = Eigen::Map<const MatrixR<S>>(fn.value.data(), n, d).template cast<double>();
        const auto cv = Eigen::Map<const MatrixR<S>>(cn.value.data(), classes, d).template cast<double>();
        const Eigen::VectorXd row_sum = active->rowwise().sum();
        if (fn.requires_grad) {
            MatrixD df = (*active + active->transpose()) * fv;
            df -= row_sum.asDiagonal() * gather_rows(cv, y);
            accumulate(fn, g * df);
        }
        if (cn.requires_grad) {
            MatrixD dc = MatrixD::Zero(classes, d);
            for (Index i = 0; i < n; ++i) dc.row(y[static_cast<std::size_t>(i)]) -= row_sum[i] * fv.row(i);
            accumulate(cn, g * dc);
        }
    };
    return scalar_result<S>("push_plus", total / static_cast<double>(pairs), {embeddings.node(), centers.node()},
                            backward);
}

template <typename S>
Eigen::VectorXd glob_push_per_sample(const Tensor<S>& embeddings, std::span<const int> labels,
                                     const Tensor<S>& centers, const MarginPolicy& policy) {
    check_embeddings("glob_push_plus", embeddings, labels);
    check_centers("glob_push_plus", embeddings, centers);
    check_labels("glob_push_plus", labels, centers.dim(0));
    if (centers.dim(0) < 2) return Eigen::VectorXd::Zero(embeddings.dim(0));
    return glob_push_forward(as_matrix(embeddings), as_matrix(centers), labels, policy).per_sample;
}

template <typename S>
Tensor<S> glob_push_plus(const Tensor<S>& embeddings, std::span<const int> labels, const Tensor<S>& centers,
                         const MarginPolicy& policy) {
    check_embeddings("glob_push_plus", embeddings, labels);
    check_centers("glob_push_plus", embeddings, centers);
    check_labels("glob_push_plus", labels, centers.dim(0));
    const Index n = embeddings.dim(0), classes = centers.dim(0);
    if (classes < 2) {
        warn("glob_push_plus: a single class has no competitors, loss is zero");
        return zero_loss<S>();
    }
    GlobPushForward fw = glob_push_forward(as_matrix(embeddings), as_matrix(centers), labels, policy);
    auto active = std::make_shared<MatrixD>(fw.active / static_cast<double>(n * (classes - 1)));
    std::vector<int> y(labels.begin(), labels.end());
    auto backward = [active, y, n, classes](Node<S>& self) {
        auto& fn = *self.inputs[0];
        auto& cn = *self.inputs[1];
        const Index d = fn.shape[1];
        const double g = static_cast<double>(self.grad[0]);
        const auto fv = Eigen::Map<const MatrixR<S>>(fn.value.data(), n, d).template cast<double>();
        const auto cv = Eigen::Map<const MatrixR<S>>(cn.value.data(), classes, d).template cast<double>();
        const Eigen::VectorXd row_sum = active->rowwise().sum();
        if (fn.requires_grad) {
            MatrixD df = *active * cv;
            df -= row_sum.asDiagonal() * gather_rows(cv, y);
            accumulate(fn, g * df);
        }
        if (cn.requires_grad) {
            MatrixD dc = active->transpose() * fv;
            for (Index i = 0; i < n; ++i) dc.row(y[static_cast<std::size_t>(i)]) -= row_sum[i] * fv.row(i);
            accumulate(cn, g * dc);
        }
    };
    return scalar_result<S>("glob_push_plus", fw.per_sample.mean(), {embeddings.node(), centers.node()},
                            backward);
}

template <typename S>
TotalLoss<S> total_loss(const LossBatch<S>& batch, const AmSoftmaxParams<S>& am, const CenterBank<S>& bank,
                        const MarginPolicy& policy, const LossVector& weights) {
    const std::span<const int> labels(batch.labels);
    std::array<Tensor<S>, 4> terms{
        am_softmax(batch.output, labels, am),
        center_loss(batch.internal, labels, bank.centers()),
        glob_push_plus(batch.internal, labels, bank.centers(), policy),
        push_plus(batch.internal, labels, bank.centers(), policy),
    };
    TotalLoss<S> out;
    out.weights = weights;
    for (std::size_t i = 0; i < terms.size(); ++i) {
        out.terms[i] = static_cast<double>(terms[i].item());
        Tensor<S> weighted = scale(terms[i], static_cast<S>(weights[i]));
        out.total = i == 0 ? weighted : add(out.total, weighted);
    }
    return out;
}

#define RMNET_INSTANTIATE_LOSSES(S)                                                                          \
    template struct AmSoftmaxParams<S>;                                                                     \
    template class CenterBank<S>;                                                                           \
    template void update_centers<S>(CenterBank<S>&, double);                                                \
    template Tensor<S> am_softmax<S>(const Tensor<S>&, std::span<const int>, const AmSoftmaxParams<S>&);    \
    template Tensor<S> center_loss<S>(const Tensor<S>&, std::span<const int>, const Tensor<S>&);            \
    template Tensor<S> push_plus<S>(const Tensor<S>&, std::span<const int>, const Tensor<S>&,               \
                                    const MarginPolicy&);                                                   \
    template Tensor<S> glob_push_plus<S>(const Tensor<S>&, std::span<const int>, const Tensor<S>&,          \
                                         const MarginPolicy&);                                              \
    template Eigen::VectorXd am_softmax_per_sample<S>(const Tensor<S>&, std::span<const int>,               \
                                                      const AmSoftmaxParams<S>&);                           \
    template Eigen::VectorXd center_loss_per_sample<S>(const Tensor<S>&, std::span<const int>,              \
                                                       const Tensor<S>&);                                   \
    template Eigen::VectorXd glob_push_per_sample<S>(const Tensor<S>&, std::span<const int>,                \
                                                     const Tensor<S>&, const MarginPolicy&);                \
    template TotalLoss<S> total_loss<S>(const LossBatch<S>&, const AmSoftmaxParams<S>&, const CenterBank<S>&, \
                                        const MarginPolicy&, const LossVector&);

RMNET_INSTANTIATE_LOSSES(float)
RMNET_INSTANTIATE_LOSSES(double)

}  // namespace rmnet
