#include "rmnet/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "rmnet/random.hpp"

namespace rmnet {

namespace {

void check_probability(double p, const char* what) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(fmt::format("{} must lie in [0, 1], got {}", what, p));
}

// Tags for the per-round and per-iteration seed streams.
constexpr std::uint64_t kRoundStream = 0x1000;
constexpr std::uint64_t kDropoutStream = 0x2000;
constexpr std::uint64_t kClassifierStream = 0x3000;

}  // namespace

void MiningConfig::validate() const {
    if (samples_per_identity < 1) throw ConfigError("mining: samples per identity must be at least 1");
    if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) {
        throw ConfigError(fmt::format("mining: keep fraction must lie in (0, 1], got {}", keep_fraction));
    }
    for (double w : score_weights) {
        if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("mining: score weights must be finite and non-negative");
    }
}

void AugmentParams::validate() const {
    check_probability(flip_probability, "flip probability");
    check_probability(erase_probability, "erase probability");
    if (!(erase_area_min > 0.0 && erase_area_min <= erase_area_max && erase_area_max <= 0.5)) {
        throw ConfigError(fmt::format("erase area range [{}, {}] must satisfy 0 < min <= max <= 0.5", erase_area_min,
                                      erase_area_max));
    }
    if (!(erase_aspect_min > 0.0 && erase_aspect_min <= erase_aspect_max)) {
        throw ConfigError("erase aspect range must be positive and ordered");
    }
    if (crop_jitter < 0) throw ConfigError("crop jitter must be non-negative");
}

AugmentationSchedule::AugmentationSchedule(double flip_probability, int level)
    : flip_probability_(flip_probability), level_(level) {
    check_probability(flip_probability, "flip probability");
    if (level < 0 || level >= kLevels) throw ConfigError(fmt::format("difficulty level {} outside 0..4", level));
}

void AugmentationSchedule::advance() { level_ = std::min(level_ + 1, kLevels - 1); }

void AugmentationSchedule::set_level(int level) {
    if (level < level_) {
        throw ContractError(fmt::format("difficulty cannot decrease from {} to {}", level_, level));
    }
    if (level >= kLevels) throw ConfigError(fmt::format("difficulty level {} outside 0..4", level));
    level_ = level;
}

AugmentParams AugmentationSchedule::params_at(int level, double flip_probability) {
    const double t = static_cast<double>(level) / (kLevels - 1);
    AugmentParams p;
    p.flip_probability = flip_probability;
    p.erase_probability = 0.5 * t;
    p.erase_area_min = 0.02;
    p.erase_area_max = 0.02 + 0.23 * t;
    p.crop_jitter = static_cast<Index>(std::lround(8.0 * t));
    return p;
}

Augmented augment(const Image& image, Index height, Index width, const AugmentParams& params, std::uint64_t seed) {
    params.validate();
    if (image.height < height || image.width < width) {
        throw ConfigError(fmt::format("crop target {}x{} exceeds image {}x{}", height, width, image.height, image.width));
    }
    Rng rng(seed);
    Augmented out;
    // Every draw is taken unconditionally so later draws do not shift with earlier outcomes.
    out.flipped = rng.bernoulli(params.flip_probability);
    const Index span = 2 * params.crop_jitter + 1;
    out.offset_y = static_cast<Index>(rng.index(static_cast<std::uint64_t>(span))) - params.crop_jitter;
    out.offset_x = static_cast<Index>(rng.index(static_cast<std::uint64_t>(span))) - params.crop_jitter;
    const bool erase = rng.bernoulli(params.erase_probability);
    const double area_fraction = rng.uniform(params.erase_area_min, params.erase_area_max);
    const double aspect =
        std::exp(rng.uniform(std::log(params.erase_aspect_min), std::log(params.erase_aspect_max)));
    const double place_y = rng.uniform();
    const double place_x = rng.uniform();

    const Image& src = image;
    const Index top = (src.height - height) / 2 + out.offset_y;
    const Index left = (src.width - width) / 2 + out.offset_x;
    out.image = Image(height, width);
    for (Index y = 0; y < height; ++y) {
        const Index sy = std::clamp<Index>(top + y, 0, src.height - 1);
        for (Index x = 0; x < width; ++x) {
            Index sx = std::clamp<Index>(left + x, 0, src.width - 1);
            if (out.flipped) sx = src.width - 1 - sx;
            for (Index c = 0; c < 3; ++c) out.image.at(y, x, c) = src.at(sy, sx, c);
        }
    }

    if (erase) {
        const double area = area_fraction * static_cast<double>(height * width);
        EraseRegion& r = out.erase;
        r.applied = true;
        r.height = std::clamp<Index>(std::lround(std::sqrt(area * aspect)), 1, height);
        r.width = std::clamp<Index>(std::lround(std::sqrt(area / aspect)), 1, width);
        r.top = std::min<Index>(static_cast<Index>(place_y * static_cast<double>(height - r.height + 1)), height - r.height);
        r.left = std::min<Index>(static_cast<Index>(place_x * static_cast<double>(width - r.width + 1)), width - r.width);
        Rng noise(derive_seed(seed, 1));
        for (Index y = r.top; y < r.top + r.height; ++y)
            for (Index x = r.left; x < r.left + r.width; ++x)
                for (Index c = 0; c < 3; ++c) out.image.at(y, x, c) = static_cast<float>(noise.uniform());
    }
    return out;
}

std::vector<Candidate> sample_round(std::span<const LabeledImage> train, int num_classes, const MiningConfig& mining,
                                    const AugmentParams& augment_params, Index height, Index width,
                                    std::uint64_t seed) {
    mining.validate();
    augment_params.validate();
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(num_classes));
    for (std::size_t i = 0; i < train.size(); ++i) {
        const int label = train[i].label;
        if (label < 0 || label >= num_classes) {
            throw IndexError(fmt::format("training record '{}' has label {} outside [0, {})", train[i].name, label,
                                         num_classes));
        }
        by_class[static_cast<std::size_t>(label)].push_back(i);
    }

    const auto k = static_cast<std::size_t>(mining.samples_per_identity);
    std::vector<Candidate> out;
    out.reserve(by_class.size() * k);
    Rng rng(seed);
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        auto pool = by_class[c];
        if (pool.empty()) throw DatasetError(fmt::format("training class {} has no images", c));
        for (std::size_t i = pool.size(); i > 1; --i) std::swap(pool[i - 1], pool[rng.index(i)]);
        for (std::size_t j = 0; j < k; ++j) {
            const std::size_t source = j < pool.size() ? pool[j] : pool[rng.index(pool.size())];
            Image img = load_pixels(train[source]);
            if (img.height != height || img.width != width) img = resize_bilinear(img, height, width);
            const std::uint64_t draw = derive_seed(seed, out.size());
            out.push_back({source, static_cast<int>(c), augment(img, height, width, augment_params, draw).image});
        }
    }
    return out;
}

Eigen::VectorXd score_candidates(const CandidateLosses& losses, const MiningConfig& mining,
                                 const LossVector& magnitudes, double floor) {
    const Index n = losses.glob.size();
    if (losses.center.size() != n || losses.gpush.size() != n) {
        throw DimensionError("score_candidates: per-sample loss vectors differ in length");
    }
    std::array<double, 3> w = mining.score_weights;
    if (mining.ranking == MiningConfig::Ranking::weighted) {
        w[0] /= std::max(magnitudes[kGlob], floor);
        w[1] /= std::max(magnitudes[kCenter], floor);
        w[2] /= std::max(magnitudes[kGPush], floor);
    }
    return w[0] * losses.glob + w[1] * losses.center + w[2] * losses.gpush;
}

std::vector<std::size_t> select_hardest(std::span<const double> scores, double keep_fraction) {
    if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) {
        throw ConfigError(fmt::format("keep fraction must lie in (0, 1], got {}", keep_fraction));
    }
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!std::isfinite(scores[i])) throw NumericError(fmt::format("mining score {} is not finite", i));
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    const auto keep = static_cast<std::size_t>(std::ceil(keep_fraction * static_cast<double>(scores.size()) - 1e-9));
    order.resize(std::min(keep, order.size()));
    return order;
}

namespace {

bool has_other_label(const std::vector<std::size_t>& batch, std::span<const int> labels, int label,
                     std::size_t skip = SIZE_MAX) {
    for (std::size_t p = 0; p < batch.size(); ++p) {
        if (p != skip && labels[batch[p]] != label) return true;
    }
    return false;
}

}  // namespace

std::vector<std::vector<std::size_t>> compose_batches(std::span<const std::size_t> selected,
                                                      std::span<const int> labels, int batch_size,
                                                      std::uint64_t seed) {
    if (batch_size < 2) throw ConfigError("batch size must be at least 2");
    std::vector<std::size_t> order(selected.begin(), selected.end());
    for (std::size_t i : order) {
        if (i >= labels.size()) throw IndexError(fmt::format("selected index {} outside the candidate set", i));
    }
    Rng rng(seed);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);

    const auto b = static_cast<std::size_t>(batch_size);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < order.size(); start += b) {
        const std::size_t end = std::min(order.size(), start + b);
        if (end - start < b / 2 && !batches.empty()) {
            batches.back().insert(batches.back().end(), order.begin() + static_cast<std::ptrdiff_t>(start), order.end());
            break;
        }
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
    }

    for (std::size_t i = 0; i < batches.size(); ++i) {
        auto& batch = batches[i];
        const int label = labels[batch[0]];
        if (has_other_label(batch, labels, label)) continue;
        bool fixed = false;
        for (std::size_t o = 0; o < batches.size() && !fixed; ++o) {
            if (o == i) continue;
            auto& other = batches[o];
            for (std::size_t p = 0; p < other.size() && !fixed; ++p) {
                if (labels[other[p]] == label || !has_other_label(other, labels, label, p)) continue;
                std::swap(batch.back(), other[p]);
                fixed = true;
            }
        }
        if (!fixed && batch.size() > 1) warn(fmt::format("batch {} holds a single identity; push losses are inactive", i));
    }
    return batches;
}

double TrainSchedule::lr(long iteration) const {
    return initial_lr * std::pow(decay, static_cast<double>(iteration / period));
}

TrainSchedule TrainSchedule::scaled(long total_iterations) {
    TrainSchedule s;
    s.period = std::max(1L, total_iterations / 4);
    s.dropout_disable_iteration = static_cast<long>(0.8 * static_cast<double>(total_iterations));
    return s;
}

void TrainSchedule::validate() const {
    if (!(initial_lr > 0.0) || !std::isfinite(initial_lr)) throw ConfigError("initial learning rate must be positive");
    if (!(decay > 0.0 && decay <= 1.0)) throw ConfigError("learning-rate decay must lie in (0, 1]");
    if (period < 1) throw ConfigError("learning-rate decay period must be at least 1");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
}

template <typename S>
void sgd_step(std::vector<NamedTensor<S>>& params, OptimizerState<S>& state, const TrainSchedule& schedule) {
    for (const auto& p : params) {
        if (p.tensor.has_grad() && !p.tensor.grad().isFinite().all()) {
            throw NumericError(fmt::format("non-finite gradient in '{}' at iteration {}", p.path, state.iteration));
        }
        auto it = state.velocity.find(p.path);
        if (it != state.velocity.end() && it->second.size() != p.tensor.size()) {
            throw DimensionError(fmt::format("momentum buffer for '{}' holds {} values, parameter has {}", p.path,
                                             it->second.size(), p.tensor.size()));
        }
    }
    const S lr = static_cast<S>(schedule.lr(state.iteration));
    const S mu = static_cast<S>(state.momentum);
    for (auto& p : params) {
        auto [it, fresh] = state.velocity.try_emplace(p.path, Buffer<S>::Zero(p.tensor.size()));
        Buffer<S>& v = it->second;
        v *= mu;
        if (p.tensor.has_grad()) v += p.tensor.grad();
        p.tensor.data() -= lr * v;
    }
    ++state.iteration;
}

template void sgd_step(std::vector<NamedTensor<float>>&, OptimizerState<float>&, const TrainSchedule&);
template void sgd_step(std::vector<NamedTensor<double>>&, OptimizerState<double>&, const TrainSchedule&);

void LossConfig::validate() const {
    if (!(scale > 0.0)) throw ConfigError("AM-Softmax scale must be positive");
    if (!(am_margin >= 0.0)) throw ConfigError("AM-Softmax margin must be non-negative");
    if (!(push_margin >= 0.0)) throw ConfigError("push margin must be non-negative");
    if (!(margin_min >= 0.0 && margin_min <= margin_max)) throw ConfigError("smart margin bounds must be ordered");
    if (!(center_lr > 0.0)) throw ConfigError("center learning rate must be positive");
    weights.validate();
}

void TrainConfig::validate() const {
    if (height < 16 || width < 16) throw ConfigError(fmt::format("input resolution {}x{} is too small", height, width));
    if (rounds < 1) throw ConfigError("rounds must be at least 1");
    if (batch_size < 2) throw ConfigError("batch size must be at least 2");
    if (!(pixel_std > 0.0)) throw ConfigError("pixel std must be positive");
    if (eval_every < 0) throw ConfigError("eval_every must be non-negative");
    if (!(loss_ema_momentum >= 0.0 && loss_ema_momentum < 1.0)) throw ConfigError("loss EMA momentum must lie in [0, 1)");
    check_probability(flip_probability, "flip probability");
    mining.validate();
    loss.validate();
    schedule.validate();
}

namespace {

// Optimizer steps one round produces: batches of `batch` with a short tail folded in.
long batches_per_round(std::size_t selected, int batch) {
    const auto b = static_cast<std::size_t>(batch);
    const std::size_t full = selected / b;
    const std::size_t tail = selected % b;
    if (full == 0) return 1;
    return static_cast<long>(full + (tail >= b / 2 ? 1 : 0));
}

}  // namespace

Trainer::Trainer(Model<float>& model, const Dataset& dataset, TrainConfig config)
    : model_(model),
      dataset_(dataset),
      config_(std::move(config)),
      policy_(MarginPolicy::fixed(0.35)),
      augmentation_(0.5) {
    config_.validate();
    const int classes = dataset_.num_classes();
    if (classes < 2) throw DatasetError(fmt::format("training needs at least 2 identities, dataset has {}", classes));
    const Index dim = model_.spec().head.embedding_dim;

    schedule_ = config_.schedule;
    if (config_.scale_schedule) {
        const auto candidates = static_cast<std::size_t>(classes) * static_cast<std::size_t>(config_.mining.samples_per_identity);
        const auto selected =
            static_cast<std::size_t>(std::ceil(config_.mining.keep_fraction * static_cast<double>(candidates) - 1e-9));
        const long total = static_cast<long>(config_.rounds) * batches_per_round(selected, config_.batch_size);
        TrainSchedule scaled = TrainSchedule::scaled(total);
        schedule_.period = scaled.period;
        schedule_.dropout_disable_iteration = scaled.dropout_disable_iteration;
    }
    am_ = AmSoftmaxParams<float>::init(dim, classes, derive_seed(config_.seed, kClassifierStream), config_.loss.scale,
                                       config_.loss.am_margin);
    bank_ = CenterBank<float>(classes, dim);
    policy_ = config_.loss.smart_margin
                  ? MarginPolicy::smart(classes, config_.loss.margin_beta, config_.loss.margin_min, config_.loss.margin_max)
                  : MarginPolicy::fixed(config_.loss.push_margin);
    weights_ = config_.loss.weights;
    optimizer_.momentum = schedule_.momentum;
    augmentation_ = AugmentationSchedule(config_.flip_probability);
}

void Trainer::emit(std::string line) {
    if (sink_) sink_(line);
    log_lines_.push_back(std::move(line));
}

void Trainer::run(int rounds) {
    for (int i = 0; i < rounds; ++i) run_round();
}

CandidateLosses Trainer::candidate_losses(const std::vector<Candidate>& candidates) {
    const auto n = static_cast<Index>(candidates.size());
    const Index dim = model_.spec().head.embedding_dim;
    Tensor<float> internal({n, dim});
    Tensor<float> output({n, dim});
    std::vector<int> labels(candidates.size());
    {
        NoGradGuard no_grad;
        const auto step = static_cast<std::size_t>(config_.batch_size);
        for (std::size_t start = 0; start < candidates.size(); start += step) {
            const std::size_t end = std::min(candidates.size(), start + step);
            std::vector<Image> images;
            for (std::size_t i = start; i < end; ++i) images.push_back(candidates[i].image);
            const auto x = to_model_input<float>(images, config_.height, config_.width, config_.pixel_mean,
                                                 config_.pixel_std);
            const auto emb = model_.forward(x, ForwardOptions{Mode::eval});
            const auto offset = static_cast<Index>(start) * dim;
            internal.data().segment(offset, emb.internal.size()) = emb.internal.data();
            output.data().segment(offset, emb.output.size()) = emb.output.data();
        }
    }
    for (std::size_t i = 0; i < candidates.size(); ++i) labels[i] = candidates[i].label;
    bank_.observe(internal, labels);
    CandidateLosses out;
    out.glob = am_softmax_per_sample(output, labels, am_);
    out.center = center_loss_per_sample(internal, labels, bank_.centers());
    out.gpush = glob_push_per_sample(internal, labels, bank_.centers(), policy_);
    return out;
}

void Trainer::train_batch(const std::vector<Candidate>& candidates, const std::vector<std::size_t>& batch) {
    const long t = optimizer_.iteration;
    std::vector<Image> images;
    std::vector<int> labels;
    for (std::size_t i : batch) {
        images.push_back(candidates[i].image);
        labels.push_back(candidates[i].label);
    }
    const auto x = to_model_input<float>(images, config_.height, config_.width, config_.pixel_mean, config_.pixel_std);
    ForwardOptions options;
    options.mode = Mode::train;
    options.dropout_seed = derive_seed(config_.seed, kDropoutStream + static_cast<std::uint64_t>(t));
    options.dropout_enabled = schedule_.dropout_active(t);
    const auto emb = model_.forward(x, options);
    bank_.observe(emb.internal, labels);

    const LossVector weights = weights_.current();
    const auto loss = total_loss(LossBatch<float>{emb.internal, emb.output, labels}, am_, bank_, policy_, weights);
    const double total = loss.total.item();
    if (!std::isfinite(total)) throw NumericError(fmt::format("total loss is not finite at iteration {}", t));

    // Spread of every identity in the batch around its center, before the update moves it.
    const Eigen::VectorXd spread = center_loss_per_sample(emb.internal.detach(), labels, bank_.centers());

    model_.zero_grad();
    am_.weight.zero_grad();
    bank_.centers().zero_grad();
    loss.total.backward();

    auto params = model_.parameters();
    params.push_back({"classifier.weight", am_.weight});
    sgd_step(params, optimizer_, schedule_);
    am_.renormalize();
    update_centers(bank_, config_.loss.center_lr);
    weights_.observe(loss.terms);

    std::vector<double> sum(static_cast<std::size_t>(bank_.num_classes()), 0.0);
    std::vector<int> count(sum.size(), 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        sum[static_cast<std::size_t>(labels[i])] += spread[static_cast<Index>(i)];
        ++count[static_cast<std::size_t>(labels[i])];
    }
    for (std::size_t c = 0; c < sum.size(); ++c) {
        if (count[c] > 0) policy_.observe(static_cast<int>(c), sum[c] / count[c]);
    }

    const double mu = config_.loss_ema_momentum;
    total_ema_ = total_ema_ready_ ? mu * total_ema_ + (1.0 - mu) * total : total;
    total_ema_ready_ = true;

    IterationRecord rec;
    rec.iteration = t;
    rec.round = round_;
    rec.lr = schedule_.lr(t);
    rec.terms = loss.terms;
    rec.weights = loss.weights;
    rec.total = total;
    rec.total_ema = total_ema_;
    iteration_log_.push_back(rec);
    emit(fmt::format("iter={} round={} lr={:.6g} glob={:.6f} center={:.6f} gpush={:.6f} push={:.6f} "
                     "w=[{:.4f},{:.4f},{:.4f},{:.4f}] total={:.6f} ema={:.6f}",
                     t, round_, rec.lr, rec.terms[kGlob], rec.terms[kCenter], rec.terms[kGPush], rec.terms[kPush],
                     weights[0], weights[1], weights[2], weights[3], total, total_ema_));
}

void Trainer::run_round() {
    const std::uint64_t round_seed = derive_seed(config_.seed, kRoundStream + static_cast<std::uint64_t>(round_));
    const auto candidates = sample_round(dataset_.train, dataset_.num_classes(), config_.mining, augmentation_.params(),
                                         config_.height, config_.width, derive_seed(round_seed, 1));
    const CandidateLosses losses = candidate_losses(candidates);
    const LossVector magnitudes = weights_.ema_ready ? weights_.ema : LossVector{1.0, 1.0, 1.0, 1.0};
    const Eigen::VectorXd scores = score_candidates(losses, config_.mining, magnitudes, weights_.magnitude_floor);
    const auto selected =
        select_hardest(std::span<const double>(scores.data(), static_cast<std::size_t>(scores.size())),
                       config_.mining.keep_fraction);
    std::vector<int> labels(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) labels[i] = candidates[i].label;
    const auto batches = compose_batches(selected, labels, config_.batch_size, derive_seed(round_seed, 2));
    for (const auto& batch : batches) train_batch(candidates, batch);

    RoundRecord rec;
    rec.round = round_;
    rec.difficulty = augmentation_.level();
    rec.candidates = candidates.size();
    rec.selected = selected.size();
    rec.mean_score = scores.mean();
    rec.total_ema = total_ema_;
    if (config_.eval_every > 0 && (round_ + 1) % config_.eval_every == 0) {
        const RankingResult r = evaluate_now();
        rec.evaluated = true;
        rec.map = r.mean_ap;
        rec.rank1 = r.rank1;
    }
    round_log_.push_back(rec);
    std::string line = fmt::format("round={} difficulty={} candidates={} selected={} score={:.6f} ema={:.6f}",
                                   rec.round, rec.difficulty, rec.candidates, rec.selected, rec.mean_score, rec.total_ema);
    if (rec.evaluated) line += fmt::format(" mAP={:.4f} rank1={:.4f}", rec.map, rec.rank1);
    emit(std::move(line));

    augmentation_.advance();
    ++round_;
}

RankingResult Trainer::evaluate_now() {
    EmbedOptions options;
    options.height = config_.height;
    options.width = config_.width;
    options.pixel_mean = config_.pixel_mean;
    options.pixel_std = config_.pixel_std;
    options.batch = config_.batch_size;
    const EmbeddingSet q = embed_split(model_, dataset_.query, false, options);
    const EmbeddingSet g = embed_split(model_, dataset_.gallery, false, options);
    return evaluate(q, g);
}

namespace {

ParamRecord record(const std::string& path, DType dtype, std::vector<double> values) {
    ParamRecord r;
    r.path = path;
    r.dtype = dtype;
    r.shape = {static_cast<Index>(values.size())};
    r.values = std::move(values);
    return r;
}

const std::vector<double>& state_values(const ModelParams& params, const std::string& path, std::size_t expected) {
    const auto& r = params.at(path);
    if (r.values.size() != expected) {
        throw LoadError(fmt::format("'{}' holds {} values, expected {}", path, r.values.size(), expected));
    }
    return r.values;
}

template <typename S>
void load_tensor(const ModelParams& params, const std::string& path, Tensor<S>& dst) {
    const auto& v = state_values(params, path, static_cast<std::size_t>(dst.size()));
    for (std::size_t i = 0; i < v.size(); ++i) dst.data()[static_cast<Index>(i)] = static_cast<S>(v[i]);
}

}  // namespace

ModelParams Trainer::export_state() const {
    ModelParams p = model_.export_params();
    p.set_tensor("state.classifier.weight", am_.weight);
    p.set_tensor("state.centers", bank_.centers());
    const auto& mask = bank_.initialized_mask();
    p.set(record("state.centers.initialized", DType::u64, std::vector<double>(mask.begin(), mask.end())));
    p.set(record("state.margin.spreads", DType::f64, policy_.spreads()));
    const auto& observed = policy_.observed();
    p.set(record("state.margin.observed", DType::u64, std::vector<double>(observed.begin(), observed.end())));
    p.set(record("state.loss_weights.ema", DType::f64, {weights_.ema.begin(), weights_.ema.end()}));
    p.set(record("state.counters", DType::u64,
                 {static_cast<double>(optimizer_.iteration), static_cast<double>(round_),
                  static_cast<double>(augmentation_.level()), weights_.ema_ready ? 1.0 : 0.0,
                  total_ema_ready_ ? 1.0 : 0.0}));
    p.set(record("state.total_ema", DType::f64, {total_ema_}));
    for (const auto& [path, v] : optimizer_.velocity) p.set_buffer("state.velocity." + path, v);
    return p;
}

void Trainer::import_state(const ModelParams& params) {
    model_.import_params(params);
    load_tensor(params, "state.classifier.weight", am_.weight);
    load_tensor(params, "state.centers", bank_.centers());
    const auto& mask = state_values(params, "state.centers.initialized", static_cast<std::size_t>(bank_.num_classes()));
    bank_.set_initialized_mask({mask.begin(), mask.end()});
    if (policy_.kind() == MarginPolicy::Kind::smart) {
        const std::size_t classes = policy_.spreads().size();
        const auto& observed = state_values(params, "state.margin.observed", classes);
        policy_.set_spreads(state_values(params, "state.margin.spreads", classes), {observed.begin(), observed.end()});
    }
    const auto& ema = state_values(params, "state.loss_weights.ema", 4);
    std::copy(ema.begin(), ema.end(), weights_.ema.begin());
    const auto& counters = state_values(params, "state.counters", 5);
    optimizer_.iteration = static_cast<long>(counters[0]);
    round_ = static_cast<int>(counters[1]);
    augmentation_ = AugmentationSchedule(config_.flip_probability, static_cast<int>(counters[2]));
    weights_.ema_ready = counters[3] != 0.0;
    total_ema_ready_ = counters[4] != 0.0;
    total_ema_ = state_values(params, "state.total_ema", 1)[0];

    optimizer_.velocity.clear();
    auto model_params = model_.parameters();
    model_params.push_back({"classifier.weight", am_.weight});
    for (const auto& np : model_params) {
        const std::string path = "state.velocity." + np.path;
        if (!params.contains(path)) continue;
        const auto& v = state_values(params, path, static_cast<std::size_t>(np.tensor.size()));
        Buffer<float> buf(np.tensor.size());
        for (std::size_t i = 0; i < v.size(); ++i) buf[static_cast<Index>(i)] = static_cast<float>(v[i]);
        optimizer_.velocity.emplace(np.path, std::move(buf));
    }
}

}  // namespace rmnet
