#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "rmnet/data.hpp"
#include "rmnet/evaluation.hpp"
#include "rmnet/losses.hpp"
#include "rmnet/model.hpp"

namespace rmnet {

struct MiningConfig {
    enum class Ranking { plain, weighted };

    int samples_per_identity = 16;  // k
    double keep_fraction = 0.5;
    Ranking ranking = Ranking::plain;
    std::array<double, 3> score_weights{1.0, 1.0, 1.0};  // glob, center, gpush

    void validate() const;
};

struct AugmentParams {
    double flip_probability = 0.5;
    double erase_probability = 0.0;
    double erase_area_min = 0.02;
    double erase_area_max = 0.02;
    double erase_aspect_min = 0.3;
    double erase_aspect_max = 3.3;
    Index crop_jitter = 0;

    void validate() const;
};

// Five-level difficulty ladder. Level l of 0..4 erases with probability
// 0.5 l / 4, area fraction up to 0.02 + 0.23 l / 4 and crop jitter 2 l pixels.
class AugmentationSchedule {
public:
    static constexpr int kLevels = 5;

    explicit AugmentationSchedule(double flip_probability = 0.5, int level = 0);

    int level() const { return level_; }
    void advance();
    // Raises ContractError if asked to move backwards.
    void set_level(int level);
    AugmentParams params() const { return params_at(level_, flip_probability_); }

    static AugmentParams params_at(int level, double flip_probability);

private:
    double flip_probability_;
    int level_;
};

struct EraseRegion {
    bool applied = false;
    Index top = 0;
    Index left = 0;
    Index height = 0;
    Index width = 0;
};

struct Augmented {
    Image image;
    bool flipped = false;
    Index offset_y = 0;  // crop origin relative to the centered crop
    Index offset_x = 0;
    EraseRegion erase;
};

/// flip -> jittered crop of height x width -> random erase with uniform noise.
/// Crop windows reaching past the border repeat the edge pixels.
Augmented augment(const Image& image, Index height, Index width, const AugmentParams& params, std::uint64_t seed);

struct Candidate {
    std::size_t source = 0;  // index into the training records
    int label = 0;
    Image image;
};

/// Exactly k augmented candidates per class, ordered by class. Draws without
/// replacement while a class has images to spare, with replacement after.
std::vector<Candidate> sample_round(std::span<const LabeledImage> train, int num_classes, const MiningConfig& mining,
                                    const AugmentParams& augment_params, Index height, Index width,
                                    std::uint64_t seed);

// Per-candidate summands of the glob, center and gpush losses.
struct CandidateLosses {
    Eigen::VectorXd glob;
    Eigen::VectorXd center;
    Eigen::VectorXd gpush;
};

/// Per-sample score w1 glob + w2 center + w3 gpush. Weighted ranking divides
/// each term by its running magnitude (floored) first. The push loss takes no part.
Eigen::VectorXd score_candidates(const CandidateLosses& losses, const MiningConfig& mining,
                                 const LossVector& magnitudes = {1.0, 1.0, 1.0, 1.0}, double floor = 0.05);

/// ceil(keep_fraction n) indices of the highest scores, best first, ties to the lower index.
std::vector<std::size_t> select_hardest(std::span<const double> scores, double keep_fraction);

/// Shuffles `selected` into batches of `batch_size` (a short tail joins the
/// previous batch) and swaps entries until every batch holds two identities.
std::vector<std::vector<std::size_t>> compose_batches(std::span<const std::size_t> selected,
                                                      std::span<const int> labels, int batch_size,
                                                      std::uint64_t seed);

struct TrainSchedule {
    double initial_lr = 1e-2;
    double decay = 0.1;
    long period = 50000;
    long dropout_disable_iteration = -1;  // negative keeps dropout on
    double momentum = 0.9;

    double lr(long iteration) const;
    bool dropout_active(long iteration) const {
        return dropout_disable_iteration < 0 || iteration < dropout_disable_iteration;
    }
    // Decay every quarter of the run, dropout off for the last fifth.
    static TrainSchedule scaled(long total_iterations);
    void validate() const;
};

template <typename S>
struct OptimizerState {
    double momentum = 0.9;
    long iteration = 0;
    std::map<std::string, Buffer<S>> velocity;
};

/// v <- mu v + g, p <- p - lr(t) v for every named tensor, then t += 1.
/// A non-finite gradient aborts before anything changes and names the tensor.
template <typename S>
void sgd_step(std::vector<NamedTensor<S>>& params, OptimizerState<S>& state, const TrainSchedule& schedule);

struct LossConfig {
    double scale = 30.0;
    double am_margin = 0.35;
    bool smart_margin = true;
    double push_margin = 0.35;   // fixed kind
    double margin_beta = 1.0;    // smart kind
    double margin_min = 0.1;
    double margin_max = 0.6;
    LossWeights weights;
    double center_lr = 0.5;

    void validate() const;
};

struct TrainConfig {
    Index height = 160;
    Index width = 64;
    double pixel_mean = kDefaultPixelMean;
    double pixel_std = kDefaultPixelStd;
    int rounds = 40;
    int batch_size = 64;
    double flip_probability = 0.5;
    MiningConfig mining;
    LossConfig loss;
    TrainSchedule schedule;
    bool scale_schedule = true;  // derive period and dropout cut from the run length
    int eval_every = 0;          // rounds between evaluation snapshots, 0 for none
    double loss_ema_momentum = 0.98;  // per-iteration smoothing of the logged total loss
    std::uint64_t seed = 1;

    void validate() const;
};

// One optimizer step.
struct IterationRecord {
    long iteration = 0;
    int round = 0;
    double lr = 0.0;
    LossVector terms{};
    LossVector weights{};
    double total = 0.0;
    double total_ema = 0.0;
};

struct RoundRecord {
    int round = 0;
    int difficulty = 0;
    std::size_t candidates = 0;
    std::size_t selected = 0;
    double mean_score = 0.0;
    double total_ema = 0.0;
    bool evaluated = false;
    double map = 0.0;
    double rank1 = 0.0;
};

/// Mining rounds of sample, score, select, train on the hardest and raise
/// difficulty. All randomness is derived from the seed and the round or
/// iteration index, so a resumed run continues identically.
class Trainer {
public:
    Trainer(Model<float>& model, const Dataset& dataset, TrainConfig config);

    void run(int rounds);
    void run_round();

    int round() const { return round_; }
    long iteration() const { return optimizer_.iteration; }
    const std::vector<IterationRecord>& iterations() const { return iteration_log_; }
    const std::vector<RoundRecord>& rounds() const { return round_log_; }
    const std::vector<std::string>& log_lines() const { return log_lines_; }
    const TrainConfig& config() const { return config_; }
    const AmSoftmaxParams<float>& classifier() const { return am_; }
    const CenterBank<float>& centers() const { return bank_; }
    const TrainSchedule& schedule() const { return schedule_; }

    // Called with every log line as it is produced.
    void set_log_sink(std::function<void(const std::string&)> sink) { sink_ = std::move(sink); }

    /// Model weights plus `state.*` records holding everything needed to resume.
    ModelParams export_state() const;
    void import_state(const ModelParams& params);

    RankingResult evaluate_now();

private:
    CandidateLosses candidate_losses(const std::vector<Candidate>& candidates);
    void train_batch(const std::vector<Candidate>& candidates, const std::vector<std::size_t>& batch);
    void emit(std::string line);

    Model<float>& model_;
    const Dataset& dataset_;
    TrainConfig config_;
    TrainSchedule schedule_;
    AmSoftmaxParams<float> am_;
    CenterBank<float> bank_;
    MarginPolicy policy_;
    LossWeights weights_;
    OptimizerState<float> optimizer_;
    AugmentationSchedule augmentation_;
    int round_ = 0;
    double total_ema_ = 0.0;
    bool total_ema_ready_ = false;
    std::vector<IterationRecord> iteration_log_;
    std::vector<RoundRecord> round_log_;
    std::vector<std::string> log_lines_;
    std::function<void(const std::string&)> sink_;
};

}  // namespace rmnet
