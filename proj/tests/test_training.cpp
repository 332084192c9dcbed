#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "rmnet/training.hpp"
#include "test_util.hpp"

using namespace rmnet;

namespace {

Image gradient_image(Index h, Index w, double phase = 0.0) {
    Image img(h, w);
    for (Index y = 0; y < h; ++y)
        for (Index x = 0; x < w; ++x)
            for (Index c = 0; c < 3; ++c) {
                img.at(y, x, c) = static_cast<float>(0.5 + 0.5 * std::sin(phase + 0.3 * y + 0.7 * x + 1.1 * c));
            }
    return img;
}

AugmentParams no_augmentation() {
    AugmentParams p;
    p.flip_probability = 0.0;
    p.erase_probability = 0.0;
    p.crop_jitter = 0;
    return p;
}

std::vector<LabeledImage> toy_train(int classes, int per_class, Index h, Index w) {
    std::vector<LabeledImage> out;
    for (int c = 0; c < classes; ++c) {
        for (int i = 0; i < per_class; ++i) {
            LabeledImage r;
            r.identity = c + 1;
            r.label = c;
            r.camera = 1 + i % 3;
            r.name = "toy_" + std::to_string(c) + "_" + std::to_string(i);
            r.pixels = std::make_shared<Image>(gradient_image(h, w, c + 0.1 * i));
            out.push_back(std::move(r));
        }
    }
    return out;
}

Eigen::Vector3d unit(double x, double y, double z) { return Eigen::Vector3d(x, y, z).normalized(); }

TrainConfig tiny_config() {
    TrainConfig cfg;
    cfg.height = 32;
    cfg.width = 16;
    cfg.rounds = 3;
    cfg.batch_size = 8;
    cfg.mining.samples_per_identity = 4;
    cfg.seed = 5;
    return cfg;
}

Dataset tiny_dataset() {
    SynthSpec spec;
    spec.num_identities = 4;
    spec.images_per_identity = 12;
    spec.height = 32;
    spec.width = 16;
    spec.pose_shift = 1;
    return generate_synthetic(spec, 21).dataset;
}

}  // namespace

TEST(AugmentationSchedule, LadderEndpointsAndMonotonicity) {
    const auto low = AugmentationSchedule::params_at(0, 0.5);
    EXPECT_DOUBLE_EQ(low.erase_probability, 0.0);
    EXPECT_DOUBLE_EQ(low.erase_area_max, 0.02);
    EXPECT_EQ(low.crop_jitter, 0);
    const auto high = AugmentationSchedule::params_at(4, 0.5);
    EXPECT_DOUBLE_EQ(high.erase_probability, 0.5);
    EXPECT_DOUBLE_EQ(high.erase_area_max, 0.25);
    EXPECT_EQ(high.crop_jitter, 8);

    AugmentationSchedule s;
    int previous = s.level();
    for (int i = 0; i < 10; ++i) {
        s.advance();
        EXPECT_GE(s.level(), previous);
        previous = s.level();
        const auto p = s.params();
        EXPECT_NO_THROW(p.validate());
        EXPECT_LE(p.erase_area_max, 0.5);
    }
    EXPECT_EQ(s.level(), 4);
    EXPECT_THROW(s.set_level(2), ContractError);
}

TEST(Augment, ZeroProbabilitiesGiveCenterCrop) {
    const Image img = gradient_image(20, 12);
    const auto same = augment(img, 20, 12, no_augmentation(), 3);
    EXPECT_EQ(same.image, img);
    EXPECT_FALSE(same.erase.applied);

    const auto crop = augment(img, 16, 8, no_augmentation(), 3);
    for (Index y = 0; y < 16; ++y)
        for (Index x = 0; x < 8; ++x)
            for (Index c = 0; c < 3; ++c) ASSERT_EQ(crop.image.at(y, x, c), img.at(y + 2, x + 2, c));
}

TEST(Augment, DeterministicForSeed) {
    const Image img = gradient_image(24, 12);
    const auto params = AugmentationSchedule::params_at(4, 0.5);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        EXPECT_EQ(augment(img, 24, 12, params, seed).image, augment(img, 24, 12, params, seed).image);
    }
}

TEST(Augment, ForcedFlipTwiceRestoresImage) {
    const Image img = gradient_image(10, 7);
    auto params = no_augmentation();
    params.flip_probability = 1.0;
    const auto once = augment(img, 10, 7, params, 1);
    EXPECT_TRUE(once.flipped);
    EXPECT_EQ(once.image, flip_horizontal(img));
    EXPECT_EQ(augment(once.image, 10, 7, params, 2).image, img);
}

TEST(Augment, ErasedRectangleMatchesRequestedArea) {
    const Image img(64, 32, 2.0f);  // outside the noise range, so erased pixels are recognisable
    for (double area : {0.02, 0.1, 0.25, 0.5}) {
        AugmentParams p = no_augmentation();
        p.erase_probability = 1.0;
        p.erase_area_min = area;
        p.erase_area_max = area;
        for (std::uint64_t seed = 0; seed < 25; ++seed) {
            const auto out = augment(img, 64, 32, p, seed);
            ASSERT_TRUE(out.erase.applied);
            Index erased = 0;
            for (Index y = 0; y < 64; ++y)
                for (Index x = 0; x < 32; ++x) {
                    const bool inside = y >= out.erase.top && y < out.erase.top + out.erase.height &&
                                        x >= out.erase.left && x < out.erase.left + out.erase.width;
                    const bool changed = out.image.at(y, x, 0) != 2.0f;
                    ASSERT_EQ(inside, changed);
                    erased += changed ? 1 : 0;
                }
            EXPECT_EQ(erased, out.erase.height * out.erase.width);
            // Rounding each side moves the area by at most half a row plus half a column.
            const double requested = area * 64 * 32;
            const double slack = 0.5 * (out.erase.height + out.erase.width) + 0.25;
            if (out.erase.height < 64 && out.erase.width < 32) {
                EXPECT_LE(std::abs(static_cast<double>(erased) - requested), slack) << area << " " << seed;
            }
        }
    }
}

TEST(Augment, TargetLargerThanImageIsConfigError) {
    EXPECT_THROW(augment(Image(10, 10), 12, 10, no_augmentation(), 0), ConfigError);
}

TEST(SampleRound, ExactlyKPerIdentity) {
    const auto train = toy_train(10, 3, 16, 8);
    MiningConfig m;
    m.samples_per_identity = 4;
    const auto cands = sample_round(train, 10, m, AugmentationSchedule::params_at(2, 0.5), 16, 8, 9);
    ASSERT_EQ(cands.size(), 40u);
    std::vector<int> per(10, 0);
    for (const auto& c : cands) {
        ++per[static_cast<std::size_t>(c.label)];
        EXPECT_EQ(train[c.source].label, c.label);
    }
    for (int n : per) EXPECT_EQ(n, 4);
    // Three images and k = 4: every image appears before any repeat.
    for (int c = 0; c < 10; ++c) {
        std::set<std::size_t> first3;
        for (int j = 0; j < 3; ++j) first3.insert(cands[static_cast<std::size_t>(4 * c + j)].source);
        EXPECT_EQ(first3.size(), 3u);
    }
}

TEST(SampleRound, SameSeedSameCandidates) {
    const auto train = toy_train(3, 5, 16, 8);
    MiningConfig m;
    m.samples_per_identity = 3;
    const auto params = AugmentationSchedule::params_at(4, 0.5);
    const auto a = sample_round(train, 3, m, params, 16, 8, 4);
    const auto b = sample_round(train, 3, m, params, 16, 8, 4);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].source, b[i].source);
        EXPECT_EQ(a[i].image, b[i].image);
    }
}

TEST(SampleRound, NoAugmentationReturnsOriginals) {
    const auto train = toy_train(4, 2, 16, 8);
    MiningConfig m;
    m.samples_per_identity = 1;
    const auto cands = sample_round(train, 4, m, no_augmentation(), 16, 8, 2);
    ASSERT_EQ(cands.size(), 4u);
    for (const auto& c : cands) EXPECT_EQ(c.image, *train[c.source].pixels);
}

TEST(SampleRound, EmptyIdentityIsDatasetError) {
    const auto train = toy_train(2, 2, 16, 8);
    MiningConfig m;
    EXPECT_THROW(sample_round(train, 3, m, no_augmentation(), 16, 8, 0), DatasetError);
}

TEST(ScoreCandidates, ZeroWeightsGiveZeroScores) {
    CandidateLosses l{Eigen::VectorXd::Random(5).cwiseAbs(), Eigen::VectorXd::Random(5).cwiseAbs(),
                      Eigen::VectorXd::Random(5).cwiseAbs()};
    MiningConfig m;
    m.score_weights = {0.0, 0.0, 0.0};
    EXPECT_EQ(score_candidates(l, m), Eigen::VectorXd::Zero(5));
}

TEST(ScoreCandidates, SampleAtCenterScoresGlobOnly) {
    // Two identities on orthogonal centers, each sample exactly at its center.
    Tensor<double> f = Tensor<double>::from({2, 3}, {1, 0, 0, 0, 1, 0});
    Tensor<double> centers = Tensor<double>::from({2, 3}, {1, 0, 0, 0, 1, 0});
    const std::vector<int> labels{0, 1};
    auto am = AmSoftmaxParams<double>::init(3, 2, 4);
    const auto policy = MarginPolicy::fixed(0.35);
    CandidateLosses l;
    l.glob = am_softmax_per_sample(f, labels, am);
    l.center = center_loss_per_sample(f, labels, centers);
    l.gpush = glob_push_per_sample(f, labels, centers, policy);
    MiningConfig m;
    m.score_weights = {0.7, 2.0, 3.0};
    const Eigen::VectorXd s = score_candidates(l, m);
    for (Index i = 0; i < 2; ++i) EXPECT_NEAR(s[i], 0.7 * l.glob[i], 1e-15);
}

TEST(ScoreCandidates, MatchesPerSampleLoopOnToyCase) {
    const int n = 6;
    const int classes = 3;
    const Index dim = 4;
    const auto f = rmnet::testing::random_tensor<double>({n, dim}, 31, -1, 1, false);
    const auto fn = l2_normalize(f);
    const auto c = l2_normalize(rmnet::testing::random_tensor<double>({classes, dim}, 32, -1, 1, false));
    const std::vector<int> labels{0, 1, 2, 0, 1, 2};
    auto am = AmSoftmaxParams<double>::init(dim, classes, 33);
    const auto policy = MarginPolicy::fixed(0.35);

    CandidateLosses l;
    l.glob = am_softmax_per_sample(fn, labels, am);
    l.center = center_loss_per_sample(fn, labels, c);
    l.gpush = glob_push_per_sample(fn, labels, c, policy);
    MiningConfig m;
    m.score_weights = {0.5, 1.5, 2.5};
    const Eigen::VectorXd s = score_candidates(l, m);

    auto row = [&](const Tensor<double>& t, Index i) {
        Eigen::VectorXd v(dim);
        for (Index d = 0; d < dim; ++d) v[d] = t[i * dim + d];
        return v;
    };
    for (Index i = 0; i < n; ++i) {
        const Eigen::VectorXd fi = row(fn, i);
        const int y = labels[static_cast<std::size_t>(i)];
        // AM-Softmax summand from the definition.
        double denom = 0.0;
        double target = 0.0;
        for (int k = 0; k < classes; ++k) {
            double cosk = 0.0;
            for (Index d = 0; d < dim; ++d) cosk += fi[d] * am.weight[d * classes + k];
            const double logit = am.scale * (k == y ? cosk - am.margin : cosk);
            denom += std::exp(logit);
            if (k == y) target = logit;
        }
        const double glob = -(target - std::log(denom));
        const double dpos = 1.0 - fi.dot(row(c, y));
        double gpush = 0.0;
        for (int k = 0; k < classes; ++k) {
            if (k == y) continue;
            gpush += std::max(0.0, 0.35 + dpos - (1.0 - fi.dot(row(c, k))));
        }
        gpush /= classes - 1;
        EXPECT_NEAR(s[i], 0.5 * glob + 1.5 * dpos + 2.5 * gpush, 1e-9) << i;
    }
}

TEST(ScoreCandidates, PushTermIsExcluded) {
    // f0 and f1 carry different identities and sit close to each other, so the
    // pairwise push hinge is active, yet both are far enough from the competing
    // center that glob-push is inactive.
    const Eigen::Vector3d f0 = unit(0.8, 0.1, std::sqrt(0.35));
    const Eigen::Vector3d f1 = unit(0.1, 0.8, std::sqrt(0.35));
    Tensor<double> f = Tensor<double>::from({2, 3}, {f0[0], f0[1], f0[2], f1[0], f1[1], f1[2]});
    Tensor<double> centers = Tensor<double>::from({2, 3}, {1, 0, 0, 0, 1, 0});
    const std::vector<int> labels{0, 1};
    const auto policy = MarginPolicy::fixed(0.35);
    EXPECT_GT(push_plus(f, labels, centers, policy).item(), 0.0);
    EXPECT_EQ(glob_push_plus(f, labels, centers, policy).item(), 0.0);

    auto am = AmSoftmaxParams<double>::init(3, 2, 8);
    CandidateLosses l{am_softmax_per_sample(f, labels, am), center_loss_per_sample(f, labels, centers),
                      glob_push_per_sample(f, labels, centers, policy)};
    MiningConfig m;
    const Eigen::VectorXd s = score_candidates(l, m);
    for (Index i = 0; i < 2; ++i) EXPECT_NEAR(s[i], l.glob[i] + l.center[i], 1e-12);
}

TEST(ScoreCandidates, WeightedRankingNormalizesByMagnitude) {
    CandidateLosses l{Eigen::Vector2d(2.0, 4.0), Eigen::Vector2d(0.1, 0.3), Eigen::Vector2d(0.0, 0.01)};
    MiningConfig m;
    m.ranking = MiningConfig::Ranking::weighted;
    const Eigen::VectorXd s = score_candidates(l, m, {2.0, 0.2, 0.001, 1.0}, 0.05);
    EXPECT_NEAR(s[0], 2.0 / 2.0 + 0.1 / 0.2 + 0.0, 1e-12);
    EXPECT_NEAR(s[1], 4.0 / 2.0 + 0.3 / 0.2 + 0.01 / 0.05, 1e-12);
}

TEST(SelectHardest, TopHalfOfTen) {
    const std::vector<double> s{0.1, 0.9, 0.3, 0.8, 0.2, 0.7, 0.4, 0.6, 0.0, 0.5};
    EXPECT_EQ(select_hardest(s, 0.5), (std::vector<std::size_t>{1, 3, 5, 7, 9}));
}

TEST(SelectHardest, TiesGoToLowerIndex) {
    const std::vector<double> s(7, 1.0);
    EXPECT_EQ(select_hardest(s, 0.5), (std::vector<std::size_t>{0, 1, 2, 3}));
}

TEST(SelectHardest, MatchesFullSortOracle) {
    Rng rng(77);
    for (int trial = 0; trial < 1000; ++trial) {
        const auto n = static_cast<std::size_t>(1 + rng.index(40));
        std::vector<double> s(n);
        // Coarse values so ties are common.
        for (auto& v : s) v = static_cast<double>(rng.index(8));
        std::vector<std::pair<double, std::size_t>> keyed;
        for (std::size_t i = 0; i < n; ++i) keyed.emplace_back(-s[i], i);
        std::sort(keyed.begin(), keyed.end());
        const auto keep = static_cast<std::size_t>((n + 1) / 2);
        std::vector<std::size_t> expected;
        for (std::size_t i = 0; i < keep; ++i) expected.push_back(keyed[i].second);
        ASSERT_EQ(select_hardest(s, 0.5), expected) << "trial " << trial;
    }
}

TEST(SelectHardest, NonFiniteScoreIsRejected) {
    const std::vector<double> s{0.1, std::nan(""), 0.3};
    EXPECT_THROW(select_hardest(s, 0.5), NumericError);
}

TEST(ComposeBatches, CoversSelectionWithTwoIdentitiesEach) {
    QuietWarnings quiet;
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<int> labels(80);
        // Mostly one identity, so naive chunking would produce single-identity batches.
        for (auto& l : labels) l = rng.bernoulli(0.85) ? 0 : static_cast<int>(1 + rng.index(3));
        std::vector<std::size_t> selected(40);
        std::iota(selected.begin(), selected.end(), std::size_t{20});
        const auto batches = compose_batches(selected, labels, 8, static_cast<std::uint64_t>(trial));
        // Feasible exactly when every batch can receive one minority entry.
        const auto minority = static_cast<std::size_t>(
            std::count_if(selected.begin(), selected.end(), [&](std::size_t i) { return labels[i] != 0; }));
        std::multiset<std::size_t> seen;
        for (const auto& b : batches) {
            seen.insert(b.begin(), b.end());
            std::set<int> ids;
            for (std::size_t i : b) ids.insert(labels[i]);
            if (minority >= batches.size()) EXPECT_GE(ids.size(), 2u) << "trial " << trial;
        }
        EXPECT_EQ(seen, std::multiset<std::size_t>(selected.begin(), selected.end()));
    }
}

TEST(ComposeBatches, ShortTailJoinsPreviousBatch) {
    std::vector<int> labels(11);
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 3);
    std::vector<std::size_t> selected(11);
    std::iota(selected.begin(), selected.end(), std::size_t{0});
    const auto batches = compose_batches(selected, labels, 4, 1);
    ASSERT_EQ(batches.size(), 3u);
    EXPECT_EQ(batches[2].size(), 3u);  // 3 >= 4 / 2 stays separate
    const auto merged = compose_batches(std::span(selected).first(9), labels, 4, 1);
    ASSERT_EQ(merged.size(), 2u);
    EXPECT_EQ(merged[1].size(), 5u);
}

TEST(TrainSchedule, StepDecayLaw) {
    TrainSchedule s;
    EXPECT_DOUBLE_EQ(s.lr(0), 1e-2);
    EXPECT_NEAR(s.lr(50000), 1e-3, 1e-18);
    EXPECT_NEAR(s.lr(100000), 1e-4, 1e-18);
    EXPECT_DOUBLE_EQ(s.lr(49999), 1e-2);
    for (long t : {1L, 1234L, 77777L, 160000L}) {
        EXPECT_DOUBLE_EQ(s.lr(t), 1e-2 * std::pow(0.1, static_cast<double>(t / 50000)));
    }
    const auto scaled = TrainSchedule::scaled(5000);
    EXPECT_EQ(scaled.period, 1250);
    EXPECT_EQ(scaled.dropout_disable_iteration, 4000);
    EXPECT_TRUE(scaled.dropout_active(3999));
    EXPECT_FALSE(scaled.dropout_active(4000));
}

TEST(SgdStep, ZeroMomentumIsPlainGradientDescent) {
    auto p = rmnet::testing::random_tensor<double>({3, 2}, 1);
    const Buffer<double> before = p.data();
    const Buffer<double> g = rmnet::testing::random_tensor<double>({6}, 2).data();
    p.grad_buffer() = g;
    std::vector<NamedTensor<double>> params{{"w", p}};
    OptimizerState<double> state;
    state.momentum = 0.0;
    TrainSchedule sched;
    sgd_step(params, state, sched);
    EXPECT_TRUE(((before - 1e-2 * g) - p.data()).abs().maxCoeff() < 1e-15);
    EXPECT_EQ(state.iteration, 1);
}

TEST(SgdStep, MomentumAccumulatesVelocity) {
    auto p = Tensor<double>::from({2}, {1.0, -1.0}, true);
    std::vector<NamedTensor<double>> params{{"w", p}};
    OptimizerState<double> state;
    TrainSchedule sched;
    sched.initial_lr = 0.5;
    p.grad_buffer() = Buffer<double>::Constant(2, 1.0);
    sgd_step(params, state, sched);  // v = 1, p -= 0.5
    sgd_step(params, state, sched);  // v = 1.9, p -= 0.95
    EXPECT_NEAR(p[0], 1.0 - 0.5 - 0.95, 1e-15);
    EXPECT_NEAR(p[1], -1.0 - 0.5 - 0.95, 1e-15);
}

TEST(SgdStep, ZeroGradientKeepsParameters) {
    auto p = rmnet::testing::random_tensor<double>({4}, 5);
    const Buffer<double> before = p.data();
    p.grad_buffer().setZero();
    std::vector<NamedTensor<double>> params{{"w", p}};
    OptimizerState<double> state;
    sgd_step(params, state, TrainSchedule{});
    EXPECT_TRUE((p.data() == before).all());
    EXPECT_EQ(state.iteration, 1);
}

TEST(SgdStep, NonFiniteGradientAbortsAndNamesLayer) {
    auto a = rmnet::testing::random_tensor<double>({2}, 6);
    auto b = rmnet::testing::random_tensor<double>({2}, 7);
    a.grad_buffer() = Buffer<double>::Constant(2, 1.0);
    b.grad_buffer() = Buffer<double>::Constant(2, std::numeric_limits<double>::infinity());
    const Buffer<double> a_before = a.data();
    std::vector<NamedTensor<double>> params{{"block.a", a}, {"block.b", b}};
    OptimizerState<double> state;
    try {
        sgd_step(params, state, TrainSchedule{});
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("block.b"), std::string::npos);
    }
    EXPECT_TRUE((a.data() == a_before).all());
    EXPECT_EQ(state.iteration, 0);
}

TEST(Trainer, DropoutOffAfterScheduledIteration) {
    Model<float> model(ModelSpec::mini());
    init_params(model, 2);
    TrainSchedule sched = TrainSchedule::scaled(100);
    const auto x = to_model_input<float>(std::vector<Image>{gradient_image(32, 16), gradient_image(32, 16, 1.0)}, 32, 16);
    auto pass = [&](long t, std::uint64_t seed) {
        ForwardOptions o;
        o.mode = Mode::train;
        o.dropout_seed = seed;
        o.dropout_enabled = sched.dropout_active(t);
        NoGradGuard no_grad;
        return model.forward(x, o).output.data().eval();
    };
    EXPECT_FALSE((pass(10, 1) == pass(10, 2)).all());
    EXPECT_TRUE((pass(80, 1) == pass(80, 2)).all());
    EXPECT_TRUE((pass(95, 3) == pass(95, 4)).all());
}

TEST(Trainer, IdenticalSeedsGiveIdenticalLogs) {
    const Dataset ds = tiny_dataset();
    auto run = [&] {
        Model<float> model(ModelSpec::mini());
        init_params(model, 1);
        Trainer t(model, ds, tiny_config());
        t.run(2);
        return t.log_lines();
    };
    const auto a = run();
    const auto b = run();
    EXPECT_FALSE(a.empty());
    EXPECT_EQ(a, b);
}

TEST(Trainer, LogsBreakdownAndAdvancesDifficulty) {
    const Dataset ds = tiny_dataset();
    Model<float> model(ModelSpec::mini());
    init_params(model, 1);
    Trainer t(model, ds, tiny_config());
    t.run(3);
    ASSERT_EQ(t.rounds().size(), 3u);
    for (int r = 0; r < 3; ++r) {
        EXPECT_EQ(t.rounds()[static_cast<std::size_t>(r)].difficulty, r);
        EXPECT_EQ(t.rounds()[static_cast<std::size_t>(r)].candidates, 16u);
        EXPECT_EQ(t.rounds()[static_cast<std::size_t>(r)].selected, 8u);
    }
    EXPECT_EQ(t.iteration(), 3);
    for (const auto& it : t.iterations()) {
        double sum = 0.0;
        for (std::size_t i = 0; i < 4; ++i) sum += it.weights[i] * it.terms[i];
        EXPECT_NEAR(sum, it.total, 1e-4 * std::max(1.0, it.total));
        for (double v : it.terms) EXPECT_GE(v, 0.0);
    }
    EXPECT_NE(t.log_lines().front().find("glob="), std::string::npos);
    // Classifier columns stay unit-norm after every step.
    const auto& w = t.classifier().weight;
    for (Index k = 0; k < w.dim(1); ++k) {
        double n2 = 0.0;
        for (Index d = 0; d < w.dim(0); ++d) n2 += std::pow(w[d * w.dim(1) + k], 2);
        EXPECT_NEAR(n2, 1.0, 1e-5);
    }
}

TEST(Trainer, ResumeContinuesIdentically) {
    const Dataset ds = tiny_dataset();
    Model<float> straight_model(ModelSpec::mini());
    init_params(straight_model, 1);
    Trainer straight(straight_model, ds, tiny_config());
    straight.run(3);

    Model<float> first_model(ModelSpec::mini());
    init_params(first_model, 1);
    Trainer first(first_model, ds, tiny_config());
    first.run(2);
    const ModelParams state = first.export_state();

    Model<float> second_model(ModelSpec::mini());
    Trainer second(second_model, ds, tiny_config());
    second.import_state(state);
    EXPECT_EQ(second.iteration(), first.iteration());
    EXPECT_EQ(second.round(), 2);
    second.run(1);

    const auto& full = straight.log_lines();
    const auto& tail = second.log_lines();
    ASSERT_LE(tail.size(), full.size());
    EXPECT_TRUE(std::equal(tail.begin(), tail.end(), full.end() - static_cast<std::ptrdiff_t>(tail.size())));
    EXPECT_EQ(second.export_state(), straight.export_state());
}

TEST(Trainer, RejectsSingleIdentityDataset) {
    SynthSpec spec;
    spec.num_identities = 2;
    spec.images_per_identity = 12;
    spec.height = 32;
    spec.width = 16;
    Dataset ds = generate_synthetic(spec, 1).dataset;
    ds.class_identities.resize(1);
    Model<float> model(ModelSpec::mini());
    EXPECT_THROW(Trainer(model, ds, tiny_config()), DatasetError);
}
