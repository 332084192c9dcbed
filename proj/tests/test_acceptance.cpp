// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "rmnet/checkpoint.hpp"
#include "rmnet/commands.hpp"
#include "rmnet/cost.hpp"
#include "rmnet/errors.hpp"
#include "rmnet/evaluation.hpp"
#include "rmnet/grad_check.hpp"
#include "rmnet/losses.hpp"
#include "rmnet/model.hpp"
#include "rmnet/training.hpp"
#include "test_util.hpp"

using namespace rmnet;
using rmnet::testing::away_from_zero;
using rmnet::testing::random_tensor;
using rmnet::testing::TempDir;
using Json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool ok = true;
    std::string detail;
    std::vector<std::string> failures;

    void require(bool condition, const std::string& what) {
        if (!condition) {
            ok = false;
            failures.push_back(what);
        }
    }
};

using Clock = std::chrono::steady_clock;

// ---------------------------------------------------------------- 1. params

struct LayerRow {
    Index in;
    Index out;
    Index stride;
    int repeat;
};

// The reference backbone written out row by row: stem, then RM-block rows as
// (input width, output width, stride, repeat), then the head.
const std::vector<LayerRow> kBlockRows{
    {32, 32, 1, 4}, {32, 64, 2, 1}, {64, 64, 1, 8}, {64, 128, 2, 1},
    {128, 128, 1, 10}, {128, 256, 2, 1}, {256, 256, 1, 11},
};

Index oracle_params() {
    Index total = 3 * 32 * 3 * 3 + 2 * 32;  // stem conv and its BN scale/shift
    for (const LayerRow& row : kBlockRows) {
        const Index mid = row.out / 4;
        const Index reduce = row.in * mid + 2 * mid;
        const Index depthwise = mid * 3 * 3 + 2 * mid;
        const Index expand = mid * row.out + 2 * row.out;
        total += row.repeat * (reduce + depthwise + expand);
    }
    total += 256 * 512 + 512 * 256 + 256 * 256;  // expand, project, calibration
    return total;
}

Outcome check_params() {
    Outcome o;
    Model<float> model(ModelSpec::full());
    const Index walked = count_params(model);
    const Index oracle = oracle_params();
    o.require(walked >= 770000 && walked <= 850000, fmt::format("count {} outside [0.77e6, 0.85e6]", walked));
    o.require(walked == oracle, fmt::format("walk {} != closed form {}", walked, oracle));
    o.detail = fmt::format("count_params {} = closed form {} ({:.4f} M)", walked, oracle, walked / 1e6);
    return o;
}

// ---------------------------------------------------------------- 2. FLOPs

Index oracle_flops(Index h, Index w) {
    auto down = [](Index x, Index s) { return (x + 2 - 3) / s + 1; };
    h = down(h, 2);
    w = down(w, 2);
    Index macs = h * w * 3 * 32 * 9;
    for (const LayerRow& row : kBlockRows) {
        const Index mid = row.out / 4;
        for (int r = 0; r < row.repeat; ++r) {
            const Index in = r == 0 ? row.in : row.out;
            const Index stride = r == 0 ? row.stride : 1;
            macs += h * w * in * mid;  // the 1x1 reduce runs before the strided depthwise
            h = down(h, stride);
            w = down(w, stride);
            macs += h * w * mid * 9 + h * w * mid * row.out;
        }
    }
    macs += 256 * 512 + 512 * 256 + 256 * 256;
    return 2 * macs;
}

Outcome check_flops() {
    Outcome o;
    Model<float> model(ModelSpec::full());
    const Index small = count_flops(model, 160, 64);
    const Index large = count_flops(model, 384, 128);
    const double ratio = static_cast<double>(large) / static_cast<double>(small);
    o.require(small >= 100000000 && small <= 150000000, fmt::format("160x64 gives {}", small));
    o.require(large >= 500000000 && large <= 700000000, fmt::format("384x128 gives {}", large));
    o.require(ratio >= 4.65 && ratio <= 4.95, fmt::format("ratio {:.4f}", ratio));
    o.require(small == oracle_flops(160, 64), fmt::format("160x64 walk {} != oracle {}", small, oracle_flops(160, 64)));
    o.require(large == oracle_flops(384, 128), fmt::format("384x128 walk {} != oracle {}", large, oracle_flops(384, 128)));
    o.detail = fmt::format("{:.4f} GFLOPs at 160x64, {:.4f} at 384x128, ratio {:.4f}", small / 1e9, large / 1e9, ratio);
    return o;
}

// ---------------------------------------------------------------- 3. gradients

Tensor<double> distinct_values(Shape shape, std::uint64_t seed) {
    Tensor<double> t(std::move(shape), 0.0, true);
    Rng rng(seed);
    std::vector<double> vals(static_cast<std::size_t>(t.size()));
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = 0.01 * static_cast<double>(i) - 0.3;
    for (std::size_t i = vals.size(); i > 1; --i) std::swap(vals[i - 1], vals[rng.index(i)]);
    for (Index i = 0; i < t.size(); ++i) t.data()[i] = vals[static_cast<std::size_t>(i)];
    return t;
}

ModelSpec two_block_spec() {
    ModelSpec spec;
    spec.backbone.stem_channels = 8;
    spec.backbone.stages = {{1, 8, 1}, {1, 16, 2}};
    spec.head = {16, 32, 16};
    return spec;
}

MarginPolicy smart_policy(std::uint64_t seed, Index classes) {
    Rng rng(seed);
    MarginPolicy p = MarginPolicy::smart(classes, 0.8, 0.1, 0.6);
    for (Index k = 0; k < classes; ++k) p.observe(static_cast<int>(k), rng.uniform(0.0, 0.8));
    return p;
}

Outcome check_gradients() {
    Outcome o;
    struct Worst {
        double error = 0.0;
        double tolerance = 0.0;
    };
    std::map<std::string, Worst> worst;
    auto check = [&](const std::string& name, double tolerance, const DifferentiableFn& fn,
                     std::vector<Tensor<double>> inputs, std::uint64_t seed) {
        const double err = grad_check(name, fn, std::move(inputs));
        auto& w = worst[name];
        w.error = std::max(w.error, err);
        w.tolerance = tolerance;
        o.require(err < tolerance, fmt::format("{} seed {}: {:.3g} >= {:.0e}", name, seed, err, tolerance));
    };

    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto x = random_tensor({2, 2, 5, 5}, 100 + seed);
        for (Index stride : {1, 2}) {
            const std::string tag = fmt::format("/s{}", stride);
            check("conv2d" + tag, 1e-5, [stride](const auto& in) { return conv2d(in[0], in[1], stride, 1); },
                  {x, random_tensor({3, 2, 3, 3}, 200 + seed)}, seed);
            check("depthwise" + tag, 1e-5,
                  [stride](const auto& in) { return depthwise_conv2d(in[0], in[1], stride, 1); },
                  {x, random_tensor({2, 1, 3, 3}, 300 + seed)}, seed);
        }
        check("conv2d_1x1", 1e-5, [](const auto& in) { return conv2d(in[0], in[1], 1, 0); },
              {x, random_tensor({4, 2, 1, 1}, 400 + seed)}, seed);

        const auto kinked = away_from_zero({3, 7}, 500 + seed);
        check("elu", 1e-7, [](const auto& in) { return elu(in[0]); }, {kinked}, seed);
        check("relu", 1e-7, [](const auto& in) { return relu(in[0]); }, {kinked}, seed);

        const auto ramp = distinct_values({2, 2, 6, 5}, 600 + seed);
        check("max_pool2d", 1e-5, [](const auto& in) { return max_pool2d(in[0], 3, 2, 1); }, {ramp}, seed);
        check("global_max_pool", 1e-5, [](const auto& in) { return global_max_pool(in[0]); }, {ramp}, seed);

        RunningStats<double> stats(2);
        const std::vector<Tensor<double>> bn_inputs{random_tensor({3, 2, 3, 3}, 700 + seed),
                                                    random_tensor({2}, 710 + seed, 0.5, 1.5),
                                                    random_tensor({2}, 720 + seed)};
        check("batch_norm/train", 1e-4,
              [&stats](const auto& in) { return batch_norm(in[0], in[1], in[2], stats, Mode::train); }, bn_inputs, seed);
        check("batch_norm/eval", 1e-4,
              [&stats](const auto& in) { return batch_norm(in[0], in[1], in[2], stats, Mode::eval); }, bn_inputs, seed);
        RunningStats<double> stats2d(4);
        check("batch_norm/2d", 1e-4,
              [&stats2d](const auto& in) { return batch_norm(in[0], in[1], in[2], stats2d, Mode::train); },
              {random_tensor({5, 4}, 730 + seed), random_tensor({4}, 740 + seed, 0.5, 1.5), random_tensor({4}, 750 + seed)},
              seed);

        const auto m = random_tensor({3, 5}, 800 + seed);
        check("dropout", 1e-8, [seed](const auto& in) { return dropout(in[0], 0.3, Mode::train, 900 + seed); }, {m},
              seed);
        check("l2_normalize", 1e-5, [](const auto& in) { return l2_normalize(in[0]); }, {m}, seed);
        check("linear", 1e-8, [](const auto& in) { return linear(in[0], in[1]); },
              {m, random_tensor({5, 4}, 1000 + seed)}, seed);
        check("transpose", 1e-8, [](const auto& in) { return transpose(in[0]); }, {m}, seed);
        check("add", 1e-8, [](const auto& in) { return add(in[0], in[1]); }, {m, random_tensor({3, 5}, 1100 + seed)},
              seed);
        check("scale", 1e-8, [](const auto& in) { return scale(in[0], -1.7); }, {m}, seed);
        check("pad_channels", 1e-8, [](const auto& in) { return pad_channels(in[0], 5); }, {x}, seed);

        const std::vector<int> labels{2, 0, 3};
        check("softmax_cross_entropy", 1e-7,
              [&labels](const auto& in) { return cross_entropy(softmax(in[0]), labels); },
              {random_tensor({3, 4}, 1200 + seed, -2, 2)}, seed);

        const Index n = 6, dim = 5, classes = 3;
        std::vector<int> y(static_cast<std::size_t>(n));
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<int>(i % classes);
        const MarginPolicy policy = smart_policy(seed, classes);
        const auto raw_f = random_tensor({n, dim}, 1300 + seed);
        const auto raw_c = random_tensor({classes, dim}, 1400 + seed);
        check("center_loss", 1e-5,
              [&](const auto& in) { return center_loss(l2_normalize(in[0]), y, l2_normalize(in[1])); },
              {raw_f, raw_c}, seed);
        check("push_plus", 1e-5,
              [&](const auto& in) { return push_plus(l2_normalize(in[0]), y, l2_normalize(in[1]), policy); },
              {raw_f, raw_c}, seed);
        check("glob_push_plus", 1e-5,
              [&](const auto& in) { return glob_push_plus(l2_normalize(in[0]), y, l2_normalize(in[1]), policy); },
              {raw_f, raw_c}, seed);
        check("am_softmax", 1e-5,
              [&](const auto& in) {
                  AmSoftmaxParams<double> p;
                  p.weight = transpose(l2_normalize(in[1]));
                  p.scale = 4.0;
                  p.margin = 0.35;
                  return am_softmax(l2_normalize(in[0]), y, p);
              },
              {raw_f, random_tensor({classes, dim}, 1500 + seed)}, seed);

        Model<double> model(two_block_spec());
        init_params(model, 40 + seed);
        // Nonzero BN shifts so every path carries gradient.
        for (auto& p : model.parameters()) {
            if (p.path.ends_with(".beta")) p.tensor.data() = random_tensor({p.tensor.size()}, 60 + seed, -0.3, 0.3).data();
        }
        std::vector<Tensor<double>> inputs{random_tensor({4, 3, 8, 8}, 80 + seed, 0, 1)};
        for (auto& p : model.parameters()) inputs.push_back(p.tensor);
        check("two_block_model", 1e-4,
              [&model](const std::vector<Tensor<double>>& in) {
                  auto e = model.forward(in[0], ForwardOptions{Mode::train, 3, true});
                  return add(e.internal, e.output);
              },
              inputs, seed);
    }
    std::string loosest;
    double margin = 0.0;
    for (const auto& [name, w] : worst) {
        if (w.error / w.tolerance >= margin) {
            margin = w.error / w.tolerance;
            loosest = fmt::format("{} {:.2g} (tol {:.0e})", name, w.error, w.tolerance);
        }
    }
    o.detail = fmt::format("{} checks x 10 seeds, closest to tolerance: {}", worst.size(), loosest);
    return o;
}

// ---------------------------------------------------------------- 4. loss identities

using Vec = std::vector<double>;

double dot(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double dist(const Vec& a, const Vec& b) { return 1.0 - dot(a, b); }
double hinge(double v) { return v > 0.0 ? v : 0.0; }

Vec unit_vector(Rng& rng, std::size_t dim) {
    Vec v(dim);
    for (double& x : v) x = rng.normal();
    const double norm = std::sqrt(dot(v, v));
    for (double& x : v) x /= norm;
    return v;
}

Tensor<double> stack_rows(const std::vector<Vec>& rows) {
    Vec flat;
    for (const Vec& r : rows) flat.insert(flat.end(), r.begin(), r.end());
    return Tensor<double>::from({static_cast<Index>(rows.size()), static_cast<Index>(rows[0].size())}, flat);
}

struct MicroBatch {
    std::vector<Vec> f;
    std::vector<int> y;
    std::vector<Vec> centers;
    std::vector<Vec> classes;  // AM-Softmax class vectors
};

MicroBatch micro_batch(std::uint64_t seed) {
    Rng rng(seed);
    MicroBatch b;
    const std::size_t dim = 2 + rng.index(6);
    const int ids = 2 + static_cast<int>(rng.index(4));
    const std::size_t n = 2 + rng.index(9);
    for (std::size_t i = 0; i < n; ++i) {
        b.f.push_back(unit_vector(rng, dim));
        b.y.push_back(static_cast<int>(rng.index(static_cast<std::size_t>(ids))));
    }
    for (int k = 0; k < ids; ++k) {
        b.centers.push_back(unit_vector(rng, dim));
        b.classes.push_back(unit_vector(rng, dim));
    }
    return b;
}

AmSoftmaxParams<double> am_params(const std::vector<Vec>& classes, double s, double m) {
    const Index dim = static_cast<Index>(classes[0].size()), k = static_cast<Index>(classes.size());
    AmSoftmaxParams<double> p;
    p.weight = Tensor<double>({dim, k}, 0.0);
    for (Index d = 0; d < dim; ++d)
        for (Index c = 0; c < k; ++c) p.weight.data()[d * k + c] = classes[static_cast<std::size_t>(c)][static_cast<std::size_t>(d)];
    p.scale = s;
    p.margin = m;
    return p;
}

Outcome check_loss_identities() {
    Outcome o;
    QuietWarnings quiet;
    double am_gap = 0.0, eq_gap = 0.0, lowest = 0.0;
    for (std::uint64_t seed = 1; seed <= 200; ++seed) {
        const MicroBatch b = micro_batch(seed);
        const auto n = b.f.size();
        const auto ids = b.centers.size();
        const Tensor<double> f = stack_rows(b.f), c = stack_rows(b.centers);
        const std::span<const int> y(b.y);

        // Cross-entropy over cosine logits, written out.
        double ce = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double z = 0.0;
            for (const Vec& w : b.classes) z += std::exp(dot(b.f[i], w));
            ce += std::log(z) - dot(b.f[i], b.classes[static_cast<std::size_t>(b.y[i])]);
        }
        ce /= static_cast<double>(n);
        const double am = am_softmax(f, y, am_params(b.classes, 1.0, 0.0)).item();
        am_gap = std::max(am_gap, std::abs(am - ce));

        const MarginPolicy policy = seed % 2 ? MarginPolicy::fixed(0.35) : smart_policy(seed, static_cast<Index>(ids));
        double center = 0.0, push = 0.0, gpush = 0.0;
        int pairs = 0, terms = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const Vec& own = b.centers[static_cast<std::size_t>(b.y[i])];
            center += dist(b.f[i], own);
            for (std::size_t j = 0; j < n; ++j) {
                if (b.y[i] == b.y[j]) continue;
                push += hinge(policy.margin(b.y[i], b.y[j]) + dist(b.f[i], own) - dist(b.f[i], b.f[j]));
                ++pairs;
            }
            for (std::size_t k = 0; k < ids; ++k) {
                if (static_cast<int>(k) == b.y[i]) continue;
                gpush += hinge(policy.margin(b.y[i], static_cast<int>(k)) + dist(b.f[i], own) - dist(b.f[i], b.centers[k]));
                ++terms;
            }
        }
        center /= static_cast<double>(n);
        push = pairs ? push / pairs : 0.0;
        gpush /= terms;

        const double v_center = center_loss(f, y, c).item();
        const double v_push = push_plus(f, y, c, policy).item();
        const double v_gpush = glob_push_plus(f, y, c, policy).item();
        eq_gap = std::max({eq_gap, std::abs(v_center - center), std::abs(v_push - push), std::abs(v_gpush - gpush)});
        const Eigen::VectorXd per_center = center_loss_per_sample(f, y, c);
        const Eigen::VectorXd per_gpush = glob_push_per_sample(f, y, c, policy);
        eq_gap = std::max({eq_gap, std::abs(per_center.mean() - center), std::abs(per_gpush.mean() - gpush)});
        lowest = std::min({lowest, v_push, v_gpush, per_gpush.minCoeff()});
        o.require(v_push >= 0.0 && v_gpush >= 0.0 && per_gpush.minCoeff() >= 0.0,
                  fmt::format("negative hinge on batch {}", seed));
    }
    o.require(am_gap <= 1e-6, fmt::format("am_softmax(m=0, s=1) off cross-entropy by {:.3g}", am_gap));
    o.require(eq_gap <= 1e-9, fmt::format("center/push/glob-push off the loops by {:.3g}", eq_gap));
    o.detail = fmt::format("200 batches: AM vs CE gap {:.2g}, loop gap {:.2g}, smallest hinge {:.3g}", am_gap, eq_gap,
                           lowest);
    return o;
}

// ---------------------------------------------------------------- 5. metric oracle

EmbeddingSet labels_only(std::vector<int> ids, std::vector<int> cams) {
    EmbeddingSet s;
    s.identities = std::move(ids);
    s.cameras = std::move(cams);
    return s;
}

struct OracleMetrics {
    double map = 0.0;
    std::vector<double> cmc;
    std::size_t skipped = 0;
};

// Walks each query's filtered gallery in (distance, index) order.
OracleMetrics oracle_metrics(const Eigen::MatrixXd& d, const std::vector<int>& qid, const std::vector<int>& qcam,
                             const std::vector<int>& gid, const std::vector<int>& gcam) {
    OracleMetrics out;
    std::vector<double> aps;
    std::vector<std::size_t> first;
    for (std::size_t q = 0; q < qid.size(); ++q) {
        std::vector<std::pair<double, std::size_t>> ranked;
        for (std::size_t g = 0; g < gid.size(); ++g) {
            if (gid[g] == qid[q] && gcam[g] == qcam[q]) continue;
            ranked.emplace_back(d(static_cast<Index>(q), static_cast<Index>(g)), g);
        }
        std::sort(ranked.begin(), ranked.end());
        std::size_t hits = 0, first_hit = 0;
        double sum = 0.0;
        for (std::size_t r = 0; r < ranked.size(); ++r) {
            if (gid[ranked[r].second] != qid[q]) continue;
            ++hits;
            if (hits == 1) first_hit = r + 1;
            sum += static_cast<double>(hits) / static_cast<double>(r + 1);
        }
        if (hits == 0) {
            ++out.skipped;
            continue;
        }
        aps.push_back(sum / static_cast<double>(hits));
        first.push_back(first_hit);
    }
    out.cmc.assign(gid.size(), 0.0);
    if (aps.empty()) return out;
    double total = 0.0;
    for (double ap : aps) total += ap;
    out.map = total / static_cast<double>(aps.size());
    for (std::size_t k = 1; k <= gid.size(); ++k) {
        const auto within = std::count_if(first.begin(), first.end(), [k](std::size_t r) { return r <= k; });
        out.cmc[k - 1] = static_cast<double>(within) / static_cast<double>(aps.size());
    }
    return out;
}

Outcome check_metric_oracle() {
    Outcome o;
    QuietWarnings quiet;
    int mismatches = 0;
    for (std::uint64_t seed = 1; seed <= 500; ++seed) {
        Rng rng(1000 + seed);
        const std::size_t nq = 1 + rng.index(8), ng = 1 + rng.index(16);
        std::vector<int> qid(nq), qcam(nq), gid(ng), gcam(ng);
        for (auto& v : qid) v = static_cast<int>(rng.index(4));
        for (auto& v : qcam) v = static_cast<int>(rng.index(3));
        for (auto& v : gid) v = static_cast<int>(rng.index(4));
        for (auto& v : gcam) v = static_cast<int>(rng.index(3));
        Eigen::MatrixXd d(static_cast<Index>(nq), static_cast<Index>(ng));
        for (Index i = 0; i < d.size(); ++i) d.data()[i] = static_cast<double>(rng.index(6)) / 5.0;  // frequent ties
        const auto r = evaluate(d, labels_only(qid, qcam), labels_only(gid, gcam));
        const auto oracle = oracle_metrics(d, qid, qcam, gid, gcam);
        if (r.skipped_queries != oracle.skipped || r.mean_ap != oracle.map || r.cmc != oracle.cmc) ++mismatches;
    }
    o.require(mismatches == 0, fmt::format("{} of 500 instances differ from the oracle", mismatches));

    // Gallery: id 1 cam 1 (nearest), id 3 cam 2, id 1 cam 2, id 2 cam 1.
    Eigen::MatrixXd d(1, 4);
    d << 0.1, 0.2, 0.3, 0.4;
    const auto gallery = labels_only({1, 3, 1, 2}, {1, 2, 2, 1});
    // Query id 1 cam 1: the same-camera twin is dropped, the cross-camera match sits behind one distractor.
    const auto a = evaluate(d, labels_only({1}, {1}), gallery);
    o.require(a.skipped_queries == 0 && a.rank1 == 0.0 && a.mean_ap == 0.5 && a.orderings[0] == std::vector<Index>{1, 2, 3},
              "same-camera match was not excluded");
    // Query id 1 cam 3: both id-1 entries are valid.
    const auto b = evaluate(d, labels_only({1}, {3}), gallery);
    o.require(b.rank1 == 1.0 && b.mean_ap == (1.0 + 2.0 / 3.0) / 2.0, "cross-camera matches were dropped");
    // Query id 2 cam 1: its only match shares the camera, so the query is skipped.
    Eigen::MatrixXd d2(2, 4);
    d2 << d, d;
    const auto c = evaluate(d2, labels_only({2, 1}, {1, 3}), gallery);
    o.require(c.skipped_queries == 1 && c.evaluated_queries == std::vector<Index>{1} && c.rank1 == 1.0,
              "query without a cross-camera match was not skipped");
    // A same-camera entry of another identity stays in the ranking.
    const auto e = evaluate(d, labels_only({3}, {1}), gallery);
    o.require(e.orderings[0].size() == 4 && e.cmc_at(2) == 1.0 && e.rank1 == 0.0,
              "other-identity same-camera entry was removed");
    o.detail = fmt::format("500 random instances exact, {} mismatches; 4 camera-exclusion cases", mismatches);
    return o;
}

// ---------------------------------------------------------------- 6. desk run

Outcome check_desk_run(const fs::path& config_path, double& seconds) {
    Outcome o;
    TempDir dir("acceptance_desk");
    RunConfig config = load_run_config(config_path, RunConfig{});
    config.out_dir = (dir.path() / "run").string();
    o.require(config.profile == "mini" && config.synth.num_identities == 20 && config.synth.images_per_identity == 30 &&
                  config.train.height == 160 && config.train.width == 64 && config.train.loss.weights.base ==
                  LossVector{1.0, 1.0, 1.0, 1.0},
              "desk config is not the specified setting");
    const auto start = Clock::now();
    std::ostringstream console;
    cmd_train(config, console);
    seconds = std::chrono::duration<double>(Clock::now() - start).count();
    std::ifstream in(dir.path() / "run" / "train.json");
    const Json report = Json::parse(in);
    const double map = report["evaluation"]["mAP"];
    const double rank1 = report["evaluation"]["cmc1"];
    const auto emas = report["round_total_ema"].get<std::vector<double>>();
    o.require(rank1 >= 0.90, fmt::format("rank-1 {:.4f} < 0.90", rank1));
    o.require(map >= 0.80, fmt::format("mAP {:.4f} < 0.80", map));
    o.require(emas.size() >= 11, "fewer than 11 rounds logged");
    std::string trace;
    for (std::size_t r = 0; r < std::min<std::size_t>(11, emas.size()); ++r) {
        trace += fmt::format("{}{:.4f}", r ? " " : "", emas[r]);
        if (r > 0) o.require(emas[r] < emas[r - 1], fmt::format("EMA rose after round {}", r + 1));
    }
    o.require(seconds < 1800.0, fmt::format("took {:.0f} s", seconds));
    o.detail = fmt::format("mAP {:.4f}, rank-1 {:.4f}, round-end loss EMA [{}]", map, rank1, trace);
    return o;
}

// ---------------------------------------------------------------- 7. HSM

Outcome check_hsm() {
    Outcome o;
    Rng rng(4242);
    int wrong = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const auto n = static_cast<std::size_t>(1 + rng.index(64));
        std::vector<double> s(n);
        for (auto& v : s) v = trial % 2 ? rng.uniform(-1.0, 5.0) : static_cast<double>(rng.index(6));
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b] || (s[a] == s[b] && a < b); });
        idx.resize((n + 1) / 2);
        if (select_hardest(s, 0.5) != idx) ++wrong;
    }
    o.require(wrong == 0, fmt::format("{} of 1000 selections differ from the sort oracle", wrong));

    // Different identities close together: the pairwise push hinge fires, glob-push stays silent.
    const Eigen::Vector3d f0 = Eigen::Vector3d(0.8, 0.1, std::sqrt(0.35)).normalized();
    const Eigen::Vector3d f1 = Eigen::Vector3d(0.1, 0.8, std::sqrt(0.35)).normalized();
    const auto f = Tensor<double>::from({2, 3}, {f0[0], f0[1], f0[2], f1[0], f1[1], f1[2]});
    const auto centers = Tensor<double>::from({2, 3}, {1, 0, 0, 0, 1, 0});
    const std::vector<int> labels{0, 1};
    const auto policy = MarginPolicy::fixed(0.35);
    const double push = push_plus(f, labels, centers, policy).item();
    const auto am = AmSoftmaxParams<double>::init(3, 2, 8);
    const CandidateLosses l{am_softmax_per_sample(f, labels, am), center_loss_per_sample(f, labels, centers),
                            glob_push_per_sample(f, labels, centers, policy)};
    MiningConfig m;
    m.score_weights = {0.7, 1.3, 2.1};
    const Eigen::VectorXd score = score_candidates(l, m);
    double gap = 0.0;
    for (Index i = 0; i < 2; ++i) {
        const Eigen::Vector3d fi = i == 0 ? f0 : f1;
        const Eigen::Vector3d own = Eigen::Vector3d::Unit(i), other = Eigen::Vector3d::Unit(1 - i);
        const double gpush = std::max(0.0, 0.35 + (1.0 - fi.dot(own)) - (1.0 - fi.dot(other)));
        gap = std::max(gap, std::abs(score[i] - (0.7 * l.glob[i] + 1.3 * (1.0 - fi.dot(own)) + 2.1 * gpush)));
    }
    o.require(push > 0.0, "fixture does not activate the push hinge");
    o.require(gap <= 1e-12, fmt::format("score differs from glob + center + glob-push by {:.3g}", gap));
    o.detail = fmt::format("1000 vectors match; push {:.4f} active, score gap {:.2g}", push, gap);
    return o;
}

// ---------------------------------------------------------------- 8. flip / rerank

Outcome check_flip_rerank() {
    Outcome o;
    Model<float> model(ModelSpec::mini());
    init_params(model, 4);
    EmbedOptions opts;
    opts.height = 160;
    opts.width = 64;
    std::vector<Image> images;
    for (std::uint64_t s = 1; s <= 6; ++s) {
        Rng rng(s);
        Image img(160, 64);
        for (float& p : img.pixels) p = static_cast<float>(rng.uniform());
        images.push_back(std::move(img));
    }
    const Eigen::MatrixXd e = flip_concat_embedding(model, std::span<const Image>(images), opts);
    const double norm_gap = (e.rowwise().norm().array() - 1.0).abs().maxCoeff();
    o.require(norm_gap <= 1e-6, fmt::format("flip-concat norm off by {:.3g}", norm_gap));

    Rng rng(3);
    auto unit_rows = [&rng](Index n, Index d) {
        Eigen::MatrixXd m(n, d);
        for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
        m.rowwise().normalize();
        return m;
    };
    const auto q = unit_rows(6, 8), g = unit_rows(30, 8);
    const auto original = distance_matrix(q, g);
    const auto same = rerank_k_reciprocal(q, g, {20, 6, 1.0});
    bool bitwise = same.rows() == original.rows() && same.cols() == original.cols();
    for (Index i = 0; bitwise && i < original.size(); ++i) {
        bitwise = std::bit_cast<std::uint64_t>(same.data()[i]) == std::bit_cast<std::uint64_t>(original.data()[i]);
    }
    o.require(bitwise, "lambda = 1 changed the distance matrix");

    const Index dim = 16;
    Eigen::RowVectorXd centers[2];
    for (auto& c : centers) c = unit_rows(1, dim).row(0);
    auto sample = [&](int id) {
        Eigen::RowVectorXd v = centers[id];
        for (Index j = 0; j < dim; ++j) v(j) += 0.35 * rng.normal();
        return Eigen::RowVectorXd(v.normalized());
    };
    EmbeddingSet qs, gs;
    qs.embeddings.resize(10, dim);
    gs.embeddings.resize(40, dim);
    for (int i = 0; i < 10; ++i) {
        qs.embeddings.row(i) = sample(i % 2);
        qs.identities.push_back(i % 2);
        qs.cameras.push_back(0);
    }
    for (int i = 0; i < 40; ++i) {
        gs.embeddings.row(i) = sample(i % 2);
        gs.identities.push_back(i % 2);
        gs.cameras.push_back(1);
    }
    const double raw = evaluate(qs, gs).mean_ap;
    const double reranked = evaluate(rerank_k_reciprocal(qs.embeddings, gs.embeddings), qs, gs).mean_ap;
    o.require(reranked >= raw, fmt::format("reranked mAP {:.4f} < raw {:.4f}", reranked, raw));
    o.detail = fmt::format("norm gap {:.2g}, lambda = 1 bitwise {}, two-cluster mAP raw {:.4f} -> RK {:.4f}", norm_gap,
                           bitwise ? "yes" : "no", raw, reranked);
    return o;
}

// ---------------------------------------------------------------- 9. determinism

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

RunConfig small_run(const fs::path& out) {
    RunConfig c;
    c.synth.num_identities = 4;
    c.synth.images_per_identity = 12;
    c.synth.query_per_identity = 2;
    c.synth.gallery_per_identity = 4;
    c.synth.height = 64;
    c.synth.width = 32;
    c.train.height = 64;
    c.train.width = 32;
    c.train.rounds = 3;
    c.train.batch_size = 8;
    c.train.mining.samples_per_identity = 4;
    c.eval.flip = true;
    c.eval.rerank = true;
    c.eval.rerank_options = {4, 2, 0.3};
    c.out_dir = out.string();
    return c;
}

Outcome check_determinism() {
    Outcome o;
    QuietWarnings quiet;
    TempDir dir("acceptance_determinism");
    // Both runs use the same paths, so their configs (and hashes) are identical;
    // the first run's artifacts are copied aside before the second overwrites them.
    std::ostringstream console;
    const fs::path run = dir.path() / "run";
    for (const char* copy : {"first", "second"}) {
        cmd_train(small_run(run), console);
        RunConfig eval = small_run(run / "eval");
        eval.command = "eval";
        eval.checkpoint_path = (run / "checkpoint.rmnt").string();
        cmd_eval(eval, console);
        fs::copy(run, dir.path() / copy, fs::copy_options::recursive);
    }
    std::vector<std::string> compared;
    for (const char* file : {"metrics.log", "train.json", "checkpoint.rmnt", "config.ini", "eval/eval.json",
                             "eval/query.emb", "eval/gallery.emb"}) {
        const std::string a = slurp(dir.path() / "first" / file);
        o.require(!a.empty() && a == slurp(dir.path() / "second" / file), fmt::format("{} differs between runs", file));
        compared.push_back(file);
    }

    const fs::path original = dir.path() / "first" / "checkpoint.rmnt";
    const ModelParams loaded = load_checkpoint(original);
    save_checkpoint(loaded, dir.path() / "resaved.rmnt");
    o.require(slurp(dir.path() / "resaved.rmnt") == slurp(original), "checkpoint save -> load -> save changed bytes");
    Model<float> model(ModelSpec::mini());
    model.import_params(loaded);
    ModelParams exported = model.export_params();
    save_checkpoint(exported, dir.path() / "weights-a.rmnt");
    Model<float> again(ModelSpec::mini());
    again.import_params(load_checkpoint(dir.path() / "weights-a.rmnt"));
    save_checkpoint(again.export_params(), dir.path() / "weights-b.rmnt");
    o.require(slurp(dir.path() / "weights-a.rmnt") == slurp(dir.path() / "weights-b.rmnt"),
              "model import -> export -> save changed bytes");
    o.detail = fmt::format("{} artifacts byte-identical across two runs; checkpoint round trip byte-identical",
                           compared.size());
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    const fs::path config = argc > 1 ? fs::path(argv[1]) : fs::path(RMNET_SOURCE_DIR) / "configs" / "desk.ini";
    double desk_seconds = 0.0;
    struct Criterion {
        int id;
        std::string name;
        double budget;  // seconds
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> criteria{
        {1, "parameter count", 1.0, check_params},
        {2, "FLOP count", 1.0, check_flops},
        {3, "gradient correctness", 120.0, check_gradients},
        {4, "loss identities", 60.0, check_loss_identities},
        {5, "metric oracle", 60.0, check_metric_oracle},
        {6, "desk-scale training", 1800.0, [&] { return check_desk_run(config, desk_seconds); }},
        {7, "hard sample mining", 0.0, check_hsm},
        {8, "flip and rerank contracts", 0.0, check_flip_rerank},
        {9, "determinism and serialization", 0.0, check_determinism},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        const auto start = Clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o.ok = false;
            o.failures.push_back(std::string("threw: ") + e.what());
        }
        const double seconds = std::chrono::duration<double>(Clock::now() - start).count();
        if (c.budget > 0.0 && seconds >= c.budget) o.require(false, fmt::format("over the {:.0f} s budget", c.budget));
        std::string line = fmt::format("{} {} {}: {} ({:.2f} s)", o.ok ? "PASS" : "FAIL", c.id, c.name, o.detail, seconds);
        for (const auto& f : o.failures) line += "; " + f;
        std::cout << line << std::endl;
        failed += !o.ok;
    }
    std::cout << fmt::format("{} of {} criteria passed", criteria.size() - failed, criteria.size()) << std::endl;
    return failed == 0 ? 0 : 1;
}
