#include "rmnet/commands.hpp"

#include <fstream>

#include <fmt/format.h>
#include <json.hpp>

#include "rmnet/checkpoint.hpp"
#include "rmnet/cost.hpp"
#include "rmnet/errors.hpp"
#include "rmnet/evaluation.hpp"
#include "rmnet/training.hpp"

namespace rmnet {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

constexpr const char* kConfigRecord = "state.run_config";

fs::path prepare_out(const RunConfig& config) {
    const fs::path out(config.out_dir);
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw IoError("cannot create output directory " + out.string() + ": " + ec.message());
    return out;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f || !f.write(text.data(), static_cast<std::streamsize>(text.size()))) {
        throw IoError("cannot write " + path.string());
    }
}

Json provenance(const RunConfig& config) {
    Json j;
    j["command"] = config.command;
    j["config_hash"] = config_hash_hex(config);
    j["seed"] = config.seed();
    return j;
}

// Writes the report, remembers it and returns the result.
CommandResult finish(Json report, const RunConfig& config, const fs::path& out, const std::string& name,
                     std::vector<fs::path> files) {
    report["config"] = canonical_run_config(config);
    CommandResult result;
    result.report = report.dump(2) + "\n";
    write_text(out / name, result.report);
    files.push_back(out / name);
    result.files = std::move(files);
    return result;
}

Dataset load_dataset(const RunConfig& config) {
    if (config.data_path.empty()) return generate_synthetic(config.synth, config.seed()).dataset;
    return load_market_layout(config.data_path);
}

ModelParams read_checkpoint(const std::string& path) {
    if (path.empty()) throw ConfigError("no checkpoint given");
    return load_checkpoint(path);
}

// Loads weights, turning a shape or layer mismatch into an error naming the
// checkpoint, the configured profile and the profile the checkpoint records.
template <typename S>
void load_weights(Model<S>& model, const ModelParams& params, const std::string& path, const RunConfig& config) {
    try {
        model.import_params(params);
    } catch (const LoadError& e) {
        std::string recorded;
        if (const std::string text = embedded_run_config(params); !text.empty()) {
            try {
                recorded = " (it records profile " + parse_run_config(text).profile + ")";
            } catch (const ConfigError&) {
            }
        }
        throw LoadError("checkpoint " + path + " does not match the " + config.profile + " profile" + recorded + ": " +
                        e.what());
    }
}

void embed_config(ModelParams& params, const RunConfig& config) {
    const std::string text = canonical_run_config(config);
    ParamRecord r;
    r.path = kConfigRecord;
    r.dtype = DType::u64;
    r.shape = {static_cast<Index>(text.size())};
    r.values.assign(text.begin(), text.end());
    params.set(std::move(r));
}

Json ranking_json(const RankingResult& r) {
    Json j;
    j["mAP"] = r.mean_ap;
    j["cmc1"] = r.cmc_at(1);
    j["cmc5"] = r.cmc_at(5);
    j["cmc10"] = r.cmc_at(10);
    j["queries"] = r.evaluated_queries.size();
    j["skipped_queries"] = r.skipped_queries;
    return j;
}

std::string kind_name(LayerKind kind) {
    switch (kind) {
        case LayerKind::conv: return "conv";
        case LayerKind::depthwise: return "depthwise";
        case LayerKind::linear: return "linear";
    }
    return "?";
}

Json ratio_json(const FilterRatioReport& report) {
    Json j;
    j["threshold"] = report.threshold;
    j["filters"] = report.filters;
    j["noisy"] = report.noisy;
    j["median"] = report.median;
    j["p90"] = report.p90;
    j["max"] = report.max;
    Json layers = Json::array();
    for (const auto& l : report.layers) {
        Json e;
        e["path"] = l.path;
        e["kind"] = kind_name(l.kind);
        e["filters"] = l.ratios.size();
        e["noisy"] = l.noisy;
        e["median"] = l.median;
        e["p90"] = l.p90;
        e["max"] = l.max;
        e["ratios"] = l.ratios;
        layers.push_back(std::move(e));
    }
    j["layers"] = std::move(layers);
    return j;
}

void print_ratio_table(const FilterRatioReport& report, std::ostream& console) {
    console << fmt::format("{:<22} {:>9} {:>8} {:>11} {:>11} {:>11} {:>6}\n", "layer", "kind", "filters", "median",
                           "p90", "max", "noisy");
    for (const auto& l : report.layers) {
        console << fmt::format("{:<22} {:>9} {:>8} {:>11.4g} {:>11.4g} {:>11.4g} {:>6}\n", l.path, kind_name(l.kind),
                               l.ratios.size(), l.median, l.p90, l.max, l.noisy);
    }
    console << fmt::format("total: {} filters, {} noisy (ratio > {:g}), median {:.4g}, p90 {:.4g}\n", report.filters,
                           report.noisy, report.threshold, report.median, report.p90);
}

}  // namespace

std::string embedded_run_config(const ModelParams& params) {
    if (!params.contains(kConfigRecord)) return {};
    const auto& values = params.at(kConfigRecord).values;
    std::string text;
    text.reserve(values.size());
    for (double v : values) text.push_back(static_cast<char>(static_cast<unsigned char>(v)));
    return text;
}

CommandResult cmd_train(const RunConfig& config, std::ostream& console) {
    config.validate();
    const Dataset dataset = load_dataset(config);
    Model<float> model(config.model_spec());
    init_params(model, config.seed());
    Trainer trainer(model, dataset, config.train);
    if (!config.checkpoint_path.empty()) {
        const ModelParams state = read_checkpoint(config.checkpoint_path);
        load_weights(model, state, config.checkpoint_path, config);
        trainer.import_state(state);
    }
    const int start_round = trainer.round();
    const long start_iteration = trainer.iteration();
    if (start_round >= config.train.rounds) {
        warn(fmt::format("checkpoint already holds {} rounds, nothing left to train", start_round));
    }

    const fs::path out = prepare_out(config);
    std::vector<fs::path> files;
    const fs::path log_path = out / "metrics.log";
    std::ofstream log(log_path, std::ios::binary);
    if (!log) throw IoError("cannot write " + log_path.string());
    log << fmt::format("# config_hash={} seed={} start_round={} start_iteration={}\n", config_hash_hex(config),
                       config.seed(), start_round, start_iteration);
    trainer.set_log_sink([&](const std::string& line) {
        log << line << '\n';
        if (line.rfind("round=", 0) == 0) console << line << '\n';
    });
    console << fmt::format("training {} profile on {} classes, rounds {}..{}\n", config.profile,
                           dataset.num_classes(), start_round, config.train.rounds);

    while (trainer.round() < config.train.rounds) {
        trainer.run_round();
        const int r = trainer.round();
        if (config.checkpoint_every > 0 && r % config.checkpoint_every == 0 && r < config.train.rounds) {
            ModelParams snapshot = trainer.export_state();
            embed_config(snapshot, config);
            const fs::path p = out / fmt::format("checkpoint-r{:04}.rmnt", r);
            save_checkpoint(snapshot, p);
            files.push_back(p);
        }
    }
    log.flush();
    if (!log) throw IoError("cannot write " + log_path.string());
    files.push_back(log_path);

    ModelParams state = trainer.export_state();
    embed_config(state, config);
    save_checkpoint(state, out / "checkpoint.rmnt");
    files.push_back(out / "checkpoint.rmnt");
    RunConfig recorded = config;
    recorded.out_dir.clear();  // kept out so equal hashes mean equal files
    write_text(out / "config.ini", "# config_hash=" + config_hash_hex(config) + "\n" + format_run_config(recorded, true));
    files.push_back(out / "config.ini");

    const RankingResult eval = trainer.evaluate_now();
    console << fmt::format("done: round {} iteration {}  mAP {:.4f}  rank-1 {:.4f}\n", trainer.round(),
                           trainer.iteration(), eval.mean_ap, eval.rank1);

    Json report = provenance(config);
    report["profile"] = config.profile;
    report["start_round"] = start_round;
    report["start_iteration"] = start_iteration;
    report["rounds"] = trainer.round();
    report["iterations"] = trainer.iteration();
    Json emas = Json::array();
    for (const auto& r : trainer.rounds()) emas.push_back(r.total_ema);
    report["round_total_ema"] = std::move(emas);
    report["evaluation"] = ranking_json(eval);
    return finish(std::move(report), config, out, "train.json", std::move(files));
}

CommandResult cmd_eval(const RunConfig& config, std::ostream& console) {
    config.validate();
    Model<float> model(config.model_spec());
    load_weights(model, read_checkpoint(config.checkpoint_path), config.checkpoint_path, config);
    const Dataset dataset = load_dataset(config);
    const EmbedOptions options = config.embed_options();
    const Index flops = count_flops(model, config.train.height, config.train.width);

    struct Row {
        std::string label;
        bool flip;
        RankingResult result;
    };
    std::vector<Row> rows;
    std::vector<std::pair<EmbeddingSet, EmbeddingSet>> sets;
    std::vector<bool> flips{false};
    if (config.eval.flip) flips.push_back(true);
    for (bool flip : flips) {
        EmbeddingSet q = embed_split(model, dataset.query, flip, options);
        EmbeddingSet g = embed_split(model, dataset.gallery, flip, options);
        rows.push_back({flip ? "flip" : "raw", flip, evaluate(q, g, config.eval.metric)});
        sets.emplace_back(std::move(q), std::move(g));
    }
    if (config.eval.rerank) {
        for (std::size_t i = 0; i < flips.size(); ++i) {
            const auto& [q, g] = sets[i];
            const Eigen::MatrixXd d = rerank_k_reciprocal(q.embeddings, g.embeddings, config.eval.rerank_options);
            rows.push_back({flips[i] ? "flip+RK" : "RK", flips[i], evaluate(d, q, g)});
        }
    }

    const fs::path out = prepare_out(config);
    std::vector<fs::path> files{out / "query.emb", out / "gallery.emb"};
    save_embeddings(sets[0].first, files[0]);
    save_embeddings(sets[0].second, files[1]);

    console << fmt::format("{} queries, {} gallery, {} profile at {}x{}\n", dataset.query.size(),
                           dataset.gallery.size(), config.profile, config.train.height, config.train.width);
    console << fmt::format("{:<8} {:>8} {:>8} {:>8} {:>8} {:>12}\n", "variant", "mAP", "CMC@1", "CMC@5", "CMC@10",
                           "GFLOPs/img");
    Json report = provenance(config);
    report["profile"] = config.profile;
    report["height"] = config.train.height;
    report["width"] = config.train.width;
    report["flops_per_embedding"] = flops;
    Json jrows = Json::array();
    for (const auto& row : rows) {
        const Index row_flops = row.flip ? 2 * flops : flops;
        console << fmt::format("{:<8} {:>8.4f} {:>8.4f} {:>8.4f} {:>8.4f} {:>12.4f}\n", row.label, row.result.mean_ap,
                               row.result.cmc_at(1), row.result.cmc_at(5), row.result.cmc_at(10), row_flops / 1e9);
        Json j = ranking_json(row.result);
        j["variant"] = row.label;
        j["flip"] = row.flip;
        j["rerank"] = row.label.find("RK") != std::string::npos;
        j["extraction_flops"] = row_flops;
        jrows.push_back(std::move(j));
    }
    report["rows"] = std::move(jrows);
    return finish(std::move(report), config, out, "eval.json", std::move(files));
}

CommandResult cmd_cost(const RunConfig& config, std::ostream& console) {
    config.validate();
    const ModelSpec spec = config.model_spec();
    Model<float> model(spec);
    const Index h = config.train.height;
    const Index w = config.train.width;
    const CostReport cost = cost_report(model.layers(), h, w);

    console << fmt::format("{:<22} {:>9} {:>10} {:>13} {:>9}\n", "layer", "kind", "params", "MACs", "output");
    Json layers = Json::array();
    for (const auto& l : cost.layers) {
        console << fmt::format("{:<22} {:>9} {:>10} {:>13} {:>9}\n", l.path, kind_name(l.kind), l.params, l.macs,
                               fmt::format("{}x{}", l.out_height, l.out_width));
        Json j;
        j["path"] = l.path;
        j["kind"] = kind_name(l.kind);
        j["params"] = l.params;
        j["macs"] = l.macs;
        j["flops"] = 2 * l.macs;
        j["out_height"] = l.out_height;
        j["out_width"] = l.out_width;
        layers.push_back(std::move(j));
    }
    console << fmt::format("total at {}x{}: {:.4f} MParams, {:.4f} GFLOPs ({} params, {} FLOPs)\n", h, w,
                           cost.total_params / 1e6, cost.total_flops / 1e9, cost.total_params, cost.total_flops);

    Json report = provenance(config);
    report["profile"] = config.profile;
    report["height"] = h;
    report["width"] = w;
    report["total_params"] = cost.total_params;
    report["total_flops"] = cost.total_flops;
    report["closed_form_params"] = closed_form_params(spec);
    report["closed_form_flops"] = closed_form_flops(spec, h, w);
    report["layers"] = std::move(layers);
    return finish(std::move(report), config, prepare_out(config), "cost.json", {});
}

CommandResult cmd_diagnose(const RunConfig& config, std::ostream& console) {
    config.validate();
    const double threshold = config.diagnose.noisy_threshold;
    auto report_for = [&](const std::string& path) {
        Model<float> model(config.model_spec());
        load_weights(model, read_checkpoint(path), path, config);
        return filter_ratio_report(model, threshold);
    };

    Json report = provenance(config);
    report["profile"] = config.profile;
    if (config.diagnose.elu_checkpoint.empty()) {
        const FilterRatioReport ratios = report_for(config.checkpoint_path);
        console << "filter ratio w_max / w_min, " << config.checkpoint_path << "\n";
        print_ratio_table(ratios, console);
        report["checkpoint"] = config.checkpoint_path;
        report["report"] = ratio_json(ratios);
        return finish(std::move(report), config, prepare_out(config), "diagnose.json", {});
    }

    const FilterRatioReport elu = report_for(config.diagnose.elu_checkpoint);
    const FilterRatioReport relu = report_for(config.diagnose.relu_checkpoint);
    const RatioComparison cmp = compare_ratio_reports(elu, relu, "elu", "relu");
    console << fmt::format("{:<22} {:>8} {:>10} {:>10} {:>11} {:>11}\n", "layer", "filters", "noisy elu", "noisy relu",
                           "median elu", "median relu");
    Json layers = Json::array();
    for (std::size_t l = 0; l < cmp.layers.size(); ++l) {
        const auto& p = cmp.layers[l];
        console << fmt::format("{:<22} {:>8} {:>10} {:>10} {:>11.4g} {:>11.4g}\n", p.path, p.order.size(), p.noisy_first,
                               p.noisy_second, elu.layers[l].median, relu.layers[l].median);
        Json j;
        j["path"] = p.path;
        j["order"] = p.order;
        j["elu"] = p.first;
        j["relu"] = p.second;
        j["noisy_elu"] = p.noisy_first;
        j["noisy_relu"] = p.noisy_second;
        layers.push_back(std::move(j));
    }
    console << fmt::format("total: {} filters, noisy elu {} ({:.1f}%), noisy relu {} ({:.1f}%)\n", cmp.filters,
                           cmp.noisy_first, 100.0 * cmp.noisy_first / cmp.filters, cmp.noisy_second,
                           100.0 * cmp.noisy_second / cmp.filters);
    report["elu_checkpoint"] = config.diagnose.elu_checkpoint;
    report["relu_checkpoint"] = config.diagnose.relu_checkpoint;
    report["elu"] = ratio_json(elu);
    report["relu"] = ratio_json(relu);
    report["side_by_side"] = std::move(layers);
    return finish(std::move(report), config, prepare_out(config), "diagnose.json", {});
}

CommandResult cmd_synth(const RunConfig& config, std::ostream& console) {
    config.validate();
    const SynthDataset synth = generate_synthetic(config.synth, config.seed());
    const fs::path out = prepare_out(config);
    const std::size_t written = write_market_layout(synth.dataset, out);
    const auto& d = synth.dataset;
    console << fmt::format("wrote {} images to {}: train {}, query {}, gallery {}\n", written, out.string(),
                           d.train.size(), d.query.size(), d.gallery.size());
    Json report = provenance(config);
    report["identities"] = config.synth.num_identities;
    report["images"] = written;
    report["train"] = d.train.size();
    report["query"] = d.query.size();
    report["gallery"] = d.gallery.size();
    return finish(std::move(report), config, out, "synth.json", {});
}

CommandResult run_command(const RunConfig& config, std::ostream& console) {
    config.validate();
    if (config.command == "train") return cmd_train(config, console);
    if (config.command == "eval") return cmd_eval(config, console);
    if (config.command == "cost") return cmd_cost(config, console);
    if (config.command == "diagnose") return cmd_diagnose(config, console);
    return cmd_synth(config, console);
}

}  // namespace rmnet
