#include "rmnet/config.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <type_traits>

#include <fmt/format.h>

#include "rmnet/errors.hpp"

namespace rmnet {

namespace {

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

std::string show(bool v) { return v ? "true" : "false"; }
std::string show(const std::string& v) { return v; }
template <typename T>
std::string show(T v) {
    return fmt::format("{}", v);
}

template <typename T>
T parse_value(const std::string& text) {
    if constexpr (std::is_same_v<T, bool>) {
        if (text == "true") return true;
        if (text == "false") return false;
        throw ConfigError("expected true or false, got '" + text + "'");
    } else if constexpr (std::is_same_v<T, std::string>) {
        return text;
    } else {
        T value{};
        const char* end = text.data() + text.size();
        const auto [ptr, ec] = std::from_chars(text.data(), end, value);
        if (ec != std::errc() || ptr != end || text.empty()) throw ConfigError("expected a number, got '" + text + "'");
        if constexpr (std::is_floating_point_v<T>) {
            if (!std::isfinite(value)) throw ConfigError("expected a finite number, got '" + text + "'");
        }
        return value;
    }
}

struct Field {
    std::string section;
    std::string key;
    std::string doc;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

// `access` is a generic lambda returning a reference into the config.
template <typename Access>
Field scalar(const char* section, const char* key, const char* doc, Access access) {
    using T = std::remove_cvref_t<decltype(access(std::declval<RunConfig&>()))>;
    return {section, key, doc, [access](const RunConfig& c) { return show(access(c)); },
            [access](RunConfig& c, const std::string& text) { access(c) = parse_value<T>(text); }};
}

template <std::size_t N, typename Access>
Field list(const char* section, const char* key, const char* doc, Access access) {
    return {section, key, doc,
            [access](const RunConfig& c) {
                std::string out;
                for (double v : access(c)) out += (out.empty() ? "" : " ") + show(v);
                return out;
            },
            [access](RunConfig& c, const std::string& text) {
                std::istringstream in(text);
                std::array<double, N> values{};
                std::string item;
                std::size_t n = 0;
                while (in >> item) {
                    if (n == N) throw ConfigError(fmt::format("expected {} numbers, got more", N));
                    values[n++] = parse_value<double>(item);
                }
                if (n != N) throw ConfigError(fmt::format("expected {} numbers, got {}", N, n));
                access(c) = values;
            }};
}

template <typename E, typename Access>
Field choice(const char* section, const char* key, const char* doc, std::vector<std::pair<E, std::string>> names,
             Access access) {
    return {section, key, doc,
            [access, names](const RunConfig& c) {
                for (const auto& [value, name] : names)
                    if (value == access(c)) return name;
                return std::string("?");
            },
            [access, names](RunConfig& c, const std::string& text) {
                std::string expected;
                for (const auto& [value, name] : names) {
                    if (name == text) {
                        access(c) = value;
                        return;
                    }
                    expected += (expected.empty() ? "" : " or ") + name;
                }
                throw ConfigError("expected " + expected + ", got '" + text + "'");
            }};
}

#define RMNET_REF(expr) [](auto& c) -> auto& { return c.expr; }

const std::vector<Field>& fields() {
    static const std::vector<Field> table = [] {
        const std::vector<std::pair<Activation, std::string>> activations{{Activation::elu, "elu"},
                                                                          {Activation::relu, "relu"}};
        const std::vector<std::pair<MiningConfig::Ranking, std::string>> rankings{
            {MiningConfig::Ranking::plain, "plain"}, {MiningConfig::Ranking::weighted, "weighted"}};
        const std::vector<std::pair<LossWeights::Mode, std::string>> weight_modes{
            {LossWeights::Mode::fixed, "fixed"}, {LossWeights::Mode::running_magnitude, "running_magnitude"}};
        const std::vector<std::pair<DistanceMetric, std::string>> metrics{{DistanceMetric::cosine, "cosine"},
                                                                          {DistanceMetric::euclidean, "euclidean"}};
        return std::vector<Field>{
            scalar("run", "command", "train, eval, cost, diagnose or synth; the CLI verb overrides it", RMNET_REF(command)),
            scalar("run", "seed", "seeds training, weight initialization and the synthetic generator", RMNET_REF(train.seed)),

            scalar("model", "profile", "full (reference stage table) or mini (one block per stage)", RMNET_REF(profile)),
            choice("model", "activation", "non-linearity of the backbone, elu or relu", activations, RMNET_REF(activation)),
            scalar("model", "batch_norm", "batch normalization after every backbone convolution", RMNET_REF(batch_norm)),
            scalar("model", "dropout", "dropout ratio at the end of every residual branch", RMNET_REF(dropout)),

            scalar("input", "height", "network input height in pixels", RMNET_REF(train.height)),
            scalar("input", "width", "network input width in pixels", RMNET_REF(train.width)),
            scalar("input", "pixel_mean", "subtracted from every channel value in [0, 1]", RMNET_REF(train.pixel_mean)),
            scalar("input", "pixel_std", "divides every channel value after centering", RMNET_REF(train.pixel_std)),

            scalar("paths", "data", "Market-1501 style root; empty generates the [synth] dataset in memory", RMNET_REF(data_path)),
            scalar("paths", "checkpoint", "train resumes from it; eval and diagnose read weights from it", RMNET_REF(checkpoint_path)),
            scalar("paths", "out", "directory receiving reports, logs and checkpoints", RMNET_REF(out_dir)),

            scalar("synth", "identities", "number of synthetic identities", RMNET_REF(synth.num_identities)),
            scalar("synth", "images_per_identity", "images rendered per identity", RMNET_REF(synth.images_per_identity)),
            scalar("synth", "query_per_identity", "query images per identity", RMNET_REF(synth.query_per_identity)),
            scalar("synth", "gallery_per_identity", "gallery images per identity; the rest are for training", RMNET_REF(synth.gallery_per_identity)),
            scalar("synth", "height", "rendered image height", RMNET_REF(synth.height)),
            scalar("synth", "width", "rendered image width", RMNET_REF(synth.width)),
            scalar("synth", "cameras", "number of cameras, each with its own color and offset transform", RMNET_REF(synth.num_cameras)),
            scalar("synth", "illumination_jitter", "per-image brightness jitter", RMNET_REF(synth.illumination_jitter)),
            scalar("synth", "pose_shift", "per-image horizontal shift in pixels", RMNET_REF(synth.pose_shift)),
            scalar("synth", "attribute_jitter", "per-image jitter of identity attributes", RMNET_REF(synth.attribute_jitter)),
            scalar("synth", "pixel_noise", "standard deviation of per-pixel noise", RMNET_REF(synth.pixel_noise)),

            scalar("train", "rounds", "mining rounds", RMNET_REF(train.rounds)),
            scalar("train", "batch_size", "samples per optimizer step", RMNET_REF(train.batch_size)),
            scalar("train", "flip_probability", "horizontal flip probability of the augmentation", RMNET_REF(train.flip_probability)),
            scalar("train", "scale_schedule", "derive the decay period and dropout cut from the run length", RMNET_REF(train.scale_schedule)),
            scalar("train", "eval_every", "rounds between evaluation snapshots, 0 for none", RMNET_REF(train.eval_every)),
            scalar("train", "loss_ema_momentum", "smoothing of the logged total loss", RMNET_REF(train.loss_ema_momentum)),
            scalar("train", "checkpoint_every", "rounds between intermediate checkpoints, 0 for none", RMNET_REF(checkpoint_every)),

            scalar("mining", "samples_per_identity", "augmented candidates drawn per identity each round", RMNET_REF(train.mining.samples_per_identity)),
            scalar("mining", "keep_fraction", "fraction of the hardest candidates trained on", RMNET_REF(train.mining.keep_fraction)),
            choice("mining", "ranking", "plain sums the terms, weighted divides each by its running magnitude", rankings, RMNET_REF(train.mining.ranking)),
            list<3>("mining", "score_weights", "glob, center and gpush weights of the mining score", RMNET_REF(train.mining.score_weights)),

            scalar("loss", "scale", "AM-Softmax scale s", RMNET_REF(train.loss.scale)),
            scalar("loss", "am_margin", "AM-Softmax margin m", RMNET_REF(train.loss.am_margin)),
            scalar("loss", "smart_margin", "adaptive push margins instead of push_margin", RMNET_REF(train.loss.smart_margin)),
            scalar("loss", "push_margin", "fixed push margin", RMNET_REF(train.loss.push_margin)),
            scalar("loss", "margin_beta", "smart margin gain on the intra-class spread", RMNET_REF(train.loss.margin_beta)),
            scalar("loss", "margin_min", "smart margin lower clamp", RMNET_REF(train.loss.margin_min)),
            scalar("loss", "margin_max", "smart margin upper clamp", RMNET_REF(train.loss.margin_max)),
            list<4>("loss", "weights", "glob, center, gpush and push weights of the total loss", RMNET_REF(train.loss.weights.base)),
            choice("loss", "weight_mode", "fixed uses the weights as given, running_magnitude divides by running term size", weight_modes, RMNET_REF(train.loss.weights.mode)),
            scalar("loss", "weight_momentum", "momentum of the running term magnitudes", RMNET_REF(train.loss.weights.momentum)),
            scalar("loss", "magnitude_floor", "lower bound of a running term magnitude", RMNET_REF(train.loss.weights.magnitude_floor)),
            scalar("loss", "center_lr", "step size of the center update", RMNET_REF(train.loss.center_lr)),

            scalar("schedule", "initial_lr", "learning rate at iteration 0", RMNET_REF(train.schedule.initial_lr)),
            scalar("schedule", "decay", "factor applied every period", RMNET_REF(train.schedule.decay)),
            scalar("schedule", "period", "iterations between decays when scale_schedule is false", RMNET_REF(train.schedule.period)),
            scalar("schedule", "dropout_disable_iteration", "dropout off from here when scale_schedule is false, negative never", RMNET_REF(train.schedule.dropout_disable_iteration)),
            scalar("schedule", "momentum", "SGD momentum", RMNET_REF(train.schedule.momentum)),

            scalar("eval", "flip", "add the flip-concatenation row", RMNET_REF(eval.flip)),
            scalar("eval", "rerank", "add k-reciprocal re-ranked rows, labeled RK", RMNET_REF(eval.rerank)),
            choice("eval", "metric", "distance for ranking, cosine or euclidean", metrics, RMNET_REF(eval.metric)),
            scalar("eval", "k1", "re-ranking neighbourhood size", RMNET_REF(eval.rerank_options.k1)),
            scalar("eval", "k2", "re-ranking query expansion size", RMNET_REF(eval.rerank_options.k2)),
            scalar("eval", "lambda", "weight of the original distance after re-ranking", RMNET_REF(eval.rerank_options.lambda)),
            scalar("eval", "batch", "images per embedding forward pass", RMNET_REF(eval.batch)),

            scalar("diagnose", "elu_checkpoint", "ELU run for the side-by-side ratio report", RMNET_REF(diagnose.elu_checkpoint)),
            scalar("diagnose", "relu_checkpoint", "ReLU run for the side-by-side ratio report", RMNET_REF(diagnose.relu_checkpoint)),
            scalar("diagnose", "noisy_threshold", "filters whose max/min weight ratio exceeds this are noisy", RMNET_REF(diagnose.noisy_threshold)),
        };
    }();
    return table;
}

#undef RMNET_REF

const Field* find_field(const std::string& section, const std::string& key) {
    for (const auto& f : fields())
        if (f.section == section && f.key == key) return &f;
    return nullptr;
}

bool known_section(const std::string& section) {
    for (const auto& f : fields())
        if (f.section == section) return true;
    return false;
}

std::string join(const std::vector<std::string>& parts, const char* sep) {
    std::string out;
    for (const auto& p : parts) out += (out.empty() ? "" : sep) + p;
    return out;
}

// Runs one validator, keeping its message unless an earlier one said the same.
template <typename F>
void collect(std::vector<std::string>& problems, F&& check) {
    try {
        check();
    } catch (const ConfigError& e) {
        const std::string message = e.what();
        for (const auto& p : problems)
            if (p == message) return;
        problems.push_back(message);
    }
}

}  // namespace

ModelSpec RunConfig::model_spec() const {
    ModelSpec spec = ModelSpec::profile(profile);
    spec.backbone.activation = activation;
    spec.backbone.use_batch_norm = batch_norm;
    spec.backbone.dropout_ratio = dropout;
    return spec;
}

EmbedOptions RunConfig::embed_options() const {
    EmbedOptions options;
    options.height = train.height;
    options.width = train.width;
    options.pixel_mean = train.pixel_mean;
    options.pixel_std = train.pixel_std;
    options.batch = eval.batch;
    return options;
}

std::vector<std::string> RunConfig::problems() const {
    std::vector<std::string> out;
    if (command != "train" && command != "eval" && command != "cost" && command != "diagnose" && command != "synth") {
        out.push_back("run.command: unknown command '" + command + "'");
    }
    collect(out, [&] { model_spec().validate(); });
    collect(out, [&] { train.mining.validate(); });
    collect(out, [&] { train.loss.validate(); });
    collect(out, [&] { train.schedule.validate(); });
    collect(out, [&] { train.validate(); });
    collect(out, [&] { eval.rerank_options.validate(); });
    if (eval.batch < 1) out.push_back("eval.batch must be at least 1");
    if (checkpoint_every < 0) out.push_back("train.checkpoint_every must be non-negative");
    if (!(diagnose.noisy_threshold > 1.0)) out.push_back("diagnose.noisy_threshold must exceed 1");
    if (data_path.empty() || command == "synth") collect(out, [&] { synth.validate(); });
    if (out_dir.empty()) out.push_back("paths.out must not be empty");
    if (command == "eval" && checkpoint_path.empty()) out.push_back("eval needs paths.checkpoint");
    if (command == "diagnose") {
        const bool paired = !diagnose.elu_checkpoint.empty() || !diagnose.relu_checkpoint.empty();
        if (paired && (diagnose.elu_checkpoint.empty() || diagnose.relu_checkpoint.empty())) {
            out.push_back("diagnose needs both elu_checkpoint and relu_checkpoint for a paired report");
        }
        if (!paired && checkpoint_path.empty()) out.push_back("diagnose needs paths.checkpoint or a checkpoint pair");
    }
    return out;
}

void RunConfig::validate() const {
    const auto found = problems();
    if (!found.empty()) throw ConfigError("invalid config: " + join(found, "; "));
}

std::string format_run_config(const RunConfig& config, bool documented) {
    std::string out;
    std::string section;
    for (const auto& f : fields()) {
        if (f.section != section) {
            if (!section.empty()) out += "\n";
            section = f.section;
            out += "[" + section + "]\n";
        }
        if (documented) out += "# " + f.doc + "\n";
        out += f.key + " = " + f.get(config) + "\n";
    }
    return out;
}

void set_config_value(RunConfig& config, const std::string& dotted_key, const std::string& value,
                      std::vector<std::string>& problems) {
    const auto dot = dotted_key.find('.');
    const Field* field = dot == std::string::npos ? nullptr : find_field(dotted_key.substr(0, dot), dotted_key.substr(dot + 1));
    if (!field) {
        problems.push_back("unknown key '" + dotted_key + "'");
        return;
    }
    try {
        field->set(config, value);
    } catch (const ConfigError& e) {
        problems.push_back(dotted_key + ": " + e.what());
    }
}

namespace {

void parse_into(RunConfig& config, const std::string& text, std::vector<std::string>& problems) {
    std::map<std::string, int> seen;
    std::istringstream in(text);
    std::string raw;
    std::string section;
    int lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        const std::string line = trim(raw);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        const std::string where = "line " + std::to_string(lineno);
        if (line.front() == '[') {
            if (line.back() != ']') {
                problems.push_back(where + ": unterminated section header");
                continue;
            }
            section = trim(line.substr(1, line.size() - 2));
            if (!known_section(section)) problems.push_back(where + ": unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            problems.push_back(where + ": expected key = value");
            continue;
        }
        if (section.empty()) {
            problems.push_back(where + ": key outside any section");
            continue;
        }
        if (!known_section(section)) continue;
        const std::string dotted = section + "." + trim(line.substr(0, eq));
        if (auto [it, fresh] = seen.emplace(dotted, lineno); !fresh) {
            problems.push_back(where + ": " + dotted + " repeats line " + std::to_string(it->second));
            continue;
        }
        std::vector<std::string> found;
        set_config_value(config, dotted, trim(line.substr(eq + 1)), found);
        for (const auto& p : found) problems.push_back(where + ": " + p);
    }
}

std::string read_config_text(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    return text.str();
}

}  // namespace

RunConfig parse_run_config(const std::string& text, const RunConfig& base) {
    RunConfig config = base;
    std::vector<std::string> problems;
    parse_into(config, text, problems);
    if (problems.empty()) return config;
    throw ConfigError("invalid config: " + join(problems, "; "));
}

RunConfig load_run_config(const std::filesystem::path& path, const RunConfig& base) {
    return parse_run_config(read_config_text(path), base);
}

RunConfig assemble_run_config(const std::string& command, const std::filesystem::path& file,
                              const std::vector<std::pair<std::string, std::string>>& overrides) {
    RunConfig config;
    std::vector<std::string> problems;
    if (!file.empty()) parse_into(config, read_config_text(file), problems);
    config.command = command;
    for (const auto& [key, value] : overrides) {
        std::vector<std::string> found;
        set_config_value(config, key, value, found);
        for (const auto& p : found) problems.push_back("override " + p);
    }
    // Fields that failed to parse keep their defaults, so these checks add no noise.
    for (auto& p : config.problems()) problems.push_back(std::move(p));
    if (problems.empty()) return config;
    throw ConfigError("invalid config: " + join(problems, "; "));
}

std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string canonical_run_config(const RunConfig& config) {
    RunConfig copy = config;
    copy.out_dir.clear();
    return format_run_config(copy);
}

std::uint64_t config_hash(const RunConfig& config) { return fnv1a64(canonical_run_config(config)); }

std::string config_hash_hex(const RunConfig& config) { return fmt::format("{:016x}", config_hash(config)); }

}  // namespace rmnet
