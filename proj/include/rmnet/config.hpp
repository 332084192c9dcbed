#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rmnet/data.hpp"
#include "rmnet/evaluation.hpp"
#include "rmnet/model.hpp"
#include "rmnet/training.hpp"

namespace rmnet {

struct EvalSettings {
    bool flip = false;
    bool rerank = false;
    DistanceMetric metric = DistanceMetric::cosine;
    RerankOptions rerank_options;
    Index batch = 32;
};

struct DiagnoseSettings {
    std::string elu_checkpoint;   // with relu_checkpoint: side-by-side report
    std::string relu_checkpoint;
    double noisy_threshold = 1e3;
};

// Everything one CLI invocation needs. `train.seed` is the run seed; it also
// seeds weight initialization and the synthetic generator.
struct RunConfig {
    std::string command = "train";  // train, eval, cost, diagnose or synth
    std::string profile = "mini";
    Activation activation = Activation::elu;
    bool batch_norm = true;
    double dropout = 0.1;
    TrainConfig train;
    int checkpoint_every = 0;  // rounds between intermediate checkpoints, 0 for none
    SynthSpec synth;
    EvalSettings eval;
    DiagnoseSettings diagnose;
    std::string data_path;        // empty: generate the synthetic dataset in memory
    std::string checkpoint_path;  // train resumes from it, eval and diagnose read it
    std::string out_dir = "out";

    std::uint64_t seed() const { return train.seed; }
    ModelSpec model_spec() const;
    EmbedOptions embed_options() const;

    // Every problem found, or empty when the config is usable.
    std::vector<std::string> problems() const;
    // Throws ConfigError listing all problems at once.
    void validate() const;
};

/// Canonical `[section]` / `key = value` text of every field. With `documented`
/// each key is preceded by a comment describing it.
std::string format_run_config(const RunConfig& config, bool documented = false);

/// Applies `text` on top of `base`. Unknown keys, malformed lines and bad values
/// are collected and reported together in one ConfigError.
RunConfig parse_run_config(const std::string& text, const RunConfig& base = {});
RunConfig load_run_config(const std::filesystem::path& path, const RunConfig& base = {});

/// Config file (optional) plus `section.key` overrides for one command, then
/// validation. Parse, override and validation problems are thrown together.
RunConfig assemble_run_config(const std::string& command, const std::filesystem::path& file,
                              const std::vector<std::pair<std::string, std::string>>& overrides);

/// Sets one `section.key` from text, appending to `problems` instead of throwing.
void set_config_value(RunConfig& config, const std::string& dotted_key, const std::string& value,
                      std::vector<std::string>& problems);

/// The text reports embed and hash: every field except paths.out, so the same
/// run written to two directories yields identical reports.
std::string canonical_run_config(const RunConfig& config);

/// FNV-1a 64 over the canonical text.
std::uint64_t config_hash(const RunConfig& config);
std::string config_hash_hex(const RunConfig& config);

std::uint64_t fnv1a64(const std::string& bytes);

}  // namespace rmnet
