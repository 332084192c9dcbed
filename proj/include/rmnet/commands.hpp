#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "rmnet/config.hpp"
#include "rmnet/diagnostics.hpp"

namespace rmnet {

// What a command leaves behind. `report` is the JSON document also written to
// the out directory; it embeds the config hash and seed and nothing time-dependent.
struct CommandResult {
    std::string report;
    std::vector<std::filesystem::path> files;
};

/// Trains from scratch, or resumes from `paths.checkpoint`, until `train.rounds`
/// rounds are done. Writes checkpoint.rmnt, metrics.log, config.ini and train.json.
CommandResult cmd_train(const RunConfig& config, std::ostream& console);

/// Raw, flip and RK rows of mAP and CMC@1/5/10 for `paths.checkpoint`. Writes eval.json.
CommandResult cmd_eval(const RunConfig& config, std::ostream& console);

/// Per-layer parameter and FLOP table at the configured resolution. Writes cost.json.
CommandResult cmd_cost(const RunConfig& config, std::ostream& console);

/// Filter ratio report of one checkpoint, or of an ELU and a ReLU checkpoint side
/// by side. Writes diagnose.json.
CommandResult cmd_diagnose(const RunConfig& config, std::ostream& console);

/// Writes the synthetic dataset in the Market-1501 layout under `paths.out`, plus synth.json.
CommandResult cmd_synth(const RunConfig& config, std::ostream& console);

/// Validates, then dispatches on `config.command`.
CommandResult run_command(const RunConfig& config, std::ostream& console);

/// The run config embedded in a checkpoint written by cmd_train, or empty.
std::string embedded_run_config(const ModelParams& params);

}  // namespace rmnet
