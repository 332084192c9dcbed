// rmnet: train, eval, cost, diagnose and synth verbs over a shared run config.
#include <iostream>
#include <regex>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "rmnet/commands.hpp"
#include "rmnet/errors.hpp"

namespace {

struct Flags {
    std::string config;
    std::string profile;
    std::string resolution;
    std::string seed;
    std::string out;
    std::string checkpoint;
    std::string data;
    bool flip = false;
    bool rerank = false;
};

const std::regex& resolution_pattern() {
    static const std::regex hw(R"((\d+)x(\d+))");
    return hw;
}

// Errors go out as one line: CODE: message.
int fail(const std::string& code, std::string message) {
    for (char& c : message)
        if (c == '\n' || c == '\r') c = ' ';
    std::cerr << code << ": " << message << std::endl;
    return code == "E_USAGE" ? 2 : 1;
}

std::vector<std::pair<std::string, std::string>> overrides(const Flags& f) {
    std::vector<std::pair<std::string, std::string>> out;
    if (!f.profile.empty()) out.emplace_back("model.profile", f.profile);
    if (std::smatch m; std::regex_match(f.resolution, m, resolution_pattern())) {
        out.emplace_back("input.height", m[1].str());
        out.emplace_back("input.width", m[2].str());
    }
    if (!f.seed.empty()) out.emplace_back("run.seed", f.seed);
    if (!f.out.empty()) out.emplace_back("paths.out", f.out);
    if (!f.checkpoint.empty()) out.emplace_back("paths.checkpoint", f.checkpoint);
    if (!f.data.empty()) out.emplace_back("paths.data", f.data);
    if (f.flip) out.emplace_back("eval.flip", "true");
    if (f.rerank) out.emplace_back("eval.rerank", "true");
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"RMNet re-identification toolkit"};
    app.require_subcommand(1);
    Flags flags;
    std::vector<CLI::App*> verbs{
        app.add_subcommand("train", "train with hard sample mining; resumes from --checkpoint"),
        app.add_subcommand("eval", "mAP and CMC of a checkpoint, with optional flip and RK rows"),
        app.add_subcommand("cost", "per-layer parameter and FLOP counts"),
        app.add_subcommand("diagnose", "per-filter max/min weight ratios of a checkpoint"),
        app.add_subcommand("synth", "write the synthetic dataset in the Market-1501 layout"),
    };
    for (auto* verb : verbs) {
        verb->add_option("--config", flags.config, "config file of [section] key = value lines");
        verb->add_option("--profile", flags.profile, "full or mini");
        verb->add_option("--resolution", flags.resolution, "input size as HxW, e.g. 160x64")
            ->check(CLI::Validator(
                [](std::string& v) {
                    return std::regex_match(v, resolution_pattern()) ? std::string() : "expected HxW, got '" + v + "'";
                },
                "HxW"));
        verb->add_option("--seed", flags.seed, "run seed");
        verb->add_flag("--flip", flags.flip, "add the flip-concatenation row (eval)");
        verb->add_flag("--rerank", flags.rerank, "add re-ranked rows labeled RK (eval)");
        verb->add_option("--out", flags.out, "output directory");
        verb->add_option("--checkpoint", flags.checkpoint, "checkpoint to read or resume from");
        verb->add_option("--data", flags.data, "Market-1501 style dataset root");
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("E_USAGE", e.what());
    }

    std::string command;
    for (auto* verb : verbs)
        if (verb->parsed()) command = verb->get_name();
    try {
        const rmnet::RunConfig config = rmnet::assemble_run_config(command, flags.config, overrides(flags));
        rmnet::run_command(config, std::cout);
    } catch (const rmnet::Error& e) {
        return fail(e.code(), e.what());
    } catch (const std::exception& e) {
        return fail("E_INTERNAL", e.what());
    }
    return 0;
}
