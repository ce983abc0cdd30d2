/*
 * main.cpp — command-line driver for the guided-flow laboratory. Talks to the
 * library exclusively through the C API in gmflow.h.
 */

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gmflow.h"

namespace {

struct SubSpec {
    const char* name;
    const char* blurb;
};

constexpr SubSpec kSubcommands[] = {
    {"simulate", "Integrate guided-flow trajectories and dump them as CSV"},
    {"verify-thm1",
     "Check that guided trajectories stay closer to the scaled mixture mean "
     "than conditional ones early in sampling"},
    {"verify-thm2",
     "Check that trajectories starting inside the weaker mode's basin keep "
     "weaker-mode dominance for every guidance scale"},
    {"verify-prop3",
     "Check that initialization bias toward the stronger mode persists "
     "through the early stage"},
    {"verify-thm4",
     "Check that guidance contracts within-mode trajectory pairs faster than "
     "conditional sampling"},
    {"diversity", "Tabulate mode occupancy and spread across schedules"},
    {"perturb",
     "Compare late-perturbation sensitivity of a low schedule vs a late-high "
     "schedule"},
    {"schedule-dump", "Resolve a guidance schedule on a step grid as CSV"},
    {"sweep", "Run a base experiment across one parameter axis"},
};

int run_subcommand(const std::string& name, const std::string& config_path,
                   const std::uint64_t* seed, const char* output_dir) {
    char* summary = nullptr;
    int exit_code = 0;
    const gmf_status st = gmf_run_file(config_path.c_str(), name.c_str(),
                                       output_dir, seed, &summary, &exit_code);
    if (st != GMF_OK) {
        std::fprintf(stderr, "error (%s): %s\n", gmf_status_name(st),
                     gmf_last_error());
        return 1;
    }

    try {
        const nlohmann::json s = nlohmann::json::parse(summary);
        const bool passed = s.at("passed").get<bool>();
        const bool inconclusive = s.at("inconclusive").get<bool>();
        std::printf("experiment:  %s\n", s.at("experiment").get<std::string>().c_str());
        std::printf("output_dir:  %s\n", s.at("output_dir").get<std::string>().c_str());
        std::string arts;
        for (const auto& a : s.at("artifacts"))
            arts += (arts.empty() ? "" : ", ") + a.get<std::string>();
        std::printf("artifacts:   %s\n", arts.c_str());
        const auto& verdict = s.at("verdict");
        if (verdict.contains("stats"))
            for (const auto& [key, value] : verdict.at("stats").items())
                std::printf("  %-36s %s\n", key.c_str(), value.dump().c_str());
        for (const auto& note : verdict.at("notes"))
            std::printf("note: %s\n", note.get<std::string>().c_str());
        if (inconclusive) {
            std::printf("verdict:     INCONCLUSIVE\n");
            std::fprintf(stderr,
                         "warning: verdict is inconclusive; the configuration "
                         "cannot distinguish the hypothesis (see notes)\n");
        } else {
            std::printf("verdict:     %s\n", passed ? "PASS" : "FAIL");
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: malformed run summary: %s\n", e.what());
        gmf_string_free(summary);
        return 1;
    }
    gmf_string_free(summary);
    return exit_code;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{
        std::string("gmflow ") + gmf_version() +
        " — numerical laboratory for guided probability-flow sampling in "
        "Gaussian mixtures.\n\n"
        "Each subcommand runs one experiment from a JSON config and writes\n"
        "verdict.json, CSV tables, and manifest.json (written last; its\n"
        "presence marks a complete run) into the output directory.\n\n"
        "Config defaults: integrator method rk4; n = 500 for simulate and the\n"
        "verify-* experiments (100 for diversity, 50 with euler for perturb);\n"
        "time clamp t_min = 1e-3 with t in [t_min, 1 - t_min]; seed = 1.\n\n"
        "Exit codes: 0 = verdict passed or inconclusive, 1 = execution error\n"
        "(bad config, divergence, I/O), 2 = conclusive verdict failure."};
    app.require_subcommand(1);
    app.set_version_flag("--version", gmf_version());

    struct Options {
        std::string config;
        std::uint64_t seed = 0;
        bool has_seed = false;
        std::string output_dir;
        bool has_output_dir = false;
    };
    std::vector<Options> opts(std::size(kSubcommands));

    for (std::size_t i = 0; i < std::size(kSubcommands); ++i) {
        CLI::App* sub = app.add_subcommand(kSubcommands[i].name,
                                           kSubcommands[i].blurb);
        sub->add_option("--config", opts[i].config,
                        "Path to the experiment's JSON config")
            ->required()
            ->check(CLI::ExistingFile);
        sub->add_option("--seed", opts[i].seed,
                        "Override the config's RNG seed");
        sub->add_option("--output-dir", opts[i].output_dir,
                        "Override the config's output directory");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    for (std::size_t i = 0; i < std::size(kSubcommands); ++i) {
        CLI::App* sub = app.get_subcommand(kSubcommands[i].name);
        if (!sub->parsed()) continue;
        opts[i].has_seed = sub->count("--seed") > 0;
        opts[i].has_output_dir = sub->count("--output-dir") > 0;
        return run_subcommand(
            kSubcommands[i].name, opts[i].config,
            opts[i].has_seed ? &opts[i].seed : nullptr,
            opts[i].has_output_dir ? opts[i].output_dir.c_str() : nullptr);
    }
    std::fprintf(stderr, "error: no subcommand selected\n");
    return 1;
}
