/*
 * experiment.hpp — config-driven experiment runner.
 *
 * A RunConfig is parsed from strict JSON (unknown keys are rejected at every
 * level), hashed canonically, and executed by run(), which writes verdict.json
 * plus experiment-specific CSV tables into output_dir and finishes by writing
 * manifest.json via tmp+rename — a run directory is complete iff the manifest
 * exists. All artifacts are deterministic for a given config, seed, and
 * SOURCE_DATE_EPOCH, regardless of thread count.
 */

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gmflow/flow.hpp"
#include "gmflow/mixture.hpp"
#include "gmflow/schedule.hpp"
#include "gmflow/stages.hpp"

namespace gmflow {

enum class Experiment {
    Simulate,
    VerifyThm1,
    VerifyThm2,
    VerifyProp3,
    VerifyThm4,
    Diversity,
    Perturb,
    ScheduleDump,
    Sweep,
};

/// Throws ParseError for names outside the nine experiment identifiers.
Experiment experiment_from_string(const std::string& name);
std::string experiment_to_string(Experiment e);

/// Experiment-specific knobs (the config's "params" object). Fields whose
/// default depends on the experiment are optional and resolved at use.
struct StageKnobs {
    std::optional<double> omega;           // thm1/prop3: 3, thm4: 5
    std::optional<std::size_t> n_samples;  // thm1: 10000, diversity/perturb: 2000
    double t_e1 = 0.9;
    std::vector<double> omegas = {1.0, 3.0, 9.0};
    double t_s2 = 0.05;
    std::size_t n_inits = 1000;
    bool use_slab = false;
    double boundary_grid_lo = 0.05;
    double boundary_grid_hi = 0.4;
    std::size_t boundary_grid_points = 20;
    std::vector<double> k_values = {1.5, 2.0, 3.0};
    double t_s1 = 0.9;
    std::size_t n_per_k = 1000;
    double t_s3 = 0.1;
    double pair_radius = 0.01;
    std::size_t n_pairs = 500;
    double perturb_sigma = 0.04;
    double perturb_fraction = 0.2;
    std::size_t count = 16;  // simulate trajectories
};

/// The config's "tolerances" object.
struct ToleranceKnobs {
    double derivative_window = 0.02;
    double eps_resp = 1e-3;
    double mono_slack = 1e-10;
    double ball_margin = 1e-6;
};

/// One-axis parameter sweep around a base experiment.
struct SweepSpec {
    Experiment base = Experiment::Diversity;
    std::string axis;                         // omega | n_steps | sigma | schedule
    std::vector<double> values;               // numeric axes
    std::vector<GuidanceSchedule> schedules;  // schedule axis
    std::vector<std::string> labels;          // schedule axis labels
};

struct RunConfig {
    Experiment experiment = Experiment::Simulate;
    std::optional<GaussianMixture> mixture;  // required except schedule-dump
    IntegratorConfig integrator;             // defaults depend on experiment
    NoiseSchedule noise;                     // carries t_min
    /// Guidance schedules: [the schedule] for simulate/schedule-dump, two or
    /// more for diversity, [low, late-high] for perturb, empty for verify-*.
    std::vector<GuidanceSchedule> schedules;
    std::vector<std::string> schedule_labels;
    std::uint64_t seed = 1;
    std::string output_dir = "out";
    StageKnobs knobs;
    ToleranceKnobs tol;
    std::optional<SweepSpec> sweep;

    /// Strict parse. expected_experiment, when non-empty (the CLI subcommand),
    /// must match the config's "experiment" key if that key is present, and
    /// supplies it if absent; with neither, parsing fails.
    static RunConfig from_json_text(const std::string& text,
                                    const std::string& expected_experiment = "");
    static RunConfig from_file(const std::string& path,
                               const std::string& expected_experiment = "");

    /// Canonical JSON: every semantic field explicit, keys sorted, output_dir
    /// excluded (it locates artifacts, it does not define the experiment).
    /// from_json_text(to_canonical_json()) reproduces the config exactly.
    std::string to_canonical_json() const;

    /// FNV-1a 64 over to_canonical_json().
    std::uint64_t config_hash() const;
};

struct RunArtifact {
    std::string name;
    std::uint64_t size_bytes = 0;
    std::string fnv1a64_hex;  // content hash, for quick determinism audits
};

struct RunResult {
    Verdict verdict;
    std::vector<RunArtifact> artifacts;  // verdict.json, *.csv, manifest.json
    std::string output_dir;
    /// 0: verdict passed or inconclusive; 2: conclusive failure. Execution
    /// errors throw instead (callers map them to exit code 1).
    int exit_code = 0;
};

/// Execute without touching the filesystem: the verdict plus named CSV tables.
std::pair<Verdict, std::vector<std::pair<std::string, std::string>>>
execute(const RunConfig& cfg);

/// Execute and write verdict.json, CSV tables, and manifest.json (last,
/// atomically) into cfg.output_dir.
RunResult run(const RunConfig& cfg);

} // namespace gmflow
