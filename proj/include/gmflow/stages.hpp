/*
 * stages.hpp — the numerical laboratory: statistical verification of the
 * three-stage guided-flow predictions plus the schedule protocol probes.
 *
 *   verify_early_proximity      stage 1: guided trajectories stay closer to
 *                               the scaled attractor omega * mu_bar than the
 *                               plain conditional flow; also estimates the
 *                               limiting derivative of the gap at t -> 1.
 *   solve_zero_thrust           stage 2 machinery: the offset e_t of the
 *                               surface where the conditional velocity's
 *                               projection on the mode axis vanishes.
 *   verify_weaker_mode_persistence
 *                               stage 2: inits on the weaker-mode side of the
 *                               zero-thrust surface keep weaker-mode dominance
 *                               to t_end, independently of the guidance scale.
 *   verify_init_bias            stage 1 -> 2 handoff: balls around k * mu_bar
 *                               stay in the stronger-mode half-space.
 *   verify_contraction          stage 3: within one mode, guided pairs
 *                               contract strictly faster than conditional.
 *   diversity_sweep             occupancy / norm / spread table per schedule.
 *   perturbation_probe          mid-run noise injection MSE per schedule.
 *
 * Every expectation-based check reports standard errors and applies 3-SE
 * margins. All randomness is counter-based per sample index, so results are
 * bit-identical for any thread count.
 *
 * Sign conventions (each matches the analysis it implements; do not mix):
 *   zero-thrust / persistence:  delta_mu = mu_weak  - mu_strong
 *   init bias (half-space):     delta_mu = mu_strong - mu_weak
 */

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gmflow/flow.hpp"
#include "gmflow/mixture.hpp"
#include "gmflow/schedule.hpp"
#include "gmflow/vec.hpp"

namespace gmflow {

/// Outcome of one verification run. `inconclusive` marks degenerate setups
/// (omega = 1, zero weighted mean, ...) where the prediction is vacuous; such
/// runs are not failures.
struct Verdict {
    std::string experiment;
    bool passed = false;
    bool inconclusive = false;
    std::size_t samples_used = 0;
    std::map<std::string, double> stats;
    std::vector<std::string> notes;

    std::string to_json() const;
};

// ---------------------------------------------------------------------------
// Zero-thrust surface (two-component machinery)
// ---------------------------------------------------------------------------

/// The surface { z : <z, delta_mu> = e_t } in rescaled coordinates
/// z = x / (1 - t), with delta_mu = mu_weak - mu_strong.
struct HyperplaneConstruction {
    Vec delta_mu;                 // mu_weak - mu_strong
    std::size_t weak = 0;         // component indices
    std::size_t strong = 0;
    double log_weight_ratio = 0;  // log(pi_strong / pi_weak) >= 0
    double c_t = 0;               // dominance-balance offset
    double e_t = 0;               // first positive zero-thrust crossing
    double residual = 0;          // |g_t(e_t)| after bisection
    double u_max = 0;             // scan upper end <mu_weak, delta_mu>
    bool exists = false;
};

/// The projected thrust g_t(u) = u - (||delta_mu||^2 / 2) *
/// tanh( (1-t)^2 / (2 sigma_t^2) * (u - c_t) ); its first sign change on
/// (0, u_max] defines e_t. Exposed for oracle tests.
double zero_thrust_gap(const GaussianMixture& mix, double t, double u);

/// Requires K = 2 and equal mean norms. Equal weights give exists = false
/// (the asymmetric root degenerates to the midline). Bracket scan plus
/// bisection to interval width 1e-13.
HyperplaneConstruction solve_zero_thrust(const GaussianMixture& mix, double t);

// ---------------------------------------------------------------------------
// Stage 1: early proximity to the scaled attractor
// ---------------------------------------------------------------------------

struct EarlyProximityParams {
    double omega = 3.0;
    double t_e1_candidate = 0.9;  // integrate down to here
    std::size_t n_samples = 10000;
    double derivative_window = 0.02;  // fit window below t_start
    std::uint64_t seed = 1;
    NoiseSchedule noise{};
    IntegratorConfig integrator{Method::RK4, 500, 0.999, 0.9, 1};
};

struct EarlyProximityResult {
    Verdict verdict;
    std::vector<double> times;  // recorded times below t_start, decreasing
    std::vector<double> gap;    // D(t) = E[ V(x_guided) - V(x_cond) ]
    std::vector<double> se;     // standard error of the paired estimate
    // Same gap under the shifted guidance s_cond + omega (s_cond - s_uncond),
    // whose limiting derivative at t -> 1 is 2 omega^2 ||mu_bar||^2.
    std::vector<double> gap_shift;
    std::vector<double> se_shift;
};

/// V(x) = ||x - omega * mu_bar||^2 on shared-init paired runs. Three flows
/// share every init: the plain conditional flow, the blended guidance
/// (1-omega) s_uncond + omega s_cond (which collapses to the conditional flow
/// at omega = 1 and gates the negativity check), and the shifted guidance
/// s_cond + omega (s_cond - s_uncond) (blend weight omega + 1), which carries
/// the limiting-derivative identity D'(t -> 1) = 2 omega^2 ||mu_bar||^2.
/// Passes when D(t) + 3 SE < 0 at every recorded t below t_start and the
/// divergence exclusion rate stays <= 1%. Both derivatives are estimated by
/// through-origin fits on the window below t_start.
EarlyProximityResult verify_early_proximity(const GaussianMixture& mix,
                                            const EarlyProximityParams& p);

// ---------------------------------------------------------------------------
// Stage 2: weaker-mode persistence
// ---------------------------------------------------------------------------

struct PersistenceParams {
    std::vector<double> omegas = {1.0, 3.0, 9.0};
    double t_s2 = 0.05;
    std::size_t n_inits = 1000;
    /// Also require inits to satisfy <z - mu_1, z - mu_2> < 0 (the lens
    /// between the modes) in addition to the half-space condition.
    bool use_slab = false;
    /// Grid on which e_t existence, residual and strict monotonicity are
    /// checked.
    double boundary_grid_lo = 0.05;
    double boundary_grid_hi = 0.4;
    std::size_t boundary_grid_points = 20;
    std::uint64_t seed = 1;
    NoiseSchedule noise{};
    IntegratorConfig integrator{Method::RK4, 200, 0.05, 0.001, 1};
};

struct PersistenceResult {
    Verdict verdict;
    HyperplaneConstruction boundary;        // at t_s2
    std::vector<double> grid_t, grid_e, grid_c, grid_residual;
    std::vector<std::vector<std::uint8_t>> persisted;  // [omega][init]
};

/// Samples inits in U = { x : <x/(1-t_s2), delta_mu> > e_{t_s2} } near the
/// weaker mode; integrates each under every omega; passes when the weaker-mode
/// dominance inequality (in log space) holds at every recorded time for 100%
/// of inits and the persisting sets are identical across omegas. Throws
/// ConstructionError when the zero-thrust surface does not exist at t_s2.
PersistenceResult verify_weaker_mode_persistence(const GaussianMixture& mix,
                                                 const PersistenceParams& p);

// ---------------------------------------------------------------------------
// Stage 1 -> 2 handoff: initialization bias
// ---------------------------------------------------------------------------

struct InitBiasParams {
    double omega = 3.0;
    std::vector<double> k_values = {1.5, 2.0, 3.0};
    double t_s1 = 0.9;            // integration starts here
    std::size_t n_per_k = 1000;
    double ball_margin = 1e-6;    // sample in radius r(k) * (1 - margin)
    std::uint64_t seed = 1;
    NoiseSchedule noise{};
    IntegratorConfig integrator{Method::RK4, 300, 0.9, 0.001, 1};
};

struct InitBiasResult {
    Verdict verdict;
    std::vector<double> radii;               // r(k) per k
    std::vector<double> dominated_fraction;  // per k
    std::vector<double> min_inner;           // per k: min <x_t, delta_mu>
};

/// r(k) = k <mu_bar, delta_mu> / ||delta_mu|| with delta_mu = mu_strong -
/// mu_weak. Inits uniform in the open ball B(k mu_bar, r(k)(1 - margin));
/// passes when <x_t, delta_mu> > 0 and the stronger-mode dominance inequality
/// hold at every recorded t for every init, and r is monotone in k.
InitBiasResult verify_init_bias(const GaussianMixture& mix,
                                const InitBiasParams& p);

// ---------------------------------------------------------------------------
// Stage 3: within-mode contraction
// ---------------------------------------------------------------------------

struct ContractionParams {
    double omega = 5.0;
    double t_s3 = 0.1;
    double pair_radius = 0.01;    // ball radius around (1 - t_s3) mu_k
    std::size_t n_pairs = 500;    // per mode
    double eps_resp = 1e-3;       // well-separation threshold
    double mono_slack = 1e-10;    // tolerance on the non-increasing check
    std::uint64_t seed = 1;
    NoiseSchedule noise{};
    IntegratorConfig integrator{Method::RK4, 200, 0.1, 0.001, 1};
};

struct ContractionResult {
    struct PairRow {
        std::size_t mode = 0, pair = 0;
        bool retained = false;
        bool strict = false;      // guided distance < plain at every t < t_s3
        bool monotone = false;    // log ratio non-increasing along the run
        double final_log_ratio = 0;
    };
    Verdict verdict;
    std::vector<PairRow> rows;
    // Log-distance-ratio distribution over time, across retained pairs.
    std::vector<double> ratio_t, ratio_mean, ratio_min, ratio_max;
};

/// Pairs drawn uniformly in B((1 - t_s3) mu_k, r) for each mode k, integrated
/// under guided(omega) and conditional fields from the same endpoints. Pairs
/// whose four trajectories ever drop mode-k responsibility below 1 - eps_resp
/// are excluded (rate > 5% fails). Passes when every retained pair keeps the
/// strict guided < plain distance inequality at every recorded t < t_s3 with
/// a non-increasing log ratio. omega = 1 is inconclusive by construction.
ContractionResult verify_contraction(const GaussianMixture& mix,
                                     const ContractionParams& p);

// ---------------------------------------------------------------------------
// Schedule probes
// ---------------------------------------------------------------------------

struct DiversityParams {
    std::vector<GuidanceSchedule> schedules;
    std::vector<std::string> labels;  // optional; defaults to describe()
    std::size_t n_samples = 2000;
    std::uint64_t seed = 1;
    NoiseSchedule noise{};
    IntegratorConfig integrator{Method::RK4, 100, 0.999, 0.001, 0};
};

struct DiversityResult {
    struct Row {
        std::string label;
        std::string schedule_id;
        double occupancy_weak = 0;  // fraction ending in the weakest mode
        double occupancy_se = 0;
        double mean_final_norm = 0;
        double mean_pairwise_dist = 0;
        std::size_t n = 0;
    };
    Verdict verdict;  // bookkeeping only; ordering claims live in callers
    std::vector<Row> rows;
    std::vector<std::vector<int>> final_modes;  // [schedule][sample], paired
};

/// All schedules consume identical inits, so per-sample indicator differences
/// between any two rows give paired standard errors. Adjacent-row occupancy
/// differences (later minus earlier) and their SEs are reported in the stats.
DiversityResult diversity_sweep(const GaussianMixture& mix,
                                const DiversityParams& p);

struct PerturbationParams {
    GuidanceSchedule schedule_low = GuidanceSchedule::constant(3.0);
    GuidanceSchedule schedule_latehigh =
        GuidanceSchedule::piecewise({0.0, 0.2, 0.6}, {3.0, 1.0, 5.0});
    double perturb_sigma = 0.04;
    double perturb_fraction = 0.2;  // fork after floor(fraction * N) steps
    std::size_t n_samples = 2000;
    std::uint64_t seed = 1;
    NoiseSchedule noise{};
    IntegratorConfig integrator{Method::Euler, 50, 0.999, 0.001, 0};
};

struct PerturbationResult {
    struct Row {
        std::string label;
        std::string schedule_id;
        double mse = 0;  // mean ||x_end(perturbed) - x_end(clean)||^2
        double se = 0;
        std::size_t n = 0;
    };
    Verdict verdict;
    std::vector<Row> rows;  // [0] = schedule_low, [1] = schedule_latehigh
    double paired_diff = 0;     // mse_latehigh - mse_low (paired)
    double paired_diff_se = 0;
};

/// Each sample integrates to the fork step, splits into a clean branch and a
/// branch displaced by a shared N(0, perturb_sigma^2 I) draw, and finishes
/// both under each schedule. The perturbation draws are identical across
/// schedules, so the MSE difference is a paired estimate.
PerturbationResult perturbation_probe(const GaussianMixture& mix,
                                      const PerturbationParams& p);

} // namespace gmflow
