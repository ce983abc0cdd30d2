/* test_stages.cpp — the verification stages: zero-thrust construction against
 * independent root oracles, degenerate-verdict contracts, and small-scale
 * statistical runs of every stage. */
#include "doctest.h"

#include <cmath>
#include <string>
#include <vector>

#include "gmflow/errors.hpp"
#include "gmflow/stages.hpp"

using namespace gmflow;

namespace {

GaussianMixture narrow_pair(double pi_weak = 0.3, double sigma = 0.05) {
    return GaussianMixture({pi_weak, 1.0 - pi_weak},
                           {Vec{1.0, 0.0}, Vec{-1.0, 0.0}}, sigma);
}

// Instance with mu_bar = (0.6, 1.4), ||mu_bar||^2 = 2.32.
GaussianMixture tilted_pair() {
    return GaussianMixture({0.3, 0.7}, {Vec{2.0, 0.0}, Vec{0.0, 2.0}}, 0.1);
}

} // namespace

TEST_CASE("zero-thrust roots match independently computed values") {
    // Oracles from an independent bisection (scipy brentq) on
    // u - (||dmu||^2/2) tanh(kappa (u - c)).
    const GaussianMixture mix = narrow_pair();
    const struct {
        double t, e;
    } oracle[] = {{0.05, 0.00448898751377551},
                  {0.20, 0.0589042444529842},
                  {0.30, 0.193970391487615},
                  {0.40, 0.710951468652585}};
    double prev = 0.0;
    for (const auto& o : oracle) {
        const HyperplaneConstruction h = solve_zero_thrust(mix, o.t);
        REQUIRE(h.exists);
        CHECK(h.e_t == doctest::Approx(o.e).epsilon(1e-9));
        CHECK(h.residual < 1e-10);
        CHECK(h.e_t > prev);  // e_t grows with t
        prev = h.e_t;

        // Dominance-balance offset: kappa * c == log(pi_s / pi_w) / 2.
        const double kappa = (1.0 - o.t) * (1.0 - o.t) /
                             (2.0 * NoiseSchedule::component_variance(
                                        o.t, mix.sigma()));
        CHECK(kappa * h.c_t ==
              doctest::Approx(0.5 * std::log(0.7 / 0.3)).epsilon(1e-12));
    }

    const HyperplaneConstruction h = solve_zero_thrust(mix, 0.05);
    CHECK(h.weak == 0);
    CHECK(h.strong == 1);
    CHECK(h.u_max == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(h.delta_mu[0] == doctest::Approx(2.0).epsilon(1e-15));

    // The thrust gap changes sign exactly across the root.
    CHECK(zero_thrust_gap(mix, 0.05, h.e_t - 1e-6) > 0.0);
    CHECK(zero_thrust_gap(mix, 0.05, h.e_t + 1e-6) < 0.0);
    CHECK(zero_thrust_gap(mix, 0.05, 0.0) > 0.0);  // unequal weights
}

TEST_CASE("zero-thrust surface degenerates for equal weights") {
    const GaussianMixture mix = narrow_pair(0.5);
    const HyperplaneConstruction h = solve_zero_thrust(mix, 0.05);
    CHECK_FALSE(h.exists);
    CHECK(zero_thrust_gap(mix, 0.05, 0.0) == doctest::Approx(0.0));
}

TEST_CASE("zero-thrust surface vanishes once the weights rebalance in t") {
    // At t = 0.6 the tanh slope is too shallow for an asymmetric crossing.
    const GaussianMixture mix = narrow_pair();
    CHECK_FALSE(solve_zero_thrust(mix, 0.6).exists);
}

TEST_CASE("zero-thrust construction requires two equal-norm modes") {
    const GaussianMixture one({1.0}, {Vec{1.0, 0.0}}, 0.1);
    CHECK_THROWS_AS(solve_zero_thrust(one, 0.1), InvalidInputError);
    const GaussianMixture uneq({0.3, 0.7}, {Vec{2.0, 0.0}, Vec{-1.0, 0.0}},
                               0.1);
    CHECK_THROWS_AS(solve_zero_thrust(uneq, 0.1), InvalidInputError);
}

TEST_CASE("early proximity: degenerate setups are inconclusive") {
    EarlyProximityParams p;
    p.n_samples = 16;
    p.integrator.num_steps = 20;

    SUBCASE("omega = 1") {
        p.omega = 1.0;
        const EarlyProximityResult res =
            verify_early_proximity(tilted_pair(), p);
        CHECK(res.verdict.inconclusive);
        CHECK_FALSE(res.verdict.passed);
        REQUIRE_FALSE(res.verdict.notes.empty());
        CHECK(res.verdict.notes[0].find("inconclusive-by-construction") !=
              std::string::npos);
    }
    SUBCASE("zero weighted mean") {
        p.omega = 3.0;
        const GaussianMixture sym({0.5, 0.5}, {Vec{1.0, 0.0}, Vec{-1.0, 0.0}},
                                  0.1);
        const EarlyProximityResult res = verify_early_proximity(sym, p);
        CHECK(res.verdict.inconclusive);
        CHECK(res.verdict.stats.at("d_prime_expected") == 0.0);
    }
}

TEST_CASE("early proximity: guided trajectories hug the scaled attractor") {
    EarlyProximityParams p;
    p.omega = 3.0;
    p.n_samples = 400;
    p.t_e1_candidate = 0.9;
    p.integrator.num_steps = 100;
    const EarlyProximityResult res = verify_early_proximity(tilted_pair(), p);
    const Verdict& v = res.verdict;
    CHECK(v.passed);
    CHECK_FALSE(v.inconclusive);
    CHECK(v.samples_used == 400);
    CHECK(v.stats.at("mu_bar_norm2") == doctest::Approx(2.32).epsilon(1e-12));
    CHECK(v.stats.at("d_prime_expected") ==
          doctest::Approx(41.76).epsilon(1e-12));
    CHECK(v.stats.at("d_prime_blend_expected") ==
          doctest::Approx(27.84).epsilon(1e-12));
    // Both empirical limiting derivatives sit near their analytic values.
    CHECK(v.stats.at("d_prime_est") ==
          doctest::Approx(41.76).epsilon(0.15));
    CHECK(v.stats.at("d_prime_blend_est") ==
          doctest::Approx(27.84).epsilon(0.15));
    CHECK(v.stats.at("neg_all") == 1.0);
    CHECK(v.stats.at("excluded_fraction") == 0.0);

    REQUIRE(res.gap.size() == res.times.size());
    REQUIRE(res.gap_shift.size() == res.times.size());
    for (std::size_t j = 0; j < res.gap.size(); ++j) {
        CHECK(res.gap[j] + 3.0 * res.se[j] < 0.0);
        CHECK(res.gap_shift[j] < 0.0);
    }
}

TEST_CASE("early proximity validates its inputs") {
    EarlyProximityParams p;
    p.n_samples = 1;
    CHECK_THROWS_AS(verify_early_proximity(tilted_pair(), p),
                    InvalidInputError);
    p.n_samples = 10;
    p.omega = 0.5;
    CHECK_THROWS_AS(verify_early_proximity(tilted_pair(), p),
                    InvalidInputError);
    p.omega = 3.0;
    p.derivative_window = 1e-9;  // narrower than one step: nothing recorded
    p.integrator.num_steps = 50;
    CHECK_THROWS_WITH_AS(verify_early_proximity(tilted_pair(), p),
                         doctest::Contains("derivative_window"),
                         InvalidInputError);
}

TEST_CASE("weaker-mode persistence holds and is scale-independent") {
    PersistenceParams p;
    p.omegas = {1.0, 3.0};
    p.n_inits = 60;
    p.integrator.num_steps = 100;
    const PersistenceResult res =
        verify_weaker_mode_persistence(narrow_pair(), p);
    const Verdict& v = res.verdict;
    CHECK(v.passed);
    CHECK(v.stats.at("persist_fraction_omega_1") == 1.0);
    CHECK(v.stats.at("persist_fraction_omega_3") == 1.0);
    CHECK(v.stats.at("sets_identical") == 1.0);
    CHECK(v.stats.at("grid_exists_all") == 1.0);
    CHECK(v.stats.at("grid_strictly_increasing") == 1.0);
    CHECK(v.stats.at("root_residual") < 1e-10);
    CHECK(res.boundary.e_t ==
          doctest::Approx(0.00448898751377551).epsilon(1e-9));
    REQUIRE(res.persisted.size() == 2);
    REQUIRE(res.persisted[0].size() == 60);
}

TEST_CASE("persistence refuses setups without a basin boundary") {
    PersistenceParams p;
    p.n_inits = 4;
    CHECK_THROWS_WITH_AS(
        verify_weaker_mode_persistence(narrow_pair(0.5), p),
        doctest::Contains("zero-thrust"), ConstructionError);
}

TEST_CASE("initialization bias: exact radii and stronger-mode dominance") {
    InitBiasParams p;
    p.k_values = {1.5, 2.0, 3.0};
    p.n_per_k = 40;
    p.integrator.num_steps = 60;
    const InitBiasResult res = verify_init_bias(tilted_pair(), p);
    const Verdict& v = res.verdict;
    CHECK(v.passed);
    // r(k) = k <mu_bar, dmu> / ||dmu|| = k * 1.6 / (2 sqrt(2)), exactly.
    const double unit = 1.6 / (2.0 * std::sqrt(2.0));
    REQUIRE(res.radii.size() == 3);
    CHECK(std::abs(res.radii[0] - 1.5 * unit) < 1e-12);
    CHECK(std::abs(res.radii[1] - 2.0 * unit) < 1e-12);
    CHECK(std::abs(res.radii[2] - 3.0 * unit) < 1e-12);
    CHECK(v.stats.at("dominated_fraction_k_1.5") == 1.0);
    CHECK(v.stats.at("dominated_fraction_k_2") == 1.0);
    CHECK(v.stats.at("dominated_fraction_k_3") == 1.0);
    CHECK(v.stats.at("radius_monotone") == 1.0);
    CHECK(v.stats.at("min_inner_k_2") > 0.0);
}

TEST_CASE("initialization bias validates geometry and inputs") {
    InitBiasParams p;
    p.k_values = {0.5};
    CHECK_THROWS_AS(verify_init_bias(tilted_pair(), p), InvalidInputError);
    p.k_values = {2.0};
    // Weighted mean pointing away from the stronger mode has no radius.
    const GaussianMixture opposed({0.3, 0.7}, {Vec{5.0, 0.0}, Vec{1.0, 0.0}},
                                  0.1);
    CHECK_THROWS_WITH_AS(verify_init_bias(opposed, p),
                         doctest::Contains("r(k)"), InvalidInputError);
}

TEST_CASE("contraction: omega = 1 is inconclusive by construction") {
    ContractionParams p;
    p.omega = 1.0;
    p.n_pairs = 4;
    const ContractionResult res =
        verify_contraction(narrow_pair(0.3, 0.1), p);
    CHECK(res.verdict.inconclusive);
    CHECK_FALSE(res.verdict.passed);
    CHECK(res.rows.empty());
}

TEST_CASE("contraction matches the K=1 closed-form log ratio") {
    const GaussianMixture one({1.0}, {Vec{0.5, -0.5}}, 0.3);
    ContractionParams p;
    p.omega = 5.0;
    p.n_pairs = 30;
    p.integrator.num_steps = 100;
    const ContractionResult res = verify_contraction(one, p);
    const Verdict& v = res.verdict;
    CHECK(v.passed);
    CHECK(v.stats.at("excluded_fraction") == 0.0);
    CHECK(v.stats.at("strict_fraction") == 1.0);
    CHECK(v.stats.at("monotone_fraction") == 1.0);

    // For a single mode the fields are affine, so every pair shares
    // log(d_guided / d_plain)(t_end) =
    //   (omega - 1) [dlog sigma_c - dlog sigma_u] between t_s3 and t_end.
    const double ts = p.t_s3, te = p.integrator.t_end, sg = one.sigma();
    const double want =
        (p.omega - 1.0) *
        0.5 *
        (std::log(NoiseSchedule::component_variance(te, sg) /
                  NoiseSchedule::component_variance(ts, sg)) -
         std::log(NoiseSchedule::unconditional_variance(te) /
                  NoiseSchedule::unconditional_variance(ts)));
    CHECK(want < 0.0);
    CHECK(v.stats.at("mean_final_log_ratio") ==
          doctest::Approx(want).epsilon(1e-5));
    for (const auto& row : res.rows)
        CHECK(row.final_log_ratio == doctest::Approx(want).epsilon(1e-5));
}

TEST_CASE("contraction holds within both modes of the tilted instance") {
    ContractionParams p;
    p.omega = 5.0;
    p.n_pairs = 30;
    p.integrator.num_steps = 100;
    const ContractionResult res = verify_contraction(tilted_pair(), p);
    const Verdict& v = res.verdict;
    CHECK(v.passed);
    CHECK(v.stats.at("n_pairs_total") == 60.0);
    CHECK(v.stats.at("strict_fraction") == 1.0);
    CHECK(v.stats.at("monotone_fraction") == 1.0);
    CHECK(v.stats.at("mean_final_log_ratio") < 0.0);
    REQUIRE_FALSE(res.ratio_t.empty());
    CHECK(res.ratio_mean.back() < 0.0);
}

TEST_CASE("contraction validates inputs") {
    ContractionParams p;
    p.omega = 0.5;
    CHECK_THROWS_AS(verify_contraction(narrow_pair(), p), InvalidInputError);
    p.omega = 3.0;
    p.pair_radius = 0.0;
    CHECK_THROWS_AS(verify_contraction(narrow_pair(), p), InvalidInputError);
    p.pair_radius = 0.01;
    const GaussianMixture wide({1.0}, {Vec{0.0, 0.0}}, 1.5);
    CHECK_THROWS_AS(verify_contraction(wide, p), InvalidInputError);
}

TEST_CASE("diversity: conditional sampling recovers the mixture weights") {
    DiversityParams p;
    p.schedules = {GuidanceSchedule::constant(1.0),
                   GuidanceSchedule::constant(9.0)};
    p.n_samples = 600;
    p.integrator.num_steps = 60;
    const GaussianMixture mix = narrow_pair(0.3, 0.4);
    const DiversityResult res = diversity_sweep(mix, p);
    REQUIRE(res.rows.size() == 2);
    // omega = 1 occupancy of the weaker mode ~ its prior weight.
    CHECK(res.rows[0].occupancy_weak == doctest::Approx(0.3).epsilon(0.25));
    CHECK(std::abs(res.rows[0].occupancy_weak - 0.3) <
          3.0 * res.rows[0].occupancy_se + 0.02);
    // Strong guidance suppresses the weaker mode.
    CHECK(res.rows[1].occupancy_weak < res.rows[0].occupancy_weak);
    CHECK(res.rows[0].n == 600);
    CHECK(res.verdict.passed);  // bookkeeping verdict
    REQUIRE(res.final_modes.size() == 2);
    REQUIRE(res.final_modes[0].size() == 600);
    // Stats carry per-row and adjacent-difference entries.
    CHECK(res.verdict.stats.count("occupancy_constant(omega=1)") == 1);
    CHECK(res.verdict.stats.count(
              "occ_diff_constant(omega=1)_to_constant(omega=9)") == 1);
}

TEST_CASE("diversity pairs identical schedules exactly") {
    DiversityParams p;
    p.schedules = {GuidanceSchedule::constant(3.0),
                   GuidanceSchedule::constant(3.0)};
    p.labels = {"a", "b"};
    p.n_samples = 64;
    p.integrator.num_steps = 30;
    const DiversityResult res = diversity_sweep(narrow_pair(0.3, 0.4), p);
    CHECK(res.rows[0].occupancy_weak == res.rows[1].occupancy_weak);
    CHECK(res.verdict.stats.at("occ_diff_a_to_b") == 0.0);
    CHECK(res.final_modes[0] == res.final_modes[1]);
}

TEST_CASE("diversity validates labels") {
    DiversityParams p;
    p.schedules = {GuidanceSchedule::constant(1.0),
                   GuidanceSchedule::constant(3.0)};
    p.labels = {"only-one"};
    CHECK_THROWS_AS(diversity_sweep(narrow_pair(), p), InvalidInputError);
}

TEST_CASE("perturbation probe: zero noise leaves trajectories untouched") {
    PerturbationParams p;
    p.perturb_sigma = 0.0;
    p.n_samples = 32;
    p.integrator.num_steps = 20;
    const PerturbationResult res =
        perturbation_probe(narrow_pair(0.3, 0.4), p);
    CHECK(res.rows[0].mse == 0.0);
    CHECK(res.rows[1].mse == 0.0);
    CHECK(res.paired_diff == 0.0);
}

TEST_CASE("perturbation probe reports per-arm MSE and the paired gap") {
    PerturbationParams p;
    p.n_samples = 400;
    const PerturbationResult res =
        perturbation_probe(narrow_pair(0.3, 0.4), p);
    REQUIRE(res.rows.size() == 2);
    CHECK(res.rows[0].label == "low");
    CHECK(res.rows[1].label == "late_high");
    CHECK(res.rows[0].mse > 0.0);
    CHECK(res.rows[1].mse > 0.0);
    CHECK(std::isfinite(res.paired_diff_se));
    CHECK(res.verdict.stats.at("fork_step") == 10.0);  // floor(0.2 * 50)
    CHECK(res.verdict.stats.at("mse_low") == res.rows[0].mse);
    CHECK(res.verdict.stats.at("mse_late_high") == res.rows[1].mse);
}

TEST_CASE("perturbation probe validates inputs") {
    PerturbationParams p;
    p.perturb_fraction = 0.0;
    CHECK_THROWS_AS(perturbation_probe(narrow_pair(), p), InvalidInputError);
    p.perturb_fraction = 1.0;
    CHECK_THROWS_AS(perturbation_probe(narrow_pair(), p), InvalidInputError);
    p.perturb_fraction = 0.2;
    p.perturb_sigma = -0.1;
    CHECK_THROWS_AS(perturbation_probe(narrow_pair(), p), InvalidInputError);
}

TEST_CASE("verdict JSON serialization") {
    Verdict v;
    v.experiment = "verify-thm2";
    v.passed = true;
    v.samples_used = 12;
    v.stats["alpha"] = 1.5;
    v.notes.push_back("note one");
    const std::string j = v.to_json();
    CHECK(j.find("\"experiment\"") != std::string::npos);
    CHECK(j.find("verify-thm2") != std::string::npos);
    CHECK(j.find("\"alpha\"") != std::string::npos);
    CHECK(j.find("note one") != std::string::npos);
}
