/*
 * flow.hpp — guided probability-flow velocity fields and ODE integration.
 *
 * The velocity field is dx/dt = -alpha(t) x - beta(t) s_hat(t, x), where
 * s_hat is the unconditional score, the conditional (mixture) score, or the
 * guided combination (1 - omega) s_uncond + omega s_cond. Sampling integrates
 * this ODE backward from t_start (noise) to t_end (data): steps use negative
 * increments and guidance weights are held constant across the substages of a
 * step (zero-order hold), which is how step-indexed weight schedules are
 * defined in the first place.
 *
 * FlowField is immutable and thread-safe; per-step guidance weights are
 * resolved once per grid with resolve_step_omegas before any parallel work.
 */

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gmflow/mixture.hpp"
#include "gmflow/schedule.hpp"
#include "gmflow/vec.hpp"

namespace gmflow {

enum class FieldKind { Unconditional, Conditional, Guided };

class FlowField {
public:
    static FlowField unconditional(GaussianMixture mix, NoiseSchedule ns = {});
    static FlowField conditional(GaussianMixture mix, NoiseSchedule ns = {});
    static FlowField guided(GaussianMixture mix, GuidanceSchedule sched,
                            NoiseSchedule ns = {});

    FieldKind kind() const { return kind_; }
    const GaussianMixture& mixture() const { return mix_; }
    const GuidanceSchedule& schedule() const { return sched_; }
    const NoiseSchedule& noise() const { return ns_; }

    /// The guidance scale this field applies when evaluated without a grid:
    /// 0 for unconditional, 1 for conditional, omega for guided fields with a
    /// constant schedule. Guided fields with step-dependent schedules have no
    /// single scale; throws InvalidInputError for those.
    double constant_omega() const;

    /// v(t, x) at the field's constant guidance scale (see constant_omega).
    Vec velocity(double t, const Vec& x) const;

    /// v(t, x) at an explicit guidance scale. The scale only matters for
    /// guided fields; unconditional/conditional fields ignore it.
    Vec velocity_with_omega(double t, const Vec& x, double omega) const;

private:
    FlowField(FieldKind kind, GaussianMixture mix, GuidanceSchedule sched,
              NoiseSchedule ns);

    FieldKind kind_;
    GaussianMixture mix_;
    GuidanceSchedule sched_;
    NoiseSchedule ns_;
};

/// Guidance scale per step of `grid`: the field's schedule normalized on the
/// grid, with interval off-steps mapped to their field interpretation
/// (off_omega). For unconditional/conditional fields this is all-0 / all-1.
std::vector<double> resolve_step_omegas(const FlowField& field,
                                        const StepGrid& grid);

enum class Method { Euler, Heun, RK4 };

Method method_from_string(const std::string& name);
std::string method_to_string(Method m);

struct IntegratorConfig {
    Method method = Method::RK4;
    std::size_t num_steps = 500;
    double t_start = 0.999;
    double t_end = 0.001;
    /// Record the state every this many steps (the start state and the final
    /// state are always recorded); 0 records endpoints only.
    std::size_t record_every = 1;

    /// Throws InvalidInputError unless t_min <= t_end < t_start <= 1 - t_min
    /// and num_steps >= 1.
    void validate(const NoiseSchedule& ns) const;
    StepGrid grid() const;
};

struct Trajectory {
    std::vector<double> times;   // recorded times, strictly decreasing
    std::vector<Vec> states;     // state at each recorded time
    std::vector<double> norms;   // ||x|| at each recorded time
    std::vector<double> omegas;  // guidance scale of the step at each record
    std::uint64_t seed = 0;      // run seed the initial state came from
    std::string schedule_id;     // GuidanceSchedule::describe() of the field
    int final_mode = -1;         // argmax responsibility at the final state
    bool diverged = false;
    int diverged_step = -1;      // step whose update left the finite guard
    /// Largest finite |x_i| of the offending update (inf if none is finite);
    /// 0 when the trajectory did not diverge.
    double diverged_magnitude = 0.0;
};

/// Advance x in place across steps [n_begin, n_end) of the grid; the target of
/// step N-1 is t_end rather than the grid's conventional terminal 0. Returns
/// the index of the step whose update produced a non-finite or unreasonably
/// large state (the pre-step state is kept), or -1 on success.
int advance_segment(const FlowField& field, const StepGrid& grid,
                    const std::vector<double>& step_omegas, double t_end,
                    std::size_t n_begin, std::size_t n_end, Method method,
                    Vec& x);

Trajectory integrate(const FlowField& field, const IntegratorConfig& cfg,
                     const Vec& x0, std::uint64_t seed = 0);

/// count trajectories from x0 ~ N(0, I) initial states drawn from `seed`.
/// Deterministic for a given seed regardless of thread count.
std::vector<Trajectory> integrate_batch(const FlowField& field,
                                        const IntegratorConfig& cfg,
                                        std::size_t count, std::uint64_t seed);

/// Same, from caller-provided initial states (paired designs share these).
std::vector<Trajectory> integrate_batch_from(const FlowField& field,
                                             const IntegratorConfig& cfg,
                                             const std::vector<Vec>& inits,
                                             std::uint64_t seed);

/// count standard-normal vectors of the given dimension; the stream is keyed
/// by the index so any prefix of a larger draw is reproducible.
std::vector<Vec> sample_initial_states(std::size_t count, std::size_t dim,
                                       std::uint64_t seed);

/// ||x_a(t) - x_b(t)|| along two trajectories of the same field integrated in
/// lockstep; times are every step start plus the final t_end.
struct PairedDistance {
    std::vector<double> times;
    std::vector<double> distances;
    bool diverged = false;
};

PairedDistance paired_integrate(const FlowField& field,
                                const IntegratorConfig& cfg, const Vec& x0_a,
                                const Vec& x0_b);

} // namespace gmflow
