/*
 * flow.cpp — velocity evaluation and fixed-step backward ODE integration.
 */

#include "gmflow/flow.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <utility>

#include "gmflow/errors.hpp"
#include "gmflow/parallel.hpp"
#include "gmflow/rng.hpp"

namespace gmflow {

namespace {

// A state whose largest coordinate passes this is treated as diverged; the
// honest mixtures studied here keep trajectories within a few units.
constexpr double kDivergenceGuard = 1e12;

bool state_ok(const Vec& x) {
    if (!all_finite(x)) return false;
    for (double v : x)
        if (std::abs(v) > kDivergenceGuard) return false;
    return true;
}

/// One fixed step from t to t_next (t_next < t) with the guidance scale held
/// constant across substages.
void step_once(const FlowField& field, double t, double t_next, double omega,
               Method method, Vec& x) {
    const double h = t_next - t;
    switch (method) {
    case Method::Euler: {
        const Vec k1 = field.velocity_with_omega(t, x, omega);
        axpy(h, k1, x);
        return;
    }
    case Method::Heun: {
        const Vec k1 = field.velocity_with_omega(t, x, omega);
        Vec x1 = x;
        axpy(h, k1, x1);
        const Vec k2 = field.velocity_with_omega(t_next, x1, omega);
        for (std::size_t i = 0; i < x.size(); ++i)
            x[i] += 0.5 * h * (k1[i] + k2[i]);
        return;
    }
    case Method::RK4: {
        const double tm = t + 0.5 * h;
        const Vec k1 = field.velocity_with_omega(t, x, omega);
        Vec xs = x;
        axpy(0.5 * h, k1, xs);
        const Vec k2 = field.velocity_with_omega(tm, xs, omega);
        xs = x;
        axpy(0.5 * h, k2, xs);
        const Vec k3 = field.velocity_with_omega(tm, xs, omega);
        xs = x;
        axpy(h, k3, xs);
        const Vec k4 = field.velocity_with_omega(t_next, xs, omega);
        for (std::size_t i = 0; i < x.size(); ++i)
            x[i] += (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        return;
    }
    }
}

/// Target time of step n: the next grid time, except the final step lands on
/// the integrator's t_end (the grid's terminal entry is the conventional 0
/// used only by weight normalization).
double step_target(const StepGrid& grid, double t_end, std::size_t n) {
    return (n + 1 < grid.num_steps()) ? grid.times[n + 1] : t_end;
}

} // namespace

FlowField::FlowField(FieldKind kind, GaussianMixture mix, GuidanceSchedule sched,
                     NoiseSchedule ns)
    : kind_(kind), mix_(std::move(mix)), sched_(std::move(sched)), ns_(ns) {}

FlowField FlowField::unconditional(GaussianMixture mix, NoiseSchedule ns) {
    return FlowField(FieldKind::Unconditional, std::move(mix),
                     GuidanceSchedule::constant(0.0), ns);
}

FlowField FlowField::conditional(GaussianMixture mix, NoiseSchedule ns) {
    return FlowField(FieldKind::Conditional, std::move(mix),
                     GuidanceSchedule::constant(1.0), ns);
}

FlowField FlowField::guided(GaussianMixture mix, GuidanceSchedule sched,
                            NoiseSchedule ns) {
    return FlowField(FieldKind::Guided, std::move(mix), std::move(sched), ns);
}

double FlowField::constant_omega() const {
    switch (kind_) {
    case FieldKind::Unconditional: return 0.0;
    case FieldKind::Conditional: return 1.0;
    case FieldKind::Guided:
        if (sched_.kind() == ScheduleKind::Constant)
            return sched_.nominal_omega();
        throw InvalidInputError(
            "guided field with a step-dependent schedule has no single "
            "guidance scale; resolve it on a step grid");
    }
    return 1.0; // unreachable
}

Vec FlowField::velocity(double t, const Vec& x) const {
    return velocity_with_omega(t, x, constant_omega());
}

Vec FlowField::velocity_with_omega(double t, const Vec& x, double omega) const {
    Vec s;
    switch (kind_) {
    case FieldKind::Unconditional:
        s = score_unconditional(ns_, t, x);
        break;
    case FieldKind::Conditional:
        s = score_conditional(mix_, ns_, t, x);
        break;
    case FieldKind::Guided: {
        s = score_conditional(mix_, ns_, t, x);
        const Vec su = score_unconditional(ns_, t, x);
        // s_hat = (1 - omega) s_uncond + omega s_cond; omega = 1 is exactly
        // the conditional field.
        for (std::size_t i = 0; i < s.size(); ++i)
            s[i] = (1.0 - omega) * su[i] + omega * s[i];
        break;
    }
    }
    const double a = ns_.alpha(t);
    const double b = ns_.beta(t);
    Vec v(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) v[i] = -a * x[i] - b * s[i];
    return v;
}

std::vector<double> resolve_step_omegas(const FlowField& field,
                                        const StepGrid& grid) {
    const std::size_t n_steps = grid.num_steps();
    std::vector<double> out(n_steps);
    if (field.kind() != FieldKind::Guided) {
        std::fill(out.begin(), out.end(),
                  field.kind() == FieldKind::Conditional ? 1.0 : 0.0);
        return out;
    }
    const GuidanceSchedule resolved = field.schedule().normalized(grid);
    for (std::size_t n = 0; n < n_steps; ++n)
        out[n] = resolved.applied_at(grid, n);
    return out;
}

Method method_from_string(const std::string& name) {
    std::string low(name);
    std::transform(low.begin(), low.end(), low.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    if (low == "euler") return Method::Euler;
    if (low == "heun") return Method::Heun;
    if (low == "rk4") return Method::RK4;
    throw InvalidInputError("unknown integrator method \"" + name +
                            "\" (expected euler, heun or rk4)");
}

std::string method_to_string(Method m) {
    switch (m) {
    case Method::Euler: return "euler";
    case Method::Heun: return "heun";
    case Method::RK4: return "rk4";
    }
    return "rk4"; // unreachable
}

void IntegratorConfig::validate(const NoiseSchedule& ns) const {
    if (num_steps < 1)
        throw InvalidInputError("integrator needs num_steps >= 1");
    if (!(t_end >= ns.t_min - 1e-15))
        throw InvalidInputError("integrator t_end must be >= the schedule's "
                                "t_min clamp");
    if (!(t_start > t_end))
        throw InvalidInputError("integrator needs t_start > t_end");
    if (!(t_start <= 1.0 - ns.t_min + 1e-15))
        throw InvalidInputError("integrator t_start must be <= 1 - t_min");
}

StepGrid IntegratorConfig::grid() const {
    return StepGrid::uniform(t_start, t_end, num_steps);
}

int advance_segment(const FlowField& field, const StepGrid& grid,
                    const std::vector<double>& step_omegas, double t_end,
                    std::size_t n_begin, std::size_t n_end, Method method,
                    Vec& x) {
    for (std::size_t n = n_begin; n < n_end; ++n) {
        Vec trial = x;
        step_once(field, grid.times[n], step_target(grid, t_end, n),
                  step_omegas[n], method, trial);
        if (!state_ok(trial)) return static_cast<int>(n);
        x = std::move(trial);
    }
    return -1;
}

namespace {

Trajectory integrate_on(const FlowField& field, const IntegratorConfig& cfg,
                        const StepGrid& grid,
                        const std::vector<double>& step_omegas, const Vec& x0,
                        std::uint64_t seed) {
    if (x0.size() != field.mixture().dim())
        throw InvalidInputError("initial state dimension does not match the "
                                "mixture");

    Trajectory traj;
    traj.seed = seed;
    traj.schedule_id = field.schedule().describe();
    const std::size_t n_steps = grid.num_steps();

    auto record = [&](double t, const Vec& x, double omega) {
        traj.times.push_back(t);
        traj.states.push_back(x);
        traj.norms.push_back(norm(x));
        traj.omegas.push_back(omega);
    };

    Vec x = x0;
    record(grid.times[0], x, step_omegas[0]);
    for (std::size_t n = 0; n < n_steps; ++n) {
        Vec trial = x;
        step_once(field, grid.times[n], step_target(grid, cfg.t_end, n),
                  step_omegas[n], cfg.method, trial);
        if (!state_ok(trial)) {
            traj.diverged = true;
            traj.diverged_step = static_cast<int>(n);
            double mag = 0.0;
            bool any_finite = false;
            for (double c : trial)
                if (std::isfinite(c)) {
                    mag = std::max(mag, std::abs(c));
                    any_finite = true;
                }
            traj.diverged_magnitude =
                any_finite ? mag : std::numeric_limits<double>::infinity();
            break;
        }
        x = std::move(trial);
        const bool last = (n + 1 == n_steps);
        const bool due =
            cfg.record_every > 0 && ((n + 1) % cfg.record_every == 0);
        if ((due && !last) || last)
            record(step_target(grid, cfg.t_end, n), x, step_omegas[n]);
    }

    if (!traj.diverged) {
        const Responsibilities resp =
            responsibilities(field.mixture(), field.noise(), cfg.t_end, x);
        traj.final_mode = static_cast<int>(
            std::max_element(resp.values.begin(), resp.values.end()) -
            resp.values.begin());
    }
    return traj;
}

// Stream labels keep the RNG substreams of unrelated draws disjoint.
const std::uint64_t kInitStream = fnv1a64(std::string("gmflow.flow.init"));

} // namespace

Trajectory integrate(const FlowField& field, const IntegratorConfig& cfg,
                     const Vec& x0, std::uint64_t seed) {
    cfg.validate(field.noise());
    const StepGrid grid = cfg.grid();
    return integrate_on(field, cfg, grid, resolve_step_omegas(field, grid), x0,
                        seed);
}

std::vector<Vec> sample_initial_states(std::size_t count, std::size_t dim,
                                       std::uint64_t seed) {
    std::vector<Vec> inits(count);
    for (std::size_t i = 0; i < count; ++i) {
        CounterRng rng(seed, kInitStream, CounterRng::substream(0, i));
        inits[i] = rng.gaussian_vector(dim);
    }
    return inits;
}

std::vector<Trajectory> integrate_batch_from(const FlowField& field,
                                             const IntegratorConfig& cfg,
                                             const std::vector<Vec>& inits,
                                             std::uint64_t seed) {
    cfg.validate(field.noise());
    const StepGrid grid = cfg.grid();
    const std::vector<double> omegas = resolve_step_omegas(field, grid);

    std::vector<Trajectory> out(inits.size());
    parallel_for(inits.size(), [&](std::size_t i) {
        out[i] = integrate_on(field, cfg, grid, omegas, inits[i], seed);
    });
    return out;
}

std::vector<Trajectory> integrate_batch(const FlowField& field,
                                        const IntegratorConfig& cfg,
                                        std::size_t count, std::uint64_t seed) {
    return integrate_batch_from(
        field, cfg, sample_initial_states(count, field.mixture().dim(), seed),
        seed);
}

PairedDistance paired_integrate(const FlowField& field,
                                const IntegratorConfig& cfg, const Vec& x0_a,
                                const Vec& x0_b) {
    cfg.validate(field.noise());
    const StepGrid grid = cfg.grid();
    const std::vector<double> omegas = resolve_step_omegas(field, grid);

    PairedDistance out;
    Vec a = x0_a;
    Vec b = x0_b;
    out.times.push_back(grid.times[0]);
    out.distances.push_back(dist(a, b));
    for (std::size_t n = 0; n < grid.num_steps(); ++n) {
        const double target = step_target(grid, cfg.t_end, n);
        step_once(field, grid.times[n], target, omegas[n], cfg.method, a);
        step_once(field, grid.times[n], target, omegas[n], cfg.method, b);
        if (!state_ok(a) || !state_ok(b)) {
            out.diverged = true;
            break;
        }
        out.times.push_back(target);
        out.distances.push_back(dist(a, b));
    }
    return out;
}

} // namespace gmflow
