/*
 * schedule.hpp — guidance-weight schedules omega(t_n) over a step grid.
 *
 * Five kinds:
 *   constant   — omega at every step.
 *   two_phase  — omega_early before floor(switch_fraction * N), omega_late after.
 *   interval   — a weight table that is 0 outside [active_lo, active_hi) (step
 *                fractions) and an in-interval value inside; normalization sets
 *                the in-interval value to omega / (in-interval time mass). How a
 *                zero table entry drives the flow is a separate knob (off_omega):
 *                1 = sample the conditional model on off steps (default), 0 =
 *                unconditional (ablation).
 *   tv         — triangular ramp peaking at n = ceil(N/2), scaled by a factor A
 *                that normalization solves in closed form so that
 *                sum_n omega_{t_n} (t_n - t_{n+1}) = omega with t_N = 0.
 *   piecewise  — explicit (break fraction, value) segments; generalizes
 *                two_phase to >= 3 phases for protocol schedules.
 *
 * Weight evaluation is pure; schedules are immutable after normalization.
 */

#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace gmflow {

/// The step times t_0 > t_1 > ... > t_{N-1} used by the integrator, plus the
/// conventional terminal entry t_N = 0 that only the weight-normalization sums
/// use (the integrator itself stops at its configured t_end).
struct StepGrid {
    std::vector<double> times; // size N + 1, times.back() == 0

    static StepGrid uniform(double t_start, double t_end, std::size_t n);

    std::size_t num_steps() const { return times.size() - 1; }
    /// t_n - t_{n+1} (the last delta reaches down to the conventional 0).
    double delta(std::size_t n) const { return times[n] - times[n + 1]; }
};

enum class ScheduleKind { Constant, TwoPhase, Interval, TimeVarying, Piecewise };

class GuidanceSchedule {
public:
    static GuidanceSchedule constant(double omega);
    static GuidanceSchedule two_phase(double omega_early, double omega_late,
                                      double switch_fraction);
    static GuidanceSchedule interval(double omega, double active_lo,
                                     double active_hi, bool normalized = true,
                                     double off_omega = 1.0);
    /// s defaults to omega - 1 when negative is passed.
    static GuidanceSchedule time_varying(double omega, int n = 0, double s = -1.0);
    static GuidanceSchedule piecewise(std::vector<double> break_fractions,
                                      std::vector<double> values);

    /// JSON spec, e.g. {"kind":"tv","omega":9,"n":50}; see from_json source for
    /// the accepted fields of each kind.
    static GuidanceSchedule from_json(const std::string& text);
    std::string to_json() const;

    ScheduleKind kind() const { return kind_; }
    double nominal_omega() const { return omega_; }
    double off_omega() const { return off_omega_; }
    double normalization_factor() const { return A_; }
    bool wants_normalization() const;

    /// omega_{t_n}: the weight-table entry for step n on this grid.
    double weight_at(const StepGrid& grid, std::size_t n) const;

    /// Guidance scale actually applied at step n: equals weight_at except for
    /// interval schedules, whose off steps map to off_omega.
    double applied_at(const StepGrid& grid, std::size_t n) const;

    /// Copy with the normalization constant solved so the weighted sum
    /// constraint holds on this grid; identity for kinds that do not
    /// normalize. Idempotent. Throws ConstructionError when the grid carries
    /// no active weight mass.
    GuidanceSchedule normalized(const StepGrid& grid) const;

    /// sum_n weight_at(n) * (t_n - t_{n+1}) — the normalization functional.
    double weighted_sum(const StepGrid& grid) const;

    /// Human/machine readable identifier, e.g. "tv(omega=9,s=8)".
    std::string describe() const;

private:
    GuidanceSchedule() = default;
    void validate() const;

    ScheduleKind kind_ = ScheduleKind::Constant;
    double omega_ = 1.0;       // nominal scale (constant/interval/tv)
    double omega_early_ = 1.0; // two_phase
    double omega_late_ = 1.0;
    double switch_fraction_ = 0.0;
    double active_lo_ = 0.0; // interval, as step fractions
    double active_hi_ = 1.0;
    bool normalize_interval_ = true;
    double interval_value_ = 1.0; // in-interval table value (set by normalize)
    double off_omega_ = 1.0;      // field interpretation of off steps
    int tv_n_ = 0;                // advisory step count for tv (0 = any)
    double s_ = 0.0;              // tv slope amplitude
    double A_ = 1.0;              // tv normalization factor
    std::vector<double> breaks_;  // piecewise
    std::vector<double> values_;
};

/// One dump row: (step index, t_n, weight-table entry).
struct ScheduleRow {
    std::size_t n;
    double t;
    double omega;
};

std::vector<ScheduleRow> dump_schedule(const GuidanceSchedule& sched,
                                       const StepGrid& grid);

} // namespace gmflow
