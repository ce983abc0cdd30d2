/*
 * schedule.cpp — guidance schedule evaluation and normalization.
 */

#include "gmflow/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include <json.hpp>

#include "gmflow/errors.hpp"

namespace gmflow {

namespace {

// Fraction comparisons tolerate the rounding of n/N against user-given
// fractions like 0.2 and 0.6.
constexpr double kFracEps = 1e-12;

std::string fmt(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

} // namespace

StepGrid StepGrid::uniform(double t_start, double t_end, std::size_t n) {
    if (n < 1) throw InvalidInputError("step grid needs n >= 1");
    if (!(t_start > t_end) || !std::isfinite(t_start) || !std::isfinite(t_end) ||
        t_end < 0.0)
        throw InvalidInputError("step grid needs t_start > t_end >= 0");
    StepGrid g;
    g.times.resize(n + 1);
    const double h = (t_start - t_end) / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        g.times[i] = t_start - static_cast<double>(i) * h;
    g.times[n] = 0.0; // terminal convention used only by weight sums
    return g;
}

GuidanceSchedule GuidanceSchedule::constant(double omega) {
    GuidanceSchedule s;
    s.kind_ = ScheduleKind::Constant;
    s.omega_ = omega;
    s.validate();
    return s;
}

GuidanceSchedule GuidanceSchedule::two_phase(double omega_early,
                                             double omega_late,
                                             double switch_fraction) {
    GuidanceSchedule s;
    s.kind_ = ScheduleKind::TwoPhase;
    s.omega_early_ = omega_early;
    s.omega_late_ = omega_late;
    s.switch_fraction_ = switch_fraction;
    s.omega_ = std::max(omega_early, omega_late);
    s.validate();
    return s;
}

GuidanceSchedule GuidanceSchedule::interval(double omega, double active_lo,
                                            double active_hi, bool normalized,
                                            double off_omega) {
    GuidanceSchedule s;
    s.kind_ = ScheduleKind::Interval;
    s.omega_ = omega;
    s.active_lo_ = active_lo;
    s.active_hi_ = active_hi;
    s.normalize_interval_ = normalized;
    s.interval_value_ = omega; // pre-normalization table value
    s.off_omega_ = off_omega;
    s.validate();
    return s;
}

GuidanceSchedule GuidanceSchedule::time_varying(double omega, int n, double s) {
    GuidanceSchedule g;
    g.kind_ = ScheduleKind::TimeVarying;
    g.omega_ = omega;
    g.tv_n_ = n;
    g.s_ = (s < 0.0) ? omega - 1.0 : s;
    g.A_ = 1.0;
    g.validate();
    return g;
}

GuidanceSchedule GuidanceSchedule::piecewise(std::vector<double> break_fractions,
                                             std::vector<double> values) {
    GuidanceSchedule s;
    s.kind_ = ScheduleKind::Piecewise;
    s.breaks_ = std::move(break_fractions);
    s.values_ = std::move(values);
    if (!s.values_.empty())
        s.omega_ = *std::max_element(s.values_.begin(), s.values_.end());
    s.validate();
    return s;
}

void GuidanceSchedule::validate() const {
    switch (kind_) {
    case ScheduleKind::Constant:
        if (!(omega_ >= 0.0) || !std::isfinite(omega_))
            throw InvalidInputError("constant schedule needs omega >= 0");
        break;
    case ScheduleKind::TwoPhase:
        if (!(omega_early_ >= 0.0) || !(omega_late_ >= 0.0))
            throw InvalidInputError("two_phase weights must be >= 0");
        if (!(switch_fraction_ >= 0.0) || !(switch_fraction_ <= 1.0))
            throw InvalidInputError("switch_fraction must lie in [0, 1]");
        break;
    case ScheduleKind::Interval:
        if (!(omega_ >= 1.0))
            throw InvalidInputError("interval schedule needs nominal omega >= 1");
        if (!(active_lo_ >= 0.0) || !(active_hi_ <= 1.0) ||
            !(active_lo_ < active_hi_))
            throw InvalidInputError(
                "interval needs 0 <= active_lo < active_hi <= 1");
        if (!(off_omega_ >= 0.0))
            throw InvalidInputError("off_omega must be >= 0");
        break;
    case ScheduleKind::TimeVarying:
        if (!(omega_ >= 1.0))
            throw InvalidInputError("tv schedule needs nominal omega >= 1");
        if (!(s_ >= 0.0) || !(s_ <= omega_))
            throw InvalidInputError(
                "tv slope amplitude s must lie in [0, omega] so weights stay "
                ">= 0");
        if (tv_n_ < 0) throw InvalidInputError("tv step count must be >= 0");
        break;
    case ScheduleKind::Piecewise: {
        if (breaks_.empty() || breaks_.size() != values_.size())
            throw InvalidInputError(
                "piecewise needs equally many break fractions and values");
        if (std::abs(breaks_.front()) > kFracEps)
            throw InvalidInputError("piecewise breaks must start at 0");
        for (std::size_t i = 0; i + 1 < breaks_.size(); ++i)
            if (!(breaks_[i] < breaks_[i + 1]))
                throw InvalidInputError("piecewise breaks must be increasing");
        if (breaks_.back() >= 1.0)
            throw InvalidInputError("piecewise breaks must stay below 1");
        for (double v : values_)
            if (!(v >= 0.0) || !std::isfinite(v))
                throw InvalidInputError("piecewise values must be >= 0");
        break;
    }
    }
}

bool GuidanceSchedule::wants_normalization() const {
    return kind_ == ScheduleKind::TimeVarying ||
           (kind_ == ScheduleKind::Interval && normalize_interval_);
}

double GuidanceSchedule::weight_at(const StepGrid& grid, std::size_t n) const {
    const std::size_t N = grid.num_steps();
    if (n >= N) throw InvalidInputError("schedule step index out of range");
    const double frac =
        static_cast<double>(n) / static_cast<double>(N);
    switch (kind_) {
    case ScheduleKind::Constant:
        return omega_;
    case ScheduleKind::TwoPhase:
        return (n < static_cast<std::size_t>(std::floor(
                        switch_fraction_ * static_cast<double>(N))))
                   ? omega_early_
                   : omega_late_;
    case ScheduleKind::Interval: {
        const bool in =
            frac >= active_lo_ - kFracEps && frac < active_hi_ - kFracEps;
        return in ? interval_value_ : 0.0;
    }
    case ScheduleKind::TimeVarying: {
        if (tv_n_ > 0 && static_cast<std::size_t>(tv_n_) != N)
            throw InvalidInputError(
                "tv schedule was configured for " + std::to_string(tv_n_) +
                " steps but the grid has " + std::to_string(N));
        const double m = std::ceil(static_cast<double>(N) / 2.0);
        const double ramp =
            (static_cast<double>(n) <= m)
                ? (2.0 * s_ / m) * static_cast<double>(n) + omega_ - s_
                : (2.0 * s_ / m) * static_cast<double>(N - n) + omega_ - s_;
        return A_ * ramp;
    }
    case ScheduleKind::Piecewise: {
        std::size_t seg = 0;
        for (std::size_t i = 0; i < breaks_.size(); ++i)
            if (frac >= breaks_[i] - kFracEps) seg = i;
        return values_[seg];
    }
    }
    return omega_; // unreachable
}

double GuidanceSchedule::applied_at(const StepGrid& grid, std::size_t n) const {
    if (kind_ == ScheduleKind::Interval) {
        const double w = weight_at(grid, n);
        return w == 0.0 ? off_omega_ : w;
    }
    return weight_at(grid, n);
}

double GuidanceSchedule::weighted_sum(const StepGrid& grid) const {
    double sum = 0.0;
    for (std::size_t n = 0; n < grid.num_steps(); ++n)
        sum += weight_at(grid, n) * grid.delta(n);
    return sum;
}

GuidanceSchedule GuidanceSchedule::normalized(const StepGrid& grid) const {
    GuidanceSchedule out(*this);
    if (kind_ == ScheduleKind::TimeVarying) {
        // The constraint sum A * ramp_n * delta_n = omega is linear in A.
        GuidanceSchedule unit(*this);
        unit.A_ = 1.0;
        const double mass = unit.weighted_sum(grid);
        if (!(mass > 0.0))
            throw ConstructionError(
                "tv schedule has zero weight mass on this grid; cannot "
                "normalize");
        out.A_ = omega_ / mass;
        return out;
    }
    if (kind_ == ScheduleKind::Interval && normalize_interval_) {
        double active_mass = 0.0;
        for (std::size_t n = 0; n < grid.num_steps(); ++n) {
            const double frac = static_cast<double>(n) /
                                static_cast<double>(grid.num_steps());
            if (frac >= active_lo_ - kFracEps && frac < active_hi_ - kFracEps)
                active_mass += grid.delta(n);
        }
        if (!(active_mass > 0.0))
            throw ConstructionError(
                "interval schedule covers no steps on this grid; cannot "
                "normalize");
        out.interval_value_ = omega_ / active_mass;
        return out;
    }
    return out; // constant / two_phase / piecewise are already exact
}

std::string GuidanceSchedule::describe() const {
    switch (kind_) {
    case ScheduleKind::Constant:
        return "constant(omega=" + fmt(omega_) + ")";
    case ScheduleKind::TwoPhase:
        return "two_phase(early=" + fmt(omega_early_) +
               ",late=" + fmt(omega_late_) + ",switch=" + fmt(switch_fraction_) +
               ")";
    case ScheduleKind::Interval:
        return "interval(omega=" + fmt(omega_) + ",lo=" + fmt(active_lo_) +
               ",hi=" + fmt(active_hi_) + ",off=" + fmt(off_omega_) + ")";
    case ScheduleKind::TimeVarying:
        return "tv(omega=" + fmt(omega_) + ",s=" + fmt(s_) + ")";
    case ScheduleKind::Piecewise: {
        std::string out = "piecewise(";
        for (std::size_t i = 0; i < breaks_.size(); ++i) {
            if (i) out += ",";
            out += fmt(values_[i]) + "@" + fmt(breaks_[i]);
        }
        return out + ")";
    }
    }
    return "schedule";
}

GuidanceSchedule GuidanceSchedule::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("schedule JSON parse error: ") + e.what());
    }
    try {
        if (!j.is_object() || !j.contains("kind"))
            throw ParseError("schedule JSON needs a \"kind\" field");
        const std::string kind = j["kind"].get<std::string>();
        static const std::map<std::string, std::vector<std::string>> allowed = {
            {"constant", {"kind", "omega"}},
            {"two_phase", {"kind", "omega_early", "omega_late", "switch_fraction"}},
            {"twophase", {"kind", "omega_early", "omega_late", "switch_fraction"}},
            {"interval",
             {"kind", "omega", "active_lo", "active_hi", "normalized", "off_omega"}},
            {"tv", {"kind", "omega", "n", "s"}},
            {"time_varying", {"kind", "omega", "n", "s"}},
            {"piecewise", {"kind", "breaks", "values"}},
        };
        if (auto it = allowed.find(kind); it != allowed.end()) {
            for (const auto& [key, value] : j.items()) {
                (void)value;
                if (std::find(it->second.begin(), it->second.end(), key) ==
                    it->second.end())
                    throw ParseError("unknown key \"" + key +
                                     "\" in schedule of kind \"" + kind + "\"");
            }
        }
        if (kind == "constant")
            return constant(j.at("omega").get<double>());
        if (kind == "two_phase" || kind == "twophase")
            return two_phase(j.at("omega_early").get<double>(),
                             j.at("omega_late").get<double>(),
                             j.at("switch_fraction").get<double>());
        if (kind == "interval")
            return interval(j.at("omega").get<double>(),
                            j.at("active_lo").get<double>(),
                            j.at("active_hi").get<double>(),
                            j.value("normalized", true),
                            j.value("off_omega", 1.0));
        if (kind == "tv" || kind == "time_varying")
            return time_varying(j.at("omega").get<double>(), j.value("n", 0),
                                j.value("s", -1.0));
        if (kind == "piecewise")
            return piecewise(j.at("breaks").get<std::vector<double>>(),
                             j.at("values").get<std::vector<double>>());
        throw ParseError("unknown schedule kind \"" + kind + "\"");
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("schedule JSON invalid: ") + e.what());
    }
}

std::string GuidanceSchedule::to_json() const {
    nlohmann::json j;
    switch (kind_) {
    case ScheduleKind::Constant:
        j["kind"] = "constant";
        j["omega"] = omega_;
        break;
    case ScheduleKind::TwoPhase:
        j["kind"] = "two_phase";
        j["omega_early"] = omega_early_;
        j["omega_late"] = omega_late_;
        j["switch_fraction"] = switch_fraction_;
        break;
    case ScheduleKind::Interval:
        j["kind"] = "interval";
        j["omega"] = omega_;
        j["active_lo"] = active_lo_;
        j["active_hi"] = active_hi_;
        j["normalized"] = normalize_interval_;
        j["off_omega"] = off_omega_;
        break;
    case ScheduleKind::TimeVarying:
        j["kind"] = "tv";
        j["omega"] = omega_;
        if (tv_n_ > 0) j["n"] = tv_n_;
        j["s"] = s_;
        break;
    case ScheduleKind::Piecewise:
        j["kind"] = "piecewise";
        j["breaks"] = breaks_;
        j["values"] = values_;
        break;
    }
    return j.dump();
}

std::vector<ScheduleRow> dump_schedule(const GuidanceSchedule& sched,
                                       const StepGrid& grid) {
    // Rows show the scale the integrator would apply: normalized on this grid,
    // with interval off-steps mapped to their field interpretation.
    const GuidanceSchedule resolved = sched.normalized(grid);
    std::vector<ScheduleRow> rows;
    rows.reserve(grid.num_steps());
    for (std::size_t n = 0; n < grid.num_steps(); ++n)
        rows.push_back({n, grid.times[n], resolved.applied_at(grid, n)});
    return rows;
}

} // namespace gmflow
