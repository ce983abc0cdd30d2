/*
 * capi.cpp — extern "C" surface over the core library. Every entry point
 * catches all exceptions, stores the message in a thread-local slot, and maps
 * the exception type to a gmf_status.
 */

#define GMFLOW_BUILD_SHARED 1
#include "gmflow.h"

#include <cstdlib>
#include <cstring>
#include <new>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gmflow/errors.hpp"
#include "gmflow/experiment.hpp"
#include "gmflow/flow.hpp"
#include "gmflow/mixture.hpp"
#include "gmflow/schedule.hpp"
#include "gmflow/stages.hpp"

using nlohmann::json;

struct gmf_mixture {
    gmflow::GaussianMixture impl;
};
struct gmf_schedule {
    gmflow::GuidanceSchedule impl;
};
struct gmf_field {
    gmflow::FlowField impl;
    std::optional<gmflow::StepGrid> grid;
    std::vector<double> omegas;
    explicit gmf_field(gmflow::FlowField f) : impl(std::move(f)) {}
};
struct gmf_trajectory {
    gmflow::Trajectory impl;
};

namespace {

thread_local std::string g_last_error;

void require(const void* p, const char* name) {
    if (!p)
        throw gmflow::InvalidInputError(std::string("null pointer: ") + name);
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (!out) throw std::bad_alloc();
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

gmflow::Vec to_vec(const double* x, size_t dim) {
    require(x, "x");
    return gmflow::Vec(x, x + dim);
}

template <typename F>
gmf_status wrap(F&& body) noexcept {
    try {
        body();
        return GMF_OK;
    } catch (const gmflow::DomainError& e) {
        g_last_error = e.what();
        return GMF_ERR_DOMAIN;
    } catch (const gmflow::ParseError& e) {
        g_last_error = e.what();
        return GMF_ERR_PARSE;
    } catch (const gmflow::ConstructionError& e) {
        g_last_error = e.what();
        return GMF_ERR_CONSTRUCTION;
    } catch (const gmflow::DivergenceError& e) {
        g_last_error = e.what();
        return GMF_ERR_DIVERGENCE;
    } catch (const gmflow::IoError& e) {
        g_last_error = e.what();
        return GMF_ERR_IO;
    } catch (const gmflow::InvalidInputError& e) {
        g_last_error = e.what();
        return GMF_ERR_INVALID_ARGUMENT;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return GMF_ERR_INTERNAL;
    } catch (...) {
        g_last_error = "unknown error";
        return GMF_ERR_INTERNAL;
    }
}

} // namespace

extern "C" {

const char* gmf_version(void) { return "0.1.0"; }

const char* gmf_last_error(void) { return g_last_error.c_str(); }

const char* gmf_status_name(gmf_status status) {
    switch (status) {
    case GMF_OK: return "ok";
    case GMF_ERR_INVALID_ARGUMENT: return "invalid_argument";
    case GMF_ERR_DOMAIN: return "domain";
    case GMF_ERR_PARSE: return "parse";
    case GMF_ERR_CONSTRUCTION: return "construction";
    case GMF_ERR_DIVERGENCE: return "divergence";
    case GMF_ERR_IO: return "io";
    case GMF_ERR_INTERNAL: return "internal";
    }
    return "unknown";
}

void gmf_string_free(char* text) { std::free(text); }

/* --- mixtures -------------------------------------------------------------- */

gmf_status gmf_mixture_create(const double* weights, size_t n_components,
                              const double* means, size_t dim, double sigma,
                              gmf_mixture** out) {
    return wrap([&] {
        require(weights, "weights");
        require(means, "means");
        require(out, "out");
        std::vector<double> w(weights, weights + n_components);
        std::vector<gmflow::Vec> m;
        m.reserve(n_components);
        for (size_t k = 0; k < n_components; ++k)
            m.emplace_back(means + k * dim, means + (k + 1) * dim);
        *out = new gmf_mixture{gmflow::GaussianMixture(w, m, sigma)};
    });
}

gmf_status gmf_mixture_from_json(const char* json_text, gmf_mixture** out) {
    return wrap([&] {
        require(json_text, "json_text");
        require(out, "out");
        *out = new gmf_mixture{gmflow::GaussianMixture::from_json(json_text)};
    });
}

gmf_status gmf_mixture_to_json(const gmf_mixture* mix, char** out_text) {
    return wrap([&] {
        require(mix, "mix");
        require(out_text, "out_text");
        *out_text = dup_string(mix->impl.to_json());
    });
}

gmf_status gmf_mixture_dim(const gmf_mixture* mix, size_t* out) {
    return wrap([&] {
        require(mix, "mix");
        require(out, "out");
        *out = mix->impl.dim();
    });
}

gmf_status gmf_mixture_num_components(const gmf_mixture* mix, size_t* out) {
    return wrap([&] {
        require(mix, "mix");
        require(out, "out");
        *out = mix->impl.num_components();
    });
}

void gmf_mixture_release(gmf_mixture* mix) { delete mix; }

namespace {

void check_dim(const gmf_mixture* mix, size_t dim) {
    if (mix->impl.dim() != dim)
        throw gmflow::InvalidInputError(
            "dim does not match the mixture dimension");
}

} // namespace

gmf_status gmf_marginal_log_density(const gmf_mixture* mix, double t,
                                    const double* x, size_t dim, double* out) {
    return wrap([&] {
        require(mix, "mix");
        require(out, "out");
        check_dim(mix, dim);
        *out = gmflow::marginal_log_density(mix->impl, gmflow::NoiseSchedule{},
                                            t, to_vec(x, dim));
    });
}

gmf_status gmf_responsibilities(const gmf_mixture* mix, double t,
                                const double* x, size_t dim, double* out) {
    return wrap([&] {
        require(mix, "mix");
        require(out, "out");
        check_dim(mix, dim);
        const gmflow::Responsibilities r = gmflow::responsibilities(
            mix->impl, gmflow::NoiseSchedule{}, t, to_vec(x, dim));
        std::copy(r.values.begin(), r.values.end(), out);
    });
}

gmf_status gmf_score_conditional(const gmf_mixture* mix, double t,
                                 const double* x, size_t dim, double* out) {
    return wrap([&] {
        require(mix, "mix");
        require(out, "out");
        check_dim(mix, dim);
        const gmflow::Vec s = gmflow::score_conditional(
            mix->impl, gmflow::NoiseSchedule{}, t, to_vec(x, dim));
        std::copy(s.begin(), s.end(), out);
    });
}

gmf_status gmf_score_unconditional(double t, const double* x, size_t dim,
                                   double* out) {
    return wrap([&] {
        require(out, "out");
        if (dim == 0)
            throw gmflow::InvalidInputError("dim must be positive");
        const gmflow::Vec s = gmflow::score_unconditional(
            gmflow::NoiseSchedule{}, t, to_vec(x, dim));
        std::copy(s.begin(), s.end(), out);
    });
}

gmf_status gmf_posterior_mean(const gmf_mixture* mix, double t, const double* x,
                              size_t dim, double* out) {
    return wrap([&] {
        require(mix, "mix");
        require(out, "out");
        check_dim(mix, dim);
        const gmflow::Vec m = gmflow::posterior_mean_conditional(
            mix->impl, gmflow::NoiseSchedule{}, t, to_vec(x, dim));
        std::copy(m.begin(), m.end(), out);
    });
}

/* --- schedules ------------------------------------------------------------- */

gmf_status gmf_schedule_from_json(const char* json_text, gmf_schedule** out) {
    return wrap([&] {
        require(json_text, "json_text");
        require(out, "out");
        *out = new gmf_schedule{gmflow::GuidanceSchedule::from_json(json_text)};
    });
}

gmf_status gmf_schedule_to_json(const gmf_schedule* sched, char** out_text) {
    return wrap([&] {
        require(sched, "sched");
        require(out_text, "out_text");
        *out_text = dup_string(sched->impl.to_json());
    });
}

gmf_status gmf_schedule_describe(const gmf_schedule* sched, char** out_text) {
    return wrap([&] {
        require(sched, "sched");
        require(out_text, "out_text");
        *out_text = dup_string(sched->impl.describe());
    });
}

void gmf_schedule_release(gmf_schedule* sched) { delete sched; }

/* --- fields ---------------------------------------------------------------- */

gmf_status gmf_field_unconditional(const gmf_mixture* mix, gmf_field** out) {
    return wrap([&] {
        require(mix, "mix");
        require(out, "out");
        *out = new gmf_field(gmflow::FlowField::unconditional(mix->impl));
    });
}

gmf_status gmf_field_conditional(const gmf_mixture* mix, gmf_field** out) {
    return wrap([&] {
        require(mix, "mix");
        require(out, "out");
        *out = new gmf_field(gmflow::FlowField::conditional(mix->impl));
    });
}

gmf_status gmf_field_guided(const gmf_mixture* mix, const gmf_schedule* sched,
                            gmf_field** out) {
    return wrap([&] {
        require(mix, "mix");
        require(sched, "sched");
        require(out, "out");
        *out = new gmf_field(
            gmflow::FlowField::guided(mix->impl, sched->impl));
    });
}

gmf_status gmf_field_set_grid(gmf_field* field, double t_start, double t_end,
                              size_t n) {
    return wrap([&] {
        require(field, "field");
        gmflow::StepGrid grid = gmflow::StepGrid::uniform(t_start, t_end, n);
        field->omegas = gmflow::resolve_step_omegas(field->impl, grid);
        field->grid = std::move(grid);
    });
}

gmf_status gmf_field_velocity(const gmf_field* field, double t, const double* x,
                              size_t dim, double* out) {
    return wrap([&] {
        require(field, "field");
        require(out, "out");
        if (field->impl.mixture().dim() != dim)
            throw gmflow::InvalidInputError(
                "dim does not match the mixture dimension");
        const gmflow::Vec v = field->impl.velocity(t, to_vec(x, dim));
        std::copy(v.begin(), v.end(), out);
    });
}

gmf_status gmf_field_velocity_at_step(const gmf_field* field, size_t step,
                                      const double* x, size_t dim,
                                      double* out) {
    return wrap([&] {
        require(field, "field");
        require(out, "out");
        if (!field->grid)
            throw gmflow::InvalidInputError(
                "call gmf_field_set_grid before gmf_field_velocity_at_step");
        if (step >= field->omegas.size())
            throw gmflow::InvalidInputError("step is outside the grid");
        if (field->impl.mixture().dim() != dim)
            throw gmflow::InvalidInputError(
                "dim does not match the mixture dimension");
        const gmflow::Vec v = field->impl.velocity_with_omega(
            field->grid->times[step], to_vec(x, dim), field->omegas[step]);
        std::copy(v.begin(), v.end(), out);
    });
}

void gmf_field_release(gmf_field* field) { delete field; }

/* --- integration ----------------------------------------------------------- */

gmf_status gmf_integrate(const gmf_field* field, const char* method,
                         size_t n_steps, double t_start, double t_end,
                         size_t record_every, const double* x0, size_t dim,
                         gmf_trajectory** out) {
    return wrap([&] {
        require(field, "field");
        require(method, "method");
        require(out, "out");
        gmflow::IntegratorConfig cfg;
        cfg.method = gmflow::method_from_string(method);
        cfg.num_steps = n_steps;
        cfg.t_start = t_start;
        cfg.t_end = t_end;
        cfg.record_every = record_every;
        *out = new gmf_trajectory{
            gmflow::integrate(field->impl, cfg, to_vec(x0, dim))};
    });
}

gmf_status gmf_trajectory_num_records(const gmf_trajectory* traj, size_t* out) {
    return wrap([&] {
        require(traj, "traj");
        require(out, "out");
        *out = traj->impl.times.size();
    });
}

gmf_status gmf_trajectory_dim(const gmf_trajectory* traj, size_t* out) {
    return wrap([&] {
        require(traj, "traj");
        require(out, "out");
        *out = traj->impl.states.empty() ? 0 : traj->impl.states[0].size();
    });
}

gmf_status gmf_trajectory_record(const gmf_trajectory* traj, size_t index,
                                 double* t, double* x, double* norm,
                                 double* omega) {
    return wrap([&] {
        require(traj, "traj");
        if (index >= traj->impl.times.size())
            throw gmflow::InvalidInputError("record index out of range");
        if (t) *t = traj->impl.times[index];
        if (x)
            std::copy(traj->impl.states[index].begin(),
                      traj->impl.states[index].end(), x);
        if (norm) *norm = traj->impl.norms[index];
        if (omega) *omega = traj->impl.omegas[index];
    });
}

gmf_status gmf_trajectory_final_mode(const gmf_trajectory* traj, int* out) {
    return wrap([&] {
        require(traj, "traj");
        require(out, "out");
        *out = traj->impl.final_mode;
    });
}

gmf_status gmf_trajectory_divergence(const gmf_trajectory* traj, int* diverged,
                                     int* step, double* magnitude) {
    return wrap([&] {
        require(traj, "traj");
        if (diverged) *diverged = traj->impl.diverged ? 1 : 0;
        if (step) *step = traj->impl.diverged_step;
        if (magnitude) *magnitude = traj->impl.diverged_magnitude;
    });
}

void gmf_trajectory_release(gmf_trajectory* traj) { delete traj; }

/* --- experiment runner ------------------------------------------------------ */

namespace {

void run_config(gmflow::RunConfig cfg, const char* output_dir,
                const uint64_t* seed, char** out_summary, int* out_exit_code) {
    if (output_dir) cfg.output_dir = output_dir;
    if (seed) cfg.seed = *seed;
    const gmflow::RunResult res = gmflow::run(cfg);

    if (out_summary) {
        json s;
        s["experiment"] = gmflow::experiment_to_string(cfg.experiment);
        s["exit_code"] = res.exit_code;
        s["output_dir"] = res.output_dir;
        s["passed"] = res.verdict.passed;
        s["inconclusive"] = res.verdict.inconclusive;
        json arts = json::array();
        for (const gmflow::RunArtifact& a : res.artifacts)
            arts.push_back(a.name);
        s["artifacts"] = std::move(arts);
        s["verdict"] = json::parse(res.verdict.to_json());
        *out_summary = dup_string(s.dump(2));
    }
    if (out_exit_code) *out_exit_code = res.exit_code;
}

} // namespace

gmf_status gmf_run_json(const char* config_json, const char* experiment,
                        const char* output_dir, const uint64_t* seed,
                        char** out_summary, int* out_exit_code) {
    return wrap([&] {
        require(config_json, "config_json");
        run_config(gmflow::RunConfig::from_json_text(
                       config_json, experiment ? experiment : ""),
                   output_dir, seed, out_summary, out_exit_code);
    });
}

gmf_status gmf_run_file(const char* config_path, const char* experiment,
                        const char* output_dir, const uint64_t* seed,
                        char** out_summary, int* out_exit_code) {
    return wrap([&] {
        require(config_path, "config_path");
        run_config(gmflow::RunConfig::from_file(config_path,
                                                experiment ? experiment : ""),
                   output_dir, seed, out_summary, out_exit_code);
    });
}

} // extern "C"
