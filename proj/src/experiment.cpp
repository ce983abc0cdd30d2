/*
 * experiment.cpp — strict config parsing, experiment dispatch, artifact
 * writing. See experiment.hpp for the contract.
 */

#include "gmflow/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "gmflow/errors.hpp"
#include "gmflow/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace gmflow {

namespace {

constexpr const char* kVersion = "0.1.0";

std::string g17(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string hex64(std::uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(v));
    return buf;
}

/// Quote a CSV field when it contains a separator, quote, or newline.
std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

std::string iso_utc_timestamp() {
    std::time_t t = 0;
    if (const char* env = std::getenv("SOURCE_DATE_EPOCH"))
        t = static_cast<std::time_t>(std::strtoll(env, nullptr, 10));
    else
        t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[40];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// --- strict JSON helpers ----------------------------------------------------

void check_keys(const json& obj, const std::string& where,
                std::initializer_list<const char*> allowed) {
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        bool known = false;
        for (const char* a : allowed)
            if (key == a) {
                known = true;
                break;
            }
        if (!known)
            throw ParseError("unknown key \"" + key + "\" in " + where);
    }
}

const json& require_object(const json& obj, const std::string& where) {
    if (!obj.is_object())
        throw ParseError(where + " must be a JSON object");
    return obj;
}

double get_double(const json& obj, const std::string& where, const char* key,
                  double fallback) {
    if (!obj.contains(key)) return fallback;
    if (!obj.at(key).is_number())
        throw ParseError("config field " + where + "." + key +
                         " must be a number");
    return obj.at(key).get<double>();
}

std::size_t get_size(const json& obj, const std::string& where,
                     const char* key, std::size_t fallback) {
    if (!obj.contains(key)) return fallback;
    if (!obj.at(key).is_number_integer())
        throw ParseError("config field " + where + "." + key +
                         " must be a nonnegative integer");
    const auto v = obj.at(key).get<std::int64_t>();
    if (v < 0)
        throw ParseError("config field " + where + "." + key +
                         " must be a nonnegative integer");
    return static_cast<std::size_t>(v);
}

bool get_bool(const json& obj, const std::string& where, const char* key,
              bool fallback) {
    if (!obj.contains(key)) return fallback;
    if (!obj.at(key).is_boolean())
        throw ParseError("config field " + where + "." + key +
                         " must be a boolean");
    return obj.at(key).get<bool>();
}

std::string get_string(const json& obj, const std::string& where,
                       const char* key, const std::string& fallback) {
    if (!obj.contains(key)) return fallback;
    if (!obj.at(key).is_string())
        throw ParseError("config field " + where + "." + key +
                         " must be a string");
    return obj.at(key).get<std::string>();
}

std::vector<double> get_double_vec(const json& obj, const std::string& where,
                                   const char* key,
                                   std::vector<double> fallback) {
    if (!obj.contains(key)) return fallback;
    const json& node = obj.at(key);
    if (!node.is_array())
        throw ParseError("config field " + where + "." + key +
                         " must be an array of numbers");
    std::vector<double> out;
    for (const json& v : node) {
        if (!v.is_number())
            throw ParseError("config field " + where + "." + key +
                             " must be an array of numbers");
        out.push_back(v.get<double>());
    }
    return out;
}

std::pair<GuidanceSchedule, std::string> parse_schedule_entry(
    const json& node, const std::string& where) {
    require_object(node, where);
    json copy = node;
    std::string label;
    if (copy.contains("label")) {
        if (!copy.at("label").is_string())
            throw ParseError("config field " + where + ".label must be a string");
        label = copy.at("label").get<std::string>();
        copy.erase("label");
    }
    GuidanceSchedule sched = [&] {
        try {
            return GuidanceSchedule::from_json(copy.dump());
        } catch (const ParseError& e) {
            throw ParseError(where + ": " + e.what());
        } catch (const InvalidInputError& e) {
            throw InvalidInputError(where + ": " + e.what());
        }
    }();
    if (label.empty()) label = sched.describe();
    return {std::move(sched), std::move(label)};
}

/// Integrator defaults before the config's integrator block is applied.
IntegratorConfig default_integrator(Experiment e, double t_min) {
    IntegratorConfig c; // RK4, 500 steps, record_every 1
    c.t_start = 1.0 - t_min;
    c.t_end = t_min;
    if (e == Experiment::Diversity) {
        c.num_steps = 100;
        c.record_every = 0;
    } else if (e == Experiment::Perturb) {
        c.num_steps = 50;
        c.method = Method::Euler;
        c.record_every = 0;
    }
    return c;
}

json schedule_json(const GuidanceSchedule& s, const std::string& label) {
    json node = json::parse(s.to_json());
    if (!label.empty() && label != s.describe()) node["label"] = label;
    return node;
}

} // namespace

Experiment experiment_from_string(const std::string& name) {
    if (name == "simulate") return Experiment::Simulate;
    if (name == "verify-thm1") return Experiment::VerifyThm1;
    if (name == "verify-thm2") return Experiment::VerifyThm2;
    if (name == "verify-prop3") return Experiment::VerifyProp3;
    if (name == "verify-thm4") return Experiment::VerifyThm4;
    if (name == "diversity") return Experiment::Diversity;
    if (name == "perturb") return Experiment::Perturb;
    if (name == "schedule-dump") return Experiment::ScheduleDump;
    if (name == "sweep") return Experiment::Sweep;
    throw ParseError("unknown experiment \"" + name + "\"");
}

std::string experiment_to_string(Experiment e) {
    switch (e) {
    case Experiment::Simulate: return "simulate";
    case Experiment::VerifyThm1: return "verify-thm1";
    case Experiment::VerifyThm2: return "verify-thm2";
    case Experiment::VerifyProp3: return "verify-prop3";
    case Experiment::VerifyThm4: return "verify-thm4";
    case Experiment::Diversity: return "diversity";
    case Experiment::Perturb: return "perturb";
    case Experiment::ScheduleDump: return "schedule-dump";
    case Experiment::Sweep: return "sweep";
    }
    throw InvalidInputError("unhandled experiment enum value");
}

RunConfig RunConfig::from_json_text(const std::string& text,
                                    const std::string& expected_experiment) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("config JSON parse error: ") + e.what());
    }
    require_object(j, "config");
    check_keys(j, "config",
               {"experiment", "mixture", "integrator", "schedule", "schedules",
                "schedule_low", "schedule_latehigh", "seed", "output_dir",
                "params", "tolerances", "sweep"});

    RunConfig cfg;

    // Experiment name, reconciled with the caller's subcommand.
    std::string name = get_string(j, "config", "experiment", "");
    if (!expected_experiment.empty()) {
        if (!name.empty() && name != expected_experiment)
            throw ParseError("config experiment \"" + name +
                             "\" does not match the requested \"" +
                             expected_experiment + "\"");
        name = expected_experiment;
    }
    if (name.empty())
        throw ParseError("config needs an \"experiment\" field");
    cfg.experiment = experiment_from_string(name);

    // Integrator block (also carries t_min for the noise schedule).
    double t_min = 1e-3;
    json integ = json::object();
    if (j.contains("integrator")) {
        integ = require_object(j.at("integrator"), "integrator");
        check_keys(integ, "integrator",
                   {"n", "method", "t_start", "t_end", "record_every", "t_min"});
        t_min = get_double(integ, "integrator", "t_min", 1e-3);
        if (!(t_min > 0.0 && t_min < 0.5))
            throw ParseError("config field integrator.t_min must lie in (0, 0.5)");
    }
    cfg.noise.t_min = t_min;
    cfg.integrator = default_integrator(cfg.experiment, t_min);
    cfg.integrator.num_steps =
        get_size(integ, "integrator", "n", cfg.integrator.num_steps);
    const std::string method_name = get_string(
        integ, "integrator", "method", method_to_string(cfg.integrator.method));
    try {
        cfg.integrator.method = method_from_string(method_name);
    } catch (const InvalidInputError& e) {
        throw ParseError(std::string("config field integrator.method: ") +
                         e.what());
    }
    cfg.integrator.t_start =
        get_double(integ, "integrator", "t_start", cfg.integrator.t_start);
    cfg.integrator.t_end =
        get_double(integ, "integrator", "t_end", cfg.integrator.t_end);
    cfg.integrator.record_every = get_size(integ, "integrator", "record_every",
                                           cfg.integrator.record_every);

    // Mixture.
    if (j.contains("mixture")) {
        require_object(j.at("mixture"), "mixture");
        cfg.mixture = GaussianMixture::from_json(j.at("mixture").dump());
    } else if (cfg.experiment != Experiment::ScheduleDump) {
        throw ParseError("config needs a \"mixture\" for experiment \"" + name +
                         "\"");
    }

    // Schedules, keyed per experiment shape.
    const bool takes_single = cfg.experiment == Experiment::Simulate ||
                              cfg.experiment == Experiment::ScheduleDump ||
                              cfg.experiment == Experiment::Sweep;
    const bool takes_list = cfg.experiment == Experiment::Diversity ||
                            cfg.experiment == Experiment::Sweep;
    const bool takes_pair = cfg.experiment == Experiment::Perturb ||
                            cfg.experiment == Experiment::Sweep;
    if (j.contains("schedule")) {
        if (!takes_single)
            throw ParseError("\"schedule\" is not a valid key for experiment \"" +
                             name + "\"");
        auto [s, label] = parse_schedule_entry(j.at("schedule"), "schedule");
        cfg.schedules.push_back(std::move(s));
        cfg.schedule_labels.push_back(std::move(label));
    }
    if (j.contains("schedules")) {
        if (!takes_list)
            throw ParseError(
                "\"schedules\" is not a valid key for experiment \"" + name +
                "\"");
        if (!cfg.schedules.empty())
            throw ParseError("give either \"schedule\" or \"schedules\", not both");
        const json& arr = j.at("schedules");
        if (!arr.is_array())
            throw ParseError("config field schedules must be an array");
        for (std::size_t i = 0; i < arr.size(); ++i) {
            auto [s, label] = parse_schedule_entry(
                arr[i], "schedules[" + std::to_string(i) + "]");
            cfg.schedules.push_back(std::move(s));
            cfg.schedule_labels.push_back(std::move(label));
        }
    }
    if (j.contains("schedule_low") || j.contains("schedule_latehigh")) {
        if (!takes_pair)
            throw ParseError(
                "\"schedule_low\"/\"schedule_latehigh\" are only valid for the "
                "perturb experiment");
        if (!cfg.schedules.empty())
            throw ParseError(
                "give either schedule_low/schedule_latehigh or other schedule "
                "keys, not both");
    }
    if (cfg.experiment == Experiment::Perturb && cfg.schedules.empty()) {
        PerturbationParams defaults;
        auto low = j.contains("schedule_low")
                       ? parse_schedule_entry(j.at("schedule_low"), "schedule_low")
                             .first
                       : defaults.schedule_low;
        auto late = j.contains("schedule_latehigh")
                        ? parse_schedule_entry(j.at("schedule_latehigh"),
                                               "schedule_latehigh")
                              .first
                        : defaults.schedule_latehigh;
        cfg.schedules = {std::move(low), std::move(late)};
        cfg.schedule_labels = {"low", "late_high"};
    }

    cfg.seed = get_size(j, "config", "seed", 1);
    cfg.output_dir = get_string(j, "config", "output_dir", cfg.output_dir);

    // Experiment knobs.
    if (j.contains("params")) {
        const json& p = require_object(j.at("params"), "params");
        check_keys(p, "params",
                   {"omega", "n_samples", "t_e1", "omegas", "t_s2", "n_inits",
                    "use_slab", "boundary_grid_lo", "boundary_grid_hi",
                    "boundary_grid_points", "k_values", "t_s1", "n_per_k",
                    "t_s3", "pair_radius", "n_pairs", "perturb_sigma",
                    "perturb_fraction", "count"});
        if (p.contains("omega")) cfg.knobs.omega = get_double(p, "params", "omega", 0);
        if (p.contains("n_samples"))
            cfg.knobs.n_samples = get_size(p, "params", "n_samples", 0);
        cfg.knobs.t_e1 = get_double(p, "params", "t_e1", cfg.knobs.t_e1);
        cfg.knobs.omegas = get_double_vec(p, "params", "omegas", cfg.knobs.omegas);
        cfg.knobs.t_s2 = get_double(p, "params", "t_s2", cfg.knobs.t_s2);
        cfg.knobs.n_inits = get_size(p, "params", "n_inits", cfg.knobs.n_inits);
        cfg.knobs.use_slab = get_bool(p, "params", "use_slab", cfg.knobs.use_slab);
        cfg.knobs.boundary_grid_lo =
            get_double(p, "params", "boundary_grid_lo", cfg.knobs.boundary_grid_lo);
        cfg.knobs.boundary_grid_hi =
            get_double(p, "params", "boundary_grid_hi", cfg.knobs.boundary_grid_hi);
        cfg.knobs.boundary_grid_points = get_size(
            p, "params", "boundary_grid_points", cfg.knobs.boundary_grid_points);
        cfg.knobs.k_values =
            get_double_vec(p, "params", "k_values", cfg.knobs.k_values);
        cfg.knobs.t_s1 = get_double(p, "params", "t_s1", cfg.knobs.t_s1);
        cfg.knobs.n_per_k = get_size(p, "params", "n_per_k", cfg.knobs.n_per_k);
        cfg.knobs.t_s3 = get_double(p, "params", "t_s3", cfg.knobs.t_s3);
        cfg.knobs.pair_radius =
            get_double(p, "params", "pair_radius", cfg.knobs.pair_radius);
        cfg.knobs.n_pairs = get_size(p, "params", "n_pairs", cfg.knobs.n_pairs);
        cfg.knobs.perturb_sigma =
            get_double(p, "params", "perturb_sigma", cfg.knobs.perturb_sigma);
        cfg.knobs.perturb_fraction = get_double(p, "params", "perturb_fraction",
                                                cfg.knobs.perturb_fraction);
        cfg.knobs.count = get_size(p, "params", "count", cfg.knobs.count);
    }

    if (j.contains("tolerances")) {
        const json& t = require_object(j.at("tolerances"), "tolerances");
        check_keys(t, "tolerances",
                   {"derivative_window", "eps_resp", "mono_slack", "ball_margin"});
        cfg.tol.derivative_window = get_double(t, "tolerances", "derivative_window",
                                               cfg.tol.derivative_window);
        cfg.tol.eps_resp = get_double(t, "tolerances", "eps_resp", cfg.tol.eps_resp);
        cfg.tol.mono_slack =
            get_double(t, "tolerances", "mono_slack", cfg.tol.mono_slack);
        cfg.tol.ball_margin =
            get_double(t, "tolerances", "ball_margin", cfg.tol.ball_margin);
    }

    if (j.contains("sweep")) {
        if (cfg.experiment != Experiment::Sweep)
            throw ParseError(
                "the \"sweep\" block is only valid for the sweep experiment");
        const json& s = require_object(j.at("sweep"), "sweep");
        check_keys(s, "sweep", {"base", "axis", "values", "schedules"});
        SweepSpec sw;
        const std::string base = get_string(s, "sweep", "base", "");
        if (base.empty())
            throw ParseError("sweep needs a \"base\" experiment");
        sw.base = experiment_from_string(base);
        if (sw.base == Experiment::Sweep)
            throw ParseError("sweep cannot nest another sweep");
        sw.axis = get_string(s, "sweep", "axis", "");
        if (sw.axis != "omega" && sw.axis != "n_steps" && sw.axis != "sigma" &&
            sw.axis != "schedule")
            throw ParseError(
                "sweep.axis must be one of omega, n_steps, sigma, schedule");
        if (sw.axis == "schedule") {
            if (!s.contains("schedules"))
                throw ParseError("sweep over schedule needs sweep.schedules");
            const json& arr = s.at("schedules");
            if (!arr.is_array() || arr.empty())
                throw ParseError("sweep.schedules must be a non-empty array");
            for (std::size_t i = 0; i < arr.size(); ++i) {
                auto [sched, label] = parse_schedule_entry(
                    arr[i], "sweep.schedules[" + std::to_string(i) + "]");
                sw.schedules.push_back(std::move(sched));
                sw.labels.push_back(std::move(label));
            }
        } else {
            sw.values = get_double_vec(s, "sweep", "values", {});
            if (sw.values.empty())
                throw ParseError("sweep needs non-empty sweep.values");
            if (s.contains("schedules"))
                throw ParseError(
                    "sweep.schedules is only valid with axis = schedule");
        }
        const std::size_t cells =
            sw.axis == "schedule" ? sw.schedules.size() : sw.values.size();
        if (cells > 1000)
            throw InvalidInputError("sweep has " + std::to_string(cells) +
                                    " cells; the limit is 1000");
        cfg.sweep = std::move(sw);
    } else if (cfg.experiment == Experiment::Sweep) {
        throw ParseError("the sweep experiment needs a \"sweep\" block");
    }

    // Shape requirements that do not depend on runtime data.
    if (takes_single && cfg.experiment != Experiment::Sweep &&
        cfg.schedules.empty())
        throw ParseError("config needs a \"schedule\" for experiment \"" + name +
                         "\"");
    if (cfg.experiment == Experiment::Diversity) {
        if (cfg.schedules.size() < 2)
            throw InvalidInputError(
                "diversity needs at least 2 entries in \"schedules\"");
        if (cfg.knobs.n_samples.value_or(2000) < 500)
            throw InvalidInputError("diversity needs n_samples >= 500");
    }
    return cfg;
}

RunConfig RunConfig::from_file(const std::string& path,
                               const std::string& expected_experiment) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open config file \"" + path + "\"");
    std::ostringstream buf;
    buf << in.rdbuf();
    return from_json_text(buf.str(), expected_experiment);
}

std::string RunConfig::to_canonical_json() const {
    json j;
    j["experiment"] = experiment_to_string(experiment);
    j["integrator"] = {{"method", method_to_string(integrator.method)},
                       {"n", integrator.num_steps},
                       {"record_every", integrator.record_every},
                       {"t_end", integrator.t_end},
                       {"t_min", noise.t_min},
                       {"t_start", integrator.t_start}};
    if (mixture) j["mixture"] = json::parse(mixture->to_json());
    json p;
    if (knobs.omega) p["omega"] = *knobs.omega;
    if (knobs.n_samples) p["n_samples"] = *knobs.n_samples;
    p["t_e1"] = knobs.t_e1;
    p["omegas"] = knobs.omegas;
    p["t_s2"] = knobs.t_s2;
    p["n_inits"] = knobs.n_inits;
    p["use_slab"] = knobs.use_slab;
    p["boundary_grid_lo"] = knobs.boundary_grid_lo;
    p["boundary_grid_hi"] = knobs.boundary_grid_hi;
    p["boundary_grid_points"] = knobs.boundary_grid_points;
    p["k_values"] = knobs.k_values;
    p["t_s1"] = knobs.t_s1;
    p["n_per_k"] = knobs.n_per_k;
    p["t_s3"] = knobs.t_s3;
    p["pair_radius"] = knobs.pair_radius;
    p["n_pairs"] = knobs.n_pairs;
    p["perturb_sigma"] = knobs.perturb_sigma;
    p["perturb_fraction"] = knobs.perturb_fraction;
    p["count"] = knobs.count;
    j["params"] = std::move(p);
    j["tolerances"] = {{"ball_margin", tol.ball_margin},
                       {"derivative_window", tol.derivative_window},
                       {"eps_resp", tol.eps_resp},
                       {"mono_slack", tol.mono_slack}};
    j["seed"] = seed;

    if (experiment == Experiment::Perturb) {
        j["schedule_low"] = schedule_json(schedules.at(0), "");
        j["schedule_latehigh"] = schedule_json(schedules.at(1), "");
    } else if (experiment == Experiment::Diversity) {
        json arr = json::array();
        for (std::size_t i = 0; i < schedules.size(); ++i)
            arr.push_back(schedule_json(schedules[i], schedule_labels[i]));
        j["schedules"] = std::move(arr);
    } else if (!schedules.empty()) {
        j["schedule"] = schedule_json(schedules.at(0), schedule_labels.empty()
                                                           ? std::string()
                                                           : schedule_labels[0]);
    }

    if (sweep) {
        json s;
        s["axis"] = sweep->axis;
        s["base"] = experiment_to_string(sweep->base);
        if (sweep->axis == "schedule") {
            json arr = json::array();
            for (std::size_t i = 0; i < sweep->schedules.size(); ++i)
                arr.push_back(
                    schedule_json(sweep->schedules[i], sweep->labels[i]));
            s["schedules"] = std::move(arr);
        } else {
            s["values"] = sweep->values;
        }
        j["sweep"] = std::move(s);
    }
    return j.dump();
}

std::uint64_t RunConfig::config_hash() const {
    return fnv1a64(to_canonical_json());
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

namespace {

using Tables = std::vector<std::pair<std::string, std::string>>;

const GaussianMixture& need_mixture(const RunConfig& cfg) {
    if (!cfg.mixture)
        throw InvalidInputError("experiment \"" +
                                experiment_to_string(cfg.experiment) +
                                "\" needs a mixture");
    return *cfg.mixture;
}

std::pair<Verdict, Tables> exec_simulate(const RunConfig& cfg) {
    const GaussianMixture& mix = need_mixture(cfg);
    if (cfg.schedules.empty())
        throw InvalidInputError("simulate needs a schedule");
    if (cfg.knobs.count < 1)
        throw InvalidInputError("simulate needs count >= 1");
    const FlowField field =
        FlowField::guided(mix, cfg.schedules[0], cfg.noise);
    const std::vector<Trajectory> batch =
        integrate_batch(field, cfg.integrator, cfg.knobs.count, cfg.seed);

    const StepGrid grid = cfg.integrator.grid();
    for (std::size_t i = 0; i < batch.size(); ++i) {
        if (!batch[i].diverged) continue;
        const int s = batch[i].diverged_step;
        throw DivergenceError(
            "trajectory " + std::to_string(i) + " diverged at step " +
                std::to_string(s) + " of " +
                std::to_string(cfg.integrator.num_steps) + " (t = " +
                g17(grid.times[static_cast<std::size_t>(s)]) +
                "): largest finite coordinate magnitude |x| = " +
                g17(batch[i].diverged_magnitude) +
                "; reduce the step size or the guidance scale",
            s, batch[i].diverged_magnitude);
    }

    const std::size_t d = mix.dim();
    std::string csv = "trajectory_id,t";
    for (std::size_t c = 0; c < d; ++c) csv += ",x_" + std::to_string(c);
    csv += ",norm,omega_t\n";
    double final_norm_sum = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const Trajectory& tr = batch[i];
        for (std::size_t r = 0; r < tr.times.size(); ++r) {
            csv += std::to_string(i) + ',' + g17(tr.times[r]);
            for (std::size_t c = 0; c < d; ++c)
                csv += ',' + g17(tr.states[r][c]);
            csv += ',' + g17(tr.norms[r]) + ',' + g17(tr.omegas[r]) + '\n';
        }
        final_norm_sum += tr.norms.back();
    }

    Verdict v;
    v.experiment = "simulate";
    v.passed = true;
    v.samples_used = batch.size();
    v.stats["n_trajectories"] = static_cast<double>(batch.size());
    v.stats["n_steps"] = static_cast<double>(cfg.integrator.num_steps);
    v.stats["mean_final_norm"] =
        final_norm_sum / static_cast<double>(batch.size());
    return {std::move(v), {{"trajectories.csv", std::move(csv)}}};
}

std::pair<Verdict, Tables> exec_schedule_dump(const RunConfig& cfg) {
    if (cfg.schedules.empty())
        throw InvalidInputError("schedule-dump needs a schedule");
    const StepGrid grid = cfg.integrator.grid();
    const std::vector<ScheduleRow> rows = dump_schedule(cfg.schedules[0], grid);
    std::string csv = "n,t,omega\n";
    double weighted = 0.0;
    for (const ScheduleRow& r : rows) {
        csv += std::to_string(r.n) + ',' + g17(r.t) + ',' + g17(r.omega) + '\n';
        weighted += r.omega * grid.delta(r.n);
    }
    Verdict v;
    v.experiment = "schedule-dump";
    v.passed = true;
    v.samples_used = rows.size();
    v.stats["n_steps"] = static_cast<double>(grid.num_steps());
    v.stats["nominal_omega"] = cfg.schedules[0].nominal_omega();
    v.stats["applied_weighted_sum"] = weighted;
    return {std::move(v), {{"schedule.csv", std::move(csv)}}};
}

std::pair<Verdict, Tables> exec_thm1(const RunConfig& cfg) {
    EarlyProximityParams p;
    p.omega = cfg.knobs.omega.value_or(3.0);
    p.t_e1_candidate = cfg.knobs.t_e1;
    p.n_samples = cfg.knobs.n_samples.value_or(10000);
    p.derivative_window = cfg.tol.derivative_window;
    p.seed = cfg.seed;
    p.noise = cfg.noise;
    p.integrator = cfg.integrator;
    const EarlyProximityResult res =
        verify_early_proximity(need_mixture(cfg), p);
    std::string csv = "t,gap,se,gap_shift,se_shift\n";
    for (std::size_t j = 0; j < res.times.size(); ++j)
        csv += g17(res.times[j]) + ',' + g17(res.gap[j]) + ',' +
               g17(res.se[j]) + ',' + g17(res.gap_shift[j]) + ',' +
               g17(res.se_shift[j]) + '\n';
    return {res.verdict, {{"gap.csv", std::move(csv)}}};
}

std::pair<Verdict, Tables> exec_thm2(const RunConfig& cfg) {
    PersistenceParams p;
    p.omegas = cfg.knobs.omegas;
    p.t_s2 = cfg.knobs.t_s2;
    p.n_inits = cfg.knobs.n_inits;
    p.use_slab = cfg.knobs.use_slab;
    p.boundary_grid_lo = cfg.knobs.boundary_grid_lo;
    p.boundary_grid_hi = cfg.knobs.boundary_grid_hi;
    p.boundary_grid_points = cfg.knobs.boundary_grid_points;
    p.seed = cfg.seed;
    p.noise = cfg.noise;
    p.integrator = cfg.integrator;
    const PersistenceResult res =
        verify_weaker_mode_persistence(need_mixture(cfg), p);

    std::string boundary = "t,e_t,c_t,residual\n";
    for (std::size_t i = 0; i < res.grid_t.size(); ++i)
        boundary += g17(res.grid_t[i]) + ',' + g17(res.grid_e[i]) + ',' +
                    g17(res.grid_c[i]) + ',' + g17(res.grid_residual[i]) + '\n';
    std::string persist = "omega,init,persisted\n";
    for (std::size_t wi = 0; wi < p.omegas.size(); ++wi)
        for (std::size_t i = 0; i < res.persisted[wi].size(); ++i)
            persist += g17(p.omegas[wi]) + ',' + std::to_string(i) + ',' +
                       std::to_string(res.persisted[wi][i]) + '\n';
    return {res.verdict,
            {{"boundary.csv", std::move(boundary)},
             {"persistence.csv", std::move(persist)}}};
}

std::pair<Verdict, Tables> exec_prop3(const RunConfig& cfg) {
    InitBiasParams p;
    p.omega = cfg.knobs.omega.value_or(3.0);
    p.k_values = cfg.knobs.k_values;
    p.t_s1 = cfg.knobs.t_s1;
    p.n_per_k = cfg.knobs.n_per_k;
    p.ball_margin = cfg.tol.ball_margin;
    p.seed = cfg.seed;
    p.noise = cfg.noise;
    p.integrator = cfg.integrator;
    const InitBiasResult res = verify_init_bias(need_mixture(cfg), p);
    std::string csv = "k,radius,dominated_fraction,min_inner\n";
    for (std::size_t i = 0; i < p.k_values.size(); ++i)
        csv += g17(p.k_values[i]) + ',' + g17(res.radii[i]) + ',' +
               g17(res.dominated_fraction[i]) + ',' + g17(res.min_inner[i]) +
               '\n';
    return {res.verdict, {{"bias.csv", std::move(csv)}}};
}

std::pair<Verdict, Tables> exec_thm4(const RunConfig& cfg) {
    ContractionParams p;
    p.omega = cfg.knobs.omega.value_or(5.0);
    p.t_s3 = cfg.knobs.t_s3;
    p.pair_radius = cfg.knobs.pair_radius;
    p.n_pairs = cfg.knobs.n_pairs;
    p.eps_resp = cfg.tol.eps_resp;
    p.mono_slack = cfg.tol.mono_slack;
    p.seed = cfg.seed;
    p.noise = cfg.noise;
    p.integrator = cfg.integrator;
    const ContractionResult res = verify_contraction(need_mixture(cfg), p);

    std::string pairs = "mode,pair,retained,strict,monotone,final_log_ratio\n";
    for (const auto& r : res.rows)
        pairs += std::to_string(r.mode) + ',' + std::to_string(r.pair) + ',' +
                 std::to_string(r.retained ? 1 : 0) + ',' +
                 std::to_string(r.strict ? 1 : 0) + ',' +
                 std::to_string(r.monotone ? 1 : 0) + ',' +
                 g17(r.final_log_ratio) + '\n';
    std::string ratio = "t,mean_log_ratio,min_log_ratio,max_log_ratio\n";
    for (std::size_t j = 0; j < res.ratio_t.size(); ++j)
        ratio += g17(res.ratio_t[j]) + ',' + g17(res.ratio_mean[j]) + ',' +
                 g17(res.ratio_min[j]) + ',' + g17(res.ratio_max[j]) + '\n';
    return {res.verdict,
            {{"pairs.csv", std::move(pairs)}, {"ratio.csv", std::move(ratio)}}};
}

std::pair<Verdict, Tables> exec_diversity(const RunConfig& cfg) {
    DiversityParams p;
    p.schedules = cfg.schedules;
    p.labels = cfg.schedule_labels;
    p.n_samples = cfg.knobs.n_samples.value_or(2000);
    p.seed = cfg.seed;
    p.noise = cfg.noise;
    p.integrator = cfg.integrator;
    const DiversityResult res = diversity_sweep(need_mixture(cfg), p);
    std::string csv =
        "label,schedule,occupancy_weak,occupancy_se,mean_final_norm,"
        "mean_pairwise_dist,n\n";
    for (const auto& r : res.rows)
        csv += csv_field(r.label) + ',' + csv_field(r.schedule_id) + ',' +
               g17(r.occupancy_weak) + ',' + g17(r.occupancy_se) + ',' +
               g17(r.mean_final_norm) + ',' + g17(r.mean_pairwise_dist) + ',' +
               std::to_string(r.n) + '\n';
    return {res.verdict, {{"diversity.csv", std::move(csv)}}};
}

std::pair<Verdict, Tables> exec_perturb(const RunConfig& cfg) {
    PerturbationParams p;
    if (cfg.schedules.size() == 2) {
        p.schedule_low = cfg.schedules[0];
        p.schedule_latehigh = cfg.schedules[1];
    }
    p.perturb_sigma = cfg.knobs.perturb_sigma;
    p.perturb_fraction = cfg.knobs.perturb_fraction;
    p.n_samples = cfg.knobs.n_samples.value_or(2000);
    p.seed = cfg.seed;
    p.noise = cfg.noise;
    p.integrator = cfg.integrator;
    const PerturbationResult res = perturbation_probe(need_mixture(cfg), p);
    std::string csv = "label,schedule,mse,se,n\n";
    for (const auto& r : res.rows)
        csv += csv_field(r.label) + ',' + csv_field(r.schedule_id) + ',' +
               g17(r.mse) + ',' + g17(r.se) + ',' + std::to_string(r.n) + '\n';
    return {res.verdict, {{"perturb.csv", std::move(csv)}}};
}

RunConfig cell_config(const RunConfig& cfg, const SweepSpec& sw,
                      std::size_t i) {
    RunConfig c = cfg;
    c.experiment = sw.base;
    c.sweep.reset();
    const bool base_takes_schedules = sw.base == Experiment::Simulate ||
                                      sw.base == Experiment::Diversity ||
                                      sw.base == Experiment::ScheduleDump;
    if (sw.axis == "omega") {
        const double v = sw.values[i];
        c.knobs.omega = v;
        c.knobs.omegas = {v};
        if (base_takes_schedules) {
            c.schedules = {GuidanceSchedule::constant(v)};
            c.schedule_labels = {"omega=" + g17(v)};
        }
    } else if (sw.axis == "n_steps") {
        const double v = sw.values[i];
        if (!(v >= 1.0) || v != std::floor(v))
            throw InvalidInputError(
                "sweep over n_steps needs positive integer values");
        c.integrator.num_steps = static_cast<std::size_t>(v);
    } else if (sw.axis == "sigma") {
        const GaussianMixture& mix = need_mixture(cfg);
        std::vector<Vec> means;
        for (std::size_t k = 0; k < mix.num_components(); ++k)
            means.push_back(mix.mean(k));
        c.mixture = GaussianMixture(mix.weights(), means, sw.values[i]);
    } else { // schedule
        c.schedules = {sw.schedules[i]};
        c.schedule_labels = {sw.labels[i]};
    }
    return c;
}

std::pair<Verdict, Tables> exec_dispatch(const RunConfig& cfg);

std::pair<Verdict, Tables> exec_sweep(const RunConfig& cfg) {
    if (!cfg.sweep)
        throw InvalidInputError("sweep experiment without a sweep spec");
    const SweepSpec& sw = *cfg.sweep;
    const std::size_t cells =
        sw.axis == "schedule" ? sw.schedules.size() : sw.values.size();

    std::string csv = "cell,axis,axis_value,statistic,value,status\n";
    Verdict v;
    v.experiment = "sweep";
    std::size_t failed = 0;
    for (std::size_t i = 0; i < cells; ++i) {
        const std::string axis_value = sw.axis == "schedule"
                                           ? sw.labels[i]
                                           : g17(sw.values[i]);
        const std::string prefix = std::to_string(i) + ',' +
                                   csv_field(sw.axis) + ',' +
                                   csv_field(axis_value) + ',';
        try {
            const auto [cell_verdict, cell_tables] =
                exec_dispatch(cell_config(cfg, sw, i));
            (void)cell_tables;
            csv += prefix + "passed," +
                   g17(cell_verdict.passed ? 1.0 : 0.0) + ",ok\n";
            csv += prefix + "inconclusive," +
                   g17(cell_verdict.inconclusive ? 1.0 : 0.0) + ",ok\n";
            csv += prefix + "samples_used," +
                   g17(static_cast<double>(cell_verdict.samples_used)) +
                   ",ok\n";
            for (const auto& [key, value] : cell_verdict.stats)
                csv += prefix + csv_field(key) + ',' + g17(value) + ",ok\n";
        } catch (const std::exception& e) {
            ++failed;
            csv += prefix + "error,nan," + csv_field(e.what()) + '\n';
            v.notes.push_back("cell " + std::to_string(i) + " (" + sw.axis +
                              " = " + axis_value + ") failed: " + e.what());
        }
    }
    // The sweep is a data-collection run: it passes when it completes, and
    // per-cell failures are recorded in the rows and notes instead of aborting.
    v.passed = true;
    v.samples_used = cells;
    v.stats["n_cells"] = static_cast<double>(cells);
    v.stats["n_failed_cells"] = static_cast<double>(failed);
    return {std::move(v), {{"sweep.csv", std::move(csv)}}};
}

std::pair<Verdict, Tables> exec_dispatch(const RunConfig& cfg) {
    switch (cfg.experiment) {
    case Experiment::Simulate: return exec_simulate(cfg);
    case Experiment::VerifyThm1: return exec_thm1(cfg);
    case Experiment::VerifyThm2: return exec_thm2(cfg);
    case Experiment::VerifyProp3: return exec_prop3(cfg);
    case Experiment::VerifyThm4: return exec_thm4(cfg);
    case Experiment::Diversity: return exec_diversity(cfg);
    case Experiment::Perturb: return exec_perturb(cfg);
    case Experiment::ScheduleDump: return exec_schedule_dump(cfg);
    case Experiment::Sweep: return exec_sweep(cfg);
    }
    throw InvalidInputError("unhandled experiment enum value");
}

} // namespace

std::pair<Verdict, Tables> execute(const RunConfig& cfg) {
    return exec_dispatch(cfg);
}

RunResult run(const RunConfig& cfg) {
    auto [verdict, tables] = execute(cfg);

    const fs::path dir(cfg.output_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec && !fs::is_directory(dir))
        throw IoError("cannot create output directory \"" + cfg.output_dir +
                      "\": " + ec.message());

    RunResult res;
    res.verdict = verdict;
    res.output_dir = cfg.output_dir;

    auto write_file = [&](const fs::path& path, const std::string& content) {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(content.data(),
                  static_cast<std::streamsize>(content.size()));
        if (!out)
            throw IoError("failed to write \"" + path.string() + "\"");
    };
    auto add_artifact = [&](const std::string& name,
                            const std::string& content) {
        write_file(dir / name, content);
        res.artifacts.push_back(
            {name, content.size(), hex64(fnv1a64(content))});
    };

    add_artifact("verdict.json", verdict.to_json() + "\n");
    for (const auto& [name, content] : tables) add_artifact(name, content);

    json manifest;
    manifest["version"] = kVersion;
    manifest["experiment"] = experiment_to_string(cfg.experiment);
    manifest["seed"] = cfg.seed;
    manifest["config_hash"] = hex64(cfg.config_hash());
    manifest["timestamp"] = iso_utc_timestamp();
    json arts = json::array();
    std::vector<RunArtifact> sorted = res.artifacts;
    std::sort(sorted.begin(), sorted.end(),
              [](const RunArtifact& a, const RunArtifact& b) {
                  return a.name < b.name;
              });
    for (const RunArtifact& a : sorted)
        arts.push_back({{"name", a.name},
                        {"size_bytes", a.size_bytes},
                        {"fnv1a64", a.fnv1a64_hex}});
    manifest["artifacts"] = std::move(arts);
    const std::string manifest_text = manifest.dump(2) + "\n";

    // The manifest is written last, via rename, so a directory containing
    // manifest.json is always a complete run.
    const fs::path tmp = dir / "manifest.json.tmp";
    write_file(tmp, manifest_text);
    fs::rename(tmp, dir / "manifest.json", ec);
    if (ec)
        throw IoError("failed to finalize manifest.json: " + ec.message());
    res.artifacts.push_back(
        {"manifest.json", manifest_text.size(), hex64(fnv1a64(manifest_text))});

    res.exit_code = (verdict.passed || verdict.inconclusive) ? 0 : 2;
    return res;
}

} // namespace gmflow
