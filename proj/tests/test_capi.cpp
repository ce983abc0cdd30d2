/* test_capi.cpp — the C interface: handle lifecycle, closed-form parity
 * through the flat API, error-code mapping, integration, and the runner. */
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "gmflow.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* kMixJson =
    R"({"weights":[0.3,0.7],"means":[[1,0],[-1,0]],"sigma":0.4})";

struct MixHandle {
    gmf_mixture* h = nullptr;
    explicit MixHandle(const char* text) {
        REQUIRE(gmf_mixture_from_json(text, &h) == GMF_OK);
    }
    ~MixHandle() { gmf_mixture_release(h); }
};

struct SchedHandle {
    gmf_schedule* h = nullptr;
    explicit SchedHandle(const char* text) {
        REQUIRE(gmf_schedule_from_json(text, &h) == GMF_OK);
    }
    ~SchedHandle() { gmf_schedule_release(h); }
};

struct FieldHandle {
    gmf_field* h = nullptr;
    ~FieldHandle() { gmf_field_release(h); }
};

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "gmflow_capi_tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("version and status names") {
    const char* v = gmf_version();
    REQUIRE(v != nullptr);
    CHECK(std::strchr(v, '.') != nullptr);
    CHECK(std::string(gmf_status_name(GMF_OK)) == "ok");
    CHECK(std::string(gmf_status_name(GMF_ERR_INVALID_ARGUMENT)) ==
          "invalid_argument");
    CHECK(std::string(gmf_status_name(GMF_ERR_DOMAIN)) == "domain");
    CHECK(std::string(gmf_status_name(GMF_ERR_PARSE)) == "parse");
    CHECK(std::string(gmf_status_name(GMF_ERR_CONSTRUCTION)) ==
          "construction");
    CHECK(std::string(gmf_status_name(GMF_ERR_DIVERGENCE)) == "divergence");
    CHECK(std::string(gmf_status_name(GMF_ERR_IO)) == "io");
    CHECK(std::string(gmf_status_name(GMF_ERR_INTERNAL)) == "internal");
}

TEST_CASE("mixture lifecycle and JSON round trip") {
    const double weights[2] = {0.3, 0.7};
    const double means[4] = {1.0, 0.0, -1.0, 0.0};  // row-major 2x2
    gmf_mixture* mix = nullptr;
    REQUIRE(gmf_mixture_create(weights, 2, means, 2, 0.4, &mix) == GMF_OK);
    size_t dim = 0, k = 0;
    CHECK(gmf_mixture_dim(mix, &dim) == GMF_OK);
    CHECK(gmf_mixture_num_components(mix, &k) == GMF_OK);
    CHECK(dim == 2);
    CHECK(k == 2);

    char* text = nullptr;
    REQUIRE(gmf_mixture_to_json(mix, &text) == GMF_OK);
    gmf_mixture* back = nullptr;
    REQUIRE(gmf_mixture_from_json(text, &back) == GMF_OK);
    char* text2 = nullptr;
    REQUIRE(gmf_mixture_to_json(back, &text2) == GMF_OK);
    CHECK(std::string(text) == text2);
    gmf_string_free(text);
    gmf_string_free(text2);
    gmf_mixture_release(back);
    gmf_mixture_release(mix);
}

TEST_CASE("error mapping populates gmf_last_error") {
    gmf_mixture* mix = nullptr;
    CHECK(gmf_mixture_from_json("{ this is not json", &mix) == GMF_ERR_PARSE);
    CHECK(std::strlen(gmf_last_error()) > 0);

    const double bad_weights[2] = {0.3, 0.6};
    const double means[4] = {1.0, 0.0, -1.0, 0.0};
    CHECK(gmf_mixture_create(bad_weights, 2, means, 2, 0.4, &mix) ==
          GMF_ERR_INVALID_ARGUMENT);
    CHECK(std::string(gmf_last_error()).find("weights") != std::string::npos);

    CHECK(gmf_mixture_from_json(kMixJson, nullptr) ==
          GMF_ERR_INVALID_ARGUMENT);
    CHECK(std::string(gmf_last_error()).find("null pointer") !=
          std::string::npos);

    MixHandle good(kMixJson);
    const double x[2] = {0.0, 0.0};
    double out = 0.0;
    CHECK(gmf_marginal_log_density(good.h, 2.0, x, 2, &out) == GMF_ERR_DOMAIN);
    double vec[3] = {0, 0, 0};
    CHECK(gmf_score_conditional(good.h, 0.5, x, 3, vec) ==
          GMF_ERR_INVALID_ARGUMENT);
}

TEST_CASE("closed-form quantities through the C surface match the oracles") {
    MixHandle mix(kMixJson);
    const double t = 0.5;
    const double x[2] = {0.2, -0.3};

    double logp = 0.0;
    REQUIRE(gmf_marginal_log_density(mix.h, t, x, 2, &logp) == GMF_OK);
    CHECK(logp == doctest::Approx(-1.3392486268983297).epsilon(1e-14));

    double resp[2] = {0, 0};
    REQUIRE(gmf_responsibilities(mix.h, t, x, 2, resp) == GMF_OK);
    CHECK(resp[0] == doctest::Approx(0.46067074261780055).epsilon(1e-13));
    CHECK(resp[1] == doctest::Approx(0.53932925738219939).epsilon(1e-13));

    double score[2] = {0, 0};
    REQUIRE(gmf_score_conditional(mix.h, t, x, 2, score) == GMF_OK);
    CHECK(score[0] == doctest::Approx(-0.82527330131792875).epsilon(1e-13));
    CHECK(score[1] == doctest::Approx(1.0344827586206895).epsilon(1e-13));

    double post[2] = {0, 0};
    REQUIRE(gmf_posterior_mean(mix.h, t, x, 2, post) == GMF_OK);
    CHECK(post[0] == doctest::Approx(-0.01263665065896441).epsilon(1e-12));
    CHECK(post[1] == doctest::Approx(-0.082758620689655171).epsilon(1e-12));

    double su[2] = {0, 0};
    const double xu[2] = {1.5, -2.0};
    REQUIRE(gmf_score_unconditional(0.62, xu, 2, su) == GMF_OK);
    CHECK(su[0] == doctest::Approx(-2.83661119515885).epsilon(1e-13));
    CHECK(su[1] == doctest::Approx(3.7821482602118).epsilon(1e-13));
}

TEST_CASE("schedule handles describe and round-trip") {
    SchedHandle tv(R"({"kind":"tv","omega":9,"n":8})");
    char* desc = nullptr;
    REQUIRE(gmf_schedule_describe(tv.h, &desc) == GMF_OK);
    CHECK(std::string(desc) == "tv(omega=9,s=8)");
    gmf_string_free(desc);

    char* text = nullptr;
    REQUIRE(gmf_schedule_to_json(tv.h, &text) == GMF_OK);
    gmf_schedule* back = nullptr;
    REQUIRE(gmf_schedule_from_json(text, &back) == GMF_OK);
    gmf_string_free(text);
    gmf_schedule_release(back);

    gmf_schedule* bad = nullptr;
    CHECK(gmf_schedule_from_json(R"({"kind":"warp"})", &bad) ==
          GMF_ERR_PARSE);
}

TEST_CASE("field velocities blend the scores exactly as documented") {
    MixHandle mix(kMixJson);
    const double t = 0.5;
    const double x[2] = {0.2, -0.3};

    double sc[2], su[2];
    REQUIRE(gmf_score_conditional(mix.h, t, x, 2, sc) == GMF_OK);
    REQUIRE(gmf_score_unconditional(t, x, 2, su) == GMF_OK);
    const double alpha = 1.0 / (1.0 - t);
    const double beta = t / (1.0 - t);

    FieldHandle cond;
    REQUIRE(gmf_field_conditional(mix.h, &cond.h) == GMF_OK);
    double v[2];
    REQUIRE(gmf_field_velocity(cond.h, t, x, 2, v) == GMF_OK);
    CHECK(v[0] == doctest::Approx(-alpha * x[0] - beta * sc[0]).epsilon(1e-12));
    CHECK(v[1] == doctest::Approx(-alpha * x[1] - beta * sc[1]).epsilon(1e-12));

    FieldHandle uncond;
    REQUIRE(gmf_field_unconditional(mix.h, &uncond.h) == GMF_OK);
    REQUIRE(gmf_field_velocity(uncond.h, t, x, 2, v) == GMF_OK);
    CHECK(v[0] == doctest::Approx(-alpha * x[0] - beta * su[0]).epsilon(1e-12));

    const double omega = 3.0;
    SchedHandle sched(R"({"kind":"constant","omega":3})");
    FieldHandle guided;
    REQUIRE(gmf_field_guided(mix.h, sched.h, &guided.h) == GMF_OK);
    REQUIRE(gmf_field_velocity(guided.h, t, x, 2, v) == GMF_OK);
    const double sh0 = (1.0 - omega) * su[0] + omega * sc[0];
    const double sh1 = (1.0 - omega) * su[1] + omega * sc[1];
    CHECK(v[0] == doctest::Approx(-alpha * x[0] - beta * sh0).epsilon(1e-12));
    CHECK(v[1] == doctest::Approx(-alpha * x[1] - beta * sh1).epsilon(1e-12));
}

TEST_CASE("step-resolved guidance through the grid API") {
    MixHandle mix(kMixJson);
    SchedHandle interval(
        R"({"kind":"interval","omega":5,"active_lo":0.3,"active_hi":0.7})");
    FieldHandle field;
    REQUIRE(gmf_field_guided(mix.h, interval.h, &field.h) == GMF_OK);

    const double x[2] = {0.2, -0.3};
    double v[2];
    // Step-resolved velocities need a grid first.
    CHECK(gmf_field_velocity_at_step(field.h, 0, x, 2, v) ==
          GMF_ERR_INVALID_ARGUMENT);
    CHECK(std::string(gmf_last_error()).find("set_grid") != std::string::npos);
    // ...and a non-constant schedule has no single scale.
    CHECK(gmf_field_velocity(field.h, 0.5, x, 2, v) ==
          GMF_ERR_INVALID_ARGUMENT);

    REQUIRE(gmf_field_set_grid(field.h, 1.0, 0.0, 10) == GMF_OK);
    const double h = (1.0 - 0.0) / 10.0;  // the grid's own step arithmetic
    const double t1 = 1.0 - 1.0 * h;
    const double t3 = 1.0 - 3.0 * h;

    // Off-window steps run at the conditional scale omega = 1.
    FieldHandle cond;
    REQUIRE(gmf_field_conditional(mix.h, &cond.h) == GMF_OK);
    double vc[2];
    REQUIRE(gmf_field_velocity_at_step(field.h, 1, x, 2, v) == GMF_OK);
    REQUIRE(gmf_field_velocity(cond.h, t1, x, 2, vc) == GMF_OK);
    CHECK(v[0] == vc[0]);
    CHECK(v[1] == vc[1]);

    // Active steps run at the normalized scale 5 / 0.4 = 12.5 (t = 0.7).
    double sc[2], su[2];
    REQUIRE(gmf_score_conditional(mix.h, t3, x, 2, sc) == GMF_OK);
    REQUIRE(gmf_score_unconditional(t3, x, 2, su) == GMF_OK);
    const double w = 12.5, alpha = 1.0 / (1.0 - t3), beta = t3 / (1.0 - t3);
    REQUIRE(gmf_field_velocity_at_step(field.h, 3, x, 2, v) == GMF_OK);
    CHECK(v[0] == doctest::Approx(-alpha * x[0] -
                                  beta * ((1.0 - w) * su[0] + w * sc[0]))
                      .epsilon(1e-10));
    CHECK(v[1] == doctest::Approx(-alpha * x[1] -
                                  beta * ((1.0 - w) * su[1] + w * sc[1]))
                      .epsilon(1e-10));
}

TEST_CASE("integration through the C surface") {
    // Single mode: the flow is affine and the endpoint has a closed form.
    gmf_mixture* one = nullptr;
    const double wts[1] = {1.0};
    const double mu[2] = {0.5, -1.0};
    REQUIRE(gmf_mixture_create(wts, 1, mu, 2, 0.7, &one) == GMF_OK);
    FieldHandle field;
    REQUIRE(gmf_field_conditional(one, &field.h) == GMF_OK);

    const double x0[2] = {1.3, 0.4};
    gmf_trajectory* traj = nullptr;
    REQUIRE(gmf_integrate(field.h, "rk4", 200, 0.9, 0.1, 0, x0, 2, &traj) ==
            GMF_OK);

    size_t records = 0, dim = 0;
    REQUIRE(gmf_trajectory_num_records(traj, &records) == GMF_OK);
    REQUIRE(gmf_trajectory_dim(traj, &dim) == GMF_OK);
    CHECK(records == 2);  // record_every = 0 keeps endpoints only
    CHECK(dim == 2);

    double t = 0.0, x[2], norm = 0.0, omega = 0.0;
    REQUIRE(gmf_trajectory_record(traj, 0, &t, x, &norm, &omega) == GMF_OK);
    CHECK(t == doctest::Approx(0.9));
    CHECK(x[0] == x0[0]);
    CHECK(x[1] == x0[1]);
    CHECK(omega == 1.0);

    REQUIRE(gmf_trajectory_record(traj, 1, &t, x, &norm, &omega) == GMF_OK);
    CHECK(t == doctest::Approx(0.1));
    // x(t) = (1 - t) mu + (sigma_t / sigma_t0) (x0 - (1 - t0) mu)
    const double s2 = [](double tt) {
        return tt * tt + (1 - tt) * (1 - tt) * 0.49;
    }(0.1);
    const double s20 = 0.9 * 0.9 + 0.1 * 0.1 * 0.49;
    const double ratio = std::sqrt(s2 / s20);
    for (int c = 0; c < 2; ++c)
        CHECK(x[c] == doctest::Approx(0.9 * mu[c] +
                                      ratio * (x0[c] - 0.1 * mu[c]))
                          .epsilon(1e-6));
    CHECK(norm == doctest::Approx(std::hypot(x[0], x[1])).epsilon(1e-12));

    int mode = -2;
    REQUIRE(gmf_trajectory_final_mode(traj, &mode) == GMF_OK);
    CHECK(mode == 0);
    int diverged = 1, step = 0;
    double mag = 0.0;
    REQUIRE(gmf_trajectory_divergence(traj, &diverged, &step, &mag) == GMF_OK);
    CHECK(diverged == 0);
    CHECK(step == -1);
    gmf_trajectory_release(traj);

    // Bad method name maps to invalid_argument.
    CHECK(gmf_integrate(field.h, "rk5", 10, 0.9, 0.1, 0, x0, 2, &traj) ==
          GMF_ERR_INVALID_ARGUMENT);
    gmf_mixture_release(one);
}

TEST_CASE("divergence is reported on the trajectory, not as an error") {
    MixHandle mix(R"({"weights":[0.3,0.7],"means":[[1,0],[-1,0]],)"
                  R"("sigma":0.05})");
    SchedHandle huge(R"({"kind":"constant","omega":10000})");
    FieldHandle field;
    REQUIRE(gmf_field_guided(mix.h, huge.h, &field.h) == GMF_OK);

    const double x0[2] = {1.0, 1.0};
    gmf_trajectory* traj = nullptr;
    REQUIRE(gmf_integrate(field.h, "euler", 8, 0.999, 0.001, 1, x0, 2,
                          &traj) == GMF_OK);
    int diverged = 0, step = -1;
    double mag = 0.0;
    REQUIRE(gmf_trajectory_divergence(traj, &diverged, &step, &mag) == GMF_OK);
    CHECK(diverged == 1);
    CHECK(step >= 0);
    CHECK(mag > 0.0);
    int mode = 0;
    REQUIRE(gmf_trajectory_final_mode(traj, &mode) == GMF_OK);
    CHECK(mode == -1);
    gmf_trajectory_release(traj);
}

TEST_CASE("gmf_run_json executes a config end to end") {
    const fs::path dir = fresh_dir("run_json");
    const std::string cfg =
        R"({"experiment":"schedule-dump",)"
        R"("schedule":{"kind":"constant","omega":9},"integrator":{"n":10}})";

    const uint64_t seed = 9;
    char* summary = nullptr;
    int exit_code = -1;
    REQUIRE(gmf_run_json(cfg.c_str(), "schedule-dump", dir.string().c_str(),
                         &seed, &summary, &exit_code) == GMF_OK);
    CHECK(exit_code == 0);
    REQUIRE(summary != nullptr);
    const json s = json::parse(summary);
    gmf_string_free(summary);
    CHECK(s.at("experiment") == "schedule-dump");
    CHECK(s.at("exit_code") == 0);
    CHECK(s.at("passed") == true);
    CHECK(s.at("output_dir") == dir.string());
    CHECK(s.at("artifacts").size() == 3);
    CHECK(s.at("verdict").at("experiment") == "schedule-dump");

    CHECK(fs::exists(dir / "verdict.json"));
    CHECK(fs::exists(dir / "schedule.csv"));
    const json manifest = json::parse(slurp(dir / "manifest.json"));
    CHECK(manifest.at("seed") == 9);  // the seed override reached the run

    // Name mismatch is a parse error before anything runs.
    CHECK(gmf_run_json(cfg.c_str(), "diversity", nullptr, nullptr, nullptr,
                       nullptr) == GMF_ERR_PARSE);
    CHECK(gmf_run_json(nullptr, nullptr, nullptr, nullptr, nullptr, nullptr) ==
          GMF_ERR_INVALID_ARGUMENT);
}

TEST_CASE("gmf_run_file reads the config from disk") {
    const fs::path dir = fresh_dir("run_file");
    const fs::path cfg_path = dir / "config.json";
    {
        std::ofstream out(cfg_path);
        out << R"({"experiment":"schedule-dump",)"
            << R"("schedule":{"kind":"tv","omega":9,"n":10},)"
            << R"("integrator":{"n":10},)"
            << R"("output_dir":")" << (dir / "out").string() << R"("})";
    }
    int exit_code = -1;
    REQUIRE(gmf_run_file(cfg_path.string().c_str(), nullptr, nullptr, nullptr,
                         nullptr, &exit_code) == GMF_OK);
    CHECK(exit_code == 0);
    CHECK(fs::exists(dir / "out" / "manifest.json"));

    CHECK(gmf_run_file((dir / "missing.json").string().c_str(), nullptr,
                       nullptr, nullptr, nullptr, nullptr) == GMF_ERR_IO);
}
