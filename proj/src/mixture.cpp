/*
 * mixture.cpp — implementation of the Gaussian-mixture closed forms.
 */

#include "gmflow/mixture.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "gmflow/errors.hpp"

namespace gmflow {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112; // log(2*pi)

void check_point(const GaussianMixture& mix, const Vec& x) {
    if (x.size() != mix.dim())
        throw InvalidInputError("point dimension " + std::to_string(x.size()) +
                                " does not match mixture dimension " +
                                std::to_string(mix.dim()));
    if (!all_finite(x))
        throw InvalidInputError("point has non-finite components");
}

/// Unnormalized per-component log joints log pi_k + log N(x; (1-t) mu_k, s2 I).
std::vector<double> log_joints(const GaussianMixture& mix, double t,
                               const Vec& x) {
    const double s2 = NoiseSchedule::component_variance(t, mix.sigma());
    const double a = 1.0 - t;
    const std::size_t d = mix.dim();
    const double log_norm =
        -0.5 * static_cast<double>(d) * (kLog2Pi + std::log(s2));
    std::vector<double> lj(mix.num_components());
    for (std::size_t k = 0; k < lj.size(); ++k) {
        double q = 0.0;
        const Vec& mu = mix.mean(k);
        for (std::size_t i = 0; i < d; ++i) {
            const double dlt = x[i] - a * mu[i];
            q += dlt * dlt;
        }
        // pi_k = 0 is legal; its log joint is -inf and drops out of the LSE.
        lj[k] = std::log(mix.weights()[k]) + log_norm - 0.5 * q / s2;
    }
    return lj;
}

} // namespace

void NoiseSchedule::check_time(double t) const {
    const double slack = 1e-12;
    if (!std::isfinite(t) || t < t_min - slack || t > 1.0 - t_min + slack)
        throw DomainError("time " + std::to_string(t) +
                          " outside clamp [" + std::to_string(t_min) + ", " +
                          std::to_string(1.0 - t_min) + "]");
}

GaussianMixture::GaussianMixture(std::vector<double> weights,
                                 std::vector<Vec> means, double sigma)
    : weights_(std::move(weights)), means_(std::move(means)), sigma_(sigma) {
    if (weights_.empty() || means_.size() != weights_.size())
        throw InvalidInputError(
            "mixture needs K >= 1 weights and exactly one mean per weight");
    const std::size_t d = means_.front().size();
    if (d == 0) throw InvalidInputError("mixture means must have d >= 1");
    for (const Vec& mu : means_) {
        if (mu.size() != d)
            throw InvalidInputError("all mixture means must share one dimension");
        if (!all_finite(mu))
            throw InvalidInputError("mixture means must be finite");
    }
    double sum = 0.0;
    for (double w : weights_) {
        if (!std::isfinite(w) || w < 0.0)
            throw InvalidInputError("weights must be finite and nonnegative");
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-12)
        throw InvalidInputError("weights must sum to 1 within 1e-12 (got " +
                                std::to_string(sum) + ")");
    if (!std::isfinite(sigma_) || sigma_ <= 0.0)
        throw InvalidInputError("sigma must be positive and finite");
}

Vec GaussianMixture::weighted_mean() const {
    Vec m(dim(), 0.0);
    for (std::size_t k = 0; k < num_components(); ++k)
        axpy(weights_[k], means_[k], m);
    return m;
}

std::size_t GaussianMixture::weakest_component() const {
    std::size_t arg = 0;
    for (std::size_t k = 1; k < weights_.size(); ++k)
        if (weights_[k] < weights_[arg]) arg = k;
    return arg;
}

std::size_t GaussianMixture::strongest_component() const {
    std::size_t arg = 0;
    for (std::size_t k = 1; k < weights_.size(); ++k)
        if (weights_[k] > weights_[arg]) arg = k;
    return arg;
}

std::string GaussianMixture::to_json() const {
    nlohmann::json j;
    j["weights"] = weights_;
    j["means"] = means_;
    j["sigma"] = sigma_;
    return j.dump();
}

GaussianMixture GaussianMixture::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("mixture JSON parse error: ") + e.what());
    }
    try {
        if (!j.is_object() || !j.contains("weights") || !j.contains("means") ||
            !j.contains("sigma"))
            throw ParseError(
                "mixture JSON must be {\"weights\":[...],\"means\":[[...]],"
                "\"sigma\":s}");
        for (const auto& [key, value] : j.items()) {
            (void)value;
            if (key != "weights" && key != "means" && key != "sigma")
                throw ParseError("unknown key \"" + key + "\" in mixture JSON");
        }
        return GaussianMixture(j["weights"].get<std::vector<double>>(),
                               j["means"].get<std::vector<Vec>>(),
                               j["sigma"].get<double>());
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("mixture JSON has wrong field types: ") +
                         e.what());
    }
}

double marginal_log_density(const GaussianMixture& mix, const NoiseSchedule& ns,
                            double t, const Vec& x) {
    ns.check_time(t);
    check_point(mix, x);
    return log_sum_exp(log_joints(mix, t, x));
}

double component_log_joint(const GaussianMixture& mix, const NoiseSchedule& ns,
                           double t, const Vec& x, std::size_t k) {
    ns.check_time(t);
    check_point(mix, x);
    if (k >= mix.num_components())
        throw InvalidInputError("component index out of range");
    return log_joints(mix, t, x)[k];
}

Responsibilities responsibilities(const GaussianMixture& mix,
                                  const NoiseSchedule& ns, double t,
                                  const Vec& x) {
    ns.check_time(t);
    check_point(mix, x);
    const std::vector<double> lj = log_joints(mix, t, x);
    const double lse = log_sum_exp(lj);
    Responsibilities r;
    r.log_values.resize(lj.size());
    r.values.resize(lj.size());
    for (std::size_t k = 0; k < lj.size(); ++k) {
        r.log_values[k] = lj[k] - lse;
        r.values[k] = std::exp(r.log_values[k]);
    }
    return r;
}

Vec component_posterior_mean(const GaussianMixture& mix, const NoiseSchedule& ns,
                             double t, const Vec& x, std::size_t k) {
    ns.check_time(t);
    check_point(mix, x);
    if (k >= mix.num_components())
        throw InvalidInputError("component index out of range");
    const double s2 = NoiseSchedule::component_variance(t, mix.sigma());
    const double cx = (1.0 - t) * mix.sigma() * mix.sigma() / s2;
    const double cm = t * t / s2;
    Vec m = scaled(x, cx);
    axpy(cm, mix.mean(k), m);
    return m;
}

Vec posterior_mean_conditional(const GaussianMixture& mix,
                               const NoiseSchedule& ns, double t, const Vec& x) {
    const Responsibilities w = responsibilities(mix, ns, t, x);
    const double s2 = NoiseSchedule::component_variance(t, mix.sigma());
    const double cx = (1.0 - t) * mix.sigma() * mix.sigma() / s2;
    const double cm = t * t / s2;
    // sum_k w_k m_k with m_k = cm * mu_k + cx * x; sum w_k = 1 pulls the x
    // term out front.
    Vec out = scaled(x, cx);
    for (std::size_t k = 0; k < mix.num_components(); ++k)
        axpy(cm * w.values[k], mix.mean(k), out);
    return out;
}

Vec posterior_mean_unconditional(const NoiseSchedule& ns, double t,
                                 const Vec& x) {
    ns.check_time(t);
    if (!all_finite(x))
        throw InvalidInputError("point has non-finite components");
    const double c = (1.0 - t) / NoiseSchedule::unconditional_variance(t);
    return scaled(x, c);
}

Vec score_conditional(const GaussianMixture& mix, const NoiseSchedule& ns,
                      double t, const Vec& x) {
    const Responsibilities w = responsibilities(mix, ns, t, x);
    const double s2 = NoiseSchedule::component_variance(t, mix.sigma());
    // sum_k w_k ((1-t) mu_k - x) / s2
    Vec out = scaled(x, -1.0 / s2);
    for (std::size_t k = 0; k < mix.num_components(); ++k)
        axpy((1.0 - t) * w.values[k] / s2, mix.mean(k), out);
    return out;
}

Vec score_unconditional(const NoiseSchedule& ns, double t, const Vec& x) {
    ns.check_time(t);
    if (!all_finite(x))
        throw InvalidInputError("point has non-finite components");
    return scaled(x, -1.0 / NoiseSchedule::unconditional_variance(t));
}

} // namespace gmflow
