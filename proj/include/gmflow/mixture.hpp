/*
 * mixture.hpp — exact densities, responsibilities, posterior means and scores
 * for an isotropic Gaussian mixture observed through the linear mean-decay
 * noise schedule.
 *
 * Model: data x0 ~ sum_k pi_k N(mu_k, sigma^2 I) in R^d; the noising kernel at
 * time t is N((1-t) x0, t^2 I), so the noised marginal of component k is
 * N((1-t) mu_k, sigma_t^2 I) with sigma_t^2 = t^2 + (1-t)^2 sigma^2. The
 * unconditional reference prior is N(0, I), whose noised marginal variance is
 * t^2 + (1-t)^2. All K-component reductions run in log space.
 */

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "gmflow/vec.hpp"

namespace gmflow {

/// Fixed functions of the linear mean-decay schedule plus the time clamp on
/// which they may be evaluated (alpha/beta are singular at the endpoints).
struct NoiseSchedule {
    double t_min = 1e-3;

    double alpha(double t) const { return 1.0 / (1.0 - t); }
    double beta(double t) const { return t / (1.0 - t); }
    double mean_factor(double t) const { return 1.0 - t; } // a(t)
    double noise_std(double t) const { return t; }         // b(t)

    /// Marginal variance of one mixture component with data-scale sigma.
    static double component_variance(double t, double sigma) {
        return t * t + (1.0 - t) * (1.0 - t) * sigma * sigma;
    }
    /// Marginal variance of the N(0, I) unconditional prior.
    static double unconditional_variance(double t) {
        return t * t + (1.0 - t) * (1.0 - t);
    }

    /// Throws DomainError unless t is inside [t_min, 1 - t_min] (with a tiny
    /// tolerance so grid endpoints produced by arithmetic stay valid).
    void check_time(double t) const;
};

/// Isotropic Gaussian mixture: weights pi_k, means mu_k, shared scale sigma.
class GaussianMixture {
public:
    /// Validates: weights nonnegative summing to 1 within 1e-12, K >= 1,
    /// equal-dimension means with d >= 1, sigma > 0. sigma >= 1 is legal but
    /// flagged (see in_modeled_regime) so degenerate studies stay possible.
    GaussianMixture(std::vector<double> weights, std::vector<Vec> means,
                    double sigma);

    std::size_t num_components() const { return weights_.size(); }
    std::size_t dim() const { return means_.front().size(); }
    const std::vector<double>& weights() const { return weights_; }
    const Vec& mean(std::size_t k) const { return means_[k]; }
    const std::vector<Vec>& means() const { return means_; }
    double sigma() const { return sigma_; }

    /// True when sigma < 1, the regime the mode-structure analysis assumes.
    bool in_modeled_regime() const { return sigma_ < 1.0; }

    /// Weighted mean sum_k pi_k mu_k (the early-time attractor).
    Vec weighted_mean() const;

    /// Index of the smallest / largest mixture weight (ties -> lowest index).
    std::size_t weakest_component() const;
    std::size_t strongest_component() const;

    /// JSON object {"weights":[...], "means":[[...],...], "sigma": s};
    /// round-trips exactly at double precision.
    std::string to_json() const;
    static GaussianMixture from_json(const std::string& text);

private:
    std::vector<double> weights_;
    std::vector<Vec> means_;
    double sigma_;
};

/// Posterior component probabilities of the mixture given a noised state,
/// kept in both linear and log form (values = normalized exp(log_values)).
struct Responsibilities {
    std::vector<double> values;
    std::vector<double> log_values;
};

/// log sum_k pi_k N(x; (1-t) mu_k, sigma_t^2 I), via log-sum-exp.
double marginal_log_density(const GaussianMixture& mix, const NoiseSchedule& ns,
                            double t, const Vec& x);

/// Softmax over log pi_k + log N(x; (1-t) mu_k, sigma_t^2 I).
Responsibilities responsibilities(const GaussianMixture& mix,
                                  const NoiseSchedule& ns, double t,
                                  const Vec& x);

/// Denoiser E[x0 | x_t = x] = sum_k w_k(t,x) m_k(t,x) with the per-component
/// shrinkage target m_k = (t^2 mu_k + (1-t) sigma^2 x) / sigma_t^2; always a
/// convex combination of the m_k.
Vec posterior_mean_conditional(const GaussianMixture& mix,
                               const NoiseSchedule& ns, double t, const Vec& x);

/// Per-component shrinkage target m_k(t, x) (exposed for oracle checks).
Vec component_posterior_mean(const GaussianMixture& mix, const NoiseSchedule& ns,
                             double t, const Vec& x, std::size_t k);

/// Denoiser of the N(0, I) prior: ((1-t) / (t^2 + (1-t)^2)) x.
Vec posterior_mean_unconditional(const NoiseSchedule& ns, double t, const Vec& x);

/// grad_x log p_t(x | y) = sum_k w_k ((1-t) mu_k - x) / sigma_t^2.
Vec score_conditional(const GaussianMixture& mix, const NoiseSchedule& ns,
                      double t, const Vec& x);

/// grad_x log p_t(x) = -x / (t^2 + (1-t)^2).
Vec score_unconditional(const NoiseSchedule& ns, double t, const Vec& x);

/// log pi_k + log N(x; (1-t) mu_k, sigma_t^2 I) for one component; the
/// building block for dominance comparisons done in log space.
double component_log_joint(const GaussianMixture& mix, const NoiseSchedule& ns,
                           double t, const Vec& x, std::size_t k);

} // namespace gmflow
