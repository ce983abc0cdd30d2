/*
 * vec.hpp — tiny dense-vector helpers used throughout the library.
 *
 * Dimensions here are small (d is a runtime value, typically 1..16), so plain
 * std::vector<double> plus a handful of BLAS-1 style free functions is all the
 * linear algebra this project needs.
 */

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

namespace gmflow {

using Vec = std::vector<double>;

inline double dot(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(const Vec& a) { return dot(a, a); }

inline double norm(const Vec& a) { return std::sqrt(norm2(a)); }

inline double dist2(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

inline double dist(const Vec& a, const Vec& b) { return std::sqrt(dist2(a, b)); }

/// y += alpha * x
inline void axpy(double alpha, const Vec& x, Vec& y) {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline Vec scaled(const Vec& x, double alpha) {
    Vec y(x);
    for (double& v : y) v *= alpha;
    return y;
}

inline Vec sub(const Vec& a, const Vec& b) {
    Vec y(a);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] -= b[i];
    return y;
}

inline Vec add(const Vec& a, const Vec& b) {
    Vec y(a);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += b[i];
    return y;
}

inline bool all_finite(const Vec& a) {
    return std::all_of(a.begin(), a.end(),
                       [](double v) { return std::isfinite(v); });
}

/// log(sum_i exp(v_i)) without overflow; -inf input entries are allowed.
inline double log_sum_exp(const Vec& v) {
    double m = -std::numeric_limits<double>::infinity();
    for (double x : v) m = std::max(m, x);
    if (!std::isfinite(m)) return m; // all -inf (or empty)
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

} // namespace gmflow
