// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>

namespace fmx {

inline constexpr double log_2pi = 1.8378770664093454835606594728112353;

// psi(x) for x > 0: shift upward until x >= 6, then an 8-term asymptotic
// tail in 1/x^2. Accurate to ~1e-12 over [1e-3, 1e4].
inline double digamma(double x) {
    if (!(x > 0.0)) throw std::domain_error("digamma: requires x > 0");
    double acc = 0.0;
    while (x < 6.0) {
        acc -= 1.0 / x;
        x += 1.0;
    }
    const double r = 1.0 / x, r2 = r * r;
    // Bernoulli-number coefficients of the tail sum B_{2n}/(2n) x^{-2n}
    const double tail =
        r2 * (1.0 / 12 +
        r2 * (-1.0 / 120 +
        r2 * (1.0 / 252 +
        r2 * (-1.0 / 240 +
        r2 * (1.0 / 132 +
        r2 * (-691.0 / 32760 +
        r2 * (1.0 / 12 +
        r2 * (-3617.0 / 8160))))))));
    return acc + std::log(x) - 0.5 * r - tail;
}

// psi'(x) for x > 0, same shift-then-asymptotic scheme as digamma. The
// trigamma tail converges more slowly, so shift further before truncating.
inline double trigamma(double x) {
    if (!(x > 0.0)) throw std::domain_error("trigamma: requires x > 0");
    double acc = 0.0;
    while (x < 8.0) {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    const double r = 1.0 / x, r2 = r * r;
    const double tail =
        r * (1.0 +
        r * (0.5 +
        r * (1.0 / 6 +
        r2 * (-1.0 / 30 +
        r2 * (1.0 / 42 +
        r2 * (-1.0 / 30 +
        r2 * (5.0 / 66 +
        r2 * (-691.0 / 2730 +
        r2 * (7.0 / 6)))))))));
    return acc + tail;
}

// log(1 + e^x) without overflow.
inline double log1pexp(double x) {
    if (x > 0.0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

// log sigmoid(x) = -log(1 + e^{-x})
inline double log_sigmoid(double x) { return -log1pexp(-x); }

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// log sum_j e^{v_j} with max subtraction; -inf entries are permitted.
inline double logsumexp(std::span<const double> v) {
    double m = -std::numeric_limits<double>::infinity();
    for (double x : v)
        if (x > m) m = x;
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

}  // namespace fmx
