// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fmx/special.hpp"

namespace fmx {

namespace detail {
inline void check_positive_finite(std::span<const double> v, const char* what) {
    for (size_t i = 0; i < v.size(); ++i)
        if (!(v[i] > 0.0) || !std::isfinite(v[i]))
            throw std::domain_error(std::string(what) + "[" + std::to_string(i) +
                                    "] must be positive and finite");
}
inline void check_finite(std::span<const double> v, const char* what) {
    for (size_t i = 0; i < v.size(); ++i)
        if (!std::isfinite(v[i]))
            throw std::domain_error(std::string(what) + "[" + std::to_string(i) +
                                    "] must be finite");
}
}  // namespace detail

// Per-dimension Normal-Gamma distribution over a Gaussian's (mean, precision):
// precision ~ Gamma(a, b) (rate b), mean | precision ~ N(m, 1/(s * precision)).
// Treat as immutable after construction.
struct NormalGammaFactor {
    std::vector<double> m, s, a, b;

    NormalGammaFactor() = default;
    NormalGammaFactor(std::vector<double> m_, std::vector<double> s_,
                      std::vector<double> a_, std::vector<double> b_)
        : m(std::move(m_)), s(std::move(s_)), a(std::move(a_)), b(std::move(b_)) {
        if (m.size() != s.size() || m.size() != a.size() || m.size() != b.size())
            throw std::domain_error("NormalGammaFactor: field lengths differ");
        if (m.empty()) throw std::domain_error("NormalGammaFactor: empty");
        detail::check_finite(m, "m");
        detail::check_positive_finite(s, "s");
        detail::check_positive_finite(a, "a");
        detail::check_positive_finite(b, "b");
    }

    static NormalGammaFactor constant(size_t dim, double m0, double s0, double a0, double b0) {
        return NormalGammaFactor(std::vector<double>(dim, m0), std::vector<double>(dim, s0),
                                 std::vector<double>(dim, a0), std::vector<double>(dim, b0));
    }

    size_t dim() const { return m.size(); }
};

// The same distribution in its natural coordinates.
struct NaturalNGParams {
    std::vector<double> l1, l2, l3, l4;
    size_t dim() const { return l1.size(); }
};

struct DirichletFactor {
    std::vector<double> c;

    DirichletFactor() = default;
    explicit DirichletFactor(std::vector<double> c_) : c(std::move(c_)) {
        if (c.empty()) throw std::domain_error("DirichletFactor: empty");
        detail::check_positive_finite(c, "c");
    }

    size_t size() const { return c.size(); }
};

struct NGMoments {
    std::vector<double> e_log_alpha, e_alpha, e_alpha_mu, e_alpha_mu_sq;
};

inline NaturalNGParams mean_to_natural(const NormalGammaFactor& f) {
    const size_t n = f.dim();
    NaturalNGParams p;
    p.l1.resize(n);
    p.l2.resize(n);
    p.l3.resize(n);
    p.l4.resize(n);
    for (size_t d = 0; d < n; ++d) {
        p.l1[d] = f.a[d] - 0.5;
        p.l2[d] = -(f.b[d] + 0.5 * f.s[d] * f.m[d] * f.m[d]);
        p.l3[d] = f.s[d] * f.m[d];
        p.l4[d] = -0.5 * f.s[d];
    }
    return p;
}

inline NormalGammaFactor natural_to_mean(const NaturalNGParams& p) {
    const size_t n = p.dim();
    if (p.l2.size() != n || p.l3.size() != n || p.l4.size() != n)
        throw std::domain_error("natural_to_mean: field lengths differ");
    std::vector<double> m(n), s(n), a(n), b(n);
    for (size_t d = 0; d < n; ++d) {
        if (!(p.l4[d] < 0.0))
            throw std::domain_error("natural params invalid: l4[" + std::to_string(d) +
                                    "] must be negative");
        if (!(p.l1[d] > -0.5))
            throw std::domain_error("natural params invalid: l1[" + std::to_string(d) +
                                    "] must exceed -1/2");
        s[d] = -2.0 * p.l4[d];
        m[d] = p.l3[d] / s[d];
        a[d] = p.l1[d] + 0.5;
        b[d] = -p.l2[d] - 0.5 * s[d] * m[d] * m[d];
        if (!(b[d] > 0.0))
            throw std::domain_error("natural params invalid: implied b[" + std::to_string(d) +
                                    "] must be positive");
    }
    return NormalGammaFactor(std::move(m), std::move(s), std::move(a), std::move(b));
}

inline NGMoments ng_moments(const NormalGammaFactor& f) {
    const size_t n = f.dim();
    NGMoments mo;
    mo.e_log_alpha.resize(n);
    mo.e_alpha.resize(n);
    mo.e_alpha_mu.resize(n);
    mo.e_alpha_mu_sq.resize(n);
    for (size_t d = 0; d < n; ++d) {
        const double ratio = f.a[d] / f.b[d];
        mo.e_log_alpha[d] = digamma(f.a[d]) - std::log(f.b[d]);
        mo.e_alpha[d] = ratio;
        mo.e_alpha_mu[d] = f.m[d] * ratio;
        mo.e_alpha_mu_sq[d] = 1.0 / f.s[d] + f.m[d] * f.m[d] * ratio;
    }
    return mo;
}

// KL(q || p) between Normal-Gamma factors, summed over dimensions.
inline double ng_kl(const NormalGammaFactor& q, const NormalGammaFactor& p) {
    if (q.dim() != p.dim()) throw std::domain_error("ng_kl: dimension mismatch");
    double kl = 0.0;
    for (size_t d = 0; d < q.dim(); ++d) {
        const double mq = q.m[d], sq = q.s[d], aq = q.a[d], bq = q.b[d];
        const double mp = p.m[d], sp = p.s[d], ap = p.a[d], bp = p.b[d];
        const double ratio = aq / bq;
        const double dm = mq - mp;
        kl += 0.5 * (sp * ratio * dm * dm + sp / sq - std::log(sp / sq) - 1.0);
        kl += ap * std::log(bq / bp) - (std::lgamma(aq) - std::lgamma(ap)) +
              (aq - ap) * digamma(aq) - (bq - bp) * ratio;
    }
    return kl;
}

// E[log pi_k] under Dirichlet(c).
inline std::vector<double> dirichlet_elog_pi(const DirichletFactor& f) {
    double total = 0.0;
    for (double c : f.c) total += c;
    const double dig_total = digamma(total);
    std::vector<double> out(f.size());
    for (size_t k = 0; k < f.size(); ++k) out[k] = digamma(f.c[k]) - dig_total;
    return out;
}

inline double dirichlet_kl(const DirichletFactor& q, const DirichletFactor& p) {
    if (q.size() != p.size()) throw std::domain_error("dirichlet_kl: size mismatch");
    double cq = 0.0, cp = 0.0;
    for (double c : q.c) cq += c;
    for (double c : p.c) cp += c;
    double kl = std::lgamma(cq) - std::lgamma(cp);
    const double dig_cq = digamma(cq);
    for (size_t k = 0; k < q.size(); ++k) {
        kl += std::lgamma(p.c[k]) - std::lgamma(q.c[k]);
        kl += (q.c[k] - p.c[k]) * (digamma(q.c[k]) - dig_cq);
    }
    return kl;
}

}  // namespace fmx
