// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fmx/expfam.hpp"
#include "fmx/rng.hpp"
#include "fmx/special.hpp"

namespace fmx {

// Amortized posterior for one datum: diagonal Gaussian over the full latent
// vector, laid out block-major (entry for block i, dim d sits at i*dim + d).
// log_var is stored unconstrained; consumers clamp to [-30, 30] before exp.
struct EncoderOutput {
    std::vector<double> mu, log_var;
};

inline double clamp_log_var(double lv) {
    if (lv > 30.0) return 30.0;
    if (lv < -30.0) return -30.0;
    return lv;
}

// Per-block categorical posteriors over component assignments.
struct Responsibilities {
    std::vector<std::vector<double>> gamma;  // [block][component]
};

struct LatentCode {
    std::vector<int> k;  // one component index per block
};

// Mixture prior over a blocked latent space: each block carries its own
// Gaussian mixture whose component parameters and mixing weights are
// themselves uncertain (Normal-Gamma and Dirichlet posteriors).
struct FactorialPriorState {
    int blocks = 0;  // number of latent blocks
    int dim = 0;     // dimensions per block
    NormalGammaFactor hyper;  // per-dimension prior on component (mean, precision)
    double c0 = 1.0;          // prior pseudo-count for mixing weights
    std::vector<std::vector<NormalGammaFactor>> comp;  // [block][component]
    std::vector<DirichletFactor> mix;                  // [block]

    int k(int i) const { return static_cast<int>(mix[i].c.size()); }

    void validate() const {
        if (blocks <= 0 || dim <= 0)
            throw std::domain_error("FactorialPriorState: blocks and dim must be positive");
        if (static_cast<int>(comp.size()) != blocks || static_cast<int>(mix.size()) != blocks)
            throw std::domain_error("FactorialPriorState: per-block containers sized wrong");
        if (static_cast<int>(hyper.dim()) != dim)
            throw std::domain_error("FactorialPriorState: hyperprior dimension mismatch");
        if (!(c0 > 0.0)) throw std::domain_error("FactorialPriorState: c0 must be positive");
        for (int i = 0; i < blocks; ++i) {
            if (comp[i].size() != mix[i].c.size())
                throw std::domain_error("FactorialPriorState: block " + std::to_string(i) +
                                        " component count mismatch");
            for (const auto& f : comp[i])
                if (static_cast<int>(f.dim()) != dim)
                    throw std::domain_error("FactorialPriorState: block " + std::to_string(i) +
                                            " factor dimension mismatch");
        }
    }
};

inline void check_encoding(const EncoderOutput& enc, const FactorialPriorState& st) {
    const size_t want = static_cast<size_t>(st.blocks) * st.dim;
    if (enc.mu.size() != want || enc.log_var.size() != want)
        throw std::domain_error("EncoderOutput: expected length " + std::to_string(want));
}

// Expected log density of block i's encoding under component k, with the
// component's (mean, precision) integrated over its posterior:
//   1/2 sum_d [ E log alpha - log 2pi - 1/s - E alpha ((mu - m)^2 + var) ].
inline double expected_log_gauss(const EncoderOutput& enc, int i, int k,
                                 const FactorialPriorState& st) {
    const NormalGammaFactor& f = st.comp[i][k];
    const int off = i * st.dim;
    double acc = 0.0;
    for (int d = 0; d < st.dim; ++d) {
        const double mu = enc.mu[off + d];
        const double var = std::exp(clamp_log_var(enc.log_var[off + d]));
        const double ratio = f.a[d] / f.b[d];
        const double dm = mu - f.m[d];
        acc += digamma(f.a[d]) - std::log(f.b[d]) - log_2pi - 1.0 / f.s[d] -
               ratio * (dm * dm + var);
    }
    return 0.5 * acc;
}

// Unnormalized assignment log-scores for block i: expected_log_gauss plus
// the expected log mixing weight. Softmaxing these gives both the
// responsibilities and the differentiable cluster-allocation classifier.
inline std::vector<double> assignment_logits(const EncoderOutput& enc,
                                             const FactorialPriorState& st, int i) {
    const int K = st.k(i);
    const std::vector<double> elog_pi = dirichlet_elog_pi(st.mix[i]);
    std::vector<double> logits(K);
    for (int k = 0; k < K; ++k) logits[k] = expected_log_gauss(enc, i, k, st) + elog_pi[k];
    return logits;
}

// In-place softmax with max subtraction.
inline void softmax_inplace(std::vector<double>& v) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double x : v)
        if (x > mx) mx = x;
    double total = 0.0;
    for (double& x : v) {
        x = std::exp(x - mx);
        total += x;
    }
    for (double& x : v) x /= total;
}

// Closed-form assignment posteriors: per block, softmax over components of
// expected_log_gauss + E[log pi_k].
inline Responsibilities responsibilities(const EncoderOutput& enc,
                                         const FactorialPriorState& st) {
    check_encoding(enc, st);
    Responsibilities r;
    r.gamma.resize(st.blocks);
    for (int i = 0; i < st.blocks; ++i) {
        r.gamma[i] = assignment_logits(enc, st, i);
        softmax_inplace(r.gamma[i]);
    }
    return r;
}

inline void check_resp(const Responsibilities& r, const FactorialPriorState& st) {
    if (static_cast<int>(r.gamma.size()) != st.blocks)
        throw std::domain_error("Responsibilities: block count mismatch");
    for (int i = 0; i < st.blocks; ++i)
        if (static_cast<int>(r.gamma[i].size()) != st.k(i))
            throw std::domain_error("Responsibilities: block " + std::to_string(i) +
                                    " has wrong component count");
}

// KL between the encoding of block i and its mixture prior, averaged over
// assignments gamma and over component-parameter posteriors.
inline double kl_z(const EncoderOutput& enc, const Responsibilities& resp,
                   const FactorialPriorState& st, int i) {
    check_encoding(enc, st);
    check_resp(resp, st);
    const int off = i * st.dim;
    double acc = 0.0;
    for (int k = 0; k < st.k(i); ++k) {
        const double g = resp.gamma[i][k];
        if (g == 0.0) continue;
        const NormalGammaFactor& f = st.comp[i][k];
        double inner = 0.0;
        for (int d = 0; d < st.dim; ++d) {
            const double lv = clamp_log_var(enc.log_var[off + d]);
            const double var = std::exp(lv);
            const double ratio = f.a[d] / f.b[d];
            const double dm = enc.mu[off + d] - f.m[d];
            inner += lv + digamma(f.a[d]) - std::log(f.b[d]) -
                     ratio * (var + dm * dm) - 1.0 / f.s[d] + 1.0;
        }
        acc += g * inner;
    }
    return -0.5 * acc;
}

// KL between assignment posterior gamma_i and its mixing-weight prior,
// with the weights integrated over their Dirichlet posterior.
inline double kl_r(const Responsibilities& resp, const FactorialPriorState& st, int i) {
    check_resp(resp, st);
    const std::vector<double> elog_pi = dirichlet_elog_pi(st.mix[i]);
    double acc = 0.0;
    for (int k = 0; k < st.k(i); ++k) {
        const double g = resp.gamma[i][k];
        if (g == 0.0) continue;  // 0 log 0 = 0
        acc += g * (std::log(g) - elog_pi[k]);
    }
    return acc;
}

// Batch-optimal posterior blended into the current one along the natural
// parameterization: new = (1 - rho) * current + rho * batch_optimum, where the
// optimum uses per-component weighted sums scaled up to the full dataset size.
inline FactorialPriorState natural_step(const FactorialPriorState& st,
                                        std::span<const EncoderOutput> encs,
                                        std::span<const Responsibilities> resps,
                                        uint64_t n_total, double rho) {
    st.validate();
    if (encs.empty() || encs.size() != resps.size())
        throw std::domain_error("natural_step: batch views must be non-empty and aligned");
    if (!(rho > 0.0 && rho <= 1.0))
        throw std::domain_error("natural_step: rho must lie in (0, 1]");
    if (n_total < encs.size())
        throw std::domain_error("natural_step: dataset size smaller than batch");
    for (const auto& e : encs) check_encoding(e, st);
    for (const auto& r : resps) check_resp(r, st);

    const double scale = static_cast<double>(n_total) / static_cast<double>(encs.size());
    FactorialPriorState out = st;

    for (int i = 0; i < st.blocks; ++i) {
        const int off = i * st.dim;
        std::vector<double> c_new(st.k(i));
        for (int k = 0; k < st.k(i); ++k) {
            double g_sum = 0.0;
            std::vector<double> s_mu(st.dim, 0.0), s_sq(st.dim, 0.0);
            for (size_t n = 0; n < encs.size(); ++n) {
                const double g = resps[n].gamma[i][k];
                g_sum += g;
                for (int d = 0; d < st.dim; ++d) {
                    const double mu = encs[n].mu[off + d];
                    const double var = std::exp(clamp_log_var(encs[n].log_var[off + d]));
                    s_mu[d] += g * mu;
                    s_sq[d] += g * (mu * mu + var);
                }
            }
            const NaturalNGParams cur = mean_to_natural(st.comp[i][k]);
            NaturalNGParams nat = cur;
            for (int d = 0; d < st.dim; ++d) {
                const double m0 = st.hyper.m[d], s0 = st.hyper.s[d];
                const double a0 = st.hyper.a[d], b0 = st.hyper.b[d];
                const double opt1 = (a0 - 0.5) + 0.5 * scale * g_sum;
                const double opt2 = -(b0 + 0.5 * s0 * m0 * m0) - 0.5 * scale * s_sq[d];
                const double opt3 = s0 * m0 + scale * s_mu[d];
                const double opt4 = -0.5 * (s0 + scale * g_sum);
                nat.l1[d] = (1.0 - rho) * cur.l1[d] + rho * opt1;
                nat.l2[d] = (1.0 - rho) * cur.l2[d] + rho * opt2;
                nat.l3[d] = (1.0 - rho) * cur.l3[d] + rho * opt3;
                nat.l4[d] = (1.0 - rho) * cur.l4[d] + rho * opt4;
            }
            out.comp[i][k] = natural_to_mean(nat);
            c_new[k] = (1.0 - rho) * st.mix[i].c[k] + rho * (st.c0 + scale * g_sum);
        }
        out.mix[i] = DirichletFactor(std::move(c_new));
    }
    return out;
}

// One latent code drawn from the mixing-weight posterior predictive.
inline LatentCode sample_code(const FactorialPriorState& st, CounterRng& rng) {
    LatentCode code;
    code.k.resize(st.blocks);
    for (int i = 0; i < st.blocks; ++i) {
        const std::vector<double> pi = rng.dirichlet(st.mix[i].c);
        code.k[i] = rng.categorical(pi);
    }
    return code;
}

// One block sample from the posterior predictive of component (i, k): draw the
// precision from its Gamma posterior, then a Gaussian whose variance carries
// the extra (s + 1)/s factor from mean uncertainty. Marginally a Student-t
// with location m, scale^2 = ((s + 1)/s)(b/a), and 2a degrees of freedom.
inline std::vector<double> sample_block(const FactorialPriorState& st, int i, int k,
                                        CounterRng& rng) {
    if (i < 0 || i >= st.blocks) throw std::domain_error("sample_block: block out of range");
    if (k < 0 || k >= st.k(i)) throw std::domain_error("sample_block: component out of range");
    const NormalGammaFactor& f = st.comp[i][k];
    std::vector<double> z(st.dim);
    for (int d = 0; d < st.dim; ++d) {
        const double alpha = rng.gamma(f.a[d], f.b[d]);
        const double sd = std::sqrt((f.s[d] + 1.0) / (f.s[d] * alpha));
        z[d] = f.m[d] + sd * rng.normal();
    }
    return z;
}

}  // namespace fmx
