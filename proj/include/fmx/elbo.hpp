// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "fmx/expfam.hpp"
#include "fmx/nets.hpp"
#include "fmx/parallel.hpp"
#include "fmx/prior.hpp"
#include "fmx/special.hpp"

namespace fmx {

enum class Likelihood { bernoulli, gaussian };

struct SemiSupConfig {
    double delta = 0.0;    // weight of the label cross-entropy term
    double beta_kl = 1.0;  // up-weighting of the encoding-vs-mixture KL term

    void validate() const {
        if (!(delta >= 0.0)) throw std::domain_error("SemiSupConfig: delta must be >= 0");
        if (!(beta_kl > 0.0)) throw std::domain_error("SemiSupConfig: beta_kl must be > 0");
    }
};

struct ElboConfig {
    Likelihood likelihood = Likelihood::bernoulli;
    uint64_t n_total = 0;  // dataset size the batch estimate is scaled to
    SemiSupConfig semi;
};

// Additive pieces of the batch objective. Per-datum terms carry the
// N/|B| batch scaling; the global KL terms appear once per batch (their 1/N
// per-datum split times N/|B| times |B| is exactly 1). The invariant
// total = recon - beta_kl*kl_z - kl_r - kl_global_ng - kl_global_dir
// holds by construction.
struct ElboBreakdown {
    double recon = 0.0;
    double kl_z = 0.0;
    double kl_r = 0.0;
    double kl_global_ng = 0.0;
    double kl_global_dir = 0.0;
    double beta_kl = 1.0;
    double total = 0.0;
};

// Per-datum clamp view: labels[i] = component index observed for block i,
// or -1 where the block is unlabeled.
using DatumLabels = std::vector<int>;

inline void clamp_resp(Responsibilities& r, const DatumLabels& labels) {
    for (size_t i = 0; i < labels.size() && i < r.gamma.size(); ++i) {
        if (labels[i] < 0) continue;
        const int k = labels[i];
        if (k >= static_cast<int>(r.gamma[i].size()))
            throw std::domain_error("label component out of range for block " + std::to_string(i));
        std::fill(r.gamma[i].begin(), r.gamma[i].end(), 0.0);
        r.gamma[i][k] = 1.0;
    }
}

// Sum of KL(component posterior || hyperprior) over all components plus
// KL(mixing posterior || symmetric prior) over all blocks.
inline std::pair<double, double> global_kls(const FactorialPriorState& st) {
    double kl_ng = 0.0, kl_dir = 0.0;
    for (int i = 0; i < st.blocks; ++i) {
        for (int k = 0; k < st.k(i); ++k) kl_ng += ng_kl(st.comp[i][k], st.hyper);
        kl_dir += dirichlet_kl(st.mix[i],
                               DirichletFactor(std::vector<double>(st.k(i), st.c0)));
    }
    return {kl_ng, kl_dir};
}

struct BatchResult {
    ElboBreakdown breakdown;
    double semi_sup = 0.0;   // delta-weighted label cross entropy (scaled)
    double objective = 0.0;  // breakdown.total + semi_sup
    GradientBuffer enc_grad, dec_grad;  // ascent direction on objective
    std::vector<Responsibilities> resp;       // per datum, clamped where labeled
    std::vector<EncoderOutput> enc;           // per datum
};

namespace detail {

struct DatumScratch {
    GradientBuffer enc_g, dec_g;
    double recon = 0.0, kl_z_sum = 0.0, kl_r_sum = 0.0, ce = 0.0;
};

// Adjoint contribution on (mu, log_var) from the analytic encoding-vs-mixture
// KL term: objective contains -beta*scale*kl_z.
inline void kl_z_enc_adjoint(const EncoderOutput& enc, const Responsibilities& resp,
                             const FactorialPriorState& st, double coef,
                             std::span<double> d_mu, std::span<double> d_lv) {
    for (int i = 0; i < st.blocks; ++i) {
        const int off = i * st.dim;
        for (int k = 0; k < st.k(i); ++k) {
            const double g = resp.gamma[i][k];
            if (g == 0.0) continue;
            const NormalGammaFactor& f = st.comp[i][k];
            for (int d = 0; d < st.dim; ++d) {
                const double ratio = f.a[d] / f.b[d];
                const double var = std::exp(clamp_log_var(enc.log_var[off + d]));
                const double dm = enc.mu[off + d] - f.m[d];
                // d kl_z / d mu = g * ratio * dm; d kl_z / d lv = -g/2 * (1 - ratio*var)
                d_mu[off + d] += -coef * g * ratio * dm;
                d_lv[off + d] += coef * 0.5 * g * (1.0 - ratio * var);
            }
        }
    }
}

// Adjoint on (mu, log_var) from the label cross-entropy of one labeled block:
// d objective / d logit_k = coef * (y_k - g_k), chained through the
// assignment logits' dependence on the encoding.
inline void label_ce_enc_adjoint(const EncoderOutput& enc, const FactorialPriorState& st,
                                 int i, int k_obs, double coef, std::span<double> d_mu,
                                 std::span<double> d_lv, double* ce_out) {
    std::vector<double> g = assignment_logits(enc, st, i);
    softmax_inplace(g);
    *ce_out += std::log(g[k_obs]);
    const int off = i * st.dim;
    for (int k = 0; k < st.k(i); ++k) {
        const double dl = coef * ((k == k_obs ? 1.0 : 0.0) - g[k]);
        if (dl == 0.0) continue;
        const NormalGammaFactor& f = st.comp[i][k];
        for (int d = 0; d < st.dim; ++d) {
            const double ratio = f.a[d] / f.b[d];
            const double var = std::exp(clamp_log_var(enc.log_var[off + d]));
            const double dm = enc.mu[off + d] - f.m[d];
            d_mu[off + d] += dl * (-ratio * dm);
            d_lv[off + d] += dl * (-0.5 * ratio * var);
        }
    }
}

inline void check_batch_shapes(std::span<const std::vector<double>> xs,
                               std::span<const DatumLabels> labels,
                               std::span<const std::vector<double>> eps, const NetworkParams& phi,
                               const NetworkParams& theta, const FactorialPriorState& st,
                               const ElboConfig& cfg) {
    if (xs.empty()) throw std::domain_error("train_elbo: empty batch");
    if (!labels.empty() && labels.size() != xs.size())
        throw std::domain_error("train_elbo: label view size mismatch");
    if (eps.size() != xs.size()) throw std::domain_error("train_elbo: eps draw count mismatch");
    if (cfg.n_total < xs.size())
        throw std::domain_error("train_elbo: n_total smaller than batch");
    cfg.semi.validate();

    // Validate every shape up front; worker threads must not throw.
    const size_t DI = static_cast<size_t>(st.blocks) * st.dim;
    const size_t P = xs[0].size();
    if (phi.shape.sizes.front() != static_cast<int>(P) ||
        phi.shape.sizes.back() != static_cast<int>(2 * DI))
        throw std::domain_error("train_elbo: encoder shape does not match data/latent sizes");
    const size_t dec_out = (cfg.likelihood == Likelihood::bernoulli) ? P : 2 * P;
    if (theta.shape.sizes.front() != static_cast<int>(DI) ||
        theta.shape.sizes.back() != static_cast<int>(dec_out))
        throw std::domain_error("train_elbo: decoder shape does not match latent/data sizes");
    for (size_t n = 0; n < xs.size(); ++n) {
        if (xs[n].size() != P) throw std::domain_error("train_elbo: ragged batch rows");
        if (eps[n].size() != DI) throw std::domain_error("train_elbo: eps length mismatch");
        if (cfg.likelihood == Likelihood::bernoulli)
            for (double v : xs[n])
                if (v != 0.0 && v != 1.0)
                    throw std::domain_error("train_elbo: bernoulli data must be 0/1");
        if (!labels.empty()) {
            if (labels[n].size() > static_cast<size_t>(st.blocks))
                throw std::domain_error("train_elbo: label view has too many blocks");
            for (size_t i = 0; i < labels[n].size(); ++i)
                if (labels[n][i] >= st.k(static_cast<int>(i)))
                    throw std::domain_error("train_elbo: label component out of range");
        }
    }
}

}  // namespace detail

// Mini-batch training objective and its network adjoints. gamma is computed
// per datum from the current encodings (clamped where labeled) unless
// fixed_resp pins it, which gradient checks use to hold gamma constant.
inline BatchResult train_elbo(std::span<const std::vector<double>> xs,
                              std::span<const DatumLabels> labels, const NetworkParams& phi,
                              const NetworkParams& theta, const FactorialPriorState& st,
                              const ElboConfig& cfg, std::span<const std::vector<double>> eps,
                              const std::vector<Responsibilities>* fixed_resp = nullptr) {
    detail::check_batch_shapes(xs, labels, eps, phi, theta, st, cfg);
    st.validate();
    const size_t B = xs.size();
    const size_t DI = static_cast<size_t>(st.blocks) * st.dim;
    const double scale = static_cast<double>(cfg.n_total) / static_cast<double>(B);
    const double beta = cfg.semi.beta_kl;
    const double delta = cfg.semi.delta;

    BatchResult out;
    out.resp.resize(B);
    out.enc.resize(B);
    out.enc_grad = GradientBuffer(phi);
    out.dec_grad = GradientBuffer(theta);

    std::vector<detail::DatumScratch> scratch(B);

    parallel_for(B, [&](size_t n) {
        detail::DatumScratch& sc = scratch[n];
        sc.enc_g = GradientBuffer(phi);
        sc.dec_g = GradientBuffer(theta);

        ForwardCache cache_e;
        EncoderOutput enc = encode(xs[n], phi, &cache_e);

        Responsibilities resp;
        if (fixed_resp) {
            resp = (*fixed_resp)[n];
        } else {
            resp = responsibilities(enc, st);
            if (!labels.empty()) clamp_resp(resp, labels[n]);
        }

        const std::vector<double> z = reparam_sample(enc, eps[n]);

        // Reconstruction term and decoder adjoints.
        ForwardCache cache_d;
        std::vector<double> d_out;
        std::vector<double> az;  // adjoint on z
        if (cfg.likelihood == Likelihood::bernoulli) {
            const std::vector<double> logits = decode_bernoulli(z, theta, &cache_d);
            sc.recon = log_lik_bernoulli(xs[n], logits);
            d_out.resize(logits.size());
            log_lik_bernoulli_adjoint(xs[n], logits, d_out);
        } else {
            const GaussianDecode dec = decode_gaussian(z, theta, &cache_d);
            sc.recon = log_lik_gaussian(xs[n], dec.mean, dec.std);
            d_out.resize(2 * dec.mean.size());
            log_lik_gaussian_adjoint(xs[n], dec, d_out);
        }
        for (double& v : d_out) v *= scale;
        az = backward(theta, cache_d, d_out, sc.dec_g);

        // Encoder adjoint: reconstruction through the reparameterized sample,
        // plus the analytic KL and label terms.
        std::vector<double> d_mu(DI, 0.0), d_lv(DI, 0.0);
        for (size_t d = 0; d < DI; ++d) {
            const double lv = clamp_log_var(enc.log_var[d]);
            d_mu[d] = az[d];
            d_lv[d] = az[d] * eps[n][d] * 0.5 * std::exp(0.5 * lv);
        }
        detail::kl_z_enc_adjoint(enc, resp, st, beta * scale, d_mu, d_lv);

        for (int i = 0; i < st.blocks; ++i) {
            sc.kl_z_sum += kl_z(enc, resp, st, i);
            sc.kl_r_sum += kl_r(resp, st, i);
        }
        if (delta > 0.0 && !labels.empty()) {
            for (size_t i = 0; i < labels[n].size(); ++i)
                if (labels[n][i] >= 0)
                    detail::label_ce_enc_adjoint(enc, st, static_cast<int>(i), labels[n][i],
                                                 delta * scale, d_mu, d_lv, &sc.ce);
        }

        // Assemble the raw-output adjoint; log_var gradients vanish where the
        // clamp saturates.
        std::vector<double> d_raw(2 * DI);
        for (size_t d = 0; d < DI; ++d) {
            d_raw[d] = d_mu[d];
            const double raw = enc.log_var[d];
            d_raw[DI + d] = (raw > -30.0 && raw < 30.0) ? d_lv[d] : 0.0;
        }
        backward(phi, cache_e, d_raw, sc.enc_g);

        out.enc[n] = std::move(enc);
        out.resp[n] = std::move(resp);
    });

    double recon = 0.0, klz = 0.0, klr = 0.0, ce = 0.0;
    for (size_t n = 0; n < B; ++n) {
        recon += scratch[n].recon;
        klz += scratch[n].kl_z_sum;
        klr += scratch[n].kl_r_sum;
        ce += scratch[n].ce;
        out.enc_grad.add(scratch[n].enc_g);
        out.dec_grad.add(scratch[n].dec_g);
    }

    const auto [kl_ng, kl_dir] = global_kls(st);
    ElboBreakdown& bd = out.breakdown;
    bd.recon = scale * recon;
    bd.kl_z = scale * klz;
    bd.kl_r = scale * klr;
    bd.kl_global_ng = kl_ng;
    bd.kl_global_dir = kl_dir;
    bd.beta_kl = beta;
    bd.total = bd.recon - beta * bd.kl_z - bd.kl_r - kl_ng - kl_dir;
    out.semi_sup = delta * scale * ce;
    out.objective = bd.total + out.semi_sup;
    return out;
}

// Scalar objective with networks held fixed: all terms of the batch
// objective that depend on the prior state (per-datum KLs, label cross
// entropy, global KLs). Used for coordinate-ascent checks and as the
// finite-difference target for the factor gradients below.
inline double lambda_objective(std::span<const EncoderOutput> encs,
                               std::span<const Responsibilities> resps,
                               std::span<const DatumLabels> labels,
                               const FactorialPriorState& st, const ElboConfig& cfg) {
    if (encs.empty() || encs.size() != resps.size())
        throw std::domain_error("lambda_objective: batch views misaligned");
    const double scale = static_cast<double>(cfg.n_total) / static_cast<double>(encs.size());
    double acc = 0.0;
    for (size_t n = 0; n < encs.size(); ++n) {
        for (int i = 0; i < st.blocks; ++i) {
            acc += -cfg.semi.beta_kl * kl_z(encs[n], resps[n], st, i);
            acc += -kl_r(resps[n], st, i);
        }
        if (cfg.semi.delta > 0.0 && !labels.empty()) {
            for (size_t i = 0; i < labels[n].size(); ++i) {
                if (labels[n][i] < 0) continue;
                std::vector<double> g = assignment_logits(encs[n], st, static_cast<int>(i));
                softmax_inplace(g);
                acc += cfg.semi.delta * std::log(g[labels[n][i]]);
            }
        }
    }
    const auto [kl_ng, kl_dir] = global_kls(st);
    return scale * acc - kl_ng - kl_dir;
}

// Mean-parameter gradients of lambda_objective for every factor.
struct FactorGrads {
    // d objective / d {m, s, a, b} per [block][component][dim]
    std::vector<std::vector<std::vector<double>>> dm, ds, da, db;
    // d objective / d pseudo-count per [block][component]
    std::vector<std::vector<double>> dc;
};

inline FactorGrads factor_mean_grads(std::span<const EncoderOutput> encs,
                                     std::span<const Responsibilities> resps,
                                     std::span<const DatumLabels> labels,
                                     const FactorialPriorState& st, const ElboConfig& cfg) {
    if (encs.empty() || encs.size() != resps.size())
        throw std::domain_error("factor_mean_grads: batch views misaligned");
    const double scale = static_cast<double>(cfg.n_total) / static_cast<double>(encs.size());
    const double beta = cfg.semi.beta_kl;

    FactorGrads fg;
    fg.dm.resize(st.blocks);
    fg.ds.resize(st.blocks);
    fg.da.resize(st.blocks);
    fg.db.resize(st.blocks);
    fg.dc.resize(st.blocks);
    for (int i = 0; i < st.blocks; ++i) {
        const int K = st.k(i);
        fg.dm[i].assign(K, std::vector<double>(st.dim, 0.0));
        fg.ds[i].assign(K, std::vector<double>(st.dim, 0.0));
        fg.da[i].assign(K, std::vector<double>(st.dim, 0.0));
        fg.db[i].assign(K, std::vector<double>(st.dim, 0.0));
        fg.dc[i].assign(K, 0.0);
    }

    for (size_t n = 0; n < encs.size(); ++n) {
        const EncoderOutput& enc = encs[n];
        for (int i = 0; i < st.blocks; ++i) {
            const int off = i * st.dim;
            const int K = st.k(i);
            double c_hat = 0.0;
            for (double c : st.mix[i].c) c_hat += c;
            const double tri_hat = trigamma(c_hat);

            // -beta * kl_z contributions.
            for (int k = 0; k < K; ++k) {
                const double g = resps[n].gamma[i][k];
                if (g != 0.0) {
                    const NormalGammaFactor& f = st.comp[i][k];
                    for (int d = 0; d < st.dim; ++d) {
                        const double var = std::exp(clamp_log_var(enc.log_var[off + d]));
                        const double dmv = enc.mu[off + d] - f.m[d];
                        const double q = var + dmv * dmv;
                        const double ratio = f.a[d] / f.b[d];
                        fg.dm[i][k][d] += scale * beta * g * ratio * dmv;
                        fg.ds[i][k][d] += scale * beta * g * 0.5 / (f.s[d] * f.s[d]);
                        fg.da[i][k][d] +=
                            scale * beta * g * 0.5 * (trigamma(f.a[d]) - q / f.b[d]);
                        fg.db[i][k][d] += scale * beta * g * 0.5 *
                                          (-1.0 / f.b[d] + f.a[d] * q / (f.b[d] * f.b[d]));
                    }
                }
                // -kl_r contribution to the pseudo-counts.
                fg.dc[i][k] +=
                    scale * (resps[n].gamma[i][k] * trigamma(st.mix[i].c[k]) - tri_hat);
            }

            // Label cross entropy: d/d logit_k = delta*(y_k - g_k).
            const bool labeled = cfg.semi.delta > 0.0 && !labels.empty() &&
                                 i < static_cast<int>(labels[n].size()) && labels[n][i] >= 0;
            if (labeled) {
                std::vector<double> g = assignment_logits(enc, st, i);
                softmax_inplace(g);
                const int k_obs = labels[n][i];
                for (int k = 0; k < K; ++k) {
                    const double dl =
                        scale * cfg.semi.delta * ((k == k_obs ? 1.0 : 0.0) - g[k]);
                    const NormalGammaFactor& f = st.comp[i][k];
                    for (int d = 0; d < st.dim; ++d) {
                        const double var = std::exp(clamp_log_var(enc.log_var[off + d]));
                        const double dmv = enc.mu[off + d] - f.m[d];
                        const double q = var + dmv * dmv;
                        const double ratio = f.a[d] / f.b[d];
                        fg.dm[i][k][d] += dl * ratio * dmv;
                        fg.ds[i][k][d] += dl * 0.5 / (f.s[d] * f.s[d]);
                        fg.da[i][k][d] += dl * 0.5 * (trigamma(f.a[d]) - q / f.b[d]);
                        fg.db[i][k][d] +=
                            dl * 0.5 * (-1.0 / f.b[d] + f.a[d] * q / (f.b[d] * f.b[d]));
                    }
                    // Sum_k dl_k = 0, so only the diagonal trigamma term remains.
                    fg.dc[i][k] += dl * trigamma(st.mix[i].c[k]);
                }
            }
        }
    }

    // Global KL terms (weight 1 per batch).
    for (int i = 0; i < st.blocks; ++i) {
        double c_hat = 0.0, c_diff = 0.0;
        for (double c : st.mix[i].c) {
            c_hat += c;
            c_diff += c - st.c0;
        }
        const double tri_hat = trigamma(c_hat);
        for (int k = 0; k < st.k(i); ++k) {
            const NormalGammaFactor& f = st.comp[i][k];
            for (int d = 0; d < st.dim; ++d) {
                const double m0 = st.hyper.m[d], s0 = st.hyper.s[d];
                const double a0 = st.hyper.a[d], b0 = st.hyper.b[d];
                const double dmv = f.m[d] - m0;
                const double ratio = f.a[d] / f.b[d];
                fg.dm[i][k][d] -= s0 * ratio * dmv;
                fg.ds[i][k][d] -= 0.5 * (1.0 / f.s[d] - s0 / (f.s[d] * f.s[d]));
                fg.da[i][k][d] -= 0.5 * s0 * dmv * dmv / f.b[d] +
                                  (f.a[d] - a0) * trigamma(f.a[d]) - (f.b[d] - b0) / f.b[d];
                fg.db[i][k][d] -= -0.5 * s0 * f.a[d] * dmv * dmv / (f.b[d] * f.b[d]) +
                                  a0 / f.b[d] + (f.b[d] - b0) * ratio / f.b[d] - ratio;
            }
            fg.dc[i][k] -= (st.mix[i].c[k] - st.c0) * trigamma(st.mix[i].c[k]) - tri_hat * c_diff;
        }
    }
    return fg;
}

// Per-datum predictive bound pieces: Monte-Carlo reconstruction minus the two
// KL penalties, with assignments maximized analytically first.
struct TestElboResult {
    double recon = 0.0, kl_z = 0.0, kl_r = 0.0, bound = 0.0;
};

inline TestElboResult test_elbo(std::span<const double> x, const NetworkParams& phi,
                                const NetworkParams& theta, const FactorialPriorState& st,
                                Likelihood lik, int n_samples, CounterRng& rng) {
    if (n_samples < 1) throw std::domain_error("test_elbo: n_samples must be >= 1");
    const EncoderOutput enc = encode(x, phi);
    const Responsibilities resp = responsibilities(enc, st);
    const size_t DI = enc.mu.size();

    double recon = 0.0;
    std::vector<double> eps(DI);
    for (int s = 0; s < n_samples; ++s) {
        for (size_t d = 0; d < DI; ++d) eps[d] = rng.normal();
        const std::vector<double> z = reparam_sample(enc, eps);
        if (lik == Likelihood::bernoulli) {
            recon += log_lik_bernoulli(x, decode_bernoulli(z, theta));
        } else {
            const GaussianDecode dec = decode_gaussian(z, theta);
            recon += log_lik_gaussian(x, dec.mean, dec.std);
        }
    }
    TestElboResult out;
    out.recon = recon / n_samples;
    for (int i = 0; i < st.blocks; ++i) {
        out.kl_z += kl_z(enc, resp, st, i);
        out.kl_r += kl_r(resp, st, i);
    }
    out.bound = out.recon - out.kl_z - out.kl_r;
    return out;
}

// Warm-up objective: reconstruction minus an annealed KL against a unit
// Gaussian prior. Returns ascent-direction gradients like train_elbo.
struct PretrainResult {
    double objective = 0.0, recon = 0.0, kl = 0.0;
    GradientBuffer enc_grad, dec_grad;
};

inline PretrainResult pretrain_elbo(std::span<const std::vector<double>> xs,
                                    const NetworkParams& phi, const NetworkParams& theta,
                                    Likelihood lik, uint64_t n_total, double anneal_weight,
                                    std::span<const std::vector<double>> eps) {
    if (xs.empty()) throw std::domain_error("pretrain_elbo: empty batch");
    if (eps.size() != xs.size()) throw std::domain_error("pretrain_elbo: eps count mismatch");
    const size_t B = xs.size();
    const double scale = static_cast<double>(n_total) / static_cast<double>(B);

    PretrainResult out;
    out.enc_grad = GradientBuffer(phi);
    out.dec_grad = GradientBuffer(theta);

    struct Slot {
        GradientBuffer enc_g, dec_g;
        double recon = 0.0, kl = 0.0;
    };
    std::vector<Slot> scratch(B);

    parallel_for(B, [&](size_t n) {
        Slot& sc = scratch[n];
        sc.enc_g = GradientBuffer(phi);
        sc.dec_g = GradientBuffer(theta);

        ForwardCache cache_e;
        const EncoderOutput enc = encode(xs[n], phi, &cache_e);
        const size_t DI = enc.mu.size();
        if (eps[n].size() != DI) throw std::domain_error("pretrain_elbo: eps length mismatch");
        const std::vector<double> z = reparam_sample(enc, eps[n]);

        ForwardCache cache_d;
        std::vector<double> d_out;
        if (lik == Likelihood::bernoulli) {
            const std::vector<double> logits = decode_bernoulli(z, theta, &cache_d);
            sc.recon = log_lik_bernoulli(xs[n], logits);
            d_out.resize(logits.size());
            log_lik_bernoulli_adjoint(xs[n], logits, d_out);
        } else {
            const GaussianDecode dec = decode_gaussian(z, theta, &cache_d);
            sc.recon = log_lik_gaussian(xs[n], dec.mean, dec.std);
            d_out.resize(2 * dec.mean.size());
            log_lik_gaussian_adjoint(xs[n], dec, d_out);
        }
        for (double& v : d_out) v *= scale;
        const std::vector<double> az = backward(theta, cache_d, d_out, sc.dec_g);

        std::vector<double> d_raw(2 * DI);
        for (size_t d = 0; d < DI; ++d) {
            const double lv = clamp_log_var(enc.log_var[d]);
            const double var = std::exp(lv);
            sc.kl += 0.5 * (enc.mu[d] * enc.mu[d] + var - lv - 1.0);
            double d_mu = az[d] - anneal_weight * scale * enc.mu[d];
            double d_lv = az[d] * eps[n][d] * 0.5 * std::exp(0.5 * lv) -
                          anneal_weight * scale * 0.5 * (var - 1.0);
            d_raw[d] = d_mu;
            const double raw = enc.log_var[d];
            d_raw[DI + d] = (raw > -30.0 && raw < 30.0) ? d_lv : 0.0;
        }
        backward(phi, cache_e, d_raw, sc.enc_g);
    });

    double recon = 0.0, kl = 0.0;
    for (size_t n = 0; n < B; ++n) {
        recon += scratch[n].recon;
        kl += scratch[n].kl;
        out.enc_grad.add(scratch[n].enc_g);
        out.dec_grad.add(scratch[n].dec_g);
    }
    out.recon = scale * recon;
    out.kl = scale * kl;
    out.objective = out.recon - anneal_weight * out.kl;
    return out;
}

}  // namespace fmx
