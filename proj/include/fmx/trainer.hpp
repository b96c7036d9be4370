// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "fmx/data.hpp"
#include "fmx/elbo.hpp"
#include "fmx/nets.hpp"
#include "fmx/prior.hpp"
#include "fmx/rng.hpp"

namespace fmx {

// Raised when an optimization step produces a non-finite objective.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Step-size schedule for the variational-factor updates.

struct Schedule {
    double kappa = 0.7;      // forgetting rate, in (1/2, 1]
    double tau0 = 2000.0;    // delay
    double rho_floor = 0.0;  // optional lower bound on the step size

    void validate() const {
        if (!(kappa > 0.5) || !(kappa <= 1.0))
            throw std::domain_error("Schedule: kappa must lie in (1/2, 1]");
        if (!(tau0 >= 0.0)) throw std::domain_error("Schedule: tau0 must be nonnegative");
        if (!(rho_floor >= 0.0) || rho_floor > 1.0)
            throw std::domain_error("Schedule: rho_floor must lie in [0, 1]");
    }
};

inline double rho(const Schedule& s, double tau) {
    s.validate();
    if (!(s.tau0 + tau >= 1.0))
        throw std::domain_error("rho: tau0 + tau must be >= 1");
    const double r = std::max(s.rho_floor, std::pow(s.tau0 + tau, -s.kappa));
    return std::min(r, 1.0);
}

// ---------------------------------------------------------------------------
// Adam, descent convention: parameters move against the supplied gradient.

struct AdamState {
    std::vector<double> m, v;
    uint64_t t = 0;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    AdamState() = default;
    AdamState(size_t n, double lr_) : m(n, 0.0), v(n, 0.0), lr(lr_) {}
};

inline void adam_step(NetworkParams& p, const GradientBuffer& g, AdamState& st) {
    if (g.g.size() != p.w.size() || st.m.size() != p.w.size() || st.v.size() != p.w.size())
        throw std::domain_error("adam_step: shape mismatch");
    st.t += 1;
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
    for (size_t i = 0; i < p.w.size(); ++i) {
        st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * g.g[i];
        st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * g.g[i] * g.g[i];
        const double mhat = st.m[i] / bc1;
        const double vhat = st.v[i] / bc2;
        p.w[i] -= st.lr * mhat / (std::sqrt(vhat) + st.epsilon);
    }
}

// ---------------------------------------------------------------------------
// Configuration

// Latent/network architecture. Hidden lists are single-entry (one tanh
// layer) or empty (affine).
struct ModelSpec {
    int blocks = 0;
    int dim = 0;
    std::vector<int> k_list;        // components per block
    std::vector<int> enc_hidden;    // encoder hidden sizes
    std::vector<int> dec_hidden;    // decoder hidden sizes
    Likelihood likelihood = Likelihood::bernoulli;

    int zdim() const { return blocks * dim; }

    void validate() const {
        if (blocks < 1 || dim < 1) throw std::domain_error("ModelSpec: blocks and dim must be >= 1");
        if (k_list.size() != static_cast<size_t>(blocks))
            throw std::domain_error("ModelSpec: k_list must have one entry per block");
        for (int k : k_list)
            if (k < 1) throw std::domain_error("ModelSpec: component counts must be >= 1");
        if (enc_hidden.size() > 1 || dec_hidden.size() > 1)
            throw std::domain_error("ModelSpec: at most one hidden layer is supported");
        for (int h : enc_hidden)
            if (h < 1) throw std::domain_error("ModelSpec: hidden sizes must be >= 1");
        for (int h : dec_hidden)
            if (h < 1) throw std::domain_error("ModelSpec: hidden sizes must be >= 1");
    }

    NetworkShape encoder_shape(int input_dim) const {
        std::vector<int> s{input_dim};
        s.insert(s.end(), enc_hidden.begin(), enc_hidden.end());
        s.push_back(2 * zdim());
        return NetworkShape{std::move(s)};
    }
    NetworkShape decoder_shape(int input_dim) const {
        std::vector<int> s{zdim()};
        s.insert(s.end(), dec_hidden.begin(), dec_hidden.end());
        s.push_back(likelihood == Likelihood::gaussian ? 2 * input_dim : input_dim);
        return NetworkShape{std::move(s)};
    }
};

struct TrainConfig {
    uint64_t pretrain_iters = 0;
    uint64_t prior_init_iters = 0;
    uint64_t joint_iters = 0;
    uint32_t batch_size = 64;
    uint64_t seed = 0;
    double lr = 1e-4;
    bool pretrain_anneal = true;  // ramp the pretrain KL weight 0 -> 1
    Schedule schedule;
    SemiSupConfig semi;

    uint64_t total_iters() const { return pretrain_iters + prior_init_iters + joint_iters; }

    void validate(uint64_t n_total) const {
        if (batch_size < 1) throw std::domain_error("TrainConfig: batch size must be >= 1");
        if (static_cast<uint64_t>(batch_size) > n_total)
            throw std::domain_error("TrainConfig: batch size exceeds dataset size");
        if (!(lr > 0.0)) throw std::domain_error("TrainConfig: learning rate must be positive");
        schedule.validate();
        semi.validate();
    }
};

// ---------------------------------------------------------------------------
// Metrics

enum class Phase { pretrain, prior_init, joint };

inline const char* phase_name(Phase p) {
    switch (p) {
        case Phase::pretrain: return "pretrain";
        case Phase::prior_init: return "prior_init";
        case Phase::joint: return "joint";
    }
    return "?";
}

struct MetricsRow {
    uint64_t iter = 0;
    Phase phase = Phase::pretrain;
    double elbo = 0.0;
    double recon = 0.0;
    double kl_z = 0.0;
    double kl_r = 0.0;
    double kl_global = 0.0;
    double rho = 0.0;
    double semi_sup_loss = 0.0;
};

// Shortest round-trippable decimal form.
inline std::string format_double(double v) {
    char buf[40];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) throw std::runtime_error("format_double: conversion failed");
    return std::string(buf, ptr);
}

inline std::string metrics_header() {
    return "iter,phase,elbo,recon,kl_z,kl_r,kl_global,rho,semi_sup_loss";
}

inline std::string format_metrics_row(const MetricsRow& r) {
    std::string s = std::to_string(r.iter);
    s += ',';
    s += phase_name(r.phase);
    for (double v : {r.elbo, r.recon, r.kl_z, r.kl_r, r.kl_global, r.rho, r.semi_sup_loss}) {
        s += ',';
        s += format_double(v);
    }
    return s;
}

// ---------------------------------------------------------------------------
// Trainer: owns all mutable optimization state and advances it one
// iteration per step() call, through the pretrain, prior-init, and joint
// phases in order.

class Trainer {
  public:
    ModelSpec model;
    TrainConfig cfg;
    const Dataset* data = nullptr;
    const LabelSet* labels = nullptr;

    NetworkParams phi, theta;
    AdamState adam_enc, adam_dec;
    FactorialPriorState prior;
    CounterRng rng{0};
    uint64_t iter = 0;

    Trainer(ModelSpec m, TrainConfig c, const Dataset& ds, const LabelSet& ls)
        : model(std::move(m)), cfg(c), data(&ds), labels(&ls), rng(c.seed, /*stream=*/1) {
        model.validate();
        cfg.validate(ds.n());
        if (ds.n() == 0) throw std::domain_error("Trainer: empty dataset");
        ls.validate(ds.n(), model.k_list);
        if (model.likelihood == Likelihood::bernoulli && !ds.binary)
            throw std::domain_error("Trainer: bernoulli likelihood requires binary data");
        const int p = static_cast<int>(ds.row_len());

        phi = NetworkParams::init(model.encoder_shape(p), rng);
        theta = NetworkParams::init(model.decoder_shape(p), rng);
        adam_enc = AdamState(phi.w.size(), cfg.lr);
        adam_dec = AdamState(theta.w.size(), cfg.lr);
        prior = initial_prior(model, rng);
    }

    // Hyperprior plus a small seed-controlled perturbation of the component
    // means to break symmetry.
    static FactorialPriorState initial_prior(const ModelSpec& m, CounterRng& rng) {
        FactorialPriorState st;
        st.blocks = m.blocks;
        st.dim = m.dim;
        st.hyper = NormalGammaFactor::constant(m.dim, 0.0, 1.0, 0.01, 0.01);
        st.c0 = 1.0;
        st.comp.resize(m.blocks);
        st.mix.reserve(m.blocks);
        for (int i = 0; i < m.blocks; ++i) {
            const int k = m.k_list[static_cast<size_t>(i)];
            for (int c = 0; c < k; ++c) {
                NormalGammaFactor f = st.hyper;
                for (double& mu : f.m) mu += 0.5 * rng.normal();
                st.comp[i].push_back(std::move(f));
            }
            st.mix.emplace_back(std::vector<double>(static_cast<size_t>(k), st.c0));
        }
        return st;
    }

    bool finished() const { return iter >= cfg.total_iters(); }
    Phase phase() const { return phase_at(iter); }

    Phase phase_at(uint64_t it) const {
        if (it < cfg.pretrain_iters) return Phase::pretrain;
        if (it < cfg.pretrain_iters + cfg.prior_init_iters) return Phase::prior_init;
        return Phase::joint;
    }

    MetricsRow step() {
        if (finished()) throw std::logic_error("Trainer::step: all phases complete");
        MetricsRow row;
        switch (phase()) {
            case Phase::pretrain: row = pretrain_step(); break;
            case Phase::prior_init: row = prior_init_step(); break;
            case Phase::joint: row = joint_step(); break;
        }
        row.iter = iter;
        row.phase = phase();
        ++iter;
        for (double v : {row.elbo, row.recon, row.kl_z, row.kl_r, row.kl_global})
            if (!std::isfinite(v))
                throw NumericError("non-finite objective at iteration " + std::to_string(row.iter));
        return row;
    }

  private:
    std::vector<std::vector<double>> draw_batch() {
        std::vector<std::vector<double>> xs(cfg.batch_size);
        batch_idx_.resize(cfg.batch_size);
        for (uint32_t j = 0; j < cfg.batch_size; ++j) {
            batch_idx_[j] = rng.below(data->n());
            xs[j] = data->x[batch_idx_[j]];
        }
        return xs;
    }

    std::vector<std::vector<double>> draw_eps() {
        const size_t zdim = static_cast<size_t>(model.zdim());
        std::vector<std::vector<double>> eps(cfg.batch_size, std::vector<double>(zdim));
        for (auto& row : eps)
            for (double& e : row) e = rng.normal();
        return eps;
    }

    std::vector<DatumLabels> batch_labels() const {
        std::vector<DatumLabels> out(cfg.batch_size);
        for (uint32_t j = 0; j < cfg.batch_size; ++j)
            out[j] = labels->view(batch_idx_[j], model.blocks);
        return out;
    }

    MetricsRow pretrain_step() {
        const auto xs = draw_batch();
        const auto eps = draw_eps();
        double w = 1.0;
        if (cfg.pretrain_anneal)
            w = cfg.pretrain_iters > 1
                    ? static_cast<double>(iter) / static_cast<double>(cfg.pretrain_iters - 1)
                    : 1.0;
        PretrainResult res =
            pretrain_elbo(xs, phi, theta, model.likelihood, data->n(), w, eps);
        descend(phi, res.enc_grad, adam_enc);
        descend(theta, res.dec_grad, adam_dec);
        MetricsRow row;
        row.elbo = res.objective;
        row.recon = res.recon;
        row.kl_z = res.kl;
        return row;
    }

    MetricsRow prior_init_step() {
        const auto xs = draw_batch();
        const auto lbl = batch_labels();
        std::vector<EncoderOutput> encs(xs.size());
        std::vector<Responsibilities> resps(xs.size());
        for (size_t j = 0; j < xs.size(); ++j) {
            encs[j] = encode(xs[j], phi);
            resps[j] = responsibilities(encs[j], prior);
            clamp_resp(resps[j], lbl[j]);
        }
        const double tau = static_cast<double>(iter - cfg.pretrain_iters);
        const double r = rho(cfg.schedule, tau);
        prior = natural_step(prior, encs, resps, data->n(), r);

        // No reconstruction term is evaluated in this phase; the bound column
        // reports the (negated) divergence terms only.
        const double scale = static_cast<double>(data->n()) / static_cast<double>(xs.size());
        MetricsRow row;
        row.rho = r;
        for (size_t j = 0; j < xs.size(); ++j)
            for (int i = 0; i < prior.blocks; ++i) {
                row.kl_z += kl_z(encs[j], resps[j], prior, i);
                row.kl_r += kl_r(resps[j], prior, i);
            }
        row.kl_z *= scale;
        row.kl_r *= scale;
        const auto [kl_ng, kl_dir] = global_kls(prior);
        row.kl_global = kl_ng + kl_dir;
        row.elbo = -cfg.semi.beta_kl * row.kl_z - row.kl_r - row.kl_global;
        return row;
    }

    MetricsRow joint_step() {
        const auto xs = draw_batch();
        const auto lbl = batch_labels();
        const auto eps = draw_eps();
        const double tau = static_cast<double>(iter - cfg.pretrain_iters - cfg.prior_init_iters);
        const double r = rho(cfg.schedule, tau);

        ElboConfig ecfg;
        ecfg.likelihood = model.likelihood;
        ecfg.n_total = data->n();
        ecfg.semi = cfg.semi;

        BatchResult res = train_elbo(xs, lbl, phi, theta, prior, ecfg, eps);
        descend(phi, res.enc_grad, adam_enc);
        descend(theta, res.dec_grad, adam_dec);

        // Re-encode with the updated encoder; the factor update sees the new
        // local optimum of the responsibilities.
        std::vector<EncoderOutput> encs(xs.size());
        std::vector<Responsibilities> resps(xs.size());
        for (size_t j = 0; j < xs.size(); ++j) {
            encs[j] = encode(xs[j], phi);
            resps[j] = responsibilities(encs[j], prior);
            clamp_resp(resps[j], lbl[j]);
        }

        std::vector<int> affected;
        if (cfg.semi.delta > 0.0) affected = labels->labeled_blocks();
        FactorialPriorState next = natural_step(prior, encs, resps, data->n(), r);
        if (!affected.empty()) {
            const FactorGrads fg = factor_mean_grads(encs, resps, lbl, prior, ecfg);
            for (int i : affected) first_order_block(next, i, fg);
        }
        prior = std::move(next);

        MetricsRow row;
        row.elbo = res.breakdown.total;
        row.recon = res.breakdown.recon;
        row.kl_z = res.breakdown.kl_z;
        row.kl_r = res.breakdown.kl_r;
        row.kl_global = res.breakdown.kl_global_ng + res.breakdown.kl_global_dir;
        row.rho = r;
        row.semi_sup_loss = -res.semi_sup;
        return row;
    }

    // Plain gradient ascent in mean parameters for one block, with the
    // positive parameters (s, a, b, pseudo-counts) updated in log space.
    // Each per-coordinate step is capped at 1 (one unit of location, or one
    // e-fold of a positive parameter): the label-clamp gradients scale with
    // delta * N / |B| and would otherwise overflow the multiplicative update.
    // After the step, the confidence parameters are projected back into the
    // set a full-data conjugate posterior could reach (counts between the
    // hyperprior's and the hyperprior's plus N). The blend path stays inside
    // that set by construction; without the projection the pseudo-count
    // gradient, whose restoring force does not grow with c, ratchets one
    // e-fold per step until lgamma cancellation poisons the bound.
    void first_order_block(FactorialPriorState& next, int i, const FactorGrads& fg) {
        const double lr = cfg.lr;
        const double n_total = static_cast<double>(data->n());
        const size_t bi = static_cast<size_t>(i);
        auto capped = [](double step) { return std::clamp(step, -1.0, 1.0); };
        for (int k = 0; k < prior.k(i); ++k) {
            const NormalGammaFactor& f = prior.comp[bi][static_cast<size_t>(k)];
            std::vector<double> m(f.m), s(f.s), a(f.a), b(f.b);
            for (int d = 0; d < prior.dim; ++d) {
                const size_t di = static_cast<size_t>(d);
                m[di] += capped(lr * fg.dm[bi][static_cast<size_t>(k)][di]);
                s[di] *= std::exp(capped(lr * s[di] * fg.ds[bi][static_cast<size_t>(k)][di]));
                a[di] *= std::exp(capped(lr * a[di] * fg.da[bi][static_cast<size_t>(k)][di]));
                b[di] *= std::exp(capped(lr * b[di] * fg.db[bi][static_cast<size_t>(k)][di]));
                s[di] = std::clamp(s[di], prior.hyper.s[di], prior.hyper.s[di] + n_total);
                a[di] = std::clamp(a[di], prior.hyper.a[di], prior.hyper.a[di] + 0.5 * n_total);
                b[di] = std::max(b[di], prior.hyper.b[di]);
            }
            next.comp[bi][static_cast<size_t>(k)] = NormalGammaFactor(m, s, a, b);
        }
        std::vector<double> c(prior.mix[bi].c);
        for (size_t k = 0; k < c.size(); ++k) {
            c[k] *= std::exp(capped(lr * c[k] * fg.dc[bi][k]));
            c[k] = std::clamp(c[k], prior.c0, prior.c0 + n_total);
        }
        next.mix[bi] = DirichletFactor(std::move(c));
    }

    // The elbo gradients point uphill on the objective; Adam descends.
    static void descend(NetworkParams& p, GradientBuffer& g, AdamState& st) {
        for (double& v : g.g) v = -v;
        adam_step(p, g, st);
    }

    std::vector<uint64_t> batch_idx_;
};

}  // namespace fmx
