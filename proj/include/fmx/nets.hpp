// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fmx/prior.hpp"
#include "fmx/rng.hpp"
#include "fmx/special.hpp"

namespace fmx {

// Fully connected net: affine layers with tanh on all but the last layer.
// Parameters are flat, per layer: weight matrix row-major (out x in), then
// bias. Supported depths are affine (no hidden) and one hidden layer.
struct NetworkShape {
    std::vector<int> sizes;  // [input, hidden..., output]

    size_t layers() const { return sizes.size() - 1; }
    size_t param_count() const {
        size_t n = 0;
        for (size_t l = 0; l + 1 < sizes.size(); ++l)
            n += static_cast<size_t>(sizes[l + 1]) * sizes[l] + sizes[l + 1];
        return n;
    }
    bool operator==(const NetworkShape& o) const { return sizes == o.sizes; }
};

struct NetworkParams {
    NetworkShape shape;
    std::vector<double> w;

    NetworkParams() = default;
    explicit NetworkParams(NetworkShape sh) : shape(std::move(sh)) {
        if (shape.sizes.size() < 2) throw std::domain_error("NetworkParams: need >= 2 layer sizes");
        for (int s : shape.sizes)
            if (s <= 0) throw std::domain_error("NetworkParams: layer sizes must be positive");
        w.assign(shape.param_count(), 0.0);
    }

    // Weights uniform in +-1/sqrt(fan_in), biases zero.
    static NetworkParams init(NetworkShape sh, CounterRng& rng) {
        NetworkParams p(std::move(sh));
        size_t pos = 0;
        for (size_t l = 0; l + 1 < p.shape.sizes.size(); ++l) {
            const int in = p.shape.sizes[l], out = p.shape.sizes[l + 1];
            const double bound = 1.0 / std::sqrt(static_cast<double>(in));
            for (int j = 0; j < out * in; ++j) p.w[pos++] = bound * (2.0 * rng.u01() - 1.0);
            pos += out;  // biases stay zero
        }
        return p;
    }
};

struct GradientBuffer {
    std::vector<double> g;

    GradientBuffer() = default;
    explicit GradientBuffer(const NetworkParams& p) : g(p.w.size(), 0.0) {}
    void zero() { std::fill(g.begin(), g.end(), 0.0); }
    void add(const GradientBuffer& o) {
        if (o.g.size() != g.size()) throw std::domain_error("GradientBuffer: size mismatch");
        for (size_t i = 0; i < g.size(); ++i) g[i] += o.g[i];
    }
};

// Post-activation values per layer; act[0] is the input.
struct ForwardCache {
    std::vector<std::vector<double>> act;
};

inline std::vector<double> forward(const NetworkParams& p, std::span<const double> x,
                                   ForwardCache* cache = nullptr) {
    if (static_cast<int>(x.size()) != p.shape.sizes[0])
        throw std::domain_error("forward: input length " + std::to_string(x.size()) +
                                ", network expects " + std::to_string(p.shape.sizes[0]));
    std::vector<double> cur(x.begin(), x.end());
    if (cache) {
        cache->act.clear();
        cache->act.push_back(cur);
    }
    size_t pos = 0;
    for (size_t l = 0; l + 1 < p.shape.sizes.size(); ++l) {
        const int in = p.shape.sizes[l], out = p.shape.sizes[l + 1];
        const bool last = (l + 2 == p.shape.sizes.size());
        std::vector<double> next(out);
        const double* W = p.w.data() + pos;
        const double* b = p.w.data() + pos + static_cast<size_t>(out) * in;
        for (int j = 0; j < out; ++j) {
            double acc = b[j];
            const double* row = W + static_cast<size_t>(j) * in;
            for (int i = 0; i < in; ++i) acc += row[i] * cur[i];
            next[j] = last ? acc : std::tanh(acc);
        }
        pos += static_cast<size_t>(out) * in + out;
        cur = std::move(next);
        if (cache) cache->act.push_back(cur);
    }
    return cur;
}

// Reverse pass: accumulates parameter gradients into gb and returns the
// adjoint with respect to the network input.
inline std::vector<double> backward(const NetworkParams& p, const ForwardCache& cache,
                                    std::span<const double> out_adjoint, GradientBuffer& gb) {
    const size_t L = p.shape.layers();
    if (cache.act.size() != L + 1)
        throw std::domain_error("backward: forward cache missing or stale");
    if (gb.g.size() != p.w.size()) throw std::domain_error("backward: gradient buffer mismatch");
    if (static_cast<int>(out_adjoint.size()) != p.shape.sizes[L])
        throw std::domain_error("backward: output adjoint length mismatch");

    std::vector<double> delta(out_adjoint.begin(), out_adjoint.end());
    // Parameter offsets of each layer.
    std::vector<size_t> offs(L);
    size_t pos = 0;
    for (size_t l = 0; l < L; ++l) {
        offs[l] = pos;
        pos += static_cast<size_t>(p.shape.sizes[l + 1]) * p.shape.sizes[l] + p.shape.sizes[l + 1];
    }
    for (size_t l = L; l-- > 0;) {
        const int in = p.shape.sizes[l], out = p.shape.sizes[l + 1];
        const bool last = (l + 1 == L);
        const std::vector<double>& x = cache.act[l];
        const std::vector<double>& y = cache.act[l + 1];
        if (!last)
            for (int j = 0; j < out; ++j) delta[j] *= 1.0 - y[j] * y[j];
        double* gW = gb.g.data() + offs[l];
        double* gbias = gW + static_cast<size_t>(out) * in;
        const double* W = p.w.data() + offs[l];
        std::vector<double> prev(in, 0.0);
        for (int j = 0; j < out; ++j) {
            const double dj = delta[j];
            double* grow = gW + static_cast<size_t>(j) * in;
            const double* wrow = W + static_cast<size_t>(j) * in;
            for (int i = 0; i < in; ++i) {
                grow[i] += dj * x[i];
                prev[i] += dj * wrow[i];
            }
            gbias[j] += dj;
        }
        delta = std::move(prev);
    }
    return delta;
}

// Encoder wrapper: network emits 2*D*I outputs, first half mu, second half
// log_var (raw, unconstrained).
inline EncoderOutput encode(std::span<const double> x, const NetworkParams& phi,
                            ForwardCache* cache = nullptr) {
    std::vector<double> out = forward(phi, x, cache);
    if (out.size() % 2 != 0) throw std::domain_error("encode: output size must be even");
    const size_t half = out.size() / 2;
    EncoderOutput enc;
    enc.mu.assign(out.begin(), out.begin() + half);
    enc.log_var.assign(out.begin() + half, out.end());
    return enc;
}

inline std::vector<double> reparam_sample(const EncoderOutput& enc, std::span<const double> eps) {
    if (eps.size() != enc.mu.size()) throw std::domain_error("reparam_sample: eps length mismatch");
    std::vector<double> z(eps.size());
    for (size_t d = 0; d < z.size(); ++d)
        z[d] = enc.mu[d] + std::exp(0.5 * clamp_log_var(enc.log_var[d])) * eps[d];
    return z;
}

inline std::vector<double> decode_bernoulli(std::span<const double> z, const NetworkParams& theta,
                                            ForwardCache* cache = nullptr) {
    return forward(theta, z, cache);  // per-pixel logits
}

inline double log_lik_bernoulli(std::span<const double> x, std::span<const double> logits) {
    if (x.size() != logits.size()) throw std::domain_error("log_lik_bernoulli: length mismatch");
    double ll = 0.0;
    for (size_t p = 0; p < x.size(); ++p) {
        if (x[p] != 0.0 && x[p] != 1.0)
            throw std::domain_error("log_lik_bernoulli: x[" + std::to_string(p) +
                                    "] must be 0 or 1");
        ll += x[p] * logits[p] - log1pexp(logits[p]);
    }
    return ll;
}

// d log_lik / d logit, written into adj.
inline void log_lik_bernoulli_adjoint(std::span<const double> x, std::span<const double> logits,
                                      std::span<double> adj) {
    for (size_t p = 0; p < x.size(); ++p) adj[p] = x[p] - sigmoid(logits[p]);
}

inline constexpr double gaussian_std_lo = 0.001;
inline constexpr double gaussian_std_hi = 0.4;

inline double gaussian_std_from_raw(double raw) {
    return gaussian_std_lo + (gaussian_std_hi - gaussian_std_lo) * sigmoid(raw);
}

struct GaussianDecode {
    std::vector<double> mean, std, raw;
};

// Network emits 2*P outputs: P means then P raw std pre-activations; the
// std is squashed into [0.001, 0.4].
inline GaussianDecode decode_gaussian(std::span<const double> z, const NetworkParams& theta,
                                      ForwardCache* cache = nullptr) {
    std::vector<double> out = forward(theta, z, cache);
    if (out.size() % 2 != 0) throw std::domain_error("decode_gaussian: output size must be even");
    const size_t half = out.size() / 2;
    GaussianDecode g;
    g.mean.assign(out.begin(), out.begin() + half);
    g.raw.assign(out.begin() + half, out.end());
    g.std.resize(half);
    for (size_t p = 0; p < half; ++p) g.std[p] = gaussian_std_from_raw(g.raw[p]);
    return g;
}

inline double log_lik_gaussian(std::span<const double> x, std::span<const double> mean,
                               std::span<const double> std) {
    if (x.size() != mean.size() || x.size() != std.size())
        throw std::domain_error("log_lik_gaussian: length mismatch");
    double ll = 0.0;
    for (size_t p = 0; p < x.size(); ++p) {
        const double r = (x[p] - mean[p]) / std[p];
        ll += -0.5 * log_2pi - std::log(std[p]) - 0.5 * r * r;
    }
    return ll;
}

// Adjoints on the raw network outputs (mean block, then raw-std block).
inline void log_lik_gaussian_adjoint(std::span<const double> x, const GaussianDecode& g,
                                     std::span<double> adj) {
    const size_t half = g.mean.size();
    for (size_t p = 0; p < half; ++p) {
        const double sd = g.std[p];
        const double r = x[p] - g.mean[p];
        adj[p] = r / (sd * sd);
        const double dll_dsd = r * r / (sd * sd * sd) - 1.0 / sd;
        const double sig = sigmoid(g.raw[p]);
        adj[half + p] = dll_dsd * (gaussian_std_hi - gaussian_std_lo) * sig * (1.0 - sig);
    }
}

// Central finite-difference derivative of an objective with respect to one
// parameter of the given buffer.
template <typename F>
double finite_difference(std::vector<double>& params, size_t idx, F&& objective,
                         double h = 1e-5) {
    const double keep = params[idx];
    params[idx] = keep + h;
    const double hi = objective();
    params[idx] = keep - h;
    const double lo = objective();
    params[idx] = keep;
    return (hi - lo) / (2.0 * h);
}

}  // namespace fmx
