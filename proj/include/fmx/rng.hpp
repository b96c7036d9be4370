// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace fmx {

// Counter-based generator (Philox-4x32-10). State is just (seed, stream,
// counter), so a draw position can be checkpointed and resumed exactly.
// Every 64-bit draw consumes one block; derived draws (normal, gamma, ...)
// consume a deterministic sequence of blocks.
class CounterRng {
  public:
    CounterRng() : CounterRng(0, 0) {}
    explicit CounterRng(uint64_t seed, uint64_t stream = 0, uint64_t counter = 0)
        : seed_(seed), stream_(stream), counter_(counter) {}

    uint64_t seed() const { return seed_; }
    uint64_t stream() const { return stream_; }
    uint64_t counter() const { return counter_; }
    void set_counter(uint64_t c) { counter_ = c; }

    uint64_t next_u64() {
        uint32_t c0 = static_cast<uint32_t>(counter_);
        uint32_t c1 = static_cast<uint32_t>(counter_ >> 32);
        uint32_t c2 = static_cast<uint32_t>(stream_);
        uint32_t c3 = static_cast<uint32_t>(stream_ >> 32);
        uint32_t k0 = static_cast<uint32_t>(seed_);
        uint32_t k1 = static_cast<uint32_t>(seed_ >> 32);
        ++counter_;
        for (int round = 0; round < 10; ++round) {
            const uint64_t p0 = 0xD2511F53ull * c0;
            const uint64_t p1 = 0xCD9E8D57ull * c2;
            const uint32_t hi0 = static_cast<uint32_t>(p0 >> 32), lo0 = static_cast<uint32_t>(p0);
            const uint32_t hi1 = static_cast<uint32_t>(p1 >> 32), lo1 = static_cast<uint32_t>(p1);
            const uint32_t n0 = hi1 ^ c1 ^ k0;
            const uint32_t n2 = hi0 ^ c3 ^ k1;
            c0 = n0;
            c1 = lo1;
            c2 = n2;
            c3 = lo0;
            k0 += 0x9E3779B9u;
            k1 += 0xBB67AE85u;
        }
        return (static_cast<uint64_t>(c1) << 32) | c0;
    }

    // Uniform on the open interval (0, 1).
    double u01() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller (cosine branch only, no cached spare,
    // so the state stays a plain counter).
    double normal() {
        const double u1 = u01();
        const double u2 = u01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
    }

    // Gamma(shape, rate) by Marsaglia-Tsang squeeze; shape < 1 handled by the
    // usual boost Gamma(shape+1) * U^{1/shape}.
    double gamma(double shape, double rate) {
        if (!(shape > 0.0) || !(rate > 0.0))
            throw std::domain_error("gamma: requires shape > 0 and rate > 0");
        double boost = 1.0;
        if (shape < 1.0) {
            boost = std::pow(u01(), 1.0 / shape);
            shape += 1.0;
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x, v;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = u01();
            if (u < 1.0 - 0.0331 * x * x * x * x) return boost * d * v / rate;
            if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return boost * d * v / rate;
        }
    }

    // Dirichlet(c) by normalized gammas.
    std::vector<double> dirichlet(std::span<const double> c) {
        std::vector<double> w(c.size());
        double total = 0.0;
        for (size_t k = 0; k < c.size(); ++k) {
            w[k] = gamma(c[k], 1.0);
            total += w[k];
        }
        if (total <= 0.0) {
            // All draws underflowed; fall back to the largest pseudo-count.
            size_t best = 0;
            for (size_t k = 1; k < c.size(); ++k)
                if (c[k] > c[best]) best = k;
            for (size_t k = 0; k < c.size(); ++k) w[k] = (k == best) ? 1.0 : 0.0;
            return w;
        }
        for (double& x : w) x /= total;
        return w;
    }

    // Index sampled from a normalized weight vector.
    int categorical(std::span<const double> p) {
        const double u = u01();
        double acc = 0.0;
        for (size_t k = 0; k + 1 < p.size(); ++k) {
            acc += p[k];
            if (u < acc) return static_cast<int>(k);
        }
        return static_cast<int>(p.size()) - 1;
    }

    // Uniform integer in [0, n).
    uint64_t below(uint64_t n) { return next_u64() % n; }

  private:
    uint64_t seed_, stream_, counter_;
};

}  // namespace fmx
