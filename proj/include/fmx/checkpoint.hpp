// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fmx/serialize.hpp"
#include "fmx/trainer.hpp"

namespace fmx {

// Full mutable optimization state, as stored on disk.  Restoring a
// checkpoint into a trainer built from the same config and data reproduces
// the original run bitwise.
struct TrainerCheckpoint {
    uint64_t iter = 0;
    uint64_t rng_seed = 0, rng_stream = 0, rng_counter = 0;
    NetworkParams phi, theta;
    AdamState adam_enc, adam_dec;
    FactorialPriorState prior;
    std::string config_echo;  // the run's JSON config, for provenance
};

namespace detail {

inline void write_params(std::ostream& os, const NetworkParams& p) {
    write_u32(os, static_cast<uint32_t>(p.shape.sizes.size()));
    for (int s : p.shape.sizes) write_u32(os, static_cast<uint32_t>(s));
    write_f64_vec(os, p.w);
}

inline NetworkParams read_params(std::istream& is) {
    const uint32_t n = read_u32(is, "network shape length");
    if (n < 2 || n > 64) throw std::runtime_error("checkpoint: implausible network shape");
    NetworkShape sh;
    sh.sizes.resize(n);
    for (uint32_t i = 0; i < n; ++i) sh.sizes[i] = static_cast<int>(read_u32(is, "layer size"));
    NetworkParams p(sh);
    auto w = read_f64_vec(is, "network weights");
    if (w.size() != p.w.size()) throw std::runtime_error("checkpoint: weight count mismatch");
    p.w = std::move(w);
    return p;
}

inline void write_adam(std::ostream& os, const AdamState& a) {
    write_u64(os, a.t);
    write_f64(os, a.lr);
    write_f64(os, a.beta1);
    write_f64(os, a.beta2);
    write_f64(os, a.epsilon);
    write_f64_vec(os, a.m);
    write_f64_vec(os, a.v);
}

inline AdamState read_adam(std::istream& is) {
    AdamState a;
    a.t = read_u64(is, "optimizer step");
    a.lr = read_f64(is, "optimizer lr");
    a.beta1 = read_f64(is, "optimizer beta1");
    a.beta2 = read_f64(is, "optimizer beta2");
    a.epsilon = read_f64(is, "optimizer epsilon");
    a.m = read_f64_vec(is, "optimizer first moment");
    a.v = read_f64_vec(is, "optimizer second moment");
    if (a.m.size() != a.v.size()) throw std::runtime_error("checkpoint: optimizer moment mismatch");
    return a;
}

inline void write_prior(std::ostream& os, const FactorialPriorState& st) {
    write_u32(os, static_cast<uint32_t>(st.blocks));
    write_u32(os, static_cast<uint32_t>(st.dim));
    write_f64(os, st.c0);
    write_f64_vec(os, st.hyper.m);
    write_f64_vec(os, st.hyper.s);
    write_f64_vec(os, st.hyper.a);
    write_f64_vec(os, st.hyper.b);
    for (int i = 0; i < st.blocks; ++i) {
        write_u32(os, static_cast<uint32_t>(st.k(i)));
        for (const auto& f : st.comp[static_cast<size_t>(i)]) {
            write_f64_vec(os, f.m);
            write_f64_vec(os, f.s);
            write_f64_vec(os, f.a);
            write_f64_vec(os, f.b);
        }
        write_f64_vec(os, st.mix[static_cast<size_t>(i)].c);
    }
}

inline FactorialPriorState read_prior(std::istream& is) {
    FactorialPriorState st;
    st.blocks = static_cast<int>(read_u32(is, "prior blocks"));
    st.dim = static_cast<int>(read_u32(is, "prior dim"));
    st.c0 = read_f64(is, "prior c0");
    auto m = read_f64_vec(is, "hyper m");
    auto s = read_f64_vec(is, "hyper s");
    auto a = read_f64_vec(is, "hyper a");
    auto b = read_f64_vec(is, "hyper b");
    st.hyper = NormalGammaFactor(std::move(m), std::move(s), std::move(a), std::move(b));
    st.comp.resize(static_cast<size_t>(st.blocks));
    st.mix.reserve(static_cast<size_t>(st.blocks));
    for (int i = 0; i < st.blocks; ++i) {
        const uint32_t k = read_u32(is, "component count");
        if (k == 0 || k > (1u << 20)) throw std::runtime_error("checkpoint: implausible K");
        for (uint32_t c = 0; c < k; ++c) {
            auto fm = read_f64_vec(is, "factor m");
            auto fs = read_f64_vec(is, "factor s");
            auto fa = read_f64_vec(is, "factor a");
            auto fb = read_f64_vec(is, "factor b");
            st.comp[static_cast<size_t>(i)].emplace_back(std::move(fm), std::move(fs),
                                                         std::move(fa), std::move(fb));
        }
        st.mix.emplace_back(read_f64_vec(is, "mixing pseudo-counts"));
    }
    st.validate();
    return st;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const TrainerCheckpoint& c) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os.write("FMXC", 4);
    write_u16(os, 1);
    write_u64(os, c.iter);
    write_u64(os, c.rng_seed);
    write_u64(os, c.rng_stream);
    write_u64(os, c.rng_counter);
    detail::write_params(os, c.phi);
    detail::write_params(os, c.theta);
    detail::write_adam(os, c.adam_enc);
    detail::write_adam(os, c.adam_dec);
    detail::write_prior(os, c.prior);
    write_string(os, c.config_echo);
    if (!os) throw std::runtime_error("write failed: " + path);
}

inline TrainerCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    char magic[4];
    read_exact(is, magic, 4, "checkpoint magic");
    if (std::string(magic, 4) != "FMXC")
        throw std::runtime_error("bad checkpoint magic in " + path);
    if (read_u16(is, "checkpoint version") != 1)
        throw std::runtime_error("unsupported checkpoint version in " + path);
    TrainerCheckpoint c;
    c.iter = read_u64(is, "iteration");
    c.rng_seed = read_u64(is, "rng seed");
    c.rng_stream = read_u64(is, "rng stream");
    c.rng_counter = read_u64(is, "rng counter");
    c.phi = detail::read_params(is);
    c.theta = detail::read_params(is);
    c.adam_enc = detail::read_adam(is);
    c.adam_dec = detail::read_adam(is);
    c.prior = detail::read_prior(is);
    c.config_echo = read_string(is, "config echo");
    is.peek();
    if (!is.eof()) throw std::runtime_error("trailing bytes in checkpoint " + path);
    return c;
}

inline TrainerCheckpoint snapshot(const Trainer& t, std::string config_echo) {
    TrainerCheckpoint c;
    c.iter = t.iter;
    c.rng_seed = t.rng.seed();
    c.rng_stream = t.rng.stream();
    c.rng_counter = t.rng.counter();
    c.phi = t.phi;
    c.theta = t.theta;
    c.adam_enc = t.adam_enc;
    c.adam_dec = t.adam_dec;
    c.prior = t.prior;
    c.config_echo = std::move(config_echo);
    return c;
}

inline void restore(Trainer& t, const TrainerCheckpoint& c) {
    if (c.phi.shape != t.phi.shape || c.theta.shape != t.theta.shape)
        throw std::runtime_error("checkpoint restore: network shapes do not match the config");
    if (c.prior.blocks != t.prior.blocks || c.prior.dim != t.prior.dim)
        throw std::runtime_error("checkpoint restore: latent shape does not match the config");
    for (int i = 0; i < c.prior.blocks; ++i)
        if (c.prior.k(i) != t.prior.k(i))
            throw std::runtime_error("checkpoint restore: component counts do not match the config");
    t.iter = c.iter;
    t.rng = CounterRng(c.rng_seed, c.rng_stream, c.rng_counter);
    t.phi = c.phi;
    t.theta = c.theta;
    t.adam_enc = c.adam_enc;
    t.adam_dec = c.adam_dec;
    t.prior = c.prior;
}

}  // namespace fmx
