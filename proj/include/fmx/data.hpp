// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fmx/elbo.hpp"
#include "fmx/rng.hpp"
#include "fmx/serialize.hpp"

namespace fmx {

// A dataset is N rows of H*W doubles.  Binary datasets carry strictly 0/1
// values; real-valued ones carry arbitrary finite doubles.
struct Dataset {
    uint32_t h = 0;
    uint32_t w = 0;
    bool binary = true;
    std::vector<std::vector<double>> x;

    uint64_t n() const { return x.size(); }
    uint32_t row_len() const { return h * w; }
};

// Sparse per-datum, per-block component observations.  Stored 0-based.
struct LabelSet {
    // datum index -> (block index -> component index)
    std::map<uint64_t, std::map<int, int>> entries;

    bool empty() const { return entries.empty(); }

    void add(uint64_t n, int block, int comp) {
        auto& row = entries[n];
        auto [it, inserted] = row.emplace(block, comp);
        if (!inserted)
            throw std::runtime_error("duplicate label for datum " + std::to_string(n) +
                                     ", block " + std::to_string(block + 1));
    }

    // Dense per-block view for one datum; -1 marks unobserved blocks.
    DatumLabels view(uint64_t n, int blocks) const {
        DatumLabels out(static_cast<size_t>(blocks), -1);
        auto it = entries.find(n);
        if (it == entries.end()) return out;
        for (auto [block, comp] : it->second) {
            if (block < 0 || block >= blocks)
                throw std::runtime_error("label block index out of range for datum " +
                                         std::to_string(n));
            out[static_cast<size_t>(block)] = comp;
        }
        return out;
    }

    // Sorted distinct block indices that carry at least one observation.
    std::vector<int> labeled_blocks() const {
        std::vector<int> out;
        for (const auto& [n, row] : entries)
            for (auto [block, comp] : row)
                if (std::find(out.begin(), out.end(), block) == out.end()) out.push_back(block);
        std::sort(out.begin(), out.end());
        return out;
    }

    void validate(uint64_t n_total, const std::vector<int>& k_per_block) const {
        for (const auto& [n, row] : entries) {
            if (n >= n_total)
                throw std::runtime_error("label datum index " + std::to_string(n) +
                                         " out of range (dataset has " + std::to_string(n_total) +
                                         " rows)");
            for (auto [block, comp] : row) {
                if (block < 0 || static_cast<size_t>(block) >= k_per_block.size())
                    throw std::runtime_error("label block index " + std::to_string(block + 1) +
                                             " out of range");
                if (comp < 0 || comp >= k_per_block[static_cast<size_t>(block)])
                    throw std::runtime_error("label component " + std::to_string(comp + 1) +
                                             " out of range for block " + std::to_string(block + 1));
            }
        }
    }
};

// ---------------------------------------------------------------------------
// Synthetic ground truth

struct SyntheticTruth {
    int blocks = 0;
    int dim = 0;
    std::vector<int> k_list;
    double noise_std = 0.0;
    std::vector<std::vector<std::vector<double>>> means;  // [block][comp][dim]
    std::vector<std::vector<int>> codes;                  // [n][block]
    std::vector<std::vector<double>> z;                   // [n][blocks*dim]
    int decoder_kind = 0;                                 // 0 identity, 1 affine
    std::vector<double> a;                                // p x (blocks*dim), row-major
    std::vector<double> bias;                             // p
    uint32_t p = 0;
};

enum class SyntheticDecoder { identity = 0, affine = 1 };

// Component means on a centred integer lattice scaled by `separation`:
// component k of a D-dim block gets the base-L digits of k (L = ceil(K^(1/D))),
// shifted so the lattice is centred at the origin.  Any two distinct
// components then differ by at least `separation` in some coordinate.
inline std::vector<std::vector<double>> lattice_means(int k, int dim, double separation) {
    int side = 1;
    while (std::pow(static_cast<double>(side), dim) < static_cast<double>(k)) ++side;
    std::vector<std::vector<double>> out(static_cast<size_t>(k),
                                         std::vector<double>(static_cast<size_t>(dim), 0.0));
    for (int c = 0; c < k; ++c) {
        int rem = c;
        for (int d = 0; d < dim; ++d) {
            const int digit = rem % side;
            rem /= side;
            out[static_cast<size_t>(c)][static_cast<size_t>(d)] =
                (static_cast<double>(digit) - 0.5 * (side - 1)) * separation;
        }
    }
    return out;
}

struct SyntheticResult {
    Dataset data;
    LabelSet labels;
    SyntheticTruth truth;
};

inline SyntheticResult generate_synthetic(int blocks, int dim, const std::vector<int>& k_list,
                                          uint64_t n, double separation,
                                          SyntheticDecoder decoder, double label_fraction,
                                          uint64_t seed, double noise_std = 0.5) {
    if (blocks < 1 || dim < 1) throw std::invalid_argument("generate_synthetic: bad shape");
    if (k_list.size() != static_cast<size_t>(blocks))
        throw std::invalid_argument("generate_synthetic: k_list size mismatch");
    for (int k : k_list)
        if (k < 1) throw std::invalid_argument("generate_synthetic: component counts must be >= 1");
    if (!(separation > 0.0) || !(noise_std > 0.0))
        throw std::invalid_argument("generate_synthetic: separation and noise must be positive");
    if (label_fraction < 0.0 || label_fraction > 1.0)
        throw std::invalid_argument("generate_synthetic: label fraction must lie in [0,1]");

    CounterRng rng(seed, /*stream=*/0x5d47a);
    const int zdim = blocks * dim;

    SyntheticResult out;
    SyntheticTruth& t = out.truth;
    t.blocks = blocks;
    t.dim = dim;
    t.k_list = k_list;
    t.noise_std = noise_std;
    t.decoder_kind = static_cast<int>(decoder);
    t.means.reserve(static_cast<size_t>(blocks));
    for (int i = 0; i < blocks; ++i)
        t.means.push_back(lattice_means(k_list[static_cast<size_t>(i)], dim, separation));

    t.p = decoder == SyntheticDecoder::identity ? static_cast<uint32_t>(zdim)
                                                : static_cast<uint32_t>(2 * zdim);
    if (decoder == SyntheticDecoder::affine) {
        t.a.resize(static_cast<size_t>(t.p) * static_cast<size_t>(zdim));
        const double scale = 1.0 / std::sqrt(static_cast<double>(zdim));
        for (double& v : t.a) v = scale * rng.normal();
        t.bias.assign(t.p, 0.0);
    }

    Dataset& ds = out.data;
    ds.h = 1;
    ds.w = t.p;
    ds.binary = false;
    ds.x.reserve(n);
    t.codes.reserve(n);
    t.z.reserve(n);

    for (uint64_t row = 0; row < n; ++row) {
        std::vector<int> code(static_cast<size_t>(blocks));
        std::vector<double> z(static_cast<size_t>(zdim));
        for (int i = 0; i < blocks; ++i) {
            const int k = static_cast<int>(rng.below(static_cast<uint64_t>(k_list[static_cast<size_t>(i)])));
            code[static_cast<size_t>(i)] = k;
            for (int d = 0; d < dim; ++d)
                z[static_cast<size_t>(i * dim + d)] =
                    t.means[static_cast<size_t>(i)][static_cast<size_t>(k)][static_cast<size_t>(d)] +
                    noise_std * rng.normal();
        }
        std::vector<double> x(static_cast<size_t>(t.p), 0.0);
        if (decoder == SyntheticDecoder::identity) {
            x = z;
        } else {
            for (uint32_t r = 0; r < t.p; ++r) {
                double acc = t.bias[r];
                for (int cidx = 0; cidx < zdim; ++cidx)
                    acc += t.a[static_cast<size_t>(r) * static_cast<size_t>(zdim) +
                               static_cast<size_t>(cidx)] * z[static_cast<size_t>(cidx)];
                x[r] = acc;
            }
        }
        t.codes.push_back(std::move(code));
        t.z.push_back(std::move(z));
        ds.x.push_back(std::move(x));
    }

    // Labels: a seed-determined subset of rows, first block only.
    const uint64_t n_labeled = static_cast<uint64_t>(std::floor(label_fraction * static_cast<double>(n)));
    if (n_labeled > 0) {
        std::vector<uint64_t> order(n);
        for (uint64_t i = 0; i < n; ++i) order[i] = i;
        for (uint64_t i = n; i > 1; --i) {
            const uint64_t j = rng.below(i);
            std::swap(order[i - 1], order[j]);
        }
        for (uint64_t i = 0; i < n_labeled; ++i)
            out.labels.add(order[i], 0, t.codes[order[i]][0]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Container I/O.  Magic "FMXB", version u16 (1 = u8 {0,1} payload, 2 = f64
// payload), then N u64, H u32, W u32, then the payload, all little-endian.

inline void save_dataset(const std::string& path, const Dataset& ds) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os.write("FMXB", 4);
    write_u16(os, ds.binary ? 1 : 2);
    write_u64(os, ds.n());
    write_u32(os, ds.h);
    write_u32(os, ds.w);
    for (const auto& row : ds.x) {
        if (row.size() != ds.row_len())
            throw std::runtime_error("save_dataset: ragged row");
        for (double v : row) {
            if (ds.binary) {
                if (v != 0.0 && v != 1.0)
                    throw std::runtime_error("save_dataset: binary dataset contains non-0/1 value");
                const char byte = v == 1.0 ? 1 : 0;
                os.write(&byte, 1);
            } else {
                write_f64(os, v);
            }
        }
    }
    if (!os) throw std::runtime_error("write failed: " + path);
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    char magic[4];
    read_exact(is, magic, 4, "container magic");
    if (std::string(magic, 4) != "FMXB")
        throw std::runtime_error("bad container magic in " + path);
    const uint16_t version = read_u16(is, "container version");
    if (version != 1 && version != 2)
        throw std::runtime_error("unsupported container version " + std::to_string(version) +
                                 " in " + path);
    Dataset ds;
    const uint64_t n = read_u64(is, "row count");
    ds.h = read_u32(is, "height");
    ds.w = read_u32(is, "width");
    ds.binary = version == 1;
    const uint64_t len = static_cast<uint64_t>(ds.h) * static_cast<uint64_t>(ds.w);
    if (len == 0 && n > 0) throw std::runtime_error("zero-sized rows in " + path);
    if (n > (1ull << 40) / std::max<uint64_t>(len, 1))
        throw std::runtime_error("implausible dimensions in " + path);
    const uint64_t payload = n * len * (version == 1 ? 1 : 8);
    ds.x.reserve(n);
    std::vector<char> buf(static_cast<size_t>(len) * (version == 1 ? 1 : 8));
    uint64_t got = 0;
    for (uint64_t row = 0; row < n; ++row) {
        is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        const uint64_t g = static_cast<uint64_t>(is.gcount());
        got += g;
        if (g != buf.size())
            throw std::runtime_error("truncated payload in " + path + ": expected " +
                                     std::to_string(payload) + " bytes, got " +
                                     std::to_string(got));
        std::vector<double> vals(len);
        if (version == 1) {
            for (uint64_t i = 0; i < len; ++i)
                vals[i] = buf[i] != 0 ? 1.0 : 0.0;
        } else {
            for (uint64_t i = 0; i < len; ++i) {
                uint64_t bits = 0;
                for (int byte = 0; byte < 8; ++byte)
                    bits |= static_cast<uint64_t>(static_cast<uint8_t>(buf[i * 8 + byte]))
                            << (8 * byte);
                vals[i] = std::bit_cast<double>(bits);
            }
        }
        ds.x.push_back(std::move(vals));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Label file: text lines "n i k" with n 0-based and i, k 1-based.

inline void save_labels(const std::string& path, const LabelSet& labels) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    for (const auto& [n, row] : labels.entries)
        for (auto [block, comp] : row)
            os << n << ' ' << block + 1 << ' ' << comp + 1 << '\n';
    if (!os) throw std::runtime_error("write failed: " + path);
}

inline LabelSet load_labels(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open: " + path);
    LabelSet out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        long long n = -1, block = 0, comp = 0;
        if (!(ss >> n >> block >> comp))
            throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                     ": expected three integers \"n i k\"");
        std::string extra;
        if (ss >> extra)
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": trailing tokens");
        if (n < 0 || block < 1 || comp < 1)
            throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                     ": indices out of range (n is 0-based, i and k 1-based)");
        out.add(static_cast<uint64_t>(n), static_cast<int>(block - 1), static_cast<int>(comp - 1));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Ground-truth sidecar, so evaluation can score recovered structure.

inline void save_truth(const std::string& path, const SyntheticTruth& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os.write("FMXT", 4);
    write_u16(os, 1);
    write_u32(os, static_cast<uint32_t>(t.blocks));
    write_u32(os, static_cast<uint32_t>(t.dim));
    write_u64(os, t.codes.size());
    write_u32(os, static_cast<uint32_t>(t.decoder_kind));
    write_u32(os, t.p);
    write_f64(os, t.noise_std);
    for (int k : t.k_list) write_u32(os, static_cast<uint32_t>(k));
    for (const auto& block : t.means)
        for (const auto& mean : block)
            for (double v : mean) write_f64(os, v);
    for (const auto& code : t.codes)
        for (int k : code) write_u32(os, static_cast<uint32_t>(k));
    for (const auto& row : t.z)
        for (double v : row) write_f64(os, v);
    write_f64_vec(os, t.a);
    write_f64_vec(os, t.bias);
    if (!os) throw std::runtime_error("write failed: " + path);
}

inline SyntheticTruth load_truth(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    char magic[4];
    read_exact(is, magic, 4, "truth magic");
    if (std::string(magic, 4) != "FMXT") throw std::runtime_error("bad truth magic in " + path);
    if (read_u16(is, "truth version") != 1)
        throw std::runtime_error("unsupported truth version in " + path);
    SyntheticTruth t;
    t.blocks = static_cast<int>(read_u32(is, "blocks"));
    t.dim = static_cast<int>(read_u32(is, "dim"));
    const uint64_t n = read_u64(is, "row count");
    t.decoder_kind = static_cast<int>(read_u32(is, "decoder kind"));
    t.p = read_u32(is, "observed dim");
    t.noise_std = read_f64(is, "noise std");
    t.k_list.resize(static_cast<size_t>(t.blocks));
    for (int& k : t.k_list) k = static_cast<int>(read_u32(is, "component count"));
    t.means.resize(static_cast<size_t>(t.blocks));
    for (int i = 0; i < t.blocks; ++i) {
        t.means[static_cast<size_t>(i)].assign(static_cast<size_t>(t.k_list[static_cast<size_t>(i)]),
                                               std::vector<double>(static_cast<size_t>(t.dim)));
        for (auto& mean : t.means[static_cast<size_t>(i)])
            for (double& v : mean) v = read_f64(is, "mean");
    }
    t.codes.assign(n, std::vector<int>(static_cast<size_t>(t.blocks)));
    for (auto& code : t.codes)
        for (int& k : code) k = static_cast<int>(read_u32(is, "code"));
    t.z.assign(n, std::vector<double>(static_cast<size_t>(t.blocks * t.dim)));
    for (auto& row : t.z)
        for (double& v : row) v = read_f64(is, "latent");
    t.a = read_f64_vec(is, "decoder matrix");
    t.bias = read_f64_vec(is, "decoder bias");
    return t;
}

// ---------------------------------------------------------------------------
// Binary P5 graymap for sample dumps; values clamped to [0,1].

inline void save_pgm(const std::string& path, const std::vector<double>& pixels, uint32_t h,
                     uint32_t w) {
    if (pixels.size() != static_cast<size_t>(h) * w)
        throw std::invalid_argument("save_pgm: pixel count does not match dimensions");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os << "P5\n" << w << ' ' << h << "\n255\n";
    for (double v : pixels) {
        const double c = std::min(1.0, std::max(0.0, v));
        const char byte = static_cast<char>(std::lround(c * 255.0));
        os.write(&byte, 1);
    }
    if (!os) throw std::runtime_error("write failed: " + path);
}

}  // namespace fmx
