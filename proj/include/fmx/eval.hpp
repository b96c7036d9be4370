// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "fmx/data.hpp"
#include "fmx/nets.hpp"
#include "fmx/prior.hpp"

namespace fmx {

// Hard code assignments: argmax responsibility per block.
inline std::vector<std::vector<int>> infer_codes(const Dataset& ds, const NetworkParams& phi,
                                                 const FactorialPriorState& st) {
    std::vector<std::vector<int>> out(ds.n(), std::vector<int>(static_cast<size_t>(st.blocks)));
    for (uint64_t n = 0; n < ds.n(); ++n) {
        const EncoderOutput enc = encode(ds.x[n], phi);
        const Responsibilities resp = responsibilities(enc, st);
        for (int i = 0; i < st.blocks; ++i) {
            const auto& g = resp.gamma[static_cast<size_t>(i)];
            out[n][static_cast<size_t>(i)] =
                static_cast<int>(std::max_element(g.begin(), g.end()) - g.begin());
        }
    }
    return out;
}

struct CodeAccuracy {
    double joint_best = 0.0;               // full-tuple accuracy under the best mapping
    std::vector<double> per_block_best;    // marginal accuracy per true block, same mapping
    double block1_identity = 0.0;          // block-1 accuracy with no relabeling at all
};

namespace detail {

// Best label permutation for one (inferred block, true block) pair, by
// exhaustive search over label permutations; returns (hits, permutation).
inline std::pair<uint64_t, std::vector<int>> best_label_perm(
    const std::vector<std::vector<int>>& inferred, const std::vector<std::vector<int>>& truth,
    int inf_block, int true_block, int k) {
    std::vector<std::vector<uint64_t>> count(static_cast<size_t>(k),
                                             std::vector<uint64_t>(static_cast<size_t>(k), 0));
    for (size_t n = 0; n < inferred.size(); ++n) {
        const int a = inferred[n][static_cast<size_t>(inf_block)];
        const int b = truth[n][static_cast<size_t>(true_block)];
        if (a >= 0 && a < k && b >= 0 && b < k) ++count[static_cast<size_t>(a)][static_cast<size_t>(b)];
    }
    std::vector<int> perm(static_cast<size_t>(k));
    std::iota(perm.begin(), perm.end(), 0);
    uint64_t best = 0;
    std::vector<int> best_perm = perm;
    do {
        uint64_t hits = 0;
        for (int a = 0; a < k; ++a)
            hits += count[static_cast<size_t>(a)][static_cast<size_t>(perm[static_cast<size_t>(a)])];
        if (hits > best) {
            best = hits;
            best_perm = perm;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return {best, best_perm};
}

}  // namespace detail

// Scores inferred codes against ground truth. Learned blocks carry no
// preferred order or labeling, so the joint score is maximized over block
// bijections and per-block label permutations; the identity score for block 1
// is reported separately (meaningful when labels pinned that block).
inline CodeAccuracy score_codes(const std::vector<std::vector<int>>& inferred,
                                const std::vector<std::vector<int>>& truth,
                                const std::vector<int>& k_list) {
    if (inferred.size() != truth.size() || inferred.empty())
        throw std::invalid_argument("score_codes: code lists misaligned");
    const int blocks = static_cast<int>(k_list.size());
    if (blocks > 8) throw std::invalid_argument("score_codes: too many blocks to enumerate");
    const size_t n = inferred.size();

    std::vector<int> sigma(static_cast<size_t>(blocks));  // inferred block -> true block
    std::iota(sigma.begin(), sigma.end(), 0);
    uint64_t best_total = 0;
    std::vector<int> best_sigma = sigma;
    std::vector<std::vector<int>> best_perms;
    do {
        bool ok = true;
        for (int j = 0; j < blocks && ok; ++j)
            ok = k_list[static_cast<size_t>(j)] == k_list[static_cast<size_t>(sigma[static_cast<size_t>(j)])];
        if (!ok) continue;  // blocks with different K cannot be matched
        uint64_t total = 0;
        std::vector<std::vector<int>> perms(static_cast<size_t>(blocks));
        for (int j = 0; j < blocks; ++j) {
            auto [hits, perm] = detail::best_label_perm(inferred, truth, j,
                                                        sigma[static_cast<size_t>(j)],
                                                        k_list[static_cast<size_t>(j)]);
            total += hits;
            perms[static_cast<size_t>(j)] = std::move(perm);
        }
        if (total > best_total || best_perms.empty()) {
            best_total = total;
            best_sigma = sigma;
            best_perms = std::move(perms);
        }
    } while (std::next_permutation(sigma.begin(), sigma.end()));

    CodeAccuracy acc;
    acc.per_block_best.assign(static_cast<size_t>(blocks), 0.0);
    uint64_t joint = 0, block1 = 0;
    std::vector<uint64_t> per_block(static_cast<size_t>(blocks), 0);
    for (size_t r = 0; r < n; ++r) {
        bool all = true;
        for (int j = 0; j < blocks; ++j) {
            const int mapped =
                best_perms[static_cast<size_t>(j)][static_cast<size_t>(inferred[r][static_cast<size_t>(j)])];
            const bool hit = mapped == truth[r][static_cast<size_t>(best_sigma[static_cast<size_t>(j)])];
            if (hit) ++per_block[static_cast<size_t>(best_sigma[static_cast<size_t>(j)])];
            all = all && hit;
        }
        if (all) ++joint;
        if (inferred[r][0] == truth[r][0]) ++block1;
    }
    acc.joint_best = static_cast<double>(joint) / static_cast<double>(n);
    for (int i = 0; i < blocks; ++i)
        acc.per_block_best[static_cast<size_t>(i)] =
            static_cast<double>(per_block[static_cast<size_t>(i)]) / static_cast<double>(n);
    acc.block1_identity = static_cast<double>(block1) / static_cast<double>(n);
    return acc;
}

}  // namespace fmx
