// SPDX-License-Identifier: Apache-2.0
#pragma once

// JSON run configuration. Model shape has no defaults — every field must be
// spelled out; training hyperparameters default to the documented values.

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "fmx/trainer.hpp"

namespace fmx {

struct RunConfig {
    ModelSpec model;
    TrainConfig train;
    std::string dataset_path;
    std::string labels_path;  // empty = fully unsupervised
    std::string out_dir = "out";
    uint64_t checkpoint_every = 0;  // 0 = final checkpoint only
    std::string echo;               // raw JSON text, for checkpoints
};

namespace detail {

using json = nlohmann::json;

inline void reject_unknown_keys(const json& obj, const std::vector<std::string>& allowed,
                                const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (const auto& k : allowed)
            if (it.key() == k) { ok = true; break; }
        if (!ok)
            throw std::runtime_error("config: unknown key \"" + it.key() + "\" in " + where);
    }
}

inline const json& require(const json& obj, const std::string& key, const std::string& where) {
    auto it = obj.find(key);
    if (it == obj.end())
        throw std::runtime_error("config: missing required key \"" + key + "\" in " + where);
    return *it;
}

template <typename T>
T get_or(const json& obj, const std::string& key, T fallback) {
    auto it = obj.find(key);
    if (it == obj.end()) return fallback;
    return it->get<T>();
}

inline std::vector<int> int_list(const json& v, const std::string& what) {
    if (!v.is_array()) throw std::runtime_error("config: " + what + " must be an array");
    std::vector<int> out;
    for (const auto& e : v) {
        if (!e.is_number_integer()) throw std::runtime_error("config: " + what + " must hold integers");
        out.push_back(e.get<int>());
    }
    return out;
}

}  // namespace detail

inline RunConfig parse_run_config(const std::string& text) {
    using detail::json;
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw std::runtime_error(std::string("config: JSON parse error: ") + e.what());
    }
    if (!root.is_object()) throw std::runtime_error("config: top level must be an object");
    detail::reject_unknown_keys(root, {"model", "data", "train", "output"}, "top level");

    RunConfig rc;
    rc.echo = text;

    const json& model = detail::require(root, "model", "top level");
    detail::reject_unknown_keys(
        model, {"blocks", "dim", "k", "enc_hidden", "dec_hidden", "likelihood"}, "\"model\"");
    rc.model.blocks = detail::require(model, "blocks", "\"model\"").get<int>();
    rc.model.dim = detail::require(model, "dim", "\"model\"").get<int>();
    rc.model.k_list = detail::int_list(detail::require(model, "k", "\"model\""), "model.k");
    rc.model.enc_hidden =
        detail::int_list(detail::require(model, "enc_hidden", "\"model\""), "model.enc_hidden");
    rc.model.dec_hidden =
        detail::int_list(detail::require(model, "dec_hidden", "\"model\""), "model.dec_hidden");
    const std::string lik = detail::require(model, "likelihood", "\"model\"").get<std::string>();
    if (lik == "bernoulli") rc.model.likelihood = Likelihood::bernoulli;
    else if (lik == "gaussian") rc.model.likelihood = Likelihood::gaussian;
    else throw std::runtime_error("config: likelihood must be \"bernoulli\" or \"gaussian\"");
    rc.model.validate();

    const json& data = detail::require(root, "data", "top level");
    detail::reject_unknown_keys(data, {"dataset", "labels"}, "\"data\"");
    rc.dataset_path = detail::require(data, "dataset", "\"data\"").get<std::string>();
    rc.labels_path = detail::get_or<std::string>(data, "labels", "");

    const json& train = detail::require(root, "train", "top level");
    detail::reject_unknown_keys(train,
                                {"pretrain_iters", "prior_init_iters", "joint_iters", "batch_size",
                                 "seed", "lr", "kappa", "tau0", "rho_floor", "delta", "beta_kl",
                                 "pretrain_anneal"},
                                "\"train\"");
    rc.train.pretrain_iters = detail::get_or<uint64_t>(train, "pretrain_iters", 0);
    rc.train.prior_init_iters = detail::get_or<uint64_t>(train, "prior_init_iters", 0);
    rc.train.joint_iters = detail::get_or<uint64_t>(train, "joint_iters", 0);
    rc.train.batch_size = detail::get_or<uint32_t>(train, "batch_size", 64);
    rc.train.seed = detail::get_or<uint64_t>(train, "seed", 0);
    rc.train.lr = detail::get_or<double>(train, "lr", 1e-4);
    rc.train.schedule.kappa = detail::get_or<double>(train, "kappa", 0.7);
    rc.train.schedule.tau0 = detail::get_or<double>(train, "tau0", 2000.0);
    rc.train.schedule.rho_floor = detail::get_or<double>(train, "rho_floor", 0.0);
    rc.train.semi.delta = detail::get_or<double>(train, "delta", 1000.0);
    rc.train.semi.beta_kl = detail::get_or<double>(train, "beta_kl", 1.0);
    rc.train.pretrain_anneal = detail::get_or<bool>(train, "pretrain_anneal", true);
    rc.train.schedule.validate();
    rc.train.semi.validate();
    if (!(rc.train.lr > 0.0)) throw std::runtime_error("config: lr must be positive");
    if (rc.train.batch_size < 1) throw std::runtime_error("config: batch_size must be >= 1");

    if (auto it = root.find("output"); it != root.end()) {
        detail::reject_unknown_keys(*it, {"dir", "checkpoint_every"}, "\"output\"");
        rc.out_dir = detail::get_or<std::string>(*it, "dir", "out");
        rc.checkpoint_every = detail::get_or<uint64_t>(*it, "checkpoint_every", 0);
    }
    return rc;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config: " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_run_config(ss.str());
}

}  // namespace fmx
