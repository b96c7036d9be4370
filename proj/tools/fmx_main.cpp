// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: train / eval / sample / sweep-k / gen-data.
// Exit codes: 0 success, 2 config or IO error, 3 numeric failure.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fmx/checkpoint.hpp"
#include "fmx/config.hpp"
#include "fmx/elbo.hpp"
#include "fmx/eval.hpp"

namespace fs = std::filesystem;

namespace {

struct Overrides {
    std::optional<uint64_t> seed;
    std::string out;
    std::string checkpoint;
};

fmx::RunConfig load_with_overrides(const std::string& config_path, const Overrides& o) {
    fmx::RunConfig rc = fmx::load_run_config(config_path);
    if (o.seed) rc.train.seed = *o.seed;
    if (!o.out.empty()) rc.out_dir = o.out;
    return rc;
}

std::map<int, int> parse_clamp(const std::string& spec, const std::vector<int>& k_list) {
    std::map<int, int> out;
    if (spec.empty()) return out;
    std::istringstream ss(spec);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("bad --clamp entry \"" + tok + "\" (expected i=k)");
        const int i = std::stoi(tok.substr(0, eq));
        const int k = std::stoi(tok.substr(eq + 1));
        if (i < 1 || i > static_cast<int>(k_list.size()))
            throw std::runtime_error("clamped block index " + std::to_string(i) + " out of range");
        if (k < 1 || k > k_list[static_cast<size_t>(i - 1)])
            throw std::runtime_error("clamped component index " + std::to_string(k) +
                                     " out of range for block " + std::to_string(i));
        if (!out.emplace(i - 1, k - 1).second)
            throw std::runtime_error("duplicate --clamp entry for block " + std::to_string(i));
    }
    return out;
}

std::vector<int> parse_int_list(const std::string& spec) {
    std::vector<int> out;
    std::istringstream ss(spec);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(std::stoi(tok));
    if (out.empty()) throw std::runtime_error("empty list: \"" + spec + "\"");
    return out;
}

void check_checkpoint_shapes(const fmx::TrainerCheckpoint& c, const fmx::RunConfig& rc,
                             const fmx::Dataset& ds) {
    const int p = static_cast<int>(ds.row_len());
    if (c.phi.shape != rc.model.encoder_shape(p) || c.theta.shape != rc.model.decoder_shape(p))
        throw std::runtime_error("shape mismatch between checkpoint and config/data");
    if (c.prior.blocks != rc.model.blocks || c.prior.dim != rc.model.dim)
        throw std::runtime_error("latent shape mismatch between checkpoint and config");
    for (int i = 0; i < c.prior.blocks; ++i)
        if (c.prior.k(i) != rc.model.k_list[static_cast<size_t>(i)])
            throw std::runtime_error("component counts mismatch between checkpoint and config");
}

// ---------------------------------------------------------------------------

int cmd_train(const std::string& config_path, const Overrides& o) {
    fmx::RunConfig rc = load_with_overrides(config_path, o);
    fmx::Dataset ds = fmx::load_dataset(rc.dataset_path);
    fmx::LabelSet ls;
    if (!rc.labels_path.empty()) ls = fmx::load_labels(rc.labels_path);

    fmx::Trainer tr(rc.model, rc.train, ds, ls);
    if (!o.checkpoint.empty()) {
        const fmx::TrainerCheckpoint c = fmx::load_checkpoint(o.checkpoint);
        fmx::restore(tr, c);
    }

    fs::create_directories(rc.out_dir);
    std::ofstream metrics(rc.out_dir + "/metrics.csv");
    if (!metrics) throw std::runtime_error("cannot open for writing: " + rc.out_dir + "/metrics.csv");
    metrics << fmx::metrics_header() << '\n';

    double first_elbo = 0.0, last_elbo = 0.0;
    bool any = false;
    while (!tr.finished()) {
        const fmx::MetricsRow row = tr.step();
        metrics << fmx::format_metrics_row(row) << '\n';
        if (!any) {
            first_elbo = row.elbo;
            any = true;
        }
        last_elbo = row.elbo;
        if (rc.checkpoint_every > 0 && tr.iter % rc.checkpoint_every == 0 && !tr.finished())
            fmx::save_checkpoint(rc.out_dir + "/checkpoint_" + std::to_string(tr.iter) + ".fmxc",
                                 fmx::snapshot(tr, rc.echo));
    }
    metrics.close();
    if (!metrics) throw std::runtime_error("write failed: " + rc.out_dir + "/metrics.csv");
    fmx::save_checkpoint(rc.out_dir + "/checkpoint.fmxc", fmx::snapshot(tr, rc.echo));
    if (any)
        std::cout << "train: " << tr.iter << " iterations, bound " << fmx::format_double(first_elbo)
                  << " -> " << fmx::format_double(last_elbo) << '\n';
    return 0;
}

int cmd_eval(const std::string& config_path, const Overrides& o) {
    if (o.checkpoint.empty()) throw std::runtime_error("eval requires --checkpoint");
    fmx::RunConfig rc = load_with_overrides(config_path, o);
    fmx::Dataset ds = fmx::load_dataset(rc.dataset_path);
    const fmx::TrainerCheckpoint c = fmx::load_checkpoint(o.checkpoint);
    check_checkpoint_shapes(c, rc, ds);

    fs::create_directories(rc.out_dir);
    std::ofstream out(rc.out_dir + "/eval.csv");
    if (!out) throw std::runtime_error("cannot open for writing: " + rc.out_dir + "/eval.csv");
    out << "n,recon,kl_z,kl_r,bound\n";

    fmx::CounterRng rng(rc.train.seed, /*stream=*/2);
    double s_recon = 0, s_klz = 0, s_klr = 0, s_bound = 0;
    for (uint64_t n = 0; n < ds.n(); ++n) {
        const fmx::TestElboResult r =
            fmx::test_elbo(ds.x[n], c.phi, c.theta, c.prior, rc.model.likelihood, 1, rng);
        if (!std::isfinite(r.bound))
            throw fmx::NumericError("non-finite bound for datum " + std::to_string(n));
        out << n << ',' << fmx::format_double(r.recon) << ',' << fmx::format_double(r.kl_z) << ','
            << fmx::format_double(r.kl_r) << ',' << fmx::format_double(r.bound) << '\n';
        s_recon += r.recon;
        s_klz += r.kl_z;
        s_klr += r.kl_r;
        s_bound += r.bound;
    }
    const double dn = static_cast<double>(ds.n());
    out << "mean," << fmx::format_double(s_recon / dn) << ',' << fmx::format_double(s_klz / dn)
        << ',' << fmx::format_double(s_klr / dn) << ',' << fmx::format_double(s_bound / dn) << '\n';
    out.close();
    if (!out) throw std::runtime_error("write failed: " + rc.out_dir + "/eval.csv");
    std::cout << "eval: mean bound " << fmx::format_double(s_bound / dn) << " over " << ds.n()
              << " data\n";

    // Score recovered codes when the generator's ground truth sits next to
    // the dataset.
    const std::string truth_path = rc.dataset_path + ".truth";
    if (fs::exists(truth_path)) {
        const fmx::SyntheticTruth t = fmx::load_truth(truth_path);
        if (t.codes.size() == ds.n() && t.blocks == rc.model.blocks) {
            const auto inferred = fmx::infer_codes(ds, c.phi, c.prior);
            const fmx::CodeAccuracy acc = fmx::score_codes(inferred, t.codes, rc.model.k_list);
            std::ofstream accf(rc.out_dir + "/accuracy.csv");
            accf << "metric,value\n";
            accf << "code_accuracy_best_match," << fmx::format_double(acc.joint_best) << '\n';
            for (size_t i = 0; i < acc.per_block_best.size(); ++i)
                accf << "block" << i + 1 << "_accuracy_best_match,"
                     << fmx::format_double(acc.per_block_best[i]) << '\n';
            accf << "block1_accuracy_identity," << fmx::format_double(acc.block1_identity) << '\n';
            std::cout << "eval: code accuracy " << fmx::format_double(acc.joint_best)
                      << " (block 1 identity " << fmx::format_double(acc.block1_identity) << ")\n";
        }
    }
    return 0;
}

int cmd_sample(const std::string& config_path, const Overrides& o, uint64_t count,
               const std::string& clamp_spec) {
    if (o.checkpoint.empty()) throw std::runtime_error("sample requires --checkpoint");
    fmx::RunConfig rc = load_with_overrides(config_path, o);
    fmx::Dataset ds = fmx::load_dataset(rc.dataset_path);  // for the image dimensions
    const fmx::TrainerCheckpoint c = fmx::load_checkpoint(o.checkpoint);
    check_checkpoint_shapes(c, rc, ds);
    const std::map<int, int> clamp = parse_clamp(clamp_spec, rc.model.k_list);

    fs::create_directories(rc.out_dir);
    std::ofstream codes(rc.out_dir + "/codes.csv");
    if (!codes) throw std::runtime_error("cannot open for writing: " + rc.out_dir + "/codes.csv");
    codes << "sample";
    for (int i = 1; i <= rc.model.blocks; ++i) codes << ",block_" << i;
    codes << '\n';

    fmx::CounterRng rng(rc.train.seed, /*stream=*/3);
    const int dim = rc.model.dim;
    for (uint64_t j = 0; j < count; ++j) {
        fmx::LatentCode code = fmx::sample_code(c.prior, rng);
        for (const auto& [i, k] : clamp) code.k[static_cast<size_t>(i)] = k;
        std::vector<double> z(static_cast<size_t>(rc.model.zdim()));
        for (int i = 0; i < rc.model.blocks; ++i) {
            const std::vector<double> zi =
                fmx::sample_block(c.prior, i, code.k[static_cast<size_t>(i)], rng);
            std::copy(zi.begin(), zi.end(), z.begin() + static_cast<size_t>(i) * dim);
        }
        std::vector<double> mean;
        if (rc.model.likelihood == fmx::Likelihood::bernoulli) {
            const std::vector<double> logits = fmx::decode_bernoulli(z, c.theta);
            mean.reserve(logits.size());
            for (double l : logits) mean.push_back(fmx::sigmoid(l));
        } else {
            mean = fmx::decode_gaussian(z, c.theta).mean;
        }
        char name[32];
        std::snprintf(name, sizeof(name), "sample_%04llu.pgm", static_cast<unsigned long long>(j));
        fmx::save_pgm(rc.out_dir + "/" + name, mean, ds.h, ds.w);
        codes << j;
        for (int i = 0; i < rc.model.blocks; ++i) codes << ',' << code.k[static_cast<size_t>(i)] + 1;
        codes << '\n';
    }
    codes.close();
    if (!codes) throw std::runtime_error("write failed: " + rc.out_dir + "/codes.csv");
    std::cout << "sample: wrote " << count << " graymaps to " << rc.out_dir << '\n';
    return 0;
}

int cmd_sweep_k(const std::string& config_path, const Overrides& o, const std::string& k_spec) {
    fmx::RunConfig rc = load_with_overrides(config_path, o);
    if (rc.model.blocks != 1)
        throw std::runtime_error("sweep-k requires a single-block model (blocks = 1)");
    const std::vector<int> ks = parse_int_list(k_spec);
    fmx::Dataset ds = fmx::load_dataset(rc.dataset_path);
    fmx::LabelSet ls;
    if (!rc.labels_path.empty()) ls = fmx::load_labels(rc.labels_path);

    fs::create_directories(rc.out_dir);
    std::ofstream out(rc.out_dir + "/sweep.csv");
    if (!out) throw std::runtime_error("cannot open for writing: " + rc.out_dir + "/sweep.csv");
    out << "k,recon,kl_z,kl_r,bound\n";

    for (int k : ks) {
        if (k < 1) throw std::runtime_error("sweep-k: component counts must be >= 1");
        fmx::ModelSpec model = rc.model;
        model.k_list = {k};
        fmx::Trainer tr(model, rc.train, ds, ls);
        while (!tr.finished()) tr.step();

        fmx::CounterRng rng(rc.train.seed, /*stream=*/2);
        double s_recon = 0, s_klz = 0, s_klr = 0, s_bound = 0;
        for (uint64_t n = 0; n < ds.n(); ++n) {
            const fmx::TestElboResult r =
                fmx::test_elbo(ds.x[n], tr.phi, tr.theta, tr.prior, model.likelihood, 1, rng);
            s_recon += r.recon;
            s_klz += r.kl_z;
            s_klr += r.kl_r;
            s_bound += r.bound;
        }
        const double dn = static_cast<double>(ds.n());
        if (!std::isfinite(s_bound)) throw fmx::NumericError("non-finite bound in sweep");
        out << k << ',' << fmx::format_double(s_recon / dn) << ',' << fmx::format_double(s_klz / dn)
            << ',' << fmx::format_double(s_klr / dn) << ',' << fmx::format_double(s_bound / dn)
            << '\n';
        std::cerr << "sweep-k: k=" << k << " done\n";
    }
    out.close();
    if (!out) throw std::runtime_error("write failed: " + rc.out_dir + "/sweep.csv");
    return 0;
}

int cmd_gen_data(const std::string& out_dir, uint64_t seed, const std::string& k_spec,
                 uint64_t count, int dim, double separation, const std::string& decoder,
                 double label_fraction, double noise) {
    const std::vector<int> ks = parse_int_list(k_spec);
    fmx::SyntheticDecoder kind;
    if (decoder == "identity") kind = fmx::SyntheticDecoder::identity;
    else if (decoder == "affine") kind = fmx::SyntheticDecoder::affine;
    else throw std::runtime_error("decoder must be \"identity\" or \"affine\"");

    const fmx::SyntheticResult res =
        fmx::generate_synthetic(static_cast<int>(ks.size()), dim, ks, count, separation, kind,
                                label_fraction, seed, noise);
    fs::create_directories(out_dir);
    fmx::save_dataset(out_dir + "/data.fmxb", res.data);
    fmx::save_truth(out_dir + "/data.fmxb.truth", res.truth);
    if (!res.labels.empty()) fmx::save_labels(out_dir + "/labels.txt", res.labels);
    std::cout << "gen-data: " << count << " rows, " << res.data.row_len() << " dims, "
              << res.labels.entries.size() << " labeled, at " << out_dir << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Variational trainer for factorial Gaussian-mixture latent spaces"};
    app.require_subcommand(1);

    Overrides o;
    std::string config_path, clamp_spec, k_spec, decoder = "affine";
    uint64_t count = 16, seed = 0;
    int dim = 2;
    double separation = 6.0, label_fraction = 0.0, noise = 0.5;

    auto add_common = [&](CLI::App* sub, bool need_config) {
        auto* c = sub->add_option("--config", config_path, "JSON run configuration");
        if (need_config) c->required();
        sub->add_option("--seed", o.seed, "override the config seed");
        sub->add_option("--out", o.out, "override the output directory");
        sub->add_option("--checkpoint", o.checkpoint, "checkpoint file");
    };

    CLI::App* train = app.add_subcommand("train", "run the three training phases");
    add_common(train, true);
    CLI::App* eval = app.add_subcommand("eval", "per-datum bound and accuracy report");
    add_common(eval, true);
    CLI::App* sample = app.add_subcommand("sample", "draw codes and decode graymaps");
    add_common(sample, true);
    sample->add_option("--count", count, "number of samples");
    sample->add_option("--clamp", clamp_spec, "fixed components, e.g. \"1=2,3=1\" (1-based)");
    CLI::App* sweep = app.add_subcommand("sweep-k", "train once per component count");
    add_common(sweep, true);
    sweep->add_option("--k-list", k_spec, "comma-separated component counts")->required();
    CLI::App* gen = app.add_subcommand("gen-data", "generate synthetic factorial data");
    gen->add_option("--out", o.out, "output directory")->required();
    gen->add_option("--seed", seed, "generator seed");
    gen->add_option("--k-list", k_spec, "components per block, e.g. \"4,4\"")->required();
    gen->add_option("--count", count, "number of rows")->required();
    gen->add_option("--dim", dim, "dimensions per block");
    gen->add_option("--separation", separation, "component mean separation");
    gen->add_option("--decoder", decoder, "identity | affine");
    gen->add_option("--label-fraction", label_fraction, "fraction of rows labeled on block 1");
    gen->add_option("--noise", noise, "within-component standard deviation");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (train->parsed()) return cmd_train(config_path, o);
        if (eval->parsed()) return cmd_eval(config_path, o);
        if (sample->parsed()) return cmd_sample(config_path, o, count, clamp_spec);
        if (sweep->parsed()) return cmd_sweep_k(config_path, o, k_spec);
        if (gen->parsed())
            return cmd_gen_data(o.out, seed, k_spec, count, dim, separation, decoder,
                                label_fraction, noise);
    } catch (const fmx::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 2;
}
