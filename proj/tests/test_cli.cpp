// SPDX-License-Identifier: Apache-2.0
//
// Drives the installed binary end to end through std::system. Each case works
// in its own directory under the system temp path.
#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("fmx_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

int run(const std::string& args) {
    const std::string cmd = std::string("\"") + FMX_BIN + "\" " + args + " >/dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    REQUIRE(rc != -1);
    return WEXITSTATUS(rc);
}

int run_capture(const std::string& args, const fs::path& err_file) {
    const std::string cmd = std::string("\"") + FMX_BIN + "\" " + args + " >/dev/null 2>\"" +
                            err_file.string() + "\"";
    const int rc = std::system(cmd.c_str());
    REQUIRE(rc != -1);
    return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    REQUIRE(is);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

// Compare as a bool so a mismatch doesn't dump file contents into the report.
bool same_bytes(const fs::path& a, const fs::path& b) { return slurp(a) == slurp(b); }

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream os(p);
    os << text;
    REQUIRE(os.good());
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) out.push_back(line);
    return out;
}

std::vector<std::string> fields_of(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) out.push_back(f);
    return out;
}

// Two blocks of dimension 2 over the identity decoder: 4 feature columns.
void gen_two_block(const fs::path& dir, const std::string& extra = "") {
    REQUIRE(run("gen-data --out \"" + dir.string() +
                "\" --seed 1 --k-list 2,2 --count 32 --dim 2 --separation 6 "
                "--decoder identity --noise 0.5 " +
                extra) == 0);
}

std::string two_block_config(const fs::path& data_dir, bool labels = false, int joint_iters = 3,
                             const std::string& lr = "0.001", const std::string& extra = "") {
    std::string s = R"({
  "model": {"blocks": 2, "dim": 2, "k": [2, 2],
            "enc_hidden": [8], "dec_hidden": [8], "likelihood": "gaussian"},
  "data": {"dataset": ")" +
                    (data_dir / "data.fmxb").string() + "\"";
    if (labels) s += ", \"labels\": \"" + (data_dir / "labels.txt").string() + "\"";
    s += R"(},
  "train": {"pretrain_iters": 2, "prior_init_iters": 2, "joint_iters": )" +
         std::to_string(joint_iters) + R"(,
            "batch_size": 8, "lr": )" +
         lr + ", \"tau0\": 1.0}" + extra + "\n}";
    return s;
}

}  // namespace

TEST_CASE("gen-data writes a deterministic dataset with truth and labels") {
    const fs::path root = scratch("gen");
    gen_two_block(root / "a", "--label-fraction 0.25");
    gen_two_block(root / "b", "--label-fraction 0.25");

    CHECK(fs::exists(root / "a/data.fmxb"));
    CHECK(fs::exists(root / "a/data.fmxb.truth"));
    CHECK(fs::exists(root / "a/labels.txt"));
    CHECK(same_bytes(root / "a/data.fmxb", root / "b/data.fmxb"));
    CHECK(same_bytes(root / "a/data.fmxb.truth", root / "b/data.fmxb.truth"));
    CHECK(same_bytes(root / "a/labels.txt", root / "b/labels.txt"));

    // 25% of 32 rows, each "row block component" with the block always 1.
    const std::vector<std::string> ls = lines_of(slurp(root / "a/labels.txt"));
    CHECK(ls.size() == 8);
    for (const std::string& l : ls) {
        std::istringstream ss(l);
        std::string n, i, k, rest;
        REQUIRE((ss >> n >> i >> k));
        CHECK_FALSE((ss >> rest));
        CHECK(i == "1");
    }
}

TEST_CASE("train produces metrics and a checkpoint, deterministically per seed") {
    const fs::path root = scratch("train");
    gen_two_block(root / "data", "--label-fraction 0.25");
    write_file(root / "run.json", two_block_config(root / "data", /*labels=*/true));

    const std::string base = "train --config \"" + (root / "run.json").string() + "\"";
    REQUIRE(run(base + " --seed 5 --out \"" + (root / "a").string() + "\"") == 0);
    REQUIRE(run(base + " --seed 5 --out \"" + (root / "b").string() + "\"") == 0);
    REQUIRE(run(base + " --seed 6 --out \"" + (root / "c").string() + "\"") == 0);

    const std::string metrics = slurp(root / "a/metrics.csv");
    const std::vector<std::string> rows = lines_of(metrics);
    REQUIRE(rows.size() == 8);  // header + 2 + 2 + 3 iterations
    CHECK(rows[0] == "iter,phase,elbo,recon,kl_z,kl_r,kl_global,rho,semi_sup_loss");
    CHECK(fields_of(rows[1])[1] == "pretrain");
    CHECK(fields_of(rows[3])[1] == "prior_init");
    CHECK(fields_of(rows[7])[1] == "joint");
    CHECK(fs::exists(root / "a/checkpoint.fmxc"));

    CHECK(same_bytes(root / "a/metrics.csv", root / "b/metrics.csv"));
    CHECK(same_bytes(root / "a/checkpoint.fmxc", root / "b/checkpoint.fmxc"));
    CHECK(!same_bytes(root / "a/metrics.csv", root / "c/metrics.csv"));
}

TEST_CASE("bad invocations exit with status 2") {
    const fs::path root = scratch("bad");
    gen_two_block(root / "data");
    write_file(root / "run.json", two_block_config(root / "data"));
    write_file(root / "missing.json",
               R"({"model": {"blocks": 1, "dim": 2, "k": [2], "enc_hidden": [],
                             "dec_hidden": [], "likelihood": "gaussian"},
                   "data": {"dataset": "/nonexistent/foo.fmxb"}, "train": {}})");

    CHECK(run("train") == 2);                       // missing subcommand argument
    CHECK(run("frobnicate --config x.json") == 2);  // unknown subcommand
    CHECK(run("train --config \"" + (root / "run.json").string() + "\" --bogus 1") == 2);
    CHECK(run("train --config \"" + (root / "nope.json").string() + "\"") == 2);
    CHECK(run("--help") == 0);

    const fs::path err = root / "err.txt";
    CHECK(run_capture("train --config \"" + (root / "missing.json").string() + "\"", err) == 2);
    CHECK(slurp(err).find("/nonexistent/foo.fmxb") != std::string::npos);
}

TEST_CASE("a diverging optimization exits with status 3") {
    const fs::path root = scratch("diverge");
    gen_two_block(root / "data");
    write_file(root / "run.json",
               two_block_config(root / "data", /*labels=*/false, 3, "1e200"));

    const fs::path err = root / "err.txt";
    CHECK(run_capture("train --config \"" + (root / "run.json").string() + "\" --out \"" +
                          (root / "out").string() + "\"",
                      err) == 3);
    CHECK(slurp(err).find("numeric failure") != std::string::npos);
}

TEST_CASE("sample decodes graymaps and honors --clamp") {
    const fs::path root = scratch("sample");
    gen_two_block(root / "data");
    write_file(root / "run.json", two_block_config(root / "data"));
    const std::string cfg = " --config \"" + (root / "run.json").string() + "\"";
    REQUIRE(run("train" + cfg + " --out \"" + (root / "out").string() + "\"") == 0);
    const std::string ckpt = " --checkpoint \"" + (root / "out/checkpoint.fmxc").string() + "\"";

    REQUIRE(run("sample" + cfg + ckpt + " --count 5 --clamp 1=2 --out \"" +
                (root / "samples").string() + "\"") == 0);

    const std::vector<std::string> rows = lines_of(slurp(root / "samples/codes.csv"));
    REQUIRE(rows.size() == 6);
    CHECK(rows[0] == "sample,block_1,block_2");
    for (size_t j = 1; j < rows.size(); ++j) {
        const std::vector<std::string> f = fields_of(rows[j]);
        REQUIRE(f.size() == 3);
        CHECK(f[0] == std::to_string(j - 1));
        CHECK(f[1] == "2");  // clamped component, reported 1-based
        CHECK((f[2] == "1" || f[2] == "2"));
    }
    for (int j = 0; j < 5; ++j) {
        char name[32];
        std::snprintf(name, sizeof(name), "sample_%04d.pgm", j);
        const std::string pgm = slurp(root / "samples" / name);
        REQUIRE(pgm.size() == 11 + 4);  // header plus one byte per feature
        CHECK(pgm.substr(0, 11) == "P5\n4 1\n255\n");
    }

    CHECK(run("sample" + cfg + ckpt + " --clamp 1=5") == 2);      // component out of range
    CHECK(run("sample" + cfg + ckpt + " --clamp 3=1") == 2);      // block out of range
    CHECK(run("sample" + cfg + ckpt + " --clamp 1=1,1=2") == 2);  // duplicate block
    CHECK(run("sample" + cfg) == 2);                              // checkpoint required
}

TEST_CASE("eval reports per-datum bounds with an exact mean row") {
    const fs::path root = scratch("eval");
    gen_two_block(root / "data");
    write_file(root / "run.json", two_block_config(root / "data"));
    const std::string cfg = " --config \"" + (root / "run.json").string() + "\"";
    REQUIRE(run("train" + cfg + " --out \"" + (root / "out").string() + "\"") == 0);
    const std::string ckpt = " --checkpoint \"" + (root / "out/checkpoint.fmxc").string() + "\"";

    REQUIRE(run("eval" + cfg + ckpt + " --out \"" + (root / "e1").string() + "\"") == 0);
    REQUIRE(run("eval" + cfg + ckpt + " --out \"" + (root / "e2").string() + "\"") == 0);
    CHECK(same_bytes(root / "e1/eval.csv", root / "e2/eval.csv"));

    const std::vector<std::string> rows = lines_of(slurp(root / "e1/eval.csv"));
    REQUIRE(rows.size() == 1 + 32 + 1);
    CHECK(rows[0] == "n,recon,kl_z,kl_r,bound");
    double s_bound = 0.0;
    for (size_t n = 1; n <= 32; ++n) {
        const std::vector<std::string> f = fields_of(rows[n]);
        REQUIRE(f.size() == 5);
        CHECK(f[0] == std::to_string(n - 1));
        s_bound += std::stod(f[4]);
    }
    const std::vector<std::string> mean = fields_of(rows.back());
    REQUIRE(mean.size() == 5);
    CHECK(mean[0] == "mean");
    CHECK(std::stod(mean[4]) == Catch::Approx(s_bound / 32.0).margin(1e-9));

    // Ground truth sits next to the dataset, so accuracy comes along.
    CHECK(fs::exists(root / "e1/accuracy.csv"));
    const std::vector<std::string> acc = lines_of(slurp(root / "e1/accuracy.csv"));
    REQUIRE(acc.size() >= 2);
    CHECK(acc[0] == "metric,value");
    CHECK(fields_of(acc[1])[0] == "code_accuracy_best_match");
}

TEST_CASE("sweep-k trains one model per component count") {
    const fs::path root = scratch("sweep");
    REQUIRE(run("gen-data --out \"" + (root / "data").string() +
                "\" --seed 3 --k-list 4 --count 48 --dim 2 --separation 6 "
                "--decoder identity --noise 0.5") == 0);
    write_file(root / "run.json", R"({
  "model": {"blocks": 1, "dim": 2, "k": [4],
            "enc_hidden": [8], "dec_hidden": [8], "likelihood": "gaussian"},
  "data": {"dataset": ")" + (root / "data/data.fmxb").string() +
                                R"("},
  "train": {"pretrain_iters": 1, "prior_init_iters": 1, "joint_iters": 2,
            "batch_size": 16, "lr": 0.001, "tau0": 1.0}
})");

    REQUIRE(run("sweep-k --config \"" + (root / "run.json").string() + "\" --k-list 1,2 --out \"" +
                (root / "out").string() + "\"") == 0);

    const std::vector<std::string> rows = lines_of(slurp(root / "out/sweep.csv"));
    REQUIRE(rows.size() == 3);
    CHECK(rows[0] == "k,recon,kl_z,kl_r,bound");
    const std::vector<std::string> r1 = fields_of(rows[1]);
    const std::vector<std::string> r2 = fields_of(rows[2]);
    CHECK(r1[0] == "1");
    CHECK(r2[0] == "2");
    CHECK(r1[3] == "0");  // a single component leaves nothing to assign
    CHECK(std::stod(r2[3]) >= 0.0);
}

TEST_CASE("training resumes from a checkpoint bit for bit") {
    const fs::path root = scratch("resume");
    gen_two_block(root / "data", "--label-fraction 0.25");

    // Full run with a mid-stream snapshot every 4 iterations (8 total).
    write_file(root / "full.json",
               two_block_config(root / "data", /*labels=*/true, /*joint_iters=*/4, "0.001",
                                ",\n  \"output\": {\"checkpoint_every\": 4}"));
    REQUIRE(run("train --config \"" + (root / "full.json").string() + "\" --out \"" +
                (root / "full").string() + "\"") == 0);
    REQUIRE(fs::exists(root / "full/checkpoint_4.fmxc"));

    REQUIRE(run("train --config \"" + (root / "full.json").string() + "\" --out \"" +
                (root / "resumed").string() + "\" --checkpoint \"" +
                (root / "full/checkpoint_4.fmxc").string() + "\"") == 0);

    const std::vector<std::string> all = lines_of(slurp(root / "full/metrics.csv"));
    const std::vector<std::string> tail = lines_of(slurp(root / "resumed/metrics.csv"));
    REQUIRE(all.size() == 9);   // header + 8 iterations
    REQUIRE(tail.size() == 5);  // header + final 4 iterations
    CHECK(tail[0] == all[0]);
    for (size_t j = 1; j < tail.size(); ++j) CHECK(tail[j] == all[4 + j]);
    CHECK(same_bytes(root / "resumed/checkpoint.fmxc", root / "full/checkpoint.fmxc"));
}
