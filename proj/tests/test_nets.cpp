// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "fmx/nets.hpp"
#include "fmx/rng.hpp"

using namespace fmx;

namespace {

NetworkParams random_params(const NetworkShape& sh, CounterRng& rng) {
    NetworkParams p = NetworkParams::init(sh, rng);
    for (double& v : p.w) v += 0.2 * (2.0 * rng.u01() - 1.0);  // make biases nonzero too
    return p;
}

}  // namespace

TEST_CASE("parameter layout and initialization bounds") {
    NetworkShape sh{{4, 8, 6}};
    CHECK(sh.layers() == 2);
    CHECK(sh.param_count() == 4 * 8 + 8 + 8 * 6 + 6);

    CounterRng rng(31);
    const NetworkParams p = NetworkParams::init(sh, rng);
    REQUIRE(p.w.size() == sh.param_count());

    const double bound0 = 1.0 / std::sqrt(4.0), bound1 = 1.0 / std::sqrt(8.0);
    for (size_t j = 0; j < 32; ++j) CHECK(std::abs(p.w[j]) <= bound0);
    for (size_t j = 32; j < 40; ++j) CHECK(p.w[j] == 0.0);  // first-layer biases
    for (size_t j = 40; j < 88; ++j) CHECK(std::abs(p.w[j]) <= bound1);
    for (size_t j = 88; j < 94; ++j) CHECK(p.w[j] == 0.0);  // second-layer biases

    double spread = 0.0;
    for (size_t j = 0; j < 32; ++j) spread = std::max(spread, std::abs(p.w[j]));
    CHECK(spread > 0.1 * bound0);

    CHECK_THROWS_AS(NetworkParams(NetworkShape{{3}}), std::domain_error);
    CHECK_THROWS_AS(NetworkParams(NetworkShape{{3, 0}}), std::domain_error);
}

TEST_CASE("affine forward matches the hand computation") {
    NetworkParams p(NetworkShape{{2, 2}});
    p.w = {1.0, 2.0, 3.0, 4.0, 0.5, -0.5};  // rows of W, then bias
    const std::vector<double> x{1.0, -1.0};
    const std::vector<double> y = forward(p, x);
    REQUIRE(y.size() == 2);
    CHECK(y[0] == Catch::Approx(-0.5).epsilon(1e-15));
    CHECK(y[1] == Catch::Approx(-1.5).epsilon(1e-15));

    CHECK_THROWS_AS(forward(p, std::vector<double>{1.0}), std::domain_error);
}

TEST_CASE("hidden layer applies tanh before the affine head") {
    NetworkParams p(NetworkShape{{1, 1, 1}});
    p.w = {0.7, 0.2, -1.3, 0.1};
    const std::vector<double> x{0.9};
    const double expected = -1.3 * std::tanh(0.7 * 0.9 + 0.2) + 0.1;
    CHECK(forward(p, x)[0] == Catch::Approx(expected).epsilon(1e-15));
}

TEST_CASE("backward gradients match finite differences for both depths") {
    CounterRng rng(99);
    const std::vector<NetworkShape> shapes{{{3, 4}}, {{3, 5, 4}}};
    for (const NetworkShape& sh : shapes) {
        NetworkParams p = random_params(sh, rng);
        std::vector<double> x(3), c(4);
        for (double& v : x) v = 2.0 * rng.u01() - 1.0;
        for (double& v : c) v = 2.0 * rng.u01() - 1.0;

        ForwardCache cache;
        forward(p, x, &cache);
        GradientBuffer gb(p);
        const std::vector<double> xadj = backward(p, cache, c, gb);

        auto objective = [&] {
            const std::vector<double> y = forward(p, x);
            double acc = 0.0;
            for (size_t j = 0; j < y.size(); ++j) acc += c[j] * y[j];
            return acc;
        };
        for (size_t idx = 0; idx < p.w.size(); ++idx) {
            INFO("shape " << sh.sizes.size() << " param " << idx);
            const double fd = finite_difference(p.w, idx, objective);
            CHECK(gb.g[idx] == Catch::Approx(fd).epsilon(1e-6).margin(1e-9));
        }
        for (size_t d = 0; d < x.size(); ++d) {
            INFO("input adjoint " << d);
            const double fd = finite_difference(x, d, objective);
            CHECK(xadj[d] == Catch::Approx(fd).epsilon(1e-6).margin(1e-9));
        }
    }
}

TEST_CASE("gradients accumulate across backward calls") {
    CounterRng rng(5);
    NetworkParams p = random_params(NetworkShape{{2, 3}}, rng);
    const std::vector<double> x{0.4, -0.7};
    const std::vector<double> c{1.0, -2.0, 0.5};
    ForwardCache cache;
    forward(p, x, &cache);
    GradientBuffer gb(p);
    backward(p, cache, c, gb);
    const std::vector<double> once = gb.g;
    backward(p, cache, c, gb);
    for (size_t i = 0; i < gb.g.size(); ++i)
        CHECK(gb.g[i] == Catch::Approx(2.0 * once[i]).epsilon(1e-14).margin(1e-300));
}

TEST_CASE("backward validates its cache and buffers") {
    CounterRng rng(6);
    NetworkParams p = random_params(NetworkShape{{2, 3}}, rng);
    GradientBuffer gb(p);
    ForwardCache cache;  // never filled
    CHECK_THROWS_AS(backward(p, cache, std::vector<double>(3, 1.0), gb), std::domain_error);

    forward(p, std::vector<double>{0.1, 0.2}, &cache);
    CHECK_THROWS_AS(backward(p, cache, std::vector<double>(2, 1.0), gb), std::domain_error);
    GradientBuffer wrong;
    CHECK_THROWS_AS(backward(p, cache, std::vector<double>(3, 1.0), wrong), std::domain_error);

    GradientBuffer other(p);
    GradientBuffer small;
    CHECK_THROWS_AS(other.add(small), std::domain_error);
}

TEST_CASE("encoder output splits into means and raw log variances") {
    NetworkParams phi(NetworkShape{{3, 4}});
    CounterRng rng(7);
    phi = random_params(phi.shape, rng);
    const std::vector<double> x{0.3, -0.1, 0.8};
    const std::vector<double> raw = forward(phi, x);
    const EncoderOutput enc = encode(x, phi);
    REQUIRE(enc.mu.size() == 2);
    REQUIRE(enc.log_var.size() == 2);
    CHECK(enc.mu[0] == raw[0]);
    CHECK(enc.mu[1] == raw[1]);
    CHECK(enc.log_var[0] == raw[2]);
    CHECK(enc.log_var[1] == raw[3]);

    NetworkParams odd(NetworkShape{{3, 3}});
    CHECK_THROWS_AS(encode(x, odd), std::domain_error);
}

TEST_CASE("reparameterized samples shift and scale the noise") {
    EncoderOutput enc;
    enc.mu = {1.0, -2.0};
    enc.log_var = {0.0, std::log(4.0)};
    const std::vector<double> eps{0.5, -1.5};
    const std::vector<double> z = reparam_sample(enc, eps);
    CHECK(z[0] == Catch::Approx(1.5).epsilon(1e-15));
    CHECK(z[1] == Catch::Approx(-5.0).epsilon(1e-15));

    enc.log_var = {-100.0, 100.0};  // clamped to +-30 before exponentiation
    const std::vector<double> zc = reparam_sample(enc, eps);
    CHECK(zc[0] == Catch::Approx(1.0 + std::exp(-15.0) * 0.5).epsilon(1e-12));
    CHECK(zc[1] == Catch::Approx(-2.0 + std::exp(15.0) * -1.5).epsilon(1e-12));

    CHECK_THROWS_AS(reparam_sample(enc, std::vector<double>{0.5}), std::domain_error);
}

TEST_CASE("binary log likelihood pins and gradient") {
    const std::vector<double> x{1.0, 0.0, 1.0, 0.0};
    const std::vector<double> zeros(4, 0.0);
    CHECK(log_lik_bernoulli(x, zeros) == Catch::Approx(-4.0 * std::log(2.0)).epsilon(1e-14));

    const std::vector<double> confident{30.0};
    const double ll = log_lik_bernoulli(std::vector<double>{1.0}, confident);
    CHECK(ll >= -1e-9);
    CHECK(ll <= 0.0);

    CHECK_THROWS_AS(log_lik_bernoulli(std::vector<double>{0.5}, confident), std::domain_error);
    CHECK_THROWS_AS(log_lik_bernoulli(x, std::vector<double>(3, 0.0)), std::domain_error);
}

TEST_CASE("binary likelihood adjoint matches finite differences") {
    CounterRng rng(11);
    std::vector<double> x{1.0, 0.0, 0.0, 1.0};
    std::vector<double> logits(4);
    for (double& v : logits) v = 6.0 * rng.u01() - 3.0;
    std::vector<double> adj(4);
    log_lik_bernoulli_adjoint(x, logits, adj);
    for (size_t pidx = 0; pidx < 4; ++pidx) {
        const double fd =
            finite_difference(logits, pidx, [&] { return log_lik_bernoulli(x, logits); });
        CHECK(adj[pidx] == Catch::Approx(fd).epsilon(1e-7).margin(1e-10));
    }
}

TEST_CASE("decoder standard deviation stays inside its squash range") {
    CHECK(gaussian_std_from_raw(-30.0) == Catch::Approx(0.001).margin(1e-6));
    CHECK(gaussian_std_from_raw(30.0) == Catch::Approx(0.4).margin(1e-6));
    CHECK(gaussian_std_from_raw(0.0) == Catch::Approx(0.2005).epsilon(1e-12));
    for (double raw : {-1e8, -3.0, 0.0, 3.0, 1e8}) {
        const double sd = gaussian_std_from_raw(raw);
        CHECK(sd >= 0.001);
        CHECK(sd <= 0.4);
    }
}

TEST_CASE("real-valued likelihood pins and adjoint") {
    GaussianDecode g;
    g.mean = {0.3, -0.2};
    g.raw = {0.0, 0.5};
    g.std = {gaussian_std_from_raw(0.0), gaussian_std_from_raw(0.5)};
    const std::vector<double> x{0.3, -0.2};  // at the mean: only normalizers remain
    const double expected =
        -std::log(2.0 * M_PI) - std::log(g.std[0]) - std::log(g.std[1]);
    CHECK(log_lik_gaussian(x, g.mean, g.std) == Catch::Approx(expected).epsilon(1e-14));

    const std::vector<double> xo{0.5, 0.1};
    std::vector<double> adj(4);
    log_lik_gaussian_adjoint(xo, g, adj);
    // Finite differences through the raw decoder outputs (mean block, then raw std).
    std::vector<double> raw_out{g.mean[0], g.mean[1], g.raw[0], g.raw[1]};
    auto objective = [&] {
        GaussianDecode h;
        h.mean = {raw_out[0], raw_out[1]};
        h.raw = {raw_out[2], raw_out[3]};
        h.std = {gaussian_std_from_raw(h.raw[0]), gaussian_std_from_raw(h.raw[1])};
        return log_lik_gaussian(xo, h.mean, h.std);
    };
    for (size_t pidx = 0; pidx < 4; ++pidx) {
        const double fd = finite_difference(raw_out, pidx, objective);
        INFO("raw output " << pidx);
        CHECK(adj[pidx] == Catch::Approx(fd).epsilon(1e-5).margin(1e-7));
    }

    CHECK_THROWS_AS(log_lik_gaussian(std::vector<double>{0.1}, g.mean, g.std),
                    std::domain_error);
}

TEST_CASE("gaussian decode splits means from raw standard deviations") {
    CounterRng rng(13);
    NetworkParams theta = random_params(NetworkShape{{2, 6}}, rng);
    const std::vector<double> z{0.4, -0.9};
    const std::vector<double> raw = forward(theta, z);
    const GaussianDecode g = decode_gaussian(z, theta);
    REQUIRE(g.mean.size() == 3);
    for (size_t p = 0; p < 3; ++p) {
        CHECK(g.mean[p] == raw[p]);
        CHECK(g.raw[p] == raw[3 + p]);
        CHECK(g.std[p] == gaussian_std_from_raw(raw[3 + p]));
    }

    NetworkParams odd(NetworkShape{{2, 5}});
    CHECK_THROWS_AS(decode_gaussian(z, odd), std::domain_error);
}
