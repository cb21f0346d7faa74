#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cmath>
#include <sstream>

#include "m3lab/nn.hpp"
#include "m3lab/rng.hpp"

using namespace m3lab;
using namespace m3lab::nn;

namespace {

// Oracle-side loss evaluation. Deliberately independent of loss_value_grad.
double eval_loss(Loss loss, const std::vector<double>& y, const std::vector<double>& t) {
    double total = 0.0;
    for (size_t i = 0; i < y.size(); ++i) {
        double e = y[i] - t[i];
        if (loss == Loss::SquaredError) {
            total += e * e;
        } else if (std::abs(e) <= 1.0) {
            total += 0.5 * e * e;
        } else {
            total += std::abs(e) - 0.5;
        }
    }
    return total;
}

double loss_at(Network& net, const std::vector<double>& x, const std::vector<double>& t, Loss loss) {
    return eval_loss(loss, forward(net, x), t);
}

// Central finite differences over every parameter of the network.
GradientSet fd_gradients(Network net, const std::vector<double>& x, const std::vector<double>& t,
                         Loss loss, double step = 1e-5) {
    GradientSet g = make_gradients(net);
    for (size_t l = 0; l < net.w.size(); ++l) {
        for (size_t i = 0; i < net.w[l].size(); ++i) {
            double keep = net.w[l][i];
            net.w[l][i] = keep + step;
            double up = loss_at(net, x, t, loss);
            net.w[l][i] = keep - step;
            double dn = loss_at(net, x, t, loss);
            net.w[l][i] = keep;
            g.w[l][i] = (up - dn) / (2.0 * step);
        }
        for (size_t i = 0; i < net.b[l].size(); ++i) {
            double keep = net.b[l][i];
            net.b[l][i] = keep + step;
            double up = loss_at(net, x, t, loss);
            net.b[l][i] = keep - step;
            double dn = loss_at(net, x, t, loss);
            net.b[l][i] = keep;
            g.b[l][i] = (up - dn) / (2.0 * step);
        }
    }
    return g;
}

double max_rel_err(const GradientSet& a, const GradientSet& b) {
    double worst = 0.0;
    auto cmp = [&](const std::vector<double>& u, const std::vector<double>& v) {
        for (size_t i = 0; i < u.size(); ++i) {
            double denom = std::max({std::abs(u[i]), std::abs(v[i]), 1e-6});
            worst = std::max(worst, std::abs(u[i] - v[i]) / denom);
        }
    };
    for (size_t l = 0; l < a.w.size(); ++l) {
        cmp(a.w[l], b.w[l]);
        cmp(a.b[l], b.b[l]);
    }
    return worst;
}

}  // namespace

TEST_CASE("init_network scales weights by fan-in and zeroes biases") {
    auto net = init_network({4, 16, 3}, 7);
    REQUIRE(net.num_layers() == 2);
    CHECK(net.w[0].size() == 64);
    CHECK(net.w[1].size() == 48);
    double bound0 = 1.0 / std::sqrt(4.0);
    double bound1 = 1.0 / std::sqrt(16.0);
    for (double x : net.w[0]) CHECK(std::abs(x) <= bound0);
    for (double x : net.w[1]) CHECK(std::abs(x) <= bound1);
    for (double x : net.b[0]) CHECK(x == 0.0);
    for (double x : net.b[1]) CHECK(x == 0.0);

    auto again = init_network({4, 16, 3}, 7);
    CHECK(net.w[0] == again.w[0]);
    CHECK(net.w[1] == again.w[1]);
    auto other = init_network({4, 16, 3}, 8);
    CHECK(net.w[0] != other.w[0]);
}

TEST_CASE("init_network rejects bad layer lists") {
    CHECK_THROWS_AS(init_network({}, 1), std::invalid_argument);
    CHECK_THROWS_AS(init_network({4}, 1), std::invalid_argument);
    CHECK_THROWS_AS(init_network({4, 0, 2}, 1), std::invalid_argument);
    CHECK_THROWS_AS(init_network({4, -3}, 1), std::invalid_argument);
}

TEST_CASE("forward applies ReLU on hidden layers and identity on the output") {
    Network net;
    net.sizes = {2, 2, 1};
    net.w = {{1.0, 0.0, 0.0, 1.0}, {1.0, 1.0}};
    net.b = {{0.0, -2.0}, {0.5}};
    // hidden = relu([x0, x1 - 2]); output = h0 + h1 + 0.5
    auto y = forward(net, std::vector<double>{3.0, 1.0});
    CHECK(y.size() == 1);
    CHECK(y[0] == doctest::Approx(3.0 + 0.0 + 0.5));
    y = forward(net, std::vector<double>{-1.0, 5.0});
    CHECK(y[0] == doctest::Approx(0.0 + 3.0 + 0.5));
}

TEST_CASE("forward rejects input dimension mismatch") {
    auto net = init_network({3, 4, 2}, 1);
    CHECK_THROWS_AS(forward(net, std::vector<double>{1.0, 2.0}), std::invalid_argument);
}

TEST_CASE("backward on a 1-d linear net reproduces the hand gradient") {
    Network net;
    net.sizes = {1, 1};
    net.w = {{2.0}};
    net.b = {{0.0}};
    auto grads = make_gradients(net);
    Workspace ws;
    double loss = backward(net, std::vector<double>{1.0}, std::vector<double>{0.0},
                           Loss::SquaredError, grads, ws);
    CHECK(loss == doctest::Approx(4.0));     // (2*1 - 0)^2
    CHECK(grads.w[0][0] == doctest::Approx(4.0));  // 2*(y-t)*x
    CHECK(grads.b[0][0] == doctest::Approx(4.0));
}

TEST_CASE("analytic gradients match central finite differences on 100 random instances per loss") {
    auto start = std::chrono::steady_clock::now();
    for (Loss loss : {Loss::SquaredError, Loss::SmoothL1}) {
        Rng rng(loss == Loss::SquaredError ? 101 : 202);
        for (int trial = 0; trial < 100; ++trial) {
            std::vector<int> sizes;
            int depth = 1 + rng.uniform_int(2);
            sizes.push_back(1 + rng.uniform_int(6));
            for (int d = 0; d < depth; ++d) sizes.push_back(1 + rng.uniform_int(8));
            sizes.push_back(1 + rng.uniform_int(4));
            auto net = init_network(sizes, rng.next_u64());
            // Zero biases can pin hidden pre-activations exactly onto the ReLU
            // kink (dead previous layer -> z = 0), where central differences
            // straddle the corner. Check at differentiable points instead.
            for (auto& layer : net.b)
                for (auto& v : layer) v = rng.uniform(-0.5, 0.5);
            std::vector<double> x(sizes.front()), t(sizes.back());
            for (auto& v : x) v = rng.uniform(-2.0, 2.0);
            for (auto& v : t) v = rng.uniform(-2.0, 2.0);

            auto grads = make_gradients(net);
            Workspace ws;
            backward(net, x, t, loss, grads, ws);
            auto fd = fd_gradients(net, x, t, loss);
            CHECK(max_rel_err(grads, fd) < 1e-4);
        }
    }
    auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    CHECK(elapsed < 10.0);
}

TEST_CASE("smooth-l1 loss is quadratic near zero and linear far away") {
    std::vector<double> dl;
    double v = loss_value_grad(Loss::SmoothL1, std::vector<double>{0.3}, std::vector<double>{0.0}, dl);
    CHECK(v == doctest::Approx(0.5 * 0.09));
    CHECK(dl[0] == doctest::Approx(0.3));
    v = loss_value_grad(Loss::SmoothL1, std::vector<double>{-3.0}, std::vector<double>{0.0}, dl);
    CHECK(v == doctest::Approx(2.5));
    CHECK(dl[0] == doctest::Approx(-1.0));
}

TEST_CASE("sgd step moves parameters opposite the gradient") {
    auto net = init_network({2, 2}, 3);
    auto before = net.w[0];
    auto grads = make_gradients(net);
    grads.w[0] = {1.0, -2.0, 0.5, 0.0};
    grads.b[0] = {0.25, -0.25};
    auto state = make_opt_state(net);
    OptimizerConfig cfg;
    cfg.kind = OptKind::Sgd;
    cfg.lr = 0.1;
    optimizer_step(net, grads, state, cfg);
    for (size_t i = 0; i < before.size(); ++i)
        CHECK(net.w[0][i] == doctest::Approx(before[i] - 0.1 * grads.w[0][i]));
    CHECK(net.b[0][0] == doctest::Approx(-0.1 * 0.25));
}

TEST_CASE("adam first step matches the bias-corrected closed form") {
    auto net = init_network({1, 1}, 5);
    double w0 = net.w[0][0];
    auto grads = make_gradients(net);
    grads.w[0][0] = 3.0;
    auto state = make_opt_state(net);
    OptimizerConfig cfg;  // Adam defaults
    optimizer_step(net, grads, state, cfg);
    // After one step: mhat = g, vhat = g^2, so delta = -lr * g / (|g| + eps)
    double expect = w0 - cfg.lr * 3.0 / (3.0 + cfg.eps);
    CHECK(net.w[0][0] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("optimizer_step rejects non-finite gradients") {
    auto net = init_network({2, 2}, 3);
    auto grads = make_gradients(net);
    grads.w[0][1] = std::numeric_limits<double>::quiet_NaN();
    auto state = make_opt_state(net);
    OptimizerConfig cfg;
    CHECK_THROWS_AS(optimizer_step(net, grads, state, cfg), std::runtime_error);
    grads.w[0][1] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(optimizer_step(net, grads, state, cfg), std::runtime_error);
}

TEST_CASE("network snapshots round-trip bit-exactly") {
    auto net = init_network({3, 8, 8, 2}, 42);
    // push some parameters to awkward values
    net.w[0][0] = 0x1.fffffffffffffp-3;
    net.w[1][5] = -1.0 / 3.0;
    net.b[2][1] = 1e-300;
    std::ostringstream first;
    save_network(first, net);
    std::istringstream in(first.str());
    auto loaded = load_network(in);
    REQUIRE(loaded.sizes == net.sizes);
    for (int l = 0; l < net.num_layers(); ++l) {
        for (size_t i = 0; i < net.w[l].size(); ++i) REQUIRE(loaded.w[l][i] == net.w[l][i]);
        for (size_t i = 0; i < net.b[l].size(); ++i) REQUIRE(loaded.b[l][i] == net.b[l][i]);
    }
    std::ostringstream second;
    save_network(second, loaded);
    CHECK(first.str() == second.str());
}

TEST_CASE("load_network rejects corrupt snapshots") {
    {
        std::istringstream in("not-a-snapshot 1\n");
        CHECK_THROWS_AS(load_network(in), std::runtime_error);
    }
    {
        std::istringstream in("m3lab-net 999\nlayers 1 1\n");
        CHECK_THROWS_AS(load_network(in), std::runtime_error);
    }
    {
        auto net = init_network({2, 2}, 1);
        std::ostringstream out;
        save_network(out, net);
        std::string text = out.str();
        text = text.substr(0, text.size() / 2);  // truncate
        std::istringstream in(text);
        CHECK_THROWS_AS(load_network(in), std::runtime_error);
    }
}

TEST_CASE("training loop with fixed seed is reproducible") {
    auto run = [] {
        auto net = init_network({2, 8, 1}, 11);
        auto state = make_opt_state(net);
        OptimizerConfig cfg;
        cfg.lr = 1e-2;
        Rng rng(99);
        Workspace ws;
        for (int step = 0; step < 200; ++step) {
            std::vector<double> x{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
            std::vector<double> t{x[0] * x[1]};
            auto grads = make_gradients(net);
            backward(net, x, t, Loss::SquaredError, grads, ws);
            optimizer_step(net, grads, state, cfg);
        }
        return net;
    };
    auto a = run();
    auto b = run();
    CHECK(a.w[0] == b.w[0]);
    CHECK(a.w[1] == b.w[1]);
    CHECK(a.b[0] == b.b[0]);
}
