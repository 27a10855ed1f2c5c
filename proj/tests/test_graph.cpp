#include <catch2/catch_amalgamated.hpp>

#include <functional>
#include <vector>

#include "dualrec/graph.hpp"
#include "dualrec/rng.hpp"

using namespace dualrec;

namespace {

// Central finite differences against reverse-mode gradients for a scalar
// function of a flat parameter vector.
void check_grad(std::function<double(Graph<double>&, NodeId)> build, int rows, int cols,
                uint64_t seed, double tol = 1e-7) {
    Rng rng(seed);
    std::vector<double> theta(size_t(rows) * cols);
    for (auto& x : theta) x = rng.normal();

    auto eval = [&](const std::vector<double>& p, Graph<double>** gout, NodeId* leaf_out) {
        auto* g = new Graph<double>();
        NodeId leaf = g->leaf(rows, cols, p);
        double v = build(*g, leaf);
        if (gout) *gout = g;
        if (leaf_out) *leaf_out = leaf;
        else delete g;
        return v;
    };

    Graph<double>* g = nullptr;
    NodeId leaf = -1;
    eval(theta, &g, &leaf);
    // rebuild with backward
    {
        delete g;
        g = new Graph<double>();
        leaf = g->leaf(rows, cols, theta);
        NodeId loss_node = -1;
        // build returns the value; we need the node: wrap build so the last
        // node in the tape is the loss scalar
        build(*g, leaf);
        loss_node = NodeId(g->size() - 1);
        REQUIRE(g->val(loss_node).size() == 1);
        g->backward(loss_node);
    }
    const double h = 1e-6;
    for (size_t i = 0; i < theta.size(); ++i) {
        auto tp = theta, tm = theta;
        tp[i] += h;
        tm[i] -= h;
        double fp = eval(tp, nullptr, nullptr);
        double fm = eval(tm, nullptr, nullptr);
        double fd = (fp - fm) / (2 * h);
        double an = g->grad(leaf)[i];
        double denom = std::max({1.0, std::abs(fd), std::abs(an)});
        INFO("param " << i << " fd=" << fd << " an=" << an);
        REQUIRE(std::abs(fd - an) / denom < tol);
    }
    delete g;
}

std::vector<double> randvec(size_t n, uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    return v;
}

}  // namespace

TEST_CASE("matmul gradient") {
    auto b = randvec(12, 1);
    check_grad(
        [&](Graph<double>& g, NodeId leaf) {
            NodeId bb = g.constant(4, 3, b);
            NodeId c = g.matmul(leaf, bb);
            NodeId t = g.constant(3, 3, randvec(9, 2));
            NodeId loss = g.mse_mean(c, g.val(t));
            return g.val(loss)[0];
        },
        3, 4, 10);
}

TEST_CASE("layernorm gradient") {
    auto gain = randvec(5, 3);
    auto bias = randvec(5, 4);
    check_grad(
        [&](Graph<double>& g, NodeId leaf) {
            NodeId gg = g.constant(1, 5, gain);
            NodeId bb = g.constant(1, 5, bias);
            NodeId y = g.layernorm(leaf, gg, bb);
            NodeId loss = g.mse_mean(y, randvec(15, 5));
            return g.val(loss)[0];
        },
        3, 5, 11);
}

TEST_CASE("layernorm param gradient") {
    auto x = randvec(15, 6);
    check_grad(
        [&](Graph<double>& g, NodeId leaf) {
            NodeId xx = g.constant(3, 5, x);
            NodeId bb = g.constant(1, 5, randvec(5, 7));
            NodeId y = g.layernorm(xx, leaf, bb);
            NodeId loss = g.mse_mean(y, randvec(15, 8));
            return g.val(loss)[0];
        },
        1, 5, 12);
}

TEST_CASE("attention gradient wrt q, k, v") {
    const int nq = 3, nk = 4, d = 6, heads = 2;
    auto kv = randvec(size_t(nk) * d, 20);
    auto vv = randvec(size_t(nk) * d, 21);
    auto qq = randvec(size_t(nq) * d, 22);
    check_grad(
        [&](Graph<double>& g, NodeId leaf) {
            NodeId k = g.constant(nk, d, kv);
            NodeId v = g.constant(nk, d, vv);
            NodeId o = g.attention(leaf, k, v, heads);
            NodeId loss = g.mse_mean(o, randvec(size_t(nq) * d, 23));
            return g.val(loss)[0];
        },
        nq, d, 24);
    check_grad(
        [&](Graph<double>& g, NodeId leaf) {
            NodeId q = g.constant(nq, d, qq);
            NodeId v = g.constant(nk, d, vv);
            NodeId o = g.attention(q, leaf, v, heads);
            NodeId loss = g.mse_mean(o, randvec(size_t(nq) * d, 25));
            return g.val(loss)[0];
        },
        nk, d, 26);
    check_grad(
        [&](Graph<double>& g, NodeId leaf) {
            NodeId q = g.constant(nq, d, qq);
            NodeId k = g.constant(nk, d, kv);
            NodeId o = g.attention(q, k, leaf, heads);
            NodeId loss = g.mse_mean(o, randvec(size_t(nq) * d, 27));
            return g.val(loss)[0];
        },
        nk, d, 28);
}

TEST_CASE("gelu and leaky_relu gradients") {
    check_grad(
        [&](Graph<double>& g, NodeId leaf) {
            NodeId y = g.gelu(leaf);
            NodeId loss = g.mse_mean(y, randvec(8, 30));
            return g.val(loss)[0];
        },
        2, 4, 31, 1e-6);
    check_grad(
        [&](Graph<double>& g, NodeId leaf) {
            NodeId y = g.leaky_relu(leaf, 0.01);
            NodeId loss = g.mse_mean(y, randvec(8, 32));
            return g.val(loss)[0];
        },
        2, 4, 33);
}

TEST_CASE("weighted_nll gradient and locality") {
    const int n = 4, v = 5;
    check_grad(
        [&](Graph<double>& g, NodeId leaf) {
            NodeId loss = g.weighted_nll(leaf, {1, 0, 3, 2}, {0.5, 0.0, 1.5, 0.0});
            return g.val(loss)[0];
        },
        n, v, 40);
    // zero-weight rows do not influence the loss at all
    Graph<double> g;
    auto logits = randvec(size_t(n) * v, 41);
    NodeId a = g.leaf(n, v, logits);
    NodeId l1 = g.weighted_nll(a, {1, 0, 3, 2}, {0.5, 0.0, 1.5, 0.0});
    auto logits2 = logits;
    for (int j = 0; j < v; ++j) logits2[size_t(1) * v + j] += 100.0;  // unweighted row
    NodeId b = g.leaf(n, v, logits2);
    NodeId l2 = g.weighted_nll(b, {1, 0, 3, 2}, {0.5, 0.0, 1.5, 0.0});
    REQUIRE(g.val(l1)[0] == g.val(l2)[0]);
}

TEST_CASE("gather, reindex, broadcast gradients") {
    check_grad(
        [&](Graph<double>& g, NodeId leaf) {
            NodeId y = g.rows_gather(leaf, {2, 0, 2, 1});
            NodeId loss = g.mse_mean(y, randvec(12, 50));
            return g.val(loss)[0];
        },
        3, 3, 51);
    check_grad(
        [&](Graph<double>& g, NodeId leaf) {
            NodeId y = g.reindex(leaf, {5, 4, 3, 2, 1, 0}, 2, 3);
            NodeId loss = g.mse_mean(y, randvec(6, 52));
            return g.val(loss)[0];
        },
        1, 6, 53);
    check_grad(
        [&](Graph<double>& g, NodeId leaf) {
            NodeId x = g.constant(3, 4, randvec(12, 54));
            NodeId y = g.add_rowvec(x, leaf);
            NodeId loss = g.mse_mean(y, randvec(12, 55));
            return g.val(loss)[0];
        },
        1, 4, 56);
    check_grad(
        [&](Graph<double>& g, NodeId leaf) {
            NodeId x = g.constant(1, 6, randvec(6, 57));
            NodeId y = g.add_channel(x, leaf, 2, 3);
            NodeId loss = g.mse_mean(y, randvec(6, 58));
            return g.val(loss)[0];
        },
        1, 2, 59);
}

TEST_CASE("dropout eval mode is identity, train mode rescales") {
    Graph<float> g;
    Rng rng(1);
    std::vector<float> x(100, 1.0f);
    NodeId a = g.leaf(10, 10, x);
    NodeId e = g.dropout(a, 0.5f, rng, false);
    REQUIRE(e == a);
    NodeId t = g.dropout(a, 0.5f, rng, true);
    int zeros = 0;
    for (float v : g.val(t)) {
        if (v == 0.0f) ++zeros;
        else REQUIRE(v == 2.0f);
    }
    REQUIRE(zeros > 20);
    REQUIRE(zeros < 80);
}
