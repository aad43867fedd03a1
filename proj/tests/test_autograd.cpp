#include "doctest.h"

#include <functional>
#include <vector>

#include "unidiff/autograd.hpp"
#include "unidiff/core.hpp"

using namespace unidiff;
using namespace unidiff::nn;

namespace {

// builds a scalar loss from externally owned parameters; used both for the
// analytic pass and for finite-difference probes
using BuildFn = std::function<Var(Tape<double>&, const double*, double*)>;

double eval_loss(const BuildFn& build, const std::vector<double>& params) {
    Tape<double> tp(false);
    const Var loss = build(tp, params.data(), nullptr);
    return tp.data(loss)[0];
}

// central differences vs analytic gradient on every parameter
void check_gradients(const BuildFn& build, std::vector<double> params, double tol = 1e-6) {
    std::vector<double> grads(params.size(), 0.0);
    {
        Tape<double> tp(true);
        const Var loss = build(tp, params.data(), grads.data());
        tp.backward(loss);
    }
    const double h = 1e-6;
    for (size_t i = 0; i < params.size(); ++i) {
        const double keep = params[i];
        params[i] = keep + h;
        const double fp = eval_loss(build, params);
        params[i] = keep - h;
        const double fm = eval_loss(build, params);
        params[i] = keep;
        const double fd = (fp - fm) / (2.0 * h);
        const double scale = std::max({1.0, std::abs(fd), std::abs(grads[i])});
        CHECK_MESSAGE(std::abs(fd - grads[i]) / scale < tol, "param ", i, " fd=", fd, " ad=", grads[i]);
    }
}

std::vector<double> randn(size_t n, uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.gaussian() * scale;
    return v;
}

}  // namespace

TEST_CASE("linear + gelu + mse gradients match finite differences") {
    const int n = 3, din = 4, dout = 5;
    const auto x = randn(static_cast<size_t>(n) * din, 1);
    const auto target = randn(static_cast<size_t>(n) * dout, 2);
    // params: W then b
    std::vector<double> params = randn(static_cast<size_t>(din) * dout + dout, 3, 0.5);
    check_gradients(
        [&](Tape<double>& tp, const double* p, double* g) {
            const Var xv = tp.input(x.data(), n, din);
            const Var w = g ? tp.param(p, g, din, dout) : tp.input(p, din, dout);
            const Var b = g ? tp.param(p + din * dout, g + din * dout, 1, dout)
                            : tp.input(p + din * dout, 1, dout);
            const Var y = tp.gelu(tp.linear(xv, w, b));
            return tp.mse_loss(y, target.data());
        },
        params);
}

TEST_CASE("layernorm + modulate + silu gradients") {
    const int n = 4, d = 6;
    const auto target = randn(static_cast<size_t>(n) * d, 12);
    std::vector<double> params = randn(static_cast<size_t>(n) * d + 2 * d, 13, 0.7);
    check_gradients(
        [&](Tape<double>& tp, const double* p, double* g) {
            const auto leaf = [&](size_t off, int r, int c) {
                return g ? tp.param(p + off, g + off, r, c) : tp.input(p + off, r, c);
            };
            const Var xv = leaf(0, n, d);
            const Var sc = leaf(static_cast<size_t>(n) * d, 1, d);
            const Var sh = leaf(static_cast<size_t>(n) * d + d, 1, d);
            const Var y = tp.silu(tp.modulate(tp.layernorm(xv, 1e-6), sc, sh));
            return tp.mse_loss(y, target.data());
        },
        params);
}

TEST_CASE("gate_residual gradients") {
    const int n = 3, d = 5;
    const auto target = randn(static_cast<size_t>(n) * d, 15);
    std::vector<double> params = randn(static_cast<size_t>(2 * n) * d + d, 16, 0.9);
    check_gradients(
        [&](Tape<double>& tp, const double* p, double* g) {
            const auto leaf = [&](size_t off, int r, int c) {
                return g ? tp.param(p + off, g + off, r, c) : tp.input(p + off, r, c);
            };
            const Var x = leaf(0, n, d);
            const Var r = leaf(static_cast<size_t>(n) * d, n, d);
            const Var gate = leaf(static_cast<size_t>(2 * n) * d, 1, d);
            return tp.mse_loss(tp.gate_residual(x, r, gate), target.data());
        },
        params);
}

TEST_CASE("attention gradients with a masked key") {
    const int n = 5, d = 8, heads = 2;
    const auto target = randn(static_cast<size_t>(n) * d, 21);
    std::vector<double> params = randn(static_cast<size_t>(3 * n) * d, 22, 0.6);
    std::vector<uint8_t> mask(static_cast<size_t>(n), 0);
    mask[3] = 1;
    check_gradients(
        [&](Tape<double>& tp, const double* p, double* g) {
            const auto leaf = [&](size_t off) {
                return g ? tp.param(p + off, g + off, n, d) : tp.input(p + off, n, d);
            };
            const Var q = leaf(0);
            const Var k = leaf(static_cast<size_t>(n) * d);
            const Var v = leaf(static_cast<size_t>(2 * n) * d);
            return tp.mse_loss(tp.attention(q, k, v, heads, mask), target.data());
        },
        params);
}

TEST_CASE("masked keys receive no gradient through attention") {
    const int n = 4, d = 4;
    std::vector<double> params = randn(static_cast<size_t>(3 * n) * d, 31);
    std::vector<double> grads(params.size(), 0.0);
    std::vector<uint8_t> mask(static_cast<size_t>(n), 0);
    mask[1] = 1;
    const auto target = randn(static_cast<size_t>(n) * d, 32);
    Tape<double> tp(true);
    const Var q = tp.param(params.data(), grads.data(), n, d);
    const Var k = tp.param(params.data() + n * d, grads.data() + n * d, n, d);
    const Var v = tp.param(params.data() + 2 * n * d, grads.data() + 2 * n * d, n, d);
    tp.backward(tp.mse_loss(tp.attention(q, k, v, 1, mask), target.data()));
    // key row 1 and value row 1 are unreachable
    for (int c = 0; c < d; ++c) {
        CHECK(grads[static_cast<size_t>(n) * d + 1 * d + c] == 0.0);
        CHECK(grads[static_cast<size_t>(2 * n) * d + 1 * d + c] == 0.0);
    }
}

TEST_CASE("gather/concat/slice/replace/broadcast gradients") {
    const int v_rows = 6, d = 4;
    const std::vector<int> ids = {2, 0, 5, 2};
    const std::vector<int> positions = {1, 3};
    const auto target = randn(static_cast<size_t>(ids.size() + 2) * d, 41);
    std::vector<double> params = randn(static_cast<size_t>(v_rows) * d + 2 * d + d, 42, 0.8);
    check_gradients(
        [&](Tape<double>& tp, const double* p, double* g) {
            const auto leaf = [&](size_t off, int r, int c) {
                return g ? tp.param(p + off, g + off, r, c) : tp.input(p + off, r, c);
            };
            const Var table = leaf(0, v_rows, d);
            const Var feats = leaf(static_cast<size_t>(v_rows) * d, 2, d);
            const Var row = leaf(static_cast<size_t>(v_rows) * d + 2 * d, 1, d);
            const Var gathered = tp.gather_rows(table, ids);             // 4 x d
            const Var injected = tp.replace_rows(gathered, feats, positions);
            const Var extra = tp.broadcast_row(row, 2);                  // 2 x d
            const Var joined = tp.concat_rows(injected, extra);          // 6 x d
            const Var back = tp.slice_rows(joined, 0, static_cast<int>(ids.size()) + 2);
            return tp.mse_loss(back, target.data());
        },
        params);
}

TEST_CASE("replace_rows blocks gradient to the replaced rows") {
    const int n = 3, d = 2;
    std::vector<double> params = randn(static_cast<size_t>(n) * d + d, 51);
    std::vector<double> grads(params.size(), 0.0);
    const auto target = randn(static_cast<size_t>(n) * d, 52);
    Tape<double> tp(true);
    const Var x = tp.param(params.data(), grads.data(), n, d);
    const Var feats = tp.param(params.data() + n * d, grads.data() + n * d, 1, d);
    tp.backward(tp.mse_loss(tp.replace_rows(x, feats, {1}), target.data()));
    for (int c = 0; c < d; ++c) CHECK(grads[static_cast<size_t>(d) + c] == 0.0);  // replaced row
    CHECK(grads[0] != 0.0);
}

TEST_CASE("gather_index permutation gradients") {
    const int n = 2, d = 6;
    auto idx = std::make_shared<std::vector<int>>(std::vector<int>{11, 3, 7, 0, 5, 9, 1, 2, 4, 6, 8, 10});
    const auto target = randn(static_cast<size_t>(n) * d, 61);
    std::vector<double> params = randn(static_cast<size_t>(n) * d, 62);
    check_gradients(
        [&](Tape<double>& tp, const double* p, double* g) {
            const Var x = g ? tp.param(p, g, n, d) : tp.input(p, n, d);
            return tp.mse_loss(tp.gather_index(x, idx, 3, 4), target.data());
        },
        params);
}

TEST_CASE("inference tape stores no backward state") {
    Tape<float> tp(false);
    std::vector<float> x = {1.0f, 2.0f, 3.0f, 4.0f};
    const Var a = tp.input(x.data(), 2, 2);
    const Var y = tp.gelu(a);
    CHECK_FALSE(tp.needs_grad(y));
    CHECK_THROWS_AS(tp.backward(y), ConfigError);
}
