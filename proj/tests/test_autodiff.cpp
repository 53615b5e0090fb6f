#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "autodiff.hpp"
#include "optim.hpp"
#include "support.hpp"

using namespace spnn;
namespace ops = spnn::ad;
using ops::Tape;
using ops::Var;
using testsup::fd_gradient;
using testsup::grad_error;

namespace {

// Random tensor with entries kept away from kinks of relu/abs/max windows.
Tensor rand_away_from_kinks(const Shape& shape, Rng& rng, double margin = 0.05) {
    Tensor t(shape);
    for (size_t i = 0; i < t.numel(); ++i) {
        double v;
        do {
            v = rng.uniform(-2.0, 2.0);
        } while (std::fabs(v) < margin);
        t[i] = v;
    }
    return t;
}

// Scalarize: sum(out * R) with a fixed random weighting so every output
// element contributes to the checked gradient.
Var weighted_sum(Tape& tape, Var out, const Tensor& r) {
    Var rv = tape.constant(r);
    return ops::sum(ops::mul(out, rv));
}

// Check d loss / d x for `build` (tape, x) -> output var against central
// finite differences, at the given input.
void check_gradient(const std::function<Var(Tape&, Var)>& build, const Tensor& x, Rng& rng,
                    double tol = 1e-6) {
    Tape probe;
    Var xv0 = probe.input(x, true);
    Var out0 = build(probe, xv0);
    Tensor r = Tensor::normal(out0.value().shape(), rng);

    auto scalar_of = [&](const Tensor& in) {
        Tape t;
        Var xv = t.input(in, true);
        Var loss = weighted_sum(t, build(t, xv), r);
        return loss.value()[0];
    };

    Tape t;
    Var xv = t.input(x, true);
    Var loss = weighted_sum(t, build(t, xv), r);
    ops::GradMap g = t.backward(loss);
    Tensor got = g.at(xv);
    Tensor want = fd_gradient(scalar_of, x);
    CAPTURE(shape_str(x.shape()));
    CHECK(grad_error(got, want) <= tol);
}

}  // namespace

TEST_CASE("forward values of elementwise catalog entries") {
    Tape t;
    Var x = t.input(Tensor({2}, {-1.0, 2.0}), false);
    CHECK(ops::relu(x).value()[0] == 0.0);
    CHECK(ops::relu(x).value()[1] == 2.0);

    Var s = t.input(Tensor({1, 2}, {0.0, 0.0}), false);
    Tensor sm = ops::softmax(s).value();
    CHECK(sm[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(sm[1] == doctest::Approx(0.5).epsilon(1e-12));

    // KL(p, p) = 0 for any valid categorical p
    Rng rng(7);
    for (int rep = 0; rep < 10; ++rep) {
        Tensor p({1, 4});
        double tot = 0.0;
        for (size_t i = 0; i < 4; ++i) {
            p[i] = rng.uniform(0.05, 1.0);
            tot += p[i];
        }
        p.scale_(1.0 / tot);
        Tape t2;
        Var pv = t2.input(p, false);
        CHECK(ops::kl_div(pv, pv).value()[0] == doctest::Approx(0.0).epsilon(1e-15));
    }
}

TEST_CASE("gradient check: every primitive vs central finite differences, 100+ cases each") {
    Rng rng(12345);
    auto shapes = [&](int rep) -> Shape {
        switch (rep % 4) {
            case 0: return {3};
            case 1: return {2, 3};
            case 2: return {2, 2, 2};
            default: return {static_cast<size_t>(1 + rep % 3), 4};
        }
    };

    SUBCASE("unary elementwise") {
        for (int rep = 0; rep < 100; ++rep) {
            Shape sh = shapes(rep);
            Tensor x = rand_away_from_kinks(sh, rng);
            check_gradient([](Tape& t, Var v) { (void)t; return ops::relu(v); }, x, rng);
            check_gradient([](Tape& t, Var v) { (void)t; return ops::abs(v); }, x, rng);
            check_gradient([](Tape& t, Var v) { (void)t; return ops::exp(v); }, x, rng);
            check_gradient([](Tape& t, Var v) { (void)t; return ops::softplus(v); }, x, rng);
            check_gradient([](Tape& t, Var v) { (void)t; return ops::scale(v, 1.7); }, x, rng);
            check_gradient([](Tape& t, Var v) { (void)t; return ops::add_scalar(v, -0.3); }, x, rng);
            check_gradient([](Tape& t, Var v) { (void)t; return ops::neg(v); }, x, rng);

            Tensor pos = x;
            pos.map_([](double v) { return std::fabs(v) + 0.2; });
            check_gradient([](Tape& t, Var v) { (void)t; return ops::log(v); }, pos, rng);
            check_gradient([](Tape& t, Var v) { (void)t; return ops::pow_scalar(v, 2.0); }, x, rng);
            check_gradient([](Tape& t, Var v) { (void)t; return ops::pow_scalar(v, 2.5); }, pos, rng);
        }
    }

    SUBCASE("binary elementwise with broadcasting") {
        for (int rep = 0; rep < 100; ++rep) {
            Shape sa = {2, 3};
            Shape sb = (rep % 3 == 0) ? Shape{2, 3} : (rep % 3 == 1) ? Shape{3} : Shape{1, 3};
            Tensor a = Tensor::normal(sa, rng);
            Tensor b = Tensor::normal(sb, rng);
            // grad wrt a with b fixed
            check_gradient(
                [&b](Tape& t, Var v) { return ops::add(v, t.constant(b)); }, a, rng);
            check_gradient(
                [&b](Tape& t, Var v) { return ops::mul(v, t.constant(b)); }, a, rng);
            check_gradient(
                [&b](Tape& t, Var v) { return ops::sub(v, t.constant(b)); }, a, rng);
            // grad wrt the broadcast side
            check_gradient(
                [&a](Tape& t, Var v) { return ops::add(t.input(a, false), v); }, b, rng);
            check_gradient(
                [&a](Tape& t, Var v) { return ops::mul(t.input(a, false), v); }, b, rng);
        }
    }

    SUBCASE("matmul") {
        for (int rep = 0; rep < 100; ++rep) {
            size_t m = 1 + rep % 3, k = 2 + rep % 2, n = 1 + (rep / 2) % 3;
            Tensor a = Tensor::normal({m, k}, rng);
            Tensor b = Tensor::normal({k, n}, rng);
            check_gradient([&b](Tape& t, Var v) { return ops::matmul(v, t.constant(b)); }, a, rng);
            check_gradient([&a](Tape& t, Var v) { return ops::matmul(t.constant(a), v); }, b, rng);
        }
    }

    SUBCASE("linear") {
        for (int rep = 0; rep < 100; ++rep) {
            size_t n = 1 + rep % 3, in = 2 + rep % 3, out = 1 + (rep / 3) % 3;
            Tensor x = Tensor::normal({n, in}, rng);
            Tensor w = Tensor::normal({out, in}, rng);
            check_gradient([&w](Tape& t, Var v) { return ops::linear(v, t.constant(w)); }, x, rng);
            check_gradient([&x](Tape& t, Var v) { return ops::linear(t.constant(x), v); }, w, rng);
        }
    }

    SUBCASE("conv2d") {
        for (int rep = 0; rep < 100; ++rep) {
            size_t C = 1 + rep % 2, F = 1 + (rep / 2) % 2, H = 4 + rep % 2;
            size_t pad = rep % 2;
            Tensor x = Tensor::normal({1, C, H, 4}, rng);
            Tensor w = Tensor::normal({F, C, 3, 3}, rng);
            check_gradient([&w, pad](Tape& t, Var v) { return ops::conv2d(v, t.constant(w), pad); },
                           x, rng);
            check_gradient([&x, pad](Tape& t, Var v) { return ops::conv2d(t.constant(x), v, pad); },
                           w, rng);
        }
    }

    SUBCASE("maxpool, reshape, select") {
        for (int rep = 0; rep < 100; ++rep) {
            Tensor x = rand_away_from_kinks({1, 2, 4, 4}, rng, 0.0);
            // Separate window entries so FD never crosses the argmax tie.
            for (size_t i = 0; i < x.numel(); ++i) x[i] += 1e-2 * static_cast<double>(i % 7);
            check_gradient([](Tape& t, Var v) { (void)t; return ops::maxpool2(v); }, x, rng);
            check_gradient([](Tape& t, Var v) { (void)t; return ops::reshape(v, {4, 8}); }, x, rng);
            check_gradient([](Tape& t, Var v) { (void)t; return ops::flatten(v); }, x, rng);
            size_t pick = static_cast<size_t>(rep) % x.numel();
            check_gradient([pick](Tape& t, Var v) { (void)t; return ops::select(v, pick); }, x, rng);
        }
    }

    SUBCASE("softmax family and reductions") {
        for (int rep = 0; rep < 100; ++rep) {
            Tensor x = Tensor::normal({2, static_cast<size_t>(2 + rep % 4)}, rng);
            check_gradient([](Tape& t, Var v) { (void)t; return ops::softmax(v); }, x, rng);
            check_gradient([](Tape& t, Var v) { (void)t; return ops::log_softmax(v); }, x, rng);
            check_gradient([](Tape& t, Var v) { (void)t; return ops::sum(v); }, x, rng);
            check_gradient([](Tape& t, Var v) { (void)t; return ops::mean(v); }, x, rng);
        }
    }

    SUBCASE("losses") {
        for (int rep = 0; rep < 100; ++rep) {
            size_t R = 1 + rep % 3, C = 3;
            Tensor logits = Tensor::normal({R, C}, rng);
            std::vector<size_t> labels(R);
            for (size_t i = 0; i < R; ++i) labels[i] = rng.integer(C);
            Tensor target = ops::onehot(labels, C);
            check_gradient(
                [&target](Tape& t, Var v) { return ops::cross_entropy(v, t.constant(target)); },
                logits, rng);
            // soft targets and the target-side gradient
            Tensor soft({R, C});
            for (size_t r = 0; r < R; ++r) {
                double tot = 0.0;
                for (size_t c = 0; c < C; ++c) {
                    soft[r * C + c] = rng.uniform(0.1, 1.0);
                    tot += soft[r * C + c];
                }
                for (size_t c = 0; c < C; ++c) soft[r * C + c] /= tot;
            }
            check_gradient(
                [&soft](Tape& t, Var v) { return ops::cross_entropy(v, t.constant(soft)); }, logits,
                rng);
            check_gradient(
                [&logits](Tape& t, Var v) { return ops::cross_entropy(t.constant(logits), v); },
                soft, rng);

            auto rows = [&] {
                Tensor p({R, C});
                for (size_t r = 0; r < R; ++r) {
                    double tot = 0.0;
                    for (size_t c = 0; c < C; ++c) {
                        p[r * C + c] = rng.uniform(0.1, 1.0);
                        tot += p[r * C + c];
                    }
                    for (size_t c = 0; c < C; ++c) p[r * C + c] /= tot;
                }
                return p;
            };
            Tensor p = rows(), q = rows();
            check_gradient([&q](Tape& t, Var v) { return ops::kl_div(v, t.constant(q)); }, p, rng);
            check_gradient([&p](Tape& t, Var v) { return ops::kl_div(t.constant(p), v); }, q, rng);
        }
    }
}

TEST_CASE("straight-through mask routes gout*w into scores") {
    Rng rng(99);
    Tensor w = Tensor::normal({3, 2}, rng);
    Tensor s = Tensor::normal({3, 2}, rng);
    Tensor m({3, 2}, {1, 0, 1, 1, 0, 0});
    Tensor r = Tensor::normal({3, 2}, rng);

    Tape t;
    Var wv = t.input(w, false);
    Var sv = t.input(s, true);
    Var out = ops::straight_through_mask(wv, sv, m);
    // forward equals w*mask
    for (size_t i = 0; i < w.numel(); ++i) CHECK(out.value()[i] == w[i] * m[i]);
    Var loss = ops::sum(ops::mul(out, t.constant(r)));
    ops::GradMap g = t.backward(loss);
    Tensor gs = g.at(sv);
    for (size_t i = 0; i < w.numel(); ++i) CHECK(gs[i] == doctest::Approx(r[i] * w[i]).epsilon(1e-15));
}

TEST_CASE("backward basics from the operation contract") {
    // d(x^2)/dx at x=3 -> 6
    Tape t;
    Var x = t.input(Tensor::scalar(3.0), true);
    Var y = ops::pow_scalar(x, 2.0);
    ops::GradMap g = t.backward(y);
    CHECK(g.at(x)[0] == doctest::Approx(6.0).epsilon(1e-12));

    // d(relu(x))/dx at x=-1 -> 0
    Tape t2;
    Var x2 = t2.input(Tensor::scalar(-1.0), true);
    ops::GradMap g2 = t2.backward(ops::relu(x2));
    CHECK(g2.at(x2)[0] == 0.0);

    // non-scalar loss -> error
    Tape t3;
    Var x3 = t3.input(Tensor({2}, {1.0, 2.0}), true);
    Var y3 = ops::relu(x3);
    CHECK_THROWS_AS(t3.backward(y3), Error);
}

TEST_CASE("gradient map: reachable leaves only, zeros for unreachable") {
    Tape t;
    Var a = t.input(Tensor({2}, {1.0, 2.0}), true);
    Var b = t.input(Tensor({2}, {3.0, 4.0}), true);  // never used
    Var loss = ops::sum(ops::mul(a, a));
    ops::GradMap g = t.backward(loss);
    CHECK(g.contains(a));
    CHECK_FALSE(g.contains(b));
    Tensor gb = g.at(b);
    CHECK(gb.same_shape(b.value()));
    CHECK(gb[0] == 0.0);
    CHECK(gb[1] == 0.0);
}

TEST_CASE("full-model cross-entropy gradient matches finite differences (3-layer MLP)") {
    Rng rng(2024);
    const size_t in = 6, h1 = 5, h2 = 4, classes = 3, batch = 4;
    Tensor w1 = Tensor::normal({in, h1}, rng, 0.0, 0.5);
    Tensor w2 = Tensor::normal({h1, h2}, rng, 0.0, 0.5);
    Tensor w3 = Tensor::normal({h2, classes}, rng, 0.0, 0.5);
    Tensor x = Tensor::normal({batch, in}, rng);
    std::vector<size_t> labels(batch);
    for (size_t i = 0; i < batch; ++i) labels[i] = rng.integer(classes);
    Tensor target = ops::onehot(labels, classes);

    auto loss_at = [&](const Tensor& w1v, const Tensor& w2v, const Tensor& w3v) {
        Tape t;
        Var xv = t.constant(x);
        Var h = ops::relu(ops::matmul(xv, t.input(w1v, false)));
        Var h2v = ops::relu(ops::matmul(h, t.input(w2v, false)));
        Var logits = ops::matmul(h2v, t.input(w3v, false));
        return ops::cross_entropy(logits, t.constant(target)).value()[0];
    };

    Tape t;
    Var xv = t.constant(x);
    Var v1 = t.input(w1, true), v2 = t.input(w2, true), v3 = t.input(w3, true);
    Var h = ops::relu(ops::matmul(xv, v1));
    Var hh = ops::relu(ops::matmul(h, v2));
    Var logits = ops::matmul(hh, v3);
    Var loss = ops::cross_entropy(logits, t.constant(target));
    ops::GradMap g = t.backward(loss);

    Tensor fd1 = fd_gradient([&](const Tensor& w) { return loss_at(w, w2, w3); }, w1);
    Tensor fd2 = fd_gradient([&](const Tensor& w) { return loss_at(w1, w, w3); }, w2);
    Tensor fd3 = fd_gradient([&](const Tensor& w) { return loss_at(w1, w2, w); }, w3);
    CHECK(grad_error(g.at(v1), fd1) <= 1e-6);
    CHECK(grad_error(g.at(v2), fd2) <= 1e-6);
    CHECK(grad_error(g.at(v3), fd3) <= 1e-6);
}

TEST_CASE("tape determinism: identical seed and inputs give bitwise identical loss and grads") {
    auto run = [] {
        Rng rng(55);
        Tensor w = Tensor::normal({4, 3}, rng);
        Tensor x = Tensor::normal({2, 4}, rng);
        Tape t;
        Var wv = t.input(w, true);
        Var logits = ops::matmul(t.constant(x), wv);
        Var loss = ops::mean(ops::pow_scalar(logits, 2.0));
        ops::GradMap g = t.backward(loss);
        return std::pair<double, Tensor>(loss.value()[0], g.at(wv));
    };
    auto [l1, g1] = run();
    auto [l2, g2] = run();
    CHECK(std::memcmp(&l1, &l2, sizeof(double)) == 0);
    CHECK(g1.equals(g2));
}

TEST_CASE("hvp: quadratic losses and dense-Hessian oracle") {
    // L(w) = 0.5 w^T A w with A = diag(2, 4); Hv = Av
    Tensor a({2, 2}, {2.0, 0.0, 0.0, 4.0});
    ops::GradFn grad_quadratic = [&a](const std::vector<Tensor>& ws) {
        const Tensor& w = ws[0];
        Tensor g({2});
        g[0] = a[0] * w[0] + a[1] * w[1];
        g[1] = a[2] * w[0] + a[3] * w[1];
        return std::vector<Tensor>{g};
    };

    Tensor w({2}, {0.7, -1.3});
    Tensor v({2}, {1.0, 1.0});
    auto hv = ops::hvp(grad_quadratic, {w}, {v});
    CHECK(hv[0][0] == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(hv[0][1] == doctest::Approx(4.0).epsilon(1e-6));

    // v = 0 -> Hv = 0
    Tensor z = Tensor::zeros({2});
    auto hz = ops::hvp(grad_quadratic, {w}, {z});
    CHECK(hz[0][0] == 0.0);
    CHECK(hz[0][1] == 0.0);

    // empty params -> error
    CHECK_THROWS_AS(ops::hvp(grad_quadratic, {}, {}), Error);
}

TEST_CASE("hvp matches dense finite-difference Hessian on a random 2-layer net") {
    Rng rng(31);
    const size_t in = 3, hid = 2, classes = 2, batch = 3;  // 3*2 + 2*2 = 10 params
    Tensor x = Tensor::normal({batch, in}, rng);
    std::vector<size_t> labels = {0, 1, 0};
    Tensor target = ops::onehot(labels, classes);

    auto unpack = [&](const std::vector<double>& flat) {
        Tensor w1({in, hid});
        Tensor w2({hid, classes});
        for (size_t i = 0; i < w1.numel(); ++i) w1[i] = flat[i];
        for (size_t i = 0; i < w2.numel(); ++i) w2[i] = flat[w1.numel() + i];
        return std::pair<Tensor, Tensor>(w1, w2);
    };
    auto loss_flat = [&](const std::vector<double>& flat) {
        auto [w1, w2] = unpack(flat);
        Tape t;
        Var h = ops::softplus(ops::matmul(t.constant(x), t.input(w1, false)));
        Var logits = ops::matmul(h, t.input(w2, false));
        return ops::cross_entropy(logits, t.constant(target)).value()[0];
    };
    ops::GradFn grad_fn = [&](const std::vector<Tensor>& ws) {
        Tape t;
        Var v1 = t.input(ws[0], true), v2 = t.input(ws[1], true);
        Var h = ops::softplus(ops::matmul(t.constant(x), v1));
        Var logits = ops::matmul(h, v2);
        ops::GradMap g = t.backward(ops::cross_entropy(logits, t.constant(target)));
        return std::vector<Tensor>{g.at(v1), g.at(v2)};
    };

    Rng wr(77);
    Tensor w1 = Tensor::normal({in, hid}, wr, 0.0, 0.8);
    Tensor w2 = Tensor::normal({hid, classes}, wr, 0.0, 0.8);
    std::vector<double> flat;
    for (size_t i = 0; i < w1.numel(); ++i) flat.push_back(w1[i]);
    for (size_t i = 0; i < w2.numel(); ++i) flat.push_back(w2[i]);

    auto H = testsup::fd_hessian(loss_flat, flat);

    Rng vr(5);
    Tensor v1 = Tensor::normal({in, hid}, vr);
    Tensor v2 = Tensor::normal({hid, classes}, vr);
    std::vector<double> vflat;
    for (size_t i = 0; i < v1.numel(); ++i) vflat.push_back(v1[i]);
    for (size_t i = 0; i < v2.numel(); ++i) vflat.push_back(v2[i]);

    auto hv = ops::hvp(grad_fn, {w1, w2}, {v1, v2});
    std::vector<double> got;
    for (size_t i = 0; i < hv[0].numel(); ++i) got.push_back(hv[0][i]);
    for (size_t i = 0; i < hv[1].numel(); ++i) got.push_back(hv[1][i]);

    for (size_t i = 0; i < flat.size(); ++i) {
        double want = 0.0;
        for (size_t j = 0; j < flat.size(); ++j) want += H[i][j] * vflat[j];
        CHECK(std::fabs(got[i] - want) / std::max({1.0, std::fabs(got[i]), std::fabs(want)}) <= 1e-4);
    }
}

TEST_CASE("optimizer: SGD, mask contract, Adam first-step magnitude") {
    SUBCASE("sgd definition") {
        Optimizer opt(OptimizerKind::sgd, 0.1);
        Tensor w = Tensor::scalar(1.0);
        Tensor g = Tensor::scalar(2.0);
        opt.step({&w}, {g});
        CHECK(w[0] == doctest::Approx(0.8).epsilon(1e-15));
    }
    SUBCASE("masked weight stays exactly zero under both optimizers") {
        for (OptimizerKind kind : {OptimizerKind::sgd, OptimizerKind::adam}) {
            Optimizer opt(kind, 0.05);
            Tensor w({2}, {0.0, 1.0});
            Tensor mask({2}, {0.0, 1.0});
            Rng rng(3);
            for (int step = 0; step < 25; ++step) {
                Tensor g = Tensor::normal({2}, rng);
                opt.step({&w}, {g}, {&mask});
                CHECK(w[0] == 0.0);
            }
        }
    }
    SUBCASE("adam first step has magnitude ~ lr") {
        double lr = 2e-3;
        Optimizer opt(OptimizerKind::adam, lr);
        Tensor w = Tensor::scalar(0.4);
        Tensor g = Tensor::scalar(-1.7);
        opt.step({&w}, {g});
        double delta = std::fabs(w[0] - 0.4);
        CHECK(delta == doctest::Approx(lr).epsilon(1e-6));
    }
}
