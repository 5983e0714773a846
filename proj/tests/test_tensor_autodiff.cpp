#include <cmath>
#include <vector>

#include "doctest.h"
#include "testutil.hpp"
#include "xraygan/autodiff.hpp"
#include "xraygan/rng.hpp"
#include "xraygan/tensor.hpp"

using namespace xraygan;
using testutil::check_grads;
using testutil::dot;
using testutil::random_tensor;

namespace {

Tensor away_from_zero(Shape shape, Rng& rng, double margin = 0.05) {
    Tensor t = random_tensor(std::move(shape), rng);
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        t[i] += t[i] >= 0.0 ? margin : -margin;
    }
    return t;
}

}  // namespace

TEST_CASE("tensor shape bookkeeping") {
    Tensor t(Shape{2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
    CHECK(t.numel() == 6);
    CHECK(t.at({1, 2}) == 6.0);
    CHECK(t.at({0, 1}) == 2.0);
    Tensor r = t.reshaped(Shape{3, 2});
    CHECK(r.at({2, 1}) == 6.0);
    CHECK_THROWS(t.reshaped(Shape{4, 2}));
    CHECK(Tensor::scalar(3.5).item() == 3.5);
    CHECK_THROWS(t.item());
}

TEST_CASE("broadcast shape resolution") {
    CHECK(broadcast_shapes({2, 3}, {3}) == Shape{2, 3});
    CHECK(broadcast_shapes({2, 1, 4}, {3, 1}) == Shape{2, 3, 4});
    CHECK(broadcast_shapes({}, {5}) == Shape{5});
    CHECK_THROWS(broadcast_shapes({2, 3}, {4}));
}

TEST_CASE("elementwise forward values") {
    auto a = ad::leaf(Tensor(Shape{2}, {1.0, -2.0}), true);
    auto b = ad::leaf(Tensor(Shape{2}, {3.0, 5.0}), true);
    CHECK(ad::add(a, b).value()[1] == 3.0);
    CHECK(ad::sub(a, b).value()[0] == -2.0);
    CHECK(ad::mul(a, b).value()[1] == -10.0);
    CHECK(ad::div(b, a).value()[1] == -2.5);
    CHECK(ad::neg(a).value()[1] == 2.0);
    CHECK((a + 1.0).value()[0] == 2.0);
    CHECK((2.0 * b).value()[1] == 10.0);
    CHECK((1.0 - a).value()[1] == 3.0);
}

TEST_CASE("matmul matches a hand computation") {
    auto a = ad::constant(Tensor(Shape{2, 2}, {1, 2, 3, 4}));
    auto b = ad::constant(Tensor(Shape{2, 2}, {5, 6, 7, 8}));
    auto c = ad::matmul(a, b);
    CHECK(c.value().at({0, 0}) == 19.0);
    CHECK(c.value().at({0, 1}) == 22.0);
    CHECK(c.value().at({1, 0}) == 43.0);
    CHECK(c.value().at({1, 1}) == 50.0);
    auto t = ad::transpose2d(a);
    CHECK(t.value().at({0, 1}) == 3.0);
}

TEST_CASE("reductions and broadcast forward values") {
    auto x = ad::constant(Tensor(Shape{2, 3}, {1, 2, 3, 4, 5, 6}));
    CHECK(ad::sum(x).value().item() == 21.0);
    CHECK(ad::mean(x).value().item() == 3.5);
    auto r0 = ad::reduce_sum(x, 0);
    CHECK(r0.shape() == Shape{3});
    CHECK(r0.value()[0] == 5.0);
    auto r1 = ad::reduce_sum(x, 1);
    CHECK(r1.shape() == Shape{2});
    CHECK(r1.value()[1] == 15.0);
    auto st = ad::sum_to(x, Shape{1, 3});
    CHECK(st.value()[2] == 9.0);
    auto bc = ad::broadcast_to(ad::constant(Tensor(Shape{3}, {1, 2, 3})), Shape{2, 3});
    CHECK(bc.value().at({1, 2}) == 3.0);
}

TEST_CASE("slice embed concat roundtrip") {
    auto x = ad::constant(Tensor(Shape{2, 4}, {1, 2, 3, 4, 5, 6, 7, 8}));
    auto s = ad::slice(x, 1, 1, 2);
    CHECK(s.shape() == Shape{2, 2});
    CHECK(s.value().at({1, 0}) == 6.0);
    auto e = ad::embed_slice(s, 1, 1, 4);
    CHECK(e.value().at({0, 0}) == 0.0);
    CHECK(e.value().at({0, 1}) == 2.0);
    CHECK(e.value().at({1, 3}) == 0.0);
    auto c = ad::concat({s, s}, 0);
    CHECK(c.shape() == Shape{4, 2});
    CHECK(c.value().at({3, 1}) == 7.0);
    auto rows = ad::stack_rows({ad::constant(Tensor(Shape{3}, {1, 2, 3})),
                                ad::constant(Tensor(Shape{3}, {4, 5, 6}))});
    CHECK(rows.shape() == Shape{2, 3});
    CHECK(rows.value().at({1, 2}) == 6.0);
}

TEST_CASE("row gather and scatter") {
    auto x = ad::constant(Tensor(Shape{3, 2}, {1, 2, 3, 4, 5, 6}));
    auto g = ad::index_rows(x, {2, 0, 2});
    CHECK(g.shape() == Shape{3, 2});
    CHECK(g.value().at({0, 1}) == 6.0);
    CHECK(g.value().at({1, 0}) == 1.0);
    auto sc = ad::scatter_rows(ad::constant(Tensor(Shape{2, 2}, {1, 2, 3, 4})), {0, 0}, 2);
    CHECK(sc.value().at({0, 0}) == 4.0);
    CHECK(sc.value().at({0, 1}) == 6.0);
    CHECK(sc.value().at({1, 0}) == 0.0);
}

TEST_CASE("conv2d matches hand computations") {
    auto x = ad::constant(Tensor(Shape{1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9}));
    auto w = ad::constant(Tensor(Shape{1, 1, 2, 2}, {1, 0, 0, 1}));
    auto y = ad::conv2d(x, w, 1, 0);
    CHECK(y.shape() == Shape{1, 1, 2, 2});
    CHECK(y.value()[0] == 6.0);
    CHECK(y.value()[1] == 8.0);
    CHECK(y.value()[2] == 12.0);
    CHECK(y.value()[3] == 14.0);
    auto y2 = ad::conv2d(x, w, 2, 1);
    CHECK(y2.shape() == Shape{1, 1, 2, 2});
    CHECK(y2.value()[0] == 1.0);
    CHECK(y2.value()[1] == 3.0);
    CHECK(y2.value()[2] == 7.0);
    CHECK(y2.value()[3] == 14.0);
}

TEST_CASE("bilinear doubling uses half pixel tap weights") {
    auto x = ad::constant(Tensor(Shape{1, 1, 1, 2}, {2.0, 6.0}));
    auto y = ad::upsample_bilinear2x(x);
    CHECK(y.shape() == Shape{1, 1, 2, 4});
    for (int row = 0; row < 2; ++row) {
        CHECK(y.value().at({0, 0, row, 0}) == 2.0);
        CHECK(y.value().at({0, 0, row, 1}) == doctest::Approx(3.0).epsilon(1e-12));
        CHECK(y.value().at({0, 0, row, 2}) == doctest::Approx(5.0).epsilon(1e-12));
        CHECK(y.value().at({0, 0, row, 3}) == 6.0);
    }
}

TEST_CASE("softmax rows are simplex points") {
    auto x = ad::constant(Tensor(Shape{2, 2}, {0.0, std::log(2.0), 100.0, 100.0}));
    auto s = ad::softmax_lastdim(x);
    CHECK(s.value()[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
    CHECK(s.value()[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
    CHECK(s.value()[2] == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(s.value()[2] + s.value()[3] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("unary forward special points") {
    auto z = ad::constant(Tensor(Shape{3}, {0.0, 1.0, 4.0}));
    auto sq = ad::sqrt(z);
    CHECK(sq.value()[0] == 0.0);
    CHECK(sq.value()[2] == 2.0);
    auto sg = ad::sigmoid(ad::constant(Tensor(Shape{1}, {0.0})));
    CHECK(sg.value()[0] == 0.5);
    auto ab = ad::abs(ad::constant(Tensor(Shape{2}, {-3.0, 3.0})));
    CHECK(ab.value()[0] == 3.0);
    auto lr = ad::leaky_relu(ad::constant(Tensor(Shape{2}, {-1.0, 2.0})), 0.2);
    CHECK(lr.value()[0] == -0.2);
    CHECK(lr.value()[1] == 2.0);
}

TEST_CASE("gradients of arithmetic with broadcasting") {
    Rng rng(1);
    auto a = ad::leaf(random_tensor(Shape{2, 3}, rng), true);
    auto b = ad::leaf(random_tensor(Shape{3}, rng, 0.5, 1.5), true);
    check_grads([&] { return ad::sum(ad::mul(ad::add(a, b), ad::sub(a, 0.5))); }, {a, b});
    check_grads([&] { return ad::sum(ad::div(a, b)); }, {a, b});
    check_grads([&] { return ad::mean(ad::neg(ad::mul(a, 3.0))); }, {a});
}

TEST_CASE("gradients of unary maps") {
    Rng rng(2);
    auto x = ad::leaf(random_tensor(Shape{2, 3}, rng), true);
    auto pos = ad::leaf(random_tensor(Shape{2, 3}, rng, 0.2, 2.0), true);
    auto nz = ad::leaf(away_from_zero(Shape{2, 3}, rng), true);
    check_grads([&] { return ad::sum(ad::exp(x)); }, {x});
    check_grads([&] { return ad::sum(ad::log(pos)); }, {pos});
    check_grads([&] { return ad::sum(ad::tanh(x)); }, {x});
    check_grads([&] { return ad::sum(ad::sigmoid(x)); }, {x});
    check_grads([&] { return ad::sum(ad::relu(nz)); }, {nz});
    check_grads([&] { return ad::sum(ad::leaky_relu(nz, 0.2)); }, {nz});
    check_grads([&] { return ad::sum(ad::abs(nz)); }, {nz});
    check_grads([&] { return ad::sum(ad::sqrt(pos)); }, {pos});
    check_grads([&] { return ad::sum(ad::square(x)); }, {x});
}

TEST_CASE("gradients of matmul and shape ops") {
    Rng rng(3);
    auto a = ad::leaf(random_tensor(Shape{2, 3}, rng), true);
    auto b = ad::leaf(random_tensor(Shape{3, 4}, rng), true);
    check_grads([&] { return ad::sum(ad::square(ad::matmul(a, b))); }, {a, b});
    check_grads([&] { return ad::sum(ad::transpose2d(ad::mul(a, a))); }, {a});
    check_grads([&] { return ad::sum(ad::square(ad::reshape(a, Shape{3, 2}))); }, {a});
    check_grads([&] { return ad::sum(ad::square(ad::slice(a, 1, 1, 2))); }, {a});
    check_grads([&] { return ad::sum(ad::square(ad::embed_slice(a, 0, 1, 4))); }, {a});
    check_grads([&] { return ad::sum(ad::square(ad::concat({a, a}, 1))); }, {a});
    check_grads([&] { return ad::sum(ad::square(ad::reduce_sum(a, 0))); }, {a});
    check_grads([&] { return ad::sum(ad::square(ad::sum_to(a, Shape{1, 3}))); }, {a});
    check_grads([&] { return ad::sum(ad::square(ad::broadcast_to(a, Shape{4, 2, 3}))); }, {a});
    check_grads([&] { return ad::sum(ad::square(ad::softmax_lastdim(a))); }, {a});
}

TEST_CASE("gradients of row gather and scatter") {
    Rng rng(4);
    auto x = ad::leaf(random_tensor(Shape{4, 3}, rng), true);
    std::vector<std::int64_t> idx{1, 3, 1};
    check_grads([&] { return ad::sum(ad::square(ad::index_rows(x, idx))); }, {x});
    auto y = ad::leaf(random_tensor(Shape{3, 2}, rng), true);
    check_grads([&] { return ad::sum(ad::square(ad::scatter_rows(y, idx, 5))); }, {y});
}

TEST_CASE("gradients of stack_rows") {
    Rng rng(5);
    auto a = ad::leaf(random_tensor(Shape{3}, rng), true);
    auto b = ad::leaf(random_tensor(Shape{3}, rng), true);
    check_grads([&] { return ad::sum(ad::square(ad::stack_rows({a, b}))); }, {a, b});
}

TEST_CASE("gradients of conv2d across stride and padding") {
    Rng rng(6);
    for (auto [stride, pad] : std::vector<std::pair<int, int>>{{1, 0}, {1, 1}, {2, 1}}) {
        auto x = ad::leaf(random_tensor(Shape{2, 2, 5, 4}, rng), true);
        auto w = ad::leaf(random_tensor(Shape{3, 2, 3, 3}, rng), true);
        check_grads([&, s = stride, p = pad] {
            return ad::sum(ad::square(ad::conv2d(x, w, s, p)));
        }, {x, w}, 1e-5, 1e-5);
    }
}

TEST_CASE("gradients of bilinear doubling and its adjoint") {
    Rng rng(7);
    auto x = ad::leaf(random_tensor(Shape{1, 2, 3, 4}, rng), true);
    check_grads([&] { return ad::sum(ad::square(ad::upsample_bilinear2x(x))); }, {x});
    auto y = ad::leaf(random_tensor(Shape{1, 2, 6, 8}, rng), true);
    check_grads([&] { return ad::sum(ad::square(ad::upsample_bilinear2x_adjoint(y))); }, {y});
}

TEST_CASE("conv primitives satisfy the shared adjoint identities") {
    Rng rng(8);
    int stride = 2, pad = 1;
    Tensor xt = random_tensor(Shape{2, 3, 6, 5}, rng);
    Tensor wt = random_tensor(Shape{4, 3, 3, 3}, rng);
    auto x = ad::constant(xt);
    auto w = ad::constant(wt);
    auto y = ad::conv2d(x, w, stride, pad);
    Tensor gt = random_tensor(y.shape(), rng);
    auto g = ad::constant(gt);
    auto dx = ad::conv2d_dx(g, w, stride, pad, 6, 5);
    auto dw = ad::conv2d_dw(x, g, stride, pad, 3, 3);
    double yg = dot(y.value(), gt);
    double xdx = dot(xt, dx.value());
    double wdw = dot(wt, dw.value());
    CHECK(yg == doctest::Approx(xdx).epsilon(1e-12));
    CHECK(yg == doctest::Approx(wdw).epsilon(1e-12));
}

TEST_CASE("bilinear doubling adjoint identity") {
    Rng rng(9);
    Tensor xt = random_tensor(Shape{1, 2, 4, 3}, rng);
    Tensor yt = random_tensor(Shape{1, 2, 8, 6}, rng);
    auto up = ad::upsample_bilinear2x(ad::constant(xt));
    auto down = ad::upsample_bilinear2x_adjoint(ad::constant(yt));
    CHECK(dot(up.value(), yt) == doctest::Approx(dot(xt, down.value())).epsilon(1e-12));
}

TEST_CASE("second derivatives through the graph") {
    Rng rng(10);
    Tensor xt = random_tensor(Shape{2, 3}, rng, 0.2, 1.5);
    auto x = ad::leaf(xt, true);
    Tensor ct = random_tensor(Shape{2, 3}, rng);
    auto c = ad::constant(ct);

    auto y = ad::sum(ad::mul(ad::mul(x, x), x));
    auto g = ad::grad(y, {x}, {.create_graph = true})[0];
    auto s = ad::sum(ad::mul(g, c));
    auto h = ad::grad(s, {x})[0];
    for (std::int64_t i = 0; i < xt.numel(); ++i) {
        CHECK(h.value()[i] == doctest::Approx(6.0 * xt[i] * ct[i]).epsilon(1e-12));
    }
}

TEST_CASE("gradient penalty style double backward matches finite differences") {
    Rng rng(11);
    auto w = ad::leaf(random_tensor(Shape{3, 3}, rng), true);
    auto x = ad::leaf(random_tensor(Shape{2, 3}, rng), true);
    auto build = [&] {
        auto score = ad::sum(ad::tanh(ad::matmul(x, w)));
        auto gx = ad::grad(score, {x}, {.create_graph = true})[0];
        auto norm = ad::sqrt(ad::sum(ad::square(gx)));
        return ad::square(ad::sub(norm, 1.0));
    };
    check_grads(build, {w, x}, 1e-5, 1e-5);
}

TEST_CASE("conv gradient penalty double backward matches finite differences") {
    Rng rng(12);
    auto x = ad::leaf(random_tensor(Shape{1, 1, 4, 4}, rng), true);
    auto w = ad::leaf(random_tensor(Shape{2, 1, 3, 3}, rng), true);
    auto build = [&] {
        auto score = ad::sum(ad::tanh(ad::conv2d(x, w, 1, 1)));
        auto gx = ad::grad(score, {x}, {.create_graph = true})[0];
        auto norm = ad::sqrt(ad::sum(ad::square(gx)));
        return ad::square(ad::sub(norm, 1.0));
    };
    check_grads(build, {w, x}, 1e-5, 1e-5);
}

TEST_CASE("square root backward is zero at the origin") {
    auto x = ad::leaf(Tensor(Shape{2}, {0.0, 4.0}), true);
    auto y = ad::sum(ad::sqrt(x));
    auto g = ad::grad(y, {x})[0];
    CHECK(g.value()[0] == 0.0);
    CHECK(g.value()[1] == 0.25);
}

TEST_CASE("grad structural behaviors") {
    auto x = ad::leaf(Tensor(Shape{2}, {1.0, 2.0}), true);
    auto unused = ad::leaf(Tensor(Shape{3}, {0.0, 0.0, 0.0}), true);

    SUBCASE("reuse of an input accumulates") {
        auto y = ad::sum(ad::add(x, x));
        auto g = ad::grad(y, {x})[0];
        CHECK(g.value()[0] == 2.0);
        CHECK(g.value()[1] == 2.0);
    }
    SUBCASE("unconnected inputs get zeros") {
        auto y = ad::sum(x);
        auto g = ad::grad(y, {unused})[0];
        CHECK(g.shape() == Shape{3});
        CHECK(g.value()[0] == 0.0);
    }
    SUBCASE("results are detached unless a graph is requested") {
        auto y = ad::sum(ad::square(x));
        CHECK(!ad::grad(y, {x})[0].requires_grad());
        CHECK(ad::grad(y, {x}, {.create_graph = true})[0].requires_grad());
    }
    SUBCASE("detach blocks gradient flow") {
        auto y = ad::sum(ad::mul(ad::detach(x), x));
        auto g = ad::grad(y, {x})[0];
        CHECK(g.value()[0] == 1.0);
        CHECK(g.value()[1] == 2.0);
    }
    SUBCASE("custom seed gradient scales the result") {
        auto y = ad::mul(x, 3.0);
        Tensor seed(Shape{2}, {1.0, 10.0});
        auto g = ad::grad(y, {x}, {.grad_output = &seed})[0];
        CHECK(g.value()[0] == 3.0);
        CHECK(g.value()[1] == 30.0);
    }
}
