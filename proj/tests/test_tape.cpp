#include <doctest.h>

#include <cmath>
#include <vector>

#include "das/errors.hpp"
#include "das/rng.hpp"
#include "das/tape.hpp"
#include "support.hpp"

using namespace das;

TEST_CASE("bilinear sampling at integer coordinates equals direct indexing") {
    Rng rng(7);
    DenseMap m(5, 4, 2);
    for (double& v : m.values) v = rng.normal(0.0, 3.0);
    Tape tape;
    Var map = tape.leaf(m);
    for (int y = 0; y < 5; ++y) {
        for (int x = 0; x < 4; ++x) {
            double p[2] = {double(x), double(y)};
            Var out = tape.bilinear(map, tape.leaf(Shape{1, 1, 2}, p), 0, 2);
            CHECK(tape.val(out)[0] == m.at(x, y, 0));
            CHECK(tape.val(out)[1] == m.at(x, y, 1));
        }
    }
}

TEST_CASE("bilinear sampling of a constant map returns the constant") {
    DenseMap m(3, 3, 1, 2.5);
    Tape tape;
    Var map = tape.leaf(m);
    for (double x : {0.0, 0.3, 1.7, 2.0, -4.0, 9.0}) {
        double p[2] = {x, 1.1};
        Var out = tape.bilinear(map, tape.leaf(Shape{1, 1, 2}, p), 0, 1);
        CHECK(tape.val1(out) == doctest::Approx(2.5).epsilon(1e-12));
    }
}

TEST_CASE("bilinear 2x2 hand case") {
    // values (0,0)=0, (1,0)=1, (0,1)=2, (1,1)=3, query (0.5, 0.5) -> 1.5
    DenseMap m(2, 2, 1);
    m.at(0, 0) = 0;
    m.at(1, 0) = 1;
    m.at(0, 1) = 2;
    m.at(1, 1) = 3;
    Tape tape;
    double p[2] = {0.5, 0.5};
    Var out = tape.bilinear(tape.leaf(m), tape.leaf(Shape{1, 1, 2}, p), 0, 1);
    CHECK(tape.val1(out) == doctest::Approx(1.5).epsilon(1e-15));
}

TEST_CASE("bilinear sampling reproduces affine fields exactly in-bounds") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        double a = rng.normal(0, 2), b = rng.normal(0, 2), c = rng.normal(0, 5);
        DenseMap m(6, 7, 1);
        for (int y = 0; y < 6; ++y)
            for (int x = 0; x < 7; ++x) m.at(x, y) = a * x + b * y + c;
        Tape tape;
        Var map = tape.leaf(m);
        for (int q = 0; q < 10; ++q) {
            double px = rng.uniform(0.0, 6.0), py = rng.uniform(0.0, 5.0);
            double p[2] = {px, py};
            Var out = tape.bilinear(map, tape.leaf(Shape{1, 1, 2}, p), 0, 1);
            CHECK(tape.val1(out) == doctest::Approx(a * px + b * py + c).epsilon(1e-9));
        }
    }
}

TEST_CASE("out-of-range sample points are border-clamped") {
    DenseMap m(3, 3, 1);
    for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 3; ++x) m.at(x, y) = 10.0 * y + x;
    Tape tape;
    Var map = tape.leaf(m);
    double p[2] = {-3.0, 5.0};  // clamps to (0, 2)
    Var out = tape.bilinear(map, tape.leaf(Shape{1, 1, 2}, p), 0, 1);
    CHECK(tape.val1(out) == doctest::Approx(20.0).epsilon(1e-12));
}

TEST_CASE("bilinear rejects non-finite points") {
    DenseMap m(3, 3, 1, 1.0);
    Tape tape;
    Var map = tape.leaf(m);
    double p[2] = {std::nan(""), 0.0};
    CHECK_THROWS_AS(tape.bilinear(map, tape.leaf(Shape{1, 1, 2}, p), 0, 1),
                    NumericalError);
}

TEST_CASE("backward: d(x^2)/dx at x=3 is 6") {
    Tape tape;
    Var x = tape.leaf(3.0);
    Var y = tape.mul(x, x);
    tape.zero_grad();
    tape.backward(y);
    CHECK(tape.grad(x)[0] == doctest::Approx(6.0).epsilon(1e-15));
}

TEST_CASE("backward: L1 sum away from the kink has unit gradients") {
    Tape tape;
    double xs[3] = {2.0, 5.0, 1.5};
    double ts[3] = {1.0, 4.0, 0.5};  // all x > t
    Var x = tape.leaf(Shape{1, 1, 3}, xs);
    Var t = tape.leaf(Shape{1, 1, 3}, ts);
    Var y = tape.sum(tape.abs(tape.sub(x, t)));
    tape.zero_grad();
    tape.backward(y);
    for (int i = 0; i < 3; ++i) CHECK(tape.grad(x)[i] == doctest::Approx(1.0));
}

TEST_CASE("repeated backward accumulates until zero_grad") {
    Tape tape;
    Var x = tape.leaf(2.0);
    Var y = tape.mul(x, x);
    tape.zero_grad();
    tape.backward(y);
    tape.backward(y);
    CHECK(tape.grad(x)[0] == doctest::Approx(8.0));
    tape.zero_grad();
    tape.backward(y);
    CHECK(tape.grad(x)[0] == doctest::Approx(4.0));
}

TEST_CASE("softmax of equal logits is uniform") {
    Tape tape;
    double xs[3] = {0.0, 0.0, 0.0};
    Var s = tape.softmax(tape.leaf(Shape{1, 1, 3}, xs));
    for (int i = 0; i < 3; ++i)
        CHECK(tape.val(s)[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("log(exp(x)) is the identity on random finite inputs") {
    Rng rng(3);
    Tape tape;
    for (int i = 0; i < 20; ++i) {
        double v = rng.uniform(-5.0, 5.0);
        Var y = tape.log(tape.exp(tape.leaf(v)));
        CHECK(tape.val1(y) == doctest::Approx(v).epsilon(1e-12));
    }
}

TEST_CASE("3x3 convolution with an identity kernel preserves the map") {
    Rng rng(5);
    DenseMap m(4, 5, 2);
    for (double& v : m.values) v = rng.normal(0.0, 1.0);
    Tape tape;
    // kernel k[((ky*3+kx)*cin + ci)*cout + co]: center tap, ci == co
    std::vector<double> k(9 * 2 * 2, 0.0);
    for (int ci = 0; ci < 2; ++ci) k[std::size_t(((1 * 3 + 1) * 2 + ci)) * 2 + ci] = 1.0;
    double bias[2] = {0.0, 0.0};
    Var out = tape.conv3x3(tape.leaf(m), tape.leaf(Shape{1, 1, int(k.size())}, k),
                           tape.leaf(Shape{1, 1, 2}, bias), 2, 2);
    auto vals = tape.val(out);
    for (std::size_t i = 0; i < m.values.size(); ++i) CHECK(vals[i] == m.values[i]);
}

TEST_CASE("shape mismatches are rejected") {
    Tape tape;
    Var a = tape.zeros(Shape{2, 2, 1});
    Var b = tape.zeros(Shape{2, 3, 1});
    CHECK_THROWS(tape.add(a, b));
    CHECK_THROWS(tape.backward(a));  // non-scalar output
}

TEST_CASE("gradient fidelity: elementwise and structured ops vs finite differences") {
    using das::testing::FdCheck;
    Rng rng(17);
    FdCheck fd;

    SUBCASE("elementwise chain") {
        std::vector<Param> params;
        Param p(Shape{1, 1, 6});
        for (double& v : p.value) v = rng.uniform(0.3, 2.0);
        params.push_back(p);
        double err = fd.max_rel_error(params, [](Tape& t, std::vector<Var>& vs) {
            Var x = vs[0];
            Var y = t.mul(t.exp(t.mul_const(x, 0.3)), t.log(t.add_const(x, 1.0)));
            y = t.add(y, t.tanh(x));
            y = t.add(y, t.sigmoid(x));
            y = t.add(y, t.pow_const(x, 1.7));
            return t.mean(y);
        });
        CHECK(err < 1e-4);
    }

    SUBCASE("softmax + div + abs") {
        std::vector<Param> params;
        Param p(Shape{1, 1, 4});
        for (double& v : p.value) v = rng.normal(0.0, 1.0);
        Param q(Shape{1, 1, 4});
        for (double& v : q.value) v = rng.uniform(0.5, 2.0);
        params.push_back(p);
        params.push_back(q);
        double err = fd.max_rel_error(params, [](Tape& t, std::vector<Var>& vs) {
            Var s = t.softmax(vs[0]);
            Var d = t.div(s, vs[1]);
            return t.sum(t.abs(t.add_const(d, 0.05)));
        });
        CHECK(err < 1e-4);
    }

    SUBCASE("linear layer") {
        std::vector<Param> params;
        Param w(Shape{1, 1, 12});  // 4x3
        Param b(Shape{1, 1, 4});
        Param x(Shape{1, 1, 3});
        for (double& v : w.value) v = rng.normal(0.0, 0.7);
        for (double& v : b.value) v = rng.normal(0.0, 0.2);
        for (double& v : x.value) v = rng.normal(0.0, 1.0);
        params = {w, b, x};
        double err = fd.max_rel_error(params, [](Tape& t, std::vector<Var>& vs) {
            return t.sum(t.tanh(t.linear(vs[0], vs[1], vs[2])));
        });
        CHECK(err < 1e-4);
    }

    SUBCASE("conv3x3") {
        std::vector<Param> params;
        Param m(Shape{4, 4, 2});
        Param k(Shape{1, 1, 9 * 2 * 3});
        Param b(Shape{1, 1, 3});
        for (double& v : m.value) v = rng.normal(0.0, 1.0);
        for (double& v : k.value) v = rng.normal(0.0, 0.4);
        for (double& v : b.value) v = rng.normal(0.0, 0.1);
        params = {m, k, b};
        double err = fd.max_rel_error(params, [](Tape& t, std::vector<Var>& vs) {
            return t.sum(t.tanh(t.conv3x3(vs[0], vs[1], vs[2], 2, 3)));
        });
        CHECK(err < 1e-4);
    }

    SUBCASE("bilinear w.r.t. map and point") {
        std::vector<Param> params;
        Param m(Shape{5, 5, 3});
        Param pt(Shape{1, 1, 2});
        for (double& v : m.value) v = rng.normal(0.0, 1.0);
        pt.value = {1.37, 2.61};  // safely away from integer kinks and borders
        params = {m, pt};
        double err = fd.max_rel_error(params, [](Tape& t, std::vector<Var>& vs) {
            return t.sum(t.bilinear(vs[0], vs[1], 0, 3));
        });
        CHECK(err < 1e-4);
    }

    SUBCASE("gather/scatter round trip") {
        std::vector<Param> params;
        Param p(Shape{1, 1, 5});
        for (double& v : p.value) v = rng.normal(0.0, 1.0);
        params = {p};
        double err = fd.max_rel_error(params, [](Tape& t, std::vector<Var>& vs) {
            int idx[2] = {1, 3};
            Var g = t.gather(vs[0], idx);
            Var s = t.scatter(g, idx, 5);
            return t.sum(t.mul(s, s));
        });
        CHECK(err < 1e-4);
    }
}
