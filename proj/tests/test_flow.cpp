#include <doctest.h>

#include <cmath>
#include <vector>

#include "das/flow.hpp"
#include "das/rng.hpp"
#include "support.hpp"

using namespace das;

namespace {

FlowModel identity_flow(BaseDist base) {
    Rng rng(2);
    return FlowModel::make(4, 16, 2.0, base, rng);
}

FlowModel random_flow(std::uint64_t seed, BaseDist base = BaseDist::Gaussian) {
    Rng rng(seed);
    FlowModel fm = FlowModel::make(4, 16, 2.0, base, rng);
    fm.randomize(rng, 0.5, 0.1);
    return fm;
}

// Midpoint quadrature of exp(log_prob) over [-6,6]^3.
double normalization_mass(const FlowModel& fm, double step = 0.25) {
    int n = int(std::round(12.0 / step));
    double mass = 0.0;
    for (int i = 0; i < n; ++i) {
        double z1 = -6.0 + (i + 0.5) * step;
        for (int j = 0; j < n; ++j) {
            double z2 = -6.0 + (j + 0.5) * step;
            for (int k = 0; k < n; ++k) {
                double z3 = -6.0 + (k + 0.5) * step;
                mass += std::exp(fm.log_prob({z1, z2, z3}));
            }
        }
    }
    return mass * step * step * step;
}

}  // namespace

TEST_CASE("zero-initialized nets make the flow an identity with zero log-det") {
    FlowModel fm = identity_flow(BaseDist::Gaussian);
    Rng rng(5);
    for (int i = 0; i < 20; ++i) {
        Vec3 z{rng.normal(), rng.normal(), rng.normal()};
        double ld = 1.0;
        Vec3 x = fm.forward(z, &ld);
        CHECK(ld == doctest::Approx(0.0));
        for (int c = 0; c < 3; ++c) CHECK(x[c] == doctest::Approx(z[c]).epsilon(1e-15));
    }
}

TEST_CASE("identity flow closed forms at the origin") {
    FlowModel g = identity_flow(BaseDist::Gaussian);
    CHECK(g.log_prob({0, 0, 0}) ==
          doctest::Approx(-1.5 * std::log(2.0 * M_PI)).epsilon(1e-9));
    FlowModel l = identity_flow(BaseDist::Laplace);
    CHECK(l.log_prob({0, 0, 0}) == doctest::Approx(3.0 * std::log(0.5)).epsilon(1e-9));
}

TEST_CASE("inverse(forward(z)) recovers z to 1e-8") {
    for (std::uint64_t seed : {11ull, 12ull, 13ull}) {
        FlowModel fm = random_flow(seed);
        Rng rng(seed * 7 + 1);
        for (int i = 0; i < 50; ++i) {
            Vec3 z{rng.normal(0, 2), rng.normal(0, 2), rng.normal(0, 2)};
            Vec3 x = fm.forward(z);
            Vec3 back = fm.inverse(x);
            for (int c = 0; c < 3; ++c)
                CHECK(back[c] == doctest::Approx(z[c]).epsilon(1e-8));
        }
    }
}

TEST_CASE("forward and inverse log-determinants cancel pointwise") {
    FlowModel fm = random_flow(23);
    Rng rng(99);
    for (int i = 0; i < 50; ++i) {
        Vec3 z{rng.normal(0, 2), rng.normal(0, 2), rng.normal(0, 2)};
        double ld_f = 0, ld_i = 0;
        Vec3 x = fm.forward(z, &ld_f);
        fm.inverse(x, &ld_i);
        CHECK(ld_f + ld_i == doctest::Approx(0.0).epsilon(1e-8));
        CHECK(std::abs(ld_f + ld_i) < 1e-8);
    }
}

TEST_CASE("random flows stay normalized under quadrature") {
    for (std::uint64_t seed : {41ull, 42ull}) {
        FlowModel fm = random_flow(seed);
        CHECK(normalization_mass(fm) == doctest::Approx(1.0).epsilon(0.02));
    }
}

TEST_CASE("sampling is deterministic and matches base moments") {
    FlowModel fm = identity_flow(BaseDist::Gaussian);
    const int n = 100000;
    Rng rng_a(7);
    Rng rng_b(7);
    double mean[3] = {0, 0, 0};
    for (int i = 0; i < n; ++i) {
        Vec3 a = fm.sample(rng_a);
        Vec3 b = fm.sample(rng_b);
        for (int c = 0; c < 3; ++c) {
            CHECK(a[c] == b[c]);  // bit-identical repeat
            mean[c] += a[c];
        }
    }
    for (int c = 0; c < 3; ++c) CHECK(std::abs(mean[c] / n) < 0.02);
}

TEST_CASE("sample histogram matches quadrature marginal (total variation)") {
    FlowModel fm = random_flow(77);
    // Marginal of z1 over 24 bins in [-6,6]: quadrature over the other dims.
    const int bins = 24;
    const double lo = -6.0, hi = 6.0, w = (hi - lo) / bins;
    std::vector<double> q(bins, 0.0);
    const double step = 0.25;
    int n23 = int(std::round(12.0 / step));
    for (int b = 0; b < bins; ++b) {
        const int sub = 2;  // refine z1 inside the bin
        double acc = 0.0;
        for (int s = 0; s < sub; ++s) {
            double z1 = lo + b * w + (s + 0.5) * w / sub;
            for (int j = 0; j < n23; ++j) {
                double z2 = -6.0 + (j + 0.5) * step;
                for (int k = 0; k < n23; ++k) {
                    double z3 = -6.0 + (k + 0.5) * step;
                    acc += std::exp(fm.log_prob({z1, z2, z3}));
                }
            }
        }
        q[b] = acc * (w / sub) * step * step;
    }
    double qsum = 0;
    for (double v : q) qsum += v;
    for (double& v : q) v /= qsum;

    std::vector<double> h(bins, 0.0);
    Rng rng(123);
    const int n = 100000;
    int inside = 0;
    for (int i = 0; i < n; ++i) {
        Vec3 x = fm.sample(rng);
        if (x[0] >= lo && x[0] < hi) {
            ++h[int((x[0] - lo) / w)];
            ++inside;
        }
    }
    for (double& v : h) v /= inside;

    double tv = 0;
    for (int b = 0; b < bins; ++b) tv += std::abs(h[b] - q[b]);
    tv *= 0.5;
    CHECK(tv < 0.05);
}

TEST_CASE("tape log_prob matches the plain path") {
    FlowModel fm = random_flow(55, BaseDist::Laplace);
    Tape tape;
    FlowVars fv = fm.bind(tape);
    Rng rng(3);
    for (int i = 0; i < 30; ++i) {
        Vec3 x{rng.normal(0, 2), rng.normal(0, 2), rng.normal(0, 2)};
        Var xv = tape.leaf(Shape{1, 1, 3}, x);
        Var lp = fm.build_log_prob(tape, xv, fv);
        CHECK(tape.val1(lp) == doctest::Approx(fm.log_prob(x)).epsilon(1e-12));
    }
}

TEST_CASE("log_prob gradients pass finite differences (x and parameters)") {
    using das::testing::FdCheck;
    FlowModel fm = random_flow(91);
    // Flatten all flow parameters plus the input point into the FD harness.
    std::vector<Param> params;
    Param x(Shape{1, 1, 3});
    x.value = {0.35, -0.8, 1.2};
    params.push_back(x);
    for (Param* p : fm.params()) params.push_back(*p);

    FdCheck fd;
    double err = fd.max_rel_error(params, [&fm](Tape& t, std::vector<Var>& vs) {
        FlowVars fv;
        std::size_t idx = 1;
        fv.layers.resize(fm.layers.size());
        for (auto& lv : fv.layers) {
            lv.w1s = vs[idx++];
            lv.b1s = vs[idx++];
            lv.w2s = vs[idx++];
            lv.b2s = vs[idx++];
            lv.w1t = vs[idx++];
            lv.b1t = vs[idx++];
            lv.w2t = vs[idx++];
            lv.b2t = vs[idx++];
        }
        return fm.build_log_prob(t, vs[0], fv);
    });
    CHECK(err < 1e-4);
}

TEST_CASE("flow parameter binding matches params() order") {
    FlowModel fm = random_flow(15);
    Tape tape;
    FlowVars fv = fm.bind(tape);
    std::vector<Param*> ps = fm.params();
    std::size_t idx = 0;
    for (const auto& lv : fv.layers) {
        Var vars[8] = {lv.w1s, lv.b1s, lv.w2s, lv.b2s, lv.w1t, lv.b1t, lv.w2t, lv.b2t};
        for (Var v : vars) {
            auto tape_vals = tape.val(v);
            REQUIRE(tape_vals.size() == ps[idx]->value.size());
            for (std::size_t i = 0; i < tape_vals.size(); ++i)
                CHECK(tape_vals[i] == ps[idx]->value[i]);
            ++idx;
        }
    }
}
