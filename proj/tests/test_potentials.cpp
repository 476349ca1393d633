#include "bohmflow/potentials.hpp"

#include <cmath>

#include "bohmflow/rng.hpp"
#include "doctest.h"

using namespace bohmflow;

namespace {

double rel_err(double a, double b) {
    const double scale = std::max({1.0, std::abs(a), std::abs(b)});
    return std::abs(a - b) / scale;
}

Vec fd_grad(const PotentialSpec& spec, const Vec& x, double h = 1e-5) {
    Vec g(spec.d);
    for (int i = 0; i < spec.d; ++i) {
        Vec xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        g[i] = (eval_V(spec, xp) - eval_V(spec, xm)) / (2 * h);
    }
    return g;
}

Mat fd_hess(const PotentialSpec& spec, const Vec& x, double h = 1e-5) {
    Mat m(spec.d, spec.d);
    for (int i = 0; i < spec.d; ++i) {
        Vec xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        m.col(i) = (grad_V(spec, xp) - grad_V(spec, xm)) / (2 * h);
    }
    return m;
}

PotentialSpec morse4() { return make_morse_chain(12.5, 0.2, 0.3, 4); }

}  // namespace

TEST_CASE("morse chain values") {
    const PotentialSpec spec = morse4();
    CHECK(eval_V(spec, Vec::Zero(4)) == doctest::Approx(0.0).epsilon(1e-14));

    Vec x = Vec::Zero(4);
    x[0] = 1.0;
    const double w = 1.0 - std::exp(-0.2);
    CHECK(eval_V(spec, x) == doctest::Approx(12.5 * w * w).epsilon(1e-14));
    CHECK(12.5 * w * w == doctest::Approx(0.410731).epsilon(1e-5));
}

TEST_CASE("harmonic values and derivatives") {
    const PotentialSpec spec = make_harmonic(Mat::Identity(1, 1));
    Vec x(1);
    x[0] = 2.0;
    CHECK(eval_V(spec, x) == doctest::Approx(2.0));
    x[0] = 3.0;
    CHECK(grad_V(spec, x)[0] == doctest::Approx(3.0));
    CHECK(hess_V(spec, x)(0, 0) == doctest::Approx(1.0));
    CHECK(third_V_directional(spec, x, Vec::Ones(1))(0, 0) == doctest::Approx(0.0));
}

TEST_CASE("double well derivatives at named points") {
    const PotentialSpec spec = make_double_well(1.0, 1.0);
    Vec x = Vec::Zero(1);
    CHECK(grad_V(spec, x)[0] == doctest::Approx(0.0));
    CHECK(hess_V(spec, x)(0, 0) == doctest::Approx(-4.0));
    x[0] = 1.0;
    CHECK(third_V_directional(spec, x, Vec::Ones(1))(0, 0) == doctest::Approx(24.0));
}

TEST_CASE("morse gradient example") {
    const PotentialSpec spec = make_morse_chain(12.5, 0.2, 0.3, 2);
    Vec x(2);
    x << 1.0, 0.0;
    const Vec g = grad_V(spec, x);
    const double u = std::exp(-0.2);
    CHECK(g[0] == doctest::Approx(2 * 12.5 * 0.2 * u * (1 - u)).epsilon(1e-14));
    CHECK(g[1] == doctest::Approx(0.3).epsilon(1e-14));
    // cross-check against finite differences
    const Vec gfd = fd_grad(spec, x);
    CHECK((g - gfd).norm() < 1e-7 * std::max(1.0, g.norm()));
}

TEST_CASE("morse hessian and third derivative at origin") {
    const PotentialSpec spec = make_morse_chain(12.5, 0.2, 0.3, 2);
    const Mat h = hess_V(spec, Vec::Zero(2));
    CHECK(h(0, 0) == doctest::Approx(1.0));  // 2 D beta^2
    CHECK(h(1, 1) == doctest::Approx(1.0));
    CHECK(h(0, 1) == doctest::Approx(0.3));

    // on-site cubic: g''' = 2 D beta^3 u (1 - 4u); at x = 0: -6 D beta^3
    Vec u0 = Vec::Zero(2);
    u0[0] = 1.0;
    const Mat t = third_V_directional(spec, Vec::Zero(2), u0);
    CHECK(t(0, 0) == doctest::Approx(-6.0 * 12.5 * 0.008).epsilon(1e-12));
    CHECK(t(1, 1) == doctest::Approx(0.0));

    // finite-difference cross-check of the directional third derivative
    const double h5 = 1e-4;
    Vec xp = Vec::Zero(2), xm = Vec::Zero(2);
    xp += h5 * u0;
    xm -= h5 * u0;
    const Mat tfd = (hess_V(spec, xp) - hess_V(spec, xm)) / (2 * h5);
    CHECK((t - tfd).norm() < 1e-5 * std::max(1.0, t.norm()));
}

TEST_CASE("derivatives agree with finite differences at random points") {
    Rng rng(99);
    std::vector<PotentialSpec> specs{morse4(), make_double_well(1.0, 2.0), [] {
                                         Mat K(2, 2);
                                         K << 1.0, 0.3, 0.3, 1.0;
                                         return make_harmonic(K);
                                     }()};
    for (const auto& spec : specs) {
        for (int trial = 0; trial < 1000; ++trial) {
            Vec x(spec.d);
            for (int i = 0; i < spec.d; ++i) x[i] = 2.0 * rng.normal();
            const Vec g = grad_V(spec, x);
            const Vec gfd = fd_grad(spec, x);
            REQUIRE((g - gfd).cwiseAbs().maxCoeff() < 1e-5 * std::max(1.0, g.cwiseAbs().maxCoeff()));

            if (trial % 20 == 0) {
                const Mat h = hess_V(spec, x);
                REQUIRE((h - h.transpose()).norm() == 0.0);  // symmetric by construction
                const Mat hfd = fd_hess(spec, x);
                REQUIRE((h - hfd).cwiseAbs().maxCoeff() < 1e-5 * std::max(1.0, h.cwiseAbs().maxCoeff()));

                Vec u(spec.d);
                for (int i = 0; i < spec.d; ++i) u[i] = rng.normal();
                const Mat t = third_V_directional(spec, x, u);
                const double hh = 1e-4;
                const Mat tfd = (hess_V(spec, x + hh * u) - hess_V(spec, x - hh * u)) / (2 * hh);
                REQUIRE((t - tfd).cwiseAbs().maxCoeff() < 1e-5 * std::max(1.0, t.cwiseAbs().maxCoeff()));
            }
        }
    }
}

TEST_CASE("lambda = 0 chain separates into 1d sums") {
    const PotentialSpec chain = make_morse_chain(12.5, 0.2, 0.0, 4);
    const PotentialSpec site = make_morse_chain(12.5, 0.2, 0.0, 1);
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        Vec x(4);
        for (int i = 0; i < 4; ++i) x[i] = 3.0 * rng.normal();
        double sum = 0.0;
        for (int i = 0; i < 4; ++i) sum += eval_V(site, x.segment(i, 1));
        CHECK(eval_V(chain, x) == sum);  // exact: same arithmetic per site
    }
}

TEST_CASE("potential jet matches closed-form derivatives") {
    const PotentialSpec spec = morse4();
    const TaylorTable& tab = TaylorTable::get(4, 5);
    Rng rng(17);
    Vec x(4);
    for (int i = 0; i < 4; ++i) x[i] = rng.normal();
    std::vector<double> c(static_cast<size_t>(tab.size()), 0.0);
    v_jet_acc(spec, x, tab, c.data());

    CHECK(rel_err(c[0], eval_V(spec, x)) < 1e-14);
    const Vec g = grad_V(spec, x);
    const Mat h = hess_V(spec, x);
    for (int i = 0; i < 4; ++i) {
        std::vector<int> a(4, 0);
        a[static_cast<size_t>(i)] = 1;
        CHECK(rel_err(c[static_cast<size_t>(tab.index(a))], g[i]) < 1e-13);
        for (int j = i; j < 4; ++j) {
            a[static_cast<size_t>(j)]++;
            const double fac = (i == j) ? 2.0 : 1.0;
            CHECK(rel_err(fac * c[static_cast<size_t>(tab.index(a))], h(i, j)) < 1e-13);
            a[static_cast<size_t>(j)]--;
        }
    }
}

TEST_CASE("harmonic approximation") {
    SUBCASE("uncoupled morse") {
        const PotentialSpec spec = make_morse_chain(12.5, 0.2, 0.0, 1);
        const auto ha = harmonic_approximation(spec);
        CHECK(ha.xstar[0] == doctest::Approx(0.0));
        CHECK(ha.K(0, 0) == doctest::Approx(1.0));
        CHECK(ha.Sigma(0, 0) == doctest::Approx(0.5));
        CHECK(ha.E0 == doctest::Approx(0.5));
    }
    SUBCASE("coupled morse d=2") {
        const PotentialSpec spec = make_morse_chain(12.5, 0.2, 0.3, 2);
        const auto ha = harmonic_approximation(spec);
        CHECK(ha.K(0, 0) == doctest::Approx(1.0));
        CHECK(ha.K(0, 1) == doctest::Approx(0.3));
        // eigenvalues 1 +- lambda
        CHECK(ha.E0 == doctest::Approx(0.5 * (std::sqrt(1.3) + std::sqrt(0.7))).epsilon(1e-12));
    }
    SUBCASE("harmonic passthrough") {
        Mat K(2, 2);
        K << 2.0, 0.0, 0.0, 0.5;
        const auto ha = harmonic_approximation(make_harmonic(K));
        CHECK(ha.xstar.norm() == 0.0);
        CHECK((ha.K - K).norm() == 0.0);
        CHECK(ha.E0 == doctest::Approx(0.5 * (std::sqrt(2.0) + std::sqrt(0.5))));
    }
    SUBCASE("double well barrier top is rejected") {
        CHECK_THROWS_AS(harmonic_approximation(make_double_well(1.0, 2.0)), ConfigError);
    }
}

TEST_CASE("dimension mismatch raises config error") {
    CHECK_THROWS_AS(eval_V(morse4(), Vec::Zero(3)), ConfigError);
}
