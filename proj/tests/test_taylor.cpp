#include "bohmflow/taylor.hpp"

#include <cmath>
#include <vector>

#include "bohmflow/rng.hpp"
#include "doctest.h"

using namespace bohmflow;

namespace {

double rel_err(double a, double b) {
    const double scale = std::max({1.0, std::abs(a), std::abs(b)});
    return std::abs(a - b) / scale;
}

// reference: evaluate a jet-represented polynomial at a displacement
double poly_eval(const TaylorTable& tab, const double* c, const std::vector<double>& xi) {
    double sum = 0.0;
    for (int i = 0; i < tab.size(); ++i) {
        double m = c[i];
        const auto& e = tab.exponents(i);
        for (int ax = 0; ax < tab.dim(); ++ax)
            for (int j = 0; j < e[ax]; ++j) m *= xi[static_cast<size_t>(ax)];
        sum += m;
    }
    return sum;
}

}  // namespace

TEST_CASE("table monomial layout") {
    const TaylorTable& tab = TaylorTable::get(3, 5);
    CHECK(tab.size() == 56);  // C(3+5,5)
    CHECK(tab.degree(0) == 0);
    // linear block right after the constant, axis order
    for (int j = 0; j < 3; ++j) {
        std::vector<int> alpha(3, 0);
        alpha[static_cast<size_t>(j)] = 1;
        CHECK(tab.index(alpha) == 1 + j);
    }
    CHECK(tab.size_up_to(1) == 4);
    CHECK(tab.size_up_to(2) == 10);
}

TEST_CASE("truncated product matches direct expansion") {
    const TaylorTable& tab = TaylorTable::get(2, 4);
    const int n = tab.size();
    Rng rng(7);
    std::vector<double> a(static_cast<size_t>(n)), b(static_cast<size_t>(n)), c(static_cast<size_t>(n), 0.0);
    for (auto& v : a) v = rng.normal();
    for (auto& v : b) v = rng.normal();
    poly_mul_acc(tab, 4, a.data(), b.data(), c.data());

    // coefficient of xi0^2 xi1^1 must equal the convolution sum
    std::vector<int> target{2, 1};
    const int it = tab.index(target);
    double expect = 0.0;
    for (int ia = 0; ia < n; ++ia)
        for (int ib = 0; ib < n; ++ib) {
            const auto& ea = tab.exponents(ia);
            const auto& eb = tab.exponents(ib);
            if (ea[0] + eb[0] == 2 && ea[1] + eb[1] == 1) expect += a[static_cast<size_t>(ia)] * b[static_cast<size_t>(ib)];
        }
    CHECK(c[static_cast<size_t>(it)] == doctest::Approx(expect).epsilon(1e-13));
}

TEST_CASE("derivative map shifts coefficients") {
    const TaylorTable& tab = TaylorTable::get(2, 3);
    std::vector<double> f(static_cast<size_t>(tab.size()), 0.0);
    // f = xi0^2 xi1
    std::vector<int> alpha{2, 1};
    f[static_cast<size_t>(tab.index(alpha))] = 1.0;
    std::vector<double> df(static_cast<size_t>(tab.size()), 0.0);
    poly_deriv(tab, 0, f.data(), df.data());
    std::vector<int> beta{1, 1};
    CHECK(df[static_cast<size_t>(tab.index(beta))] == doctest::Approx(2.0));
}

TEST_CASE("composition reproduces tanh of a quadratic") {
    const TaylorTable& tab = TaylorTable::get(2, 5);
    const int n = tab.size();
    // p(xi) = 0.3 + 0.7 xi0 - 0.2 xi1 + 0.5 xi0 xi1
    std::vector<double> p(static_cast<size_t>(n), 0.0);
    p[0] = 0.3;
    std::vector<int> a1{1, 0}, a2{0, 1}, a3{1, 1};
    p[static_cast<size_t>(tab.index(a1))] = 0.7;
    p[static_cast<size_t>(tab.index(a2))] = -0.2;
    p[static_cast<size_t>(tab.index(a3))] = 0.5;

    double fder[8];
    tanh_derivs(p[0], 6, fder);
    std::vector<double> g(static_cast<size_t>(n), 0.0), chain(static_cast<size_t>(5 * n), 0.0);
    poly_compose(tab, p.data(), fder, g.data(), chain.data());

    // compare against direct evaluation at a small displacement; the
    // degree-5 truncation remainder is O(|xi|^6)
    const std::vector<double> xi{0.01, -0.008};
    const double direct = std::tanh(poly_eval(tab, p.data(), xi));
    const double viajet = poly_eval(tab, g.data(), xi);
    CHECK(rel_err(direct, viajet) < 1e-10);

    // remainder shrinks like |xi|^6 under halving
    const std::vector<double> xi2{0.005, -0.004};
    const double direct2 = std::tanh(poly_eval(tab, p.data(), xi2));
    const double viajet2 = poly_eval(tab, g.data(), xi2);
    CHECK(std::abs(direct2 - viajet2) < 0.05 * std::abs(direct - viajet));
}

TEST_CASE("tanh derivative ladder vs finite differences") {
    double d0[8], dp[8], dm[8];
    const double x = 0.37, h = 1e-5;
    tanh_derivs(x, 6, d0);
    tanh_derivs(x + h, 5, dp);
    tanh_derivs(x - h, 5, dm);
    for (int k = 0; k < 5; ++k) {
        const double fd = (dp[k] - dm[k]) / (2 * h);
        CHECK(rel_err(fd, d0[k + 1]) < 1e-8);
    }
    CHECK(d0[0] == doctest::Approx(std::tanh(x)));
    CHECK(d0[1] == doctest::Approx(1.0 - std::tanh(x) * std::tanh(x)));
}

TEST_CASE("product vjp is the exact adjoint") {
    const TaylorTable& tab = TaylorTable::get(2, 4);
    const int n = tab.size();
    Rng rng(13);
    std::vector<double> a(static_cast<size_t>(n)), b(static_cast<size_t>(n)), cbar(static_cast<size_t>(n));
    for (auto& v : a) v = rng.normal();
    for (auto& v : b) v = rng.normal();
    for (auto& v : cbar) v = rng.normal();

    std::vector<double> abar(static_cast<size_t>(n), 0.0), bbar(static_cast<size_t>(n), 0.0);
    poly_mul_vjp(tab, 4, cbar.data(), a.data(), b.data(), abar.data(), bbar.data());

    // <cbar, a*b> must equal <abar, a> (bilinearity) -- check by perturbation
    const double h = 1e-6;
    for (int trial = 0; trial < 5; ++trial) {
        const int i = static_cast<int>(rng.next_u64() % static_cast<unsigned>(n));
        std::vector<double> c0(static_cast<size_t>(n), 0.0), c1(static_cast<size_t>(n), 0.0);
        poly_mul_acc(tab, 4, a.data(), b.data(), c0.data());
        a[static_cast<size_t>(i)] += h;
        poly_mul_acc(tab, 4, a.data(), b.data(), c1.data());
        a[static_cast<size_t>(i)] -= h;
        double dot = 0.0;
        for (int c = 0; c < n; ++c) dot += cbar[static_cast<size_t>(c)] * (c1[static_cast<size_t>(c)] - c0[static_cast<size_t>(c)]) / h;
        CHECK(rel_err(dot, abar[static_cast<size_t>(i)]) < 1e-6);
    }
}

TEST_CASE("compose vjp matches finite differences") {
    const TaylorTable& tab = TaylorTable::get(1, 5);
    const int n = tab.size();
    Rng rng(21);
    std::vector<double> p(static_cast<size_t>(n));
    for (auto& v : p) v = 0.3 * rng.normal();
    std::vector<double> gbar(static_cast<size_t>(n));
    for (auto& v : gbar) v = rng.normal();

    auto value = [&](const std::vector<double>& pp) {
        double fder[8];
        tanh_derivs(pp[0], 6, fder);
        std::vector<double> g(static_cast<size_t>(n), 0.0), chain(static_cast<size_t>(5 * n), 0.0);
        poly_compose(tab, pp.data(), fder, g.data(), chain.data());
        double dot = 0.0;
        for (int c = 0; c < n; ++c) dot += gbar[static_cast<size_t>(c)] * g[static_cast<size_t>(c)];
        return dot;
    };

    double fder[8];
    tanh_derivs(p[0], 6, fder);
    std::vector<double> g(static_cast<size_t>(n), 0.0), chain(static_cast<size_t>(5 * n), 0.0);
    poly_compose(tab, p.data(), fder, g.data(), chain.data());
    std::vector<double> pbar(static_cast<size_t>(n), 0.0);
    poly_compose_vjp(tab, p.data(), fder, gbar.data(), chain.data(), pbar.data());

    const double h = 1e-6;
    for (int i = 0; i < n; ++i) {
        std::vector<double> pp = p;
        pp[static_cast<size_t>(i)] += h;
        const double vp = value(pp);
        pp[static_cast<size_t>(i)] -= 2 * h;
        const double vm = value(pp);
        CHECK(rel_err((vp - vm) / (2 * h), pbar[static_cast<size_t>(i)]) < 1e-7);
    }
}

TEST_CASE("directional derivatives from multivariate coefficients") {
    const TaylorTable& tab = TaylorTable::get(2, 3);
    const int n = tab.size();
    // f = xi0^2 xi1: D_u^3 f = 3! * u0^2 u1
    std::vector<double> f(static_cast<size_t>(n), 0.0);
    std::vector<int> alpha{2, 1};
    f[static_cast<size_t>(tab.index(alpha))] = 1.0;
    const double u[2] = {2.0, 3.0};
    CHECK(poly_directional(tab, f.data(), u, 3) == doctest::Approx(6.0 * 4.0 * 3.0));
    CHECK(poly_directional(tab, f.data(), u, 2) == doctest::Approx(0.0));
}
