#include "bohmflow/score_model.hpp"

#include <cmath>
#include <cstdio>

#include "bohmflow/rng.hpp"
#include "doctest.h"

using namespace bohmflow;

namespace {

ScoreModel make_model(int d, double prec_scale, std::uint64_t net_seed, int width = 8,
                      int layers = 2, double param_scale = 1.0) {
    GaussianScore base;
    base.mu = Vec::Zero(d);
    base.precision = prec_scale * Mat::Identity(d, d);
    MlpArchitecture arch;
    arch.input_dim = d;
    arch.hidden_layers = layers;
    arch.hidden_width = width;
    arch.time_features = 2;
    arch.omega = 1.0;
    FilmMlp net(arch);
    if (net_seed != 0) {
        net.init_params(net_seed);
        // non-degenerate head and FiLM so every derivative path is active
        Rng rng(net_seed + 1);
        for (auto& p : net.params()) p += 0.2 * param_scale * rng.normal();
    }
    return ScoreModel(std::move(base), std::move(net));
}

double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

}  // namespace

TEST_CASE("zeroed net reproduces the base gaussian ladder") {
    ScoreModel m = make_model(2, 2.0, 0);  // sigma^2 = 1/2
    Vec x(2);
    x << 1.0, 0.0;
    CHECK(m.phi(x, 0.3) == 0.0);
    const Vec s = m.score(x, 0.0);
    CHECK(s[0] == doctest::Approx(-2.0));
    CHECK(s[1] == doctest::Approx(0.0));
    CHECK(m.score(Vec::Zero(2), 1.0).norm() == 0.0);
}

TEST_CASE("quantum potential of gaussian scores") {
    SUBCASE("sigma^2 = 1") {
        ScoreModel m = make_model(1, 1.0, 0);
        CHECK(m.quantum_potential(Vec::Zero(1), 0.0) == doctest::Approx(0.25));
        Vec x(1);
        x << 0.7;
        CHECK(m.quantum_potential(x, 0.0) == doctest::Approx(0.25 - 0.7 * 0.7 / 8.0).epsilon(1e-14));
        CHECK(m.quantum_force(x, 0.0)[0] == doctest::Approx(0.7 / 4.0).epsilon(1e-13));
        CHECK(m.hess_Q(x, 0.0)(0, 0) == doctest::Approx(-0.25).epsilon(1e-13));
    }
    SUBCASE("sigma^2 = 1/2 balances V = x^2/2") {
        ScoreModel m = make_model(1, 2.0, 0);
        const PotentialSpec pot = make_harmonic(Mat::Identity(1, 1));
        Vec x(1);
        x << 0.9;
        CHECK(m.quantum_potential(x, 0.0) == doctest::Approx(0.5 - 0.81 / 2.0).epsilon(1e-13));
        CHECK((eval_V(pot, x) + m.quantum_potential(x, 0.0)) == doctest::Approx(0.5).epsilon(1e-13));
        CHECK(m.hess_VQ(pot, x, 0.0)(0, 0) == doctest::Approx(0.0).epsilon(1e-13));
    }
    SUBCASE("zero score, zero Q") {
        ScoreModel m = make_model(1, 0.0, 0);
        Vec x(1);
        x << 1.3;
        CHECK(m.quantum_potential(x, 0.5) == 0.0);
        CHECK(m.quantum_force(x, 0.5)[0] == 0.0);
    }
}

TEST_CASE("hess and third with zero score reduce to the potential") {
    ScoreModel m = make_model(2, 0.0, 0);
    Mat K(2, 2);
    K << 1.0, 0.3, 0.3, 1.0;
    const PotentialSpec pot = make_harmonic(K);
    CHECK((m.hess_VQ(pot, Vec::Zero(2), 0.0) - K).norm() == 0.0);

    ScoreModel m1 = make_model(1, 0.0, 0);
    const PotentialSpec dw = make_double_well(1.0, 1.0);
    Vec x(1), u(1);
    x << 0.5;
    u << 1.0;
    CHECK(m1.third_VQ_directional(dw, x, 0.0, u)(0, 0) == doctest::Approx(12.0).epsilon(1e-13));
    CHECK(m1.third_Q_directional(x, 0.0, u).norm() == 0.0);
}

TEST_CASE("exact harmonic ground state gives zero total force") {
    // base = ground state of V = 1/2 x^T K x: Sigma = K^{-1/2}/2, V + Q constant
    Mat K(2, 2);
    K << 1.0, 0.3, 0.3, 1.0;
    const PotentialSpec pot = make_harmonic(K);
    const auto ha = harmonic_approximation(pot);
    GaussianScore base;
    base.mu = Vec::Zero(2);
    base.precision = ha.Sigma.inverse();
    MlpArchitecture arch;
    arch.input_dim = 2;
    FilmMlp net(arch);
    ScoreModel m(base, net);

    Rng rng(4);
    double max_force = 0.0, max_hess = 0.0;
    LadderContext ctx;
    for (int i = 0; i < 1000; ++i) {
        Vec x(2);
        x << 2.0 * rng.normal(), 2.0 * rng.normal();
        const LadderPoint p = ladder_eval(m, &pot, x, 0.0, 4, ctx);
        max_force = std::max(max_force, p.force.cwiseAbs().maxCoeff());
        max_hess = std::max(max_hess, p.hess.cwiseAbs().maxCoeff());
        // total energy density V + Q equals E0 everywhere
        CHECK(p.vq == doctest::Approx(ha.E0).epsilon(1e-12));
    }
    CHECK(max_force < 1e-10);
    CHECK(max_hess < 1e-10);
}

TEST_CASE("derivative ladder vs nested finite differences") {
    ScoreModel m = make_model(2, 1.5, 42);
    const PotentialSpec pot = make_morse_chain(12.5, 0.2, 0.3, 2);
    Rng rng(11);
    const double t = 0.37;
    LadderContext lctx;

    for (int trial = 0; trial < 100; ++trial) {
        Vec x(2);
        x << rng.normal(), rng.normal();

        // force vs FD of Q+V value
        const Vec f = ladder_eval(m, &pot, x, t, 3, lctx).force;
        const double h = 1e-4;
        for (int i = 0; i < 2; ++i) {
            Vec xp = x, xm = x;
            xp[i] += h;
            xm[i] -= h;
            const double vp = m.quantum_potential(xp, t) + eval_V(pot, xp);
            const double vm = m.quantum_potential(xm, t) + eval_V(pot, xm);
            CHECK(rel_err(-(vp - vm) / (2 * h), f[i]) < 1e-5);
        }

        // hess vs FD of force
        const Mat hq = m.hess_VQ(pot, x, t);
        for (int i = 0; i < 2; ++i) {
            Vec xp = x, xm = x;
            xp[i] += h;
            xm[i] -= h;
            const Vec fp = m.quantum_force(xp, t) + (-grad_V(pot, xp));
            const Vec fm = m.quantum_force(xm, t) + (-grad_V(pot, xm));
            for (int j = 0; j < 2; ++j) CHECK(rel_err(-(fp[j] - fm[j]) / (2 * h), hq(j, i)) < 1e-5);
        }

        // third vs FD of hess
        Vec u(2);
        u << rng.normal(), rng.normal();
        const Mat t3 = m.third_VQ_directional(pot, x, t, u);
        const Mat t3fd = (m.hess_VQ(pot, x + h * u, t) - m.hess_VQ(pot, x - h * u, t)) / (2 * h);
        CHECK((t3 - t3fd).cwiseAbs().maxCoeff() < 1e-4 * std::max(1.0, t3.cwiseAbs().maxCoeff()));
    }
}

TEST_CASE("score jacobian is symmetric (gradient field)") {
    ScoreModel m = make_model(2, 1.0, 7, 8, 2, 0.5);
    Rng rng(3);
    const double h = 3e-5;
    for (int trial = 0; trial < 1000; ++trial) {
        Vec x(2);
        x << 1.5 * rng.normal(), 1.5 * rng.normal();
        const double t = rng.uniform() * 3.14;
        Mat jac(2, 2);
        for (int i = 0; i < 2; ++i) {
            Vec xp = x, xm = x;
            xp[i] += h;
            xm[i] -= h;
            jac.col(i) = (m.score(xp, t) - m.score(xm, t)) / (2 * h);
        }
        REQUIRE(std::abs(jac(0, 1) - jac(1, 0)) < 1e-8);
    }
}

TEST_CASE("jet consistency") {
    SUBCASE("zero net jets are zero") {
        ScoreModel m = make_model(2, 1.0, 0);
        const SpatialJet j = m.jet(Vec::Ones(2), 0.2, 5, {Vec::Ones(2)});
        CHECK(j.value == 0.0);
        CHECK(j.gradient.norm() == 0.0);
        CHECK(j.hessian.norm() == 0.0);
        for (double v : j.directional[0]) CHECK(v == 0.0);
    }
    SUBCASE("order above 5 is unsupported") {
        ScoreModel m = make_model(1, 1.0, 0);
        CHECK_THROWS_AS(m.jet(Vec::Zero(1), 0.0, 6, {}), UnsupportedError);
    }
    SUBCASE("random net vs finite differences along directions") {
        ScoreModel m = make_model(2, 1.0, 19);
        Rng rng(23);
        const double t = 0.81;
        for (int trial = 0; trial < 100; ++trial) {
            Vec x(2), u(2);
            x << rng.normal(), rng.normal();
            u << rng.normal(), rng.normal();
            u.normalize();
            const SpatialJet j = m.jet(x, t, 4, {u});
            // directional derivatives vs FD along u of phi
            const double h = 1e-2;
            auto phi_at = [&](double s) { return m.phi(x + s * u, t); };
            const double d1 = (phi_at(h) - phi_at(-h)) / (2 * h);
            const double d2 = (phi_at(h) - 2 * phi_at(0) + phi_at(-h)) / (h * h);
            CHECK(rel_err(d1, j.directional[0][1]) < 1e-4);
            CHECK(rel_err(d2, j.directional[0][2]) < 1e-3);
            // hessian is exactly symmetric by construction
            CHECK((j.hessian - j.hessian.transpose()).norm() == 0.0);
            // gradient matches score minus base
            const Vec s = m.score(x, t) + m.base().precision * (x - m.base().mu);
            CHECK((s - j.gradient).cwiseAbs().maxCoeff() < 1e-14);
        }
    }
}

TEST_CASE("phi is periodic in the time embedding") {
    ScoreModel m = make_model(1, 1.0, 42);
    Vec x(1);
    x << 0.4;
    const double period = 2.0 * M_PI / m.net().arch().omega;
    CHECK(std::abs(m.phi(x, 0.3) - m.phi(x, 0.3 + period)) < 1e-12);
}

TEST_CASE("Q scales exactly with hbar^2/m") {
    ScoreModel m1 = make_model(1, 1.0, 55);
    ScoreModel m4(m1.base(), m1.net(), 2.0, 1.0);  // hbar^2 scales by 4
    Vec x(1);
    x << 0.6;
    CHECK(4.0 * m1.quantum_potential(x, 0.1) == m4.quantum_potential(x, 0.1));
}

TEST_CASE("ladder vjp matches finite differences") {
    ScoreModel m = make_model(2, 1.2, 31, 6, 2, 0.7);
    const PotentialSpec pot = make_morse_chain(12.5, 0.2, 0.3, 2);
    Rng rng(41);
    Vec x(2);
    x << 0.3, -0.5;
    const double t = 0.9;

    // random cotangents on every ladder output
    Vec fbar(2);
    fbar << rng.normal(), rng.normal();
    Mat hbar(2, 2);
    for (int i = 0; i < 4; ++i) hbar(i / 2, i % 2) = rng.normal();
    std::vector<Mat> tbar(2, Mat(2, 2));
    for (auto& s : tbar)
        for (int i = 0; i < 4; ++i) s(i / 2, i % 2) = rng.normal();
    const double vqbar = rng.normal();

    auto objective = [&](const ScoreModel& model, const Vec& xx) {
        LadderContext c;
        const LadderPoint p = ladder_eval(model, &pot, xx, t, 5, c);
        double J = vqbar * p.vq + fbar.dot(p.force);
        J += (hbar.array() * p.hess.array()).sum();
        for (int k = 0; k < 2; ++k) J += (tbar[static_cast<size_t>(k)].array() * p.third[static_cast<size_t>(k)].array()).sum();
        return J;
    };

    LadderContext ctx;
    ladder_eval(m, &pot, x, t, 5, ctx);
    Vec xbar = Vec::Zero(2);
    std::vector<double> pgrad(static_cast<size_t>(m.net().param_count()), 0.0);
    ladder_vjp(m, &pot, ctx, vqbar, &fbar, &hbar, &tbar, xbar, pgrad.data());

    const double h = 1e-5;
    for (int i = 0; i < 2; ++i) {
        Vec xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        const double fd = (objective(m, xp) - objective(m, xm)) / (2 * h);
        CHECK(rel_err(fd, xbar[i]) < 1e-6);
    }
    // parameter gradient: spot-check a spread of parameters
    for (int k = 0; k < m.net().param_count(); k += std::max(1, m.net().param_count() / 40)) {
        ScoreModel mp = m, mm = m;
        mp.net().params()[static_cast<size_t>(k)] += h;
        mm.net().params()[static_cast<size_t>(k)] -= h;
        const double fd = (objective(mp, x) - objective(mm, x)) / (2 * h);
        CHECK(rel_err(fd, pgrad[static_cast<size_t>(k)]) < 1e-5);
    }
}

TEST_CASE("score vjp matches finite differences") {
    ScoreModel m = make_model(2, 1.0, 77, 6, 2, 0.7);
    Rng rng(51);
    Vec x(2);
    x << 0.2, 0.8;
    const double t = 0.4;
    Vec sbar(2);
    sbar << rng.normal(), rng.normal();

    LadderContext ctx;
    score_eval(m, x, t, ctx);
    Vec xbar = Vec::Zero(2);
    std::vector<double> pgrad(static_cast<size_t>(m.net().param_count()), 0.0);
    score_vjp(m, ctx, sbar, xbar, pgrad.data());

    const double h = 1e-6;
    for (int i = 0; i < 2; ++i) {
        Vec xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        const double fd = sbar.dot(m.score(xp, t) - m.score(xm, t)) / (2 * h);
        CHECK(rel_err(fd, xbar[i]) < 1e-6);
    }
    for (int k = 0; k < m.net().param_count(); k += std::max(1, m.net().param_count() / 40)) {
        ScoreModel mp = m, mm = m;
        mp.net().params()[static_cast<size_t>(k)] += h;
        mm.net().params()[static_cast<size_t>(k)] -= h;
        const double fd = sbar.dot(mp.score(x, t) - mm.score(x, t)) / (2 * h);
        CHECK(rel_err(fd, pgrad[static_cast<size_t>(k)]) < 1e-6);
    }
}

TEST_CASE("checkpoint roundtrip") {
    ScoreModel m = make_model(2, 1.3, 63);
    const std::string path = "test_model_ckpt.json";
    m.save(path);
    const ScoreModel m2 = ScoreModel::load(path);
    CHECK(m2.net().params() == m.net().params());
    Vec x(2);
    x << 0.3, -0.4;
    CHECK(m2.score(x, 0.7) == m.score(x, 0.7));
    CHECK((m2.base().precision - m.base().precision).norm() == 0.0);
    std::remove(path.c_str());
}
