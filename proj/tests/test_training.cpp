#include "bohmflow/training.hpp"

#include <cmath>

#include "bohmflow/rng.hpp"
#include "doctest.h"

using namespace bohmflow;

namespace {

ScoreModel harmonic_ground_model(const Mat& K, int width = 8, int layers = 2) {
    const auto ha = harmonic_approximation(make_harmonic(K));
    GaussianScore base;
    base.mu = Vec::Zero(K.rows());
    base.precision = ha.Sigma.inverse();
    MlpArchitecture arch;
    arch.input_dim = static_cast<int>(K.rows());
    arch.hidden_layers = layers;
    arch.hidden_width = width;
    arch.time_features = 2;
    return ScoreModel(base, FilmMlp(arch));
}

ScoreModel tiny_random_model(int d, std::uint64_t seed, int width, int layers, int tfeat,
                             double scale) {
    GaussianScore base;
    base.mu = Vec::Zero(d);
    base.precision = Mat::Identity(d, d);
    MlpArchitecture arch;
    arch.input_dim = d;
    arch.hidden_layers = layers;
    arch.hidden_width = width;
    arch.time_features = tfeat;
    FilmMlp net(arch);
    net.init_params(seed);
    Rng rng(seed + 100);
    for (auto& p : net.params()) p += scale * rng.normal();
    return ScoreModel(base, std::move(net));
}

}  // namespace

TEST_CASE("score target identities") {
    GaussianDensity rho0(Vec::Zero(1), Mat::Identity(1, 1));
    Vec x0(1);
    x0 << 0.6;

    SUBCASE("identity flow returns the initial score") {
        const Vec y = score_target(Mat::Identity(1, 1), Vec::Zero(1), x0, rho0);
        CHECK(y[0] == doctest::Approx(-0.6));
    }
    SUBCASE("affine expansion x -> 2x maps N(0,1) to N(0,4)") {
        Mat F(1, 1);
        F << 2.0;
        const Vec y = score_target(F, Vec::Zero(1), x0, rho0);
        const double xt = 2.0 * x0[0];
        CHECK(y[0] == doctest::Approx(-xt / 4.0).epsilon(1e-12));
    }
    SUBCASE("singular F throws") {
        CHECK_THROWS_AS(score_target(Mat::Zero(1, 1), Vec::Zero(1), x0, rho0), NumericError);
    }
}

TEST_CASE("fisher loss equals zero for the exact harmonic score") {
    Mat K = Mat::Identity(1, 1);
    ScoreModel m = harmonic_ground_model(K);
    const PotentialSpec pot = make_harmonic(K);
    GaussianDensity rho0(Vec::Zero(1), 0.5 * Mat::Identity(1, 1));
    const EnsembleState e = sample_initial_ensemble(rho0, 32, 7);

    PropagateOptions opts;
    opts.T = M_PI;
    opts.dt = 0.01;
    opts.stride = 10;
    opts.with_tangents = true;
    opts.store_F = true;
    const TrajectoryLog log = propagate(e, m, pot, opts);
    const FisherLossReport rep = fisher_loss(log, m, rho0);
    CHECK(rep.loss <= 1e-10);
    CHECK(rep.masked_fraction == 0.0);
}

TEST_CASE("constant score offset gives loss d c^2") {
    // identical trajectories, but the evaluated score is shifted by c in each
    // component relative to the target
    Mat K = Mat::Identity(2, 2);
    ScoreModel m = harmonic_ground_model(K);
    const PotentialSpec pot = make_harmonic(K);
    GaussianDensity rho0(Vec::Zero(2), 0.5 * Mat::Identity(2, 2));
    const EnsembleState e = sample_initial_ensemble(rho0, 16, 3);

    PropagateOptions opts;
    opts.T = 1.0;
    opts.dt = 0.01;
    opts.stride = 5;
    opts.with_tangents = true;
    opts.store_F = true;
    const TrajectoryLog log = propagate(e, m, pot, opts);

    const double c = 0.37;
    ScoreModel shifted = m;
    // shift the base mean: s(x) = -P(x - mu) gains +P dmu = c per component
    GaussianScore base = m.base();
    base.mu = m.base().precision.ldlt().solve(Vec::Constant(2, c));
    ScoreModel m2(base, m.net());
    const FisherLossReport rep = fisher_loss(log, m2, rho0);
    CHECK(rep.loss == doctest::Approx(2.0 * c * c).epsilon(1e-10));
}

TEST_CASE("masking soundness") {
    Mat K = Mat::Identity(1, 1);
    ScoreModel m = harmonic_ground_model(K);
    const PotentialSpec pot = make_harmonic(K);
    GaussianDensity rho0(Vec::Zero(1), 0.5 * Mat::Identity(1, 1));
    const EnsembleState e = sample_initial_ensemble(rho0, 8, 5);

    PropagateOptions opts;
    opts.T = 0.2;
    opts.dt = 0.01;
    opts.with_tangents = true;
    opts.store_F = true;

    SUBCASE("threshold above |det F| = 1 masks everything and errors") {
        opts.caustic_threshold = 1.01;
        const TrajectoryLog log = propagate(e, m, pot, opts);
        CHECK_THROWS_AS(fisher_loss(log, m, rho0), NumericError);
    }
    SUBCASE("threshold zero masks nothing") {
        opts.caustic_threshold = 0.0;
        const TrajectoryLog log = propagate(e, m, pot, opts);
        const FisherLossReport rep = fisher_loss(log, m, rho0);
        CHECK(rep.masked_fraction == 0.0);
    }
}

TEST_CASE("bptt gradient matches the forward loss and finite differences") {
    // tiny instance: d=1, M=8, 10 steps, <= 50 parameters
    ScoreModel m = tiny_random_model(1, 91, 4, 1, 1, 0.3);
    CHECK(m.net().param_count() <= 50);
    const PotentialSpec pot = make_double_well(1.0, 1.5);
    GaussianDensity rho0(Vec::Zero(1), 0.3 * Mat::Identity(1, 1));
    const EnsembleState e = sample_initial_ensemble(rho0, 8, 17);

    LossGradientOptions opts;
    opts.T = 0.1;
    opts.dt = 0.01;
    opts.stride = 1;

    const FisherLossReport rep = loss_gradient(m, pot, rho0, e, opts);

    // the bptt forward must agree with the standalone fisher_loss pipeline
    PropagateOptions popts;
    popts.T = opts.T;
    popts.dt = opts.dt;
    popts.stride = opts.stride;
    popts.with_tangents = true;
    popts.store_F = true;
    const TrajectoryLog log = propagate(e, m, pot, popts);
    const FisherLossReport plain = fisher_loss(log, m, rho0);
    CHECK(rep.loss == doctest::Approx(plain.loss).epsilon(1e-13));

    // componentwise finite-difference check of the full parameter gradient
    auto loss_at = [&](const std::vector<double>& params) {
        ScoreModel mm = m;
        mm.net().params() = params;
        return loss_gradient(mm, pot, rho0, e, opts).loss;
    };
    const double h = 3e-5;
    int checked = 0;
    for (int k = 0; k < m.net().param_count(); ++k) {
        std::vector<double> pp = m.net().params();
        pp[static_cast<size_t>(k)] += h;
        const double lp = loss_at(pp);
        pp[static_cast<size_t>(k)] -= 2 * h;
        const double lm = loss_at(pp);
        const double fd = (lp - lm) / (2 * h);
        const double ad = rep.grad[static_cast<size_t>(k)];
        const double denom = std::max({std::abs(fd), std::abs(ad), 1e-8});
        REQUIRE(std::abs(fd - ad) / denom < 1e-4);
        ++checked;
    }
    CHECK(checked == m.net().param_count());
}

TEST_CASE("gradient vanishes at the harmonic fixed point") {
    Mat K = Mat::Identity(1, 1);
    ScoreModel m = harmonic_ground_model(K, 8, 2);
    const PotentialSpec pot = make_harmonic(K);
    GaussianDensity rho0(Vec::Zero(1), 0.5 * Mat::Identity(1, 1));
    const EnsembleState e = sample_initial_ensemble(rho0, 16, 29);

    LossGradientOptions opts;
    opts.T = 0.5;
    opts.dt = 0.01;
    opts.stride = 5;
    const FisherLossReport rep = loss_gradient(m, pot, rho0, e, opts);
    CHECK(rep.loss <= 1e-10);
    double gnorm = 0.0;
    for (double g : rep.grad) gnorm = std::max(gnorm, std::abs(g));
    CHECK(gnorm <= 1e-8);
}

TEST_CASE("training at the fixed point is inert") {
    Mat K = Mat::Identity(1, 1);
    ScoreModel m = harmonic_ground_model(K, 8, 2);
    const std::vector<double> params0 = m.net().params();
    const PotentialSpec pot = make_harmonic(K);
    GaussianDensity rho0(Vec::Zero(1), 0.5 * Mat::Identity(1, 1));

    TrainConfig cfg;
    cfg.M = 16;
    cfg.T = 0.5;
    cfg.dt = 0.01;
    cfg.epochs = 100;
    cfg.checkpoint_stride = 5;
    cfg.seed = 11;
    const TrainResult res = train(cfg, m, pot, rho0);
    CHECK(!res.aborted);
    for (const auto& em : res.metrics) CHECK(em.loss <= 1e-8);
    double drift = 0.0;
    for (size_t k = 0; k < params0.size(); ++k)
        drift = std::max(drift, std::abs(m.net().params()[k] - params0[k]));
    CHECK(drift <= 1e-6);
}

TEST_CASE("invalid train config is rejected") {
    TrainConfig cfg;
    cfg.caustic_threshold = 1.01;
    CHECK_THROWS_AS(validate(cfg), ConfigError);
    cfg.caustic_threshold = 0.1;
    cfg.epochs = 0;
    CHECK_THROWS_AS(validate(cfg), ConfigError);
}

TEST_CASE("short double-well training reduces the loss") {
    // a fast smoke-scale version of the desk run: the loss must move down
    ScoreModel m = tiny_random_model(1, 5, 16, 2, 2, 0.0);
    const PotentialSpec pot = make_double_well(1.0, 1.5);
    GaussianDensity rho0(Vec::Zero(1), 0.25 * Mat::Identity(1, 1));
    GaussianScore base;
    base.mu = rho0.mu;
    base.precision = rho0.precision;
    ScoreModel warm(base, m.net());

    TrainConfig cfg;
    cfg.M = 32;
    cfg.T = 0.5;
    cfg.dt = 0.01;
    cfg.epochs = 60;
    cfg.checkpoint_stride = 5;
    cfg.seed = 2;
    cfg.lr = 3e-3;
    const TrainResult res = train(cfg, warm, pot, rho0);
    CHECK(!res.aborted);
    const double first = res.metrics.front().loss;
    const double last = res.metrics.back().loss;
    CHECK(last < 0.5 * first);
}
