#include "bohmflow/trajectory.hpp"

#include <cmath>
#include <fstream>

#include "bohmflow/csv.hpp"
#include "bohmflow/parallel.hpp"
#include "bohmflow/rng.hpp"

namespace bohmflow {

GaussianDensity::GaussianDensity(Vec mu_, Mat Sigma_) : mu(std::move(mu_)), Sigma(std::move(Sigma_)) {
    const int d = static_cast<int>(mu.size());
    if (Sigma.rows() != d || Sigma.cols() != d) throw ConfigError("GaussianDensity: Sigma must be d x d");
    Eigen::LLT<Mat> llt(Sigma);
    if (llt.info() != Eigen::Success)
        throw ConfigError("GaussianDensity: covariance is not positive definite");
    chol = llt.matrixL();
    precision = llt.solve(Mat::Identity(d, d));
    double logdet_sigma = 0.0;
    for (int i = 0; i < d; ++i) logdet_sigma += 2.0 * std::log(chol(i, i));
    log_norm = -0.5 * d * std::log(2.0 * M_PI) - 0.5 * logdet_sigma;
}

double GaussianDensity::log_density(const Vec& x) const {
    const Vec r = x - mu;
    return log_norm - 0.5 * r.dot(precision * r);
}

void ParticleState::init(const Vec& x0_, bool tangents) {
    const int d = static_cast<int>(x0_.size());
    x = x0_;
    x0 = x0_;
    v = Vec::Zero(d);
    F = Mat::Identity(d, d);
    G = Mat::Zero(d, d);
    logdetF = 0.0;
    dF.clear();
    dG.clear();
    if (tangents) {
        dF.assign(static_cast<size_t>(d), Mat::Zero(d, d));
        dG.assign(static_cast<size_t>(d), Mat::Zero(d, d));
    }
}

EnsembleState sample_initial_ensemble(const GaussianDensity& rho0, int M, std::uint64_t seed,
                                      bool tangents) {
    if (M < 1) throw ConfigError("ensemble size must be >= 1");
    const int d = static_cast<int>(rho0.mu.size());
    EnsembleState out;
    out.t = 0.0;
    out.seed = seed;
    out.particles.resize(static_cast<size_t>(M));
    for (int i = 0; i < M; ++i) {
        Rng rng(derive_seed(seed, "particle", static_cast<std::uint64_t>(i)));
        Vec z(d);
        for (int k = 0; k < d; ++k) z[k] = rng.normal();
        out.particles[static_cast<size_t>(i)].init(rho0.mu + rho0.chol * z, tangents);
    }
    return out;
}

StepPlan plan_steps(double T, double dt) {
    if (T <= 0 || dt <= 0) throw ConfigError("propagation requires T > 0 and dt > 0");
    const int steps = static_cast<int>(std::llround(T / dt));
    if (steps < 1) throw ConfigError("T/dt rounds to zero steps");
    const double dt_eff = T / steps;
    if (std::abs(dt_eff - dt) > 0.02 * dt)
        throw ConfigError("T/dt is not close to an integer step count");
    return {steps, dt_eff};
}

double logdet(const Mat& F) {
    Eigen::PartialPivLU<Mat> lu(F);
    const double det = lu.determinant();
    return std::log(std::abs(det));
}

void leapfrog_step_primed(ParticleState& p, LadderPoint& entry, const ScoreModel& model,
                          const PotentialSpec& pot, double t, double dt, LadderContext& ctx) {
    const int d = static_cast<int>(p.x.size());
    const double k = 0.5 * dt / model.mass();
    const bool tangents = !p.dF.empty();
    const int order = tangents ? 5 : 4;
    if (entry.depth < order) throw NumericError("leapfrog_step: ladder point too shallow");

    auto force = [&]() { return Eigen::Map<const Vec>(entry.force.data(), d); };
    auto hess = [&]() { return Eigen::Map<const Mat>(entry.hess.data(), d, d); };
    auto third_u = [&](const Vec& u) {
        Mat Tu = Mat::Zero(d, d);
        for (int l = 0; l < d; ++l)
            Tu += u[l] * Eigen::Map<const Mat>(entry.third_slice(l), d, d);
        return Tu;
    };

    const Vec vh = p.v + k * force();
    const Mat Gh = p.G - k * (hess() * p.F);
    std::vector<Mat> dGh;
    if (tangents) {
        dGh.resize(static_cast<size_t>(d));
        for (int j = 0; j < d; ++j)
            dGh[static_cast<size_t>(j)] = p.dG[static_cast<size_t>(j)] -
                                          k * (third_u(p.F.col(j)) * p.F +
                                               hess() * p.dF[static_cast<size_t>(j)]);
    }

    p.x += dt * vh;
    p.F += dt * Gh;
    if (tangents)
        for (int j = 0; j < d; ++j) p.dF[static_cast<size_t>(j)] += dt * dGh[static_cast<size_t>(j)];

    ladder_eval(model, &pot, p.x, t + dt, order, ctx, entry);

    p.v = vh + k * force();
    p.G = Gh - k * (hess() * p.F);
    if (tangents) {
        for (int j = 0; j < d; ++j)
            p.dG[static_cast<size_t>(j)] = dGh[static_cast<size_t>(j)] -
                                           k * (third_u(p.F.col(j)) * p.F +
                                                hess() * p.dF[static_cast<size_t>(j)]);
    }
    p.logdetF = logdet(p.F);
}

void leapfrog_step(ParticleState& p, const ScoreModel& model, const PotentialSpec& pot, double t,
                   double dt) {
    LadderContext ctx;
    const int order = p.dF.empty() ? 4 : 5;
    LadderPoint entry = ladder_eval(model, &pot, p.x, t, order, ctx);
    leapfrog_step_primed(p, entry, model, pot, t, dt, ctx);
}

namespace {

bool is_masked(double absdet, double threshold) { return !(absdet >= threshold); }

void record_particle(TrajectoryCheckpoint& cp, int i, const ParticleState& p, double threshold,
                     bool store_F, bool tangents) {
    cp.x[static_cast<size_t>(i)] = p.x;
    cp.v[static_cast<size_t>(i)] = p.v;
    Eigen::PartialPivLU<Mat> lu(p.F);
    const double det = lu.determinant();
    const double absdet = std::abs(det);
    cp.logdetF[static_cast<size_t>(i)] = std::log(absdet);
    cp.mask[static_cast<size_t>(i)] = is_masked(absdet, threshold) ? 1 : 0;
    if (store_F) {
        cp.F[static_cast<size_t>(i)] = p.F;
        cp.G[static_cast<size_t>(i)] = p.G;
    }
    if (tangents) {
        const int d = static_cast<int>(p.x.size());
        Vec g = Vec::Zero(d);
        if (absdet >= 1e-12) {
            const Mat Finv = lu.inverse();
            for (int j = 0; j < d; ++j)
                g[j] = (Finv * p.dF[static_cast<size_t>(j)]).trace();
        } else {
            cp.mask[static_cast<size_t>(i)] = 1;  // singular flow: mask, do not abort
        }
        cp.dlogdet[static_cast<size_t>(i)] = g;
    }
}

}  // namespace

TrajectoryLog propagate(const EnsembleState& ensemble, const ScoreModel& model,
                        const PotentialSpec& pot, const PropagateOptions& opts) {
    const int M = ensemble.size();
    if (M < 1) throw ConfigError("propagate: empty ensemble");
    const int d = static_cast<int>(ensemble.particles[0].x.size());
    const StepPlan plan = plan_steps(opts.T, opts.dt);
    if (opts.stride < 1) throw ConfigError("propagate: stride must be >= 1");

    TrajectoryLog log;
    log.d = d;
    log.M = M;
    log.steps = plan.steps;
    log.dt = plan.dt;
    log.stride = opts.stride;
    log.caustic_threshold = opts.caustic_threshold;
    log.has_F = opts.store_F;
    log.has_tangents = opts.with_tangents;
    log.x0.resize(static_cast<size_t>(M));
    for (int i = 0; i < M; ++i) log.x0[static_cast<size_t>(i)] = ensemble.particles[static_cast<size_t>(i)].x0;

    std::vector<int> cp_steps;
    for (int s = 0; s <= plan.steps; s += opts.stride) cp_steps.push_back(s);
    if (cp_steps.back() != plan.steps) cp_steps.push_back(plan.steps);
    log.checkpoints.resize(cp_steps.size());
    for (size_t c = 0; c < cp_steps.size(); ++c) {
        auto& cp = log.checkpoints[c];
        cp.step = cp_steps[c];
        cp.t = cp_steps[c] * plan.dt;
        cp.x.resize(static_cast<size_t>(M));
        cp.v.resize(static_cast<size_t>(M));
        cp.logdetF.resize(static_cast<size_t>(M));
        cp.mask.resize(static_cast<size_t>(M));
        if (opts.store_F) {
            cp.F.resize(static_cast<size_t>(M));
            cp.G.resize(static_cast<size_t>(M));
        }
        if (opts.with_tangents) cp.dlogdet.resize(static_cast<size_t>(M));
    }

    parallel_chunks(M, 16, opts.threads, [&](int, int begin, int end) {
        LadderContext ctx;
        const int order = opts.with_tangents ? 5 : 4;
        for (int i = begin; i < end; ++i) {
            ParticleState p = ensemble.particles[static_cast<size_t>(i)];
            if (opts.with_tangents && p.dF.empty()) p.init(p.x0, true);
            try {
                LadderPoint entry = ladder_eval(model, &pot, p.x, 0.0, order, ctx);
                size_t next_cp = 0;
                record_particle(log.checkpoints[next_cp], i, p, opts.caustic_threshold, opts.store_F,
                                opts.with_tangents);
                ++next_cp;
                for (int s = 0; s < plan.steps; ++s) {
                    leapfrog_step_primed(p, entry, model, pot, s * plan.dt, plan.dt, ctx);
                    if (next_cp < log.checkpoints.size() && log.checkpoints[next_cp].step == s + 1) {
                        record_particle(log.checkpoints[next_cp], i, p, opts.caustic_threshold,
                                        opts.store_F, opts.with_tangents);
                        ++next_cp;
                    }
                }
            } catch (const NumericError& e) {
                throw NumericError("particle " + std::to_string(i) + ": " + e.what());
            }
        }
    });
    return log;
}

std::vector<std::vector<Vec>> tangent_propagate(const EnsembleState& ensemble,
                                                const ScoreModel& model, const PotentialSpec& pot,
                                                double T, double dt, int stride, int threads) {
    PropagateOptions opts;
    opts.T = T;
    opts.dt = dt;
    opts.stride = stride;
    opts.with_tangents = true;
    opts.threads = threads;
    const TrajectoryLog log = propagate(ensemble, model, pot, opts);
    std::vector<std::vector<Vec>> out(static_cast<size_t>(log.M));
    for (int i = 0; i < log.M; ++i) {
        out[static_cast<size_t>(i)].reserve(log.checkpoints.size());
        for (const auto& cp : log.checkpoints) out[static_cast<size_t>(i)].push_back(cp.dlogdet[static_cast<size_t>(i)]);
    }
    return out;
}

double pushforward_logdensity(const ParticleState& p, const GaussianDensity& rho0) {
    return pushforward_logdensity(p.x0, p.logdetF, rho0);
}

double pushforward_logdensity(const Vec& x0, double logdetF, const GaussianDensity& rho0) {
    if (!std::isfinite(logdetF)) throw NumericError("pushforward_logdensity: non-finite logdetF");
    return rho0.log_density(x0) - logdetF;
}

void write_trajectory_csv(const TrajectoryLog& log, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw ConfigError("cannot write " + path);
    f << "t,particle";
    for (int k = 0; k < log.d; ++k) f << ",x" << k;
    for (int k = 0; k < log.d; ++k) f << ",v" << k;
    f << ",logdetF,mask\n";
    for (const auto& cp : log.checkpoints) {
        for (int i = 0; i < log.M; ++i) {
            f << csv_num(cp.t) << ',' << i;
            for (int k = 0; k < log.d; ++k) f << ',' << csv_num(cp.x[static_cast<size_t>(i)][k]);
            for (int k = 0; k < log.d; ++k) f << ',' << csv_num(cp.v[static_cast<size_t>(i)][k]);
            f << ',' << csv_num(cp.logdetF[static_cast<size_t>(i)]) << ','
              << static_cast<int>(cp.mask[static_cast<size_t>(i)]) << '\n';
        }
    }
}

}  // namespace bohmflow
