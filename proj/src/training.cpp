#include "bohmflow/training.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "bohmflow/csv.hpp"
#include "bohmflow/parallel.hpp"
#include "bohmflow/rng.hpp"

namespace bohmflow {

Vec score_target(const Mat& F, const Vec& dlogdet, const Vec& x0, const GaussianDensity& rho0) {
    Eigen::PartialPivLU<Mat> lu(F);
    if (std::abs(lu.determinant()) < 1e-12) throw NumericError("score_target: singular deformation gradient");
    const Vec z = rho0.score(x0) - dlogdet;
    return lu.transpose().solve(z);
}

namespace {

// trapezoidal time weights over checkpoint times
std::vector<double> trapezoid_weights(const std::vector<TrajectoryCheckpoint>& cps) {
    const size_t n = cps.size();
    std::vector<double> w(n, 0.0);
    if (n == 1) {
        w[0] = 1.0;
        return w;
    }
    w[0] = 0.5 * (cps[1].t - cps[0].t);
    for (size_t j = 1; j + 1 < n; ++j) w[j] = 0.5 * (cps[j + 1].t - cps[j - 1].t);
    w[n - 1] = 0.5 * (cps[n - 1].t - cps[n - 2].t);
    return w;
}

}  // namespace

FisherLossReport fisher_loss(const TrajectoryLog& log, const ScoreModel& model,
                             const GaussianDensity& rho0) {
    if (!log.has_tangents || !log.has_F)
        throw ConfigError("fisher_loss requires a tangent-augmented log with stored F");
    const auto w = trapezoid_weights(log.checkpoints);

    FisherLossReport rep;
    rep.per_checkpoint.assign(log.checkpoints.size(), 0.0);
    double num = 0.0, den = 0.0;
    long masked = 0, total = 0;
    LadderContext ctx;
    for (size_t j = 0; j < log.checkpoints.size(); ++j) {
        const auto& cp = log.checkpoints[j];
        double sum = 0.0;
        int count = 0;
        for (int i = 0; i < log.M; ++i) {
            ++total;
            if (cp.mask[static_cast<size_t>(i)]) {
                ++masked;
                continue;
            }
            const Vec s = score_eval(model, cp.x[static_cast<size_t>(i)], cp.t, ctx);
            const Vec y = score_target(cp.F[static_cast<size_t>(i)], cp.dlogdet[static_cast<size_t>(i)],
                                       log.x0[static_cast<size_t>(i)], rho0);
            const double r2 = (s - y).squaredNorm();
            sum += r2;
            ++count;
            num += w[j] * r2;
            den += w[j];
        }
        rep.per_checkpoint[j] = count > 0 ? sum / count : std::numeric_limits<double>::quiet_NaN();
    }
    rep.masked_fraction = static_cast<double>(masked) / static_cast<double>(total);
    if (den == 0.0) throw NumericError("fisher_loss: degenerate loss, every particle-checkpoint is masked");
    rep.loss = num / den;
    return rep;
}

// ---------------------------------------------------------------------------
// BPTT engine
// ---------------------------------------------------------------------------

namespace {

struct PlainState {
    Vec x, v;
    Mat F, G;
    std::vector<Mat> dF, dG;

    void from(const ParticleState& p) {
        x = p.x;
        v = p.v;
        F = p.F;
        G = p.G;
        dF = p.dF;
        dG = p.dG;
    }
    void to(ParticleState& p) const {
        p.x = x;
        p.v = v;
        p.F = F;
        p.G = G;
        p.dF = dF;
        p.dG = dG;
    }
};

// adjoint of a particle state
struct AdjState {
    Vec x, v;
    Mat F, G;
    std::vector<Mat> dF, dG;

    void zero(int d) {
        x = Vec::Zero(d);
        v = Vec::Zero(d);
        F = Mat::Zero(d, d);
        G = Mat::Zero(d, d);
        dF.assign(static_cast<size_t>(d), Mat::Zero(d, d));
        dG.assign(static_cast<size_t>(d), Mat::Zero(d, d));
    }
};

// pending cotangent on one ladder evaluation
struct EvalBar {
    Vec force;
    Mat hess;
    std::vector<Mat> third;

    void zero(int d) {
        force = Vec::Zero(d);
        hess = Mat::Zero(d, d);
        third.assign(static_cast<size_t>(d), Mat::Zero(d, d));
    }
};

struct CheckpointInfo {
    int step = 0;       // boundary index
    double t = 0.0;
    double weight = 0;  // trapezoid weight
    size_t cp_index = 0;
};

// Per-particle forward pass: integrates with tangents, stores snapshots
// every `snap_every` steps, records masks and (optionally) loss pieces.
struct ForwardScratch {
    std::vector<PlainState> snapshots;
    std::vector<std::uint8_t> masks;  // per checkpoint
};

struct LossAccum {
    double num = 0.0;
    std::vector<double> cp_sum;  // per checkpoint sum of |r|^2
    std::vector<int> cp_count;
    double energy = 0.0;  // trapezoid-weighted integral of per-particle energy
};

Mat third_contract(const LadderPoint& P, const Vec& u) {
    const int d = static_cast<int>(u.size());
    Mat out = Mat::Zero(d, d);
    for (int l = 0; l < d; ++l) out += u[l] * P.third[static_cast<size_t>(l)];
    return out;
}

// one KDK step on plain state given the entry ladder; returns exit ladder
void step_state(PlainState& s, LadderPoint& entry, const ScoreModel& model, const PotentialSpec& pot,
                double t, double dt, LadderContext& ctx) {
    const int d = static_cast<int>(s.x.size());
    const double k = 0.5 * dt / model.mass();
    const Vec vh = s.v + k * entry.force;
    const Mat Gh = s.G - k * (entry.hess * s.F);
    std::vector<Mat> dGh(static_cast<size_t>(d));
    for (int j = 0; j < d; ++j)
        dGh[static_cast<size_t>(j)] = s.dG[static_cast<size_t>(j)] -
                                      k * (third_contract(entry, s.F.col(j)) * s.F +
                                           entry.hess * s.dF[static_cast<size_t>(j)]);
    s.x += dt * vh;
    s.F += dt * Gh;
    for (int j = 0; j < d; ++j) s.dF[static_cast<size_t>(j)] += dt * dGh[static_cast<size_t>(j)];
    entry = ladder_eval(model, &pot, s.x, t + dt, 5, ctx);
    s.v = vh + k * entry.force;
    s.G = Gh - k * (entry.hess * s.F);
    for (int j = 0; j < d; ++j)
        s.dG[static_cast<size_t>(j)] = dGh[static_cast<size_t>(j)] -
                                       k * (third_contract(entry, s.F.col(j)) * s.F +
                                            entry.hess * s.dF[static_cast<size_t>(j)]);
}

struct BpttShared {
    const ScoreModel* model;
    const PotentialSpec* pot;
    const GaussianDensity* rho0;
    StepPlan plan;
    int snap_every = 1;
    double caustic_threshold = 0.1;
    std::vector<CheckpointInfo> cps;  // ascending by step; step -> info
};

// forward pass for particle i
void bptt_forward(const BpttShared& sh, const Vec& x0, ForwardScratch& scratch, LossAccum* acc,
                  LadderContext& ctx) {
    const int d = static_cast<int>(x0.size());
    PlainState s;
    ParticleState p;
    p.init(x0, true);
    s.from(p);

    scratch.snapshots.clear();
    scratch.masks.assign(sh.cps.size(), 0);
    if (acc) {
        acc->cp_sum.assign(sh.cps.size(), 0.0);
        acc->cp_count.assign(sh.cps.size(), 0);
        acc->num = 0.0;
        acc->energy = 0.0;
    }

    LadderPoint entry = ladder_eval(*sh.model, sh.pot, s.x, 0.0, 5, ctx);
    size_t next_cp = 0;
    LadderContext score_ctx;

    auto handle_boundary = [&](int step, const LadderPoint& P) {
        if (next_cp >= sh.cps.size() || sh.cps[next_cp].step != step) return;
        const CheckpointInfo& info = sh.cps[next_cp];
        Eigen::PartialPivLU<Mat> lu(s.F);
        const double absdet = std::abs(lu.determinant());
        const bool masked = !(absdet >= sh.caustic_threshold) || absdet < 1e-12;
        scratch.masks[next_cp] = masked ? 1 : 0;
        if (acc) {
            const double energy =
                0.5 * sh.model->mass() * s.v.squaredNorm() + P.vq;
            acc->energy += info.weight * energy;
            if (!masked) {
                Vec g(d);
                const Mat Finv = lu.inverse();
                for (int j = 0; j < d; ++j) g[j] = (Finv * s.dF[static_cast<size_t>(j)]).trace();
                const Vec y = lu.transpose().solve(sh.rho0->score(x0) - g);
                const Vec r = score_eval(*sh.model, s.x, info.t, score_ctx) - y;
                const double r2 = r.squaredNorm();
                acc->num += info.weight * r2;
                acc->cp_sum[next_cp] = r2;
                acc->cp_count[next_cp] = 1;
            }
        }
        ++next_cp;
    };

    handle_boundary(0, entry);
    for (int n = 0; n < sh.plan.steps; ++n) {
        if (n % sh.snap_every == 0) scratch.snapshots.push_back(s);
        step_state(s, entry, *sh.model, *sh.pot, n * sh.plan.dt, sh.plan.dt, ctx);
        handle_boundary(n + 1, entry);
    }
}

// reverse sweep for particle i; scales residual adjoints by 2 * w / Wnorm
void bptt_backward(const BpttShared& sh, const Vec& x0, const ForwardScratch& scratch, double inv_norm,
                   double* param_grad, std::vector<LadderContext>& ctx_pool) {
    const int d = static_cast<int>(x0.size());
    const int N = sh.plan.steps;
    const int k = sh.snap_every;
    const double half = 0.5 * sh.plan.dt / sh.model->mass();

    AdjState bar;
    bar.zero(d);
    EvalBar pend;
    pend.zero(d);

    // map step -> checkpoint slot
    std::vector<int> cp_at(static_cast<size_t>(N + 1), -1);
    for (size_t c = 0; c < sh.cps.size(); ++c) cp_at[static_cast<size_t>(sh.cps[c].step)] = static_cast<int>(c);

    LadderContext score_ctx;

    auto inject_loss = [&](int boundary, const PlainState& s) {
        const int c = cp_at[static_cast<size_t>(boundary)];
        if (c < 0 || scratch.masks[static_cast<size_t>(c)]) return;
        const CheckpointInfo& info = sh.cps[static_cast<size_t>(c)];
        Eigen::PartialPivLU<Mat> lu(s.F);
        const Mat Finv = lu.inverse();
        Vec g(d);
        for (int j = 0; j < d; ++j) g[j] = (Finv * s.dF[static_cast<size_t>(j)]).trace();
        const Vec y = lu.transpose().solve(sh.rho0->score(x0) - g);
        const Vec sc = score_eval(*sh.model, s.x, info.t, score_ctx);
        const Vec r = sc - y;
        const double scale = 2.0 * info.weight * inv_norm;

        // residual through the score network
        const Vec sbar = scale * r;
        score_vjp(*sh.model, score_ctx, sbar, bar.x, param_grad);

        // residual through the target y = F^{-T} z, z = score0(x0) - g
        const Vec ybar = -scale * r;
        const Vec wvec = lu.solve(ybar);
        bar.F -= y * wvec.transpose();
        for (int j = 0; j < d; ++j) {
            const double gbar = -wvec[j];
            bar.dF[static_cast<size_t>(j)] += gbar * Finv.transpose();
            bar.F -= gbar * (Finv * s.dF[static_cast<size_t>(j)] * Finv).transpose();
        }
    };

    // segment refwd storage
    const int max_seg = k;
    std::vector<PlainState> states(static_cast<size_t>(max_seg) + 1);
    std::vector<LadderPoint> points(static_cast<size_t>(max_seg) + 1);
    if (ctx_pool.size() < static_cast<size_t>(max_seg) + 1) ctx_pool.resize(static_cast<size_t>(max_seg) + 1);

    const int nseg = (N + k - 1) / k;
    bool at_final = true;
    for (int seg = nseg - 1; seg >= 0; --seg) {
        const int a = seg * k;
        const int b = std::min(N, a + k);
        const int len = b - a;

        // recompute forward within [a, b]
        states[0] = scratch.snapshots[static_cast<size_t>(seg)];
        points[0] = ladder_eval(*sh.model, sh.pot, states[0].x, a * sh.plan.dt, 5, ctx_pool[0]);
        for (int n = 0; n < len; ++n) {
            states[static_cast<size_t>(n + 1)] = states[static_cast<size_t>(n)];
            LadderPoint pt = points[static_cast<size_t>(n)];
            step_state(states[static_cast<size_t>(n + 1)], pt, *sh.model, *sh.pot, (a + n) * sh.plan.dt,
                       sh.plan.dt, ctx_pool[static_cast<size_t>(n + 1)]);
            points[static_cast<size_t>(n + 1)] = pt;
        }

        if (at_final) {
            inject_loss(N, states[static_cast<size_t>(len)]);
            at_final = false;
        }

        for (int n = b - 1; n >= a; --n) {
            const int li = n - a;  // local index of boundary n
            const PlainState& s0 = states[static_cast<size_t>(li)];
            const PlainState& s1 = states[static_cast<size_t>(li + 1)];
            const LadderPoint& P0 = points[static_cast<size_t>(li)];
            const LadderPoint& P1 = points[static_cast<size_t>(li + 1)];

            // recompute half-step values
            const Vec vh = s0.v + half * P0.force;
            const Mat Gh = s0.G - half * (P0.hess * s0.F);
            std::vector<Mat> dGh(static_cast<size_t>(d));
            for (int j = 0; j < d; ++j)
                dGh[static_cast<size_t>(j)] = s0.dG[static_cast<size_t>(j)] -
                                              half * (third_contract(P0, s0.F.col(j)) * s0.F +
                                                      P0.hess * s0.dF[static_cast<size_t>(j)]);

            // ---- reverse second kick ----
            Vec vhb = bar.v;
            pend.force += half * bar.v;
            Mat Ghb = bar.G;
            pend.hess -= half * bar.G * s1.F.transpose();
            Mat Fb1 = bar.F - half * (P1.hess * bar.G);
            std::vector<Mat> dGhb(static_cast<size_t>(d));
            std::vector<Mat> dFb1(static_cast<size_t>(d));
            for (int j = 0; j < d; ++j) {
                const Mat& dGbar = bar.dG[static_cast<size_t>(j)];
                dGhb[static_cast<size_t>(j)] = dGbar;
                const Mat Mb = -half * dGbar * s1.F.transpose();
                const Vec u1 = s1.F.col(j);
                Vec ub(d);
                for (int l = 0; l < d; ++l) {
                    pend.third[static_cast<size_t>(l)] += u1[l] * Mb;
                    ub[l] = (P1.third[static_cast<size_t>(l)].array() * Mb.array()).sum();
                }
                Fb1.col(j) += ub;
                Fb1 -= half * (third_contract(P1, u1) * dGbar);
                pend.hess -= half * dGbar * s1.dF[static_cast<size_t>(j)].transpose();
                dFb1[static_cast<size_t>(j)] =
                    bar.dF[static_cast<size_t>(j)] - half * (P1.hess * dGbar);
            }

            // ---- finalize eval at boundary n+1 ----
            ladder_vjp(*sh.model, sh.pot, ctx_pool[static_cast<size_t>(li + 1)], 0.0, &pend.force,
                       &pend.hess, &pend.third, bar.x, param_grad);

            // ---- reverse drift ----
            // x' = x + dt vh; F' = F + dt Gh; dF' = dF + dt dGh
            vhb += sh.plan.dt * bar.x;
            Ghb += sh.plan.dt * Fb1;
            for (int j = 0; j < d; ++j) dGhb[static_cast<size_t>(j)] += sh.plan.dt * dFb1[static_cast<size_t>(j)];

            // ---- reverse first kick ----
            AdjState nb;
            nb.zero(d);
            nb.x = bar.x;  // position passes straight through the kick
            nb.v = vhb;
            pend.zero(d);
            pend.force = half * vhb;
            nb.G = Ghb;
            pend.hess -= half * Ghb * s0.F.transpose();
            nb.F = Fb1 - half * (P0.hess * Ghb);
            for (int j = 0; j < d; ++j) {
                const Mat& dGhbar = dGhb[static_cast<size_t>(j)];
                nb.dG[static_cast<size_t>(j)] = dGhbar;
                const Mat Mb = -half * dGhbar * s0.F.transpose();
                const Vec u0 = s0.F.col(j);
                Vec ub(d);
                for (int l = 0; l < d; ++l) {
                    pend.third[static_cast<size_t>(l)] += u0[l] * Mb;
                    ub[l] = (P0.third[static_cast<size_t>(l)].array() * Mb.array()).sum();
                }
                nb.F.col(j) += ub;
                nb.F -= half * (third_contract(P0, u0) * dGhbar);
                pend.hess -= half * dGhbar * s0.dF[static_cast<size_t>(j)].transpose();
                nb.dF[static_cast<size_t>(j)] = dFb1[static_cast<size_t>(j)] - half * (P0.hess * dGhbar);
            }
            bar = nb;

            inject_loss(n, s0);
        }
    }

    // eval at boundary 0: only its first-kick cotangents remain; x(0) is a
    // leaf so the position adjoint is discarded
    Vec x0bar = Vec::Zero(d);
    LadderContext ctx0;
    ladder_eval(*sh.model, sh.pot, scratch.snapshots[0].x, 0.0, 5, ctx0);
    ladder_vjp(*sh.model, sh.pot, ctx0, 0.0, &pend.force, &pend.hess, &pend.third, x0bar, param_grad);
}

}  // namespace

FisherLossReport loss_gradient(const ScoreModel& model, const PotentialSpec& pot,
                               const GaussianDensity& rho0, const EnsembleState& ensemble,
                               const LossGradientOptions& opts) {
    const int M = ensemble.size();
    const int d = model.dim();
    const int P = model.net().param_count();

    BpttShared sh;
    sh.model = &model;
    sh.pot = &pot;
    sh.rho0 = &rho0;
    sh.plan = plan_steps(opts.T, opts.dt);
    sh.snap_every = std::max(1, static_cast<int>(std::ceil(std::sqrt(static_cast<double>(sh.plan.steps)))));
    sh.caustic_threshold = opts.caustic_threshold;

    // checkpoint schedule with trapezoid weights
    std::vector<int> cp_steps;
    for (int s = 0; s <= sh.plan.steps; s += opts.stride) cp_steps.push_back(s);
    if (cp_steps.back() != sh.plan.steps) cp_steps.push_back(sh.plan.steps);
    sh.cps.resize(cp_steps.size());
    for (size_t c = 0; c < cp_steps.size(); ++c) {
        sh.cps[c].step = cp_steps[c];
        sh.cps[c].t = cp_steps[c] * sh.plan.dt;
        sh.cps[c].cp_index = c;
    }
    {
        std::vector<TrajectoryCheckpoint> tmp(sh.cps.size());
        for (size_t c = 0; c < sh.cps.size(); ++c) tmp[c].t = sh.cps[c].t;
        const auto w = trapezoid_weights(tmp);
        for (size_t c = 0; c < sh.cps.size(); ++c) sh.cps[c].weight = w[c];
    }

    const int chunk = 16;
    const int nchunks = num_chunks(M, chunk);

    // phase 1: forward, snapshots + masks + loss pieces
    std::vector<ForwardScratch> scratch(static_cast<size_t>(M));
    std::vector<LossAccum> acc(static_cast<size_t>(M));
    parallel_chunks(M, chunk, opts.threads, [&](int, int begin, int end) {
        LadderContext ctx;
        for (int i = begin; i < end; ++i) {
            try {
                bptt_forward(sh, ensemble.particles[static_cast<size_t>(i)].x0,
                             scratch[static_cast<size_t>(i)], &acc[static_cast<size_t>(i)], ctx);
            } catch (const NumericError& e) {
                throw NumericError("loss_gradient: particle " + std::to_string(i) + ": " + e.what());
            }
        }
    });

    FisherLossReport rep;
    rep.per_checkpoint.assign(sh.cps.size(), 0.0);
    std::vector<int> cp_counts(sh.cps.size(), 0);
    double num = 0.0, den = 0.0, energy = 0.0;
    long masked = 0;
    for (int i = 0; i < M; ++i) {
        num += acc[static_cast<size_t>(i)].num;
        energy += acc[static_cast<size_t>(i)].energy;
        for (size_t c = 0; c < sh.cps.size(); ++c) {
            if (scratch[static_cast<size_t>(i)].masks[c]) {
                ++masked;
            } else {
                den += sh.cps[c].weight;
                rep.per_checkpoint[c] += acc[static_cast<size_t>(i)].cp_sum[c];
                cp_counts[c] += acc[static_cast<size_t>(i)].cp_count[c];
            }
        }
    }
    for (size_t c = 0; c < sh.cps.size(); ++c)
        rep.per_checkpoint[c] = cp_counts[c] > 0 ? rep.per_checkpoint[c] / cp_counts[c]
                                                 : std::numeric_limits<double>::quiet_NaN();
    rep.masked_fraction =
        static_cast<double>(masked) / (static_cast<double>(M) * static_cast<double>(sh.cps.size()));
    if (den == 0.0) throw NumericError("loss_gradient: degenerate loss, every particle-checkpoint is masked");
    rep.loss = num / den;
    double wsum = 0.0;
    for (const auto& c : sh.cps) wsum += c.weight;
    rep.mean_energy = energy / (wsum * M);

    // phase 2: reverse sweep with per-chunk gradient buffers, reduced in
    // fixed chunk order for thread-count independence
    std::vector<std::vector<double>> chunk_grad(static_cast<size_t>(nchunks));
    const double inv_norm = 1.0 / den;
    parallel_chunks(M, chunk, opts.threads, [&](int c, int begin, int end) {
        auto& grad = chunk_grad[static_cast<size_t>(c)];
        grad.assign(static_cast<size_t>(P), 0.0);
        std::vector<LadderContext> pool;
        for (int i = begin; i < end; ++i) {
            bptt_backward(sh, ensemble.particles[static_cast<size_t>(i)].x0,
                          scratch[static_cast<size_t>(i)], inv_norm, grad.data(), pool);
        }
    });
    rep.grad.assign(static_cast<size_t>(P), 0.0);
    for (int c = 0; c < nchunks; ++c)
        for (int k = 0; k < P; ++k) rep.grad[static_cast<size_t>(k)] += chunk_grad[static_cast<size_t>(c)][static_cast<size_t>(k)];

    for (double g : rep.grad)
        if (!std::isfinite(g)) throw NumericError("loss_gradient: non-finite parameter gradient");
    return rep;
}

void validate(const TrainConfig& cfg) {
    if (cfg.M < 1 || cfg.epochs < 1 || cfg.T <= 0 || cfg.dt <= 0 || cfg.lr <= 0 ||
        cfg.checkpoint_stride < 1 || cfg.checkpoint_every < 1)
        throw ConfigError("train config: all sizes and rates must be positive");
    if (!(cfg.caustic_threshold > 0.0 && cfg.caustic_threshold <= 1.0))
        throw ConfigError("train config: caustic_threshold must lie in (0, 1]");
}

TrainResult train(const TrainConfig& cfg, ScoreModel& model, const PotentialSpec& pot,
                  const GaussianDensity& rho0, const std::function<void(const EpochMetrics&)>& on_epoch) {
    validate(cfg);
    TrainResult result;

    const std::uint64_t ens_seed = derive_seed(cfg.seed, "ensemble");
    EnsembleState ensemble = sample_initial_ensemble(rho0, cfg.M, ens_seed);

    LossGradientOptions lopts;
    lopts.T = cfg.T;
    lopts.dt = cfg.dt;
    lopts.stride = cfg.checkpoint_stride;
    lopts.caustic_threshold = cfg.caustic_threshold;
    lopts.threads = cfg.threads;

    const int P = model.net().param_count();
    std::vector<double> m1(static_cast<size_t>(P), 0.0), m2(static_cast<size_t>(P), 0.0);
    std::vector<double> last_good = model.net().params();

    std::ofstream metrics;
    if (!cfg.out_dir.empty()) {
        std::filesystem::create_directories(cfg.out_dir);
        metrics.open(cfg.out_dir + "/metrics.csv");
        metrics << "epoch,loss,masked_fraction,energy_error,wall_ms\n";
    }

    int bad_streak = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        if (cfg.resample_each_epoch && epoch > 0)
            ensemble = sample_initial_ensemble(rho0, cfg.M, derive_seed(ens_seed, "resample", epoch));

        EpochMetrics em;
        em.epoch = epoch;
        bool finite = true;
        try {
            FisherLossReport rep = loss_gradient(model, pot, rho0, ensemble, lopts);
            rep.epoch = epoch;
            em.loss = rep.loss;
            em.masked_fraction = rep.masked_fraction;
            em.mean_energy = rep.mean_energy;
            em.energy_error = std::abs(rep.mean_energy - cfg.e_exact);
            finite = std::isfinite(rep.loss);

            if (finite) {
                last_good = model.net().params();
                // Adam
                const double b1t = 1.0 - std::pow(cfg.beta1, epoch + 1);
                const double b2t = 1.0 - std::pow(cfg.beta2, epoch + 1);
                auto& params = model.net().params();
                for (int k = 0; k < P; ++k) {
                    const double g = rep.grad[static_cast<size_t>(k)];
                    m1[static_cast<size_t>(k)] = cfg.beta1 * m1[static_cast<size_t>(k)] + (1 - cfg.beta1) * g;
                    m2[static_cast<size_t>(k)] = cfg.beta2 * m2[static_cast<size_t>(k)] + (1 - cfg.beta2) * g * g;
                    const double mhat = m1[static_cast<size_t>(k)] / b1t;
                    const double vhat = m2[static_cast<size_t>(k)] / b2t;
                    params[static_cast<size_t>(k)] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
                }
            }
        } catch (const NumericError&) {
            em.loss = std::numeric_limits<double>::quiet_NaN();
            finite = false;
        }

        bad_streak = finite ? 0 : bad_streak + 1;
        em.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        result.metrics.push_back(em);
        if (metrics.is_open()) {
            metrics << em.epoch << ',' << csv_num(em.loss) << ',' << csv_num(em.masked_fraction) << ','
                    << csv_num(em.energy_error) << ',' << csv_num(em.wall_ms) << '\n';
            metrics.flush();
        }
        if (on_epoch) on_epoch(em);

        if (!cfg.out_dir.empty() && ((epoch + 1) % cfg.checkpoint_every == 0)) {
            char name[64];
            std::snprintf(name, sizeof(name), "/model_epoch_%06d.json", epoch + 1);
            model.save(cfg.out_dir + name);
        }
        if (bad_streak >= 3) {
            model.net().params() = last_good;
            result.aborted = true;
            result.abort_reason = "three consecutive non-finite losses at epoch " + std::to_string(epoch);
            break;
        }
    }

    if (!cfg.out_dir.empty()) model.save(cfg.out_dir + "/model_final.json");
    return result;
}

}  // namespace bohmflow
