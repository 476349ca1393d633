#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bohmflow/common.hpp"
#include "bohmflow/potentials.hpp"
#include "bohmflow/score_model.hpp"

namespace bohmflow {

// Gaussian reference density with cached Cholesky factor and precision.
struct GaussianDensity {
    Vec mu;
    Mat Sigma;
    Mat chol;       // Sigma = chol * chol^T
    Mat precision;
    double log_norm = 0.0;

    GaussianDensity(Vec mu_, Mat Sigma_);
    double log_density(const Vec& x) const;
    Vec score(const Vec& x) const { return -precision * (x - mu); }
};

// One Lagrangian particle: position, velocity, deformation gradient
// F = dx(t)/dx(0), velocity gradient G = dv(t)/dx(0), and optionally the
// second-order tangents dF_k = dF/dx0_k, dG_k = dG/dx0_k used for the
// score-transport term.
struct ParticleState {
    Vec x, v, x0;
    Mat F, G;
    double logdetF = 0.0;
    std::vector<Mat> dF, dG;

    void init(const Vec& x0_, bool tangents);
};

struct EnsembleState {
    std::vector<ParticleState> particles;
    double t = 0.0;
    std::uint64_t seed = 0;

    int size() const { return static_cast<int>(particles.size()); }
};

// M i.i.d. draws from rho0 at rest (real initial wave function): v = 0,
// F = I, G = 0.  Bitwise reproducible for a given seed.
EnsembleState sample_initial_ensemble(const GaussianDensity& rho0, int M, std::uint64_t seed,
                                      bool tangents = false);

// steps = round(T/dt); dt is adjusted to land on T exactly (within a 2%
// guard), so T = pi with dt = 0.01 gives the canonical 314 steps.
struct StepPlan {
    int steps = 0;
    double dt = 0.0;
};
StepPlan plan_steps(double T, double dt);

double logdet(const Mat& F);

// Advances one particle through one kick-drift-kick step.  `entry` must be
// the ladder at (p.x, t); on return it holds the ladder at (p.x, t+dt), so
// consecutive steps reuse one evaluation.  phi order: 4, or 5 with tangents.
void leapfrog_step_primed(ParticleState& p, LadderPoint& entry, const ScoreModel& model,
                          const PotentialSpec& pot, double t, double dt, LadderContext& ctx);

// Convenience single-step form (evaluates the ladder twice).
void leapfrog_step(ParticleState& p, const ScoreModel& model, const PotentialSpec& pot, double t,
                   double dt);

struct PropagateOptions {
    double T = 3.141592653589793;
    double dt = 0.01;
    int stride = 1;
    double caustic_threshold = 0.1;
    bool with_tangents = false;  // co-integrate dF, dG and record dlogdet
    bool store_F = false;        // keep F, G in every checkpoint
    int threads = 1;
};

struct TrajectoryCheckpoint {
    double t = 0.0;
    int step = 0;
    std::vector<Vec> x, v;
    std::vector<double> logdetF;
    std::vector<std::uint8_t> mask;  // |det F| < caustic_threshold (or singular)
    std::vector<Mat> F, G;           // when store_F
    std::vector<Vec> dlogdet;        // grad_{x(0)} ln|det F|, when with_tangents
};

struct TrajectoryLog {
    int d = 0, M = 0, steps = 0;
    double dt = 0.0;
    int stride = 1;
    double caustic_threshold = 0.1;
    bool has_F = false, has_tangents = false;
    std::vector<Vec> x0;
    std::vector<TrajectoryCheckpoint> checkpoints;
};

TrajectoryLog propagate(const EnsembleState& ensemble, const ScoreModel& model,
                        const PotentialSpec& pot, const PropagateOptions& opts);

// grad_{x(0)} ln|det F| per particle per checkpoint (runs propagate with
// tangents enabled and extracts the series).
std::vector<std::vector<Vec>> tangent_propagate(const EnsembleState& ensemble,
                                                const ScoreModel& model, const PotentialSpec& pot,
                                                double T, double dt, int stride = 1,
                                                int threads = 1);

// ln rho_theta(x(t), t) = ln rho0(x(0)) - ln|det F|
double pushforward_logdensity(const ParticleState& p, const GaussianDensity& rho0);
double pushforward_logdensity(const Vec& x0, double logdetF, const GaussianDensity& rho0);

// CSV dump: t,particle,x0..x{d-1},v0..v{d-1},logdetF,mask
void write_trajectory_csv(const TrajectoryLog& log, const std::string& path);

}  // namespace bohmflow
