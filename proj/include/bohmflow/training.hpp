#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "bohmflow/common.hpp"
#include "bohmflow/trajectory.hpp"

namespace bohmflow {

// Exact score of the push-forward density at x(t):
//   F^{-T} [ grad ln rho0(x0) - grad_{x(0)} ln|det F| ].
// Throws NumericError on singular F (callers must skip masked pairs).
Vec score_target(const Mat& F, const Vec& dlogdet, const Vec& x0, const GaussianDensity& rho0);

struct FisherLossReport {
    double loss = 0.0;
    std::vector<double> per_checkpoint;  // mean |s - target|^2 over unmasked particles
    double masked_fraction = 0.0;
    std::vector<double> grad;  // parameter gradient (loss_gradient only)
    int epoch = 0;
    double mean_energy = std::numeric_limits<double>::quiet_NaN();
};

// Monte-Carlo Fisher divergence over a tangent-augmented trajectory log:
// trapezoidal time weights over checkpoints, masked pairs dropped from both
// numerator and denominator.  Throws NumericError when every pair is masked.
FisherLossReport fisher_loss(const TrajectoryLog& log, const ScoreModel& model,
                             const GaussianDensity& rho0);

struct LossGradientOptions {
    double T = 3.141592653589793;
    double dt = 0.01;
    int stride = 1;
    double caustic_threshold = 0.1;
    int threads = 1;
};

// Full dL/dtheta by reverse-mode differentiation of the discretized
// trajectory (BPTT): gradients flow through the score in the residual, the
// trajectory itself, and the targets (F and tangents).  Trajectory state is
// snapshotted every ceil(sqrt(steps)) steps and segments are recomputed on
// the backward sweep.
FisherLossReport loss_gradient(const ScoreModel& model, const PotentialSpec& pot,
                               const GaussianDensity& rho0, const EnsembleState& ensemble,
                               const LossGradientOptions& opts);

struct TrainConfig {
    int M = 5000;
    double T = 3.141592653589793;
    double dt = 0.01;
    int epochs = 1000;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double caustic_threshold = 0.1;
    int checkpoint_stride = 1;
    std::uint64_t seed = 0;
    bool resample_each_epoch = false;
    int threads = 1;
    int checkpoint_every = 1000;  // model snapshot cadence (epochs)
    std::string out_dir;          // empty: keep everything in memory
    double e_exact = std::numeric_limits<double>::quiet_NaN();
};

void validate(const TrainConfig& cfg);

struct EpochMetrics {
    int epoch = 0;
    double loss = 0.0;
    double masked_fraction = 0.0;
    double energy_error = std::numeric_limits<double>::quiet_NaN();
    double mean_energy = std::numeric_limits<double>::quiet_NaN();
    double wall_ms = 0.0;
};

struct TrainResult {
    std::vector<EpochMetrics> metrics;
    bool aborted = false;
    std::string abort_reason;
};

// Adam loop over loss_gradient with a fixed initial ensemble (optional
// per-epoch resampling).  Writes metrics.csv and model checkpoints when
// cfg.out_dir is set.  Aborts (restoring the last good parameters) after
// three consecutive non-finite losses.
TrainResult train(const TrainConfig& cfg, ScoreModel& model, const PotentialSpec& pot,
                  const GaussianDensity& rho0,
                  const std::function<void(const EpochMetrics&)>& on_epoch = nullptr);

}  // namespace bohmflow
