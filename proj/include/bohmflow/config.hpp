#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bohmflow/common.hpp"
#include "bohmflow/film_mlp.hpp"
#include "bohmflow/potentials.hpp"
#include "bohmflow/score_model.hpp"
#include "bohmflow/trajectory.hpp"

namespace bohmflow {

// Flat sectioned key=value experiment description.  Unknown keys are
// rejected; missing keys take the defaults below.  Numeric values accept
// plain literals plus "pi", "N*pi" and "pi/N".
struct ExperimentConfig {
    std::uint64_t seed = 0;

    // [potential]
    PotentialKind kind = PotentialKind::harmonic;
    int d = 1;
    double D = 12.5, beta = 0.2, lambda = 0.3;
    bool periodic = false;
    double a = 1.0, b = 2.0;
    Mat K;  // harmonic stiffness; defaults to identity

    // [initial_state]
    std::string init_source = "harmonic_ground_state";  // or "gaussian"
    Vec displace;                                       // added to the harmonic-approx mean
    Vec init_mu, init_var;                              // gaussian source (diagonal covariance)

    // [model]
    int hidden_layers = 3;
    int hidden_width = 64;
    int time_features = 4;
    double omega = 0.0;  // 0: auto = pi / T
    double hbar = 1.0, m = 1.0;
    std::string base = "initial_gaussian";

    // [trajectory]
    double T = 3.141592653589793;
    double dt = 0.01;
    int stride = 1;
    double caustic_threshold = 0.1;

    // [train]
    int train_M = 5000;
    int epochs = 1000;
    double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    bool resample_each_epoch = false;
    int checkpoint_every = 1000;
    double e_exact = std::numeric_limits<double>::quiet_NaN();

    // [propagate]
    int prop_M = 20000;
    int prop_stride = 5;

    // [reference]
    int ref_n = 1024;
    double ref_xmin = -6.0, ref_xmax = 6.0;
    double ref_dt = 0.001;
    std::vector<double> snapshot_times;

    // [diagnostics]
    std::vector<double> slice_times;
    int slice_dim_i = 0, slice_dim_j = 1;
    double slice_lo = -4.0, slice_hi = 4.0;
    int slice_n = 32;

    // [compare]
    double mean_rms_tol = 0.05;
    double sigma_rms_tol = 0.05;
    double kl_floor_mult = 5.0;

    // [output]
    std::string out_dir = "runs/default";

    std::string source_path;
};

ExperimentConfig load_config(const std::string& path);

// resolved_config (same text format, defaults applied) + JSON twin
void write_resolved_config(const ExperimentConfig& cfg, const std::string& dir);

PotentialSpec build_potential(const ExperimentConfig& cfg);
GaussianDensity build_rho0(const ExperimentConfig& cfg, const PotentialSpec& pot);
ScoreModel build_model(const ExperimentConfig& cfg, const GaussianDensity& rho0);

}  // namespace bohmflow
