#pragma once

#include <limits>
#include <string>
#include <vector>

#include "bohmflow/common.hpp"
#include "bohmflow/reference.hpp"
#include "bohmflow/trajectory.hpp"

namespace bohmflow {

struct EnergyReport {
    std::vector<double> t;
    std::vector<double> energy;  // <E>(t), ensemble mean of m|v|^2/2 + V + Q
    double time_avg = 0.0;
    double e_exact = std::numeric_limits<double>::quiet_NaN();
    double error = std::numeric_limits<double>::quiet_NaN();
    std::string e_exact_source;
};

EnergyReport mean_energy(const TrajectoryLog& log, const ScoreModel& model,
                         const PotentialSpec& pot,
                         double e_exact = std::numeric_limits<double>::quiet_NaN(),
                         const std::string& source = "");

struct MomentsReport {
    std::vector<double> t;
    std::vector<Vec> mean;   // per-mode <x_i>(t)
    std::vector<Vec> sigma;  // per-mode width
};

MomentsReport moments(const TrajectoryLog& log);

struct KlReport {
    std::vector<double> t;
    std::vector<double> kl;       // reverse KL(rho_theta || rho_exact)(t), nats
    std::vector<int> excluded;    // masked particles skipped per checkpoint
    double floor_estimate = std::numeric_limits<double>::quiet_NaN();  // |KL| at t = 0
};

// Monte-Carlo reverse KL against reference snapshots at matching times:
// mean_i [ ln rho_theta(x_i) - ln rho_exact(x_i) ] with the push-forward
// density for rho_theta and multilinear log-interpolation for rho_exact.
KlReport reverse_kl(const TrajectoryLog& log, const std::vector<GridWavefunction>& refs,
                    const GaussianDensity& rho0);

// Phase along trajectories by trapezoidal integration of
// dS/dt = m|v|^2/2 - (V + Q); requires a stride-1 log.
// Returns per-particle series over checkpoints.
std::vector<std::vector<double>> reconstruct_phase(const TrajectoryLog& log,
                                                   const ScoreModel& model,
                                                   const PotentialSpec& pot,
                                                   const std::vector<double>& S0);

struct ScoreSliceSpec {
    double t = 0.0;
    int dim_i = 0, dim_j = 1;
    Vec fixed;  // values of the non-sliced coordinates (full d-vector; sliced entries ignored)
    double lo_i = -4, hi_i = 4, lo_j = -4, hi_j = 4;
    int n_i = 32, n_j = 32;
};

struct ScoreSliceRow {
    double xi, xj, si, sj;
};

std::vector<ScoreSliceRow> score_slice(const ScoreModel& model, const ScoreSliceSpec& spec);

void write_energy_csv(const EnergyReport& rep, const std::string& path);
void write_moments_csv(const MomentsReport& rep, const std::string& path);
void write_kl_csv(const KlReport& rep, const std::string& path);
void write_score_slice_csv(const std::vector<ScoreSliceRow>& rows, const ScoreSliceSpec& spec,
                           const std::string& path);

}  // namespace bohmflow
