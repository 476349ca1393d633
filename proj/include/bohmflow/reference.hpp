#pragma once

#include <complex>
#include <string>
#include <vector>

#include "bohmflow/common.hpp"
#include "bohmflow/potentials.hpp"

namespace bohmflow {

// Uniform periodic tensor-product grid, n a power of two per axis.
struct GridAxis {
    double xmin = 0.0, xmax = 0.0;
    int n = 0;
    double dx() const { return (xmax - xmin) / n; }
};

struct GridSpec {
    std::vector<GridAxis> axes;
    int d() const { return static_cast<int>(axes.size()); }
    long total() const {
        long s = 1;
        for (const auto& a : axes) s *= a.n;
        return s;
    }
    double cell_volume() const {
        double v = 1.0;
        for (const auto& a : axes) v *= a.dx();
        return v;
    }
};

void validate(const GridSpec& box);

struct GridWavefunction {
    GridSpec box;
    double t = 0.0;
    std::vector<std::complex<double>> psi;  // C order, axis 0 slowest

    double norm() const;  // sum |psi|^2 dV
};

// Real Gaussian psi with |psi|^2 = N(mu, Sigma), normalized on the grid.
// Requires the box to enclose mu +- 6 sqrt(diag(Sigma)).
GridWavefunction init_gaussian(const GridSpec& box, const Vec& mu, const Mat& Sigma);

// Strang splitting e^{-iV dt/2} F^{-1} e^{-i hbar k^2 dt/2m} F e^{-iV dt/2}.
// Plans are bound to one wavefunction instance; psi must not reallocate.
class SplitOperator {
public:
    SplitOperator(GridWavefunction& wf, const PotentialSpec& pot, double dt, double hbar = 1.0,
                  double m = 1.0);
    ~SplitOperator();
    SplitOperator(const SplitOperator&) = delete;
    SplitOperator& operator=(const SplitOperator&) = delete;

    void step();
    double dt() const { return dt_; }

private:
    GridWavefunction& wf_;
    double dt_, hbar_, m_;
    std::vector<std::complex<double>> exp_v_half_, exp_kinetic_;
    void* plan_fwd_ = nullptr;
    void* plan_bwd_ = nullptr;
};

// Convenience single step (plans on each call; use SplitOperator for loops).
void split_operator_step(GridWavefunction& wf, const PotentialSpec& pot, double dt,
                         double hbar = 1.0, double m = 1.0);

struct GridObservables {
    double norm = 0.0;
    double energy = 0.0;
    Vec mean;
    Vec sigma;
};

GridObservables observables(const GridWavefunction& wf, const PotentialSpec& pot,
                            double hbar = 1.0, double m = 1.0);

// smallest distance from <x> to a box edge, in units of that axis' sigma
double edge_margin_sigmas(const GridObservables& obs, const GridSpec& box);

// Multilinear interpolation of ln|psi|^2 (log interpolation is smoother in
// the tails).  Throws ConfigError when x lies outside the box.
double interp_logdensity(const GridWavefunction& wf, const Vec& x);

// flat binary snapshot: header (dims, box, t, dtype) + raw complex data
void save_wavefunction(const GridWavefunction& wf, const std::string& path);
GridWavefunction load_wavefunction(const std::string& path);

}  // namespace bohmflow
