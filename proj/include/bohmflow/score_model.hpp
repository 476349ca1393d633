#pragma once

#include <array>
#include <string>
#include <vector>

#include "bohmflow/common.hpp"
#include "bohmflow/film_mlp.hpp"
#include "bohmflow/potentials.hpp"

namespace bohmflow {

// Exact Gaussian score s(x) = -P (x - mu), the gradient of log N(mu, P^{-1}).
struct GaussianScore {
    Vec mu;
    Mat precision;
};

// Derivatives of phi at one point: value, gradient, Hessian and directional
// derivatives D_u^k phi along requested unit directions.
struct SpatialJet {
    double value = 0.0;
    Vec gradient;
    Mat hessian;                                    // order >= 2
    std::vector<std::vector<double>> directional;   // [dir][k], k = 0..order
};

// Learnable score s_theta(x,t) = s_base(x) + grad phi_theta(x,t), a gradient
// field by construction, with an exact derivative ladder up to the third
// spatial derivatives of the quantum potential
//   Q = -(hbar^2 / 4m) [ div s + |s|^2 / 2 ].
class ScoreModel {
public:
    ScoreModel(GaussianScore base, FilmMlp net, double hbar = 1.0, double m = 1.0);

    int dim() const { return static_cast<int>(base_.mu.size()); }
    double hbar() const { return hbar_; }
    double mass() const { return m_; }
    const GaussianScore& base() const { return base_; }
    FilmMlp& net() { return net_; }
    const FilmMlp& net() const { return net_; }

    double phi(const Vec& x, double t) const;
    Vec score(const Vec& x, double t) const;
    double quantum_potential(const Vec& x, double t) const;
    Vec quantum_force(const Vec& x, double t) const;
    Mat hess_Q(const Vec& x, double t) const;
    Mat hess_VQ(const PotentialSpec& pot, const Vec& x, double t) const;
    Mat third_Q_directional(const Vec& x, double t, const Vec& u) const;
    Mat third_VQ_directional(const PotentialSpec& pot, const Vec& x, double t, const Vec& u) const;
    SpatialJet jet(const Vec& x, double t, int order, const std::vector<Vec>& directions) const;

    // checkpoint container (JSON with architecture metadata and parameter
    // blocks in declared order; shape-validated on load)
    void save(const std::string& path) const;
    static ScoreModel load(const std::string& path);

private:
    GaussianScore base_;
    FilmMlp net_;
    double hbar_, m_;
};

// ---- effective-potential ladder used by the integrator and BPTT ----

// phi jet order required for each consumer:
//   3: force -grad(V+Q)   4: + Hess(V+Q)   5: + directional third derivatives
// Fixed-capacity storage (d <= 4) keeps the integrator hot path free of
// allocations; hess is row/column symmetric, third is symmetric in (i, j).
struct LadderPoint {
    int d = 0;
    int depth = 0;  // phi jet order this point was built at
    double vq = 0.0;
    std::array<double, 4> force{};
    std::array<double, 16> hess{};   // [i*d + j]
    std::array<double, 64> third{};  // [k*d*d + i*d + j]: d^3(V+Q)/dx_i dx_j dx_k

    const double* third_slice(int k) const { return third.data() + k * d * d; }
};

// Retained intermediates for the reverse sweep of one ladder evaluation.
struct LadderContext {
    MlpJetContext mlp;
    std::vector<double> s;  // d score polys, ncoeff each
    std::vector<double> w;  // (V+Q) jet
    std::vector<double> div, s2, tmp;
    std::vector<double> wbar, divbar, s2bar, sbar, phibar;
    Vec x;
    double t = 0.0;
    int order = 0;
};

// pot == nullptr evaluates the bare quantum potential (V = 0).
void ladder_eval(const ScoreModel& model, const PotentialSpec* pot, const Vec& x, double t,
                 int phi_order, LadderContext& ctx, LadderPoint& out);
LadderPoint ladder_eval(const ScoreModel& model, const PotentialSpec* pot, const Vec& x, double t,
                        int phi_order, LadderContext& ctx);

// Accumulates xbar and param_grad from cotangents of the ladder outputs.
// Cotangent pointers follow the LadderPoint layout; null means zero.
void ladder_vjp(const ScoreModel& model, const PotentialSpec* pot, const LadderContext& ctx,
                double vq_bar, const double* force_bar, const double* hess_bar,
                const double* third_bar, Vec& xbar, double* param_grad);

// Plain score evaluation with a retained context (for loss residuals).
Vec score_eval(const ScoreModel& model, const Vec& x, double t, LadderContext& ctx);
void score_vjp(const ScoreModel& model, const LadderContext& ctx, const Vec& sbar, Vec& xbar,
               double* param_grad);

}  // namespace bohmflow
