#pragma once

#include "bohmflow/common.hpp"
#include "bohmflow/taylor.hpp"

namespace bohmflow {

enum class PotentialKind { harmonic, double_well, morse_chain };

// Closed-form potential families (atomic-style units, hbar = m = 1 defaults).
//   harmonic:    V = 1/2 x^T K x
//   double_well: V = a (x^2 - b^2)^2, d = 1
//   morse_chain: V = sum_i D (1 - e^{-beta x_i})^2 + lambda sum_i x_i x_{i+1}
struct PotentialSpec {
    PotentialKind kind = PotentialKind::harmonic;
    int d = 1;

    // morse_chain
    double D = 12.5;
    double beta = 0.2;
    double lambda = 0.3;
    bool periodic_chain = false;  // close the chain with x_{d-1} x_0 (d >= 3)

    // harmonic
    Mat K;

    // double_well
    double a = 1.0;
    double b = 2.0;
};

PotentialSpec make_harmonic(const Mat& K);
PotentialSpec make_double_well(double a, double b);
PotentialSpec make_morse_chain(double D, double beta, double lambda, int d, bool periodic = false);

void validate(const PotentialSpec& spec);

double eval_V(const PotentialSpec& spec, const Vec& x);
Vec grad_V(const PotentialSpec& spec, const Vec& x);
Mat hess_V(const PotentialSpec& spec, const Vec& x);
// sum_k u_k d^3 V / dx_i dx_j dx_k
Mat third_V_directional(const PotentialSpec& spec, const Vec& x, const Vec& u);

// Taylor coefficients of V around x up to tab.order(); accumulates into coeffs.
void v_jet_acc(const PotentialSpec& spec, const Vec& x, const TaylorTable& tab, double* coeffs);

// Pullback of a coefficient cotangent to x: xbar_i += sum_alpha cbar_alpha * d c_alpha / d x_i.
// Exact via the one-order-higher jet.
void v_jet_vjp(const PotentialSpec& spec, const Vec& x, const TaylorTable& tab,
               const double* coeff_bar, Vec& xbar);

// Quadratic expansion around the potential minimum and the Gaussian ground
// state it implies: Sigma = (hbar/2) (m K)^{-1/2}, E0 = (hbar/2) sum_k sqrt(eig_k(K)/m).
struct HarmonicApproximation {
    Vec xstar;
    Mat K;
    Mat Sigma;
    double E0 = 0.0;
};

HarmonicApproximation harmonic_approximation(const PotentialSpec& spec, double hbar = 1.0,
                                             double m = 1.0);

}  // namespace bohmflow
