#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bohmflow/common.hpp"
#include "bohmflow/taylor.hpp"

namespace bohmflow {

// Scalar head phi(x, t): an MLP in x whose hidden units are modulated per
// layer by a learned affine function of Fourier time features
// (FiLM conditioning):  h_l = act( gamma_l(t) .* (W_l h + b_l) + delta_l(t) ).
// The activation is tanh, smooth to all orders as the derivative ladder
// requires; piecewise-linear activations are not representable here.
struct MlpArchitecture {
    int input_dim = 1;
    int hidden_layers = 3;
    int hidden_width = 64;
    int time_features = 4;  // K_t: features [1, cos(k w t), sin(k w t)], k = 1..K_t
    double omega = 1.0;     // base time frequency

    int feature_count() const { return 2 * time_features + 1; }
};

// Retained intermediates of one jet evaluation, consumed by the reverse pass.
struct MlpJetContext {
    int order = -1;
    int ncoeff = 0;
    double t = 0.0;
    std::vector<double> tfeat;
    std::vector<std::vector<double>> input;  // input[l]: polys feeding layer l; input[L] feeds the head
    std::vector<std::vector<double>> lin;    // W p + b
    std::vector<std::vector<double>> z;      // gamma .* lin + delta
    std::vector<std::vector<double>> gamma, delta;
    std::vector<std::vector<double>> fder;   // activation derivatives, order+2 per unit
    std::vector<std::vector<double>> chain;  // Horner intermediates per unit
    std::vector<double> phi;                 // output jet
    // scratch for the reverse sweep
    std::vector<double> hbar, pbar, zbar, linbar;
};

class FilmMlp {
public:
    FilmMlp() = default;
    explicit FilmMlp(const MlpArchitecture& arch);

    const MlpArchitecture& arch() const { return arch_; }
    int param_count() const { return static_cast<int>(params_.size()); }
    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }

    // Hidden weights get scaled-normal init; biases, FiLM heads and the
    // output head start at zero so phi is identically zero.
    void init_params(std::uint64_t seed);

    // Jet of phi at (x, t) to the given order (1..5); returns coefficients in
    // ctx.phi and retains everything the reverse sweep needs.
    void phi_jet(const double* x, double t, int order, MlpJetContext& ctx) const;

    // Reverse sweep: accumulates xbar (input_dim) and param_grad (param_count).
    void phi_jet_vjp(const MlpJetContext& ctx, const double* phibar, double* xbar,
                     double* param_grad) const;

    // parameter block offsets (also the checkpoint layout)
    int w_off(int layer) const { return w_off_[layer]; }
    int b_off(int layer) const { return b_off_[layer]; }
    int film_scale_off(int layer) const { return a_off_[layer]; }
    int film_shift_off(int layer) const { return c_off_[layer]; }
    int out_w_off() const { return out_w_off_; }
    int out_b_off() const { return out_b_off_; }
    int layer_inputs(int layer) const { return layer == 0 ? arch_.input_dim : arch_.hidden_width; }

private:
    MlpArchitecture arch_;
    std::vector<double> params_;
    std::vector<int> w_off_, b_off_, a_off_, c_off_;
    int out_w_off_ = 0, out_b_off_ = 0;
};

}  // namespace bohmflow
