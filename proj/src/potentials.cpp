#include "bohmflow/potentials.hpp"

#include <cmath>

namespace bohmflow {

namespace {

void check_dim(const PotentialSpec& spec, const Vec& x) {
    if (x.size() != spec.d)
        throw ConfigError("potential dimension mismatch: expected " + std::to_string(spec.d) +
                          ", got " + std::to_string(x.size()));
    if (!x.allFinite()) throw NumericError("potential evaluation at non-finite point");
}

// per-site Morse term g(x) = D (1 - e^{-beta x})^2 and derivatives:
// g^(k)(x) = D [ -2 (-beta)^k e^{-beta x} + (-2 beta)^k e^{-2 beta x} ], k >= 1
double morse_site(double D, double beta, double x, int k) {
    const double u = std::exp(-beta * x);
    if (k == 0) {
        const double w = 1.0 - u;
        return D * w * w;
    }
    double mb = 1.0, m2b = 1.0;
    for (int j = 0; j < k; ++j) {
        mb *= -beta;
        m2b *= -2.0 * beta;
    }
    return D * (-2.0 * mb * u + m2b * u * u);
}

// neighbor pairs of the bilinear coupling
template <typename F>
void for_each_coupling(const PotentialSpec& spec, F&& f) {
    for (int i = 0; i + 1 < spec.d; ++i) f(i, i + 1);
    if (spec.periodic_chain && spec.d >= 3) f(spec.d - 1, 0);
}

}  // namespace

PotentialSpec make_harmonic(const Mat& K) {
    PotentialSpec s;
    s.kind = PotentialKind::harmonic;
    s.d = static_cast<int>(K.rows());
    s.K = K;
    validate(s);
    return s;
}

PotentialSpec make_double_well(double a, double b) {
    PotentialSpec s;
    s.kind = PotentialKind::double_well;
    s.d = 1;
    s.a = a;
    s.b = b;
    validate(s);
    return s;
}

PotentialSpec make_morse_chain(double D, double beta, double lambda, int d, bool periodic) {
    PotentialSpec s;
    s.kind = PotentialKind::morse_chain;
    s.d = d;
    s.D = D;
    s.beta = beta;
    s.lambda = lambda;
    s.periodic_chain = periodic;
    validate(s);
    return s;
}

void validate(const PotentialSpec& spec) {
    if (spec.d < 1) throw ConfigError("potential dimension must be >= 1");
    switch (spec.kind) {
        case PotentialKind::harmonic: {
            if (spec.K.rows() != spec.d || spec.K.cols() != spec.d)
                throw ConfigError("harmonic stiffness K must be d x d");
            if (!spec.K.isApprox(spec.K.transpose(), 1e-12))
                throw ConfigError("harmonic stiffness K must be symmetric");
            Eigen::SelfAdjointEigenSolver<Mat> es(spec.K);
            if (es.eigenvalues().minCoeff() < -1e-12 * std::max(1.0, spec.K.norm()))
                throw ConfigError("harmonic stiffness K must be positive (semi)definite");
            break;
        }
        case PotentialKind::double_well: {
            if (spec.d != 1) throw ConfigError("double_well is one-dimensional");
            if (spec.a <= 0 || spec.b <= 0) throw ConfigError("double_well requires a > 0, b > 0");
            break;
        }
        case PotentialKind::morse_chain: {
            if (spec.D <= 0 || spec.beta <= 0)
                throw ConfigError("morse_chain requires D > 0, beta > 0");
            break;
        }
    }
}

double eval_V(const PotentialSpec& spec, const Vec& x) {
    check_dim(spec, x);
    switch (spec.kind) {
        case PotentialKind::harmonic:
            return 0.5 * x.dot(spec.K * x);
        case PotentialKind::double_well: {
            const double w = x[0] * x[0] - spec.b * spec.b;
            return spec.a * w * w;
        }
        case PotentialKind::morse_chain: {
            double v = 0.0;
            for (int i = 0; i < spec.d; ++i) v += morse_site(spec.D, spec.beta, x[i], 0);
            for_each_coupling(spec, [&](int i, int j) { v += spec.lambda * x[i] * x[j]; });
            return v;
        }
    }
    return 0.0;
}

Vec grad_V(const PotentialSpec& spec, const Vec& x) {
    check_dim(spec, x);
    switch (spec.kind) {
        case PotentialKind::harmonic:
            return spec.K * x;
        case PotentialKind::double_well: {
            Vec g(1);
            g[0] = 4.0 * spec.a * x[0] * (x[0] * x[0] - spec.b * spec.b);
            return g;
        }
        case PotentialKind::morse_chain: {
            Vec g = Vec::Zero(spec.d);
            for (int i = 0; i < spec.d; ++i) g[i] = morse_site(spec.D, spec.beta, x[i], 1);
            for_each_coupling(spec, [&](int i, int j) {
                g[i] += spec.lambda * x[j];
                g[j] += spec.lambda * x[i];
            });
            return g;
        }
    }
    return Vec();
}

Mat hess_V(const PotentialSpec& spec, const Vec& x) {
    check_dim(spec, x);
    switch (spec.kind) {
        case PotentialKind::harmonic:
            return spec.K;
        case PotentialKind::double_well: {
            Mat h(1, 1);
            h(0, 0) = 4.0 * spec.a * (3.0 * x[0] * x[0] - spec.b * spec.b);
            return h;
        }
        case PotentialKind::morse_chain: {
            Mat h = Mat::Zero(spec.d, spec.d);
            for (int i = 0; i < spec.d; ++i) h(i, i) = morse_site(spec.D, spec.beta, x[i], 2);
            for_each_coupling(spec, [&](int i, int j) {
                h(i, j) += spec.lambda;
                h(j, i) += spec.lambda;
            });
            return h;
        }
    }
    return Mat();
}

Mat third_V_directional(const PotentialSpec& spec, const Vec& x, const Vec& u) {
    check_dim(spec, x);
    if (u.size() != spec.d) throw ConfigError("direction dimension mismatch");
    Mat t = Mat::Zero(spec.d, spec.d);
    switch (spec.kind) {
        case PotentialKind::harmonic:
            break;
        case PotentialKind::double_well:
            t(0, 0) = 24.0 * spec.a * x[0] * u[0];
            break;
        case PotentialKind::morse_chain:
            // only the on-site terms have cubic content
            for (int i = 0; i < spec.d; ++i) t(i, i) = morse_site(spec.D, spec.beta, x[i], 3) * u[i];
            break;
    }
    return t;
}

void v_jet_acc(const PotentialSpec& spec, const Vec& x, const TaylorTable& tab, double* coeffs) {
    check_dim(spec, x);
    const int order = tab.order();
    switch (spec.kind) {
        case PotentialKind::harmonic: {
            // V(x+xi) = V(x) + (Kx).xi + 1/2 xi^T K xi
            coeffs[0] += 0.5 * x.dot(spec.K * x);
            const Vec g = spec.K * x;
            std::vector<int> alpha(static_cast<size_t>(spec.d), 0);
            for (int i = 0; i < spec.d && order >= 1; ++i) {
                alpha[i] = 1;
                coeffs[tab.index(alpha)] += g[i];
                alpha[i] = 0;
            }
            if (order >= 2) {
                for (int i = 0; i < spec.d; ++i) {
                    for (int j = i; j < spec.d; ++j) {
                        alpha[i]++;
                        alpha[j]++;
                        coeffs[tab.index(alpha)] += (i == j) ? 0.5 * spec.K(i, i) : spec.K(i, j);
                        alpha[i]--;
                        alpha[j]--;
                    }
                }
            }
            break;
        }
        case PotentialKind::double_well: {
            // quartic in 1D: exact derivatives up to 4
            const double xx = x[0], b2 = spec.b * spec.b;
            const double der[5] = {
                spec.a * (xx * xx - b2) * (xx * xx - b2),
                4.0 * spec.a * xx * (xx * xx - b2),
                4.0 * spec.a * (3.0 * xx * xx - b2),
                24.0 * spec.a * xx,
                24.0 * spec.a,
            };
            double kf = 1.0;
            for (int k = 0; k <= std::min(order, 4); ++k) {
                if (k > 1) kf *= k;
                std::vector<int> alpha{k};
                coeffs[tab.index(alpha)] += der[k] / kf;
            }
            break;
        }
        case PotentialKind::morse_chain: {
            std::vector<int> alpha(static_cast<size_t>(spec.d), 0);
            for (int i = 0; i < spec.d; ++i) {
                double kf = 1.0;
                for (int k = 0; k <= order; ++k) {
                    if (k > 1) kf *= k;
                    alpha[i] = k;
                    coeffs[tab.index(alpha)] += morse_site(spec.D, spec.beta, x[i], k) / kf;
                    alpha[i] = 0;
                }
            }
            for_each_coupling(spec, [&](int i, int j) {
                // lambda (x_i + xi_i)(x_j + xi_j)
                coeffs[0] += spec.lambda * x[i] * x[j];
                if (order >= 1) {
                    alpha[i] = 1;
                    coeffs[tab.index(alpha)] += spec.lambda * x[j];
                    alpha[i] = 0;
                    alpha[j] = 1;
                    coeffs[tab.index(alpha)] += spec.lambda * x[i];
                    alpha[j] = 0;
                }
                if (order >= 2) {
                    alpha[i] = 1;
                    alpha[j] = 1;
                    coeffs[tab.index(alpha)] += spec.lambda;
                    alpha[i] = alpha[j] = 0;
                }
            });
            break;
        }
    }
}

void v_jet_vjp(const PotentialSpec& spec, const Vec& x, const TaylorTable& tab,
               const double* coeff_bar, Vec& xbar) {
    // d c_alpha / d x_i = (alpha_i + 1) c_{alpha + e_i}, read from the jet one order higher
    const TaylorTable& up = TaylorTable::get(tab.dim(), tab.order() + 1);
    std::vector<double> cup(static_cast<size_t>(up.size()), 0.0);
    v_jet_acc(spec, x, up, cup.data());
    std::vector<int> alpha(static_cast<size_t>(tab.dim()), 0);
    for (int idx = 0; idx < tab.size(); ++idx) {
        const double cb = coeff_bar[idx];
        if (cb == 0.0) continue;
        const auto& e = tab.exponents(idx);
        for (int i = 0; i < tab.dim(); ++i) alpha[i] = e[i];
        for (int i = 0; i < tab.dim(); ++i) {
            alpha[i]++;
            xbar[i] += cb * (e[i] + 1.0) * cup[static_cast<size_t>(up.index(alpha))];
            alpha[i]--;
        }
    }
}

HarmonicApproximation harmonic_approximation(const PotentialSpec& spec, double hbar, double m) {
    validate(spec);
    HarmonicApproximation out;
    out.xstar = Vec::Zero(spec.d);

    switch (spec.kind) {
        case PotentialKind::harmonic:
            break;  // minimum at the origin by construction
        case PotentialKind::morse_chain: {
            // x* = 0 is a stationary point for every lambda; trust it as the
            // minimum for small coupling, otherwise polish with damped Newton.
            if (std::abs(spec.lambda) >= 2.0 * spec.D * spec.beta * spec.beta) {
                Vec xs = Vec::Zero(spec.d);
                bool converged = false;
                for (int it = 0; it < 100; ++it) {
                    const Vec g = grad_V(spec, xs);
                    if (g.norm() < 1e-12) {
                        converged = true;
                        break;
                    }
                    const Mat h = hess_V(spec, xs);
                    Vec step = h.ldlt().solve(g);
                    double lam = 1.0;
                    const double v0 = eval_V(spec, xs);
                    while (lam > 1e-6 && eval_V(spec, xs - lam * step) > v0) lam *= 0.5;
                    xs -= lam * step;
                }
                if (!converged) throw NumericError("harmonic_approximation: Newton did not converge in 100 iterations");
                out.xstar = xs;
            }
            break;
        }
        case PotentialKind::double_well:
            // the origin is the barrier top; the quadratic expansion there is
            // not positive definite, which the check below reports
            break;
    }

    out.K = hess_V(spec, out.xstar);
    Eigen::SelfAdjointEigenSolver<Mat> es(out.K);
    if (es.info() != Eigen::Success) throw NumericError("harmonic_approximation: eigendecomposition failed");
    const Vec ev = es.eigenvalues();
    if (ev.minCoeff() <= 0.0)
        throw ConfigError("harmonic_approximation: Hessian at the minimum is not positive definite");

    Vec sig_ev(spec.d), half_freq(spec.d);
    for (int i = 0; i < spec.d; ++i) {
        sig_ev[i] = 0.5 * hbar / std::sqrt(m * ev[i]);
        half_freq[i] = 0.5 * hbar * std::sqrt(ev[i] / m);
    }
    out.Sigma = es.eigenvectors() * sig_ev.asDiagonal() * es.eigenvectors().transpose();
    out.E0 = half_freq.sum();
    return out;
}

}  // namespace bohmflow
