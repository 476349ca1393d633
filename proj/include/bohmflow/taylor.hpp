#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace bohmflow {

// Dense truncated multivariate Taylor arithmetic.
//
// A "jet" of a smooth function f around a point x is the coefficient vector
// c_alpha = d^alpha f(x) / alpha! over all multi-indices |alpha| <= order.
// Propagating jets through a computation yields all mixed partial
// derivatives up to `order` exactly (no finite differences).  Tables are
// built once per (dim, order) pair and shared.
class TaylorTable {
public:
    TaylorTable(int dim, int order);

    int dim() const { return dim_; }
    int order() const { return order_; }
    int size() const { return static_cast<int>(monomials_.size()); }

    // exponent tuple of monomial i (graded order, constant term first)
    const std::array<std::uint8_t, 8>& exponents(int i) const { return monomials_[i]; }
    int degree(int i) const { return degree_[i]; }
    // index of the monomial with the given exponents; -1 if above order
    int index(std::span<const int> alpha) const;
    // number of monomials with degree <= g
    int size_up_to(int g) const { return deg_offset_[g + 1]; }

    struct ProdEntry {
        std::int32_t a, b, c;  // c_alpha+beta accumulates a_alpha * b_beta
    };
    // product entries with deg(c) <= max_deg, grouped by ascending deg(c)
    std::span<const ProdEntry> products(int max_deg) const;

    struct DerivEntry {
        std::int32_t src, dst;  // (d_i f)[dst] = factor * f[src]
        double factor;
    };
    std::span<const DerivEntry> deriv(int axis) const { return deriv_[axis]; }

    // alpha! for monomial i: converts coefficients to derivatives
    double factorial(int i) const { return fact_[i]; }

    // Shared table registry (thread-safe, built on first use).
    static const TaylorTable& get(int dim, int order);

private:
    int dim_, order_;
    std::vector<std::array<std::uint8_t, 8>> monomials_;
    std::vector<int> degree_;
    std::vector<int> deg_offset_;        // size order+2
    std::vector<ProdEntry> prod_;        // sorted by deg(c)
    std::vector<int> prod_deg_offset_;   // size order+2
    std::vector<std::vector<DerivEntry>> deriv_;
    std::vector<double> fact_;
};

// ---- kernels on raw coefficient arrays (hot path) ----

// c += a * b, truncated at degree max_deg
void poly_mul_acc(const TaylorTable& tab, int max_deg, const double* a, const double* b, double* c);

// reverse of poly_mul_acc: given cbar, accumulate abar += cbar*b, bbar += cbar*a
void poly_mul_vjp(const TaylorTable& tab, int max_deg, const double* cbar, const double* a,
                  const double* b, double* abar, double* bbar);

// out = d/dx_axis of f (coefficients above order-1 are zero); out must be zeroed by caller
void poly_deriv(const TaylorTable& tab, int axis, const double* f, double* out);

// reverse of poly_deriv: fbar accumulates from outbar
void poly_deriv_vjp(const TaylorTable& tab, int axis, const double* outbar, double* fbar);

// Composition g = f(p) where p is a jet and f a smooth univariate function
// given by fder[k] = f^(k)(p[0]), k = 0..order.  Workspace `chain` must hold
// order * size doubles; it retains the Horner intermediates for the reverse
// sweep.  g may not alias p.
void poly_compose(const TaylorTable& tab, const double* p, const double* fder, double* g,
                  double* chain);

// Reverse of poly_compose.  Needs fder up to order+1 (one extra derivative
// for the dependence of the Taylor coefficients on the expansion point).
// Accumulates pbar from gbar; chain is the forward workspace.
void poly_compose_vjp(const TaylorTable& tab, const double* p, const double* fder,
                      const double* gbar, const double* chain, double* pbar);

// k-th directional derivative along u: D_u^k f = k! * sum_{|alpha|=k} c_alpha u^alpha
double poly_directional(const TaylorTable& tab, const double* c, const double* u, int k);

// tanh derivative ladder: out[k] = tanh^(k)(x) for k = 0..n  (n <= 8)
void tanh_derivs(double x, int n, double* out);

}  // namespace bohmflow
