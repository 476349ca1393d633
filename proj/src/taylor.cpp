#include "bohmflow/taylor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>

namespace bohmflow {

namespace {

void enumerate_rec(int dim, int axis, int remaining, std::array<std::uint8_t, 8>& cur,
                   std::vector<std::array<std::uint8_t, 8>>& out) {
    if (axis == dim - 1) {
        cur[axis] = static_cast<std::uint8_t>(remaining);
        out.push_back(cur);
        return;
    }
    for (int e = remaining; e >= 0; --e) {
        cur[axis] = static_cast<std::uint8_t>(e);
        enumerate_rec(dim, axis + 1, remaining - e, cur, out);
    }
}

std::uint64_t pack(const std::array<std::uint8_t, 8>& a, int dim) {
    std::uint64_t key = 0;
    for (int i = 0; i < dim; ++i) key = (key << 8) | a[i];
    return key;
}

}  // namespace

TaylorTable::TaylorTable(int dim, int order) : dim_(dim), order_(order) {
    if (dim < 1 || dim > 8) throw std::invalid_argument("TaylorTable: dim must be in [1,8]");
    if (order < 0 || order > 12) throw std::invalid_argument("TaylorTable: order out of range");

    deg_offset_.assign(order + 2, 0);
    std::array<std::uint8_t, 8> cur{};
    for (int g = 0; g <= order; ++g) {
        enumerate_rec(dim, 0, g, cur, monomials_);
        deg_offset_[g + 1] = static_cast<int>(monomials_.size());
    }

    degree_.resize(monomials_.size());
    fact_.resize(monomials_.size());
    std::map<std::uint64_t, int> idx;
    for (size_t i = 0; i < monomials_.size(); ++i) {
        int g = 0;
        double f = 1.0;
        for (int k = 0; k < dim; ++k) {
            g += monomials_[i][k];
            for (int j = 2; j <= monomials_[i][k]; ++j) f *= j;
        }
        degree_[i] = g;
        fact_[i] = f;
        idx[pack(monomials_[i], dim)] = static_cast<int>(i);
    }

    // product table sorted by output degree
    std::vector<std::vector<ProdEntry>> by_deg(order + 1);
    for (size_t ia = 0; ia < monomials_.size(); ++ia) {
        for (size_t ib = 0; ib < monomials_.size(); ++ib) {
            const int g = degree_[ia] + degree_[ib];
            if (g > order) continue;
            std::array<std::uint8_t, 8> sum{};
            for (int k = 0; k < dim; ++k) sum[k] = static_cast<std::uint8_t>(monomials_[ia][k] + monomials_[ib][k]);
            const int ic = idx.at(pack(sum, dim));
            by_deg[g].push_back({static_cast<std::int32_t>(ia), static_cast<std::int32_t>(ib),
                                 static_cast<std::int32_t>(ic)});
        }
    }
    prod_deg_offset_.assign(order + 2, 0);
    for (int g = 0; g <= order; ++g) {
        prod_deg_offset_[g + 1] = prod_deg_offset_[g] + static_cast<int>(by_deg[g].size());
        prod_.insert(prod_.end(), by_deg[g].begin(), by_deg[g].end());
    }

    // derivative maps
    deriv_.resize(dim);
    for (int axis = 0; axis < dim; ++axis) {
        for (size_t dst = 0; dst < monomials_.size(); ++dst) {
            if (degree_[dst] + 1 > order) continue;
            std::array<std::uint8_t, 8> src_m = monomials_[dst];
            src_m[axis]++;
            const int src = idx.at(pack(src_m, dim));
            deriv_[axis].push_back({src, static_cast<std::int32_t>(dst),
                                    static_cast<double>(monomials_[dst][axis] + 1)});
        }
    }
}

int TaylorTable::index(std::span<const int> alpha) const {
    std::array<std::uint8_t, 8> m{};
    int g = 0;
    for (size_t i = 0; i < alpha.size(); ++i) {
        m[i] = static_cast<std::uint8_t>(alpha[i]);
        g += alpha[i];
    }
    if (g > order_) return -1;
    for (size_t i = 0; i < monomials_.size(); ++i)
        if (monomials_[i] == m) return static_cast<int>(i);
    return -1;
}

std::span<const TaylorTable::ProdEntry> TaylorTable::products(int max_deg) const {
    max_deg = std::min(max_deg, order_);
    return {prod_.data(), static_cast<size_t>(prod_deg_offset_[max_deg + 1])};
}

const TaylorTable& TaylorTable::get(int dim, int order) {
    static std::mutex mu;
    static std::map<std::pair<int, int>, std::unique_ptr<TaylorTable>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto& slot = cache[{dim, order}];
    if (!slot) slot = std::make_unique<TaylorTable>(dim, order);
    return *slot;
}

void poly_mul_acc(const TaylorTable& tab, int max_deg, const double* a, const double* b, double* c) {
    for (const auto& e : tab.products(max_deg)) c[e.c] += a[e.a] * b[e.b];
}

void poly_mul_vjp(const TaylorTable& tab, int max_deg, const double* cbar, const double* a,
                  const double* b, double* abar, double* bbar) {
    for (const auto& e : tab.products(max_deg)) {
        const double cb = cbar[e.c];
        abar[e.a] += cb * b[e.b];
        bbar[e.b] += cb * a[e.a];
    }
}

void poly_deriv(const TaylorTable& tab, int axis, const double* f, double* out) {
    for (const auto& e : tab.deriv(axis)) out[e.dst] = e.factor * f[e.src];
}

void poly_deriv_vjp(const TaylorTable& tab, int axis, const double* outbar, double* fbar) {
    for (const auto& e : tab.deriv(axis)) fbar[e.src] += e.factor * outbar[e.dst];
}

namespace {
thread_local std::vector<double> tl_q, tl_rbar, tl_qbar, tl_saved_bar;
}

void poly_compose(const TaylorTable& tab, const double* p, const double* fder, double* g,
                  double* chain) {
    const int n = tab.size();
    const int order = tab.order();
    // Taylor coefficients of f at p[0]
    double a[16];
    double kf = 1.0;
    for (int k = 0; k <= order; ++k) {
        if (k > 1) kf *= k;
        a[k] = fder[k] / kf;
    }
    if (order == 0) {
        g[0] = a[0];
        return;
    }
    // q = p with constant removed; Horner from the top, saving each r before
    // the multiply so the reverse sweep can replay it.
    tl_q.assign(p, p + n);
    tl_q[0] = 0.0;
    std::fill(g, g + n, 0.0);
    g[0] = a[order];
    for (int k = order - 1; k >= 0; --k) {
        double* saved = chain + static_cast<size_t>(order - 1 - k) * n;
        std::memcpy(saved, g, sizeof(double) * static_cast<size_t>(n));
        std::fill(g, g + n, 0.0);
        poly_mul_acc(tab, order, saved, tl_q.data(), g);
        g[0] += a[k];
    }
}

void poly_compose_vjp(const TaylorTable& tab, const double* p, const double* fder,
                      const double* gbar, const double* chain, double* pbar) {
    const int n = tab.size();
    const int order = tab.order();
    if (order == 0) {
        pbar[0] += gbar[0] * fder[1];
        return;
    }

    double a1[17];  // a1[k] = d a_k / d p0 = f^(k+1)(p0) / k!
    double kf = 1.0;
    for (int k = 0; k <= order; ++k) {
        if (k > 1) kf *= k;
        a1[k] = fder[k + 1] / kf;
    }

    tl_q.assign(p, p + n);
    tl_q[0] = 0.0;
    tl_rbar.assign(gbar, gbar + n);
    tl_qbar.assign(static_cast<size_t>(n), 0.0);
    double p0bar = 0.0;

    // forward loop ran k = order-1 .. 0; reverse it
    for (int k = 0; k <= order - 1; ++k) {
        // forward: g_new = saved * q + a_k ; a_k enters the constant coeff
        p0bar += tl_rbar[0] * a1[k];
        const double* saved = chain + static_cast<size_t>(order - 1 - k) * n;
        tl_saved_bar.assign(static_cast<size_t>(n), 0.0);
        poly_mul_vjp(tab, order, tl_rbar.data(), saved, tl_q.data(), tl_saved_bar.data(), tl_qbar.data());
        tl_rbar.swap(tl_saved_bar);
    }
    // initial r was the constant a_order
    p0bar += tl_rbar[0] * a1[order];

    pbar[0] += p0bar;  // q's constant is structurally zero; only a_k(p0) depends on p[0]
    for (int i = 1; i < n; ++i) pbar[i] += tl_qbar[i];
}

double poly_directional(const TaylorTable& tab, const double* c, const double* u, int k) {
    double sum = 0.0;
    const int lo = tab.size_up_to(k - 1);
    const int hi = tab.size_up_to(k);
    for (int i = lo; i < hi; ++i) {
        double m = 1.0;
        const auto& e = tab.exponents(i);
        for (int ax = 0; ax < tab.dim(); ++ax)
            for (int j = 0; j < e[ax]; ++j) m *= u[ax];
        sum += c[i] * m;
    }
    double kf = 1.0;
    for (int j = 2; j <= k; ++j) kf *= j;
    return kf * sum;
}

void tanh_derivs(double x, int n, double* out) {
    // tanh^(k) is a polynomial P_k in y = tanh(x): P_0 = y, P_{k+1} = P_k'(y)(1-y^2).
    // Coefficient tables are built once up to k = 8.
    static const auto tables = [] {
        std::vector<std::vector<double>> polys;
        polys.push_back({0.0, 1.0});  // P_0 = y
        for (int k = 0; k < 8; ++k) {
            const auto& pk = polys.back();
            std::vector<double> next(pk.size() + 1, 0.0);
            for (size_t j = 1; j < pk.size(); ++j) {
                const double c = static_cast<double>(j) * pk[j];
                next[j - 1] += c;
                if (j + 1 < next.size()) next[j + 1] -= c;
                else next.push_back(-c);
            }
            polys.push_back(std::move(next));
        }
        return polys;
    }();
    const double y = std::tanh(x);
    for (int k = 0; k <= n; ++k) {
        const auto& pk = tables[static_cast<size_t>(k)];
        double v = 0.0;
        for (size_t j = pk.size(); j-- > 0;) v = v * y + pk[j];
        out[k] = v;
    }
}

}  // namespace bohmflow
