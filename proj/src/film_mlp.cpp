#include "bohmflow/film_mlp.hpp"

#include <cmath>
#include <cstring>

#include "bohmflow/rng.hpp"

namespace bohmflow {

FilmMlp::FilmMlp(const MlpArchitecture& arch) : arch_(arch) {
    if (arch.input_dim < 1 || arch.hidden_layers < 1 || arch.hidden_width < 1 ||
        arch.time_features < 0 || arch.omega <= 0)
        throw ConfigError("invalid MLP architecture");
    const int L = arch.hidden_layers, h = arch.hidden_width, F = arch.feature_count();
    int off = 0;
    for (int l = 0; l < L; ++l) {
        const int in_w = (l == 0) ? arch.input_dim : h;
        w_off_.push_back(off);
        off += h * in_w;
        b_off_.push_back(off);
        off += h;
        a_off_.push_back(off);
        off += h * F;
        c_off_.push_back(off);
        off += h * F;
    }
    out_w_off_ = off;
    off += h;
    out_b_off_ = off;
    off += 1;
    params_.assign(static_cast<size_t>(off), 0.0);
}

void FilmMlp::init_params(std::uint64_t seed) {
    std::fill(params_.begin(), params_.end(), 0.0);
    Rng rng(seed);
    for (int l = 0; l < arch_.hidden_layers; ++l) {
        const int in_w = layer_inputs(l);
        const double scale = 1.0 / std::sqrt(static_cast<double>(in_w));
        double* W = params_.data() + w_off_[l];
        for (int i = 0; i < arch_.hidden_width * in_w; ++i) W[i] = scale * rng.normal();
    }
    // biases, FiLM heads and the output head stay zero: phi == 0 at init,
    // so the model starts exactly at the base score.
}

void FilmMlp::phi_jet(const double* x, double t, int order, MlpJetContext& ctx) const {
    if (order < 1 || order > 5) throw UnsupportedError("phi_jet: order must be in [1,5]");
    const TaylorTable& tab = TaylorTable::get(arch_.input_dim, order);
    const int nc = tab.size();
    const int L = arch_.hidden_layers, h = arch_.hidden_width, F = arch_.feature_count();
    const int d = arch_.input_dim;

    ctx.order = order;
    ctx.ncoeff = nc;
    ctx.t = t;
    ctx.tfeat.assign(static_cast<size_t>(F), 0.0);
    ctx.tfeat[0] = 1.0;
    for (int k = 1; k <= arch_.time_features; ++k) {
        ctx.tfeat[2 * k - 1] = std::cos(k * arch_.omega * t);
        ctx.tfeat[2 * k] = std::sin(k * arch_.omega * t);
    }

    ctx.input.resize(static_cast<size_t>(L) + 1);
    ctx.lin.resize(static_cast<size_t>(L));
    ctx.z.resize(static_cast<size_t>(L));
    ctx.gamma.resize(static_cast<size_t>(L));
    ctx.delta.resize(static_cast<size_t>(L));
    ctx.fder.resize(static_cast<size_t>(L));
    ctx.chain.resize(static_cast<size_t>(L));

    // seed polys: x_j + xi_j
    ctx.input[0].assign(static_cast<size_t>(d) * nc, 0.0);
    for (int j = 0; j < d; ++j) {
        ctx.input[0][static_cast<size_t>(j) * nc] = x[j];
        ctx.input[0][static_cast<size_t>(j) * nc + 1 + j] = 1.0;  // linear monomials follow the constant
    }

    const int nder = order + 2;
    for (int l = 0; l < L; ++l) {
        const int in_w = layer_inputs(l);
        const double* W = params_.data() + w_off_[l];
        const double* b = params_.data() + b_off_[l];
        const double* A = params_.data() + a_off_[l];
        const double* C = params_.data() + c_off_[l];
        const double* p = ctx.input[l].data();

        ctx.lin[l].assign(static_cast<size_t>(h) * nc, 0.0);
        ctx.z[l].assign(static_cast<size_t>(h) * nc, 0.0);
        ctx.gamma[l].assign(static_cast<size_t>(h), 0.0);
        ctx.delta[l].assign(static_cast<size_t>(h), 0.0);
        ctx.fder[l].assign(static_cast<size_t>(h) * nder, 0.0);
        ctx.chain[l].assign(static_cast<size_t>(h) * order * nc, 0.0);
        ctx.input[l + 1].assign(static_cast<size_t>(h) * nc, 0.0);

        for (int i = 0; i < h; ++i) {
            double* lin = ctx.lin[l].data() + static_cast<size_t>(i) * nc;
            const double* Wi = W + static_cast<size_t>(i) * in_w;
            for (int j = 0; j < in_w; ++j) {
                const double w = Wi[j];
                if (w == 0.0) continue;
                const double* pj = p + static_cast<size_t>(j) * nc;
                for (int c = 0; c < nc; ++c) lin[c] += w * pj[c];
            }
            lin[0] += b[i];

            double gam = 1.0, del = 0.0;
            const double* Ai = A + static_cast<size_t>(i) * F;
            const double* Ci = C + static_cast<size_t>(i) * F;
            for (int f = 0; f < F; ++f) {
                gam += Ai[f] * ctx.tfeat[f];
                del += Ci[f] * ctx.tfeat[f];
            }
            ctx.gamma[l][i] = gam;
            ctx.delta[l][i] = del;

            double* z = ctx.z[l].data() + static_cast<size_t>(i) * nc;
            for (int c = 0; c < nc; ++c) z[c] = gam * lin[c];
            z[0] += del;

            double* fd = ctx.fder[l].data() + static_cast<size_t>(i) * nder;
            tanh_derivs(z[0], order + 1, fd);
            poly_compose(tab, z, fd, ctx.input[l + 1].data() + static_cast<size_t>(i) * nc,
                         ctx.chain[l].data() + static_cast<size_t>(i) * order * nc);
        }
    }

    ctx.phi.assign(static_cast<size_t>(nc), 0.0);
    const double* wout = params_.data() + out_w_off_;
    const double* hl = ctx.input[L].data();
    for (int i = 0; i < h; ++i) {
        const double w = wout[i];
        if (w == 0.0) continue;
        const double* hi = hl + static_cast<size_t>(i) * nc;
        for (int c = 0; c < nc; ++c) ctx.phi[c] += w * hi[c];
    }
    ctx.phi[0] += params_[static_cast<size_t>(out_b_off_)];
}

void FilmMlp::phi_jet_vjp(const MlpJetContext& ctx, const double* phibar, double* xbar,
                          double* param_grad) const {
    const TaylorTable& tab = TaylorTable::get(arch_.input_dim, ctx.order);
    const int nc = ctx.ncoeff;
    const int L = arch_.hidden_layers, h = arch_.hidden_width, F = arch_.feature_count();
    const int order = ctx.order;
    const int nder = order + 2;

    auto& hbar = const_cast<MlpJetContext&>(ctx).hbar;
    auto& pbar = const_cast<MlpJetContext&>(ctx).pbar;
    auto& zbar = const_cast<MlpJetContext&>(ctx).zbar;
    auto& linbar = const_cast<MlpJetContext&>(ctx).linbar;

    // output head
    hbar.assign(static_cast<size_t>(h) * nc, 0.0);
    const double* wout = params_.data() + out_w_off_;
    const double* hl = ctx.input[L].data();
    for (int i = 0; i < h; ++i) {
        double dot = 0.0;
        const double* hi = hl + static_cast<size_t>(i) * nc;
        double* hb = hbar.data() + static_cast<size_t>(i) * nc;
        for (int c = 0; c < nc; ++c) {
            hb[c] = wout[i] * phibar[c];
            dot += phibar[c] * hi[c];
        }
        param_grad[out_w_off_ + i] += dot;
    }
    param_grad[out_b_off_] += phibar[0];

    for (int l = L - 1; l >= 0; --l) {
        const int in_w = layer_inputs(l);
        const double* W = params_.data() + w_off_[l];
        const double* p = ctx.input[l].data();
        pbar.assign(static_cast<size_t>(in_w) * nc, 0.0);

        for (int i = 0; i < h; ++i) {
            const double* z = ctx.z[l].data() + static_cast<size_t>(i) * nc;
            const double* fd = ctx.fder[l].data() + static_cast<size_t>(i) * nder;
            const double* chain = ctx.chain[l].data() + static_cast<size_t>(i) * order * nc;
            const double* lin = ctx.lin[l].data() + static_cast<size_t>(i) * nc;
            const double* hb = hbar.data() + static_cast<size_t>(i) * nc;

            zbar.assign(static_cast<size_t>(nc), 0.0);
            poly_compose_vjp(tab, z, fd, hb, chain, zbar.data());

            // z = gamma * lin + delta
            const double gam = ctx.gamma[l][i];
            double gammabar = 0.0;
            linbar.assign(static_cast<size_t>(nc), 0.0);
            for (int c = 0; c < nc; ++c) {
                linbar[c] = gam * zbar[c];
                gammabar += zbar[c] * lin[c];
            }
            const double deltabar = zbar[0];
            for (int f = 0; f < F; ++f) {
                param_grad[a_off_[l] + i * F + f] += gammabar * ctx.tfeat[f];
                param_grad[c_off_[l] + i * F + f] += deltabar * ctx.tfeat[f];
            }
            param_grad[b_off_[l] + i] += linbar[0];

            const double* Wi = W + static_cast<size_t>(i) * in_w;
            for (int j = 0; j < in_w; ++j) {
                const double* pj = p + static_cast<size_t>(j) * nc;
                double* pbj = pbar.data() + static_cast<size_t>(j) * nc;
                double dot = 0.0;
                const double w = Wi[j];
                for (int c = 0; c < nc; ++c) {
                    dot += linbar[c] * pj[c];
                    pbj[c] += w * linbar[c];
                }
                param_grad[w_off_[l] + i * in_w + j] += dot;
            }
        }
        hbar.swap(pbar);
    }

    // seed constants carry the x-dependence
    for (int j = 0; j < arch_.input_dim; ++j) xbar[j] += hbar[static_cast<size_t>(j) * nc];
}

}  // namespace bohmflow
