#include "bohmflow/score_model.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <mutex>

#include "json.hpp"

namespace bohmflow {

namespace {

// cached monomial index lookups for reading derivatives off a jet
struct LadderIndices {
    std::vector<int> lin;                 // index of e_i
    std::vector<std::vector<int>> quad;   // index of e_i + e_j
    std::vector<std::vector<std::vector<int>>> cub;  // index of e_i + e_j + e_k (-1 above order)

    LadderIndices(int d, int order) {
        const TaylorTable& tab = TaylorTable::get(d, order);
        std::vector<int> alpha(static_cast<size_t>(d), 0);
        lin.resize(d);
        quad.assign(d, std::vector<int>(d, -1));
        cub.assign(d, std::vector<std::vector<int>>(d, std::vector<int>(d, -1)));
        for (int i = 0; i < d; ++i) {
            alpha.assign(static_cast<size_t>(d), 0);
            alpha[i] = 1;
            lin[i] = tab.index(alpha);
            for (int j = 0; j < d && order >= 2; ++j) {
                alpha[j]++;
                quad[i][j] = tab.index(alpha);
                for (int k = 0; k < d && order >= 3; ++k) {
                    alpha[k]++;
                    cub[i][j][k] = tab.index(alpha);
                    alpha[k]--;
                }
                alpha[j]--;
            }
        }
    }

    static const LadderIndices& get(int d, int order) {
        static std::mutex mu;
        static std::map<std::pair<int, int>, std::unique_ptr<LadderIndices>> cache;
        std::lock_guard<std::mutex> lock(mu);
        auto& slot = cache[{d, order}];
        if (!slot) slot = std::make_unique<LadderIndices>(d, order);
        return *slot;
    }
};

thread_local LadderContext tl_ctx;

}  // namespace

ScoreModel::ScoreModel(GaussianScore base, FilmMlp net, double hbar, double m)
    : base_(std::move(base)), net_(std::move(net)), hbar_(hbar), m_(m) {
    const int d = static_cast<int>(base_.mu.size());
    if (base_.precision.rows() != d || base_.precision.cols() != d)
        throw ConfigError("base score precision must be d x d");
    if (!base_.precision.isApprox(base_.precision.transpose(), 1e-12))
        throw ConfigError("base score precision must be symmetric");
    if (net_.arch().input_dim != d) throw ConfigError("network input dimension mismatch");
    if (hbar_ <= 0 || m_ <= 0) throw ConfigError("hbar and m must be positive");
}

// ---- ladder ----

void ladder_eval(const ScoreModel& model, const PotentialSpec* pot, const Vec& x, double t,
                 int phi_order, LadderContext& ctx, LadderPoint& out) {
    const int d = model.dim();
    if (x.size() != d) throw ConfigError("ladder_eval: dimension mismatch");
    if (pot && pot->d != d) throw ConfigError("ladder_eval: potential dimension mismatch");

    const TaylorTable& tab = TaylorTable::get(d, phi_order);
    const int nc = tab.size();
    const int qdeg = phi_order - 2;  // Q is exact to this degree

    model.net().phi_jet(x.data(), t, phi_order, ctx.mlp);
    ctx.x = x;
    ctx.t = t;
    ctx.order = phi_order;

    // score components: s_i = d_i phi + base affine part
    ctx.s.assign(static_cast<size_t>(d) * nc, 0.0);
    for (int i = 0; i < d; ++i) {
        double* si = ctx.s.data() + static_cast<size_t>(i) * nc;
        poly_deriv(tab, i, ctx.mlp.phi.data(), si);
        double bi = 0.0;
        for (int j = 0; j < d; ++j) {
            bi -= model.base().precision(i, j) * (x[j] - model.base().mu[j]);
            si[1 + j] -= model.base().precision(i, j);
        }
        si[0] += bi;
    }

    // Q = -(hbar^2/4m) [ div s + |s|^2 / 2 ], exact to degree qdeg
    ctx.w.assign(static_cast<size_t>(nc), 0.0);
    ctx.div.assign(static_cast<size_t>(nc), 0.0);
    ctx.s2.assign(static_cast<size_t>(nc), 0.0);
    ctx.tmp.assign(static_cast<size_t>(nc), 0.0);
    for (int i = 0; i < d; ++i) {
        const double* si = ctx.s.data() + static_cast<size_t>(i) * nc;
        std::fill(ctx.tmp.begin(), ctx.tmp.end(), 0.0);
        poly_deriv(tab, i, si, ctx.tmp.data());
        for (int c = 0; c < nc; ++c) ctx.div[static_cast<size_t>(c)] += ctx.tmp[static_cast<size_t>(c)];
        poly_mul_acc(tab, qdeg, si, si, ctx.s2.data());
    }
    const double pref = -model.hbar() * model.hbar() / (4.0 * model.mass());
    for (int c = 0; c < nc; ++c)
        ctx.w[static_cast<size_t>(c)] =
            pref * (ctx.div[static_cast<size_t>(c)] + 0.5 * ctx.s2[static_cast<size_t>(c)]);

    if (pot) v_jet_acc(*pot, x, tab, ctx.w.data());

    const LadderIndices& li = LadderIndices::get(d, phi_order);
    out.d = d;
    out.depth = phi_order;
    out.vq = ctx.w[0];
    if (phi_order >= 3) {
        bool finite = true;
        for (int i = 0; i < d; ++i) {
            out.force[static_cast<size_t>(i)] = -ctx.w[static_cast<size_t>(li.lin[i])];
            finite = finite && std::isfinite(out.force[static_cast<size_t>(i)]);
        }
        if (!finite) throw NumericError("ladder_eval: non-finite force");
    }
    if (phi_order >= 4) {
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j)
                out.hess[static_cast<size_t>(i * d + j)] =
                    ctx.w[static_cast<size_t>(li.quad[i][j])] * (i == j ? 2.0 : 1.0);
    }
    if (phi_order >= 5) {
        for (int k = 0; k < d; ++k)
            for (int i = 0; i < d; ++i)
                for (int j = 0; j < d; ++j) {
                    const int idx = li.cub[i][j][k];
                    out.third[static_cast<size_t>((k * d + i) * d + j)] =
                        ctx.w[static_cast<size_t>(idx)] * tab.factorial(idx);
                }
    }
}

LadderPoint ladder_eval(const ScoreModel& model, const PotentialSpec* pot, const Vec& x, double t,
                        int phi_order, LadderContext& ctx) {
    LadderPoint out;
    ladder_eval(model, pot, x, t, phi_order, ctx, out);
    return out;
}

void ladder_vjp(const ScoreModel& model, const PotentialSpec* pot, const LadderContext& ctx,
                double vq_bar, const double* force_bar, const double* hess_bar,
                const double* third_bar, Vec& xbar, double* param_grad) {
    const int d = model.dim();
    const int order = ctx.order;
    const TaylorTable& tab = TaylorTable::get(d, order);
    const int nc = tab.size();
    const int qdeg = order - 2;
    const LadderIndices& li = LadderIndices::get(d, order);

    // assemble the cotangent on the (V+Q) jet coefficients
    auto& mut = const_cast<LadderContext&>(ctx);
    mut.wbar.assign(static_cast<size_t>(nc), 0.0);
    double* wbar = mut.wbar.data();
    wbar[0] = vq_bar;
    if (force_bar)
        for (int i = 0; i < d; ++i) wbar[li.lin[i]] -= force_bar[i];
    if (hess_bar)
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j)
                wbar[li.quad[i][j]] += hess_bar[i * d + j] * (i == j ? 2.0 : 1.0);
    if (third_bar)
        for (int k = 0; k < d; ++k)
            for (int i = 0; i < d; ++i)
                for (int j = 0; j < d; ++j) {
                    const int idx = li.cub[i][j][k];
                    wbar[idx] += third_bar[(k * d + i) * d + j] * tab.factorial(idx);
                }

    if (pot) v_jet_vjp(*pot, ctx.x, tab, wbar, xbar);

    // Q path: qbar = wbar
    const double pref = -model.hbar() * model.hbar() / (4.0 * model.mass());
    mut.divbar.assign(static_cast<size_t>(nc), 0.0);
    mut.s2bar.assign(static_cast<size_t>(nc), 0.0);
    for (int c = 0; c < nc; ++c) {
        mut.divbar[static_cast<size_t>(c)] = pref * wbar[c];
        mut.s2bar[static_cast<size_t>(c)] = 0.5 * pref * wbar[c];
    }

    mut.sbar.assign(static_cast<size_t>(d) * nc, 0.0);
    for (int i = 0; i < d; ++i) {
        double* sbi = mut.sbar.data() + static_cast<size_t>(i) * nc;
        poly_deriv_vjp(tab, i, mut.divbar.data(), sbi);
        const double* si = ctx.s.data() + static_cast<size_t>(i) * nc;
        poly_mul_vjp(tab, qdeg, mut.s2bar.data(), si, si, sbi, sbi);
    }

    // base affine part: d s_i[0] / d x_j = -P_ij
    mut.phibar.assign(static_cast<size_t>(nc), 0.0);
    for (int i = 0; i < d; ++i) {
        const double* sbi = mut.sbar.data() + static_cast<size_t>(i) * nc;
        for (int j = 0; j < d; ++j) xbar[j] -= model.base().precision(i, j) * sbi[0];
        poly_deriv_vjp(tab, i, sbi, mut.phibar.data());
    }

    model.net().phi_jet_vjp(ctx.mlp, mut.phibar.data(), xbar.data(), param_grad);
}

Vec score_eval(const ScoreModel& model, const Vec& x, double t, LadderContext& ctx) {
    const int d = model.dim();
    model.net().phi_jet(x.data(), t, 1, ctx.mlp);
    ctx.x = x;
    ctx.t = t;
    ctx.order = 1;
    Vec s = -model.base().precision * (x - model.base().mu);
    for (int i = 0; i < d; ++i) s[i] += ctx.mlp.phi[static_cast<size_t>(1 + i)];
    return s;
}

void score_vjp(const ScoreModel& model, const LadderContext& ctx, const Vec& sbar, Vec& xbar,
               double* param_grad) {
    const int d = model.dim();
    xbar -= model.base().precision.transpose() * sbar;
    std::vector<double> phibar(static_cast<size_t>(1 + d), 0.0);
    for (int i = 0; i < d; ++i) phibar[static_cast<size_t>(1 + i)] = sbar[i];
    model.net().phi_jet_vjp(ctx.mlp, phibar.data(), xbar.data(), param_grad);
}

// ---- public ladder ops ----

double ScoreModel::phi(const Vec& x, double t) const {
    if (x.size() != dim()) throw ConfigError("phi: dimension mismatch");
    net_.phi_jet(x.data(), t, 1, tl_ctx.mlp);
    const double v = tl_ctx.mlp.phi[0];
    if (!std::isfinite(v)) throw NumericError("phi: non-finite output");
    return v;
}

Vec ScoreModel::score(const Vec& x, double t) const {
    Vec s = score_eval(*this, x, t, tl_ctx);
    if (!s.allFinite()) throw NumericError("score: non-finite output");
    return s;
}

namespace {

Vec force_vec(const LadderPoint& p) {
    return Eigen::Map<const Vec>(p.force.data(), p.d);
}

Mat hess_mat(const LadderPoint& p) {
    return Eigen::Map<const Mat>(p.hess.data(), p.d, p.d);  // symmetric, layout moot
}

Mat third_contracted(const LadderPoint& p, const Vec& u) {
    Mat out = Mat::Zero(p.d, p.d);
    for (int k = 0; k < p.d; ++k)
        out += u[k] * Eigen::Map<const Mat>(p.third_slice(k), p.d, p.d);
    return out;
}

}  // namespace

double ScoreModel::quantum_potential(const Vec& x, double t) const {
    return ladder_eval(*this, nullptr, x, t, 2, tl_ctx).vq;
}

Vec ScoreModel::quantum_force(const Vec& x, double t) const {
    return force_vec(ladder_eval(*this, nullptr, x, t, 3, tl_ctx));
}

Mat ScoreModel::hess_Q(const Vec& x, double t) const {
    return hess_mat(ladder_eval(*this, nullptr, x, t, 4, tl_ctx));
}

Mat ScoreModel::hess_VQ(const PotentialSpec& pot, const Vec& x, double t) const {
    return hess_mat(ladder_eval(*this, &pot, x, t, 4, tl_ctx));
}

Mat ScoreModel::third_Q_directional(const Vec& x, double t, const Vec& u) const {
    return third_contracted(ladder_eval(*this, nullptr, x, t, 5, tl_ctx), u);
}

Mat ScoreModel::third_VQ_directional(const PotentialSpec& pot, const Vec& x, double t,
                                     const Vec& u) const {
    return third_contracted(ladder_eval(*this, &pot, x, t, 5, tl_ctx), u);
}

SpatialJet ScoreModel::jet(const Vec& x, double t, int order, const std::vector<Vec>& directions) const {
    if (order > 5) throw UnsupportedError("jet: order > 5 is unsupported");
    if (order < 1) throw UnsupportedError("jet: order must be >= 1");
    const int d = dim();
    net_.phi_jet(x.data(), t, order, tl_ctx.mlp);
    const TaylorTable& tab = TaylorTable::get(d, order);
    const LadderIndices& li = LadderIndices::get(d, order);

    SpatialJet out;
    out.value = tl_ctx.mlp.phi[0];
    out.gradient.resize(d);
    for (int i = 0; i < d; ++i) out.gradient[i] = tl_ctx.mlp.phi[static_cast<size_t>(li.lin[i])];
    if (order >= 2) {
        out.hessian.resize(d, d);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j)
                out.hessian(i, j) =
                    tl_ctx.mlp.phi[static_cast<size_t>(li.quad[i][j])] * (i == j ? 2.0 : 1.0);
    }
    for (const Vec& u : directions) {
        if (u.size() != d) throw ConfigError("jet: direction dimension mismatch");
        std::vector<double> der(static_cast<size_t>(order) + 1, 0.0);
        der[0] = out.value;
        for (int k = 1; k <= order; ++k)
            der[static_cast<size_t>(k)] = poly_directional(tab, tl_ctx.mlp.phi.data(), u.data(), k);
        out.directional.push_back(std::move(der));
    }
    return out;
}

// ---- checkpoint io ----

void ScoreModel::save(const std::string& path) const {
    nlohmann::json j;
    j["format_version"] = 1;
    j["hbar"] = hbar_;
    j["m"] = m_;
    j["base"]["mu"] = std::vector<double>(base_.mu.data(), base_.mu.data() + base_.mu.size());
    std::vector<std::vector<double>> prec;
    for (int i = 0; i < base_.precision.rows(); ++i)
        prec.emplace_back(base_.precision.row(i).begin(), base_.precision.row(i).end());
    j["base"]["precision"] = prec;
    const auto& a = net_.arch();
    j["arch"] = {{"input_dim", a.input_dim},
                 {"hidden_layers", a.hidden_layers},
                 {"hidden_width", a.hidden_width},
                 {"time_features", a.time_features},
                 {"omega", a.omega},
                 {"activation", "tanh"}};
    j["params"] = net_.params();

    std::ofstream f(path);
    if (!f) throw ConfigError("cannot write checkpoint: " + path);
    f << j.dump(1) << "\n";
}

ScoreModel ScoreModel::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("checkpoint not found: " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const std::exception& e) {
        throw ConfigError(std::string("malformed checkpoint: ") + e.what());
    }
    if (j.value("format_version", -1) != 1) throw ConfigError("unsupported checkpoint format version");

    MlpArchitecture arch;
    arch.input_dim = j["arch"]["input_dim"].get<int>();
    arch.hidden_layers = j["arch"]["hidden_layers"].get<int>();
    arch.hidden_width = j["arch"]["hidden_width"].get<int>();
    arch.time_features = j["arch"]["time_features"].get<int>();
    arch.omega = j["arch"]["omega"].get<double>();
    FilmMlp net(arch);

    const auto params = j["params"].get<std::vector<double>>();
    if (static_cast<int>(params.size()) != net.param_count())
        throw ConfigError("checkpoint shape mismatch: expected " + std::to_string(net.param_count()) +
                          " parameters, got " + std::to_string(params.size()));
    net.params() = params;

    GaussianScore base;
    const auto mu = j["base"]["mu"].get<std::vector<double>>();
    base.mu = Eigen::Map<const Vec>(mu.data(), static_cast<Eigen::Index>(mu.size()));
    const auto prec = j["base"]["precision"].get<std::vector<std::vector<double>>>();
    if (static_cast<int>(prec.size()) != arch.input_dim)
        throw ConfigError("checkpoint shape mismatch: base precision rows");
    base.precision.resize(arch.input_dim, arch.input_dim);
    for (int i = 0; i < arch.input_dim; ++i) {
        if (static_cast<int>(prec[static_cast<size_t>(i)].size()) != arch.input_dim)
            throw ConfigError("checkpoint shape mismatch: base precision cols");
        for (int k = 0; k < arch.input_dim; ++k) base.precision(i, k) = prec[static_cast<size_t>(i)][static_cast<size_t>(k)];
    }
    if (static_cast<int>(mu.size()) != arch.input_dim)
        throw ConfigError("checkpoint shape mismatch: base mu");

    return ScoreModel(std::move(base), std::move(net), j["hbar"].get<double>(), j["m"].get<double>());
}

}  // namespace bohmflow
