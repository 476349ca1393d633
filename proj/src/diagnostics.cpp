#include "bohmflow/diagnostics.hpp"

#include <cmath>
#include <fstream>

#include "bohmflow/csv.hpp"

namespace bohmflow {

EnergyReport mean_energy(const TrajectoryLog& log, const ScoreModel& model, const PotentialSpec& pot,
                         double e_exact, const std::string& source) {
    if (log.checkpoints.empty()) throw ConfigError("mean_energy: empty trajectory log");
    EnergyReport rep;
    rep.e_exact = e_exact;
    rep.e_exact_source = source;

    LadderContext ctx;
    for (const auto& cp : log.checkpoints) {
        double sum = 0.0;
        for (int i = 0; i < log.M; ++i) {
            const double vq =
                ladder_eval(model, &pot, cp.x[static_cast<size_t>(i)], cp.t, 2, ctx).vq;
            sum += 0.5 * model.mass() * cp.v[static_cast<size_t>(i)].squaredNorm() + vq;
        }
        rep.t.push_back(cp.t);
        rep.energy.push_back(sum / log.M);
    }

    // trapezoid average over [0, T]
    if (rep.t.size() == 1) {
        rep.time_avg = rep.energy[0];
    } else {
        double wsum = 0.0, acc = 0.0;
        for (size_t j = 0; j + 1 < rep.t.size(); ++j) {
            const double h = rep.t[j + 1] - rep.t[j];
            acc += 0.5 * h * (rep.energy[j] + rep.energy[j + 1]);
            wsum += h;
        }
        rep.time_avg = acc / wsum;
    }
    rep.error = std::abs(rep.time_avg - e_exact);
    return rep;
}

MomentsReport moments(const TrajectoryLog& log) {
    if (log.checkpoints.empty()) throw ConfigError("moments: empty trajectory log");
    MomentsReport rep;
    for (const auto& cp : log.checkpoints) {
        Vec mean = Vec::Zero(log.d), x2 = Vec::Zero(log.d);
        for (int i = 0; i < log.M; ++i) {
            mean += cp.x[static_cast<size_t>(i)];
            x2 += cp.x[static_cast<size_t>(i)].cwiseAbs2();
        }
        mean /= log.M;
        x2 /= log.M;
        Vec sigma(log.d);
        for (int k = 0; k < log.d; ++k) sigma[k] = std::sqrt(std::max(0.0, x2[k] - mean[k] * mean[k]));
        rep.t.push_back(cp.t);
        rep.mean.push_back(mean);
        rep.sigma.push_back(sigma);
    }
    return rep;
}

KlReport reverse_kl(const TrajectoryLog& log, const std::vector<GridWavefunction>& refs,
                    const GaussianDensity& rho0) {
    KlReport rep;
    for (const auto& ref : refs) {
        const TrajectoryCheckpoint* match = nullptr;
        for (const auto& cp : log.checkpoints)
            if (std::abs(cp.t - ref.t) < 1e-9) {
                match = &cp;
                break;
            }
        if (!match) continue;
        double sum = 0.0;
        int count = 0, excluded = 0;
        for (int i = 0; i < log.M; ++i) {
            if (match->mask[static_cast<size_t>(i)]) {
                ++excluded;
                continue;
            }
            const double lt = pushforward_logdensity(log.x0[static_cast<size_t>(i)],
                                                     match->logdetF[static_cast<size_t>(i)], rho0);
            const double le = interp_logdensity(ref, match->x[static_cast<size_t>(i)]);
            sum += lt - le;
            ++count;
        }
        if (count == 0) throw NumericError("reverse_kl: all particles masked at t = " + std::to_string(ref.t));
        rep.t.push_back(ref.t);
        rep.kl.push_back(sum / count);
        rep.excluded.push_back(excluded);
        if (std::abs(ref.t) < 1e-12) rep.floor_estimate = std::abs(sum / count);
    }
    return rep;
}

std::vector<std::vector<double>> reconstruct_phase(const TrajectoryLog& log, const ScoreModel& model,
                                                   const PotentialSpec& pot,
                                                   const std::vector<double>& S0) {
    if (log.stride != 1) throw ConfigError("reconstruct_phase requires a stride-1 trajectory log");
    if (static_cast<int>(S0.size()) != log.M) throw ConfigError("reconstruct_phase: S0 size mismatch");

    std::vector<std::vector<double>> S(static_cast<size_t>(log.M));
    std::vector<double> lag_prev(static_cast<size_t>(log.M)), lag_cur(static_cast<size_t>(log.M));
    LadderContext ctx;
    for (size_t j = 0; j < log.checkpoints.size(); ++j) {
        const auto& cp = log.checkpoints[j];
        for (int i = 0; i < log.M; ++i) {
            const double vq =
                ladder_eval(model, &pot, cp.x[static_cast<size_t>(i)], cp.t, 2, ctx).vq;
            lag_cur[static_cast<size_t>(i)] =
                0.5 * model.mass() * cp.v[static_cast<size_t>(i)].squaredNorm() - vq;
        }
        for (int i = 0; i < log.M; ++i) {
            auto& series = S[static_cast<size_t>(i)];
            if (j == 0) {
                series.push_back(S0[static_cast<size_t>(i)]);
            } else {
                const double h = cp.t - log.checkpoints[j - 1].t;
                series.push_back(series.back() +
                                 0.5 * h * (lag_prev[static_cast<size_t>(i)] + lag_cur[static_cast<size_t>(i)]));
            }
        }
        lag_prev.swap(lag_cur);
    }
    return S;
}

std::vector<ScoreSliceRow> score_slice(const ScoreModel& model, const ScoreSliceSpec& spec) {
    const int d = model.dim();
    if (spec.dim_i == spec.dim_j || spec.dim_i < 0 || spec.dim_j < 0 || spec.dim_i >= d ||
        spec.dim_j >= d)
        throw ConfigError("score_slice: slice dimensions must be distinct and within d");
    if (spec.fixed.size() != d) throw ConfigError("score_slice: fixed coordinates must be a d-vector");

    std::vector<ScoreSliceRow> rows;
    rows.reserve(static_cast<size_t>(spec.n_i) * spec.n_j);
    Vec x = spec.fixed;
    for (int a = 0; a < spec.n_i; ++a) {
        const double xi = spec.lo_i + (spec.hi_i - spec.lo_i) * a / (spec.n_i - 1);
        for (int b = 0; b < spec.n_j; ++b) {
            const double xj = spec.lo_j + (spec.hi_j - spec.lo_j) * b / (spec.n_j - 1);
            x[spec.dim_i] = xi;
            x[spec.dim_j] = xj;
            const Vec s = model.score(x, spec.t);
            rows.push_back({xi, xj, s[spec.dim_i], s[spec.dim_j]});
        }
    }
    return rows;
}

void write_energy_csv(const EnergyReport& rep, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw ConfigError("cannot write " + path);
    f << "t,energy\n";
    for (size_t j = 0; j < rep.t.size(); ++j)
        f << csv_num(rep.t[j]) << ',' << csv_num(rep.energy[j]) << '\n';
}

void write_moments_csv(const MomentsReport& rep, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw ConfigError("cannot write " + path);
    const int d = rep.mean.empty() ? 0 : static_cast<int>(rep.mean[0].size());
    f << "t";
    for (int k = 0; k < d; ++k) f << ",mean" << k;
    for (int k = 0; k < d; ++k) f << ",sigma" << k;
    f << '\n';
    for (size_t j = 0; j < rep.t.size(); ++j) {
        f << csv_num(rep.t[j]);
        for (int k = 0; k < d; ++k) f << ',' << csv_num(rep.mean[j][k]);
        for (int k = 0; k < d; ++k) f << ',' << csv_num(rep.sigma[j][k]);
        f << '\n';
    }
}

void write_kl_csv(const KlReport& rep, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw ConfigError("cannot write " + path);
    f << "t,kl,floor,excluded\n";
    for (size_t j = 0; j < rep.t.size(); ++j)
        f << csv_num(rep.t[j]) << ',' << csv_num(rep.kl[j]) << ',' << csv_num(rep.floor_estimate)
          << ',' << rep.excluded[j] << '\n';
}

void write_score_slice_csv(const std::vector<ScoreSliceRow>& rows, const ScoreSliceSpec& spec,
                           const std::string& path) {
    std::ofstream f(path);
    if (!f) throw ConfigError("cannot write " + path);
    f << 'x' << spec.dim_i << ",x" << spec.dim_j << ",s" << spec.dim_i << ",s" << spec.dim_j << '\n';
    for (const auto& r : rows)
        f << csv_num(r.xi) << ',' << csv_num(r.xj) << ',' << csv_num(r.si) << ',' << csv_num(r.sj)
          << '\n';
}

}  // namespace bohmflow
