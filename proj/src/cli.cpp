#include "bohmflow/cli.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "bohmflow/config.hpp"
#include "bohmflow/csv.hpp"
#include "bohmflow/diagnostics.hpp"
#include "bohmflow/parallel.hpp"
#include "bohmflow/reference.hpp"
#include "bohmflow/rng.hpp"
#include "bohmflow/training.hpp"

namespace bohmflow {

namespace {

ExperimentConfig load_with_overrides(const std::string& path, const CliOverrides& ov) {
    ExperimentConfig cfg = load_config(path);
    if (ov.seed_set) cfg.seed = ov.seed;
    if (!ov.out_dir.empty()) cfg.out_dir = ov.out_dir;
    return cfg;
}

int threads_of(const CliOverrides& ov) { return ov.threads > 0 ? ov.threads : default_threads(); }

int fail(const std::exception& e, int code) {
    std::cerr << "error: " << e.what() << "\n";
    return code;
}

}  // namespace

int cmd_train(const std::string& config_path, const CliOverrides& ov) {
    try {
        const ExperimentConfig cfg = load_with_overrides(config_path, ov);
        const PotentialSpec pot = build_potential(cfg);
        const GaussianDensity rho0 = build_rho0(cfg, pot);
        ScoreModel model = build_model(cfg, rho0);
        write_resolved_config(cfg, cfg.out_dir);

        TrainConfig tc;
        tc.M = cfg.train_M;
        tc.T = cfg.T;
        tc.dt = cfg.dt;
        tc.epochs = cfg.epochs;
        tc.lr = cfg.lr;
        tc.beta1 = cfg.beta1;
        tc.beta2 = cfg.beta2;
        tc.adam_eps = cfg.adam_eps;
        tc.caustic_threshold = cfg.caustic_threshold;
        tc.checkpoint_stride = cfg.stride;
        tc.seed = cfg.seed;
        tc.resample_each_epoch = cfg.resample_each_epoch;
        tc.threads = threads_of(ov);
        tc.checkpoint_every = cfg.checkpoint_every;
        tc.out_dir = cfg.out_dir;
        tc.e_exact = cfg.e_exact;

        const TrainResult res = train(tc, model, pot, rho0, [](const EpochMetrics& em) {
            if (em.epoch % 50 == 0)
                std::cout << "epoch " << em.epoch << "  loss " << em.loss << "  masked "
                          << em.masked_fraction << "\n";
        });
        if (res.aborted) {
            std::cerr << "error: training aborted: " << res.abort_reason << "\n";
            return 3;
        }
        std::cout << "final loss " << res.metrics.back().loss << " after " << res.metrics.size()
                  << " epochs; outputs in " << cfg.out_dir << "\n";
        return 0;
    } catch (const ConfigError& e) {
        return fail(e, 1);
    } catch (const NumericError& e) {
        return fail(e, 2);
    }
}

int cmd_propagate(const std::string& config_path, const std::string& checkpoint_path,
                  const std::string& reference_dir, const CliOverrides& ov) {
    try {
        const ExperimentConfig cfg = load_with_overrides(config_path, ov);
        const PotentialSpec pot = build_potential(cfg);
        const GaussianDensity rho0 = build_rho0(cfg, pot);
        ScoreModel model = ScoreModel::load(checkpoint_path);
        if (model.dim() != pot.d)
            throw ConfigError("checkpoint/config shape mismatch: model dimension " +
                              std::to_string(model.dim()) + " vs potential dimension " +
                              std::to_string(pot.d));
        std::filesystem::create_directories(cfg.out_dir);
        write_resolved_config(cfg, cfg.out_dir);

        const int M = ov.particles > 0 ? ov.particles : cfg.prop_M;
        const EnsembleState ens =
            sample_initial_ensemble(rho0, M, derive_seed(cfg.seed, "propagate"));

        PropagateOptions popts;
        popts.T = cfg.T;
        popts.dt = cfg.dt;
        popts.stride = cfg.prop_stride;
        popts.caustic_threshold = cfg.caustic_threshold;
        popts.threads = threads_of(ov);
        const TrajectoryLog log = propagate(ens, model, pot, popts);

        write_trajectory_csv(log, cfg.out_dir + "/trajectory.csv");
        const EnergyReport erep = mean_energy(log, model, pot, cfg.e_exact,
                                              std::isnan(cfg.e_exact) ? "" : "config");
        write_energy_csv(erep, cfg.out_dir + "/energy.csv");
        write_moments_csv(moments(log), cfg.out_dir + "/moments.csv");

        if (!reference_dir.empty()) {
            std::vector<GridWavefunction> refs;
            for (const auto& entry : std::filesystem::directory_iterator(reference_dir)) {
                const std::string name = entry.path().filename().string();
                if (name.rfind("wf_", 0) == 0 && name.size() > 4 &&
                    name.substr(name.size() - 4) == ".bin")
                    refs.push_back(load_wavefunction(entry.path().string()));
            }
            std::sort(refs.begin(), refs.end(),
                      [](const GridWavefunction& a, const GridWavefunction& b) { return a.t < b.t; });
            if (!refs.empty()) {
                const KlReport krep = reverse_kl(log, refs, rho0);
                write_kl_csv(krep, cfg.out_dir + "/kl.csv");
            }
        }

        if (pot.d >= 2) {
            for (double ts : cfg.slice_times) {
                ScoreSliceSpec sspec;
                sspec.t = ts;
                sspec.dim_i = cfg.slice_dim_i;
                sspec.dim_j = cfg.slice_dim_j;
                sspec.fixed = Vec::Zero(pot.d);
                sspec.lo_i = sspec.lo_j = cfg.slice_lo;
                sspec.hi_i = sspec.hi_j = cfg.slice_hi;
                sspec.n_i = sspec.n_j = cfg.slice_n;
                char name[64];
                std::snprintf(name, sizeof(name), "/score_slice_t%g.csv", ts);
                write_score_slice_csv(score_slice(model, sspec), sspec, cfg.out_dir + name);
            }
        }
        std::cout << "propagated " << M << " particles to T = " << cfg.T << "; time-averaged <E> = "
                  << erep.time_avg << "; outputs in " << cfg.out_dir << "\n";
        return 0;
    } catch (const ConfigError& e) {
        return fail(e, 1);
    } catch (const NumericError& e) {
        return fail(e, 2);
    }
}

int cmd_reference(const std::string& config_path, const CliOverrides& ov) {
    try {
        const ExperimentConfig cfg = load_with_overrides(config_path, ov);
        const PotentialSpec pot = build_potential(cfg);
        const GaussianDensity rho0 = build_rho0(cfg, pot);
        std::filesystem::create_directories(cfg.out_dir);
        write_resolved_config(cfg, cfg.out_dir);

        GridSpec box;
        for (int ax = 0; ax < pot.d; ++ax) box.axes.push_back({cfg.ref_xmin, cfg.ref_xmax, cfg.ref_n});
        GridWavefunction wf = init_gaussian(box, rho0.mu, rho0.Sigma);

        // observe on the trajectory checkpoint schedule so the compare join
        // is exact; substeps approximate ref_dt while landing on boundaries
        const StepPlan plan = plan_steps(cfg.T, cfg.dt);
        std::vector<double> obs_times{0.0};
        for (int s = cfg.prop_stride; s <= plan.steps; s += cfg.prop_stride)
            obs_times.push_back(s * plan.dt);
        if (obs_times.back() != plan.steps * plan.dt) obs_times.push_back(plan.steps * plan.dt);

        std::ofstream f(cfg.out_dir + "/observables.csv");
        f << "t,norm,energy";
        for (int k = 0; k < pot.d; ++k) f << ",mean" << k;
        for (int k = 0; k < pot.d; ++k) f << ",sigma" << k;
        f << '\n';

        auto emit = [&](double t) {
            const GridObservables obs = observables(wf, pot, cfg.hbar, cfg.m);
            f << csv_num(t) << ',' << csv_num(obs.norm) << ',' << csv_num(obs.energy);
            for (int k = 0; k < pot.d; ++k) f << ',' << csv_num(obs.mean[k]);
            for (int k = 0; k < pot.d; ++k) f << ',' << csv_num(obs.sigma[k]);
            f << '\n';
            if (edge_margin_sigmas(obs, box) < 5.0)
                std::cerr << "warning: wavepacket within 5 sigma of the box edge at t = " << t << "\n";
        };
        auto want_snapshot = [&](double t) {
            for (double ts : cfg.snapshot_times)
                if (std::abs(ts - t) < 0.51 * cfg.prop_stride * plan.dt) return true;
            return false;
        };
        auto snapshot = [&](double t) {
            if (!want_snapshot(t)) return;
            char name[64];
            std::snprintf(name, sizeof(name), "/wf_%04zu.bin", static_cast<size_t>(std::llround(t / plan.dt)));
            wf.t = t;  // exact boundary time, free of substep accumulation error
            save_wavefunction(wf, cfg.out_dir + name);
        };

        emit(0.0);
        snapshot(0.0);
        for (size_t j = 0; j + 1 < obs_times.size(); ++j) {
            const double span = obs_times[j + 1] - obs_times[j];
            const int nsub = std::max(1, static_cast<int>(std::llround(span / cfg.ref_dt)));
            SplitOperator op(wf, pot, span / nsub, cfg.hbar, cfg.m);
            for (int s = 0; s < nsub; ++s) op.step();
            wf.t = obs_times[j + 1];  // exact schedule time, free of substep rounding
            emit(wf.t);
            snapshot(wf.t);
        }
        std::cout << "reference norm " << wf.norm() << "; outputs in " << cfg.out_dir << "\n";
        return 0;
    } catch (const ConfigError& e) {
        return fail(e, 1);
    } catch (const NumericError& e) {
        return fail(e, 2);
    }
}

namespace {

struct Table {
    std::vector<std::string> cols;
    std::vector<std::vector<double>> rows;

    int col(const std::string& name) const {
        for (size_t i = 0; i < cols.size(); ++i)
            if (cols[i] == name) return static_cast<int>(i);
        return -1;
    }
};

Table read_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read " + path);
    Table t;
    std::string line;
    if (!std::getline(f, line)) throw ConfigError("empty csv: " + path);
    std::stringstream hs(line);
    std::string item;
    while (std::getline(hs, item, ',')) t.cols.push_back(item);
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::stringstream ls(line);
        std::vector<double> row;
        while (std::getline(ls, item, ',')) row.push_back(std::strtod(item.c_str(), nullptr));
        t.rows.push_back(std::move(row));
    }
    return t;
}

}  // namespace

int cmd_compare(const std::string& config_path, const std::string& run_dir,
                const std::string& reference_dir, const CliOverrides& ov) {
    try {
        const ExperimentConfig cfg = load_with_overrides(config_path, ov);
        const Table run = read_csv(run_dir + "/moments.csv");
        const std::string ref_path = std::filesystem::exists(reference_dir + "/observables.csv")
                                         ? reference_dir + "/observables.csv"
                                         : reference_dir + "/moments.csv";
        const Table ref = read_csv(ref_path);

        const int d = cfg.d;
        std::vector<double> rms_mean(static_cast<size_t>(d), 0.0), rms_sigma(static_cast<size_t>(d), 0.0);
        std::vector<double> max_mean(static_cast<size_t>(d), 0.0), max_sigma(static_cast<size_t>(d), 0.0);
        double sigma_range = 0.0;
        int joined = 0;

        for (const auto& rrow : run.rows) {
            const double t = rrow[0];
            const std::vector<double>* match = nullptr;
            for (const auto& frow : ref.rows)
                if (std::abs(frow[0] - t) < 1e-9) {
                    match = &frow;
                    break;
                }
            if (!match) continue;
            ++joined;
            for (int k = 0; k < d; ++k) {
                const int rm = run.col("mean" + std::to_string(k));
                const int rs = run.col("sigma" + std::to_string(k));
                const int fm = ref.col("mean" + std::to_string(k));
                const int fs = ref.col("sigma" + std::to_string(k));
                if (rm < 0 || rs < 0 || fm < 0 || fs < 0)
                    throw ConfigError("compare: moment columns missing for mode " + std::to_string(k));
                const double dm = rrow[static_cast<size_t>(rm)] - (*match)[static_cast<size_t>(fm)];
                const double ds = rrow[static_cast<size_t>(rs)] - (*match)[static_cast<size_t>(fs)];
                rms_mean[static_cast<size_t>(k)] += dm * dm;
                rms_sigma[static_cast<size_t>(k)] += ds * ds;
                max_mean[static_cast<size_t>(k)] = std::max(max_mean[static_cast<size_t>(k)], std::abs(dm));
                max_sigma[static_cast<size_t>(k)] = std::max(max_sigma[static_cast<size_t>(k)], std::abs(ds));
            }
        }
        if (joined == 0) throw ConfigError("compare: no matching times between run and reference");

        // deviation scale: the reference sigma dynamic range across modes
        {
            double lo = std::numeric_limits<double>::infinity(), hi = -lo;
            for (const auto& frow : ref.rows)
                for (int k = 0; k < d; ++k) {
                    const int fs = ref.col("sigma" + std::to_string(k));
                    lo = std::min(lo, frow[static_cast<size_t>(fs)]);
                    hi = std::max(hi, frow[static_cast<size_t>(fs)]);
                }
            sigma_range = hi - lo;
        }
        const double scale = sigma_range > 0 ? sigma_range : 1.0;

        bool pass = true;
        std::ofstream sf(run_dir + "/compare_summary.csv");
        sf << "metric,mode,rms,max,rel_rms,tol,pass\n";
        std::cout << "joined " << joined << " checkpoint times; sigma dynamic range " << scale << "\n";
        for (int k = 0; k < d; ++k) {
            const double rm = std::sqrt(rms_mean[static_cast<size_t>(k)] / joined);
            const double rs = std::sqrt(rms_sigma[static_cast<size_t>(k)] / joined);
            const bool pm = rm / scale <= cfg.mean_rms_tol;
            const bool ps = rs / scale <= cfg.sigma_rms_tol;
            pass = pass && pm && ps;
            sf << "mean," << k << ',' << csv_num(rm) << ',' << csv_num(max_mean[static_cast<size_t>(k)])
               << ',' << csv_num(rm / scale) << ',' << csv_num(cfg.mean_rms_tol) << ',' << (pm ? 1 : 0) << '\n';
            sf << "sigma," << k << ',' << csv_num(rs) << ',' << csv_num(max_sigma[static_cast<size_t>(k)])
               << ',' << csv_num(rs / scale) << ',' << csv_num(cfg.sigma_rms_tol) << ',' << (ps ? 1 : 0) << '\n';
            std::cout << "mode " << k << ": rms d<mean> " << rm << " (max " << max_mean[static_cast<size_t>(k)]
                      << "), rms dsigma " << rs << " (max " << max_sigma[static_cast<size_t>(k)] << ")\n";
        }

        if (std::filesystem::exists(run_dir + "/kl.csv")) {
            const Table kl = read_csv(run_dir + "/kl.csv");
            const int ck = kl.col("kl"), cf = kl.col("floor");
            for (const auto& row : kl.rows) {
                const double bound = cfg.kl_floor_mult * row[static_cast<size_t>(cf)];
                const bool ok = row[static_cast<size_t>(ck)] <= bound;
                pass = pass && ok;
                sf << "kl," << csv_num(row[0]) << ',' << csv_num(row[static_cast<size_t>(ck)]) << ",,"
                   << csv_num(bound > 0 ? row[static_cast<size_t>(ck)] / bound : 0.0) << ','
                   << csv_num(bound) << ',' << (ok ? 1 : 0) << '\n';
                std::cout << "kl(t=" << row[0] << ") = " << row[static_cast<size_t>(ck)]
                          << " (bound " << bound << ")\n";
            }
        }
        std::cout << (pass ? "PASS" : "FAIL") << "\n";
        return pass ? 0 : 4;
    } catch (const ConfigError& e) {
        return fail(e, 1);
    } catch (const NumericError& e) {
        return fail(e, 2);
    }
}

}  // namespace bohmflow
