#include "bohmflow/config.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "bohmflow/csv.hpp"
#include "bohmflow/rng.hpp"
#include "json.hpp"

namespace bohmflow {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

// plain literal, "pi", "N*pi", "pi/N"
double parse_number(const std::string& raw, const std::string& key) {
    const std::string s = trim(raw);
    try {
        size_t pos = 0;
        if (s == "pi") return M_PI;
        if (s.rfind("pi/", 0) == 0) return M_PI / std::stod(s.substr(3));
        const auto star = s.find("*pi");
        if (star != std::string::npos && star + 3 == s.size()) return std::stod(s.substr(0, star)) * M_PI;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: cannot parse number '" + s + "' for key " + key);
    }
}

bool parse_bool(const std::string& raw, const std::string& key) {
    const std::string s = trim(raw);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ConfigError("config: cannot parse boolean '" + s + "' for key " + key);
}

std::vector<double> parse_list(const std::string& raw, const std::string& key) {
    std::vector<double> out;
    std::stringstream ss(raw);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (trim(item).empty()) continue;
        out.push_back(parse_number(item, key));
    }
    return out;
}

Mat parse_matrix(const std::string& raw, const std::string& key) {
    std::vector<std::vector<double>> rows;
    std::stringstream ss(raw);
    std::string row;
    while (std::getline(ss, row, ';')) rows.push_back(parse_list(row, key));
    if (rows.empty()) throw ConfigError("config: empty matrix for key " + key);
    Mat m(rows.size(), rows[0].size());
    for (size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != rows[0].size()) throw ConfigError("config: ragged matrix for key " + key);
        for (size_t j = 0; j < rows[i].size(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
    return m;
}

const std::map<std::string, std::set<std::string>> kSchema = {
    {"", {"seed"}},
    {"potential", {"kind", "d", "D", "beta", "lambda", "periodic", "a", "b", "K"}},
    {"initial_state", {"source", "displace", "mu", "var"}},
    {"model", {"hidden_layers", "hidden_width", "time_features", "omega", "hbar", "m", "base"}},
    {"trajectory", {"T", "dt", "stride", "caustic_threshold"}},
    {"train",
     {"M", "epochs", "lr", "beta1", "beta2", "adam_eps", "resample_each_epoch", "checkpoint_every",
      "e_exact"}},
    {"propagate", {"M", "stride"}},
    {"reference", {"n", "xmin", "xmax", "dt", "snapshot_times"}},
    {"diagnostics", {"slice_times", "slice_dims", "slice_lo", "slice_hi", "slice_n"}},
    {"compare", {"mean_rms_tol", "sigma_rms_tol", "kl_floor_mult"}},
    {"output", {"dir"}},
};

}  // namespace

ExperimentConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config not found: " + path);

    ExperimentConfig cfg;
    cfg.source_path = path;
    std::string section;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError("config: malformed section at line " + std::to_string(lineno));
            section = trim(line.substr(1, line.size() - 2));
            if (!kSchema.count(section)) throw ConfigError("config: unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("config: expected key=value at line " + std::to_string(lineno));
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const auto it = kSchema.find(section);
        if (it == kSchema.end() || !it->second.count(key))
            throw ConfigError("config: unknown key '" + key + "' in section [" + section + "]");

        if (section.empty() && key == "seed") cfg.seed = static_cast<std::uint64_t>(std::stoull(value));
        else if (section == "potential") {
            if (key == "kind") {
                if (value == "harmonic") cfg.kind = PotentialKind::harmonic;
                else if (value == "double_well") cfg.kind = PotentialKind::double_well;
                else if (value == "morse_chain") cfg.kind = PotentialKind::morse_chain;
                else throw ConfigError("config: unknown potential kind '" + value + "'");
            } else if (key == "d") cfg.d = static_cast<int>(parse_number(value, key));
            else if (key == "D") cfg.D = parse_number(value, key);
            else if (key == "beta") cfg.beta = parse_number(value, key);
            else if (key == "lambda") cfg.lambda = parse_number(value, key);
            else if (key == "periodic") cfg.periodic = parse_bool(value, key);
            else if (key == "a") cfg.a = parse_number(value, key);
            else if (key == "b") cfg.b = parse_number(value, key);
            else if (key == "K") cfg.K = parse_matrix(value, key);
        } else if (section == "initial_state") {
            if (key == "source") cfg.init_source = value;
            else if (key == "displace") {
                const auto v = parse_list(value, key);
                cfg.displace = Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
            } else if (key == "mu") {
                const auto v = parse_list(value, key);
                cfg.init_mu = Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
            } else if (key == "var") {
                const auto v = parse_list(value, key);
                cfg.init_var = Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
            }
        } else if (section == "model") {
            if (key == "hidden_layers") cfg.hidden_layers = static_cast<int>(parse_number(value, key));
            else if (key == "hidden_width") cfg.hidden_width = static_cast<int>(parse_number(value, key));
            else if (key == "time_features") cfg.time_features = static_cast<int>(parse_number(value, key));
            else if (key == "omega") cfg.omega = (value == "auto") ? 0.0 : parse_number(value, key);
            else if (key == "hbar") cfg.hbar = parse_number(value, key);
            else if (key == "m") cfg.m = parse_number(value, key);
            else if (key == "base") {
                if (value != "initial_gaussian")
                    throw ConfigError("config: unsupported base score source '" + value + "'");
                cfg.base = value;
            }
        } else if (section == "trajectory") {
            if (key == "T") cfg.T = parse_number(value, key);
            else if (key == "dt") cfg.dt = parse_number(value, key);
            else if (key == "stride") cfg.stride = static_cast<int>(parse_number(value, key));
            else if (key == "caustic_threshold") cfg.caustic_threshold = parse_number(value, key);
        } else if (section == "train") {
            if (key == "M") cfg.train_M = static_cast<int>(parse_number(value, key));
            else if (key == "epochs") cfg.epochs = static_cast<int>(parse_number(value, key));
            else if (key == "lr") cfg.lr = parse_number(value, key);
            else if (key == "beta1") cfg.beta1 = parse_number(value, key);
            else if (key == "beta2") cfg.beta2 = parse_number(value, key);
            else if (key == "adam_eps") cfg.adam_eps = parse_number(value, key);
            else if (key == "resample_each_epoch") cfg.resample_each_epoch = parse_bool(value, key);
            else if (key == "checkpoint_every") cfg.checkpoint_every = static_cast<int>(parse_number(value, key));
            else if (key == "e_exact") cfg.e_exact = value.empty() ? std::numeric_limits<double>::quiet_NaN() : parse_number(value, key);
        } else if (section == "propagate") {
            if (key == "M") cfg.prop_M = static_cast<int>(parse_number(value, key));
            else if (key == "stride") cfg.prop_stride = static_cast<int>(parse_number(value, key));
        } else if (section == "reference") {
            if (key == "n") cfg.ref_n = static_cast<int>(parse_number(value, key));
            else if (key == "xmin") cfg.ref_xmin = parse_number(value, key);
            else if (key == "xmax") cfg.ref_xmax = parse_number(value, key);
            else if (key == "dt") cfg.ref_dt = parse_number(value, key);
            else if (key == "snapshot_times") cfg.snapshot_times = parse_list(value, key);
        } else if (section == "diagnostics") {
            if (key == "slice_times") cfg.slice_times = parse_list(value, key);
            else if (key == "slice_dims") {
                const auto v = parse_list(value, key);
                if (v.size() != 2) throw ConfigError("config: slice_dims needs two entries");
                cfg.slice_dim_i = static_cast<int>(v[0]);
                cfg.slice_dim_j = static_cast<int>(v[1]);
            } else if (key == "slice_lo") cfg.slice_lo = parse_number(value, key);
            else if (key == "slice_hi") cfg.slice_hi = parse_number(value, key);
            else if (key == "slice_n") cfg.slice_n = static_cast<int>(parse_number(value, key));
        } else if (section == "compare") {
            if (key == "mean_rms_tol") cfg.mean_rms_tol = parse_number(value, key);
            else if (key == "sigma_rms_tol") cfg.sigma_rms_tol = parse_number(value, key);
            else if (key == "kl_floor_mult") cfg.kl_floor_mult = parse_number(value, key);
        } else if (section == "output") {
            if (key == "dir") cfg.out_dir = value;
        }
    }

    if (cfg.K.size() == 0) cfg.K = Mat::Identity(cfg.d, cfg.d);
    if (cfg.displace.size() == 0) cfg.displace = Vec::Zero(cfg.d);
    return cfg;
}

namespace {

std::string vec_str(const Vec& v) {
    std::string s;
    for (int i = 0; i < v.size(); ++i) s += (i ? "," : "") + csv_num(v[i]);
    return s;
}

std::string mat_str(const Mat& m) {
    std::string s;
    for (int i = 0; i < m.rows(); ++i) {
        if (i) s += ";";
        for (int j = 0; j < m.cols(); ++j) s += (j ? "," : "") + csv_num(m(i, j));
    }
    return s;
}

std::string kind_str(PotentialKind k) {
    switch (k) {
        case PotentialKind::harmonic: return "harmonic";
        case PotentialKind::double_well: return "double_well";
        case PotentialKind::morse_chain: return "morse_chain";
    }
    return "?";
}

}  // namespace

void write_resolved_config(const ExperimentConfig& cfg, const std::string& dir) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream f(dir + "/resolved_config");
        if (!f) throw ConfigError("cannot write resolved config in " + dir);
        f << "seed = " << cfg.seed << "\n\n";
        f << "[potential]\nkind = " << kind_str(cfg.kind) << "\nd = " << cfg.d << "\nD = " << csv_num(cfg.D)
          << "\nbeta = " << csv_num(cfg.beta) << "\nlambda = " << csv_num(cfg.lambda)
          << "\nperiodic = " << (cfg.periodic ? "true" : "false") << "\na = " << csv_num(cfg.a)
          << "\nb = " << csv_num(cfg.b) << "\nK = " << mat_str(cfg.K) << "\n\n";
        f << "[initial_state]\nsource = " << cfg.init_source << "\ndisplace = " << vec_str(cfg.displace);
        if (cfg.init_mu.size()) f << "\nmu = " << vec_str(cfg.init_mu);
        if (cfg.init_var.size()) f << "\nvar = " << vec_str(cfg.init_var);
        f << "\n\n[model]\nhidden_layers = " << cfg.hidden_layers << "\nhidden_width = " << cfg.hidden_width
          << "\ntime_features = " << cfg.time_features << "\nomega = "
          << (cfg.omega == 0.0 ? std::string("auto") : csv_num(cfg.omega)) << "\nhbar = " << csv_num(cfg.hbar)
          << "\nm = " << csv_num(cfg.m) << "\nbase = " << cfg.base << "\n\n";
        f << "[trajectory]\nT = " << csv_num(cfg.T) << "\ndt = " << csv_num(cfg.dt)
          << "\nstride = " << cfg.stride << "\ncaustic_threshold = " << csv_num(cfg.caustic_threshold)
          << "\n\n";
        f << "[train]\nM = " << cfg.train_M << "\nepochs = " << cfg.epochs << "\nlr = " << csv_num(cfg.lr)
          << "\nbeta1 = " << csv_num(cfg.beta1) << "\nbeta2 = " << csv_num(cfg.beta2)
          << "\nadam_eps = " << csv_num(cfg.adam_eps)
          << "\nresample_each_epoch = " << (cfg.resample_each_epoch ? "true" : "false")
          << "\ncheckpoint_every = " << cfg.checkpoint_every << "\ne_exact = "
          << (std::isnan(cfg.e_exact) ? std::string() : csv_num(cfg.e_exact)) << "\n\n";
        f << "[propagate]\nM = " << cfg.prop_M << "\nstride = " << cfg.prop_stride << "\n\n";
        f << "[reference]\nn = " << cfg.ref_n << "\nxmin = " << csv_num(cfg.ref_xmin)
          << "\nxmax = " << csv_num(cfg.ref_xmax) << "\ndt = " << csv_num(cfg.ref_dt) << "\nsnapshot_times = ";
        for (size_t i = 0; i < cfg.snapshot_times.size(); ++i) f << (i ? "," : "") << csv_num(cfg.snapshot_times[i]);
        f << "\n\n[diagnostics]\nslice_times = ";
        for (size_t i = 0; i < cfg.slice_times.size(); ++i) f << (i ? "," : "") << csv_num(cfg.slice_times[i]);
        f << "\nslice_dims = " << cfg.slice_dim_i << "," << cfg.slice_dim_j << "\nslice_lo = "
          << csv_num(cfg.slice_lo) << "\nslice_hi = " << csv_num(cfg.slice_hi) << "\nslice_n = " << cfg.slice_n
          << "\n\n";
        f << "[compare]\nmean_rms_tol = " << csv_num(cfg.mean_rms_tol) << "\nsigma_rms_tol = "
          << csv_num(cfg.sigma_rms_tol) << "\nkl_floor_mult = " << csv_num(cfg.kl_floor_mult) << "\n\n";
        f << "[output]\ndir = " << cfg.out_dir << "\n";
    }
    {
        nlohmann::json j;
        j["seed"] = cfg.seed;
        j["potential"] = {{"kind", kind_str(cfg.kind)}, {"d", cfg.d}, {"D", cfg.D}, {"beta", cfg.beta},
                          {"lambda", cfg.lambda}, {"periodic", cfg.periodic}, {"a", cfg.a}, {"b", cfg.b}};
        j["trajectory"] = {{"T", cfg.T}, {"dt", cfg.dt}, {"stride", cfg.stride},
                           {"caustic_threshold", cfg.caustic_threshold}};
        j["model"] = {{"hidden_layers", cfg.hidden_layers}, {"hidden_width", cfg.hidden_width},
                      {"time_features", cfg.time_features}, {"omega", cfg.omega}, {"hbar", cfg.hbar},
                      {"m", cfg.m}, {"base", cfg.base}};
        j["train"] = {{"M", cfg.train_M}, {"epochs", cfg.epochs}, {"lr", cfg.lr},
                      {"resample_each_epoch", cfg.resample_each_epoch}};
        j["output"] = {{"dir", cfg.out_dir}};
        std::ofstream f(dir + "/resolved_config.json");
        f << j.dump(1) << "\n";
    }
}

PotentialSpec build_potential(const ExperimentConfig& cfg) {
    switch (cfg.kind) {
        case PotentialKind::harmonic: {
            Mat K = cfg.K;
            if (K.rows() != cfg.d) throw ConfigError("config: K dimension does not match d");
            return make_harmonic(K);
        }
        case PotentialKind::double_well:
            if (cfg.d != 1) throw ConfigError("config: double_well requires d = 1");
            return make_double_well(cfg.a, cfg.b);
        case PotentialKind::morse_chain:
            return make_morse_chain(cfg.D, cfg.beta, cfg.lambda, cfg.d, cfg.periodic);
    }
    throw ConfigError("config: bad potential kind");
}

GaussianDensity build_rho0(const ExperimentConfig& cfg, const PotentialSpec& pot) {
    if (cfg.init_source == "harmonic_ground_state") {
        const auto ha = harmonic_approximation(pot, cfg.hbar, cfg.m);
        Vec mu = ha.xstar;
        if (cfg.displace.size() != pot.d) throw ConfigError("config: displace dimension mismatch");
        mu += cfg.displace;
        return GaussianDensity(mu, ha.Sigma);
    }
    if (cfg.init_source == "gaussian") {
        if (cfg.init_mu.size() != pot.d || cfg.init_var.size() != pot.d)
            throw ConfigError("config: gaussian initial state needs mu and var of dimension d");
        Mat Sigma = Mat::Zero(pot.d, pot.d);
        for (int i = 0; i < pot.d; ++i) Sigma(i, i) = cfg.init_var[i];
        return GaussianDensity(cfg.init_mu, Sigma);
    }
    throw ConfigError("config: unknown initial_state source '" + cfg.init_source + "'");
}

ScoreModel build_model(const ExperimentConfig& cfg, const GaussianDensity& rho0) {
    MlpArchitecture arch;
    arch.input_dim = static_cast<int>(rho0.mu.size());
    arch.hidden_layers = cfg.hidden_layers;
    arch.hidden_width = cfg.hidden_width;
    arch.time_features = cfg.time_features;
    arch.omega = cfg.omega > 0.0 ? cfg.omega : M_PI / cfg.T;
    FilmMlp net(arch);
    net.init_params(derive_seed(cfg.seed, "net_init"));
    GaussianScore base;
    base.mu = rho0.mu;
    base.precision = rho0.precision;
    return ScoreModel(std::move(base), std::move(net), cfg.hbar, cfg.m);
}

}  // namespace bohmflow
