#include "bohmflow/reference.hpp"

#include <fftw3.h>

#include <cmath>
#include <cstring>
#include <fstream>

namespace bohmflow {

namespace {

bool power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

// iterate the grid in C order, calling f(flat_index, x)
template <typename F>
void for_each_node(const GridSpec& box, F&& f) {
    const int d = box.d();
    std::vector<int> idx(static_cast<size_t>(d), 0);
    Vec x(d);
    const long total = box.total();
    for (long flat = 0; flat < total; ++flat) {
        long rem = flat;
        for (int ax = d - 1; ax >= 0; --ax) {
            idx[static_cast<size_t>(ax)] = static_cast<int>(rem % box.axes[static_cast<size_t>(ax)].n);
            rem /= box.axes[static_cast<size_t>(ax)].n;
        }
        for (int ax = 0; ax < d; ++ax)
            x[ax] = box.axes[static_cast<size_t>(ax)].xmin +
                    idx[static_cast<size_t>(ax)] * box.axes[static_cast<size_t>(ax)].dx();
        f(flat, x);
    }
}

double axis_k(const GridAxis& a, int j) {
    const double L = a.xmax - a.xmin;
    const int f = (j < a.n / 2) ? j : j - a.n;
    return 2.0 * M_PI * f / L;
}

}  // namespace

void validate(const GridSpec& box) {
    if (box.d() < 1 || box.d() > 4) throw ConfigError("grid dimension must be in [1,4]");
    for (const auto& a : box.axes) {
        if (!power_of_two(a.n)) throw ConfigError("grid points per axis must be a power of two");
        if (!(a.xmax > a.xmin)) throw ConfigError("grid axis must have xmax > xmin");
    }
}

double GridWavefunction::norm() const {
    double s = 0.0;
    for (const auto& c : psi) s += std::norm(c);
    return s * box.cell_volume();
}

GridWavefunction init_gaussian(const GridSpec& box, const Vec& mu, const Mat& Sigma) {
    validate(box);
    const int d = box.d();
    if (mu.size() != d || Sigma.rows() != d || Sigma.cols() != d)
        throw ConfigError("init_gaussian: dimension mismatch");
    for (int ax = 0; ax < d; ++ax) {
        const double margin = 6.0 * std::sqrt(Sigma(ax, ax));
        if (mu[ax] - margin < box.axes[static_cast<size_t>(ax)].xmin ||
            mu[ax] + margin > box.axes[static_cast<size_t>(ax)].xmax)
            throw ConfigError("init_gaussian: box does not enclose mu +- 6 sigma on axis " +
                              std::to_string(ax));
    }
    Eigen::LLT<Mat> llt(Sigma);
    if (llt.info() != Eigen::Success) throw ConfigError("init_gaussian: Sigma not positive definite");
    const Mat prec = llt.solve(Mat::Identity(d, d));

    GridWavefunction wf;
    wf.box = box;
    wf.t = 0.0;
    wf.psi.assign(static_cast<size_t>(box.total()), {0.0, 0.0});
    for_each_node(box, [&](long flat, const Vec& x) {
        const Vec r = x - mu;
        wf.psi[static_cast<size_t>(flat)] = std::exp(-0.25 * r.dot(prec * r));
    });
    const double n = wf.norm();
    const double scale = 1.0 / std::sqrt(n);
    for (auto& c : wf.psi) c *= scale;
    return wf;
}

SplitOperator::SplitOperator(GridWavefunction& wf, const PotentialSpec& pot, double dt, double hbar,
                             double m)
    : wf_(wf), dt_(dt), hbar_(hbar), m_(m) {
    validate(wf.box);
    if (pot.d != wf.box.d()) throw ConfigError("SplitOperator: potential dimension mismatch");
    const long total = wf.box.total();
    exp_v_half_.resize(static_cast<size_t>(total));
    for_each_node(wf.box, [&](long flat, const Vec& x) {
        const double v = eval_V(pot, x);
        exp_v_half_[static_cast<size_t>(flat)] = std::polar(1.0, -0.5 * v * dt / hbar_);
    });

    exp_kinetic_.resize(static_cast<size_t>(total));
    const int d = wf.box.d();
    std::vector<int> idx(static_cast<size_t>(d), 0);
    const double inv_total = 1.0 / static_cast<double>(total);
    for (long flat = 0; flat < total; ++flat) {
        long rem = flat;
        double k2 = 0.0;
        for (int ax = d - 1; ax >= 0; --ax) {
            const auto& a = wf.box.axes[static_cast<size_t>(ax)];
            const int j = static_cast<int>(rem % a.n);
            rem /= a.n;
            const double k = axis_k(a, j);
            k2 += k * k;
        }
        // includes the inverse-FFT normalization
        exp_kinetic_[static_cast<size_t>(flat)] =
            std::polar(inv_total, -0.5 * hbar_ * k2 * dt / m_);
    }

    std::vector<int> dims(static_cast<size_t>(d));
    for (int ax = 0; ax < d; ++ax) dims[static_cast<size_t>(ax)] = wf.box.axes[static_cast<size_t>(ax)].n;
    auto* data = reinterpret_cast<fftw_complex*>(wf_.psi.data());
    plan_fwd_ = fftw_plan_dft(d, dims.data(), data, data, FFTW_FORWARD, FFTW_ESTIMATE);
    plan_bwd_ = fftw_plan_dft(d, dims.data(), data, data, FFTW_BACKWARD, FFTW_ESTIMATE);
    if (!plan_fwd_ || !plan_bwd_) throw NumericError("SplitOperator: FFTW planning failed");
}

SplitOperator::~SplitOperator() {
    if (plan_fwd_) fftw_destroy_plan(static_cast<fftw_plan>(plan_fwd_));
    if (plan_bwd_) fftw_destroy_plan(static_cast<fftw_plan>(plan_bwd_));
}

void SplitOperator::step() {
    const size_t n = wf_.psi.size();
    for (size_t i = 0; i < n; ++i) wf_.psi[i] *= exp_v_half_[i];
    fftw_execute(static_cast<fftw_plan>(plan_fwd_));
    for (size_t i = 0; i < n; ++i) wf_.psi[i] *= exp_kinetic_[i];
    fftw_execute(static_cast<fftw_plan>(plan_bwd_));
    for (size_t i = 0; i < n; ++i) wf_.psi[i] *= exp_v_half_[i];
    wf_.t += dt_;
}

void split_operator_step(GridWavefunction& wf, const PotentialSpec& pot, double dt, double hbar,
                         double m) {
    SplitOperator op(wf, pot, dt, hbar, m);
    op.step();
}

GridObservables observables(const GridWavefunction& wf, const PotentialSpec& pot, double hbar,
                            double m) {
    const int d = wf.box.d();
    GridObservables obs;
    obs.mean = Vec::Zero(d);
    obs.sigma = Vec::Zero(d);
    const double dV = wf.box.cell_volume();

    Vec x2(d);
    x2.setZero();
    double vpot = 0.0, nrm = 0.0;
    for_each_node(wf.box, [&](long flat, const Vec& x) {
        const double rho = std::norm(wf.psi[static_cast<size_t>(flat)]);
        nrm += rho;
        vpot += rho * eval_V(pot, x);
        for (int ax = 0; ax < d; ++ax) {
            obs.mean[ax] += rho * x[ax];
            x2[ax] += rho * x[ax] * x[ax];
        }
    });
    obs.norm = nrm * dV;
    obs.mean *= dV;
    x2 *= dV;
    vpot *= dV;
    for (int ax = 0; ax < d; ++ax) obs.sigma[ax] = std::sqrt(std::max(0.0, x2[ax] - obs.mean[ax] * obs.mean[ax]));

    // kinetic term in Fourier space on a scratch copy
    std::vector<std::complex<double>> scratch = wf.psi;
    std::vector<int> dims(static_cast<size_t>(d));
    for (int ax = 0; ax < d; ++ax) dims[static_cast<size_t>(ax)] = wf.box.axes[static_cast<size_t>(ax)].n;
    auto* data = reinterpret_cast<fftw_complex*>(scratch.data());
    fftw_plan plan = fftw_plan_dft(d, dims.data(), data, data, FFTW_FORWARD, FFTW_ESTIMATE);
    fftw_execute(plan);
    fftw_destroy_plan(plan);

    const long total = wf.box.total();
    double kin = 0.0, ksum = 0.0;
    for (long flat = 0; flat < total; ++flat) {
        long rem = flat;
        double k2 = 0.0;
        for (int ax = d - 1; ax >= 0; --ax) {
            const auto& a = wf.box.axes[static_cast<size_t>(ax)];
            const int j = static_cast<int>(rem % a.n);
            rem /= a.n;
            const double k = axis_k(a, j);
            k2 += k * k;
        }
        const double w = std::norm(scratch[static_cast<size_t>(flat)]);
        kin += w * 0.5 * hbar * hbar * k2 / m;
        ksum += w;
    }
    // Parseval: sum|psi_hat|^2 = total * sum|psi|^2
    obs.energy = kin / ksum * obs.norm + vpot;
    return obs;
}

double edge_margin_sigmas(const GridObservables& obs, const GridSpec& box) {
    double margin = std::numeric_limits<double>::infinity();
    for (int ax = 0; ax < box.d(); ++ax) {
        const auto& a = box.axes[static_cast<size_t>(ax)];
        const double s = std::max(obs.sigma[ax], 1e-300);
        margin = std::min(margin, (obs.mean[ax] - a.xmin) / s);
        margin = std::min(margin, (a.xmax - obs.mean[ax]) / s);
    }
    return margin;
}

double interp_logdensity(const GridWavefunction& wf, const Vec& x) {
    const int d = wf.box.d();
    if (x.size() != d) throw ConfigError("interp_logdensity: dimension mismatch");
    std::vector<int> j0(static_cast<size_t>(d));
    std::vector<double> frac(static_cast<size_t>(d));
    for (int ax = 0; ax < d; ++ax) {
        const auto& a = wf.box.axes[static_cast<size_t>(ax)];
        if (x[ax] < a.xmin || x[ax] > a.xmax)
            throw ConfigError("interp_logdensity: point outside the box on axis " + std::to_string(ax));
        double u = (x[ax] - a.xmin) / a.dx();
        int j = static_cast<int>(std::floor(u));
        if (j >= a.n) j = a.n - 1;  // x == xmax wraps into the last periodic cell
        j0[static_cast<size_t>(ax)] = j;
        frac[static_cast<size_t>(ax)] = u - j;
    }
    double result = 0.0;
    const int corners = 1 << d;
    for (int c = 0; c < corners; ++c) {
        double weight = 1.0;
        long flat = 0;
        for (int ax = 0; ax < d; ++ax) {
            const auto& a = wf.box.axes[static_cast<size_t>(ax)];
            const int hi = (c >> ax) & 1;
            const int j = (j0[static_cast<size_t>(ax)] + hi) % a.n;  // periodic wrap
            weight *= hi ? frac[static_cast<size_t>(ax)] : 1.0 - frac[static_cast<size_t>(ax)];
            flat = flat * a.n + j;
        }
        if (weight == 0.0) continue;
        result += weight * std::log(std::norm(wf.psi[static_cast<size_t>(flat)]));
    }
    return result;
}

void save_wavefunction(const GridWavefunction& wf, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot write " + path);
    const char magic[4] = {'B', 'F', 'W', 'F'};
    f.write(magic, 4);
    const std::uint32_t version = 1, d = static_cast<std::uint32_t>(wf.box.d()), dtype = 0;
    f.write(reinterpret_cast<const char*>(&version), 4);
    f.write(reinterpret_cast<const char*>(&d), 4);
    for (const auto& a : wf.box.axes) {
        const std::uint32_t n = static_cast<std::uint32_t>(a.n);
        f.write(reinterpret_cast<const char*>(&n), 4);
        f.write(reinterpret_cast<const char*>(&a.xmin), 8);
        f.write(reinterpret_cast<const char*>(&a.xmax), 8);
    }
    f.write(reinterpret_cast<const char*>(&wf.t), 8);
    f.write(reinterpret_cast<const char*>(&dtype), 4);
    f.write(reinterpret_cast<const char*>(wf.psi.data()),
            static_cast<std::streamsize>(wf.psi.size() * sizeof(std::complex<double>)));
}

GridWavefunction load_wavefunction(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("wavefunction snapshot not found: " + path);
    char magic[4];
    f.read(magic, 4);
    if (std::memcmp(magic, "BFWF", 4) != 0) throw ConfigError("bad wavefunction snapshot magic");
    std::uint32_t version = 0, d = 0, dtype = 0;
    f.read(reinterpret_cast<char*>(&version), 4);
    if (version != 1) throw ConfigError("unsupported wavefunction snapshot version");
    f.read(reinterpret_cast<char*>(&d), 4);
    GridWavefunction wf;
    wf.box.axes.resize(d);
    for (auto& a : wf.box.axes) {
        std::uint32_t n = 0;
        f.read(reinterpret_cast<char*>(&n), 4);
        a.n = static_cast<int>(n);
        f.read(reinterpret_cast<char*>(&a.xmin), 8);
        f.read(reinterpret_cast<char*>(&a.xmax), 8);
    }
    f.read(reinterpret_cast<char*>(&wf.t), 8);
    f.read(reinterpret_cast<char*>(&dtype), 4);
    if (dtype != 0) throw ConfigError("unsupported wavefunction dtype");
    wf.psi.resize(static_cast<size_t>(wf.box.total()));
    f.read(reinterpret_cast<char*>(wf.psi.data()),
           static_cast<std::streamsize>(wf.psi.size() * sizeof(std::complex<double>)));
    if (!f) throw ConfigError("truncated wavefunction snapshot: " + path);
    return wf;
}

}  // namespace bohmflow
