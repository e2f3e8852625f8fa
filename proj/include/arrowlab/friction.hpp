#pragma once

// Tracer particle coupled linearly to a complex sound-wave field on a periodic
// box. Fourier convention: beta(x) = L^-d sum_k beta_hat(k) e^{ik.x} and
// W_hat(k) = int W(x) e^{-ik.x} dx.

#include "arrowlab/error.hpp"
#include "arrowlab/numeric.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <fftw3.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <memory>
#include <mutex>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace arrowlab::friction {

using cplx = std::complex<double>;
using Vec = std::vector<double>;

enum class Dispersion { ideal, bogoliubov };

inline bool fft_friendly(int n) {
    if (n < 2) return false;
    for (int p : {2, 3, 5})
        while (n % p == 0) n /= p;
    return n == 1;
}

struct FrictionModel {
    int d = 3;
    double L = 256.0;
    int N = 256;
    double M0 = 1.0;
    Vec F_ext;  // empty means zero
    double w0 = 1.0;
    double a = 2.0;
    Dispersion dispersion = Dispersion::ideal;
    double vstar = 0.0;
    // omega(k) = |k| sqrt(k^2 + sound_factor * vstar^2)
    double sound_factor = 1.0;
    double dt = 0.0;  // 0 selects dt * max omega = 0.5
    double t_max = 200.0;
    double eps_reg = 0.04;
    double kcut = 0.0;  // 0 means no cutoff beyond the grid
    double small_data_eps = 0.05;

    double h() const { return L / N; }
    double volume() const { return std::pow(L, d); }
    double dk() const { return 2.0 * std::numbers::pi / L; }

    double force_ext(int c) const { return F_ext.empty() ? 0.0 : F_ext[c]; }
    bool has_force() const {
        return std::any_of(F_ext.begin(), F_ext.end(), [](double f) { return f != 0.0; });
    }

    double omega(double k2) const {
        if (dispersion == Dispersion::ideal) return k2;
        return std::sqrt(k2) * std::sqrt(k2 + sound_factor * vstar * vstar);
    }
    double group_speed(double k) const {
        if (dispersion == Dispersion::ideal) return 2.0 * k;
        double s = std::sqrt(k * k + sound_factor * vstar * vstar);
        return s > 0 ? s + k * k / s : 0.0;
    }
    // Smallest speed with a nonempty resonance shell.
    double threshold_speed() const {
        return dispersion == Dispersion::ideal ? 0.0 : std::sqrt(sound_factor) * vstar;
    }
    double w_hat(double k2) const {
        return w0 * std::pow(2.0 * std::numbers::pi * a * a, 0.5 * d) * std::exp(-0.5 * a * a * k2);
    }
    double max_k2() const {
        double kn = std::numbers::pi / h();
        return d * kn * kn;
    }
    double max_omega() const { return omega(max_k2()); }
    int n_steps() const {
        double base = dt > 0 ? dt : 0.5 / max_omega();
        return std::max(1, static_cast<int>(std::ceil(t_max / base - 1e-9)));
    }
    double step() const { return t_max / n_steps(); }

    void validate() const {
        if (d < 1 || d > 3) throw ValidationError("FrictionModel: d in {1, 2, 3}");
        if (!(L > 0)) throw ValidationError("FrictionModel: L > 0");
        if (!fft_friendly(N))
            throw ValidationError("FrictionModel: N has only factors 2, 3, 5 (got " + std::to_string(N) + ")");
        if (!(M0 > 0)) throw ValidationError("FrictionModel: M0 > 0");
        if (!F_ext.empty() && static_cast<int>(F_ext.size()) != d)
            throw ValidationError("FrictionModel: F_ext has d components");
        if (w0 == 0 || !std::isfinite(w0)) throw ValidationError("FrictionModel: w0 != 0");
        if (!(a >= 2.0 * h()))
            throw ValidationError("FrictionModel: a >= 2 * grid spacing (a = " + std::to_string(a) +
                                  ", spacing = " + std::to_string(h()) + ")");
        if (!(vstar >= 0)) throw ValidationError("FrictionModel: vstar >= 0");
        if (!(sound_factor > 0)) throw ValidationError("FrictionModel: sound_factor > 0");
        if (dispersion == Dispersion::bogoliubov && !(vstar > 0))
            throw ValidationError("FrictionModel: vstar > 0 for bogoliubov dispersion");
        if (!(t_max > 0)) throw ValidationError("FrictionModel: t_max > 0");
        if (!(eps_reg > 0)) throw ValidationError("FrictionModel: eps_reg > 0");
        if (!(kcut >= 0)) throw ValidationError("FrictionModel: kcut >= 0");
        if (dt < 0) throw ValidationError("FrictionModel: dt >= 0");
    }
};

// ---------------------------------------------------------------- statics

// gamma_hat_v(k) = W_hat / (v.k - omega + i eps), the outgoing stationary
// profile for a particle at the origin.
inline cplx stationary_mode(const FrictionModel& m, const double* v, const double* k, double eps) {
    double k2 = 0, vk = 0;
    for (int c = 0; c < m.d; ++c) {
        k2 += k[c] * k[c];
        vk += v[c] * k[c];
    }
    return m.w_hat(k2) / cplx(vk - m.omega(k2), eps);
}

// Calls body(k, k2) for every lattice momentum with |m_i| <= N/2 - 1 (and
// -N/2) and |k| < kcut when a cutoff is set.
template <class Body>
void for_each_lattice_k(const FrictionModel& m, Body&& body) {
    const double dk = m.dk();
    int lo = -m.N / 2, hi = m.N / 2 - 1;
    double kc2 = m.kcut > 0 ? m.kcut * m.kcut : std::numeric_limits<double>::infinity();
    if (m.kcut > 0) {
        int mc = static_cast<int>(std::floor(m.kcut / dk));
        lo = std::max(lo, -mc);
        hi = std::min(hi, mc);
    }
    const int lo1 = m.d >= 2 ? lo : 0, hi1 = m.d >= 2 ? hi : 0;
    const int lo2 = m.d >= 3 ? lo : 0, hi2 = m.d >= 3 ? hi : 0;
    double k[3] = {0, 0, 0};
    for (int i = lo; i <= hi; ++i) {
        k[0] = i * dk;
        double s0 = k[0] * k[0];
        if (s0 >= kc2) continue;
        for (int j = lo1; j <= hi1; ++j) {
            k[1] = j * dk;
            double s1 = s0 + k[1] * k[1];
            if (s1 >= kc2) continue;
            for (int l = lo2; l <= hi2; ++l) {
                k[2] = l * dk;
                double s2 = s1 + k[2] * k[2];
                if (s2 >= kc2) continue;
                body(static_cast<const double*>(k), s2);
            }
        }
    }
}

// Largest |gamma_hat_0 omega + W_hat| / (|W_hat| / omega) over nonzero modes,
// i.e. the deviation from -W_hat/omega(k) (-W_hat/|k|^2 for the ideal gas);
// the exact regularization error is bounded by eps_reg.
inline double rest_profile_deviation(const FrictionModel& m) {
    const double zero[3] = {0, 0, 0};
    double worst = 0;
    for_each_lattice_k(m, [&](const double* k, double k2) {
        if (k2 == 0) return;
        cplx g = stationary_mode(m, zero, k, m.eps_reg);
        double w = m.w_hat(k2), om = m.omega(k2);
        if (w == 0) return;
        worst = std::max(worst, std::abs(g * om + w) / std::abs(w / om));
    });
    return worst;
}

enum class ForceMethod { eps_limit, shell_quadrature };

// Lattice force at a fixed eps for two regularizations at once.
inline std::array<Vec, 2> lattice_force_pair(const FrictionModel& m, const Vec& v, double e1, double e2) {
    std::array<std::array<CompensatedSum, 3>, 2> acc;
    const double e1s = e1 * e1, e2s = e2 * e2;
    for_each_lattice_k(m, [&](const double* k, double k2) {
        if (k2 == 0) return;
        double vk = 0;
        for (int c = 0; c < m.d; ++c) vk += v[c] * k[c];
        double den = vk - m.omega(k2);
        double w = m.w_hat(k2);
        double w2 = w * w;
        if (w2 == 0) return;
        double d2 = den * den;
        double l1 = w2 * e1 / (d2 + e1s), l2 = w2 * e2 / (d2 + e2s);
        for (int c = 0; c < m.d; ++c) {
            acc[0][c].add(k[c] * l1);
            acc[1][c].add(k[c] * l2);
        }
    });
    std::array<Vec, 2> out{Vec(m.d), Vec(m.d)};
    const double s = -2.0 / m.volume();
    for (int c = 0; c < m.d; ++c) {
        out[0][c] = s * acc[0][c].value();
        out[1][c] = s * acc[1][c].value();
    }
    return out;
}

inline double norm(const Vec& v) {
    double s = 0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

// Magnitude of the force along -v in the continuum, integrating the delta
// function on the shell omega(k) = v.k.
inline double shell_force_magnitude(const FrictionModel& m, double speed) {
    using boost::math::quadrature::gauss_kronrod;
    const double v = speed;
    const double kmax2 = v * v - m.threshold_speed() * m.threshold_speed();
    if (!(kmax2 > 0) || v <= 0) return 0.0;
    const double kmax = std::sqrt(kmax2);
    auto w2 = [&](double k) {
        double w = m.w_hat(k * k);
        return w * w;
    };
    const double pi = std::numbers::pi;
    if (m.d == 1) return v * w2(kmax) / kmax;
    if (m.d == 2) {
        auto f = [&](double phi) {
            double k = kmax * std::sin(phi);
            return m.omega(k * k) * w2(k);
        };
        return gauss_kronrod<double, 61>::integrate(f, 0.0, pi / 2, 15, 1e-13) / (pi * v);
    }
    auto f = [&](double k) { return k * m.omega(k * k) * w2(k); };
    return gauss_kronrod<double, 61>::integrate(f, 0.0, kmax, 15, 1e-13) / (2.0 * pi * v * v);
}

// Friction force f(v) in the eps -> 0 limit.
inline Vec friction_force(const Vec& v, const FrictionModel& m, ForceMethod method) {
    if (static_cast<int>(v.size()) != m.d) throw StructuralError("friction_force: v has d components");
    const double speed = norm(v);
    Vec f(m.d, 0.0);
    if (speed == 0) return f;
    if (method == ForceMethod::shell_quadrature) {
        double mag = shell_force_magnitude(m, speed);
        for (int c = 0; c < m.d; ++c) f[c] = -mag * v[c] / speed;
        return f;
    }
    auto p = lattice_force_pair(m, v, m.eps_reg, 0.5 * m.eps_reg);
    for (int c = 0; c < m.d; ++c) f[c] = 2.0 * p[1][c] - p[0][c];
    return f;
}

struct ForceComparison {
    Vec eps_limit, shell;
    double rel_diff;
};

// Both methods; throws when they disagree by more than rel_tol (plus abs_floor).
inline ForceComparison friction_force_checked(const Vec& v, const FrictionModel& m, double rel_tol = 0.05,
                                              double abs_floor = 0.0) {
    ForceComparison r{friction_force(v, m, ForceMethod::eps_limit), friction_force(v, m, ForceMethod::shell_quadrature),
                      0.0};
    Vec diff(m.d);
    for (int c = 0; c < m.d; ++c) diff[c] = r.eps_limit[c] - r.shell[c];
    double scale = std::max(norm(r.eps_limit), norm(r.shell));
    r.rel_diff = scale > 0 ? norm(diff) / scale : 0.0;
    if (norm(diff) > rel_tol * scale + abs_floor)
        throw NumericalError("friction_force: resolution insufficient, eps_limit |f| = " +
                             std::to_string(norm(r.eps_limit)) + ", shell_quadrature |f| = " +
                             std::to_string(norm(r.shell)));
    return r;
}

struct Branch {
    double F = 0;
    bool has_solution = false;  // false: F >= F_max, the particle accelerates for ever
    double v_minus = std::numeric_limits<double>::quiet_NaN();
    double v_plus = std::numeric_limits<double>::quiet_NaN();
    bool v_plus_in_grid = false;
};

struct ForceSpeedCurve {
    Vec v, F, F_shell;
    bool unimodal = true;
    bool interior_max = true;
    std::vector<std::pair<double, double>> local_maxima;
    double F_max = 0, v_peak = 0;
    std::vector<Branch> branches;
};

// Drag -f.v/|v| for v along the first axis; negative values would mean a
// force pushing the particle forward.
inline double speed_force(const FrictionModel& m, double speed, ForceMethod method) {
    Vec v(m.d, 0.0);
    v[0] = speed;
    return -friction_force(v, m, method)[0];
}

// Stationary speeds v_minus < v_peak < v_plus for each external force F.
inline std::vector<Branch> branch_table(const FrictionModel& m, const ForceSpeedCurve& c, const Vec& F_targets,
                                        ForceMethod method = ForceMethod::eps_limit) {
    if (F_targets.empty()) return {};
    if (!c.unimodal || !c.interior_max)
        throw ParameterError("branch_table: curve has no single interior maximum");
    auto F = [&](double s) { return s <= 0 ? 0.0 : speed_force(m, s, method); };
    const double xtol = 1e-7 * c.v_peak;
    std::vector<Branch> out;
    for (double target : F_targets) {
        Branch b;
        b.F = target;
        if (target >= c.F_max) {
            out.push_back(b);
            continue;
        }
        b.has_solution = true;
        if (target <= 0) {
            b.v_minus = 0.0;
            b.v_plus = std::numeric_limits<double>::infinity();
            out.push_back(b);
            continue;
        }
        auto g = [&](double s) { return F(s) - target; };
        b.v_minus = bisect(g, 0.0, c.v_peak, xtol);
        if (c.F.back() < target) {
            b.v_plus = bisect(g, c.v_peak, c.v.back(), xtol);
            b.v_plus_in_grid = true;
        } else {
            b.v_plus = std::numeric_limits<double>::infinity();
        }
        out.push_back(b);
    }
    return out;
}

// Force-speed curve along the first axis plus branch tables for the targets.
inline ForceSpeedCurve force_speed_curve(const FrictionModel& m, const Vec& v_grid, const Vec& F_targets,
                                         ForceMethod method = ForceMethod::eps_limit) {
    m.validate();
    if (v_grid.size() < 3) throw ParameterError("force_speed_curve: at least 3 speeds");
    if (!(v_grid[0] > 0)) throw ParameterError("force_speed_curve: v_grid starts > 0");
    for (std::size_t i = 1; i < v_grid.size(); ++i)
        if (!(v_grid[i] > v_grid[i - 1])) throw ParameterError("force_speed_curve: v_grid strictly increasing");
    ForceSpeedCurve c;
    c.v = v_grid;
    const std::size_t n = v_grid.size();
    c.F.assign(n, 0.0);
    c.F_shell.assign(n, 0.0);
    parallel_for(n, [&](std::size_t i) {
        c.F[i] = speed_force(m, v_grid[i], method);
        c.F_shell[i] = shell_force_magnitude(m, v_grid[i]);
    });
    auto F = [&](double s) { return s <= 0 ? 0.0 : speed_force(m, s, method); };

    std::size_t imax = std::max_element(c.F.begin(), c.F.end()) - c.F.begin();
    const double noise = 1e-9 * c.F[imax];
    // Local maxima of the sampled curve, F(0) = 0 on the left.
    for (std::size_t i = 0; i < n; ++i) {
        double left = i == 0 ? 0.0 : c.F[i - 1];
        double right = i + 1 < n ? c.F[i + 1] : -std::numeric_limits<double>::infinity();
        if (c.F[i] > left + noise && c.F[i] >= right - noise && c.F[i] > noise)
            c.local_maxima.emplace_back(v_grid[i], c.F[i]);
    }
    c.unimodal = c.local_maxima.size() == 1;
    c.interior_max = imax > 0 && imax + 1 < n && c.F[imax] > 0;
    c.F_max = c.F[imax];
    c.v_peak = v_grid[imax];
    if (!c.unimodal || !c.interior_max) return c;

    auto [vp, fp] = golden_section_max(F, v_grid[imax - 1], v_grid[imax + 1], 1e-6 * v_grid[imax]);
    if (fp > c.F_max) {
        c.F_max = fp;
        c.v_peak = vp;
    }
    c.branches = branch_table(m, c, F_targets, method);
    return c;
}

// ---------------------------------------------------------------- dynamics

// FFTW plan creation is not thread safe.
inline std::mutex& fftw_plan_mutex() {
    static std::mutex mu;
    return mu;
}

// Unnormalized backward transform sum_k a(k) e^{ik.x} on an N^d grid.
class BackwardFft {
public:
    BackwardFft(int d, int n) : size_(1) {
        for (int i = 0; i < d; ++i) size_ *= n;
        buf_ = fftw_alloc_complex(size_);
        int dims[3] = {n, n, n};
        std::lock_guard<std::mutex> lock(fftw_plan_mutex());
        plan_ = fftw_plan_dft(d, dims, buf_, buf_, FFTW_BACKWARD, FFTW_ESTIMATE);
    }
    ~BackwardFft() {
        std::lock_guard<std::mutex> lock(fftw_plan_mutex());
        fftw_destroy_plan(plan_);
        fftw_free(buf_);
    }
    BackwardFft(const BackwardFft&) = delete;
    BackwardFft& operator=(const BackwardFft&) = delete;

    std::vector<cplx> operator()(const std::vector<cplx>& in) {
        for (std::size_t i = 0; i < size_; ++i) {
            buf_[i][0] = in[i].real();
            buf_[i][1] = in[i].imag();
        }
        fftw_execute(plan_);
        std::vector<cplx> out(size_);
        for (std::size_t i = 0; i < size_; ++i) out[i] = cplx(buf_[i][0], buf_[i][1]);
        return out;
    }

private:
    std::size_t size_;
    fftw_complex* buf_;
    fftw_plan plan_;
};

// Momentum grid in FFT (row-major) order.
struct SpectralGrid {
    int d, N;
    std::size_t size;
    Vec k1;                // axis wavenumbers in FFT order
    std::vector<Vec> kc;   // per-component wavenumber per mode
    Vec k2, omega, what;

    explicit SpectralGrid(const FrictionModel& m) : d(m.d), N(m.N) {
        size = 1;
        for (int i = 0; i < d; ++i) size *= N;
        k1.resize(N);
        for (int j = 0; j < N; ++j) k1[j] = m.dk() * (j < N / 2 ? j : j - N);
        kc.assign(d, Vec(size));
        k2.resize(size);
        omega.resize(size);
        what.resize(size);
        for (std::size_t i = 0; i < size; ++i) {
            std::size_t r = i;
            double s = 0;
            for (int c = d - 1; c >= 0; --c) {
                double k = k1[r % N];
                r /= N;
                kc[c][i] = k;
                s += k * k;
            }
            k2[i] = s;
            omega[i] = m.omega(s);
            what[i] = m.w_hat(s);
        }
    }

    // e^{ik.X} for every mode.
    void phases(const Vec& X, std::vector<cplx>& out) const {
        out.resize(size);
        std::vector<std::vector<cplx>> ax(d, std::vector<cplx>(N));
        for (int c = 0; c < d; ++c)
            for (int j = 0; j < N; ++j) ax[c][j] = std::polar(1.0, k1[j] * X[c]);
        for (std::size_t i = 0; i < size; ++i) {
            std::size_t r = i;
            cplx p = 1.0;
            for (int c = d - 1; c >= 0; --c) {
                p *= ax[c][r % N];
                r /= N;
            }
            out[i] = p;
        }
    }
};

struct ParticleState {
    Vec X, P;
};

using FieldState = std::vector<cplx>;

// Profile gamma_hat_v on the dynamics grid for a particle at X.
inline FieldState stationary_profile(const Vec& v, const FrictionModel& m, const Vec& X = {}) {
    m.validate();
    SpectralGrid g(m);
    Vec x = X.empty() ? Vec(m.d, 0.0) : X;
    std::vector<cplx> ph;
    g.phases(x, ph);
    FieldState out(g.size);
    double k[3];
    for (std::size_t i = 0; i < g.size; ++i) {
        for (int c = 0; c < m.d; ++c) k[c] = g.kc[c][i];
        out[i] = stationary_mode(m, v.data(), k, m.eps_reg) * std::conj(ph[i]);
    }
    return out;
}

// Rest profile -W_hat e^{-ik.X} / omega on nonzero modes; zero at k = 0.
inline FieldState rest_profile(const SpectralGrid& g, const std::vector<cplx>& ph) {
    FieldState r(g.size, 0.0);
    for (std::size_t i = 0; i < g.size; ++i)
        if (g.omega[i] > 0) r[i] = -g.what[i] * std::conj(ph[i]) / g.omega[i];
    return r;
}

inline FieldState rest_profile(const FrictionModel& m, const Vec& X) {
    SpectralGrid g(m);
    std::vector<cplx> ph;
    g.phases(X, ph);
    return rest_profile(g, ph);
}

// Smooth random field with spectrum shaped by W_hat and L2 norm about amplitude.
inline FieldState random_field(const FrictionModel& m, double amplitude, std::uint64_t seed) {
    SpectralGrid g(m);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    FieldState f(g.size);
    double s = 0;
    for (std::size_t i = 0; i < g.size; ++i) {
        double re = nd(rng), im = nd(rng);
        f[i] = cplx(re, im) * (g.what[i] / g.what[0]);
        s += std::norm(f[i]);
    }
    double l2 = std::sqrt(s / m.volume());
    if (l2 > 0)
        for (auto& z : f) z *= amplitude / l2;
    return f;
}

// sqrt(int |beta|^2 dx).
inline double field_norm(const FrictionModel& m, const FieldState& b) {
    double s = 0;
    for (const auto& z : b) s += std::norm(z);
    return std::sqrt(s / m.volume());
}

// f_c = -2 Re[L^-d sum i k_c W_hat beta_hat e^{ik.X}].
inline Vec field_force(const SpectralGrid& g, double volume, const FieldState& b, const std::vector<cplx>& ph) {
    std::array<double, 3> acc{0, 0, 0};
    for (std::size_t i = 0; i < g.size; ++i) {
        double im = g.what[i] * (b[i] * ph[i]).imag();
        for (int c = 0; c < g.d; ++c) acc[c] += g.kc[c][i] * im;
    }
    Vec f(g.d);
    for (int c = 0; c < g.d; ++c) f[c] = 2.0 * acc[c] / volume;
    return f;
}

// Interaction energy 2 Re[L^-d sum W_hat beta_hat e^{ik.X}].
inline double interaction_energy(const SpectralGrid& g, double volume, const FieldState& b,
                                 const std::vector<cplx>& ph) {
    double s = 0;
    for (std::size_t i = 0; i < g.size; ++i) s += g.what[i] * (b[i] * ph[i]).real();
    return 2.0 * s / volume;
}

inline double field_energy(const SpectralGrid& g, double volume, const FieldState& b) {
    double s = 0;
    for (std::size_t i = 0; i < g.size; ++i) s += g.omega[i] * std::norm(b[i]);
    return s / volume;
}

inline double hamiltonian(const FrictionModel& m, const SpectralGrid& g, const ParticleState& p,
                          const FieldState& b, const std::vector<cplx>& ph) {
    double kin = 0, pot = 0;
    for (int c = 0; c < m.d; ++c) {
        kin += p.P[c] * p.P[c];
        pot -= m.force_ext(c) * p.X[c];
    }
    return kin / (2.0 * m.M0) + pot + interaction_energy(g, m.volume(), b, ph) + field_energy(g, m.volume(), b);
}

// Largest group speed over modes carrying a non-negligible share of W_hat^2.
inline double front_speed(const FrictionModel& m) {
    double k = std::sqrt(std::log(1e4)) / m.a;  // W_hat^2 >= 1e-4 W_hat(0)^2
    k = std::min(k, std::sqrt(m.max_k2()));
    double best = 0;
    for (int i = 0; i <= 200; ++i) best = std::max(best, m.group_speed(k * i / 200.0));
    return best;
}

struct MomentumTrajectory {
    Vec times;
    std::vector<Vec> P, X;
    Vec H;
    Vec residual_times, residual;
    double dt = 0;
    double wrap_time = std::numeric_limits<double>::infinity();
    bool wrap_warning = false;
    // Data for the small-data precondition of the decay fit.
    double initial_speed = 0, initial_field_norm = 0;
    bool ideal = true, forced = false;

    Vec speed() const {
        Vec s(P.size());
        for (std::size_t i = 0; i < P.size(); ++i) s[i] = norm(P[i]);
        return s;
    }
};

struct EvolveOptions {
    int record_every = 1;
    int residual_every = 10;  // 0 disables the field residual
};

inline double real_space_sup(BackwardFft& fft, const FieldState& diff, double volume) {
    auto r = fft(diff);
    double s = 0;
    for (const auto& z : r) s = std::max(s, std::abs(z));
    return s / volume;
}

// sup_x |beta_t(x) - (Delta^-1 W)(X_t - x)| without the k = 0 mode.
inline double rest_residual(BackwardFft& fft, const SpectralGrid& g, double volume, const FieldState& b,
                            const std::vector<cplx>& ph) {
    FieldState diff = b;
    FieldState r = rest_profile(g, ph);
    for (std::size_t i = 0; i < g.size; ++i) diff[i] = g.omega[i] > 0 ? b[i] - r[i] : 0.0;
    return real_space_sup(fft, diff, volume);
}

inline void check_step(const FrictionModel& m) {
    double c = m.step() * m.max_omega();
    if (c > 0.5 + 1e-12)
        throw ParameterError("friction: dt * max omega <= 0.5 (got " + std::to_string(c) + ")");
}

inline void check_state(const FrictionModel& m, const ParticleState& p, const FieldState& b, std::size_t size) {
    if (static_cast<int>(p.X.size()) != m.d || static_cast<int>(p.P.size()) != m.d)
        throw StructuralError("friction: particle state has d components");
    if (b.size() != size) throw StructuralError("friction: field size is N^d");
    for (double x : p.X)
        if (!std::isfinite(x)) throw ValidationError("friction: finite X");
    for (double x : p.P)
        if (!std::isfinite(x)) throw ValidationError("friction: finite P");
    for (const auto& z : b)
        if (!std::isfinite(z.real()) || !std::isfinite(z.imag())) throw ValidationError("friction: finite field");
}

// Strang splitting: particle half step, exact field step with X frozen,
// particle half step.
inline MomentumTrajectory evolve_coupled(const FrictionModel& m, ParticleState p, FieldState b,
                                         const EvolveOptions& opt = {}) {
    m.validate();
    check_step(m);
    SpectralGrid g(m);
    check_state(m, p, b, g.size);
    if (opt.record_every < 1) throw ParameterError("evolve_coupled: record_every >= 1");
    const double vol = m.volume();
    const double dt = m.step();
    const int nst = m.n_steps();

    std::vector<cplx> E(g.size), G(g.size);
    for (std::size_t i = 0; i < g.size; ++i) {
        E[i] = std::polar(1.0, -g.omega[i] * dt);
        G[i] = g.omega[i] > 0 ? (1.0 - E[i]) / g.omega[i] : cplx(0.0, dt);
    }
    std::unique_ptr<BackwardFft> fft;
    if (opt.residual_every > 0) fft = std::make_unique<BackwardFft>(m.d, m.N);

    MomentumTrajectory tr;
    tr.dt = dt;
    tr.initial_speed = norm(p.P) / m.M0;
    tr.initial_field_norm = field_norm(m, b);
    tr.ideal = m.dispersion == Dispersion::ideal;
    tr.forced = m.has_force();
    const double vfront = front_speed(m);
    const Vec X0 = p.X;

    std::vector<cplx> ph;
    g.phases(p.X, ph);
    Vec f = field_force(g, vol, b, ph);
    auto record = [&](int n) {
        double t = n * dt;
        tr.times.push_back(t);
        tr.P.push_back(p.P);
        tr.X.push_back(p.X);
        tr.H.push_back(hamiltonian(m, g, p, b, ph));
        if (opt.residual_every > 0 && n % opt.residual_every == 0) {
            tr.residual_times.push_back(t);
            tr.residual.push_back(rest_residual(*fft, g, vol, b, ph));
        }
    };
    auto half = [&]() {
        for (int c = 0; c < m.d; ++c) p.P[c] += 0.25 * dt * (f[c] + m.force_ext(c));
        for (int c = 0; c < m.d; ++c) p.X[c] += 0.5 * dt * p.P[c] / m.M0;
        g.phases(p.X, ph);
        f = field_force(g, vol, b, ph);
        for (int c = 0; c < m.d; ++c) p.P[c] += 0.25 * dt * (f[c] + m.force_ext(c));
    };
    record(0);
    for (int n = 1; n <= nst; ++n) {
        half();
        for (std::size_t i = 0; i < g.size; ++i) b[i] = E[i] * b[i] - g.what[i] * std::conj(ph[i]) * G[i];
        f = field_force(g, vol, b, ph);
        half();
        for (int c = 0; c < m.d; ++c)
            if (!std::isfinite(p.P[c])) throw NumericalError("evolve_coupled: non-finite momentum");
        double t = n * dt;
        if (!tr.wrap_warning) {
            Vec dx(m.d);
            for (int c = 0; c < m.d; ++c) dx[c] = p.X[c] - X0[c];
            if (vfront * t + norm(dx) >= m.L - 2.0 * m.a) {
                tr.wrap_warning = true;
                tr.wrap_time = t;
            }
        }
        if (n % opt.record_every == 0 || n == nst) record(n);
    }
    return tr;
}

// Field eliminated by Duhamel: beta_hat(t) = e^{-i omega t}(beta0 - i W_hat J(t)),
// J(t) = int_0^t e^{i omega s} e^{-ik.X(s)} ds by the trapezoid rule with step
// dt / substeps. Velocity-Verlet particle update.
inline MomentumTrajectory memory_evolve(const FrictionModel& m, ParticleState p, const FieldState& b0,
                                        double history_dt = 0.0, int record_every = 1) {
    m.validate();
    check_step(m);
    SpectralGrid g(m);
    check_state(m, p, b0, g.size);
    const double dt = m.step();
    const double hd = history_dt > 0 ? history_dt : dt;
    const double ratio = dt / hd;
    const int sub = static_cast<int>(std::llround(ratio));
    if (sub < 1 || std::abs(ratio - sub) > 1e-9 * ratio)
        throw ParameterError("memory_evolve: history step divides dt (dt / history_dt = " + std::to_string(ratio) +
                             ")");
    if (record_every < 1) throw ParameterError("memory_evolve: record_every >= 1");
    const double h = dt / sub;
    const int nst = m.n_steps() * sub;
    const double vol = m.volume();

    std::vector<cplx> J(g.size, 0.0), integrand(g.size), ph;
    const bool has_b0 = std::any_of(b0.begin(), b0.end(), [](const cplx& z) { return z != 0.0; });
    auto field_at = [&](double t) {
        FieldState b(g.size);
        for (std::size_t i = 0; i < g.size; ++i) {
            cplx rot = std::polar(1.0, -g.omega[i] * t);
            b[i] = rot * ((has_b0 ? b0[i] : 0.0) - cplx(0.0, g.what[i]) * J[i]);
        }
        return b;
    };
    auto fill_integrand = [&](double t) {
        for (std::size_t i = 0; i < g.size; ++i) integrand[i] = std::polar(1.0, g.omega[i] * t) * std::conj(ph[i]);
    };

    MomentumTrajectory tr;
    tr.dt = dt;
    tr.initial_speed = norm(p.P) / m.M0;
    tr.initial_field_norm = field_norm(m, b0);
    tr.ideal = m.dispersion == Dispersion::ideal;
    tr.forced = m.has_force();

    g.phases(p.X, ph);
    fill_integrand(0.0);
    Vec f = field_force(g, vol, field_at(0.0), ph);
    auto record = [&](double t) {
        tr.times.push_back(t);
        tr.P.push_back(p.P);
        tr.X.push_back(p.X);
    };
    record(0.0);
    for (int n = 1; n <= nst; ++n) {
        double t = n * h;
        for (int c = 0; c < m.d; ++c)
            p.X[c] += h * p.P[c] / m.M0 + 0.5 * h * h * (f[c] + m.force_ext(c)) / m.M0;
        std::vector<cplx> prev = integrand;
        g.phases(p.X, ph);
        fill_integrand(t);
        for (std::size_t i = 0; i < g.size; ++i) J[i] += 0.5 * h * (prev[i] + integrand[i]);
        Vec fn = field_force(g, vol, field_at(t), ph);
        for (int c = 0; c < m.d; ++c) p.P[c] += 0.5 * h * (f[c] + fn[c]) + h * m.force_ext(c);
        f = fn;
        for (int c = 0; c < m.d; ++c)
            if (!std::isfinite(p.P[c])) throw NumericalError("memory_evolve: non-finite momentum");
        if (n % (sub * record_every) == 0 || n == nst) record(t);
    }
    return tr;
}

// Largest |P_a - P_b| / |P_a(0)| over shared record times.
inline double trajectory_deviation(const MomentumTrajectory& a, const MomentumTrajectory& b) {
    if (a.times.size() != b.times.size()) throw StructuralError("trajectory_deviation: record grids differ");
    double p0 = norm(a.P.front());
    if (p0 == 0) throw ParameterError("trajectory_deviation: P0 != 0");
    double worst = 0;
    for (std::size_t i = 0; i < a.times.size(); ++i) {
        if (std::abs(a.times[i] - b.times[i]) > 1e-9 * std::max(1.0, a.times[i]))
            throw StructuralError("trajectory_deviation: record grids differ");
        Vec d(a.P[i].size());
        for (std::size_t c = 0; c < d.size(); ++c) d[c] = a.P[i][c] - b.P[i][c];
        worst = std::max(worst, norm(d) / p0);
    }
    return worst;
}

inline double energy_drift(const MomentumTrajectory& tr) {
    if (tr.H.empty()) throw ParameterError("energy_drift: no energy records");
    double h0 = tr.H.front(), worst = 0;
    for (double h : tr.H) worst = std::max(worst, std::abs(h - h0));
    return worst / std::abs(h0);
}

struct DecayFit {
    double alpha = 0, alpha_stderr = 0, ci_low = 0, ci_high = 0;
    std::vector<std::pair<double, double>> envelope;  // (t, |P|) per octave
    std::vector<std::pair<double, double>> bdelta;    // (delta, norm)
    double residual_slope = 0;
    double residual_start = 0, residual_end = 0;
    bool residual_decreasing = false;
};

// Power-law fit of the per-octave maxima of |P_t| on the last decade.
inline DecayFit decay_fit(const MomentumTrajectory& tr, const Vec& delta_probe, double small_data_eps,
                          double transient = -1.0) {
    if (tr.times.size() < 10) throw ParameterError("decay_fit: trajectory too short");
    if (tr.forced) throw ParameterError("decay_fit: F_ext = 0 required");
    if (!tr.ideal) throw ParameterError("decay_fit: ideal dispersion required");
    if (tr.initial_speed > small_data_eps || tr.initial_field_norm > small_data_eps)
        throw ParameterError("decay_fit: small data required (|P0|/M0 = " + std::to_string(tr.initial_speed) +
                             ", field norm = " + std::to_string(tr.initial_field_norm) + ", threshold " +
                             std::to_string(small_data_eps) + ")");
    const double t_end = tr.times.back();
    const double t_lo = 0.1 * t_end;
    if (tr.wrap_warning && tr.wrap_time <= t_end)
        throw DomainError("decay_fit: refused, field wrap-around from t = " + std::to_string(tr.wrap_time) +
                          " inside the fit window [" + std::to_string(t_lo) + ", " + std::to_string(t_end) +
                          "], box too small");
    Vec s = tr.speed();
    DecayFit r;
    double e0 = t_lo;
    while (e0 < t_end * (1 - 1e-12)) {
        double e1 = std::min(2.0 * e0, t_end);
        double best = -1, tb = 0;
        for (std::size_t i = 0; i < s.size(); ++i)
            if (tr.times[i] >= e0 && tr.times[i] <= e1 && s[i] > best) {
                best = s[i];
                tb = tr.times[i];
            }
        if (best > 0) r.envelope.emplace_back(tb, best);
        e0 = e1;
    }
    if (r.envelope.size() < 3) throw ParameterError("decay_fit: fewer than 3 envelope points");
    Vec lx, ly;
    for (auto [t, v] : r.envelope) {
        lx.push_back(std::log(t));
        ly.push_back(std::log(v));
    }
    LineFit lf = fit_line(lx, ly);
    r.alpha = lf.slope;
    r.alpha_stderr = lf.slope_stderr;
    r.ci_low = lf.slope - 1.96 * lf.slope_stderr;
    r.ci_high = lf.slope + 1.96 * lf.slope_stderr;
    for (double dl : delta_probe) {
        double sup = 0;
        for (std::size_t i = 0; i < s.size(); ++i)
            sup = std::max(sup, std::pow(1.0 + tr.times[i], 0.5 + dl) * s[i]);
        r.bdelta.emplace_back(dl, sup);
    }
    if (!tr.residual.empty()) {
        double t0 = transient >= 0 ? transient : t_lo;
        Vec rt, rv;
        for (std::size_t i = 0; i < tr.residual.size(); ++i)
            if (tr.residual_times[i] >= t0) {
                rt.push_back(tr.residual_times[i]);
                rv.push_back(tr.residual[i]);
            }
        if (rt.size() >= 3) {
            r.residual_slope = fit_line(rt, rv).slope;
            r.residual_start = rv.front();
            r.residual_end = rv.back();
            r.residual_decreasing = r.residual_slope < 0 && r.residual_end < r.residual_start;
        }
    }
    return r;
}

// ---------------------------------------------------------------- self test

// Spectral force and interaction energy against direct real-space quadrature
// with the periodized Gaussian W(x) = w0 exp(-|x|^2 / 2a^2). Returns the
// largest relative deviation.
inline double convention_self_test(int d, std::uint64_t seed = 20240611) {
    FrictionModel m;
    m.d = d;
    m.N = 16;
    m.L = 16.0;
    m.a = 2.0;
    m.w0 = 0.7;
    m.t_max = 1.0;
    SpectralGrid g(m);
    FieldState b = random_field(m, 1.0, seed);
    std::mt19937_64 rng(derive_seed(seed, 1));
    std::uniform_real_distribution<double> ud(0.0, m.L);
    Vec X(d);
    for (auto& x : X) x = ud(rng);
    std::vector<cplx> ph;
    g.phases(X, ph);
    Vec f_spec = field_force(g, m.volume(), b, ph);
    double e_spec = interaction_energy(g, m.volume(), b, ph);

    BackwardFft fft(d, m.N);
    auto beta = fft(b);
    for (auto& z : beta) z /= m.volume();
    const double hx = m.h(), dvol = std::pow(hx, d);
    const int n = m.N;
    std::vector<double> fr(d, 0.0);
    double er = 0;
    for (std::size_t i = 0; i < g.size; ++i) {
        int idx[3] = {0, 0, 0};
        std::size_t r = i;
        for (int c = d - 1; c >= 0; --c) {
            idx[c] = static_cast<int>(r % n);
            r /= n;
        }
        // Sum over periodic images.
        double w = 0;
        double gw[3] = {0, 0, 0};
        const int ni = 3;
        int lim[3] = {ni, d >= 2 ? ni : 0, d >= 3 ? ni : 0};
        for (int a0 = -lim[0]; a0 <= lim[0]; ++a0)
            for (int a1 = -lim[1]; a1 <= lim[1]; ++a1)
                for (int a2 = -lim[2]; a2 <= lim[2]; ++a2) {
                    int sh[3] = {a0, a1, a2};
                    double rv[3], r2 = 0;
                    for (int c = 0; c < d; ++c) {
                        rv[c] = X[c] - idx[c] * hx + sh[c] * m.L;
                        r2 += rv[c] * rv[c];
                    }
                    double wv = m.w0 * std::exp(-0.5 * r2 / (m.a * m.a));
                    w += wv;
                    for (int c = 0; c < d; ++c) gw[c] += -rv[c] / (m.a * m.a) * wv;
                }
        er += 2.0 * dvol * w * beta[i].real();
        for (int c = 0; c < d; ++c) fr[c] += -2.0 * dvol * gw[c] * beta[i].real();
    }
    double fs = norm(f_spec);
    Vec df(d);
    for (int c = 0; c < d; ++c) df[c] = f_spec[c] - fr[c];
    double dev_f = norm(df) / std::max(fs, 1e-300);
    double dev_e = std::abs(e_spec - er) / std::max(std::abs(e_spec), 1e-300);
    return std::max(dev_f, dev_e);
}

inline void require_conventions(int d) {
    double dev = convention_self_test(d);
    if (!(dev <= 1e-8))
        throw NumericalError("friction: Fourier convention self-test failed (deviation " + std::to_string(dev) + ")");
}

} // namespace arrowlab::friction
