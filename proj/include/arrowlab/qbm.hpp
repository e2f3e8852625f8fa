#pragma once

// Tracer particle on a lattice in the kinetic regime: a momentum-space jump
// process with an internal two-level degree of freedom.

#include "arrowlab/error.hpp"
#include "arrowlab/numeric.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace arrowlab::qbm {

struct KineticModel {
    int d = 3;
    int n_p = 8;
    double nu = 0.2;
    double M0 = 1.0;
    double beta = 1.0;
    double splitting = 0.5;
    double kernel_width = 2.0;

    double mass() const { return M0 / (nu * nu); }

    void validate() const {
        if (d < 1 || d > 3) throw ValidationError("KineticModel: d in {1, 2, 3}");
        if (n_p % 2 != 0) throw ValidationError("KineticModel: n_p even (got " + std::to_string(n_p) + ")");
        if (n_p < 8) throw ValidationError("KineticModel: n_p >= 8 (got " + std::to_string(n_p) + ")");
        if (!(nu > 0)) throw ValidationError("KineticModel: nu > 0");
        if (!(beta > 0)) throw ValidationError("KineticModel: beta > 0");
        if (!(M0 > 0)) throw ValidationError("KineticModel: M0 > 0");
        if (!(kernel_width > 0)) throw ValidationError("KineticModel: kernel_width > 0");
        if (!std::isfinite(splitting)) throw ValidationError("KineticModel: splitting finite");
    }

    int n_momenta() const {
        int n = 1;
        for (int i = 0; i < d; ++i) n *= n_p;
        return n;
    }
    int n_states() const { return 2 * n_momenta(); }

    // State index s = 2 * momentum_index + (sigma == +1 ? 0 : 1).
    static int sigma_of(int s) { return (s % 2 == 0) ? 1 : -1; }

    // Lattice momentum components p_i = -pi + 2 pi j_i / n_p.
    std::vector<double> momentum(int s) const {
        std::vector<double> p(d);
        int m = s / 2;
        for (int i = d - 1; i >= 0; --i) {
            p[i] = -std::numbers::pi + 2.0 * std::numbers::pi * (m % n_p) / n_p;
            m /= n_p;
        }
        return p;
    }

    double energy(int s) const {
        double e = 0;
        for (double pi : momentum(s)) e += 1.0 - std::cos(pi);
        return e / mass() + sigma_of(s) * splitting;
    }

    // Group velocity of the band, d eps / dp.
    std::vector<double> velocity(int s) const {
        std::vector<double> v = momentum(s);
        for (auto& x : v) x = std::sin(x) / mass();
        return v;
    }
};

// Dense rate table rates(i, j) for i -> j (diagonal zero).
struct JumpKernel {
    Eigen::MatrixXd rates;
    Eigen::VectorXd exit;  // total exit rate per state
    Eigen::VectorXd gibbs; // stationary weights
    Eigen::MatrixXd vel;   // n_states x d
    double detailed_balance_residual = 0.0;
    double stationarity_residual = 0.0;

    int n_states() const { return static_cast<int>(rates.rows()); }

    // Jump-averaged mean waiting time 1 / sum_s pi_s r_s.
    double mean_waiting_time() const { return 1.0 / gibbs.dot(exit); }
};

inline Eigen::VectorXd gibbs_weights(const KineticModel& m) {
    const int n = m.n_states();
    Eigen::VectorXd e(n);
    for (int s = 0; s < n; ++s) e(s) = m.energy(s);
    const double e0 = e.minCoeff();
    Eigen::VectorXd w = (-m.beta * (e.array() - e0)).exp();
    return w / w.sum();
}

// Normalized Gaussian transfer weight on the momentum torus, indexed by the
// flattened displacement; entries below 1e-14 of the peak are truncated.
inline std::vector<double> transfer_weights(const KineticModel& m) {
    const int nm = m.n_momenta();
    std::vector<double> k(nm);
    const double dp = 2.0 * std::numbers::pi / m.n_p;
    double sum = 0;
    for (int idx = 0; idx < nm; ++idx) {
        int r = idx;
        double q2 = 0;
        for (int i = 0; i < m.d; ++i) {
            int j = r % m.n_p;
            r /= m.n_p;
            int mi = std::min(j, m.n_p - j);
            q2 += (mi * dp) * (mi * dp);
        }
        k[idx] = std::exp(-q2 / (2.0 * m.kernel_width * m.kernel_width));
        sum += k[idx];
    }
    for (auto& x : k) {
        x /= sum;
        if (x < 1e-14 * k[0]) x = 0.0;
    }
    return k;
}

inline JumpKernel build_kernel(const KineticModel& m) {
    m.validate();
    const int n = m.n_states();
    std::vector<double> kap = transfer_weights(m);
    Eigen::VectorXd e(n);
    for (int s = 0; s < n; ++s) e(s) = m.energy(s);

    // Flattened momentum displacement (a - b) per axis, mod n_p.
    auto disp = [&](int a, int b) {
        int idx = 0, stride = 1;
        for (int i = 0; i < m.d; ++i) {
            int ja = a % m.n_p, jb = b % m.n_p;
            a /= m.n_p;
            b /= m.n_p;
            idx += ((ja - jb + m.n_p) % m.n_p) * stride;
            stride *= m.n_p;
        }
        return idx;
    };

    JumpKernel k;
    k.rates = Eigen::MatrixXd::Zero(n, n);
    const double nu2 = m.nu * m.nu;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            double w = kap[disp(j / 2, i / 2)];
            if (w == 0.0) continue;
            k.rates(i, j) = nu2 * w * std::min(1.0, std::exp(-m.beta * (e(j) - e(i))));
        }
    k.exit = k.rates.rowwise().sum();
    for (int i = 0; i < n; ++i)
        if (!(k.exit(i) > 0) || !std::isfinite(k.exit(i)))
            throw ValidationError("build_kernel: state " + std::to_string(i) + " has no finite positive exit rate");

    // Connectivity by breadth-first search over nonzero rates.
    std::vector<char> seen(n, 0);
    std::deque<int> q{0};
    seen[0] = 1;
    int reached = 1;
    while (!q.empty()) {
        int i = q.front();
        q.pop_front();
        for (int j = 0; j < n; ++j)
            if (!seen[j] && k.rates(i, j) > 0) {
                seen[j] = 1;
                ++reached;
                q.push_back(j);
            }
    }
    if (reached != n)
        throw ValidationError("build_kernel: kernel_width too small, jump chain disconnected (" +
                              std::to_string(reached) + " of " + std::to_string(n) + " states reachable)");

    k.gibbs = gibbs_weights(m);
    double db = 0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            double a = k.rates(i, j) * k.gibbs(i), b = k.rates(j, i) * k.gibbs(j);
            double sc = std::max(a, b);
            if (sc > 0) db = std::max(db, std::abs(a - b) / sc);
        }
    k.detailed_balance_residual = db;
    if (db > 1e-10)
        throw NumericalError("build_kernel: detailed balance residual " + std::to_string(db));
    Eigen::VectorXd flow = k.rates.transpose() * k.gibbs - k.gibbs.cwiseProduct(k.exit);
    k.stationarity_residual = flow.cwiseAbs().maxCoeff() / k.gibbs.dot(k.exit);

    k.vel.resize(n, m.d);
    for (int s = 0; s < n; ++s) {
        auto v = m.velocity(s);
        for (int i = 0; i < m.d; ++i) k.vel(s, i) = v[i];
    }
    return k;
}

// Per-state cumulative jump tables for sampling.
class JumpSampler {
public:
    explicit JumpSampler(const JumpKernel& k) : k_(k), cdf_(k.n_states()) {
        for (int i = 0; i < k.n_states(); ++i) {
            cdf_[i].resize(k.n_states());
            double c = 0;
            for (int j = 0; j < k.n_states(); ++j) {
                c += k.rates(i, j);
                cdf_[i][j] = c;
            }
        }
        double c = 0;
        gcdf_.resize(k.n_states());
        for (int i = 0; i < k.n_states(); ++i) gcdf_[i] = (c += k.gibbs(i));
    }

    int draw_gibbs(std::mt19937_64& rng) const { return pick(gcdf_, rng); }
    int draw_next(int s, std::mt19937_64& rng) const { return pick(cdf_[s], rng); }
    const JumpKernel& kernel() const { return k_; }

private:
    static int pick(const std::vector<double>& cdf, std::mt19937_64& rng) {
        std::uniform_real_distribution<double> u(0.0, cdf.back());
        double x = u(rng);
        int j = static_cast<int>(std::upper_bound(cdf.begin(), cdf.end(), x) - cdf.begin());
        if (j < static_cast<int>(cdf.size())) return j;
        // x rounded up to the total: take the last entry with positive width.
        j = static_cast<int>(cdf.size()) - 1;
        while (j > 0 && cdf[j] == cdf[j - 1]) --j;
        return j;
    }

    const JumpKernel& k_;
    std::vector<std::vector<double>> cdf_;
    std::vector<double> gcdf_;
};

struct Path {
    std::vector<double> jump_times;  // times of jumps, ascending
    std::vector<int> states;         // states[0] initial, states[i+1] after jump i
    std::vector<std::vector<double>> x_obs; // X at the observation times, one vector per time
    int final_state = 0;
    double speed_integral = 0.0;     // int_0^t_max |v(p_s)| ds
};

// Continuous-time jump chain started from `start` (or from the Gibbs weights
// when start < 0). X accumulates v(p) exactly between jumps.
inline Path sample_trajectory(const JumpSampler& js, int d, double t_max, const std::vector<double>& obs_times,
                              std::uint64_t seed, int start = -1, bool keep_jumps = false) {
    if (!obs_times.empty() && obs_times.back() > t_max)
        throw ParameterError("sample_trajectory: observation times must not exceed t_max");
    std::mt19937_64 rng(seed);
    const JumpKernel& k = js.kernel();
    Path p;
    int s = start >= 0 ? start : js.draw_gibbs(rng);
    p.states.push_back(s);
    std::vector<double> x(d, 0.0);
    double t = 0.0;
    std::size_t next_obs = 0;
    std::exponential_distribution<double> expo(1.0);
    auto speed = [&](int st) {
        double v2 = 0;
        for (int i = 0; i < d; ++i) v2 += k.vel(st, i) * k.vel(st, i);
        return std::sqrt(v2);
    };
    while (true) {
        double hold = expo(rng) / k.exit(s);
        double t_end = std::min(t + hold, t_max);
        while (next_obs < obs_times.size() && obs_times[next_obs] <= t_end) {
            std::vector<double> xo(d);
            for (int i = 0; i < d; ++i) xo[i] = x[i] + k.vel(s, i) * (obs_times[next_obs] - t);
            p.x_obs.push_back(std::move(xo));
            ++next_obs;
        }
        for (int i = 0; i < d; ++i) x[i] += k.vel(s, i) * (t_end - t);
        p.speed_integral += speed(s) * (t_end - t);
        t = t_end;
        if (t >= t_max) break;
        s = js.draw_next(s, rng);
        if (keep_jumps) {
            p.jump_times.push_back(t);
            p.states.push_back(s);
        }
    }
    p.final_state = s;
    return p;
}

struct PathEnsemble {
    std::vector<std::uint64_t> seeds;
    std::vector<double> obs_times;
    std::vector<std::vector<double>> sq_disp; // [path][obs] |X(t) - X(0)|^2
    std::vector<int> final_states;
    std::vector<double> mean_speed;          // per path, time averaged
    double t_max = 0.0;
    double tau_c = 0.0;
    int d = 0;
};

inline PathEnsemble run_ensemble(const KineticModel& m, const JumpKernel& k, int n_paths, double t_max,
                                 const std::vector<double>& obs_times, std::uint64_t master_seed) {
    if (n_paths < 1) throw ParameterError("run_ensemble: n_paths >= 1");
    if (!(t_max > 0)) throw ParameterError("run_ensemble: t_max > 0");
    JumpSampler js(k);
    PathEnsemble e;
    e.obs_times = obs_times;
    e.t_max = t_max;
    e.tau_c = k.mean_waiting_time();
    e.d = m.d;
    e.seeds.resize(n_paths);
    e.sq_disp.resize(n_paths);
    e.final_states.resize(n_paths);
    e.mean_speed.resize(n_paths);
    parallel_for(n_paths, [&](std::size_t i) {
        e.seeds[i] = derive_seed(master_seed, i);
        Path p = sample_trajectory(js, m.d, t_max, obs_times, e.seeds[i]);
        std::vector<double> sd(p.x_obs.size());
        for (std::size_t j = 0; j < p.x_obs.size(); ++j) {
            double s = 0;
            for (double xi : p.x_obs[j]) s += xi * xi;
            sd[j] = s;
        }
        e.sq_disp[i] = std::move(sd);
        e.final_states[i] = p.final_state;
        e.mean_speed[i] = p.speed_integral / t_max;
    });
    return e;
}

struct MsdResult {
    double D_hat = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    double r2 = 0.0;
    double loglog_slope = 0.0;
    bool ballistic = false;      // MSD grows like t^2 in the window
    bool pre_asymptotic = false; // window starts before 10 tau_c
    std::vector<double> msd;     // per observation time
};

inline std::vector<double> mean_sq_disp(const PathEnsemble& e, const std::vector<std::size_t>& paths) {
    std::vector<double> out(e.obs_times.size(), 0.0);
    for (std::size_t j = 0; j < out.size(); ++j) {
        CompensatedSum s;
        for (std::size_t i : paths) s.add(e.sq_disp[i][j]);
        out[j] = s.value() / paths.size();
    }
    return out;
}

inline MsdResult msd_estimate(const PathEnsemble& e, double w0, double w1, int n_bootstrap = 200,
                              std::uint64_t bootstrap_seed = 0) {
    const std::size_t np = e.sq_disp.size();
    if (np < 100) throw ParameterError("msd_estimate: need >= 100 paths (got " + std::to_string(np) + ")");
    if (!(w0 >= 0 && w0 < w1 && w1 <= e.t_max + 1e-12))
        throw ParameterError("msd_estimate: fit window must lie within [0, t_max]");
    std::vector<std::size_t> all(np);
    for (std::size_t i = 0; i < np; ++i) all[i] = i;

    std::vector<std::size_t> sel;
    for (std::size_t j = 0; j < e.obs_times.size(); ++j)
        if (e.obs_times[j] >= w0 - 1e-12 && e.obs_times[j] <= w1 + 1e-12) sel.push_back(j);
    if (sel.size() < 3) throw ParameterError("msd_estimate: fewer than 3 observation times in window");

    auto fit = [&](const std::vector<double>& msd) {
        std::vector<double> x, y;
        for (std::size_t j : sel) {
            x.push_back(e.obs_times[j]);
            y.push_back(msd[j]);
        }
        return fit_through_origin(x, y);
    };

    MsdResult r;
    r.msd = mean_sq_disp(e, all);
    LineFit f = fit(r.msd);
    r.D_hat = f.slope;
    r.r2 = f.r2;
    {
        std::vector<double> lx, ly;
        for (std::size_t j : sel)
            if (e.obs_times[j] > 0 && r.msd[j] > 0) {
                lx.push_back(std::log(e.obs_times[j]));
                ly.push_back(std::log(r.msd[j]));
            }
        if (lx.size() >= 3) r.loglog_slope = fit_line(lx, ly).slope;
    }
    r.ballistic = r.loglog_slope > 1.5;
    r.pre_asymptotic = w0 < 10.0 * e.tau_c;

    std::mt19937_64 rng(bootstrap_seed);
    std::uniform_int_distribution<std::size_t> pick(0, np - 1);
    std::vector<double> slopes;
    std::vector<std::size_t> idx(np);
    for (int b = 0; b < n_bootstrap; ++b) {
        for (auto& i : idx) i = pick(rng);
        slopes.push_back(fit(mean_sq_disp(e, idx)).slope);
    }
    if (!slopes.empty()) {
        std::sort(slopes.begin(), slopes.end());
        auto q = [&](double p) { return slopes[static_cast<std::size_t>(p * (slopes.size() - 1) + 0.5)]; };
        r.ci_low = q(0.025);
        r.ci_high = q(0.975);
    }
    return r;
}

struct GreenKuboResult {
    std::vector<double> tau;
    std::vector<double> c;     // C(tau) = <v(tau) . v(0)>
    double integral = 0.0;     // trapezoid on [0, tau_max]
    double tail = 0.0;         // exponential tail beyond tau_max
    double D_gk = 0.0;         // 2 * (integral + tail), the MSD slope
    double c0 = 0.0;
};

// Spectral data of the symmetrized generator, shared by green_kubo and tests.
struct GeneratorSpectrum {
    Eigen::VectorXd lambda;  // eigenvalues (<= 0)
    Eigen::VectorXd weight;  // sum over components of (u_j . sqrt(pi) v)^2
};

inline GeneratorSpectrum generator_spectrum(const JumpKernel& k) {
    const int n = k.n_states();
    Eigen::VectorXd sq = k.gibbs.cwiseSqrt();
    Eigen::MatrixXd g = k.rates;
    g.diagonal() = -k.exit;
    Eigen::MatrixXd s = sq.asDiagonal() * g * sq.cwiseInverse().asDiagonal();
    s = 0.5 * (s + s.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
    if (es.info() != Eigen::Success) throw NumericalError("green_kubo: eigensolver did not converge");
    GeneratorSpectrum out;
    out.lambda = es.eigenvalues();
    out.weight = Eigen::VectorXd::Zero(n);
    for (int c = 0; c < k.vel.cols(); ++c) {
        Eigen::VectorXd proj = es.eigenvectors().transpose() * sq.cwiseProduct(k.vel.col(c));
        out.weight += proj.cwiseProduct(proj);
    }
    return out;
}

inline GreenKuboResult green_kubo(const GeneratorSpectrum& sp, double tau_max, int n_tau) {
    if (!(tau_max > 0) || n_tau < 2) throw ParameterError("green_kubo: tau_max > 0 and n_tau >= 2");
    GreenKuboResult r;
    r.tau.resize(n_tau + 1);
    r.c.resize(n_tau + 1);
    const double gap = 1e-12 * sp.lambda.cwiseAbs().maxCoeff();
    for (int i = 0; i <= n_tau; ++i) {
        double t = tau_max * i / n_tau;
        CompensatedSum s;
        for (Eigen::Index j = 0; j < sp.lambda.size(); ++j)
            if (sp.lambda(j) < -gap) s.add(sp.weight(j) * std::exp(sp.lambda(j) * t));
        r.tau[i] = t;
        r.c[i] = s.value();
    }
    r.c0 = r.c[0];
    r.integral = trapezoid(r.tau, r.c);
    // Exponential continuation from the last two table points.
    const double c1 = r.c[n_tau - 1], c2 = r.c[n_tau];
    const double h = tau_max / n_tau;
    if (c2 > 0 && c1 > c2) {
        double rate = std::log(c1 / c2) / h;
        r.tail = c2 / rate;
    } else if (std::abs(c2) > 1e-12 * std::abs(r.c0)) {
        throw NumericalError("green_kubo: correlation tail not decaying at tau_max");
    }
    if (std::abs(r.tail) > 0.05 * std::abs(r.integral))
        throw ParameterError("green_kubo: tau_max too small (tail estimate " + std::to_string(r.tail) +
                             " exceeds 5% of integral " + std::to_string(r.integral) + ")");
    r.D_gk = 2.0 * (r.integral + r.tail);
    return r;
}

inline GreenKuboResult green_kubo(const JumpKernel& k, double tau_max, int n_tau) {
    return green_kubo(generator_spectrum(k), tau_max, n_tau);
}

// Slowest relaxation rate visible in the velocity correlation; sets a natural tau_max.
inline double slowest_rate(const GeneratorSpectrum& sp) {
    const double gap = 1e-12 * sp.lambda.cwiseAbs().maxCoeff();
    double slow = sp.lambda.cwiseAbs().maxCoeff();
    for (Eigen::Index j = 0; j < sp.lambda.size(); ++j)
        if (sp.lambda(j) < -gap && sp.weight(j) > 1e-14 * sp.weight.sum()) slow = std::min(slow, -sp.lambda(j));
    return slow;
}

} // namespace arrowlab::qbm
