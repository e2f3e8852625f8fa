#pragma once

// Two finite reservoirs coupled through a small system C. Unitary evolution,
// heat powers, entropy production, engine cycles and slow sweeps.

#include "arrowlab/numeric.hpp"
#include "arrowlab/qcore.hpp"

#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace arrowlab::thermo {

// Scalar time profile p(t) multiplying one coupling term.
struct Profile {
    enum class Kind { constant, cosine, ramp, smoothstep, table };
    Kind kind = Kind::constant;
    double value = 0.0;     // constant
    double offset = 0.0;    // cosine: offset + amplitude cos(2 pi t / tau + phase)
    double amplitude = 0.0;
    double phase = 0.0;
    double from = 0.0;      // ramp / smoothstep in s = t / tau, clamped to [0, 1]
    double to = 0.0;
    std::vector<double> s;  // table: piecewise linear in s (wrapped when periodic)
    std::vector<double> values;

    static Profile constant_at(double v) {
        Profile p;
        p.value = v;
        return p;
    }

    double eval(double t, double tau, bool periodic) const { return eval_pair(t, tau, periodic).first; }
    double deriv(double t, double tau, bool periodic) const { return eval_pair(t, tau, periodic).second; }

    // (p, dp/dt)
    std::pair<double, double> eval_pair(double t, double tau, bool periodic) const {
        switch (kind) {
        case Kind::constant:
            return {value, 0.0};
        case Kind::cosine: {
            const double w = 2.0 * std::numbers::pi / tau;
            return {offset + amplitude * std::cos(w * t + phase), -amplitude * w * std::sin(w * t + phase)};
        }
        case Kind::ramp: {
            double u = t / tau;
            if (u <= 0.0) return {from, 0.0};
            if (u >= 1.0) return {to, 0.0};
            return {from + (to - from) * u, (to - from) / tau};
        }
        case Kind::smoothstep: {
            double u = t / tau;
            if (u <= 0.0) return {from, 0.0};
            if (u >= 1.0) return {to, 0.0};
            return {from + (to - from) * u * u * (3.0 - 2.0 * u), (to - from) * 6.0 * u * (1.0 - u) / tau};
        }
        case Kind::table: {
            double u = t / tau;
            if (periodic) u -= std::floor(u);
            if (u <= s.front()) return {values.front(), 0.0};
            if (u >= s.back()) return {values.back(), 0.0};
            std::size_t i = 1;
            while (s[i] < u) ++i;
            double slope = (values[i] - values[i - 1]) / (s[i] - s[i - 1]);
            return {values[i - 1] + slope * (u - s[i - 1]), slope / tau};
        }
        }
        return {0.0, 0.0};
    }

    bool is_constant() const {
        switch (kind) {
        case Kind::constant:
            return true;
        case Kind::cosine:
            return amplitude == 0.0;
        case Kind::ramp:
        case Kind::smoothstep:
            return from == to;
        case Kind::table:
            for (double v : values)
                if (v != values.front()) return false;
            return true;
        }
        return true;
    }

    void validate() const {
        if (kind == Kind::table) {
            if (s.size() < 2 || s.size() != values.size())
                throw ValidationError("profile table: need >= 2 points with matching s and values");
            for (std::size_t i = 1; i < s.size(); ++i)
                if (!(s[i] > s[i - 1])) throw ValidationError("profile table: s strictly increasing");
        }
    }
};

// H_C(t) = sum_k p_k(t) V_k on the full space.
struct CouplingTerm {
    CMat op;
    Profile profile;
};

struct ContactModel {
    std::array<int, 3> dims{1, 1, 1}; // (n1, nC, n2)
    CMat h1;                          // on factor 1
    CMat h2;                          // on factor 2
    std::vector<CouplingTerm> hc;
    double tau = 1.0;                 // period or sweep duration
    bool periodic = false;
    double beta1 = 1.0;
    double beta2 = 1.0;
    double kB = 1.0;

    int dim() const { return dims[0] * dims[1] * dims[2]; }

    CMat h1_full() const {
        return kron(kron(h1, CMat::Identity(dims[1], dims[1])), CMat::Identity(dims[2], dims[2]));
    }
    CMat h2_full() const {
        return kron(CMat::Identity(dims[0] * dims[1], dims[0] * dims[1]), h2);
    }

    CMat hc_at(double t) const {
        CMat m = CMat::Zero(dim(), dim());
        for (const auto& c : hc) m += c.profile.eval(t, tau, periodic) * c.op;
        return m;
    }
    CMat hc_dot(double t) const {
        CMat m = CMat::Zero(dim(), dim());
        for (const auto& c : hc) m += c.profile.deriv(t, tau, periodic) * c.op;
        return m;
    }

    bool hc_constant() const {
        for (const auto& c : hc)
            if (!c.profile.is_constant()) return false;
        return true;
    }

    double temperature1() const { return 1.0 / (kB * beta1); }
    double temperature2() const { return 1.0 / (kB * beta2); }

    void validate() const {
        for (int d : dims)
            if (d <= 0) throw ValidationError("ContactModel: dims must be positive");
        if (h1.rows() != dims[0] || h1.cols() != dims[0])
            throw StructuralError("ContactModel: H1 must be n1 x n1");
        if (h2.rows() != dims[2] || h2.cols() != dims[2])
            throw StructuralError("ContactModel: H2 must be n2 x n2");
        if (hermitian_deviation(h1) > tol::hermitian * std::max(1.0, max_abs(h1)) ||
            hermitian_deviation(h2) > tol::hermitian * std::max(1.0, max_abs(h2)))
            throw ValidationError("ContactModel: H1 and H2 must be Hermitian");
        if (!(beta1 > 0.0) || !(beta2 > 0.0)) throw ValidationError("ContactModel: beta1 > 0 and beta2 > 0");
        if (!(kB > 0.0)) throw ValidationError("ContactModel: kB > 0");
        if (!(tau > 0.0)) throw ValidationError("ContactModel: tau > 0");
        for (const auto& c : hc) {
            if (c.op.rows() != dim() || c.op.cols() != dim())
                throw StructuralError("ContactModel: coupling term dimension differs from n1*nC*n2");
            if (hermitian_deviation(c.op) > tol::hermitian * std::max(1.0, max_abs(c.op)))
                throw ValidationError("ContactModel: coupling terms must be Hermitian");
            c.profile.validate();
        }
        std::vector<int> d3{dims[0], dims[1], dims[2]};
        if (!acts_on_factor(h1_full(), d3, 0) || !acts_on_factor(h2_full(), d3, 2))
            throw ValidationError("ContactModel: H1, H2 must act only on their own factors");
    }

    // True if m = embed(a) for some a on `factor`: m equals the re-embedded
    // normalized partial trace to 1e-12.
    static bool acts_on_factor(const CMat& m, const std::vector<int>& d3, int factor) {
        CMat a = partial_trace(m, d3, {factor});
        double other = static_cast<double>(m.rows()) / a.rows();
        a /= other;
        std::array<CMat, 3> f{CMat::Identity(d3[0], d3[0]), CMat::Identity(d3[1], d3[1]),
                              CMat::Identity(d3[2], d3[2])};
        f[factor] = a;
        return max_abs(kron(kron(f[0], f[1]), f[2]) - m) <= 1e-12 * std::max(1.0, max_abs(m));
    }
};

// exp(-beta h) / Z for Hermitian h.
inline CMat gibbs(const CMat& h, double beta) {
    EigenPair e = hermitian_eigen(h);
    const double e0 = e.values.minCoeff();
    RVec w = (-beta * (e.values.array() - e0)).exp();
    w /= w.sum();
    return e.vectors * w.asDiagonal() * e.vectors.adjoint();
}

inline double log_partition(const CMat& h, double beta) {
    RVec ev = hermitian_eigen(h).values;
    const double e0 = ev.minCoeff();
    return -beta * e0 + std::log((-beta * (ev.array() - e0)).exp().sum());
}

inline DensityMatrix reference_state(const CMat& h1, int nC, const CMat& h2, double beta1, double beta2) {
    CMat c = CMat::Identity(nC, nC) / static_cast<double>(nC);
    CMat r = kron(kron(gibbs(h1, beta1), c), gibbs(h2, beta2));
    r /= r.trace().real();
    return DensityMatrix(0.5 * (r + r.adjoint()));
}

inline DensityMatrix reference_state(const ContactModel& m) {
    return reference_state(m.h1, m.dims[1], m.h2, m.beta1, m.beta2);
}

struct Powers {
    double p1 = 0.0;
    double p2 = 0.0;
};

inline double trace_product(const CMat& a, const CMat& b) {
    // Re Tr(a b) for Hermitian arguments.
    return (a.transpose().cwiseProduct(b)).sum().real();
}

// Precomputed operators for O(n^2) observable evaluation along a trajectory.
class Observables {
public:
    explicit Observables(const ContactModel& m) : m_(m), h1_(m.h1_full()), h2_(m.h2_full()) {
        for (const auto& c : m.hc) {
            c1_.push_back(cplx(0, -1) * (h1_ * c.op - c.op * h1_));
            c2_.push_back(cplx(0, -1) * (h2_ * c.op - c.op * h2_));
        }
    }

    // P_i = -i Tr(Omega [H_i, H_C(t)])
    Powers powers(const CMat& omega, double t) const {
        cplx s1 = 0, s2 = 0;
        for (std::size_t k = 0; k < c1_.size(); ++k) {
            double p = m_.hc[k].profile.eval(t, m_.tau, m_.periodic);
            s1 += p * omega.transpose().cwiseProduct(c1_[k]).sum();
            s2 += p * omega.transpose().cwiseProduct(c2_[k]).sum();
        }
        const double scale = std::max(1.0, std::abs(s1) + std::abs(s2));
        if (std::abs(s1.imag()) > 1e-10 * scale || std::abs(s2.imag()) > 1e-10 * scale)
            throw NumericalError("heat_power: imaginary part exceeds 1e-10 (state not Hermitian?)");
        return {s1.real(), s2.real()};
    }

    // <H_C(t)>
    double hc_energy(const CMat& omega, double t) const {
        double u = 0;
        for (const auto& c : m_.hc) u += c.profile.eval(t, m_.tau, m_.periodic) * trace_product(omega, c.op);
        return u;
    }

    // Tr(Omega dH_C/dt)
    double work_rate(const CMat& omega, double t) const {
        double w = 0;
        for (const auto& c : m_.hc) {
            double d = c.profile.deriv(t, m_.tau, m_.periodic);
            if (d != 0.0) w += d * trace_product(omega, c.op);
        }
        return w;
    }

    double e1(const CMat& omega) const { return trace_product(omega, h1_); }
    double e2(const CMat& omega) const { return trace_product(omega, h2_); }

private:
    const ContactModel& m_;
    CMat h1_, h2_;
    std::vector<CMat> c1_, c2_;
};

inline Powers heat_power(const ContactModel& m, const DensityMatrix& omega, double t) {
    return Observables(m).powers(omega.matrix(), t);
}

// Midpoint-exponential propagator with a cache keyed on (midpoint phase, step).
class Propagator {
public:
    explicit Propagator(const ContactModel& m)
        : m_(m), hstatic_(m.h1_full() + m.h2_full()), constant_(m.hc_constant()) {}

    const CMat& step(double t0, double h) {
        double mid = t0 + 0.5 * h;
        if (constant_) mid = 0.0;
        else if (m_.periodic) mid -= m_.tau * std::floor(mid / m_.tau);
        auto key = std::make_pair(std::llround(mid * 1e9), std::llround(h * 1e12));
        auto it = cache_.find(key);
        if (it != cache_.end()) return it->second;
        if (!constant_ && !m_.periodic && cache_.size() > 4096) cache_.clear();
        CMat hm = hstatic_ + m_.hc_at(mid);
        EigenPair e = hermitian_eigen(hm);
        CVec ph = (e.values * (-h)).unaryExpr([](double x) { return std::polar(1.0, x); });
        CMat u = e.vectors * ph.asDiagonal() * e.vectors.adjoint();
        return cache_.emplace(key, std::move(u)).first->second;
    }

private:
    const ContactModel& m_;
    CMat hstatic_;
    bool constant_;
    std::map<std::pair<long long, long long>, CMat> cache_;
};

struct ThermoTrajectory {
    std::vector<double> t;
    std::vector<double> p1, p2;
    std::vector<double> s_rel;      // NaN where not computed
    std::vector<bool> s_rel_infinite;
    std::vector<double> u_c;        // <H_C(t)>
    std::vector<double> work_rate;  // Tr(Omega dH_C/dt)
    std::vector<double> e1, e2;     // <H_1>, <H_2>
    std::vector<DensityMatrix> states;
    CMat final_state;
    double spectrum_drift = 0.0;    // max |eig(Omega_t) - eig(Omega_0)|
    double trace_drift = 0.0;       // max |Tr Omega_t - 1|
};

struct EvolveOptions {
    bool keep_states = false;
    bool relative_entropy = true;
};

inline ThermoTrajectory evolve(const ContactModel& m, const DensityMatrix& omega0,
                               const std::vector<double>& t_grid, double dt_sub,
                               const EvolveOptions& opt = {}) {
    if (omega0.dim() != m.dim())
        throw StructuralError("evolve: initial state dimension differs from model");
    if (t_grid.empty()) throw ParameterError("evolve: empty time grid");
    if (!(dt_sub > 0)) throw ParameterError("evolve: dt_sub > 0");
    for (std::size_t i = 1; i < t_grid.size(); ++i) {
        if (!(t_grid[i] > t_grid[i - 1])) throw ParameterError("evolve: time grid must increase");
        if (dt_sub > (t_grid[i] - t_grid[i - 1]) * (1 + 1e-9))
            throw ParameterError("evolve: dt_sub exceeds grid spacing");
    }
    Observables obs(m);
    Propagator prop(m);
    DensityMatrix ref = reference_state(m);
    const RVec spec0 = omega0.eigenvalues();

    ThermoTrajectory tr;
    CMat omega = omega0.matrix();
    auto record = [&](double t) {
        if (!is_finite(omega))
            throw NumericalError("evolve: non-finite state entries at t = " + std::to_string(t));
        Powers p = obs.powers(omega, t);
        tr.t.push_back(t);
        tr.p1.push_back(p.p1);
        tr.p2.push_back(p.p2);
        tr.u_c.push_back(obs.hc_energy(omega, t));
        tr.work_rate.push_back(obs.work_rate(omega, t));
        tr.e1.push_back(obs.e1(omega));
        tr.e2.push_back(obs.e2(omega));
        const double tr_now = omega.trace().real();
        tr.trace_drift = std::max(tr.trace_drift, std::abs(tr_now - 1.0));
        if (tr.trace_drift > 1e-9)
            throw NumericalError("evolve: trace drifted by " + std::to_string(tr.trace_drift) + " at t = " +
                                 std::to_string(t));
        if (opt.relative_entropy || opt.keep_states) {
            // Rounding-level trace drift is removed before validation.
            DensityMatrix cur(0.5 * (omega + omega.adjoint()) / tr_now);
            tr.spectrum_drift = std::max(tr.spectrum_drift, (cur.eigenvalues() - spec0).cwiseAbs().maxCoeff());
            if (opt.relative_entropy) {
                ExtendedReal s = relative_entropy(cur, ref);
                tr.s_rel.push_back(s.is_finite() ? s.value : std::nan(""));
                tr.s_rel_infinite.push_back(!s.is_finite());
            }
            if (opt.keep_states) tr.states.push_back(std::move(cur));
        }
    };
    record(t_grid[0]);
    for (std::size_t i = 1; i < t_grid.size(); ++i) {
        const double t0 = t_grid[i - 1], span = t_grid[i] - t0;
        const long n = std::max(1L, static_cast<long>(std::ceil(span / dt_sub - 1e-9)));
        const double h = span / n;
        for (long j = 0; j < n; ++j) {
            const CMat& u = prop.step(t0 + j * h, h);
            omega = u * omega * u.adjoint();
        }
        record(t_grid[i]);
    }
    tr.final_state = omega;
    return tr;
}

inline std::vector<double> uniform_grid(double t0, double t1, long n_intervals) {
    std::vector<double> g(n_intervals + 1);
    for (long i = 0; i <= n_intervals; ++i) g[i] = t0 + (t1 - t0) * static_cast<double>(i) / n_intervals;
    return g;
}

struct BalanceRecord {
    double t = 0.0;
    double s_rel = 0.0;
    bool flagged = false;          // infinite relative entropy or endpoint
    double ds_dt = 0.0;            // central difference, interior only
    double beta_weighted_power = 0.0;
    double residual = 0.0;         // |dS/dt - (b1 P1 + b2 P2)| / max(1, |dS/dt|)
};

inline std::vector<BalanceRecord> entropy_balance(const ContactModel& m, const ThermoTrajectory& tr) {
    if (tr.s_rel.size() != tr.t.size())
        throw ParameterError("entropy_balance: trajectory lacks relative entropy records");
    std::vector<BalanceRecord> out(tr.t.size());
    for (std::size_t i = 0; i < tr.t.size(); ++i) {
        BalanceRecord& r = out[i];
        r.t = tr.t[i];
        r.s_rel = tr.s_rel[i];
        r.beta_weighted_power = m.beta1 * tr.p1[i] + m.beta2 * tr.p2[i];
        const bool interior = i > 0 && i + 1 < tr.t.size();
        r.flagged = tr.s_rel_infinite[i] || !interior;
        if (!interior || tr.s_rel_infinite[i - 1] || tr.s_rel_infinite[i + 1]) {
            r.flagged = true;
            continue;
        }
        // Nonuniform central difference (second order).
        const double h0 = tr.t[i] - tr.t[i - 1], h1 = tr.t[i + 1] - tr.t[i];
        r.ds_dt = (h0 * h0 * tr.s_rel[i + 1] - h1 * h1 * tr.s_rel[i - 1] + (h1 * h1 - h0 * h0) * tr.s_rel[i]) /
                  (h0 * h1 * (h0 + h1));
        r.residual = std::abs(r.ds_dt - r.beta_weighted_power) / std::max(1.0, std::abs(r.ds_dt));
    }
    return out;
}

struct ClausiusResult {
    double p1_bar = 0.0;
    double p2_bar = 0.0;
    bool directional_claim = false; // beta1 < beta2
    bool direction_ok = false;      // P1_bar <= 0 <= P2_bar
};

inline ClausiusResult clausius_flow(const ContactModel& m, const ThermoTrajectory& tr, double ta, double tb) {
    if (tr.t.empty() || !(ta < tb) || ta < tr.t.front() - 1e-12 || tb > tr.t.back() + 1e-12)
        throw ParameterError("clausius_flow: window outside trajectory grid");
    std::vector<double> t, a, b;
    for (std::size_t i = 0; i < tr.t.size(); ++i)
        if (tr.t[i] >= ta - 1e-12 && tr.t[i] <= tb + 1e-12) {
            t.push_back(tr.t[i]);
            a.push_back(tr.p1[i]);
            b.push_back(tr.p2[i]);
        }
    if (t.size() < 2) throw ParameterError("clausius_flow: window holds fewer than 2 grid points");
    const double span = t.back() - t.front();
    ClausiusResult r;
    r.p1_bar = trapezoid(t, a) / span;
    r.p2_bar = trapezoid(t, b) / span;
    r.directional_claim = m.beta1 < m.beta2;
    r.direction_ok = r.p1_bar <= 0.0 && r.p2_bar >= 0.0;
    return r;
}

struct CycleReport {
    bool operating = false;     // dQ1_out > 0
    double dQ1_out = 0.0;       // heat drawn from reservoir 1 per cycle
    double dQ2_in = 0.0;        // heat delivered to reservoir 2 per cycle
    double dW = 0.0;            // work done on the system per cycle
    double work_out = 0.0;      // -dW
    double eta = std::nan("");  // work_out / dQ1_out
    double eta_carnot = 0.0;
    double dS_cycle = 0.0;      // -beta1 dQ1_out + beta2 dQ2_in
    double first_law_residual = 0.0; // max over cycles, per unit time
    std::vector<double> per_cycle_dS;
    std::vector<double> per_cycle_Q1_out, per_cycle_Q2_in, per_cycle_W;
};

inline CycleReport carnot_run(const ContactModel& m, int n_transient, int n_measure, int steps_per_cycle) {
    if (!m.periodic) throw ParameterError("carnot_run: coupling schedule must be periodic");
    if (n_transient < 0 || n_measure < 1 || steps_per_cycle < 2)
        throw ParameterError("carnot_run: need n_transient >= 0, n_measure >= 1, steps_per_cycle >= 2");
    if (!(m.beta1 < m.beta2)) throw ParameterError("carnot_run: requires T1 > T2");
    const int total = n_transient + n_measure;
    std::vector<double> grid = uniform_grid(0.0, total * m.tau, static_cast<long>(total) * steps_per_cycle);
    const double h = m.tau / steps_per_cycle;
    EvolveOptions opt;
    opt.relative_entropy = false;
    ThermoTrajectory tr = evolve(m, reference_state(m), grid, h, opt);

    CycleReport r;
    r.eta_carnot = (m.temperature1() - m.temperature2()) / m.temperature1();
    CompensatedSum q1, q2, w, ds;
    for (int c = n_transient; c < total; ++c) {
        const std::size_t a = static_cast<std::size_t>(c) * steps_per_cycle;
        auto slice = [&](const std::vector<double>& v) {
            return std::vector<double>(v.begin() + a, v.begin() + a + steps_per_cycle + 1);
        };
        double iq1 = simpson_uniform(h, slice(tr.p1));
        double iq2 = simpson_uniform(h, slice(tr.p2));
        double iw = simpson_uniform(h, slice(tr.work_rate));
        q1.add(-iq1);
        q2.add(iq2);
        w.add(iw);
        double dsc = m.beta1 * iq1 + m.beta2 * iq2;
        ds.add(dsc);
        r.per_cycle_dS.push_back(dsc);
        r.per_cycle_Q1_out.push_back(-iq1);
        r.per_cycle_Q2_in.push_back(iq2);
        r.per_cycle_W.push_back(iw);
        const std::size_t b = a + steps_per_cycle;
        double du = tr.u_c[b] - tr.u_c[a];
        double res = std::abs(du - (-(iq1 + iq2) + iw)) / m.tau;
        r.first_law_residual = std::max(r.first_law_residual, res);
    }
    r.dQ1_out = q1.value() / n_measure;
    r.dQ2_in = q2.value() / n_measure;
    r.dW = w.value() / n_measure;
    r.work_out = -r.dW;
    r.dS_cycle = ds.value() / n_measure;
    r.operating = r.dQ1_out > 0.0;
    if (r.operating) r.eta = r.work_out / r.dQ1_out;
    return r;
}

struct SweepRecord {
    double tau = 0.0;
    double dW = 0.0;
    double dF = 0.0;
    double gap = 0.0;
    double final_relative_entropy = 0.0; // S(Omega_final || Gibbs of H(1)) / beta
};

// Drives H_C along its profiles over [0, tau] for each tau in the list, starting
// from the Gibbs state of the full H(0) at beta.
inline std::vector<SweepRecord> quasi_static_sweep(ContactModel m, const std::vector<double>& tau_list, double beta,
                                                   double steps_per_unit_time) {
    if (!(beta > 0)) throw ParameterError("quasi_static_sweep: beta > 0");
    if (m.periodic) throw ParameterError("quasi_static_sweep: schedule must not be periodic");
    std::vector<SweepRecord> out;
    const CMat hs = m.h1_full() + m.h2_full();
    for (double tau : tau_list) {
        if (!(tau > 0)) throw ParameterError("quasi_static_sweep: tau values must be positive");
        m.tau = tau;
        const CMat h0 = hs + m.hc_at(0.0), hf = hs + m.hc_at(tau);
        DensityMatrix start(gibbs(h0, beta));
        const long n = std::max(4L, static_cast<long>(std::ceil(tau * steps_per_unit_time)));
        std::vector<double> grid = uniform_grid(0.0, tau, n);
        EvolveOptions opt;
        opt.relative_entropy = false;
        opt.keep_states = false;
        ThermoTrajectory tr = evolve(m, start, grid, tau / n, opt);
        SweepRecord r;
        r.tau = tau;
        r.dW = simpson_uniform(tau / n, tr.work_rate);
        r.dF = -(log_partition(hf, beta) - log_partition(h0, beta)) / beta;
        r.gap = r.dW - r.dF;
        CMat fin = tr.final_state / tr.final_state.trace().real();
        ExtendedReal d = relative_entropy(DensityMatrix(0.5 * (fin + fin.adjoint())), DensityMatrix(gibbs(hf, beta)));
        r.final_relative_entropy = d.to_double() / beta;
        out.push_back(r);
    }
    return out;
}

} // namespace arrowlab::thermo
