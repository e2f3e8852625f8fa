#pragma once

// Stochastic collapse on a tensor chain. The algebra of the future at step n
// is the full matrix algebra of factors n..N-1; it shrinks by one factor per
// step. Events are read off the center of the centralizer of the restricted
// state, which for a full matrix algebra is generated by the spectral
// projections of the density matrix.

#include "arrowlab/error.hpp"
#include "arrowlab/numeric.hpp"
#include "arrowlab/qcore.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace arrowlab::eth {

inline long ipow(int b, int e) {
    long r = 1;
    for (int i = 0; i < e; ++i) r *= b;
    return r;
}

struct CoFiltrationModel {
    int N = 4;
    int d = 2;
    DensityMatrix rho0;
    std::vector<CMat> step_unitaries;  // empty entries mean identity
    double eps_deg = 1e-8;
    double p_min = 1e-6;

    long tail_dim(int n) const { return ipow(d, N - n); }

    void validate() const {
        if (N < 2) throw ValidationError("CoFiltrationModel: N >= 2");
        if (d < 2) throw ValidationError("CoFiltrationModel: d >= 2");
        if (rho0.dim() != tail_dim(0))
            throw ValidationError("CoFiltrationModel: rho0 has dimension d^N = " + std::to_string(tail_dim(0)));
        if (!(eps_deg > 0)) throw ValidationError("CoFiltrationModel: eps_deg > 0");
        if (!(p_min > 0 && p_min < 1)) throw ValidationError("CoFiltrationModel: 0 < p_min < 1");
        if (step_unitaries.size() > static_cast<std::size_t>(N))
            throw ValidationError("CoFiltrationModel: at most N step unitaries");
        for (std::size_t n = 0; n < step_unitaries.size(); ++n) {
            const CMat& u = step_unitaries[n];
            if (u.size() == 0) continue;
            if (u.rows() != tail_dim(n) || u.cols() != tail_dim(n))
                throw ValidationError("CoFiltrationModel: step_unitaries[" + std::to_string(n) +
                                      "] has dimension d^(N-n) = " + std::to_string(tail_dim(n)));
            double dev = max_abs(u.adjoint() * u - CMat::Identity(u.rows(), u.cols()));
            if (dev > 1e-10)
                throw ValidationError("CoFiltrationModel: step_unitaries[" + std::to_string(n) +
                                      "] not unitary (deviation " + std::to_string(dev) + ")");
        }
    }
};

// Trace over the leading factor of a tail of `factors` sites.
inline DensityMatrix restrict_state(const DensityMatrix& rho, int d, int factors) {
    if (factors <= 1) throw ParameterError("restrict_state: end of filtration, no factor left to keep");
    if (rho.dim() != ipow(d, factors)) throw StructuralError("restrict_state: dimension is not d^factors");
    CMat r = partial_trace(rho.matrix(), {d, static_cast<int>(ipow(d, factors - 1))}, {1});
    double tr = r.trace().real();
    return DensityMatrix(r / tr);
}

struct EventPartition {
    std::vector<CMat> projections;
    std::vector<double> weights;
    std::vector<double> eigenvalues;  // cluster means, descending
};

struct PartitionCheck {
    double projector = 0, orthogonality = 0, completeness = 0, additivity = 0, decoherence = 0, commutation = 0;
    double worst() const {
        return std::max({projector, orthogonality, completeness, additivity, decoherence, commutation});
    }
};

// Clustered spectral family of rho. Clusters are separated by eigenvalue gaps
// of at least eps_deg and listed from the largest eigenvalue down.
inline EventPartition event_partition(const DensityMatrix& rho, double eps_deg) {
    if (!(eps_deg > 0)) throw ParameterError("event_partition: eps_deg > 0");
    const RVec& ev = rho.eigenvalues();  // ascending
    const CMat& vec = rho.eigenvectors();
    const int n = static_cast<int>(ev.size());
    for (int i = 0; i < n; ++i)
        if (!std::isfinite(ev(i)))
            throw NumericalError("event_partition: eigensolver returned non-finite values (dim " + std::to_string(n) +
                                 ", max |rho| " + std::to_string(max_abs(rho.matrix())) + ")");
    std::vector<std::pair<int, int>> clusters;  // [begin, end) in ascending order
    int b = 0;
    for (int i = 1; i <= n; ++i)
        if (i == n || ev(i) - ev(i - 1) >= eps_deg) {
            clusters.emplace_back(b, i);
            b = i;
        }
    std::reverse(clusters.begin(), clusters.end());
    EventPartition p;
    for (auto [lo, hi] : clusters) {
        CMat v = vec.middleCols(lo, hi - lo);
        CMat proj = v * v.adjoint();
        p.projections.push_back(proj);
        p.weights.push_back(std::max(0.0, (rho.matrix() * proj).trace().real()));
        p.eigenvalues.push_back(ev.segment(lo, hi - lo).mean());
    }
    return p;
}

inline PartitionCheck check_partition(const EventPartition& p, const DensityMatrix& rho) {
    PartitionCheck c;
    const CMat& r = rho.matrix();
    const long dim = r.rows();
    CMat sum = CMat::Zero(dim, dim), deco = CMat::Zero(dim, dim);
    double wsum = 0;
    for (std::size_t i = 0; i < p.projections.size(); ++i) {
        const CMat& a = p.projections[i];
        c.projector = std::max({c.projector, max_abs(a - a.adjoint()), max_abs(a * a - a)});
        for (std::size_t j = i + 1; j < p.projections.size(); ++j)
            c.orthogonality = std::max(c.orthogonality, max_abs(a * p.projections[j]));
        sum += a;
        deco += a * r * a;
        wsum += p.weights[i];
        c.commutation = std::max(c.commutation, max_abs(a * r - r * a));
    }
    c.completeness = max_abs(sum - CMat::Identity(dim, dim));
    c.additivity = std::abs(wsum - 1.0);
    c.decoherence = max_abs(deco - r);
    return c;
}

// True when at least two projections carry weight in [p_min, 1 - p_min].
inline bool detect_event(const EventPartition& p, double p_min) {
    int n = 0;
    for (double w : p.weights)
        if (w >= p_min && w <= 1.0 - p_min) ++n;
    return n >= 2;
}

struct Collapse {
    int xi = -1;
    double weight = 0;
    DensityMatrix post;
};

// Born-rule draw of one cluster and the projected, renormalized state.
inline Collapse collapse_step(const DensityMatrix& rho, const EventPartition& p, double p_min, std::uint64_t seed) {
    if (p.weights.empty() || *std::max_element(p.weights.begin(), p.weights.end()) < p_min)
        throw ParameterError("collapse_step: all weights below p_min");
    std::mt19937_64 rng(seed);
    std::discrete_distribution<int> pick(p.weights.begin(), p.weights.end());
    Collapse c;
    c.xi = pick(rng);
    c.weight = p.weights[c.xi];
    const CMat& a = p.projections[c.xi];
    CMat post = a * rho.matrix() * a;
    double tr = post.trace().real();
    if (!(tr > 0)) throw NumericalError("collapse_step: chosen branch has zero trace");
    c.post = DensityMatrix(post / tr);
    return c;
}

struct HistoryStep {
    int n = 0;
    long tail_dim = 0;
    long algebra_dim = 0;
    bool event = false;
    int xi = -1;
    double weight = 0;
    std::vector<double> weights;
    PartitionCheck check;
    double post_trace_error = 0;
    double post_min_eigenvalue = 0;
};

struct HistoryRecord {
    std::uint64_t seed = 0;
    std::vector<HistoryStep> steps;
    std::vector<DensityMatrix> states;  // post-step state per step
    DensityMatrix final_state;
    bool failed = false;
    std::string failure;

    int first_event() const {
        for (std::size_t i = 0; i < steps.size(); ++i)
            if (steps[i].event) return static_cast<int>(i);
        return -1;
    }
};

// Unitary step, restriction, partition, and collapse when an event sets in.
inline HistoryRecord run_history(const CoFiltrationModel& m, std::uint64_t seed, bool keep_states = false) {
    m.validate();
    HistoryRecord h;
    h.seed = seed;
    DensityMatrix cur = m.rho0;
    try {
        for (int n = 0; n + 1 < m.N; ++n) {
            if (n < static_cast<int>(m.step_unitaries.size()) && m.step_unitaries[n].size() > 0) {
                const CMat& u = m.step_unitaries[n];
                CMat r = u * cur.matrix() * u.adjoint();
                cur = DensityMatrix(0.5 * (r + r.adjoint()) / r.trace().real());
            }
            const long before = cur.dim();
            cur = restrict_state(cur, m.d, m.N - n);
            HistoryStep s;
            s.n = n;
            s.tail_dim = cur.dim();
            s.algebra_dim = s.tail_dim * s.tail_dim;
            if (!(s.tail_dim < before)) throw NumericalError("run_history: tail dimension did not decrease");
            EventPartition p = event_partition(cur, m.eps_deg);
            s.check = check_partition(p, cur);
            s.weights = p.weights;
            s.event = detect_event(p, m.p_min);
            if (s.event) {
                Collapse c = collapse_step(cur, p, m.p_min, derive_seed(seed, static_cast<std::uint64_t>(n)));
                s.xi = c.xi;
                s.weight = c.weight;
                cur = c.post;
            }
            s.post_trace_error = std::abs(cur.matrix().trace().real() - 1.0);
            s.post_min_eigenvalue = cur.eigenvalues()(0);
            h.steps.push_back(s);
            if (keep_states) h.states.push_back(cur);
        }
    } catch (const Error& e) {
        h.failed = true;
        h.failure = e.what();
    }
    h.final_state = cur;
    return h;
}

struct BranchRow {
    int xi = 0;
    double weight = 0;
    long count = 0;
    double frequency = 0, sigma = 0, z = 0, ci_low = 0, ci_high = 0;
};

struct FrequencyReport {
    long n_runs = 0;
    long n_with_event = 0;
    int event_step = -1;
    std::vector<BranchRow> rows;
    std::string note;
    // Worst values over every step of every history.
    double worst_partition = 0;
    double worst_post_trace = 0;
    double min_post_eigenvalue = 0;
    bool dimension_decreasing = true;
    long n_events = 0;
    double max_abs_z() const {
        double z = 0;
        for (const auto& r : rows) z = std::max(z, std::abs(r.z));
        return z;
    }
};

// First-event branch frequencies against the Born weights. The history before
// the first collapse is deterministic, so the first event is the same step in
// every run.
inline FrequencyReport frequency_report(const CoFiltrationModel& m, long n_runs, std::uint64_t master_seed) {
    if (n_runs < 100) throw ParameterError("frequency_report: n_runs >= 100");
    std::vector<HistoryRecord> runs(n_runs);
    parallel_for(static_cast<std::size_t>(n_runs), [&](std::size_t i) {
        runs[i] = run_history(m, derive_seed(master_seed, i));
    });
    FrequencyReport r;
    r.n_runs = n_runs;
    for (const auto& h : runs) {
        if (h.failed) throw NumericalError("frequency_report: history failed: " + h.failure);
        long prev = m.tail_dim(0) * m.tail_dim(0);
        for (const auto& s : h.steps) {
            r.worst_partition = std::max(r.worst_partition, s.check.worst());
            r.worst_post_trace = std::max(r.worst_post_trace, s.post_trace_error);
            r.min_post_eigenvalue = std::min(r.min_post_eigenvalue, s.post_min_eigenvalue);
            if (!(s.algebra_dim < prev)) r.dimension_decreasing = false;
            prev = s.algebra_dim;
            r.n_events += s.event;
        }
    }
    int step = runs[0].first_event();
    if (step < 0) {
        r.note = "no event in any run";
        return r;
    }
    r.event_step = step;
    const std::vector<double>& w = runs[0].steps[step].weights;
    std::vector<long> counts(w.size(), 0);
    for (const auto& h : runs) {
        if (h.first_event() != step) throw NumericalError("frequency_report: first event step differs between runs");
        ++counts[h.steps[step].xi];
        ++r.n_with_event;
    }
    for (std::size_t k = 0; k < w.size(); ++k) {
        BranchRow b;
        b.xi = static_cast<int>(k);
        b.weight = w[k];
        b.count = counts[k];
        b.frequency = static_cast<double>(counts[k]) / r.n_with_event;
        b.sigma = std::sqrt(w[k] * (1 - w[k]) / r.n_with_event);
        b.z = b.sigma > 0 ? (b.frequency - w[k]) / b.sigma : (b.frequency == w[k] ? 0.0 : INFINITY);
        b.ci_low = w[k] - 3 * b.sigma;
        b.ci_high = w[k] + 3 * b.sigma;
        r.rows.push_back(b);
    }
    return r;
}

// Product state of identical single-site density matrices.
inline DensityMatrix product_state(const CMat& site, int N) {
    CMat r = site;
    for (int i = 1; i < N; ++i) r = kron(r, site);
    return DensityMatrix(r);
}

} // namespace arrowlab::eth
