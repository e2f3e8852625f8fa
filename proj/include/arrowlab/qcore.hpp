#pragma once

// Finite-dimensional quantum states, channels and entropy functionals.

#include "arrowlab/error.hpp"

#include <Eigen/Dense>
#include <unsupported/Eigen/KroneckerProduct>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace arrowlab {

using cplx = std::complex<double>;
using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;
using RVec = Eigen::VectorXd;

namespace tol {
inline constexpr double hermitian = 1e-12;
inline constexpr double eigen_floor = -1e-12;
inline constexpr double trace = 1e-12;
inline constexpr double kraus = 1e-10;
inline constexpr double entropy_floor = 1e-14;
inline constexpr double support = 1e-12;
} // namespace tol

inline double max_abs(const CMat& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

inline double hermitian_deviation(const CMat& m) { return max_abs(m - m.adjoint()); }

inline bool is_finite(const CMat& m) {
    for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            if (!std::isfinite(m(i, j).real()) || !std::isfinite(m(i, j).imag())) return false;
    return true;
}

struct EigenPair {
    RVec values; // ascending
    CMat vectors;
};

inline EigenPair hermitian_eigen(const CMat& m) {
    Eigen::SelfAdjointEigenSolver<CMat> es(0.5 * (m + m.adjoint()));
    if (es.info() != Eigen::Success)
        throw NumericalError("hermitian_eigen: eigensolver did not converge (dim " +
                             std::to_string(m.rows()) + ")");
    return {es.eigenvalues(), es.eigenvectors()};
}

// f(M) for Hermitian M, through its eigendecomposition.
template <class F>
CMat hermitian_function(const CMat& m, F f) {
    EigenPair e = hermitian_eigen(m);
    RVec fv = e.values.unaryExpr(f);
    return e.vectors * fv.asDiagonal() * e.vectors.adjoint();
}

class DensityMatrix {
public:
    DensityMatrix() : m_(CMat::Ones(1, 1)) {}

    explicit DensityMatrix(CMat m) : m_(std::move(m)) {
        if (m_.rows() != m_.cols() || m_.rows() == 0)
            throw StructuralError("DensityMatrix: matrix must be square and nonempty");
        if (!is_finite(m_))
            throw NumericalError("DensityMatrix: non-finite entries");
        double dev = hermitian_deviation(m_);
        if (dev > tol::hermitian)
            throw ValidationError("DensityMatrix: not Hermitian (max deviation " + fmt(dev) + ")");
        m_ = 0.5 * (m_ + m_.adjoint());
        double tr = m_.trace().real();
        if (std::abs(tr - 1.0) > tol::trace)
            throw ValidationError("DensityMatrix: trace " + fmt(tr) + " differs from 1");
        eig_ = hermitian_eigen(m_);
        if (eig_.values(0) < tol::eigen_floor)
            throw ValidationError("DensityMatrix: negative eigenvalue " + fmt(eig_.values(0)));
    }

    int dim() const { return static_cast<int>(m_.rows()); }
    const CMat& matrix() const { return m_; }
    const RVec& eigenvalues() const { return eig_.values; }
    const CMat& eigenvectors() const { return eig_.vectors; }

private:
    static std::string fmt(double x) {
        std::ostringstream os;
        os.precision(3);
        os << x;
        return os.str();
    }

    CMat m_;
    EigenPair eig_{RVec::Ones(1), CMat::Identity(1, 1)};
};

class QuantumChannel {
public:
    explicit QuantumChannel(std::vector<CMat> kraus) : k_(std::move(kraus)) {
        if (k_.empty())
            throw ValidationError("QuantumChannel: empty Kraus set");
        const auto r = k_[0].rows(), c = k_[0].cols();
        CMat s = CMat::Zero(c, c);
        for (const auto& k : k_) {
            if (k.rows() != r || k.cols() != c)
                throw StructuralError("QuantumChannel: Kraus operators differ in shape");
            s += k.adjoint() * k;
        }
        double dev = max_abs(s - CMat::Identity(c, c));
        if (dev > tol::kraus)
            throw ValidationError("QuantumChannel: Kraus completeness violated (deviation " +
                                  std::to_string(dev) + ")");
    }

    int input_dim() const { return static_cast<int>(k_[0].cols()); }
    int output_dim() const { return static_cast<int>(k_[0].rows()); }
    const std::vector<CMat>& kraus() const { return k_; }

    static QuantumChannel identity(int d) { return QuantumChannel({CMat::Identity(d, d)}); }

    // rho -> Tr(rho) 1/d
    static QuantumChannel depolarizing(int d) {
        std::vector<CMat> ks;
        const double s = 1.0 / std::sqrt(static_cast<double>(d));
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) {
                CMat k = CMat::Zero(d, d);
                k(i, j) = s;
                ks.push_back(k);
            }
        return QuantumChannel(std::move(ks));
    }

private:
    std::vector<CMat> k_;
};

struct TripartiteState {
    DensityMatrix rho;
    std::array<int, 3> dims{1, 1, 1};

    TripartiteState(DensityMatrix r, std::array<int, 3> d) : rho(std::move(r)), dims(d) {
        for (int x : dims)
            if (x <= 0) throw StructuralError("TripartiteState: dims must be positive");
        if (dims[0] * dims[1] * dims[2] != rho.dim())
            throw StructuralError("TripartiteState: dims product differs from rho dimension");
    }
};

// Partial trace keeping the factors listed in `keep` (any order; result is in
// ascending factor order).
inline CMat partial_trace(const CMat& m, const std::vector<int>& dims, std::vector<int> keep) {
    const int nf = static_cast<int>(dims.size());
    long total = 1;
    for (int d : dims) {
        if (d <= 0) throw StructuralError("partial_trace: dims must be positive");
        total *= d;
    }
    if (total != m.rows() || m.rows() != m.cols())
        throw StructuralError("partial_trace: dims product " + std::to_string(total) +
                              " differs from matrix dimension " + std::to_string(m.rows()));
    std::sort(keep.begin(), keep.end());
    keep.erase(std::unique(keep.begin(), keep.end()), keep.end());
    if (keep.empty() || static_cast<int>(keep.size()) >= nf)
        throw ParameterError("partial_trace: keep must be a nonempty proper subset");
    for (int k : keep)
        if (k < 0 || k >= nf) throw ParameterError("partial_trace: keep index out of range");

    std::vector<char> kept(nf, 0);
    for (int k : keep) kept[k] = 1;
    long dk = 1, dt = 1;
    for (int f = 0; f < nf; ++f) (kept[f] ? dk : dt) *= dims[f];

    // Split each full index into (kept index, traced index), row-major in factor order.
    std::vector<long> ki(total), ti(total);
    std::vector<int> digit(nf, 0);
    for (long i = 0; i < total; ++i) {
        long a = 0, b = 0;
        for (int f = 0; f < nf; ++f) {
            if (kept[f])
                a = a * dims[f] + digit[f];
            else
                b = b * dims[f] + digit[f];
        }
        ki[i] = a;
        ti[i] = b;
        for (int f = nf - 1; f >= 0; --f) {
            if (++digit[f] < dims[f]) break;
            digit[f] = 0;
        }
    }
    std::vector<std::vector<long>> by_trace(dt);
    for (long i = 0; i < total; ++i) by_trace[ti[i]].push_back(i);

    CMat out = CMat::Zero(dk, dk);
    for (const auto& group : by_trace)
        for (long i : group)
            for (long j : group) out(ki[i], ki[j]) += m(i, j);
    return out;
}

inline DensityMatrix partial_trace(const DensityMatrix& rho, const std::vector<int>& dims,
                                   const std::vector<int>& keep) {
    return DensityMatrix(partial_trace(rho.matrix(), dims, keep));
}

inline DensityMatrix partial_trace(const TripartiteState& s, const std::vector<int>& keep) {
    return partial_trace(s.rho, {s.dims[0], s.dims[1], s.dims[2]}, keep);
}

inline CMat apply_channel(const CMat& rho, const QuantumChannel& ch) {
    if (rho.rows() != ch.input_dim())
        throw StructuralError("apply_channel: state dimension " + std::to_string(rho.rows()) +
                              " differs from channel input " + std::to_string(ch.input_dim()));
    CMat out = CMat::Zero(ch.output_dim(), ch.output_dim());
    for (const auto& k : ch.kraus()) out += k * rho * k.adjoint();
    return out;
}

inline DensityMatrix apply_channel(const DensityMatrix& rho, const QuantumChannel& ch) {
    CMat out = apply_channel(rho.matrix(), ch);
    // Renormalize only the rounding-level drift; completeness was checked at 1e-10.
    out /= out.trace().real();
    return DensityMatrix(std::move(out));
}

inline double entropy_of_spectrum(const RVec& ev) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < ev.size(); ++i)
        if (ev(i) > tol::entropy_floor) s -= ev(i) * std::log(ev(i));
    return std::max(0.0, s);
}

inline double von_neumann_entropy(const DensityMatrix& rho) {
    return entropy_of_spectrum(rho.eigenvalues());
}

// A real number or +infinity, kept apart from floating-point overflow.
struct ExtendedReal {
    double value = 0.0;
    bool infinite = false;

    static ExtendedReal finite(double v) { return {v, false}; }
    static ExtendedReal inf() { return {0.0, true}; }
    bool is_finite() const { return !infinite; }
    double to_double() const { return infinite ? std::numeric_limits<double>::infinity() : value; }
};

// S(sigma || omega) = Tr sigma (ln sigma - ln omega).
inline ExtendedReal relative_entropy(const DensityMatrix& sigma, const DensityMatrix& omega) {
    if (sigma.dim() != omega.dim())
        throw StructuralError("relative_entropy: dimensions " + std::to_string(sigma.dim()) + " and " +
                              std::to_string(omega.dim()) + " differ");
    const RVec& ls = sigma.eigenvalues();
    const RVec& lw = omega.eigenvalues();
    const CMat& vw = omega.eigenvectors();
    // Diagonal of sigma in the eigenbasis of omega.
    RVec sdiag = (vw.adjoint() * sigma.matrix() * vw).diagonal().real();
    double s = 0.0;
    for (Eigen::Index i = 0; i < ls.size(); ++i)
        if (ls(i) > tol::entropy_floor) s += ls(i) * std::log(ls(i));
    for (Eigen::Index j = 0; j < lw.size(); ++j) {
        if (lw(j) <= tol::support) {
            if (sdiag(j) > tol::support) return ExtendedReal::inf();
            continue;
        }
        s -= sdiag(j) * std::log(lw(j));
    }
    return ExtendedReal::finite(s);
}

enum class ConvexFn { x_log_x, x_squared };

// Tr f(B) - Tr f(A) - Tr(f'(A)(B - A)).
inline double klein_gap(const CMat& a, const CMat& b, ConvexFn f) {
    if (a.rows() != a.cols() || b.rows() != b.cols() || a.rows() != b.rows())
        throw StructuralError("klein_gap: A and B must be square of equal dimension");
    const double scale = std::max({1.0, max_abs(a), max_abs(b)});
    if (hermitian_deviation(a) > tol::hermitian * scale || hermitian_deviation(b) > tol::hermitian * scale)
        throw ValidationError("klein_gap: A and B must be Hermitian");
    CMat diff = 0.5 * ((b - a) + (b - a).adjoint());
    if (f == ConvexFn::x_squared) {
        // Expanding the definition gives Tr((B - A)^2) exactly.
        return (diff * diff).trace().real();
    }
    EigenPair ea = hermitian_eigen(a), eb = hermitian_eigen(b);
    if (ea.values(0) <= 0.0 || eb.values(0) <= 0.0)
        throw DomainError("klein_gap: x ln x requires strictly positive spectra");
    auto xlx = [](const RVec& v) {
        double s = 0;
        for (Eigen::Index i = 0; i < v.size(); ++i) s += v(i) * std::log(v(i));
        return s;
    };
    RVec fp = ea.values.unaryExpr([](double x) { return std::log(x) + 1.0; });
    CMat fpa = ea.vectors * fp.asDiagonal() * ea.vectors.adjoint();
    return xlx(eb.values) - xlx(ea.values) - (fpa * diff).trace().real();
}

inline double ssa_gap(const TripartiteState& s) {
    double s12 = von_neumann_entropy(partial_trace(s, {0, 1}));
    double s23 = von_neumann_entropy(partial_trace(s, {1, 2}));
    double s2 = von_neumann_entropy(partial_trace(s, {1}));
    double s123 = von_neumann_entropy(s.rho);
    return s12 + s23 - s123 - s2;
}

struct MonotonicityResult {
    bool comparable = false;
    double gap = 0.0;
};

inline MonotonicityResult monotonicity_gap(const DensityMatrix& sigma, const DensityMatrix& omega,
                                           const QuantumChannel& ch) {
    if (sigma.dim() != ch.input_dim() || omega.dim() != ch.input_dim())
        throw StructuralError("monotonicity_gap: channel input dimension differs from states");
    ExtendedReal before = relative_entropy(sigma, omega);
    if (!before.is_finite()) return {};
    ExtendedReal after = relative_entropy(apply_channel(sigma, ch), apply_channel(omega, ch));
    if (!after.is_finite()) return {};
    return {true, before.value - after.value};
}

inline CMat ginibre(int rows, int cols, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    CMat g(rows, cols);
    for (int j = 0; j < cols; ++j)
        for (int i = 0; i < rows; ++i) {
            double re = n(rng);
            double im = n(rng);
            g(i, j) = cplx(re, im);
        }
    return g;
}

// Haar-distributed unitary (QR of a Ginibre matrix with phase fix).
inline CMat random_unitary(int d, std::mt19937_64& rng) {
    Eigen::HouseholderQR<CMat> qr(ginibre(d, d, rng));
    CMat q = qr.householderQ();
    CMat r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (int i = 0; i < d; ++i) {
        cplx ph = r(i, i) / std::abs(r(i, i));
        q.col(i) *= ph;
    }
    return q;
}

inline DensityMatrix random_density_matrix(int dim, int rank, std::uint64_t seed) {
    if (dim < 1) throw ParameterError("random_density_matrix: dim must be >= 1");
    if (rank < 1 || rank > dim)
        throw ParameterError("random_density_matrix: rank " + std::to_string(rank) +
                             " outside [1, dim=" + std::to_string(dim) + "]");
    std::mt19937_64 rng(seed);
    CMat g = ginibre(dim, rank, rng);
    CMat rho = g * g.adjoint();
    rho /= rho.trace().real();
    return DensityMatrix(0.5 * (rho + rho.adjoint()));
}

// Random channel from an isometry din -> n_kraus*dout split into Kraus blocks.
inline QuantumChannel random_channel(int din, int dout, int n_kraus, std::uint64_t seed) {
    if (n_kraus * dout < din)
        throw ParameterError("random_channel: n_kraus*dout must be >= din");
    std::mt19937_64 rng(seed);
    const int big = n_kraus * dout;
    Eigen::HouseholderQR<CMat> qr(ginibre(big, din, rng));
    CMat q = qr.householderQ() * CMat::Identity(big, din);
    std::vector<CMat> ks;
    for (int k = 0; k < n_kraus; ++k) ks.push_back(q.block(k * dout, 0, dout, din));
    return QuantumChannel(std::move(ks));
}

inline CMat kron(const CMat& a, const CMat& b) { return Eigen::kroneckerProduct(a, b).eval(); }

} // namespace arrowlab
