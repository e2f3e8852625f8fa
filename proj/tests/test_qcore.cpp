#include "arrowlab/numeric.hpp"
#include "arrowlab/qcore.hpp"

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

using namespace arrowlab;

namespace {

// Independent references: general (non-Hermitian) eigensolver and plain loops.

double entropy_oracle(const CMat& m) {
    Eigen::ComplexEigenSolver<CMat> es(m);
    double s = 0;
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
        double l = es.eigenvalues()(i).real();
        if (l > 1e-14) s -= l * std::log(l);
    }
    return s;
}

CMat log_oracle(const CMat& m) {
    Eigen::ComplexEigenSolver<CMat> es(m);
    CMat v = es.eigenvectors();
    CVec l = es.eigenvalues().unaryExpr([](cplx z) { return std::log(z); });
    return v * l.asDiagonal() * v.inverse();
}

double rel_entropy_oracle(const CMat& s, const CMat& w) {
    return (s * (log_oracle(s) - log_oracle(w))).trace().real();
}

// tr_2 of a (d1 x d2) bipartite matrix by explicit index contraction.
CMat trace_second(const CMat& m, int d1, int d2) {
    CMat out = CMat::Zero(d1, d1);
    for (int a = 0; a < d1; ++a)
        for (int b = 0; b < d1; ++b)
            for (int j = 0; j < d2; ++j) out(a, b) += m(a * d2 + j, b * d2 + j);
    return out;
}

CMat trace_first(const CMat& m, int d1, int d2) {
    CMat out = CMat::Zero(d2, d2);
    for (int a = 0; a < d2; ++a)
        for (int b = 0; b < d2; ++b)
            for (int i = 0; i < d1; ++i) out(a, b) += m(i * d2 + a, i * d2 + b);
    return out;
}

CMat diag2(double a, double b) {
    CMat m = CMat::Zero(2, 2);
    m(0, 0) = a;
    m(1, 1) = b;
    return m;
}

DensityMatrix full_rank(int d, std::uint64_t seed) { return random_density_matrix(d, d, seed); }

} // namespace

TEST(DensityMatrixTest, RejectsBrokenInvariants) {
    CMat m = diag2(0.5, 0.5);
    m(0, 1) = 0.1;
    EXPECT_THROW(DensityMatrix{m}, ValidationError);
    EXPECT_THROW(DensityMatrix{diag2(0.6, 0.6)}, ValidationError);
    EXPECT_THROW(DensityMatrix{diag2(1.2, -0.2)}, ValidationError);
    EXPECT_NO_THROW(DensityMatrix{diag2(0.75, 0.25)});
}

TEST(QuantumChannelTest, RejectsIncompleteKraus) {
    EXPECT_THROW(QuantumChannel({0.9 * CMat::Identity(2, 2)}), ValidationError);
}

TEST(PartialTrace, ProductStateFactorizes) {
    DensityMatrix r1 = full_rank(2, 1), r2 = full_rank(3, 2);
    DensityMatrix prod(kron(r1.matrix(), r2.matrix()));
    EXPECT_LT(max_abs(partial_trace(prod, {2, 3}, {0}).matrix() - r1.matrix()), 1e-14);
    EXPECT_LT(max_abs(partial_trace(prod, {2, 3}, {1}).matrix() - r2.matrix()), 1e-14);
}

TEST(PartialTrace, BellStateGivesMaximallyMixed) {
    CVec psi = CVec::Zero(4);
    psi(0) = psi(3) = 1.0 / std::sqrt(2.0);
    DensityMatrix bell(psi * psi.adjoint());
    EXPECT_LT(max_abs(partial_trace(bell, {2, 2}, {0}).matrix() - 0.5 * CMat::Identity(2, 2)), 1e-15);
}

TEST(PartialTrace, MatchesIndexContraction) {
    for (std::uint64_t s = 0; s < 20; ++s) {
        DensityMatrix r = random_density_matrix(6, 3, 100 + s);
        DensityMatrix a = partial_trace(r, {2, 3}, {0});
        DensityMatrix b = partial_trace(r, {2, 3}, {1});
        EXPECT_LT(max_abs(a.matrix() - trace_second(r.matrix(), 2, 3)), 1e-14);
        EXPECT_LT(max_abs(b.matrix() - trace_first(r.matrix(), 2, 3)), 1e-14);
        EXPECT_NEAR(a.matrix().trace().real(), 1.0, 1e-14);
        EXPECT_GE(a.eigenvalues().minCoeff(), -1e-14);
    }
}

TEST(PartialTrace, TripartiteMiddleFactor) {
    DensityMatrix r1 = full_rank(2, 3), r2 = full_rank(3, 4), r3 = full_rank(2, 5);
    TripartiteState s(DensityMatrix(kron(kron(r1.matrix(), r2.matrix()), r3.matrix())), {2, 3, 2});
    EXPECT_LT(max_abs(partial_trace(s, {1}).matrix() - r2.matrix()), 1e-14);
    EXPECT_LT(max_abs(partial_trace(s, {0, 2}).matrix() - kron(r1.matrix(), r3.matrix())), 1e-14);
}

TEST(PartialTrace, DimensionMismatchIsStructural) {
    DensityMatrix r = full_rank(6, 1);
    EXPECT_THROW(partial_trace(r, {2, 2}, {0}), StructuralError);
    EXPECT_THROW(TripartiteState(r, {2, 2, 2}), StructuralError);
    EXPECT_THROW(partial_trace(r, {2, 3}, {0, 1}), ParameterError);
}

TEST(ApplyChannel, IdentityAndDepolarizing) {
    DensityMatrix r = full_rank(3, 7);
    EXPECT_LT(max_abs(apply_channel(r, QuantumChannel::identity(3)).matrix() - r.matrix()), 1e-15);
    EXPECT_LT(max_abs(apply_channel(r, QuantumChannel::depolarizing(3)).matrix() -
                      CMat::Identity(3, 3) / 3.0),
              1e-15);
}

TEST(ApplyChannel, MatchesEntrywiseKrausSum) {
    for (std::uint64_t s = 0; s < 20; ++s) {
        QuantumChannel ch = random_channel(2, 2, 3, 200 + s);
        DensityMatrix r = full_rank(2, 300 + s);
        DensityMatrix out = apply_channel(r, ch);
        CMat ref = CMat::Zero(2, 2);
        for (const auto& k : ch.kraus())
            for (int i = 0; i < 2; ++i)
                for (int j = 0; j < 2; ++j)
                    for (int a = 0; a < 2; ++a)
                        for (int b = 0; b < 2; ++b)
                            ref(i, j) += k(i, a) * r.matrix()(a, b) * std::conj(k(j, b));
        EXPECT_LT(max_abs(out.matrix() - ref), 1e-14);
        EXPECT_GE(out.eigenvalues().minCoeff(), -1e-14);
    }
}

TEST(ApplyChannel, DimensionMismatch) {
    EXPECT_THROW(apply_channel(full_rank(3, 1), QuantumChannel::identity(2)), StructuralError);
}

TEST(Entropy, KnownValues) {
    EXPECT_NEAR(von_neumann_entropy(DensityMatrix(0.5 * CMat::Identity(2, 2))), std::log(2.0), 1e-15);
    EXPECT_NEAR(von_neumann_entropy(DensityMatrix(diag2(0.75, 0.25))), 0.5623351446188083, 1e-15);
    for (int d : {1, 2, 5, 9}) EXPECT_NEAR(von_neumann_entropy(random_density_matrix(d, 1, d)), 0.0, 1e-10);
}

TEST(Entropy, MatchesGeneralEigensolver) {
    for (std::uint64_t s = 0; s < 30; ++s) {
        int d = 2 + s % 7;
        DensityMatrix r = random_density_matrix(d, 1 + s % d, s);
        EXPECT_NEAR(von_neumann_entropy(r), entropy_oracle(r.matrix()), 1e-10);
    }
}

TEST(Entropy, UnitaryInvariance) {
    std::mt19937_64 rng(11);
    for (std::uint64_t s = 0; s < 50; ++s) {
        DensityMatrix r = random_density_matrix(5, 3, 500 + s);
        CMat u = random_unitary(5, rng);
        CMat rotated = u * r.matrix() * u.adjoint();
        EXPECT_NEAR(von_neumann_entropy(DensityMatrix(0.5 * (rotated + rotated.adjoint()))),
                    von_neumann_entropy(r), 1e-10);
    }
}

TEST(RelativeEntropy, KnownValues) {
    DensityMatrix a(diag2(0.5, 0.5)), b(diag2(0.75, 0.25));
    EXPECT_NEAR(relative_entropy(a, a).value, 0.0, 1e-15);
    EXPECT_NEAR(relative_entropy(a, b).value, 0.14384103622589042, 1e-15);
    ExtendedReal inf = relative_entropy(DensityMatrix(diag2(1, 0)), DensityMatrix(diag2(0, 1)));
    EXPECT_TRUE(inf.infinite);
    EXPECT_TRUE(std::isinf(inf.to_double()));
}

TEST(RelativeEntropy, MatchesMatrixLogOracle) {
    for (std::uint64_t s = 0; s < 30; ++s) {
        DensityMatrix x = full_rank(4, 700 + s), y = full_rank(4, 800 + s);
        EXPECT_NEAR(relative_entropy(x, y).value, rel_entropy_oracle(x.matrix(), y.matrix()), 1e-9);
    }
}

TEST(RelativeEntropy, SupportContained) {
    // sigma supported inside a rank-2 omega stays finite.
    CMat w = CMat::Zero(3, 3), s = CMat::Zero(3, 3);
    w(0, 0) = 0.6;
    w(1, 1) = 0.4;
    s(0, 0) = 0.3;
    s(1, 1) = 0.7;
    ExtendedReal r = relative_entropy(DensityMatrix(s), DensityMatrix(w));
    ASSERT_TRUE(r.is_finite());
    EXPECT_NEAR(r.value, 0.3 * std::log(0.3 / 0.6) + 0.7 * std::log(0.7 / 0.4), 1e-14);
}

TEST(RelativeEntropy, DimensionMismatch) {
    EXPECT_THROW(relative_entropy(full_rank(2, 1), full_rank(3, 1)), StructuralError);
}

TEST(KleinGap, EqualArgumentsAndSquareIdentity) {
    DensityMatrix a = full_rank(4, 1), b = full_rank(4, 2);
    EXPECT_NEAR(klein_gap(a.matrix(), a.matrix(), ConvexFn::x_log_x), 0.0, 1e-14);
    CMat d = b.matrix() - a.matrix();
    EXPECT_NEAR(klein_gap(a.matrix(), b.matrix(), ConvexFn::x_squared), (d * d).trace().real(), 1e-15);
}

TEST(KleinGap, DomainError) {
    EXPECT_THROW(klein_gap(diag2(1, 0), diag2(0.5, 0.5), ConvexFn::x_log_x), DomainError);
}

TEST(KleinGap, XLogXEqualsRelativeEntropyForStates) {
    // For unit-trace A, B the x ln x gap is S(B || A).
    for (std::uint64_t s = 0; s < 20; ++s) {
        DensityMatrix a = full_rank(3, 40 + s), b = full_rank(3, 60 + s);
        EXPECT_NEAR(klein_gap(a.matrix(), b.matrix(), ConvexFn::x_log_x),
                    rel_entropy_oracle(b.matrix(), a.matrix()), 1e-9);
    }
}

TEST(KleinGap, NonnegativeOnRandomPairs) {
    std::mt19937_64 rng(17);
    for (int n = 0; n < 1000; ++n) {
        int d = 1 + n % 16;
        CMat a = 3.0 * d * full_rank(d, derive_seed(17, 2 * n)).matrix();
        CMat b = 0.5 * d * full_rank(d, derive_seed(17, 2 * n + 1)).matrix();
        EXPECT_GE(klein_gap(a, b, ConvexFn::x_log_x), -1e-10);
        CMat g = ginibre(d, d, rng);
        CMat h = g + g.adjoint();
        EXPECT_GE(klein_gap(h, a, ConvexFn::x_squared), -1e-10);
    }
}

TEST(KleinGap, StrictlyPositiveWhenArgumentsDiffer) {
    for (std::uint64_t s = 0; s < 50; ++s) {
        CMat a = full_rank(3, 900 + s).matrix();
        CMat b = 0.999 * a + 0.001 * CMat::Identity(3, 3) / 3.0;
        EXPECT_GT(klein_gap(a, b, ConvexFn::x_log_x), 0.0);
        EXPECT_LE(klein_gap(a, a, ConvexFn::x_log_x), 1e-8);
    }
}

TEST(SsaGap, ProductAndPureStates) {
    DensityMatrix r1 = full_rank(2, 1), r2 = full_rank(3, 2), r3 = full_rank(2, 3);
    TripartiteState prod(DensityMatrix(kron(kron(r1.matrix(), r2.matrix()), r3.matrix())), {2, 3, 2});
    EXPECT_NEAR(ssa_gap(prod), 0.0, 1e-12);

    TripartiteState pure(random_density_matrix(8, 1, 5), {2, 2, 2});
    double s12 = entropy_oracle(trace_second(pure.rho.matrix(), 4, 2));
    double s23 = entropy_oracle(trace_first(pure.rho.matrix(), 2, 4));
    double s2 = entropy_oracle(partial_trace(pure.rho.matrix(), {2, 2, 2}, {1}));
    EXPECT_NEAR(ssa_gap(pure), s12 + s23 - s2, 1e-10);
    EXPECT_GE(ssa_gap(pure), 0.0);
}

TEST(SsaGap, NonnegativeOnRandomMixedStates) {
    for (int n = 0; n < 500; ++n) {
        TripartiteState a(random_density_matrix(8, 1 + n % 8, derive_seed(23, n)), {2, 2, 2});
        TripartiteState b(random_density_matrix(12, 1 + n % 12, derive_seed(29, n)), {2, 3, 2});
        EXPECT_GE(ssa_gap(a), -1e-9);
        EXPECT_GE(ssa_gap(b), -1e-9);
    }
}

TEST(MonotonicityGap, IdentityAndDepolarizing) {
    DensityMatrix s = full_rank(3, 1), w = full_rank(3, 2);
    MonotonicityResult id = monotonicity_gap(s, w, QuantumChannel::identity(3));
    ASSERT_TRUE(id.comparable);
    EXPECT_NEAR(id.gap, 0.0, 1e-12);
    MonotonicityResult dep = monotonicity_gap(s, w, QuantumChannel::depolarizing(3));
    ASSERT_TRUE(dep.comparable);
    EXPECT_NEAR(dep.gap, relative_entropy(s, w).value, 1e-12);
}

TEST(MonotonicityGap, IncomparableWhenInputInfinite) {
    MonotonicityResult r = monotonicity_gap(DensityMatrix(diag2(1, 0)), DensityMatrix(diag2(0, 1)),
                                            QuantumChannel::identity(2));
    EXPECT_FALSE(r.comparable);
}

TEST(MonotonicityGap, NonnegativeUnderRandomQubitChannels) {
    for (int n = 0; n < 300; ++n) {
        QuantumChannel ch = random_channel(2, 2, 1 + n % 4 + (n % 4 == 0), derive_seed(31, n));
        DensityMatrix s = full_rank(2, derive_seed(37, n)), w = full_rank(2, derive_seed(41, n));
        MonotonicityResult r = monotonicity_gap(s, w, ch);
        ASSERT_TRUE(r.comparable);
        CMat so = CMat::Zero(2, 2), wo = CMat::Zero(2, 2);
        for (const auto& k : ch.kraus()) {
            so += k * s.matrix() * k.adjoint();
            wo += k * w.matrix() * k.adjoint();
        }
        double ref = rel_entropy_oracle(s.matrix(), w.matrix()) - rel_entropy_oracle(so, wo);
        EXPECT_NEAR(r.gap, ref, 1e-9);
        EXPECT_GE(r.gap, -1e-9);
    }
}

TEST(JointConvexity, HoldsOnRandomMixtures) {
    for (int n = 0; n < 200; ++n) {
        int d = 2 + n % 3;
        CMat s1 = full_rank(d, derive_seed(43, 4 * n)).matrix(), s2 = full_rank(d, derive_seed(43, 4 * n + 1)).matrix();
        CMat w1 = full_rank(d, derive_seed(43, 4 * n + 2)).matrix(), w2 = full_rank(d, derive_seed(43, 4 * n + 3)).matrix();
        for (double l : {0.25, 0.5, 0.75}) {
            double lhs = relative_entropy(DensityMatrix(l * s1 + (1 - l) * s2), DensityMatrix(l * w1 + (1 - l) * w2)).value;
            double rhs = l * relative_entropy(DensityMatrix(s1), DensityMatrix(w1)).value +
                         (1 - l) * relative_entropy(DensityMatrix(s2), DensityMatrix(w2)).value;
            EXPECT_LE(lhs, rhs + 1e-9);
        }
    }
}

TEST(RandomDensityMatrix, DeterminismAndRank) {
    EXPECT_EQ(max_abs(random_density_matrix(4, 2, 99).matrix() - random_density_matrix(4, 2, 99).matrix()), 0.0);
    DensityMatrix full = random_density_matrix(4, 4, 3);
    EXPECT_GT(full.eigenvalues().minCoeff(), 0.0);
    DensityMatrix r2 = random_density_matrix(5, 2, 3);
    int nonzero = 0;
    for (Eigen::Index i = 0; i < 5; ++i) nonzero += r2.eigenvalues()(i) > 1e-12;
    EXPECT_EQ(nonzero, 2);
    EXPECT_THROW(random_density_matrix(3, 4, 1), ParameterError);
}
