#include "arrowlab/friction.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace arrowlab;
using namespace arrowlab::friction;

namespace {

const double pi = std::numbers::pi;

FrictionModel statics_model(int d, double L = 256, int N = 256) {
    FrictionModel m;
    m.d = d;
    m.L = L;
    m.N = N;
    m.a = 2.0;
    m.w0 = 1.0;
    m.eps_reg = 0.04;
    m.kcut = 3.5;
    return m;
}

FrictionModel dynamics_model(int d, int N, double a, double L, double w0, double t_max) {
    FrictionModel m;
    m.d = d;
    m.N = N;
    m.a = a;
    m.L = L;
    m.w0 = w0;
    m.t_max = t_max;
    return m;
}

// Closed forms of the continuum shell integral for the ideal dispersion.
double shell_oracle_ideal(const FrictionModel& m, double v) {
    double c = std::pow(m.w0, 2) * std::pow(2 * pi * m.a * m.a, m.d);
    double a2 = m.a * m.a;
    if (m.d == 1) return c * std::exp(-a2 * v * v);
    if (m.d == 2) {
        double x = a2 * v * v;
        return c * v / pi * (pi / 4) * std::exp(-x / 2) * (std::cyl_bessel_i(0.0, x / 2) - std::cyl_bessel_i(1.0, x / 2));
    }
    double x = a2 * v * v;
    return c / (2 * pi * v * v) * (1 - (1 + x) * std::exp(-x)) / (2 * a2 * a2);
}

double dot(const Vec& a, const Vec& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

} // namespace

TEST(FrictionModelTest, Validation) {
    FrictionModel m = statics_model(3);
    EXPECT_NO_THROW(m.validate());
    m.N = 14;
    EXPECT_THROW(m.validate(), ValidationError);
    m = statics_model(3);
    m.N = 48;
    m.L = 48;
    EXPECT_NO_THROW(m.validate());
    m = statics_model(3);
    m.a = 1.5;
    try {
        m.validate();
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("a >= 2 * grid spacing"), std::string::npos);
    }
    m = statics_model(3);
    m.w0 = 0;
    EXPECT_THROW(m.validate(), ValidationError);
    m = statics_model(3);
    m.dispersion = Dispersion::bogoliubov;
    EXPECT_THROW(m.validate(), ValidationError);
}

TEST(Conventions, SpectralForceMatchesRealSpaceQuadrature) {
    for (int d : {1, 2, 3}) EXPECT_LE(convention_self_test(d), 1e-8) << "d = " << d;
}

TEST(StationaryProfile, RestProfileIsInverseLaplacian) {
    FrictionModel m = statics_model(3, 64, 64);
    EXPECT_LE(rest_profile_deviation(m), m.eps_reg * (1 + 1e-12));
    m.eps_reg = 1e-3;
    EXPECT_LE(rest_profile_deviation(m), m.eps_reg * (1 + 1e-12));
}

TEST(StationaryProfile, RestProfileRealAndRadial) {
    FrictionModel m = dynamics_model(3, 16, 2.0, 16.0, 1.0, 1.0);
    FieldState g0 = stationary_profile({0, 0, 0}, m);
    SpectralGrid g(m);
    for (std::size_t i = 0; i < g.size; ++i) {
        if (g.k2[i] == 0) continue;
        // Imaginary part is the eps regularization only.
        EXPECT_LE(std::abs(g0[i].imag()), m.eps_reg / g.k2[i] * std::abs(g0[i]) * (1 + 1e-12));
    }
    // Equal |k| gives equal values.
    for (std::size_t i = 0; i < g.size; ++i)
        for (std::size_t j = i + 1; j < g.size; ++j)
            if (std::abs(g.k2[i] - g.k2[j]) <= 1e-15 * g.k2[i]) {
                EXPECT_NEAR(g0[i].real(), g0[j].real(), 1e-13 * std::abs(g0[i]));
                EXPECT_NEAR(g0[i].imag(), g0[j].imag(), 1e-13 * std::abs(g0[i]));
            }
}

TEST(StationaryProfile, SubsonicBogoliubovImaginaryPartVanishes) {
    FrictionModel m = statics_model(2);
    m.dispersion = Dispersion::bogoliubov;
    m.vstar = 0.5;
    const double v[2] = {0.3, 0.1};
    const double e = 1e-4;
    double raw = 0, extrap = 0;
    for_each_lattice_k(m, [&](const double* k, double k2) {
        if (k2 == 0) return;
        double i1 = stationary_mode(m, v, k, e).imag(), i2 = stationary_mode(m, v, k, e / 2).imag();
        raw += std::abs(i1);
        extrap += std::abs(2 * i2 - i1);
    });
    EXPECT_LE(extrap, 1e-2 * raw);
}

TEST(FrictionForce, ZeroAtRest) {
    FrictionModel m = statics_model(3, 64, 64);
    for (auto method : {ForceMethod::eps_limit, ForceMethod::shell_quadrature})
        for (double f : friction_force({0, 0, 0}, m, method)) EXPECT_EQ(f, 0.0);
}

TEST(FrictionForce, ShellQuadratureMatchesClosedForms) {
    for (int d : {1, 2, 3}) {
        FrictionModel m = statics_model(d);
        for (double v : {0.1, 0.4, 1.0, 2.5}) {
            double ref = shell_oracle_ideal(m, v);
            EXPECT_NEAR(shell_force_magnitude(m, v), ref, 1e-10 * ref) << d << " " << v;
        }
    }
}

TEST(FrictionForce, DissipativeAndAntiparallel) {
    FrictionModel m = statics_model(3, 64, 64);
    for (Vec v : {Vec{0.7, 0.3, 0.2}, Vec{-0.2, 0.9, 0.1}, Vec{1.5, 0, 0}})
        for (auto method : {ForceMethod::eps_limit, ForceMethod::shell_quadrature}) {
            Vec f = friction_force(v, m, method);
            EXPECT_LE(dot(f, v), 1e-10 * norm(f) * norm(v));
            double cosang = -dot(f, v) / (norm(f) * norm(v));
            if (method == ForceMethod::shell_quadrature) {
                EXPECT_NEAR(cosang, 1.0, 1e-14);
            }
        }
}

TEST(FrictionForce, GridRotationEquivariance) {
    FrictionModel m = statics_model(3, 64, 64);
    const Vec v{0.7, 0.3, 0.2};
    Vec f = friction_force(v, m, ForceMethod::eps_limit);
    // Cyclic axis permutation.
    Vec fp = friction_force({v[2], v[0], v[1]}, m, ForceMethod::eps_limit);
    EXPECT_NEAR(fp[0], f[2], 1e-12 * norm(f));
    EXPECT_NEAR(fp[1], f[0], 1e-12 * norm(f));
    EXPECT_NEAR(fp[2], f[1], 1e-12 * norm(f));
    // Quarter turn about z: (x, y) -> (-y, x).
    Vec fq = friction_force({-v[1], v[0], v[2]}, m, ForceMethod::eps_limit);
    EXPECT_NEAR(fq[0], -f[1], 1e-12 * norm(f));
    EXPECT_NEAR(fq[1], f[0], 1e-12 * norm(f));
    EXPECT_NEAR(fq[2], f[2], 1e-12 * norm(f));
}

TEST(FrictionForce, EpsLimitAgreesWithShellAtUnitSpeed) {
    FrictionModel m = statics_model(3);
    ForceComparison c = friction_force_checked({1.0, 0, 0}, m);
    EXPECT_LE(c.rel_diff, 0.05);
}

TEST(FrictionForce, DisagreementReported) {
    FrictionModel m = statics_model(3, 32, 32);
    m.a = 2.0;
    m.eps_reg = 0.01;  // far below the lattice spacing 2 pi / 32
    try {
        friction_force_checked({0.5, 0, 0}, m);
        FAIL();
    } catch (const NumericalError& e) {
        std::string s = e.what();
        EXPECT_NE(s.find("resolution insufficient"), std::string::npos);
        EXPECT_NE(s.find("eps_limit"), std::string::npos);
        EXPECT_NE(s.find("shell_quadrature"), std::string::npos);
    }
}

TEST(ForceSpeedCurve, BranchesAndMarker) {
    FrictionModel m = statics_model(2);
    Vec grid;
    for (int i = 1; i <= 30; ++i) grid.push_back(0.05 * i);
    ForceSpeedCurve c = force_speed_curve(m, grid, {0.0, 0.5, 0.99, 1.2});
    ASSERT_TRUE(c.unimodal);
    ASSERT_TRUE(c.interior_max);
    EXPECT_GE(c.F_max, *std::max_element(c.F.begin(), c.F.end()));
    // Targets given as absolute forces, so rescale.
    ForceSpeedCurve d = force_speed_curve(m, grid, {0.0, 0.5 * c.F_max, 0.99 * c.F_max, 1.2 * c.F_max});
    ASSERT_EQ(d.branches.size(), 4u);
    EXPECT_EQ(d.branches[0].v_minus, 0.0);
    for (int i : {1, 2}) {
        const Branch& b = d.branches[i];
        ASSERT_TRUE(b.has_solution);
        ASSERT_TRUE(b.v_plus_in_grid);
        EXPECT_LT(b.v_minus, d.v_peak);
        EXPECT_GT(b.v_plus, d.v_peak);
        EXPECT_LE(std::abs(speed_force(m, b.v_minus, ForceMethod::eps_limit) - b.F), 1e-3 * d.F_max);
        EXPECT_LE(std::abs(speed_force(m, b.v_plus, ForceMethod::eps_limit) - b.F), 1e-3 * d.F_max);
    }
    EXPECT_LT(d.branches[2].v_plus - d.branches[2].v_minus, d.branches[1].v_plus - d.branches[1].v_minus);
    EXPECT_FALSE(d.branches[3].has_solution);
}

TEST(ForceSpeedCurve, GridPreconditions) {
    FrictionModel m = statics_model(1, 64, 64);
    EXPECT_THROW(force_speed_curve(m, {0.0, 0.1, 0.2}, {}), ParameterError);
    EXPECT_THROW(force_speed_curve(m, {0.1, 0.1, 0.2}, {}), ParameterError);
}

TEST(ForceSpeedCurve, MonotoneCurveHasNoInteriorMax) {
    // One-dimensional ideal force W_hat(v)^2 decreases from v = 0.
    FrictionModel m = statics_model(1, 1024, 1024);
    m.a = 2.0;
    Vec grid;
    for (int i = 1; i <= 20; ++i) grid.push_back(0.05 * i);
    ForceSpeedCurve c = force_speed_curve(m, grid, {0.5}, ForceMethod::shell_quadrature);
    EXPECT_FALSE(c.interior_max);
    EXPECT_TRUE(c.branches.empty());
}

TEST(Bogoliubov, NoFrictionBelowSoundSpeed) {
    FrictionModel m = statics_model(3, 128, 128);
    m.dispersion = Dispersion::bogoliubov;
    m.vstar = 0.5;
    m.eps_reg = 0.003;
    const Vec grid{0.1, 0.25, 0.4, 0.6, 0.75, 1.0, 1.5, 2.0};
    ForceSpeedCurve c = force_speed_curve(m, grid, {});
    double thr = 1e-3 * c.F_max;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (grid[i] <= 0.8 * m.vstar) {
            EXPECT_LE(c.F[i], thr) << grid[i];
        }
        if (grid[i] >= 1.5 * m.vstar) {
            EXPECT_GE(c.F[i], 10 * thr) << grid[i];
        }
        if (grid[i] <= m.vstar) {
            EXPECT_EQ(c.F_shell[i], 0.0);
        }
    }
}

TEST(EvolveCoupled, DecoupledParticleMovesFreely) {
    FrictionModel m = dynamics_model(2, 16, 2.0, 16.0, 1e-200, 5.0);
    m.F_ext = {0.02, -0.01};
    ParticleState p{{1.0, 2.0}, {0.3, 0.1}};
    SpectralGrid g(m);
    FieldState b = random_field(m, 0.1, 3);
    MomentumTrajectory tr = evolve_coupled(m, p, b, {1, 0});
    for (std::size_t i = 0; i < tr.times.size(); ++i) {
        double t = tr.times[i];
        for (int c = 0; c < 2; ++c) {
            double x = p.X[c] + p.P[c] / m.M0 * t + m.F_ext[c] * t * t / (2 * m.M0);
            EXPECT_NEAR(tr.X[i][c], x, 1e-12);
        }
    }
}

TEST(EvolveCoupled, RestSolutionIsFixedPoint) {
    FrictionModel m = dynamics_model(3, 16, 4.0, 32.0, 0.3, 20.0);
    Vec X{3.0, 5.0, 7.0};
    MomentumTrajectory tr = evolve_coupled(m, {X, {0, 0, 0}}, rest_profile(m, X), {5, 5});
    for (const auto& P : tr.P) EXPECT_LE(norm(P), 1e-10);
    for (double r : tr.residual) EXPECT_LE(r, 1e-12);
}

TEST(EvolveCoupled, StepTooLargeRejected) {
    FrictionModel m = dynamics_model(1, 16, 4.0, 32.0, 0.3, 20.0);
    m.dt = 1.0;
    EXPECT_THROW(evolve_coupled(m, {{0.0}, {0.01}}, FieldState(16, 0.0)), ParameterError);
}

TEST(EvolveCoupled, EnergyDriftSecondOrder) {
    FrictionModel m = dynamics_model(3, 16, 4.0, 32.0, 0.05, 30.0);
    m.dt = 0.5 / m.max_omega();
    ParticleState p{{0, 0, 0}, {0.05, 0.02, 0}};
    FieldState b(16 * 16 * 16, 0.0);
    double d1 = energy_drift(evolve_coupled(m, p, b, {1, 0}));
    m.dt *= 0.5;
    double d2 = energy_drift(evolve_coupled(m, p, b, {1, 0}));
    EXPECT_GE(d1 / d2, 3.0) << d1 << " " << d2;
}

TEST(MemoryEvolve, DecoupledMomentumConstant) {
    FrictionModel m = dynamics_model(2, 16, 2.0, 16.0, 1e-200, 5.0);
    ParticleState p{{0, 0}, {0.3, 0.1}};
    MomentumTrajectory tr = memory_evolve(m, p, FieldState(256, 0.0));
    for (const auto& P : tr.P) {
        EXPECT_EQ(P[0], 0.3);
        EXPECT_EQ(P[1], 0.1);
    }
}

TEST(MemoryEvolve, IncompatibleHistoryStepRejected) {
    FrictionModel m = dynamics_model(1, 16, 4.0, 32.0, 0.3, 2.0);
    EXPECT_THROW(memory_evolve(m, {{0.0}, {0.01}}, FieldState(16, 0.0), m.step() / 2.5), ParameterError);
    EXPECT_NO_THROW(memory_evolve(m, {{0.0}, {0.01}}, FieldState(16, 0.0), m.step() / 2));
}

TEST(MemoryEvolve, AgreesWithCoupledSolver) {
    FrictionModel m = dynamics_model(3, 16, 4.0, 32.0, 0.05, 40.0);
    ParticleState p{{0, 0, 0}, {0.05, 0.02, 0}};
    for (bool with_field : {false, true}) {
        FieldState b = with_field ? random_field(m, 0.01, 9) : FieldState(4096, 0.0);
        MomentumTrajectory a = evolve_coupled(m, p, b, {1, 0});
        MomentumTrajectory c = memory_evolve(m, p, b);
        EXPECT_LE(trajectory_deviation(a, c), 0.01) << with_field;
    }
}

TEST(EvolveCoupled, StationaryBranchIsMaintained) {
    // Weakly coupled particle on the rising branch; the external force balances
    // friction. Without it the particle loses several times more speed.
    FrictionModel m = dynamics_model(2, 512, 2.0, 512.0, 0.01, 20.0);
    m.eps_reg = 0.01;
    m.kcut = 3.5;
    const double v = 0.3;
    Vec f = friction_force({v, 0}, m, ForceMethod::eps_limit);
    m.kcut = 0;
    Vec X{0, 0};
    FieldState b = stationary_profile({v, 0}, m, X);
    auto worst_dev = [&](const FrictionModel& mm) {
        MomentumTrajectory tr = evolve_coupled(mm, {X, {v * mm.M0, 0}}, b, {10, 0});
        double worst = 0;
        for (std::size_t i = 0; i < tr.times.size(); ++i)
            if (tr.times[i] <= 0.5 * mm.t_max) {
                Vec dv{tr.P[i][0] / mm.M0 - v, tr.P[i][1] / mm.M0};
                worst = std::max(worst, norm(dv));
            }
        return worst;
    };
    double free_dev = worst_dev(m);
    m.F_ext = {-f[0], -f[1]};
    double held_dev = worst_dev(m);
    EXPECT_LE(held_dev, 0.02 * v);
    EXPECT_GE(free_dev, 3 * held_dev);
}

TEST(DecayFit, PreconditionsAndWrapRefusal) {
    FrictionModel m = dynamics_model(3, 16, 4.0, 32.0, 0.05, 60.0);
    ParticleState p{{0, 0, 0}, {0.01, 0, 0}};
    MomentumTrajectory tr = evolve_coupled(m, p, FieldState(4096, 0.0), {1, 5});
    ASSERT_TRUE(tr.wrap_warning);
    EXPECT_THROW(decay_fit(tr, {0.1}, 0.05), DomainError);
    MomentumTrajectory big = tr;
    big.initial_speed = 1.0;
    EXPECT_THROW(decay_fit(big, {0.1}, 0.05), ParameterError);
}

TEST(DecayFit, PowerLawEnvelopeRecovered) {
    MomentumTrajectory tr;
    for (int i = 0; i <= 4000; ++i) {
        double t = 0.05 * i;
        tr.times.push_back(t);
        double s = 0.01 * std::pow(1 + t, -0.8) * (1.0 + 0.3 * std::cos(3 * t));
        tr.P.push_back({s, 0, 0});
    }
    tr.initial_speed = 0.013;
    DecayFit f = decay_fit(tr, {0.1, 0.3}, 0.05);
    EXPECT_NEAR(f.alpha, -0.8, 0.05);
    EXPECT_LE(f.ci_low, f.alpha);
    EXPECT_GE(f.ci_high, f.alpha);
    EXPECT_EQ(f.bdelta.size(), 2u);
    EXPECT_TRUE(std::isfinite(f.bdelta[0].second));
}
