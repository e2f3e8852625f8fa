#include "arrowlab/qbm.hpp"

#include <gtest/gtest.h>

using namespace arrowlab;
using namespace arrowlab::qbm;

namespace {

KineticModel small(int d = 1, double nu = 0.3) {
    KineticModel m;
    m.d = d;
    m.n_p = 8;
    m.nu = nu;
    m.kernel_width = 1.5;
    m.splitting = 0.4;
    return m;
}

// D = 2 sum_i pi_i v_i . x_i with (-G + 1 pi^T) x = v, no eigendecomposition.
double diffusion_by_linear_solve(const JumpKernel& k) {
    const int n = k.n_states();
    Eigen::MatrixXd g = k.rates;
    g.diagonal() = -k.exit;
    Eigen::MatrixXd a = -g + Eigen::VectorXd::Ones(n) * k.gibbs.transpose();
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(a);
    double d = 0;
    for (int c = 0; c < k.vel.cols(); ++c) {
        Eigen::VectorXd x = lu.solve(k.vel.col(c));
        d += 2.0 * k.gibbs.cwiseProduct(k.vel.col(c)).dot(x);
    }
    return d;
}

} // namespace

TEST(KineticModelTest, Validation) {
    KineticModel m = small();
    m.n_p = 9;
    try {
        m.validate();
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("n_p even"), std::string::npos);
    }
    m = small();
    m.n_p = 6;
    EXPECT_THROW(m.validate(), ValidationError);
    m = small();
    m.nu = 0;
    EXPECT_THROW(m.validate(), ValidationError);
}

TEST(BuildKernel, DisconnectedChainRejected) {
    KineticModel m = small();
    m.kernel_width = 0.05;
    EXPECT_THROW(build_kernel(m), ValidationError);
}

TEST(BuildKernel, EqualEnergyTransitionsAreSymmetric) {
    KineticModel m = small(2);
    JumpKernel k = build_kernel(m);
    int checked = 0;
    for (int i = 0; i < k.n_states(); ++i)
        for (int j = 0; j < k.n_states(); ++j)
            if (i != j && std::abs(m.energy(i) - m.energy(j)) < 1e-15) {
                EXPECT_EQ(k.rates(i, j), k.rates(j, i));
                ++checked;
            }
    EXPECT_GT(checked, 0);
}

TEST(BuildKernel, CouplingSquaredPrefactor) {
    // Where the Metropolis factor is 1 at both couplings, doubling nu scales rates by 4.
    KineticModel a = small(2, 0.2), b = small(2, 0.4);
    JumpKernel ka = build_kernel(a), kb = build_kernel(b);
    int checked = 0;
    for (int i = 0; i < ka.n_states(); ++i)
        for (int j = 0; j < ka.n_states(); ++j)
            if (i != j && a.energy(j) <= a.energy(i) && b.energy(j) <= b.energy(i) && ka.rates(i, j) > 0) {
                EXPECT_NEAR(kb.rates(i, j), 4.0 * ka.rates(i, j), 1e-15 * kb.rates(i, j));
                ++checked;
            }
    EXPECT_GT(checked, 100);
}

TEST(BuildKernel, GibbsStationaryAndDetailedBalance) {
    for (int d : {1, 2, 3}) {
        KineticModel m = small(d);
        JumpKernel k = build_kernel(m);
        EXPECT_LE(k.detailed_balance_residual, 1e-10);
        const int n = k.n_states();
        std::vector<double> w(n);
        double z = 0;
        for (int s = 0; s < n; ++s) z += (w[s] = std::exp(-m.beta * m.energy(s)));
        double worst = 0;
        for (int j = 0; j < n; ++j) {
            double in = 0, out = 0;
            for (int i = 0; i < n; ++i) {
                in += w[i] / z * k.rates(i, j);
                out += w[j] / z * k.rates(j, i);
            }
            worst = std::max(worst, std::abs(in - out));
        }
        EXPECT_LE(worst, 1e-10);
        EXPECT_LE(k.stationarity_residual, 1e-10);
    }
}

TEST(SampleTrajectory, BallisticWithoutJumps) {
    KineticModel m = small(2, 1e-7);
    JumpKernel k = build_kernel(m);
    JumpSampler js(k);
    const double t_max = 10.0;
    Path p = sample_trajectory(js, 2, t_max, {2.0, 5.0, 10.0}, 42, 5, true);
    ASSERT_TRUE(p.jump_times.empty());
    auto v = m.velocity(5);
    EXPECT_NEAR(p.x_obs[1][0], v[0] * 5.0, 1e-12 * std::abs(v[0] * 5.0) + 1e-300);
    EXPECT_NEAR(p.x_obs[2][1], v[1] * 10.0, 1e-12 * std::abs(v[1] * 10.0) + 1e-300);
}

TEST(SampleTrajectory, EveryObservationIsRecorded) {
    KineticModel m = small(2);
    JumpKernel k = build_kernel(m);
    JumpSampler js(k);
    const double t_max = 3.0;
    std::vector<double> obs{1.0, 2.0, t_max};
    Path p = sample_trajectory(js, 2, t_max, obs, 7);
    EXPECT_EQ(p.x_obs.size(), obs.size());
    EXPECT_THROW(sample_trajectory(js, 2, t_max, {1.0, std::nextafter(t_max, 4.0)}, 7), ParameterError);
}

TEST(SampleTrajectory, SameSeedSamePath) {
    KineticModel m = small(2);
    JumpKernel k = build_kernel(m);
    JumpSampler js(k);
    Path a = sample_trajectory(js, 2, 200.0, {50.0, 200.0}, 7, -1, true);
    Path b = sample_trajectory(js, 2, 200.0, {50.0, 200.0}, 7, -1, true);
    EXPECT_EQ(a.states, b.states);
    EXPECT_EQ(a.jump_times, b.jump_times);
    EXPECT_EQ(a.x_obs, b.x_obs);
    EXPECT_GT(a.jump_times.size(), 5u);
}

TEST(SampleTrajectory, InternalLevelOccupationMatchesGibbs) {
    KineticModel m = small(1);
    JumpKernel k = build_kernel(m);
    const int n = 4000;
    PathEnsemble e = run_ensemble(m, k, n, 20.0 * k.mean_waiting_time(), {}, 99);
    double p_up = 0;
    for (int s = 0; s < k.n_states(); s += 2) p_up += k.gibbs(s);
    int up = 0;
    for (int s : e.final_states) up += KineticModel::sigma_of(s) == 1;
    EXPECT_NEAR(static_cast<double>(up) / n, p_up, 3.0 * std::sqrt(p_up * (1 - p_up) / n));
}

TEST(MsdEstimate, BallisticEnsembleFlagged) {
    KineticModel m = small(1, 1e-6);
    JumpKernel k = build_kernel(m);
    std::vector<double> obs;
    for (int i = 1; i <= 40; ++i) obs.push_back(i * 0.25);
    PathEnsemble e = run_ensemble(m, k, 200, 10.0, obs, 5);
    MsdResult r = msd_estimate(e, 1.0, 10.0, 20, 1);
    EXPECT_TRUE(r.ballistic);
    EXPECT_NEAR(r.loglog_slope, 2.0, 1e-6);
    EXPECT_LT(r.r2, 0.99);
    EXPECT_TRUE(r.pre_asymptotic);
}

TEST(MsdEstimate, Preconditions) {
    KineticModel m = small(1);
    JumpKernel k = build_kernel(m);
    PathEnsemble e = run_ensemble(m, k, 50, 10.0, {1.0, 5.0, 10.0}, 5);
    EXPECT_THROW(msd_estimate(e, 1.0, 10.0), ParameterError);
    PathEnsemble f = run_ensemble(m, k, 100, 10.0, {1.0, 5.0, 10.0}, 5);
    EXPECT_THROW(msd_estimate(f, 1.0, 20.0), ParameterError);
}

TEST(GreenKubo, EquipartitionMomentAndMonotoneDecay) {
    KineticModel m = small(2);
    JumpKernel k = build_kernel(m);
    GreenKuboResult g = green_kubo(k, 40.0 / slowest_rate(generator_spectrum(k)), 2000);
    double c0 = 0, z = 0;
    for (int s = 0; s < k.n_states(); ++s) {
        double w = std::exp(-m.beta * m.energy(s));
        auto v = m.velocity(s);
        c0 += w * (v[0] * v[0] + v[1] * v[1]);
        z += w;
    }
    EXPECT_NEAR(g.c0, c0 / z, 1e-12 * c0 / z);
    for (std::size_t i = 1; i < g.c.size(); ++i) EXPECT_LE(g.c[i], g.c[i - 1] * (1 + 1e-12) + 1e-300);
}

TEST(GreenKubo, MatchesLinearSolveOracle) {
    for (int d : {1, 2, 3}) {
        KineticModel m = small(d);
        JumpKernel k = build_kernel(m);
        GeneratorSpectrum sp = generator_spectrum(k);
        GreenKuboResult g = green_kubo(sp, 30.0 / slowest_rate(sp), 4000);
        double ref = diffusion_by_linear_solve(k);
        EXPECT_NEAR(g.D_gk, ref, 1e-3 * ref);
    }
}

TEST(GreenKubo, ReflectionInvariance) {
    KineticModel m = small(2);
    JumpKernel k = build_kernel(m);
    // Reflect p -> -p on the grid: index j -> (n_p - j) mod n_p per axis.
    const int n = k.n_states();
    std::vector<int> perm(n);
    for (int s = 0; s < n; ++s) {
        int mi = s / 2, out = 0, stride = 1;
        for (int i = 0; i < m.d; ++i) {
            int j = mi % m.n_p;
            mi /= m.n_p;
            out += ((m.n_p - j) % m.n_p) * stride;
            stride *= m.n_p;
        }
        perm[s] = 2 * out + s % 2;
    }
    JumpKernel r = k;
    for (int i = 0; i < n; ++i) {
        r.exit(perm[i]) = k.exit(i);
        r.gibbs(perm[i]) = k.gibbs(i);
        r.vel.row(perm[i]) = k.vel.row(i);
        for (int j = 0; j < n; ++j) r.rates(perm[i], perm[j]) = k.rates(i, j);
    }
    double tmax = 30.0 / slowest_rate(generator_spectrum(k));
    EXPECT_NEAR(green_kubo(r, tmax, 2000).D_gk, green_kubo(k, tmax, 2000).D_gk, 1e-10 * green_kubo(k, tmax, 2000).D_gk);
}

TEST(GreenKubo, ShortHorizonRejected) {
    KineticModel m = small(1);
    JumpKernel k = build_kernel(m);
    EXPECT_THROW(green_kubo(k, 0.1 / slowest_rate(generator_spectrum(k)), 100), ParameterError);
}

TEST(MsdEstimate, AgreesWithGreenKuboOnSmallChain) {
    KineticModel m = small(1, 0.3);
    JumpKernel k = build_kernel(m);
    const double tc = k.mean_waiting_time();
    std::vector<double> obs;
    for (int i = 1; i <= 100; ++i) obs.push_back(i * tc);
    PathEnsemble e = run_ensemble(m, k, 3000, 100 * tc, obs, 11);
    MsdResult r = msd_estimate(e, 10 * tc, 100 * tc, 50, 3);
    double dgk = diffusion_by_linear_solve(k);
    EXPECT_NEAR(r.D_hat, dgk, 0.1 * dgk);
    EXPECT_GE(r.r2, 0.99);
    EXPECT_FALSE(r.pre_asymptotic);
    EXPECT_LE(r.ci_low, r.D_hat);
    EXPECT_GE(r.ci_high, r.D_hat);
}
