#pragma once

// Command pipelines shared by the command line tool and the acceptance run.
// Each command parses its config eagerly (prepare) and then runs against a
// sink that receives payload files as soon as they exist, so a failure late
// in a pipeline still leaves the earlier outputs behind.

#include "arrowlab/config.hpp"
#include "arrowlab/error.hpp"
#include "arrowlab/eth.hpp"
#include "arrowlab/friction.hpp"
#include "arrowlab/io.hpp"
#include "arrowlab/numeric.hpp"
#include "arrowlab/qbm.hpp"
#include "arrowlab/qcore.hpp"
#include "arrowlab/thermo.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace arrowlab::commands {

using config::Reader;
using io::CsvTable;
using io::Json;
using io::Sink;

struct Check {
    std::string name;
    bool passed = false;
    double value = 0;
    double limit = 0;
    std::string relation;  // how value is compared with limit
};

struct Outcome {
    std::vector<Check> checks;

    void le(const std::string& name, double value, double limit) { add(name, value <= limit, value, limit, "<="); }
    void ge(const std::string& name, double value, double limit) { add(name, value >= limit, value, limit, ">="); }
    void lt(const std::string& name, double value, double limit) { add(name, value < limit, value, limit, "<"); }
    void gt(const std::string& name, double value, double limit) { add(name, value > limit, value, limit, ">"); }
    void truth(const std::string& name, bool ok) { add(name, ok, ok ? 1.0 : 0.0, 1.0, "=="); }
    void add(const std::string& name, bool ok, double value, double limit, const std::string& rel) {
        // NaN never passes.
        checks.push_back({name, ok && !std::isnan(value), value, limit, rel});
    }
    bool passed() const {
        return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
    }
    Json json() const {
        Json a = Json::array();
        for (const auto& c : checks)
            a.push_back(Json{{"name", c.name}, {"passed", c.passed}, {"value", c.value}, {"relation", c.relation},
                             {"limit", c.limit}});
        return a;
    }
};

using Pipeline = std::function<Json(std::uint64_t seed, Sink&, Outcome&)>;

struct Prepared {
    std::string command;
    Json resolved;           // config with defaults filled
    std::uint64_t seed = 1;  // seed named in the config
    Pipeline run;
};

inline Json vec_json(const std::vector<double>& v) {
    Json a = Json::array();
    for (double x : v) a.push_back(x);
    return a;
}

// ------------------------------------------------------------------- qcore

struct EntropySuiteConfig {
    int instances = 1000;
    std::vector<int> state_dims{2, 3, 4};
    std::vector<std::array<int, 3>> ssa_dims{{2, 2, 2}, {2, 3, 2}};
    int kraus = 3;
    double tol_klein = 1e-10, tol_relative = 1e-10, tol_ssa = 1e-9, tol_monotonicity = 1e-9, tol_convexity = 1e-9;
};

inline EntropySuiteConfig parse_entropy_suite(Reader& r) {
    EntropySuiteConfig c;
    c.instances = r.get<int>("instances", c.instances);
    c.state_dims = r.get<std::vector<int>>("state_dims", c.state_dims);
    std::vector<std::vector<int>> sd{{2, 2, 2}, {2, 3, 2}};
    sd = r.get<std::vector<std::vector<int>>>("ssa_dims", sd);
    c.ssa_dims.clear();
    for (const auto& d : sd) {
        if (d.size() != 3 || *std::min_element(d.begin(), d.end()) < 1) r.fail("ssa_dims", "triples of positive integers");
        c.ssa_dims.push_back({d[0], d[1], d[2]});
    }
    c.kraus = r.get<int>("kraus", c.kraus);
    Reader t = r.child_or_empty("tolerances");
    c.tol_klein = t.get<double>("klein", c.tol_klein);
    c.tol_relative = t.get<double>("relative_entropy", c.tol_relative);
    c.tol_ssa = t.get<double>("ssa", c.tol_ssa);
    c.tol_monotonicity = t.get<double>("monotonicity", c.tol_monotonicity);
    c.tol_convexity = t.get<double>("joint_convexity", c.tol_convexity);
    r.put("tolerances", t.finish());
    if (c.instances < 1) r.fail("instances", "instances >= 1");
    if (c.state_dims.empty() || *std::min_element(c.state_dims.begin(), c.state_dims.end()) < 2)
        r.fail("state_dims", "nonempty, each dim >= 2");
    if (c.ssa_dims.empty()) r.fail("ssa_dims", "nonempty");
    if (c.kraus < 1) r.fail("kraus", "kraus >= 1");
    return c;
}

inline Json run_entropy_suite(const EntropySuiteConfig& c, std::uint64_t seed, Sink& sink, Outcome& out) {
    std::vector<std::string> cols{"instance", "dim", "klein_xlogx", "klein_square", "relative_entropy"};
    std::vector<std::string> ssa_names;
    for (auto d : c.ssa_dims)
        ssa_names.push_back("ssa_" + std::to_string(d[0]) + "x" + std::to_string(d[1]) + "x" + std::to_string(d[2]));
    cols.insert(cols.end(), ssa_names.begin(), ssa_names.end());
    cols.push_back("monotonicity");
    cols.push_back("joint_convexity_violation");

    struct Row {
        int dim = 0;
        double kx = 0, ks = 0, rel = 0, mono = 0, conv = 0;
        std::vector<double> ssa;
    };
    std::vector<Row> rows(c.instances);
    parallel_for(static_cast<std::size_t>(c.instances), [&](std::size_t i) {
        const std::uint64_t s = derive_seed(seed, i);
        auto sub = [&](std::uint64_t j) { return derive_seed(s, j); };
        Row& row = rows[i];
        const int dim = c.state_dims[i % c.state_dims.size()];
        row.dim = dim;
        std::mt19937_64 rng(sub(0));
        std::uniform_int_distribution<int> rank(1, dim);
        std::uniform_real_distribution<double> unit(0.0, 1.0);

        DensityMatrix a = random_density_matrix(dim, dim, sub(1)), b = random_density_matrix(dim, dim, sub(2));
        row.kx = klein_gap(a.matrix(), b.matrix(), ConvexFn::x_log_x);
        std::mt19937_64 hr(sub(3));
        CMat ga = ginibre(dim, dim, hr), gb = ginibre(dim, dim, hr);
        row.ks = klein_gap(0.5 * (ga + ga.adjoint()), 0.5 * (gb + gb.adjoint()), ConvexFn::x_squared);

        DensityMatrix sig = random_density_matrix(dim, rank(rng), sub(4)), om = random_density_matrix(dim, dim, sub(5));
        row.rel = relative_entropy(sig, om).to_double();

        for (std::size_t k = 0; k < c.ssa_dims.size(); ++k) {
            auto d = c.ssa_dims[k];
            const int n = d[0] * d[1] * d[2];
            std::uniform_int_distribution<int> rk(1, n);
            TripartiteState t{random_density_matrix(n, rk(rng), sub(6 + k)), {d[0], d[1], d[2]}};
            row.ssa.push_back(ssa_gap(t));
        }

        const std::uint64_t base = 6 + c.ssa_dims.size();
        QuantumChannel ch = random_channel(dim, dim, c.kraus, sub(base));
        MonotonicityResult mr = monotonicity_gap(random_density_matrix(dim, rank(rng), sub(base + 1)),
                                                 random_density_matrix(dim, dim, sub(base + 2)), ch);
        row.mono = mr.comparable ? mr.gap : std::nan("");

        const double lam = unit(rng);
        DensityMatrix s1 = random_density_matrix(dim, dim, sub(base + 3)), s2 = random_density_matrix(dim, dim, sub(base + 4));
        DensityMatrix o1 = random_density_matrix(dim, dim, sub(base + 5)), o2 = random_density_matrix(dim, dim, sub(base + 6));
        DensityMatrix sm(lam * s1.matrix() + (1 - lam) * s2.matrix()), omx(lam * o1.matrix() + (1 - lam) * o2.matrix());
        row.conv = relative_entropy(sm, omx).value -
                   (lam * relative_entropy(s1, o1).value + (1 - lam) * relative_entropy(s2, o2).value);
    });

    CsvTable t(cols);
    double kx = INFINITY, ks = INFINITY, rel = INFINITY, mono = INFINITY, conv = -INFINITY;
    std::vector<double> ssa(c.ssa_dims.size(), INFINITY);
    for (int i = 0; i < c.instances; ++i) {
        const Row& r = rows[i];
        std::vector<std::pair<std::string, CsvTable::Cell>> cells{
            {"instance", static_cast<long long>(i)}, {"dim", static_cast<long long>(r.dim)},
            {"klein_xlogx", r.kx}, {"klein_square", r.ks}, {"relative_entropy", r.rel},
            {"monotonicity", r.mono}, {"joint_convexity_violation", r.conv}};
        for (std::size_t k = 0; k < ssa.size(); ++k) {
            cells.emplace_back(ssa_names[k], r.ssa[k]);
            ssa[k] = std::min(ssa[k], r.ssa[k]);
        }
        t.add(cells);
        kx = std::min(kx, r.kx);
        ks = std::min(ks, r.ks);
        rel = std::min(rel, r.rel);
        if (!std::isnan(r.mono)) mono = std::min(mono, r.mono);
        conv = std::max(conv, r.conv);
    }
    sink.csv("gaps.csv", t);

    out.ge("klein_gap_xlogx_min", kx, -c.tol_klein);
    out.ge("klein_gap_square_min", ks, -c.tol_klein);
    out.ge("relative_entropy_min", rel, -c.tol_relative);
    for (std::size_t k = 0; k < ssa.size(); ++k) out.ge(ssa_names[k] + "_min", ssa[k], -c.tol_ssa);
    out.ge("monotonicity_gap_min", mono, -c.tol_monotonicity);
    out.le("joint_convexity_violation_max", conv, c.tol_convexity);

    Json s;
    s["instances"] = c.instances;
    s["klein_gap_xlogx_min"] = kx;
    s["klein_gap_square_min"] = ks;
    s["relative_entropy_min"] = rel;
    Json sj = Json::object();
    for (std::size_t k = 0; k < ssa.size(); ++k) sj[ssa_names[k]] = ssa[k];
    s["ssa_gap_min"] = sj;
    s["monotonicity_gap_min"] = mono;
    s["joint_convexity_violation_max"] = conv;
    return s;
}

// ------------------------------------------------------------------ thermo

inline thermo::Profile parse_profile(Reader& r) {
    thermo::Profile p;
    std::string kind = r.get<std::string>("kind", std::string("constant"));
    using K = thermo::Profile::Kind;
    if (kind == "constant") {
        p.kind = K::constant;
        p.value = r.get<double>("value", 1.0);
    } else if (kind == "cosine") {
        p.kind = K::cosine;
        p.offset = r.get<double>("offset", 0.0);
        p.amplitude = r.get<double>("amplitude", 0.0);
        p.phase = r.get<double>("phase", 0.0);
    } else if (kind == "ramp" || kind == "smoothstep") {
        p.kind = kind == "ramp" ? K::ramp : K::smoothstep;
        p.from = r.get<double>("from");
        p.to = r.get<double>("to");
    } else if (kind == "table") {
        p.kind = K::table;
        p.s = r.get<std::vector<double>>("s");
        p.values = r.get<std::vector<double>>("values");
    } else {
        r.fail("kind", "one of constant, cosine, ramp, smoothstep, table");
    }
    p.validate();
    return p;
}

inline thermo::ContactModel parse_contact_model(Reader& r) {
    thermo::ContactModel m;
    auto dims = r.get<std::vector<int>>("dims");
    if (dims.size() != 3) r.fail("dims", "three entries (n1, nC, n2)");
    m.dims = {dims[0], dims[1], dims[2]};
    for (int d : dims)
        if (d < 1) r.fail("dims", "dims must be positive");
    m.h1 = config::operator_at(r, "h1");
    m.h2 = config::operator_at(r, "h2");
    m.tau = r.get<double>("tau", 1.0);
    m.periodic = r.get<bool>("periodic", false);
    m.beta1 = r.get<double>("beta1", 1.0);
    m.beta2 = r.get<double>("beta2", 1.0);
    m.kB = r.get<double>("kB", 1.0);
    const Json& terms = r.raw("coupling");
    if (!terms.is_array()) r.fail("coupling", "expected an array of terms");
    Json echo = Json::array();
    for (std::size_t i = 0; i < terms.size(); ++i) {
        Reader t = r.child_at("coupling", i);
        thermo::CouplingTerm c;
        c.op = config::operator_at(t, "op");
        Reader pr = t.child_or_empty("profile");
        c.profile = parse_profile(pr);
        t.put("profile", pr.finish());
        m.hc.push_back(c);
        echo.push_back(t.finish());
    }
    r.put("coupling", echo);
    m.validate();
    return m;
}

inline thermo::ContactModel model_at(Reader& parent, const std::string& key) {
    Reader r = parent.child(key);
    thermo::ContactModel m = parse_contact_model(r);
    parent.put(key, r.finish());
    return m;
}

struct ThermoEvolveConfig {
    thermo::ContactModel model;
    double t_max = 60;
    long intervals = 1200;
    double dt_sub = 0.01;
    std::vector<double> window;  // empty: no Clausius check
    double balance_tol = 1e-3;
    double s_rel_floor = -1e-10;
};

inline ThermoEvolveConfig parse_thermo_evolve(Reader& r) {
    ThermoEvolveConfig c;
    c.model = model_at(r, "model");
    c.t_max = r.get<double>("t_max", c.t_max);
    c.intervals = r.get<long>("intervals", c.intervals);
    c.dt_sub = r.get<double>("dt_sub", c.dt_sub);
    c.window = r.get<std::vector<double>>("window", c.window);
    c.balance_tol = r.get<double>("balance_tol", c.balance_tol);
    c.s_rel_floor = r.get<double>("s_rel_floor", c.s_rel_floor);
    if (!(c.t_max > 0)) r.fail("t_max", "t_max > 0");
    if (c.intervals < 2) r.fail("intervals", "intervals >= 2");
    if (!(c.dt_sub > 0) || c.dt_sub > c.t_max / c.intervals * (1 + 1e-9))
        r.fail("dt_sub", "0 < dt_sub <= t_max / intervals");
    if (!c.window.empty() && (c.window.size() != 2 || !(c.window[0] >= 0 && c.window[0] < c.window[1] &&
                                                          c.window[1] <= c.t_max)))
        r.fail("window", "0 <= window[0] < window[1] <= t_max");
    return c;
}

inline Json run_thermo_evolve(const ThermoEvolveConfig& c, std::uint64_t, Sink& sink, Outcome& out) {
    const thermo::ContactModel& m = c.model;
    thermo::ThermoTrajectory tr =
        thermo::evolve(m, thermo::reference_state(m), thermo::uniform_grid(0.0, c.t_max, c.intervals), c.dt_sub);
    std::vector<thermo::BalanceRecord> bal = thermo::entropy_balance(m, tr);
    CsvTable t({"t", "P1", "P2", "S_rel", "dS_dt", "beta_weighted_power", "residual", "interior", "U_C", "work_rate",
                "E1", "E2"});
    double worst = 0, s_min = INFINITY;
    for (std::size_t i = 0; i < tr.t.size(); ++i) {
        const auto& b = bal[i];
        t.add({{"t", tr.t[i]}, {"P1", tr.p1[i]}, {"P2", tr.p2[i]}, {"S_rel", tr.s_rel[i]}, {"dS_dt", b.ds_dt},
               {"beta_weighted_power", b.beta_weighted_power}, {"residual", b.residual},
               {"interior", static_cast<long long>(!b.flagged)}, {"U_C", tr.u_c[i]}, {"work_rate", tr.work_rate[i]},
               {"E1", tr.e1[i]}, {"E2", tr.e2[i]}});
        if (!b.flagged) worst = std::max(worst, b.residual);
        s_min = std::min(s_min, tr.s_rel_infinite[i] ? INFINITY : tr.s_rel[i]);
    }
    sink.csv("trajectory.csv", t);
    out.le("entropy_balance_residual_max", worst, c.balance_tol);
    out.ge("relative_entropy_min", s_min, c.s_rel_floor);

    Json s;
    s["points"] = tr.t.size();
    s["entropy_balance_residual_max"] = worst;
    s["relative_entropy_min"] = s_min;
    s["relative_entropy_final"] = tr.s_rel.back();
    s["trace_drift"] = tr.trace_drift;
    s["spectrum_drift"] = tr.spectrum_drift;
    if (!c.window.empty()) {
        thermo::ClausiusResult cl = thermo::clausius_flow(m, tr, c.window[0], c.window[1]);
        Json j;
        j["window"] = vec_json(c.window);
        j["P1_bar"] = cl.p1_bar;
        j["P2_bar"] = cl.p2_bar;
        j["T1"] = m.temperature1();
        j["T2"] = m.temperature2();
        s["clausius"] = j;
        if (m.beta1 != m.beta2) {
            // The hotter reservoir loses heat, the colder one absorbs it.
            const double hot = m.beta1 < m.beta2 ? cl.p1_bar : cl.p2_bar;
            const double cold = m.beta1 < m.beta2 ? cl.p2_bar : cl.p1_bar;
            out.lt("clausius_hot_power_bar", hot, 0.0);
            out.gt("clausius_cold_power_bar", cold, 0.0);
        }
    }
    return s;
}

struct ThermoCarnotConfig {
    thermo::ContactModel model;
    int n_transient = 10, n_measure = 5, steps_per_cycle = 400;
    double eta_slack = 0.02;
    double ds_floor = -1e-6;
};

inline ThermoCarnotConfig parse_thermo_carnot(Reader& r) {
    ThermoCarnotConfig c;
    c.model = model_at(r, "model");
    c.n_transient = r.get<int>("n_transient", c.n_transient);
    c.n_measure = r.get<int>("n_measure", c.n_measure);
    c.steps_per_cycle = r.get<int>("steps_per_cycle", c.steps_per_cycle);
    c.eta_slack = r.get<double>("eta_slack", c.eta_slack);
    c.ds_floor = r.get<double>("ds_floor", c.ds_floor);
    if (!c.model.periodic) r.fail("model.periodic", "carnot cycle needs a periodic schedule");
    if (!(c.model.beta1 < c.model.beta2)) r.fail("model.beta1", "beta1 < beta2 (reservoir 1 hotter)");
    if (c.n_transient < 0) r.fail("n_transient", "n_transient >= 0");
    if (c.n_measure < 1) r.fail("n_measure", "n_measure >= 1");
    if (c.steps_per_cycle < 2 || c.steps_per_cycle % 2 != 0) r.fail("steps_per_cycle", "steps_per_cycle even and >= 2");
    return c;
}

inline Json run_thermo_carnot(const ThermoCarnotConfig& c, std::uint64_t, Sink& sink, Outcome& out) {
    thermo::CycleReport r = thermo::carnot_run(c.model, c.n_transient, c.n_measure, c.steps_per_cycle);
    CsvTable t({"cycle", "dS", "Q1_out", "Q2_in", "W"});
    for (std::size_t i = 0; i < r.per_cycle_dS.size(); ++i)
        t.add({{"cycle", static_cast<long long>(c.n_transient + i)}, {"dS", r.per_cycle_dS[i]},
               {"Q1_out", r.per_cycle_Q1_out[i]}, {"Q2_in", r.per_cycle_Q2_in[i]}, {"W", r.per_cycle_W[i]}});
    sink.csv("cycles.csv", t);
    double ds_min = *std::min_element(r.per_cycle_dS.begin(), r.per_cycle_dS.end());
    out.truth("engine_operating", r.operating && r.work_out > 0);
    out.le("efficiency", r.eta, r.eta_carnot + c.eta_slack);
    out.ge("cycle_entropy_production_min", ds_min, c.ds_floor);

    Json s;
    s["operating"] = r.operating;
    s["heat_from_hot_per_cycle"] = r.dQ1_out;
    s["heat_to_cold_per_cycle"] = r.dQ2_in;
    s["work_out_per_cycle"] = r.work_out;
    s["efficiency"] = r.eta;
    s["carnot_efficiency"] = r.eta_carnot;
    s["entropy_production_per_cycle"] = r.dS_cycle;
    s["entropy_production_min"] = ds_min;
    s["first_law_residual"] = r.first_law_residual;
    return s;
}

struct ThermoSweepConfig {
    thermo::ContactModel model;
    double beta = 1.0;
    std::vector<double> taus{1.0, 10.0};
    double steps_per_unit_time = 200;
    double second_law_tol = 1e-9;
};

inline ThermoSweepConfig parse_thermo_sweep(Reader& r) {
    ThermoSweepConfig c;
    c.model = model_at(r, "model");
    c.beta = r.get<double>("beta", c.beta);
    c.taus = r.get<std::vector<double>>("taus", c.taus);
    c.steps_per_unit_time = r.get<double>("steps_per_unit_time", c.steps_per_unit_time);
    c.second_law_tol = r.get<double>("second_law_tol", c.second_law_tol);
    if (c.model.periodic) r.fail("model.periodic", "a sweep needs a non-periodic schedule");
    if (!(c.beta > 0)) r.fail("beta", "beta > 0");
    if (c.taus.size() < 2) r.fail("taus", "at least two durations");
    for (std::size_t i = 0; i < c.taus.size(); ++i)
        if (!(c.taus[i] > 0) || (i && !(c.taus[i] > c.taus[i - 1]))) r.fail("taus", "positive and increasing");
    if (!(c.steps_per_unit_time > 0)) r.fail("steps_per_unit_time", "steps_per_unit_time > 0");
    return c;
}

inline Json run_thermo_sweep(const ThermoSweepConfig& c, std::uint64_t, Sink& sink, Outcome& out) {
    std::vector<thermo::SweepRecord> rs = thermo::quasi_static_sweep(c.model, c.taus, c.beta, c.steps_per_unit_time);
    CsvTable t({"tau", "dW", "dF", "gap", "final_relative_entropy"});
    double gap_min = INFINITY;
    for (const auto& r : rs) {
        t.add({{"tau", r.tau}, {"dW", r.dW}, {"dF", r.dF}, {"gap", r.gap},
               {"final_relative_entropy", r.final_relative_entropy}});
        gap_min = std::min(gap_min, r.gap);
    }
    sink.csv("sweep.csv", t);
    out.lt("gap_longest_below_shortest", std::abs(rs.back().gap), std::abs(rs.front().gap));
    out.ge("work_minus_free_energy_min", gap_min, -c.second_law_tol);
    Json s;
    s["gap_shortest"] = rs.front().gap;
    s["gap_longest"] = rs.back().gap;
    s["dF"] = rs.front().dF;
    return s;
}

// --------------------------------------------------------------------- qbm

struct QbmConfig {
    qbm::KineticModel model;
    int n_paths = 10000;
    std::vector<double> window{10, 100};  // in units of tau_c
    int n_obs = 100;
    int bootstrap = 200;
    double gk_horizon = 40;  // in units of the slowest relaxation time
    int gk_points = 4000;
    double rel_tol = 0.05;
    double r2_min = 0.99;
    double nu_factor = 2.0;  // 0 skips the scaling run
    std::vector<double> ratio_range{3.2, 4.8};
};

inline QbmConfig parse_qbm(Reader& r) {
    QbmConfig c;
    Reader mr = r.child("model");
    qbm::KineticModel& m = c.model;
    m.d = mr.get<int>("d", m.d);
    m.n_p = mr.get<int>("n_p", m.n_p);
    m.nu = mr.get<double>("nu", m.nu);
    m.M0 = mr.get<double>("M0", m.M0);
    m.beta = mr.get<double>("beta", m.beta);
    m.splitting = mr.get<double>("splitting", m.splitting);
    m.kernel_width = mr.get<double>("kernel_width", m.kernel_width);
    r.put("model", mr.finish());
    m.validate();
    c.n_paths = r.get<int>("n_paths", c.n_paths);
    c.window = r.get<std::vector<double>>("window", c.window);
    c.n_obs = r.get<int>("n_obs", c.n_obs);
    c.bootstrap = r.get<int>("bootstrap", c.bootstrap);
    c.gk_horizon = r.get<double>("gk_horizon", c.gk_horizon);
    c.gk_points = r.get<int>("gk_points", c.gk_points);
    c.rel_tol = r.get<double>("rel_tol", c.rel_tol);
    c.r2_min = r.get<double>("r2_min", c.r2_min);
    c.nu_factor = r.get<double>("nu_factor", c.nu_factor);
    c.ratio_range = r.get<std::vector<double>>("ratio_range", c.ratio_range);
    if (c.n_paths < 100) r.fail("n_paths", "n_paths >= 100");
    if (c.window.size() != 2 || !(c.window[0] > 0 && c.window[0] < c.window[1]))
        r.fail("window", "0 < window[0] < window[1]");
    if (c.n_obs < 3) r.fail("n_obs", "n_obs >= 3");
    if (c.bootstrap < 0) r.fail("bootstrap", "bootstrap >= 0");
    if (!(c.gk_horizon > 0) || c.gk_points < 2) r.fail("gk_horizon", "gk_horizon > 0 and gk_points >= 2");
    if (!(c.nu_factor >= 0)) r.fail("nu_factor", "nu_factor >= 0");
    if (c.ratio_range.size() != 2 || !(c.ratio_range[0] < c.ratio_range[1]))
        r.fail("ratio_range", "two increasing bounds");
    return c;
}

struct QbmRun {
    qbm::PathEnsemble ens;
    qbm::MsdResult msd;
    double tau_c = 0;
};

inline QbmRun qbm_ensemble(const qbm::KineticModel& m, const qbm::JumpKernel& k, const QbmConfig& c,
                           std::uint64_t path_seed, std::uint64_t boot_seed) {
    const double tc = k.mean_waiting_time();
    const double t_end = c.window[1] * tc;
    std::vector<double> obs(c.n_obs);
    for (int i = 0; i < c.n_obs; ++i) obs[i] = i + 1 == c.n_obs ? t_end : t_end * (i + 1) / c.n_obs;
    QbmRun r;
    r.tau_c = tc;
    r.ens = qbm::run_ensemble(m, k, c.n_paths, t_end, obs, path_seed);
    r.msd = qbm::msd_estimate(r.ens, c.window[0] * tc, t_end, c.bootstrap, boot_seed);
    return r;
}

inline Json run_qbm(const QbmConfig& c, std::uint64_t seed, Sink& sink, Outcome& out) {
    const qbm::KineticModel& m = c.model;
    qbm::JumpKernel k = qbm::build_kernel(m);
    qbm::GeneratorSpectrum sp = qbm::generator_spectrum(k);
    qbm::GreenKuboResult gk = qbm::green_kubo(sp, c.gk_horizon / qbm::slowest_rate(sp), c.gk_points);
    CsvTable vt({"tau", "C"});
    for (std::size_t i = 0; i < gk.tau.size(); ++i) vt.add({{"tau", gk.tau[i]}, {"C", gk.c[i]}});
    sink.csv("vacf.csv", vt);

    QbmRun base = qbm_ensemble(m, k, c, derive_seed(seed, 0), derive_seed(seed, 1));
    auto msd_table = [](const QbmRun& r) {
        CsvTable t({"t", "t_over_tau_c", "msd"});
        for (std::size_t i = 0; i < r.ens.obs_times.size(); ++i)
            t.add({{"t", r.ens.obs_times[i]}, {"t_over_tau_c", r.ens.obs_times[i] / r.tau_c}, {"msd", r.msd.msd[i]}});
        return t;
    };
    sink.csv("msd.csv", msd_table(base));
    const double rel = std::abs(base.msd.D_hat - gk.D_gk) / gk.D_gk;
    out.ge("msd_fit_r2", base.msd.r2, c.r2_min);
    out.le("msd_vs_green_kubo_rel_diff", rel, c.rel_tol);

    auto run_json = [](const QbmRun& r, double nu) {
        Json j;
        j["nu"] = nu;
        j["tau_c"] = r.tau_c;
        j["D_hat"] = r.msd.D_hat;
        j["D_hat_ci"] = vec_json({r.msd.ci_low, r.msd.ci_high});
        j["r2"] = r.msd.r2;
        j["loglog_slope"] = r.msd.loglog_slope;
        j["ballistic"] = r.msd.ballistic;
        return j;
    };
    Json s;
    s["run"] = run_json(base, m.nu);
    Json g;
    g["D_gk"] = gk.D_gk;
    g["integral"] = gk.integral;
    g["tail"] = gk.tail;
    g["C0"] = gk.c0;
    s["green_kubo"] = g;
    s["rel_diff"] = rel;
    if (c.nu_factor > 0) {
        qbm::KineticModel m2 = m;
        m2.nu = m.nu * c.nu_factor;
        qbm::JumpKernel k2 = qbm::build_kernel(m2);
        QbmRun scaled = qbm_ensemble(m2, k2, c, derive_seed(seed, 2), derive_seed(seed, 3));
        sink.csv("msd_scaled.csv", msd_table(scaled));
        const double ratio = scaled.msd.D_hat / base.msd.D_hat;
        out.ge("coupling_scaling_ratio_low", ratio, c.ratio_range[0]);
        out.le("coupling_scaling_ratio_high", ratio, c.ratio_range[1]);
        s["scaled_run"] = run_json(scaled, m2.nu);
        s["D_ratio"] = ratio;
        s["nu_factor"] = c.nu_factor;
    }
    return s;
}

// ---------------------------------------------------------------- friction

inline friction::FrictionModel parse_friction_model(Reader& r) {
    friction::FrictionModel m;
    m.d = r.get<int>("d", m.d);
    m.L = r.get<double>("L", m.L);
    m.N = r.get<int>("N", m.N);
    m.M0 = r.get<double>("M0", m.M0);
    m.F_ext = r.get<std::vector<double>>("F_ext", std::vector<double>(std::max(m.d, 0), 0.0));
    m.w0 = r.get<double>("w0", m.w0);
    m.a = r.get<double>("a", m.a);
    std::string disp = r.get<std::string>("dispersion", std::string("ideal"));
    if (disp == "ideal") m.dispersion = friction::Dispersion::ideal;
    else if (disp == "bogoliubov") m.dispersion = friction::Dispersion::bogoliubov;
    else r.fail("dispersion", "ideal or bogoliubov");
    m.vstar = r.get<double>("vstar", m.vstar);
    m.sound_factor = r.get<double>("sound_factor", m.sound_factor);
    m.t_max = r.get<double>("t_max", m.t_max);
    m.eps_reg = r.get<double>("eps_reg", m.eps_reg);
    m.kcut = r.get<double>("kcut", m.kcut);
    m.small_data_eps = r.get<double>("small_data_eps", m.small_data_eps);
    m.dt = r.get<double>("dt", m.dt);
    m.validate();
    // The automatic step is echoed as the value actually used.
    r.put("dt", m.step());
    return m;
}

inline friction::FrictionModel friction_model_at(Reader& parent) {
    Reader r = parent.child("model");
    friction::FrictionModel m = parse_friction_model(r);
    parent.put("model", r.finish());
    return m;
}

struct FrictionCurveConfig {
    friction::FrictionModel model;
    std::vector<double> speeds;
    friction::ForceMethod method = friction::ForceMethod::eps_limit;
    std::vector<double> targets{0.5, 1.2};  // fractions of F_max
    double branch_tol = 1e-3;               // fraction of F_max
    std::vector<double> compare_speeds;
    double compare_tol = 0.05;
    double noise_fraction = 1e-3;           // subsonic threshold as a fraction of the largest sampled force
    double subsonic_factor = 0.8, supersonic_factor = 1.5, margin = 10.0;
};

inline FrictionCurveConfig parse_friction_curve(Reader& r) {
    FrictionCurveConfig c;
    c.model = friction_model_at(r);
    Reader g = r.child("v_grid");
    double a = g.get<double>("start"), b = g.get<double>("stop");
    int n = g.get<int>("count");
    r.put("v_grid", g.finish());
    if (!(a > 0 && b > a) || n < 3) r.fail("v_grid", "0 < start < stop and count >= 3");
    for (int i = 0; i < n; ++i) c.speeds.push_back(a + (b - a) * i / (n - 1));
    std::string meth = r.get<std::string>("method", std::string("eps_limit"));
    if (meth == "shell_quadrature") c.method = friction::ForceMethod::shell_quadrature;
    else if (meth != "eps_limit") r.fail("method", "eps_limit or shell_quadrature");
    c.targets = r.get<std::vector<double>>("targets", c.targets);
    c.branch_tol = r.get<double>("branch_tol", c.branch_tol);
    c.compare_speeds = r.get<std::vector<double>>("compare_speeds", c.compare_speeds);
    c.compare_tol = r.get<double>("compare_tol", c.compare_tol);
    if (c.model.dispersion == friction::Dispersion::bogoliubov) {
        Reader s = r.child_or_empty("subsonic");
        c.noise_fraction = s.get<double>("noise_fraction", c.noise_fraction);
        c.subsonic_factor = s.get<double>("below", c.subsonic_factor);
        c.supersonic_factor = s.get<double>("above", c.supersonic_factor);
        c.margin = s.get<double>("margin", c.margin);
        r.put("subsonic", s.finish());
        if (!(c.subsonic_factor < 1 && c.supersonic_factor > 1)) r.fail("subsonic", "below < 1 < above");
    }
    for (double t : c.targets)
        if (!(t > 0)) r.fail("targets", "fractions of F_max must be positive");
    for (double v : c.compare_speeds)
        if (!(v > 0)) r.fail("compare_speeds", "speeds must be positive");
    return c;
}

inline Json run_friction_curve(const FrictionCurveConfig& c, std::uint64_t, Sink& sink, Outcome& out) {
    using namespace friction;
    const FrictionModel& m = c.model;
    ForceSpeedCurve curve = force_speed_curve(m, c.speeds, {}, c.method);
    CsvTable t({"v", "F", "F_shell"});
    double worst_sign = 0, scale = 0;
    for (std::size_t i = 0; i < curve.v.size(); ++i) {
        t.add({{"v", curve.v[i]}, {"F", curve.F[i]}, {"F_shell", curve.F_shell[i]}});
        scale = std::max({scale, std::abs(curve.F[i]), std::abs(curve.F_shell[i])});
        worst_sign = std::min({worst_sign, curve.F[i], curve.F_shell[i]});
    }
    sink.csv("curve.csv", t);
    // Dissipation: the drag never pushes forward.
    out.ge("dissipation_min_relative", scale > 0 ? worst_sign / scale : 0.0, -1e-10);
    const double rest = rest_profile_deviation(m);
    out.le("rest_profile_deviation", rest, m.eps_reg * (1 + 1e-12));

    Json s;
    s["F_max"] = curve.F_max;
    s["v_peak"] = curve.v_peak;
    s["unimodal"] = curve.unimodal;
    s["interior_max"] = curve.interior_max;
    Json lm = Json::array();
    for (auto [v, f] : curve.local_maxima) lm.push_back(vec_json({v, f}));
    s["local_maxima"] = lm;
    s["rest_profile_deviation"] = rest;
    s["method"] = c.method == ForceMethod::eps_limit ? "eps_limit" : "shell_quadrature";

    if (!c.targets.empty()) {
        out.truth("interior_maximum", curve.unimodal && curve.interior_max);
        if (curve.unimodal && curve.interior_max) {
            std::vector<double> abs_targets;
            for (double f : c.targets) abs_targets.push_back(f * curve.F_max);
            std::vector<Branch> br = branch_table(m, curve, abs_targets, c.method);
            CsvTable bt({"fraction", "F", "has_solution", "v_minus", "v_plus", "F_at_v_minus", "F_at_v_plus"});
            Json bj = Json::array();
            for (std::size_t i = 0; i < br.size(); ++i) {
                const Branch& b = br[i];
                const std::string tag = "fraction_" + io::format_double(c.targets[i]);
                double fm = NAN, fp = NAN;
                if (b.has_solution) {
                    fm = speed_force(m, b.v_minus, c.method);
                    fp = std::isfinite(b.v_plus) ? speed_force(m, b.v_plus, c.method) : NAN;
                }
                bt.add({{"fraction", c.targets[i]}, {"F", b.F}, {"has_solution", static_cast<long long>(b.has_solution)},
                        {"v_minus", b.v_minus}, {"v_plus", b.v_plus}, {"F_at_v_minus", fm}, {"F_at_v_plus", fp}});
                Json e;
                e["fraction"] = c.targets[i];
                e["F"] = b.F;
                e["has_solution"] = b.has_solution;
                e["v_minus"] = b.v_minus;
                e["v_plus"] = b.v_plus;
                bj.push_back(e);
                if (c.targets[i] < 1) {
                    out.truth(tag + "_has_solution", b.has_solution);
                    out.le(tag + "_v_minus_residual", std::abs(fm - b.F) / curve.F_max, c.branch_tol);
                    out.le(tag + "_v_plus_residual", std::abs(fp - b.F) / curve.F_max, c.branch_tol);
                    out.lt(tag + "_v_minus_below_v_plus", b.v_minus, b.v_plus);
                } else {
                    out.truth(tag + "_no_stationary_solution", !b.has_solution);
                }
            }
            sink.csv("branches.csv", bt);
            s["branches"] = bj;
        }
    }

    if (m.dispersion == Dispersion::bogoliubov) {
        const double fmax = *std::max_element(curve.F.begin(), curve.F.end());
        const double thr = c.noise_fraction * fmax;
        double below = 0, above = INFINITY;
        for (std::size_t i = 0; i < curve.v.size(); ++i) {
            if (curve.v[i] <= c.subsonic_factor * m.vstar) below = std::max(below, std::abs(curve.F[i]));
            if (curve.v[i] >= c.supersonic_factor * m.vstar) above = std::min(above, std::abs(curve.F[i]));
        }
        out.le("subsonic_force_max", below, thr);
        out.ge("supersonic_force_min", above, c.margin * thr);
        Json b;
        b["noise_threshold"] = thr;
        b["subsonic_force_max"] = below;
        b["supersonic_force_min"] = above;
        s["subsonic"] = b;
    }

    if (!c.compare_speeds.empty()) {
        Json cj = Json::array();
        for (double v : c.compare_speeds) {
            Vec vv(m.d, 0.0);
            vv[0] = v;
            // Throws when the two methods disagree beyond the tolerance.
            ForceComparison fc = friction_force_checked(vv, m, c.compare_tol);
            out.le("method_agreement_v_" + io::format_double(v), fc.rel_diff, c.compare_tol);
            Json e;
            e["v"] = v;
            e["eps_limit"] = norm(fc.eps_limit);
            e["shell_quadrature"] = norm(fc.shell);
            e["rel_diff"] = fc.rel_diff;
            cj.push_back(e);
        }
        s["method_comparison"] = cj;
    }
    return s;
}

struct FrictionEvolveConfig {
    friction::FrictionModel model;
    std::vector<double> X, P;
    std::string field = "zero";  // zero, rest, stationary, random
    double field_amplitude = 0;
    int record_every = 1;
    int residual_every = 5;
    bool memory = true;
    double history_dt = 0;
    bool fit = true;
    std::vector<double> delta_probe{0.1, 0.3, 0.6};
    std::vector<double> alpha_range{-1.3, -0.4};
    double transient = -1;
    double memory_tol = 0.01;
    double energy_tol = 1e-4;
};

inline FrictionEvolveConfig parse_friction_evolve(Reader& r) {
    FrictionEvolveConfig c;
    c.model = friction_model_at(r);
    const int d = c.model.d;
    Reader in = r.child("initial");
    c.X = in.get<std::vector<double>>("X", std::vector<double>(d, 0.0));
    c.P = in.get<std::vector<double>>("P");
    c.field = in.get<std::string>("field", c.field);
    if (c.field == "random") c.field_amplitude = in.get<double>("amplitude");
    r.put("initial", in.finish());
    if (static_cast<int>(c.X.size()) != d || static_cast<int>(c.P.size()) != d)
        r.fail("initial", "X and P have d components");
    if (c.field != "zero" && c.field != "rest" && c.field != "stationary" && c.field != "random")
        r.fail("initial.field", "one of zero, rest, stationary, random");
    c.record_every = r.get<int>("record_every", c.record_every);
    c.residual_every = r.get<int>("residual_every", c.residual_every);
    c.memory = r.get<bool>("memory", c.memory);
    c.history_dt = r.get<double>("history_dt", c.history_dt);
    c.fit = r.get<bool>("fit", c.fit);
    c.delta_probe = r.get<std::vector<double>>("delta_probe", c.delta_probe);
    c.alpha_range = r.get<std::vector<double>>("alpha_range", c.alpha_range);
    c.transient = r.get<double>("transient", c.transient);
    c.memory_tol = r.get<double>("memory_tol", c.memory_tol);
    c.energy_tol = r.get<double>("energy_tol", c.energy_tol);
    if (c.record_every < 1) r.fail("record_every", "record_every >= 1");
    if (c.residual_every < 0) r.fail("residual_every", "residual_every >= 0");
    if (c.alpha_range.size() != 2 || !(c.alpha_range[0] < c.alpha_range[1]))
        r.fail("alpha_range", "two increasing bounds");
    if (c.memory && c.record_every != 1) r.fail("record_every", "record_every = 1 when memory is compared");
    return c;
}

inline Json run_friction_evolve(const FrictionEvolveConfig& c, std::uint64_t seed, Sink& sink, Outcome& out) {
    using namespace friction;
    const FrictionModel& m = c.model;
    const double conv = convention_self_test(m.d);
    out.le("convention_self_test", conv, 1e-8);
    require_conventions(m.d);

    ParticleState p{c.X, c.P};
    FieldState b;
    if (c.field == "zero") b.assign(static_cast<std::size_t>(std::pow(m.N, m.d) + 0.5), 0.0);
    else if (c.field == "rest") b = rest_profile(m, c.X);
    else if (c.field == "stationary") {
        Vec v(m.d);
        for (int i = 0; i < m.d; ++i) v[i] = c.P[i] / m.M0;
        b = stationary_profile(v, m, c.X);
    } else {
        b = random_field(m, c.field_amplitude, derive_seed(seed, 0));
    }

    EvolveOptions opt;
    opt.record_every = c.record_every;
    opt.residual_every = c.residual_every;
    MomentumTrajectory tr = evolve_coupled(m, p, b, opt);

    std::vector<std::string> cols{"t"};
    for (int i = 0; i < m.d; ++i) cols.push_back("X" + std::to_string(i));
    for (int i = 0; i < m.d; ++i) cols.push_back("P" + std::to_string(i));
    cols.push_back("speed");
    cols.push_back("H");
    auto traj_table = [&](const MomentumTrajectory& t) {
        CsvTable tab(cols);
        Vec sp = t.speed();
        for (std::size_t i = 0; i < t.times.size(); ++i) {
            std::vector<std::pair<std::string, CsvTable::Cell>> row{{"t", t.times[i]}, {"speed", sp[i]},
                                                                   {"H", t.H.empty() ? NAN : t.H[i]}};
            for (int k = 0; k < m.d; ++k) {
                row.emplace_back("X" + std::to_string(k), t.X[i][k]);
                row.emplace_back("P" + std::to_string(k), t.P[i][k]);
            }
            tab.add(row);
        }
        return tab;
    };
    sink.csv("trajectory.csv", traj_table(tr));
    CsvTable rt({"t", "residual"});
    for (std::size_t i = 0; i < tr.residual.size(); ++i)
        rt.add({{"t", tr.residual_times[i]}, {"residual", tr.residual[i]}});
    sink.csv("residual.csv", rt);

    Json s;
    s["dt"] = tr.dt;
    s["steps"] = m.n_steps();
    s["wrap_warning"] = tr.wrap_warning;
    s["wrap_time"] = tr.wrap_time;
    s["initial_speed"] = tr.initial_speed;
    s["initial_field_norm"] = tr.initial_field_norm;
    s["convention_self_test"] = conv;
    const double drift = energy_drift(tr);
    s["energy_drift"] = drift;
    out.le("energy_drift", drift, c.energy_tol);

    if (c.memory) {
        MomentumTrajectory mem = memory_evolve(m, p, b, c.history_dt);
        sink.csv("memory_trajectory.csv", traj_table(mem));
        const double dev = trajectory_deviation(tr, mem);
        s["memory_deviation"] = dev;
        out.le("memory_agreement", dev, c.memory_tol);
    }

    if (c.fit) {
        DecayFit f = decay_fit(tr, c.delta_probe, m.small_data_eps, c.transient);
        CsvTable et({"t", "speed"});
        for (auto [t, v] : f.envelope) et.add({{"t", t}, {"speed", v}});
        sink.csv("envelope.csv", et);
        Json j;
        j["alpha"] = f.alpha;
        j["alpha_stderr"] = f.alpha_stderr;
        j["alpha_ci"] = vec_json({f.ci_low, f.ci_high});
        Json bd = Json::array();
        for (auto [dl, v] : f.bdelta) bd.push_back(Json{{"delta", dl}, {"norm", v}});
        j["bdelta"] = bd;
        j["residual_slope"] = f.residual_slope;
        j["residual_start"] = f.residual_start;
        j["residual_end"] = f.residual_end;
        j["residual_decreasing"] = f.residual_decreasing;
        s["decay"] = j;
        out.ge("decay_exponent_low", f.alpha, c.alpha_range[0]);
        out.le("decay_exponent_high", f.alpha, c.alpha_range[1]);
        out.truth("field_residual_decreasing", f.residual_decreasing);
    }
    return s;
}

// --------------------------------------------------------------------- eth

// State specs: {"product": op} repeats one site state, {"random": {"rank": r,
// "seed": s}} draws an induced random state, {"operator": op} gives the full
// matrix. Unitary specs: "identity" or {"haar": {"seed": s}}.
struct EthModelSpec {
    std::string name;
    eth::CoFiltrationModel model;
};

inline EthModelSpec parse_eth_model(Reader& r) {
    EthModelSpec e;
    eth::CoFiltrationModel& m = e.model;
    e.name = r.get<std::string>("name");
    m.N = r.get<int>("N");
    m.d = r.get<int>("d", m.d);
    m.eps_deg = r.get<double>("eps_deg", m.eps_deg);
    m.p_min = r.get<double>("p_min", m.p_min);
    if (m.N < 2) r.fail("N", "N >= 2");
    if (m.d < 2) r.fail("d", "d >= 2");
    if (eth::ipow(m.d, m.N) > 4096) r.fail("N", "d^N <= 4096");
    const int dim = static_cast<int>(eth::ipow(m.d, m.N));
    Reader st = r.child("rho0");
    if (st.has("product")) {
        CMat site = config::operator_at(st, "product");
        if (site.rows() != m.d) st.fail("product", "site state has dimension d");
        site /= site.trace();
        m.rho0 = eth::product_state(site, m.N);
    } else if (st.has("random")) {
        Reader g = st.child("random");
        int rank = g.get<int>("rank", 1);
        std::uint64_t s = g.get_u64("seed", 1);
        if (rank < 1 || rank > dim) g.fail("rank", "1 <= rank <= d^N");
        m.rho0 = random_density_matrix(dim, rank, s);
        st.put("random", g.finish());
    } else if (st.has("operator")) {
        CMat full = config::operator_at(st, "operator");
        if (full.rows() != dim) st.fail("operator", "state has dimension d^N");
        m.rho0 = DensityMatrix(full);
    } else {
        st.fail("one of product, random, operator");
    }
    r.put("rho0", st.finish());
    if (r.has("unitaries") && r.raw("unitaries").is_object()) {
        Reader u = r.child("unitaries");
        Reader h = u.child("haar");
        std::uint64_t s = h.get_u64("seed", 1);
        u.put("haar", h.finish());
        r.put("unitaries", u.finish());
        for (int n = 0; n + 1 < m.N; ++n) {
            std::mt19937_64 rng(derive_seed(s, static_cast<std::uint64_t>(n)));
            m.step_unitaries.push_back(random_unitary(static_cast<int>(m.tail_dim(n)), rng));
        }
    } else {
        std::string kind = r.get<std::string>("unitaries", std::string("identity"));
        if (kind != "identity") r.fail("unitaries", "\"identity\" or {\"haar\": {\"seed\": s}}");
    }
    m.validate();
    return e;
}

struct EthConfig {
    std::vector<EthModelSpec> models;
    long n_runs = 10000;
    double z_max = 3.0;
    double tol = 1e-10;
    int repeat = 5;
    int sample_histories = 5;
};

inline EthConfig parse_eth(Reader& r) {
    EthConfig c;
    const Json& ms = r.raw("models");
    if (!ms.is_array() || ms.empty()) r.fail("models", "nonempty array of models");
    Json echo = Json::array();
    std::set<std::string> names;
    for (std::size_t i = 0; i < ms.size(); ++i) {
        Reader mr = r.child_at("models", i);
        c.models.push_back(parse_eth_model(mr));
        if (!names.insert(c.models.back().name).second) mr.fail("name", "model names must be unique");
        echo.push_back(mr.finish());
    }
    r.put("models", echo);
    c.n_runs = r.get<long>("n_runs", c.n_runs);
    c.z_max = r.get<double>("z_max", c.z_max);
    c.tol = r.get<double>("tol", c.tol);
    c.repeat = r.get<int>("repeat", c.repeat);
    c.sample_histories = r.get<int>("sample_histories", c.sample_histories);
    if (c.n_runs < 100) r.fail("n_runs", "n_runs >= 100");
    if (c.repeat < 1) r.fail("repeat", "repeat >= 1");
    if (c.sample_histories < 0) r.fail("sample_histories", "sample_histories >= 0");
    return c;
}

inline Json run_eth(const EthConfig& c, std::uint64_t seed, Sink& sink, Outcome& out) {
    CsvTable ft({"model", "xi", "weight", "count", "frequency", "sigma", "z", "ci_low", "ci_high"});
    CsvTable ht({"model", "run", "n", "tail_dim", "algebra_dim", "event", "xi", "weight", "partition_check"});
    Json s = Json::object();
    for (std::size_t i = 0; i < c.models.size(); ++i) {
        const auto& spec = c.models[i];
        const std::uint64_t ms = derive_seed(seed, i);
        eth::FrequencyReport r = eth::frequency_report(spec.model, c.n_runs, ms);
        for (const auto& row : r.rows)
            ft.add({{"model", spec.name}, {"xi", static_cast<long long>(row.xi)}, {"weight", row.weight},
                    {"count", static_cast<long long>(row.count)}, {"frequency", row.frequency}, {"sigma", row.sigma},
                    {"z", row.z}, {"ci_low", row.ci_low}, {"ci_high", row.ci_high}});
        // Histories are replayed from the seeds frequency_report used.
        for (int k = 0; k < c.sample_histories && k < c.n_runs; ++k) {
            eth::HistoryRecord h = eth::run_history(spec.model, derive_seed(ms, k));
            for (const auto& st : h.steps)
                ht.add({{"model", spec.name}, {"run", static_cast<long long>(k)}, {"n", static_cast<long long>(st.n)},
                        {"tail_dim", static_cast<long long>(st.tail_dim)},
                        {"algebra_dim", static_cast<long long>(st.algebra_dim)},
                        {"event", static_cast<long long>(st.event)}, {"xi", static_cast<long long>(st.xi)},
                        {"weight", st.weight}, {"partition_check", st.check.worst()}});
        }
        bool same = true;
        for (int k = 0; k < c.repeat; ++k) {
            eth::HistoryRecord a = eth::run_history(spec.model, derive_seed(ms, k), true);
            eth::HistoryRecord b = eth::run_history(spec.model, derive_seed(ms, k), true);
            same = same && a.steps.size() == b.steps.size() && a.states.size() == b.states.size();
            for (std::size_t j = 0; same && j < a.steps.size(); ++j)
                same = a.steps[j].xi == b.steps[j].xi && a.states[j].matrix() == b.states[j].matrix();
        }
        const std::string& n = spec.name;
        out.le(n + "_partition_identities", r.worst_partition, c.tol);
        out.le(n + "_post_state_trace", r.worst_post_trace, c.tol);
        out.ge(n + "_post_state_min_eigenvalue", r.min_post_eigenvalue, -c.tol);
        out.truth(n + "_dimension_decreasing", r.dimension_decreasing);
        out.truth(n + "_event_observed", !r.rows.empty());
        out.le(n + "_born_max_abs_z", r.rows.empty() ? NAN : r.max_abs_z(), c.z_max);
        out.truth(n + "_seed_reproducible", same);

        Json j;
        j["N"] = spec.model.N;
        j["d"] = spec.model.d;
        j["runs"] = r.n_runs;
        j["runs_with_event"] = r.n_with_event;
        j["event_step"] = r.event_step;
        j["events_total"] = r.n_events;
        j["max_abs_z"] = r.rows.empty() ? NAN : r.max_abs_z();
        j["worst_partition_check"] = r.worst_partition;
        j["note"] = r.note;
        s[n] = j;
    }
    sink.csv("frequencies.csv", ft);
    sink.csv("histories.csv", ht);
    return s;
}

// ---------------------------------------------------------------- dispatch

inline const std::vector<std::string>& command_names() {
    static const std::vector<std::string> n{"entropy-suite", "thermo-evolve", "thermo-carnot", "thermo-sweep",
                                            "qbm-run",       "friction-curve", "friction-evolve", "eth-run"};
    return n;
}

// Parses and validates a config for a command.
inline Prepared prepare(const std::string& command, const Json& doc) {
    Reader r(doc);
    Prepared p;
    p.command = command;
    p.seed = r.get_u64("seed", 1);
    auto wrap = [&](auto cfg, auto fn) {
        p.run = [cfg, fn](std::uint64_t seed, Sink& sink, Outcome& out) { return fn(cfg, seed, sink, out); };
    };
    if (command == "entropy-suite") wrap(parse_entropy_suite(r), run_entropy_suite);
    else if (command == "thermo-evolve") wrap(parse_thermo_evolve(r), run_thermo_evolve);
    else if (command == "thermo-carnot") wrap(parse_thermo_carnot(r), run_thermo_carnot);
    else if (command == "thermo-sweep") wrap(parse_thermo_sweep(r), run_thermo_sweep);
    else if (command == "qbm-run") wrap(parse_qbm(r), run_qbm);
    else if (command == "friction-curve") wrap(parse_friction_curve(r), run_friction_curve);
    else if (command == "friction-evolve") wrap(parse_friction_evolve(r), run_friction_evolve);
    else if (command == "eth-run") wrap(parse_eth(r), run_eth);
    else throw ValidationError("unknown command " + command);
    p.resolved = r.finish();
    r.require_no_unknown();
    return p;
}

// Runs a prepared command; the summary and check list go to summary.json.
inline void execute(const Prepared& p, std::uint64_t seed, Sink& sink, Outcome& out) {
    Json s = p.run(seed, sink, out);
    Json doc;
    doc["command"] = p.command;
    doc["seed"] = seed;
    doc["passed"] = out.passed();
    doc["checks"] = out.json();
    doc["results"] = s;
    sink.json("summary.json", doc);
}

} // namespace arrowlab::commands
