#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <complex>
#include <random>

#include "gridsnoop/powerflow.hpp"
#include "gridsnoop/simulate.hpp"
#include "test_util.hpp"

using namespace gridsnoop;

namespace {

// Independent flow oracle in complex arithmetic: S_f = V_i conj(I_f) with the
// two-port pi/tap admittance model. No shared code with the trig kernels.
std::pair<double, double> complex_flow_oracle(const BranchParams& br, const SystemState& s) {
    using cd = std::complex<double>;
    const cd y(br.g, br.b);
    const cd ysh(0.0, br.b_sh);
    const cd vi = std::polar(s.vm[br.from], s.va[br.from]);
    const cd vj = std::polar(s.vm[br.to], s.va[br.to]);
    const cd i_from = (y + ysh) / (br.tap * br.tap) * vi - y / br.tap * vj;
    const cd sf = vi * std::conj(i_from);
    return {sf.real(), sf.imag()};
}

Injections loads_to_injections(const NetworkCase& nc) {
    Injections inj{Vec::Zero(nc.bus_count()), Vec::Zero(nc.bus_count())};
    for (int i = 0; i < nc.bus_count(); ++i) {
        inj.p[i] = -nc.buses[i].p_load;
        inj.q[i] = -nc.buses[i].q_load;
    }
    return inj;
}

}  // namespace

TEST_CASE("branch flow closed-form special cases") {
    BranchParams br{0, 1, 3.0, -9.0, 0.0, 1.0};
    SystemState s(2);

    SUBCASE("no angle difference and no shunt gives zero flow") {
        auto [p, q] = branch_flow(s, br);
        CHECK(p == doctest::Approx(0.0));
        CHECK(q == doctest::Approx(0.0));
    }
    SUBCASE("only the shunt survives at flat voltage") {
        br.b_sh = 0.05;
        auto [p, q] = branch_flow(s, br);
        CHECK(p == doctest::Approx(0.0));
        CHECK(q == doctest::Approx(-0.05));
    }
    SUBCASE("lossless branch flow is antisymmetric") {
        BranchParams lossless{0, 1, 0.0, -12.0, 0.0, 1.0};
        s.va[1] = -0.12;
        s.vm[1] = 0.97;
        auto [pf, qf] = branch_flow(s, lossless);
        auto [pt, qt] = branch_flow_to(s, lossless);
        CHECK(pf == doctest::Approx(-pt).epsilon(1e-12));
        (void)qf;
        (void)qt;
    }
}

TEST_CASE("branch flow matches the complex-arithmetic oracle") {
    std::mt19937_64 rng(7);
    NetworkCase nc = load_case(testutil::case_path("ieee14.case"));
    for (int trial = 0; trial < 50; ++trial) {
        SystemState s = testutil::random_state(nc.bus_count(), rng);
        for (const CaseBranch& cb : nc.branches) {
            BranchParams br = cb.params();
            auto [p, q] = branch_flow(s, br);
            auto [po, qo] = complex_flow_oracle(br, s);
            CHECK(p == doctest::Approx(po).epsilon(1e-10));
            CHECK(q == doctest::Approx(qo).epsilon(1e-10));
            // to-end via the oracle with the swapped two-port
            using cd = std::complex<double>;
            const cd y(br.g, br.b);
            const cd vi = std::polar(s.vm[br.from], s.va[br.from]);
            const cd vj = std::polar(s.vm[br.to], s.va[br.to]);
            const cd i_to = (y + cd(0.0, br.b_sh)) * vj - y / br.tap * vi;
            const cd st = vj * std::conj(i_to);
            auto [pt, qt] = branch_flow_to(s, br);
            CHECK(pt == doctest::Approx(st.real()).epsilon(1e-10));
            CHECK(qt == doctest::Approx(st.imag()).epsilon(1e-10));
        }
    }
}

TEST_CASE("14-bus solved base case branch flow agrees with the oracle route") {
    NetworkCase nc = load_case(testutil::case_path("ieee14.case"));
    PowerFlowResult pf = solve_power_flow(nc, loads_to_injections(nc));
    BranchParams br = nc.branches[0].params();  // branch 1-2
    auto [p, q] = branch_flow(pf.state, br);
    auto [po, qo] = complex_flow_oracle(br, pf.state);
    CHECK(std::abs(p - po) < 1e-6);
    CHECK(std::abs(q - qo) < 1e-6);
    CHECK(p > 1.0);  // the slack corridor carries over 100 MW at base load
}

TEST_CASE("zero loads on a shunt-free case give the flat no-flow fixed point") {
    NetworkCase nc = load_case(testutil::case_path("ieee14_series.case"));
    for (Bus& bus : nc.buses) {
        bus.p_load = 0.0;
        bus.q_load = 0.0;
        bus.v_set = 1.0;
    }
    Injections inj{Vec::Zero(nc.bus_count()), Vec::Zero(nc.bus_count())};
    PowerFlowResult pf = solve_power_flow(nc, inj);
    CHECK((pf.state.vm.array() - 1.0).abs().maxCoeff() < 1e-9);
    CHECK(pf.state.va.cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("two-bus power flow matches a brute-force grid search") {
    NetworkCase nc = parse_case(testutil::kTwoBusCase);
    Injections inj = loads_to_injections(nc);
    PowerFlowResult pf = solve_power_flow(nc, inj);

    // oracle: scan (V2, theta2) minimizing the bus-2 mismatch, then refine
    AdmittanceView y = build_admittance(nc);
    auto mismatch = [&](double v2, double t2) {
        SystemState s(2);
        s.vm[1] = v2;
        s.va[1] = t2;
        Injections calc = nodal_injections(y, s);
        return std::hypot(calc.p[1] - inj.p[1], calc.q[1] - inj.q[1]);
    };
    double best_v = 1.0, best_t = 0.0, best = 1e9;
    double v_lo = 0.7, v_hi = 1.1, t_lo = -0.5, t_hi = 0.1;
    for (int round = 0; round < 6; ++round) {
        const int steps = 40;
        double bv = best_v, bt = best_t;
        for (int iv = 0; iv <= steps; ++iv) {
            for (int it = 0; it <= steps; ++it) {
                double v = v_lo + (v_hi - v_lo) * iv / steps;
                double t = t_lo + (t_hi - t_lo) * it / steps;
                double f = mismatch(v, t);
                if (f < best) {
                    best = f;
                    bv = v;
                    bt = t;
                }
            }
        }
        best_v = bv;
        best_t = bt;
        double dv = (v_hi - v_lo) / steps, dt = (t_hi - t_lo) / steps;
        v_lo = best_v - dv;
        v_hi = best_v + dv;
        t_lo = best_t - dt;
        t_hi = best_t + dt;
    }
    CHECK(pf.state.vm[1] == doctest::Approx(best_v).epsilon(1e-5));
    CHECK(pf.state.va[1] == doctest::Approx(best_t).epsilon(1e-5));
    CHECK(pf.max_mismatch < 1e-8);
}

TEST_CASE("14-bus base case solves quickly and balances power") {
    NetworkCase nc = load_case(testutil::case_path("ieee14.case"));
    Injections inj = loads_to_injections(nc);
    PowerFlowResult pf = solve_power_flow(nc, inj);
    CHECK(pf.iterations <= 10);
    CHECK(pf.max_mismatch < 1e-8);

    // total generation = total load + series losses
    AdmittanceView y = build_admittance(nc);
    Injections calc = nodal_injections(y, pf.state);
    double losses = 0.0;
    for (const CaseBranch& cb : nc.branches) {
        BranchParams br = cb.params();
        auto [p_from, q_from] = branch_flow(pf.state, br);
        auto [p_to, q_to] = branch_flow_to(pf.state, br);
        losses += p_from + p_to;
        (void)q_from;
        (void)q_to;
    }
    CHECK(calc.p.sum() == doctest::Approx(losses).epsilon(1e-6));

    // the solution reproduces the requested injections at non-slack buses
    for (int i = 0; i < nc.bus_count(); ++i) {
        if (i == nc.slack) continue;
        CHECK(std::abs(calc.p[i] - inj.p[i]) < 1e-8);
        if (nc.buses[i].kind == BusKind::PQ) CHECK(std::abs(calc.q[i] - inj.q[i]) < 1e-8);
        if (nc.buses[i].kind == BusKind::PV)
            CHECK(pf.state.vm[i] == doctest::Approx(nc.buses[i].v_set));
    }
}

TEST_CASE("Y-bus injections agree with the branch-sum route") {
    NetworkCase nc = load_case(testutil::case_path("ieee14.case"));
    AdmittanceView y = build_admittance(nc);
    MeterLayout layout = default_meter_layout(nc);
    BranchModel model = branch_model(nc, layout);
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        SystemState s = testutil::random_state(nc.bus_count(), rng);
        Injections via_y = nodal_injections(y, s);
        Vec p, q;
        model.injections(s, p, q);
        CHECK((via_y.p - p).cwiseAbs().maxCoeff() < 1e-10);
        CHECK((via_y.q - q).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("measurement jacobian matches central finite differences") {
    NetworkCase nc = load_case(testutil::case_path("ieee14.case"));
    MeterLayout layout = default_meter_layout(nc);
    BranchModel model = branch_model(nc, layout);
    std::mt19937_64 rng(11);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        SystemState s = testutil::random_state(nc.bus_count(), rng, 0.25, 0.08);
        s.va[nc.slack] = 0.0;
        Vec x = model.pack_state(s);
        Mat analytic = model.measurement_jacobian(model.unpack_state(x));
        Mat numeric = testutil::finite_difference(
            [&](const Vec& v) { return model.measurement(model.unpack_state(v)); }, x);
        worst = std::max(worst, testutil::max_relative_error(analytic, numeric, 1e-4));
    }
    CHECK(worst < 1e-5);
}

TEST_CASE("load generation is deterministic and bounded") {
    NetworkCase nc = load_case(testutil::case_path("ieee14_series.case"));
    LoadProfileConfig profile;
    profile.seed = 42;

    SUBCASE("zero fluctuation and flat shape reproduce base loads") {
        LoadProfileConfig flat = profile;
        flat.fluctuation = 0.0;
        flat.shape_amplitude = 0.0;
        Injections inj = generate_loads(nc, flat, 373.0);
        for (int i = 0; i < nc.bus_count(); ++i) {
            CHECK(inj.p[i] == doctest::Approx(-nc.buses[i].p_load));
            CHECK(inj.q[i] == doctest::Approx(-nc.buses[i].q_load));
        }
    }
    SUBCASE("same seed and time give identical draws") {
        Injections a = generate_loads(nc, profile, 100.0);
        Injections b = generate_loads(nc, profile, 100.0);
        CHECK((a.p - b.p).cwiseAbs().maxCoeff() == 0.0);
        CHECK((a.q - b.q).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("fluctuation stays within its band") {
        LoadProfileConfig shaped = profile;
        shaped.fluctuation = 0.1;
        shaped.shape_amplitude = 0.0;
        for (double t : {0.0, 55.0, 700.0}) {
            Injections inj = generate_loads(nc, shaped, t);
            for (int i = 0; i < nc.bus_count(); ++i) {
                if (nc.buses[i].p_load == 0.0) continue;
                double ratio = inj.p[i] / -nc.buses[i].p_load;
                CHECK(ratio > 0.899);
                CHECK(ratio < 1.101);
            }
        }
    }
}

TEST_CASE("measurement noise behaves as configured") {
    NetworkCase nc = load_case(testutil::case_path("ieee14_series.case"));
    MeterLayout layout = default_meter_layout(nc);
    BranchModel model = branch_model(nc, layout);
    Injections inj;
    inj.p = Vec::Zero(nc.bus_count());
    inj.q = Vec::Zero(nc.bus_count());
    for (int i = 0; i < nc.bus_count(); ++i) {
        inj.p[i] = -nc.buses[i].p_load;
        inj.q[i] = -nc.buses[i].q_load;
    }
    SystemState state = solve_power_flow(nc, inj).state;

    SUBCASE("zero noise reproduces h(x) exactly") {
        MeasurementSet ms = measure(model, state, 0.0, 9, 0.0);
        CHECK((ms.values - model.measurement(state)).cwiseAbs().maxCoeff() == 0.0);
        CHECK((ms.sigma.array() > 0.0).all());
    }
    SUBCASE("identical seeds give identical snapshots") {
        MeasurementSet a = measure(model, state, 0.01, 5, 12.0);
        MeasurementSet b = measure(model, state, 0.01, 5, 12.0);
        CHECK((a.values - b.values).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("empirical sigma tracks the configured sigma within 5%") {
        Vec truth = model.measurement(state);
        const int draws = 10000;
        const int probe = 0;  // a healthy flow meter
        double mean = 0.0, m2 = 0.0;
        for (int k = 0; k < draws; ++k) {
            MeasurementSet ms = measure(model, state, 0.01, 1000 + k, 0.0);
            double e = ms.values[probe] - truth[probe];
            mean += e;
            m2 += e * e;
        }
        mean /= draws;
        double sd = std::sqrt(m2 / draws - mean * mean);
        double target = 0.01 * std::max(std::abs(truth[probe]), 0.01);
        CHECK(sd == doctest::Approx(target).epsilon(0.05));
    }
}
