#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "gridsnoop/scenario.hpp"
#include "gridsnoop/topology.hpp"
#include "test_util.hpp"

using namespace gridsnoop;

namespace {

ScenarioConfig stream_config(const std::string& case_name, int minutes, double noise) {
    ScenarioConfig cfg;
    cfg.case_path = testutil::case_path(case_name);
    cfg.length_min = minutes;
    cfg.noise_fraction = noise;
    return cfg;
}

SampleBuffer make_buffer(const NetworkCase& nc, const MeterLayout& layout,
                         const ScenarioConfig& cfg, std::uint64_t seed) {
    SampleBuffer buf;
    for (const MeasurementSet& ms : simulate_stream(nc, layout, cfg, seed))
        buffer_from_measurements(buf, layout, ms);
    return buf;
}

std::vector<LearnedBranch> true_branch_list(const NetworkCase& nc) {
    std::vector<LearnedBranch> out;
    for (const CaseBranch& cb : nc.branches)
        out.push_back({cb.from, cb.to, cb.g(), cb.b()});
    return out;
}

const LearnedBranch* find_branch(const LearnedModel& model, int i, int j) {
    for (const LearnedBranch& br : model.branches)
        if ((br.from == i && br.to == j) || (br.from == j && br.to == i)) return &br;
    return nullptr;
}

}  // namespace

TEST_CASE("sample buffer shape discipline") {
    SampleBuffer buf;
    Vec v3 = Vec::Ones(3);
    buf.push(0.0, v3, v3, v3);
    buf.push(1.0, 2.0 * v3, v3, v3);
    CHECK(buf.bus_count() == 3);
    CHECK(buf.size() == 2);
    CHECK(buf.p(0, 1) == 2.0);
    CHECK_THROWS_AS(buf.push(0.5, v3, v3, v3), ValidationError);  // non-monotone
    CHECK_THROWS_AS(buf.push(2.0, Vec::Ones(4), v3, v3), ValidationError);
    SampleBuffer head = buf.head(1);
    CHECK(head.size() == 1);
    CHECK(head.minutes.back() == 0.0);
    SampleBuffer tail = buf.tail(1);
    CHECK(tail.minutes.back() == 1.0);
}

TEST_CASE("coarse regression recovers an exact linear model") {
    const int n = 6;
    std::mt19937_64 rng(33);
    std::uniform_real_distribution<double> entry(-2.0, 2.0);
    Mat g_true(n, n), b_true(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            g_true(i, j) = entry(rng);
            b_true(i, j) = entry(rng);
        }

    const int t_count = 2 * n;
    Mat v(n, t_count);
    for (int i = 0; i < n; ++i)
        for (int t = 0; t < t_count; ++t) v(i, t) = 1.0 + 0.2 * entry(rng);

    Mat pv = g_true * v;
    Mat qv = -b_true * v;
    SampleBuffer buf;
    for (int t = 0; t < t_count; ++t)
        buf.push(t, pv.col(t).cwiseProduct(v.col(t)), qv.col(t).cwiseProduct(v.col(t)), v.col(t));

    CoarseOptions opts;
    opts.ridge = 0.0;
    CoarseEstimate coarse = coarse_identify(buf, opts);
    CHECK((coarse.g_nodal - g_true).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((coarse.b_nodal - b_true).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(coarse.gram_condition > 0.0);
}

TEST_CASE("coarse regression refuses a rank-deficient window without ridge") {
    SampleBuffer buf;
    Vec col = Vec::Ones(5);
    for (int t = 0; t < 3; ++t) buf.push(t, col, col, col);
    CoarseOptions opts;
    opts.ridge = 0.0;
    CHECK_THROWS_AS(coarse_identify(buf, opts), SingularityError);
}

TEST_CASE("pruning exact 14-bus nodal matrices recovers the 20 true branches") {
    NetworkCase nc = load_case(testutil::case_path("ieee14_series.case"));
    AdmittanceView y = build_admittance(nc);
    CoarseEstimate coarse{y.g, y.b, 1.0};

    std::vector<LearnedBranch> branches = prune_incidence(coarse, 0.05);
    REQUIRE(branches.size() == nc.branches.size());
    for (const CaseBranch& cb : nc.branches) {
        auto it = std::find_if(branches.begin(), branches.end(), [&](const LearnedBranch& lb) {
            return (lb.from == cb.from && lb.to == cb.to) || (lb.from == cb.to && lb.to == cb.from);
        });
        REQUIRE(it != branches.end());
        CHECK(it->g == doctest::Approx(cb.g()).epsilon(1e-9));
        CHECK(it->b == doctest::Approx(cb.b()).epsilon(1e-9));
    }

    SUBCASE("overzealous threshold disconnects the graph") {
        CHECK_THROWS_AS(prune_incidence(coarse, 0.999), ConnectivityError);
    }
    SUBCASE("threshold domain is validated") {
        CHECK_THROWS_AS(prune_incidence(coarse, 0.0), ValidationError);
        CHECK_THROWS_AS(prune_incidence(coarse, 1.0), ValidationError);
    }
}

TEST_CASE("pruning the minimal case keeps the sign bookkeeping straight") {
    NetworkCase nc = parse_case(testutil::kTwoBusCase);
    AdmittanceView y = build_admittance(nc);
    CoarseEstimate coarse{y.g, y.b, 1.0};
    std::vector<LearnedBranch> branches = prune_incidence(coarse, 0.5);
    REQUIRE(branches.size() == 1);
    CHECK(branches[0].g == doctest::Approx(5.0));
    CHECK(branches[0].b == doctest::Approx(-15.0));
}

TEST_CASE("identification jacobian blocks match finite differences") {
    NetworkCase nc = load_case(testutil::case_path("ieee14_series.case"));
    MeterLayout layout = default_meter_layout(nc);
    ScenarioConfig cfg = stream_config("ieee14_series.case", 3, 0.0);
    SampleBuffer buf = make_buffer(nc, layout, cfg, 1);
    std::vector<LearnedBranch> topo = true_branch_list(nc);
    const int n = nc.bus_count();
    const int m = static_cast<int>(topo.size());

    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> jitter(-0.3, 0.3);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        Vec g(m), b(m);
        for (int k = 0; k < m; ++k) {
            g[k] = std::max(topo[k].g * (1.0 + jitter(rng)), 0.0) + 0.05;
            b[k] = topo[k].b * (1.0 + jitter(rng));
        }
        Mat thetas(n, buf.size());
        for (int t = 0; t < buf.size(); ++t)
            for (int i = 0; i < n; ++i) thetas(i, t) = i == 0 ? 0.0 : 0.2 * jitter(rng);

        Mat analytic = detail::fine_jacobian(topo, g, b, thetas, buf, 0);

        // pack (g, b, free angles) into one vector for differencing
        const int cols = 2 * m + (n - 1) * buf.size();
        Vec x0(cols);
        x0.head(m) = g;
        x0.segment(m, m) = b;
        for (int t = 0; t < buf.size(); ++t)
            for (int i = 1; i < n; ++i) x0[2 * m + t * (n - 1) + (i - 1)] = thetas(i, t);
        auto residual_of = [&](const Vec& x) {
            Mat th = Mat::Zero(n, buf.size());
            for (int t = 0; t < buf.size(); ++t)
                for (int i = 1; i < n; ++i) th(i, t) = x[2 * m + t * (n - 1) + (i - 1)];
            return detail::fine_residual(topo, x.head(m), x.segment(m, m), th, buf, 0);
        };
        Mat numeric = -testutil::finite_difference(residual_of, x0);
        worst = std::max(worst, testutil::max_relative_error(analytic, numeric, 1e-4));
    }
    CHECK(worst < 1e-5);
}

TEST_CASE("fine identification is a fixed point at the exact solution") {
    NetworkCase nc = load_case(testutil::case_path("ieee14_series.case"));
    MeterLayout layout = default_meter_layout(nc);
    ScenarioConfig cfg = stream_config("ieee14_series.case", 30, 0.0);

    // noiseless buffer with exact per-bus data and the generating angles
    std::vector<SystemState> states;
    std::vector<MeasurementSet> stream = simulate_stream(nc, layout, cfg, 2, &states);
    SampleBuffer buf;
    for (const MeasurementSet& ms : stream) buffer_from_measurements(buf, layout, ms);
    Mat true_angles(nc.bus_count(), buf.size());
    for (int t = 0; t < buf.size(); ++t) true_angles.col(t) = states[t].va;

    LearnedModel model = fine_identify(true_branch_list(nc), buf, {}, &true_angles);
    CHECK(model.iterations <= 2);
    CHECK(model.mismatch_norm < 1e-8);
    for (const CaseBranch& cb : nc.branches) {
        const LearnedBranch* lb = find_branch(model, cb.from, cb.to);
        REQUIRE(lb != nullptr);
        CHECK(lb->g == doctest::Approx(cb.g()).epsilon(1e-6));
        CHECK(lb->b == doctest::Approx(cb.b()).epsilon(1e-6));
    }
}

TEST_CASE("fine identification recovers perturbed parameters from noiseless data") {
    NetworkCase nc = load_case(testutil::case_path("ieee14_series.case"));
    MeterLayout layout = default_meter_layout(nc);
    ScenarioConfig cfg = stream_config("ieee14_series.case", 720, 0.0);
    SampleBuffer buf = make_buffer(nc, layout, cfg, 3);

    std::mt19937_64 rng(19);
    std::uniform_real_distribution<double> jitter(-0.2, 0.2);
    std::vector<LearnedBranch> initial = true_branch_list(nc);
    for (LearnedBranch& br : initial) {
        br.g *= (1.0 + jitter(rng));
        br.b *= (1.0 + jitter(rng));
    }

    LearnedModel model = fine_identify(initial, buf, {});
    for (const CaseBranch& cb : nc.branches) {
        const LearnedBranch* lb = find_branch(model, cb.from, cb.to);
        REQUIRE(lb != nullptr);
        if (cb.g() > 1e-9) CHECK(std::abs(lb->g / cb.g() - 1.0) < 0.01);
        CHECK(std::abs(lb->b / cb.b() - 1.0) < 0.01);
    }
}

TEST_CASE("fine mismatch is non-increasing across accepted iterations") {
    NetworkCase nc = parse_case(testutil::kTwoBusCase);
    MeterLayout layout = default_meter_layout(nc);
    ScenarioConfig cfg;
    cfg.case_path = "unused";
    cfg.length_min = 60;
    cfg.noise_fraction = 0.01;
    SampleBuffer buf = make_buffer(nc, layout, cfg, 4);

    std::vector<LearnedBranch> initial{{0, 1, 2.0, -9.0}};
    double previous = std::numeric_limits<double>::infinity();
    for (int cap = 1; cap <= 6; ++cap) {
        FineOptions opts;
        opts.max_iterations = cap;
        opts.tolerance = 0.0;
        LearnedModel model = fine_identify(initial, buf, opts);
        CHECK(model.mismatch_norm <= previous * (1.0 + 1e-12));
        previous = model.mismatch_norm;
    }
}

TEST_CASE("learned model export/import round trip") {
    LearnedModel model;
    model.bus_count = 3;
    model.branches = {{0, 1, 1.25, -4.75}, {1, 2, 0.0, -11.5}};
    model.mismatch_norm = 3.5e-4;
    model.iterations = 12;
    model.samples_used = 240;
    LearnedModel again = parse_learned_model(serialize_learned_model(model));
    CHECK(again.bus_count == 3);
    REQUIRE(again.branches.size() == 2);
    CHECK(again.branches[1].b == doctest::Approx(-11.5));
    CHECK(again.samples_used == 240);
    CHECK(again.mismatch_norm == doctest::Approx(3.5e-4));
}

TEST_CASE("learn_topology guards its sample minimum") {
    NetworkCase nc = parse_case(testutil::kTwoBusCase);
    MeterLayout layout = default_meter_layout(nc);
    ScenarioConfig cfg;
    cfg.case_path = "unused";
    cfg.length_min = 50;
    cfg.noise_fraction = 0.01;
    SampleBuffer buf = make_buffer(nc, layout, cfg, 5);
    LearnOptions opts;
    opts.min_samples = 200;
    CHECK_THROWS_WITH_AS(learn_topology(buf, opts), doctest::Contains("insufficient"),
                         ValidationError);
}

TEST_CASE("noiseless pipeline recovers the exact incidence and parameters") {
    NetworkCase nc = load_case(testutil::case_path("ieee14_series.case"));
    MeterLayout layout = default_meter_layout(nc);
    ScenarioConfig cfg = stream_config("ieee14_series.case", 720, 0.0);
    SampleBuffer buf = make_buffer(nc, layout, cfg, 6);

    LearnedModel model = learn_topology(buf, {});
    CHECK(model.branches.size() == nc.branches.size());
    for (const CaseBranch& cb : nc.branches) {
        const LearnedBranch* lb = find_branch(model, cb.from, cb.to);
        REQUIRE(lb != nullptr);
        if (cb.g() > 1e-9) CHECK(std::abs(lb->g / cb.g() - 1.0) < 0.01);
        CHECK(std::abs(lb->b / cb.b() - 1.0) < 0.01);
    }

    // shunt-free, tap-free case: the implied nodal susceptance matches the
    // admittance assembly within fit tolerance
    AdmittanceView y = build_admittance(nc);
    Mat b_implied = Mat::Zero(nc.bus_count(), nc.bus_count());
    for (const LearnedBranch& br : model.branches) {
        b_implied(br.from, br.to) -= br.b;
        b_implied(br.to, br.from) -= br.b;
        b_implied(br.from, br.from) += br.b;
        b_implied(br.to, br.to) += br.b;
    }
    CHECK((b_implied - y.b).cwiseAbs().maxCoeff() < 1e-3);
}
