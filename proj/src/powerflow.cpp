#include "gridsnoop/powerflow.hpp"

#include <cmath>

namespace gridsnoop {

Injections nodal_injections(const AdmittanceView& y, const SystemState& state) {
    const int n = state.bus_count();
    Injections inj{Vec::Zero(n), Vec::Zero(n)};
    for (int i = 0; i < n; ++i) {
        double p = 0.0, q = 0.0;
        for (int k = 0; k < n; ++k) {
            if (y.g(i, k) == 0.0 && y.b(i, k) == 0.0) continue;
            const double d = state.va[i] - state.va[k];
            const double c = std::cos(d), s = std::sin(d);
            p += state.vm[k] * (y.g(i, k) * c + y.b(i, k) * s);
            q += state.vm[k] * (y.g(i, k) * s - y.b(i, k) * c);
        }
        inj.p[i] = state.vm[i] * p;
        inj.q[i] = state.vm[i] * q;
    }
    return inj;
}

namespace {

// Mismatch vector [dP(non-slack); dQ(PQ)] and its Jacobian wrt [va(non-slack); vm(PQ)].
struct MismatchSystem {
    Vec f;
    Mat jac;
};

MismatchSystem assemble(const NetworkCase& nc, const AdmittanceView& y, const Injections& target,
                        const SystemState& state) {
    const int n = nc.bus_count();
    std::vector<int> p_rows, q_rows;
    for (int i = 0; i < n; ++i) {
        if (i != nc.slack) p_rows.push_back(i);
        if (nc.buses[i].kind == BusKind::PQ) q_rows.push_back(i);
    }
    const int np = static_cast<int>(p_rows.size());
    const int nq = static_cast<int>(q_rows.size());

    Injections calc = nodal_injections(y, state);

    // dP_i/dva_k etc. from the polar nodal equations
    Mat dp_dt(n, n), dp_dv(n, n), dq_dt(n, n), dq_dv(n, n);
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < n; ++k) {
            if (i == k) continue;
            const double d = state.va[i] - state.va[k];
            const double c = std::cos(d), s = std::sin(d);
            const double vv = state.vm[i] * state.vm[k];
            dp_dt(i, k) = vv * (y.g(i, k) * s - y.b(i, k) * c);
            dq_dt(i, k) = -vv * (y.g(i, k) * c + y.b(i, k) * s);
            dp_dv(i, k) = state.vm[i] * (y.g(i, k) * c + y.b(i, k) * s);
            dq_dv(i, k) = state.vm[i] * (y.g(i, k) * s - y.b(i, k) * c);
        }
    }
    for (int i = 0; i < n; ++i) {
        const double vi = state.vm[i];
        dp_dt(i, i) = -calc.q[i] - y.b(i, i) * vi * vi;
        dq_dt(i, i) = calc.p[i] - y.g(i, i) * vi * vi;
        dp_dv(i, i) = calc.p[i] / vi + y.g(i, i) * vi;
        dq_dv(i, i) = calc.q[i] / vi - y.b(i, i) * vi;
    }

    MismatchSystem sys;
    sys.f.resize(np + nq);
    sys.jac.resize(np + nq, np + nq);
    for (int r = 0; r < np; ++r) sys.f[r] = target.p[p_rows[r]] - calc.p[p_rows[r]];
    for (int r = 0; r < nq; ++r) sys.f[np + r] = target.q[q_rows[r]] - calc.q[q_rows[r]];
    for (int r = 0; r < np; ++r) {
        for (int c = 0; c < np; ++c) sys.jac(r, c) = dp_dt(p_rows[r], p_rows[c]);
        for (int c = 0; c < nq; ++c) sys.jac(r, np + c) = dp_dv(p_rows[r], q_rows[c]);
    }
    for (int r = 0; r < nq; ++r) {
        for (int c = 0; c < np; ++c) sys.jac(np + r, c) = dq_dt(q_rows[r], p_rows[c]);
        for (int c = 0; c < nq; ++c) sys.jac(np + r, np + c) = dq_dv(q_rows[r], q_rows[c]);
    }
    return sys;
}

}  // namespace

PowerFlowResult solve_power_flow(const NetworkCase& nc, const Injections& inj,
                                 const PowerFlowOptions& opts,
                                 const std::optional<SystemState>& initial) {
    const int n = nc.bus_count();
    if (inj.p.size() != n || inj.q.size() != n)
        throw ValidationError("injection vectors must match the bus count");
    if (!inj.p.allFinite() || !inj.q.allFinite())
        throw ValidationError("injections must be finite");

    AdmittanceView y = build_admittance(nc);

    SystemState state = initial.value_or(SystemState(n));
    state.va[nc.slack] = 0.0;
    state.vm[nc.slack] = nc.buses[nc.slack].v_set;
    for (int i = 0; i < n; ++i)
        if (nc.buses[i].kind == BusKind::PV) state.vm[i] = nc.buses[i].v_set;

    std::vector<int> p_rows, q_rows;
    for (int i = 0; i < n; ++i) {
        if (i != nc.slack) p_rows.push_back(i);
        if (nc.buses[i].kind == BusKind::PQ) q_rows.push_back(i);
    }

    double mismatch = 0.0;
    for (int it = 0; it <= opts.max_iterations; ++it) {
        MismatchSystem sys = assemble(nc, y, inj, state);
        mismatch = sys.f.size() ? sys.f.cwiseAbs().maxCoeff() : 0.0;
        if (mismatch < opts.tolerance) return {state, it, mismatch};

        Vec step = sys.jac.partialPivLu().solve(sys.f);
        if (!step.allFinite())
            throw ConvergenceError("power flow Jacobian is singular (islanded or degenerate case)");
        const int np = static_cast<int>(p_rows.size());
        for (int r = 0; r < np; ++r) state.va[p_rows[r]] += step[r];
        for (size_t r = 0; r < q_rows.size(); ++r) state.vm[q_rows[r]] += step[np + r];
    }
    throw ConvergenceError("power flow did not converge within " +
                               std::to_string(opts.max_iterations) +
                               " iterations (last max mismatch " + std::to_string(mismatch) + ")",
                           {mismatch});
}

std::pair<double, double> branch_flow(const SystemState& state, const BranchParams& br) {
    FlowEval f = flow_from_end(br, state.vm[br.from], state.vm[br.to], state.va[br.from],
                               state.va[br.to]);
    return {f.p, f.q};
}

std::pair<double, double> branch_flow_to(const SystemState& state, const BranchParams& br) {
    FlowEval f = flow_to_end(br, state.vm[br.from], state.vm[br.to], state.va[br.from],
                             state.va[br.to]);
    return {f.p, f.q};
}

}  // namespace gridsnoop
