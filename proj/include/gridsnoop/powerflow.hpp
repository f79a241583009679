#pragma once

#include <optional>

#include "gridsnoop/network.hpp"

namespace gridsnoop {

/// Per-bus net P/Q injections in per-unit (consumption negative).
struct Injections {
    Vec p;
    Vec q;
};

struct PowerFlowOptions {
    double tolerance = 1e-9;  // on max |mismatch|
    int max_iterations = 25;
};

struct PowerFlowResult {
    SystemState state;
    int iterations = 0;
    double max_mismatch = 0.0;
};

/// Newton-Raphson AC power flow. Slack holds angle 0 and its set voltage,
/// PV buses hold P and |V|, PQ buses hold P and Q. Throws ConvergenceError
/// carrying the last mismatch norm when the iteration does not settle.
PowerFlowResult solve_power_flow(const NetworkCase& nc, const Injections& inj,
                                 const PowerFlowOptions& opts = {},
                                 const std::optional<SystemState>& initial = std::nullopt);

/// From-end branch flow (P, Q) for a solved or candidate state.
std::pair<double, double> branch_flow(const SystemState& state, const BranchParams& br);
std::pair<double, double> branch_flow_to(const SystemState& state, const BranchParams& br);

/// Nodal injections computed from the admittance matrices (the Y-bus route,
/// kept separate from the branch-sum route in BranchModel).
Injections nodal_injections(const AdmittanceView& y, const SystemState& state);

}  // namespace gridsnoop
