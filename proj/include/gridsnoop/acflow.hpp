#pragma once

#include <optional>
#include <vector>

#include "gridsnoop/types.hpp"

namespace gridsnoop {

/// Series/shunt parameters of one branch in per-unit. Tap ratio sits at the
/// from end; b_sh is the shunt susceptance at each end of the pi section.
struct BranchParams {
    int from = 0;
    int to = 0;
    double g = 0.0;
    double b = 0.0;
    double b_sh = 0.0;
    double tap = 1.0;
};

/// Flow at one branch end together with its partial derivatives.
struct FlowEval {
    double p = 0.0, q = 0.0;
    double dp_dvi = 0.0, dp_dvj = 0.0, dp_dti = 0.0, dp_dtj = 0.0;
    double dq_dvi = 0.0, dq_dvj = 0.0, dq_dti = 0.0, dq_dtj = 0.0;
    double dp_dg = 0.0, dp_db = 0.0;
    double dq_dg = 0.0, dq_db = 0.0;
};

/// From-end flow of a branch: i is the tap side.
FlowEval flow_from_end(const BranchParams& br, double vi, double vj, double ti, double tj);

/// To-end flow of the same branch (j side).
FlowEval flow_to_end(const BranchParams& br, double vi, double vj, double ti, double tj);

/// Measurement function over a branch list: both the operator's true case and
/// the attacker's learned topology reduce to this. The estimation state vector
/// is [va at non-reference buses; vm at all buses], reference angle fixed at 0.
class BranchModel {
public:
    BranchModel() = default;
    BranchModel(int bus_count, std::vector<BranchParams> branches, MeterLayout layout,
                int reference_bus = 0);

    int bus_count() const { return bus_count_; }
    int reference_bus() const { return reference_bus_; }
    int state_size() const { return 2 * bus_count_ - 1; }
    const MeterLayout& layout() const { return layout_; }
    const std::vector<BranchParams>& branches() const { return branches_; }

    Vec measurement(const SystemState& x) const;
    Mat measurement_jacobian(const SystemState& x) const;

    /// Net P/Q injection at every bus for a given state.
    void injections(const SystemState& x, Vec& p, Vec& q) const;

    SystemState unpack_state(const Vec& x) const;
    Vec pack_state(const SystemState& s) const;
    std::string state_label(int col) const;

private:
    struct MeterRef {
        int branch = -1;    // resolved branch index, -1 if the model has no such branch
        bool from_end = true;
    };

    int angle_col(int bus) const;  // -1 for the reference bus
    int vm_col(int bus) const { return bus_count_ - 1 + bus; }

    int bus_count_ = 0;
    std::vector<BranchParams> branches_;
    MeterLayout layout_;
    int reference_bus_ = 0;
    std::vector<MeterRef> meter_refs_;
    std::vector<std::vector<int>> branches_at_;  // bus -> incident branch indices
};

}  // namespace gridsnoop
