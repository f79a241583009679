#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "gridsnoop/acflow.hpp"
#include "gridsnoop/types.hpp"

namespace gridsnoop {

enum class BusKind : std::uint8_t { Slack, PV, PQ };

struct Bus {
    int id = 0;  // external id from the case file
    BusKind kind = BusKind::PQ;
    double p_load = 0.0;  // per-unit, consumption positive
    double q_load = 0.0;
    double v_set = 1.0;  // held magnitude for slack/PV buses
};

struct CaseBranch {
    int from = 0;  // internal bus indices
    int to = 0;
    double r = 0.0;
    double x = 0.0;
    double b_sh = 0.0;  // shunt susceptance per end
    double tap = 1.0;

    double g() const { return r / (r * r + x * x); }
    double b() const { return -x / (r * r + x * x); }
    BranchParams params() const { return {from, to, g(), b(), b_sh, tap}; }
};

/// Static grid description. Buses are indexed densely 0..n-1 in file order;
/// external ids are kept for I/O.
struct NetworkCase {
    std::vector<Bus> buses;
    std::vector<CaseBranch> branches;
    int slack = 0;  // internal index
    double mva_base = 100.0;

    int bus_count() const { return static_cast<int>(buses.size()); }
    int branch_count() const { return static_cast<int>(branches.size()); }
    int index_of(int external_id) const;  // throws ValidationError if absent
};

NetworkCase parse_case(std::string_view text);
NetworkCase load_case(const std::string& path);
std::string serialize_case(const NetworkCase& nc);

/// Dense nodal conductance/susceptance matrices assembled from the branches.
struct AdmittanceView {
    Mat g;
    Mat b;
};

AdmittanceView build_admittance(const NetworkCase& nc);

/// P/Q flow meters at the from end of every branch, P/Q injection and |V|
/// meters at every bus.
MeterLayout default_meter_layout(const NetworkCase& nc);

IncidenceMatrix build_incidence(const NetworkCase& nc, const MeterLayout& layout);

/// The operator-side measurement model: true branch parameters, slack as
/// angle reference.
BranchModel branch_model(const NetworkCase& nc, const MeterLayout& layout);

}  // namespace gridsnoop
