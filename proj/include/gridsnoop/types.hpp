#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "gridsnoop/errors.hpp"

namespace gridsnoop {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Per-bus voltage magnitudes (per-unit) and angles (radians).
struct SystemState {
    Vec vm;
    Vec va;

    SystemState() = default;
    explicit SystemState(int bus_count) : vm(Vec::Ones(bus_count)), va(Vec::Zero(bus_count)) {}
    int bus_count() const { return static_cast<int>(vm.size()); }
};

enum class MeterKind : std::uint8_t {
    ActiveFlow,         // branch P at the from end
    ReactiveFlow,       // branch Q at the from end
    ActiveInjection,    // net bus P injection
    ReactiveInjection,  // net bus Q injection
    VoltageMagnitude,   // bus |V|
};

inline bool is_flow(MeterKind k) {
    return k == MeterKind::ActiveFlow || k == MeterKind::ReactiveFlow;
}

std::string meter_kind_name(MeterKind k);
MeterKind meter_kind_from_name(const std::string& name);

/// One meter: flows carry both endpoints (from side first), bus meters carry bus only.
struct Meter {
    MeterKind kind;
    int bus_from;     // flow: from-end bus; bus meter: the bus
    int bus_to = -1;  // flow: to-end bus; bus meter: -1

    std::string label() const;
};

struct MeterLayout {
    int bus_count = 0;
    std::vector<Meter> meters;

    int size() const { return static_cast<int>(meters.size()); }
};

/// Meters-by-buses 0/1 membership matrix: flow meters belong to both endpoint
/// subgroups, bus meters to their own bus only.
struct IncidenceMatrix {
    Eigen::MatrixXi entries;  // meters x buses, entries in {0,1}

    int meter_count() const { return static_cast<int>(entries.rows()); }
    int bus_count() const { return static_cast<int>(entries.cols()); }
};

IncidenceMatrix build_incidence(const MeterLayout& layout);

/// Meters with a nonzero incidence entry in any of the listed bus columns.
std::vector<int> subgraph_meters(const IncidenceMatrix& inc, const std::vector<int>& buses);

/// One timestamped snapshot of meter readings.
struct MeasurementSet {
    double minutes = 0.0;  // since scenario start
    Vec values;            // ordered by the meter layout
    Vec sigma;             // per-meter noise standard deviation, strictly positive
};

}  // namespace gridsnoop
