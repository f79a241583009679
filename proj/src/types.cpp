#include "gridsnoop/types.hpp"

#include <algorithm>

namespace gridsnoop {

std::string meter_kind_name(MeterKind k) {
    switch (k) {
        case MeterKind::ActiveFlow: return "P_flow";
        case MeterKind::ReactiveFlow: return "Q_flow";
        case MeterKind::ActiveInjection: return "P_inj";
        case MeterKind::ReactiveInjection: return "Q_inj";
        case MeterKind::VoltageMagnitude: return "V";
    }
    return "?";
}

MeterKind meter_kind_from_name(const std::string& name) {
    if (name == "P_flow") return MeterKind::ActiveFlow;
    if (name == "Q_flow") return MeterKind::ReactiveFlow;
    if (name == "P_inj") return MeterKind::ActiveInjection;
    if (name == "Q_inj") return MeterKind::ReactiveInjection;
    if (name == "V") return MeterKind::VoltageMagnitude;
    throw ValidationError("unknown meter kind: " + name);
}

std::string Meter::label() const {
    if (is_flow(kind))
        return meter_kind_name(kind) + "(" + std::to_string(bus_from) + "-" + std::to_string(bus_to) + ")";
    return meter_kind_name(kind) + "(" + std::to_string(bus_from) + ")";
}

IncidenceMatrix build_incidence(const MeterLayout& layout) {
    IncidenceMatrix inc;
    inc.entries = Eigen::MatrixXi::Zero(layout.size(), layout.bus_count);
    for (int m = 0; m < layout.size(); ++m) {
        const Meter& meter = layout.meters[m];
        if (meter.bus_from < 0 || meter.bus_from >= layout.bus_count ||
            (is_flow(meter.kind) && (meter.bus_to < 0 || meter.bus_to >= layout.bus_count))) {
            throw ValidationError("meter " + std::to_string(m) + " (" + meter.label() +
                                  ") references a bus outside the layout");
        }
        inc.entries(m, meter.bus_from) = 1;
        if (is_flow(meter.kind)) inc.entries(m, meter.bus_to) = 1;
    }
    return inc;
}

std::vector<int> subgraph_meters(const IncidenceMatrix& inc, const std::vector<int>& buses) {
    for (int b : buses) {
        if (b < 0 || b >= inc.bus_count())
            throw ValidationError("subgraph query references unknown bus index " + std::to_string(b));
    }
    std::vector<int> out;
    for (int m = 0; m < inc.meter_count(); ++m) {
        bool hit = std::any_of(buses.begin(), buses.end(),
                               [&](int b) { return inc.entries(m, b) != 0; });
        if (hit) out.push_back(m);
    }
    return out;
}

}  // namespace gridsnoop
