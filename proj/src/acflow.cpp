#include "gridsnoop/acflow.hpp"

#include <cmath>

namespace gridsnoop {

FlowEval flow_from_end(const BranchParams& br, double vi, double vj, double ti, double tj) {
    const double a = br.tap;
    const double g = br.g, b = br.b, bt = br.b + br.b_sh;
    const double c = std::cos(ti - tj), s = std::sin(ti - tj);
    const double k = vi * vj / a;

    FlowEval f;
    f.p = g * vi * vi / (a * a) - k * (g * c + b * s);
    f.q = -bt * vi * vi / (a * a) + k * (b * c - g * s);

    f.dp_dvi = 2.0 * g * vi / (a * a) - (vj / a) * (g * c + b * s);
    f.dp_dvj = -(vi / a) * (g * c + b * s);
    f.dp_dti = k * (g * s - b * c);
    f.dp_dtj = -f.dp_dti;

    f.dq_dvi = -2.0 * bt * vi / (a * a) + (vj / a) * (b * c - g * s);
    f.dq_dvj = (vi / a) * (b * c - g * s);
    f.dq_dti = -k * (b * s + g * c);
    f.dq_dtj = -f.dq_dti;

    f.dp_dg = vi * vi / (a * a) - k * c;
    f.dp_db = -k * s;
    f.dq_dg = -k * s;
    f.dq_db = -vi * vi / (a * a) + k * c;
    return f;
}

FlowEval flow_to_end(const BranchParams& br, double vi, double vj, double ti, double tj) {
    const double a = br.tap;
    const double g = br.g, b = br.b, bt = br.b + br.b_sh;
    const double c = std::cos(ti - tj), s = std::sin(ti - tj);
    const double k = vi * vj / a;

    FlowEval f;
    f.p = g * vj * vj - k * (g * c - b * s);
    f.q = -bt * vj * vj + k * (b * c + g * s);

    f.dp_dvi = -(vj / a) * (g * c - b * s);
    f.dp_dvj = 2.0 * g * vj - (vi / a) * (g * c - b * s);
    f.dp_dti = k * (g * s + b * c);
    f.dp_dtj = -f.dp_dti;

    f.dq_dvi = (vj / a) * (b * c + g * s);
    f.dq_dvj = -2.0 * bt * vj + (vi / a) * (b * c + g * s);
    f.dq_dti = k * (g * c - b * s);
    f.dq_dtj = -f.dq_dti;

    f.dp_dg = vj * vj - k * c;
    f.dp_db = k * s;
    f.dq_dg = k * s;
    f.dq_db = -vj * vj + k * c;
    return f;
}

BranchModel::BranchModel(int bus_count, std::vector<BranchParams> branches, MeterLayout layout,
                         int reference_bus)
    : bus_count_(bus_count),
      branches_(std::move(branches)),
      layout_(std::move(layout)),
      reference_bus_(reference_bus) {
    branches_at_.resize(bus_count_);
    for (int k = 0; k < static_cast<int>(branches_.size()); ++k) {
        branches_at_[branches_[k].from].push_back(k);
        branches_at_[branches_[k].to].push_back(k);
    }
    meter_refs_.resize(layout_.meters.size());
    for (size_t m = 0; m < layout_.meters.size(); ++m) {
        const Meter& meter = layout_.meters[m];
        if (!is_flow(meter.kind)) continue;
        for (int k = 0; k < static_cast<int>(branches_.size()); ++k) {
            if (branches_[k].from == meter.bus_from && branches_[k].to == meter.bus_to) {
                meter_refs_[m] = {k, true};
                break;
            }
            if (branches_[k].to == meter.bus_from && branches_[k].from == meter.bus_to) {
                meter_refs_[m] = {k, false};
                break;
            }
        }
    }
}

int BranchModel::angle_col(int bus) const {
    if (bus == reference_bus_) return -1;
    return bus < reference_bus_ ? bus : bus - 1;
}

SystemState BranchModel::unpack_state(const Vec& x) const {
    SystemState s(bus_count_);
    for (int n = 0; n < bus_count_; ++n) {
        int col = angle_col(n);
        s.va[n] = col < 0 ? 0.0 : x[col];
        s.vm[n] = x[vm_col(n)];
    }
    return s;
}

Vec BranchModel::pack_state(const SystemState& s) const {
    Vec x(state_size());
    for (int n = 0; n < bus_count_; ++n) {
        int col = angle_col(n);
        if (col >= 0) x[col] = s.va[n] - s.va[reference_bus_];
        x[vm_col(n)] = s.vm[n];
    }
    return x;
}

std::string BranchModel::state_label(int col) const {
    if (col < bus_count_ - 1) {
        int bus = col < reference_bus_ ? col : col + 1;
        return "va(" + std::to_string(bus) + ")";
    }
    return "vm(" + std::to_string(col - (bus_count_ - 1)) + ")";
}

Vec BranchModel::measurement(const SystemState& x) const {
    Vec z(layout_.size());
    Vec pinj, qinj;
    bool have_inj = false;
    for (int m = 0; m < layout_.size(); ++m) {
        const Meter& meter = layout_.meters[m];
        switch (meter.kind) {
            case MeterKind::VoltageMagnitude:
                z[m] = x.vm[meter.bus_from];
                break;
            case MeterKind::ActiveFlow:
            case MeterKind::ReactiveFlow: {
                const MeterRef& ref = meter_refs_[m];
                if (ref.branch < 0) {
                    z[m] = 0.0;  // model has no branch here; treated as open
                    break;
                }
                const BranchParams& br = branches_[ref.branch];
                FlowEval f = ref.from_end
                                 ? flow_from_end(br, x.vm[br.from], x.vm[br.to], x.va[br.from], x.va[br.to])
                                 : flow_to_end(br, x.vm[br.from], x.vm[br.to], x.va[br.from], x.va[br.to]);
                z[m] = (meter.kind == MeterKind::ActiveFlow) ? f.p : f.q;
                break;
            }
            case MeterKind::ActiveInjection:
            case MeterKind::ReactiveInjection: {
                if (!have_inj) {
                    injections(x, pinj, qinj);
                    have_inj = true;
                }
                z[m] = (meter.kind == MeterKind::ActiveInjection) ? pinj[meter.bus_from]
                                                                  : qinj[meter.bus_from];
                break;
            }
        }
    }
    return z;
}

void BranchModel::injections(const SystemState& x, Vec& p, Vec& q) const {
    p = Vec::Zero(bus_count_);
    q = Vec::Zero(bus_count_);
    for (const BranchParams& br : branches_) {
        FlowEval ff = flow_from_end(br, x.vm[br.from], x.vm[br.to], x.va[br.from], x.va[br.to]);
        FlowEval ft = flow_to_end(br, x.vm[br.from], x.vm[br.to], x.va[br.from], x.va[br.to]);
        p[br.from] += ff.p;
        q[br.from] += ff.q;
        p[br.to] += ft.p;
        q[br.to] += ft.q;
    }
}

Mat BranchModel::measurement_jacobian(const SystemState& x) const {
    Mat h = Mat::Zero(layout_.size(), state_size());
    auto add = [&](int row, int bus, double d_dt, double d_dv) {
        int tc = angle_col(bus);
        if (tc >= 0) h(row, tc) += d_dt;
        h(row, vm_col(bus)) += d_dv;
    };

    for (int m = 0; m < layout_.size(); ++m) {
        const Meter& meter = layout_.meters[m];
        switch (meter.kind) {
            case MeterKind::VoltageMagnitude:
                h(m, vm_col(meter.bus_from)) = 1.0;
                break;
            case MeterKind::ActiveFlow:
            case MeterKind::ReactiveFlow: {
                const MeterRef& ref = meter_refs_[m];
                if (ref.branch < 0) break;
                const BranchParams& br = branches_[ref.branch];
                FlowEval f = ref.from_end
                                 ? flow_from_end(br, x.vm[br.from], x.vm[br.to], x.va[br.from], x.va[br.to])
                                 : flow_to_end(br, x.vm[br.from], x.vm[br.to], x.va[br.from], x.va[br.to]);
                bool active = meter.kind == MeterKind::ActiveFlow;
                add(m, br.from, active ? f.dp_dti : f.dq_dti, active ? f.dp_dvi : f.dq_dvi);
                add(m, br.to, active ? f.dp_dtj : f.dq_dtj, active ? f.dp_dvj : f.dq_dvj);
                break;
            }
            case MeterKind::ActiveInjection:
            case MeterKind::ReactiveInjection: {
                bool active = meter.kind == MeterKind::ActiveInjection;
                for (int k : branches_at_[meter.bus_from]) {
                    const BranchParams& br = branches_[k];
                    FlowEval f = (br.from == meter.bus_from)
                                     ? flow_from_end(br, x.vm[br.from], x.vm[br.to], x.va[br.from], x.va[br.to])
                                     : flow_to_end(br, x.vm[br.from], x.vm[br.to], x.va[br.from], x.va[br.to]);
                    add(m, br.from, active ? f.dp_dti : f.dq_dti, active ? f.dp_dvi : f.dq_dvi);
                    add(m, br.to, active ? f.dp_dtj : f.dq_dtj, active ? f.dp_dvj : f.dq_dvj);
                }
                break;
            }
        }
    }
    return h;
}

}  // namespace gridsnoop
