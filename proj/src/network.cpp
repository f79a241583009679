#include "gridsnoop/network.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

namespace gridsnoop {

namespace {

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

BusKind bus_kind_from(const std::string& word, int line) {
    std::string w = lower(word);
    if (w == "slack" || w == "s") return BusKind::Slack;
    if (w == "pv" || w == "v") return BusKind::PV;
    if (w == "pq" || w == "q") return BusKind::PQ;
    throw ParseError("unknown bus type '" + word + "'", line);
}

const char* bus_kind_name(BusKind k) {
    switch (k) {
        case BusKind::Slack: return "slack";
        case BusKind::PV: return "pv";
        case BusKind::PQ: return "pq";
    }
    return "?";
}

void validate(const NetworkCase& nc) {
    if (nc.buses.empty()) throw ValidationError("case has no buses");

    std::map<int, int> seen;
    for (int i = 0; i < nc.bus_count(); ++i) {
        auto [it, fresh] = seen.emplace(nc.buses[i].id, i);
        if (!fresh) throw ValidationError("duplicate bus id " + std::to_string(nc.buses[i].id));
    }

    int slack_count = 0;
    for (const Bus& bus : nc.buses)
        if (bus.kind == BusKind::Slack) ++slack_count;
    if (slack_count != 1)
        throw ValidationError("case must have exactly one slack bus, found " +
                              std::to_string(slack_count));

    for (const CaseBranch& br : nc.branches) {
        if (br.from < 0 || br.from >= nc.bus_count() || br.to < 0 || br.to >= nc.bus_count() ||
            br.from == br.to)
            throw ValidationError("branch endpoints out of range");
        if (br.r < 0.0)
            throw ValidationError("branch " + std::to_string(nc.buses[br.from].id) + "-" +
                                  std::to_string(nc.buses[br.to].id) +
                                  " has negative resistance (g must be >= 0)");
        if (br.r == 0.0 && br.x == 0.0)
            throw ValidationError("branch " + std::to_string(nc.buses[br.from].id) + "-" +
                                  std::to_string(nc.buses[br.to].id) + " has zero impedance");
        if (br.tap <= 0.0) throw ValidationError("tap ratio must be positive");
    }

    // connectivity over the branch graph
    std::vector<char> reached(nc.bus_count(), 0);
    std::vector<int> stack{0};
    reached[0] = 1;
    while (!stack.empty()) {
        int n = stack.back();
        stack.pop_back();
        for (const CaseBranch& br : nc.branches) {
            int other = br.from == n ? br.to : (br.to == n ? br.from : -1);
            if (other >= 0 && !reached[other]) {
                reached[other] = 1;
                stack.push_back(other);
            }
        }
    }
    for (int i = 0; i < nc.bus_count(); ++i)
        if (!reached[i])
            throw ValidationError("branch graph is not connected: bus " +
                                  std::to_string(nc.buses[i].id) + " is unreachable");
}

}  // namespace

int NetworkCase::index_of(int external_id) const {
    for (int i = 0; i < bus_count(); ++i)
        if (buses[i].id == external_id) return i;
    throw ValidationError("unknown bus id " + std::to_string(external_id));
}

NetworkCase parse_case(std::string_view text) {
    NetworkCase nc;
    std::map<int, int> id_to_index;
    enum class Section { None, Buses, Branches, Base } section = Section::None;

    std::istringstream in{std::string(text)};
    std::string raw;
    int line_no = 0;
    struct PendingBranch {
        int from_id, to_id, line;
        double r, x, b_sh, tap;
    };
    std::vector<PendingBranch> pending;

    while (std::getline(in, raw)) {
        ++line_no;
        std::string line = raw;
        if (auto pos = line.find('#'); pos != std::string::npos) line.erase(pos);
        std::istringstream ls(line);
        std::string first;
        if (!(ls >> first)) continue;

        if (first == "[buses]") { section = Section::Buses; continue; }
        if (first == "[branches]") { section = Section::Branches; continue; }
        if (first == "[base]") { section = Section::Base; continue; }
        if (first.front() == '[') throw ParseError("unknown section " + first, line_no);

        switch (section) {
            case Section::None:
                throw ParseError("data before any section header", line_no);
            case Section::Base: {
                try {
                    nc.mva_base = std::stod(first);
                } catch (const std::exception&) {
                    throw ParseError("bad MVA base '" + first + "'", line_no);
                }
                break;
            }
            case Section::Buses: {
                Bus bus;
                std::string type;
                try {
                    bus.id = std::stoi(first);
                } catch (const std::exception&) {
                    throw ParseError("bad bus id '" + first + "'", line_no);
                }
                if (!(ls >> type >> bus.p_load >> bus.q_load))
                    throw ParseError("bus line needs: id type Pload Qload [Vset]", line_no);
                bus.kind = bus_kind_from(type, line_no);
                double vset;
                if (ls >> vset) bus.v_set = vset;
                if (bus.v_set <= 0.0) throw ParseError("Vset must be positive", line_no);
                auto [it, fresh] = id_to_index.emplace(bus.id, nc.bus_count());
                if (!fresh)
                    throw ParseError("duplicate bus id " + std::to_string(bus.id), line_no);
                nc.buses.push_back(bus);
                break;
            }
            case Section::Branches: {
                PendingBranch pb{0, 0, line_no, 0.0, 0.0, 0.0, 1.0};
                try {
                    pb.from_id = std::stoi(first);
                } catch (const std::exception&) {
                    throw ParseError("bad branch endpoint '" + first + "'", line_no);
                }
                if (!(ls >> pb.to_id >> pb.r >> pb.x))
                    throw ParseError("branch line needs: from to r x [b_sh] [tap]", line_no);
                ls >> pb.b_sh >> pb.tap;
                pending.push_back(pb);
                break;
            }
        }
    }

    for (const PendingBranch& pb : pending) {
        auto from = id_to_index.find(pb.from_id);
        auto to = id_to_index.find(pb.to_id);
        if (from == id_to_index.end())
            throw ValidationError("branch at line " + std::to_string(pb.line) +
                                  " references unknown bus " + std::to_string(pb.from_id));
        if (to == id_to_index.end())
            throw ValidationError("branch at line " + std::to_string(pb.line) +
                                  " references unknown bus " + std::to_string(pb.to_id));
        nc.branches.push_back({from->second, to->second, pb.r, pb.x, pb.b_sh, pb.tap});
    }

    for (int i = 0; i < nc.bus_count(); ++i)
        if (nc.buses[i].kind == BusKind::Slack) nc.slack = i;

    validate(nc);
    return nc;
}

NetworkCase load_case(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open case file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_case(ss.str());
}

std::string serialize_case(const NetworkCase& nc) {
    std::ostringstream out;
    out.precision(12);
    out << "[base]\n" << nc.mva_base << "\n\n[buses]\n";
    for (const Bus& bus : nc.buses) {
        out << bus.id << " " << bus_kind_name(bus.kind) << " " << bus.p_load << " " << bus.q_load
            << " " << bus.v_set << "\n";
    }
    out << "\n[branches]\n";
    for (const CaseBranch& br : nc.branches) {
        out << nc.buses[br.from].id << " " << nc.buses[br.to].id << " " << br.r << " " << br.x
            << " " << br.b_sh << " " << br.tap << "\n";
    }
    return out.str();
}

AdmittanceView build_admittance(const NetworkCase& nc) {
    const int n = nc.bus_count();
    AdmittanceView y{Mat::Zero(n, n), Mat::Zero(n, n)};
    for (const CaseBranch& br : nc.branches) {
        const double g = br.g(), b = br.b(), a = br.tap;
        y.g(br.from, br.from) += g / (a * a);
        y.b(br.from, br.from) += (b + br.b_sh) / (a * a);
        y.g(br.to, br.to) += g;
        y.b(br.to, br.to) += b + br.b_sh;
        y.g(br.from, br.to) -= g / a;
        y.b(br.from, br.to) -= b / a;
        y.g(br.to, br.from) -= g / a;
        y.b(br.to, br.from) -= b / a;
    }
    return y;
}

MeterLayout default_meter_layout(const NetworkCase& nc) {
    MeterLayout layout;
    layout.bus_count = nc.bus_count();
    for (const CaseBranch& br : nc.branches)
        layout.meters.push_back({MeterKind::ActiveFlow, br.from, br.to});
    for (const CaseBranch& br : nc.branches)
        layout.meters.push_back({MeterKind::ReactiveFlow, br.from, br.to});
    for (int n = 0; n < nc.bus_count(); ++n)
        layout.meters.push_back({MeterKind::ActiveInjection, n, -1});
    for (int n = 0; n < nc.bus_count(); ++n)
        layout.meters.push_back({MeterKind::ReactiveInjection, n, -1});
    for (int n = 0; n < nc.bus_count(); ++n)
        layout.meters.push_back({MeterKind::VoltageMagnitude, n, -1});
    return layout;
}

IncidenceMatrix build_incidence(const NetworkCase& nc, const MeterLayout& layout) {
    if (layout.bus_count != nc.bus_count())
        throw ValidationError("meter layout bus count does not match the case");
    return build_incidence(layout);
}

BranchModel branch_model(const NetworkCase& nc, const MeterLayout& layout) {
    std::vector<BranchParams> params;
    params.reserve(nc.branches.size());
    for (const CaseBranch& br : nc.branches) params.push_back(br.params());
    return BranchModel(nc.bus_count(), std::move(params), layout, nc.slack);
}

}  // namespace gridsnoop
