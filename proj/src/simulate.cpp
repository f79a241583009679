#include "gridsnoop/simulate.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

namespace gridsnoop {

namespace {
constexpr double kMinutesPerDay = 1440.0;
constexpr double kSigmaFloor = 0.01;  // per-unit reading floor for sigma scaling

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}
}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag, std::uint64_t index) {
    return splitmix64(splitmix64(seed ^ splitmix64(tag)) ^ index);
}

Injections generate_loads(const NetworkCase& nc, const LoadProfileConfig& profile, double minutes) {
    if (minutes < 0.0) throw ValidationError("load profile time must be >= 0");
    if (profile.fluctuation < 0.0 || profile.fluctuation > 0.5)
        throw ValidationError("fluctuation fraction must lie in [0, 0.5]");
    if (profile.cadence_minutes < 1) throw ValidationError("cadence must be >= 1 minute");

    const int n = nc.bus_count();
    const auto index = static_cast<std::uint64_t>(minutes / profile.cadence_minutes);
    std::mt19937_64 rng(mix_seed(profile.seed, 0x6c6f6164ULL, index));
    std::uniform_real_distribution<double> wobble(-profile.fluctuation, profile.fluctuation);

    Injections inj{Vec::Zero(n), Vec::Zero(n)};
    for (int i = 0; i < n; ++i) {
        // Buses peak at staggered times of day so the operating point keeps moving.
        const double phase = 2.0 * M_PI * (minutes + 137.0 * i) / kMinutesPerDay;
        const double shape = 1.0 + profile.shape_amplitude * std::sin(phase);
        const double factor = shape * (1.0 + wobble(rng));
        inj.p[i] = -nc.buses[i].p_load * factor;
        inj.q[i] = -nc.buses[i].q_load * factor;
    }
    return inj;
}

MeasurementSet measure(const BranchModel& model, const SystemState& state, double noise_fraction,
                       std::uint64_t seed, double minutes) {
    MeasurementSet ms;
    ms.minutes = minutes;
    ms.values = model.measurement(state);
    const int m = static_cast<int>(ms.values.size());
    ms.sigma.resize(m);

    if (noise_fraction <= 0.0) {
        ms.sigma.setOnes();
        return ms;
    }

    std::mt19937_64 rng(mix_seed(seed, 0x6d657465ULL, static_cast<std::uint64_t>(minutes)));
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int i = 0; i < m; ++i) {
        ms.sigma[i] = noise_fraction * std::max(std::abs(ms.values[i]), kSigmaFloor);
        ms.values[i] += ms.sigma[i] * gauss(rng);
    }
    return ms;
}

void write_stream_csv(const std::string& path, const MeterLayout& layout,
                      const std::vector<MeasurementSet>& stream) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write stream file: " + path);
    out << "t,meter_id,kind,value,sigma\n";
    char buf[160];
    for (const MeasurementSet& ms : stream) {
        for (int m = 0; m < layout.size(); ++m) {
            std::snprintf(buf, sizeof(buf), "%.10g,%d,%s,%.12g,%.12g\n", ms.minutes, m,
                          meter_kind_name(layout.meters[m].kind).c_str(), ms.values[m],
                          ms.sigma[m]);
            out << buf;
        }
    }
}

std::vector<MeasurementSet> read_stream_csv(const std::string& path, const MeterLayout& layout) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open stream file: " + path);
    std::string line;
    std::getline(in, line);  // header
    std::vector<MeasurementSet> stream;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string field;
        double t, value, sigma;
        int meter_id;
        std::getline(ls, field, ',');
        t = std::stod(field);
        std::getline(ls, field, ',');
        meter_id = std::stoi(field);
        std::getline(ls, field, ',');  // kind, informational
        std::getline(ls, field, ',');
        value = std::stod(field);
        std::getline(ls, field, ',');
        sigma = std::stod(field);

        if (stream.empty() || stream.back().minutes != t) {
            MeasurementSet ms;
            ms.minutes = t;
            ms.values = Vec::Zero(layout.size());
            ms.sigma = Vec::Ones(layout.size());
            stream.push_back(std::move(ms));
        }
        if (meter_id < 0 || meter_id >= layout.size())
            throw ValidationError("stream meter id out of range: " + std::to_string(meter_id));
        stream.back().values[meter_id] = value;
        stream.back().sigma[meter_id] = sigma;
    }
    return stream;
}

}  // namespace gridsnoop
