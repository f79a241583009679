#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gridsnoop/powerflow.hpp"

namespace gridsnoop {

/// Synthetic load profile: per-bus daily shape times a uniform random
/// fluctuation, fully determined by (seed, t).
struct LoadProfileConfig {
    double fluctuation = 0.1;      // uniform +-fraction, in [0, 0.5]
    double shape_amplitude = 0.2;  // daily sinusoid amplitude
    int cadence_minutes = 1;       // >= 1
    std::uint64_t seed = 1;
};

/// Deterministic per-stream RNG derivation (splitmix64 mixing).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag, std::uint64_t index);

/// Per-bus P/Q injections at minute t. Loads consume, so a positive p_load
/// shows up as a negative injection.
Injections generate_loads(const NetworkCase& nc, const LoadProfileConfig& profile, double minutes);

/// z = h(x) + e with per-meter sigma = noise_fraction * max(|h_m|, 0.01).
/// noise_fraction 0 produces exact readings with unit sigmas.
MeasurementSet measure(const BranchModel& model, const SystemState& state, double noise_fraction,
                       std::uint64_t seed, double minutes);

void write_stream_csv(const std::string& path, const MeterLayout& layout,
                      const std::vector<MeasurementSet>& stream);
std::vector<MeasurementSet> read_stream_csv(const std::string& path, const MeterLayout& layout);

}  // namespace gridsnoop
