#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gridsnoop/attack.hpp"
#include "gridsnoop/estimator.hpp"
#include "gridsnoop/network.hpp"
#include "gridsnoop/simulate.hpp"
#include "gridsnoop/topology.hpp"

namespace gridsnoop {

/// Experiment description: flat key=value file, every key overridable from
/// the command line.
struct ScenarioConfig {
    std::string case_path;
    std::string out_dir = "out";
    std::vector<std::uint64_t> seeds{1};
    int length_min = 720;
    int cadence_min = 1;
    double noise_fraction = 0.01;

    double profile_fluctuation = 0.1;
    double profile_shape_amplitude = 0.2;

    EstimatorConfig estimator;
    std::string alarm_mode = "chi2";  // chi2 | empirical
    int calibration_window = 120;

    LearnOptions learn;
    std::vector<int> sample_counts{50, 100, 200, 400, 720};

    std::vector<int> attack_bias_buses{1};  // external bus ids
    std::string bias_mode = "fraction";     // fraction | radians
    double attack_magnitude = 0.15;

    GateConfig gate;
    bool gate_enabled = true;

    int jobs = 1;
};

ScenarioConfig load_scenario_config(const std::string& path);
ScenarioConfig parse_scenario_config(const std::string& text);
void apply_override(ScenarioConfig& cfg, const std::string& key, const std::string& value);
void validate_scenario(const ScenarioConfig& cfg);
const std::vector<std::pair<std::string, std::string>>& scenario_config_keys();  // key, help

/// Ground-truth stream for one seed: quasi-static snapshots every cadence
/// minute, Newton-Raphson solved, then metered with noise.
std::vector<MeasurementSet> simulate_stream(const NetworkCase& nc, const MeterLayout& layout,
                                            const ScenarioConfig& cfg, std::uint64_t seed,
                                            std::vector<SystemState>* states = nullptr);

struct OperatorRow {
    double minutes = 0.0;
    double r = 0.0;  // weighted residual, the BDD statistic
    double r_raw = 0.0;
    double tau = 0.0;
    bool alarm = false;
    int iterations = 0;
    bool converged = false;
};

struct SimulateResult {
    std::uint64_t seed = 0;
    int snapshots = 0;
    int alarms = 0;
    std::string stream_path;
    std::string estimates_path;
};

std::vector<SimulateResult> cmd_simulate(const ScenarioConfig& cfg);

struct LearnRow {
    int samples = 0;
    std::uint64_t seed = 0;
    double r_p = std::numeric_limits<double>::quiet_NaN();
    double alarm = 0.0;  // operator tau the pseudo-residual is judged against
    bool under_alarm = false;
    std::string error;
};

std::vector<LearnRow> cmd_learn(const ScenarioConfig& cfg);

struct CampaignSeedSummary {
    std::uint64_t seed = 0;
    int snapshots = 0;
    int crafted = 0;
    int launches = 0;
    int launched_alarms = 0;
    int crafted_would_alarm = 0;  // operator alarms had every crafted vector launched
    double first_attack_minute = std::numeric_limits<double>::quiet_NaN();
    std::string diagnosis;

    double gated_detection_rate() const {
        return launches ? static_cast<double>(launched_alarms) / launches
                        : std::numeric_limits<double>::quiet_NaN();
    }
    double ungated_detection_rate() const {
        return crafted ? static_cast<double>(crafted_would_alarm) / crafted
                       : std::numeric_limits<double>::quiet_NaN();
    }
};

std::vector<CampaignSeedSummary> cmd_campaign(const ScenarioConfig& cfg);

}  // namespace gridsnoop
