#pragma once

#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "gridsnoop/estimator.hpp"
#include "gridsnoop/topology.hpp"
#include "gridsnoop/types.hpp"

namespace gridsnoop {

/// Desired state bias: per-bus angle and magnitude offsets, zero where
/// untouched.
struct StateBias {
    Vec va;
    Vec vm;

    explicit StateBias(int bus_count) : va(Vec::Zero(bus_count)), vm(Vec::Zero(bus_count)) {}
    StateBias() = default;
    std::vector<int> touched_buses() const;
};

struct GateConfig {
    double margin = 0.8;       // in (0, 1]
    int min_samples = 200;     // before the first learning attempt
    double confidence = 0.99;  // attacker-side chi-squared rule
    int noise_window = 60;     // residual window for the attacker's sigma estimate
};

struct AttackVector {
    StateBias bias;
    std::vector<int> target_buses;  // bus subgroup whose meters were rewritten
    Vec values;                     // crafted measurement vector z_a
    double pseudo_residual = 0.0;
    bool gate_pass = false;
};

/// Crafts z_a = h-hat(x-hat + c) on the meters of the target-bus subgroups,
/// leaving every other meter untouched. Targets default to the buses the bias
/// touches. The bias must be zero outside the target set.
AttackVector craft_attack(const BranchModel& model, const Vec& z, const Vec& sigma_hat,
                          const StateBias& bias,
                          const std::optional<std::vector<int>>& target_buses = std::nullopt,
                          const EstimatorConfig& cfg = {});

/// Attacker's prediction of the operator residual: weighted 2-norm of
/// z_a - h-hat(x-hat + c) over the full meter set.
double pseudo_residual(const Vec& z_a, const BranchModel& model, const SystemState& x_hat,
                       const StateBias& bias, const Vec& sigma_hat);

/// Meters whose absolute fitted-minus-measured residual exceeds the per-meter
/// alarm; these mark regions of the model not to trust.
std::vector<int> regional_residuals(const Vec& z, const Vec& fitted, const Vec& tau_m);

/// Largest subset of the target buses whose meter subgroups avoid every
/// flagged meter.
std::vector<int> select_attack_region(const std::vector<int>& flagged_meters,
                                      const IncidenceMatrix& inc,
                                      const std::vector<int>& target_buses);

enum class BiasMode { Fraction, Radians };

struct AttackGoal {
    std::vector<int> bias_buses{0};
    double magnitude = 0.15;
    BiasMode mode = BiasMode::Fraction;
};

struct CampaignStep {
    double minutes = 0.0;
    std::string phase;  // collect | learn | attack | wait
    int samples_seen = 0;
    double r_p = std::numeric_limits<double>::quiet_NaN();
    double tau_hat = std::numeric_limits<double>::quiet_NaN();
    bool gate = false;
    bool launched = false;
    Vec attack_values;  // crafted z_a when one was built this step
};

struct CampaignResult {
    std::vector<CampaignStep> steps;
    int launches = 0;
    double first_attack_minute = std::numeric_limits<double>::quiet_NaN();
    std::string diagnosis;
    std::optional<LearnedModel> model;
    Vec sigma_hat;
};

struct AttackLoopConfig {
    AttackGoal goal;
    GateConfig gate;
    LearnOptions learn;
    bool gating_enabled = true;             // false: launch every crafted vector
    std::optional<LearnedModel> pretrained; // replay without relearning
    EstimatorConfig estimator;
};

/// The decision loop: collect, learn the topology, craft, check the
/// pseudo-residual gate, then attack or wait for more data and relearn.
/// Consumes only measurement values and timestamps.
CampaignResult attack_loop(const std::vector<MeasurementSet>& stream, const MeterLayout& layout,
                           const AttackLoopConfig& cfg);

}  // namespace gridsnoop
