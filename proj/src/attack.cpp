#include "gridsnoop/attack.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <set>

namespace gridsnoop {

std::vector<int> StateBias::touched_buses() const {
    std::vector<int> out;
    for (int i = 0; i < va.size(); ++i)
        if (va[i] != 0.0 || vm[i] != 0.0) out.push_back(i);
    return out;
}

namespace {

SystemState biased_state(const SystemState& x, const StateBias& bias) {
    SystemState out = x;
    out.va += bias.va;
    out.vm += bias.vm;
    return out;
}

AttackVector craft_from_estimate(const BranchModel& model, const Vec& z, const Vec& sigma_hat,
                                 const StateBias& bias, const StateEstimate& est,
                                 const std::vector<int>& targets) {
    AttackVector av;
    av.bias = bias;
    av.target_buses = targets;

    Vec crafted = model.measurement(biased_state(est.state, bias));
    IncidenceMatrix inc = build_incidence(model.layout());
    std::vector<int> mask = subgraph_meters(inc, targets);

    av.values = z;
    for (int m : mask) av.values[m] = crafted[m];
    av.pseudo_residual = ((av.values - crafted).array() / sigma_hat.array()).matrix().norm();
    return av;
}

}  // namespace

AttackVector craft_attack(const BranchModel& model, const Vec& z, const Vec& sigma_hat,
                          const StateBias& bias,
                          const std::optional<std::vector<int>>& target_buses,
                          const EstimatorConfig& cfg) {
    if (bias.va.size() != model.bus_count() || bias.vm.size() != model.bus_count())
        throw ValidationError("state bias must be dimensioned to the bus count");

    std::vector<int> targets = target_buses.value_or(bias.touched_buses());
    std::sort(targets.begin(), targets.end());
    for (int bus : bias.touched_buses())
        if (!std::binary_search(targets.begin(), targets.end(), bus))
            throw ValidationError("bias touches bus " + std::to_string(bus) +
                                  " outside the target set");

    MeasurementSet ms;
    ms.values = z;
    ms.sigma = sigma_hat;
    StateEstimate est = estimate_state(ms, model, cfg);
    if (!est.converged)
        throw ConvergenceError("attacker-side state estimation did not converge; attack aborted");
    return craft_from_estimate(model, z, sigma_hat, bias, est, targets);
}

double pseudo_residual(const Vec& z_a, const BranchModel& model, const SystemState& x_hat,
                       const StateBias& bias, const Vec& sigma_hat) {
    Vec predicted = model.measurement(biased_state(x_hat, bias));
    if (z_a.size() != predicted.size() || sigma_hat.size() != predicted.size())
        throw ValidationError("pseudo-residual: inconsistent dimensions");
    return ((z_a - predicted).array() / sigma_hat.array()).matrix().norm();
}

std::vector<int> regional_residuals(const Vec& z, const Vec& fitted, const Vec& tau_m) {
    if (z.size() != fitted.size() || tau_m.size() != z.size())
        throw ValidationError("regional residuals: inconsistent dimensions");
    std::vector<int> flagged;
    for (int m = 0; m < z.size(); ++m)
        if (std::abs(fitted[m] - z[m]) > tau_m[m]) flagged.push_back(m);
    return flagged;
}

std::vector<int> select_attack_region(const std::vector<int>& flagged_meters,
                                      const IncidenceMatrix& inc,
                                      const std::vector<int>& target_buses) {
    std::set<int> flagged(flagged_meters.begin(), flagged_meters.end());
    std::vector<int> feasible;
    for (int bus : target_buses) {
        std::vector<int> meters = subgraph_meters(inc, {bus});
        bool clean = std::none_of(meters.begin(), meters.end(),
                                  [&](int m) { return flagged.count(m) > 0; });
        if (clean) feasible.push_back(bus);
    }
    return feasible;
}

namespace {

// Attacker's running noise estimate: per-meter standard deviation of its own
// estimation residuals over a window, corrected for fit leverage.
class NoiseTracker {
public:
    NoiseTracker(int meter_count, int window)
        : meter_count_(meter_count), window_(std::max(window, 8)) {}

    void add(const Vec& meter_residuals) {
        history_.push_back(meter_residuals);
        if (static_cast<int>(history_.size()) > window_) history_.pop_front();
    }

    bool ready() const { return static_cast<int>(history_.size()) >= 8; }

    void update_leverage(const BranchModel& model, const SystemState& at, const Vec& sigma) {
        Mat jac = model.measurement_jacobian(at);
        Mat wh = sigma.array().inverse().matrix().asDiagonal() * jac;
        Mat gram_inv = (wh.transpose() * wh).ldlt().solve(Mat::Identity(wh.cols(), wh.cols()));
        leverage_.resize(meter_count_);
        for (int m = 0; m < meter_count_; ++m) {
            double l = (wh.row(m) * gram_inv * wh.row(m).transpose())(0, 0);
            leverage_[m] = std::clamp(l, 0.0, 0.95);
        }
    }

    Vec sigma_hat() const {
        Vec out = Vec::Constant(meter_count_, 1.0);
        if (history_.empty()) return out;
        for (int m = 0; m < meter_count_; ++m) {
            double sum = 0.0, sumsq = 0.0;
            for (const Vec& r : history_) {
                sum += r[m];
                sumsq += r[m] * r[m];
            }
            const double count = static_cast<double>(history_.size());
            double var = sumsq / count - (sum / count) * (sum / count);
            if (leverage_.size() == meter_count_) var /= (1.0 - leverage_[m]);
            out[m] = std::max(std::sqrt(std::max(var, 0.0)), 1e-5);
        }
        return out;
    }

private:
    int meter_count_;
    int window_;
    std::deque<Vec> history_;
    Vec leverage_;
};

}  // namespace

CampaignResult attack_loop(const std::vector<MeasurementSet>& stream, const MeterLayout& layout,
                           const AttackLoopConfig& cfg) {
    CampaignResult result;
    const int n = layout.bus_count;
    const int meter_count = layout.size();
    const int dof = meter_count - (2 * n - 1);
    const double tau_hat = alarm_threshold(cfg.gate.confidence, dof);

    SampleBuffer buffer;
    std::optional<LearnedModel> model = cfg.pretrained;
    std::optional<BranchModel> view;
    NoiseTracker noise(meter_count, cfg.gate.noise_window);
    Vec sigma_hat = Vec::Ones(meter_count);
    bool need_learn = !model.has_value();
    bool sigma_primed = false;

    if (model) view = model->to_branch_model(layout);

    // the loop needs raw snapshot values; kept alongside the per-bus buffer
    std::vector<Vec> raw_values;

    auto bootstrap_sigma = [&]() {
        // Two passes over the recent window: unit weights seed the residuals,
        // the second pass re-estimates with the implied sigmas.
        for (int round = 0; round < 2; ++round) {
            NoiseTracker boot(meter_count, cfg.gate.noise_window);
            const int from = std::max(0, buffer.size() - cfg.gate.noise_window);
            StateEstimate last_est;
            for (int t = from; t < buffer.size(); ++t) {
                MeasurementSet ms;
                ms.minutes = buffer.minutes[t];
                ms.values = raw_values[t];
                ms.sigma = sigma_hat;
                last_est = estimate_state(ms, *view, cfg.estimator);
                boot.add(last_est.meter_residuals);
            }
            noise = boot;
            noise.update_leverage(*view, last_est.state, sigma_hat);
            sigma_hat = noise.sigma_hat();
        }
        sigma_primed = true;
    };

    for (const MeasurementSet& ms : stream) {
        CampaignStep step;
        step.minutes = ms.minutes;
        buffer_from_measurements(buffer, layout, ms);
        raw_values.push_back(ms.values);
        step.samples_seen = buffer.size();
        step.tau_hat = tau_hat;

        if (buffer.size() < cfg.gate.min_samples) {
            step.phase = "collect";
            result.steps.push_back(std::move(step));
            continue;
        }

        if (need_learn) {
            step.phase = "learn";
            try {
                if (model && cfg.gating_enabled)
                    model = relearn_topology(buffer, cfg.learn, *model);
                else if (!model)
                    model = learn_topology(buffer, cfg.learn);
                view = model->to_branch_model(layout);
                need_learn = false;
                bootstrap_sigma();
            } catch (const NumericalError& e) {
                result.diagnosis = e.what();
                result.steps.push_back(std::move(step));
                continue;  // wait for more data, rerun the learning step
            }
        }

        if (!model) {
            step.phase = "wait";
            result.steps.push_back(std::move(step));
            continue;
        }
        if (!sigma_primed) bootstrap_sigma();

        MeasurementSet attacker_ms;
        attacker_ms.minutes = ms.minutes;
        attacker_ms.values = ms.values;
        attacker_ms.sigma = sigma_hat;
        StateEstimate est;
        try {
            est = estimate_state(attacker_ms, *view, cfg.estimator);
        } catch (const NumericalError& e) {
            step.phase = "wait";
            result.diagnosis = e.what();
            need_learn = cfg.gating_enabled;
            result.steps.push_back(std::move(step));
            continue;
        }
        noise.add(est.meter_residuals);
        sigma_hat = noise.sigma_hat();

        Vec tau_m = 3.0 * sigma_hat;
        std::vector<int> flagged = regional_residuals(ms.values, est.fitted, tau_m);
        IncidenceMatrix inc = build_incidence(layout);
        std::vector<int> feasible = select_attack_region(flagged, inc, cfg.goal.bias_buses);

        if (feasible.empty()) {
            step.phase = "wait";
            need_learn = cfg.gating_enabled;
            result.steps.push_back(std::move(step));
            continue;
        }

        // Bias the feasible buses; fraction mode scales the estimated angle in
        // a zero-mean gauge since the attacker has no reference-bus knowledge.
        StateBias bias(n);
        const double mean_angle = est.state.va.mean();
        for (int bus : feasible) {
            bias.va[bus] = cfg.goal.mode == BiasMode::Fraction
                               ? cfg.goal.magnitude * (est.state.va[bus] - mean_angle)
                               : cfg.goal.magnitude;
        }

        // Rewrite the full subgroup the bias reaches: targets plus their
        // learned neighbours, so no stale meter contradicts the biased state.
        std::set<int> mask_set(feasible.begin(), feasible.end());
        for (int bus : feasible)
            for (int nb : model->neighbors(bus)) mask_set.insert(nb);
        std::vector<int> mask(mask_set.begin(), mask_set.end());

        AttackVector av = craft_from_estimate(*view, ms.values, sigma_hat, bias, est, mask);
        av.gate_pass = av.pseudo_residual <= cfg.gate.margin * tau_hat;
        step.r_p = av.pseudo_residual;
        step.gate = av.gate_pass;
        step.attack_values = av.values;

        const bool launch = cfg.gating_enabled ? av.gate_pass : true;
        step.launched = launch;
        step.phase = launch ? "attack" : "wait";
        if (launch) {
            ++result.launches;
            if (std::isnan(result.first_attack_minute)) result.first_attack_minute = ms.minutes;
        }
        if (!av.gate_pass && cfg.gating_enabled) need_learn = true;
        result.steps.push_back(std::move(step));
    }

    if (result.launches == 0 && result.diagnosis.empty()) {
        result.diagnosis = buffer.size() < cfg.gate.min_samples
                               ? "insufficient data: stream ended before the minimum sample count"
                               : "no attack passed the pseudo-residual gate";
    }
    result.model = model;
    result.sigma_hat = sigma_hat;
    return result;
}

}  // namespace gridsnoop
