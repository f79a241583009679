#pragma once

#include <span>
#include <vector>

#include "gridsnoop/acflow.hpp"
#include "gridsnoop/types.hpp"

namespace gridsnoop {

struct EstimatorConfig {
    double tolerance = 1e-9;  // on the state update norm
    int max_iterations = 50;
    double confidence = 0.99;  // alarm confidence level
};

struct StateEstimate {
    SystemState state;            // x-hat
    Vec fitted;                   // h(x-hat)
    double residual_norm = 0.0;   // plain 2-norm of z - h(x-hat)
    double weighted_residual = 0.0;  // sqrt((z-h)' W (z-h)), the BDD statistic
    Vec meter_residuals;          // fitted minus measured, per meter
    int iterations = 0;
    bool converged = false;
    std::vector<double> objective_history;  // weighted objective per accepted iterate
};

/// Gauss-Newton WLS estimation from a flat start. Weights come from the
/// measurement sigmas (1/sigma^2). Throws ObservabilityError when the
/// Jacobian is rank deficient at the start point; non-convergence is reported
/// through the converged flag instead.
StateEstimate estimate_state(const MeasurementSet& z, const BranchModel& model,
                             const EstimatorConfig& cfg = {});

/// Euclidean norm of z - fitted. Lengths must match.
double residual(const Vec& z, const Vec& fitted);

/// Signed per-meter residual, fitted minus measured.
double per_meter_residual(const Vec& z, const Vec& fitted, int meter);

/// Alarm threshold tau: sqrt of the chi-squared quantile at the given
/// confidence with dof = meter count - state count. Compared against the
/// weighted residual.
double alarm_threshold(double confidence, int dof);

/// Data-driven alternative: the confidence-quantile of a clean residual window.
double empirical_alarm_threshold(std::span<const double> clean_residuals, double confidence);

/// Alarm iff r strictly exceeds tau.
bool bdd_check(double r, double tau);

}  // namespace gridsnoop
