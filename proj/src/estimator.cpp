#include "gridsnoop/estimator.hpp"

#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>

namespace gridsnoop {

namespace {

double weighted_objective(const Vec& z, const Vec& h, const Vec& w) {
    return ((z - h).array().square() * w.array()).sum();
}

}  // namespace

StateEstimate estimate_state(const MeasurementSet& z, const BranchModel& model,
                             const EstimatorConfig& cfg) {
    const int m = static_cast<int>(z.values.size());
    const int s = model.state_size();
    if (m != model.layout().size())
        throw ValidationError("measurement vector length does not match the meter layout");
    if ((z.sigma.array() <= 0.0).any())
        throw ValidationError("measurement sigmas must be strictly positive");

    const Vec w = z.sigma.array().square().inverse();
    const Vec sqrt_w = z.sigma.array().inverse();

    SystemState state(model.bus_count());  // flat start
    Vec x = model.pack_state(state);

    StateEstimate est;
    Vec h = model.measurement(state);
    double obj = weighted_objective(z.values, h, w);
    est.objective_history.push_back(obj);

    // Rank check at the start point; deficiency means unobservable states.
    {
        Mat hw = sqrt_w.asDiagonal() * model.measurement_jacobian(state);
        Eigen::ColPivHouseholderQR<Mat> qr(hw);
        qr.setThreshold(1e-10);
        if (qr.rank() < s) {
            std::vector<std::string> missing;
            const auto& perm = qr.colsPermutation().indices();
            for (int c = qr.rank(); c < s; ++c)
                missing.push_back(model.state_label(perm[c]));
            std::string msg = "measurement set does not observe the full state; deficient:";
            for (const auto& name : missing) msg += " " + name;
            throw ObservabilityError(msg, missing);
        }
    }

    bool converged = false;
    int it = 0;
    for (; it < cfg.max_iterations; ++it) {
        Mat jac = model.measurement_jacobian(state);
        Mat a = sqrt_w.asDiagonal() * jac;
        Vec rhs = sqrt_w.asDiagonal() * (z.values - h);
        Vec step = a.colPivHouseholderQr().solve(rhs);

        // Halve the step while the weighted objective increases.
        double scale = 1.0;
        Vec x_next;
        SystemState state_next;
        Vec h_next;
        double obj_next = 0.0;
        for (int half = 0; half < 8; ++half) {
            x_next = x + scale * step;
            state_next = model.unpack_state(x_next);
            h_next = model.measurement(state_next);
            obj_next = weighted_objective(z.values, h_next, w);
            if (obj_next <= obj || half == 7) break;
            scale *= 0.5;
        }

        x = x_next;
        state = state_next;
        h = h_next;
        obj = std::min(obj, obj_next);
        est.objective_history.push_back(obj);

        if ((scale * step).norm() < cfg.tolerance) {
            converged = true;
            ++it;
            break;
        }
    }

    est.state = state;
    est.fitted = h;
    est.residual_norm = (z.values - h).norm();
    est.weighted_residual = std::sqrt(weighted_objective(z.values, h, w));
    est.meter_residuals = h - z.values;
    est.iterations = it;
    est.converged = converged;
    return est;
}

double residual(const Vec& z, const Vec& fitted) {
    if (z.size() != fitted.size())
        throw ValidationError("residual: measured and fitted lengths differ");
    return (z - fitted).norm();
}

double per_meter_residual(const Vec& z, const Vec& fitted, int meter) {
    if (z.size() != fitted.size())
        throw ValidationError("per_meter_residual: measured and fitted lengths differ");
    if (meter < 0 || meter >= z.size())
        throw ValidationError("per_meter_residual: meter index out of range");
    return fitted[meter] - z[meter];
}

double alarm_threshold(double confidence, int dof) {
    if (dof < 1) throw ValidationError("alarm threshold needs dof >= 1");
    if (confidence <= 0.0 || confidence >= 1.0)
        throw ValidationError("confidence must lie in (0, 1)");
    boost::math::chi_squared dist(static_cast<double>(dof));
    return std::sqrt(boost::math::quantile(dist, confidence));
}

double empirical_alarm_threshold(std::span<const double> clean_residuals, double confidence) {
    if (clean_residuals.empty())
        throw ValidationError("empirical threshold needs a non-empty calibration window");
    if (confidence <= 0.0 || confidence >= 1.0)
        throw ValidationError("confidence must lie in (0, 1)");
    std::vector<double> sorted(clean_residuals.begin(), clean_residuals.end());
    std::sort(sorted.begin(), sorted.end());
    const double pos = confidence * (static_cast<double>(sorted.size()) - 1.0);
    const auto lo = static_cast<size_t>(pos);
    const size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

bool bdd_check(double r, double tau) { return r > tau; }

}  // namespace gridsnoop
