#pragma once

#include <random>
#include <string>

#include "gridsnoop/network.hpp"
#include "gridsnoop/types.hpp"

namespace testutil {

inline std::string case_path(const std::string& name) {
    return std::string(GRIDSNOOP_CASE_DIR) + "/" + name;
}

inline const char* kTwoBusCase = R"(
[buses]
1 slack 0 0 1.0
2 pq 0.5 0.0
[branches]
# g = 5, b = -15
1 2 0.02 0.06 0 1
)";

inline gridsnoop::SystemState random_state(int buses, std::mt19937_64& rng, double angle_span = 0.3,
                                           double vm_span = 0.1) {
    std::uniform_real_distribution<double> da(-angle_span, angle_span);
    std::uniform_real_distribution<double> dv(-vm_span, vm_span);
    gridsnoop::SystemState s(buses);
    for (int i = 0; i < buses; ++i) {
        s.va[i] = da(rng);
        s.vm[i] = 1.0 + dv(rng);
    }
    return s;
}

// Central finite differences of a vector-valued function, column by column.
template <typename F>
gridsnoop::Mat finite_difference(F&& fn, const gridsnoop::Vec& x, double step = 1e-6) {
    gridsnoop::Vec base = fn(x);
    gridsnoop::Mat jac(base.size(), x.size());
    for (int c = 0; c < x.size(); ++c) {
        gridsnoop::Vec hi = x, lo = x;
        hi[c] += step;
        lo[c] -= step;
        jac.col(c) = (fn(hi) - fn(lo)) / (2.0 * step);
    }
    return jac;
}

inline double max_relative_error(const gridsnoop::Mat& a, const gridsnoop::Mat& b,
                                 double floor = 1e-6) {
    double worst = 0.0;
    for (int r = 0; r < a.rows(); ++r)
        for (int c = 0; c < a.cols(); ++c) {
            double scale = std::max({std::abs(a(r, c)), std::abs(b(r, c)), floor});
            worst = std::max(worst, std::abs(a(r, c) - b(r, c)) / scale);
        }
    return worst;
}

}  // namespace testutil
