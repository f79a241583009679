#pragma once

#include <string>
#include <vector>

#include "gridsnoop/acflow.hpp"
#include "gridsnoop/types.hpp"

namespace gridsnoop {

/// Column-aligned per-bus injection and voltage snapshots, one column per
/// sample, timestamps monotone.
struct SampleBuffer {
    Mat p;  // bus_count x T net active injections
    Mat q;  // bus_count x T net reactive injections
    Mat v;  // bus_count x T voltage magnitudes
    std::vector<double> minutes;

    int bus_count() const { return static_cast<int>(p.rows()); }
    int size() const { return static_cast<int>(p.cols()); }

    void push(double t, const Vec& pi, const Vec& qi, const Vec& vi);
    SampleBuffer head(int count) const;
    SampleBuffer tail(int count) const;
};

/// Pull per-bus injection/voltage columns out of a full measurement snapshot.
void buffer_from_measurements(SampleBuffer& buf, const MeterLayout& layout,
                              const MeasurementSet& ms);

struct CoarseOptions {
    double ridge = -1.0;  // <0 selects 1e-6 * trace of the Gram matrix; 0 disables
    bool center_voltages = false;
};

/// Nodal-matrix approximations from the linearised injection regression.
struct CoarseEstimate {
    Mat g_nodal;
    Mat b_nodal;
    double gram_condition = 0.0;
};

CoarseEstimate coarse_identify(const SampleBuffer& buf, const CoarseOptions& opts = {});

struct LearnedBranch {
    int from = 0;
    int to = 0;
    double g = 0.0;
    double b = 0.0;
};

/// Keep branch (i,j) iff |B#(i,j)| clears threshold_fraction of the largest
/// off-diagonal; seeds g,b from the coarse matrices.
std::vector<LearnedBranch> prune_incidence(const CoarseEstimate& coarse,
                                           double threshold_fraction);

struct FineOptions {
    int max_iterations = 40;
    double tolerance = 1e-7;  // relative mismatch-norm improvement
    double svd_cutoff = 1e-10;  // relative singular value truncation
    // Measured voltage magnitudes are treated as noisy observations of
    // per-snapshot voltage states; <0 estimates their sigma from the stream
    // by lag differencing, 0 pins voltages exactly at the readings.
    double voltage_sigma = -1.0;
};

/// Attacker's estimated grid: branch parameters plus per-snapshot angles and
/// fit diagnostics. Angles are referenced to bus 0 (the attacker has no way
/// to know the operator's slack).
struct LearnedModel {
    int bus_count = 0;
    std::vector<LearnedBranch> branches;
    Mat snapshot_angles;    // bus_count x T, reference row zero
    Mat snapshot_voltages;  // bus_count x T fitted magnitudes
    double mismatch_norm = 0.0;  // injection residual norm of the final fit
    int iterations = 0;
    int samples_used = 0;
    int reference_bus = 0;

    BranchModel to_branch_model(const MeterLayout& layout) const;
    std::vector<int> neighbors(int bus) const;
    bool has_branch(int i, int j) const;
};

LearnedModel fine_identify(const std::vector<LearnedBranch>& initial, const SampleBuffer& buf,
                           const FineOptions& opts = {}, const Mat* initial_angles = nullptr);

struct LearnOptions {
    CoarseOptions coarse;
    double prune_threshold = 0.002;  // permissive: the fit decides, trimming prunes
    FineOptions fine;
    double trim_fraction = 0.25;  // drop fitted branches below this fraction of the median |b|
    int min_samples = 200;
};

/// Full blind pipeline: coarse regression, incidence pruning, fine refinement.
/// Stage failures are rethrown with the stage name prefixed.
LearnedModel learn_topology(const SampleBuffer& buf, const LearnOptions& opts = {});

/// Same pipeline but refining from a previous model when its incidence is
/// still plausible; used for cheap periodic relearning.
LearnedModel relearn_topology(const SampleBuffer& buf, const LearnOptions& opts,
                              const LearnedModel& previous);

std::string serialize_learned_model(const LearnedModel& model);
LearnedModel parse_learned_model(const std::string& text);
void save_learned_model(const std::string& path, const LearnedModel& model);
LearnedModel load_learned_model(const std::string& path);

namespace detail {
/// Stacked identification residual [P_meas - P_hat; Q_meas - Q_hat] per
/// snapshot, and its dense Jacobian wrt [g; b; theta_1..theta_T]. Test-sized
/// problems only for the dense form.
Vec fine_residual(const std::vector<LearnedBranch>& topo, const Vec& g, const Vec& b,
                  const Mat& thetas, const SampleBuffer& buf, int reference_bus);
Mat fine_jacobian(const std::vector<LearnedBranch>& topo, const Vec& g, const Vec& b,
                  const Mat& thetas, const SampleBuffer& buf, int reference_bus);
}  // namespace detail

}  // namespace gridsnoop
