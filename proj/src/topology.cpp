#include "gridsnoop/topology.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace gridsnoop {

void SampleBuffer::push(double t, const Vec& pi, const Vec& qi, const Vec& vi) {
    const int n = static_cast<int>(pi.size());
    if (qi.size() != n || vi.size() != n)
        throw ValidationError("sample buffer columns must share the bus count");
    if (!minutes.empty() && t <= minutes.back())
        throw ValidationError("sample buffer timestamps must be strictly increasing");
    if (size() == 0) {
        p.resize(n, 0);
        q.resize(n, 0);
        v.resize(n, 0);
    }
    p.conservativeResize(n, p.cols() + 1);
    q.conservativeResize(n, q.cols() + 1);
    v.conservativeResize(n, v.cols() + 1);
    p.col(p.cols() - 1) = pi;
    q.col(q.cols() - 1) = qi;
    v.col(v.cols() - 1) = vi;
    minutes.push_back(t);
}

SampleBuffer SampleBuffer::head(int count) const {
    count = std::min(count, size());
    SampleBuffer out;
    out.p = p.leftCols(count);
    out.q = q.leftCols(count);
    out.v = v.leftCols(count);
    out.minutes.assign(minutes.begin(), minutes.begin() + count);
    return out;
}

SampleBuffer SampleBuffer::tail(int count) const {
    count = std::min(count, size());
    SampleBuffer out;
    out.p = p.rightCols(count);
    out.q = q.rightCols(count);
    out.v = v.rightCols(count);
    out.minutes.assign(minutes.end() - count, minutes.end());
    return out;
}

void buffer_from_measurements(SampleBuffer& buf, const MeterLayout& layout,
                              const MeasurementSet& ms) {
    const int n = layout.bus_count;
    Vec p = Vec::Zero(n), q = Vec::Zero(n), v = Vec::Ones(n);
    for (int m = 0; m < layout.size(); ++m) {
        const Meter& meter = layout.meters[m];
        switch (meter.kind) {
            case MeterKind::ActiveInjection: p[meter.bus_from] = ms.values[m]; break;
            case MeterKind::ReactiveInjection: q[meter.bus_from] = ms.values[m]; break;
            case MeterKind::VoltageMagnitude: v[meter.bus_from] = ms.values[m]; break;
            default: break;
        }
    }
    buf.push(ms.minutes, p, q, v);
}

CoarseEstimate coarse_identify(const SampleBuffer& buf, const CoarseOptions& opts) {
    const int n = buf.bus_count();
    const int t = buf.size();
    if (t < 1) throw ValidationError("coarse identification needs at least one sample");
    if (opts.ridge == 0.0 && t < n)
        throw SingularityError("Gram matrix is singular with T < bus count; "
                               "collect more samples or set ridge > 0");

    Mat v = buf.v;
    Mat pv = buf.p.cwiseQuotient(buf.v);
    Mat qv = buf.q.cwiseQuotient(buf.v);
    if (opts.center_voltages) {
        v.colwise() -= v.rowwise().mean().eval();
        pv.colwise() -= pv.rowwise().mean().eval();
        qv.colwise() -= qv.rowwise().mean().eval();
    }

    Mat gram = v * v.transpose();
    double ridge = opts.ridge;
    if (ridge < 0.0) {
        // Scale the automatic ridge to the fluctuation energy, not the raw
        // Gram trace: the voltage mean carries almost all of the raw energy
        // and a trace-scaled ridge would drown the informative directions.
        Mat centered = v;
        centered.colwise() -= v.rowwise().mean().eval();
        ridge = 1e-6 * centered.squaredNorm();
    }

    Eigen::JacobiSVD<Mat> svd(gram + ridge * Mat::Identity(n, n));
    const double smax = svd.singularValues()(0);
    const double smin = svd.singularValues()(n - 1);
    const double cond = smin > 0.0 ? smax / smin : std::numeric_limits<double>::infinity();
    if (ridge == 0.0 && (t < n || cond > 1e13 || !(smin > 0.0)))
        throw SingularityError(
            "voltage Gram matrix is numerically singular (condition " + std::to_string(cond) +
            "); collect more samples or set ridge > 0");

    Mat inv_gram = (gram + ridge * Mat::Identity(n, n)).ldlt().solve(Mat::Identity(n, n));
    CoarseEstimate out;
    out.g_nodal = pv * v.transpose() * inv_gram;
    out.b_nodal = -(qv * v.transpose() * inv_gram);
    out.gram_condition = cond;
    if (!out.g_nodal.allFinite() || !out.b_nodal.allFinite())
        throw SingularityError("coarse regression produced non-finite entries");
    return out;
}

std::vector<LearnedBranch> prune_incidence(const CoarseEstimate& coarse,
                                           double threshold_fraction) {
    if (threshold_fraction <= 0.0 || threshold_fraction >= 1.0)
        throw ValidationError("prune threshold must lie in (0, 1)");
    const int n = static_cast<int>(coarse.b_nodal.rows());

    double max_off = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (i != j) max_off = std::max(max_off, std::abs(coarse.b_nodal(i, j)));
    if (max_off <= 0.0) throw ConnectivityError("coarse susceptance matrix has no off-diagonals");

    std::vector<LearnedBranch> branches;
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            const double bmag =
                0.5 * (std::abs(coarse.b_nodal(i, j)) + std::abs(coarse.b_nodal(j, i)));
            if (bmag < threshold_fraction * max_off) continue;
            LearnedBranch br;
            br.from = i;
            br.to = j;
            br.g = std::max(-0.5 * (coarse.g_nodal(i, j) + coarse.g_nodal(j, i)), 0.0);
            br.b = -0.5 * (coarse.b_nodal(i, j) + coarse.b_nodal(j, i));
            branches.push_back(br);
        }
    }

    // the retained graph must span every bus
    std::vector<char> reached(n, 0);
    std::vector<int> stack{0};
    reached[0] = 1;
    while (!stack.empty()) {
        int u = stack.back();
        stack.pop_back();
        for (const LearnedBranch& br : branches) {
            int other = br.from == u ? br.to : (br.to == u ? br.from : -1);
            if (other >= 0 && !reached[other]) {
                reached[other] = 1;
                stack.push_back(other);
            }
        }
    }
    for (int i = 0; i < n; ++i)
        if (!reached[i])
            throw ConnectivityError("pruned graph is disconnected at bus " + std::to_string(i) +
                                    "; lower the prune threshold");
    return branches;
}

namespace {

int angle_col_of(int bus, int reference) {
    if (bus == reference) return -1;
    return bus < reference ? bus : bus - 1;
}

// One snapshot of the stacked identification system. Rows: n active
// injections, n reactive injections, n voltage observation priors. State
// columns: n-1 free angles then n voltage magnitudes.
struct SnapshotSystem {
    Vec r;    // 3n residual (measured minus predicted)
    Mat jgb;  // 3n x 2m, prediction derivatives wrt branch g then b
    Mat jst;  // 3n x (2n-1), prediction derivatives wrt [theta; v]
};

void assemble_snapshot(const std::vector<LearnedBranch>& topo, const Vec& g, const Vec& b,
                       const Vec& theta, const Vec& v, const Vec& v_meas, const Vec& w_v,
                       const Vec& p_meas, const Vec& q_meas, int reference, SnapshotSystem& sys) {
    const int n = static_cast<int>(v.size());
    const int m = static_cast<int>(topo.size());
    sys.r = Vec::Zero(3 * n);
    sys.jgb = Mat::Zero(3 * n, 2 * m);
    sys.jst = Mat::Zero(3 * n, 2 * n - 1);
    sys.r.head(n) = p_meas;
    sys.r.segment(n, n) = q_meas;
    const int vcol0 = n - 1;

    for (int k = 0; k < m; ++k) {
        BranchParams br{topo[k].from, topo[k].to, g[k], b[k], 0.0, 1.0};
        FlowEval ff = flow_from_end(br, v[br.from], v[br.to], theta[br.from], theta[br.to]);
        FlowEval ft = flow_to_end(br, v[br.from], v[br.to], theta[br.from], theta[br.to]);

        auto add = [&](int bus, const FlowEval& f) {
            sys.r[bus] -= f.p;
            sys.r[n + bus] -= f.q;
            sys.jgb(bus, k) += f.dp_dg;
            sys.jgb(bus, m + k) += f.dp_db;
            sys.jgb(n + bus, k) += f.dq_dg;
            sys.jgb(n + bus, m + k) += f.dq_db;
            int ci = angle_col_of(br.from, reference);
            int cj = angle_col_of(br.to, reference);
            if (ci >= 0) {
                sys.jst(bus, ci) += f.dp_dti;
                sys.jst(n + bus, ci) += f.dq_dti;
            }
            if (cj >= 0) {
                sys.jst(bus, cj) += f.dp_dtj;
                sys.jst(n + bus, cj) += f.dq_dtj;
            }
            sys.jst(bus, vcol0 + br.from) += f.dp_dvi;
            sys.jst(bus, vcol0 + br.to) += f.dp_dvj;
            sys.jst(n + bus, vcol0 + br.from) += f.dq_dvi;
            sys.jst(n + bus, vcol0 + br.to) += f.dq_dvj;
        };
        add(br.from, ff);
        add(br.to, ft);
    }

    for (int i = 0; i < n; ++i) {
        sys.r[2 * n + i] = w_v[i] * (v_meas[i] - v[i]);
        sys.jst(2 * n + i, vcol0 + i) = w_v[i];
    }
}

// Mutable iterate of one identification run.
struct Iterate {
    Vec g, b;
    Mat thetas;  // n x T
    Mat volts;   // n x T
};

double run_objective(const std::vector<LearnedBranch>& topo, const SampleBuffer& buf,
                     const Vec& w_v, int reference, const Iterate& it, bool injection_only) {
    double sum = 0.0;
    SnapshotSystem sys;
    const int n = buf.bus_count();
    for (int t = 0; t < buf.size(); ++t) {
        assemble_snapshot(topo, it.g, it.b, it.thetas.col(t), it.volts.col(t), buf.v.col(t), w_v,
                          buf.p.col(t), buf.q.col(t), reference, sys);
        sum += injection_only ? sys.r.head(2 * n).squaredNorm() : sys.r.squaredNorm();
    }
    return std::sqrt(sum);
}

}  // namespace

LearnedModel fine_identify(const std::vector<LearnedBranch>& initial, const SampleBuffer& buf,
                           const FineOptions& opts, const Mat* initial_angles) {
    const int n = buf.bus_count();
    const int m = static_cast<int>(initial.size());
    const int t_count = buf.size();
    const int reference = 0;
    if (m == 0) throw ValidationError("fine identification needs a non-empty branch list");
    if (t_count < 1) throw ValidationError("fine identification needs samples");

    // Confidence of the voltage readings: estimated from lag differences of
    // the stream unless configured. Slow load drift contributes little to a
    // one-minute difference, so it is noise-dominated.
    Vec w_v(n);
    if (opts.voltage_sigma > 0.0) {
        w_v.setConstant(1.0 / opts.voltage_sigma);
    } else if (opts.voltage_sigma == 0.0) {
        w_v.setConstant(1e6);  // pin voltages at the readings
    } else {
        for (int i = 0; i < n; ++i) {
            double s = 0.0;
            for (int t = 1; t < t_count; ++t) {
                const double d = buf.v(i, t) - buf.v(i, t - 1);
                s += d * d;
            }
            const double sigma =
                t_count > 1 ? std::sqrt(s / (2.0 * (t_count - 1))) : 1e-2;
            w_v[i] = 1.0 / std::max(sigma, 1e-4);
        }
    }

    Iterate work{Vec(m), Vec(m), Mat::Zero(n, t_count), buf.v};
    for (int k = 0; k < m; ++k) {
        work.g[k] = std::max(initial[k].g, 0.0);
        work.b[k] = initial[k].b;
    }
    if (initial_angles) {
        if (initial_angles->rows() != n || initial_angles->cols() != t_count)
            throw ValidationError("initial angles must be bus_count x T");
        work.thetas = *initial_angles;
        work.thetas.row(reference).setZero();
    }

    auto objective_of = [&](const Iterate& it) {
        return run_objective(initial, buf, w_v, reference, it, false);
    };
    double objective = objective_of(work);
    std::vector<double> history{objective};
    int consecutive_increases = 0;
    int iterations = 0;
    // cancellation noise floor of the objective evaluation itself
    const double abs_floor =
        1e-13 * std::max(1.0, std::sqrt(buf.p.squaredNorm() + buf.q.squaredNorm()));

    // Per-snapshot state solve: a pseudo-power-flow/state-estimation pass with
    // the branch parameters held fixed.
    auto state_pass = [&](int passes) {
        SnapshotSystem sys;
        for (int pass = 0; pass < passes; ++pass) {
            Mat dtheta = Mat::Zero(n, t_count), dvolt = Mat::Zero(n, t_count);
            for (int t = 0; t < t_count; ++t) {
                assemble_snapshot(initial, work.g, work.b, work.thetas.col(t), work.volts.col(t),
                                  buf.v.col(t), w_v, buf.p.col(t), buf.q.col(t), reference, sys);
                Vec ds = sys.jst.colPivHouseholderQr().solve(sys.r);
                for (int bus = 0; bus < n; ++bus) {
                    int col = angle_col_of(bus, reference);
                    if (col >= 0) dtheta(bus, t) = ds[col];
                    dvolt(bus, t) = ds[n - 1 + bus];
                }
            }
            double scale = 1.0;
            for (int half = 0; half < 10; ++half) {
                Iterate trial = work;
                trial.thetas = work.thetas + scale * dtheta;
                trial.volts = work.volts + scale * dvolt;
                double o_try = objective_of(trial);
                if (o_try <= objective) {
                    work = std::move(trial);
                    objective = o_try;
                    break;
                }
                scale *= 0.5;
            }
        }
    };

    // Branch parameters enter the flow equations linearly at fixed states:
    // one global least-squares pass.
    auto parameter_pass = [&]() {
        SnapshotSystem sys;
        Mat normal = Mat::Zero(2 * m, 2 * m);
        Vec rhs = Vec::Zero(2 * m);
        for (int t = 0; t < t_count; ++t) {
            assemble_snapshot(initial, work.g, work.b, work.thetas.col(t), work.volts.col(t),
                              buf.v.col(t), w_v, buf.p.col(t), buf.q.col(t), reference, sys);
            normal += sys.jgb.transpose() * sys.jgb;
            rhs += sys.jgb.transpose() * sys.r;
        }
        Eigen::SelfAdjointEigenSolver<Mat> eig(normal);
        const Vec& ev = eig.eigenvalues();
        const double cutoff = std::max(ev(ev.size() - 1), 0.0) * 1e-12;
        Vec y = eig.eigenvectors().transpose() * rhs;
        for (int i = 0; i < ev.size(); ++i) y[i] = ev[i] > cutoff ? y[i] / ev[i] : 0.0;
        Vec dgb = eig.eigenvectors() * y;
        double scale = 1.0;
        for (int half = 0; half < 10; ++half) {
            Iterate trial = work;
            trial.g = (work.g + scale * dgb.head(m)).cwiseMax(0.0);
            trial.b = work.b + scale * dgb.tail(m);
            double o_try = objective_of(trial);
            if (o_try <= objective) {
                work = std::move(trial);
                objective = o_try;
                break;
            }
            scale *= 0.5;
        }
    };

    if (initial_angles) {
        // With placed angles the parameter subproblem is a global linear
        // least-squares; polish both blocks before the joint iteration.
        parameter_pass();
        state_pass(1);
        parameter_pass();
    } else {
        state_pass(2);
        for (int round = 0; round < 3; ++round) {
            parameter_pass();
            state_pass(1);
        }
        parameter_pass();
    }
    history.push_back(objective);

    std::vector<SnapshotSystem> snaps(t_count);
    std::vector<Eigen::ColPivHouseholderQR<Mat>> state_qr(t_count);

    for (int it = 0; it < opts.max_iterations; ++it) {
        // Eliminate each snapshot's state block orthogonally, stack what is
        // left over (g, b), and solve that with a rank-revealing SVD. This is
        // the minimum-norm Gauss-Newton step of the full stacked system.
        const int reduced_rows = 3 * n - (2 * n - 1);
        Mat stacked(reduced_rows * t_count, 2 * m);
        Vec stacked_rhs(reduced_rows * t_count);
        for (int t = 0; t < t_count; ++t) {
            assemble_snapshot(initial, work.g, work.b, work.thetas.col(t), work.volts.col(t),
                              buf.v.col(t), w_v, buf.p.col(t), buf.q.col(t), reference, snaps[t]);
            Eigen::HouseholderQR<Mat> qr(snaps[t].jst);
            Mat qtj = qr.householderQ().transpose() * snaps[t].jgb;
            Vec qtr = qr.householderQ().transpose() * snaps[t].r;
            stacked.middleRows(t * reduced_rows, reduced_rows) = qtj.bottomRows(reduced_rows);
            stacked_rhs.segment(t * reduced_rows, reduced_rows) = qtr.tail(reduced_rows);
            state_qr[t].compute(snaps[t].jst);
        }

        Eigen::BDCSVD<Mat> svd(stacked, Eigen::ComputeThinU | Eigen::ComputeThinV);
        const Vec& sv = svd.singularValues();
        const double cutoff = opts.svd_cutoff * sv(0);
        Vec uy = svd.matrixU().transpose() * stacked_rhs;
        for (int i = 0; i < sv.size(); ++i) uy[i] = sv[i] > cutoff ? uy[i] / sv[i] : 0.0;
        Vec dgb = svd.matrixV() * uy;

        // Ill-determined directions just above the cutoff can produce steps far
        // outside the region where the linearisation holds; cap the move.
        const double step_cap = 10.0 * (1.0 + std::max(work.g.cwiseAbs().maxCoeff(),
                                                       work.b.cwiseAbs().maxCoeff()));
        const double step_max = dgb.cwiseAbs().maxCoeff();
        if (step_max > step_cap) dgb *= step_cap / step_max;

        Mat dtheta = Mat::Zero(n, t_count), dvolt = Mat::Zero(n, t_count);
        for (int t = 0; t < t_count; ++t) {
            Vec rhs = snaps[t].r - snaps[t].jgb * dgb;
            Vec ds = state_qr[t].solve(rhs);
            for (int bus = 0; bus < n; ++bus) {
                int col = angle_col_of(bus, reference);
                if (col >= 0) dtheta(bus, t) = ds[col];
                dvolt(bus, t) = ds[n - 1 + bus];
            }
        }

        // Damped, projected update: g stays non-negative. Track the least-bad
        // scale so a genuinely divergent run is distinguishable from the
        // numerical floor.
        double scale = 1.0;
        Iterate best = work;
        double objective_best = std::numeric_limits<double>::infinity();
        bool improved = false;
        for (int half = 0; half < 14; ++half) {
            Iterate trial;
            trial.g = (work.g + scale * dgb.head(m)).cwiseMax(0.0);
            trial.b = work.b + scale * dgb.tail(m);
            trial.thetas = work.thetas + scale * dtheta;
            trial.volts = work.volts + scale * dvolt;
            double o_try = objective_of(trial);
            if (o_try < objective_best) {
                objective_best = o_try;
                best = std::move(trial);
            }
            if (objective_best <= objective) {
                improved = true;
                break;
            }
            scale *= 0.5;
        }

        ++iterations;
        if (!improved) {
            // Stuck: no scale improves. Sub-0.1% excursions mean a plateau
            // (rank-limited or at the numerical floor), which is convergence;
            // anything larger counts toward divergence.
            if (objective_best <= objective * (1.0 + 1e-3) + abs_floor) break;
            if (++consecutive_increases >= 3)
                throw ConvergenceError("fine identification diverged: mismatch grew on three "
                                       "consecutive damped iterations",
                                       history);
            work = std::move(best);
            history.push_back(objective_best);
            continue;
        }

        consecutive_increases = 0;
        const double gain = objective - objective_best;
        work = std::move(best);
        objective = objective_best;
        history.push_back(objective_best);
        if (gain < opts.tolerance * objective + abs_floor) break;
    }

    LearnedModel model;
    model.bus_count = n;
    model.branches = initial;
    for (int k = 0; k < m; ++k) {
        model.branches[k].g = work.g[k];
        model.branches[k].b = work.b[k];
    }
    model.snapshot_angles = work.thetas;
    model.snapshot_voltages = work.volts;
    model.mismatch_norm = run_objective(initial, buf, w_v, reference, work, true);
    model.iterations = iterations;
    model.samples_used = t_count;
    model.reference_bus = reference;
    return model;
}

namespace {

bool connected_over_all(const std::vector<LearnedBranch>& branches, int n) {
    if (n == 0) return true;
    std::vector<char> reached(n, 0);
    std::vector<int> stack{0};
    reached[0] = 1;
    while (!stack.empty()) {
        int u = stack.back();
        stack.pop_back();
        for (const LearnedBranch& br : branches) {
            int other = br.from == u ? br.to : (br.to == u ? br.from : -1);
            if (other >= 0 && !reached[other]) {
                reached[other] = 1;
                stack.push_back(other);
            }
        }
    }
    for (int i = 0; i < n; ++i)
        if (!reached[i]) return false;
    return true;
}

// Drop fitted branches whose susceptance collapsed, keeping the graph
// connected. Returns true when anything was removed.
bool trim_collapsed(std::vector<LearnedBranch>& branches, int n, double fraction) {
    if (branches.empty() || fraction <= 0.0) return false;
    std::vector<double> mags;
    for (const LearnedBranch& br : branches) mags.push_back(std::abs(br.b));
    std::nth_element(mags.begin(), mags.begin() + mags.size() / 2, mags.end());
    const double floor = fraction * mags[mags.size() / 2];

    std::vector<size_t> order(branches.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return std::abs(branches[a].b) < std::abs(branches[b].b); });

    bool removed = false;
    for (size_t idx : order) {
        if (std::abs(branches[idx].b) >= floor) break;
        std::vector<LearnedBranch> candidate;
        for (size_t i = 0; i < branches.size(); ++i)
            if (i != idx) candidate.push_back(branches[i]);
        if (!connected_over_all(candidate, n)) continue;
        // removing by index invalidates `order`; restart on each removal
        branches.erase(branches.begin() + static_cast<long>(idx));
        removed = true;
        return trim_collapsed(branches, n, fraction) || true;
    }
    return removed;
}

}  // namespace

LearnedModel learn_topology(const SampleBuffer& buf, const LearnOptions& opts) {
    if (buf.size() < opts.min_samples)
        throw ValidationError("insufficient data: have " + std::to_string(buf.size()) +
                              " samples, need " + std::to_string(opts.min_samples));
    CoarseEstimate coarse;
    try {
        coarse = coarse_identify(buf, opts.coarse);
    } catch (const ValidationError&) {
        throw;
    } catch (const std::exception& e) {
        throw SingularityError(std::string("coarse stage: ") + e.what());
    }
    std::vector<LearnedBranch> pruned;
    try {
        pruned = prune_incidence(coarse, opts.prune_threshold);
    } catch (const ConnectivityError& e) {
        throw ConnectivityError(std::string("prune stage: ") + e.what());
    }

    // The coarse values seed the fit but are unreliable on noisy data; clamp
    // them to a plausible passive-branch band before refining.
    for (LearnedBranch& br : pruned) {
        br.g = std::clamp(br.g, 0.0, 50.0);
        br.b = std::clamp(br.b, -100.0, -0.05);
    }

    try {
        // Candidate phase: the pruned superset carries near-duplicate columns,
        // so solve it with a conservative rank cutoff before trimming.
        FineOptions candidate_opts = opts.fine;
        candidate_opts.svd_cutoff = std::max(opts.fine.svd_cutoff, 1e-6);
        LearnedModel model = fine_identify(pruned, buf, candidate_opts);

        // Fit-then-trim refinement: branches the data does not support fit
        // toward zero susceptance; drop them and refit until stable. The
        // final refit runs at the configured cutoff.
        for (int round = 0; round < 4; ++round) {
            std::vector<LearnedBranch> kept = model.branches;
            if (!trim_collapsed(kept, buf.bus_count(), opts.trim_fraction)) break;
            model = fine_identify(kept, buf, opts.fine, &model.snapshot_angles);
        }
        return model;
    } catch (const ConvergenceError& e) {
        throw ConvergenceError(std::string("fine stage: ") + e.what(), e.history());
    }
}

LearnedModel relearn_topology(const SampleBuffer& buf, const LearnOptions& opts,
                              const LearnedModel& previous) {
    if (previous.bus_count == buf.bus_count() && !previous.branches.empty()) {
        try {
            return fine_identify(previous.branches, buf, opts.fine);
        } catch (const NumericalError&) {
            // fall through to the full pipeline
        }
    }
    return learn_topology(buf, opts);
}

BranchModel LearnedModel::to_branch_model(const MeterLayout& layout) const {
    std::vector<BranchParams> params;
    params.reserve(branches.size());
    for (const LearnedBranch& br : branches)
        params.push_back({br.from, br.to, br.g, br.b, 0.0, 1.0});
    return BranchModel(bus_count, std::move(params), layout, reference_bus);
}

std::vector<int> LearnedModel::neighbors(int bus) const {
    std::vector<int> out;
    for (const LearnedBranch& br : branches) {
        if (br.from == bus) out.push_back(br.to);
        if (br.to == bus) out.push_back(br.from);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

bool LearnedModel::has_branch(int i, int j) const {
    return std::any_of(branches.begin(), branches.end(), [&](const LearnedBranch& br) {
        return (br.from == i && br.to == j) || (br.from == j && br.to == i);
    });
}

std::string serialize_learned_model(const LearnedModel& model) {
    std::ostringstream out;
    out.precision(15);
    out << "# learned grid model\n";
    out << "buses " << model.bus_count << "\n";
    out << "reference " << model.reference_bus << "\n";
    out << "samples " << model.samples_used << "\n";
    out << "mismatch " << model.mismatch_norm << "\n";
    out << "iterations " << model.iterations << "\n";
    out << "branches " << model.branches.size() << "\n";
    for (const LearnedBranch& br : model.branches)
        out << br.from << " " << br.to << " " << br.g << " " << br.b << "\n";
    return out.str();
}

LearnedModel parse_learned_model(const std::string& text) {
    LearnedModel model;
    std::istringstream in(text);
    std::string line;
    int expected_branches = -1;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "buses") ls >> model.bus_count;
        else if (key == "reference") ls >> model.reference_bus;
        else if (key == "samples") ls >> model.samples_used;
        else if (key == "mismatch") ls >> model.mismatch_norm;
        else if (key == "iterations") ls >> model.iterations;
        else if (key == "branches") ls >> expected_branches;
        else {
            LearnedBranch br;
            br.from = std::stoi(key);
            if (!(ls >> br.to >> br.g >> br.b))
                throw ValidationError("bad learned-model branch line: " + line);
            model.branches.push_back(br);
        }
    }
    if (model.bus_count <= 0) throw ValidationError("learned model is missing the bus count");
    if (expected_branches >= 0 &&
        expected_branches != static_cast<int>(model.branches.size()))
        throw ValidationError("learned model branch count mismatch");
    return model;
}

void save_learned_model(const std::string& path, const LearnedModel& model) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write model file: " + path);
    out << serialize_learned_model(model);
}

LearnedModel load_learned_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open model file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_learned_model(ss.str());
}

namespace detail {

Vec fine_residual(const std::vector<LearnedBranch>& topo, const Vec& g, const Vec& b,
                  const Mat& thetas, const SampleBuffer& buf, int reference_bus) {
    const int n = buf.bus_count();
    const Vec w_v = Vec::Zero(n);
    Vec out(2 * n * buf.size());
    SnapshotSystem sys;
    for (int t = 0; t < buf.size(); ++t) {
        assemble_snapshot(topo, g, b, thetas.col(t), buf.v.col(t), buf.v.col(t), w_v,
                          buf.p.col(t), buf.q.col(t), reference_bus, sys);
        out.segment(2 * n * t, 2 * n) = sys.r.head(2 * n);
    }
    return out;
}

Mat fine_jacobian(const std::vector<LearnedBranch>& topo, const Vec& g, const Vec& b,
                  const Mat& thetas, const SampleBuffer& buf, int reference_bus) {
    const int n = buf.bus_count();
    const int m = static_cast<int>(topo.size());
    const int cols = 2 * m + (n - 1) * buf.size();
    const Vec w_v = Vec::Zero(n);
    Mat out = Mat::Zero(2 * n * buf.size(), cols);
    SnapshotSystem sys;
    for (int t = 0; t < buf.size(); ++t) {
        assemble_snapshot(topo, g, b, thetas.col(t), buf.v.col(t), buf.v.col(t), w_v,
                          buf.p.col(t), buf.q.col(t), reference_bus, sys);
        out.block(2 * n * t, 0, 2 * n, 2 * m) = sys.jgb.topRows(2 * n);
        out.block(2 * n * t, 2 * m + (n - 1) * t, 2 * n, n - 1) =
            sys.jst.topLeftCorner(2 * n, n - 1);
    }
    return out;
}

}  // namespace detail

}  // namespace gridsnoop
