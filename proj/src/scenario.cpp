#include "gridsnoop/scenario.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <sstream>
#include <thread>

namespace gridsnoop {

namespace {

namespace fs = std::filesystem;

std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(value);
    while (std::getline(in, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

bool parse_bool(const std::string& value, const std::string& key) {
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    throw ValidationError("config key " + key + " expects a boolean, got '" + value + "'");
}

double parse_double(const std::string& value, const std::string& key) {
    try {
        return std::stod(value);
    } catch (const std::exception&) {
        throw ValidationError("config key " + key + " expects a number, got '" + value + "'");
    }
}

int parse_int(const std::string& value, const std::string& key) {
    try {
        return std::stoi(value);
    } catch (const std::exception&) {
        throw ValidationError("config key " + key + " expects an integer, got '" + value + "'");
    }
}

std::string fmt(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

}  // namespace

const std::vector<std::pair<std::string, std::string>>& scenario_config_keys() {
    static const std::vector<std::pair<std::string, std::string>> keys = {
        {"case", "grid case file path"},
        {"out_dir", "output directory"},
        {"seeds", "comma-separated seed list"},
        {"length_min", "scenario length in minutes"},
        {"cadence_min", "minutes between snapshots"},
        {"noise_fraction", "meter noise as a fraction of the reading"},
        {"profile.fluctuation", "uniform load fluctuation fraction"},
        {"profile.shape_amplitude", "daily load shape amplitude"},
        {"estimator.confidence", "operator alarm confidence level"},
        {"estimator.tolerance", "estimator convergence tolerance"},
        {"estimator.max_iterations", "estimator iteration cap"},
        {"estimator.alarm_mode", "chi2 or empirical"},
        {"estimator.calibration_window", "clean snapshots for the empirical alarm"},
        {"learn.min_samples", "samples before the first learning attempt"},
        {"learn.ridge", "coarse regression ridge (-1 = auto)"},
        {"learn.center_voltages", "mean-center regressors in the coarse stage"},
        {"learn.prune_threshold", "incidence prune fraction"},
        {"learn.max_iterations", "fine identification iteration cap"},
        {"learn.tolerance", "fine identification relative improvement floor"},
        {"learn.sample_counts", "comma-separated T sweep for the learn command"},
        {"attack.bias_buses", "comma-separated external bus ids to bias"},
        {"attack.bias_mode", "fraction or radians"},
        {"attack.magnitude", "bias size (fraction of angle, or radians)"},
        {"gate.enabled", "gate attacks on the pseudo-residual"},
        {"gate.margin", "safety margin on the attacker alarm estimate"},
        {"gate.confidence", "attacker-side alarm confidence"},
        {"gate.noise_window", "attacker residual window for sigma estimates"},
        {"jobs", "parallel seed workers"},
    };
    return keys;
}

void apply_override(ScenarioConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "case") cfg.case_path = value;
    else if (key == "out_dir") cfg.out_dir = value;
    else if (key == "seeds") {
        cfg.seeds.clear();
        for (const std::string& s : split_list(value))
            cfg.seeds.push_back(static_cast<std::uint64_t>(std::stoull(s)));
    } else if (key == "length_min") cfg.length_min = parse_int(value, key);
    else if (key == "cadence_min") cfg.cadence_min = parse_int(value, key);
    else if (key == "noise_fraction") cfg.noise_fraction = parse_double(value, key);
    else if (key == "profile.fluctuation") cfg.profile_fluctuation = parse_double(value, key);
    else if (key == "profile.shape_amplitude")
        cfg.profile_shape_amplitude = parse_double(value, key);
    else if (key == "estimator.confidence") cfg.estimator.confidence = parse_double(value, key);
    else if (key == "estimator.tolerance") cfg.estimator.tolerance = parse_double(value, key);
    else if (key == "estimator.max_iterations")
        cfg.estimator.max_iterations = parse_int(value, key);
    else if (key == "estimator.alarm_mode") cfg.alarm_mode = value;
    else if (key == "estimator.calibration_window")
        cfg.calibration_window = parse_int(value, key);
    else if (key == "learn.min_samples") {
        cfg.learn.min_samples = parse_int(value, key);
        cfg.gate.min_samples = cfg.learn.min_samples;
    } else if (key == "learn.ridge") cfg.learn.coarse.ridge = parse_double(value, key);
    else if (key == "learn.center_voltages")
        cfg.learn.coarse.center_voltages = parse_bool(value, key);
    else if (key == "learn.prune_threshold") cfg.learn.prune_threshold = parse_double(value, key);
    else if (key == "learn.max_iterations") cfg.learn.fine.max_iterations = parse_int(value, key);
    else if (key == "learn.tolerance") cfg.learn.fine.tolerance = parse_double(value, key);
    else if (key == "learn.sample_counts") {
        cfg.sample_counts.clear();
        for (const std::string& s : split_list(value)) cfg.sample_counts.push_back(std::stoi(s));
    } else if (key == "attack.bias_buses") {
        cfg.attack_bias_buses.clear();
        for (const std::string& s : split_list(value)) cfg.attack_bias_buses.push_back(std::stoi(s));
    } else if (key == "attack.bias_mode") cfg.bias_mode = value;
    else if (key == "attack.magnitude") cfg.attack_magnitude = parse_double(value, key);
    else if (key == "gate.enabled") cfg.gate_enabled = parse_bool(value, key);
    else if (key == "gate.margin") cfg.gate.margin = parse_double(value, key);
    else if (key == "gate.confidence") cfg.gate.confidence = parse_double(value, key);
    else if (key == "gate.noise_window") cfg.gate.noise_window = parse_int(value, key);
    else if (key == "jobs") cfg.jobs = parse_int(value, key);
    else throw ValidationError("unknown config key: " + key);
}

ScenarioConfig parse_scenario_config(const std::string& text) {
    ScenarioConfig cfg;
    std::istringstream in(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string line = raw;
        if (auto pos = line.find('#'); pos != std::string::npos) line.erase(pos);
        auto eq = line.find('=');
        std::string key, value;
        if (eq == std::string::npos) {
            std::istringstream ls(line);
            if (!(ls >> key)) continue;
            throw ParseError("expected key = value", line_no);
        }
        {
            std::istringstream ks(line.substr(0, eq));
            ks >> key;
            std::istringstream vs(line.substr(eq + 1));
            vs >> value;
        }
        if (key.empty()) throw ParseError("missing key before '='", line_no);
        apply_override(cfg, key, value);
    }
    return cfg;
}

ScenarioConfig load_scenario_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_scenario_config(ss.str());
}

void validate_scenario(const ScenarioConfig& cfg) {
    if (cfg.case_path.empty()) throw ValidationError("config needs a case file path");
    if (cfg.length_min < 1) throw ValidationError("scenario length must be >= 1 minute");
    if (cfg.cadence_min < 1) throw ValidationError("cadence must be >= 1 minute");
    if (cfg.seeds.empty()) throw ValidationError("seed list must be non-empty");
    if (cfg.noise_fraction < 0.0) throw ValidationError("noise fraction must be >= 0");
    if (cfg.gate.margin <= 0.0 || cfg.gate.margin > 1.0)
        throw ValidationError("gate margin must lie in (0, 1]");
    if (cfg.alarm_mode != "chi2" && cfg.alarm_mode != "empirical")
        throw ValidationError("alarm mode must be chi2 or empirical");
    if (cfg.bias_mode != "fraction" && cfg.bias_mode != "radians")
        throw ValidationError("bias mode must be fraction or radians");
    if (cfg.jobs < 1) throw ValidationError("jobs must be >= 1");
}

std::vector<MeasurementSet> simulate_stream(const NetworkCase& nc, const MeterLayout& layout,
                                            const ScenarioConfig& cfg, std::uint64_t seed,
                                            std::vector<SystemState>* states) {
    LoadProfileConfig profile;
    profile.fluctuation = cfg.profile_fluctuation;
    profile.shape_amplitude = cfg.profile_shape_amplitude;
    profile.cadence_minutes = cfg.cadence_min;
    profile.seed = seed;

    BranchModel truth = branch_model(nc, layout);
    std::vector<MeasurementSet> stream;
    std::optional<SystemState> warm;
    const int count = cfg.length_min / cfg.cadence_min;
    stream.reserve(count);
    for (int k = 0; k < count; ++k) {
        const double minutes = static_cast<double>(k) * cfg.cadence_min;
        Injections inj = generate_loads(nc, profile, minutes);
        PowerFlowResult pf = solve_power_flow(nc, inj, {}, warm);
        warm = pf.state;
        if (states) states->push_back(pf.state);
        stream.push_back(measure(truth, pf.state, cfg.noise_fraction, seed, minutes));
    }
    return stream;
}

namespace {

struct OperatorSide {
    BranchModel model;
    EstimatorConfig cfg;
    double chi2_tau;
    std::string alarm_mode;
    int calibration_window;
    std::vector<double> calibration;  // clean weighted residuals
    double tau = 0.0;

    OperatorSide(const NetworkCase& nc, const MeterLayout& layout, const ScenarioConfig& scfg)
        : model(branch_model(nc, layout)), cfg(scfg.estimator),
          chi2_tau(alarm_threshold(scfg.estimator.confidence,
                                   layout.size() - (2 * nc.bus_count() - 1))),
          alarm_mode(scfg.alarm_mode), calibration_window(scfg.calibration_window) {
        tau = chi2_tau;
    }

    OperatorRow evaluate(const MeasurementSet& ms) {
        StateEstimate est = estimate_state(ms, model, cfg);
        OperatorRow row;
        row.minutes = ms.minutes;
        row.r = est.weighted_residual;
        row.r_raw = est.residual_norm;
        row.iterations = est.iterations;
        row.converged = est.converged;
        row.tau = tau;
        row.alarm = bdd_check(row.r, row.tau);
        return row;
    }

    void calibrate(double clean_r) {
        if (alarm_mode != "empirical") return;
        if (static_cast<int>(calibration.size()) < calibration_window) {
            calibration.push_back(clean_r);
            if (static_cast<int>(calibration.size()) == calibration_window)
                tau = empirical_alarm_threshold(calibration, cfg.confidence);
        }
    }
};

void run_seeds(const ScenarioConfig& cfg, const std::function<void(std::uint64_t)>& body) {
    if (cfg.jobs <= 1 || cfg.seeds.size() <= 1) {
        for (std::uint64_t seed : cfg.seeds) body(seed);
        return;
    }
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    std::exception_ptr failure;
    std::mutex failure_mutex;
    const int workers = std::min<int>(cfg.jobs, static_cast<int>(cfg.seeds.size()));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&]() {
            while (true) {
                size_t i = next.fetch_add(1);
                if (i >= cfg.seeds.size()) return;
                try {
                    body(cfg.seeds[i]);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

fs::path seed_dir(const ScenarioConfig& cfg, std::uint64_t seed) {
    fs::path dir = fs::path(cfg.out_dir) / ("seed_" + std::to_string(seed));
    fs::create_directories(dir);
    return dir;
}

void write_estimates_csv(const fs::path& dir, const std::vector<OperatorRow>& rows) {
    std::ofstream out(dir / "estimates.csv");
    out << "t,r,tau,alarm,iterations,converged\n";
    for (const OperatorRow& row : rows)
        out << fmt(row.minutes) << "," << fmt(row.r) << "," << fmt(row.tau) << ","
            << (row.alarm ? 1 : 0) << "," << row.iterations << "," << (row.converged ? 1 : 0)
            << "\n";
    std::ofstream detail(dir / "estimates_detail.csv");
    detail << "t,r_weighted,r_raw\n";
    for (const OperatorRow& row : rows)
        detail << fmt(row.minutes) << "," << fmt(row.r) << "," << fmt(row.r_raw) << "\n";
}

AttackGoal make_goal(const ScenarioConfig& cfg, const NetworkCase& nc) {
    AttackGoal goal;
    goal.bias_buses.clear();
    for (int id : cfg.attack_bias_buses) goal.bias_buses.push_back(nc.index_of(id));
    goal.magnitude = cfg.attack_magnitude;
    goal.mode = cfg.bias_mode == "radians" ? BiasMode::Radians : BiasMode::Fraction;
    return goal;
}

}  // namespace

std::vector<SimulateResult> cmd_simulate(const ScenarioConfig& cfg) {
    validate_scenario(cfg);
    NetworkCase nc = load_case(cfg.case_path);
    MeterLayout layout = default_meter_layout(nc);

    std::vector<SimulateResult> results(cfg.seeds.size());
    run_seeds(cfg, [&](std::uint64_t seed) {
        std::vector<MeasurementSet> stream = simulate_stream(nc, layout, cfg, seed);
        OperatorSide op(nc, layout, cfg);
        std::vector<OperatorRow> rows;
        rows.reserve(stream.size());
        for (const MeasurementSet& ms : stream) {
            OperatorRow row = op.evaluate(ms);
            op.calibrate(row.r);
            rows.push_back(row);
        }
        fs::path dir = seed_dir(cfg, seed);
        write_stream_csv((dir / "stream.csv").string(), layout, stream);
        write_estimates_csv(dir, rows);

        SimulateResult res;
        res.seed = seed;
        res.snapshots = static_cast<int>(stream.size());
        res.alarms = static_cast<int>(std::count_if(rows.begin(), rows.end(),
                                                    [](const OperatorRow& r) { return r.alarm; }));
        res.stream_path = (dir / "stream.csv").string();
        res.estimates_path = (dir / "estimates.csv").string();
        auto idx = std::find(cfg.seeds.begin(), cfg.seeds.end(), seed) - cfg.seeds.begin();
        results[idx] = res;
    });
    return results;
}

std::vector<LearnRow> cmd_learn(const ScenarioConfig& cfg) {
    validate_scenario(cfg);
    if (cfg.sample_counts.empty()) throw ValidationError("learn needs a sample count sweep");
    NetworkCase nc = load_case(cfg.case_path);
    MeterLayout layout = default_meter_layout(nc);
    const int dof = layout.size() - (2 * nc.bus_count() - 1);
    const double operator_tau = alarm_threshold(cfg.estimator.confidence, dof);
    const int longest = *std::max_element(cfg.sample_counts.begin(), cfg.sample_counts.end());

    std::vector<std::vector<LearnRow>> per_seed(cfg.seeds.size());
    run_seeds(cfg, [&](std::uint64_t seed) {
        ScenarioConfig local = cfg;
        local.length_min = std::max(cfg.length_min, longest * cfg.cadence_min);
        std::vector<MeasurementSet> stream = simulate_stream(nc, layout, local, seed);

        std::vector<LearnRow> rows;
        for (int samples : cfg.sample_counts) {
            samples = std::min<int>(samples, static_cast<int>(stream.size()));
            LearnRow row;
            row.samples = samples;
            row.seed = seed;
            row.alarm = operator_tau;
            try {
                AttackLoopConfig loop;
                loop.goal = make_goal(cfg, nc);
                loop.gate = cfg.gate;
                loop.gate.min_samples = samples;
                loop.learn = cfg.learn;
                loop.learn.min_samples = samples;
                loop.gating_enabled = false;
                std::vector<MeasurementSet> head(stream.begin(), stream.begin() + samples);
                CampaignResult cr = attack_loop(head, layout, loop);
                if (cr.steps.empty() || std::isnan(cr.steps.back().r_p))
                    throw NumericalError(cr.diagnosis.empty() ? "no attack crafted"
                                                              : cr.diagnosis);
                row.r_p = cr.steps.back().r_p;
                row.under_alarm = row.r_p < operator_tau;
            } catch (const std::exception& e) {
                row.error = e.what();
            }
            rows.push_back(row);
        }
        auto idx = std::find(cfg.seeds.begin(), cfg.seeds.end(), seed) - cfg.seeds.begin();
        per_seed[idx] = rows;
    });

    fs::create_directories(cfg.out_dir);
    std::ofstream out(fs::path(cfg.out_dir) / "learning.csv");
    out << "T,seed,r_p,alarm,under_alarm\n";
    std::vector<LearnRow> all;
    for (const auto& rows : per_seed) {
        for (const LearnRow& row : rows) {
            out << row.samples << "," << row.seed << "," << fmt(row.r_p) << "," << fmt(row.alarm)
                << "," << (row.under_alarm ? 1 : 0) << "\n";
            all.push_back(row);
        }
    }
    return all;
}

std::vector<CampaignSeedSummary> cmd_campaign(const ScenarioConfig& cfg) {
    validate_scenario(cfg);
    NetworkCase nc = load_case(cfg.case_path);
    MeterLayout layout = default_meter_layout(nc);

    std::vector<CampaignSeedSummary> summaries(cfg.seeds.size());
    run_seeds(cfg, [&](std::uint64_t seed) {
        std::vector<MeasurementSet> stream = simulate_stream(nc, layout, cfg, seed);

        AttackLoopConfig loop;
        loop.goal = make_goal(cfg, nc);
        loop.gate = cfg.gate;
        loop.gate.min_samples = std::max(cfg.gate.min_samples, cfg.learn.min_samples);
        loop.learn = cfg.learn;
        loop.learn.min_samples = loop.gate.min_samples;
        loop.gating_enabled = cfg.gate_enabled;
        loop.estimator = cfg.estimator;
        CampaignResult cr = attack_loop(stream, layout, loop);

        OperatorSide op(nc, layout, cfg);
        CampaignSeedSummary sum;
        sum.seed = seed;
        sum.snapshots = static_cast<int>(stream.size());
        sum.first_attack_minute = cr.first_attack_minute;
        sum.launches = cr.launches;
        sum.diagnosis = cr.diagnosis;

        fs::path dir = seed_dir(cfg, seed);
        std::ofstream out(dir / "campaign.csv");
        out << "t,phase,samples_seen,r_p,tau_hat,gate,launched,operator_r,operator_alarm\n";

        for (size_t k = 0; k < stream.size(); ++k) {
            const CampaignStep& step = cr.steps[k];
            const MeasurementSet& clean = stream[k];

            // what the operator actually sees this minute
            MeasurementSet seen = clean;
            if (step.launched && step.attack_values.size()) seen.values = step.attack_values;
            OperatorRow row = op.evaluate(seen);
            if (!step.launched) op.calibrate(row.r);

            if (step.attack_values.size()) {
                ++sum.crafted;
                bool would_alarm;
                if (step.launched) {
                    would_alarm = row.alarm;
                } else {
                    MeasurementSet hypothetical = clean;
                    hypothetical.values = step.attack_values;
                    would_alarm = op.evaluate(hypothetical).alarm;
                }
                if (would_alarm) ++sum.crafted_would_alarm;
                if (step.launched && row.alarm) ++sum.launched_alarms;
            }

            out << fmt(step.minutes) << "," << step.phase << "," << step.samples_seen << ","
                << fmt(step.r_p) << "," << fmt(step.tau_hat) << "," << (step.gate ? 1 : 0) << ","
                << (step.launched ? 1 : 0) << "," << fmt(row.r) << "," << (row.alarm ? 1 : 0)
                << "\n";
        }
        auto idx = std::find(cfg.seeds.begin(), cfg.seeds.end(), seed) - cfg.seeds.begin();
        summaries[idx] = sum;
    });

    fs::create_directories(cfg.out_dir);
    std::ofstream out(fs::path(cfg.out_dir) / "summary.csv");
    out << "seed,snapshots,crafted,launches,launched_alarms,crafted_would_alarm,"
           "gated_detection_rate,ungated_detection_rate,first_attack_minute,diagnosis\n";
    for (const CampaignSeedSummary& sum : summaries) {
        out << sum.seed << "," << sum.snapshots << "," << sum.crafted << "," << sum.launches << ","
            << sum.launched_alarms << "," << sum.crafted_would_alarm << ","
            << fmt(sum.gated_detection_rate()) << "," << fmt(sum.ungated_detection_rate()) << ","
            << fmt(sum.first_attack_minute) << "," << sum.diagnosis << "\n";
    }
    return summaries;
}

}  // namespace gridsnoop
