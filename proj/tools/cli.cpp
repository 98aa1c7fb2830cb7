#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "seqread/calibration.hpp"
#include "seqread/chargemodel.hpp"
#include "seqread/core.hpp"
#include "seqread/counting.hpp"
#include "seqread/decay.hpp"
#include "seqread/error.hpp"
#include "seqread/gaussian.hpp"
#include "seqread/montecarlo.hpp"
#include "seqread/random.hpp"

namespace seqread::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Bad flags or configuration; maps to exit code 2.
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

std::int64_t as_count(double v, const char* what) {
    if (!(v >= 0.0) || v != std::floor(v) || v > 9e15) throw UsageError(std::string(what) + " must be a nonnegative integer");
    return static_cast<std::int64_t>(v);
}

struct Sink {
    std::ofstream file;
    std::ostream* stream;

    explicit Sink(const std::string& path, std::ostream& fallback) : stream(&fallback) {
        if (path.empty() || path == "-") return;
        file.open(path, std::ios::binary);
        if (!file) throw std::runtime_error("cannot write " + path);
        stream = &file;
    }
    std::ostream& operator*() { return *stream; }
};

void write_header(std::ostream& o, const json& config, std::uint64_t seed) {
    o << "# tool=seqread " << kToolVersion << '\n';
    o << "# config_digest=" << config_digest(config) << '\n';
    o << "# seed=" << seed << '\n';
}

void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!obj.is_object()) throw UsageError(where + " must be an object");
    for (const auto& [key, value] : obj.items()) {
        if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }) == allowed.end()) {
            throw UsageError("unknown key '" + key + "' in " + where);
        }
    }
}

template <class T>
T get_or(const json& obj, const char* key, T fallback, const std::string& where) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw UsageError(where + "." + key + " has the wrong type");
    }
}

void add_rate_options(CLI::App* sub, RateSet& r) {
    sub->add_option("--gamma-plus", r.gamma_plus, "Detection rate in |+> (Hz)")->capture_default_str();
    sub->add_option("--gamma-minus", r.gamma_minus, "Detection rate in |-> (Hz)")->capture_default_str();
    sub->add_option("--big-gamma-plus", r.big_gamma_plus, "Switching rate |+> -> |-> (Hz)")->capture_default_str();
    sub->add_option("--big-gamma-minus", r.big_gamma_minus, "Switching rate |-> -> |+> (Hz)")->capture_default_str();
    sub->add_option("--dt", r.dt, "Bin duration (s)")->capture_default_str();
}

RateSet paper_rates() { return {720.0, 50.0, 3.6, 0.98, 1e-4}; }

json rates_json(const RateSet& r) {
    return {{"gamma_plus", r.gamma_plus},
            {"gamma_minus", r.gamma_minus},
            {"big_gamma_plus", r.big_gamma_plus},
            {"big_gamma_minus", r.big_gamma_minus},
            {"dt", r.dt}};
}

// ---- gaussian -----------------------------------------------------------------

struct GaussianArgs {
    double r = 0.0;
    std::optional<double> lambda_bar;
    std::string lambda_grid;
    std::optional<double> t_max;
    double mc_runs = 0.0;
    std::uint64_t seed = 1;
    double dt_sim = 0.0;
    std::string out;
};

int cmd_gaussian(const GaussianArgs& a, unsigned threads, std::ostream& out) {
    const GaussianModel model{a.r};
    model.validate();
    std::vector<double> lambdas = a.lambda_bar ? std::vector<double>{*a.lambda_bar} : parse_grid(a.lambda_grid);
    for (double l : lambdas) {
        if (!(l >= 0.0)) throw UsageError("lambda-bar must be nonnegative");
    }
    const std::int64_t mc_runs = as_count(a.mc_runs, "--mc-runs");
    if (mc_runs > 0 && !a.t_max) throw UsageError("--mc-runs requires --t-max");
    if (a.t_max && !(*a.t_max > 0.0)) throw UsageError("--t-max must be positive");

    const json config = {{"command", "gaussian"}, {"r", a.r}, {"lambda", lambdas},
                         {"t_max", a.t_max ? json(*a.t_max) : json(nullptr)}, {"mc_runs", mc_runs},
                         {"dt_sim", a.dt_sim}};
    Sink sink(a.out, out);
    std::ostream& o = *sink;
    write_header(o, config, a.seed);
    o << "method,r,lambda_bar,t_max,eps,T,eps_se,T_se,t_f_same_eps,speedup,n_runs,seed\n";
    auto row = [&](const char* method, double l, double eps, double t, double eps_se, double t_se, std::int64_t n) {
        std::string tf, speed;
        if (eps > 0.0 && eps < 0.5) {
            const double t_f = nonadaptive_time_for_error(model, eps);
            tf = num(t_f);
            if (t > 0.0) speed = num(t_f / t);
        }
        o << method << ',' << num(a.r) << ',' << num(l) << ',' << (a.t_max ? num(*a.t_max) : "") << ',' << num(eps)
          << ',' << num(t) << ',' << num(eps_se) << ',' << num(t_se) << ',' << tf << ',' << speed << ',' << n << ','
          << a.seed << '\n';
    };
    for (double l : lambdas) {
        const ErrorTime et = a.t_max && l > 0.0 ? adaptive_error_time_bounded(model, l, *a.t_max)
                                                : adaptive_error_time_unbounded(model, l);
        row("analytic", l, et.err_rate, et.avg_time, 0.0, 0.0, 0);
    }
    if (mc_runs > 0) {
        std::vector<StoppingRule> rules;
        std::vector<double> usable;
        for (double l : lambdas) {
            if (l > 0.0) {
                rules.push_back(StoppingRule{l, -l, *a.t_max});
                usable.push_back(l);
            }
        }
        if (!rules.empty()) {
            FirstPassageOptions opts;
            opts.n_runs = mc_runs;
            opts.seed = a.seed;
            opts.dt_sim = a.dt_sim > 0.0 ? a.dt_sim : 1e-3 / a.r;
            opts.threads = threads;
            const double horizon = *a.t_max;
            const auto est = simulate_first_passage_grid(DriftDiffusion::from_model(model), rules,
                                                         std::span(&horizon, 1), opts);
            for (std::size_t i = 0; i < usable.size(); ++i) {
                row("mc", usable[i], est[i].err_rate, est[i].avg_time, est[i].err_se, est[i].time_se, est[i].n_runs);
            }
        }
    }
    return 0;
}

// ---- decay --------------------------------------------------------------------

struct DecayArgs {
    double tau = 0.0;
    std::string mode = "single";
    std::optional<double> tf;
    std::string tf_grid;
    double mc_runs = 0.0;
    std::uint64_t seed = 1;
    std::string out;
};

int cmd_decay(const DecayArgs& a, unsigned threads, std::ostream& out) {
    DecayModel model;
    model.tau = a.tau;
    if (a.mode == "single") model.mode = ChannelMode::single;
    else if (a.mode == "two-channel") model.mode = ChannelMode::two_channel;
    else throw UsageError("--mode must be single or two-channel");
    model.validate();
    const std::vector<double> grid = a.tf ? std::vector<double>{*a.tf} : parse_grid(a.tf_grid);
    for (double t : grid) {
        if (!(t >= 0.0)) throw UsageError("readout times must be nonnegative");
    }
    const std::int64_t mc_runs = as_count(a.mc_runs, "--mc-runs");
    const json config = {{"command", "decay"}, {"tau", a.tau}, {"mode", a.mode}, {"t_f", grid}, {"mc_runs", mc_runs}};
    Sink sink(a.out, out);
    std::ostream& o = *sink;
    write_header(o, config, a.seed);
    o << "method,mode,tau,t_f,eps,T,eps_se,T_se,speedup,n_runs,seed\n";
    for (double t : grid) {
        const ErrorTime et = decay_adaptive(model, t);
        o << "analytic," << a.mode << ',' << num(a.tau) << ',' << num(t) << ',' << num(et.err_rate) << ','
          << num(et.avg_time) << ",0,0," << (et.avg_time > 0.0 ? num(t / et.avg_time) : "") << ",0," << a.seed << '\n';
    }
    if (mc_runs > 0) {
        for (std::size_t i = 0; i < grid.size(); ++i) {
            DecaySimOptions opts;
            opts.n_runs = mc_runs;
            opts.seed = a.seed + i;
            opts.threads = threads;
            const McEstimate e = simulate_decay(model, AdaptiveReadout{grid[i]}, opts);
            o << "mc," << a.mode << ',' << num(a.tau) << ',' << num(grid[i]) << ',' << num(e.err_rate) << ','
              << num(e.avg_time) << ',' << num(e.err_se) << ',' << num(e.time_se) << ','
              << (e.avg_time > 0.0 ? num(grid[i] / e.avg_time) : "") << ',' << e.n_runs << ',' << opts.seed << '\n';
        }
    }
    return 0;
}

// ---- frontier -----------------------------------------------------------------

struct FrontierPlan {
    json effective;
    RateSet rates;
    std::optional<int> dn_max;
    std::string matrix_cache;
    SweepConfig sweep;
    std::vector<std::string> methods;
    std::vector<double> counting_grid;
    std::optional<double> eps_target;
    fs::path out_dir;
    std::string prefix;
};

std::vector<double> grid_from_json(const json& j, const std::string& where) {
    if (j.is_string()) return parse_grid(j.get<std::string>());
    if (j.is_array()) {
        std::vector<double> v;
        for (const auto& e : j) {
            if (!e.is_number()) throw UsageError(where + " entries must be numbers");
            v.push_back(e.get<double>());
        }
        return v;
    }
    throw UsageError(where + " must be a grid string or an array");
}

FrontierPlan plan_frontier(const json& cfg) {
    check_keys(cfg, {"model", "sweep", "output", "seed"}, "config");
    FrontierPlan p;
    const json model = cfg.value("model", json::object());
    check_keys(model, {"gamma_plus", "gamma_minus", "big_gamma_plus", "big_gamma_minus", "dt", "dn_max", "matrix_cache"},
               "model");
    const RateSet d = paper_rates();
    p.rates = {get_or(model, "gamma_plus", d.gamma_plus, "model"), get_or(model, "gamma_minus", d.gamma_minus, "model"),
               get_or(model, "big_gamma_plus", d.big_gamma_plus, "model"),
               get_or(model, "big_gamma_minus", d.big_gamma_minus, "model"), get_or(model, "dt", d.dt, "model")};
    try {
        p.rates.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(std::string("model: ") + e.what());
    }
    if (model.contains("dn_max")) p.dn_max = get_or(model, "dn_max", 0, "model");
    p.matrix_cache = get_or<std::string>(model, "matrix_cache", "", "model");

    const json sweep = cfg.value("sweep", json::object());
    check_keys(sweep, {"n_traj", "t_max", "prior_plus", "mode", "methods", "t_f_grid", "p_plus_grid", "p_minus_grid",
                       "p_grid_points", "p_min_distance", "eps_target"},
               "sweep");
    SweepConfig& s = p.sweep;
    s.n_traj = get_or<std::int64_t>(sweep, "n_traj", 200000, "sweep");
    s.t_max = get_or(sweep, "t_max", 0.025, "sweep");
    const double prior_plus = get_or(sweep, "prior_plus", 0.5, "sweep");
    try {
        s.priors = Priors(prior_plus);
        s.mode = parse_decision_mode(get_or<std::string>(sweep, "mode", "mle", "sweep"));
    } catch (const std::invalid_argument& e) {
        throw UsageError(std::string("sweep: ") + e.what());
    }
    s.seed = get_or<std::uint64_t>(cfg, "seed", 1, "config");
    p.methods = get_or<std::vector<std::string>>(sweep, "methods", {"counting", "nonadaptive", "adaptive"}, "sweep");
    for (const auto& m : p.methods) {
        if (m != "counting" && m != "nonadaptive" && m != "adaptive") throw UsageError("unknown method '" + m + "'");
    }
    if (p.methods.empty()) throw UsageError("sweep.methods is empty");
    if (sweep.contains("t_f_grid")) s.t_f_grid = grid_from_json(sweep.at("t_f_grid"), "sweep.t_f_grid");
    const int grid_points = get_or(sweep, "p_grid_points", 50, "sweep");
    const double min_distance = get_or(sweep, "p_min_distance", 1e-8, "sweep");
    try {
        s.p_plus_grid = sweep.contains("p_plus_grid") ? grid_from_json(sweep.at("p_plus_grid"), "sweep.p_plus_grid")
                                                      : default_p_plus_grid(grid_points, min_distance);
        s.p_minus_grid = sweep.contains("p_minus_grid") ? grid_from_json(sweep.at("p_minus_grid"), "sweep.p_minus_grid")
                                                        : default_p_minus_grid(grid_points, min_distance);
        s.validate();
    } catch (const UsageError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw UsageError(std::string("sweep: ") + e.what());
    }
    if (sweep.contains("eps_target")) p.eps_target = get_or(sweep, "eps_target", 0.0, "sweep");
    if (s.t_f_grid.empty()) {
        const auto n_bins = std::llround(s.t_max / p.rates.dt);
        for (long long k = 1; k <= n_bins; ++k) p.counting_grid.push_back(static_cast<double>(k) * p.rates.dt);
    } else {
        p.counting_grid = s.t_f_grid;
    }

    const json output = cfg.value("output", json::object());
    check_keys(output, {"dir", "prefix"}, "output");
    p.out_dir = get_or<std::string>(output, "dir", ".", "output");
    p.prefix = get_or<std::string>(output, "prefix", "frontier", "output");

    p.effective = {
        {"model", {{"rates", rates_json(p.rates)}, {"dn_max", p.dn_max ? json(*p.dn_max) : json(nullptr)},
                   {"matrix_cache", p.matrix_cache}}},
        {"sweep",
         {{"n_traj", s.n_traj}, {"t_max", s.t_max}, {"prior_plus", prior_plus}, {"mode", to_string(s.mode)},
          {"methods", p.methods}, {"t_f_grid", s.t_f_grid}, {"p_plus_grid", s.p_plus_grid},
          {"p_minus_grid", s.p_minus_grid}, {"eps_target", p.eps_target ? json(*p.eps_target) : json(nullptr)}}},
        {"seed", s.seed}};
    return p;
}

bool has_method(const FrontierPlan& p, const char* m) {
    return std::find(p.methods.begin(), p.methods.end(), m) != p.methods.end();
}

UpdateMatrixSet matrices_for(const FrontierPlan& p) {
    if (!p.matrix_cache.empty() && fs::exists(p.matrix_cache)) {
        std::ifstream in(p.matrix_cache);
        UpdateMatrixSet m = load_update_matrices(in);
        const RateSet& c = m.rates();
        if (c.gamma_plus != p.rates.gamma_plus || c.gamma_minus != p.rates.gamma_minus ||
            c.big_gamma_plus != p.rates.big_gamma_plus || c.big_gamma_minus != p.rates.big_gamma_minus ||
            c.dt != p.rates.dt || (p.dn_max && *p.dn_max != m.dn_max())) {
            throw DataError("matrix cache " + p.matrix_cache + " does not match the configured model");
        }
        return m;
    }
    const int dn = p.dn_max ? *p.dn_max : default_dn_max(p.rates);
    UpdateMatrixSet m = build_update_matrices(p.rates, dn);
    if (!p.matrix_cache.empty()) {
        std::ofstream o(p.matrix_cache);
        if (!o) throw std::runtime_error("cannot write " + p.matrix_cache);
        save_update_matrices(o, m);
    }
    return m;
}

int cmd_frontier(const std::string& config_path, bool dry_run, const std::string& out_dir_override, unsigned threads,
                 std::ostream& out) {
    std::ifstream in(config_path);
    if (!in) throw UsageError("cannot read config " + config_path);
    json cfg;
    try {
        in >> cfg;
    } catch (const json::exception& e) {
        throw UsageError(std::string("config is not valid JSON: ") + e.what());
    }
    FrontierPlan p = plan_frontier(cfg);
    if (!out_dir_override.empty()) p.out_dir = out_dir_override;
    p.sweep.threads = threads;
    const std::string digest = config_digest(p.effective);

    std::vector<std::string> files;
    for (const auto& m : p.methods) files.push_back((p.out_dir / (p.prefix + "_" + m + ".csv")).string());
    if (has_method(p, "adaptive")) files.push_back((p.out_dir / (p.prefix + "_adaptive_pareto.csv")).string());
    files.push_back((p.out_dir / (p.prefix + "_summary.json")).string());
    if (dry_run) {
        const json plan = {{"config", p.effective}, {"config_digest", digest}, {"outputs", files}};
        out << plan.dump(2) << '\n';
        return 0;
    }

    const UpdateMatrixSet matrices = matrices_for(p);
    fs::create_directories(p.out_dir);
    Provenance prov{kToolVersion, digest, p.sweep.seed, p.rates};
    json summary = {{"tool", "seqread"},
                    {"version", kToolVersion},
                    {"config_digest", digest},
                    {"seed", p.sweep.seed},
                    {"rates", rates_json(p.rates)},
                    {"regime_valid", p.rates.regime_valid()},
                    {"dn_max", matrices.dn_max()},
                    {"tail_mass", matrices.tail_mass()},
                    {"prior_plus", p.sweep.priors.plus()},
                    {"mode", to_string(p.sweep.mode)},
                    {"n_traj", p.sweep.n_traj}};
    auto emit = [&](const FrontierTable& t, const std::string& name) {
        FrontierTable copy = t;
        copy.provenance = prov;
        copy.n_traj = t.method == "counting" ? 0 : p.sweep.n_traj;
        std::ofstream o(p.out_dir / (p.prefix + "_" + name + ".csv"), std::ios::binary);
        if (!o) throw std::runtime_error("cannot write output in " + p.out_dir.string());
        write_frontier_csv(o, copy);
    };

    std::optional<FrontierTable> counting, fixed, pareto;
    if (has_method(p, "counting")) {
        counting = counting_frontier(p.rates, p.counting_grid, p.sweep.priors, p.sweep.mode);
        emit(*counting, "counting");
        const FrontierPoint& best = min_error_point(*counting);
        const double tf = std::get<FixedTime>(best.rule).t_f;
        const ThresholdChoice c = optimize_threshold({p.rates, tf}, selection_priors(p.sweep.mode, p.sweep.priors));
        summary["counting"] = {{"floor", best.err_rate}, {"t_f_at_floor", tf}, {"nu_at_floor", c.nu}};
    }
    const bool want_fixed = has_method(p, "nonadaptive");
    const bool want_adaptive = has_method(p, "adaptive");
    if (want_fixed || want_adaptive) {
        SweepResult res;
        if (want_fixed && want_adaptive) res = run_sweep(p.sweep, matrices);
        else if (want_fixed) res.nonadaptive = run_nonadaptive(p.sweep, matrices);
        else res.adaptive = run_adaptive(p.sweep, matrices);
        if (want_fixed) {
            fixed = res.nonadaptive;
            emit(*fixed, "nonadaptive");
            const FrontierPoint& best = min_error_point(*fixed);
            summary["nonadaptive"] = {{"floor", best.err_rate}, {"t_f_at_floor", best.avg_time}};
        }
        if (want_adaptive) {
            emit(res.adaptive, "adaptive");
            pareto = pareto_optimize(res.adaptive, 200, selection_priors(p.sweep.mode, p.sweep.priors));
            pareto->method = "adaptive_pareto";
            emit(*pareto, "adaptive_pareto");
            const FrontierPoint& best = min_error_point(*pareto);
            summary["adaptive"] = {{"floor", best.err_rate}, {"T_at_floor", best.avg_time}};
        }
    }
    std::optional<double> target = p.eps_target;
    if (!target && counting) target = min_error_point(*counting).err_rate;
    if (target && fixed && pareto) {
        try {
            const double tf = time_at_error(*fixed, *target, "nonadaptive");
            const double t = time_at_error(*pareto, *target, "adaptive");
            summary["speedup"] = {{"eps_target", *target}, {"t_f", tf}, {"T", t}, {"t_f_over_T", tf / t}};
        } catch (const DataError& e) {
            summary["speedup"] = {{"eps_target", *target}, {"error", e.what()}};
        }
    }
    std::ofstream o(p.out_dir / (p.prefix + "_summary.json"), std::ios::binary);
    if (!o) throw std::runtime_error("cannot write summary in " + p.out_dir.string());
    o << summary.dump(2) << '\n';
    return 0;
}

// ---- calibrate ----------------------------------------------------------------

struct CalibrateArgs {
    std::string dir;
    std::string split = "parity";
    double rebin_ms = 10.0;
    double subtraj_s = 1.0;
    std::optional<double> eta;
    bool fit_eta = false;
    std::string readout_dir;
    double prep_ms = 25.0;
    double readout_ms = 25.0;
    double model_traj = 100000;
    std::uint64_t seed = 1;
    std::string out;
};

int cmd_calibrate(const CalibrateArgs& a, unsigned threads, std::ostream& out, std::ostream& err) {
    CalibrationOptions opts;
    if (a.split != "parity") {
        try {
            std::size_t used = 0;
            const int n = std::stoi(a.split, &used);
            if (used != a.split.size() || n < 1) throw std::invalid_argument("bad");
            opts.calibration_count = n;
        } catch (const std::exception&) {
            throw UsageError("--split must be 'parity' or a positive trajectory count");
        }
    }
    if (!(a.rebin_ms > 0.0) || !(a.subtraj_s > 0.0)) throw UsageError("--rebin-ms and --subtraj-s must be positive");
    if (a.eta && a.fit_eta) throw UsageError("--eta and --fit-eta are exclusive");
    if (a.eta && !(*a.eta >= 0.0 && *a.eta < 0.5)) throw UsageError("--eta must lie in [0, 0.5)");
    opts.rebin_seconds = a.rebin_ms * 1e-3;
    opts.subtraj_seconds = a.subtraj_s;
    const std::int64_t model_traj = as_count(a.model_traj, "--model-traj");

    const IngestResult data = ingest_trajectories(a.dir);
    for (const auto& w : data.warnings) err << "warning: " << w << '\n';
    if (data.trajectories.empty()) throw DataError("no trajectories found");
    const double dt = data.dt;
    const double rebin_bins = opts.rebin_seconds / dt;
    const double subtraj_bins = opts.subtraj_seconds / dt;
    if (std::abs(rebin_bins - std::round(rebin_bins)) > 1e-6 || std::round(rebin_bins) < 1.0 ||
        std::abs(subtraj_bins - std::round(subtraj_bins)) > 1e-6 ||
        std::llround(subtraj_bins) % std::llround(rebin_bins) != 0) {
        throw UsageError("--rebin-ms and --subtraj-s must be whole multiples of the bin and rebin widths");
    }

    const json config = {{"command", "calibrate"}, {"split", a.split}, {"rebin_ms", a.rebin_ms},
                         {"subtraj_s", a.subtraj_s}, {"eta", a.eta ? json(*a.eta) : json(nullptr)},
                         {"fit_eta", a.fit_eta}, {"prep_ms", a.prep_ms}, {"readout_ms", a.readout_ms},
                         {"model_traj", model_traj}, {"seed", a.seed}};
    CalibrationResult res;
    try {
        res = calibrate(data.trajectories, opts);
    } catch (const std::invalid_argument& e) {
        throw DataError(std::string("calibration failed: ") + e.what());
    }
    const RelaxationFit& rf = res.relaxation;
    json residual_plus = json::array(), residual_minus = json::array();
    for (std::size_t i = 0; i < res.curves.time.size(); ++i) {
        const double e = std::exp(-rf.total_rate * res.curves.time[i]);
        residual_plus.push_back(res.curves.rho_plus[i] - (rf.a_plus * e + rf.b));
        residual_minus.push_back(res.curves.rho_minus[i] - (rf.a_minus * e + rf.b));
    }
    json report = {
        {"tool", "seqread"},
        {"version", kToolVersion},
        {"config_digest", config_digest(config)},
        {"seed", a.seed},
        {"n_trajectories", data.trajectories.size()},
        {"dt", dt},
        {"split", {{"mode", a.split}, {"calibration", res.calibration_indices}, {"test", res.test_indices}}},
        {"rates",
         {{"gamma_plus", res.rates.gamma_plus},
          {"gamma_minus", res.rates.gamma_minus},
          {"big_gamma_plus", res.rates.big_gamma_plus},
          {"big_gamma_minus", res.rates.big_gamma_minus},
          {"gamma_plus_se", res.mixture.gamma_plus_se},
          {"gamma_minus_se", res.mixture.gamma_minus_se},
          {"big_gamma_plus_se", rf.big_gamma_plus_se},
          {"big_gamma_minus_se", rf.big_gamma_minus_se}}},
        {"regime_valid", res.regime_valid},
        {"mixture",
         {{"mean_plus", res.mixture.mean_plus},
          {"mean_minus", res.mixture.mean_minus},
          {"weight_plus", res.mixture.weight_plus},
          {"log_likelihood", res.mixture.log_likelihood},
          {"iterations", res.mixture.iterations},
          {"converged", res.mixture.converged}}},
        {"threshold", {{"nu", res.threshold.nu}, {"plus_if_count_above", res.threshold.rule}}},
        {"relaxation",
         {{"total_rate", rf.total_rate},
          {"b", rf.b},
          {"a_plus", rf.a_plus},
          {"a_minus", rf.a_minus},
          {"chi_square", rf.chi_square},
          {"dof", rf.dof},
          {"covariance", rf.covariance},
          {"n_plus", res.curves.n_plus},
          {"n_minus", res.curves.n_minus},
          {"residual_plus", residual_plus},
          {"residual_minus", residual_minus}}},
        {"stationary_priors", {{"p_plus", res.priors.plus()}, {"p_minus", res.priors.minus()}}},
        {"warnings", data.warnings}};

    if (a.eta || a.fit_eta) {
        const int dn = default_dn_max(res.rates);
        const UpdateMatrixSet matrices = build_update_matrices(res.rates, dn);
        const auto readout_bins = static_cast<std::int64_t>(std::llround(a.readout_ms * 1e-3 / dt));
        const auto prep_bins = static_cast<std::int64_t>(std::llround(a.prep_ms * 1e-3 / dt));
        if (readout_bins < 1 || prep_bins < 1) throw UsageError("--prep-ms and --readout-ms must cover at least one bin");
        std::vector<LabeledReadout> readouts;
        std::string source;
        if (!a.readout_dir.empty()) {
            const IngestResult labeled = ingest_trajectories(a.readout_dir);
            for (const auto& w : labeled.warnings) err << "warning: " << w << '\n';
            if (labeled.trajectories.empty()) throw DataError("no readout records found");
            if (std::abs(labeled.dt - dt) > 1e-12 * dt) throw DataError("readout records use a different dt");
            for (std::size_t i = 0; i < labeled.trajectories.size(); ++i) {
                if (!labeled.labels[i]) throw DataError(labeled.sources[i] + ": missing '# prepared=' label");
                readouts.push_back({labeled.trajectories[i], *labeled.labels[i]});
            }
            source = "labeled records";
        } else {
            std::vector<Trajectory> test;
            for (std::size_t i : res.test_indices) test.push_back(data.trajectories[i]);
            if (test.empty()) throw DataError("test split is empty");
            readouts = prepare_by_posterior(test, matrices, prep_bins, readout_bins);
            source = "posterior preparation on the test split";
        }
        std::vector<std::int64_t> grid;
        for (std::int64_t k = 1; k <= readout_bins; ++k) grid.push_back(k);
        const ErrorCurve measured = measure_error_curve(readouts, matrices, grid);

        SweepConfig sc;
        sc.n_traj = std::max<std::int64_t>(model_traj, 1);
        sc.t_max = static_cast<double>(readout_bins) * dt;
        sc.seed = a.seed;
        sc.threads = threads;
        const FrontierTable model = run_nonadaptive(sc, matrices);
        std::vector<double> model_eps;
        for (const auto& pt : model.points) model_eps.push_back(pt.err_rate);
        const double eta = a.fit_eta ? fit_preparation_error(measured.eps, model_eps) : *a.eta;
        json curve = json::array();
        for (std::size_t i = 0; i < grid.size(); ++i) {
            curve.push_back({{"t_f", measured.t_f[i]},
                             {"eps_measured", measured.eps[i]},
                             {"eps_model", model_eps[i]},
                             {"eps_corrected", correct_preparation_error(measured.eps[i], eta)}});
        }
        report["preparation"] = {{"eta", eta},       {"fitted", a.fit_eta},       {"source", source},
                                 {"n_plus", measured.n_plus}, {"n_minus", measured.n_minus}, {"curve", curve}};
    }
    Sink sink(a.out, out);
    *sink << report.dump(2) << '\n';
    return 0;
}

// ---- matrices -----------------------------------------------------------------

int cmd_matrices_dump(const RateSet& rates, std::optional<int> dn_max, double tail_bound, const std::string& path,
                      std::ostream& out) {
    const int dn = dn_max ? *dn_max : default_dn_max(rates, tail_bound);
    const UpdateMatrixSet m = build_update_matrices(rates, dn, tail_bound);
    Sink sink(path, out);
    save_update_matrices(*sink, m);
    return 0;
}

int cmd_matrices_load(const std::string& path, bool verify, std::ostream& out) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path);
    const UpdateMatrixSet m = load_update_matrices(in);
    json j = {{"rates", rates_json(m.rates())}, {"dn_max", m.dn_max()}, {"tail_mass", m.tail_mass()}};
    if (verify) {
        const UpdateMatrixSet fresh = build_update_matrices(m.rates(), m.dn_max(), 1.0);
        bool same = true;
        for (int n = 0; n <= m.dn_max(); ++n) {
            const Mat2& a = m[static_cast<std::size_t>(n)];
            const Mat2& b = fresh[static_cast<std::size_t>(n)];
            same = same && a.pp == b.pp && a.pm == b.pm && a.mp == b.mp && a.mm == b.mm;
        }
        j["matches_rebuild"] = same;
    }
    out << j.dump(2) << '\n';
    return 0;
}

// ---- simulate -----------------------------------------------------------------

struct SimulateArgs {
    RateSet rates = paper_rates();
    std::string out_dir;
    int n_traj = 125;
    double duration = 30.0;
    std::uint64_t seed = 1;
    bool labeled = false;
    double eta = 0.0;
    double readout_ms = 25.0;
};

int cmd_simulate(const SimulateArgs& a, unsigned threads, std::ostream& out) {
    if (a.out_dir.empty()) throw UsageError("--out-dir is required");
    if (a.n_traj < 0) throw UsageError("--n-traj must be nonnegative");
    if (!(a.eta >= 0.0 && a.eta < 0.5)) throw UsageError("--eta must lie in [0, 0.5)");
    const UpdateMatrixSet m = build_update_matrices(a.rates, default_dn_max(a.rates));
    fs::create_directories(a.out_dir);
    auto path_for = [&](int i) {
        char name[32];
        std::snprintf(name, sizeof name, "traj_%05d.counts", i);
        return fs::path(a.out_dir) / name;
    };
    if (!a.labeled) {
        const auto trajs = simulate_dataset(m, a.n_traj, a.duration, a.seed, threads);
        for (int i = 0; i < a.n_traj; ++i) {
            std::ofstream o(path_for(i), std::ios::binary);
            if (!o) throw std::runtime_error("cannot write " + path_for(i).string());
            write_trajectory(o, trajs[static_cast<std::size_t>(i)]);
        }
    } else {
        const auto bins = static_cast<std::int64_t>(std::llround(a.readout_ms * 1e-3 / a.rates.dt));
        if (bins < 1) throw UsageError("--readout-ms must cover at least one bin");
        for (int i = 0; i < a.n_traj; ++i) {
            const State truth = i % 2 == 0 ? State::plus : State::minus;
            CounterStream rng(a.seed, StreamDomain::calibration, 1, static_cast<std::uint64_t>(i));
            const Trajectory t = generate_trajectory(m, StateVector::basis(truth), bins, rng);
            CounterStream flip(a.seed, StreamDomain::calibration, 2, static_cast<std::uint64_t>(i));
            State label = truth;
            if (flip.uniform() < a.eta) label = truth == State::plus ? State::minus : State::plus;
            std::ofstream o(path_for(i), std::ios::binary);
            if (!o) throw std::runtime_error("cannot write " + path_for(i).string());
            write_trajectory(o, t, label);
        }
    }
    out << "wrote " << a.n_traj << " files to " << a.out_dir << '\n';
    return 0;
}

}  // namespace

std::vector<double> parse_grid(const std::string& text) {
    auto to_double = [&](const std::string& s) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(s, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != s.size() || s.empty() || !std::isfinite(v)) throw UsageError("bad number '" + s + "' in grid '" + text + "'");
        return v;
    };
    if (text.empty()) throw UsageError("empty grid");
    std::vector<std::string> parts;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ':')) parts.push_back(part);
    if (parts.size() == 1) return {to_double(parts[0])};
    if (parts.size() != 3) throw UsageError("grid must be start:stop:step, got '" + text + "'");
    const double start = to_double(parts[0]), stop = to_double(parts[1]), step = to_double(parts[2]);
    if (!(step > 0.0)) throw UsageError("grid step must be positive");
    if (stop < start) throw UsageError("grid stop must not precede start");
    std::vector<double> out;
    for (std::int64_t i = 0;; ++i) {
        const double v = start + static_cast<double>(i) * step;
        if (v > stop + 0.5 * step) break;
        out.push_back(v);
        if (out.size() > 10000000) throw UsageError("grid too large");
    }
    return out;
}

std::string config_digest(const json& config) {
    const std::string s = config.dump();
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Sequential readout analysis: analytic models, Monte Carlo frontiers and rate calibration", "seqread"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_version_flag("--version", std::string("seqread ") + kToolVersion);
    unsigned threads = 0;
    app.add_option("--threads", threads, "Worker threads (default: SEQREAD_THREADS, else all cores)")->envname("SEQREAD_THREADS");

    GaussianArgs g;
    auto* gs = app.add_subcommand("gaussian", "Gaussian latching readout: analytic and first-passage tables");
    gs->add_option("--r", g.r, "Signal-to-noise rate r (1/time)")->required();
    auto* lb = gs->add_option("--lambda-bar", g.lambda_bar, "Symmetric threshold");
    auto* lg = gs->add_option("--lambda-grid", g.lambda_grid, "Threshold grid start:stop:step");
    lb->excludes(lg);
    gs->add_option("--t-max", g.t_max, "Timeout (omit for the unbounded limit)");
    gs->add_option("--mc-runs", g.mc_runs, "Monte Carlo runs (0 disables)");
    gs->add_option("--seed", g.seed, "Master seed");
    gs->add_option("--dt-sim", g.dt_sim, "Simulation step (default 1e-3/r)");
    gs->add_option("--out", g.out, "Output CSV (default stdout)");

    DecayArgs d;
    auto* ds = app.add_subcommand("decay", "State-dependent decay readout");
    ds->add_option("--tau", d.tau, "Decay time constant")->required();
    ds->add_option("--mode", d.mode, "single or two-channel")->capture_default_str();
    auto* tf = ds->add_option("--tf", d.tf, "Readout time");
    auto* tg = ds->add_option("--tf-grid", d.tf_grid, "Readout time grid start:stop:step");
    tf->excludes(tg);
    ds->add_option("--mc-runs", d.mc_runs, "Monte Carlo runs per readout time (0 disables)");
    ds->add_option("--seed", d.seed, "Master seed");
    ds->add_option("--out", d.out, "Output CSV (default stdout)");

    std::string frontier_config, frontier_out;
    bool dry_run = false;
    auto* fs_cmd = app.add_subcommand("frontier", "Error rate vs readout time for the charge model");
    fs_cmd->add_option("config", frontier_config, "Run configuration (JSON)")->required();
    fs_cmd->add_flag("--dry-run", dry_run, "Validate and print the plan without writing");
    fs_cmd->add_option("--out-dir", frontier_out, "Override output.dir");

    CalibrateArgs c;
    auto* cs = app.add_subcommand("calibrate", "Extract rates from count trajectories");
    cs->add_option("dir", c.dir, "Trajectory file or directory of *.counts")->required();
    cs->add_option("--split", c.split, "'parity' or number of leading calibration trajectories")->capture_default_str();
    cs->add_option("--rebin-ms", c.rebin_ms, "Rebinned width (ms)")->capture_default_str();
    cs->add_option("--subtraj-s", c.subtraj_s, "Subtrajectory length (s)")->capture_default_str();
    cs->add_option("--eta", c.eta, "Known preparation error for the corrected table");
    cs->add_flag("--fit-eta", c.fit_eta, "Fit the preparation error against the model curve");
    cs->add_option("--readout-dir", c.readout_dir, "Labeled readout records for the measured curve");
    cs->add_option("--prep-ms", c.prep_ms, "Preparation window (ms)")->capture_default_str();
    cs->add_option("--readout-ms", c.readout_ms, "Readout window (ms)")->capture_default_str();
    cs->add_option("--model-traj", c.model_traj, "Trajectories per state for the model curve")->capture_default_str();
    cs->add_option("--seed", c.seed, "Master seed");
    cs->add_option("--out", c.out, "Report path (default stdout)");

    auto* ms = app.add_subcommand("matrices", "Dump or load update-matrix caches");
    ms->require_subcommand(1);
    RateSet dump_rates = paper_rates();
    std::optional<int> dump_dn;
    double tail_bound = kDefaultTailBound;
    std::string dump_out;
    auto* md = ms->add_subcommand("dump", "Build matrices and write a cache file");
    add_rate_options(md, dump_rates);
    md->add_option("--dn-max", dump_dn, "Count cutoff (default: smallest meeting the tail bound)");
    md->add_option("--tail-bound", tail_bound, "Largest acceptable neglected mass")->capture_default_str();
    md->add_option("--out", dump_out, "Cache path (default stdout)");
    std::string load_path;
    bool verify = false;
    auto* ml = ms->add_subcommand("load", "Read a cache file and print its summary");
    ml->add_option("file", load_path, "Cache path")->required();
    ml->add_flag("--verify", verify, "Compare against a fresh build");

    SimulateArgs s;
    auto* ss = app.add_subcommand("simulate", "Write synthetic count trajectories");
    add_rate_options(ss, s.rates);
    ss->add_option("--out-dir", s.out_dir, "Output directory")->required();
    ss->add_option("--n-traj", s.n_traj, "Number of files")->capture_default_str();
    ss->add_option("--duration", s.duration, "Seconds per trajectory")->capture_default_str();
    ss->add_option("--seed", s.seed, "Master seed");
    ss->add_flag("--labeled", s.labeled, "Write labeled readout records from known states");
    ss->add_option("--eta", s.eta, "Label flip probability for labeled records")->capture_default_str();
    ss->add_option("--readout-ms", s.readout_ms, "Record length for labeled records (ms)")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gs->parsed()) {
            if (!g.lambda_bar && g.lambda_grid.empty()) throw UsageError("one of --lambda-bar or --lambda-grid is required");
            return cmd_gaussian(g, threads, out);
        }
        if (ds->parsed()) {
            if (!d.tf && d.tf_grid.empty()) throw UsageError("one of --tf or --tf-grid is required");
            return cmd_decay(d, threads, out);
        }
        if (fs_cmd->parsed()) return cmd_frontier(frontier_config, dry_run, frontier_out, threads, out);
        if (cs->parsed()) return cmd_calibrate(c, threads, out, err);
        if (md->parsed()) return cmd_matrices_dump(dump_rates, dump_dn, tail_bound, dump_out, out);
        if (ml->parsed()) return cmd_matrices_load(load_path, verify, out);
        if (ss->parsed()) return cmd_simulate(s, threads, out);
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}

}  // namespace seqread::cli
