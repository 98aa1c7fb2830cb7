// Acceptance suite: one PASS/FAIL line per criterion.
#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "../tools/cli.hpp"
#include "seqread/chargemodel.hpp"
#include "seqread/counting.hpp"
#include "seqread/decay.hpp"
#include "seqread/gaussian.hpp"
#include "seqread/random.hpp"

using namespace seqread;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const RateSet kPaper{720.0, 50.0, 3.6, 0.98, 1e-4};

struct Verdict {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail += (detail.empty() ? "" : "; ") + std::string("failed: ") + what;
        }
    }
    void note(const std::string& what) { detail += (detail.empty() ? "" : "; ") + what; }
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

int cli(std::vector<std::string> args, std::string* out = nullptr) {
    args.insert(args.begin(), "seqread");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream o, e;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), o, e);
    if (out) *out = o.str();
    if (code != 0) std::fprintf(stderr, "seqread exited %d: %s\n", code, e.str().c_str());
    return code;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

Verdict criterion1() {
    Verdict v;
    const GaussianModel m{1.0};
    double prev = 0.0;
    for (double eps : {1e-2, 1e-4, 1e-6, 1e-8, 1e-10, 1e-12}) {
        const double lambda = std::log((1.0 - eps) / eps);
        const auto et = adaptive_error_time_unbounded(m, lambda);
        const double ratio = nonadaptive_time_for_error(m, eps) / et.avg_time;
        v.require(ratio > prev, fmt("ratio not increasing at eps=%g", eps));
        v.require(ratio > 1.0 && ratio < 4.0, fmt("ratio %.4f outside (1,4) at eps=%g", ratio, eps));
        if (eps == 1e-8) {
            v.require(ratio >= 3.0 && ratio <= 4.0, fmt("ratio %.4f at 1e-8 outside [3,4]", ratio));
            v.note(fmt("t_f/T(1e-8)=%.4f", ratio));
        }
        prev = ratio;
    }
    v.note(fmt("t_f/T(1e-12)=%.4f", prev));
    return v;
}

Verdict criterion2() {
    Verdict v;
    const std::vector<double> lambdas{1.0, 2.0, 4.0};
    const std::vector<double> horizons{0.5, 1.0, 2.0, 8.0};
    std::vector<StoppingRule> rules;
    for (double l : lambdas) rules.push_back(StoppingRule::symmetric(l, 1.0));
    FirstPassageOptions opts;
    opts.n_runs = 1000000;
    opts.seed = 2024;
    opts.dt_sim = 1e-3;
    const GaussianModel m{1.0};
    const auto mc = simulate_first_passage_grid(DriftDiffusion::from_model(m), rules, horizons, opts);
    double worst = 0.0;
    for (std::size_t i = 0; i < lambdas.size(); ++i) {
        for (std::size_t j = 0; j < horizons.size(); ++j) {
            const auto exact = adaptive_error_time_bounded(m, lambdas[i], horizons[j]);
            const auto& e = mc[i * horizons.size() + j];
            const double ze = std::abs(e.err_rate - exact.err_rate) / e.err_se;
            const double zt = std::abs(e.avg_time - exact.avg_time) / e.time_se;
            worst = std::max({worst, ze, zt});
            v.require(ze <= 3.0 && zt <= 3.0,
                      fmt("lambda=%g t_M=%g off by %.2f sigma", lambdas[i], horizons[j], std::max(ze, zt)));
        }
    }
    v.note(fmt("worst deviation %.2f sigma over 24 comparisons", worst));
    double conv = 0.0;
    for (double l : {1.0, 2.0, 4.0, 8.0}) {
        const auto a = adaptive_error_time_bounded(m, l, 1e3);
        const auto b = adaptive_error_time_unbounded(m, l);
        conv = std::max({conv, std::abs(a.err_rate - b.err_rate), std::abs(a.avg_time - b.avg_time)});
    }
    v.require(conv < 1e-10, fmt("r t_M = 1e3 differs from the limit by %g", conv));
    v.note(fmt("limit gap %.1e", conv));
    return v;
}

Verdict criterion3() {
    Verdict v;
    const DecayModel single{1.0, ChannelMode::single};
    double worst = 0.0;
    std::uint64_t seed = 300;
    for (double tf : {0.5, 1.0, 2.0, 5.0, 40.0}) {
        DecaySimOptions o;
        o.n_runs = 1000000;
        o.seed = ++seed;
        const auto ad = simulate_decay(single, AdaptiveReadout{tf}, o);
        const double s_sim = tf / ad.avg_time;
        const double s_se = tf / (ad.avg_time * ad.avg_time) * ad.time_se;
        const double s_exact = 2.0 * tf / (tf + (1.0 - std::exp(-tf)));
        v.require(std::abs(decay_speedup(single, tf) - s_exact) < 1e-12, "closed form mismatch");
        const double z = std::abs(s_sim - s_exact) / s_se;
        worst = std::max(worst, z);
        v.require(z <= 3.0, fmt("speedup at t_f=%g off by %.2f sigma", tf, z));
        const double ze = std::abs(ad.err_rate - decay_nonadaptive(single, tf)) / std::max(ad.err_se, 1e-300);
        if (ad.err_rate > 0.0) v.require(ze <= 3.0, fmt("error rate at t_f=%g off by %.2f sigma", tf, ze));
    }
    v.note(fmt("worst simulation deviation %.2f sigma", worst));
    for (double tf = 40.0; tf <= 400.0; tf += 10.0) {
        v.require(decay_speedup(single, tf) > 1.9, fmt("single speedup <= 1.9 at t_f=%g", tf));
    }
    const DecayModel two{1.0, ChannelMode::two_channel};
    double rel = 0.0;
    for (double eps : {1e-3, 1e-4, 1e-6, 1e-9, 1e-12}) {
        const double tf = std::log(1.0 / (2.0 * eps));
        rel = std::max(rel, std::abs(decay_speedup(two, tf) / std::log(1.0 / (2.0 * eps)) - 1.0));
    }
    v.require(rel < 0.01, fmt("two-channel relative gap %.2e", rel));
    v.note(fmt("speedup(40 tau)=%.4f, two-channel gap %.1e", decay_speedup(single, 40.0), rel));
    return v;
}

Verdict criterion4() {
    Verdict v;
    CounterStream rng(44, StreamDomain::test, 4, 0);
    double cons = 0.0, fourier = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const double dt = 1e-4;
        auto pick = [&](double hi) { return trial % 10 == 0 ? 0.0 : hi * rng.uniform(); };
        const RateSet r{100.0 + 2000.0 * rng.uniform(), 300.0 * rng.uniform(), pick(0.5 / dt), pick(0.5 / dt), dt};
        const auto m = build_update_matrices(r, default_dn_max(r));
        Mat2 sum{};
        for (const Mat2& x : m.matrices()) sum = sum + x;
        Eigen::Matrix2d l;
        l << -r.big_gamma_plus, r.big_gamma_minus, r.big_gamma_plus, -r.big_gamma_minus;
        const Eigen::Matrix2d e = (l * dt).exp();
        const double d = std::max({std::abs(sum.pp - e(0, 0)), std::abs(sum.pm - e(0, 1)), std::abs(sum.mp - e(1, 0)),
                                   std::abs(sum.mm - e(1, 1))});
        v.require(d <= 1e-12 + m.tail_mass(), fmt("conservation gap %g > 1e-12 + tail %g", d, m.tail_mass()));
        cons = std::max(cons, d);
        const auto f = update_matrices_fourier_check(r, m.dn_max(), 64);
        for (int n = 0; n <= m.dn_max(); ++n) {
            const Mat2& a = m[static_cast<std::size_t>(n)];
            const Mat2& b = f[static_cast<std::size_t>(n)];
            fourier = std::max({fourier, std::abs(a.pp - b.pp), std::abs(a.pm - b.pm), std::abs(a.mp - b.mp),
                                std::abs(a.mm - b.mm)});
        }
    }
    v.require(fourier < 1e-10, fmt("Fourier gap %g", fourier));
    const RateSet still{720.0, 50.0, 0.0, 0.0, 1e-3};
    const auto m = build_update_matrices(still, 12, 1.0);
    double pois = 0.0;
    for (int n = 0; n <= 12; ++n) {
        const Mat2& x = m[static_cast<std::size_t>(n)];
        const double pp = std::exp(n * std::log(0.72) - 0.72 - std::lgamma(n + 1.0));
        const double pm = std::exp(n * std::log(0.05) - 0.05 - std::lgamma(n + 1.0));
        pois = std::max({pois, std::abs(x.pp - pp), std::abs(x.mm - pm), std::abs(x.pm), std::abs(x.mp)});
    }
    v.require(pois < 1e-12, fmt("Poisson diagonal gap %g", pois));
    v.note(fmt("conservation %.1e, Fourier %.1e, Poisson %.1e", cons, fourier, pois));
    return v;
}

Verdict criterion5() {
    Verdict v;
    double worst = 0.0;
    for (double t_f : {0.005, 0.010, 0.025}) {
        const RateSet window = kPaper.with_dt(t_f);
        const auto m = build_update_matrices(window, default_dn_max(window, 1e-13));
        for (State s : {State::plus, State::minus}) {
            const auto pmf = count_distribution({kPaper, t_f}, s);
            double tv = 0.0;
            const std::size_t n = std::max(pmf.size(), m.matrices().size());
            for (std::size_t k = 0; k < n; ++k) {
                const double a = k < pmf.size() ? pmf[k] : 0.0;
                double b = 0.0;
                if (k < m.matrices().size()) b = s == State::plus ? m[k].column_sum_plus() : m[k].column_sum_minus();
                tv += std::abs(a - b);
            }
            tv *= 0.5;
            worst = std::max(worst, tv);
            v.require(tv < 1e-7, fmt("TV %g at t_f=%g", tv, t_f));
        }
    }
    v.note(fmt("largest TV distance %.1e", worst));
    return v;
}

struct FrontierRun {
    json summary;
    fs::path dir;
};

FrontierRun run_frontier(const fs::path& root, const std::string& name, double prior, const std::string& mode,
                         unsigned threads) {
    const fs::path dir = root / (name + "_t" + std::to_string(threads));
    fs::create_directories(dir);
    const json cfg = {{"model", {{"gamma_plus", 720.0}, {"gamma_minus", 50.0}, {"big_gamma_plus", 3.6},
                                 {"big_gamma_minus", 0.98}, {"dt", 1e-4}}},
                      {"sweep", {{"n_traj", 200000}, {"t_max", 0.025}, {"prior_plus", prior}, {"mode", mode}}},
                      {"output", {{"dir", dir.string()}, {"prefix", name}}},
                      {"seed", 1}};
    std::ofstream(dir / "config.json") << cfg.dump(2);
    FrontierRun r;
    r.dir = dir;
    if (cli({"--threads", std::to_string(threads), "frontier", (dir / "config.json").string()}) != 0) return r;
    r.summary = json::parse(slurp(dir / (name + "_summary.json")));
    return r;
}

double num(const json& j, const char* a, const char* b) {
    if (!j.contains(a) || !j[a].contains(b)) return std::nan("");
    return j[a][b].get<double>();
}

void check_band(Verdict& v, const std::string& what, double value, double target, double tol, double scale) {
    v.require(std::abs(value - target) <= tol + 1e-12, what + fmt(" = %.4g outside %.4g +- %.4g", value * scale,
                                                                  target * scale, tol * scale));
}

Verdict criterion6(const FrontierRun& r) {
    Verdict v;
    const double c = num(r.summary, "counting", "floor"), n = num(r.summary, "nonadaptive", "floor");
    const double s = num(r.summary, "speedup", "t_f_over_T");
    check_band(v, "counting floor %", c, 0.019, 0.003, 100.0);
    check_band(v, "MLE floor %", n, 0.015, 0.003, 100.0);
    check_band(v, "speedup", s, 1.9, 0.3, 1.0);
    v.note(fmt("counting %.3f%%, MLE %.3f%%", 100 * c, 100 * n) + fmt(", speedup %.3f", s));
    return v;
}

Verdict criterion7(const FrontierRun& mle, const FrontierRun& map) {
    Verdict v;
    const double c = num(mle.summary, "counting", "floor"), n = num(mle.summary, "nonadaptive", "floor");
    const double s = num(mle.summary, "speedup", "t_f_over_T");
    const double nm = num(map.summary, "nonadaptive", "floor"), sm = num(map.summary, "speedup", "t_f_over_T");
    check_band(v, "MLE counting floor %", c, 0.016, 0.003, 100.0);
    check_band(v, "MLE floor %", n, 0.014, 0.003, 100.0);
    check_band(v, "MLE speedup", s, 1.6, 0.3, 1.0);
    check_band(v, "MAP floor %", nm, 0.013, 0.003, 100.0);
    check_band(v, "MAP speedup", sm, 1.8, 0.3, 1.0);
    v.note(fmt("MLE: counting %.3f%%, nonadaptive %.3f%%, speedup %.3f", 100 * c, 100 * n, s) +
           fmt("; MAP: %.3f%%, speedup %.3f", 100 * nm, sm));
    return v;
}

struct CalibrationRun {
    json report, eta_report;
    fs::path dir;
};

CalibrationRun run_calibration(const fs::path& root, unsigned threads) {
    CalibrationRun r;
    r.dir = root / ("calibration_t" + std::to_string(threads));
    const std::string t = std::to_string(threads);
    const std::string data = (r.dir / "data").string(), readouts = (r.dir / "readouts").string();
    if (cli({"--threads", t, "simulate", "--out-dir", data, "--n-traj", "125", "--duration", "30", "--seed", "1"}) != 0)
        return r;
    if (cli({"--threads", t, "simulate", "--out-dir", readouts, "--labeled", "--eta", "0.0222", "--n-traj", "39000",
             "--seed", "2"}) != 0)
        return r;
    const std::string report = (r.dir / "report.json").string(), eta = (r.dir / "eta.json").string();
    if (cli({"--threads", t, "calibrate", data, "--out", report}) != 0) return r;
    if (cli({"--threads", t, "calibrate", data, "--readout-dir", readouts, "--fit-eta", "--seed", "3", "--out", eta}) != 0)
        return r;
    r.report = json::parse(slurp(report));
    r.eta_report = json::parse(slurp(eta));
    return r;
}

Verdict criterion8(const CalibrationRun& r) {
    Verdict v;
    if (r.report.is_null() || r.eta_report.is_null()) {
        v.require(false, "pipeline did not complete");
        return v;
    }
    const json& rates = r.report["rates"];
    auto rel = [&](const char* k, double truth) { return rates[k].get<double>() / truth - 1.0; };
    const double gp = rel("gamma_plus", 720.0), gm = rel("gamma_minus", 50.0);
    const double bp = rel("big_gamma_plus", 3.6), bm = rel("big_gamma_minus", 0.98);
    v.require(std::abs(gp) <= 0.02, fmt("gamma_plus off %.2f%%", 100 * gp));
    v.require(std::abs(gm) <= 0.02, fmt("gamma_minus off %.2f%%", 100 * gm));
    v.require(std::abs(bp) <= 0.10, fmt("Gamma_plus off %.2f%%", 100 * bp));
    v.require(std::abs(bm) <= 0.10, fmt("Gamma_minus off %.2f%%", 100 * bm));
    const double nu = r.report["threshold"]["nu"].get<double>();
    const int rule = r.report["threshold"]["plus_if_count_above"].get<int>();
    v.require(std::abs(nu - 2.5) < 0.1 && rule == 2, fmt("nu %.3f, rule %g", nu, rule));
    const double p = r.report["stationary_priors"]["p_plus"].get<double>();
    const double p_true = 0.98 / (3.6 + 0.98);
    v.require(std::abs(p / p_true - 1.0) <= 0.10, fmt("p_plus %.4f vs %.4f", p, p_true));
    const double eta = r.eta_report["preparation"]["eta"].get<double>();
    v.require(std::abs(eta - 0.0222) <= 0.003, fmt("eta %.4f", eta));
    v.note(fmt("gamma+ %+.2f%%, gamma- %+.2f%%", 100 * gp, 100 * gm) + fmt(", Gamma+ %+.2f%%, Gamma- %+.2f%%", 100 * bp, 100 * bm) +
           fmt(", nu %.3f, p+ %.4f", nu, p) + fmt(", eta %.4f", eta));
    return v;
}

Verdict criterion9(const std::vector<std::pair<fs::path, fs::path>>& dirs) {
    Verdict v;
    int files = 0;
    for (const auto& [a, b] : dirs) {
        for (const auto& e : fs::recursive_directory_iterator(a)) {
            if (!e.is_regular_file()) continue;
            const auto ext = e.path().extension();
            if (ext != ".csv" && ext != ".json" && ext != ".counts") continue;
            if (e.path().filename() == "config.json") continue;
            const fs::path other = b / fs::relative(e.path(), a);
            ++files;
            v.require(fs::exists(other) && slurp(e.path()) == slurp(other),
                      "differs: " + fs::relative(e.path(), a).string());
            if (!v.pass) return v;
        }
    }
    v.require(files > 0, "no outputs to compare");
    v.note(std::to_string(files) + " files byte-identical between --threads 1 and --threads 2");
    return v;
}

}  // namespace

int main() {
    const fs::path root = fs::temp_directory_path() / ("seqread_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(root);
    fs::create_directories(root);
    int failures = 0;
    auto report = [&](int id, const std::function<Verdict()>& f) {
        const auto t0 = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = f();
        } catch (const std::exception& e) {
            v.require(false, std::string("exception: ") + e.what());
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("CRITERION %d %s (%.1f s): %s\n", id, v.pass ? "PASS" : "FAIL", secs, v.detail.c_str());
        std::fflush(stdout);
        failures += v.pass ? 0 : 1;
    };

    report(1, criterion1);
    report(2, criterion2);
    report(3, criterion3);
    report(4, criterion4);
    report(5, criterion5);

    FrontierRun fig5, fig6_mle, fig6_map;
    report(6, [&] {
        fig5 = run_frontier(root, "fig5", 0.5, "mle", 1);
        return criterion6(fig5);
    });
    report(7, [&] {
        fig6_mle = run_frontier(root, "fig6_mle", 0.25, "mle", 1);
        fig6_map = run_frontier(root, "fig6_map", 0.25, "map", 1);
        return criterion7(fig6_mle, fig6_map);
    });
    CalibrationRun cal;
    report(8, [&] {
        cal = run_calibration(root, 1);
        return criterion8(cal);
    });
    report(9, [&] {
        const auto a = run_frontier(root, "fig5", 0.5, "mle", 2);
        const auto b = run_frontier(root, "fig6_mle", 0.25, "mle", 2);
        const auto c = run_frontier(root, "fig6_map", 0.25, "map", 2);
        const auto d = run_calibration(root, 2);
        return criterion9({{fig5.dir, a.dir}, {fig6_mle.dir, b.dir}, {fig6_map.dir, c.dir}, {cal.dir, d.dir}});
    });

    fs::remove_all(root);
    std::printf("%d of 9 criteria passed\n", 9 - failures);
    return failures == 0 ? 0 : 1;
}
