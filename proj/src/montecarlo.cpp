#include "seqread/montecarlo.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <mutex>
#include <ostream>
#include <stdexcept>

#include "seqread/error.hpp"
#include "seqread/parallel.hpp"

namespace seqread {

std::string to_string(DecisionMode mode) { return mode == DecisionMode::mle ? "mle" : "map"; }

DecisionMode parse_decision_mode(const std::string& text) {
    if (text == "mle") return DecisionMode::mle;
    if (text == "map") return DecisionMode::map;
    throw std::invalid_argument("mode must be mle or map, got '" + text + "'");
}

Trajectory generate_trajectory(const UpdateMatrixSet& matrices, const StateVector& initial,
                               std::int64_t n_bins, CounterStream& stream) {
    if (n_bins < 0) throw std::invalid_argument("n_bins must be nonnegative");
    const double norm = initial.rho_plus + initial.rho_minus;
    if (!(norm > 0.0)) throw std::invalid_argument("initial state must have positive mass");
    Trajectory traj;
    traj.dt = matrices.rates().dt;
    traj.counts.resize(static_cast<std::size_t>(n_bins));
    const auto ms = matrices.matrices();
    const std::size_t n_counts = ms.size();
    std::vector<Vec2> next(n_counts);
    Vec2 rho{initial.rho_plus / norm, initial.rho_minus / norm};
    for (std::int64_t k = 0; k < n_bins; ++k) {
        double total = 0.0;
        for (std::size_t n = 0; n < n_counts; ++n) {
            next[n] = ms[n] * rho;
            total += next[n].sum();
        }
        const double u = stream.uniform() * total;
        double cum = 0.0;
        std::size_t pick = n_counts - 1;
        for (std::size_t n = 0; n < n_counts; ++n) {
            cum += next[n].sum();
            if (u < cum) {
                pick = n;
                break;
            }
        }
        // Guards against rounding landing on a zero-probability tail entry.
        while (next[pick].sum() <= 0.0 && pick > 0) --pick;
        const double p = next[pick].sum();
        rho = {next[pick].plus / p, next[pick].minus / p};
        traj.counts[static_cast<std::size_t>(k)] = static_cast<std::uint32_t>(pick);
    }
    return traj;
}

void SweepConfig::validate() const {
    if (n_traj < 1) throw std::invalid_argument("n_traj must be at least 1");
    if (!(t_max > 0.0) || !std::isfinite(t_max)) throw std::invalid_argument("t_max must be positive");
    for (double t : t_f_grid) {
        if (!(t > 0.0) || t > t_max * (1.0 + 1e-12)) throw std::invalid_argument("t_f grid must lie in (0, t_max]");
    }
    for (double p : p_plus_grid) {
        if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("p_plus grid must lie in (0, 1)");
    }
    for (double p : p_minus_grid) {
        if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("p_minus grid must lie in (0, 1)");
    }
    const auto plus = p_plus_grid.empty() ? default_p_plus_grid() : p_plus_grid;
    const auto minus = p_minus_grid.empty() ? default_p_minus_grid() : p_minus_grid;
    if (*std::min_element(plus.begin(), plus.end()) <= *std::max_element(minus.begin(), minus.end())) {
        throw std::invalid_argument("every p_plus must exceed every p_minus");
    }
    if (mode == DecisionMode::map) threshold_from_priors(priors);
}

double SweepConfig::decision_threshold() const {
    return mode == DecisionMode::mle ? 0.0 : threshold_from_priors(priors);
}

namespace {

std::vector<double> log_spaced_distances(int n, double min_distance) {
    if (n < 1) throw std::invalid_argument("grid needs at least one point");
    if (!(min_distance > 0.0 && min_distance < 0.1)) throw std::invalid_argument("min distance must lie in (0, 0.1)");
    std::vector<double> d(static_cast<std::size_t>(n));
    const double a = std::log(0.1);
    const double b = std::log(min_distance);
    for (int i = 0; i < n; ++i) d[static_cast<std::size_t>(i)] = n == 1 ? 0.1 : std::exp(a + (b - a) * i / (n - 1));
    return d;
}

// Integer tallies, so the reduction is exact in any order.
struct Tally {
    std::int64_t errors[2] = {0, 0};
    std::int64_t bins[2] = {0, 0};

    void merge(const Tally& o) {
        for (int s = 0; s < 2; ++s) {
            errors[s] += o.errors[s];
            bins[s] += o.bins[s];
        }
    }
};

FrontierPoint make_point(const SweepConfig& config, const Tally& t, double dt, RuleLabel rule) {
    const double n = static_cast<double>(config.n_traj);
    return FrontierPoint::combine(config.priors, static_cast<double>(t.errors[0]) / n,
                                  static_cast<double>(t.errors[1]) / n,
                                  static_cast<double>(t.bins[0]) * dt / n,
                                  static_cast<double>(t.bins[1]) * dt / n, std::move(rule));
}

void sort_by_time(std::vector<FrontierPoint>& pts) {
    std::stable_sort(pts.begin(), pts.end(),
                     [](const FrontierPoint& a, const FrontierPoint& b) { return a.avg_time < b.avg_time; });
}

SweepResult sweep_impl(const SweepConfig& config, const UpdateMatrixSet& matrices, bool want_fixed,
                       bool want_adaptive) {
    config.validate();
    const double dt = matrices.rates().dt;
    const auto n_bins = static_cast<std::int64_t>(std::llround(config.t_max / dt));
    if (n_bins < 1) throw std::invalid_argument("t_max shorter than one bin");
    const double lambda_th = config.decision_threshold();

    std::vector<std::int64_t> fixed_bins;
    if (config.t_f_grid.empty()) {
        for (std::int64_t k = 1; k <= n_bins; ++k) fixed_bins.push_back(k);
    } else {
        for (double t : config.t_f_grid) {
            fixed_bins.push_back(std::clamp<std::int64_t>(std::llround(t / dt), 1, n_bins));
        }
    }
    std::vector<double> p_plus = config.p_plus_grid.empty() ? default_p_plus_grid() : config.p_plus_grid;
    std::vector<double> p_minus = config.p_minus_grid.empty() ? default_p_minus_grid() : config.p_minus_grid;
    if (*std::min_element(p_plus.begin(), p_plus.end()) <= *std::max_element(p_minus.begin(), p_minus.end())) {
        throw std::invalid_argument("every p_plus must exceed every p_minus");
    }

    // Upper thresholds ascending and lower thresholds descending in lambda,
    // so first-hit indices are nondecreasing along each list.
    std::vector<std::size_t> up_order(p_plus.size()), lo_order(p_minus.size());
    for (std::size_t i = 0; i < up_order.size(); ++i) up_order[i] = i;
    for (std::size_t j = 0; j < lo_order.size(); ++j) lo_order[j] = j;
    std::sort(up_order.begin(), up_order.end(), [&](auto a, auto b) { return p_plus[a] < p_plus[b]; });
    std::sort(lo_order.begin(), lo_order.end(), [&](auto a, auto b) { return p_minus[a] > p_minus[b]; });
    std::vector<double> lam_up(p_plus.size()), lam_lo(p_minus.size());
    for (std::size_t i = 0; i < up_order.size(); ++i) lam_up[i] = lambda_for_posterior(p_plus[up_order[i]], lambda_th);
    for (std::size_t j = 0; j < lo_order.size(); ++j) lam_lo[j] = lambda_for_posterior(p_minus[lo_order[j]], lambda_th);
    const std::size_t n_up = lam_up.size();
    const std::size_t n_lo = lam_lo.size();

    std::vector<Tally> fixed_total(want_fixed ? fixed_bins.size() : 0);
    std::vector<Tally> adaptive_total(want_adaptive ? n_up * n_lo : 0);
    std::mutex merge_mutex;

    const std::int64_t total_runs = 2 * config.n_traj;
    parallel_chunks(total_runs, resolve_threads(config.threads),
                    [&](std::int64_t begin, std::int64_t end, std::int64_t) {
        std::vector<Tally> fixed_acc(fixed_total.size());
        std::vector<Tally> adaptive_acc(adaptive_total.size());
        std::vector<double> lam(static_cast<std::size_t>(n_bins) + 1);
        std::vector<std::uint8_t> says_plus(lam.size());
        std::vector<std::int64_t> hit_up(n_up), hit_lo(n_lo);
        constexpr double big = std::numeric_limits<double>::max();
        for (std::int64_t run = begin; run < end; ++run) {
            const int s = run < config.n_traj ? 0 : 1;
            const std::int64_t index = s == 0 ? run : run - config.n_traj;
            const State truth = s == 0 ? State::plus : State::minus;
            CounterStream rng(config.seed, StreamDomain::charge_trajectory, static_cast<std::uint32_t>(s),
                              static_cast<std::uint64_t>(index));
            const Trajectory traj = generate_trajectory(matrices, StateVector::basis(truth), n_bins, rng);

            LikelihoodTracker tracker(matrices);
            lam[0] = 0.0;
            says_plus[0] = decide(tracker.lambda(), lambda_th) == State::plus;
            for (std::int64_t k = 1; k <= n_bins; ++k) {
                const LogLikelihood& l = tracker.push(traj.counts[static_cast<std::size_t>(k - 1)]);
                lam[static_cast<std::size_t>(k)] =
                    l.certain == Certainty::plus ? big : l.certain == Certainty::minus ? -big : l.value;
                says_plus[static_cast<std::size_t>(k)] = decide(l, lambda_th) == State::plus;
            }
            const bool truth_plus = s == 0;

            for (std::size_t f = 0; f < fixed_acc.size(); ++f) {
                const auto k = static_cast<std::size_t>(fixed_bins[f]);
                fixed_acc[f].errors[s] += (says_plus[k] != 0) != truth_plus;
                fixed_acc[f].bins[s] += fixed_bins[f];
            }
            if (adaptive_acc.empty()) continue;

            std::fill(hit_up.begin(), hit_up.end(), n_bins + 1);
            std::fill(hit_lo.begin(), hit_lo.end(), n_bins + 1);
            std::size_t iu = 0, il = 0;
            for (std::int64_t k = 0; k <= n_bins && (iu < n_up || il < n_lo); ++k) {
                const double v = lam[static_cast<std::size_t>(k)];
                while (iu < n_up && v >= lam_up[iu]) hit_up[iu++] = k;
                while (il < n_lo && v <= lam_lo[il]) hit_lo[il++] = k;
            }
            for (std::size_t i = 0; i < n_up; ++i) {
                Tally* row = &adaptive_acc[up_order[i] * n_lo];
                const std::int64_t hu = hit_up[i];
                for (std::size_t j = 0; j < n_lo; ++j) {
                    const std::int64_t stop = std::min({hu, hit_lo[j], n_bins});
                    Tally& t = row[lo_order[j]];
                    t.errors[s] += (says_plus[static_cast<std::size_t>(stop)] != 0) != truth_plus;
                    t.bins[s] += stop;
                }
            }
        }
        std::lock_guard<std::mutex> lock(merge_mutex);
        for (std::size_t f = 0; f < fixed_acc.size(); ++f) fixed_total[f].merge(fixed_acc[f]);
        for (std::size_t p = 0; p < adaptive_acc.size(); ++p) adaptive_total[p].merge(adaptive_acc[p]);
    });

    SweepResult out;
    for (FrontierTable* t : {&out.nonadaptive, &out.adaptive}) {
        t->priors = config.priors;
        t->mode = config.mode;
        t->n_traj = config.n_traj;
        t->provenance.seed = config.seed;
        t->provenance.rates = matrices.rates();
    }
    out.nonadaptive.method = "nonadaptive";
    out.adaptive.method = "adaptive";
    for (std::size_t f = 0; f < fixed_total.size(); ++f) {
        out.nonadaptive.points.push_back(
            make_point(config, fixed_total[f], dt, FixedTime{static_cast<double>(fixed_bins[f]) * dt}));
    }
    for (std::size_t i = 0; i < p_plus.size() && want_adaptive; ++i) {
        for (std::size_t j = 0; j < p_minus.size(); ++j) {
            out.adaptive.points.push_back(make_point(config, adaptive_total[i * n_lo + j], dt,
                                                     StoppingProbabilities{p_plus[i], p_minus[j], config.t_max}));
        }
    }
    sort_by_time(out.nonadaptive.points);
    sort_by_time(out.adaptive.points);
    return out;
}

}  // namespace

std::vector<double> default_p_plus_grid(int n, double min_distance) {
    std::vector<double> d = log_spaced_distances(n, min_distance);
    for (double& x : d) x = 1.0 - x;
    return d;
}

std::vector<double> default_p_minus_grid(int n, double min_distance) { return log_spaced_distances(n, min_distance); }

SweepResult run_sweep(const SweepConfig& config, const UpdateMatrixSet& matrices) {
    return sweep_impl(config, matrices, true, true);
}

FrontierTable run_nonadaptive(const SweepConfig& config, const UpdateMatrixSet& matrices) {
    return sweep_impl(config, matrices, true, false).nonadaptive;
}

FrontierTable run_adaptive(const SweepConfig& config, const UpdateMatrixSet& matrices) {
    return sweep_impl(config, matrices, false, true).adaptive;
}

Priors selection_priors(DecisionMode mode, const Priors& priors) {
    return mode == DecisionMode::mle ? Priors::equal() : priors;
}

FrontierTable pareto_optimize(const FrontierTable& table, int n_bins, const std::optional<Priors>& selection) {
    if (table.points.empty()) throw std::invalid_argument("cannot optimize an empty table");
    if (n_bins < 1) throw std::invalid_argument("need at least one time bin");
    struct Scored {
        double time, err;
        const FrontierPoint* point;
    };
    std::vector<Scored> scored;
    for (const auto& p : table.points) {
        if (selection) {
            const FrontierPoint q = FrontierPoint::combine(*selection, p.err_plus, p.err_minus, p.time_plus,
                                                           p.time_minus, p.rule);
            scored.push_back({q.avg_time, q.err_rate, &p});
        } else {
            scored.push_back({p.avg_time, p.err_rate, &p});
        }
    }
    double lo = scored.front().time, hi = lo;
    for (const auto& s : scored) {
        lo = std::min(lo, s.time);
        hi = std::max(hi, s.time);
    }
    const double width = (hi - lo) / n_bins;
    std::vector<const Scored*> best(static_cast<std::size_t>(n_bins), nullptr);
    for (const auto& s : scored) {
        int b = width > 0.0 ? static_cast<int>((s.time - lo) / width) : 0;
        b = std::clamp(b, 0, n_bins - 1);
        auto& slot = best[static_cast<std::size_t>(b)];
        if (slot == nullptr || s.err < slot->err || (s.err == slot->err && s.time < slot->time)) slot = &s;
    }
    std::vector<FrontierPoint> kept;
    double running = std::numeric_limits<double>::infinity();
    for (const Scored* s : best) {
        if (s == nullptr || s->err > running) continue;
        running = s->err;
        kept.push_back(*s->point);
    }
    FrontierTable out = table;
    out.points.clear();
    if (selection) {
        sort_by_time(kept);
        running = std::numeric_limits<double>::infinity();
        for (const auto& p : kept) {
            if (p.err_rate > running) continue;
            running = p.err_rate;
            out.points.push_back(p);
        }
    } else {
        out.points = std::move(kept);
    }
    return out;
}

double time_at_error(const FrontierTable& table, double eps_target, const std::string& curve) {
    if (!(eps_target > 0.0)) throw std::invalid_argument("target error rate must be positive");
    const auto& pts = table.points;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        if (pts[i].err_rate > eps_target) continue;
        if (i == 0) return pts[0].avg_time;
        const FrontierPoint& a = pts[i - 1];
        const FrontierPoint& b = pts[i];
        if (b.err_rate <= 0.0 || a.err_rate <= 0.0) return b.avg_time;
        const double la = std::log(a.err_rate), lb = std::log(b.err_rate);
        const double w = (std::log(eps_target) - la) / (lb - la);
        return a.avg_time + w * (b.avg_time - a.avg_time);
    }
    throw DataError("target error rate unreachable on " + curve + " curve");
}

double speedup_at_target(const FrontierTable& adaptive, const FrontierTable& nonadaptive, double eps_target) {
    const double t_fixed = time_at_error(nonadaptive, eps_target, "nonadaptive");
    const double t_adapt = time_at_error(adaptive, eps_target, "adaptive");
    if (!(t_adapt > 0.0)) throw DataError("adaptive curve reaches the target at zero time");
    return t_fixed / t_adapt;
}

const FrontierPoint& min_error_point(const FrontierTable& table) {
    if (table.points.empty()) throw std::invalid_argument("empty table");
    return *std::min_element(table.points.begin(), table.points.end(),
                             [](const FrontierPoint& a, const FrontierPoint& b) { return a.err_rate < b.err_rate; });
}

namespace {

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

}  // namespace

void write_frontier_csv(std::ostream& out, const FrontierTable& table) {
    const Provenance& pv = table.provenance;
    out << "# tool=seqread " << pv.tool_version << '\n';
    out << "# config_digest=" << pv.config_digest << '\n';
    out << "# seed=" << pv.seed << '\n';
    out << "# rates=gamma_plus:" << num(pv.rates.gamma_plus) << ",gamma_minus:" << num(pv.rates.gamma_minus)
        << ",big_gamma_plus:" << num(pv.rates.big_gamma_plus) << ",big_gamma_minus:" << num(pv.rates.big_gamma_minus)
        << ",dt:" << num(pv.rates.dt) << '\n';
    out << "method,prior_plus,mode,p_plus,p_minus,t_f,T,eps,eps_plus,eps_minus,T_plus,T_minus,n_traj,seed\n";
    for (const auto& p : table.points) {
        std::string pp, pm, tf;
        if (const auto* sp = std::get_if<StoppingProbabilities>(&p.rule)) {
            pp = num(sp->p_plus);
            pm = num(sp->p_minus);
        } else if (const auto* ft = std::get_if<FixedTime>(&p.rule)) {
            tf = num(ft->t_f);
        }
        out << table.method << ',' << num(table.priors.plus()) << ',' << to_string(table.mode) << ',' << pp << ','
            << pm << ',' << tf << ',' << num(p.avg_time) << ',' << num(p.err_rate) << ',' << num(p.err_plus) << ','
            << num(p.err_minus) << ',' << num(p.time_plus) << ',' << num(p.time_minus) << ',' << table.n_traj << ','
            << pv.seed << '\n';
    }
}

}  // namespace seqread
