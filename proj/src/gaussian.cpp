#include "seqread/gaussian.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

#include <boost/math/special_functions/erf.hpp>

#include "seqread/error.hpp"
#include "seqread/parallel.hpp"
#include "seqread/random.hpp"

namespace seqread {

void GaussianModel::validate() const {
    if (!(snr_rate > 0.0) || !std::isfinite(snr_rate)) {
        throw std::invalid_argument("snr_rate must be positive and finite");
    }
}

namespace {

// ln cosh(x) without overflow.
double log_cosh(double x) {
    x = std::abs(x);
    return x + std::log1p(std::exp(-2.0 * x)) - std::numbers::ln2;
}

}  // namespace

GaussianSeriesTerm series_term(double lambda_bar, int m) {
    constexpr double pi = std::numbers::pi;
    const double k = m + 0.5;
    const double denom = 4.0 * pi * pi * k * k + lambda_bar * lambda_bar;
    GaussianSeriesTerm term;
    term.m = m;
    term.a_m = 2.0 * lambda_bar / denom;
    const double log_b = std::log(16.0 * pi * k) + 2.0 * std::log(lambda_bar) +
                         log_cosh(0.5 * lambda_bar) - 2.0 * std::log(denom);
    term.b_m = (m % 2 == 0 ? -1.0 : 1.0) * std::exp(log_b);
    term.alpha_m = 0.5 + 2.0 * pi * pi * k * k / (lambda_bar * lambda_bar);
    return term;
}

double nonadaptive_error(const GaussianModel& model, double t_f) {
    model.validate();
    if (!(t_f >= 0.0)) throw std::invalid_argument("readout time must be nonnegative");
    return 0.5 * std::erfc(std::sqrt(0.5 * model.snr_rate * t_f));
}

double nonadaptive_time_for_error(const GaussianModel& model, double eps) {
    model.validate();
    if (!(eps > 0.0 && eps <= 0.5)) throw std::invalid_argument("error rate must lie in (0, 1/2]");
    const double x = boost::math::erfc_inv(2.0 * eps);
    return 2.0 * x * x / model.snr_rate;
}

ErrorTime adaptive_error_time_unbounded(const GaussianModel& model, double lambda_bar) {
    model.validate();
    if (!(lambda_bar >= 0.0)) throw std::invalid_argument("lambda_bar must be nonnegative");
    const double e = std::exp(-lambda_bar);
    return {e / (1.0 + e), lambda_bar / (2.0 * model.snr_rate) * std::tanh(0.5 * lambda_bar)};
}

ErrorTime adaptive_error_time_bounded(const GaussianModel& model, double lambda_bar, double t_max,
                                      const SeriesPolicy& policy) {
    model.validate();
    if (!(lambda_bar > 0.0)) throw std::invalid_argument("lambda_bar must be positive");
    if (!(t_max > 0.0)) throw std::invalid_argument("t_max must be positive");

    const ErrorTime limit = adaptive_error_time_unbounded(model, lambda_bar);
    const double rt = model.snr_rate * t_max;
    double eps = limit.err_rate;
    double rT = model.snr_rate * limit.avg_time;
    double largest = std::abs(rT);
    GaussianSeriesTerm term = series_term(lambda_bar, 0);
    for (int m = 0; m < policy.max_terms; ++m) {
        const double decay = std::exp(-term.alpha_m * rt);
        eps += term.a_m * decay;
        rT += term.b_m * decay;
        largest = std::max(largest, std::abs(term.b_m * decay));
        term = series_term(lambda_bar, m + 1);
        const double next_decay = std::exp(-term.alpha_m * rt);
        const bool eps_settled = std::abs(term.a_m) * next_decay <= policy.relative_tolerance * std::abs(eps);
        const bool time_settled = std::abs(term.b_m) * next_decay <= policy.relative_tolerance * std::abs(rT);
        if (eps_settled && time_settled) {
            // Alternating terms far larger than the sum cancel away the digits.
            const double lost = largest * std::numeric_limits<double>::epsilon() * (m + 1);
            if (lost > 1e-9 * std::abs(rT)) {
                throw NumericalError("series cancellation too severe for lambda_bar = " + std::to_string(lambda_bar) +
                                     " at r t_max = " + std::to_string(rt));
            }
            return {eps, rT / model.snr_rate};
        }
    }
    throw NumericalError("series budget exceeded (" + std::to_string(policy.max_terms) + " terms)");
}

AsymmetricSnr asymmetric_snr(double gamma_plus, double gamma_minus) {
    if (!(gamma_plus > 0.0) || !(gamma_minus > 0.0)) {
        throw std::invalid_argument("detection rates must be positive");
    }
    const double d = gamma_plus - gamma_minus;
    return {d * d / (4.0 * gamma_plus), d * d / (4.0 * gamma_minus)};
}

namespace {

struct Step {
    double h;
    double mean_scale;  // drift * h
    double sd;          // sqrt(variance_rate * h)
    double bridge;      // 2 / (variance_rate * h)
    double t_end;
};

struct Accumulator {
    std::int64_t runs[2] = {0, 0};
    std::int64_t errors[2] = {0, 0};
    double time_sum[2] = {0.0, 0.0};
    double time_sq[2] = {0.0, 0.0};

    void add(int s, bool error, double t) {
        ++runs[s];
        errors[s] += error ? 1 : 0;
        time_sum[s] += t;
        time_sq[s] += t * t;
    }
    void merge(const Accumulator& o) {
        for (int s = 0; s < 2; ++s) {
            runs[s] += o.runs[s];
            errors[s] += o.errors[s];
            time_sum[s] += o.time_sum[s];
            time_sq[s] += o.time_sq[s];
        }
    }
};

McEstimate summarize(const Accumulator& acc) {
    McEstimate est;
    est.n_plus = acc.runs[0];
    est.n_minus = acc.runs[1];
    est.n_runs = acc.runs[0] + acc.runs[1];
    const double n = static_cast<double>(est.n_runs);
    const std::int64_t errors = acc.errors[0] + acc.errors[1];
    est.err_rate = static_cast<double>(errors) / n;
    est.err_se = std::sqrt(est.err_rate * (1.0 - est.err_rate) / n);
    est.avg_time = (acc.time_sum[0] + acc.time_sum[1]) / n;
    const double var = (acc.time_sq[0] + acc.time_sq[1]) / n - est.avg_time * est.avg_time;
    est.time_se = std::sqrt(std::max(0.0, var) / n);
    auto ratio = [](double a, std::int64_t b) { return b > 0 ? a / static_cast<double>(b) : 0.0; };
    est.err_plus = ratio(static_cast<double>(acc.errors[0]), acc.runs[0]);
    est.err_minus = ratio(static_cast<double>(acc.errors[1]), acc.runs[1]);
    est.time_plus = ratio(acc.time_sum[0], acc.runs[0]);
    est.time_minus = ratio(acc.time_sum[1], acc.runs[1]);
    return est;
}

}  // namespace

std::vector<McEstimate> simulate_first_passage_grid(const DriftDiffusion& process,
                                                    std::span<const StoppingRule> thresholds,
                                                    std::span<const double> horizons,
                                                    const FirstPassageOptions& options) {
    if (options.n_runs <= 0) throw std::invalid_argument("n_runs must be positive");
    if (!(process.variance_rate > 0.0)) throw std::invalid_argument("variance rate must be positive");
    if (thresholds.empty() || horizons.empty()) throw std::invalid_argument("empty threshold or horizon grid");
    for (const auto& th : thresholds) {
        if (!(th.lambda_minus < th.lambda_plus)) {
            throw std::invalid_argument("thresholds require lambda_minus < lambda_plus");
        }
    }
    for (double h : horizons) {
        if (!(h >= 0.0)) throw std::invalid_argument("horizons must be nonnegative");
    }
    const double dt = options.dt_sim > 0.0 ? options.dt_sim : 4e-3 / process.variance_rate;

    // Step schedule: uniform grid merged with the horizon times.
    std::vector<double> sorted_h(horizons.begin(), horizons.end());
    std::sort(sorted_h.begin(), sorted_h.end());
    sorted_h.erase(std::unique(sorted_h.begin(), sorted_h.end()), sorted_h.end());
    const double t_end = sorted_h.back();
    std::vector<double> times;
    for (std::int64_t k = 1;; ++k) {
        const double t = static_cast<double>(k) * dt;
        if (t >= t_end) break;
        times.push_back(t);
    }
    for (double h : sorted_h) {
        if (h > 0.0) times.push_back(h);
    }
    std::sort(times.begin(), times.end());
    times.erase(std::unique(times.begin(), times.end(),
                            [dt](double a, double b) { return std::abs(a - b) < 1e-9 * dt; }),
                times.end());
    std::vector<Step> steps;
    steps.reserve(times.size());
    double prev = 0.0;
    for (double t : times) {
        const double h = t - prev;
        steps.push_back({h, process.drift * h, std::sqrt(process.variance_rate * h),
                         2.0 / (process.variance_rate * h), t});
        prev = t;
    }
    // Horizon index -> number of steps taken when it is reached.
    const std::size_t n_h = horizons.size();
    std::vector<std::size_t> horizon_step(n_h);
    for (std::size_t j = 0; j < n_h; ++j) {
        if (horizons[j] <= 0.0) {
            horizon_step[j] = 0;
            continue;
        }
        auto it = std::lower_bound(times.begin(), times.end(), horizons[j] - 1e-9 * dt);
        horizon_step[j] = static_cast<std::size_t>(it - times.begin()) + 1;
    }
    const std::size_t max_steps = *std::max_element(horizon_step.begin(), horizon_step.end());

    const std::size_t n_p = thresholds.size();
    const std::int64_t chunks = chunk_count(options.n_runs);
    std::vector<std::vector<Accumulator>> partial(chunks, std::vector<Accumulator>(n_p * n_h));

    parallel_chunks(options.n_runs, resolve_threads(options.threads),
                    [&](std::int64_t begin, std::int64_t end, std::int64_t chunk) {
        auto& acc = partial[chunk];
        std::vector<std::size_t> stop_step(n_p);
        std::vector<double> stop_time(n_p);
        std::vector<std::uint8_t> stop_plus(n_p);
        std::vector<double> x_at_horizon(n_h);
        for (std::int64_t run = begin; run < end; ++run) {
            CounterStream rng(options.seed, StreamDomain::first_passage, 0,
                              static_cast<std::uint64_t>(run));
            int s = static_cast<int>(run % 2);
            if (options.priors) s = rng.uniform() < options.priors->plus() ? 0 : 1;
            const double sign = s == 0 ? 1.0 : -1.0;
            std::normal_distribution<double> normal;

            std::size_t unresolved = 0;
            for (std::size_t p = 0; p < n_p; ++p) {
                stop_step[p] = std::numeric_limits<std::size_t>::max();
                if (0.0 >= thresholds[p].lambda_plus || 0.0 <= thresholds[p].lambda_minus) {
                    stop_step[p] = 0;
                    stop_time[p] = 0.0;
                    stop_plus[p] = 0.0 >= thresholds[p].lambda_plus;
                } else {
                    ++unresolved;
                }
            }
            double x = 0.0;
            for (std::size_t j = 0; j < n_h; ++j) {
                if (horizon_step[j] == 0) x_at_horizon[j] = 0.0;
            }
            std::size_t k = 0;
            while (k < max_steps && unresolved > 0) {
                const Step& st = steps[k];
                const double x_new = x + sign * st.mean_scale + st.sd * normal(rng);
                ++k;
                const double t_mid = st.t_end - 0.5 * st.h;
                for (std::size_t p = 0; p < n_p; ++p) {
                    if (stop_step[p] != std::numeric_limits<std::size_t>::max()) continue;
                    const double up = thresholds[p].lambda_plus;
                    const double lo = thresholds[p].lambda_minus;
                    bool hit_up = x_new >= up;
                    bool hit_lo = !hit_up && x_new <= lo;
                    if (!hit_up && !hit_lo) {
                        // Brownian-bridge crossing between the two grid points.
                        const double eu = (up - x) * (up - x_new) * st.bridge;
                        if (eu < 40.0 && rng.uniform() < std::exp(-eu)) {
                            hit_up = true;
                        } else {
                            const double el = (x - lo) * (x_new - lo) * st.bridge;
                            if (el < 40.0 && rng.uniform() < std::exp(-el)) hit_lo = true;
                        }
                    }
                    if (hit_up || hit_lo) {
                        stop_step[p] = k;
                        stop_time[p] = t_mid;
                        stop_plus[p] = hit_up;
                        --unresolved;
                    }
                }
                x = x_new;
                for (std::size_t j = 0; j < n_h; ++j) {
                    if (horizon_step[j] == k) x_at_horizon[j] = x;
                }
            }
            for (std::size_t p = 0; p < n_p; ++p) {
                for (std::size_t j = 0; j < n_h; ++j) {
                    bool chose_plus;
                    double t;
                    if (stop_step[p] <= horizon_step[j]) {
                        chose_plus = stop_plus[p] != 0;
                        t = stop_time[p];
                    } else {
                        chose_plus = x_at_horizon[j] > 0.0;
                        t = horizons[j];
                    }
                    acc[p * n_h + j].add(s, chose_plus != (s == 0), t);
                }
            }
        }
    });

    std::vector<McEstimate> out;
    out.reserve(n_p * n_h);
    for (std::size_t i = 0; i < n_p * n_h; ++i) {
        Accumulator total;
        for (const auto& part : partial) total.merge(part[i]);
        out.push_back(summarize(total));
    }
    return out;
}

McEstimate simulate_first_passage(const GaussianModel& model, const StoppingRule& rule,
                                  const FirstPassageOptions& options) {
    model.validate();
    rule.validate();
    FirstPassageOptions opts = options;
    if (opts.dt_sim <= 0.0) opts.dt_sim = 1e-3 / model.snr_rate;
    const double horizon = rule.t_max;
    return simulate_first_passage_grid(DriftDiffusion::from_model(model), std::span(&rule, 1),
                                       std::span(&horizon, 1), opts)
        .front();
}

}  // namespace seqread
