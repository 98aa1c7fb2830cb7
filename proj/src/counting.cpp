#include "seqread/counting.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/bessel.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>

#include "seqread/error.hpp"

namespace seqread {

namespace {

struct Side {
    double g_self, g_other;    // detection rates of the initial and other state
    double big_self, big_other;
};

Side side_of(const RateSet& r, State s) {
    if (s == State::plus) return {r.gamma_plus, r.gamma_minus, r.big_gamma_plus, r.big_gamma_minus};
    return {r.gamma_minus, r.gamma_plus, r.big_gamma_minus, r.big_gamma_plus};
}

// I1(2x)/x with its removable limit at x = 0.
double i1_ratio(double x) {
    if (x < 1e-6) return 1.0 + 0.5 * x * x;
    return boost::math::cyl_bessel_i(1, 2.0 * x) / x;
}

// sum over switching histories of g(mu) weighted by their probability,
// where mu is the mean count accumulated along the history:
//   g(mu_tf) e^{-G_s t_f} + int_0^tf g(mu_t) [G+G- t I1(2x)/x + G_s I0(2x)]
//                                            e^{-G_s t - G_o (t_f - t)} dt
template <class G>
double switch_average(const CountDistributionParams& p, State s, G&& g) {
    const Side sd = side_of(p.rates, s);
    const double tf = p.t_f;
    const double gg = p.rates.big_gamma_plus * p.rates.big_gamma_minus;
    double value = g(sd.g_self * tf) * std::exp(-sd.big_self * tf);
    if (sd.big_self == 0.0) return value;
    auto integrand = [&](double t) {
        const double x = std::sqrt(gg * t * (tf - t));
        const double even = gg * t * i1_ratio(x);
        const double odd = sd.big_self * boost::math::cyl_bessel_i(0, 2.0 * x);
        const double mu = sd.g_self * t + sd.g_other * (tf - t);
        return g(mu) * (even + odd) * std::exp(-sd.big_self * t - sd.big_other * (tf - t));
    };
    // Integrating over the unit interval keeps the error estimate independent
    // of the window length.
    double err = 0.0;
    const double integral =
        tf * boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
                 [&](double s) { return integrand(s * tf); }, 0.0, 1.0, 15, 1e-13, &err);
    err *= tf;
    if (err > kCountingTolerance) {
        char msg[96];
        std::snprintf(msg, sizeof msg, "count quadrature reached only %.3g", err);
        throw NumericalError(msg);
    }
    return value + integral;
}

double poisson(int n, double mu) {
    if (mu == 0.0) return n == 0 ? 1.0 : 0.0;
    return std::exp(n * std::log(mu) - mu - std::lgamma(n + 1.0));
}

}  // namespace

void CountDistributionParams::validate() const {
    RateSet r = rates;
    if (!(r.dt > 0.0)) r.dt = 1.0;
    r.validate();
    if (!(t_f > 0.0) || !std::isfinite(t_f)) throw std::invalid_argument("t_f must be positive");
}

double count_pmf(const CountDistributionParams& params, int n, State state) {
    params.validate();
    if (n < 0) throw std::invalid_argument("count must be nonnegative");
    return switch_average(params, state, [n](double mu) { return poisson(n, mu); });
}

std::vector<double> count_distribution(const CountDistributionParams& params, State state) {
    params.validate();
    std::vector<double> out;
    double mass = 0.0;
    const double mean_bound = std::max(params.rates.gamma_plus, params.rates.gamma_minus) * params.t_f;
    for (int n = 0;; ++n) {
        out.push_back(count_pmf(params, n, state));
        mass += out.back();
        if (n > mean_bound && 1.0 - mass < 1e-14) break;
        if (n > mean_bound + 50.0 * std::sqrt(mean_bound + 1.0) + 100.0) break;
    }
    return out;
}

CountErrors count_error_rates(const CountDistributionParams& params, int nu) {
    params.validate();
    if (nu < 0) throw std::invalid_argument("threshold must be nonnegative");
    // P(n <= nu; mu) = Q(nu + 1, mu).
    auto below = [nu](double mu) { return mu == 0.0 ? 1.0 : boost::math::gamma_q(nu + 1.0, mu); };
    auto above = [nu](double mu) { return mu == 0.0 ? 0.0 : boost::math::gamma_p(nu + 1.0, mu); };
    return {switch_average(params, State::plus, below), switch_average(params, State::minus, above)};
}

ThresholdChoice optimize_threshold(const CountDistributionParams& params, const Priors& priors) {
    params.validate();
    auto eval = [&](int nu) {
        const CountErrors e = count_error_rates(params, nu);
        return ThresholdChoice{nu, priors.plus() * e.err_plus + priors.minus() * e.err_minus, e};
    };
    ThresholdChoice best = eval(0);
    for (int nu = 1;; ++nu) {
        const ThresholdChoice c = eval(nu);
        if (c.err_rate < best.err_rate) {
            best = c;
            continue;
        }
        // Local minimum at best.nu; look two further before accepting.
        const ThresholdChoice c2 = eval(nu + 1);
        if (c2.err_rate < best.err_rate) {
            best = c2;
            nu += 1;
            continue;
        }
        const ThresholdChoice c3 = eval(nu + 2);
        if (c3.err_rate < best.err_rate) {
            best = c3;
            nu += 2;
            continue;
        }
        return best;
    }
}

FrontierTable counting_frontier(const RateSet& rates, const std::vector<double>& t_f_grid, const Priors& priors,
                                DecisionMode mode) {
    FrontierTable table;
    table.method = "counting";
    table.priors = priors;
    table.mode = mode;
    table.provenance.rates = rates;
    const Priors selection = selection_priors(mode, priors);
    for (double tf : t_f_grid) {
        const CountDistributionParams params{rates, tf};
        const ThresholdChoice c = optimize_threshold(params, selection);
        table.points.push_back(FrontierPoint::combine(priors, c.conditional.err_plus, c.conditional.err_minus, tf, tf,
                                                      FixedTime{tf}));
    }
    std::stable_sort(table.points.begin(), table.points.end(),
                     [](const FrontierPoint& a, const FrontierPoint& b) { return a.avg_time < b.avg_time; });
    return table;
}

}  // namespace seqread
