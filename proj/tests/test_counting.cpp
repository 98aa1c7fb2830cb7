#include "doctest.h"

#include <boost/math/distributions/poisson.hpp>

#include <cmath>
#include <stdexcept>

#include "seqread/counting.hpp"
#include "seqread/random.hpp"

using namespace seqread;

namespace {

const RateSet kPaper{720.0, 50.0, 3.6, 0.98, 1e-4};

// Total-variation distance between the counting PMF and the single-bin
// marginal of update matrices built with dt = t_f.
double tv_against_matrices(const RateSet& rates, double t_f, State s) {
    const RateSet window = rates.with_dt(t_f);
    const auto m = build_update_matrices(window, default_dn_max(window, 1e-13));
    const auto pmf = count_distribution({rates, t_f}, s);
    double tv = 0.0;
    const std::size_t n = std::max(pmf.size(), m.matrices().size());
    for (std::size_t k = 0; k < n; ++k) {
        const double a = k < pmf.size() ? pmf[k] : 0.0;
        double b = 0.0;
        if (k < m.matrices().size()) b = s == State::plus ? m[k].column_sum_plus() : m[k].column_sum_minus();
        tv += std::abs(a - b);
    }
    return 0.5 * tv;
}

}  // namespace

TEST_CASE("no switching gives Poisson counts") {
    const RateSet r{720.0, 50.0, 0.0, 0.0, 1e-4};
    const boost::math::poisson_distribution<> plus(720.0 * 0.01), minus(50.0 * 0.01);
    for (int n = 0; n < 20; ++n) {
        CHECK(count_pmf({r, 0.01}, n, State::plus) == doctest::Approx(boost::math::pdf(plus, n)).epsilon(1e-10));
        CHECK(count_pmf({r, 0.01}, n, State::minus) == doctest::Approx(boost::math::pdf(minus, n)).epsilon(1e-10));
    }
}

TEST_CASE("count distributions are normalized and nonnegative") {
    CounterStream rng(5, StreamDomain::test, 0, 0);
    for (int trial = 0; trial < 12; ++trial) {
        const double t_f = 0.001 + 0.05 * rng.uniform();
        const RateSet r{100.0 + 900.0 * rng.uniform(), 100.0 * rng.uniform(), 3.0 / t_f * rng.uniform(),
                        3.0 / t_f * rng.uniform(), 1e-4};
        for (State s : {State::plus, State::minus}) {
            const auto p = count_distribution({r, t_f}, s);
            double total = 0.0;
            for (double x : p) {
                CHECK(x >= -1e-12);
                total += x;
            }
            CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
        }
    }
}

TEST_CASE("count distribution equals the single-window matrix marginal") {
    for (double t_f : {0.005, 0.010, 0.025}) {
        CHECK(tv_against_matrices(kPaper, t_f, State::plus) < 1e-7);
        CHECK(tv_against_matrices(kPaper, t_f, State::minus) < 1e-7);
    }
    CHECK(tv_against_matrices(RateSet{300.0, 20.0, 40.0, 60.0, 1e-4}, 0.02, State::plus) < 1e-7);
}

TEST_CASE("conditional errors are monotone in the threshold") {
    const CountDistributionParams p{kPaper, 0.01};
    double prev_plus = -1.0, prev_minus = 2.0;
    for (int nu = 0; nu < 15; ++nu) {
        const auto e = count_error_rates(p, nu);
        CHECK(e.err_plus >= prev_plus - 1e-12);
        CHECK(e.err_minus <= prev_minus + 1e-12);
        prev_plus = e.err_plus;
        prev_minus = e.err_minus;
    }
}

TEST_CASE("threshold without switching sits at the Poisson crossover") {
    const RateSet r{720.0, 50.0, 0.0, 0.0, 1e-4};
    for (double t_f : {0.005, 0.01, 0.02}) {
        const double crossover = (720.0 - 50.0) * t_f / std::log(720.0 / 50.0);
        const auto c = optimize_threshold({r, t_f}, Priors::equal());
        CHECK(std::abs(c.nu - crossover) <= 1.0);
        // Brute force over all thresholds.
        double best = 1.0;
        for (int nu = 0; nu < 40; ++nu) {
            const auto e = count_error_rates({r, t_f}, nu);
            best = std::min(best, 0.5 * (e.err_plus + e.err_minus));
        }
        CHECK(c.err_rate == doctest::Approx(best).epsilon(1e-12));
    }
}

TEST_CASE("counting floors at paper rates") {
    std::vector<double> grid;
    for (int k = 1; k <= 250; ++k) grid.push_back(k * 1e-4);
    const auto eq = counting_frontier(kPaper, grid, Priors::equal(), DecisionMode::mle);
    CHECK(min_error_point(eq).err_rate == doctest::Approx(0.019).epsilon(0.1));
    const auto quarter = counting_frontier(kPaper, grid, Priors(0.25), DecisionMode::map);
    CHECK(min_error_point(quarter).err_rate == doctest::Approx(0.016).epsilon(0.1));
}

TEST_CASE("counting parameter validation") {
    CHECK_THROWS_AS((CountDistributionParams{kPaper, 0.0}.validate()), std::invalid_argument);
    CHECK_THROWS_AS((CountDistributionParams{RateSet{-1.0, 1.0, 1.0, 1.0, 1e-4}, 0.01}.validate()),
                    std::invalid_argument);
}
