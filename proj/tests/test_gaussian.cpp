#include "doctest.h"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "seqread/error.hpp"
#include "seqread/gaussian.hpp"

using namespace seqread;

TEST_CASE("fixed-time error is a Gaussian tail") {
    const GaussianModel m{2.0};
    for (double t : {0.0, 0.01, 0.5, 3.0, 20.0}) {
        CHECK(nonadaptive_error(m, t) == doctest::Approx(0.5 * std::erfc(std::sqrt(2.0 * t / 2.0))).epsilon(1e-14));
    }
    for (double eps : {0.5, 0.2, 1e-3, 1e-9, 1e-14}) {
        const double t = nonadaptive_time_for_error(m, eps);
        CHECK(nonadaptive_error(m, t) == doctest::Approx(eps).epsilon(1e-9));
    }
    CHECK_THROWS_AS(nonadaptive_time_for_error(m, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(GaussianModel{0.0}.validate(), std::invalid_argument);
}

TEST_CASE("unbounded thresholds: gambler's ruin for drift-diffusion") {
    // Drift mu = 2r, variance 4r, barriers +-L: eps = 1/(1+e^L),
    // T = (L/mu) tanh(L mu / sigma^2).
    for (double r : {0.5, 1.0, 3.0}) {
        for (double l : {0.5, 2.0, 4.595, 12.0}) {
            const auto et = adaptive_error_time_unbounded(GaussianModel{r}, l);
            CHECK(et.err_rate == doctest::Approx(1.0 / (1.0 + std::exp(l))).epsilon(1e-13));
            CHECK(et.avg_time == doctest::Approx(l / (2.0 * r) * std::tanh(l / 2.0)).epsilon(1e-13));
        }
    }
    const auto zero = adaptive_error_time_unbounded(GaussianModel{1.0}, 0.0);
    CHECK(zero.err_rate == 0.5);
    CHECK(zero.avg_time == 0.0);
}

TEST_CASE("bounded series reaches the unbounded limit") {
    for (double l : {1.0, 2.0, 4.0}) {
        const auto a = adaptive_error_time_bounded(GaussianModel{1.0}, l, 1e3);
        const auto b = adaptive_error_time_unbounded(GaussianModel{1.0}, l);
        CHECK(std::abs(a.err_rate - b.err_rate) < 1e-10);
        CHECK(std::abs(a.avg_time - b.avg_time) < 1e-10);
    }
}

TEST_CASE("unreachable thresholds reduce to fixed-time readout") {
    const GaussianModel m{1.0};
    for (double t : {0.1, 0.5, 1.0}) {
        const auto et = adaptive_error_time_bounded(m, 20.0, t);
        CHECK(et.err_rate == doctest::Approx(nonadaptive_error(m, t)).epsilon(1e-8));
        CHECK(et.avg_time == doctest::Approx(t).epsilon(1e-8));
    }
    CHECK_THROWS_AS(adaptive_error_time_bounded(m, 60.0, 0.1), NumericalError);
}

TEST_CASE("bounded series is monotone in the horizon") {
    double prev_eps = 0.5, prev_t = 0.0;
    for (double t : {0.05, 0.2, 0.5, 1.0, 2.0, 4.0, 8.0}) {
        const auto et = adaptive_error_time_bounded(GaussianModel{1.0}, 3.0, t);
        CHECK(et.err_rate <= prev_eps + 1e-15);
        CHECK(et.avg_time >= prev_t);
        CHECK(et.avg_time <= t);
        prev_eps = et.err_rate;
        prev_t = et.avg_time;
    }
}

TEST_CASE("first-passage simulation agrees with the series") {
    FirstPassageOptions opts;
    opts.n_runs = 100000;
    opts.seed = 11;
    opts.dt_sim = 1e-3;
    const auto mc = simulate_first_passage(GaussianModel{1.0}, StoppingRule::symmetric(2.0, 1.0), opts);
    const auto exact = adaptive_error_time_bounded(GaussianModel{1.0}, 2.0, 1.0);
    CHECK(mc.n_runs == 100000);
    CHECK(mc.n_plus == 50000);
    CHECK(std::abs(mc.err_rate - exact.err_rate) < 4.0 * mc.err_se + 2e-3);
    CHECK(std::abs(mc.avg_time - exact.avg_time) < 4.0 * mc.time_se + 2e-3);
}

TEST_CASE("grid simulation is reproducible and thread independent") {
    const std::vector<StoppingRule> rules{StoppingRule::symmetric(1.0, 1.0), StoppingRule::symmetric(3.0, 1.0)};
    const std::vector<double> horizons{0.0, 0.5, 2.0};
    FirstPassageOptions opts;
    opts.n_runs = 5000;
    opts.seed = 3;
    opts.threads = 1;
    const auto a = simulate_first_passage_grid(DriftDiffusion::from_model(GaussianModel{1.0}), rules, horizons, opts);
    opts.threads = 3;
    const auto b = simulate_first_passage_grid(DriftDiffusion::from_model(GaussianModel{1.0}), rules, horizons, opts);
    REQUIRE(a.size() == 6);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].err_rate == b[i].err_rate);
        CHECK(a[i].avg_time == b[i].avg_time);
    }
    // Zero horizon: no data, every run decides minus.
    CHECK(a[0].err_rate == doctest::Approx(0.5));
    CHECK(a[0].avg_time == 0.0);
}

TEST_CASE("asymmetric Poisson signal-to-noise rates") {
    const auto s = asymmetric_snr(720.0, 50.0);
    CHECK(s.r_plus == doctest::Approx(670.0 * 670.0 / (4.0 * 720.0)));
    CHECK(s.r_minus == doctest::Approx(670.0 * 670.0 / (4.0 * 50.0)));
}
