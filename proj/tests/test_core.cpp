#include "doctest.h"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "seqread/core.hpp"

using namespace seqread;

TEST_CASE("decision threshold follows the prior odds") {
    CHECK(threshold_from_priors(Priors::equal()) == 0.0);
    CHECK(threshold_from_priors(Priors(0.25)) == doctest::Approx(std::log(3.0)).epsilon(1e-15));
    CHECK(threshold_from_priors(Priors(0.9)) == doctest::Approx(-std::log(9.0)).epsilon(1e-14));
    CHECK_THROWS_AS(threshold_from_priors(Priors(0.0)), std::invalid_argument);
    CHECK_THROWS_AS(threshold_from_priors(Priors(1.0)), std::invalid_argument);
    CHECK_THROWS_AS(Priors(1.5), std::invalid_argument);
    CHECK_THROWS_AS(Priors(std::nan("")), std::invalid_argument);
}

TEST_CASE("posterior is the logistic of lambda - lambda_th") {
    for (double lam : {-30.0, -2.0, -0.1, 0.0, 0.3, 5.0, 40.0}) {
        for (double th : {0.0, std::log(3.0)}) {
            const double direct = 1.0 / (1.0 + std::exp(-(lam - th)));
            CHECK(posterior_probability({lam}, th) == doctest::Approx(direct).epsilon(1e-14));
        }
    }
    CHECK(posterior_probability({-800.0}, 0.0) >= 0.0);
    CHECK(posterior_probability({800.0}, 0.0) == 1.0);
    CHECK(posterior_probability(LogLikelihood::certain_plus(), 1e300) == 1.0);
    CHECK(posterior_probability(LogLikelihood::certain_minus(), -1e300) == 0.0);
}

TEST_CASE("exact tie decides minus") {
    CHECK(decide({0.0}, 0.0) == State::minus);
    CHECK(decide({std::nextafter(0.0, 1.0)}, 0.0) == State::plus);
    CHECK(decide({1.0986}, std::log(3.0)) == State::minus);
    CHECK(decide(LogLikelihood::certain_plus(), 1e9) == State::plus);
    CHECK(decide(LogLikelihood::certain_minus(), -1e9) == State::minus);
}

TEST_CASE("posterior bounds map to log-likelihood bounds") {
    CHECK(lambda_for_posterior(0.5, 0.0) == 0.0);
    const double th = std::log(3.0);
    for (double p : {0.01, 0.3, 0.9, 1.0 - 1e-8}) {
        CHECK(posterior_probability({lambda_for_posterior(p, th)}, th) == doctest::Approx(p).epsilon(1e-12));
    }
    CHECK_THROWS_AS(logit(0.0), std::invalid_argument);
    CHECK_THROWS_AS(logit(1.0), std::invalid_argument);
}

TEST_CASE("stopping rules validate their ordering") {
    CHECK_NOTHROW(StoppingRule::symmetric(2.0, 1.0));
    CHECK_THROWS_AS(StoppingRule::symmetric(0.0, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(StoppingRule::symmetric(1.0, 0.0), std::invalid_argument);
    CHECK_THROWS_AS((StoppingRule{-1.0, 1.0, 1.0}.validate()), std::invalid_argument);
}

TEST_CASE("frontier points weight conditional values by the priors") {
    const auto p = FrontierPoint::combine(Priors(0.25), 0.1, 0.02, 3.0, 1.0, FixedTime{2.0});
    CHECK(p.err_rate == doctest::Approx(0.25 * 0.1 + 0.75 * 0.02));
    CHECK(p.avg_time == doctest::Approx(0.25 * 3.0 + 0.75 * 1.0));
    CHECK(std::get<FixedTime>(p.rule).t_f == 2.0);
}
