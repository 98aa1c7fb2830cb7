#pragma once
// Photon-counting baseline: count n photons over [0, t_f] and choose |+>
// when n > nu. Count distributions include any number of switching events
// through the even/odd-switch integral representation.

#include <vector>

#include "seqread/chargemodel.hpp"
#include "seqread/core.hpp"
#include "seqread/montecarlo.hpp"

namespace seqread {

struct CountDistributionParams {
    RateSet rates;  // dt unused
    double t_f = 0.0;

    void validate() const;
};

// Absolute quadrature tolerance for every integral in this module.
inline constexpr double kCountingTolerance = 1e-10;

// P(n | state). Throws seqread::NumericalError when the quadrature misses
// its tolerance.
double count_pmf(const CountDistributionParams& params, int n, State state);

// P(n | state) for n = 0.. until the remaining mass is below 1e-14.
std::vector<double> count_distribution(const CountDistributionParams& params, State state);

struct CountErrors {
    double err_plus = 0.0;   // P(n <= nu | +)
    double err_minus = 0.0;  // P(n > nu | -)
};

CountErrors count_error_rates(const CountDistributionParams& params, int nu);

struct ThresholdChoice {
    int nu = 0;
    double err_rate = 0.0;
    CountErrors conditional;
};

// Scans nu = 0, 1, ... and stops at the first local minimum of
// P(+) eps+ + P(-) eps-, after checking the next two thresholds do not
// improve on it.
ThresholdChoice optimize_threshold(const CountDistributionParams& params, const Priors& priors);

// Counting error rate vs t_f. The threshold is chosen against equal priors
// in MLE mode and the true priors in MAP mode; error rates are always
// weighted by the true priors.
FrontierTable counting_frontier(const RateSet& rates, const std::vector<double>& t_f_grid, const Priors& priors,
                                DecisionMode mode);

}  // namespace seqread
