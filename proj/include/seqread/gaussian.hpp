#pragma once
// Gaussian latching readout: two states with means +1/-1 under white noise
// of power signal-to-noise ratio r per unit time. The log-likelihood ratio
// is a drift-diffusion process with drift +-2r and variance rate 4r.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "seqread/core.hpp"

namespace seqread {

struct GaussianModel {
    double snr_rate = 1.0;

    void validate() const;
};

struct ErrorTime {
    double err_rate = 0.0;
    double avg_time = 0.0;
};

// One term of the finite-horizon correction series.
struct GaussianSeriesTerm {
    int m = 0;
    double a_m = 0.0;
    double b_m = 0.0;
    double alpha_m = 0.0;
};

GaussianSeriesTerm series_term(double lambda_bar, int m);

struct SeriesPolicy {
    double relative_tolerance = 1e-15;
    int max_terms = 100000;
};

// eps = erfc(sqrt(r t_f / 2)) / 2.
double nonadaptive_error(const GaussianModel& model, double t_f);

// Inverse of nonadaptive_error: the fixed time reaching eps in (0, 1/2].
double nonadaptive_time_for_error(const GaussianModel& model, double eps);

// Symmetric thresholds, no timeout.
ErrorTime adaptive_error_time_unbounded(const GaussianModel& model, double lambda_bar);

// Symmetric thresholds with timeout t_max; exact eigenfunction series.
// Throws seqread::NumericalError("series budget exceeded") when the series
// does not settle within policy.max_terms, and when cancellation between
// alternating terms would cost more than nine significant digits (very large
// lambda_bar at short horizons).
ErrorTime adaptive_error_time_bounded(const GaussianModel& model, double lambda_bar, double t_max,
                                      const SeriesPolicy& policy = {});

struct AsymmetricSnr {
    double r_plus = 0.0;
    double r_minus = 0.0;
};

// r_pm = (gamma_+ - gamma_-)^2 / (4 gamma_pm) for Poisson signals in the
// high-count limit.
AsymmetricSnr asymmetric_snr(double gamma_plus, double gamma_minus);

// Monte Carlo result with conditional breakdown and standard errors.
struct McEstimate {
    double err_rate = 0.0;
    double err_se = 0.0;
    double avg_time = 0.0;
    double time_se = 0.0;
    std::int64_t n_runs = 0;
    std::int64_t n_plus = 0;
    std::int64_t n_minus = 0;
    double err_plus = 0.0;
    double err_minus = 0.0;
    double time_plus = 0.0;
    double time_minus = 0.0;
};

// Raw drift-diffusion parameters for lambda_t: drift +drift under |+>,
// -drift under |->, variance `variance_rate` per unit time.
struct DriftDiffusion {
    double drift = 0.0;
    double variance_rate = 0.0;

    static DriftDiffusion from_model(const GaussianModel& model) {
        return {2.0 * model.snr_rate, 4.0 * model.snr_rate};
    }
};

struct FirstPassageOptions {
    std::int64_t n_runs = 100000;
    std::uint64_t seed = 1;
    // Simulation step; 0 selects 1e-3 / r (or 1e-3 / variance_rate * 4).
    double dt_sim = 0.0;
    // Absent: states alternate, exactly half each. Present: drawn per run.
    std::optional<Priors> priors;
    unsigned threads = 0;
};

McEstimate simulate_first_passage(const GaussianModel& model, const StoppingRule& rule,
                                  const FirstPassageOptions& options);

// Evaluates every (threshold pair, horizon) combination on common random
// paths. Result index is pair * horizons.size() + horizon. The t_max field
// of each threshold pair is ignored; horizons may include 0.
std::vector<McEstimate> simulate_first_passage_grid(const DriftDiffusion& process,
                                                    std::span<const StoppingRule> thresholds,
                                                    std::span<const double> horizons,
                                                    const FirstPassageOptions& options);

}  // namespace seqread
