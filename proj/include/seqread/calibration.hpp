#pragma once
// Rate extraction from raw count trajectories and preparation-error
// correction.
//
// Pipeline: split trajectories into calibration and test sets; rebin the
// calibration set and fit a two-component Poisson mixture for gamma_+-;
// classify each subtrajectory by its first rebinned bin and fit the two
// conditional mean-count curves to A_+- e^{-Gamma t} + B for Gamma_+-.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "seqread/chargemodel.hpp"
#include "seqread/core.hpp"

namespace seqread {

// ---- trajectory files ------------------------------------------------------
//
//   # dt_seconds=0.0001
//   # prepared=plus          (optional; labeled readout records)
//   3
//   0
//   ...

struct IngestResult {
    std::vector<Trajectory> trajectories;
    std::vector<std::optional<State>> labels;  // parallel to trajectories
    std::vector<std::string> sources;          // file each trajectory came from
    std::vector<std::string> warnings;
    double dt = 0.0;
};

// Reads one file or every *.counts file of a directory in name order.
// Throws seqread::DataError with file:line context on malformed input or
// when files disagree on dt.
IngestResult ingest_trajectories(const std::filesystem::path& source);

void write_trajectory(std::ostream& out, const Trajectory& traj, std::optional<State> label = std::nullopt);

// Sums consecutive groups of `factor` bins; a trailing partial group is dropped.
Trajectory rebin(const Trajectory& traj, int factor);

// Synthetic acquisition: n_traj trajectories of `duration` seconds started
// from the stationary state.
std::vector<Trajectory> simulate_dataset(const UpdateMatrixSet& matrices, int n_traj, double duration,
                                         std::uint64_t seed, unsigned threads = 0);

// ---- Poisson mixture ---------------------------------------------------------

struct CountHistogram {
    double bin_width = 0.0;
    std::map<std::uint32_t, std::int64_t> frequency;
    std::int64_t total_bins = 0;

    void add(std::uint32_t count, std::int64_t times = 1);
    static CountHistogram from_counts(std::span<const std::uint32_t> counts, double bin_width);
};

struct MixtureFit {
    double mean_plus = 0.0;   // per bin
    double mean_minus = 0.0;  // per bin
    double gamma_plus = 0.0;  // Hz
    double gamma_minus = 0.0;
    double weight_plus = 0.0;
    double gamma_plus_se = 0.0;
    double gamma_minus_se = 0.0;
    double log_likelihood = 0.0;
    int iterations = 0;
    bool converged = false;
    std::string warning;
};

// Expectation-maximization started from the lower/upper quartile means.
// Throws std::invalid_argument with fewer than two distinct counts and
// seqread::NumericalError when 10^4 iterations do not converge.
MixtureFit fit_poisson_mixture(const CountHistogram& hist, int max_iterations = 10000);

struct PoissonThreshold {
    double nu = 0.0;
    // Choose |+> for a count strictly above this value.
    std::uint32_t rule = 0;
};

// nu = (gamma_+ - gamma_-) dt / ln(gamma_+ / gamma_-).
PoissonThreshold poisson_threshold(double gamma_plus, double gamma_minus, double bin_width);

// ---- relaxation ----------------------------------------------------------------

struct RelaxationCurves {
    double bin_width = 0.0;
    std::vector<double> time;  // start of each lag bin, relative to the subtrajectory
    std::vector<double> rho_plus, rho_minus;
    std::vector<double> sem_plus, sem_minus;
    std::int64_t n_plus = 0;
    std::int64_t n_minus = 0;
};

// Splits trajectories into subtrajectories of subtraj_bins raw bins, rebins
// by `rebin_factor`, classifies by the first rebinned bin (plus iff count >
// rule) and averages lags 1..K-1 per class. Throws seqread::DataError naming
// an empty class.
RelaxationCurves postselect_and_average(std::span<const Trajectory> trajs, std::uint32_t rule,
                                        std::int64_t subtraj_bins, int rebin_factor);

struct RelaxationFit {
    double big_gamma_plus = 0.0;
    double big_gamma_minus = 0.0;
    double big_gamma_plus_se = 0.0;
    double big_gamma_minus_se = 0.0;
    double a_plus = 0.0;
    double a_minus = 0.0;
    double b = 0.0;
    double total_rate = 0.0;
    // Row-major 4x4 over (Gamma, B, A_+, A_-).
    std::vector<double> covariance;
    double chi_square = 0.0;
    int dof = 0;
};

// Simultaneous weighted least squares (weights 1/SEM^2, uniform when any SEM
// is zero) for shared Gamma, B and separate A_+-. Gamma_+- follow from B
// given the per-bin means mean_plus = gamma_+ w, mean_minus = gamma_- w.
RelaxationFit fit_relaxation(const RelaxationCurves& curves, double mean_plus, double mean_minus);

// P(+) = Gamma_- / (Gamma_+ + Gamma_-).
Priors stationary_priors(double big_gamma_plus, double big_gamma_minus);

// ---- preparation error -------------------------------------------------------

// eps = (eps_measured - eta) / (1 - 2 eta).
double correct_preparation_error(double eps_measured, double eta);
// eps_measured = eta (1 - eps) + (1 - eta) eps.
double apply_preparation_error(double eps, double eta);
// Least-squares eta for measured = apply_preparation_error(model, eta).
double fit_preparation_error(std::span<const double> measured, std::span<const double> model);

struct LabeledReadout {
    Trajectory traj;
    State prepared = State::minus;
};

// Cuts trajectories into (prep_bins + readout_bins) windows, prepares each
// from the mixed state by the posterior after prep_bins (plus iff rho_+ > 1/2)
// and keeps the remaining readout_bins as the labeled readout.
std::vector<LabeledReadout> prepare_by_posterior(std::span<const Trajectory> trajs, const UpdateMatrixSet& matrices,
                                                 std::int64_t prep_bins, std::int64_t readout_bins);

struct ErrorCurve {
    std::vector<double> t_f;
    std::vector<double> eps;  // (eps_+ + eps_-) / 2
    std::vector<double> eps_plus;
    std::vector<double> eps_minus;
    std::int64_t n_plus = 0;
    std::int64_t n_minus = 0;
};

// Fixed-time MLE readout of labeled records against their labels.
ErrorCurve measure_error_curve(std::span<const LabeledReadout> readouts, const UpdateMatrixSet& matrices,
                               std::span<const std::int64_t> t_f_bins);

// ---- full pipeline -------------------------------------------------------------

struct CalibrationOptions {
    // Empty: even-indexed trajectories calibrate, odd ones test. Otherwise
    // the first `calibration_count` trajectories calibrate.
    std::optional<int> calibration_count;
    double rebin_seconds = 0.01;
    double subtraj_seconds = 1.0;
};

struct CalibrationResult {
    RateSet rates;
    bool regime_valid = true;
    MixtureFit mixture;
    PoissonThreshold threshold;
    RelaxationCurves curves;
    RelaxationFit relaxation;
    Priors priors = Priors::equal();
    std::vector<std::size_t> calibration_indices;
    std::vector<std::size_t> test_indices;
};

CalibrationResult calibrate(std::span<const Trajectory> trajs, const CalibrationOptions& options);

}  // namespace seqread
