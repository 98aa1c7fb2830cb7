#pragma once
// Monte Carlo evaluation of fixed-time and adaptive readout for the charge
// model. Trajectories are drawn from the same update matrices the likelihood
// engine uses, so the generator and the decoder share one exact model.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "seqread/chargemodel.hpp"
#include "seqread/core.hpp"
#include "seqread/random.hpp"

namespace seqread {

// MLE decides against lambda_th = 0; MAP against ln(P(-)/P(+)).
enum class DecisionMode : std::uint8_t { mle, map };

std::string to_string(DecisionMode mode);
DecisionMode parse_decision_mode(const std::string& text);

// Draws bin counts from P(dn) = Tr[M(dn) rho] renormalized over 0..dn_max and
// conditions rho on each draw.
Trajectory generate_trajectory(const UpdateMatrixSet& matrices, const StateVector& initial,
                               std::int64_t n_bins, CounterStream& stream);

struct SweepConfig {
    std::int64_t n_traj = 200000;  // per initial state
    double t_max = 0.025;          // seconds
    // Fixed readout times in seconds; empty selects every bin up to t_max.
    std::vector<double> t_f_grid;
    // Posterior stopping probabilities; empty selects the default grids.
    std::vector<double> p_plus_grid;
    std::vector<double> p_minus_grid;
    Priors priors = Priors::equal();
    DecisionMode mode = DecisionMode::mle;
    std::uint64_t seed = 1;
    unsigned threads = 0;

    void validate() const;
    double decision_threshold() const;
};

// p_+ = 1 - d and p_- = d with d log-spaced from 0.1 down to min_distance.
std::vector<double> default_p_plus_grid(int n = 50, double min_distance = 1e-8);
std::vector<double> default_p_minus_grid(int n = 50, double min_distance = 1e-8);

struct Provenance {
    std::string tool_version;
    std::string config_digest;
    std::uint64_t seed = 0;
    RateSet rates;
};

struct FrontierTable {
    std::string method;
    Priors priors = Priors::equal();
    DecisionMode mode = DecisionMode::mle;
    std::int64_t n_traj = 0;
    std::vector<FrontierPoint> points;  // sorted by avg_time
    Provenance provenance;
};

struct SweepResult {
    FrontierTable nonadaptive;
    FrontierTable adaptive;
};

// One pass over the generated trajectories evaluates both rule families.
SweepResult run_sweep(const SweepConfig& config, const UpdateMatrixSet& matrices);
FrontierTable run_nonadaptive(const SweepConfig& config, const UpdateMatrixSet& matrices);
FrontierTable run_adaptive(const SweepConfig& config, const UpdateMatrixSet& matrices);

// Lower envelope: 200 uniform bins over the observed time range keep their
// minimum-error point, then points that do not improve on an earlier one are
// dropped so the result is nonincreasing in err_rate.
//
// With `selection` set, bins and minima are taken on the (eps, T) the
// selection priors would assign, while the returned points keep the table's
// own values. MLE readout has no prior knowledge, so it selects stopping
// pairs against equal priors.
FrontierTable pareto_optimize(const FrontierTable& table, int n_bins = 200,
                              const std::optional<Priors>& selection = std::nullopt);

// Equal priors for MLE, the true priors for MAP.
Priors selection_priors(DecisionMode mode, const Priors& priors);

// Time at which the curve first reaches eps_target, interpolating linearly in
// (log eps, time). Throws seqread::DataError naming `curve` when unreachable.
double time_at_error(const FrontierTable& table, double eps_target, const std::string& curve);

// t_f / T at the target error rate.
double speedup_at_target(const FrontierTable& adaptive, const FrontierTable& nonadaptive, double eps_target);

const FrontierPoint& min_error_point(const FrontierTable& table);

// CSV with provenance comment lines and 12 significant digits.
void write_frontier_csv(std::ostream& out, const FrontierTable& table);

}  // namespace seqread
