#pragma once
// Hidden two-state Markov process with state-dependent Poisson emission.
//
// The charge state switches |+> -> |-> at rate Gamma_+ and back at rate
// Gamma_-, and photons are detected at rate gamma_+ or gamma_- depending on
// the state. Counts are recorded in bins of length dt. For each count dn the
// 2x2 update matrix M(dn) maps an (unnormalized) state vector at the start of
// a bin to the joint probability of the end state and dn detections:
//
//   M(dn) = [z^dn] exp((L - K + z K) dt)
//
// with L the switching generator and K = diag(gamma_+, gamma_-).

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "seqread/core.hpp"

namespace seqread {

struct Vec2 {
    double plus = 0.0;
    double minus = 0.0;

    double sum() const noexcept { return plus + minus; }
};

// Row-major 2x2 matrix acting on (plus, minus) column vectors.
struct Mat2 {
    double pp = 0.0, pm = 0.0;
    double mp = 0.0, mm = 0.0;

    static constexpr Mat2 identity() noexcept { return {1.0, 0.0, 0.0, 1.0}; }

    constexpr Vec2 operator*(const Vec2& v) const noexcept {
        return {pp * v.plus + pm * v.minus, mp * v.plus + mm * v.minus};
    }
    constexpr Mat2 operator*(const Mat2& o) const noexcept {
        return {pp * o.pp + pm * o.mp, pp * o.pm + pm * o.mm,
                mp * o.pp + mm * o.mp, mp * o.pm + mm * o.mm};
    }
    constexpr Mat2 operator+(const Mat2& o) const noexcept {
        return {pp + o.pp, pm + o.pm, mp + o.mp, mm + o.mm};
    }
    constexpr Mat2 operator*(double s) const noexcept { return {pp * s, pm * s, mp * s, mm * s}; }
    // Tr[M v] for a basis vector: column sums.
    constexpr double column_sum_plus() const noexcept { return pp + mp; }
    constexpr double column_sum_minus() const noexcept { return pm + mm; }
};

struct RateSet {
    double gamma_plus = 0.0;       // detection rate in |+> (Hz)
    double gamma_minus = 0.0;      // detection rate in |-> (Hz)
    double big_gamma_plus = 0.0;   // switching |+> -> |-> (Hz)
    double big_gamma_minus = 0.0;  // switching |-> -> |+> (Hz)
    double dt = 1e-4;              // bin duration (s)

    // Throws std::invalid_argument for negative rates or dt <= 0.
    void validate() const;

    // False when min(gamma) <= max(Gamma): the slow-switching regime the
    // model is meant for does not hold. Computation still proceeds.
    bool regime_valid() const noexcept;

    RateSet with_dt(double new_dt) const {
        RateSet r = *this;
        r.dt = new_dt;
        return r;
    }
};

// Switching generator (columns sum to zero) and detection matrix.
struct Lindbladian {
    Mat2 generator;
    Mat2 detection;
};

Lindbladian make_lindbladian(const RateSet& rates);

// exp(L t) in closed form.
Mat2 switching_propagator(const RateSet& rates, double t);

class UpdateMatrixSet {
public:
    UpdateMatrixSet(RateSet rates, std::vector<Mat2> matrices, double tail_mass);

    const Mat2& operator[](std::size_t dn) const { return matrices_[dn]; }
    const Mat2& at(std::size_t dn) const { return matrices_.at(dn); }
    std::span<const Mat2> matrices() const noexcept { return matrices_; }
    int dn_max() const noexcept { return static_cast<int>(matrices_.size()) - 1; }
    double tail_mass() const noexcept { return tail_mass_; }
    const RateSet& rates() const noexcept { return rates_; }

private:
    RateSet rates_;
    std::vector<Mat2> matrices_;
    double tail_mass_;
};

inline constexpr double kDefaultTailBound = 1e-9;

// Exact update matrices for dn = 0..dn_max: the first block column of the
// exponential of the block lower-bidiagonal counting generator, computed by
// uniformization. Throws std::invalid_argument when the neglected tail mass
// exceeds tail_bound.
UpdateMatrixSet build_update_matrices(const RateSet& rates, int dn_max,
                                      double tail_bound = kDefaultTailBound);

// Smallest cutoff whose tail mass is below the bound.
int default_dn_max(const RateSet& rates, double tail_bound = kDefaultTailBound);

// Independent construction by discrete Fourier inversion over the counting
// field. Test oracle only.
UpdateMatrixSet update_matrices_fourier_check(const RateSet& rates, int dn_max, int n_grid);

struct StateVector {
    double rho_plus = 0.5;
    double rho_minus = 0.5;
    double log_scale = 0.0;

    static StateVector basis(State s) noexcept {
        return s == State::plus ? StateVector{1.0, 0.0, 0.0} : StateVector{0.0, 1.0, 0.0};
    }
    Vec2 vec() const noexcept { return {rho_plus, rho_minus}; }
};

// Stationary occupation of the switching process.
StateVector stationary_state(const RateSet& rates);

struct Trajectory {
    std::vector<std::uint32_t> counts;
    double dt = 1e-4;

    std::size_t size() const noexcept { return counts.size(); }
    double duration() const noexcept { return static_cast<double>(counts.size()) * dt; }
};

// Incremental log-likelihood ratio. Two unnormalized likelihood vectors are
// propagated from |+> and |->; each is renormalized every bin and the log of
// the ratio of normalizations is accumulated, so lambda never underflows.
class LikelihoodTracker {
public:
    explicit LikelihoodTracker(const UpdateMatrixSet& matrices);

    // Throws seqread::DataError("count exceeds matrix cutoff") or when the
    // count is impossible under both states.
    const LogLikelihood& push(std::uint32_t count);

    const LogLikelihood& lambda() const noexcept { return lambda_; }
    std::int64_t bins() const noexcept { return bins_; }

private:
    const UpdateMatrixSet* matrices_;
    Vec2 from_plus_{1.0, 0.0};
    Vec2 from_minus_{0.0, 1.0};
    LogLikelihood lambda_{};
    std::int64_t bins_ = 0;
};

LogLikelihood log_likelihood_ratio(const Trajectory& traj, const UpdateMatrixSet& matrices);

struct Propagation {
    StateVector state;
    double bin_probability = 0.0;
};

// Conditions a normalized state on one bin's count. Throws seqread::DataError
// when the count has zero probability.
Propagation posterior_propagate(const StateVector& rho, std::uint32_t count, const UpdateMatrixSet& matrices);

// ln Tr[M(dn_{N-1}) ... M(dn_0) rho_0]. Returns -infinity for impossible data.
double trajectory_log_probability(const Trajectory& traj, const StateVector& initial,
                                  const UpdateMatrixSet& matrices);

// Cache file: JSON with every double written as a C99 hex-float string, so
// a save/load cycle is bit-exact.
void save_update_matrices(std::ostream& out, const UpdateMatrixSet& matrices);
UpdateMatrixSet load_update_matrices(std::istream& in);

}  // namespace seqread
