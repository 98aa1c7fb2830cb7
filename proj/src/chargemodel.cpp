#include "seqread/chargemodel.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

#include "seqread/error.hpp"

namespace seqread {

namespace {

void require_nonnegative(double v, const char* name) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument(std::string(name) + " must be nonnegative and finite");
}

// Taylor coefficients 0..n_coeff-1 of exp((L - K + zK) dt) in z.
//
// Uniformization: with c >= every exit rate, P = I + (L - K)/c + zK/c has
// nonnegative coefficients and exp(R dt) = sum_k Pois(k; c dt) P^k. Powers of
// P are polynomials in z, truncated at the requested degree.
std::vector<Mat2> counting_coefficients(const RateSet& r, int n_coeff) {
    std::vector<Mat2> out(static_cast<std::size_t>(n_coeff));
    const double exit_plus = r.big_gamma_plus + r.gamma_plus;
    const double exit_minus = r.big_gamma_minus + r.gamma_minus;
    const double c = std::max(exit_plus, exit_minus);
    if (c == 0.0) {
        out[0] = Mat2::identity();
        return out;
    }
    const double ct = c * r.dt;
    const Mat2 b0{1.0 - exit_plus / c, r.big_gamma_minus / c, r.big_gamma_plus / c, 1.0 - exit_minus / c};
    const Mat2 b1{r.gamma_plus / c, 0.0, 0.0, r.gamma_minus / c};

    std::vector<Mat2> power(out.size());
    power[0] = Mat2::identity();
    const double log_ct = std::log(ct);
    const int k_cap = static_cast<int>(ct + 40.0 * std::sqrt(ct) + 100.0);
    for (int k = 0;; ++k) {
        const double w = std::exp(-ct + k * log_ct - std::lgamma(k + 1.0));
        for (std::size_t n = 0; n < out.size(); ++n) out[n] = out[n] + power[n] * w;
        if (k > ct && w < 1e-300) break;
        // Remaining Poisson mass is below w * (k+1) / (k+1 - ct) once k > ct.
        if (k > ct + 1.0 && w * (k + 1.0) / (k + 1.0 - ct) < 1e-18) break;
        if (k > k_cap) throw NumericalError("uniformization did not converge");
        for (std::size_t n = power.size(); n-- > 0;) {
            Mat2 next = b0 * power[n];
            if (n > 0) next = next + b1 * power[n - 1];
            power[n] = next;
        }
    }
    return out;
}

double tail_of(const std::vector<Mat2>& m, std::size_t n_keep) {
    double plus = 0.0, minus = 0.0;
    for (std::size_t n = 0; n < n_keep; ++n) {
        plus += m[n].column_sum_plus();
        minus += m[n].column_sum_minus();
    }
    return std::max(0.0, 1.0 - std::min(plus, minus));
}

double tail_of(const std::vector<Mat2>& m) { return tail_of(m, m.size()); }

using cplx = std::complex<double>;

struct CMat2 {
    cplx a, b, c, d;
};

// Closed-form exponential of a complex 2x2 matrix.
CMat2 expm2(const CMat2& x) {
    const cplx m = 0.5 * (x.a + x.d);
    const cplx h = 0.5 * (x.a - x.d);
    const cplx s = std::sqrt(h * h + x.b * x.c);
    const cplx em = std::exp(m);
    const cplx ch = std::cosh(s);
    const cplx sh_over_s = std::abs(s) < 1e-6 ? 1.0 + s * s / 6.0 : std::sinh(s) / s;
    return {em * (ch + sh_over_s * h), em * sh_over_s * x.b, em * sh_over_s * x.c, em * (ch - sh_over_s * h)};
}

Vec2 normalized(const Vec2& v, double sum) { return {v.plus / sum, v.minus / sum}; }

}  // namespace

void RateSet::validate() const {
    require_nonnegative(gamma_plus, "gamma_plus");
    require_nonnegative(gamma_minus, "gamma_minus");
    require_nonnegative(big_gamma_plus, "big_gamma_plus");
    require_nonnegative(big_gamma_minus, "big_gamma_minus");
    if (!(dt > 0.0) || !std::isfinite(dt)) throw std::invalid_argument("dt must be positive and finite");
}

bool RateSet::regime_valid() const noexcept {
    return std::min(gamma_plus, gamma_minus) > std::max(big_gamma_plus, big_gamma_minus);
}

Lindbladian make_lindbladian(const RateSet& rates) {
    rates.validate();
    return {{-rates.big_gamma_plus, rates.big_gamma_minus, rates.big_gamma_plus, -rates.big_gamma_minus},
            {rates.gamma_plus, 0.0, 0.0, rates.gamma_minus}};
}

Mat2 switching_propagator(const RateSet& rates, double t) {
    rates.validate();
    const double total = rates.big_gamma_plus + rates.big_gamma_minus;
    if (total == 0.0) return Mat2::identity();
    const double pi_plus = rates.big_gamma_minus / total;
    const double pi_minus = rates.big_gamma_plus / total;
    const double e = std::exp(-total * t);
    return {pi_plus + pi_minus * e, pi_plus * (1.0 - e), pi_minus * (1.0 - e), pi_minus + pi_plus * e};
}

UpdateMatrixSet::UpdateMatrixSet(RateSet rates, std::vector<Mat2> matrices, double tail_mass)
    : rates_(rates), matrices_(std::move(matrices)), tail_mass_(tail_mass) {
    if (matrices_.empty()) throw std::invalid_argument("update matrix set is empty");
}

UpdateMatrixSet build_update_matrices(const RateSet& rates, int dn_max, double tail_bound) {
    rates.validate();
    if (dn_max < 0) throw std::invalid_argument("dn_max must be nonnegative");
    std::vector<Mat2> m = counting_coefficients(rates, dn_max + 1);
    const double tail = tail_of(m);
    if (tail > tail_bound) {
        throw std::invalid_argument("tail mass " + std::to_string(tail) + " exceeds bound at dn_max = " +
                                    std::to_string(dn_max) + "; increase dn_max");
    }
    return UpdateMatrixSet(rates, std::move(m), tail);
}

int default_dn_max(const RateSet& rates, double tail_bound) {
    rates.validate();
    if (!(tail_bound > 0.0)) throw std::invalid_argument("tail bound must be positive");
    const double mean = std::max(rates.gamma_plus, rates.gamma_minus) * rates.dt;
    int n = static_cast<int>(mean + 10.0 * std::sqrt(mean) + 16.0);
    for (int attempt = 0; attempt < 8; ++attempt, n *= 2) {
        const std::vector<Mat2> m = counting_coefficients(rates, n + 1);
        for (std::size_t keep = 1; keep <= m.size(); ++keep) {
            if (tail_of(m, keep) < tail_bound) return static_cast<int>(keep) - 1;
        }
    }
    throw NumericalError("no cutoff reaches the tail bound");
}

UpdateMatrixSet update_matrices_fourier_check(const RateSet& rates, int dn_max, int n_grid) {
    rates.validate();
    if (dn_max < 0 || n_grid <= dn_max) throw std::invalid_argument("need n_grid > dn_max >= 0");
    const double dt = rates.dt;
    std::vector<Mat2> out(static_cast<std::size_t>(dn_max) + 1);
    for (int j = 0; j < n_grid; ++j) {
        const double chi = 2.0 * std::numbers::pi * j / n_grid;
        const cplx z = std::polar(1.0, chi);
        const CMat2 a{(-rates.big_gamma_plus - rates.gamma_plus + z * rates.gamma_plus) * dt,
                      cplx(rates.big_gamma_minus * dt), cplx(rates.big_gamma_plus * dt),
                      (-rates.big_gamma_minus - rates.gamma_minus + z * rates.gamma_minus) * dt};
        const CMat2 g = expm2(a);
        for (int n = 0; n <= dn_max; ++n) {
            const cplx phase = std::polar(1.0 / n_grid, -chi * n);
            Mat2& o = out[static_cast<std::size_t>(n)];
            o.pp += (g.a * phase).real();
            o.pm += (g.b * phase).real();
            o.mp += (g.c * phase).real();
            o.mm += (g.d * phase).real();
        }
    }
    const double tail = tail_of(out);
    return UpdateMatrixSet(rates, std::move(out), tail);
}

StateVector stationary_state(const RateSet& rates) {
    rates.validate();
    const double total = rates.big_gamma_plus + rates.big_gamma_minus;
    if (total == 0.0) throw std::invalid_argument("stationary state undefined without switching");
    return {rates.big_gamma_minus / total, rates.big_gamma_plus / total, 0.0};
}

LikelihoodTracker::LikelihoodTracker(const UpdateMatrixSet& matrices) : matrices_(&matrices) {}

const LogLikelihood& LikelihoodTracker::push(std::uint32_t count) {
    if (count > static_cast<std::uint32_t>(matrices_->dn_max())) throw DataError("count exceeds matrix cutoff");
    ++bins_;
    if (lambda_.is_certain()) return lambda_;
    const Mat2& m = (*matrices_)[count];
    const Vec2 a = m * from_plus_;
    const Vec2 b = m * from_minus_;
    const double sa = a.sum();
    const double sb = b.sum();
    if (sa <= 0.0 && sb <= 0.0) throw DataError("count impossible under both states");
    if (sb <= 0.0) {
        lambda_ = LogLikelihood::certain_plus();
    } else if (sa <= 0.0) {
        lambda_ = LogLikelihood::certain_minus();
    } else {
        lambda_.value += std::log(sa / sb);
        from_plus_ = normalized(a, sa);
        from_minus_ = normalized(b, sb);
    }
    return lambda_;
}

LogLikelihood log_likelihood_ratio(const Trajectory& traj, const UpdateMatrixSet& matrices) {
    LikelihoodTracker tracker(matrices);
    for (const std::uint32_t c : traj.counts) tracker.push(c);
    return tracker.lambda();
}

Propagation posterior_propagate(const StateVector& rho, std::uint32_t count, const UpdateMatrixSet& matrices) {
    if (count > static_cast<std::uint32_t>(matrices.dn_max())) throw DataError("count exceeds matrix cutoff");
    const Vec2 v = matrices[count] * rho.vec();
    const double p = v.sum();
    if (!(p > 0.0)) throw DataError("count has zero probability under the model");
    return {{v.plus / p, v.minus / p, rho.log_scale + std::log(p)}, p};
}

double trajectory_log_probability(const Trajectory& traj, const StateVector& initial,
                                  const UpdateMatrixSet& matrices) {
    Vec2 v = initial.vec();
    double log_p = initial.log_scale;
    for (const std::uint32_t c : traj.counts) {
        if (c > static_cast<std::uint32_t>(matrices.dn_max())) throw DataError("count exceeds matrix cutoff");
        v = matrices[c] * v;
        const double s = v.sum();
        if (!(s > 0.0)) return -std::numeric_limits<double>::infinity();
        log_p += std::log(s);
        v = normalized(v, s);
    }
    const double s = v.sum();
    if (!(s > 0.0)) return -std::numeric_limits<double>::infinity();
    return log_p + std::log(s);
}

}  // namespace seqread
