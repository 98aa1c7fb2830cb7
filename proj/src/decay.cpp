#include "seqread/decay.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <vector>

#include "seqread/parallel.hpp"
#include "seqread/random.hpp"

namespace seqread {

void DecayModel::validate() const {
    if (!(tau > 0.0) || !std::isfinite(tau)) throw std::invalid_argument("tau must be positive and finite");
}

double decay_nonadaptive(const DecayModel& model, double t_f) {
    model.validate();
    if (!(t_f >= 0.0)) throw std::invalid_argument("readout time must be nonnegative");
    return 0.5 * std::exp(-t_f / model.tau);
}

ErrorTime decay_adaptive(const DecayModel& model, double t_max) {
    model.validate();
    if (!(t_max >= 0.0)) throw std::invalid_argument("t_max must be nonnegative");
    const double x = t_max / model.tau;
    // Mean time to the first event, capped at t_max: tau (1 - e^{-x}).
    const double capped = -model.tau * std::expm1(-x);
    const double eps = 0.5 * std::exp(-x);
    if (model.mode == ChannelMode::single) return {eps, 0.5 * (capped + t_max)};
    return {eps, capped};
}

double decay_speedup(const DecayModel& model, double t_f) {
    const ErrorTime et = decay_adaptive(model, t_f);
    if (et.avg_time <= 0.0) throw std::invalid_argument("speedup undefined at t_f = 0");
    return t_f / et.avg_time;
}

McEstimate simulate_decay(const DecayModel& model, const DecayRule& rule, const DecaySimOptions& options) {
    model.validate();
    if (options.n_runs <= 0) throw std::invalid_argument("n_runs must be positive");
    const bool adaptive = std::holds_alternative<AdaptiveReadout>(rule);
    const double horizon = adaptive ? std::get<AdaptiveReadout>(rule).t_max : std::get<FixedReadout>(rule).t_f;
    if (!(horizon >= 0.0)) throw std::invalid_argument("readout time must be nonnegative");

    struct Partial {
        std::int64_t runs[2] = {0, 0};
        std::int64_t errors[2] = {0, 0};
        double time_sum[2] = {0.0, 0.0};
        double time_sq[2] = {0.0, 0.0};
    };
    std::vector<Partial> partial(chunk_count(options.n_runs));
    parallel_chunks(options.n_runs, resolve_threads(options.threads),
                    [&](std::int64_t begin, std::int64_t end, std::int64_t chunk) {
        Partial& acc = partial[chunk];
        for (std::int64_t run = begin; run < end; ++run) {
            CounterStream rng(options.seed, StreamDomain::decay, 0, static_cast<std::uint64_t>(run));
            const State state = options.state.value_or(run % 2 == 0 ? State::plus : State::minus);
            const int s = state == State::plus ? 0 : 1;
            const bool decays = state == State::plus || model.mode == ChannelMode::two_channel;
            const double event = decays ? std::exponential_distribution<double>(1.0 / model.tau)(rng)
                                        : std::numeric_limits<double>::infinity();
            const bool seen = event <= horizon;
            State chosen;
            if (seen) {
                chosen = state;
            } else if (model.mode == ChannelMode::single) {
                chosen = State::minus;
            } else {
                chosen = rng.uniform() < 0.5 ? State::plus : State::minus;
            }
            const double t = adaptive && seen ? event : horizon;
            ++acc.runs[s];
            acc.errors[s] += chosen != state ? 1 : 0;
            acc.time_sum[s] += t;
            acc.time_sq[s] += t * t;
        }
    });

    Partial total;
    for (const auto& p : partial) {
        for (int s = 0; s < 2; ++s) {
            total.runs[s] += p.runs[s];
            total.errors[s] += p.errors[s];
            total.time_sum[s] += p.time_sum[s];
            total.time_sq[s] += p.time_sq[s];
        }
    }
    McEstimate est;
    est.n_plus = total.runs[0];
    est.n_minus = total.runs[1];
    est.n_runs = est.n_plus + est.n_minus;
    const double n = static_cast<double>(est.n_runs);
    est.err_rate = static_cast<double>(total.errors[0] + total.errors[1]) / n;
    est.err_se = std::sqrt(est.err_rate * (1.0 - est.err_rate) / n);
    est.avg_time = (total.time_sum[0] + total.time_sum[1]) / n;
    const double var = (total.time_sq[0] + total.time_sq[1]) / n - est.avg_time * est.avg_time;
    est.time_se = std::sqrt(std::max(0.0, var) / n);
    for (int s = 0; s < 2; ++s) {
        if (total.runs[s] == 0) continue;
        const double ns = static_cast<double>(total.runs[s]);
        (s == 0 ? est.err_plus : est.err_minus) = static_cast<double>(total.errors[s]) / ns;
        (s == 0 ? est.time_plus : est.time_minus) = total.time_sum[s] / ns;
    }
    return est;
}

}  // namespace seqread
