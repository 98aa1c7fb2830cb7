#pragma once
// Decision-theory primitives shared by every readout model: priors,
// log-likelihood ratios, stopping rules and the MAP/MLE decision.
//
// All log-likelihood values are natural logs. A log-likelihood ratio that
// has become certain (a decay event that only |+> can produce) is carried as
// a tagged value instead of IEEE infinity.

#include <cstdint>
#include <string_view>
#include <variant>

namespace seqread {

enum class State : std::uint8_t { plus, minus };

constexpr std::string_view to_string(State s) noexcept {
    return s == State::plus ? "plus" : "minus";
}

class Priors {
public:
    // Throws std::invalid_argument unless p_plus lies in [0, 1].
    explicit Priors(double p_plus);

    static Priors equal() { return Priors(0.5); }

    double plus() const noexcept { return p_plus_; }
    double minus() const noexcept { return p_minus_; }
    double of(State s) const noexcept { return s == State::plus ? p_plus_ : p_minus_; }

private:
    double p_plus_;
    double p_minus_;
};

enum class Certainty : std::uint8_t { none, plus, minus };

// lambda = ln P(data|+) / P(data|-). When `certain` is set the numeric value
// is meaningless and the data identify the state with probability one.
struct LogLikelihood {
    double value = 0.0;
    Certainty certain = Certainty::none;

    static LogLikelihood certain_plus() noexcept { return {0.0, Certainty::plus}; }
    static LogLikelihood certain_minus() noexcept { return {0.0, Certainty::minus}; }
    bool is_certain() const noexcept { return certain != Certainty::none; }
};

struct LogLikelihoodState {
    LogLikelihood lambda;
    double time = 0.0;
};

struct StoppingRule {
    double lambda_plus = 0.0;
    double lambda_minus = 0.0;
    double t_max = 0.0;

    static StoppingRule symmetric(double lambda_bar, double t_max);

    // Throws std::invalid_argument unless lambda_minus < lambda_plus and t_max > 0.
    void validate() const;
};

enum class StopReason : std::uint8_t { upper_threshold, lower_threshold, timeout };

constexpr std::string_view to_string(StopReason r) noexcept {
    switch (r) {
    case StopReason::upper_threshold: return "upper-threshold";
    case StopReason::lower_threshold: return "lower-threshold";
    case StopReason::timeout: return "timeout";
    }
    return "unknown";
}

struct Decision {
    State chosen = State::minus;
    double stop_time = 0.0;
    StopReason stop_reason = StopReason::timeout;
};

// What produced a frontier point: a fixed readout time, or a pair of
// posterior stopping probabilities with a timeout.
struct FixedTime {
    double t_f = 0.0;
};
struct StoppingProbabilities {
    double p_plus = 1.0;
    double p_minus = 0.0;
    double t_max = 0.0;
};
using RuleLabel = std::variant<FixedTime, StoppingProbabilities, StoppingRule>;

struct FrontierPoint {
    double avg_time = 0.0;
    double err_rate = 0.0;
    double err_plus = 0.0;
    double err_minus = 0.0;
    double time_plus = 0.0;
    double time_minus = 0.0;
    RuleLabel rule = FixedTime{};

    // Prior-weighted combination of conditional error rates and times.
    static FrontierPoint combine(const Priors& priors, double err_plus, double err_minus,
                                 double time_plus, double time_minus, RuleLabel rule);
};

// lambda_th = ln(P(-)/P(+)). Throws std::invalid_argument("degenerate prior")
// for p_plus in {0, 1}.
double threshold_from_priors(const Priors& priors);

// p_t = 1 / (1 + exp(-(lambda - lambda_th))), evaluated without overflow.
double posterior_probability(const LogLikelihood& lambda, double lambda_th);

// Plus iff lambda > lambda_th; the exact tie decides minus.
State decide(const LogLikelihood& lambda, double lambda_th);

// ln(p / (1 - p)) for p in (0, 1).
double logit(double p);

// Log-likelihood bound equivalent to the posterior bound p at the given
// decision threshold: lambda_th + logit(p).
double lambda_for_posterior(double p, double lambda_th);

}  // namespace seqread
