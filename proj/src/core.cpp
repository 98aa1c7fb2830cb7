#include "seqread/core.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

namespace seqread {

Priors::Priors(double p_plus) : p_plus_(p_plus), p_minus_(1.0 - p_plus) {
    if (!(p_plus >= 0.0 && p_plus <= 1.0)) {
        throw std::invalid_argument("prior probability must lie in [0, 1]");
    }
}

StoppingRule StoppingRule::symmetric(double lambda_bar, double t_max) {
    StoppingRule rule{lambda_bar, -lambda_bar, t_max};
    rule.validate();
    return rule;
}

void StoppingRule::validate() const {
    if (!(lambda_minus < lambda_plus)) {
        throw std::invalid_argument("stopping rule requires lambda_minus < lambda_plus");
    }
    if (!(t_max > 0.0)) {
        throw std::invalid_argument("stopping rule requires t_max > 0");
    }
}

FrontierPoint FrontierPoint::combine(const Priors& priors, double err_plus, double err_minus,
                                     double time_plus, double time_minus, RuleLabel rule) {
    FrontierPoint p;
    p.err_plus = err_plus;
    p.err_minus = err_minus;
    p.time_plus = time_plus;
    p.time_minus = time_minus;
    p.err_rate = priors.plus() * err_plus + priors.minus() * err_minus;
    p.avg_time = priors.plus() * time_plus + priors.minus() * time_minus;
    p.rule = std::move(rule);
    return p;
}

double threshold_from_priors(const Priors& priors) {
    if (priors.plus() <= 0.0 || priors.plus() >= 1.0) {
        throw std::invalid_argument("degenerate prior");
    }
    if (priors.plus() == 0.5) return 0.0;
    return std::log(priors.minus()) - std::log(priors.plus());
}

double posterior_probability(const LogLikelihood& lambda, double lambda_th) {
    if (lambda.certain == Certainty::plus) return 1.0;
    if (lambda.certain == Certainty::minus) return 0.0;
    const double x = lambda.value - lambda_th;
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

State decide(const LogLikelihood& lambda, double lambda_th) {
    if (lambda.certain == Certainty::plus) return State::plus;
    if (lambda.certain == Certainty::minus) return State::minus;
    return lambda.value > lambda_th ? State::plus : State::minus;
}

double logit(double p) {
    if (!(p > 0.0 && p < 1.0)) {
        throw std::invalid_argument("logit requires p in (0, 1)");
    }
    return std::log(p) - std::log1p(-p);
}

double lambda_for_posterior(double p, double lambda_th) { return lambda_th + logit(p); }

}  // namespace seqread
