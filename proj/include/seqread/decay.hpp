#pragma once
// Readout by state-dependent decay. Detection is perfect and there are no
// dark counts.
//
// single channel: |+> decays with rate 1/tau and the event identifies |+>;
//                 |-> never decays.
// two channel:    both states decay with rate 1/tau into distinguishable
//                 channels; without an event the state is guessed with a
//                 fair coin.

#include <cstdint>
#include <optional>
#include <variant>

#include "seqread/core.hpp"
#include "seqread/gaussian.hpp"

namespace seqread {

enum class ChannelMode : std::uint8_t { single, two_channel };

struct DecayModel {
    double tau = 1.0;
    ChannelMode mode = ChannelMode::single;

    void validate() const;
};

// eps = exp(-t_f / tau) / 2 in both channel modes.
double decay_nonadaptive(const DecayModel& model, double t_f);

// Stop at the first event or at t_max.
ErrorTime decay_adaptive(const DecayModel& model, double t_max);

// t_f / T at matched error rate (t_max = t_f).
double decay_speedup(const DecayModel& model, double t_f);

// Fixed-time readout or stop-on-event with timeout.
struct FixedReadout {
    double t_f = 0.0;
};
struct AdaptiveReadout {
    double t_max = 0.0;
};
using DecayRule = std::variant<FixedReadout, AdaptiveReadout>;

struct DecaySimOptions {
    std::int64_t n_runs = 100000;
    std::uint64_t seed = 1;
    // Forces every run to start in this state; otherwise states alternate.
    std::optional<State> state;
    unsigned threads = 0;
};

McEstimate simulate_decay(const DecayModel& model, const DecayRule& rule, const DecaySimOptions& options);

}  // namespace seqread
