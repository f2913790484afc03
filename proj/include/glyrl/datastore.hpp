#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "glyrl/rewards.hpp"
#include "glyrl/statefeat.hpp"

// Episode logs -> RL transition datasets: state construction, the
// total-insulin action encoding with its over-limit exclusion rule, the
// closed-loop coverage filter, chronological day-based splits, and the
// on-disk container.

namespace glyrl::datastore {

// External action space is [0,10] U/h; agents work on [-1,1] internally.
inline constexpr double kActionLimitUph = 10.0;
inline double to_internal_action(double uph) { return uph / 5.0 - 1.0; }
inline double to_external_rate(double internal) { return (internal + 1.0) * 5.0; }

struct BuildStats {
    uint64_t emitted = 0;
    uint64_t excluded_over_limit = 0;   // total insulin above 10 U/h (meal boluses)
    uint64_t dropped_low_coverage = 0;  // window touches a day below the coverage bar
    uint64_t skipped_history = 0;       // too early in the episode for a full window
};

struct BuildOptions {
    statefeat::FeatureConfig features;
    bool coverage_filter = true;
    double min_coverage = 0.7;  // fraction of non-open-loop steps per day
};

// Column-major transition store. States are normalized; next_cgm keeps the
// raw glycemia the reward derives from, so one dataset serves every reward
// kind. done marks only the final transition of each episode.
struct Dataset {
    uint32_t state_dim = 0;
    std::string reward_kind;  // default kind used by training when none given
    statefeat::Normalizer normalizer;
    std::vector<float> states, next_states;  // n * state_dim
    std::vector<float> actions;              // n, internal [-1,1]
    std::vector<float> next_cgm;             // n, mg/dL
    std::vector<uint8_t> done;               // n
    std::vector<uint32_t> patient, day, step;  // provenance per transition
    nlohmann::json provenance;  // seeds, config hash, build stats

    size_t size() const { return actions.size(); }
    const float* state(size_t i) const { return states.data() + i * state_dim; }
    const float* next_state(size_t i) const { return next_states.data() + i * state_dim; }
    std::vector<float> rewards(rewards::RewardKind kind) const;
    void check() const;  // internal consistency (sizes agree, dim set)
};

// Raw (un-normalized) transitions from one or more episodes, accumulated
// before the normalizer exists.
struct RawTransitions {
    uint32_t state_dim = statefeat::kStateDim;
    std::vector<statefeat::State> s, s2;
    std::vector<double> action_internal;
    std::vector<float> next_cgm;
    std::vector<uint8_t> done;
    std::vector<uint32_t> patient, day, step;
    BuildStats stats;

    size_t size() const { return action_internal.size(); }
};

// One transition per step t in [11, n-2]: state at t, total insulin at t as
// the action (rate + bolus*12 U/h; above 10 U/h the transition is excluded,
// not clipped), reward glycemia = cgm at t+1, next state at t+1. Transitions
// whose state window touches a day with closed-loop coverage below the bar
// are dropped when the filter is on.
void append_transitions(RawTransitions& out, const EpisodeLog& log, const BuildOptions& opt = {});

// Normalize and freeze. The normalizer is typically fitted on the training
// portion only and shared by every split.
Dataset assemble(const RawTransitions& raw, const statefeat::Normalizer& norm,
                 const std::string& reward_kind, nlohmann::json provenance = {});

// Contiguous per-patient day-based split. Fractions must sum to 1; each
// patient's distinct days are partitioned in chronological order, earlier
// segments absorbing any remainder; a day is never split across segments.
// Throws when a patient has fewer days than segments.
std::vector<Dataset> chronological_split(const Dataset& d, const std::vector<double>& fractions);

void save_dataset(const Dataset& d, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace glyrl::datastore
