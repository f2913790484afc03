#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "glyrl/checkpoint.hpp"
#include "glyrl/episode.hpp"

// RL state construction from episode logs: glycemia and insulin history
// windows, insulin-on-board, carbs-on-board, trailing daily dose, time of
// day, and weight — plus the normalization statistics that travel with every
// dataset and policy.

namespace glyrl::statefeat {

// Layout: [0..11] glycemia history (mg/dL, oldest->newest, current included),
// [12..23] delivered-insulin history (U/h totals over the preceding hour),
// [24] IOB (U), [25] COB (g), [26] trailing 24h TDD (U), [27] sin time,
// [28] cos time, [29] weight (kg).
inline constexpr uint32_t kStateDim = 30;
using State = std::array<double, kStateDim>;

struct FeatureConfig {
    double dia_min = 300;             // insulin duration of action
    double peak_min = 75;             // insulin activity peak
    double cob_absorption_min = 240;  // linear carb absorption window
};

struct InsulinEvent {
    double time_min = 0;
    double units = 0;
};

struct CarbEvent {
    double time_min = 0;
    double grams = 0;
};

// Fraction of a delivery still active dt minutes after injection:
// the survival function of a bi-exponential activity curve that peaks at
// `peak` and integrates to 1 over [0, dia]. S(0)=1, S(dia)=0, non-increasing.
double iob_survival(double dt_min, double dia_min, double peak_min);

// Sum of units * survival over past events. Future events are excluded and
// counted into *warnings when given.
double compute_iob(const std::vector<InsulinEvent>& events, double now_min, double dia_min,
                   double peak_min, uint64_t* warnings = nullptr);

// Linear absorption: sum of grams * max(0, 1 - dt/absorption).
double compute_cob(const std::vector<CarbEvent>& events, double now_min, double absorption_min,
                   uint64_t* warnings = nullptr);

// State at observation time step_idx. The glycemia window ends at the current
// reading; the insulin window covers the twelve completed steps before it
// (boluses folded into their 5-min slot as U/h), padded with the nominal
// basal before the log starts. IOB counts deliveries from completed steps;
// COB counts announced carbs up to and including this step. Returns nullopt
// when fewer than 12 readings exist — the step is skipped, not zero-filled.
std::optional<State> build_state(const EpisodeLog& log, size_t step_idx,
                                 const FeatureConfig& fc = {});

struct Normalizer {
    uint32_t dim = 0;
    std::vector<double> mean, sd;
    std::vector<uint8_t> kind;  // 0 = z-score, 1 = pass-through
    std::string fitted_on;

    static Normalizer identity(uint32_t dim);

    void apply(const double* x, double* out) const;
    void invert(const double* x, double* out) const;
    State apply(const State& s) const;

    // z-scores collapse to pass-through on (near-)constant features
    bool constant_feature(uint32_t i) const { return kind[i] == 1; }
};

// Fit on training data only. pass_through lists feature indices that are
// already bounded (the sin/cos pair in the standard layout) and keeps them
// unscaled; features with sd below 1e-9 are flagged and passed through.
Normalizer fit_normalizer(const double* data, size_t n, uint32_t dim,
                          const std::vector<uint32_t>& pass_through, std::string fitted_on);
Normalizer fit_normalizer(const std::vector<State>& states, std::string fitted_on);

void append_normalizer(ckpt::Writer& w, const std::string& prefix, const Normalizer& n);
Normalizer read_normalizer(const ckpt::Reader& r, const std::string& prefix);

}  // namespace glyrl::statefeat
