#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "glyrl/glucosim.hpp"

// The behavior policy that generates training data (PID-corrected basal plus
// a conservative meal-bolus calculator, with occasional manual interventions
// and open-loop gaps), and the safety layer that cuts insulin when a linear
// extrapolation of recent CGM predicts hypoglycemia.

namespace glyrl::controllers {

struct BehaviorConfig {
    double target_glycemia = 110.0;  // mg/dL
    double kp = 0.015;               // basal multiplier per mg/dL of error
    double ki = 2e-5;                // per mg/dL*min of integrated error
    double kd = 0.4;                 // per mg/dL/min of trend
    double bolus_conservatism = 0.8;      // in (0,1]
    double correction_threshold = 150.0;  // mg/dL above which boluses correct
    double manual_modification_rate = 0.014;  // per meal bolus
    double manual_bolus_rate = 0.014;         // per step, gated on high glycemia
    double open_loop_gap_rate = 0.15;         // per day
    double gap_frac_lo = 0.05, gap_frac_hi = 0.5;  // gap length as fraction of a day
};

struct SafetyConfig {
    int regression_window = 6;                      // CGM points (30 min)
    std::vector<int> horizons = {15, 30, 45, 60};   // minutes ahead
    double cutoff_threshold = 80.0;                 // mg/dL
};

void validate_behavior_config(const BehaviorConfig& cfg);
void validate_safety_config(const SafetyConfig& cfg);

// conservatism * (carbs / carb_ratio + max(0, glycemia - threshold) / cf),
// clamped to [0, 25] U. Throws on carbs <= 0 or carb_ratio <= 0.
double bolus_calculator(double carbs_g, double glycemia, double carb_ratio,
                        double correction_factor, const BehaviorConfig& cfg);

// OLS line over the last regression_window CGM points (5-minute spacing);
// true iff the extrapolated glycemia at ANY horizon falls below the cutoff.
// Fewer points than the window counts a warning and reports no risk.
bool hypo_risk(const double* cgm, size_t n, const SafetyConfig& cfg,
               uint64_t* warning_counter = nullptr);

struct SafetyDecision {
    double rate_uph = 0;
    double bolus_u = 0;
    bool overridden = false;
    bool clamped = false;
};

// Zero everything under predicted hypoglycemia, otherwise pass through with
// the rate clamped to the pump range.
SafetyDecision apply_safety(double raw_rate, double raw_bolus, const double* cgm, size_t n,
                            const SafetyConfig& cfg, uint64_t* warning_counter = nullptr);

// The data-generation policy. Deterministic when both manual rates and the
// gap rate are zero.
class BehaviorController : public glucosim::Controller {
  public:
    explicit BehaviorController(BehaviorConfig cfg = {});
    void begin_episode(const glucosim::PatientParams& p, Rng& rng) override;
    glucosim::Action act(const glucosim::Observation& obs, Rng& rng) override;

  private:
    BehaviorConfig cfg_;
    double basal_ = 0, carb_ratio_ = 0, correction_factor_ = 0;
    double integral_ = 0;  // mg/dL * min
    size_t gap_start_ = 0, gap_end_ = 0;  // [start, end) in steps, empty when equal
};

// Wraps any controller with the hypoglycemia cutoff. The wrapped action is
// forced to exactly zero insulin whenever hypo_risk fires on the CGM history
// up to and including the current reading.
class SafetyWrap : public glucosim::Controller {
  public:
    explicit SafetyWrap(glucosim::Controller& inner, SafetyConfig cfg = {});
    void begin_episode(const glucosim::PatientParams& p, Rng& rng) override;
    glucosim::Action act(const glucosim::Observation& obs, Rng& rng) override;

    uint64_t warnings() const { return warnings_; }

  private:
    glucosim::Controller& inner_;
    SafetyConfig cfg_;
    uint64_t warnings_ = 0;
};

}  // namespace glyrl::controllers
