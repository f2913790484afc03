#pragma once

#include <cstdint>
#include <vector>

#include "glyrl/episode.hpp"
#include "glyrl/rng.hpp"

// Synthetic virtual-patient glucose simulator. Minimal-model class dynamics:
// a two-compartment subcutaneous insulin chain feeding a remote insulin
// effect, a two-compartment meal absorption chain, and a single glucose pool
// with endogenous production and a weak pull toward a basal level. Integrated
// with explicit Euler at 1-minute substeps, observed through a CGM with AR(1)
// noise on a 5-minute grid.

namespace glyrl::glucosim {

// Model constants shared by every patient. Per-patient variation lives in
// PatientParams; these set the shape of the dynamics, not their scale.
inline constexpr double kInsulinVolume = 0.12;   // V_I, insulin distribution volume, L/kg
inline constexpr double kInsulinClearance = 0.138;  // k_e, plasma insulin elimination, 1/min
inline constexpr double kRemoteRate = 0.025;     // p2, remote-effect equilibration, 1/min
inline constexpr double kGlucoseEffect = 0.006;  // k_g, insulin-independent pull to basal, 1/min
inline constexpr double kGlucoseBasal = 100.0;   // G_b, mg/dL
inline constexpr double kMealYield = 0.8;        // fraction of carbs reaching plasma
inline constexpr double kCarbConcFactor = 625.0;  // mg/dL per (g/kg): 1 g glucose in 0.16 L/kg, dL units
inline constexpr double kGlucoseFloor = 20.0;    // mg/dL hard clamp
inline constexpr double kGlucoseCeil = 600.0;
inline constexpr double kMaxRate = 10.0;   // U/h pump limit
inline constexpr double kMaxBolus = 25.0;  // U single-delivery limit

struct PatientParams {
    double weight = 0;               // kg
    double insulin_sensitivity = 0;  // S_I, remote-effect gain per U/L of plasma insulin
    double carb_ratio = 0;           // g of carbs covered per U (pump setting)
    double basal_need = 0;           // U/h that holds the fasting set-point
    double egp = 0;                  // endogenous glucose production, mg/dL/min
    double insulin_action_time = 0;  // t_I, subcutaneous absorption time constant, min
    double carb_absorption_time = 0; // t_D, meal absorption time constant, min
    double cgm_noise_sd = 0;         // stationary sd of CGM error, mg/dL
    uint64_t seed = 0;
    uint32_t id = 0;

    // Prescription book-keeping: basal is taken as half the daily need.
    double nominal_tdd() const { return basal_need * 48.0; }
    // 1800 rule: expected mg/dL drop per unit of rapid insulin.
    double correction_factor() const { return 1800.0 / nominal_tdd(); }
};

struct SimState {
    double glucose = 0;  // plasma glucose, mg/dL
    double s1 = 0;       // subcutaneous insulin, first compartment, U
    double s2 = 0;       // subcutaneous insulin, second compartment, U
    double insulin = 0;  // plasma insulin, U/L
    double remote = 0;   // remote insulin effect X, 1/min
    double d1 = 0;       // undigested carbs, g
    double d2 = 0;       // digesting carbs, g
    double noise_e = 0;  // AR(1) CGM error state, mg/dL
    int clock_min = 0;   // minutes since midnight
    int day_index = 0;
};

void validate_patient(const PatientParams& p);

// Steady state under a constant infusion with no meals: closed-form solve of
// the ODE system at dX/dt = 0.
SimState fasting_state(const PatientParams& p, double basal_uph);

// Draw one virtual patient. Same (population_seed, index) always yields the
// same parameters. index doubles as the patient id.
PatientParams sample_patient(uint64_t population_seed, uint32_t index);

// Advance physiology by exactly 5 minutes of model time (1-minute Euler
// substeps). rate is held constant over the step; bolus and carbs enter their
// first compartments at the start of it. Throws on non-finite inputs.
void advance(const PatientParams& p, SimState& s, double rate_uph, double bolus_u, double carbs_g);

// Advance the AR(1) error state and return the clamped CGM reading for the
// current glucose. One call per 5-minute step. With cgm_noise_sd = 0 the
// reading equals plasma glucose exactly.
double cgm_read(const PatientParams& p, SimState& s, Rng& noise_rng);

// Spec'd one-shot form: advance then read.
double step(const PatientParams& p, SimState& s, double rate_uph, double bolus_u, double carbs_g,
            Rng& noise_rng);

// What a controller sees at decision time: the partially written log, where
// steps[0..idx] exist, steps[idx] already has this step's cgm reading and
// announced carbs, and the action fields are still zero.
struct Observation {
    const EpisodeLog& log;
    size_t idx;
    const PatientParams& patient;

    const StepRecord& current() const { return log.steps[idx]; }
};

struct Action {
    double rate_uph = 0;
    double bolus_u = 0;
    uint8_t flags = 0;  // controller-set bits (manual_*, open_loop, safety_override)
};

class Controller {
  public:
    virtual ~Controller() = default;
    virtual void begin_episode(const PatientParams& p, Rng& rng) { (void)p; (void)rng; }
    virtual Action act(const Observation& obs, Rng& rng) = 0;
};

struct MealScheduleConfig {
    double meal_carbs_lo = 40, meal_carbs_hi = 100;  // g
    double jitter_min = 45;                          // +/- around nominal meal times
    double snack_prob = 0.2;                         // per day
    double snack_carbs_lo = 15, snack_carbs_hi = 30;
};

// 3 meals/day near 7:30 / 12:30 / 19:30 plus an occasional snack, on the
// 5-minute grid. Main meals carry the announce flag; snacks are never
// announced (they model the small intakes patients don't log).
std::vector<MealEvent> generate_meal_schedule(int days, bool announce_meals, Rng& rng,
                                              const MealScheduleConfig& cfg = {});

// Roll one episode. The patient starts at the fasting steady state under
// their basal need. seed splits into independent meal/noise/controller
// streams, so two runs that differ only in the controller still see the same
// meals and the same sensor noise. Out-of-range actions are clamped and
// flagged. Deterministic given (patient, schedule, seed).
EpisodeLog run_episode(const PatientParams& p, Controller& controller,
                       const std::vector<MealEvent>& schedule, int days, uint32_t first_day,
                       uint64_t seed);

// Convenience wrapper: derive the schedule from the same seed.
EpisodeLog simulate(const PatientParams& p, Controller& controller, int days, uint32_t first_day,
                    uint64_t seed, bool announce_meals);

}  // namespace glyrl::glucosim
