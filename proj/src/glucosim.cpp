#include "glyrl/glucosim.hpp"

#include <algorithm>
#include <cmath>

#include "glyrl/common.hpp"

namespace glyrl::glucosim {

namespace {

double clamp_glucose(double g) { return std::clamp(g, kGlucoseFloor, kGlucoseCeil); }

bool finite_nonneg(double v) { return std::isfinite(v) && v >= 0; }

}  // namespace

void validate_patient(const PatientParams& p) {
    require(std::isfinite(p.weight) && p.weight >= 40.0 && p.weight <= 150.0,
            "patient weight outside [40,150] kg");
    require(finite_nonneg(p.insulin_sensitivity) && p.insulin_sensitivity > 0,
            "insulin_sensitivity must be positive");
    require(finite_nonneg(p.carb_ratio) && p.carb_ratio > 0, "carb_ratio must be positive");
    require(finite_nonneg(p.basal_need) && p.basal_need > 0, "basal_need must be positive");
    require(finite_nonneg(p.egp) && p.egp > 0, "egp must be positive");
    require(finite_nonneg(p.insulin_action_time) && p.insulin_action_time > 0,
            "insulin_action_time must be positive");
    require(finite_nonneg(p.carb_absorption_time) && p.carb_absorption_time > 0,
            "carb_absorption_time must be positive");
    require(finite_nonneg(p.cgm_noise_sd), "cgm_noise_sd must be >= 0");
}

SimState fasting_state(const PatientParams& p, double basal_uph) {
    validate_patient(p);
    require(finite_nonneg(basal_uph), "basal rate must be >= 0");
    const double u = basal_uph / 60.0;  // U/min
    SimState s;
    s.s1 = u * p.insulin_action_time;
    s.s2 = s.s1;
    s.insulin = u / (kInsulinVolume * p.weight * kInsulinClearance);
    s.remote = p.insulin_sensitivity * s.insulin;
    s.glucose = clamp_glucose((p.egp + kGlucoseEffect * kGlucoseBasal) / (s.remote + kGlucoseEffect));
    return s;
}

PatientParams sample_patient(uint64_t population_seed, uint32_t index) {
    Rng rng(derive_seed(population_seed, index, 0xA11CEull));

    PatientParams p;
    p.id = index;
    p.seed = derive_seed(population_seed, index, 0x5EEDull);
    p.weight = std::clamp(rng.normal(77.1, 17.5), 40.0, 150.0);

    // Daily need scales with weight (~0.57 U/kg) with a broad multiplicative
    // spread, which lands the population near 44 +/- 18 U/day.
    const double tdd = std::clamp(0.57 * p.weight * rng.lognormal(0.0, 0.3), 10.0, 120.0);
    p.basal_need = 0.5 * tdd / 24.0;

    // Pump settings follow the 500 rule with prescription error.
    p.carb_ratio = std::clamp(500.0 / tdd * rng.lognormal(0.0, 0.1), 3.0, 30.0);

    p.insulin_action_time = rng.uniform(45.0, 70.0);
    p.carb_absorption_time = rng.uniform(30.0, 50.0);

    // Sensitivity sized so one unit moves glucose by roughly the 1800-rule
    // correction factor at a reference glycemia of 120 mg/dL: the integrated
    // remote effect of 1 U is S_I / (V_I * weight * k_e).
    const double cf = 1800.0 / tdd;
    p.insulin_sensitivity =
        cf * kInsulinVolume * p.weight * kInsulinClearance / 120.0 * rng.lognormal(0.0, 0.15);

    // Solve EGP so the fasting set-point under basal_need sits at the target.
    const double g_target = rng.uniform(105.0, 125.0);
    const double basal_insulin = (p.basal_need / 60.0) / (kInsulinVolume * p.weight * kInsulinClearance);
    const double basal_remote = p.insulin_sensitivity * basal_insulin;
    p.egp = g_target * (basal_remote + kGlucoseEffect) - kGlucoseEffect * kGlucoseBasal;

    p.cgm_noise_sd = 5.0;
    validate_patient(p);
    return p;
}

void advance(const PatientParams& p, SimState& s, double rate_uph, double bolus_u, double carbs_g) {
    require(finite_nonneg(rate_uph) && finite_nonneg(bolus_u) && finite_nonneg(carbs_g),
            "simulator inputs must be finite and non-negative");

    s.s1 += bolus_u;
    s.d1 += carbs_g;
    const double u = rate_uph / 60.0;  // U/min
    const double t_i = p.insulin_action_time;
    const double t_d = p.carb_absorption_time;

    for (int sub = 0; sub < kStepMinutes; ++sub) {
        const double ra = kMealYield * s.d2 / t_d;  // g/min reaching plasma
        const double ds1 = u - s.s1 / t_i;
        const double ds2 = (s.s1 - s.s2) / t_i;
        const double di = s.s2 / (t_i * kInsulinVolume * p.weight) - kInsulinClearance * s.insulin;
        const double dx = kRemoteRate * (p.insulin_sensitivity * s.insulin - s.remote);
        const double dd1 = -s.d1 / t_d;
        const double dd2 = (s.d1 - s.d2) / t_d;
        const double dg = -s.remote * s.glucose + p.egp - kGlucoseEffect * (s.glucose - kGlucoseBasal) +
                          ra * kCarbConcFactor / p.weight;

        s.s1 += ds1;
        s.s2 += ds2;
        s.insulin += di;
        s.remote += dx;
        s.d1 += dd1;
        s.d2 += dd2;
        s.glucose = clamp_glucose(s.glucose + dg);
    }

    s.clock_min += kStepMinutes;
    if (s.clock_min >= kStepsPerDay * kStepMinutes) {
        s.clock_min -= kStepsPerDay * kStepMinutes;
        s.day_index += 1;
    }
}

double cgm_read(const PatientParams& p, SimState& s, Rng& noise_rng) {
    // AR(1) with coefficient 0.7 per 5-minute sample; the innovation sd is
    // scaled so the stationary sd equals cgm_noise_sd. One draw per step even
    // when the sd is zero, so streams stay aligned.
    const double innovation = noise_rng.normal() * p.cgm_noise_sd * std::sqrt(1.0 - 0.7 * 0.7);
    s.noise_e = 0.7 * s.noise_e + innovation;
    return std::clamp(s.glucose + s.noise_e, kGlucoseFloor, kGlucoseCeil);
}

double step(const PatientParams& p, SimState& s, double rate_uph, double bolus_u, double carbs_g,
            Rng& noise_rng) {
    advance(p, s, rate_uph, bolus_u, carbs_g);
    return cgm_read(p, s, noise_rng);
}

std::vector<MealEvent> generate_meal_schedule(int days, bool announce_meals, Rng& rng,
                                              const MealScheduleConfig& cfg) {
    require(days >= 1, "schedule needs at least one day");
    static constexpr int kBaseTimes[3] = {450, 750, 1170};  // 7:30, 12:30, 19:30

    std::vector<MealEvent> out;
    for (int d = 0; d < days; ++d) {
        for (int base : kBaseTimes) {
            const double jitter = rng.uniform(-cfg.jitter_min, cfg.jitter_min);
            int minute = base + static_cast<int>(std::llround(jitter / kStepMinutes)) * kStepMinutes;
            MealEvent m;
            m.time_min = d * kStepsPerDay * kStepMinutes + minute;
            m.carbs = rng.uniform(cfg.meal_carbs_lo, cfg.meal_carbs_hi);
            m.announced = announce_meals;
            out.push_back(m);
        }
        if (rng.uniform01() < cfg.snack_prob) {
            const int minute =
                static_cast<int>(std::llround(rng.uniform(600.0, 1320.0) / kStepMinutes)) * kStepMinutes;
            MealEvent m;
            m.time_min = d * kStepsPerDay * kStepMinutes + minute;
            m.carbs = rng.uniform(cfg.snack_carbs_lo, cfg.snack_carbs_hi);
            m.announced = false;  // snacks are the intakes nobody logs
            out.push_back(m);
        }
    }
    std::sort(out.begin(), out.end(), [](const MealEvent& a, const MealEvent& b) {
        return a.time_min != b.time_min ? a.time_min < b.time_min : a.carbs < b.carbs;
    });
    return out;
}

EpisodeLog run_episode(const PatientParams& p, Controller& controller,
                       const std::vector<MealEvent>& schedule, int days, uint32_t first_day,
                       uint64_t seed) {
    validate_patient(p);
    require(days >= 1, "episode needs at least one day");
    const size_t n = static_cast<size_t>(days) * kStepsPerDay;

    std::vector<double> carbs_total(n, 0.0), carbs_announced(n, 0.0);
    for (const MealEvent& m : schedule) {
        require(m.carbs > 0 && m.carbs <= 200.0, "meal carbs outside (0,200] g");
        require(m.time_min >= 0 && m.time_min % kStepMinutes == 0, "meal time off the 5-minute grid");
        const size_t t = static_cast<size_t>(m.time_min) / kStepMinutes;
        require(t < n, "meal scheduled past the episode end");
        carbs_total[t] += m.carbs;
        if (m.announced) carbs_announced[t] += m.carbs;
    }

    Rng noise_rng(derive_seed(seed, 2));
    Rng ctrl_rng(derive_seed(seed, 3));

    EpisodeLog log;
    log.patient_id = p.id;
    log.first_day = first_day;
    log.weight = p.weight;
    log.nominal_tdd = p.nominal_tdd();
    log.meals = schedule;
    log.steps.reserve(n);

    SimState state = fasting_state(p, p.basal_need);
    controller.begin_episode(p, ctrl_rng);

    for (size_t t = 0; t < n; ++t) {
        StepRecord rec;
        rec.cgm = cgm_read(p, state, noise_rng);
        rec.carbs_announced = carbs_announced[t];
        log.steps.push_back(rec);

        Action a = controller.act(Observation{log, t, p}, ctrl_rng);
        require(std::isfinite(a.rate_uph) && std::isfinite(a.bolus_u),
                "controller returned a non-finite action");
        uint8_t flags = a.flags;
        double rate = a.rate_uph, bolus = a.bolus_u;
        if (rate < 0 || rate > kMaxRate) {
            rate = std::clamp(rate, 0.0, kMaxRate);
            flags |= kFlagClamped;
        }
        if (bolus < 0 || bolus > kMaxBolus) {
            bolus = std::clamp(bolus, 0.0, kMaxBolus);
            flags |= kFlagClamped;
        }
        log.steps[t].rate_uph = rate;
        log.steps[t].bolus_u = bolus;
        log.steps[t].flags = flags;

        advance(p, state, rate, bolus, carbs_total[t]);
    }
    return log;
}

EpisodeLog simulate(const PatientParams& p, Controller& controller, int days, uint32_t first_day,
                    uint64_t seed, bool announce_meals) {
    Rng meal_rng(derive_seed(seed, 1));
    const auto schedule = generate_meal_schedule(days, announce_meals, meal_rng);
    return run_episode(p, controller, schedule, days, first_day, seed);
}

}  // namespace glyrl::glucosim
