#include "glyrl/controllers.hpp"

#include <algorithm>
#include <cmath>

#include "glyrl/common.hpp"

namespace glyrl::controllers {

namespace {

// Slope of the least-squares line through (0,y0), (dx,y1), ..., per x unit,
// plus the fitted value at the last point.
void ols_fit(const double* y, size_t n, double dx, double* slope, double* fit_end) {
    const double mean_x = dx * static_cast<double>(n - 1) / 2.0;
    double mean_y = 0;
    for (size_t i = 0; i < n; ++i) mean_y += y[i];
    mean_y /= static_cast<double>(n);
    double cov = 0, var = 0;
    for (size_t i = 0; i < n; ++i) {
        const double cx = dx * static_cast<double>(i) - mean_x;
        cov += cx * (y[i] - mean_y);
        var += cx * cx;
    }
    *slope = cov / var;
    *fit_end = mean_y + *slope * (dx * static_cast<double>(n - 1) - mean_x);
}

}  // namespace

void validate_behavior_config(const BehaviorConfig& cfg) {
    require(std::isfinite(cfg.kp) && std::isfinite(cfg.ki) && std::isfinite(cfg.kd),
            "pid gains must be finite");
    require(cfg.target_glycemia > 0, "target glycemia must be positive");
    require(cfg.bolus_conservatism > 0 && cfg.bolus_conservatism <= 1.0,
            "bolus_conservatism must be in (0,1]");
    require(cfg.manual_modification_rate >= 0 && cfg.manual_modification_rate <= 1.0 &&
                cfg.manual_bolus_rate >= 0 && cfg.manual_bolus_rate <= 1.0 &&
                cfg.open_loop_gap_rate >= 0 && cfg.open_loop_gap_rate <= 1.0,
            "probabilities must be in [0,1]");
    require(cfg.gap_frac_lo > 0 && cfg.gap_frac_lo <= cfg.gap_frac_hi && cfg.gap_frac_hi <= 1.0,
            "gap fractions must satisfy 0 < lo <= hi <= 1");
}

void validate_safety_config(const SafetyConfig& cfg) {
    require(cfg.regression_window >= 2 && cfg.regression_window <= 16,
            "regression window must be in [2,16] points");
    require(!cfg.horizons.empty(), "at least one prediction horizon");
    for (int h : cfg.horizons) require(h >= 15 && h <= 60, "horizons must lie in [15,60] min");
    require(cfg.cutoff_threshold > 0, "cutoff threshold must be positive");
}

double bolus_calculator(double carbs_g, double glycemia, double carb_ratio,
                        double correction_factor, const BehaviorConfig& cfg) {
    require(carbs_g > 0, "bolus calculator needs carbs > 0");
    require(carb_ratio > 0, "carb_ratio must be positive");
    require(correction_factor > 0, "correction_factor must be positive");
    const double meal = carbs_g / carb_ratio;
    const double correction = std::max(0.0, glycemia - cfg.correction_threshold) / correction_factor;
    return std::clamp(cfg.bolus_conservatism * (meal + correction), 0.0, glucosim::kMaxBolus);
}

bool hypo_risk(const double* cgm, size_t n, const SafetyConfig& cfg, uint64_t* warning_counter) {
    validate_safety_config(cfg);
    const size_t w = static_cast<size_t>(cfg.regression_window);
    if (n < w) {
        if (warning_counter) ++*warning_counter;
        return false;
    }
    double slope = 0, fit_end = 0;
    ols_fit(cgm + (n - w), w, kStepMinutes, &slope, &fit_end);
    for (int h : cfg.horizons) {
        if (fit_end + slope * static_cast<double>(h) < cfg.cutoff_threshold) return true;
    }
    return false;
}

SafetyDecision apply_safety(double raw_rate, double raw_bolus, const double* cgm, size_t n,
                            const SafetyConfig& cfg, uint64_t* warning_counter) {
    SafetyDecision d;
    if (hypo_risk(cgm, n, cfg, warning_counter)) {
        d.overridden = true;
        return d;  // rate and bolus already zero
    }
    d.rate_uph = std::clamp(raw_rate, 0.0, glucosim::kMaxRate);
    d.clamped = d.rate_uph != raw_rate;
    d.bolus_u = raw_bolus;
    return d;
}

BehaviorController::BehaviorController(BehaviorConfig cfg) : cfg_(cfg) {
    validate_behavior_config(cfg_);
}

void BehaviorController::begin_episode(const glucosim::PatientParams& p, Rng& rng) {
    (void)rng;
    basal_ = p.basal_need;
    carb_ratio_ = p.carb_ratio;
    correction_factor_ = p.correction_factor();
    integral_ = 0;
    gap_start_ = gap_end_ = 0;
}

glucosim::Action BehaviorController::act(const glucosim::Observation& obs, Rng& rng) {
    const size_t idx = obs.idx;
    const double g = obs.current().cgm;

    // Decide at each day boundary whether the loop drops out for a stretch.
    if (idx % kStepsPerDay == 0 && cfg_.open_loop_gap_rate > 0) {
        if (rng.bernoulli(cfg_.open_loop_gap_rate)) {
            const size_t day_start = idx;
            const size_t start = day_start + static_cast<size_t>(rng.below(kStepsPerDay));
            const double frac = rng.uniform(cfg_.gap_frac_lo, cfg_.gap_frac_hi);
            const size_t len =
                std::max<size_t>(1, static_cast<size_t>(std::llround(frac * kStepsPerDay)));
            gap_start_ = start;
            gap_end_ = start + len;
        }
    }
    const bool in_gap = idx >= gap_start_ && idx < gap_end_;

    glucosim::Action a;
    if (in_gap) {
        // Pump falls back to programmed basal; no corrections accumulate.
        a.rate_uph = basal_;
        a.flags |= kFlagOpenLoop;
        integral_ = 0;
    } else {
        const double err = g - cfg_.target_glycemia;
        const double integral_cap = cfg_.ki > 0 ? 1.0 / cfg_.ki : 0.0;
        integral_ = cfg_.ki > 0
                        ? std::clamp(integral_ + err * kStepMinutes, -integral_cap, integral_cap)
                        : 0.0;

        // Trend from a short OLS window; single-sample differences are too
        // noisy against the CGM error.
        double trend = 0;
        const size_t w = std::min<size_t>(4, idx + 1);
        if (w >= 2) {
            double y[4];
            for (size_t i = 0; i < w; ++i) y[i] = obs.log.steps[idx + 1 - w + i].cgm;
            double fit_end = 0;
            ols_fit(y, w, kStepMinutes, &trend, &fit_end);
        }

        const double factor = 1.0 + cfg_.kp * err + cfg_.ki * integral_ + cfg_.kd * trend;
        a.rate_uph = std::clamp(basal_ * factor, 0.0, glucosim::kMaxRate);
    }

    const double carbs = obs.current().carbs_announced;
    if (carbs > 0) {
        double bolus = bolus_calculator(carbs, g, carb_ratio_, correction_factor_, cfg_);
        if (rng.bernoulli(cfg_.manual_modification_rate)) {
            bolus = std::clamp(bolus * rng.uniform(0.7, 1.3), 0.0, glucosim::kMaxBolus);
            a.flags |= kFlagManualModified;
        }
        a.bolus_u = bolus;
    } else if (rng.bernoulli(cfg_.manual_bolus_rate) && g > 150.0) {
        // Unprompted correction, the kind patients give when they see a high.
        a.bolus_u = rng.uniform(0.25, 2.0);
        a.flags |= kFlagManualAdded;
    }
    return a;
}

SafetyWrap::SafetyWrap(glucosim::Controller& inner, SafetyConfig cfg)
    : inner_(inner), cfg_(std::move(cfg)) {
    validate_safety_config(cfg_);
}

void SafetyWrap::begin_episode(const glucosim::PatientParams& p, Rng& rng) {
    warnings_ = 0;
    inner_.begin_episode(p, rng);
}

glucosim::Action SafetyWrap::act(const glucosim::Observation& obs, Rng& rng) {
    glucosim::Action a = inner_.act(obs, rng);
    const size_t w = static_cast<size_t>(cfg_.regression_window);
    const size_t have = std::min(obs.idx + 1, w);
    double window[16];
    for (size_t i = 0; i < have; ++i) window[i] = obs.log.steps[obs.idx + 1 - have + i].cgm;
    if (hypo_risk(window, have, cfg_, &warnings_)) {
        a.rate_uph = 0;
        a.bolus_u = 0;
        a.flags |= kFlagSafetyOverride;
    }
    return a;
}

}  // namespace glyrl::controllers
