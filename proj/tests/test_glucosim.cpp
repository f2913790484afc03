#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <vector>

#include "glyrl/clinical.hpp"
#include "glyrl/controllers.hpp"
#include "glyrl/glucosim.hpp"

using namespace glyrl;
using namespace glyrl::glucosim;

namespace {

// Hand-built patient with a 120 mg/dL fasting set-point, used where sampled
// parameters would obscure what's being checked.
PatientParams reference_patient() {
    PatientParams p;
    p.weight = 75.0;
    p.basal_need = 0.9;  // nominal TDD 43.2 U
    p.carb_ratio = 11.0;
    p.insulin_sensitivity = 0.43;
    p.insulin_action_time = 55.0;
    p.carb_absorption_time = 40.0;
    p.cgm_noise_sd = 0.0;
    p.seed = 99;
    const double u = p.basal_need / 60.0;
    const double ib = u / (kInsulinVolume * p.weight * kInsulinClearance);
    const double xb = p.insulin_sensitivity * ib;
    p.egp = 120.0 * (xb + kGlucoseEffect) - kGlucoseEffect * kGlucoseBasal;
    return p;
}

struct FixedController : glucosim::Controller {
    double rate, bolus;
    FixedController(double r, double b) : rate(r), bolus(b) {}
    Action act(const Observation&, Rng&) override { return {rate, bolus, 0}; }
};

bool same_step(const StepRecord& a, const StepRecord& b) {
    return a.cgm == b.cgm && a.rate_uph == b.rate_uph && a.bolus_u == b.bolus_u &&
           a.carbs_announced == b.carbs_announced && a.flags == b.flags;
}

std::vector<double> cgm_of(const EpisodeLog& log) {
    std::vector<double> g;
    g.reserve(log.steps.size());
    for (const auto& s : log.steps) g.push_back(s.cgm);
    return g;
}

}  // namespace

TEST_CASE("fasting state solves the model exactly and holds for a day") {
    const auto p = reference_patient();
    SimState s = fasting_state(p, p.basal_need);
    CHECK(s.glucose == doctest::Approx(120.0).epsilon(1e-12));

    const SimState s0 = s;
    double max_dev = 0.0;
    for (int t = 0; t < kStepsPerDay; ++t) {
        advance(p, s, p.basal_need, 0.0, 0.0);
        max_dev = std::max(max_dev, std::fabs(s.glucose - s0.glucose));
    }
    CHECK(max_dev < 5.0);
    // steady state is a fixed point of the discrete update too
    CHECK(s.glucose == doctest::Approx(s0.glucose).epsilon(1e-9));
    CHECK(s.s1 == doctest::Approx(s0.s1).epsilon(1e-9));
    CHECK(s.insulin == doctest::Approx(s0.insulin).epsilon(1e-9));
    CHECK(s.remote == doctest::Approx(s0.remote).epsilon(1e-9));
}

TEST_CASE("no production and no insulin leaves basal glucose untouched") {
    auto p = reference_patient();
    p.egp = 0.0;  // never passes validate_patient, but advance() is pure dynamics
    SimState s;
    s.glucose = kGlucoseBasal;
    for (int t = 0; t < 200; ++t) advance(p, s, 0.0, 0.0, 0.0);
    CHECK(s.glucose == kGlucoseBasal);
}

TEST_CASE("cutting insulin sends glucose monotonically to the insulin-free equilibrium") {
    const auto p = reference_patient();
    SimState s = fasting_state(p, p.basal_need);
    double prev = s.glucose;
    bool monotone = true;
    for (int t = 0; t < 432; ++t) {  // 36 h
        advance(p, s, 0.0, 0.0, 0.0);
        if (s.glucose < prev - 1e-9) monotone = false;
        prev = s.glucose;
    }
    CHECK(monotone);
    // with X = 0 the glucose ODE settles at egp/k_g + basal
    const double equilibrium = p.egp / kGlucoseEffect + kGlucoseBasal;
    CHECK(s.glucose == doctest::Approx(std::min(equilibrium, kGlucoseCeil)).epsilon(0.01));
    CHECK(s.glucose > 180.0);  // insulin withdrawal still lands firmly hyper
}

TEST_CASE("a meal without insulin cover rises fast") {
    const auto p = reference_patient();
    SimState s = fasting_state(p, p.basal_need);
    const double g0 = s.glucose;
    double peak = g0;
    for (int t = 0; t < 18; ++t) {  // 90 minutes
        advance(p, s, p.basal_need, 0.0, t == 0 ? 60.0 : 0.0);
        peak = std::max(peak, s.glucose);
    }
    CHECK(peak - g0 > 60.0);
}

TEST_CASE("bigger boluses land lower, dose by dose") {
    const auto p = reference_patient();
    auto end_after = [&](double bolus) {
        SimState s = fasting_state(p, p.basal_need);
        for (int t = 0; t < 72; ++t)  // 6 h
            advance(p, s, p.basal_need, t == 0 ? bolus : 0.0, t == 0 ? 60.0 : 0.0);
        return s.glucose;
    };
    const double m0 = end_after(0.0), m1 = end_after(2.5), m2 = end_after(5.0);
    CHECK(m1 < m0);
    CHECK(m2 < m1);
}

TEST_CASE("state stays non-negative and bounded under random abuse") {
    const auto p = reference_patient();
    SimState s = fasting_state(p, p.basal_need);
    Rng rng(7);
    for (int t = 0; t < 2000; ++t) {
        const double rate = rng.uniform(0.0, kMaxRate);
        const double bolus = rng.bernoulli(0.05) ? rng.uniform(0.0, kMaxBolus) : 0.0;
        const double carbs = rng.bernoulli(0.03) ? rng.uniform(10.0, 120.0) : 0.0;
        advance(p, s, rate, bolus, carbs);
        REQUIRE(std::isfinite(s.glucose));
        REQUIRE(s.glucose >= kGlucoseFloor);
        REQUIRE(s.glucose <= kGlucoseCeil);
        REQUIRE(s.s1 >= 0.0);
        REQUIRE(s.s2 >= 0.0);
        REQUIRE(s.insulin >= 0.0);
        REQUIRE(s.remote >= 0.0);
        REQUIRE(s.d1 >= 0.0);
        REQUIRE(s.d2 >= 0.0);
    }
}

TEST_CASE("zero-noise CGM reports plasma glucose exactly") {
    const auto p = reference_patient();
    SimState s = fasting_state(p, p.basal_need);
    Rng noise(3);
    for (int t = 0; t < 50; ++t) {
        const double g = step(p, s, p.basal_need, 0.0, t == 10 ? 40.0 : 0.0, noise);
        CHECK(g == s.glucose);
    }
}

TEST_CASE("CGM noise stays in scale with its stationary sd") {
    auto p = reference_patient();
    p.cgm_noise_sd = 8.0;
    SimState s = fasting_state(p, p.basal_need);
    Rng noise(11);
    double max_err = 0.0, sum_sq = 0.0;
    const int n = 2000;
    for (int t = 0; t < n; ++t) {
        const double g = step(p, s, p.basal_need, 0.0, 0.0, noise);
        max_err = std::max(max_err, std::fabs(g - s.glucose));
        sum_sq += (g - s.glucose) * (g - s.glucose);
    }
    const double sd = std::sqrt(sum_sq / n);
    CHECK(sd > 4.0);
    CHECK(sd < 12.0);
    CHECK(max_err < 8.0 * p.cgm_noise_sd);
}

TEST_CASE("same seed, same episode, bit for bit") {
    const auto p = sample_patient(2024, 0);
    controllers::BehaviorController inner1, inner2;
    controllers::SafetyWrap c1(inner1), c2(inner2);
    const auto a = simulate(p, c1, 3, 0, 42, true);
    const auto b = simulate(p, c2, 3, 0, 42, true);
    REQUIRE(a.steps.size() == b.steps.size());
    bool identical = true;
    for (size_t i = 0; i < a.steps.size(); ++i)
        if (!same_step(a.steps[i], b.steps[i])) identical = false;
    CHECK(identical);
    REQUIRE(a.meals.size() == b.meals.size());

    controllers::BehaviorController inner3;
    controllers::SafetyWrap c3(inner3);
    const auto c = simulate(p, c3, 3, 0, 43, true);
    bool differs = c.steps.size() != a.steps.size();
    for (size_t i = 0; !differs && i < a.steps.size(); ++i) differs = !same_step(a.steps[i], c.steps[i]);
    CHECK(differs);
}

TEST_CASE("sampled patients are deterministic and clinically plausible") {
    const auto a = sample_patient(7, 3);
    const auto b = sample_patient(7, 3);
    CHECK(a.weight == b.weight);
    CHECK(a.insulin_sensitivity == b.insulin_sensitivity);
    CHECK(a.egp == b.egp);
    CHECK(a.seed == b.seed);
    CHECK(a.id == 3);

    double wsum = 0, tddsum = 0;
    for (uint32_t i = 0; i < 100; ++i) {
        const auto p = sample_patient(123, i);
        validate_patient(p);
        REQUIRE(p.weight >= 40.0);
        REQUIRE(p.weight <= 150.0);
        REQUIRE(p.nominal_tdd() >= 10.0);
        REQUIRE(p.nominal_tdd() <= 120.0);
        REQUIRE(p.carb_ratio >= 3.0);
        REQUIRE(p.carb_ratio <= 30.0);
        REQUIRE(p.insulin_action_time >= 45.0);
        REQUIRE(p.insulin_action_time <= 70.0);
        REQUIRE(p.carb_absorption_time >= 30.0);
        REQUIRE(p.carb_absorption_time <= 50.0);
        wsum += p.weight;
        tddsum += p.nominal_tdd();
        // the fasting set-point the egp was solved for
        const double fg = fasting_state(p, p.basal_need).glucose;
        REQUIRE(fg >= 104.9);
        REQUIRE(fg <= 125.1);
    }
    CHECK(wsum / 100.0 > 65.0);
    CHECK(wsum / 100.0 < 90.0);
    CHECK(tddsum / 100.0 > 30.0);
    CHECK(tddsum / 100.0 < 60.0);
}

TEST_CASE("meal schedules sit on the grid with the right announcements") {
    Rng rng(5);
    const int days = 30;
    const auto meals = generate_meal_schedule(days, true, rng);
    int announced = 0, snacks = 0;
    for (const auto& m : meals) {
        CHECK(m.time_min % kStepMinutes == 0);
        CHECK(m.time_min >= 0);
        CHECK(m.time_min < days * kStepsPerDay * kStepMinutes);
        if (m.announced) {
            ++announced;
            CHECK(m.carbs >= 40.0);
            CHECK(m.carbs <= 100.0);
            // within jitter of one of the three nominal times
            const int tod = m.time_min % (kStepsPerDay * kStepMinutes);
            const bool near = std::abs(tod - 450) <= 45 || std::abs(tod - 750) <= 45 || std::abs(tod - 1170) <= 45;
            CHECK(near);
        } else {
            ++snacks;
            CHECK(m.carbs >= 15.0);
            CHECK(m.carbs <= 30.0);
        }
    }
    CHECK(announced == 3 * days);
    CHECK(snacks >= 1);
    CHECK(snacks <= days);

    Rng rng2(5);
    const auto unann = generate_meal_schedule(days, false, rng2);
    for (const auto& m : unann) CHECK_FALSE(m.announced);
}

TEST_CASE("out-of-range actions are clamped and flagged") {
    const auto p = reference_patient();
    FixedController wild(50.0, 100.0);
    const auto log = simulate(p, wild, 1, 0, 9, true);
    for (const auto& s : log.steps) {
        CHECK(s.rate_uph == kMaxRate);
        CHECK(s.bolus_u == kMaxBolus);
        CHECK((s.flags & kFlagClamped) != 0);
    }
}

TEST_CASE("unannounced runs carry meals in the dynamics but not in the log") {
    const auto p = sample_patient(31, 1);
    controllers::BehaviorController inner;
    controllers::SafetyWrap ctrl(inner);
    const auto log = simulate(p, ctrl, 5, 0, 77, false);
    double announced_total = 0;
    for (const auto& s : log.steps) announced_total += s.carbs_announced;
    CHECK(announced_total == 0.0);
    double meal_total = 0;
    for (const auto& m : log.meals) meal_total += m.carbs;
    CHECK(meal_total > 0.0);
    // glucose must still show the meals
    const auto g = cgm_of(log);
    CHECK(*std::max_element(g.begin(), g.end()) > 160.0);
}

// Data-generation sanity: the behavior policy should produce realistically
// imperfect control, not disaster and not perfection.
TEST_CASE("behavior policy lands in a mid-range glycemic band") {
    double tir_sum = 0, tbr_sum = 0, mean_sum = 0, tdd_sum = 0;
    const int n_patients = 5, days = 14;
    for (uint32_t i = 0; i < n_patients; ++i) {
        const auto p = sample_patient(2026, i);
        controllers::BehaviorController inner;
        controllers::SafetyWrap ctrl(inner);
        const auto log = simulate(p, ctrl, days, 0, 1000 + i, true);
        const auto m = clinical::compute(cgm_of(log));
        tir_sum += m.tir;
        tbr_sum += m.tbr;
        mean_sum += m.mean_glycemia;
        double insulin = 0;
        for (const auto& s : log.steps) insulin += s.rate_uph / 12.0 + s.bolus_u;
        tdd_sum += insulin / days;
    }
    const double tir = tir_sum / n_patients, tbr = tbr_sum / n_patients;
    const double meang = mean_sum / n_patients, tdd = tdd_sum / n_patients;
    std::printf("[behavior calibration] TIR %.1f%%  TBR %.2f%%  mean %.1f mg/dL  TDD %.1f U\n",
                tir, tbr, meang, tdd);
    CHECK(tir >= 55.0);
    CHECK(tir <= 85.0);
    CHECK(tbr <= 10.0);
    CHECK(meang >= 110.0);
    CHECK(meang <= 190.0);
    CHECK(tdd >= 25.0);
    CHECK(tdd <= 65.0);
}

TEST_CASE("episode CSV round-trips a simulated log") {
    const auto p = sample_patient(8, 2);
    controllers::BehaviorController inner;
    controllers::SafetyWrap ctrl(inner);
    const auto log = simulate(p, ctrl, 2, 5, 55, true);
    const std::string path = "/tmp/glyrl_test_episode.csv";
    save_episode_csv(log, path);
    const auto back = load_episode_csv(path);
    REQUIRE(back.steps.size() == log.steps.size());
    CHECK(back.patient_id == log.patient_id);
    CHECK(back.first_day == log.first_day);
    bool same = true;
    for (size_t i = 0; i < log.steps.size(); ++i)
        if (!same_step(back.steps[i], log.steps[i])) same = false;
    CHECK(same);
    REQUIRE(back.meals.size() == log.meals.size());
    for (size_t i = 0; i < log.meals.size(); ++i) {
        CHECK(back.meals[i].time_min == log.meals[i].time_min);
        CHECK(back.meals[i].carbs == log.meals[i].carbs);
        CHECK(back.meals[i].announced == log.meals[i].announced);
    }
}
