#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "glyrl/checkpoint.hpp"
#include "glyrl/statefeat.hpp"

using namespace glyrl;
using namespace glyrl::statefeat;

namespace {

// The documented activity curve the survival function integrates:
// a(t) = (s / tau^2) * t * (1 - t/dia) * exp(-t/tau).
double activity(double t, double dia, double peak) {
    const double tau = peak * (1.0 - peak / dia) / (1.0 - 2.0 * peak / dia);
    const double a = 2.0 * tau / dia;
    const double s = 1.0 / (1.0 - a + (1.0 + a) * std::exp(-dia / tau));
    return (s / (tau * tau)) * t * (1.0 - t / dia) * std::exp(-t / tau);
}

double simpson_activity(double hi, double dia, double peak, int panels) {
    const double h = hi / panels;
    double sum = activity(0, dia, peak) + activity(hi, dia, peak);
    for (int i = 1; i < panels; ++i) sum += activity(i * h, dia, peak) * (i % 2 ? 4.0 : 2.0);
    return sum * h / 3.0;
}

EpisodeLog constant_log(size_t n, double cgm, double rate, double tdd_nominal, double weight) {
    EpisodeLog log;
    log.patient_id = 1;
    log.weight = weight;
    log.nominal_tdd = tdd_nominal;
    log.steps.resize(n);
    for (auto& s : log.steps) {
        s.cgm = cgm;
        s.rate_uph = rate;
    }
    return log;
}

}  // namespace

TEST_CASE("insulin survival hits its boundary values and never rises") {
    CHECK(iob_survival(0.0, 300, 75) == 1.0);
    CHECK(iob_survival(-5.0, 300, 75) == 1.0);
    CHECK(iob_survival(300.0, 300, 75) == 0.0);
    CHECK(iob_survival(400.0, 300, 75) == 0.0);
    // S(dia) from the closed form itself, just inside the cutoff
    CHECK(iob_survival(299.9999, 300, 75) == doctest::Approx(0.0).epsilon(1e-6));

    double prev = 1.0;
    for (double t = 0; t <= 300; t += 1.0) {
        const double s = iob_survival(t, 300, 75);
        REQUIRE(s <= prev + 1e-12);
        REQUIRE(s >= 0.0);
        prev = s;
    }
    CHECK_THROWS_AS(iob_survival(10, 300, 200), std::invalid_argument);  // peak past dia/2
}

TEST_CASE("survival matches numerical integration of the activity curve") {
    // 1 - S(t) is the fraction already used: the integral of the activity
    for (double t : {30.0, 75.0, 150.0, 250.0}) {
        const double used = simpson_activity(t, 300, 75, 6000);
        CHECK(iob_survival(t, 300, 75) == doctest::Approx(1.0 - used).epsilon(1e-8));
    }
    // different dia/peak pair
    for (double t : {40.0, 120.0}) {
        const double used = simpson_activity(t, 240, 60, 6000);
        CHECK(iob_survival(t, 240, 60) == doctest::Approx(1.0 - used).epsilon(1e-8));
    }
}

TEST_CASE("activity truly peaks at the configured minute") {
    // steepest survival decline = activity maximum
    auto act = [](double t) { return activity(t, 300, 75); };
    CHECK(act(75.0) > act(60.0));
    CHECK(act(75.0) > act(90.0));
    CHECK(act(75.0) > act(74.0));
    CHECK(act(75.0) > act(76.0));
}

TEST_CASE("compute_iob handles now, expiry, and future events") {
    std::vector<InsulinEvent> ev{{100.0, 1.0}};
    CHECK(compute_iob(ev, 100.0, 300, 75) == 1.0);
    CHECK(compute_iob(ev, 400.0, 300, 75) == 0.0);

    uint64_t warnings = 0;
    std::vector<InsulinEvent> future{{500.0, 2.0}, {100.0, 1.0}};
    CHECK(compute_iob(future, 100.0, 300, 75, &warnings) == 1.0);
    CHECK(warnings == 1);

    // additivity
    std::vector<InsulinEvent> two{{100.0, 1.0}, {50.0, 2.0}};
    const double lone1 = compute_iob({{100.0, 1.0}}, 150.0, 300, 75);
    const double lone2 = compute_iob({{50.0, 2.0}}, 150.0, 300, 75);
    CHECK(compute_iob(two, 150.0, 300, 75) == doctest::Approx(lone1 + lone2).epsilon(1e-12));
}

TEST_CASE("compute_cob is linear absorption") {
    std::vector<CarbEvent> ev{{100.0, 60.0}};
    CHECK(compute_cob(ev, 100.0, 240) == 60.0);
    CHECK(compute_cob(ev, 340.0, 240) == 0.0);
    CHECK(compute_cob(ev, 220.0, 240) == doctest::Approx(30.0).epsilon(1e-12));

    uint64_t warnings = 0;
    std::vector<CarbEvent> future{{500.0, 20.0}};
    CHECK(compute_cob(future, 100.0, 240, &warnings) == 0.0);
    CHECK(warnings == 1);

    std::vector<CarbEvent> two{{100.0, 60.0}, {160.0, 40.0}};
    CHECK(compute_cob(two, 220.0, 240) == doctest::Approx(30.0 + 30.0).epsilon(1e-12));
}

TEST_CASE("build_state lays out constant histories verbatim") {
    // nominal TDD 48 makes the basal pad exactly 1.0 U/h, matching the log
    auto log = constant_log(400, 120.0, 1.0, 48.0, 70.0);
    const auto s11 = build_state(log, 11);
    REQUIRE(s11.has_value());
    for (size_t k = 0; k < 12; ++k) {
        CHECK((*s11)[k] == 120.0);
        CHECK((*s11)[12 + k] == 1.0);
    }
    CHECK((*s11)[29] == 70.0);
    // before a full day is logged, TDD falls back to the nominal dose
    CHECK((*s11)[26] == 48.0);
    // after a day of 1 U/h the trailing total is 24 U
    const auto s300 = build_state(log, 300);
    REQUIRE(s300.has_value());
    CHECK((*s300)[26] == doctest::Approx(24.0).epsilon(1e-12));

    // time-of-day encoding stays on the unit circle
    for (size_t idx : {11u, 100u, 287u, 399u}) {
        const auto s = build_state(log, idx);
        REQUIRE(s.has_value());
        CHECK((*s)[27] * (*s)[27] + (*s)[28] * (*s)[28] == doctest::Approx(1.0).epsilon(1e-12));
        const double minutes = log.clock_min(idx);
        CHECK((*s)[27] == doctest::Approx(std::sin(2.0 * std::numbers::pi * minutes / 1440.0)));
        CHECK((*s)[28] == doctest::Approx(std::cos(2.0 * std::numbers::pi * minutes / 1440.0)));
    }
}

TEST_CASE("build_state iob and cob agree with the event-list oracles") {
    auto log = constant_log(200, 140.0, 0.8, 40.0, 80.0);
    log.steps[100].bolus_u = 4.0;
    log.steps[120].carbs_announced = 60.0;
    log.steps[130].carbs_announced = 25.0;
    const FeatureConfig fc;

    for (size_t idx : {105u, 125u, 131u, 160u}) {
        const auto s = build_state(log, idx, fc);
        REQUIRE(s.has_value());

        std::vector<InsulinEvent> ins;
        for (size_t j = 0; j < idx; ++j)
            ins.push_back({double(j) * kStepMinutes,
                           log.steps[j].rate_uph * kStepMinutes / 60.0 + log.steps[j].bolus_u});
        std::vector<CarbEvent> carbs;
        for (size_t j = 0; j <= idx; ++j)
            if (log.steps[j].carbs_announced > 0)
                carbs.push_back({double(j) * kStepMinutes, log.steps[j].carbs_announced});

        const double now = double(idx) * kStepMinutes;
        CHECK((*s)[24] == doctest::Approx(compute_iob(ins, now, fc.dia_min, fc.peak_min)).epsilon(1e-9));
        CHECK((*s)[25] ==
              doctest::Approx(compute_cob(carbs, now, fc.cob_absorption_min)).epsilon(1e-9));
    }
}

TEST_CASE("build_state never looks ahead") {
    auto log = constant_log(100, 130.0, 1.2, 40.0, 75.0);
    log.steps[40].carbs_announced = 50.0;
    const auto before = build_state(log, 50);
    REQUIRE(before.has_value());
    for (size_t j = 51; j < log.steps.size(); ++j) {
        log.steps[j].cgm = 999.0;
        log.steps[j].rate_uph = 10.0;
        log.steps[j].bolus_u = 25.0;
        log.steps[j].carbs_announced = 100.0;
    }
    const auto after = build_state(log, 50);
    REQUIRE(after.has_value());
    for (size_t k = 0; k < kStateDim; ++k) REQUIRE((*before)[k] == (*after)[k]);
}

TEST_CASE("build_state refuses short history and bad indices") {
    auto log = constant_log(30, 120.0, 1.0, 48.0, 70.0);
    for (size_t idx = 0; idx < 11; ++idx) CHECK_FALSE(build_state(log, idx).has_value());
    CHECK(build_state(log, 11).has_value());
    CHECK_THROWS_AS(build_state(log, 30), std::invalid_argument);
}

TEST_CASE("a log with no announced carbs has identically zero cob") {
    auto log = constant_log(300, 150.0, 1.0, 48.0, 70.0);
    log.steps[50].bolus_u = 2.0;  // insulin alone must not create cob
    for (size_t idx = 11; idx < log.steps.size(); idx += 7) {
        const auto s = build_state(log, idx);
        REQUIRE(s.has_value());
        REQUIRE((*s)[25] == 0.0);
    }
}

TEST_CASE("normalizer zeroes the mean, scales the sd, and round-trips") {
    Rng rng(12);
    std::vector<State> states(500);
    for (auto& s : states) {
        for (size_t k = 0; k < kStateDim; ++k) s[k] = rng.uniform(-3.0, 9.0);
        const double ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
        s[27] = std::sin(ang);
        s[28] = std::cos(ang);
        s[29] = 75.0;  // constant feature
    }
    const auto norm = fit_normalizer(states, "unit-test");
    CHECK(norm.dim == kStateDim);
    CHECK(norm.fitted_on == "unit-test");
    CHECK(norm.constant_feature(27));
    CHECK(norm.constant_feature(28));
    CHECK(norm.constant_feature(29));  // sd == 0 collapses to pass-through

    // moments of the transformed training set
    for (size_t k = 0; k < kStateDim; ++k) {
        if (norm.constant_feature(k)) continue;
        double mean = 0, var = 0;
        for (const auto& s : states) mean += (norm.apply(s))[k];
        mean /= states.size();
        for (const auto& s : states) {
            const double d = (norm.apply(s))[k] - mean;
            var += d * d;
        }
        var /= states.size();
        CHECK(std::fabs(mean) < 1e-6);
        CHECK(std::fabs(std::sqrt(var) - 1.0) < 1e-6);
    }

    // pass-through features are untouched; inversion recovers the input
    for (const auto& s : states) {
        const State n = norm.apply(s);
        CHECK(n[27] == s[27]);
        CHECK(n[29] == s[29]);
        State back{};
        norm.invert(n.data(), back.data());
        for (size_t k = 0; k < kStateDim; ++k) REQUIRE(back[k] == doctest::Approx(s[k]).epsilon(1e-9));
    }

    CHECK_THROWS_AS(fit_normalizer(std::vector<State>{}, "empty"), std::invalid_argument);
}

TEST_CASE("normalizer rides along in checkpoints byte for byte") {
    Rng rng(3);
    std::vector<State> states(50);
    for (auto& s : states)
        for (size_t k = 0; k < kStateDim; ++k) s[k] = rng.normal(10.0, 4.0);
    const auto norm = fit_normalizer(states, "roundtrip");

    ckpt::Writer w(ckpt::kPolicyMagic);
    append_normalizer(w, "norm", norm);
    w.set_manifest({{"schema", "policy/1"}});
    const std::string path = "/tmp/glyrl_test_norm.bin";
    w.save(path);

    const auto r = ckpt::Reader::load(path, ckpt::kPolicyMagic);
    const auto back = read_normalizer(r, "norm");
    CHECK(back.dim == norm.dim);
    CHECK(back.fitted_on == norm.fitted_on);
    REQUIRE(back.mean.size() == norm.mean.size());
    for (size_t k = 0; k < norm.mean.size(); ++k) {
        CHECK(back.mean[k] == norm.mean[k]);
        CHECK(back.sd[k] == norm.sd[k]);
        CHECK(back.kind[k] == norm.kind[k]);
    }

    // identity normalizer round-trips its empty fitted_on tag too
    ckpt::Writer w2(ckpt::kPolicyMagic);
    append_normalizer(w2, "norm", Normalizer::identity(4));
    w2.save("/tmp/glyrl_test_norm_id.bin");
    const auto r2 = ckpt::Reader::load("/tmp/glyrl_test_norm_id.bin", ckpt::kPolicyMagic);
    const auto id = read_normalizer(r2, "norm");
    CHECK(id.dim == 4);
    CHECK(id.fitted_on == "identity");
    CHECK(id.kind == std::vector<uint8_t>{1, 1, 1, 1});
}
