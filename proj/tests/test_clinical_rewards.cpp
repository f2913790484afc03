#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <unistd.h>

#include "glyrl/clinical.hpp"
#include "glyrl/episode.hpp"
#include "glyrl/rewards.hpp"
#include "glyrl/rng.hpp"

using namespace glyrl;
using rewards::RewardKind;

TEST_CASE("clinical metrics on a hand-built series") {
    // 10 values: 2 below 70 (one below 54), 6 in range, 2 above 180
    std::vector<double> g = {50, 65, 70, 100, 110, 140, 170, 180, 190, 250};
    auto m = clinical::compute(g);
    CHECK(m.tir == 60.0);
    CHECK(m.tbr == 20.0);
    CHECK(m.tbr54 == 10.0);
    CHECK(m.tar == 20.0);
    CHECK(m.mean_glycemia == doctest::Approx(132.5));
    CHECK(m.n == 10);
}

TEST_CASE("boundary readings 70 and 180 are in range") {
    std::vector<double> g = {70, 180};
    auto m = clinical::compute(g);
    CHECK(m.tir == 100.0);
    CHECK(m.tbr == 0.0);
    CHECK(m.tar == 0.0);
    std::vector<double> g2 = {69.9999999, 180.0000001};
    auto m2 = clinical::compute(g2);
    CHECK(m2.tir == 0.0);
    CHECK(m2.tbr == 50.0);
    CHECK(m2.tar == 50.0);
}

TEST_CASE("metric partition identity holds exactly under fuzzing") {
    Rng rng(2718);
    for (int trial = 0; trial < 3000; ++trial) {
        const size_t n = 1 + rng.below(300);
        std::vector<double> g(n);
        for (auto& v : g) v = rng.uniform(20.0, 600.0);
        auto m = clinical::compute(g);
        CHECK((m.tir + m.tbr) + m.tar == 100.0);
        CHECK(m.tbr54 <= m.tbr);
        CHECK(m.tir >= 0.0);
        CHECK(m.tbr >= 0.0);
        CHECK(m.tar >= -0.0);
    }
}

TEST_CASE("cv of a constant series is exactly zero") {
    std::vector<double> g(288, 123.456);
    auto m = clinical::compute(g);
    CHECK(m.cv == 0.0);
    CHECK(m.mean_glycemia == doctest::Approx(123.456));

    // and a known non-constant case: population sd of {90,110} = 10, mean 100
    std::vector<double> g2 = {90, 110};
    CHECK(clinical::compute(g2).cv == doctest::Approx(10.0).epsilon(1e-12));
}

TEST_CASE("empty or non-finite series are rejected") {
    CHECK_THROWS_AS(clinical::compute(nullptr, 0), std::invalid_argument);
    std::vector<double> bad = {100.0, std::nan("")};
    CHECK_THROWS_AS(clinical::compute(bad), std::invalid_argument);
}

TEST_CASE("indicator rewards and their partition") {
    CHECK(rewards::reward(RewardKind::tir_indicator, 110) == 1.0);
    CHECK(rewards::reward(RewardKind::tir_indicator, 65) == 0.0);
    CHECK(rewards::reward(RewardKind::tir_indicator, 70) == 1.0);
    CHECK(rewards::reward(RewardKind::tir_indicator, 180) == 1.0);
    CHECK(rewards::reward(RewardKind::tbr_indicator, 69.999) == 1.0);
    CHECK(rewards::reward(RewardKind::tar_indicator, 180.001) == 1.0);

    Rng rng(13);
    for (int i = 0; i < 10000; ++i) {
        const double g = rng.uniform(20.0, 600.0);
        const double s = rewards::reward(RewardKind::tir_indicator, g) +
                         rewards::reward(RewardKind::tbr_indicator, g) +
                         rewards::reward(RewardKind::tar_indicator, g);
        CHECK(s == 1.0);
        CHECK(rewards::reward(RewardKind::binary, g) == rewards::reward(RewardKind::tir_indicator, g));
    }
    for (double g : {70.0, 180.0, 54.0, 600.0, 20.0}) {
        const double s = rewards::reward(RewardKind::tir_indicator, g) +
                         rewards::reward(RewardKind::tbr_indicator, g) +
                         rewards::reward(RewardKind::tar_indicator, g);
        CHECK(s == 1.0);
    }
}

TEST_CASE("zhu reward piecewise values") {
    CHECK(rewards::reward(RewardKind::zhu, 90) == 1.0);
    CHECK(rewards::reward(RewardKind::zhu, 140) == 1.0);
    CHECK(rewards::reward(RewardKind::zhu, 110) == 1.0);
    CHECK(rewards::reward(RewardKind::zhu, 70) == doctest::Approx(0.1));
    CHECK(rewards::reward(RewardKind::zhu, 89.99) == doctest::Approx(0.1));
    CHECK(rewards::reward(RewardKind::zhu, 180) == doctest::Approx(0.1));
    CHECK(rewards::reward(RewardKind::zhu, 181) == -1.0);
    CHECK(rewards::reward(RewardKind::zhu, 300) == -1.0);
    CHECK(rewards::reward(RewardKind::zhu, 301) == -2.0);
    CHECK(rewards::reward(RewardKind::zhu, 69) == -2.0);
}

TEST_CASE("triangle reward shape") {
    CHECK(rewards::reward(RewardKind::triangle, 110) == 1.0);
    CHECK(rewards::reward(RewardKind::triangle, 180) == 0.0);
    CHECK(rewards::reward(RewardKind::triangle, 40) == 0.0);
    CHECK(rewards::reward(RewardKind::triangle, 39.9) == 0.0);
    CHECK(rewards::reward(RewardKind::triangle, 200) == 0.0);
    CHECK(rewards::reward(RewardKind::triangle, 75) == doctest::Approx(0.5));
    CHECK(rewards::reward(RewardKind::triangle, 145) == doctest::Approx(0.5));
}

TEST_CASE("magni reward is zero at its root and U-shaped around it") {
    // independent root solve of f(g) = (ln g)^0.8353 - 3.7932 by bisection
    auto f = [](double g) { return std::pow(std::log(g), 0.8353) - 3.7932; };
    double lo = 50, hi = 400;
    REQUIRE(f(lo) < 0);
    REQUIRE(f(hi) > 0);
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        (f(mid) < 0 ? lo : hi) = mid;
    }
    const double root = 0.5 * (lo + hi);
    CHECK(root > 100.0);
    CHECK(root < 200.0);
    CHECK(rewards::reward(RewardKind::magni, root) == doctest::Approx(0.0).epsilon(1e-9));
    // strictly worse away from the root on both sides
    CHECK(rewards::reward(RewardKind::magni, 60) < rewards::reward(RewardKind::magni, root));
    CHECK(rewards::reward(RewardKind::magni, 350) < rewards::reward(RewardKind::magni, root));
    CHECK(rewards::reward(RewardKind::magni, 40) < rewards::reward(RewardKind::magni, 60));
    CHECK(rewards::reward(RewardKind::magni, 500) < rewards::reward(RewardKind::magni, 350));
}

TEST_CASE("all rewards stay within documented bounds on the CGM range") {
    Rng rng(99);
    for (auto k : rewards::all_reward_kinds()) {
        const auto b = rewards::reward_bounds(k);
        for (int i = 0; i < 4000; ++i) {
            const double g = rng.uniform(20.0, 600.0);
            const double r = rewards::reward(k, g);
            CHECK(r >= b.lo - 1e-12);
            CHECK(r <= b.hi + 1e-12);
        }
        CHECK(rewards::reward(k, 20.0) >= b.lo - 1e-12);
        CHECK(rewards::reward(k, 600.0) >= b.lo - 1e-12);
    }
}

namespace {

// synthetic corpus with controlled per-day counts so every metric varies
std::vector<EpisodeLog> make_corpus(size_t n_days, uint64_t seed) {
    Rng rng(seed);
    std::vector<EpisodeLog> eps;
    EpisodeLog log;
    log.patient_id = 1;
    log.weight = 70;
    log.nominal_tdd = 40;
    for (size_t d = 0; d < n_days; ++d) {
        const size_t n_low = rng.below(30);           // below 70
        const size_t n_high = 20 + rng.below(60);     // above 180
        for (int i = 0; i < kStepsPerDay; ++i) {
            StepRecord s;
            if (static_cast<size_t>(i) < n_low) {
                s.cgm = rng.uniform(45.0, 69.0);
            } else if (static_cast<size_t>(i) < n_low + n_high) {
                s.cgm = rng.uniform(185.0, 320.0);
            } else {
                s.cgm = rng.uniform(75.0, 175.0);
            }
            log.steps.push_back(s);
        }
    }
    eps.push_back(std::move(log));
    return eps;
}

}  // namespace

TEST_CASE("indicator reward sums correlate exactly 1.0 with their metrics") {
    auto eps = make_corpus(40, 4242);
    auto rows = rewards::reward_metric_correlation(eps, rewards::all_reward_kinds());
    REQUIRE(rows.size() == 7);
    bool saw_tir = false, saw_tbr = false, saw_tar = false;
    for (const auto& r : rows) {
        if (r.kind == RewardKind::tir_indicator || r.kind == RewardKind::binary) {
            CHECK(r.tir == 1.0);
            saw_tir = true;
        }
        if (r.kind == RewardKind::tbr_indicator) {
            CHECK(r.tbr == 1.0);
            saw_tbr = true;
        }
        if (r.kind == RewardKind::tar_indicator) {
            CHECK(r.tar == 1.0);
            saw_tar = true;
        }
    }
    CHECK(saw_tir);
    CHECK(saw_tbr);
    CHECK(saw_tar);
    // sorted by |corr with TIR| descending
    for (size_t i = 1; i < rows.size(); ++i) {
        const double a = std::isnan(rows[i - 1].tir) ? -1 : std::fabs(rows[i - 1].tir);
        const double b = std::isnan(rows[i].tir) ? -1 : std::fabs(rows[i].tir);
        CHECK(a >= b);
    }
}

TEST_CASE("constant metric column yields NA, and CSV renders it") {
    // all days fully in range: TBR and TAR constant at 0
    std::vector<EpisodeLog> eps;
    EpisodeLog log;
    Rng rng(7);
    for (int d = 0; d < 12; ++d) {
        for (int i = 0; i < kStepsPerDay; ++i) {
            StepRecord s;
            s.cgm = rng.uniform(90.0, 170.0);
            log.steps.push_back(s);
        }
    }
    eps.push_back(log);
    auto rows = rewards::reward_metric_correlation(eps, {RewardKind::zhu, RewardKind::tbr_indicator});
    for (const auto& r : rows) {
        CHECK(std::isnan(r.tir));  // TIR constant at 100
        CHECK(std::isnan(r.tbr));
    }
    const auto csv = rewards::correlation_csv(rows);
    CHECK(csv.find("NA") != std::string::npos);
    CHECK(csv.find("reward,corr_tir") == 0);
}

TEST_CASE("correlation requires at least 10 patient-days") {
    auto eps = make_corpus(5, 1);
    CHECK_THROWS_AS(rewards::reward_metric_correlation(eps, {RewardKind::zhu}), std::invalid_argument);
}

TEST_CASE("episode CSV round trip") {
    EpisodeLog log;
    log.patient_id = 42;
    log.first_day = 3;
    log.weight = 81.25;
    log.nominal_tdd = 46.3125;
    Rng rng(5);
    for (int i = 0; i < 2 * kStepsPerDay; ++i) {
        StepRecord s;
        s.cgm = rng.uniform(40, 400);
        s.rate_uph = rng.uniform(0, 10);
        s.bolus_u = (i % 97 == 0) ? rng.uniform(0, 8) : 0.0;
        s.carbs_announced = (i % 97 == 0) ? 60.0 : 0.0;
        s.flags = static_cast<uint8_t>(i % 32);
        log.steps.push_back(s);
    }
    log.meals.push_back({450, 62.5, true});
    log.meals.push_back({1200, 30.0, false});

    const auto path = (std::filesystem::temp_directory_path() /
                       ("glyrl_episode_" + std::to_string(::getpid()) + ".csv")).string();
    save_episode_csv(log, path);
    auto back = load_episode_csv(path);
    std::filesystem::remove(path);

    CHECK(back.patient_id == 42);
    CHECK(back.first_day == 3);
    CHECK(back.weight == 81.25);
    CHECK(back.nominal_tdd == 46.3125);
    REQUIRE(back.steps.size() == log.steps.size());
    for (size_t i = 0; i < log.steps.size(); ++i) {
        CHECK(back.steps[i].cgm == log.steps[i].cgm);
        CHECK(back.steps[i].rate_uph == log.steps[i].rate_uph);
        CHECK(back.steps[i].bolus_u == log.steps[i].bolus_u);
        CHECK(back.steps[i].carbs_announced == log.steps[i].carbs_announced);
        CHECK(back.steps[i].flags == log.steps[i].flags);
    }
    REQUIRE(back.meals.size() == 2);
    CHECK(back.meals[0].time_min == 450);
    CHECK(back.meals[0].carbs == 62.5);
    CHECK(back.meals[0].announced);
    CHECK(!back.meals[1].announced);
    CHECK(back.days() == 2);
    CHECK(back.clock_min(0) == 0);
    CHECK(back.clock_min(288) == 0);
    CHECK(back.day_of(288) == 4);
}
