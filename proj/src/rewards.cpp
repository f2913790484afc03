#include "glyrl/rewards.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

#include "glyrl/common.hpp"

namespace glyrl::rewards {

namespace {

// Magni glycemia risk. The risk is zero at the glycemia solving
// (ln g)^0.8353 = 3.7932 (about 139 mg/dL) and grows toward both hypo- and
// hyperglycemia; the reward is its negative.
double magni_risk(double g) {
    const double f = 3.5506 * (std::pow(std::log(g), 0.8353) - 3.7932);
    return 10.0 * f * f;
}

}  // namespace

double reward(RewardKind kind, double glycemia) {
    require(std::isfinite(glycemia) && glycemia > 0, "reward needs finite positive glycemia");
    // all kinds are constant outside the CGM-representable range, so clamping
    // changes nothing and keeps magni's log-power well defined
    const double g = std::clamp(glycemia, 20.0, 600.0);
    switch (kind) {
        case RewardKind::binary:
        case RewardKind::tir_indicator:
            return (g >= 70.0 && g <= 180.0) ? 1.0 : 0.0;
        case RewardKind::tbr_indicator:
            return g < 70.0 ? 1.0 : 0.0;
        case RewardKind::tar_indicator:
            return g > 180.0 ? 1.0 : 0.0;
        case RewardKind::zhu:
            if (g >= 90.0 && g <= 140.0) return 1.0;
            if ((g >= 70.0 && g < 90.0) || (g > 140.0 && g <= 180.0)) return 0.1;
            if (g > 180.0 && g <= 300.0) return -1.0;
            return -2.0;
        case RewardKind::magni:
            return -magni_risk(g);
        case RewardKind::triangle:
            if (g < 40.0 || g > 180.0) return 0.0;
            return std::max(0.0, 1.0 - std::fabs(g - 110.0) / 70.0);
    }
    throw std::invalid_argument("unknown reward kind");
}

RewardKind reward_kind_from_string(const std::string& s) {
    for (RewardKind k : all_reward_kinds()) {
        if (to_string(k) == s) return k;
    }
    throw std::invalid_argument("unknown reward kind '" + s + "'");
}

std::string to_string(RewardKind kind) {
    switch (kind) {
        case RewardKind::binary: return "binary";
        case RewardKind::zhu: return "zhu";
        case RewardKind::magni: return "magni";
        case RewardKind::triangle: return "triangle";
        case RewardKind::tir_indicator: return "tir_indicator";
        case RewardKind::tbr_indicator: return "tbr_indicator";
        case RewardKind::tar_indicator: return "tar_indicator";
    }
    return "?";
}

std::vector<RewardKind> all_reward_kinds() {
    return {RewardKind::binary, RewardKind::zhu, RewardKind::magni, RewardKind::triangle,
            RewardKind::tir_indicator, RewardKind::tbr_indicator, RewardKind::tar_indicator};
}

RewardBounds reward_bounds(RewardKind kind) {
    switch (kind) {
        case RewardKind::binary:
        case RewardKind::tir_indicator:
        case RewardKind::tbr_indicator:
        case RewardKind::tar_indicator:
        case RewardKind::triangle:
            return {0.0, 1.0};
        case RewardKind::zhu:
            return {-2.0, 1.0};
        case RewardKind::magni:
            return {std::min(reward(kind, 20.0), reward(kind, 600.0)), 0.0};
    }
    throw std::invalid_argument("unknown reward kind");
}

namespace {

// Pearson correlation with quad-precision accumulators. The identity cases
// (daily indicator-reward sum vs the matching metric, which are exact affine
// images of the same integer count) must come out as exactly 1.0 in double;
// accumulating the moment sums in __float128 keeps every intermediate exact
// enough that the final r^2 rounds to 1.0 before the square root.
double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    using quad = __float128;
    const size_t n = x.size();
    quad sx = 0, sy = 0, sxy = 0, sxx = 0, syy = 0;
    for (size_t i = 0; i < n; ++i) {
        const quad xi = x[i], yi = y[i];
        sx += xi;
        sy += yi;
        sxy += xi * yi;
        sxx += xi * xi;
        syy += yi * yi;
    }
    const quad qn = static_cast<quad>(n);
    const quad num = qn * sxy - sx * sy;
    const quad d1 = qn * sxx - sx * sx;
    const quad d2 = qn * syy - sy * sy;
    if (!(d1 > 0) || !(d2 > 0)) return std::numeric_limits<double>::quiet_NaN();
    const double r2 = std::min(1.0, static_cast<double>((num / d1) * (num / d2)));
    const double r = std::sqrt(r2);
    return num < 0 ? -r : r;
}

}  // namespace

std::vector<CorrelationRow> reward_metric_correlation(const std::vector<EpisodeLog>& episodes,
                                                      const std::vector<RewardKind>& kinds) {
    // collect one sample per full patient-day
    std::vector<clinical::ClinicalMetrics> day_metrics;
    std::vector<std::vector<double>> day_sums(kinds.size());
    for (const auto& log : episodes) {
        const size_t full_days = log.steps.size() / kStepsPerDay;
        for (size_t d = 0; d < full_days; ++d) {
            std::vector<double> cgm(kStepsPerDay);
            for (int i = 0; i < kStepsPerDay; ++i) cgm[i] = log.steps[d * kStepsPerDay + i].cgm;
            day_metrics.push_back(clinical::compute(cgm));
            for (size_t k = 0; k < kinds.size(); ++k) {
                double s = 0;
                for (double g : cgm) s += reward(kinds[k], g);
                day_sums[k].push_back(s);
            }
        }
    }
    require(day_metrics.size() >= 10, "correlation analysis needs at least 10 patient-days");

    const size_t nd = day_metrics.size();
    std::array<std::vector<double>, 6> cols;
    for (auto& c : cols) c.resize(nd);
    for (size_t i = 0; i < nd; ++i) {
        cols[0][i] = day_metrics[i].tir;
        cols[1][i] = day_metrics[i].tbr;
        cols[2][i] = day_metrics[i].tbr54;
        cols[3][i] = day_metrics[i].tar;
        cols[4][i] = day_metrics[i].cv;
        cols[5][i] = day_metrics[i].mean_glycemia;
    }

    std::vector<CorrelationRow> rows;
    for (size_t k = 0; k < kinds.size(); ++k) {
        CorrelationRow row;
        row.kind = kinds[k];
        row.tir = pearson(day_sums[k], cols[0]);
        row.tbr = pearson(day_sums[k], cols[1]);
        row.tbr54 = pearson(day_sums[k], cols[2]);
        row.tar = pearson(day_sums[k], cols[3]);
        row.cv = pearson(day_sums[k], cols[4]);
        row.mean_glycemia = pearson(day_sums[k], cols[5]);
        rows.push_back(row);
    }
    std::stable_sort(rows.begin(), rows.end(), [](const CorrelationRow& a, const CorrelationRow& b) {
        const double ka = std::isnan(a.tir) ? -1.0 : std::fabs(a.tir);
        const double kb = std::isnan(b.tir) ? -1.0 : std::fabs(b.tir);
        return ka > kb;
    });
    return rows;
}

std::string correlation_csv(const std::vector<CorrelationRow>& rows) {
    std::string out = "reward,corr_tir,corr_tbr,corr_tbr54,corr_tar,corr_cv,corr_mean_glycemia\n";
    auto cell = [](double v) -> std::string {
        if (std::isnan(v)) return "NA";
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.10g", v);
        return buf;
    };
    for (const auto& r : rows) {
        out += to_string(r.kind) + "," + cell(r.tir) + "," + cell(r.tbr) + "," + cell(r.tbr54) + "," +
               cell(r.tar) + "," + cell(r.cv) + "," + cell(r.mean_glycemia) + "\n";
    }
    return out;
}

}  // namespace glyrl::rewards
