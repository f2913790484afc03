#pragma once

#include <string>
#include <vector>

#include "glyrl/clinical.hpp"
#include "glyrl/episode.hpp"

// Scalar reward candidates r(glycemia) and the per-patient-day correlation
// analysis that compares daily reward sums against clinical metrics.

namespace glyrl::rewards {

enum class RewardKind {
    binary,         // 1 on [70,180], else 0 (alias of tir_indicator)
    zhu,            // graded steps: +1 / +0.1 / -1 / -2
    magni,          // negative Magni glycemia risk, 0 at its root (~139 mg/dL)
    triangle,       // tent peaking at 110, reaching 0 at 40 and 180
    tir_indicator,  // 1 iff in [70,180]
    tbr_indicator,  // 1 iff below 70
    tar_indicator,  // 1 iff above 180
};

double reward(RewardKind kind, double glycemia);

RewardKind reward_kind_from_string(const std::string& s);
std::string to_string(RewardKind kind);
std::vector<RewardKind> all_reward_kinds();

// Bounds of each reward on the CGM-representable range [20, 600] mg/dL.
struct RewardBounds {
    double lo = 0, hi = 0;
};
RewardBounds reward_bounds(RewardKind kind);

struct CorrelationRow {
    RewardKind kind;
    // Pearson correlation of daily reward sum vs each metric; NaN when a
    // column is constant (undefined).
    double tir = 0, tbr = 0, tbr54 = 0, tar = 0, cv = 0, mean_glycemia = 0;
};

// One point per patient-day (days shorter than a full 288 steps are skipped).
// Rows come back sorted by |corr with TIR| descending, undefined last.
std::vector<CorrelationRow> reward_metric_correlation(const std::vector<EpisodeLog>& episodes,
                                                      const std::vector<RewardKind>& kinds);

std::string correlation_csv(const std::vector<CorrelationRow>& rows);

}  // namespace glyrl::rewards
