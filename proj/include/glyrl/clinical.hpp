#pragma once

#include <cstddef>
#include <vector>

// Standard CGM summary metrics over a glycemia series. Boundary convention:
// 70 and 180 mg/dL count as in-range, so TIR/TBR/TAR partition the series and
// tir + tbr + tar == 100 holds exactly (tar is defined as the remainder).

namespace glyrl::clinical {

struct ClinicalMetrics {
    double tir = 0;    // % of readings in [70, 180]
    double tbr = 0;    // % below 70
    double tbr54 = 0;  // % below 54
    double tar = 0;    // % above 180, stored as 100 - (tir + tbr)
    double cv = 0;     // 100 * population sd / mean; 0 for constant series
    double mean_glycemia = 0;
    size_t n = 0;
};

ClinicalMetrics compute(const double* glycemia, size_t n);
ClinicalMetrics compute(const std::vector<double>& glycemia);

}  // namespace glyrl::clinical
