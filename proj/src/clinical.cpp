#include "glyrl/clinical.hpp"

#include <algorithm>
#include <cmath>

#include "glyrl/common.hpp"

namespace glyrl::clinical {

ClinicalMetrics compute(const double* g, size_t n) {
    require(n > 0, "clinical metrics need a non-empty glycemia series");
    size_t in = 0, below = 0, below54 = 0;
    double sum = 0, sumsq = 0;
    double lo = g[0], hi = g[0];
    for (size_t i = 0; i < n; ++i) {
        const double v = g[i];
        require(std::isfinite(v) && v > 0, "glycemia values must be finite and positive");
        if (v < 70.0) {
            ++below;
            if (v < 54.0) ++below54;
        } else if (v <= 180.0) {
            ++in;
        }
        sum += v;
        sumsq += v * v;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    ClinicalMetrics m;
    m.n = n;
    const double dn = static_cast<double>(n);
    m.tir = 100.0 * static_cast<double>(in) / dn;
    m.tbr = 100.0 * static_cast<double>(below) / dn;
    m.tbr54 = 100.0 * static_cast<double>(below54) / dn;
    // remainder form keeps (tir + tbr) + tar == 100 exact in floating point
    m.tar = 100.0 - (m.tir + m.tbr);
    m.mean_glycemia = sum / dn;
    if (lo == hi) {
        m.cv = 0.0;
    } else {
        const double var = std::max(0.0, sumsq / dn - m.mean_glycemia * m.mean_glycemia);
        m.cv = 100.0 * std::sqrt(var) / m.mean_glycemia;
    }
    return m;
}

ClinicalMetrics compute(const std::vector<double>& glycemia) {
    return compute(glycemia.data(), glycemia.size());
}

}  // namespace glyrl::clinical
