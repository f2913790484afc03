#include "glyrl/statefeat.hpp"

#include <cmath>
#include <numbers>

#include "glyrl/common.hpp"

namespace glyrl::statefeat {

double iob_survival(double dt_min, double dia_min, double peak_min) {
    require(peak_min > 0 && dia_min > 2.0 * peak_min,
            "insulin activity peak must fall in the first half of its duration");
    if (dt_min <= 0) return 1.0;
    if (dt_min >= dia_min) return 0.0;
    // Closed-form integral of the normalized activity curve
    // a(t) = (S/tau^2) * t * (1 - t/dia) * exp(-t/tau), with tau chosen so the
    // peak lands at peak_min and S so the curve integrates to 1 over [0,dia].
    const double tau = peak_min * (1.0 - peak_min / dia_min) / (1.0 - 2.0 * peak_min / dia_min);
    const double a = 2.0 * tau / dia_min;
    const double s = 1.0 / (1.0 - a + (1.0 + a) * std::exp(-dia_min / tau));
    const double t = dt_min;
    return 1.0 - s * (1.0 - a) *
                     ((t * t / (tau * dia_min * (1.0 - a)) - t / tau - 1.0) * std::exp(-t / tau) +
                      1.0);
}

double compute_iob(const std::vector<InsulinEvent>& events, double now_min, double dia_min,
                   double peak_min, uint64_t* warnings) {
    double iob = 0;
    for (const auto& e : events) {
        require(std::isfinite(e.units) && e.units >= 0, "insulin event units must be >= 0");
        if (e.time_min > now_min) {
            if (warnings) ++*warnings;
            continue;
        }
        iob += e.units * iob_survival(now_min - e.time_min, dia_min, peak_min);
    }
    return iob;
}

double compute_cob(const std::vector<CarbEvent>& events, double now_min, double absorption_min,
                   uint64_t* warnings) {
    require(absorption_min > 0, "absorption time must be positive");
    double cob = 0;
    for (const auto& e : events) {
        require(std::isfinite(e.grams) && e.grams >= 0, "carb event grams must be >= 0");
        if (e.time_min > now_min) {
            if (warnings) ++*warnings;
            continue;
        }
        cob += e.grams * std::max(0.0, 1.0 - (now_min - e.time_min) / absorption_min);
    }
    return cob;
}

namespace {

double delivered_uph(const StepRecord& r) { return r.rate_uph + r.bolus_u * 12.0; }

}  // namespace

std::optional<State> build_state(const EpisodeLog& log, size_t step_idx, const FeatureConfig& fc) {
    require(step_idx < log.steps.size(), "step index past the end of the log");
    if (step_idx < 11) return std::nullopt;

    State s{};
    const double basal_pad = 0.5 * log.nominal_tdd / 24.0;

    for (size_t k = 0; k < 12; ++k) s[k] = log.steps[step_idx - 11 + k].cgm;

    for (size_t k = 0; k < 12; ++k) {
        const ptrdiff_t j = static_cast<ptrdiff_t>(step_idx) - 12 + static_cast<ptrdiff_t>(k);
        s[12 + k] = j < 0 ? basal_pad : delivered_uph(log.steps[static_cast<size_t>(j)]);
    }

    double iob = 0;
    for (size_t j = step_idx; j-- > 0;) {
        const double dt = static_cast<double>(step_idx - j) * kStepMinutes;
        if (dt >= fc.dia_min) break;
        const StepRecord& r = log.steps[j];
        iob += (r.rate_uph * kStepMinutes / 60.0 + r.bolus_u) * iob_survival(dt, fc.dia_min, fc.peak_min);
    }
    s[24] = iob;

    double cob = 0;
    for (size_t j = step_idx + 1; j-- > 0;) {
        const double dt = static_cast<double>(step_idx - j) * kStepMinutes;
        if (dt >= fc.cob_absorption_min) break;
        cob += log.steps[j].carbs_announced * (1.0 - dt / fc.cob_absorption_min);
    }
    s[25] = cob;

    if (step_idx >= static_cast<size_t>(kStepsPerDay)) {
        double tdd = 0;
        for (size_t j = step_idx - kStepsPerDay; j < step_idx; ++j) {
            const StepRecord& r = log.steps[j];
            tdd += r.rate_uph * kStepMinutes / 60.0 + r.bolus_u;
        }
        s[26] = tdd;
    } else {
        s[26] = log.nominal_tdd;
    }

    const double ang =
        2.0 * std::numbers::pi * static_cast<double>(log.clock_min(step_idx)) / 1440.0;
    s[27] = std::sin(ang);
    s[28] = std::cos(ang);
    s[29] = log.weight;
    return s;
}

Normalizer Normalizer::identity(uint32_t dim) {
    Normalizer n;
    n.dim = dim;
    n.mean.assign(dim, 0.0);
    n.sd.assign(dim, 1.0);
    n.kind.assign(dim, 1);
    n.fitted_on = "identity";
    return n;
}

void Normalizer::apply(const double* x, double* out) const {
    for (uint32_t i = 0; i < dim; ++i) out[i] = kind[i] == 0 ? (x[i] - mean[i]) / sd[i] : x[i];
}

void Normalizer::invert(const double* x, double* out) const {
    for (uint32_t i = 0; i < dim; ++i) out[i] = kind[i] == 0 ? x[i] * sd[i] + mean[i] : x[i];
}

State Normalizer::apply(const State& s) const {
    require(dim == kStateDim, "normalizer dimension mismatch");
    State out{};
    apply(s.data(), out.data());
    return out;
}

Normalizer fit_normalizer(const double* data, size_t n, uint32_t dim,
                          const std::vector<uint32_t>& pass_through, std::string fitted_on) {
    require(n > 0, "cannot fit a normalizer on an empty dataset");
    Normalizer norm;
    norm.dim = dim;
    norm.mean.assign(dim, 0.0);
    norm.sd.assign(dim, 1.0);
    norm.kind.assign(dim, 0);
    norm.fitted_on = std::move(fitted_on);
    for (uint32_t i : pass_through) {
        require(i < dim, "pass-through index out of range");
        norm.kind[i] = 1;
    }

    for (uint32_t i = 0; i < dim; ++i) {
        if (norm.kind[i] == 1) continue;
        double sum = 0;
        for (size_t r = 0; r < n; ++r) sum += data[r * dim + i];
        const double mean = sum / static_cast<double>(n);
        double sq = 0;
        for (size_t r = 0; r < n; ++r) {
            const double d = data[r * dim + i] - mean;
            sq += d * d;
        }
        const double sd = std::sqrt(sq / static_cast<double>(n));
        if (sd < 1e-9) {
            norm.kind[i] = 1;  // constant feature: flag and pass through
        } else {
            norm.mean[i] = mean;
            norm.sd[i] = sd;
        }
    }
    return norm;
}

Normalizer fit_normalizer(const std::vector<State>& states, std::string fitted_on) {
    require(!states.empty(), "cannot fit a normalizer on an empty dataset");
    return fit_normalizer(states.front().data(), states.size(), kStateDim, {27, 28},
                          std::move(fitted_on));
}

void append_normalizer(ckpt::Writer& w, const std::string& prefix, const Normalizer& n) {
    require(n.dim > 0 && n.mean.size() == n.dim && n.sd.size() == n.dim && n.kind.size() == n.dim,
            "normalizer not initialized");
    w.add_f64(prefix + "/mean", {n.dim}, n.mean.data());
    w.add_f64(prefix + "/sd", {n.dim}, n.sd.data());
    w.add_u8(prefix + "/kind", {n.dim}, n.kind.data());
    std::vector<uint8_t> tag(n.fitted_on.begin(), n.fitted_on.end());
    if (tag.empty()) tag.push_back(0);
    w.add_u8(prefix + "/fitted_on", {tag.size()}, tag.data());
}

Normalizer read_normalizer(const ckpt::Reader& r, const std::string& prefix) {
    Normalizer n;
    n.mean = r.f64(prefix + "/mean");
    n.sd = r.f64(prefix + "/sd");
    n.kind = r.u8(prefix + "/kind");
    n.dim = static_cast<uint32_t>(n.mean.size());
    require(n.sd.size() == n.dim && n.kind.size() == n.dim, "normalizer records disagree on dim");
    const auto tag = r.u8(prefix + "/fitted_on");
    n.fitted_on.assign(tag.begin(), tag.end());
    if (n.fitted_on.size() == 1 && n.fitted_on[0] == '\0') n.fitted_on.clear();
    return n;
}

}  // namespace glyrl::statefeat
