#include "glyrl/datastore.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "glyrl/checkpoint.hpp"
#include "glyrl/common.hpp"

namespace glyrl::datastore {

std::vector<float> Dataset::rewards(rewards::RewardKind kind) const {
    std::vector<float> out(next_cgm.size());
    for (size_t i = 0; i < next_cgm.size(); ++i)
        out[i] = static_cast<float>(rewards::reward(kind, next_cgm[i]));
    return out;
}

void Dataset::check() const {
    const size_t n = actions.size();
    require(state_dim > 0, "dataset state_dim unset");
    require(states.size() == n * state_dim && next_states.size() == n * state_dim &&
                next_cgm.size() == n && done.size() == n && patient.size() == n &&
                day.size() == n && step.size() == n,
            "dataset columns disagree on length");
    require(normalizer.dim == state_dim, "normalizer dimension mismatch");
}

void append_transitions(RawTransitions& out, const EpisodeLog& log, const BuildOptions& opt) {
    const size_t n = log.steps.size();
    require(n >= 13, "episode too short to emit transitions");
    require(out.state_dim == statefeat::kStateDim, "raw transition buffer has a foreign dim");

    // Closed-loop coverage per local day.
    const size_t days = log.days();
    std::vector<double> coverage(days, 1.0);
    for (size_t d = 0; d < days; ++d) {
        const size_t lo = d * kStepsPerDay, hi = std::min(n, lo + kStepsPerDay);
        size_t closed = 0;
        for (size_t t = lo; t < hi; ++t)
            if (!(log.steps[t].flags & kFlagOpenLoop)) ++closed;
        coverage[d] = static_cast<double>(closed) / static_cast<double>(hi - lo);
    }

    // States reused between consecutive transitions: state(t+1) is both the
    // next-state of t and the state of t+1.
    std::vector<statefeat::State> cache(n);
    for (size_t t = 11; t < n; ++t) {
        auto s = statefeat::build_state(log, t, opt.features);
        require(s.has_value(), "state construction failed past the history window");
        cache[t] = *s;
    }

    out.stats.skipped_history += 12;  // steps 0..10 plus the terminal step
    for (size_t t = 11; t + 1 < n; ++t) {
        const double action_uph = log.steps[t].rate_uph + log.steps[t].bolus_u * 12.0;
        if (action_uph > kActionLimitUph) {
            ++out.stats.excluded_over_limit;
            continue;
        }
        if (opt.coverage_filter) {
            const size_t w_lo = t >= 12 ? t - 12 : 0;
            bool bad = false;
            for (size_t d = w_lo / kStepsPerDay; d <= (t + 1) / kStepsPerDay; ++d)
                if (coverage[d] < opt.min_coverage) bad = true;
            if (bad) {
                ++out.stats.dropped_low_coverage;
                continue;
            }
        }
        out.s.push_back(cache[t]);
        out.s2.push_back(cache[t + 1]);
        out.action_internal.push_back(std::clamp(to_internal_action(action_uph), -1.0, 1.0));
        out.next_cgm.push_back(static_cast<float>(log.steps[t + 1].cgm));
        out.done.push_back(t + 2 == n ? 1 : 0);
        out.patient.push_back(log.patient_id);
        out.day.push_back(log.day_of(t));
        out.step.push_back(static_cast<uint32_t>(t));
        ++out.stats.emitted;
    }
}

Dataset assemble(const RawTransitions& raw, const statefeat::Normalizer& norm,
                 const std::string& reward_kind, nlohmann::json provenance) {
    require(norm.dim == raw.state_dim, "normalizer dimension mismatch");
    rewards::reward_kind_from_string(reward_kind);  // validate the tag early

    Dataset d;
    d.state_dim = raw.state_dim;
    d.reward_kind = reward_kind;
    d.normalizer = norm;
    const size_t n = raw.size();
    d.states.resize(n * d.state_dim);
    d.next_states.resize(n * d.state_dim);
    d.actions.resize(n);
    double buf[statefeat::kStateDim];
    for (size_t i = 0; i < n; ++i) {
        norm.apply(raw.s[i].data(), buf);
        for (uint32_t k = 0; k < d.state_dim; ++k)
            d.states[i * d.state_dim + k] = static_cast<float>(buf[k]);
        norm.apply(raw.s2[i].data(), buf);
        for (uint32_t k = 0; k < d.state_dim; ++k)
            d.next_states[i * d.state_dim + k] = static_cast<float>(buf[k]);
        d.actions[i] = static_cast<float>(raw.action_internal[i]);
    }
    d.next_cgm = raw.next_cgm;
    d.done = raw.done;
    d.patient = raw.patient;
    d.day = raw.day;
    d.step = raw.step;

    d.provenance = std::move(provenance);
    d.provenance["build_stats"] = {{"emitted", raw.stats.emitted},
                                   {"excluded_over_limit", raw.stats.excluded_over_limit},
                                   {"dropped_low_coverage", raw.stats.dropped_low_coverage},
                                   {"skipped_history", raw.stats.skipped_history}};
    d.check();
    return d;
}

std::vector<Dataset> chronological_split(const Dataset& d, const std::vector<double>& fractions) {
    d.check();
    require(!fractions.empty(), "need at least one split fraction");
    double sum = 0;
    for (double f : fractions) {
        require(f > 0, "split fractions must be positive");
        sum += f;
    }
    require(std::abs(sum - 1.0) < 1e-9, "split fractions must sum to 1");
    const size_t k_segments = fractions.size();

    // patient -> ordered distinct days -> segment index
    std::map<uint32_t, std::vector<uint32_t>> patient_days;
    for (size_t i = 0; i < d.size(); ++i) patient_days[d.patient[i]].push_back(d.day[i]);
    std::map<uint32_t, std::map<uint32_t, size_t>> day_segment;
    for (auto& [pid, days] : patient_days) {
        std::sort(days.begin(), days.end());
        days.erase(std::unique(days.begin(), days.end()), days.end());
        const size_t n_days = days.size();
        require(n_days >= k_segments, "patient has fewer days than split segments");
        std::vector<size_t> counts(k_segments);
        size_t assigned = 0;
        for (size_t k = 0; k < k_segments; ++k) {
            counts[k] = static_cast<size_t>(std::floor(fractions[k] * static_cast<double>(n_days)));
            assigned += counts[k];
        }
        for (size_t k = 0; assigned < n_days; k = (k + 1) % k_segments) {
            ++counts[k];  // earlier segments absorb the remainder
            ++assigned;
        }
        for (size_t k = 0; k < k_segments; ++k)
            require(counts[k] >= 1, "split leaves an empty segment");
        size_t cursor = 0;
        for (size_t k = 0; k < k_segments; ++k)
            for (size_t j = 0; j < counts[k]; ++j) day_segment[pid][days[cursor++]] = k;
    }

    std::vector<Dataset> out(k_segments);
    for (size_t k = 0; k < k_segments; ++k) {
        out[k].state_dim = d.state_dim;
        out[k].reward_kind = d.reward_kind;
        out[k].normalizer = d.normalizer;
        out[k].provenance = d.provenance;
        out[k].provenance["split_segment"] = k;
        out[k].provenance["split_fractions"] = fractions;
    }
    for (size_t i = 0; i < d.size(); ++i) {
        Dataset& seg = out[day_segment[d.patient[i]][d.day[i]]];
        seg.states.insert(seg.states.end(), d.state(i), d.state(i) + d.state_dim);
        seg.next_states.insert(seg.next_states.end(), d.next_state(i), d.next_state(i) + d.state_dim);
        seg.actions.push_back(d.actions[i]);
        seg.next_cgm.push_back(d.next_cgm[i]);
        seg.done.push_back(d.done[i]);
        seg.patient.push_back(d.patient[i]);
        seg.day.push_back(d.day[i]);
        seg.step.push_back(d.step[i]);
    }
    for (auto& seg : out) seg.check();
    return out;
}

void save_dataset(const Dataset& d, const std::string& path) {
    d.check();
    ckpt::Writer w(ckpt::kDatasetMagic);
    const uint64_t n = d.size();
    w.add_f32("states", {n, d.state_dim}, d.states.data());
    w.add_f32("next_states", {n, d.state_dim}, d.next_states.data());
    w.add_f32("actions", {n}, d.actions.data());
    w.add_f32("next_cgm", {n}, d.next_cgm.data());
    w.add_u8("done", {n}, d.done.data());
    w.add_u32("patient", {n}, d.patient.data());
    w.add_u32("day", {n}, d.day.data());
    w.add_u32("step", {n}, d.step.data());
    statefeat::append_normalizer(w, "norm", d.normalizer);

    nlohmann::json manifest;
    manifest["schema"] = "dataset/1";
    manifest["state_dim"] = d.state_dim;
    manifest["reward_kind"] = d.reward_kind;
    manifest["count"] = n;
    manifest["provenance"] = d.provenance;
    w.set_manifest(manifest);
    w.save(path);
}

Dataset load_dataset(const std::string& path) {
    const auto r = ckpt::Reader::load(path, ckpt::kDatasetMagic);
    Dataset d;
    const auto& m = r.manifest();
    require(m.value("schema", "") == "dataset/1", "not a dataset file");
    d.state_dim = m.at("state_dim").get<uint32_t>();
    d.reward_kind = m.at("reward_kind").get<std::string>();
    d.provenance = m.value("provenance", nlohmann::json::object());
    d.states = r.f32("states");
    d.next_states = r.f32("next_states");
    d.actions = r.f32("actions");
    d.next_cgm = r.f32("next_cgm");
    d.done = r.u8("done");
    d.patient = r.u32("patient");
    d.day = r.u32("day");
    d.step = r.u32("step");
    d.normalizer = statefeat::read_normalizer(r, "norm");
    require(m.at("count").get<uint64_t>() == d.size(), "dataset count mismatch");
    d.check();
    return d;
}

}  // namespace glyrl::datastore
