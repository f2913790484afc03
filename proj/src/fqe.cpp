#include "glyrl/fqe.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "glyrl/rng.hpp"

namespace glyrl::fqe {

void FqeConfig::validate() const {
    if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("fqe gamma must be in [0,1)");
    if (batch_size == 0) throw std::invalid_argument("fqe batch_size must be positive");
    if (!(lr > 0.0)) throw std::invalid_argument("fqe lr must be positive");
    if (target_refresh == 0) throw std::invalid_argument("fqe target_refresh must be at least 1");
    if (hidden.empty()) throw std::invalid_argument("fqe hidden layout must name at least one layer");
    for (size_t h : hidden)
        if (h == 0) throw std::invalid_argument("fqe hidden widths must be positive");
    if (!(divergence_q > 0.0)) throw std::invalid_argument("fqe divergence_q must be positive");
}

nlohmann::json fqe_config_to_json(const FqeConfig& c) {
    return nlohmann::json{{"gamma", c.gamma},         {"batch_size", c.batch_size},
                          {"gradient_steps", c.gradient_steps}, {"lr", c.lr},
                          {"target_refresh", c.target_refresh}, {"hidden", c.hidden},
                          {"divergence_q", c.divergence_q},     {"seed", c.seed}};
}

FqeConfig fqe_config_from_json(const nlohmann::json& j) {
    FqeConfig c;
    c.gamma = j.value("gamma", c.gamma);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.gradient_steps = j.value("gradient_steps", c.gradient_steps);
    c.lr = j.value("lr", c.lr);
    c.target_refresh = j.value("target_refresh", c.target_refresh);
    if (j.contains("hidden")) c.hidden = j.at("hidden").get<std::vector<size_t>>();
    c.divergence_q = j.value("divergence_q", c.divergence_q);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
}

bool indicator_kind(rewards::RewardKind k) {
    using rewards::RewardKind;
    return k == RewardKind::tir_indicator || k == RewardKind::tbr_indicator || k == RewardKind::tar_indicator;
}

FqeModel fqe_train(const datastore::Dataset& data, const agents::PolicyArtifact& policy,
                   rewards::RewardKind kind, const FqeConfig& cfg, const FqeModel* warm_start,
                   const std::string& curve_csv) {
    cfg.validate();
    data.check();
    if (data.size() < cfg.batch_size)
        throw std::invalid_argument("fqe dataset has " + std::to_string(data.size()) +
                                    " transitions, fewer than one batch of " + std::to_string(cfg.batch_size));
    if (policy.state_dim() != data.state_dim)
        throw std::invalid_argument("policy expects state dim " + std::to_string(policy.state_dim()) +
                                    ", dataset has " + std::to_string(data.state_dim));

    const uint32_t sdim = data.state_dim;
    const size_t n = data.size();
    const std::vector<float> rew = data.rewards(kind);

    // the policy is fixed, so its next-state actions never change
    std::vector<float> pi2(n);
    for (size_t i = 0; i < n; ++i) pi2[i] = policy.act_internal(data.next_state(i));

    std::vector<size_t> qsz{size_t(sdim) + 1};
    qsz.insert(qsz.end(), cfg.hidden.begin(), cfg.hidden.end());
    qsz.push_back(1);

    FqeModel m;
    m.kind = kind;
    m.config = cfg;
    m.policy_hash = policy.content_hash();
    if (warm_start) {
        if (warm_start->q.sizes != qsz) throw std::invalid_argument("fqe warm start layout mismatch");
        m.q = warm_start->q;
    } else {
        Rng init(derive_seed(cfg.seed, 11));
        m.q = nn::make_mlp<float>(qsz, nn::OutAct::identity, init);
    }
    nn::Mlp<float> q_t = m.q;
    auto grads = nn::make_grads(m.q);
    auto adam = nn::make_adam(m.q);
    Rng rng(derive_seed(cfg.seed, 13));

    std::ofstream curve;
    if (!curve_csv.empty()) {
        curve.open(curve_csv, std::ios::trunc);
        if (!curve) throw std::runtime_error("cannot write fqe curve to " + curve_csv);
        curve << "step,td_loss,q_mean\n";
    }

    std::vector<float> sa(sdim + 1), sa2(sdim + 1);
    nn::Tape<float> tape;
    const uint32_t B = cfg.batch_size;
    for (uint64_t k = 1; k <= cfg.gradient_steps; ++k) {
        grads.zero();
        double loss = 0, qm = 0;
        for (uint32_t i = 0; i < B; ++i) {
            const auto ix = static_cast<size_t>(rng.below(n));
            const double nd = data.done[ix] ? 0.0 : 1.0;
            std::memcpy(sa2.data(), data.next_state(ix), sdim * sizeof(float));
            sa2[sdim] = pi2[ix];
            float qt = 0;
            nn::forward(q_t, sa2.data(), &qt);
            const double y = double(rew[ix]) + cfg.gamma * nd * double(qt);
            std::memcpy(sa.data(), data.state(ix), sdim * sizeof(float));
            sa[sdim] = data.actions[ix];
            float qv = 0;
            nn::forward(m.q, sa.data(), &tape, &qv);
            const float dy = static_cast<float>(2.0 * (double(qv) - y) / B);
            nn::backward(m.q, tape, &dy, grads);
            loss += (double(qv) - y) * (double(qv) - y) / B;
            qm += double(qv) / B;
        }
        nn::adam_step(m.q, grads, adam, float(cfg.lr), 0.9f, 0.999f, 1e-8f, "fqe_q");
        if (!std::isfinite(loss) || !std::isfinite(qm))
            throw std::runtime_error("fqe non-finite loss at step " + std::to_string(k));
        if (std::fabs(qm) > cfg.divergence_q)
            throw std::runtime_error("fqe diverged at step " + std::to_string(k) + ": |mean Q| = " +
                                     std::to_string(std::fabs(qm)));
        if (k % cfg.target_refresh == 0) q_t = m.q;
        if (curve.is_open() && (k == 1 || k == cfg.gradient_steps || k % 100 == 0))
            curve << k << ',' << loss << ',' << qm << '\n';
    }
    return m;
}

double fqe_value(const FqeModel& m, const datastore::Dataset& data, const agents::PolicyArtifact& policy) {
    data.check();
    const uint32_t sdim = data.state_dim;
    if (m.q.in_dim() != size_t(sdim) + 1)
        throw std::invalid_argument("fqe model expects state dim " + std::to_string(m.q.in_dim() - 1) +
                                    ", dataset has " + std::to_string(sdim));
    if (data.size() == 0) throw std::invalid_argument("fqe_value needs a non-empty dataset");
    std::vector<float> sa(sdim + 1);
    double sum = 0;
    for (size_t i = 0; i < data.size(); ++i) {
        std::memcpy(sa.data(), data.state(i), sdim * sizeof(float));
        sa[sdim] = policy.act_internal(data.state(i));
        float qv = 0;
        nn::forward(m.q, sa.data(), &qv);
        sum += double(qv);
    }
    const double v = (1.0 - m.config.gamma) * sum / double(data.size());
    return indicator_kind(m.kind) ? 100.0 * v : v;
}

std::vector<RankedPolicy> rank_policies(const datastore::Dataset& data,
                                        const std::vector<const agents::PolicyArtifact*>& candidates,
                                        rewards::RewardKind kind, const FqeConfig& cfg) {
    if (candidates.size() < 2)
        throw std::invalid_argument("ranking needs at least two candidates");
    std::vector<RankedPolicy> out(candidates.size());
    for (size_t i = 0; i < candidates.size(); ++i) {
        auto& r = out[i];
        r.index = i;
        if (!candidates[i]) {
            r.error = "null candidate";
            continue;
        }
        r.hash = candidates[i]->content_hash();
        FqeConfig ci = cfg;
        ci.seed = derive_seed(cfg.seed, r.hash);
        try {
            const FqeModel m = fqe_train(data, *candidates[i], kind, ci);
            r.estimate = fqe_value(m, data, *candidates[i]);
            r.ok = true;
        } catch (const std::exception& e) {
            r.error = e.what();
        }
    }
    std::stable_sort(out.begin(), out.end(), [](const RankedPolicy& a, const RankedPolicy& b) {
        if (a.ok != b.ok) return a.ok;  // failures sink to the back
        if (!a.ok) return false;        // failed ones keep list order
        if (a.estimate != b.estimate) return a.estimate > b.estimate;
        return a.hash < b.hash;
    });
    return out;
}

}  // namespace glyrl::fqe
