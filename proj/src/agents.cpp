#include "glyrl/agents.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "glyrl/checkpoint.hpp"
#include "glyrl/rng.hpp"

namespace glyrl::agents {

namespace {

uint64_t fnv1a64(const void* data, size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = 1469598103934665603ULL;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

// seed offsets for the per-net init streams
enum : uint64_t { kSeedActor = 1, kSeedC1 = 2, kSeedC2 = 3, kSeedEnc = 4, kSeedDec = 5, kSeedPert = 6, kSeedTrain = 7 };

bool has_actor(Algo a) { return a != Algo::bcq; }
bool has_critics(Algo a) { return a != Algo::bc; }
bool has_vae(Algo a) { return a == Algo::bcq; }

double sq(double x) { return x * x; }

}  // namespace

Algo algo_from_string(const std::string& s) {
    if (s == "td3bc") return Algo::td3bc;
    if (s == "bcq") return Algo::bcq;
    if (s == "cql") return Algo::cql;
    if (s == "bc") return Algo::bc;
    throw std::invalid_argument("unknown algo '" + s + "' (expected td3bc, bcq, cql, or bc)");
}

std::string to_string(Algo a) {
    switch (a) {
        case Algo::td3bc: return "td3bc";
        case Algo::bcq: return "bcq";
        case Algo::cql: return "cql";
        case Algo::bc: return "bc";
    }
    throw std::logic_error("bad Algo value");
}

void AgentConfig::validate() const {
    if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must be in [0,1)");
    if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
    if (!(actor_lr > 0.0) || !(critic_lr > 0.0)) throw std::invalid_argument("learning rates must be positive");
    if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("tau must be in (0,1]");
    if (!(alpha >= 0.0)) throw std::invalid_argument("alpha must be non-negative");
    if (policy_delay == 0) throw std::invalid_argument("policy_delay must be at least 1");
    if (!(target_noise >= 0.0) || !(noise_clip >= 0.0))
        throw std::invalid_argument("target noise parameters must be non-negative");
    if (!(phi >= 0.0)) throw std::invalid_argument("phi must be non-negative");
    if (n_candidates == 0) throw std::invalid_argument("n_candidates must be at least 1");
    if (latent_dim == 0) throw std::invalid_argument("latent_dim must be at least 1");
    if (!(alpha_cql >= 0.0)) throw std::invalid_argument("alpha_cql must be non-negative");
    if (n_sampled_actions == 0) throw std::invalid_argument("n_sampled_actions must be at least 1");
    if (hidden.empty()) throw std::invalid_argument("hidden layout must name at least one layer");
    for (size_t h : hidden)
        if (h == 0) throw std::invalid_argument("hidden widths must be positive");
    if (!(divergence_q > 0.0)) throw std::invalid_argument("divergence_q must be positive");
}

nlohmann::json agent_config_to_json(const AgentConfig& c) {
    return nlohmann::json{{"algo", to_string(c.algo)},
                          {"gamma", c.gamma},
                          {"batch_size", c.batch_size},
                          {"gradient_steps", c.gradient_steps},
                          {"actor_lr", c.actor_lr},
                          {"critic_lr", c.critic_lr},
                          {"tau", c.tau},
                          {"alpha", c.alpha},
                          {"policy_delay", c.policy_delay},
                          {"target_noise", c.target_noise},
                          {"noise_clip", c.noise_clip},
                          {"phi", c.phi},
                          {"n_candidates", c.n_candidates},
                          {"latent_dim", c.latent_dim},
                          {"alpha_cql", c.alpha_cql},
                          {"n_sampled_actions", c.n_sampled_actions},
                          {"hidden", c.hidden},
                          {"divergence_q", c.divergence_q},
                          {"seed", c.seed}};
}

AgentConfig agent_config_from_json(const nlohmann::json& j) {
    AgentConfig c;
    if (j.contains("algo")) c.algo = algo_from_string(j.at("algo").get<std::string>());
    c.gamma = j.value("gamma", c.gamma);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.gradient_steps = j.value("gradient_steps", c.gradient_steps);
    c.actor_lr = j.value("actor_lr", c.actor_lr);
    c.critic_lr = j.value("critic_lr", c.critic_lr);
    c.tau = j.value("tau", c.tau);
    c.alpha = j.value("alpha", c.alpha);
    c.policy_delay = j.value("policy_delay", c.policy_delay);
    c.target_noise = j.value("target_noise", c.target_noise);
    c.noise_clip = j.value("noise_clip", c.noise_clip);
    c.phi = j.value("phi", c.phi);
    c.n_candidates = j.value("n_candidates", c.n_candidates);
    c.latent_dim = j.value("latent_dim", c.latent_dim);
    c.alpha_cql = j.value("alpha_cql", c.alpha_cql);
    c.n_sampled_actions = j.value("n_sampled_actions", c.n_sampled_actions);
    if (j.contains("hidden")) c.hidden = j.at("hidden").get<std::vector<size_t>>();
    c.divergence_q = j.value("divergence_q", c.divergence_q);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
}

double td3bc_lambda(double alpha, double q_abs_mean) { return alpha / q_abs_mean; }

// ---------------------------------------------------------------------------
// PolicyArtifact

float PolicyArtifact::act_internal(const float* norm_state) const {
    const uint32_t sdim = state_dim();
    if (algo != Algo::bcq) {
        float a = 0;
        nn::forward(actor, norm_state, &a);
        return a;
    }
    // BCQ acts by scoring decoded candidates; the candidate draw is keyed on
    // the state bytes so the same state always gets the same action.
    const uint64_t h = fnv1a64(norm_state, sdim * sizeof(float));
    Rng rng(derive_seed(config.seed, h));
    const uint32_t L = config.latent_dim;
    std::vector<float> dec_in(sdim + L), sa(sdim + 1);
    std::memcpy(dec_in.data(), norm_state, sdim * sizeof(float));
    std::memcpy(sa.data(), norm_state, sdim * sizeof(float));
    float best_a = 0;
    double best_q = -std::numeric_limits<double>::infinity();
    for (uint32_t c = 0; c < config.n_candidates; ++c) {
        for (uint32_t j = 0; j < L; ++j)
            dec_in[sdim + j] = static_cast<float>(std::clamp(rng.normal(), -0.5, 0.5));
        float ac = 0;
        nn::forward(vae_dec, dec_in.data(), &ac);
        sa[sdim] = ac;
        float xi = 0;
        nn::forward(perturb, sa.data(), &xi);
        const float ap = static_cast<float>(std::clamp(double(ac) + config.phi * double(xi), -1.0, 1.0));
        sa[sdim] = ap;
        float q = 0;
        nn::forward(critic1, sa.data(), &q);
        if (q > best_q) {
            best_q = q;
            best_a = ap;
        }
    }
    return best_a;
}

double PolicyArtifact::act_uph(const double* raw_state, uint32_t dim) const {
    if (dim != state_dim())
        throw std::invalid_argument("state dim mismatch: got " + std::to_string(dim) + ", policy expects " +
                                    std::to_string(state_dim()));
    std::vector<double> norm(dim);
    normalizer.apply(raw_state, norm.data());
    std::vector<float> nf(norm.begin(), norm.end());
    const double a = act_internal(nf.data());
    return std::clamp(datastore::to_external_rate(a), 0.0, datastore::kActionLimitUph);
}

namespace {

ckpt::Writer build_policy_writer(const PolicyArtifact& p) {
    ckpt::Writer w(ckpt::kPolicyMagic);
    if (has_actor(p.algo)) ckpt::append_mlp(w, "actor", p.actor);
    if (has_critics(p.algo)) {
        ckpt::append_mlp(w, "critic1", p.critic1);
        ckpt::append_mlp(w, "critic2", p.critic2);
    }
    if (has_vae(p.algo)) {
        ckpt::append_mlp(w, "vae_enc", p.vae_enc);
        ckpt::append_mlp(w, "vae_dec", p.vae_dec);
        ckpt::append_mlp(w, "perturb", p.perturb);
    }
    statefeat::append_normalizer(w, "norm", p.normalizer);
    w.set_manifest(nlohmann::json{{"schema", "policy/1"},
                                  {"algo", to_string(p.algo)},
                                  {"train_steps", p.train_steps},
                                  {"state_dim", p.state_dim()},
                                  {"config", agent_config_to_json(p.config)}});
    return w;
}

}  // namespace

uint64_t PolicyArtifact::content_hash() const { return build_policy_writer(*this).content_hash(); }

void save_policy(const PolicyArtifact& p, const std::string& path) { build_policy_writer(p).save(path); }

PolicyArtifact load_policy(const std::string& path) {
    const auto r = ckpt::Reader::load(path, ckpt::kPolicyMagic);
    const auto& m = r.manifest();
    if (m.value("schema", "") != "policy/1")
        throw std::runtime_error(path + ": not a policy checkpoint (schema '" + m.value("schema", "") + "')");
    PolicyArtifact p;
    p.algo = algo_from_string(m.at("algo").get<std::string>());
    p.config = agent_config_from_json(m.at("config"));
    p.train_steps = m.value("train_steps", uint64_t(0));
    if (has_actor(p.algo)) p.actor = ckpt::read_mlp(r, "actor");
    if (has_critics(p.algo)) {
        p.critic1 = ckpt::read_mlp(r, "critic1");
        p.critic2 = ckpt::read_mlp(r, "critic2");
    }
    if (has_vae(p.algo)) {
        p.vae_enc = ckpt::read_mlp(r, "vae_enc");
        p.vae_dec = ckpt::read_mlp(r, "vae_dec");
        p.perturb = ckpt::read_mlp(r, "perturb");
    }
    p.normalizer = statefeat::read_normalizer(r, "norm");
    if (p.normalizer.dim != m.value("state_dim", uint32_t(0)))
        throw std::runtime_error(path + ": manifest state_dim disagrees with stored normalizer");
    return p;
}

// ---------------------------------------------------------------------------
// Trainer

struct Trainer::Impl {
    const datastore::Dataset& data;
    AgentConfig cfg;
    std::vector<float> rewards;
    uint32_t sdim = 0;
    Rng rng;
    uint64_t step_count = 0;

    nn::Mlp<float> actor, actor_t, c1, c1_t, c2, c2_t;
    nn::Mlp<float> enc, dec, pert, pert_t;
    nn::Grads<float> g_actor, g_c1, g_c2, g_enc, g_dec, g_pert;
    nn::AdamState<float> m_actor, m_c1, m_c2, m_enc, m_dec, m_pert;

    // scratch reused across steps
    std::vector<uint32_t> idx;
    std::vector<float> sa, sa2, dx, acts, qv, api, qpi, enc_out, dy_enc, dec_in, dec_dx;
    std::vector<double> mu, ls, sd_, eps;
    std::vector<uint8_t> ls_clamped;
    nn::Tape<float> t_q1, t_q2, t_enc, t_dec, t_pert, t_a1;
    std::vector<nn::Tape<float>> t_actor_b, t_q_b, t_m;

    double last_actor_loss = 0, last_aux = 0;

    Impl(const datastore::Dataset& d, AgentConfig c) : data(d), cfg(std::move(c)), rng(derive_seed(cfg.seed, kSeedTrain)) {
        cfg.validate();
        data.check();
        if (data.size() < cfg.batch_size)
            throw std::invalid_argument("dataset has " + std::to_string(data.size()) +
                                        " transitions, fewer than one batch of " + std::to_string(cfg.batch_size));
        sdim = data.state_dim;
        rewards = data.rewards(rewards::reward_kind_from_string(data.reward_kind));

        std::vector<size_t> asz{sdim};
        asz.insert(asz.end(), cfg.hidden.begin(), cfg.hidden.end());
        asz.push_back(1);
        std::vector<size_t> csz = asz;
        csz.front() = sdim + 1;

        if (has_actor(cfg.algo)) {
            Rng r(derive_seed(cfg.seed, kSeedActor));
            actor = nn::make_mlp<float>(asz, nn::OutAct::tanh_out, r);
            actor_t = actor;
            g_actor = nn::make_grads(actor);
            m_actor = nn::make_adam(actor);
        }
        if (has_critics(cfg.algo)) {
            Rng r1(derive_seed(cfg.seed, kSeedC1)), r2(derive_seed(cfg.seed, kSeedC2));
            c1 = nn::make_mlp<float>(csz, nn::OutAct::identity, r1);
            c2 = nn::make_mlp<float>(csz, nn::OutAct::identity, r2);
            c1_t = c1;
            c2_t = c2;
            g_c1 = nn::make_grads(c1);
            g_c2 = nn::make_grads(c2);
            m_c1 = nn::make_adam(c1);
            m_c2 = nn::make_adam(c2);
        }
        if (has_vae(cfg.algo)) {
            const uint32_t L = cfg.latent_dim;
            std::vector<size_t> esz{sdim + 1};
            esz.insert(esz.end(), cfg.hidden.begin(), cfg.hidden.end());
            esz.push_back(2 * size_t(L));
            std::vector<size_t> dsz{sdim + size_t(L)};
            dsz.insert(dsz.end(), cfg.hidden.begin(), cfg.hidden.end());
            dsz.push_back(1);
            Rng re(derive_seed(cfg.seed, kSeedEnc)), rd(derive_seed(cfg.seed, kSeedDec)), rp(derive_seed(cfg.seed, kSeedPert));
            enc = nn::make_mlp<float>(esz, nn::OutAct::identity, re);
            dec = nn::make_mlp<float>(dsz, nn::OutAct::tanh_out, rd);
            pert = nn::make_mlp<float>(csz, nn::OutAct::tanh_out, rp);
            pert_t = pert;
            g_enc = nn::make_grads(enc);
            g_dec = nn::make_grads(dec);
            g_pert = nn::make_grads(pert);
            m_enc = nn::make_adam(enc);
            m_dec = nn::make_adam(dec);
            m_pert = nn::make_adam(pert);
        }

        const uint32_t B = cfg.batch_size;
        idx.resize(B);
        sa.resize(sdim + 1);
        sa2.resize(sdim + 1);
        dx.resize(sdim + 1);
        if (cfg.algo == Algo::cql) {
            const uint32_t M = cfg.n_sampled_actions + 2;
            acts.resize(M);
            qv.resize(M);
            t_m.resize(M);
        }
        if (has_actor(cfg.algo) && cfg.algo != Algo::bc) {
            api.resize(B);
            qpi.resize(B);
            t_actor_b.resize(B);
            t_q_b.resize(B);
        }
        if (has_vae(cfg.algo)) {
            const uint32_t L = cfg.latent_dim;
            enc_out.resize(2 * L);
            dy_enc.resize(2 * L);
            dec_in.resize(sdim + L);
            dec_dx.resize(sdim + L);
            mu.resize(L);
            ls.resize(L);
            sd_.resize(L);
            eps.resize(L);
            ls_clamped.resize(L);
        }
    }

    void fill_sa(std::vector<float>& buf, const float* s, float a) const {
        std::memcpy(buf.data(), s, sdim * sizeof(float));
        buf[sdim] = a;
    }

    void sample_batch() {
        for (auto& i : idx) i = static_cast<uint32_t>(rng.below(data.size()));
    }

    void adam(nn::Mlp<float>& net, const nn::Grads<float>& g, nn::AdamState<float>& st, double lr, const char* name) {
        nn::adam_step(net, g, st, float(lr), 0.9f, 0.999f, 1e-8f, name);
    }

    void guard(const TrainStats& st) const {
        if (!std::isfinite(st.critic_loss) || !std::isfinite(st.actor_loss) || !std::isfinite(st.aux_loss) ||
            !std::isfinite(st.q_mean))
            throw std::runtime_error("non-finite training loss at step " + std::to_string(st.step));
        if (std::fabs(st.q_mean) > cfg.divergence_q)
            throw std::runtime_error("training diverged at step " + std::to_string(st.step) + ": |mean Q| = " +
                                     std::to_string(std::fabs(st.q_mean)) + " exceeds " +
                                     std::to_string(cfg.divergence_q));
    }

    TrainStats step() {
        TrainStats st;
        st.step = step_count + 1;
        switch (cfg.algo) {
            case Algo::td3bc:
            case Algo::cql:
                step_twin(st);
                break;
            case Algo::bcq:
                step_bcq(st);
                break;
            case Algo::bc:
                step_bc(st);
                break;
        }
        guard(st);
        ++step_count;
        return st;
    }

    // Shared TD3 skeleton. CQL adds the conservative penalty on both critics
    // and drops the BC term from the actor update; with alpha_cql == 0 the
    // penalty branch is skipped entirely so the step is plain TD3.
    void step_twin(TrainStats& st) {
        const uint32_t B = cfg.batch_size;
        const bool cql = cfg.algo == Algo::cql;
        const bool penalty = cql && cfg.alpha_cql != 0.0;
        const double data_term = cql ? cfg.alpha_cql : 0.0;
        sample_batch();
        g_c1.zero();
        g_c2.zero();
        double closs = 0, qmean = 0, gap = 0;
        for (uint32_t i = 0; i < B; ++i) {
            const uint32_t ix = idx[i];
            const float* s = data.state(ix);
            const float* s2 = data.next_state(ix);
            const float a = data.actions[ix];
            const double r = rewards[ix];
            const double nd = data.done[ix] ? 0.0 : 1.0;

            float a2 = 0;
            nn::forward(actor_t, s2, &a2);
            const double noise = std::clamp(rng.normal() * cfg.target_noise, -cfg.noise_clip, cfg.noise_clip);
            const float a2n = static_cast<float>(std::clamp(double(a2) + noise, -1.0, 1.0));
            fill_sa(sa2, s2, a2n);
            float q1t = 0, q2t = 0;
            nn::forward(c1_t, sa2.data(), &q1t);
            nn::forward(c2_t, sa2.data(), &q2t);
            const double y = r + cfg.gamma * nd * double(std::min(q1t, q2t));

            fill_sa(sa, s, a);
            float q1 = 0, q2 = 0;
            nn::forward(c1, sa.data(), &t_q1, &q1);
            nn::forward(c2, sa.data(), &t_q2, &q2);
            const float dy1 = static_cast<float>((2.0 * (double(q1) - y) - data_term) / B);
            const float dy2 = static_cast<float>((2.0 * (double(q2) - y) - data_term) / B);
            nn::backward(c1, t_q1, &dy1, g_c1);
            nn::backward(c2, t_q2, &dy2, g_c2);
            closs += (sq(double(q1) - y) + sq(double(q2) - y)) / B;
            qmean += double(q1) / B;

            if (penalty) {
                const uint32_t N = cfg.n_sampled_actions, M = N + 2;
                for (uint32_t j = 0; j < N; ++j) acts[j] = static_cast<float>(rng.uniform(-1.0, 1.0));
                float api_s = 0, api_s2 = 0;
                nn::forward(actor, s, &api_s);
                nn::forward(actor, s2, &api_s2);
                acts[N] = api_s;
                acts[N + 1] = api_s2;
                // every sample is scored against the uniform density 1/2 on
                // [-1,1], so the importance correction is a shared +log 2
                const double logm_corr = std::log(2.0) - std::log(double(M));
                for (int which = 0; which < 2; ++which) {
                    auto& c = which == 0 ? c1 : c2;
                    auto& g = which == 0 ? g_c1 : g_c2;
                    const double q_data = which == 0 ? q1 : q2;
                    double maxv = -std::numeric_limits<double>::infinity();
                    for (uint32_t j = 0; j < M; ++j) {
                        fill_sa(sa, s, acts[j]);
                        nn::forward(c, sa.data(), &t_m[j], &qv[j]);
                        maxv = std::max(maxv, double(qv[j]));
                    }
                    double sum = 0;
                    for (uint32_t j = 0; j < M; ++j) sum += std::exp(double(qv[j]) - maxv);
                    const double lse = maxv + std::log(sum);
                    closs += cfg.alpha_cql * (lse + logm_corr - q_data) / B;
                    for (uint32_t j = 0; j < M; ++j) {
                        const float dyj =
                            static_cast<float>(cfg.alpha_cql * (std::exp(double(qv[j]) - maxv) / sum) / B);
                        nn::backward(c, t_m[j], &dyj, g);
                    }
                    if (which == 0) {
                        double u_mean = 0;
                        for (uint32_t j = 0; j < N; ++j) u_mean += double(qv[j]) / N;
                        gap += (u_mean - q_data) / B;
                    }
                }
            }
        }
        adam(c1, g_c1, m_c1, cfg.critic_lr, "critic1");
        adam(c2, g_c2, m_c2, cfg.critic_lr, "critic2");

        if ((step_count + 1) % cfg.policy_delay == 0) {
            g_actor.zero();
            double qsum = 0;
            for (uint32_t i = 0; i < B; ++i) {
                const float* s = data.state(idx[i]);
                nn::forward(actor, s, &t_actor_b[i], &api[i]);
                fill_sa(sa, s, api[i]);
                nn::forward(c1, sa.data(), &t_q_b[i], &qpi[i]);
                qsum += std::fabs(double(qpi[i]));
            }
            const double lam = cql ? 1.0 : td3bc_lambda(cfg.alpha, qsum / B);
            double aloss = 0, bc_mse = 0;
            for (uint32_t i = 0; i < B; ++i) {
                const float dq = static_cast<float>(-lam / B);
                nn::backward_input(c1, t_q_b[i], &dq, dx.data());
                double da = double(dx[sdim]);
                if (!cql) {
                    const double diff = double(api[i]) - double(data.actions[idx[i]]);
                    da += 2.0 * diff / B;
                    bc_mse += sq(diff) / B;
                }
                const float daf = static_cast<float>(da);
                nn::backward(actor, t_actor_b[i], &daf, g_actor);
                aloss += -lam * double(qpi[i]) / B;
            }
            aloss += bc_mse;
            adam(actor, g_actor, m_actor, cfg.actor_lr, "actor");
            nn::polyak_update(actor_t, actor, float(cfg.tau));
            nn::polyak_update(c1_t, c1, float(cfg.tau));
            nn::polyak_update(c2_t, c2, float(cfg.tau));
            last_actor_loss = aloss;
            if (!cql) last_aux = bc_mse;
        }
        st.critic_loss = closs;
        st.actor_loss = last_actor_loss;
        st.aux_loss = cql ? gap : last_aux;
        st.q_mean = qmean;
    }

    void step_bcq(TrainStats& st) {
        const uint32_t B = cfg.batch_size, L = cfg.latent_dim;
        sample_batch();

        // 1. conditional VAE on the data actions
        g_enc.zero();
        g_dec.zero();
        double vloss = 0;
        for (uint32_t i = 0; i < B; ++i) {
            const uint32_t ix = idx[i];
            const float* s = data.state(ix);
            const float a = data.actions[ix];
            fill_sa(sa, s, a);
            nn::forward(enc, sa.data(), &t_enc, enc_out.data());
            std::memcpy(dec_in.data(), s, sdim * sizeof(float));
            for (uint32_t j = 0; j < L; ++j) {
                mu[j] = double(enc_out[j]);
                const double raw = double(enc_out[L + j]);
                ls_clamped[j] = (raw < -4.0 || raw > 15.0) ? 1 : 0;
                ls[j] = std::clamp(raw, -4.0, 15.0);
                sd_[j] = std::exp(ls[j]);
                eps[j] = rng.normal();
                dec_in[sdim + j] = static_cast<float>(mu[j] + sd_[j] * eps[j]);
            }
            float arec = 0;
            nn::forward(dec, dec_in.data(), &t_dec, &arec);
            double kl = 0;
            for (uint32_t j = 0; j < L; ++j) kl += -0.5 * (1.0 + 2.0 * ls[j] - sq(mu[j]) - std::exp(2.0 * ls[j]));
            vloss += (sq(double(arec) - a) + 0.5 * kl) / B;

            const float drec = static_cast<float>(2.0 * (double(arec) - a) / B);
            nn::backward(dec, t_dec, &drec, &g_dec, dec_dx.data());
            for (uint32_t j = 0; j < L; ++j) {
                const double dz = double(dec_dx[sdim + j]);
                // reparametrized z = mu + exp(ls)*eps; the clamp on ls kills
                // its gradient when the raw output sits outside the band
                dy_enc[j] = static_cast<float>(dz + 0.5 * mu[j] / B);
                dy_enc[L + j] =
                    ls_clamped[j] ? 0.0f
                                  : static_cast<float>(dz * sd_[j] * eps[j] + 0.5 * (std::exp(2.0 * ls[j]) - 1.0) / B);
            }
            nn::backward(enc, t_enc, dy_enc.data(), g_enc);
        }
        adam(enc, g_enc, m_enc, cfg.actor_lr, "vae_enc");
        adam(dec, g_dec, m_dec, cfg.actor_lr, "vae_dec");

        // 2. twin critics against the best perturbed decoded candidate
        g_c1.zero();
        g_c2.zero();
        double closs = 0, qmean = 0;
        for (uint32_t i = 0; i < B; ++i) {
            const uint32_t ix = idx[i];
            const float* s = data.state(ix);
            const float* s2 = data.next_state(ix);
            const float a = data.actions[ix];
            const double r = rewards[ix];
            const double nd = data.done[ix] ? 0.0 : 1.0;

            double best = -std::numeric_limits<double>::infinity();
            std::memcpy(dec_in.data(), s2, sdim * sizeof(float));
            for (uint32_t c = 0; c < cfg.n_candidates; ++c) {
                for (uint32_t j = 0; j < L; ++j)
                    dec_in[sdim + j] = static_cast<float>(std::clamp(rng.normal(), -0.5, 0.5));
                float ac = 0;
                nn::forward(dec, dec_in.data(), &ac);
                fill_sa(sa2, s2, ac);
                float xi = 0;
                nn::forward(pert_t, sa2.data(), &xi);
                const float ap = static_cast<float>(std::clamp(double(ac) + cfg.phi * double(xi), -1.0, 1.0));
                fill_sa(sa2, s2, ap);
                float q1t = 0, q2t = 0;
                nn::forward(c1_t, sa2.data(), &q1t);
                nn::forward(c2_t, sa2.data(), &q2t);
                const double q = 0.75 * double(std::min(q1t, q2t)) + 0.25 * double(std::max(q1t, q2t));
                best = std::max(best, q);
            }
            const double y = r + cfg.gamma * nd * best;

            fill_sa(sa, s, a);
            float q1 = 0, q2 = 0;
            nn::forward(c1, sa.data(), &t_q1, &q1);
            nn::forward(c2, sa.data(), &t_q2, &q2);
            const float dy1 = static_cast<float>(2.0 * (double(q1) - y) / B);
            const float dy2 = static_cast<float>(2.0 * (double(q2) - y) / B);
            nn::backward(c1, t_q1, &dy1, g_c1);
            nn::backward(c2, t_q2, &dy2, g_c2);
            closs += (sq(double(q1) - y) + sq(double(q2) - y)) / B;
            qmean += double(q1) / B;
        }
        adam(c1, g_c1, m_c1, cfg.critic_lr, "critic1");
        adam(c2, g_c2, m_c2, cfg.critic_lr, "critic2");

        // 3. perturbation network ascends critic1 at decoded actions
        g_pert.zero();
        double ploss = 0;
        for (uint32_t i = 0; i < B; ++i) {
            const float* s = data.state(idx[i]);
            std::memcpy(dec_in.data(), s, sdim * sizeof(float));
            for (uint32_t j = 0; j < L; ++j)
                dec_in[sdim + j] = static_cast<float>(std::clamp(rng.normal(), -0.5, 0.5));
            float ac = 0;
            nn::forward(dec, dec_in.data(), &ac);
            fill_sa(sa, s, ac);
            float xi = 0;
            nn::forward(pert, sa.data(), &t_pert, &xi);
            const double apr = double(ac) + cfg.phi * double(xi);
            const bool clipped = apr < -1.0 || apr > 1.0;
            fill_sa(sa, s, static_cast<float>(std::clamp(apr, -1.0, 1.0)));
            float q = 0;
            nn::forward(c1, sa.data(), &t_q1, &q);
            ploss += -double(q) / B;
            const float dq = static_cast<float>(-1.0 / B);
            nn::backward_input(c1, t_q1, &dq, dx.data());
            const float dxi = clipped ? 0.0f : static_cast<float>(double(dx[sdim]) * cfg.phi);
            nn::backward(pert, t_pert, &dxi, g_pert);
        }
        adam(pert, g_pert, m_pert, cfg.actor_lr, "perturb");

        nn::polyak_update(c1_t, c1, float(cfg.tau));
        nn::polyak_update(c2_t, c2, float(cfg.tau));
        nn::polyak_update(pert_t, pert, float(cfg.tau));

        st.critic_loss = closs;
        st.actor_loss = ploss;
        st.aux_loss = vloss;
        st.q_mean = qmean;
    }

    void step_bc(TrainStats& st) {
        const uint32_t B = cfg.batch_size;
        sample_batch();
        g_actor.zero();
        double mse = 0;
        for (uint32_t i = 0; i < B; ++i) {
            const uint32_t ix = idx[i];
            float out = 0;
            nn::forward(actor, data.state(ix), &t_a1, &out);
            const double diff = double(out) - double(data.actions[ix]);
            const float da = static_cast<float>(2.0 * diff / B);
            nn::backward(actor, t_a1, &da, g_actor);
            mse += sq(diff) / B;
        }
        adam(actor, g_actor, m_actor, cfg.actor_lr, "actor");
        st.critic_loss = 0;
        st.actor_loss = mse;
        st.aux_loss = 0;
        st.q_mean = 0;
    }

    PolicyArtifact snapshot() const {
        PolicyArtifact p;
        p.algo = cfg.algo;
        p.config = cfg;
        p.train_steps = step_count;
        p.normalizer = data.normalizer;
        if (has_actor(cfg.algo)) p.actor = actor;
        if (has_critics(cfg.algo)) {
            p.critic1 = c1;
            p.critic2 = c2;
        }
        if (has_vae(cfg.algo)) {
            p.vae_enc = enc;
            p.vae_dec = dec;
            p.perturb = pert;
        }
        return p;
    }

    void warm_start(const PolicyArtifact& from) {
        if (from.algo != cfg.algo)
            throw std::invalid_argument("warm start algo mismatch: artifact is " + to_string(from.algo) +
                                        ", trainer is " + to_string(cfg.algo));
        if (from.state_dim() != sdim)
            throw std::invalid_argument("warm start state dim mismatch");
        auto take = [](nn::Mlp<float>& dst, const nn::Mlp<float>& src, const char* what) {
            if (src.sizes != dst.sizes)
                throw std::invalid_argument(std::string("warm start ") + what + " layout mismatch");
            dst = src;
        };
        if (has_actor(cfg.algo)) {
            take(actor, from.actor, "actor");
            actor_t = actor;
            m_actor = nn::make_adam(actor);
        }
        if (has_critics(cfg.algo)) {
            take(c1, from.critic1, "critic1");
            take(c2, from.critic2, "critic2");
            c1_t = c1;
            c2_t = c2;
            m_c1 = nn::make_adam(c1);
            m_c2 = nn::make_adam(c2);
        }
        if (has_vae(cfg.algo)) {
            take(enc, from.vae_enc, "vae_enc");
            take(dec, from.vae_dec, "vae_dec");
            take(pert, from.perturb, "perturb");
            pert_t = pert;
            m_enc = nn::make_adam(enc);
            m_dec = nn::make_adam(dec);
            m_pert = nn::make_adam(pert);
        }
        step_count = 0;
    }
};

Trainer::Trainer(const datastore::Dataset& data, AgentConfig cfg) : impl_(std::make_unique<Impl>(data, std::move(cfg))) {}
Trainer::~Trainer() = default;
void Trainer::warm_start(const PolicyArtifact& from) { impl_->warm_start(from); }
TrainStats Trainer::step() { return impl_->step(); }
uint64_t Trainer::steps_done() const { return impl_->step_count; }
PolicyArtifact Trainer::snapshot() const { return impl_->snapshot(); }

PolicyArtifact train(const datastore::Dataset& data, const AgentConfig& cfg, const TrainOptions& opt) {
    Trainer t(data, cfg);
    if (opt.warm_start) t.warm_start(*opt.warm_start);
    std::ofstream curve;
    if (!opt.curve_csv.empty()) {
        curve.open(opt.curve_csv, std::ios::trunc);
        if (!curve) throw std::runtime_error("cannot write training curve to " + opt.curve_csv);
        curve << "step,critic_loss,actor_loss,aux_loss,q_mean\n";
    }
    const bool hooks = opt.checkpoint_interval > 0 && opt.on_checkpoint;
    if (hooks) opt.on_checkpoint(0, t.snapshot());
    for (uint64_t k = 1; k <= cfg.gradient_steps; ++k) {
        const TrainStats st = t.step();
        if (curve.is_open() && (k == 1 || k == cfg.gradient_steps || (opt.log_every > 0 && k % opt.log_every == 0)))
            curve << st.step << ',' << st.critic_loss << ',' << st.actor_loss << ',' << st.aux_loss << ',' << st.q_mean
                  << '\n';
        if (hooks && k % opt.checkpoint_interval == 0) opt.on_checkpoint(k, t.snapshot());
    }
    if (hooks && cfg.gradient_steps % opt.checkpoint_interval != 0)
        opt.on_checkpoint(cfg.gradient_steps, t.snapshot());
    return t.snapshot();
}

}  // namespace glyrl::agents
