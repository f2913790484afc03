#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "glyrl/datastore.hpp"
#include "glyrl/nn.hpp"

// Offline RL over the continuous insulin-rate action: TD3-BC, BCQ, CQL (on
// the shared twin-critic deterministic-actor skeleton), and a plain
// behavioral-cloning baseline. Actions live in [-1,1] internally and map
// affinely to [0,10] U/h at the boundary.

namespace glyrl::agents {

enum class Algo : uint8_t { td3bc = 0, bcq = 1, cql = 2, bc = 3 };

Algo algo_from_string(const std::string& s);
std::string to_string(Algo a);

struct AgentConfig {
    Algo algo = Algo::td3bc;
    double gamma = 0.99;
    uint32_t batch_size = 256;
    uint64_t gradient_steps = 15000;
    double actor_lr = 3e-4, critic_lr = 3e-4;
    double tau = 0.005;  // Polyak
    // TD3-BC
    double alpha = 2.5;  // RL-vs-BC trade-off
    uint32_t policy_delay = 2;
    double target_noise = 0.2, noise_clip = 0.5;
    // BCQ
    double phi = 0.05;  // perturbation bound, fraction of max internal action
    uint32_t n_candidates = 10;
    uint32_t latent_dim = 2;
    // CQL
    double alpha_cql = 5.0;
    uint32_t n_sampled_actions = 10;

    std::vector<size_t> hidden = {128, 128};
    double divergence_q = 1e6;
    uint64_t seed = 1;

    void validate() const;
};

nlohmann::json agent_config_to_json(const AgentConfig& cfg);
AgentConfig agent_config_from_json(const nlohmann::json& j);

// lambda = alpha / mean|Q| (TD3-BC actor loss scale)
double td3bc_lambda(double alpha, double q_abs_mean);

// A trained (or initialized) policy with everything evaluation needs.
struct PolicyArtifact {
    Algo algo = Algo::td3bc;
    nn::Mlp<float> actor;                       // td3bc / cql / bc
    nn::Mlp<float> critic1, critic2;            // empty for bc
    nn::Mlp<float> vae_enc, vae_dec, perturb;   // bcq only
    statefeat::Normalizer normalizer;           // identity unless fitted
    AgentConfig config;
    uint64_t train_steps = 0;

    uint32_t state_dim() const { return normalizer.dim; }

    // Deterministic evaluation-mode action on an already-normalized state,
    // internal scale.
    float act_internal(const float* norm_state) const;
    // Raw-state convenience: normalize, evaluate, map to U/h in [0,10].
    double act_uph(const double* raw_state, uint32_t dim) const;

    uint64_t content_hash() const;
};

void save_policy(const PolicyArtifact& p, const std::string& path);
PolicyArtifact load_policy(const std::string& path);

struct TrainStats {
    uint64_t step = 0;
    double critic_loss = 0, actor_loss = 0, aux_loss = 0, q_mean = 0;
};

class Trainer {
  public:
    Trainer(const datastore::Dataset& data, AgentConfig cfg);
    ~Trainer();
    Trainer(const Trainer&) = delete;
    Trainer& operator=(const Trainer&) = delete;

    // Start from an existing artifact instead of fresh init (fine-tuning).
    // Optimizer state and target nets are rebuilt; step count restarts.
    void warm_start(const PolicyArtifact& from);

    TrainStats step();
    uint64_t steps_done() const;
    PolicyArtifact snapshot() const;

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

using CheckpointHook = std::function<void(uint64_t step, const PolicyArtifact&)>;

struct TrainOptions {
    std::string curve_csv;            // empty = no curve file
    uint64_t checkpoint_interval = 0; // 0 = no intermediate checkpoints
    CheckpointHook on_checkpoint;     // also called at step 0 when interval > 0
    uint64_t log_every = 100;
    const PolicyArtifact* warm_start = nullptr;
};

// Deterministic given (dataset bytes, config, seed). Throws on divergence
// (|mean Q| beyond config.divergence_q) or non-finite losses.
PolicyArtifact train(const datastore::Dataset& data, const AgentConfig& cfg,
                     const TrainOptions& opt = {});

}  // namespace glyrl::agents
