#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "glyrl/agents.hpp"
#include "glyrl/datastore.hpp"
#include "glyrl/rewards.hpp"

// Fitted Q-evaluation: train a Q network for a FIXED policy on logged
// transitions, then read scalar estimates off it. With an indicator reward
// the (1-gamma)-scaled value is a time-in-range style percentage, which is
// what makes offline policy ranking possible without touching a simulator.
// This module deliberately knows nothing about how the data was produced.

namespace glyrl::fqe {

struct FqeConfig {
    double gamma = 0.99;
    uint32_t batch_size = 256;
    uint64_t gradient_steps = 20000;
    double lr = 1e-3;
    uint32_t target_refresh = 200;  // hard target copy cadence, in steps
    std::vector<size_t> hidden = {128, 128};
    double divergence_q = 1e6;
    uint64_t seed = 1;

    void validate() const;
};

nlohmann::json fqe_config_to_json(const FqeConfig& cfg);
FqeConfig fqe_config_from_json(const nlohmann::json& j);

struct FqeModel {
    nn::Mlp<float> q;  // Q(s, a) on normalized states, internal actions
    rewards::RewardKind kind = rewards::RewardKind::magni;
    FqeConfig config;
    uint64_t policy_hash = 0;  // content hash of the evaluated policy
};

// Train Q for the given policy. Actions the policy takes on next-states are
// precomputed once (the policy is fixed). warm_start seeds Q from a previous
// model of the same layout; curve_csv, when non-empty, logs the TD loss.
FqeModel fqe_train(const datastore::Dataset& data, const agents::PolicyArtifact& policy,
                   rewards::RewardKind kind, const FqeConfig& cfg, const FqeModel* warm_start = nullptr,
                   const std::string& curve_csv = "");

// (1-gamma) * mean Q(s, pi(s)) over the dataset's states, scaled to percent
// for indicator rewards.
double fqe_value(const FqeModel& m, const datastore::Dataset& data, const agents::PolicyArtifact& policy);

bool indicator_kind(rewards::RewardKind k);

struct RankedPolicy {
    size_t index = 0;        // position in the candidate list
    uint64_t hash = 0;       // artifact content hash
    double estimate = 0;     // FQE read-out, valid when ok
    bool ok = false;
    std::string error;       // why evaluation failed, when !ok
};

// Evaluate every candidate with its own FQE run and sort best-first.
// Per-candidate seeds derive from the artifact hash, so byte-identical
// candidates get byte-identical estimates; exact ties order by hash.
// Candidates whose evaluation throws are appended unranked.
std::vector<RankedPolicy> rank_policies(const datastore::Dataset& data,
                                        const std::vector<const agents::PolicyArtifact*>& candidates,
                                        rewards::RewardKind kind, const FqeConfig& cfg);

}  // namespace glyrl::fqe
