#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "glyrl/agents.hpp"
#include "glyrl/clinical.hpp"
#include "glyrl/controllers.hpp"
#include "glyrl/datastore.hpp"
#include "glyrl/fqe.hpp"
#include "glyrl/glucosim.hpp"

// Orchestration: one config file, one run directory, seven subcommands.
// Every artifact lands under out_dir with a manifest that echoes the full
// effective config, so a run is reproducible from the manifest alone.
//
// Layout written by the commands:
//   manifest.json            config echo + per-command summaries
//   dataset_train.bin        training transitions (normalizer fitted here)
//   dataset_heldout.bin      chronologically later transitions, same normalizer
//   episodes/p<ID>.csv       behavior episode logs
//   correlations.csv         daily reward-sum vs clinical-metric correlations
//   policies/<algo>.policy   trained artifacts
//   curves/<algo>.csv        training curves
//   eval/metrics_<scenario>.csv, eval/traces/<scenario>/<policy>_p<ID>.csv
//   fqe/estimates.json       off-policy estimates on the held-out split
//   personalize/report.json, personalize/audit.csv
//   analyze/basal_vs_future.csv
//   report.md

namespace glyrl::pipeline {

struct CohortConfig {
    uint32_t n_patients = 5;
    uint64_t population_seed = 42;
    int days = 60;
    uint32_t first_day = 0;
};

struct ScenarioConfig {
    bool announce_meals = true;
    bool safety_on = true;
};

struct EvalConfig {
    int days = 14;
    uint64_t seed = 7;
};

struct PersonalizeConfig {
    uint32_t n_patients = 10;
    uint64_t cohort_seed = 99;
    int days = 60;
    // deterministic sensitivity ladder across the cohort, lo..hi
    double sensitivity_lo = 0.7;
    double sensitivity_hi = 1.4;
    uint64_t fine_tune_steps = 2000;
    uint64_t checkpoint_interval = 500;
    fqe::FqeConfig fqe;  // per-candidate evaluation budget (small nets)

    PersonalizeConfig() {
        fqe.gamma = 0.9;  // short effective horizon keeps segment estimates stable
        fqe.hidden = {64, 64};
        fqe.gradient_steps = 8000;
        fqe.target_refresh = 100;  // enough refreshes to contract fully
    }
};

struct AnalyzeConfig {
    std::string policy_a = "td3bc";
    std::string policy_b = "behavior";
    std::string scenario = "announced";
    double bin_lo = 40.0, bin_hi = 400.0, bin_width = 25.0;  // mg/dL
    uint64_t sparse_below = 50;  // samples per bin
};

struct RunConfig {
    std::string out_dir = "run";
    uint64_t seed = 1;
    std::string reward = "magni";
    double train_fraction = 0.75;
    double min_coverage = 0.7;
    CohortConfig cohort;
    ScenarioConfig scenario;
    controllers::BehaviorConfig behavior;
    controllers::SafetyConfig safety;
    statefeat::FeatureConfig features;
    agents::AgentConfig agent;
    fqe::FqeConfig fqe;
    EvalConfig eval;
    PersonalizeConfig personalize;
    AnalyzeConfig analyze;

    void validate() const;
};

nlohmann::json run_config_to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

// Hash of the canonical JSON echo; stamped into every manifest.
uint64_t run_config_hash(const RunConfig& cfg);

// Command-line knobs that override the file.
struct Overrides {
    std::optional<uint64_t> seed;
    std::optional<std::string> scenario;  // "announced" | "unannounced"
    bool no_safety = false;
};
RunConfig apply_overrides(RunConfig cfg, const Overrides& o);

// Deployment wrapper for a trained artifact: the network drives the basal
// rate from the featurized history; announced meals get a calculator bolus
// (when enabled); until a full history window exists it falls back to the
// patient's nominal basal. Compose with controllers::SafetyWrap for the
// hypoglycemia cutoff.
class PolicyController : public glucosim::Controller {
  public:
    PolicyController(const agents::PolicyArtifact& artifact, statefeat::FeatureConfig fc,
                     controllers::BehaviorConfig bolus_cfg, bool meal_boluses);
    void begin_episode(const glucosim::PatientParams& p, Rng& rng) override;
    glucosim::Action act(const glucosim::Observation& obs, Rng& rng) override;

  private:
    const agents::PolicyArtifact& artifact_;
    statefeat::FeatureConfig fc_;
    controllers::BehaviorConfig bolus_cfg_;
    bool meal_boluses_;
    double basal_ = 0, carb_ratio_ = 0, correction_factor_ = 0;
};

struct PatientDataRow {
    uint32_t patient_id = 0;
    double weight = 0, nominal_tdd = 0, delivered_tdd = 0;
    clinical::ClinicalMetrics metrics;
    uint64_t transitions = 0;
};

struct GenDataSummary {
    std::vector<PatientDataRow> patients;
    clinical::ClinicalMetrics cohort;  // over the concatenated series
    uint64_t train_rows = 0, heldout_rows = 0;
    datastore::BuildStats stats;
};

// Simulate the cohort under the behavior policy, filter, split by days,
// fit the normalizer on the training split only, save both datasets.
GenDataSummary cmd_gen_data(const RunConfig& cfg);

struct TrainResult {
    std::string artifact_path;
    uint64_t content_hash = 0;
    agents::TrainStats last;
};

// Train config.agent on dataset_train.bin; artifact + curve land in the run.
TrainResult cmd_train(const RunConfig& cfg);

struct EvalRow {
    std::string policy;
    uint32_t patient_id = 0;
    clinical::ClinicalMetrics metrics;
    double mean_rate_uph = 0;
    uint64_t safety_overrides = 0;
};

struct EvalSummary {
    std::string scenario;
    std::vector<EvalRow> rows;                            // one per (policy, patient)
    std::vector<std::pair<std::string, EvalRow>> cohort;  // policy -> pooled row
    std::string csv_path;
};

// Paired in-silico rollouts: the behavior policy plus every artifact under
// policies/, each patient driven by the same seed for every policy.
EvalSummary cmd_eval(const RunConfig& cfg);

struct FqeEstimate {
    std::string policy;
    uint64_t policy_hash = 0;
    std::string kind;
    double estimate = 0;
    uint64_t n_states = 0;
    std::string dataset_id;
};

// FQE for every artifact under policies/ on the held-out split, for the
// configured reward plus the three indicator kinds.
std::vector<FqeEstimate> cmd_fqe(const RunConfig& cfg);

struct PatientPersonalization {
    uint32_t patient_id = 0;
    double sensitivity_scale = 1.0;
    bool skipped = false;
    std::string skip_reason;
    uint64_t selected_step = 0;
    uint64_t n_candidates = 0;
    uint32_t data_days = 0;
    std::map<std::string, double> population;    // kind -> segment-4 estimate
    std::map<std::string, double> personalized;  // kind -> segment-4 estimate
};

struct PersonalizationReport {
    std::vector<PatientPersonalization> patients;
    uint32_t improved = 0;  // personalized reward estimate beats population
    std::string json_path, audit_path;
};

// The four-segment protocol on a shifted-sensitivity cohort: fine-tune on
// segment 1, FQE every checkpoint on segment 2, select on segment 3, report
// segment 4 for the selected model and the population model. Every dataset
// access is written to the audit log; segment 4 is only ever touched in the
// report phase.
PersonalizationReport cmd_personalize(const RunConfig& cfg);

struct AnalyzeBin {
    double lo = 0, hi = 0;
    uint64_t n_a = 0, n_b = 0;
    double mean_a = 0, mean_b = 0, delta = 0;
    bool sparse = false;
};

struct AnalyzeTable {
    std::vector<AnalyzeBin> bins;
    std::string csv_path;
};

// Basal rate at t binned by glycemia at t+30 min along the logged trajectory,
// policy A vs policy B from the eval traces. Out-of-range samples clamp to
// the edge bins.
AnalyzeTable cmd_analyze(const RunConfig& cfg);

// Merge whatever artifacts exist into report.md; missing sections are
// flagged, never fatal. Regeneration is idempotent.
std::string cmd_report(const RunConfig& cfg);

// CLI entry point (gen-data|train|eval|fqe|personalize|analyze|report).
int run_cli(int argc, char** argv);

}  // namespace glyrl::pipeline
