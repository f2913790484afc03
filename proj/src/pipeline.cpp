#include "glyrl/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <tuple>

#include <CLI11.hpp>

#include "glyrl/common.hpp"
#include "glyrl/rewards.hpp"

namespace glyrl::pipeline {

namespace fs = std::filesystem;

namespace {

std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::string fixed2(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

void write_file(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::trunc | std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << content;
    if (!f) throw std::runtime_error("short write to " + path.string());
}

std::string read_file(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

uint64_t file_hash(const fs::path& path) {
    const std::string bytes = read_file(path);
    return fnv1a64(bytes.data(), bytes.size());
}

nlohmann::json read_json(const fs::path& path) { return nlohmann::json::parse(read_file(path)); }

// -------- config serialization --------

nlohmann::json behavior_to_json(const controllers::BehaviorConfig& c) {
    return {{"target_glycemia", c.target_glycemia},
            {"kp", c.kp},
            {"ki", c.ki},
            {"kd", c.kd},
            {"bolus_conservatism", c.bolus_conservatism},
            {"correction_threshold", c.correction_threshold},
            {"manual_modification_rate", c.manual_modification_rate},
            {"manual_bolus_rate", c.manual_bolus_rate},
            {"open_loop_gap_rate", c.open_loop_gap_rate},
            {"gap_frac_lo", c.gap_frac_lo},
            {"gap_frac_hi", c.gap_frac_hi}};
}

controllers::BehaviorConfig behavior_from_json(const nlohmann::json& j) {
    controllers::BehaviorConfig c;
    c.target_glycemia = j.value("target_glycemia", c.target_glycemia);
    c.kp = j.value("kp", c.kp);
    c.ki = j.value("ki", c.ki);
    c.kd = j.value("kd", c.kd);
    c.bolus_conservatism = j.value("bolus_conservatism", c.bolus_conservatism);
    c.correction_threshold = j.value("correction_threshold", c.correction_threshold);
    c.manual_modification_rate = j.value("manual_modification_rate", c.manual_modification_rate);
    c.manual_bolus_rate = j.value("manual_bolus_rate", c.manual_bolus_rate);
    c.open_loop_gap_rate = j.value("open_loop_gap_rate", c.open_loop_gap_rate);
    c.gap_frac_lo = j.value("gap_frac_lo", c.gap_frac_lo);
    c.gap_frac_hi = j.value("gap_frac_hi", c.gap_frac_hi);
    return c;
}

nlohmann::json safety_to_json(const controllers::SafetyConfig& c) {
    return {{"regression_window", c.regression_window},
            {"horizons", c.horizons},
            {"cutoff_threshold", c.cutoff_threshold}};
}

controllers::SafetyConfig safety_from_json(const nlohmann::json& j) {
    controllers::SafetyConfig c;
    c.regression_window = j.value("regression_window", c.regression_window);
    c.horizons = j.value("horizons", c.horizons);
    c.cutoff_threshold = j.value("cutoff_threshold", c.cutoff_threshold);
    return c;
}

nlohmann::json features_to_json(const statefeat::FeatureConfig& c) {
    return {{"dia_min", c.dia_min},
            {"peak_min", c.peak_min},
            {"cob_absorption_min", c.cob_absorption_min}};
}

statefeat::FeatureConfig features_from_json(const nlohmann::json& j) {
    statefeat::FeatureConfig c;
    c.dia_min = j.value("dia_min", c.dia_min);
    c.peak_min = j.value("peak_min", c.peak_min);
    c.cob_absorption_min = j.value("cob_absorption_min", c.cob_absorption_min);
    return c;
}

// -------- run directory paths --------

struct Paths {
    fs::path root;
    explicit Paths(const RunConfig& cfg) : root(cfg.out_dir) {}
    fs::path manifest() const { return root / "manifest.json"; }
    fs::path train_ds() const { return root / "dataset_train.bin"; }
    fs::path heldout_ds() const { return root / "dataset_heldout.bin"; }
    fs::path episodes() const { return root / "episodes"; }
    fs::path correlations() const { return root / "correlations.csv"; }
    fs::path policies() const { return root / "policies"; }
    fs::path policy(const std::string& name) const { return policies() / (name + ".policy"); }
    fs::path curve(const std::string& name) const { return root / "curves" / (name + ".csv"); }
    fs::path eval_csv(const std::string& scenario) const {
        return root / "eval" / ("metrics_" + scenario + ".csv");
    }
    fs::path traces(const std::string& scenario) const { return root / "eval" / "traces" / scenario; }
    fs::path fqe_json() const { return root / "fqe" / "estimates.json"; }
    fs::path pers_json() const { return root / "personalize" / "report.json"; }
    fs::path pers_audit() const { return root / "personalize" / "audit.csv"; }
    fs::path analyze_csv() const { return root / "analyze" / "basal_vs_future.csv"; }
    fs::path report() const { return root / "report.md"; }
};

void update_manifest(const RunConfig& cfg, const std::string& section, nlohmann::json body) {
    const Paths p(cfg);
    nlohmann::json j;
    if (fs::exists(p.manifest())) j = read_json(p.manifest());
    j["format"] = "glyrl-run/1";
    j["config"] = run_config_to_json(cfg);
    j["config_hash"] = hex64(run_config_hash(cfg));
    j["sections"][section] = std::move(body);
    write_file(p.manifest(), j.dump(2) + "\n");
}

std::string scenario_name(const RunConfig& cfg) {
    return cfg.scenario.announce_meals ? "announced" : "unannounced";
}

// Trained artifacts present in the run, sorted by name for stable iteration.
std::vector<std::pair<std::string, fs::path>> list_policies(const Paths& p) {
    std::vector<std::pair<std::string, fs::path>> out;
    if (!fs::exists(p.policies())) return out;
    for (const auto& e : fs::directory_iterator(p.policies()))
        if (e.path().extension() == ".policy") out.emplace_back(e.path().stem().string(), e.path());
    std::sort(out.begin(), out.end());
    return out;
}

clinical::ClinicalMetrics metrics_of(const EpisodeLog& log) {
    std::vector<double> g(log.steps.size());
    for (size_t i = 0; i < g.size(); ++i) g[i] = log.steps[i].cgm;
    return clinical::compute(g);
}

// The reward configured for training plus the three indicator kinds, deduped.
std::vector<rewards::RewardKind> estimate_kinds(const RunConfig& cfg) {
    std::vector<rewards::RewardKind> kinds = {rewards::reward_kind_from_string(cfg.reward),
                                              rewards::RewardKind::tir_indicator,
                                              rewards::RewardKind::tbr_indicator,
                                              rewards::RewardKind::tar_indicator};
    std::vector<rewards::RewardKind> out;
    for (auto k : kinds)
        if (std::find(out.begin(), out.end(), k) == out.end()) out.push_back(k);
    return out;
}

uint64_t count_safety_overrides(const EpisodeLog& log) {
    uint64_t n = 0;
    for (const auto& s : log.steps) n += (s.flags & kFlagSafetyOverride) ? 1 : 0;
    return n;
}

double mean_rate(const EpisodeLog& log) {
    if (log.steps.empty()) return 0;
    double sum = 0;
    for (const auto& s : log.steps) sum += s.rate_uph;
    return sum / static_cast<double>(log.steps.size());
}

}  // namespace

// -------- RunConfig --------

void RunConfig::validate() const {
    require(!out_dir.empty(), "out_dir must be set");
    require(cohort.n_patients >= 1, "cohort needs at least one patient");
    require(cohort.days >= 2, "cohort needs at least two days for the split");
    require(train_fraction > 0 && train_fraction < 1, "train_fraction must be in (0,1)");
    require(min_coverage >= 0 && min_coverage <= 1, "min_coverage must be in [0,1]");
    require(eval.days >= 1, "eval needs at least one day");
    require(personalize.n_patients >= 1, "personalization needs at least one patient");
    require(personalize.days >= 4, "personalization needs at least four days for its segments");
    require(personalize.sensitivity_lo > 0 && personalize.sensitivity_hi >= personalize.sensitivity_lo,
            "sensitivity ladder must be positive and ordered");
    require(personalize.checkpoint_interval > 0, "checkpoint_interval must be positive");
    require(analyze.bin_width > 0 && analyze.bin_hi > analyze.bin_lo,
            "analyze bins must have positive width and ordered edges");
    rewards::reward_kind_from_string(reward);  // throws on unknown tag
    controllers::validate_behavior_config(behavior);
    controllers::validate_safety_config(safety);
    agent.validate();
    fqe.validate();
    personalize.fqe.validate();
}

nlohmann::json run_config_to_json(const RunConfig& cfg) {
    nlohmann::json j;
    j["out_dir"] = cfg.out_dir;
    j["seed"] = cfg.seed;
    j["reward"] = cfg.reward;
    j["train_fraction"] = cfg.train_fraction;
    j["min_coverage"] = cfg.min_coverage;
    j["cohort"] = {{"n_patients", cfg.cohort.n_patients},
                   {"population_seed", cfg.cohort.population_seed},
                   {"days", cfg.cohort.days},
                   {"first_day", cfg.cohort.first_day}};
    j["scenario"] = {{"announce_meals", cfg.scenario.announce_meals},
                     {"safety_on", cfg.scenario.safety_on}};
    j["behavior"] = behavior_to_json(cfg.behavior);
    j["safety"] = safety_to_json(cfg.safety);
    j["features"] = features_to_json(cfg.features);
    j["agent"] = agents::agent_config_to_json(cfg.agent);
    j["fqe"] = fqe::fqe_config_to_json(cfg.fqe);
    j["eval"] = {{"days", cfg.eval.days}, {"seed", cfg.eval.seed}};
    j["personalize"] = {{"n_patients", cfg.personalize.n_patients},
                        {"cohort_seed", cfg.personalize.cohort_seed},
                        {"days", cfg.personalize.days},
                        {"sensitivity_lo", cfg.personalize.sensitivity_lo},
                        {"sensitivity_hi", cfg.personalize.sensitivity_hi},
                        {"fine_tune_steps", cfg.personalize.fine_tune_steps},
                        {"checkpoint_interval", cfg.personalize.checkpoint_interval},
                        {"fqe", fqe::fqe_config_to_json(cfg.personalize.fqe)}};
    j["analyze"] = {{"policy_a", cfg.analyze.policy_a},
                    {"policy_b", cfg.analyze.policy_b},
                    {"scenario", cfg.analyze.scenario},
                    {"bin_lo", cfg.analyze.bin_lo},
                    {"bin_hi", cfg.analyze.bin_hi},
                    {"bin_width", cfg.analyze.bin_width},
                    {"sparse_below", cfg.analyze.sparse_below}};
    return j;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
    RunConfig cfg;
    cfg.out_dir = j.value("out_dir", cfg.out_dir);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.reward = j.value("reward", cfg.reward);
    cfg.train_fraction = j.value("train_fraction", cfg.train_fraction);
    cfg.min_coverage = j.value("min_coverage", cfg.min_coverage);
    if (j.contains("cohort")) {
        const auto& c = j.at("cohort");
        cfg.cohort.n_patients = c.value("n_patients", cfg.cohort.n_patients);
        cfg.cohort.population_seed = c.value("population_seed", cfg.cohort.population_seed);
        cfg.cohort.days = c.value("days", cfg.cohort.days);
        cfg.cohort.first_day = c.value("first_day", cfg.cohort.first_day);
    }
    if (j.contains("scenario")) {
        const auto& s = j.at("scenario");
        cfg.scenario.announce_meals = s.value("announce_meals", cfg.scenario.announce_meals);
        cfg.scenario.safety_on = s.value("safety_on", cfg.scenario.safety_on);
    }
    if (j.contains("behavior")) cfg.behavior = behavior_from_json(j.at("behavior"));
    if (j.contains("safety")) cfg.safety = safety_from_json(j.at("safety"));
    if (j.contains("features")) cfg.features = features_from_json(j.at("features"));
    if (j.contains("agent")) cfg.agent = agents::agent_config_from_json(j.at("agent"));
    if (j.contains("fqe")) cfg.fqe = fqe::fqe_config_from_json(j.at("fqe"));
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        cfg.eval.days = e.value("days", cfg.eval.days);
        cfg.eval.seed = e.value("seed", cfg.eval.seed);
    }
    if (j.contains("personalize")) {
        const auto& p = j.at("personalize");
        cfg.personalize.n_patients = p.value("n_patients", cfg.personalize.n_patients);
        cfg.personalize.cohort_seed = p.value("cohort_seed", cfg.personalize.cohort_seed);
        cfg.personalize.days = p.value("days", cfg.personalize.days);
        cfg.personalize.sensitivity_lo = p.value("sensitivity_lo", cfg.personalize.sensitivity_lo);
        cfg.personalize.sensitivity_hi = p.value("sensitivity_hi", cfg.personalize.sensitivity_hi);
        cfg.personalize.fine_tune_steps = p.value("fine_tune_steps", cfg.personalize.fine_tune_steps);
        cfg.personalize.checkpoint_interval =
            p.value("checkpoint_interval", cfg.personalize.checkpoint_interval);
        if (p.contains("fqe")) cfg.personalize.fqe = fqe::fqe_config_from_json(p.at("fqe"));
    }
    if (j.contains("analyze")) {
        const auto& a = j.at("analyze");
        cfg.analyze.policy_a = a.value("policy_a", cfg.analyze.policy_a);
        cfg.analyze.policy_b = a.value("policy_b", cfg.analyze.policy_b);
        cfg.analyze.scenario = a.value("scenario", cfg.analyze.scenario);
        cfg.analyze.bin_lo = a.value("bin_lo", cfg.analyze.bin_lo);
        cfg.analyze.bin_hi = a.value("bin_hi", cfg.analyze.bin_hi);
        cfg.analyze.bin_width = a.value("bin_width", cfg.analyze.bin_width);
        cfg.analyze.sparse_below = a.value("sparse_below", cfg.analyze.sparse_below);
    }
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::string& path) { return run_config_from_json(read_json(path)); }

uint64_t run_config_hash(const RunConfig& cfg) {
    // identifies the experiment, not its location: two runs of one config in
    // different directories produce byte-identical artifacts
    nlohmann::json j = run_config_to_json(cfg);
    j.erase("out_dir");
    return fnv1a64(j.dump());
}

RunConfig apply_overrides(RunConfig cfg, const Overrides& o) {
    if (o.seed) {
        // one knob re-seeds every stage coherently
        cfg.seed = *o.seed;
        cfg.agent.seed = derive_seed(*o.seed, 0xA6E27ull);
        cfg.fqe.seed = derive_seed(*o.seed, 0xF9E00ull);
        cfg.personalize.fqe.seed = derive_seed(*o.seed, 0x9E125ull);
        cfg.eval.seed = derive_seed(*o.seed, 0xE7A1ull);
    }
    if (o.scenario) {
        require(*o.scenario == "announced" || *o.scenario == "unannounced",
                "scenario must be announced or unannounced");
        cfg.scenario.announce_meals = (*o.scenario == "announced");
    }
    if (o.no_safety) cfg.scenario.safety_on = false;
    cfg.validate();
    return cfg;
}

// -------- PolicyController --------

PolicyController::PolicyController(const agents::PolicyArtifact& artifact, statefeat::FeatureConfig fc,
                                   controllers::BehaviorConfig bolus_cfg, bool meal_boluses)
    : artifact_(artifact), fc_(fc), bolus_cfg_(bolus_cfg), meal_boluses_(meal_boluses) {
    require(artifact_.state_dim() == statefeat::kStateDim,
            "policy state dim does not match the feature layout");
}

void PolicyController::begin_episode(const glucosim::PatientParams& p, Rng& rng) {
    (void)rng;
    basal_ = p.basal_need;
    carb_ratio_ = p.carb_ratio;
    correction_factor_ = p.correction_factor();
}

glucosim::Action PolicyController::act(const glucosim::Observation& obs, Rng& rng) {
    (void)rng;
    glucosim::Action a;
    const auto state = statefeat::build_state(obs.log, obs.idx, fc_);
    a.rate_uph = state ? artifact_.act_uph(state->data(), statefeat::kStateDim) : basal_;
    const auto& cur = obs.current();
    if (meal_boluses_ && cur.carbs_announced > 0)
        a.bolus_u = controllers::bolus_calculator(cur.carbs_announced, cur.cgm, carb_ratio_,
                                                  correction_factor_, bolus_cfg_);
    return a;
}

// -------- gen-data --------

GenDataSummary cmd_gen_data(const RunConfig& cfg) {
    cfg.validate();
    const Paths paths(cfg);
    fs::create_directories(paths.episodes());

    datastore::BuildOptions opt;
    opt.features = cfg.features;
    opt.coverage_filter = true;
    opt.min_coverage = cfg.min_coverage;

    GenDataSummary out;
    datastore::RawTransitions raw;
    std::vector<EpisodeLog> logs;
    std::vector<double> cohort_glycemia;
    for (uint32_t i = 0; i < cfg.cohort.n_patients; ++i) {
        const auto patient = glucosim::sample_patient(cfg.cohort.population_seed, i);
        controllers::BehaviorController behavior(cfg.behavior);
        controllers::SafetyWrap safe(behavior, cfg.safety);
        glucosim::Controller& ctl =
            cfg.scenario.safety_on ? static_cast<glucosim::Controller&>(safe) : behavior;
        const uint64_t seed = derive_seed(cfg.seed, 0xDA7Aull, i);
        EpisodeLog log = glucosim::simulate(patient, ctl, cfg.cohort.days, cfg.cohort.first_day, seed,
                                            cfg.scenario.announce_meals);
        save_episode_csv(log, (paths.episodes() / ("p" + std::to_string(i) + ".csv")).string());

        PatientDataRow row;
        row.patient_id = patient.id;
        row.weight = patient.weight;
        row.nominal_tdd = patient.nominal_tdd();
        double delivered = 0;
        for (const auto& s : log.steps) delivered += s.rate_uph / 12.0 + s.bolus_u;
        row.delivered_tdd = delivered / static_cast<double>(log.days());
        row.metrics = metrics_of(log);
        for (const auto& s : log.steps) cohort_glycemia.push_back(s.cgm);

        const uint64_t before = raw.size();
        datastore::append_transitions(raw, log, opt);
        row.transitions = raw.size() - before;
        out.patients.push_back(row);
        logs.push_back(std::move(log));
    }
    out.cohort = clinical::compute(cohort_glycemia);
    out.stats = raw.stats;

    nlohmann::json prov = {{"origin", "gen-data"},
                           {"config_hash", hex64(run_config_hash(cfg))},
                           {"population_seed", cfg.cohort.population_seed},
                           {"n_patients", cfg.cohort.n_patients},
                           {"days", cfg.cohort.days},
                           {"scenario", scenario_name(cfg)},
                           {"safety_on", cfg.scenario.safety_on}};

    // discover the split under an identity normalizer, fit on the training
    // rows only, then assemble both segments with the fitted statistics
    const auto identity = statefeat::Normalizer::identity(statefeat::kStateDim);
    const auto split = {cfg.train_fraction, 1.0 - cfg.train_fraction};
    auto raw_segments = datastore::chronological_split(datastore::assemble(raw, identity, cfg.reward, prov), split);
    std::vector<double> train_states(raw_segments[0].states.begin(), raw_segments[0].states.end());
    const auto norm = statefeat::fit_normalizer(
        train_states.data(), raw_segments[0].size(), statefeat::kStateDim, {27, 28},
        "train split, " + std::to_string(raw_segments[0].size()) + " transitions");

    auto segments = datastore::chronological_split(datastore::assemble(raw, norm, cfg.reward, prov), split);
    datastore::save_dataset(segments[0], paths.train_ds().string());
    datastore::save_dataset(segments[1], paths.heldout_ds().string());
    out.train_rows = segments[0].size();
    out.heldout_rows = segments[1].size();

    write_file(paths.correlations(),
               rewards::correlation_csv(rewards::reward_metric_correlation(logs, rewards::all_reward_kinds())));

    nlohmann::json jpatients = nlohmann::json::array();
    for (const auto& r : out.patients)
        jpatients.push_back({{"patient", r.patient_id},
                             {"weight", r.weight},
                             {"nominal_tdd", r.nominal_tdd},
                             {"delivered_tdd", r.delivered_tdd},
                             {"tir", r.metrics.tir},
                             {"tbr", r.metrics.tbr},
                             {"tar", r.metrics.tar},
                             {"mean_glycemia", r.metrics.mean_glycemia},
                             {"transitions", r.transitions}});
    update_manifest(cfg, "gen_data",
                    {{"patients", jpatients},
                     {"cohort",
                      {{"tir", out.cohort.tir},
                       {"tbr", out.cohort.tbr},
                       {"tar", out.cohort.tar},
                       {"mean_glycemia", out.cohort.mean_glycemia}}},
                     {"tir_band", {{"lo", 60.0}, {"hi", 75.0}, {"in_band", out.cohort.tir >= 60.0 && out.cohort.tir <= 75.0}}},
                     {"rows", {{"train", out.train_rows}, {"heldout", out.heldout_rows}}},
                     {"datasets",
                      {{"train", hex64(file_hash(paths.train_ds()))},
                       {"heldout", hex64(file_hash(paths.heldout_ds()))}}},
                     {"build_stats",
                      {{"emitted", raw.stats.emitted},
                       {"excluded_over_limit", raw.stats.excluded_over_limit},
                       {"dropped_low_coverage", raw.stats.dropped_low_coverage},
                       {"skipped_history", raw.stats.skipped_history}}}});
    return out;
}

// -------- train --------

TrainResult cmd_train(const RunConfig& cfg) {
    cfg.validate();
    const Paths paths(cfg);
    if (!fs::exists(paths.train_ds()))
        throw std::runtime_error("no training dataset at " + paths.train_ds().string() +
                                 " (run gen-data first)");
    const auto data = datastore::load_dataset(paths.train_ds().string());
    const std::string name = agents::to_string(cfg.agent.algo);

    agents::TrainOptions opt;
    opt.curve_csv = paths.curve(name).string();
    fs::create_directories(paths.curve(name).parent_path());
    TrainResult result;
    const auto artifact = agents::train(data, cfg.agent, opt);
    {  // the curve's last row carries the final losses
        std::istringstream curve(read_file(opt.curve_csv));
        std::string line, last;
        std::getline(curve, line);  // header
        while (std::getline(curve, line))
            if (!line.empty()) last = line;
        unsigned long long step = 0;
        if (!last.empty())
            std::sscanf(last.c_str(), "%llu,%lf,%lf,%lf,%lf", &step, &result.last.critic_loss,
                        &result.last.actor_loss, &result.last.aux_loss, &result.last.q_mean);
        result.last.step = step;
    }

    fs::create_directories(paths.policies());
    agents::save_policy(artifact, paths.policy(name).string());
    result.artifact_path = paths.policy(name).string();
    result.content_hash = artifact.content_hash();

    update_manifest(cfg, "train_" + name,
                    {{"algo", name},
                     {"gradient_steps", cfg.agent.gradient_steps},
                     {"artifact", hex64(result.content_hash)},
                     {"final",
                      {{"critic_loss", result.last.critic_loss},
                       {"actor_loss", result.last.actor_loss},
                       {"aux_loss", result.last.aux_loss},
                       {"q_mean", result.last.q_mean}}}});
    return result;
}

// -------- eval --------

namespace {

EvalRow row_from_log(const std::string& policy, uint32_t patient, const EpisodeLog& log) {
    EvalRow r;
    r.policy = policy;
    r.patient_id = patient;
    r.metrics = metrics_of(log);
    r.mean_rate_uph = mean_rate(log);
    r.safety_overrides = count_safety_overrides(log);
    return r;
}

}  // namespace

EvalSummary cmd_eval(const RunConfig& cfg) {
    cfg.validate();
    const Paths paths(cfg);
    EvalSummary out;
    out.scenario = scenario_name(cfg);
    fs::create_directories(paths.traces(out.scenario));

    // evaluation rollouts are clean deployments: no manual interventions, no
    // open-loop gaps
    controllers::BehaviorConfig clean = cfg.behavior;
    clean.manual_modification_rate = 0;
    clean.manual_bolus_rate = 0;
    clean.open_loop_gap_rate = 0;

    std::vector<std::pair<std::string, agents::PolicyArtifact>> artifacts;
    for (const auto& [name, path] : list_policies(paths))
        artifacts.emplace_back(name, agents::load_policy(path.string()));

    struct Accum {
        std::vector<double> glycemia;
        double rate_sum = 0;
        uint64_t rate_n = 0, overrides = 0;
    };
    std::map<std::string, Accum> pooled;
    std::vector<std::string> order;

    auto run_one = [&](const std::string& name, glucosim::Controller& inner, uint32_t i,
                       const glucosim::PatientParams& patient, uint64_t seed) {
        controllers::SafetyWrap safe(inner, cfg.safety);
        glucosim::Controller& ctl =
            cfg.scenario.safety_on ? static_cast<glucosim::Controller&>(safe) : inner;
        const EpisodeLog log =
            glucosim::simulate(patient, ctl, cfg.eval.days, 0, seed, cfg.scenario.announce_meals);
        save_episode_csv(log, (paths.traces(out.scenario) / (name + "_p" + std::to_string(i) + ".csv")).string());
        out.rows.push_back(row_from_log(name, i, log));
        auto& acc = pooled[name];
        if (acc.glycemia.empty() && acc.rate_n == 0) order.push_back(name);
        for (const auto& s : log.steps) {
            acc.glycemia.push_back(s.cgm);
            acc.rate_sum += s.rate_uph;
        }
        acc.rate_n += log.steps.size();
        acc.overrides += count_safety_overrides(log);
    };

    for (uint32_t i = 0; i < cfg.cohort.n_patients; ++i) {
        const auto patient = glucosim::sample_patient(cfg.cohort.population_seed, i);
        const uint64_t seed = derive_seed(cfg.eval.seed, 0xE7A1ull, i);  // paired across policies
        {
            controllers::BehaviorController behavior(clean);
            run_one("behavior", behavior, i, patient, seed);
        }
        for (const auto& [name, artifact] : artifacts) {
            PolicyController policy(artifact, cfg.features, clean,
                                    /*meal_boluses=*/cfg.scenario.safety_on);
            run_one(name, policy, i, patient, seed);
        }
    }

    std::string csv = "policy,patient,n,tir,tbr,tbr54,tar,cv,mean_glycemia,mean_rate_uph,safety_overrides\n";
    for (const auto& r : out.rows) {
        csv += r.policy + "," + std::to_string(r.patient_id) + "," + std::to_string(r.metrics.n) + "," +
               num(r.metrics.tir) + "," + num(r.metrics.tbr) + "," + num(r.metrics.tbr54) + "," +
               num(r.metrics.tar) + "," + num(r.metrics.cv) + "," + num(r.metrics.mean_glycemia) + "," +
               num(r.mean_rate_uph) + "," + std::to_string(r.safety_overrides) + "\n";
    }
    for (const auto& name : order) {
        const auto& acc = pooled.at(name);
        EvalRow r;
        r.policy = name;
        r.metrics = clinical::compute(acc.glycemia);
        r.mean_rate_uph = acc.rate_n ? acc.rate_sum / static_cast<double>(acc.rate_n) : 0.0;
        r.safety_overrides = acc.overrides;
        out.cohort.emplace_back(name, r);
        csv += name + ",cohort," + std::to_string(r.metrics.n) + "," + num(r.metrics.tir) + "," +
               num(r.metrics.tbr) + "," + num(r.metrics.tbr54) + "," + num(r.metrics.tar) + "," +
               num(r.metrics.cv) + "," + num(r.metrics.mean_glycemia) + "," + num(r.mean_rate_uph) + "," +
               std::to_string(r.safety_overrides) + "\n";
    }
    write_file(paths.eval_csv(out.scenario), csv);
    out.csv_path = paths.eval_csv(out.scenario).string();

    nlohmann::json jcohort = nlohmann::json::array();
    for (const auto& [name, r] : out.cohort)
        jcohort.push_back({{"policy", name},
                           {"tir", r.metrics.tir},
                           {"tbr", r.metrics.tbr},
                           {"tar", r.metrics.tar},
                           {"mean_glycemia", r.metrics.mean_glycemia},
                           {"mean_rate_uph", r.mean_rate_uph},
                           {"safety_overrides", r.safety_overrides}});
    update_manifest(cfg, "eval_" + out.scenario,
                    {{"scenario", out.scenario},
                     {"safety_on", cfg.scenario.safety_on},
                     {"days", cfg.eval.days},
                     {"cohort", jcohort}});
    return out;
}

// -------- fqe --------

std::vector<FqeEstimate> cmd_fqe(const RunConfig& cfg) {
    cfg.validate();
    const Paths paths(cfg);
    if (!fs::exists(paths.heldout_ds()))
        throw std::runtime_error("no held-out dataset at " + paths.heldout_ds().string() +
                                 " (run gen-data first)");
    const auto data = datastore::load_dataset(paths.heldout_ds().string());
    const std::string dataset_id = hex64(file_hash(paths.heldout_ds()));
    const auto policies = list_policies(paths);
    if (policies.empty())
        throw std::runtime_error("no policies under " + paths.policies().string() + " (run train first)");
    const auto kinds = estimate_kinds(cfg);

    std::vector<FqeEstimate> out;
    for (const auto& [name, path] : policies) {
        const auto artifact = agents::load_policy(path.string());
        for (size_t k = 0; k < kinds.size(); ++k) {
            fqe::FqeConfig fc = cfg.fqe;
            fc.seed = derive_seed(cfg.fqe.seed, artifact.content_hash(), k);
            const auto model = fqe::fqe_train(data, artifact, kinds[k], fc);
            FqeEstimate e;
            e.policy = name;
            e.policy_hash = artifact.content_hash();
            e.kind = rewards::to_string(kinds[k]);
            e.estimate = fqe::fqe_value(model, data, artifact);
            e.n_states = data.size();
            e.dataset_id = dataset_id;
            out.push_back(e);
        }
    }

    nlohmann::json j = nlohmann::json::array();
    for (const auto& e : out)
        j.push_back({{"policy", e.policy},
                     {"policy_hash", hex64(e.policy_hash)},
                     {"kind", e.kind},
                     {"estimate", e.estimate},
                     {"n_states", e.n_states},
                     {"dataset_id", e.dataset_id}});
    write_file(paths.fqe_json(), j.dump(2) + "\n");
    update_manifest(cfg, "fqe",
                    {{"dataset_id", dataset_id}, {"n_states", data.size()}, {"estimates", j}});
    return out;
}

// -------- personalize --------

namespace {

struct AuditLog {
    // seq,patient,segment,phase — segment index 3 is the untouchable test
    // segment until the report phase
    std::vector<std::tuple<uint64_t, uint32_t, int, std::string>> events;
    uint64_t seq = 0;
    void touch(uint32_t patient, int segment, const std::string& phase) {
        events.emplace_back(seq++, patient, segment, phase);
    }
    std::string csv() const {
        std::string s = "seq,patient,segment,phase\n";
        for (const auto& [q, p, g, ph] : events)
            s += std::to_string(q) + "," + std::to_string(p) + "," + std::to_string(g) + "," + ph + "\n";
        return s;
    }
};

}  // namespace

PersonalizationReport cmd_personalize(const RunConfig& cfg) {
    cfg.validate();
    const Paths paths(cfg);
    const std::string pop_name = agents::to_string(cfg.agent.algo);
    if (!fs::exists(paths.policy(pop_name)))
        throw std::runtime_error("no population model at " + paths.policy(pop_name).string() +
                                 " (run train first)");
    const auto population = agents::load_policy(paths.policy(pop_name).string());
    // the protocol scores candidates on the training reward alone
    const std::vector<rewards::RewardKind> kinds = {rewards::reward_kind_from_string(cfg.reward)};
    const std::string reward_name = rewards::to_string(kinds[0]);

    datastore::BuildOptions opt;
    opt.features = cfg.features;
    opt.coverage_filter = true;
    opt.min_coverage = cfg.min_coverage;

    const uint32_t P = cfg.personalize.n_patients;
    AuditLog audit;
    PersonalizationReport report;

    struct PatientWork {
        PatientPersonalization row;
        std::vector<datastore::Dataset> segs;
        agents::PolicyArtifact selected;
        std::vector<fqe::FqeModel> models;      // per kind, selected candidate
        std::vector<fqe::FqeModel> pop_models;  // per kind, candidate 0 == population
    };
    std::vector<PatientWork> work(P);

    for (uint32_t i = 0; i < P; ++i) {
        auto& w = work[i];
        w.row.patient_id = i;
        w.row.sensitivity_scale =
            P == 1 ? cfg.personalize.sensitivity_lo
                   : cfg.personalize.sensitivity_lo +
                         (cfg.personalize.sensitivity_hi - cfg.personalize.sensitivity_lo) *
                             static_cast<double>(i) / static_cast<double>(P - 1);
        try {
            auto patient = glucosim::sample_patient(cfg.personalize.cohort_seed, i);
            patient.insulin_sensitivity *= w.row.sensitivity_scale;
            glucosim::validate_patient(patient);

            controllers::BehaviorController behavior(cfg.behavior);
            controllers::SafetyWrap safe(behavior, cfg.safety);
            glucosim::Controller& ctl =
                cfg.scenario.safety_on ? static_cast<glucosim::Controller&>(safe) : behavior;
            const uint64_t seed = derive_seed(cfg.seed, 0x9E25ull, i);
            const EpisodeLog log = glucosim::simulate(patient, ctl, cfg.personalize.days, 0, seed,
                                                      cfg.scenario.announce_meals);
            audit.touch(i, -1, "generate");

            datastore::RawTransitions raw;
            datastore::append_transitions(raw, log, opt);
            // the population model's normalizer travels with every derived
            // dataset so features stay on the training scale
            auto ds = datastore::assemble(raw, population.normalizer, cfg.reward,
                                          {{"origin", "personalize"},
                                           {"patient", i},
                                           {"sensitivity_scale", w.row.sensitivity_scale},
                                           {"config_hash", hex64(run_config_hash(cfg))}});
            std::set<uint32_t> days(ds.day.begin(), ds.day.end());
            w.row.data_days = static_cast<uint32_t>(days.size());
            w.segs = datastore::chronological_split(ds, {0.25, 0.25, 0.25, 0.25});
            for (const auto& seg : w.segs)
                if (seg.size() < cfg.personalize.fqe.batch_size)
                    throw std::invalid_argument("segment has " + std::to_string(seg.size()) +
                                                " transitions, fewer than one evaluation batch");
            if (w.segs[0].size() < cfg.agent.batch_size)
                throw std::invalid_argument("fine-tune segment smaller than one training batch");

            // (1) fine-tune the population model on segment 1
            audit.touch(i, 0, "fine-tune");
            agents::AgentConfig ft = cfg.agent;
            ft.actor_lr *= 0.1;
            ft.critic_lr *= 0.1;
            ft.gradient_steps = cfg.personalize.fine_tune_steps;
            ft.seed = derive_seed(cfg.agent.seed, 0xF17Eull, i);
            std::vector<std::pair<uint64_t, agents::PolicyArtifact>> candidates;
            agents::TrainOptions topt;
            topt.checkpoint_interval = cfg.personalize.checkpoint_interval;
            topt.on_checkpoint = [&](uint64_t step, const agents::PolicyArtifact& a) {
                candidates.emplace_back(step, a);
            };
            topt.warm_start = &population;
            agents::train(w.segs[0], ft, topt);
            if (candidates.empty()) candidates.emplace_back(0, population);  // 0-step fine-tune
            w.row.n_candidates = candidates.size();

            // (2) FQE per kind for every candidate on segment 2, each
            // candidate warm-starting from its predecessor. Candidate 0 is
            // the population model itself, so its estimator doubles as the
            // population baseline: same data, same seed, only the policy
            // differs. A 0-step fine-tune therefore reproduces the baseline
            // exactly.
            audit.touch(i, 1, "candidate-fqe");
            std::vector<std::vector<fqe::FqeModel>> models(kinds.size());
            for (size_t k = 0; k < kinds.size(); ++k) {
                for (size_t c = 0; c < candidates.size(); ++c) {
                    fqe::FqeConfig fc = cfg.personalize.fqe;
                    fc.seed = derive_seed(cfg.personalize.fqe.seed, i, k);
                    models[k].push_back(fqe::fqe_train(w.segs[1], candidates[c].second, kinds[k], fc,
                                                       c > 0 ? &models[k][c - 1] : nullptr));
                }
            }

            // (3) select the checkpoint with the best estimated training
            // reward on segment 3 (ties keep the earliest)
            audit.touch(i, 2, "select");
            size_t best = 0;
            double best_score = -std::numeric_limits<double>::infinity();
            for (size_t c = 0; c < candidates.size(); ++c) {
                const double score = fqe::fqe_value(models[0][c], w.segs[2], candidates[c].second);
                if (score > best_score) {
                    best_score = score;
                    best = c;
                }
            }
            w.row.selected_step = candidates[best].first;
            w.selected = candidates[best].second;
            for (size_t k = 0; k < kinds.size(); ++k) {
                w.models.push_back(models[k][best]);
                w.pop_models.push_back(models[k][0]);
            }
        } catch (const std::exception& e) {
            w.row.skipped = true;
            w.row.skip_reason = e.what();
        }
    }

    // (4) estimates on the held-back segment 4, personalized vs population
    for (uint32_t i = 0; i < P; ++i) {
        auto& w = work[i];
        if (w.row.skipped) {
            report.patients.push_back(w.row);
            continue;
        }
        audit.touch(i, 3, "report");
        for (size_t k = 0; k < kinds.size(); ++k) {
            const std::string kn = rewards::to_string(kinds[k]);
            w.row.personalized[kn] = fqe::fqe_value(w.models[k], w.segs[3], w.selected);
            w.row.population[kn] = fqe::fqe_value(w.pop_models[k], w.segs[3], population);
        }
        if (w.row.personalized[reward_name] > w.row.population[reward_name]) ++report.improved;
        report.patients.push_back(w.row);
    }

    nlohmann::json jp = nlohmann::json::array();
    for (const auto& r : report.patients) {
        nlohmann::json e = {{"patient", r.patient_id},
                            {"sensitivity_scale", r.sensitivity_scale},
                            {"skipped", r.skipped}};
        if (r.skipped) {
            e["skip_reason"] = r.skip_reason;
        } else {
            e["selected_step"] = r.selected_step;
            e["n_candidates"] = r.n_candidates;
            e["data_days"] = r.data_days;
            e["population"] = r.population;
            e["personalized"] = r.personalized;
        }
        jp.push_back(e);
    }
    nlohmann::json body = {{"population_model", pop_name},
                           {"population_hash", hex64(population.content_hash())},
                           {"reward", reward_name},
                           {"fine_tune_steps", cfg.personalize.fine_tune_steps},
                           {"improved", report.improved},
                           {"patients", jp}};
    write_file(paths.pers_json(), body.dump(2) + "\n");
    write_file(paths.pers_audit(), audit.csv());
    report.json_path = paths.pers_json().string();
    report.audit_path = paths.pers_audit().string();
    update_manifest(cfg, "personalize", body);
    return report;
}

// -------- analyze --------

AnalyzeTable cmd_analyze(const RunConfig& cfg) {
    cfg.validate();
    const Paths paths(cfg);
    const fs::path dir = paths.traces(cfg.analyze.scenario);
    if (!fs::exists(dir))
        throw std::runtime_error("no eval traces under " + dir.string() + " (run eval first)");

    auto load_logs = [&](const std::string& policy) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(dir)) {
            const std::string name = e.path().filename().string();
            if (name.rfind(policy + "_p", 0) == 0 && e.path().extension() == ".csv")
                files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        if (files.empty())
            throw std::runtime_error("no traces for policy '" + policy + "' under " + dir.string());
        std::vector<EpisodeLog> logs;
        for (const auto& f : files) logs.push_back(load_episode_csv(f.string()));
        return logs;
    };

    const size_t nbins = static_cast<size_t>(
        std::ceil((cfg.analyze.bin_hi - cfg.analyze.bin_lo) / cfg.analyze.bin_width));
    struct Acc {
        std::vector<double> sum;
        std::vector<uint64_t> n;
    };
    auto accumulate = [&](const std::vector<EpisodeLog>& logs) {
        Acc a{std::vector<double>(nbins, 0.0), std::vector<uint64_t>(nbins, 0)};
        // insulin at t lands on glycemia near t + 30 min: six 5-minute steps
        constexpr size_t kLag = 6;
        for (const auto& log : logs) {
            if (log.steps.size() <= kLag) continue;
            for (size_t t = 0; t + kLag < log.steps.size(); ++t) {
                const double future = log.steps[t + kLag].cgm;
                double idx = std::floor((future - cfg.analyze.bin_lo) / cfg.analyze.bin_width);
                const size_t b = static_cast<size_t>(
                    std::clamp(idx, 0.0, static_cast<double>(nbins - 1)));  // edge bins absorb outliers
                a.sum[b] += log.steps[t].rate_uph;
                a.n[b] += 1;
            }
        }
        return a;
    };
    const Acc a = accumulate(load_logs(cfg.analyze.policy_a));
    const Acc b = accumulate(load_logs(cfg.analyze.policy_b));

    AnalyzeTable out;
    std::string csv = "bin_lo,bin_hi,n_a,mean_rate_a,n_b,mean_rate_b,delta,sparse\n";
    for (size_t k = 0; k < nbins; ++k) {
        AnalyzeBin bin;
        bin.lo = cfg.analyze.bin_lo + static_cast<double>(k) * cfg.analyze.bin_width;
        bin.hi = bin.lo + cfg.analyze.bin_width;
        bin.n_a = a.n[k];
        bin.n_b = b.n[k];
        bin.mean_a = bin.n_a ? a.sum[k] / static_cast<double>(bin.n_a) : 0.0;
        bin.mean_b = bin.n_b ? b.sum[k] / static_cast<double>(bin.n_b) : 0.0;
        bin.delta = bin.mean_a - bin.mean_b;
        bin.sparse = bin.n_a < cfg.analyze.sparse_below || bin.n_b < cfg.analyze.sparse_below;
        out.bins.push_back(bin);
        csv += num(bin.lo) + "," + num(bin.hi) + "," + std::to_string(bin.n_a) + "," + num(bin.mean_a) +
               "," + std::to_string(bin.n_b) + "," + num(bin.mean_b) + "," + num(bin.delta) + "," +
               (bin.sparse ? "1" : "0") + "\n";
    }
    write_file(paths.analyze_csv(), csv);
    out.csv_path = paths.analyze_csv().string();
    update_manifest(cfg, "analyze",
                    {{"policy_a", cfg.analyze.policy_a},
                     {"policy_b", cfg.analyze.policy_b},
                     {"scenario", cfg.analyze.scenario},
                     {"bins", nbins}});
    return out;
}

// -------- report --------

std::string cmd_report(const RunConfig& cfg) {
    cfg.validate();
    const Paths paths(cfg);
    std::vector<std::string> missing;
    std::string md;
    md += "# glyrl run report\n\n";
    md += "- config hash: `" + hex64(run_config_hash(cfg)) + "`\n";
    md += "- reward: " + cfg.reward + ", agent: " + agents::to_string(cfg.agent.algo) + "\n\n";

    nlohmann::json manifest;
    if (fs::exists(paths.manifest())) {
        manifest = read_json(paths.manifest());
    } else {
        missing.push_back("manifest.json");
    }
    const auto section = [&](const std::string& name) -> nlohmann::json {
        if (manifest.contains("sections") && manifest["sections"].contains(name))
            return manifest["sections"][name];
        return {};
    };

    // data
    md += "## Behavior data\n\n";
    if (const auto g = section("gen_data"); !g.is_null() && !g.empty()) {
        md += "| patient | weight kg | TDD U | delivered U | TIR % | TBR % | TAR % | transitions |\n";
        md += "|---|---|---|---|---|---|---|---|\n";
        for (const auto& r : g["patients"])
            md += "| " + std::to_string(r["patient"].get<uint32_t>()) + " | " +
                  fixed2(r["weight"].get<double>()) + " | " + fixed2(r["nominal_tdd"].get<double>()) +
                  " | " + fixed2(r["delivered_tdd"].get<double>()) + " | " +
                  fixed2(r["tir"].get<double>()) + " | " + fixed2(r["tbr"].get<double>()) + " | " +
                  fixed2(r["tar"].get<double>()) + " | " +
                  std::to_string(r["transitions"].get<uint64_t>()) + " |\n";
        const auto& c = g["cohort"];
        md += "\nCohort: TIR " + fixed2(c["tir"].get<double>()) + "%, TBR " +
              fixed2(c["tbr"].get<double>()) + "%, TAR " + fixed2(c["tar"].get<double>()) +
              "%, mean glycemia " + fixed2(c["mean_glycemia"].get<double>()) + " mg/dL.\n";
        md += std::string("Sanity band 60-75% TIR: ") +
              (g["tir_band"]["in_band"].get<bool>() ? "within band" : "OUTSIDE BAND") + ".\n";
        md += "Rows: " + std::to_string(g["rows"]["train"].get<uint64_t>()) + " train / " +
              std::to_string(g["rows"]["heldout"].get<uint64_t>()) + " held-out.\n\n";
    } else {
        md += "_not available_\n\n";
        missing.push_back("gen-data summary");
    }

    // correlations
    md += "## Reward correlations\n\n";
    if (fs::exists(paths.correlations())) {
        md += "```\n" + read_file(paths.correlations()) + "```\n\n";
    } else {
        md += "_not available_\n\n";
        missing.push_back("correlations.csv");
    }

    // training
    md += "## Training\n\n";
    bool any_train = false;
    if (manifest.contains("sections"))
        for (const auto& [key, val] : manifest["sections"].items())
            if (key.rfind("train_", 0) == 0) {
                any_train = true;
                md += "- " + val["algo"].get<std::string>() + ": " +
                      std::to_string(val["gradient_steps"].get<uint64_t>()) + " steps, artifact `" +
                      val["artifact"].get<std::string>() + "`, final q_mean " +
                      fixed2(val["final"]["q_mean"].get<double>()) + "\n";
            }
    if (!any_train) {
        md += "_not available_\n";
        missing.push_back("training summary");
    }
    md += "\n";

    // eval
    for (const std::string scen : {"announced", "unannounced"}) {
        md += "## In-silico evaluation (" + scen + ")\n\n";
        const auto e = section("eval_" + scen);
        if (e.is_null() || e.empty()) {
            md += "_not available_\n\n";
            missing.push_back("eval " + scen);
            continue;
        }
        md += "| policy | TIR % | TBR % | TAR % | mean glycemia | mean rate U/h | safety overrides |\n";
        md += "|---|---|---|---|---|---|---|\n";
        double behavior_tir = 0, behavior_mg = 0, rl_tir = 0, rl_mg = 0;
        bool have_behavior = false, have_rl = false;
        const std::string rl_name = agents::to_string(cfg.agent.algo);
        for (const auto& r : e["cohort"]) {
            const std::string name = r["policy"].get<std::string>();
            md += "| " + name + " | " + fixed2(r["tir"].get<double>()) + " | " +
                  fixed2(r["tbr"].get<double>()) + " | " + fixed2(r["tar"].get<double>()) + " | " +
                  fixed2(r["mean_glycemia"].get<double>()) + " | " +
                  fixed2(r["mean_rate_uph"].get<double>()) + " | " +
                  std::to_string(r["safety_overrides"].get<uint64_t>()) + " |\n";
            if (name == "behavior") {
                behavior_tir = r["tir"].get<double>();
                behavior_mg = r["mean_glycemia"].get<double>();
                have_behavior = true;
            }
            if (name == rl_name) {
                rl_tir = r["tir"].get<double>();
                rl_mg = r["mean_glycemia"].get<double>();
                have_rl = true;
            }
        }
        if (have_behavior && have_rl) {
            md += "\n" + rl_name + " vs behavior: TIR " + fixed2(rl_tir - behavior_tir) +
                  " points, mean glycemia " + fixed2(rl_mg - behavior_mg) + " mg/dL.\n";
        }
        md += "\n";
    }

    // fqe
    md += "## Off-policy estimates (FQE)\n\n";
    if (fs::exists(paths.fqe_json())) {
        const auto est = read_json(paths.fqe_json());
        md += "| policy | kind | estimate | n states |\n|---|---|---|---|\n";
        for (const auto& e : est)
            md += "| " + e["policy"].get<std::string>() + " | " + e["kind"].get<std::string>() + " | " +
                  fixed2(e["estimate"].get<double>()) + " | " +
                  std::to_string(e["n_states"].get<uint64_t>()) + " |\n";
        // calibration against the announced in-silico run, where both exist
        const auto ev = section("eval_announced");
        if (!ev.is_null() && !ev.empty()) {
            std::string cal;
            for (const auto& e : est) {
                if (e["kind"].get<std::string>() != "tir_indicator") continue;
                for (const auto& r : ev["cohort"])
                    if (r["policy"] == e["policy"]) {
                        const double diff = e["estimate"].get<double>() - r["tir"].get<double>();
                        cal += "- " + e["policy"].get<std::string>() + ": FQE TIR " +
                               fixed2(e["estimate"].get<double>()) + " vs simulated " +
                               fixed2(r["tir"].get<double>()) + " (diff " + fixed2(diff) + ")\n";
                    }
            }
            if (!cal.empty()) md += "\nCalibration vs simulator:\n" + cal;
        }
        md += "\n";
    } else {
        md += "_not available_\n\n";
        missing.push_back("fqe/estimates.json");
    }

    // personalization
    md += "## Personalization\n\n";
    if (fs::exists(paths.pers_json())) {
        const auto p = read_json(paths.pers_json());
        const std::string rn = p["reward"].get<std::string>();
        uint64_t total = 0;
        for (const auto& r : p["patients"])
            if (!r["skipped"].get<bool>()) ++total;
        md += "Improved (estimated " + rn + ") for " + std::to_string(p["improved"].get<uint64_t>()) +
              " of " + std::to_string(total) + " patients.\n\n";
        md += "| patient | sensitivity | selected step | population | personalized | delta |\n";
        md += "|---|---|---|---|---|---|\n";
        for (const auto& r : p["patients"]) {
            if (r["skipped"].get<bool>()) {
                md += "| " + std::to_string(r["patient"].get<uint32_t>()) + " | " +
                      fixed2(r["sensitivity_scale"].get<double>()) + " | skipped: " +
                      r["skip_reason"].get<std::string>() + " | | | |\n";
                continue;
            }
            const double pop = r["population"][rn].get<double>();
            const double per = r["personalized"][rn].get<double>();
            md += "| " + std::to_string(r["patient"].get<uint32_t>()) + " | " +
                  fixed2(r["sensitivity_scale"].get<double>()) + " | " +
                  std::to_string(r["selected_step"].get<uint64_t>()) + " | " + fixed2(pop) + " | " +
                  fixed2(per) + " | " + fixed2(per - pop) + " |\n";
        }
        md += "\n";
    } else {
        md += "_not available_\n\n";
        missing.push_back("personalize/report.json");
    }

    // analyze
    md += "## Basal rate vs future glycemia\n\n";
    if (fs::exists(paths.analyze_csv())) {
        md += "```\n" + read_file(paths.analyze_csv()) + "```\n\n";
    } else {
        md += "_not available_\n\n";
        missing.push_back("analyze/basal_vs_future.csv");
    }

    md += "## Gaps\n\n";
    if (missing.empty()) {
        md += "none\n";
    } else {
        for (const auto& m : missing) md += "- missing: " + m + "\n";
    }

    write_file(paths.report(), md);
    update_manifest(cfg, "report", {{"missing", missing}});
    return paths.report().string();
}

// -------- CLI --------

int run_cli(int argc, char** argv) {
    CLI::App app{"offline reinforcement learning toolkit for closed-loop glycemia control"};
    app.require_subcommand(1);

    std::string config_path, scenario;
    uint64_t seed = 0;
    bool no_safety = false;
    const std::vector<std::pair<std::string, std::string>> cmds = {
        {"gen-data", "simulate the cohort and build the transition datasets"},
        {"train", "train the configured agent on the training split"},
        {"eval", "paired in-silico rollouts of every trained policy"},
        {"fqe", "off-policy estimates on the held-out split"},
        {"personalize", "four-segment fine-tuning protocol on a shifted cohort"},
        {"analyze", "basal rate binned by 30-minute-later glycemia"},
        {"report", "merge run artifacts into report.md"}};
    for (const auto& [name, desc] : cmds) {
        auto* sub = app.add_subcommand(name, desc);
        sub->add_option("--config", config_path, "run config file (JSON)")
            ->required()
            ->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "override every stage seed coherently");
        sub->add_option("--scenario", scenario, "announced|unannounced")
            ->check(CLI::IsMember({"announced", "unannounced"}));
        sub->add_flag("--no-safety", no_safety, "raw policy actions: no safety layer, no meal boluses");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }
    CLI::App* sub = app.get_subcommands().front();

    try {
        Overrides o;
        if (sub->count("--seed")) o.seed = seed;
        if (sub->count("--scenario")) o.scenario = scenario;
        o.no_safety = no_safety;
        const RunConfig cfg = apply_overrides(load_run_config(config_path), o);
        const std::string name = sub->get_name();

        if (name == "gen-data") {
            const auto s = cmd_gen_data(cfg);
            std::printf("patient  weight   tdd  delivered   tir   tbr   tar  transitions\n");
            for (const auto& r : s.patients)
                std::printf("%7u  %6.1f %5.1f  %9.1f %5.1f %5.1f %5.1f  %11llu\n", r.patient_id,
                            r.weight, r.nominal_tdd, r.delivered_tdd, r.metrics.tir, r.metrics.tbr,
                            r.metrics.tar, static_cast<unsigned long long>(r.transitions));
            std::printf("cohort TIR %.1f%% (sanity band 60-75%%: %s), TBR %.1f%%\n", s.cohort.tir,
                        s.cohort.tir >= 60 && s.cohort.tir <= 75 ? "ok" : "OUTSIDE", s.cohort.tbr);
            std::printf("rows: %llu train, %llu held-out (excluded %llu over-limit, dropped %llu low-coverage)\n",
                        static_cast<unsigned long long>(s.train_rows),
                        static_cast<unsigned long long>(s.heldout_rows),
                        static_cast<unsigned long long>(s.stats.excluded_over_limit),
                        static_cast<unsigned long long>(s.stats.dropped_low_coverage));
        } else if (name == "train") {
            const auto r = cmd_train(cfg);
            std::printf("trained %s for %llu steps -> %s (hash %s)\n",
                        agents::to_string(cfg.agent.algo).c_str(),
                        static_cast<unsigned long long>(cfg.agent.gradient_steps),
                        r.artifact_path.c_str(), hex64(r.content_hash).c_str());
            std::printf("final: critic %.4f actor %.4f aux %.4f q_mean %.3f\n", r.last.critic_loss,
                        r.last.actor_loss, r.last.aux_loss, r.last.q_mean);
        } else if (name == "eval") {
            const auto s = cmd_eval(cfg);
            std::printf("scenario %s  (safety %s)\n", s.scenario.c_str(),
                        cfg.scenario.safety_on ? "on" : "off");
            std::printf("%-12s  %6s %6s %6s %10s %9s %9s\n", "policy", "tir", "tbr", "tar", "glycemia",
                        "rate", "overrides");
            for (const auto& [pname, r] : s.cohort)
                std::printf("%-12s  %6.2f %6.2f %6.2f %10.1f %9.2f %9llu\n", pname.c_str(),
                            r.metrics.tir, r.metrics.tbr, r.metrics.tar, r.metrics.mean_glycemia,
                            r.mean_rate_uph, static_cast<unsigned long long>(r.safety_overrides));
            std::printf("details: %s\n", s.csv_path.c_str());
        } else if (name == "fqe") {
            const auto est = cmd_fqe(cfg);
            for (const auto& e : est)
                std::printf("%-12s %-14s %8.2f  (n=%llu)\n", e.policy.c_str(), e.kind.c_str(),
                            e.estimate, static_cast<unsigned long long>(e.n_states));
        } else if (name == "personalize") {
            const auto rep = cmd_personalize(cfg);
            uint64_t total = 0;
            for (const auto& r : rep.patients)
                if (!r.skipped) ++total;
            std::printf("improved for %u of %llu patients\n", rep.improved,
                        static_cast<unsigned long long>(total));
            const std::string rn = rewards::to_string(estimate_kinds(cfg)[0]);
            for (const auto& r : rep.patients) {
                if (r.skipped) {
                    std::printf("p%-3u scale %.2f  skipped: %s\n", r.patient_id, r.sensitivity_scale,
                                r.skip_reason.c_str());
                    continue;
                }
                std::printf("p%-3u scale %.2f  step %-5llu  pop %8.3f  pers %8.3f\n", r.patient_id,
                            r.sensitivity_scale, static_cast<unsigned long long>(r.selected_step),
                            r.population.at(rn), r.personalized.at(rn));
            }
            std::printf("report: %s\n", rep.json_path.c_str());
        } else if (name == "analyze") {
            const auto t = cmd_analyze(cfg);
            std::printf("%8s %8s %10s %10s %10s\n", "bin_lo", "bin_hi", "rate_a", "rate_b", "delta");
            for (const auto& b : t.bins)
                std::printf("%8.0f %8.0f %10.3f %10.3f %10.3f%s\n", b.lo, b.hi, b.mean_a, b.mean_b,
                            b.delta, b.sparse ? "  (sparse)" : "");
            std::printf("table: %s\n", t.csv_path.c_str());
        } else if (name == "report") {
            std::printf("wrote %s\n", cmd_report(cfg).c_str());
        }
        return 0;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}

}  // namespace glyrl::pipeline
