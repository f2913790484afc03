// End-to-end acceptance suite. Each criterion prints exactly one line:
//   [PASS] criterion N: <name> -- <evidence>
//   [FAIL] criterion N: <name> -- <evidence>
// The process exits with the number of failed criteria. Everything is seeded,
// so a pass is reproducible bit for bit on the same toolchain.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "glyrl/agents.hpp"
#include "glyrl/clinical.hpp"
#include "glyrl/common.hpp"
#include "glyrl/controllers.hpp"
#include "glyrl/datastore.hpp"
#include "glyrl/episode.hpp"
#include "glyrl/fqe.hpp"
#include "glyrl/glucosim.hpp"
#include "glyrl/nn.hpp"
#include "glyrl/pipeline.hpp"
#include "glyrl/rewards.hpp"
#include "glyrl/rng.hpp"
#include "glyrl/statefeat.hpp"

#include "grad_check.hpp"
#include "toy_data.hpp"

namespace fs = std::filesystem;
using namespace glyrl;

namespace {

int g_failures = 0;

double now_s() {
    using clk = std::chrono::steady_clock;
    static const clk::time_point t0 = clk::now();
    return std::chrono::duration<double>(clk::now() - t0).count();
}

void report(int id, const std::string& name, bool pass, const std::string& evidence) {
    std::printf("[%s] criterion %d: %s -- %s\n", pass ? "PASS" : "FAIL", id, name.c_str(),
                evidence.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

uint64_t file_hash(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    const std::string bytes = ss.str();
    return fnv1a64(bytes.data(), bytes.size());
}

// The study configuration the heavyweight criteria share.
pipeline::RunConfig study_config(const fs::path& out_dir) {
    pipeline::RunConfig cfg;
    cfg.out_dir = out_dir.string();
    cfg.seed = 11;
    cfg.reward = "tir_indicator";
    cfg.cohort.n_patients = 5;
    cfg.cohort.population_seed = 42;
    cfg.cohort.days = 60;
    cfg.agent.algo = agents::Algo::td3bc;
    cfg.agent.gradient_steps = 15000;
    cfg.fqe.gamma = 0.99;
    cfg.fqe.target_refresh = 100;
    cfg.fqe.gradient_steps = 40000;
    cfg.fqe.hidden = {64, 64};
    cfg.eval.days = 14;
    cfg.eval.seed = 7;
    cfg.personalize.n_patients = 10;
    cfg.personalize.cohort_seed = 99;
    cfg.personalize.days = 60;
    cfg.personalize.fine_tune_steps = 2000;
    cfg.personalize.checkpoint_interval = 1000;
    cfg.validate();
    return cfg;
}

// ---------------------------------------------------------------- criterion 1

void criterion_gradients() {
    const double t0 = now_s();
    // every (in, hidden, out, activation) combination the library instantiates:
    // actor, twin critic, vae encoder/decoder, perturbation net, fqe q-net,
    // at each hidden width used by the study configurations
    const size_t S = statefeat::kStateDim;
    struct Shape {
        std::vector<size_t> sizes;
        nn::OutAct act;
    };
    std::vector<Shape> shapes;
    for (const size_t h : {size_t{128}, size_t{64}, size_t{32}}) {
        shapes.push_back({{S, h, h, 1}, nn::OutAct::tanh_out});       // actor
        shapes.push_back({{S + 1, h, h, 1}, nn::OutAct::identity});   // critic / fqe q
        shapes.push_back({{S + 1, h, h, 4}, nn::OutAct::identity});   // vae encoder (latent 2)
        shapes.push_back({{S + 2, h, h, 1}, nn::OutAct::tanh_out});   // vae decoder
        shapes.push_back({{S + 1, h, h, 1}, nn::OutAct::tanh_out});   // perturbation net
    }
    double worst = 0;
    size_t params = 0;
    uint64_t seed = 811;
    for (const auto& sh : shapes) {
        Rng rng(seed++);
        const auto net = nn::make_mlp<double>(sh.sizes, sh.act, rng);
        const auto res = glyrl::testing::grad_check(net, seed++);
        worst = std::max(worst, res.max_rel_err);
        params += res.params_checked;
    }
    const double dt = now_s() - t0;
    const bool pass = worst < 1e-4 && params >= 1000 && dt < 60.0;
    report(1, "gradient correctness",
           pass, fmt("max rel err %.3g over %zu parameters, %zu architectures, %.1f s", worst, params,
                     shapes.size(), dt));
}

// ---------------------------------------------------------------- criterion 2

void criterion_fqe_oracle() {
    const double t0 = now_s();

    // (a) a 2-state/2-action mdp embedded as an offline dataset; fqe must
    // match the exact linear-system evaluation of the dataset's own
    // empirical transition frequencies
    const double gamma = 0.9;
    const auto data = toy::make_mdp_dataset(6000, 51);
    const auto policy = toy::two_state_policy(toy::kLow, toy::kLow);
    fqe::FqeConfig cfg;
    cfg.gamma = gamma;
    cfg.hidden = {16, 16};
    cfg.batch_size = 256;
    cfg.lr = 5e-4;
    cfg.target_refresh = 400;
    cfg.gradient_steps = 30000;
    cfg.seed = 7;
    const auto coarse = fqe::fqe_train(data, policy, rewards::RewardKind::tir_indicator, cfg);
    auto fine = cfg;
    fine.lr = 2e-5;
    fine.gradient_steps = 10000;
    const auto m = fqe::fqe_train(data, policy, rewards::RewardKind::tir_indicator, fine, &coarse);

    const auto exact = toy::exact_eval(true, true, gamma, toy::empirical_probs(data));
    double q_err = 0;
    for (const bool state_a : {true, false})
        for (const bool low : {true, false}) {
            const float in[3] = {state_a ? 1.0f : 0.0f, state_a ? 0.0f : 1.0f,
                                 low ? toy::kLow : toy::kHigh};
            float got = 0;
            nn::forward(m.q, in, &got);
            q_err = std::max(q_err, std::abs(got - exact.q(state_a, low, gamma)));
        }

    // (b) constant rewards: every transition pays 1 under tir_indicator, so
    // the (1-gamma)-scaled read-out must reproduce 100 to three decimals of
    // the raw O(1) value. Long-refresh stages contract the remaining error
    // geometrically, a factor of gamma per target refresh.
    datastore::Dataset iid;
    iid.state_dim = 2;
    iid.reward_kind = "tir_indicator";
    iid.normalizer = statefeat::Normalizer::identity(2);
    {
        Rng rng(6);
        for (size_t i = 0; i < 2000; ++i) {
            iid.states.push_back(static_cast<float>(rng.normal()));
            iid.states.push_back(static_cast<float>(rng.normal()));
            iid.next_states.push_back(static_cast<float>(rng.normal()));
            iid.next_states.push_back(static_cast<float>(rng.normal()));
            iid.actions.push_back(static_cast<float>(rng.uniform(-1.0, 1.0)));
            (void)rng.uniform(0.0, 1.0);  // reward-mixture slot, single outcome here
            iid.next_cgm.push_back(100.0f);
            iid.done.push_back(0);
            iid.patient.push_back(0);
            iid.day.push_back(static_cast<uint32_t>(i / 276));
            iid.step.push_back(static_cast<uint32_t>(i % 276));
        }
        iid.check();
    }
    const auto pol2 = toy::two_state_policy(-0.2, 0.2);
    fqe::FqeConfig c2;
    c2.gamma = 0.9;
    c2.hidden = {32, 32};
    c2.batch_size = 512;
    c2.lr = 1e-3;
    c2.target_refresh = 200;
    c2.gradient_steps = 12000;
    c2.seed = 3;
    fqe::FqeModel cm = fqe::fqe_train(iid, pol2, rewards::RewardKind::tir_indicator, c2);
    for (const auto& [lr, steps] : {std::pair{1e-4, 25000ull}, {2e-5, 15000ull}}) {
        auto stage = c2;
        stage.lr = lr;
        stage.target_refresh = 1000;
        stage.gradient_steps = steps;
        cm = fqe::fqe_train(iid, pol2, rewards::RewardKind::tir_indicator, stage, &cm);
    }
    // the estimate is in percent; 0.05 percentage points == 5e-4 on the raw
    // discounted average, i.e. three decimals of a value of order one
    const double est = fqe::fqe_value(cm, iid, pol2);
    const double const_err = std::abs(est - 100.0);

    const double dt = now_s() - t0;
    const bool pass = q_err <= 1e-2 && const_err < 0.05 && dt < 300.0;
    report(2, "fqe oracle equivalence",
           pass, fmt("toy-mdp max |Q err| %.4g (gate 1e-2), constant read-out %.5f%% (gate +-0.05), %.0f s",
                     q_err, est, dt));
}

// ---------------------------------------------------------------- criterion 3

void criterion_metric_identities() {
    Rng rng(303);
    bool sum_exact = true, tbr54_le = true, cv_zero = true;
    const size_t kSeries = 100000;
    for (size_t k = 0; k < kSeries; ++k) {
        const size_t n = 1 + rng.below(400);
        std::vector<double> g(n);
        if (k % 7 == 0) {
            const double v = rng.uniform(20.0, 600.0);
            for (auto& x : g) x = v;
        } else {
            for (auto& x : g) x = rng.uniform(20.0, 600.0);
        }
        const auto m = clinical::compute(g);
        if (m.tir + m.tbr + m.tar != 100.0) sum_exact = false;
        if (m.tbr54 > m.tbr) tbr54_le = false;
        if (k % 7 == 0 && m.cv != 0.0) cv_zero = false;
    }
    const bool pass = sum_exact && tbr54_le && cv_zero;
    report(3, "metric identities",
           pass, fmt("%zu fuzzed series: tir+tbr+tar==100 %s, tbr54<=tbr %s, cv(const)==0 %s", kSeries,
                     sum_exact ? "exact" : "VIOLATED", tbr54_le ? "held" : "VIOLATED",
                     cv_zero ? "held" : "VIOLATED"));
}

// ---------------------------------------------------------------- criterion 4

void criterion_safety_invariant() {
    controllers::BehaviorConfig bcfg;   // defaults, manual noise included
    controllers::SafetyConfig scfg;
    size_t risk_steps = 0, risk_nonzero = 0, rollouts = 0;
    std::vector<double> cgm_on, cgm_off;
    for (uint32_t p = 0; p < 10; ++p) {
        const auto patient = glucosim::sample_patient(4242, p);
        for (uint32_t s = 0; s < 5; ++s, ++rollouts) {
            const uint64_t seed = derive_seed(9000ull, p, s);
            controllers::BehaviorController inner_on(bcfg);
            controllers::SafetyWrap safe(inner_on, scfg);
            const auto log_on = glucosim::simulate(patient, safe, 14, 0, seed, true);
            controllers::BehaviorController inner_off(bcfg);
            const auto log_off = glucosim::simulate(patient, inner_off, 14, 0, seed, true);

            // recompute the risk predicate from the logged cgm history and
            // demand zero insulin at every flagged step
            std::vector<double> window;
            for (size_t t = 0; t < log_on.steps.size(); ++t) {
                const size_t have = std::min<size_t>(t + 1, scfg.regression_window);
                window.resize(have);
                for (size_t i = 0; i < have; ++i) window[i] = log_on.steps[t + 1 - have + i].cgm;
                uint64_t warn = 0;
                if (controllers::hypo_risk(window.data(), have, scfg, &warn)) {
                    ++risk_steps;
                    if (log_on.steps[t].rate_uph != 0.0 || log_on.steps[t].bolus_u != 0.0)
                        ++risk_nonzero;
                }
            }
            for (const auto& st : log_on.steps) cgm_on.push_back(st.cgm);
            for (const auto& st : log_off.steps) cgm_off.push_back(st.cgm);
        }
    }
    const double tbr_on = clinical::compute(cgm_on).tbr;
    const double tbr_off = clinical::compute(cgm_off).tbr;
    const bool pass = risk_nonzero == 0 && risk_steps > 0 && tbr_on <= tbr_off;
    report(4, "safety invariant",
           pass, fmt("%zu rollouts, %zu hypo-risk steps, %zu with insulin (gate 0); paired TBR %.2f%% on vs %.2f%% off",
                     rollouts, risk_steps, risk_nonzero, tbr_on, tbr_off));
}

// ---------------------------------------------------------------- criterion 8

void criterion_reward_correlations() {
    // exactly 200 patient-days of behavior data
    std::vector<EpisodeLog> logs;
    controllers::BehaviorConfig bcfg;
    controllers::SafetyConfig scfg;
    for (uint32_t p = 0; p < 5; ++p) {
        const auto patient = glucosim::sample_patient(4242, p);
        controllers::BehaviorController inner(bcfg);
        controllers::SafetyWrap safe(inner, scfg);
        logs.push_back(glucosim::simulate(patient, safe, 40, 0, derive_seed(8000ull, p), true));
    }
    size_t days = 0;
    for (const auto& l : logs) days += l.steps.size() / kStepsPerDay;
    const auto rows = rewards::reward_metric_correlation(logs, rewards::all_reward_kinds());
    double tir_corr = 0, tbr_corr = 0;
    for (const auto& r : rows) {
        if (r.kind == rewards::RewardKind::tir_indicator) tir_corr = r.tir;
        if (r.kind == rewards::RewardKind::tbr_indicator) tbr_corr = r.tbr;
    }
    const bool pass = days == 200 && tir_corr == 1.0 && tbr_corr == 1.0;
    report(8, "reward correlation identities",
           pass, fmt("%zu patient-days, %zu-kind matrix; corr(tir_indicator, TIR) = %.17g, corr(tbr_indicator, TBR) = %.17g",
                     days, rows.size(), tir_corr, tbr_corr));
}

// ---------------------------------------------------------------- criterion 9

void criterion_determinism(const fs::path& root) {
    pipeline::RunConfig small = study_config(root / "det_a");
    small.cohort.n_patients = 2;
    small.cohort.days = 10;
    small.agent.gradient_steps = 2000;
    small.agent.hidden = {64, 64};
    small.agent.batch_size = 128;
    auto small_b = small;
    small_b.out_dir = (root / "det_b").string();

    pipeline::cmd_gen_data(small);
    pipeline::cmd_train(small);
    pipeline::cmd_gen_data(small_b);
    pipeline::cmd_train(small_b);

    const bool data_same =
        file_hash(root / "det_a/dataset_train.bin") == file_hash(root / "det_b/dataset_train.bin") &&
        file_hash(root / "det_a/dataset_heldout.bin") == file_hash(root / "det_b/dataset_heldout.bin");
    const bool policy_same =
        file_hash(root / "det_a/policies/td3bc.policy") == file_hash(root / "det_b/policies/td3bc.policy");

    // save/load round-trips, bit for bit
    const auto art = agents::load_policy((root / "det_a/policies/td3bc.policy").string());
    agents::save_policy(art, (root / "det_a/policy_rt.bin").string());
    const bool policy_rt =
        file_hash(root / "det_a/policies/td3bc.policy") == file_hash(root / "det_a/policy_rt.bin");
    const auto ds = datastore::load_dataset((root / "det_a/dataset_train.bin").string());
    datastore::save_dataset(ds, (root / "det_a/dataset_rt.bin").string());
    const bool data_rt =
        file_hash(root / "det_a/dataset_train.bin") == file_hash(root / "det_a/dataset_rt.bin");

    const bool pass = data_same && policy_same && policy_rt && data_rt;
    report(9, "determinism and round-trip",
           pass, fmt("rerun: datasets %s, checkpoints %s; round-trip: policy %s, dataset %s",
                     data_same ? "byte-identical" : "DIFFER", policy_same ? "byte-identical" : "DIFFER",
                     policy_rt ? "bit-exact" : "DIFFER", data_rt ? "bit-exact" : "DIFFER"));
}

// ------------------------------------------------------------ criteria 5 + 6

struct MainRun {
    pipeline::RunConfig cfg;
    pipeline::EvalSummary eval;
    double behavior_cohort_tir = 0;
};

MainRun criterion_offline_improvement(const fs::path& root) {
    const double t0 = now_s();
    MainRun run{study_config(root / "main"), {}, 0};
    pipeline::cmd_gen_data(run.cfg);
    pipeline::cmd_train(run.cfg);
    run.eval = pipeline::cmd_eval(run.cfg);

    std::map<uint32_t, double> b_tir, t_tir;
    for (const auto& r : run.eval.rows) {
        if (r.policy == "behavior") b_tir[r.patient_id] = r.metrics.tir;
        if (r.policy == "td3bc") t_tir[r.patient_id] = r.metrics.tir;
    }
    double mb = 0, mt = 0;
    int wins = 0;
    for (const auto& [pid, tir] : b_tir) {
        mb += tir / static_cast<double>(b_tir.size());
        mt += t_tir.at(pid) / static_cast<double>(b_tir.size());
        if (t_tir.at(pid) >= tir) ++wins;
    }
    for (const auto& [name, row] : run.eval.cohort)
        if (name == "behavior") run.behavior_cohort_tir = row.metrics.tir;

    const double dt = now_s() - t0;
    const bool pass = mt >= mb - 1.0 && wins >= 3 && dt < 7200.0;
    report(5, "offline improvement",
           pass, fmt("mean TIR td3bc %.2f vs behavior %.2f (gate -1), per-patient wins %d/5 (gate 3), %.0f s",
                     mt, mb, wins, dt));
    return run;
}

agents::PolicyArtifact constant_policy(double rate_uph, const statefeat::Normalizer& norm) {
    agents::PolicyArtifact a;
    a.algo = agents::Algo::bc;
    a.config.algo = agents::Algo::bc;
    a.config.hidden = {};
    Rng r(1);
    a.actor = nn::make_mlp<float>({statefeat::kStateDim, 1}, nn::OutAct::tanh_out, r);
    for (auto& w : a.actor.W[0].a) w = 0.0f;
    a.actor.b[0][0] = static_cast<float>(std::atanh(rate_uph / 5.0 - 1.0));
    a.normalizer = norm;
    return a;
}

// paired raw deployment: the policy's own actions, no safety layer, no meal
// boluses -- the quantity fqe actually estimates
double raw_deploy_tir(const agents::PolicyArtifact& art, const pipeline::RunConfig& cfg) {
    std::vector<double> pooled;
    controllers::BehaviorConfig clean = cfg.behavior;
    clean.manual_modification_rate = clean.manual_bolus_rate = clean.open_loop_gap_rate = 0;
    for (uint32_t i = 0; i < cfg.cohort.n_patients; ++i) {
        const auto patient = glucosim::sample_patient(cfg.cohort.population_seed, i);
        pipeline::PolicyController pc(art, cfg.features, clean, false);
        const auto log = glucosim::simulate(patient, pc, cfg.eval.days, 0,
                                            derive_seed(cfg.eval.seed, 0xE7A1ull, i), true);
        for (const auto& s : log.steps) pooled.push_back(s.cgm);
    }
    return clinical::compute(pooled).tir;
}

void criterion_fqe_calibration(const MainRun& run, const fs::path& root) {
    const double t0 = now_s();
    const auto train = datastore::load_dataset((root / "main/dataset_train.bin").string());
    const auto held = datastore::load_dataset((root / "main/dataset_heldout.bin").string());

    // a behavior clone stands in for the behavior policy on the fqe side
    agents::AgentConfig bc_cfg = run.cfg.agent;
    bc_cfg.algo = agents::Algo::bc;
    bc_cfg.gradient_steps = 10000;
    bc_cfg.seed = 21;
    const auto bc = agents::train(train, bc_cfg);

    auto estimate = [&](const agents::PolicyArtifact& art) {
        fqe::FqeConfig fc = run.cfg.fqe;
        fc.seed = derive_seed(run.cfg.fqe.seed, art.content_hash(), 0);
        const auto m = fqe::fqe_train(held, art, rewards::RewardKind::tir_indicator, fc);
        return fqe::fqe_value(m, held, art);
    };

    const double est_bc = estimate(bc);
    const double calib_diff = est_bc - run.behavior_cohort_tir;

    // three policies of genuinely different quality, ranked by fqe
    const auto mid = constant_policy(1.5, train.normalizer);
    const auto bad = constant_policy(3.0, train.normalizer);
    const double true_bc = raw_deploy_tir(bc, run.cfg);
    const double true_mid = raw_deploy_tir(mid, run.cfg);
    const double true_bad = raw_deploy_tir(bad, run.cfg);
    const double est_mid = estimate(mid);
    const double est_bad = estimate(bad);

    const double gap1 = true_bc - true_mid, gap2 = true_mid - true_bad;
    const bool gaps_ok = gap1 >= 5.0 && gap2 >= 5.0 && (true_bc - true_bad) >= 5.0;
    const bool order_ok = est_bc > est_mid && est_mid > est_bad;

    const double dt = now_s() - t0;
    const bool pass = std::abs(calib_diff) <= 10.0 && gaps_ok && order_ok;
    report(6, "fqe calibration",
           pass, fmt("behavior-clone fqe %.2f vs simulated %.2f (diff %+.2f, gate +-10); "
                     "true TIR %.1f/%.1f/%.1f (gaps %.1f/%.1f), fqe %.1f/%.1f/%.1f order %s, %.0f s",
                     est_bc, run.behavior_cohort_tir, calib_diff, true_bc, true_mid, true_bad, gap1,
                     gap2, est_bc, est_mid, est_bad, order_ok ? "correct" : "WRONG", dt));
}

// ---------------------------------------------------------------- criterion 7

void criterion_personalization(const MainRun& run, const fs::path& root) {
    const double t0 = now_s();
    const auto rep = pipeline::cmd_personalize(run.cfg);

    size_t evaluated = 0;
    for (const auto& r : rep.patients)
        if (!r.skipped) ++evaluated;

    // the audit log must show the held-back segment untouched until the
    // final reporting phase
    bool audit_ok = true;
    {
        std::ifstream f(rep.audit_path);
        std::string line;
        std::getline(f, line);  // header
        bool seen_test_segment = false;
        while (std::getline(f, line)) {
            if (line.empty()) continue;
            int seq = 0, patient = 0, segment = 0;
            char phase[64] = {0};
            std::sscanf(line.c_str(), "%d,%d,%d,%63s", &seq, &patient, &segment, phase);
            if (segment == 3) {
                seen_test_segment = true;
                if (std::strcmp(phase, "report") != 0) audit_ok = false;
            } else if (seen_test_segment) {
                audit_ok = false;  // a pre-report phase ran after test reads began
            }
        }
        if (!seen_test_segment) audit_ok = false;
    }

    // null control: zero fine-tune steps must reproduce the population
    // estimates exactly
    auto null_cfg = run.cfg;
    null_cfg.out_dir = (root / "null").string();
    null_cfg.personalize.fine_tune_steps = 0;
    fs::create_directories(root / "null/policies");
    fs::copy_file(root / "main/policies/td3bc.policy", root / "null/policies/td3bc.policy",
                  fs::copy_options::overwrite_existing);
    const auto null_rep = pipeline::cmd_personalize(null_cfg);
    double max_null_delta = 0;
    for (const auto& r : null_rep.patients) {
        if (r.skipped) continue;
        for (const auto& [kind, v] : r.personalized)
            max_null_delta = std::max(max_null_delta, std::abs(v - r.population.at(kind)));
    }

    const double dt = now_s() - t0;
    const bool pass = evaluated == 10 && rep.improved >= 6 && max_null_delta < 1.0 && audit_ok;
    report(7, "personalization",
           pass, fmt("improved %u/%zu (gate 6/10), null control max |delta| %.4g (gate 1), audit %s, %.0f s",
                     rep.improved, evaluated, max_null_delta, audit_ok ? "ordered" : "VIOLATED", dt));
}

// ---------------------------------------------------------------- criterion 10

void criterion_unannounced(const fs::path& root) {
    const double t0 = now_s();
    auto cfg = study_config(root / "unann");
    cfg.scenario.announce_meals = false;

    pipeline::cmd_gen_data(cfg);
    pipeline::cmd_train(cfg);
    const auto ev = pipeline::cmd_eval(cfg);

    // cob (announced carbs on board) must be identically zero in the data
    bool cob_zero = true;
    for (const char* name : {"dataset_train.bin", "dataset_heldout.bin"}) {
        const auto ds = datastore::load_dataset((root / "unann" / name).string());
        for (size_t i = 0; i < ds.size() && cob_zero; ++i)
            if (ds.state(i)[25] != 0.0f || ds.next_state(i)[25] != 0.0f) cob_zero = false;
    }

    // no automatic boluses anywhere: in the behavior data every bolus is a
    // flagged manual correction, and the evaluation traces have none at all
    bool boluses_ok = true;
    for (uint32_t i = 0; i < cfg.cohort.n_patients && boluses_ok; ++i) {
        const auto log =
            load_episode_csv((root / "unann/episodes" / ("p" + std::to_string(i) + ".csv")).string());
        for (const auto& s : log.steps) {
            if (s.carbs_announced != 0.0) boluses_ok = false;
            if (s.bolus_u > 0.0 && !(s.flags & kFlagManualAdded)) boluses_ok = false;
        }
    }
    for (const char* pol : {"behavior", "td3bc"}) {
        for (uint32_t i = 0; i < cfg.cohort.n_patients && boluses_ok; ++i) {
            const auto log = load_episode_csv(
                (root / "unann/eval/traces/unannounced" / (std::string(pol) + "_p" + std::to_string(i) + ".csv"))
                    .string());
            for (const auto& s : log.steps)
                if (s.bolus_u != 0.0) boluses_ok = false;
        }
    }

    double mean_b = 0, mean_t = 0;
    for (const auto& [name, row] : ev.cohort) {
        if (name == "behavior") mean_b = row.metrics.mean_glycemia;
        if (name == "td3bc") mean_t = row.metrics.mean_glycemia;
    }
    const bool direction = mean_t <= mean_b;

    const double dt = now_s() - t0;
    const bool pass = cob_zero && boluses_ok;  // direction is recorded, not gated
    report(10, "unannounced-meal scenario",
           pass, fmt("cob==0 %s, no automatic boluses %s; mean glycemia td3bc %.1f vs behavior %.1f (%s, directional), %.0f s",
                     cob_zero ? "held" : "VIOLATED", boluses_ok ? "held" : "VIOLATED", mean_t, mean_b,
                     direction ? "improved" : "not improved", dt));
}

}  // namespace

int main() {
    const fs::path root = fs::temp_directory_path() / "glyrl-acceptance";
    fs::remove_all(root);
    fs::create_directories(root);
    std::printf("acceptance run, artifacts under %s\n", root.c_str());

    criterion_gradients();
    criterion_metric_identities();
    criterion_safety_invariant();
    criterion_reward_correlations();
    criterion_fqe_oracle();
    criterion_determinism(root);
    const MainRun run = criterion_offline_improvement(root);
    criterion_fqe_calibration(run, root);
    criterion_personalization(run, root);
    criterion_unannounced(root);

    std::printf("%d of 10 criteria passed (%.0f s total)\n", 10 - g_failures, now_s());
    return g_failures;
}
