#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "submeta/core_model.hpp"
#include "submeta/diagnostics.hpp"
#include "submeta/estimators.hpp"
#include "submeta/heterogeneity.hpp"
#include "submeta/io.hpp"
#include "submeta/simulation.hpp"
#include "submeta/swada.hpp"

using namespace submeta;
using nlohmann::json;

namespace {

struct AnalyzeArgs {
    std::string input;
    std::string method = "ad";
    std::string scheme = "interaction_re";
    std::string model = "re";
    std::string tau = "reml";
    std::string sigma = "full";
    std::string output = "json";
    std::string policy = "exclude";
    std::optional<double> tau2;
    bool exclude_single = false;
    bool subgroup_only = false;
    bool all_methods = false;
    bool naive_stage2 = false;
    bool forest = false;
};

ModelKind parse_model(const std::string& s) {
    if (s == "ce") return ModelKind::common_effect;
    if (s == "re") return ModelKind::random_effects;
    throw InputError("unknown model '" + s + "' (expected ce or re)");
}

SingleSubgroupPolicy parse_policy(const std::string& s) {
    if (s == "refuse") return SingleSubgroupPolicy::refuse;
    if (s == "exclude") return SingleSubgroupPolicy::exclude_renormalize;
    if (s == "subgroup-only") return SingleSubgroupPolicy::subgroup_only;
    throw InputError("unknown single-subgroup policy '" + s + "'");
}

const std::vector<WeightScheme> kSchemes = {
    WeightScheme::equal,          WeightScheme::interaction_re, WeightScheme::study_size,
    WeightScheme::smaller_subgroup, WeightScheme::min_iv,       WeightScheme::min_total_variance,
};

WeightVector scheme_weights(const MetaDataset& data, WeightScheme scheme, const AnalyzeArgs& a) {
    const auto tm = parse_tau_method(a.tau);
    auto tau2 = a.tau2;
    if (!tau2 && scheme == WeightScheme::min_iv && parse_model(a.model) == ModelKind::random_effects)
        tau2 = estimate_tau(contrast_sample(data), tm).tau2;
    return compute_weights(data, scheme, tau2, tm);
}

AnalysisResult run_swada(const MetaDataset& data, WeightScheme scheme, const AnalyzeArgs& a) {
    SwadaOptions opts;
    opts.model = parse_model(a.model);
    opts.tau_method = parse_tau_method(a.tau);
    opts.policy = a.subgroup_only ? SingleSubgroupPolicy::subgroup_only : parse_policy(a.policy);
    return pool_swada(data, scheme_weights(data, scheme, a), opts);
}

AnalysisResult run_one(const MetaDataset& data, const std::string& method, const AnalyzeArgs& a) {
    const auto tm = parse_tau_method(a.tau);
    const auto model = parse_model(a.model);
    if (method == "da") return estimate_da(data, tm, model);
    if (method == "ad") return estimate_ad(data, tm, model);
    if (method == "vhas") {
        VhasOptions o;
        o.sigma = parse_sigma_structure(a.sigma);
        return to_result(fit_vhas(data, o));
    }
    if (method == "within-trial") return fit_within_trial(data, tm, model, {a.naive_stage2});
    if (method == "prev-adjusted") return to_result(fit_prevalence_adjusted(data));
    if (method == "centered")
        return fit_centered_collapsible(data, scheme_weights(data, parse_weight_scheme(a.scheme), a), tm, model);
    if (method == "swada") return run_swada(data, parse_weight_scheme(a.scheme), a);
    throw InputError("unknown method '" + method + "'");
}

std::vector<AnalysisResult> run_all(const MetaDataset& data, AnalyzeArgs a) {
    std::vector<AnalysisResult> out;
    const auto tm = parse_tau_method(a.tau);
    out.push_back(estimate_da(data, tm, ModelKind::common_effect));
    out.push_back(estimate_da(data, tm, ModelKind::random_effects));
    out.push_back(estimate_ad(data, tm, ModelKind::common_effect));
    out.push_back(estimate_ad(data, tm, ModelKind::random_effects));
    out.push_back(to_result(fit_vhas(data)));
    a.model = "re";
    out.push_back(fit_within_trial(data, tm, ModelKind::random_effects, {a.naive_stage2}));
    out.push_back(to_result(fit_prevalence_adjusted(data)));
    for (auto s : kSchemes) out.push_back(run_swada(data, s, a));
    return out;
}

std::string fmt(double x) {
    if (std::isnan(x)) return "";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", x);
    return buf;
}

std::string results_csv(const std::vector<AnalysisResult>& results) {
    std::ostringstream os;
    os << "label,method,gamma,gamma_se,ror,ror_lower,ror_upper,beta_a,beta_a_se,beta_b,beta_b_se,collapsible\n";
    for (const auto& r : results) {
        os << '"' << r.label << "\"," << to_string(r.method) << ',' << fmt(r.gamma.point) << ','
           << fmt(r.gamma.std_err) << ',' << fmt(std::exp(r.gamma.point)) << ',' << fmt(std::exp(r.gamma.ci_lower))
           << ',' << fmt(std::exp(r.gamma.ci_upper)) << ',';
        if (r.has_betas)
            os << fmt(r.beta_a.point) << ',' << fmt(r.beta_a.std_err) << ',' << fmt(r.beta_b.point) << ','
               << fmt(r.beta_b.std_err);
        else
            os << ",,,";
        os << ',' << (r.collapsible ? "true" : "false") << '\n';
    }
    return os.str();
}

int cmd_analyze(const AnalyzeArgs& a) {
    auto data = read_csv_file(a.input);
    if (a.exclude_single) data = data.without_single_subgroup();
    std::vector<AnalysisResult> results;
    if (a.all_methods)
        results = run_all(data, a);
    else
        results.push_back(run_one(data, a.method, a));

    if (a.output == "csv") {
        std::cout << results_csv(results);
        return 0;
    }
    json out;
    out["schema_version"] = kSchemaVersion;
    out["version"] = kVersion;
    out["input"] = a.input;
    out["label_a"] = data.label_a;
    out["label_b"] = data.label_b;
    out["results"] = json::array();
    for (const auto& r : results) out["results"].push_back(to_json(r));
    if (a.forest || a.all_methods) {
        std::vector<WeightVector> ws;
        for (auto s : kSchemes) {
            try {
                ws.push_back(scheme_weights(data, s, a));
            } catch (const std::exception&) {
            }
        }
        out["forest"] = forest_payload(data, results, ws);
    }
    std::cout << out.dump(2) << '\n';
    return 0;
}

struct SimulateArgs {
    std::string config;
    std::string out_dir = "sim_out";
    std::string methods;
    std::optional<std::uint64_t> seed;
    int threads = 0;
    std::optional<int> k, reps;
    std::optional<double> tau1, tau2, delta, gamma_w, uisd;
    std::string scheme;
    std::string target;
};

int cmd_simulate(const SimulateArgs& a) {
    ScenarioConfig base;
    if (a.seed) {
        base.seed = *a.seed;
    } else if (const char* env = std::getenv("SWADA_SEED")) {
        try {
            base.seed = std::stoull(env);
        } catch (const std::exception&) {
            throw InputError(std::string("SWADA_SEED is not an integer: ") + env);
        }
    }
    json cfg_json = json::object();
    if (!a.config.empty()) {
        std::ifstream in(a.config);
        if (!in) throw InputError("cannot open config '" + a.config + "'");
        try {
            cfg_json = json::parse(in);
        } catch (const json::exception& e) {
            throw InputError("invalid config JSON: " + std::string(e.what()));
        }
    }
    std::vector<std::string> methods = default_methods();
    if (cfg_json.contains("methods")) methods = cfg_json["methods"].get<std::vector<std::string>>();
    if (!a.methods.empty()) {
        methods.clear();
        std::stringstream ss(a.methods);
        for (std::string m; std::getline(ss, m, ',');)
            if (!m.empty()) methods.push_back(m);
    }

    auto scenarios = expand_scenarios(cfg_json, base);
    for (auto& s : scenarios) {
        if (a.seed) s.seed = *a.seed;
        if (a.k) s.k = *a.k;
        if (a.reps) s.reps = *a.reps;
        if (a.tau1) s.tau1 = *a.tau1;
        if (a.tau2) s.tau2 = *a.tau2;
        if (a.delta) s.delta = *a.delta;
        if (a.gamma_w) s.gamma_w = *a.gamma_w;
        if (a.uisd) s.uisd = *a.uisd;
        if (!a.scheme.empty()) s.prevalence_scheme = parse_prevalence_scheme(a.scheme);
        if (!a.target.empty()) s.target = parse_beta_target(a.target);
        s.validate();
    }

    const int threads = a.threads > 0 ? a.threads : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    json provenance;
    json configs = json::array();
    for (const auto& s : scenarios) configs.push_back(to_json(s));
    const std::string digest_src = configs.dump() + json(methods).dump();
    char digest[17];
    std::snprintf(digest, sizeof digest, "%016llx", static_cast<unsigned long long>(fnv1a_digest(digest_src)));
    provenance["version"] = kVersion;
    provenance["schema_version"] = kSchemaVersion;
    provenance["seed"] = scenarios.empty() ? base.seed : scenarios.front().seed;
    provenance["config_digest"] = digest;
    provenance["methods"] = methods;

    std::filesystem::create_directories(a.out_dir);
    std::ostringstream csv;
    csv << "# submeta " << kVersion << " seed=" << provenance["seed"].get<std::uint64_t>() << " config_digest=" << digest
        << '\n';
    csv << metrics_csv_header();
    json results = json::array();
    for (const auto& s : scenarios) {
        const auto m = run_scenario(s, methods, threads);
        csv << metrics_csv_rows(m);
        results.push_back(to_json(m));
        std::cerr << "scenario " << results.size() << "/" << scenarios.size() << " done\n";
    }
    json out;
    out["provenance"] = provenance;
    out["scenarios"] = results;
    std::ofstream(std::filesystem::path(a.out_dir) / "metrics.csv") << csv.str();
    std::ofstream(std::filesystem::path(a.out_dir) / "metrics.json") << out.dump(2) << '\n';
    return 0;
}

struct DiagnoseArgs {
    std::string input;
    std::string weights_da = "inverse_variance";
    std::string weights_ad = "inverse_variance";
    std::string model = "ce";
    std::string tau = "reml";
    bool loo = false;
};

int cmd_diagnose(const DiagnoseArgs& a) {
    const auto data = read_csv_file(a.input);
    WeightSpec da{parse_weight_scheme(a.weights_da), parse_model(a.model), parse_tau_method(a.tau)};
    WeightSpec ad{parse_weight_scheme(a.weights_ad), parse_model(a.model), parse_tau_method(a.tau)};
    json out;
    out["schema_version"] = kSchemaVersion;
    out["version"] = kVersion;
    out["input"] = a.input;
    out["mismatch"] = to_json(mismatch(data, da, ad), data);
    if (a.loo) out["influence"] = to_json(loo_influence(data, da, ad));
    std::cout << out.dump(2) << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Subgroup meta-analysis: aggregation-bias diagnostics and collapsible weighting"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    AnalyzeArgs aa;
    auto* analyze = app.add_subcommand("analyze", "Pool a study CSV");
    analyze->add_option("--input", aa.input, "Study CSV")->required();
    analyze->add_option("--method", aa.method, "da, ad, vhas, within-trial, prev-adjusted, centered, swada")
        ->check(CLI::IsMember({"da", "ad", "vhas", "within-trial", "prev-adjusted", "centered", "swada"}));
    analyze->add_option("--scheme", aa.scheme, "Common weight scheme for swada and centered");
    analyze->add_option("--model", aa.model, "ce or re")->check(CLI::IsMember({"ce", "re"}));
    analyze->add_option("--tau-estimator", aa.tau, "reml, dl or zero")->check(CLI::IsMember({"reml", "dl", "zero"}));
    analyze->add_option("--tau2", aa.tau2, "Fixed heterogeneity for scheme weights");
    analyze->add_option("--sigma", aa.sigma, "vHAS covariance structure: full or tau1_tau2");
    analyze->add_option("--single-subgroup", aa.policy, "swada policy: refuse, exclude, subgroup-only")
        ->check(CLI::IsMember({"refuse", "exclude", "subgroup-only"}));
    analyze->add_flag("--exclude-single-subgroup", aa.exclude_single, "Drop studies reporting one subgroup");
    analyze->add_flag("--subgroup-only-weights", aa.subgroup_only, "Same as --single-subgroup subgroup-only");
    analyze->add_flag("--naive-stage2", aa.naive_stage2, "Within-trial: ignore Var(gamma) in stage 2");
    analyze->add_flag("--all-methods", aa.all_methods, "Run the full comparison table");
    analyze->add_flag("--forest", aa.forest, "Include the forest-plot payload");
    analyze->add_option("--output", aa.output, "json or csv")->check(CLI::IsMember({"json", "csv"}));

    SimulateArgs sa;
    auto* simulate = app.add_subcommand("simulate", "Run simulation scenarios");
    simulate->add_option("--config", sa.config, "Scenario grid JSON");
    simulate->add_option("--out-dir", sa.out_dir, "Output directory");
    simulate->add_option("--threads", sa.threads, "Worker threads (default: all cores)");
    simulate->add_option("--seed", sa.seed, "Master seed (fallback: SWADA_SEED)");
    simulate->add_option("--methods", sa.methods, "Comma-separated method list");
    simulate->add_option("--k", sa.k);
    simulate->add_option("--reps", sa.reps);
    simulate->add_option("--tau1", sa.tau1);
    simulate->add_option("--tau2", sa.tau2);
    simulate->add_option("--delta", sa.delta);
    simulate->add_option("--gamma-w", sa.gamma_w);
    simulate->add_option("--uisd", sa.uisd);
    simulate->add_option("--prevalence-scheme", sa.scheme);
    simulate->add_option("--target", sa.target, "weighted or at_mean_prev");

    DiagnoseArgs da;
    auto* diagnose = app.add_subcommand("diagnose", "Mismatch between DA and AD");
    diagnose->add_option("--input", da.input, "Study CSV")->required();
    diagnose->add_option("--weights-da", da.weights_da, "inverse_variance or a common scheme");
    diagnose->add_option("--weights-ad", da.weights_ad, "inverse_variance or a common scheme");
    diagnose->add_option("--model", da.model, "ce or re")->check(CLI::IsMember({"ce", "re"}));
    diagnose->add_option("--tau-estimator", da.tau)->check(CLI::IsMember({"reml", "dl", "zero"}));
    diagnose->add_flag("--loo", da.loo, "Leave-one-out influence table");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*analyze) return cmd_analyze(aa);
        if (*simulate) return cmd_simulate(sa);
        if (*diagnose) return cmd_diagnose(da);
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const ConvergenceError& e) {
        std::cerr << "convergence failure: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
