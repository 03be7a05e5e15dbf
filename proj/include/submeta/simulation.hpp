#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "submeta/core_model.hpp"

namespace submeta {

enum class PrevalenceScheme { const_50, const_25, unif_30_70, unif_10_90, tri_10_50 };
enum class BetaTarget { weighted, at_mean_prev };

struct ScenarioConfig {
    int k = 20;
    PrevalenceScheme prevalence_scheme = PrevalenceScheme::const_50;
    double tau1 = 0.1;
    std::optional<double> tau2;  // defaults to tau1 / 2
    double delta = 0.0;
    int reps = 1000;
    std::uint64_t seed = 1;
    double uisd = 4.0;
    double size_mu = 5.0;
    double size_sigma = 1.0;
    double size_rho = 0.75;
    double phi = 2.0;
    double gamma_w = 1.0;  // within-study interaction, A - B
    BetaTarget target = BetaTarget::weighted;

    double tau2_value() const { return tau2 ? *tau2 : 0.5 * tau1; }
    void validate() const;
};

/// Random stream keyed by (seed, replicate, purpose); adding consumers never
/// perturbs the draws of another purpose.
class Stream {
public:
    enum class Purpose : std::uint64_t { sizes = 1, prevalence = 2, effects = 3, noise = 4 };

    Stream(std::uint64_t seed, std::uint64_t replicate, Purpose purpose);
    explicit Stream(std::uint64_t raw_seed);

    double uniform();  // [0, 1)
    double normal();

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

std::vector<std::int64_t> gen_study_sizes(int k, double size_mu, double size_sigma, double size_rho, Stream& rng);
std::vector<double> gen_prevalences(PrevalenceScheme scheme, int k, Stream& rng);
double scheme_mean_prevalence(PrevalenceScheme scheme);

struct TrueParameters {
    double phi = 0.0;
    double delta = 0.0;
    double gamma_w = 0.0;
    std::vector<double> prevalence;  // realized p_Bj
    std::vector<double> mean_a;
    std::vector<double> mean_b;
};

struct GeneratedData {
    MetaDataset data;
    TrueParameters truth;
};

struct GenOptions {
    bool noise = true;
};

GeneratedData gen_dataset(const ScenarioConfig& config, int replicate, const GenOptions& opts = {});

/// Estimators available to the simulation, in default reporting order.
const std::vector<std::string>& method_registry();
const std::vector<std::string>& default_methods();
AnalysisResult run_method(const std::string& name, const MetaDataset& data);

struct MethodOutcome {
    bool ok = false;
    std::string error;
    double gamma = 0.0, gamma_se = 0.0;
    bool has_betas = false;
    double beta_a = 0.0, beta_a_se = 0.0;
    double beta_b = 0.0;
    double beta_target = 0.0;
    double mismatch = 0.0;
};

struct ReplicateOutcome {
    std::vector<MethodOutcome> methods;
    bool diagnostics_ok = false;
    double delta_ce = 0.0;      // CE IV DA minus CE IV AD
    double delta_re = 0.0;      // RE DA minus RE AD
    double aggbias_expected = 0.0;
    double da_error = 0.0;      // RE DA gamma minus gamma_w
};

ReplicateOutcome run_replicate(const ScenarioConfig& config, int replicate, const std::vector<std::string>& methods);

struct MethodMetrics {
    std::string method;
    int n_ok = 0;
    int n_failed = 0;
    double coverage_gamma = 0.0, coverage_gamma_mcse = 0.0;
    double coverage_beta = 0.0, coverage_beta_mcse = 0.0;  // NaN when the method has no subgroup levels
    double width_ratio_gamma = 0.0;                        // vs AD
    double width_ratio_beta = 0.0;                         // vs DA
    double mean_gamma_error = 0.0, sd_gamma_error = 0.0;
    double mean_mismatch = 0.0, sd_mismatch = 0.0;
};

struct ScenarioMetrics {
    ScenarioConfig config;
    std::vector<MethodMetrics> methods;
    int diagnostics_ok = 0;
    double mean_delta_ce = 0.0, sd_delta_ce = 0.0, max_abs_delta_ce = 0.0;
    double mean_delta_re = 0.0, sd_delta_re = 0.0;
    double mean_aggbias_expected = 0.0;
    double mean_da_error = 0.0;
    /// Standard deviation of (DA error - expected aggregation bias) across replicates.
    double sd_da_error_minus_expected = 0.0;

    const MethodMetrics* find(const std::string& method) const;
};

ScenarioMetrics run_scenario(const ScenarioConfig& config, const std::vector<std::string>& methods, int threads = 1);

std::string to_string(PrevalenceScheme scheme);
PrevalenceScheme parse_prevalence_scheme(const std::string& name);
std::string to_string(BetaTarget target);
BetaTarget parse_beta_target(const std::string& name);

}  // namespace submeta
