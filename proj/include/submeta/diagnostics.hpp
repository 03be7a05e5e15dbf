#pragma once

#include <string>
#include <vector>

#include "submeta/core_model.hpp"
#include "submeta/heterogeneity.hpp"

namespace submeta {

/// How one side of the DA/AD comparison weights the studies: subgroup- or
/// contrast-specific inverse variance, or one common scheme.
struct WeightSpec {
    WeightScheme scheme = WeightScheme::inverse_variance;
    ModelKind model = ModelKind::common_effect;
    TauMethod tau_method = TauMethod::reml;
};

struct ResolvedWeights {
    std::vector<double> w_a;   // DA weights for subgroup A
    std::vector<double> w_b;   // DA weights for subgroup B
    std::vector<double> w_ad;  // AD contrast weights
    double tau2_a = 0.0;       // heterogeneity added to the A variances in the mismatch variance
    double tau2_b = 0.0;
};

ResolvedWeights resolve_weights(const MetaDataset& data, const WeightSpec& da, const WeightSpec& ad);

struct MismatchReport {
    double delta_hat = 0.0;
    double var_delta = 0.0;
    /// Coefficients on the stacked (y_A1, y_B1, ..., y_Ak, y_Bk).
    std::vector<double> d_matrix;
    std::vector<double> per_study_contribution;
    std::string variance_model;  // "CE" or "RE"
};

/// delta_hat = gamma_DA - gamma_AD as a linear functional of the subgroup estimates.
MismatchReport mismatch(const MetaDataset& data, const std::vector<double>& w_a, const std::vector<double>& w_b,
                        const std::vector<double>& w_ad, double tau2_a = 0.0, double tau2_b = 0.0);

MismatchReport mismatch(const MetaDataset& data, const WeightSpec& da, const WeightSpec& ad);

struct InfluenceRow {
    std::string study_id;
    double variance_ratio = 0.0;
    double delta_shift = 0.0;
};

struct InfluenceReport {
    std::vector<InfluenceRow> rows;
};

InfluenceReport loo_influence(const MetaDataset& data, const WeightSpec& da, const WeightSpec& ad);

double aggregation_bias_expectation(const std::vector<double>& prevalences, const std::vector<double>& w_a,
                                    const std::vector<double>& w_b, double delta);

double subgroup_mean_bias(double gamma_w);

}  // namespace submeta
