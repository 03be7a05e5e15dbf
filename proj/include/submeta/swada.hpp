#pragma once

#include <optional>

#include "submeta/core_model.hpp"
#include "submeta/heterogeneity.hpp"

namespace submeta {

/// One weight per study from a common scheme. `tau2` overrides the default
/// heterogeneity (AD contrast tau for interaction_re, 0 for min_iv and
/// min_total_variance).
WeightVector compute_weights(const MetaDataset& data, WeightScheme scheme,
                             std::optional<double> tau2 = std::nullopt,
                             TauMethod tau_method = TauMethod::reml);

/// Simplex weights minimizing det Cov(beta_a, beta_b) under common weighting.
WeightVector weights_min_total_variance(const MetaDataset& data, double tau2);

/// log det of Cov(beta_a, beta_b) for common weights `w`; +inf if a subgroup gets no weight.
double total_variance_objective(const MetaDataset& data, const std::vector<double>& w, double tau2);

enum class SingleSubgroupPolicy {
    refuse,               // positive weight on a single-subgroup study is an error
    exclude_renormalize,  // drop those studies and renormalize
    subgroup_only,        // use weights for subgroup means, renormalized two-arm weights for gamma
};

struct SwadaOptions {
    SingleSubgroupPolicy policy = SingleSubgroupPolicy::exclude_renormalize;
    ModelKind model = ModelKind::random_effects;
    TauMethod tau_method = TauMethod::reml;
};

AnalysisResult pool_swada(const MetaDataset& data, const WeightVector& weights, const SwadaOptions& opts = {});

}  // namespace submeta
