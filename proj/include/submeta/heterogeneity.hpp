#pragma once

#include <optional>
#include <span>
#include <vector>

#include "submeta/core_model.hpp"

namespace submeta {

/// Effects with their sampling variances; an infinite variance marks an
/// entry that carries no information and receives zero weight.
struct UnivariateSample {
    std::vector<double> effects;
    std::vector<double> variances;

    std::size_t finite_count() const;
};

enum class TauMethod { dersimonian_laird, reml, fixed_zero };
enum class ModelKind { common_effect, random_effects };

struct TauEstimate {
    double tau2 = 0.0;
    TauMethod method = TauMethod::fixed_zero;
};

struct PooledEstimate {
    double point = 0.0;
    double std_err = 0.0;
    std::vector<double> weights_used;
};

TauEstimate tau_dl(const UnivariateSample& sample);
TauEstimate tau_reml(const UnivariateSample& sample);
/// Dispatches on `method`; with fewer than two usable entries the estimate is 0.
TauEstimate estimate_tau(const UnivariateSample& sample, TauMethod method);

/// Restricted log-likelihood of the normal-normal model at `tau2`, up to a constant.
double restricted_loglik(const UnivariateSample& sample, double tau2);

/// Normalized 1/(v + tau2) weights, zero where v is infinite.
std::vector<double> inverse_variance_weights(std::span<const double> variances, double tau2);

PooledEstimate pool_univariate(const UnivariateSample& sample, double tau2,
                               const std::optional<std::vector<double>>& weights = std::nullopt);

std::string to_string(TauMethod method);
TauMethod parse_tau_method(const std::string& name);

}  // namespace submeta
