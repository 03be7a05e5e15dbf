#pragma once

#include <optional>

#include <Eigen/Dense>

#include "submeta/core_model.hpp"
#include "submeta/heterogeneity.hpp"

namespace submeta {

enum class Arm { a, b };

/// One subgroup column; absent arms carry infinite variance.
UnivariateSample subgroup_sample(const MetaDataset& data, Arm arm);
/// Per-study contrasts g_j; single-subgroup studies carry infinite variance.
UnivariateSample contrast_sample(const MetaDataset& data);

/// Separate pools of each subgroup; gamma is their difference.
AnalysisResult estimate_da(const MetaDataset& data, TauMethod tau_method, ModelKind model);
/// Pool of within-study contrasts. Only gamma is populated.
AnalysisResult estimate_ad(const MetaDataset& data, TauMethod tau_method, ModelKind model);

// ---------------------------------------------------------------------------
// Bivariate marginal models

enum class SigmaStructure { full, tau1_tau2, zero };
enum class Likelihood { ml, reml };

/// Mean (phi, phi - gamma) for (A, B): phi is the A level and gamma = A - B.
struct BivariateFit {
    double phi = 0.0;
    double gamma = 0.0;
    Eigen::Matrix2d sigma = Eigen::Matrix2d::Zero();
    double loglik = 0.0;
    bool converged = false;
    Eigen::Matrix2d vcov_params = Eigen::Matrix2d::Zero();
    Eigen::VectorXd theta;  // unconstrained covariance parameters at the optimum
    int iterations = 0;
};

struct VhasOptions {
    SigmaStructure sigma = SigmaStructure::full;
    Likelihood likelihood = Likelihood::ml;
};

BivariateFit fit_vhas(const MetaDataset& data, const VhasOptions& opts = {});

/// Full Gaussian log-likelihood of the bivariate model at fixed parameters.
double vhas_loglik(const MetaDataset& data, double phi, double gamma, const Eigen::Matrix2d& sigma);

struct ProfileLik {
    double value = 0.0;
    Eigen::VectorXd grad;
};

/// Log-likelihood with the mean profiled out, and its analytic gradient in theta.
///
/// theta is (a, b, c) for `full` with Sigma = [a^2, r a b; r a b, b^2], r = 0.999 tanh(c),
/// and (t1, t2) for `tau1_tau2` with Sigma_j = t1^2 J + t2^2 u u', u = (-p_j, 1 - p_j).
ProfileLik vhas_profile(const MetaDataset& data, SigmaStructure sigma, Likelihood likelihood,
                        const Eigen::VectorXd& theta);

/// Throws ConvergenceError when the fit did not converge.
AnalysisResult to_result(const BivariateFit& fit);

// ---------------------------------------------------------------------------

/// Mean (phi + delta p, phi + delta p - gamma_w) for (A, B), gamma_w = A - B.
struct PrevAdjFit {
    double phi = 0.0;
    std::optional<double> delta;
    double gamma_w = 0.0;
    double tau1 = 0.0;
    double tau2 = 0.0;
    Eigen::MatrixXd vcov_params;  // over (phi, delta, gamma_w), or (phi, gamma_w) without delta
    double loglik = 0.0;
    bool converged = false;
    double mean_prevalence = 0.0;

    /// Between-study interaction gamma_w - delta, when delta is estimated.
    std::optional<double> gamma_agg() const;
};

struct PrevAdjOptions {
    Likelihood likelihood = Likelihood::reml;
    bool estimate_delta = true;
};

PrevAdjFit fit_prevalence_adjusted(const MetaDataset& data, const PrevAdjOptions& opts = {});

/// Subgroup levels are reported at the mean prevalence of the dataset.
AnalysisResult to_result(const PrevAdjFit& fit);

// ---------------------------------------------------------------------------

struct WithinTrialOptions {
    /// Ignore the sampling variability of gamma when pooling the subgroup levels.
    bool naive_stage2 = false;
};

AnalysisResult fit_within_trial(const MetaDataset& data, TauMethod tau_method, ModelKind model,
                                const WithinTrialOptions& opts = {});

AnalysisResult fit_centered_collapsible(const MetaDataset& data, const WeightVector& weights,
                                        TauMethod tau_method, ModelKind model);

std::string to_string(SigmaStructure s);
SigmaStructure parse_sigma_structure(const std::string& name);

}  // namespace submeta
