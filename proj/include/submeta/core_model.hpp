#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace submeta {

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kZ975 = 1.959963984540054;

/// Input data that violates a domain invariant. The CLI maps this to exit code 2.
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// An optimizer failed to reach its convergence criterion. Exit code 3.
class ConvergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// One subgroup's treatment effect (log odds ratio) within one study.
///
/// An absent subgroup carries an infinite standard error and n = 0; its
/// effect is a placeholder that no estimator reads.
struct SubgroupEstimate {
    double effect = 0.0;
    double std_err = kInf;
    std::int64_t n = 0;

    static SubgroupEstimate absent() { return {}; }
    static SubgroupEstimate make(double effect, double std_err, std::int64_t n) {
        return {effect, std_err, n};
    }

    bool present() const { return std_err < kInf; }
    double variance() const { return present() ? std_err * std_err : kInf; }
    /// Zero for an absent subgroup.
    double precision() const { return present() ? 1.0 / (std_err * std_err) : 0.0; }
};

struct StudyRecord {
    std::string study_id;
    SubgroupEstimate arm_a;
    SubgroupEstimate arm_b;
    std::int64_t n_total = 0;
    double prevalence_b = 0.0;

    /// Builds a record with n_total and prevalence_b derived from the subgroup counts.
    static StudyRecord make(std::string id, SubgroupEstimate a, SubgroupEstimate b);

    bool two_arm() const { return arm_a.present() && arm_b.present(); }
    StudyRecord swapped() const;
};

/// Within-study contrast g = effect(A) - effect(B).
struct ContrastEstimate {
    double g = 0.0;
    double std_err = kInf;

    bool present() const { return std_err < kInf; }
    double variance() const { return present() ? std_err * std_err : kInf; }
};

struct MetaDataset {
    std::vector<StudyRecord> studies;
    std::string label_a = "A";
    std::string label_b = "B";

    std::size_t size() const { return studies.size(); }
    std::size_t two_arm_count() const;
    /// Copy without the studies that report only one subgroup.
    MetaDataset without_single_subgroup() const;
    MetaDataset without_study(std::size_t index) const;
};

struct Violation {
    std::string study_id;
    std::string rule;
};

struct Estimate {
    double point = 0.0;
    double std_err = 0.0;
    double ci_lower = 0.0;
    double ci_upper = 0.0;

    static Estimate wald(double point, double std_err);
};

enum class WeightScheme {
    equal,
    interaction_re,
    study_size,
    smaller_subgroup,
    min_iv,
    min_total_variance,
    inverse_variance,  // subgroup- or contrast-specific IV weights (not a common scheme)
};

struct WeightVector {
    std::vector<double> weights;
    WeightScheme scheme = WeightScheme::equal;
    double tau2_used = 0.0;
};

enum class Method {
    difference_of_averages,
    average_difference,
    vhas,
    within_trial,
    prevalence_adjusted,
    centered_collapsible,
    swada,
};

/// Gamma is always effect(A) - effect(B) on the log scale.
struct AnalysisResult {
    Estimate beta_a;
    Estimate beta_b;
    Estimate gamma;
    std::map<std::string, double> tau_estimates;
    std::optional<WeightVector> weights_a;
    std::optional<WeightVector> weights_b;
    std::optional<WeightVector> weights_gamma;
    Method method = Method::difference_of_averages;
    bool collapsible = false;
    /// False for estimators that only pool the interaction (AD).
    bool has_betas = true;
    std::string label;
};

ContrastEstimate contrast(const StudyRecord& study);

/// Standard error of a subgroup holding `prevalence` of `n_total` participants
/// whose unit information standard deviation is `uisd`.
double se_from_uisd(double uisd, std::int64_t n_total, double prevalence);

/// Per-study rules: unique ids, consistent counts and prevalence, at least one subgroup.
std::vector<Violation> validate_studies(const MetaDataset& data);
/// validate_studies plus the two-study minimum applied to input files.
std::vector<Violation> validate_dataset(const MetaDataset& data);
/// Throws InputError listing every per-study violation. Estimators accept a single study.
void require_valid(const MetaDataset& data);

std::string to_string(WeightScheme scheme);
std::string to_string(Method method);
WeightScheme parse_weight_scheme(const std::string& name);

}  // namespace submeta
