#include "submeta/core_model.hpp"

#include <cmath>
#include <set>
#include <sstream>

namespace submeta {

StudyRecord StudyRecord::make(std::string id, SubgroupEstimate a, SubgroupEstimate b) {
    StudyRecord s;
    s.study_id = std::move(id);
    s.arm_a = a;
    s.arm_b = b;
    s.n_total = a.n + b.n;
    s.prevalence_b = s.n_total > 0 ? static_cast<double>(b.n) / static_cast<double>(s.n_total) : 0.0;
    return s;
}

StudyRecord StudyRecord::swapped() const {
    return make(study_id, arm_b, arm_a);
}

std::size_t MetaDataset::two_arm_count() const {
    std::size_t c = 0;
    for (const auto& s : studies) c += s.two_arm() ? 1 : 0;
    return c;
}

MetaDataset MetaDataset::without_single_subgroup() const {
    MetaDataset out{{}, label_a, label_b};
    for (const auto& s : studies)
        if (s.two_arm()) out.studies.push_back(s);
    return out;
}

MetaDataset MetaDataset::without_study(std::size_t index) const {
    MetaDataset out{{}, label_a, label_b};
    for (std::size_t j = 0; j < studies.size(); ++j)
        if (j != index) out.studies.push_back(studies[j]);
    return out;
}

Estimate Estimate::wald(double point, double std_err) {
    return {point, std_err, point - kZ975 * std_err, point + kZ975 * std_err};
}

ContrastEstimate contrast(const StudyRecord& study) {
    if (!study.two_arm()) return {0.0, kInf};
    const double va = study.arm_a.std_err * study.arm_a.std_err;
    const double vb = study.arm_b.std_err * study.arm_b.std_err;
    return {study.arm_a.effect - study.arm_b.effect, std::sqrt(va + vb)};
}

double se_from_uisd(double uisd, std::int64_t n_total, double prevalence) {
    if (!(uisd > 0.0) || n_total <= 0 || prevalence < 0.0 || prevalence > 1.0)
        throw std::invalid_argument("se_from_uisd: argument out of range");
    if (prevalence == 0.0) return kInf;
    return uisd / std::sqrt(prevalence * static_cast<double>(n_total));
}

namespace {

void check_arm(const StudyRecord& s, const SubgroupEstimate& arm, const char* name,
               std::vector<Violation>& out) {
    if (arm.n < 0) out.push_back({s.study_id, std::string("negative count in arm ") + name});
    if (arm.n > 0 && !(arm.std_err > 0.0 && std::isfinite(arm.std_err)))
        out.push_back({s.study_id, std::string("arm ") + name + " has participants but no finite positive std_err"});
    if (arm.n == 0 && arm.std_err != kInf)
        out.push_back({s.study_id, std::string("arm ") + name + " has no participants but a finite std_err"});
    if (arm.present() && !std::isfinite(arm.effect))
        out.push_back({s.study_id, std::string("arm ") + name + " effect is not finite"});
}

}  // namespace

std::vector<Violation> validate_studies(const MetaDataset& data) {
    std::vector<Violation> out;
    if (data.studies.empty()) out.push_back({"", "dataset has no studies"});
    std::set<std::string> seen;
    for (const auto& s : data.studies) {
        if (!seen.insert(s.study_id).second) out.push_back({s.study_id, "duplicate study_id"});
        check_arm(s, s.arm_a, "a", out);
        check_arm(s, s.arm_b, "b", out);
        if (s.n_total <= 0) out.push_back({s.study_id, "n_total must be positive"});
        if (s.n_total != s.arm_a.n + s.arm_b.n) out.push_back({s.study_id, "n_total != n_a + n_b"});
        if (s.n_total > 0) {
            const double p = static_cast<double>(s.arm_b.n) / static_cast<double>(s.n_total);
            if (!(std::abs(p - s.prevalence_b) <= 1e-12))
                out.push_back({s.study_id, "prevalence_b != n_b / n_total"});
        }
        if (!s.arm_a.present() && !s.arm_b.present())
            out.push_back({s.study_id, "both subgroups absent"});
    }
    return out;
}

std::vector<Violation> validate_dataset(const MetaDataset& data) {
    auto out = validate_studies(data);
    if (data.studies.size() == 1) out.insert(out.begin(), {"", "dataset needs at least 2 studies"});
    return out;
}

void require_valid(const MetaDataset& data) {
    const auto v = validate_studies(data);
    if (v.empty()) return;
    std::ostringstream msg;
    msg << "invalid dataset:";
    for (const auto& x : v) msg << "\n  [" << (x.study_id.empty() ? "<dataset>" : x.study_id) << "] " << x.rule;
    throw InputError(msg.str());
}

std::string to_string(WeightScheme scheme) {
    switch (scheme) {
        case WeightScheme::equal: return "equal";
        case WeightScheme::interaction_re: return "interaction_re";
        case WeightScheme::study_size: return "study_size";
        case WeightScheme::smaller_subgroup: return "smaller_subgroup";
        case WeightScheme::min_iv: return "min_iv";
        case WeightScheme::min_total_variance: return "min_total_variance";
        case WeightScheme::inverse_variance: return "inverse_variance";
    }
    return "?";
}

std::string to_string(Method method) {
    switch (method) {
        case Method::difference_of_averages: return "da";
        case Method::average_difference: return "ad";
        case Method::vhas: return "vhas";
        case Method::within_trial: return "within-trial";
        case Method::prevalence_adjusted: return "prev-adjusted";
        case Method::centered_collapsible: return "centered";
        case Method::swada: return "swada";
    }
    return "?";
}

WeightScheme parse_weight_scheme(const std::string& name) {
    if (name == "equal") return WeightScheme::equal;
    if (name == "interaction_re") return WeightScheme::interaction_re;
    if (name == "study_size") return WeightScheme::study_size;
    if (name == "smaller_subgroup") return WeightScheme::smaller_subgroup;
    if (name == "min_iv") return WeightScheme::min_iv;
    if (name == "min_total_variance") return WeightScheme::min_total_variance;
    if (name == "iv" || name == "inverse_variance") return WeightScheme::inverse_variance;
    throw InputError("unknown weight scheme '" + name + "'");
}

}  // namespace submeta
