#include "submeta/diagnostics.hpp"

#include <cmath>

#include "submeta/estimators.hpp"
#include "submeta/swada.hpp"

namespace submeta {

namespace {

std::vector<double> restrict_to(const std::vector<double>& w, const MetaDataset& data, bool (*keep)(const StudyRecord&)) {
    std::vector<double> out(w.size(), 0.0);
    double total = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j)
        if (keep(data.studies[j])) {
            out[j] = w[j];
            total += w[j];
        }
    if (!(total > 0.0)) throw InputError("weights vanish on every usable study");
    for (double& x : out) x /= total;
    return out;
}

bool has_a(const StudyRecord& s) { return s.arm_a.present(); }
bool has_b(const StudyRecord& s) { return s.arm_b.present(); }
bool has_both(const StudyRecord& s) { return s.two_arm(); }

}  // namespace

ResolvedWeights resolve_weights(const MetaDataset& data, const WeightSpec& da, const WeightSpec& ad) {
    ResolvedWeights out;
    if (da.scheme == WeightScheme::inverse_variance) {
        const auto r = estimate_da(data, da.tau_method, da.model);
        out.w_a = r.weights_a->weights;
        out.w_b = r.weights_b->weights;
        out.tau2_a = r.weights_a->tau2_used;
        out.tau2_b = r.weights_b->tau2_used;
    } else {
        const auto w = compute_weights(data, da.scheme, std::nullopt, da.tau_method).weights;
        out.w_a = restrict_to(w, data, has_a);
        out.w_b = restrict_to(w, data, has_b);
        if (da.model == ModelKind::random_effects) {
            out.tau2_a = estimate_tau(subgroup_sample(data, Arm::a), da.tau_method).tau2;
            out.tau2_b = estimate_tau(subgroup_sample(data, Arm::b), da.tau_method).tau2;
        }
    }
    if (ad.scheme == WeightScheme::inverse_variance) {
        out.w_ad = estimate_ad(data, ad.tau_method, ad.model).weights_gamma->weights;
    } else {
        out.w_ad = restrict_to(compute_weights(data, ad.scheme, std::nullopt, ad.tau_method).weights, data, has_both);
    }
    return out;
}

MismatchReport mismatch(const MetaDataset& data, const std::vector<double>& w_a, const std::vector<double>& w_b,
                        const std::vector<double>& w_ad, double tau2_a, double tau2_b) {
    const std::size_t k = data.size();
    if (w_a.size() != k || w_b.size() != k || w_ad.size() != k)
        throw std::invalid_argument("weight vectors do not match the number of studies");
    MismatchReport r;
    r.variance_model = (tau2_a > 0.0 || tau2_b > 0.0) ? "RE" : "CE";
    r.d_matrix.assign(2 * k, 0.0);
    r.per_study_contribution.assign(k, 0.0);
    for (std::size_t j = 0; j < k; ++j) {
        const auto& st = data.studies[j];
        if ((w_a[j] > 0.0 && !st.arm_a.present()) || (w_b[j] > 0.0 && !st.arm_b.present()) ||
            (w_ad[j] > 0.0 && !st.two_arm()))
            throw InputError("weight on absent estimate in study '" + st.study_id + "'");
        const double da = w_a[j] - w_ad[j];
        const double db = -(w_b[j] - w_ad[j]);
        r.d_matrix[2 * j] = da;
        r.d_matrix[2 * j + 1] = db;
        double c = 0.0;
        if (da != 0.0) {
            c += da * st.arm_a.effect;
            r.var_delta += da * da * (st.arm_a.variance() + tau2_a);
        }
        if (db != 0.0) {
            c += db * st.arm_b.effect;
            r.var_delta += db * db * (st.arm_b.variance() + tau2_b);
        }
        r.per_study_contribution[j] = c;
        r.delta_hat += c;
    }
    return r;
}

MismatchReport mismatch(const MetaDataset& data, const WeightSpec& da, const WeightSpec& ad) {
    const auto w = resolve_weights(data, da, ad);
    return mismatch(data, w.w_a, w.w_b, w.w_ad, w.tau2_a, w.tau2_b);
}

InfluenceReport loo_influence(const MetaDataset& data, const WeightSpec& da, const WeightSpec& ad) {
    if (data.size() < 3) throw InputError("leave-one-out influence needs at least 3 studies");
    const auto full = mismatch(data, da, ad);
    InfluenceReport out;
    for (std::size_t j = 0; j < data.size(); ++j) {
        const auto sub = mismatch(data.without_study(j), da, ad);
        InfluenceRow row;
        row.study_id = data.studies[j].study_id;
        row.variance_ratio = sub.var_delta / full.var_delta;
        row.delta_shift = sub.delta_hat - full.delta_hat;
        out.rows.push_back(row);
    }
    return out;
}

double aggregation_bias_expectation(const std::vector<double>& prevalences, const std::vector<double>& w_a,
                                    const std::vector<double>& w_b, double delta) {
    if (prevalences.size() != w_a.size() || w_a.size() != w_b.size())
        throw std::invalid_argument("prevalences and weights differ in length");
    double s = 0.0;
    for (std::size_t j = 0; j < prevalences.size(); ++j) s += prevalences[j] * (w_a[j] - w_b[j]);
    return delta * s;
}

double subgroup_mean_bias(double gamma_w) { return 0.5 * gamma_w; }

}  // namespace submeta
