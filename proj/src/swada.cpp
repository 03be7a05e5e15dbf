#include "submeta/swada.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>

#include "submeta/estimators.hpp"
#include "submeta/optim.hpp"

namespace submeta {

namespace {

std::uint64_t fnv1a(std::uint64_t h, const void* bytes, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t dataset_fingerprint(const MetaDataset& data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& st : data.studies) {
        h = fnv1a(h, st.study_id.data(), st.study_id.size());
        for (const auto* e : {&st.arm_a, &st.arm_b}) {
            const double vals[2] = {e->effect, e->std_err};
            h = fnv1a(h, vals, sizeof(vals));
            h = fnv1a(h, &e->n, sizeof(e->n));
        }
    }
    return h;
}

std::vector<double> normalized(std::vector<double> w) {
    double total = 0.0;
    for (double x : w) total += x;
    if (!(total > 0.0)) throw InputError("weights vanish on every study");
    for (double& x : w) x /= total;
    return w;
}

void require_two_arm(const MetaDataset& data) {
    if (data.two_arm_count() == 0) throw InputError("no study reports both subgroups");
}

}  // namespace

WeightVector compute_weights(const MetaDataset& data, WeightScheme scheme, std::optional<double> tau2,
                             TauMethod tau_method) {
    require_valid(data);
    if (tau2 && !(*tau2 >= 0.0)) throw InputError("tau2 must be nonnegative");
    const std::size_t k = data.size();
    WeightVector out;
    out.scheme = scheme;
    switch (scheme) {
        case WeightScheme::equal:
            out.weights.assign(k, 1.0 / static_cast<double>(k));
            break;
        case WeightScheme::interaction_re: {
            require_two_arm(data);
            const auto cs = contrast_sample(data);
            out.tau2_used = tau2 ? *tau2 : estimate_tau(cs, tau_method).tau2;
            out.weights = inverse_variance_weights(cs.variances, out.tau2_used);
            break;
        }
        case WeightScheme::study_size: {
            std::vector<double> w(k);
            for (std::size_t j = 0; j < k; ++j) w[j] = static_cast<double>(data.studies[j].n_total);
            out.weights = normalized(std::move(w));
            break;
        }
        case WeightScheme::smaller_subgroup: {
            require_two_arm(data);
            std::vector<double> w(k, 0.0);
            for (std::size_t j = 0; j < k; ++j) {
                const auto& st = data.studies[j];
                if (st.two_arm()) w[j] = static_cast<double>(std::min(st.arm_a.n, st.arm_b.n));
            }
            out.weights = normalized(std::move(w));
            break;
        }
        case WeightScheme::min_iv: {
            require_two_arm(data);
            out.tau2_used = tau2.value_or(0.0);
            std::vector<double> w(k, 0.0);
            for (std::size_t j = 0; j < k; ++j) {
                const auto& st = data.studies[j];
                if (!st.two_arm()) continue;
                const double va = st.arm_a.variance() + out.tau2_used;
                const double vb = st.arm_b.variance() + out.tau2_used;
                const double vc = contrast(st).variance() + out.tau2_used;
                w[j] = std::min({1.0 / va, 1.0 / vb, 1.0 / vc});
            }
            out.weights = normalized(std::move(w));
            break;
        }
        case WeightScheme::min_total_variance:
            return weights_min_total_variance(data, tau2.value_or(0.0));
        case WeightScheme::inverse_variance:
            throw InputError("inverse_variance is not a common-weight scheme");
    }
    return out;
}

double total_variance_objective(const MetaDataset& data, const std::vector<double>& w, double tau2) {
    double a = 0.0, b = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
        if (w[j] == 0.0) continue;
        const auto& st = data.studies[j];
        if (!st.two_arm()) return kInf;
        a += w[j] * w[j] * (st.arm_a.variance() + tau2);
        b += w[j] * w[j] * (st.arm_b.variance() + tau2);
    }
    if (!(a > 0.0 && b > 0.0)) return kInf;
    return std::log(a) + std::log(b);
}

WeightVector weights_min_total_variance(const MetaDataset& data, double tau2) {
    require_valid(data);
    if (!(tau2 >= 0.0)) throw InputError("tau2 must be nonnegative");
    std::vector<std::size_t> support;
    for (std::size_t j = 0; j < data.size(); ++j)
        if (data.studies[j].two_arm()) support.push_back(j);
    if (support.size() < 2) throw InputError("minimum total variance weights need at least 2 two-arm studies");
    const Eigen::Index m = static_cast<Eigen::Index>(support.size());
    Eigen::VectorXd va(m), vb(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        const auto& st = data.studies[support[static_cast<std::size_t>(i)]];
        va(i) = st.arm_a.variance() + tau2;
        vb(i) = st.arm_b.variance() + tau2;
    }

    auto softmax = [](const Eigen::VectorXd& z) {
        const Eigen::VectorXd e = (z.array() - z.maxCoeff()).exp();
        return Eigen::VectorXd(e / e.sum());
    };
    ObjectiveFn f = [&](const Eigen::VectorXd& z, Eigen::VectorXd& grad) {
        const Eigen::VectorXd w = softmax(z);
        const Eigen::VectorXd w2 = w.array().square();
        const double a = w2.dot(va), b = w2.dot(vb);
        const Eigen::VectorXd gw = 2.0 * w.cwiseProduct(va) / a + 2.0 * w.cwiseProduct(vb) / b;
        grad = (w.array() * (gw.array() - w.dot(gw))).matrix();
        return std::log(a) + std::log(b);
    };

    const std::uint64_t base = dataset_fingerprint(data);
    constexpr int kStarts = 16;
    Eigen::VectorXd best_w;
    double best_val = kInf;
    bool any_converged = false;
    for (int s = 0; s < kStarts; ++s) {
        Eigen::VectorXd z0 = Eigen::VectorXd::Zero(m);
        if (s > 0) {
            std::uint64_t seed = base;
            seed = fnv1a(seed, &s, sizeof(s));
            std::mt19937_64 rng(seed);
            for (Eigen::Index i = 0; i < m; ++i)
                z0(i) = 4.0 * (static_cast<double>(rng() >> 11) * 0x1.0p-53) - 2.0;
        }
        const auto r = minimize_bfgs(f, z0, {1e-7, 2000});
        if (!r.converged) continue;
        any_converged = true;
        // Keep the earliest start unless a later one is better by more than 1e-9.
        if (r.value < best_val - 1e-9) {
            best_val = r.value;
            best_w = softmax(r.x);
        }
    }
    if (!any_converged) throw ConvergenceError("minimum total variance weights did not converge");

    WeightVector out;
    out.scheme = WeightScheme::min_total_variance;
    out.tau2_used = tau2;
    out.weights.assign(data.size(), 0.0);
    for (Eigen::Index i = 0; i < m; ++i) out.weights[support[static_cast<std::size_t>(i)]] = best_w(i);
    return out;
}

AnalysisResult pool_swada(const MetaDataset& data, const WeightVector& weights, const SwadaOptions& opts) {
    require_valid(data);
    const std::size_t k = data.size();
    if (weights.weights.size() != k) throw std::invalid_argument("weight vector length differs from study count");
    double total = 0.0;
    for (double w : weights.weights) {
        if (!(w >= 0.0)) throw InputError("weights must be nonnegative");
        total += w;
    }
    if (std::abs(total - 1.0) > 1e-9) throw InputError("weights must sum to 1");

    bool on_single = false;
    for (std::size_t j = 0; j < k; ++j)
        if (weights.weights[j] > 0.0 && !data.studies[j].two_arm()) on_single = true;

    std::vector<double> wa = weights.weights, wb = weights.weights, wg = weights.weights;
    bool collapsible = true;
    if (on_single) {
        switch (opts.policy) {
            case SingleSubgroupPolicy::refuse:
                throw InputError("scheme weights incompatible with contrast pooling");
            case SingleSubgroupPolicy::exclude_renormalize:
                for (std::size_t j = 0; j < k; ++j)
                    if (!data.studies[j].two_arm()) wg[j] = 0.0;
                wg = normalized(std::move(wg));
                wa = wb = wg;
                break;
            case SingleSubgroupPolicy::subgroup_only:
                for (std::size_t j = 0; j < k; ++j) {
                    if (!data.studies[j].arm_a.present()) wa[j] = 0.0;
                    if (!data.studies[j].arm_b.present()) wb[j] = 0.0;
                    if (!data.studies[j].two_arm()) wg[j] = 0.0;
                }
                wa = normalized(std::move(wa));
                wb = normalized(std::move(wb));
                wg = normalized(std::move(wg));
                collapsible = false;
                break;
        }
    }

    const auto sa = subgroup_sample(data, Arm::a);
    const auto sb = subgroup_sample(data, Arm::b);
    const auto sc = contrast_sample(data);
    double ta = 0.0, tb = 0.0, tc = 0.0;
    if (opts.model == ModelKind::random_effects) {
        ta = estimate_tau(sa, opts.tau_method).tau2;
        tb = estimate_tau(sb, opts.tau_method).tau2;
        tc = estimate_tau(sc, opts.tau_method).tau2;
    }
    const auto pa = pool_univariate(sa, ta, wa);
    const auto pb = pool_univariate(sb, tb, wb);
    const auto pg = pool_univariate(sc, tc, wg);

    AnalysisResult r;
    r.method = Method::swada;
    r.beta_a = Estimate::wald(pa.point, pa.std_err);
    r.beta_b = Estimate::wald(pb.point, pb.std_err);
    r.gamma = Estimate::wald(pg.point, pg.std_err);
    r.tau_estimates["tau2_a"] = ta;
    r.tau_estimates["tau2_b"] = tb;
    r.tau_estimates["tau2_contrast"] = tc;
    r.weights_a = WeightVector{wa, weights.scheme, weights.tau2_used};
    r.weights_b = WeightVector{wb, weights.scheme, weights.tau2_used};
    r.weights_gamma = WeightVector{wg, weights.scheme, weights.tau2_used};
    r.collapsible = collapsible;
    r.label = "SWADA (" + to_string(weights.scheme) + ")";
    return r;
}

}  // namespace submeta
