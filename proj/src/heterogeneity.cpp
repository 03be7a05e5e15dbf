#include "submeta/heterogeneity.hpp"

#include <algorithm>
#include <cmath>

#include <boost/math/tools/minima.hpp>
#include <boost/math/tools/toms748_solve.hpp>

namespace submeta {

std::size_t UnivariateSample::finite_count() const {
    return static_cast<std::size_t>(
        std::count_if(variances.begin(), variances.end(), [](double v) { return v < kInf; }));
}

namespace {

void check_sample(const UnivariateSample& s) {
    if (s.effects.size() != s.variances.size())
        throw std::invalid_argument("effects and variances differ in length");
    for (double v : s.variances)
        if (!(v > 0.0)) throw InputError("variances must be positive");
}

void require_two(const UnivariateSample& s) {
    check_sample(s);
    if (s.finite_count() < 2) throw InputError("insufficient studies");
}

}  // namespace

TauEstimate tau_dl(const UnivariateSample& sample) {
    require_two(sample);
    double sw = 0.0, sw2 = 0.0, swy = 0.0;
    std::size_t m = 0;
    for (std::size_t i = 0; i < sample.effects.size(); ++i) {
        if (!(sample.variances[i] < kInf)) continue;
        const double w = 1.0 / sample.variances[i];
        sw += w;
        sw2 += w * w;
        swy += w * sample.effects[i];
        ++m;
    }
    const double mu = swy / sw;
    double q = 0.0;
    for (std::size_t i = 0; i < sample.effects.size(); ++i) {
        if (!(sample.variances[i] < kInf)) continue;
        const double d = sample.effects[i] - mu;
        q += d * d / sample.variances[i];
    }
    const double c = sw - sw2 / sw;
    const double tau2 = std::max(0.0, (q - static_cast<double>(m - 1)) / c);
    return {tau2, TauMethod::dersimonian_laird};
}

double restricted_loglik(const UnivariateSample& sample, double tau2) {
    double sw = 0.0, swy = 0.0, logdet = 0.0;
    for (std::size_t i = 0; i < sample.effects.size(); ++i) {
        if (!(sample.variances[i] < kInf)) continue;
        const double u = sample.variances[i] + tau2;
        sw += 1.0 / u;
        swy += sample.effects[i] / u;
        logdet += std::log(u);
    }
    const double mu = swy / sw;
    double q = 0.0;
    for (std::size_t i = 0; i < sample.effects.size(); ++i) {
        if (!(sample.variances[i] < kInf)) continue;
        const double d = sample.effects[i] - mu;
        q += d * d / (sample.variances[i] + tau2);
    }
    return -0.5 * (logdet + std::log(sw) + q);
}

namespace {

// Derivative of restricted_loglik with respect to tau2.
double reml_score(const UnivariateSample& sample, double tau2) {
    double sw = 0.0, sw2 = 0.0, swy = 0.0;
    for (std::size_t i = 0; i < sample.effects.size(); ++i) {
        if (!(sample.variances[i] < kInf)) continue;
        const double w = 1.0 / (sample.variances[i] + tau2);
        sw += w;
        sw2 += w * w;
        swy += w * sample.effects[i];
    }
    const double mu = swy / sw;
    double q2 = 0.0;
    for (std::size_t i = 0; i < sample.effects.size(); ++i) {
        if (!(sample.variances[i] < kInf)) continue;
        const double w = 1.0 / (sample.variances[i] + tau2);
        const double d = sample.effects[i] - mu;
        q2 += w * w * d * d;
    }
    return 0.5 * (q2 - sw + sw2 / sw);
}

}  // namespace

TauEstimate tau_reml(const UnivariateSample& sample) {
    require_two(sample);
    double mean = 0.0;
    std::size_t m = 0;
    for (std::size_t i = 0; i < sample.effects.size(); ++i)
        if (sample.variances[i] < kInf) { mean += sample.effects[i]; ++m; }
    mean /= static_cast<double>(m);
    double ss = 0.0;
    for (std::size_t i = 0; i < sample.effects.size(); ++i)
        if (sample.variances[i] < kInf) ss += (sample.effects[i] - mean) * (sample.effects[i] - mean);
    const double upper = 10.0 * ss / static_cast<double>(m - 1);
    if (!(upper > 0.0)) return {0.0, TauMethod::reml};

    // Coarse scan guards against a secondary mode, then Brent refines the bracket.
    constexpr int kGrid = 200;
    int best = 0;
    double best_val = -kInf;
    for (int i = 0; i <= kGrid; ++i) {
        const double t = upper * i / kGrid;
        const double v = restricted_loglik(sample, t);
        if (v > best_val) { best_val = v; best = i; }
    }
    const double lo = upper * std::max(0, best - 1) / kGrid;
    const double hi = upper * std::min(kGrid, best + 1) / kGrid;
    auto neg = [&](double t) { return -restricted_loglik(sample, t); };
    const auto [arg, val] = boost::math::tools::brent_find_minima(neg, lo, hi, 52);
    double tau2 = (-val >= best_val) ? arg : upper * best / kGrid;
    // Polish an interior optimum on the score, which has a sharp root where the likelihood is flat.
    const double slo = reml_score(sample, lo), shi = reml_score(sample, hi);
    if (slo > 0.0 && shi < 0.0) {
        std::uintmax_t iters = 200;
        const auto root = boost::math::tools::toms748_solve([&](double t) { return reml_score(sample, t); }, lo, hi,
                                                            slo, shi, boost::math::tools::eps_tolerance<double>(52), iters);
        tau2 = 0.5 * (root.first + root.second);
    }
    // Brent never evaluates the bracket end itself; the boundary maximum is common.
    if (lo == 0.0 && restricted_loglik(sample, 0.0) >= restricted_loglik(sample, tau2)) tau2 = 0.0;
    return {tau2, TauMethod::reml};
}

TauEstimate estimate_tau(const UnivariateSample& sample, TauMethod method) {
    check_sample(sample);
    if (method == TauMethod::fixed_zero || sample.finite_count() < 2) return {0.0, method};
    return method == TauMethod::reml ? tau_reml(sample) : tau_dl(sample);
}

std::vector<double> inverse_variance_weights(std::span<const double> variances, double tau2) {
    std::vector<double> w(variances.size(), 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < variances.size(); ++i) {
        if (!(variances[i] < kInf)) continue;
        w[i] = 1.0 / (variances[i] + tau2);
        total += w[i];
    }
    if (!(total > 0.0)) throw InputError("no finite-variance entries to weight");
    for (double& x : w) x /= total;
    return w;
}

PooledEstimate pool_univariate(const UnivariateSample& sample, double tau2,
                               const std::optional<std::vector<double>>& weights) {
    check_sample(sample);
    if (tau2 < 0.0) throw std::invalid_argument("tau2 must be nonnegative");
    PooledEstimate out;
    if (weights) {
        if (weights->size() != sample.effects.size()) throw std::invalid_argument("weight length mismatch");
        for (std::size_t i = 0; i < weights->size(); ++i) {
            if ((*weights)[i] < 0.0) throw InputError("negative weight");
            if ((*weights)[i] > 0.0 && !(sample.variances[i] < kInf))
                throw InputError("weight on absent estimate");
        }
        out.weights_used = *weights;
    } else {
        out.weights_used = inverse_variance_weights(sample.variances, tau2);
    }
    double point = 0.0, var = 0.0;
    for (std::size_t i = 0; i < sample.effects.size(); ++i) {
        const double w = out.weights_used[i];
        if (w == 0.0) continue;
        point += w * sample.effects[i];
        var += w * w * (sample.variances[i] + tau2);
    }
    out.point = point;
    out.std_err = std::sqrt(var);
    return out;
}

std::string to_string(TauMethod method) {
    switch (method) {
        case TauMethod::dersimonian_laird: return "dl";
        case TauMethod::reml: return "reml";
        case TauMethod::fixed_zero: return "zero";
    }
    return "?";
}

TauMethod parse_tau_method(const std::string& name) {
    if (name == "reml") return TauMethod::reml;
    if (name == "dl") return TauMethod::dersimonian_laird;
    if (name == "zero") return TauMethod::fixed_zero;
    throw InputError("unknown tau estimator '" + name + "'");
}

}  // namespace submeta
