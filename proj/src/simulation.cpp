#include "submeta/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numbers>
#include <thread>

#include "submeta/diagnostics.hpp"
#include "submeta/estimators.hpp"
#include "submeta/swada.hpp"

namespace submeta {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

void ScenarioConfig::validate() const {
    if (k < 1) throw InputError("k must be at least 1");
    if (reps < 1) throw InputError("reps must be at least 1");
    if (!(tau1 >= 0.0)) throw InputError("tau1 must be nonnegative");
    if (tau2 && !(*tau2 >= 0.0)) throw InputError("tau2 must be nonnegative");
    if (!(uisd > 0.0)) throw InputError("uisd must be positive");
    if (!(size_sigma >= 0.0)) throw InputError("size_sigma must be nonnegative");
    if (!(size_rho >= 0.0 && size_rho <= 1.0)) throw InputError("size_rho must lie in [0, 1]");
    for (double v : {delta, phi, gamma_w, size_mu})
        if (!std::isfinite(v)) throw InputError("scenario parameters must be finite");
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

Stream::Stream(std::uint64_t seed, std::uint64_t replicate, Purpose purpose)
    : engine_(splitmix64(splitmix64(splitmix64(seed) ^ replicate) ^ static_cast<std::uint64_t>(purpose))) {}

Stream::Stream(std::uint64_t raw_seed) : engine_(splitmix64(raw_seed)) {}

double Stream::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Stream::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
}

std::vector<std::int64_t> gen_study_sizes(int k, double size_mu, double size_sigma, double size_rho, Stream& rng) {
    const double z0 = rng.normal();
    const double a = std::sqrt(size_rho), b = std::sqrt(1.0 - size_rho);
    std::vector<std::int64_t> n(static_cast<std::size_t>(k));
    for (auto& x : n) {
        const double z = rng.normal();
        x = std::max<std::int64_t>(10, std::llround(std::exp(size_mu + size_sigma * (a * z0 + b * z))));
    }
    return n;
}

std::vector<double> gen_prevalences(PrevalenceScheme scheme, int k, Stream& rng) {
    std::vector<double> p(static_cast<std::size_t>(k));
    for (auto& x : p) {
        switch (scheme) {
            case PrevalenceScheme::const_50: x = 0.5; break;
            case PrevalenceScheme::const_25: x = 0.25; break;
            case PrevalenceScheme::unif_30_70: x = 0.3 + 0.4 * rng.uniform(); break;
            case PrevalenceScheme::unif_10_90: x = 0.1 + 0.8 * rng.uniform(); break;
            case PrevalenceScheme::tri_10_50: x = 0.5 - 0.4 * std::sqrt(1.0 - rng.uniform()); break;
        }
    }
    return p;
}

double scheme_mean_prevalence(PrevalenceScheme scheme) {
    switch (scheme) {
        case PrevalenceScheme::const_50: return 0.5;
        case PrevalenceScheme::const_25: return 0.25;
        case PrevalenceScheme::unif_30_70: return 0.5;
        case PrevalenceScheme::unif_10_90: return 0.5;
        case PrevalenceScheme::tri_10_50: return 0.7 / 3.0;
    }
    return kNaN;
}

GeneratedData gen_dataset(const ScenarioConfig& config, int replicate, const GenOptions& opts) {
    const auto r = static_cast<std::uint64_t>(replicate);
    Stream s_sizes(config.seed, r, Stream::Purpose::sizes);
    Stream s_prev(config.seed, r, Stream::Purpose::prevalence);
    Stream s_eff(config.seed, r, Stream::Purpose::effects);
    Stream s_noise(config.seed, r, Stream::Purpose::noise);

    auto sizes = gen_study_sizes(config.k, config.size_mu, config.size_sigma, config.size_rho, s_sizes);
    const auto prev = gen_prevalences(config.prevalence_scheme, config.k, s_prev);
    // Constant schemes keep the split exact so every study has the same realized prevalence.
    std::int64_t unit = 1;
    if (config.prevalence_scheme == PrevalenceScheme::const_50) unit = 2;
    if (config.prevalence_scheme == PrevalenceScheme::const_25) unit = 4;
    if (unit > 1)
        for (auto& n : sizes) n = std::max(unit, unit * static_cast<std::int64_t>(std::llround(static_cast<double>(n) / static_cast<double>(unit))));

    const double tau2 = config.tau2_value();
    GeneratedData out;
    out.truth.phi = config.phi;
    out.truth.delta = config.delta;
    out.truth.gamma_w = config.gamma_w;
    for (int j = 0; j < config.k; ++j) {
        const auto n = sizes[static_cast<std::size_t>(j)];
        const auto nb = std::llround(prev[static_cast<std::size_t>(j)] * static_cast<double>(n));
        const auto na = n - nb;
        const double p = static_cast<double>(nb) / static_cast<double>(n);

        const double b = config.tau1 * s_eff.normal();
        const double c = tau2 * s_eff.normal();
        const double shift = 0.5 * s_eff.uniform() + 0.5 * s_eff.uniform();
        const double level = config.phi + config.delta * p + b + shift;
        const double mean_a = level - p * c;
        const double mean_b = level - config.gamma_w + (1.0 - p) * c;

        const double za = s_noise.normal(), zb = s_noise.normal();
        SubgroupEstimate arm_a, arm_b;
        if (na > 0) {
            const double se = se_from_uisd(config.uisd, n, 1.0 - p);
            arm_a = SubgroupEstimate::make(mean_a + (opts.noise ? se * za : 0.0), se, na);
        }
        if (nb > 0) {
            const double se = se_from_uisd(config.uisd, n, p);
            arm_b = SubgroupEstimate::make(mean_b + (opts.noise ? se * zb : 0.0), se, nb);
        }
        out.data.studies.push_back(StudyRecord::make("S" + std::to_string(j + 1), arm_a, arm_b));
        out.truth.prevalence.push_back(p);
        out.truth.mean_a.push_back(mean_a);
        out.truth.mean_b.push_back(mean_b);
    }
    return out;
}

// ---------------------------------------------------------------------------

const std::vector<std::string>& method_registry() {
    static const std::vector<std::string> names = {
        "da", "ad", "da_ce", "ad_ce", "vhas", "within_trial", "prev_adjusted", "centered",
        "swada_equal", "swada_interaction_re", "swada_study_size", "swada_smaller_subgroup",
        "swada_min_iv", "swada_min_total_variance",
    };
    return names;
}

const std::vector<std::string>& default_methods() {
    static const std::vector<std::string> names = {
        "da", "ad", "vhas", "within_trial", "prev_adjusted", "centered",
        "swada_equal", "swada_interaction_re", "swada_study_size", "swada_smaller_subgroup",
        "swada_min_iv", "swada_min_total_variance",
    };
    return names;
}

AnalysisResult run_method(const std::string& name, const MetaDataset& data) {
    const auto tm = TauMethod::reml;
    const auto re = ModelKind::random_effects;
    if (name == "da") return estimate_da(data, tm, re);
    if (name == "ad") return estimate_ad(data, tm, re);
    if (name == "da_ce") return estimate_da(data, tm, ModelKind::common_effect);
    if (name == "ad_ce") return estimate_ad(data, tm, ModelKind::common_effect);
    if (name == "vhas") return to_result(fit_vhas(data));
    if (name == "within_trial") return fit_within_trial(data, tm, re);
    if (name == "prev_adjusted") return to_result(fit_prevalence_adjusted(data));
    if (name == "centered")
        return fit_centered_collapsible(data, compute_weights(data, WeightScheme::interaction_re), tm, re);
    if (name.rfind("swada_", 0) == 0) {
        const auto scheme = parse_weight_scheme(name.substr(6));
        std::optional<double> tau2;
        if (scheme == WeightScheme::min_iv) tau2 = estimate_tau(contrast_sample(data), tm).tau2;
        const auto w = compute_weights(data, scheme, tau2, tm);
        return pool_swada(data, w, {SingleSubgroupPolicy::exclude_renormalize, re, tm});
    }
    throw InputError("unknown simulation method '" + name + "'");
}

ReplicateOutcome run_replicate(const ScenarioConfig& config, int replicate, const std::vector<std::string>& methods) {
    const auto gen = gen_dataset(config, replicate);
    const auto& data = gen.data;
    const auto& p = gen.truth.prevalence;
    double pbar = 0.0;
    for (double x : p) pbar += x;
    pbar /= static_cast<double>(p.size());
    const double level0 = config.phi + 0.5;

    ReplicateOutcome out;
    std::optional<double> ad_re, ad_ce;
    auto ad_gamma = [&](bool ce) -> double {
        auto& slot = ce ? ad_ce : ad_re;
        if (!slot)
            slot = estimate_ad(data, TauMethod::reml, ce ? ModelKind::common_effect : ModelKind::random_effects).gamma.point;
        return *slot;
    };

    for (const auto& name : methods) {
        MethodOutcome mo;
        try {
            const auto r = run_method(name, data);
            mo.gamma = r.gamma.point;
            mo.gamma_se = r.gamma.std_err;
            mo.has_betas = r.has_betas;
            if (r.has_betas) {
                mo.beta_a = r.beta_a.point;
                mo.beta_a_se = r.beta_a.std_err;
                mo.beta_b = r.beta_b.point;
                double pw = pbar;
                if (config.target == BetaTarget::at_mean_prev) {
                    pw = scheme_mean_prevalence(config.prevalence_scheme);
                } else if (r.weights_a) {
                    pw = 0.0;
                    for (std::size_t j = 0; j < p.size(); ++j) pw += r.weights_a->weights[j] * p[j];
                }
                mo.beta_target = level0 + config.delta * pw;
                if (name == "da") mo.mismatch = mo.gamma - ad_gamma(false);
                else if (name == "da_ce") mo.mismatch = mo.gamma - ad_gamma(true);
                else mo.mismatch = (mo.beta_a - mo.beta_b) - mo.gamma;
            }
            mo.ok = std::isfinite(mo.gamma) && std::isfinite(mo.gamma_se);
            if (!mo.ok) mo.error = "non-finite estimate";
        } catch (const std::exception& e) {
            mo.ok = false;
            mo.error = e.what();
        }
        out.methods.push_back(mo);
    }

    try {
        const WeightSpec ce{WeightScheme::inverse_variance, ModelKind::common_effect, TauMethod::reml};
        const WeightSpec re{WeightScheme::inverse_variance, ModelKind::random_effects, TauMethod::reml};
        out.delta_ce = mismatch(data, ce, ce).delta_hat;
        const auto wr = resolve_weights(data, re, re);
        out.delta_re = mismatch(data, wr.w_a, wr.w_b, wr.w_ad, wr.tau2_a, wr.tau2_b).delta_hat;
        out.aggbias_expected = aggregation_bias_expectation(p, wr.w_a, wr.w_b, config.delta);
        out.da_error = estimate_da(data, TauMethod::reml, ModelKind::random_effects).gamma.point - config.gamma_w;
        out.diagnostics_ok = true;
    } catch (const std::exception&) {
        out.diagnostics_ok = false;
    }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

struct Moments {
    double n = 0.0, sum = 0.0, sum2 = 0.0;
    void add(double x) {
        n += 1.0;
        sum += x;
        sum2 += x * x;
    }
    double mean() const { return n > 0.0 ? sum / n : kNaN; }
    double sd() const {
        if (n < 2.0) return kNaN;
        const double m = sum / n;
        return std::sqrt(std::max(0.0, (sum2 - n * m * m) / (n - 1.0)));
    }
};

double mcse(double c, double n) { return n > 0.0 ? std::sqrt(c * (1.0 - c) / n) : kNaN; }

}  // namespace

const MethodMetrics* ScenarioMetrics::find(const std::string& method) const {
    for (const auto& m : methods)
        if (m.method == method) return &m;
    return nullptr;
}

ScenarioMetrics run_scenario(const ScenarioConfig& config, const std::vector<std::string>& methods, int threads) {
    config.validate();
    for (const auto& m : methods)
        if (std::find(method_registry().begin(), method_registry().end(), m) == method_registry().end())
            throw InputError("unknown simulation method '" + m + "'");

    std::vector<ReplicateOutcome> results(static_cast<std::size_t>(config.reps));
    std::atomic<int> next{0};
    auto worker = [&]() {
        for (int r = next++; r < config.reps; r = next++)
            results[static_cast<std::size_t>(r)] = run_replicate(config, r, methods);
    };
    const int nt = std::max(1, std::min(threads, config.reps));
    if (nt == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < nt; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    // Ordered reduction by replicate index.
    const auto idx = [&](const std::string& name) -> std::optional<std::size_t> {
        const auto it = std::find(methods.begin(), methods.end(), name);
        if (it == methods.end()) return std::nullopt;
        return static_cast<std::size_t>(it - methods.begin());
    };
    const auto ad_idx = idx("ad");
    const auto da_idx = idx("da");

    ScenarioMetrics sm;
    sm.config = config;
    for (std::size_t m = 0; m < methods.size(); ++m) {
        MethodMetrics mm;
        mm.method = methods[m];
        double cov_g = 0.0, cov_b = 0.0, nb = 0.0;
        double w_own_g = 0.0, w_ref_g = 0.0, w_own_b = 0.0, w_ref_b = 0.0;
        Moments err, mis;
        for (const auto& rep : results) {
            const auto& o = rep.methods[m];
            if (!o.ok) {
                ++mm.n_failed;
                continue;
            }
            ++mm.n_ok;
            const double half = kZ975 * o.gamma_se;
            if (std::abs(o.gamma - config.gamma_w) <= half) cov_g += 1.0;
            err.add(o.gamma - config.gamma_w);
            if (ad_idx && rep.methods[*ad_idx].ok) {
                w_own_g += 2.0 * half;
                w_ref_g += 2.0 * kZ975 * rep.methods[*ad_idx].gamma_se;
            }
            if (o.has_betas) {
                nb += 1.0;
                if (std::abs(o.beta_a - o.beta_target) <= kZ975 * o.beta_a_se) cov_b += 1.0;
                mis.add(o.mismatch);
                if (da_idx && rep.methods[*da_idx].ok) {
                    w_own_b += 2.0 * kZ975 * o.beta_a_se;
                    w_ref_b += 2.0 * kZ975 * rep.methods[*da_idx].beta_a_se;
                }
            }
        }
        const double n = static_cast<double>(mm.n_ok);
        mm.coverage_gamma = n > 0.0 ? cov_g / n : kNaN;
        mm.coverage_gamma_mcse = mcse(mm.coverage_gamma, n);
        mm.coverage_beta = nb > 0.0 ? cov_b / nb : kNaN;
        mm.coverage_beta_mcse = mcse(mm.coverage_beta, nb);
        mm.width_ratio_gamma = w_ref_g > 0.0 ? w_own_g / w_ref_g : kNaN;
        mm.width_ratio_beta = w_ref_b > 0.0 ? w_own_b / w_ref_b : kNaN;
        mm.mean_gamma_error = err.mean();
        mm.sd_gamma_error = err.sd();
        mm.mean_mismatch = mis.mean();
        mm.sd_mismatch = mis.sd();
        sm.methods.push_back(mm);
    }

    Moments dce, dre, agg, daerr, diff;
    for (const auto& rep : results) {
        if (!rep.diagnostics_ok) continue;
        ++sm.diagnostics_ok;
        dce.add(rep.delta_ce);
        dre.add(rep.delta_re);
        agg.add(rep.aggbias_expected);
        daerr.add(rep.da_error);
        diff.add(rep.da_error - rep.aggbias_expected);
        sm.max_abs_delta_ce = std::max(sm.max_abs_delta_ce, std::abs(rep.delta_ce));
    }
    sm.mean_delta_ce = dce.mean();
    sm.sd_delta_ce = dce.sd();
    sm.mean_delta_re = dre.mean();
    sm.sd_delta_re = dre.sd();
    sm.mean_aggbias_expected = agg.mean();
    sm.mean_da_error = daerr.mean();
    sm.sd_da_error_minus_expected = diff.sd();
    return sm;
}

std::string to_string(PrevalenceScheme scheme) {
    switch (scheme) {
        case PrevalenceScheme::const_50: return "const_50";
        case PrevalenceScheme::const_25: return "const_25";
        case PrevalenceScheme::unif_30_70: return "unif_30_70";
        case PrevalenceScheme::unif_10_90: return "unif_10_90";
        case PrevalenceScheme::tri_10_50: return "tri_10_50";
    }
    return "?";
}

PrevalenceScheme parse_prevalence_scheme(const std::string& name) {
    for (auto s : {PrevalenceScheme::const_50, PrevalenceScheme::const_25, PrevalenceScheme::unif_30_70,
                   PrevalenceScheme::unif_10_90, PrevalenceScheme::tri_10_50})
        if (to_string(s) == name) return s;
    throw InputError("unknown prevalence scheme '" + name + "'");
}

std::string to_string(BetaTarget target) {
    return target == BetaTarget::weighted ? "weighted" : "at-mean-prev";
}

BetaTarget parse_beta_target(const std::string& name) {
    if (name == "weighted") return BetaTarget::weighted;
    if (name == "at-mean-prev") return BetaTarget::at_mean_prev;
    throw InputError("unknown beta target '" + name + "'");
}

}  // namespace submeta
