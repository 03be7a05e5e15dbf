// Acceptance checks: one PASS/FAIL line per criterion.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "submeta/diagnostics.hpp"
#include "submeta/estimators.hpp"
#include "submeta/io.hpp"
#include "submeta/simulation.hpp"
#include "submeta/swada.hpp"

using namespace submeta;

namespace {

const std::string kData = SUBMETA_DATA_DIR;
int failures = 0;

void report(int id, bool pass, const std::string& detail) {
    std::printf("criterion %d: %s  %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
    if (!pass) ++failures;
}

std::string fmt(double x, int prec = 4) {
    std::ostringstream o;
    o.precision(prec);
    o << x;
    return o.str();
}

bool within(double x, double target, double tol) { return std::abs(x - target) <= tol; }
bool in_range(double x, double lo, double hi) { return x >= lo && x <= hi; }

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

MetaDataset random_dataset(std::mt19937_64& rng, int k, bool absences = true) {
    std::normal_distribution<double> z;
    std::uniform_real_distribution<double> u(0.15, 0.9);
    std::uniform_int_distribution<int> n(5, 200);
    std::bernoulli_distribution drop(0.2);
    MetaDataset d;
    for (int j = 0; j < k; ++j) {
        auto a = SubgroupEstimate::make(0.2 + 0.4 * z(rng), u(rng), n(rng));
        auto b = SubgroupEstimate::make(-0.3 + 0.4 * z(rng), u(rng), n(rng));
        if (absences && j > 0 && drop(rng)) (j % 2 ? a : b) = SubgroupEstimate::absent();
        d.studies.push_back(StudyRecord::make("s" + std::to_string(j), a, b));
    }
    return d;
}

const std::vector<WeightScheme> kSchemes{WeightScheme::equal,    WeightScheme::interaction_re,
                                         WeightScheme::study_size, WeightScheme::smaller_subgroup,
                                         WeightScheme::min_iv,   WeightScheme::min_total_variance};

void criterion1() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto d = read_csv_file(kData + "/react.csv");
    const double ce = std::exp(estimate_da(d, TauMethod::reml, ModelKind::common_effect).gamma.point);
    const double re = std::exp(estimate_da(d, TauMethod::reml, ModelKind::random_effects).gamma.point);
    const double ad = std::exp(estimate_ad(d, TauMethod::reml, ModelKind::random_effects).gamma.point);
    const double t = seconds_since(t0);
    const bool ok = within(ce, 1.68, 0.05) && in_range(re, 1.88, 2.02) && within(ad, 3.86, 0.03) && t < 1.0;
    report(1, ok, "CE DA " + fmt(ce) + ", RE DA " + fmt(re) + ", AD " + fmt(ad) + ", " + fmt(t, 3) + " s");
}

void criterion2() {
    const auto d = read_csv_file(kData + "/react.csv");
    const double tc = estimate_tau(contrast_sample(d), TauMethod::reml).tau2;
    bool ok = true;
    std::string detail;
    auto anchored = [&](const std::string& name, const AnalysisResult& r) {
        const double ror = std::exp(r.gamma.point), lo = std::exp(r.gamma.ci_lower), hi = std::exp(r.gamma.ci_upper);
        ok = ok && within(ror, 3.86, 0.03) && within(lo, 1.38, 0.1) && within(hi, 10.78, 0.1);
        detail += name + " " + fmt(ror) + " (" + fmt(lo) + "-" + fmt(hi) + "), ";
    };
    anchored("within-trial", fit_within_trial(d, TauMethod::reml, ModelKind::random_effects));
    anchored("prev-adjusted", to_result(fit_prevalence_adjusted(d)));
    anchored("interaction-RE", pool_swada(d, compute_weights(d, WeightScheme::interaction_re)));
    anchored("min-of-three RE", pool_swada(d, compute_weights(d, WeightScheme::min_iv, tc)));
    const double eq = std::exp(pool_swada(d, compute_weights(d, WeightScheme::equal)).gamma.point);
    const double ss = std::exp(pool_swada(d, compute_weights(d, WeightScheme::study_size)).gamma.point);
    const double mtv = std::exp(pool_swada(d, compute_weights(d, WeightScheme::min_total_variance)).gamma.point);
    ok = ok && within(eq, 3.31, 0.05) && within(ss, 2.06, 0.05) && in_range(mtv, 3.7, 3.95);
    detail += "equal " + fmt(eq) + ", study-size " + fmt(ss) + ", min-total-variance " + fmt(mtv);
    report(2, ok, detail);
}

void criterion3() {
    const auto d = read_csv_file(kData + "/il6.csv");
    // B over A orientation
    const double ce = std::exp(-estimate_da(d, TauMethod::reml, ModelKind::common_effect).gamma.point);
    const double re = std::exp(-estimate_da(d, TauMethod::reml, ModelKind::random_effects).gamma.point);
    const double ad = std::exp(-estimate_ad(d, TauMethod::reml, ModelKind::random_effects).gamma.point);
    const bool ok = within(ce, 0.73, 0.02) && within(re, 0.75, 0.02) && within(ad, 0.69, 0.02);
    report(3, ok, "CE DA " + fmt(ce) + ", RE DA " + fmt(re) + ", AD " + fmt(ad));
}

void criterion4() {
    std::mt19937_64 rng(4004);
    std::uniform_int_distribution<int> kd(2, 12);
    int pooled = 0, bad = 0, bad_blue = 0;
    double worst = 0.0;
    for (int rep = 0; rep < 1000; ++rep) {
        const auto d = random_dataset(rng, kd(rng));
        for (auto s : kSchemes) {
            AnalysisResult r;
            try {
                r = pool_swada(d, compute_weights(d, s));
            } catch (const InputError&) {
                continue;
            }
            ++pooled;
            const double gap = std::abs((r.beta_a.point - r.beta_b.point) - r.gamma.point);
            worst = std::max(worst, gap);
            if (!(gap < 1e-10) || !r.collapsible) ++bad;
            if (s == WeightScheme::interaction_re &&
                r.gamma.point != estimate_ad(d, TauMethod::reml, ModelKind::random_effects).gamma.point)
                ++bad_blue;
        }
    }
    report(4, bad == 0 && bad_blue == 0 && pooled > 0,
           std::to_string(pooled) + " pools, max gap " + fmt(worst, 3) + ", " + std::to_string(bad_blue) +
               " interaction-RE mismatches");
}

void criterion5() {
    std::mt19937_64 rng(5005);
    std::uniform_int_distribution<int> kd(2, 12);
    const WeightSpec ce{WeightScheme::inverse_variance, ModelKind::common_effect, TauMethod::reml};
    const WeightSpec re{WeightScheme::inverse_variance, ModelKind::random_effects, TauMethod::reml};
    double worst = 0.0;
    for (int rep = 0; rep < 1000; ++rep) {
        const auto d = random_dataset(rng, kd(rng));
        for (const auto& spec : {ce, re}) {
            const double direct = estimate_da(d, spec.tau_method, spec.model).gamma.point -
                                  estimate_ad(d, spec.tau_method, spec.model).gamma.point;
            worst = std::max(worst, std::abs(mismatch(d, spec, spec).delta_hat - direct));
        }
    }
    // Common schemes coincide on every subgroup only when all studies report both.
    int nonzero_var = 0, zero_var_distinct = 0;
    for (int rep = 0; rep < 200; ++rep) {
        const auto d = random_dataset(rng, kd(rng), false);
        for (auto s : kSchemes) {
            const WeightSpec spec{s, ModelKind::common_effect, TauMethod::reml};
            if (mismatch(d, spec, spec).var_delta != 0.0) ++nonzero_var;
        }
        if (mismatch(d, ce, ce).var_delta == 0.0) ++zero_var_distinct;
    }
    std::normal_distribution<double> z;
    std::uniform_int_distribution<int> nd(10, 500);
    double worst_const = 0.0;
    for (int rep = 0; rep < 200; ++rep) {
        MetaDataset d;
        for (int j = 0; j < 8; ++j) {
            const std::int64_t n = 4 * nd(rng);
            d.studies.push_back(StudyRecord::make("u" + std::to_string(j),
                                                  SubgroupEstimate::make(z(rng), se_from_uisd(4.0, n, 0.75), 3 * n / 4),
                                                  SubgroupEstimate::make(z(rng), se_from_uisd(4.0, n, 0.25), n / 4)));
        }
        worst_const = std::max(worst_const, std::abs(mismatch(d, ce, ce).delta_hat));
    }
    report(5, worst <= 1e-12 && nonzero_var == 0 && zero_var_distinct == 0 && worst_const < 1e-12,
           "max |delta - (DA - AD)| " + fmt(worst, 3) + ", common-scheme nonzero variances " +
               std::to_string(nonzero_var) + ", inverse-variance zero variances " + std::to_string(zero_var_distinct) + ", constant-prevalence max |delta| " + fmt(worst_const, 3));
}

ScenarioConfig sim_config(double delta) {
    ScenarioConfig c;
    c.k = 20;
    c.prevalence_scheme = PrevalenceScheme::unif_10_90;
    c.delta = delta;
    c.tau1 = 0.1;
    c.reps = 1000;
    c.seed = 1;
    return c;
}

void criterion6(const ScenarioMetrics& sm, double secs) {
    const double n = sm.diagnostics_ok;
    const double mcse = sm.sd_da_error_minus_expected / std::sqrt(n);
    const bool bias_ok = std::abs(sm.mean_da_error - sm.mean_aggbias_expected) <= 3.0 * mcse;
    const double da_cov = sm.find("da")->coverage_gamma;
    bool ok = bias_ok && da_cov < 0.90 && secs < 300.0;
    std::string detail = "DA error " + fmt(sm.mean_da_error) + " vs expected " + fmt(sm.mean_aggbias_expected) +
                         " (MCSE " + fmt(mcse, 2) + "), DA coverage " + fmt(da_cov, 3);
    for (const char* m : {"within_trial", "prev_adjusted", "swada_interaction_re"}) {
        const double c = sm.find(m)->coverage_gamma;
        ok = ok && in_range(c, 0.93, 0.97);
        detail += std::string(", ") + m + " " + fmt(c, 3);
    }
    report(6, ok, detail + ", " + fmt(secs, 3) + " s");
}

void criterion7(const ScenarioMetrics& sm) {
    bool ok = true;
    std::string detail, misses;
    for (const auto& m : sm.methods) {
        const double band = 3.0 * std::sqrt(0.95 * 0.05 / m.n_ok);
        if (!within(m.coverage_gamma, 0.95, band)) {
            ok = false;
            misses += " " + m.method + "=" + fmt(m.coverage_gamma, 3);
        }
    }
    const auto* da = sm.find("da");
    const double mm_mcse = da->sd_mismatch / std::sqrt(static_cast<double>(da->n_ok));
    const bool mm_ok = std::abs(da->mean_mismatch) <= 3.0 * mm_mcse;
    const double ce_mcse = sm.sd_delta_ce / std::sqrt(static_cast<double>(sm.diagnostics_ok));
    const bool ce_ok = std::abs(sm.mean_delta_ce) <= 3.0 * ce_mcse;
    ok = ok && mm_ok && ce_ok;
    detail = "coverage outside band:" + (misses.empty() ? std::string(" none") : misses) + "; RE mismatch " +
             fmt(da->mean_mismatch, 3) + " (MCSE " + fmt(mm_mcse, 2) + "), CE mismatch " + fmt(sm.mean_delta_ce, 3) +
             " (MCSE " + fmt(ce_mcse, 2) + ")";
    report(7, ok, detail);
}

void criterion8(const ScenarioMetrics& sm) {
    const double eq = sm.find("swada_equal")->width_ratio_gamma;
    const double ss = sm.find("swada_study_size")->width_ratio_gamma;
    const double sg = sm.find("swada_smaller_subgroup")->width_ratio_gamma;
    bool ok = in_range(eq, 1.05, 1.25) && in_range(ss, 1.0, 1.10) && in_range(sg, 1.0, 1.10);
    std::string detail = "equal " + fmt(eq) + ", study-size " + fmt(ss) + ", smaller-subgroup " + fmt(sg);
    for (const char* m : {"within_trial", "prev_adjusted", "swada_interaction_re"}) {
        const double r = sm.find(m)->width_ratio_gamma;
        // two-decimal ratio
        ok = ok && std::round(r * 100.0) == 100.0;
        detail += std::string(", ") + m + " " + fmt(r, 6);
    }
    report(8, ok, detail);
}

void criterion9() {
    // Minimum total variance vs a dense simplex grid on 3-study toys.
    std::mt19937_64 rng(9009);
    std::uniform_real_distribution<double> u(0.2, 1.5);
    double worst_w = 0.0;
    for (int rep = 0; rep < 10; ++rep) {
        MetaDataset d;
        for (int j = 0; j < 3; ++j)
            d.studies.push_back(StudyRecord::make("s" + std::to_string(j), SubgroupEstimate::make(0, u(rng), 50),
                                                  SubgroupEstimate::make(0, u(rng), 50)));
        const auto w = compute_weights(d, WeightScheme::min_total_variance).weights;
        std::vector<double> best(3);
        double best_val = kInf;
        for (int i = 0; i <= 1000; ++i)
            for (int j = 0; i + j <= 1000; ++j) {
                const std::vector<double> g{i * 1e-3, j * 1e-3, (1000 - i - j) * 1e-3};
                const double v = total_variance_objective(d, g, 0.0);
                if (v < best_val) {
                    best_val = v;
                    best = g;
                }
            }
        for (int i = 0; i < 3; ++i) worst_w = std::max(worst_w, std::abs(w[i] - best[i]));
    }

    // REML tau against a grid of the restricted likelihood.
    std::normal_distribution<double> z;
    double worst_tau = 0.0;
    for (int rep = 0; rep < 20; ++rep) {
        UnivariateSample s;
        const double tau = std::abs(z(rng)) * 0.6;
        for (int j = 0; j < 3 + rep % 8; ++j) {
            s.variances.push_back(0.05 + 0.95 * std::uniform_real_distribution<double>()(rng));
            s.effects.push_back(0.3 + tau * z(rng) + std::sqrt(s.variances.back()) * z(rng));
        }
        const double got = tau_reml(s).tau2;
        const double upper = 1.2 * got + 0.5;
        double best = 0.0, best_ll = -kInf;
        for (double t = 0.0; t <= upper; t += 1e-4) {
            const double ll = restricted_loglik(s, t);
            if (ll > best_ll) {
                best_ll = ll;
                best = t;
            }
        }
        worst_tau = std::max(worst_tau, std::abs(got - best));
    }

    // vHAS optimum against random search.
    const auto d = read_csv_file(kData + "/react.csv");
    const auto fit = fit_vhas(d);
    double best_random = -kInf;
    std::uniform_real_distribution<double> uu(-1.0, 1.0);
    for (int i = 0; i < 10000; ++i) {
        const double phi = fit.phi + 2.0 * uu(rng), gamma = fit.gamma + 3.0 * uu(rng);
        const double a = std::abs(uu(rng)) * 1.5, b = std::abs(uu(rng)) * 1.5, r = 0.999 * uu(rng);
        Eigen::Matrix2d sig;
        sig << a * a, r * a * b, r * a * b, b * b;
        best_random = std::max(best_random, vhas_loglik(d, phi, gamma, sig));
    }
    const bool ok = worst_w <= 0.005 && worst_tau <= 1e-3 && fit.converged && fit.loglik >= best_random;
    report(9, ok, "weights max diff " + fmt(worst_w, 3) + ", tau2 max diff " + fmt(worst_tau, 3) + ", vHAS loglik " +
                      fmt(fit.loglik, 8) + " vs random best " + fmt(best_random, 8));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance checks"};
    int threads = 4;
    app.add_option("--threads", threads, "worker threads for the simulations")->check(CLI::PositiveNumber);
    CLI11_PARSE(app, argc, argv);

    auto guarded = [](int id, auto&& fn) {
        try {
            fn();
        } catch (const std::exception& e) {
            report(id, false, std::string("exception: ") + e.what());
        }
    };
    guarded(1, criterion1);
    guarded(2, criterion2);
    guarded(3, criterion3);
    guarded(4, criterion4);
    guarded(5, criterion5);

    ScenarioMetrics biased, null;
    bool have_biased = false;
    try {
        const auto t0 = std::chrono::steady_clock::now();
        biased = run_scenario(sim_config(3.0), default_methods(), threads);
        const double secs = seconds_since(t0);
        have_biased = true;
        guarded(6, [&] { criterion6(biased, secs); });
    } catch (const std::exception& e) {
        report(6, false, std::string("exception: ") + e.what());
    }
    try {
        null = run_scenario(sim_config(0.0), default_methods(), threads);
        guarded(7, [&] { criterion7(null); });
    } catch (const std::exception& e) {
        report(7, false, std::string("exception: ") + e.what());
    }
    if (have_biased) guarded(8, [&] { criterion8(biased); });
    else report(8, false, "biased scenario did not run");
    guarded(9, criterion9);

    std::printf("%d of 9 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
