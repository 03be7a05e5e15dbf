#include "submeta/estimators.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <numbers>

#include "submeta/optim.hpp"

namespace submeta {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct ColumnPool {
    Estimate estimate;
    WeightVector weights;
};

ColumnPool pool_column(const UnivariateSample& s, TauMethod tau_method, ModelKind model) {
    if (s.finite_count() == 0) throw InputError("subgroup has no data");
    const double tau2 = model == ModelKind::random_effects ? estimate_tau(s, tau_method).tau2 : 0.0;
    const auto p = pool_univariate(s, tau2);
    return {Estimate::wald(p.point, p.std_err), {p.weights_used, WeightScheme::inverse_variance, tau2}};
}

Estimate nan_estimate() { return {kNaN, kNaN, kNaN, kNaN}; }

}  // namespace

UnivariateSample subgroup_sample(const MetaDataset& data, Arm arm) {
    UnivariateSample s;
    s.effects.reserve(data.size());
    s.variances.reserve(data.size());
    for (const auto& st : data.studies) {
        const auto& e = arm == Arm::a ? st.arm_a : st.arm_b;
        s.effects.push_back(e.present() ? e.effect : 0.0);
        s.variances.push_back(e.variance());
    }
    return s;
}

UnivariateSample contrast_sample(const MetaDataset& data) {
    UnivariateSample s;
    s.effects.reserve(data.size());
    s.variances.reserve(data.size());
    for (const auto& st : data.studies) {
        const auto c = contrast(st);
        s.effects.push_back(c.g);
        s.variances.push_back(c.variance());
    }
    return s;
}

AnalysisResult estimate_da(const MetaDataset& data, TauMethod tau_method, ModelKind model) {
    require_valid(data);
    const auto a = pool_column(subgroup_sample(data, Arm::a), tau_method, model);
    const auto b = pool_column(subgroup_sample(data, Arm::b), tau_method, model);
    AnalysisResult r;
    r.method = Method::difference_of_averages;
    r.beta_a = a.estimate;
    r.beta_b = b.estimate;
    r.gamma = Estimate::wald(a.estimate.point - b.estimate.point,
                             std::hypot(a.estimate.std_err, b.estimate.std_err));
    r.tau_estimates["tau2_a"] = a.weights.tau2_used;
    r.tau_estimates["tau2_b"] = b.weights.tau2_used;
    double gap = 0.0;
    for (std::size_t j = 0; j < data.size(); ++j)
        gap = std::max(gap, std::abs(a.weights.weights[j] - b.weights.weights[j]));
    r.collapsible = gap < 1e-12;
    r.weights_a = a.weights;
    r.weights_b = b.weights;
    r.label = model == ModelKind::random_effects ? "DA (RE)" : "DA (CE)";
    return r;
}

AnalysisResult estimate_ad(const MetaDataset& data, TauMethod tau_method, ModelKind model) {
    require_valid(data);
    if (data.two_arm_count() == 0) throw InputError("no study reports both subgroups");
    const auto g = pool_column(contrast_sample(data), tau_method, model);
    AnalysisResult r;
    r.method = Method::average_difference;
    r.beta_a = nan_estimate();
    r.beta_b = nan_estimate();
    r.has_betas = false;
    r.gamma = g.estimate;
    r.tau_estimates["tau2_contrast"] = g.weights.tau2_used;
    r.weights_gamma = g.weights;
    r.label = model == ModelKind::random_effects ? "AD (RE)" : "AD (CE)";
    return r;
}

// ---------------------------------------------------------------------------
// Bivariate Gaussian models with profiled mean

namespace {

struct Unit {
    Eigen::VectorXd y;
    Eigen::MatrixXd x;
    Eigen::VectorXd s2;
    std::array<int, 2> arm{};  // 0 = A, 1 = B, per row
    double p = 0.0;
};

using DesignFn = std::function<Eigen::RowVectorXd(Arm, double)>;

std::vector<Unit> make_units(const MetaDataset& data, const DesignFn& design, Eigen::Index n_beta) {
    std::vector<Unit> units;
    units.reserve(data.size());
    for (const auto& st : data.studies) {
        Unit u;
        u.p = st.prevalence_b;
        const int rows = (st.arm_a.present() ? 1 : 0) + (st.arm_b.present() ? 1 : 0);
        u.y.resize(rows);
        u.s2.resize(rows);
        u.x.resize(rows, n_beta);
        int i = 0;
        for (Arm arm : {Arm::a, Arm::b}) {
            const auto& e = arm == Arm::a ? st.arm_a : st.arm_b;
            if (!e.present()) continue;
            u.y(i) = e.effect;
            u.s2(i) = e.variance();
            u.x.row(i) = design(arm, st.prevalence_b);
            u.arm[static_cast<std::size_t>(i)] = arm == Arm::a ? 0 : 1;
            ++i;
        }
        units.push_back(std::move(u));
    }
    return units;
}

int theta_size(SigmaStructure s) {
    switch (s) {
        case SigmaStructure::full: return 3;
        case SigmaStructure::tau1_tau2: return 2;
        case SigmaStructure::zero: return 0;
    }
    return 0;
}

constexpr double kRhoBound = 0.999;

void eval_sigma(SigmaStructure s, const Eigen::VectorXd& th, double p, Eigen::Matrix2d& sig,
                std::array<Eigen::Matrix2d, 3>& d) {
    sig.setZero();
    if (s == SigmaStructure::full) {
        const double a = th(0), b = th(1), t = std::tanh(th(2));
        const double r = kRhoBound * t, dr = kRhoBound * (1.0 - t * t);
        sig << a * a, r * a * b, r * a * b, b * b;
        d[0] << 2.0 * a, r * b, r * b, 0.0;
        d[1] << 0.0, r * a, r * a, 2.0 * b;
        d[2] << 0.0, dr * a * b, dr * a * b, 0.0;
    } else if (s == SigmaStructure::tau1_tau2) {
        const Eigen::Vector2d u(-p, 1.0 - p);
        const Eigen::Matrix2d j = Eigen::Matrix2d::Ones();
        const Eigen::Matrix2d uu = u * u.transpose();
        sig = th(0) * th(0) * j + th(1) * th(1) * uu;
        d[0] = 2.0 * th(0) * j;
        d[1] = 2.0 * th(1) * uu;
    }
}

struct Eval {
    bool ok = false;
    double loglik = -kInf;
    Eigen::VectorXd grad;
    Eigen::VectorXd beta;
    Eigen::MatrixXd h;  // X' V^-1 X
};

Eval evaluate(const std::vector<Unit>& units, SigmaStructure structure, Likelihood lik,
              const Eigen::VectorXd& theta, bool want_grad) {
    const Eigen::Index nb = units.front().x.cols();
    const int nt = theta_size(structure);
    Eval out;
    out.h = Eigen::MatrixXd::Zero(nb, nb);
    Eigen::VectorXd xty = Eigen::VectorXd::Zero(nb);
    std::vector<Eigen::MatrixXd> vinv(units.size());
    std::vector<std::array<Eigen::MatrixXd, 3>> dv(units.size());
    double logdet = 0.0;
    Eigen::Index m = 0;
    Eigen::Matrix2d sig;
    std::array<Eigen::Matrix2d, 3> dsig;
    for (std::size_t j = 0; j < units.size(); ++j) {
        const auto& u = units[j];
        const Eigen::Index r = u.y.size();
        eval_sigma(structure, theta, u.p, sig, dsig);
        Eigen::MatrixXd v = u.s2.asDiagonal();
        for (Eigen::Index a = 0; a < r; ++a)
            for (Eigen::Index b = 0; b < r; ++b) {
                v(a, b) += sig(u.arm[a], u.arm[b]);
                for (int k = 0; k < nt; ++k) {
                    if (a == 0 && b == 0) dv[j][k].resize(r, r);
                    dv[j][k](a, b) = dsig[k](u.arm[a], u.arm[b]);
                }
            }
        Eigen::LLT<Eigen::MatrixXd> llt(v);
        if (llt.info() != Eigen::Success) return out;
        const Eigen::MatrixXd l = llt.matrixL();
        logdet += 2.0 * l.diagonal().array().log().sum();
        vinv[j] = llt.solve(Eigen::MatrixXd::Identity(r, r));
        out.h.noalias() += u.x.transpose() * vinv[j] * u.x;
        xty.noalias() += u.x.transpose() * vinv[j] * u.y;
        m += r;
    }
    Eigen::LLT<Eigen::MatrixXd> hllt(out.h);
    if (hllt.info() != Eigen::Success) return out;
    out.beta = hllt.solve(xty);
    double q = 0.0;
    std::vector<Eigen::VectorXd> alpha(units.size());
    for (std::size_t j = 0; j < units.size(); ++j) {
        const Eigen::VectorXd res = units[j].y - units[j].x * out.beta;
        alpha[j] = vinv[j] * res;
        q += res.dot(alpha[j]);
    }
    const double log2pi = std::log(2.0 * std::numbers::pi);
    if (lik == Likelihood::ml) {
        out.loglik = -0.5 * (static_cast<double>(m) * log2pi + logdet + q);
    } else {
        const Eigen::MatrixXd lh = hllt.matrixL();
        const double logdet_h = 2.0 * lh.diagonal().array().log().sum();
        out.loglik = -0.5 * (static_cast<double>(m - nb) * log2pi + logdet + q + logdet_h);
    }
    out.ok = std::isfinite(out.loglik);
    if (!want_grad || nt == 0) {
        out.grad = Eigen::VectorXd::Zero(nt);
        return out;
    }
    out.grad = Eigen::VectorXd::Zero(nt);
    const Eigen::MatrixXd hinv = hllt.solve(Eigen::MatrixXd::Identity(nb, nb));
    for (std::size_t j = 0; j < units.size(); ++j) {
        for (int k = 0; k < nt; ++k) {
            const auto& d = dv[j][k];
            double g = -0.5 * ((vinv[j] * d).trace() - alpha[j].dot(d * alpha[j]));
            if (lik == Likelihood::reml) {
                const Eigen::MatrixXd vx = vinv[j] * units[j].x;
                g += 0.5 * (hinv * (vx.transpose() * d * vx)).trace();
            }
            out.grad(k) += g;
        }
    }
    return out;
}

struct FitOutcome {
    Eigen::VectorXd theta;
    Eval eval;
    bool converged = false;
    int iterations = 0;
};

FitOutcome fit_profile(const std::vector<Unit>& units, SigmaStructure structure, Likelihood lik,
                       const std::vector<Eigen::VectorXd>& starts) {
    FitOutcome best;
    bool have = false;
    ObjectiveFn f = [&](const Eigen::VectorXd& th, Eigen::VectorXd& grad) {
        const Eval e = evaluate(units, structure, lik, th, true);
        if (!e.ok) {
            grad = Eigen::VectorXd::Zero(th.size());
            return kInf;
        }
        grad = -e.grad;
        return -e.loglik;
    };
    for (const auto& start : starts) {
        const auto r = minimize_bfgs(f, start, {1e-6, 500});
        const Eval e = evaluate(units, structure, lik, r.x, true);
        if (!e.ok) continue;
        const bool better = !have || (r.converged && !best.converged) ||
                            (r.converged == best.converged && e.loglik > best.eval.loglik);
        if (better) {
            best = {r.x, e, r.converged, r.iterations};
            have = true;
        }
    }
    if (!have) throw ConvergenceError("likelihood could not be evaluated at any starting point");
    return best;
}

double start_scale(const MetaDataset& data) {
    double sum = 0.0, sum2 = 0.0;
    int m = 0;
    for (const auto& st : data.studies)
        for (const auto* e : {&st.arm_a, &st.arm_b})
            if (e->present()) {
                sum += e->effect;
                sum2 += e->effect * e->effect;
                ++m;
            }
    const double var = m > 1 ? (sum2 - sum * sum / m) / (m - 1) : 0.0;
    return std::sqrt(std::max(var, 1e-2));
}

std::vector<Eigen::VectorXd> make_starts(SigmaStructure s, double scale) {
    std::vector<Eigen::VectorXd> out;
    for (double f : {0.5, 0.15, 0.03}) {
        Eigen::VectorXd th(theta_size(s));
        if (s == SigmaStructure::full) th << f * scale, f * scale, 0.0;
        else if (s == SigmaStructure::tau1_tau2) th << f * scale, 0.5 * f * scale;
        out.push_back(th);
    }
    return out;
}

const DesignFn kVhasDesign = [](Arm arm, double) {
    Eigen::RowVectorXd r(2);
    r << 1.0, arm == Arm::a ? 0.0 : -1.0;
    return r;
};

void require_identifiable(const std::vector<Unit>& units, SigmaStructure s) {
    const Eval e = evaluate(units, s, Likelihood::ml, Eigen::VectorXd::Zero(theta_size(s)), false);
    if (!e.ok) throw InputError("mean parameters are not identifiable from these studies");
    Eigen::FullPivLU<Eigen::MatrixXd> lu(e.h);
    if (lu.rank() < e.h.cols()) throw InputError("mean parameters are not identifiable from these studies");
}

double mean_prevalence(const MetaDataset& data) {
    double s = 0.0;
    for (const auto& st : data.studies) s += st.prevalence_b;
    return s / static_cast<double>(data.size());
}

Estimate linear_estimate(const Eigen::VectorXd& c, const Eigen::VectorXd& beta, const Eigen::MatrixXd& vcov) {
    return Estimate::wald(c.dot(beta), std::sqrt(std::max(0.0, c.dot(vcov * c))));
}

}  // namespace

BivariateFit fit_vhas(const MetaDataset& data, const VhasOptions& opts) {
    require_valid(data);
    if (opts.sigma != SigmaStructure::zero && data.size() < 2)
        throw InputError("bivariate model needs at least 2 studies");
    const auto units = make_units(data, kVhasDesign, 2);
    require_identifiable(units, opts.sigma);

    BivariateFit fit;
    Eval e;
    if (opts.sigma == SigmaStructure::zero) {
        e = evaluate(units, opts.sigma, opts.likelihood, Eigen::VectorXd(0), false);
        fit.theta = Eigen::VectorXd(0);
        fit.converged = e.ok;
    } else {
        const auto r = fit_profile(units, opts.sigma, opts.likelihood, make_starts(opts.sigma, start_scale(data)));
        e = r.eval;
        fit.theta = r.theta;
        fit.converged = r.converged;
        fit.iterations = r.iterations;
    }
    fit.phi = e.beta(0);
    fit.gamma = e.beta(1);
    fit.loglik = e.loglik;
    fit.vcov_params = e.h.inverse();
    std::array<Eigen::Matrix2d, 3> d;
    eval_sigma(opts.sigma, fit.theta, mean_prevalence(data), fit.sigma, d);
    return fit;
}

double vhas_loglik(const MetaDataset& data, double phi, double gamma, const Eigen::Matrix2d& sigma) {
    const auto units = make_units(data, kVhasDesign, 2);
    const Eigen::Vector2d beta(phi, gamma);
    double ll = 0.0;
    const double log2pi = std::log(2.0 * std::numbers::pi);
    for (const auto& u : units) {
        const Eigen::Index r = u.y.size();
        Eigen::MatrixXd v = u.s2.asDiagonal();
        for (Eigen::Index a = 0; a < r; ++a)
            for (Eigen::Index b = 0; b < r; ++b) v(a, b) += sigma(u.arm[a], u.arm[b]);
        Eigen::LLT<Eigen::MatrixXd> llt(v);
        if (llt.info() != Eigen::Success) return -kInf;
        const Eigen::VectorXd res = u.y - u.x * beta;
        const Eigen::MatrixXd l = llt.matrixL();
        ll += -0.5 * (static_cast<double>(r) * log2pi + 2.0 * l.diagonal().array().log().sum() +
                      res.dot(llt.solve(res)));
    }
    return ll;
}

ProfileLik vhas_profile(const MetaDataset& data, SigmaStructure sigma, Likelihood likelihood,
                        const Eigen::VectorXd& theta) {
    if (theta.size() != theta_size(sigma)) throw std::invalid_argument("theta has the wrong length");
    const auto units = make_units(data, kVhasDesign, 2);
    const Eval e = evaluate(units, sigma, likelihood, theta, true);
    return {e.loglik, e.grad};
}

AnalysisResult to_result(const BivariateFit& fit) {
    if (!fit.converged) throw ConvergenceError("bivariate fit did not converge");
    const Eigen::Vector2d beta(fit.phi, fit.gamma);
    AnalysisResult r;
    r.method = Method::vhas;
    r.beta_a = linear_estimate(Eigen::Vector2d(1.0, 0.0), beta, fit.vcov_params);
    r.beta_b = linear_estimate(Eigen::Vector2d(1.0, -1.0), beta, fit.vcov_params);
    r.gamma = linear_estimate(Eigen::Vector2d(0.0, 1.0), beta, fit.vcov_params);
    r.tau_estimates["tau2_a"] = fit.sigma(0, 0);
    r.tau_estimates["tau2_b"] = fit.sigma(1, 1);
    r.collapsible = true;
    r.label = "Bivariate (vHAS)";
    return r;
}

// ---------------------------------------------------------------------------

std::optional<double> PrevAdjFit::gamma_agg() const {
    if (!delta) return std::nullopt;
    return gamma_w - *delta;
}

PrevAdjFit fit_prevalence_adjusted(const MetaDataset& data, const PrevAdjOptions& opts) {
    require_valid(data);
    if (data.size() < 2) throw InputError("prevalence-adjusted model needs at least 2 studies");
    const double pbar = mean_prevalence(data);
    double pvar = 0.0;
    for (const auto& st : data.studies) pvar += (st.prevalence_b - pbar) * (st.prevalence_b - pbar);
    pvar /= static_cast<double>(data.size() - 1);
    const bool with_delta = opts.estimate_delta && pvar >= 1e-10 && data.size() >= 3;

    const Eigen::Index nb = with_delta ? 3 : 2;
    const DesignFn design = [with_delta](Arm arm, double p) {
        Eigen::RowVectorXd r(with_delta ? 3 : 2);
        if (with_delta) r << 1.0, p, arm == Arm::a ? 0.0 : -1.0;
        else r << 1.0, arm == Arm::a ? 0.0 : -1.0;
        return r;
    };
    const auto units = make_units(data, design, nb);
    require_identifiable(units, SigmaStructure::tau1_tau2);
    const auto r = fit_profile(units, SigmaStructure::tau1_tau2, opts.likelihood,
                               make_starts(SigmaStructure::tau1_tau2, start_scale(data)));

    PrevAdjFit fit;
    fit.phi = r.eval.beta(0);
    if (with_delta) fit.delta = r.eval.beta(1);
    fit.gamma_w = r.eval.beta(nb - 1);
    fit.tau1 = std::abs(r.theta(0));
    fit.tau2 = std::abs(r.theta(1));
    fit.vcov_params = r.eval.h.inverse();
    fit.loglik = r.eval.loglik;
    fit.converged = r.converged;
    fit.mean_prevalence = pbar;
    return fit;
}

AnalysisResult to_result(const PrevAdjFit& fit) {
    if (!fit.converged) throw ConvergenceError("prevalence-adjusted fit did not converge");
    const Eigen::Index nb = fit.vcov_params.rows();
    Eigen::VectorXd beta(nb), ca = Eigen::VectorXd::Zero(nb), cg = Eigen::VectorXd::Zero(nb);
    if (fit.delta) beta << fit.phi, *fit.delta, fit.gamma_w;
    else beta << fit.phi, fit.gamma_w;
    ca(0) = 1.0;
    if (fit.delta) ca(1) = fit.mean_prevalence;
    cg(nb - 1) = 1.0;
    AnalysisResult r;
    r.method = Method::prevalence_adjusted;
    r.beta_a = linear_estimate(ca, beta, fit.vcov_params);
    r.beta_b = linear_estimate(ca - cg, beta, fit.vcov_params);
    r.gamma = linear_estimate(cg, beta, fit.vcov_params);
    r.tau_estimates["tau2_subgroup"] = fit.tau1 * fit.tau1;
    r.tau_estimates["tau2_interaction"] = fit.tau2 * fit.tau2;
    r.collapsible = true;
    r.label = "Prevalence-adjusted";
    return r;
}

// ---------------------------------------------------------------------------

AnalysisResult fit_within_trial(const MetaDataset& data, TauMethod tau_method, ModelKind model,
                                const WithinTrialOptions& opts) {
    const AnalysisResult ad = estimate_ad(data, tau_method, model);
    const double gamma = ad.gamma.point;
    const double var_gamma = ad.gamma.std_err * ad.gamma.std_err;
    const auto& w = ad.weights_gamma->weights;
    const double tau2_c = ad.weights_gamma->tau2_used;

    struct Entry {
        std::size_t study;
        bool is_a;
        double y, v;
    };
    std::vector<Entry> entries;
    for (std::size_t j = 0; j < data.size(); ++j) {
        const auto& st = data.studies[j];
        if (st.arm_a.present()) entries.push_back({j, true, st.arm_a.effect, st.arm_a.variance()});
        if (st.arm_b.present()) entries.push_back({j, false, st.arm_b.effect, st.arm_b.variance()});
    }
    const Eigen::Index m = static_cast<Eigen::Index>(entries.size());
    Eigen::VectorXd z(m), naive(m), omega(m), a_ind(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        const auto& e = entries[static_cast<std::size_t>(i)];
        z(i) = e.is_a ? e.y - gamma : e.y;
        naive(i) = e.is_a ? e.v + var_gamma : e.v;
        omega(i) = e.is_a ? w[e.study] : -w[e.study];
        a_ind(i) = e.is_a ? 1.0 : 0.0;
    }

    double tau2_1 = 0.0;
    if (model == ModelKind::random_effects) {
        UnivariateSample zs{{z.data(), z.data() + m}, {naive.data(), naive.data() + m}};
        tau2_1 = estimate_tau(zs, tau_method).tau2;
    }

    // Covariance of the stacked observations under the subgroup/interaction structure.
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(m, m);
    for (Eigen::Index i = 0; i < m; ++i) {
        const auto& ei = entries[static_cast<std::size_t>(i)];
        cov(i, i) = ei.v;
        for (Eigen::Index k = 0; k < m; ++k) {
            const auto& ek = entries[static_cast<std::size_t>(k)];
            if (ei.study != ek.study) continue;
            const double p = data.studies[ei.study].prevalence_b;
            const double ui = ei.is_a ? -p : 1.0 - p;
            const double uk = ek.is_a ? -p : 1.0 - p;
            cov(i, k) += tau2_1 + tau2_c * ui * uk;
        }
    }

    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(m);
    double phi = 0.0, var_a = 0.0, var_b = 0.0;
    if (opts.naive_stage2) {
        Eigen::MatrixXd v = naive.asDiagonal();
        for (Eigen::Index i = 0; i < m; ++i)
            for (Eigen::Index k = 0; k < m; ++k)
                if (entries[static_cast<std::size_t>(i)].study == entries[static_cast<std::size_t>(k)].study)
                    v(i, k) += tau2_1;
        Eigen::LLT<Eigen::MatrixXd> llt(v);
        const Eigen::VectorXd vi1 = llt.solve(ones);
        const double denom = ones.dot(vi1);
        phi = vi1.dot(z) / denom;
        var_b = 1.0 / denom;
        var_a = var_b + var_gamma;
    } else {
        // z = M y with M = I - a omega'; V = M C M' is singular along omega.
        const Eigen::MatrixXd mm = Eigen::MatrixXd::Identity(m, m) - a_ind * omega.transpose();
        const Eigen::MatrixXd v = mm * cov * mm.transpose();
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(v);
        const Eigen::VectorXd& lam = es.eigenvalues();
        const double cut = 1e-10 * std::max(1.0, static_cast<double>(m)) * lam.cwiseAbs().maxCoeff();
        Eigen::VectorXd inv = Eigen::VectorXd::Zero(m);
        for (Eigen::Index i = 0; i < m; ++i)
            if (lam(i) > cut) inv(i) = 1.0 / lam(i);
        const Eigen::MatrixXd vplus = es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
        const Eigen::VectorXd c = vplus * ones / ones.dot(vplus * ones);
        phi = c.dot(z);
        const Eigen::VectorXd lb = mm.transpose() * c;
        const Eigen::VectorXd la = lb + omega;
        var_b = lb.dot(cov * lb);
        var_a = la.dot(cov * la);
    }

    AnalysisResult r;
    r.method = Method::within_trial;
    r.beta_a = Estimate::wald(phi + gamma, std::sqrt(var_a));
    r.beta_b = Estimate::wald(phi, std::sqrt(var_b));
    r.gamma = ad.gamma;
    r.tau_estimates["tau2_contrast"] = tau2_c;
    r.tau_estimates["tau2_subgroup"] = tau2_1;
    r.weights_gamma = ad.weights_gamma;
    r.collapsible = true;
    r.label = opts.naive_stage2 ? "Within-trial (naive stage 2)" : "Within-trial";
    return r;
}

AnalysisResult fit_centered_collapsible(const MetaDataset& data, const WeightVector& weights,
                                        TauMethod tau_method, ModelKind model) {
    require_valid(data);
    const auto& w = weights.weights;
    if (w.size() != data.size()) throw std::invalid_argument("weight vector length differs from study count");
    for (std::size_t j = 0; j < w.size(); ++j)
        if (w[j] > 0.0 && !data.studies[j].two_arm())
            throw InputError("positive weight on study '" + data.studies[j].study_id + "' without a contrast");

    const auto cs = contrast_sample(data);
    double tau2_c = 0.0, tau2_1 = 0.0;
    if (model == ModelKind::random_effects) {
        tau2_c = estimate_tau(cs, tau_method).tau2;
        UnivariateSample mid;
        for (const auto& st : data.studies) {
            if (!st.two_arm()) continue;
            mid.effects.push_back(0.5 * (st.arm_a.effect + st.arm_b.effect));
            mid.variances.push_back(0.25 * (st.arm_a.variance() + st.arm_b.variance()));
        }
        tau2_1 = estimate_tau(mid, tau_method).tau2;
    }

    double ba = 0.0, bb = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
        if (w[j] == 0.0) continue;
        const auto& st = data.studies[j];
        ba += w[j] * st.arm_a.effect;
        bb += w[j] * st.arm_b.effect;
        va += w[j] * w[j] * (st.arm_a.variance() + tau2_1 + 0.25 * tau2_c);
        vb += w[j] * w[j] * (st.arm_b.variance() + tau2_1 + 0.25 * tau2_c);
    }
    const auto g = pool_univariate(cs, tau2_c, w);

    AnalysisResult r;
    r.method = Method::centered_collapsible;
    r.beta_a = Estimate::wald(ba, std::sqrt(va));
    r.beta_b = Estimate::wald(bb, std::sqrt(vb));
    r.gamma = Estimate::wald(g.point, g.std_err);
    r.tau_estimates["tau2_contrast"] = tau2_c;
    r.tau_estimates["tau2_subgroup"] = tau2_1;
    r.weights_a = weights;
    r.weights_b = weights;
    r.weights_gamma = weights;
    r.collapsible = true;
    r.label = "Centered collapsible (" + to_string(weights.scheme) + ")";
    return r;
}

std::string to_string(SigmaStructure s) {
    switch (s) {
        case SigmaStructure::full: return "full";
        case SigmaStructure::tau1_tau2: return "tau1_tau2";
        case SigmaStructure::zero: return "zero";
    }
    return "?";
}

SigmaStructure parse_sigma_structure(const std::string& name) {
    if (name == "full") return SigmaStructure::full;
    if (name == "tau1_tau2") return SigmaStructure::tau1_tau2;
    if (name == "zero") return SigmaStructure::zero;
    throw InputError("unknown covariance structure '" + name + "'");
}

}  // namespace submeta
