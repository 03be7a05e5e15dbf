#include <cmath>
#include <random>

#include <doctest.h>

#include "submeta/estimators.hpp"
#include "submeta/io.hpp"
#include "submeta/swada.hpp"
#include "test_util.hpp"

using namespace submeta;
using namespace submeta::testing;

namespace {

const std::vector<WeightScheme> kSchemes{WeightScheme::equal,    WeightScheme::interaction_re,
                                         WeightScheme::study_size, WeightScheme::smaller_subgroup,
                                         WeightScheme::min_iv,   WeightScheme::min_total_variance};

MetaDataset sized(const std::vector<std::pair<std::int64_t, std::int64_t>>& n) {
    MetaDataset d;
    for (std::size_t j = 0; j < n.size(); ++j)
        d.studies.push_back(two_arm("s" + std::to_string(j), 0.1 * j, 0.3, -0.2 * j, 0.4, n[j].first, n[j].second));
    return d;
}

// Brute-force simplex search for 3 studies.
std::vector<double> grid_mtv(const MetaDataset& d, double step) {
    std::vector<double> best(3);
    double best_val = kInf;
    const int m = static_cast<int>(std::lround(1.0 / step));
    for (int i = 0; i <= m; ++i)
        for (int j = 0; i + j <= m; ++j) {
            const std::vector<double> w{i * step, j * step, (m - i - j) * step};
            const double v = total_variance_objective(d, w, 0.0);
            if (v < best_val) {
                best_val = v;
                best = w;
            }
        }
    return best;
}

}  // namespace

TEST_CASE("equal weights") {
    const auto d = sized({{50, 50}, {70, 30}, {90, 10}});
    for (double w : compute_weights(d, WeightScheme::equal).weights) CHECK(w == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("study size weights") {
    const auto d = sized({{50, 50}, {75, 75}, {100, 100}});
    const auto w = compute_weights(d, WeightScheme::study_size).weights;
    CHECK(w[0] == doctest::Approx(2.0 / 9.0));
    CHECK(w[1] == doctest::Approx(1.0 / 3.0));
    CHECK(w[2] == doctest::Approx(4.0 / 9.0));
}

TEST_CASE("smaller subgroup weights") {
    const auto d = sized({{50, 50}, {70, 30}, {90, 10}});
    const auto w = compute_weights(d, WeightScheme::smaller_subgroup).weights;
    CHECK(w[0] == doctest::Approx(5.0 / 9.0));
    CHECK(w[1] == doctest::Approx(1.0 / 3.0));
    CHECK(w[2] == doctest::Approx(1.0 / 9.0));
}

TEST_CASE("interaction re weights with equal contrast variances are equal") {
    MetaDataset d;
    // contrast variance 0.25 in each study
    d.studies = {two_arm("a", 0.1, 0.3, 0.5, 0.4), two_arm("b", 0.9, 0.4, -0.2, 0.3),
                 two_arm("c", 0.4, std::sqrt(0.125), 0.1, std::sqrt(0.125))};
    const auto w = compute_weights(d, WeightScheme::interaction_re);
    for (double x : w.weights) CHECK(x == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("min_iv takes the smallest of three inverse variances") {
    MetaDataset d;
    d.studies = {two_arm("a", 0, 0.5, 0, 1.0), two_arm("b", 0, 1.0, 0, 1.0),
                 StudyRecord::make("c", SubgroupEstimate::make(0, 0.1, 20), SubgroupEstimate::absent())};
    const auto w = compute_weights(d, WeightScheme::min_iv).weights;
    // contrast variances 1.25 and 2
    CHECK(w[0] == doctest::Approx((1 / 1.25) / (1 / 1.25 + 0.5)));
    CHECK(w[1] == doctest::Approx(0.5 / (1 / 1.25 + 0.5)));
    CHECK(w[2] == 0.0);
}

TEST_CASE("min total variance on identical studies") {
    MetaDataset d;
    d.studies = {two_arm("a", 0.1, 0.4, 0.2, 0.6), two_arm("b", -0.3, 0.4, 0.5, 0.6)};
    const auto w = compute_weights(d, WeightScheme::min_total_variance).weights;
    CHECK(w[0] == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(w[1] == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("min total variance matches a dense simplex grid") {
    SUBCASE("hand toy") {
        MetaDataset d;
        d.studies = {two_arm("a", 0, 1, 0, 1), two_arm("b", 0, 1, 0, 1), two_arm("c", 0, 2, 0, 2)};
        const auto w = compute_weights(d, WeightScheme::min_total_variance).weights;
        const auto g = grid_mtv(d, 0.001);
        for (int i = 0; i < 3; ++i) CHECK(std::abs(w[i] - g[i]) <= 0.005);
        CHECK(w[2] == doctest::Approx(1.0 / 9.0).epsilon(1e-5));
    }
    SUBCASE("random toys") {
        std::mt19937_64 rng(31);
        std::uniform_real_distribution<double> u(0.2, 1.5);
        for (int rep = 0; rep < 10; ++rep) {
            MetaDataset d;
            for (int j = 0; j < 3; ++j) d.studies.push_back(two_arm("s" + std::to_string(j), 0, u(rng), 0, u(rng)));
            const auto w = compute_weights(d, WeightScheme::min_total_variance).weights;
            const auto g = grid_mtv(d, 0.001);
            for (int i = 0; i < 3; ++i) CHECK(std::abs(w[i] - g[i]) <= 0.005);
            CHECK(total_variance_objective(d, w, 0.0) <= total_variance_objective(d, g, 0.0) + 1e-12);
        }
    }
}

TEST_CASE("min total variance gives single-subgroup studies no weight") {
    MetaDataset d;
    d.studies = {two_arm("a", 0, 1, 0, 1), two_arm("b", 0, 0.5, 0, 0.7),
                 StudyRecord::make("c", SubgroupEstimate::absent(), SubgroupEstimate::make(0, 0.05, 400))};
    const auto w = compute_weights(d, WeightScheme::min_total_variance).weights;
    CHECK(w[2] == 0.0);
    CHECK(w[0] + w[1] == doctest::Approx(1.0));
}

TEST_CASE("min total variance objective is no larger than other schemes") {
    std::mt19937_64 rng(41);
    for (int rep = 0; rep < 50; ++rep) {
        const auto d = random_dataset(rng, 2 + rep % 9, true);
        if (d.two_arm_count() < 2) continue;
        const double best = total_variance_objective(d, compute_weights(d, WeightScheme::min_total_variance).weights, 0.0);
        for (auto s : kSchemes) {
            const auto w = compute_weights(d, s).weights;
            CHECK(best <= total_variance_objective(d, w, 0.0) + 1e-9);
        }
    }
}

TEST_CASE("pool_swada hand values") {
    SUBCASE("single study gives its contrast") {
        MetaDataset d;
        d.studies = {two_arm("CAPE COVID", std::log(0.48), 0.3, std::log(0.28), 0.4)};
        const auto r = pool_swada(d, compute_weights(d, WeightScheme::equal));
        CHECK(r.gamma.point == doctest::Approx(std::log(0.48 / 0.28)).epsilon(1e-14));
        CHECK(std::exp(r.gamma.point) == doctest::Approx(1.71).epsilon(0.01));
    }
    SUBCASE("crossed arms") {
        MetaDataset d;
        d.studies = {two_arm("a", 0.0, 0.5, 1.0, 0.5), two_arm("b", 1.0, 0.5, 0.0, 0.5)};
        for (auto model : {ModelKind::common_effect, ModelKind::random_effects}) {
            SwadaOptions o;
            o.model = model;
            const auto r = pool_swada(d, compute_weights(d, WeightScheme::equal), o);
            CHECK(r.beta_a.point == doctest::Approx(0.5));
            CHECK(r.beta_b.point == doctest::Approx(0.5));
            CHECK(r.gamma.point == doctest::Approx(0.0));
            CHECK(r.collapsible);
        }
    }
}

TEST_CASE("single-subgroup policies") {
    MetaDataset d;
    d.studies = {two_arm("a", 0.3, 0.4, 0.1, 0.5), two_arm("b", 0.6, 0.3, -0.2, 0.6),
                 StudyRecord::make("c", SubgroupEstimate::make(1.0, 0.2, 80), SubgroupEstimate::absent())};
    const auto w = compute_weights(d, WeightScheme::equal);

    SwadaOptions refuse;
    refuse.policy = SingleSubgroupPolicy::refuse;
    CHECK_THROWS_WITH_AS(pool_swada(d, w, refuse), doctest::Contains("scheme weights incompatible with contrast pooling"),
                         InputError);

    const auto ex = pool_swada(d, w);
    CHECK(ex.weights_gamma->weights[2] == 0.0);
    CHECK(ex.weights_a->weights[0] == doctest::Approx(0.5));
    CHECK(ex.beta_a.point == doctest::Approx(0.45));
    CHECK(ex.gamma.point == doctest::Approx(0.5 * (0.2 + 0.8)));
    CHECK(ex.collapsible);

    SwadaOptions only;
    only.policy = SingleSubgroupPolicy::subgroup_only;
    const auto so = pool_swada(d, w, only);
    CHECK(so.beta_a.point == doctest::Approx((0.3 + 0.6 + 1.0) / 3.0));
    CHECK(so.beta_b.point == doctest::Approx(-0.05));
    CHECK(so.gamma.point == doctest::Approx(0.5));
    CHECK_FALSE(so.collapsible);
}

TEST_CASE("pool_swada refuses malformed weights") {
    MetaDataset d;
    d.studies = {two_arm("a", 0, 1, 0, 1), two_arm("b", 0, 1, 0, 1)};
    CHECK_THROWS_AS(pool_swada(d, WeightVector{{0.7, 0.7}}), InputError);
    CHECK_THROWS_AS(pool_swada(d, WeightVector{{1.5, -0.5}}), InputError);
    CHECK_THROWS_AS(pool_swada(d, WeightVector{{1.0}}), std::invalid_argument);
}

TEST_CASE("interaction re swada reproduces the contrast pool bit for bit") {
    std::mt19937_64 rng(43);
    for (int rep = 0; rep < 200; ++rep) {
        const auto d = random_dataset(rng, 2 + rep % 11, true);
        const auto sw = pool_swada(d, compute_weights(d, WeightScheme::interaction_re));
        const auto ad = estimate_ad(d, TauMethod::reml, ModelKind::random_effects);
        CHECK(sw.gamma.point == ad.gamma.point);
    }
}

TEST_CASE("every scheme is collapsible on random datasets") {
    std::mt19937_64 rng(47);
    std::uniform_int_distribution<int> kd(2, 12);
    int pooled = 0;
    for (int rep = 0; rep < 1000; ++rep) {
        const auto d = random_dataset(rng, kd(rng), true);
        for (auto s : kSchemes) {
            AnalysisResult r;
            try {
                r = pool_swada(d, compute_weights(d, s));
            } catch (const InputError&) {
                continue;
            }
            ++pooled;
            CHECK(r.collapsible);
            CHECK(std::abs((r.beta_a.point - r.beta_b.point) - r.gamma.point) < 1e-10);
        }
    }
    CHECK(pooled > 5000);
}

TEST_CASE("react swada table") {
    const auto d = read_csv_file(kData + "/react.csv");
    auto ror = [&](WeightScheme s, std::optional<double> tau2 = std::nullopt) {
        return std::exp(pool_swada(d, compute_weights(d, s, tau2)).gamma.point);
    };
    const double tc = estimate_tau(contrast_sample(d), TauMethod::reml).tau2;
    CHECK(ror(WeightScheme::interaction_re) == doctest::Approx(3.86).epsilon(0.03 / 3.86));
    CHECK(ror(WeightScheme::min_iv, tc) == doctest::Approx(3.86).epsilon(0.03 / 3.86));
    CHECK(ror(WeightScheme::equal) == doctest::Approx(3.31).epsilon(0.05 / 3.31));
    CHECK(ror(WeightScheme::study_size) == doctest::Approx(2.06).epsilon(0.05 / 2.06));
    const double mtv = ror(WeightScheme::min_total_variance);
    CHECK(mtv >= 3.7);
    CHECK(mtv <= 3.95);
}
