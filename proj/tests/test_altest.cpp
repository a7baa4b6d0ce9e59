#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "gsnm/altest.hpp"
#include "gsnm/scenarios.hpp"
#include "gsnm/simlab.hpp"

using namespace gsnm;

namespace {

// Single-period cohort: two never-gainers with Y=1, two gainers with Y=5.
Cohort iptw_toy() {
    Cohort c;
    c.horizon = 1;
    c.n_cov = 0;
    for (int k = 0; k < 4; ++k) {
        Subject s;
        s.id = "s" + std::to_string(k);
        const double a = k < 2 ? 0.0 : 1.0;
        s.bmi = {22.0, 22.0 + a};
        s.cov = {{}, {}};
        s.alive = {1, 1};
        s.event_time = 0.8;
        s.censored = false;
        s.utility = k < 2 ? 1.0 : 5.0;
        c.subjects.push_back(std::move(s));
    }
    return c;
}

struct ExposureView {
    std::vector<std::vector<double>> a;
    std::vector<std::vector<unsigned char>> xi;
};

ExposureView plain_view(const Cohort& c) {
    ExposureView v;
    auto d = derive_exposure(c);
    for (auto& e : d) {
        v.a.push_back(std::move(e.a));
        v.xi.push_back(std::move(e.xi));
    }
    return v;
}

}  // namespace

TEST_CASE("iptw toy: hand value via brute force over the four outcomes") {
    Cohort c = iptw_toy();
    auto v = plain_view(c);
    ZeroProbModelSpec spec;  // intercept only
    auto fit = fit_zero_prob(c, v.a, v.xi, spec);
    // fitted P(A=0) = 0.5, so the consistent subjects carry weight 2
    CHECK(logistic_prob(fit.coef, Eigen::VectorXd::Ones(1)) == Catch::Approx(0.5));

    auto res = iptw_mean_y0(c, v.a, v.xi, fit, true);
    CHECK(res.estimate == Catch::Approx(1.0));
    CHECK(res.n_consistent == 2);

    auto res_ht = iptw_mean_y0(c, v.a, v.xi, fit, false);
    CHECK(res_ht.estimate == Catch::Approx(1.0));  // (2*1 + 2*1) / 4
}

TEST_CASE("iptw: all subjects consistent reduces to the sample mean") {
    Cohort c = iptw_toy();
    for (auto& s : c.subjects) s.bmi[1] = 22.0;  // nobody gains
    auto v = plain_view(c);
    ZeroProbModelSpec spec;
    auto fit = fit_zero_prob(c, v.a, v.xi, spec);
    auto res = iptw_mean_y0(c, v.a, v.xi, fit, true);
    CHECK(res.estimate == Catch::Approx(3.0));
    CHECK(res.n_consistent == 4);
}

TEST_CASE("iptw: no consistent subject is an undefined-estimate error") {
    Cohort c = iptw_toy();
    for (auto& s : c.subjects) s.bmi[1] = 23.0;  // everyone gains
    auto v = plain_view(c);
    ZeroProbModelSpec spec;
    auto fit = fit_zero_prob(c, v.a, v.xi, spec);
    CHECK_THROWS_AS(iptw_mean_y0(c, v.a, v.xi, fit, true), EstimationError);
}

TEST_CASE("iptw with true probabilities is unbiased over replications") {
    // Horvitz-Thompson form with the data-generating zero probabilities
    // plugged in; averaged over many small cohorts.
    std::vector<double> errs;
    for (int rep = 0; rep < 500; ++rep) {
        auto spec = scenario_markov_co(60, 8, 9000 + rep);
        auto out = Simulator(spec).simulate();
        auto v = plain_view(out.cohort);
        FittedZeroProb fit;
        fit.spec.cov_indices = {0};
        fit.coef = Eigen::VectorXd(2);
        fit.coef << spec.mk_pzero_b0, spec.mk_pzero_b1;
        auto res = iptw_mean_y0(out.cohort, v.a, v.xi, fit, false);
        errs.push_back(res.estimate - mean(out.truth.y0));
    }
    const double m = mean(errs);
    const double se = mc_se(errs);
    INFO("mean error " << m << " se " << se);
    CHECK(std::fabs(m) < 3.0 * se + 1e-12);
}

TEST_CASE("iptw survival: vacuous regime weights give the empirical curve") {
    auto spec = scenario_markov_co(800, 12, 5);
    auto out = Simulator(spec).simulate();
    // a huge allowed gain: residual exposure identically zero
    auto derived = derive_exposure(out.cohort);
    Regime big = Regime::constant(100.0);
    std::vector<std::vector<double>> a(out.cohort.subjects.size());
    std::vector<std::vector<unsigned char>> xi(out.cohort.subjects.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        a[i] = residual_exposure(out.cohort.subjects[i], derived[i], big, out.cohort.horizon);
        xi[i] = regime_indicators(out.cohort.subjects[i], derived[i], big, out.cohort.horizon);
    }
    ZeroProbModelSpec zspec;
    zspec.cov_indices = {0};
    auto fit = fit_zero_prob(out.cohort, a, xi, zspec);
    auto curve = iptw_survival(out.cohort, a, xi, fit, {3.0, 6.0, 9.0});
    for (const auto& pt : curve) {
        double emp = 0.0;
        for (const auto& s : out.cohort.subjects)
            emp += (!s.event_time || *s.event_time > pt.u) ? 1.0 : 0.0;
        emp /= static_cast<double>(out.cohort.subjects.size());
        CHECK(pt.s == Catch::Approx(emp).margin(1e-9));
    }
}

TEST_CASE("gformula hand value: two static strata") {
    GFormulaFit fit;
    fit.spec = GFormulaSpec{};
    fit.spec.draws = 60000;
    fit.spec.outcome_min_x = false;
    fit.spec.outcome_l0 = false;
    fit.horizon = 3;
    fit.levels = {0.0, 1.0};
    fit.baseline = {0.5, 0.5};
    fit.trans = {{1.0, 0.0}, {0.0, 1.0}};  // static covariate
    fit.hazard_coef = Eigen::VectorXd(2);
    const auto logit = [](double p) { return std::log(p / (1.0 - p)); };
    fit.hazard_coef << logit(0.1), logit(0.3) - logit(0.1);
    fit.outcome_coef = Eigen::VectorXd::Ones(1);

    auto res = gformula_run(fit, {2.0});
    const double expect = 0.5 * 0.9 * 0.9 + 0.5 * 0.7 * 0.7;  // 0.65
    CHECK(res.survival[0].s == Catch::Approx(expect).margin(3.0 * res.survival[0].se + 1e-6));
}

TEST_CASE("gformula: hazard independent of the covariate gives the marginal product") {
    GFormulaFit fit;
    fit.spec = GFormulaSpec{};
    fit.spec.draws = 2000;
    fit.spec.outcome_min_x = false;
    fit.spec.outcome_l0 = false;
    fit.horizon = 4;
    fit.levels = {0.0, 1.0};
    fit.baseline = {0.3, 0.7};
    fit.trans = {{0.5, 0.5}, {0.5, 0.5}};
    fit.hazard_coef = Eigen::VectorXd(2);
    fit.hazard_coef << std::log(0.2 / 0.8), 0.0;  // h = 0.2 everywhere
    fit.outcome_coef = Eigen::VectorXd::Ones(1);
    auto res = gformula_run(fit, {1.0, 2.0, 3.0});
    for (std::size_t k = 0; k < res.survival.size(); ++k) {
        // integrand constant in L: zero Monte Carlo variance
        CHECK(res.survival[k].s ==
              Catch::Approx(std::pow(0.8, res.survival[k].u)).margin(1e-12));
        CHECK(res.survival[k].se == Catch::Approx(0.0).margin(1e-15));
    }
}

TEST_CASE("gformula fit + run agree with iptw on the markov cohort") {
    auto spec = scenario_markov_co(4000, 18, 31);
    auto out = Simulator(spec).simulate();
    auto v = plain_view(out.cohort);

    GFormulaSpec gspec;
    gspec.draws = 40000;
    gspec.seed = 7;
    auto fit = gformula_fit(out.cohort, v.a, gspec);
    auto gf = gformula_run(fit, {6.0, 12.0});

    ZeroProbModelSpec zspec;
    zspec.cov_indices = {0};
    auto zfit = fit_zero_prob(out.cohort, v.a, v.xi, zspec);
    auto ip = iptw_survival(out.cohort, v.a, v.xi, zfit, {6.0, 12.0});

    auto truth = Simulator(spec).true_survival(Regime::zero(), {6.0, 12.0});
    for (std::size_t k = 0; k < gf.survival.size(); ++k) {
        INFO("u " << gf.survival[k].u << " gf " << gf.survival[k].s << " iptw " << ip[k].s
                  << " truth " << truth[k]);
        const double tol = 3.0 * std::sqrt(gf.survival[k].se * gf.survival[k].se +
                                           ip[k].se * ip[k].se) +
                           0.01;
        CHECK(std::fabs(gf.survival[k].s - ip[k].s) < tol);
        CHECK(std::fabs(gf.survival[k].s - truth[k]) < 0.035);
    }

    // E[Y0]: g-formula outcome leg against the simulator truth
    auto em = iptw_mean_y0(out.cohort, v.a, v.xi, zfit, true);
    INFO("gf " << gf.mean_y0 << " iptw " << em.estimate << " truth " << mean(out.truth.y0));
    CHECK(std::fabs(gf.mean_y0 - mean(out.truth.y0)) < 0.3);
    CHECK(std::fabs(em.estimate - mean(out.truth.y0)) < 4.0 * em.se + 0.05);
}

TEST_CASE("mlp lag views: identity at zero, shifted features and boundary zeros") {
    auto spec = scenario_mlp(50, 18, 3);
    auto out = Simulator(spec).simulate();
    auto same = mlp_lag_views(out.cohort, 0);
    CHECK(same.subjects[0].cov == out.cohort.subjects[0].cov);

    auto lagged = mlp_lag_views(out.cohort, 4);
    for (int t = 4; t <= out.cohort.horizon; ++t)
        CHECK(lagged.subjects[3].cov[static_cast<std::size_t>(t)] ==
              out.cohort.subjects[3].cov[static_cast<std::size_t>(t - 4)]);
    for (int t = 0; t < 4; ++t)
        CHECK(lagged.subjects[3].cov[static_cast<std::size_t>(t)] ==
              std::vector<double>{0.0});
    // event columns keep original timing
    CHECK(lagged.subjects[3].event_time == out.cohort.subjects[3].event_time);

    auto v = plain_view(out.cohort);
    auto la = lag_exposure(v.a, 4);
    CHECK(la[0][3] == 0.0);
    CHECK(la[0][7] == v.a[0][3]);
}

TEST_CASE("intercal: degenerate settings reduce to known answers") {
    auto spec = scenario_markov_co(500, 10, 13);
    auto out = Simulator(spec).simulate();

    // every person-month masked: the intervention never binds
    SubgroupMask all;
    MaskRule r;
    r.field = MaskRule::Field::month;
    r.op = MaskRule::Op::ge;
    r.threshold = -1.0;
    all.rules.push_back(r);
    ZeroProbModelSpec zspec;
    zspec.cov_indices = {0};
    auto res_all = iptw_intercal(out.cohort, all, 0, zspec);
    double ybar = 0.0;
    for (const auto& s : out.cohort.subjects) ybar += s.utility;
    ybar /= static_cast<double>(out.cohort.subjects.size());
    CHECK(res_all.estimate == Catch::Approx(ybar));

    // no mask, chi = 0: identical to the plain iptw mean at the zero regime
    SubgroupMask none;
    auto res_none = iptw_intercal(out.cohort, none, 0, zspec);
    auto v = plain_view(out.cohort);
    auto fit = fit_zero_prob(out.cohort, v.a, v.xi, zspec);
    auto direct = iptw_mean_y0(out.cohort, v.a, v.xi, fit, true);
    CHECK(res_none.estimate == Catch::Approx(direct.estimate));
}
