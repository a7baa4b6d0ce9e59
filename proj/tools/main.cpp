// Command-line front end: simulation, g-estimation, IPTW and g-formula
// comparators, regime evaluation, optimal regimes, and sensitivity sweeps.
#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "gsnm/config.hpp"
#include "gsnm/csv.hpp"
#include "gsnm/report.hpp"
#include "gsnm/simlab.hpp"

namespace {

using namespace gsnm;
using nlohmann::json;

struct CommonArgs {
    std::string config_path;
    std::string input;
    std::string out;
    std::uint64_t seed = 1;
    bool seed_given = false;
    int threads = 0;
    std::string zeta_list;
    std::string coarsen_list;
    std::string variance;
};

json load_config(const std::string& path, std::string& raw) {
    std::ifstream f(path);
    if (!f) throw ConfigError("missing config file: " + path);
    std::ostringstream os;
    os << f.rdbuf();
    raw = os.str();
    try {
        return json::parse(raw);
    } catch (const std::exception& e) {
        throw ConfigError("malformed config: " + std::string(e.what()));
    }
}

std::vector<double> parse_list(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (!tok.empty()) out.push_back(std::stod(tok));
    }
    return out;
}

RunManifest make_manifest(const std::string& command, const CommonArgs& args,
                          const std::string& raw_config) {
    RunManifest m;
    m.command = command;
    m.config_path = args.config_path;
    m.config_digest = digest_hex(raw_config);
    m.input = args.input;
    m.out = args.out;
    m.seed = args.seed;
    return m;
}

int effective_threads(const CommonArgs& args) {
    return args.threads > 0 ? args.threads : default_threads();
}

Cohort load_cohort(const CommonArgs& args, bool apply_coarsen = true) {
    if (args.input.empty()) throw ConfigError("--input is required");
    Cohort c = read_cohort_csv(args.input);
    auto rep = validate(c);
    if (!rep.clean())
        throw DataError("input cohort failed validation: " + rep.entries.front().kind +
                        " for subject " + rep.entries.front().subject + " at month " +
                        std::to_string(rep.entries.front().month));
    if (apply_coarsen && !args.coarsen_list.empty()) {
        auto f = parse_list(args.coarsen_list);
        if (f.size() == 1) c = coarsen(c, static_cast<int>(f[0]));
    }
    return c;
}

GEstConfig gest_from(const json& config, const CommonArgs& args, bool take_zeta = true) {
    GEstConfig g = config.contains("gest") ? cfg::gest_config(config.at("gest")) : GEstConfig{};
    if (take_zeta && !args.zeta_list.empty()) {
        auto z = parse_list(args.zeta_list);
        if (z.size() == 1) g.zeta = z[0];
    }
    if (!args.variance.empty()) {
        if (args.variance == "cluster") g.variance = VarianceMode::cluster;
        else if (args.variance == "iid") g.variance = VarianceMode::iid;
        else throw ConfigError("unknown --variance: " + args.variance);
    }
    g.threads = effective_threads(args);
    return g;
}

// Runs the estimation pipeline honoring optional mask / regime blocks.
EstimateResult run_estimate(const Cohort& c, const json& config, const GEstConfig& gcfg) {
    BlipSpec blip = config.contains("blip") ? cfg::blip_spec(config.at("blip")) : BlipSpec{};
    std::optional<TimeRatioSpec> ratio;
    if (config.contains("ratio") && !config.at("ratio").is_null())
        ratio = cfg::ratio_spec(config.at("ratio"));

    if (config.contains("regime") && !config.at("regime").is_null())
        return estimate_ey0_g(c, cfg::regime_spec(config.at("regime")), blip, ratio, gcfg);

    if (config.contains("mask") && !config.at("mask").is_null()) {
        auto masked = mask_intractable(c, cfg::mask_spec(config.at("mask")));
        std::vector<std::vector<double>> a(masked.size());
        std::vector<std::vector<unsigned char>> xi(masked.size());
        for (std::size_t i = 0; i < masked.size(); ++i) {
            a[i] = std::move(masked[i].a);
            xi[i] = std::move(masked[i].xi);
        }
        GEstEngine engine(c, std::move(a), std::move(xi), blip, ratio, gcfg);
        return engine.estimate();
    }
    return g_estimate(c, blip, ratio, gcfg);
}

int cmd_simulate(const CommonArgs& args) {
    std::string raw;
    json config = load_config(args.config_path, raw);
    ScenarioSpec spec = cfg::scenario_spec(config.at("scenario"));
    if (args.seed_given) spec.seed = args.seed;
    spec.threads = effective_threads(args);
    Simulator sim(spec);
    auto out = sim.simulate();

    std::filesystem::create_directories(args.out);
    write_cohort_csv(out.cohort, args.out + "/cohort.csv");

    // Truth sidecar: written for validation tooling, read by no estimator.
    json truth;
    truth["e_y0"] = mean(out.truth.y0);
    truth["y0"] = out.truth.y0;
    truth["x0"] = out.truth.x0;
    truth["x_true"] = out.truth.x_true;
    write_text_file(args.out + "/truth.json", truth.dump() + "\n");

    double ybar = 0.0, cfrac = 0.0;
    for (const auto& subj : out.cohort.subjects) {
        ybar += subj.utility;
        cfrac += subj.censored ? 1.0 : 0.0;
    }
    ybar /= static_cast<double>(out.cohort.subjects.size());
    cfrac /= static_cast<double>(out.cohort.subjects.size());

    json rep;
    rep["command"] = "simulate";
    rep["n"] = out.cohort.subjects.size();
    rep["horizon"] = out.cohort.horizon;
    rep["e_y_obs"] = ybar;
    rep["censored_fraction"] = cfrac;
    std::ostringstream human;
    human << "simulated cohort: n=" << out.cohort.subjects.size()
          << " horizon=" << out.cohort.horizon << "\n"
          << "observed mean utility: " << ybar << "\n"
          << "censored fraction:     " << cfrac << "\n";
    CommonArgs margs = args;
    margs.seed = spec.seed;
    write_outputs(args.out, make_manifest("simulate", margs, raw), rep, human.str());
    return 0;
}

int cmd_estimate(const CommonArgs& args, const char* name = "estimate") {
    std::string raw;
    json config = load_config(args.config_path, raw);
    Cohort c = load_cohort(args);
    auto res = run_estimate(c, config, gest_from(config, args));
    json rep = estimate_to_json(res);
    rep["command"] = name;
    write_outputs(args.out, make_manifest(name, args, raw), rep, estimate_to_text(res));
    return 0;
}

int cmd_regime_eval(const CommonArgs& args) {
    std::string raw;
    json config = load_config(args.config_path, raw);
    if (!config.contains("regime"))
        throw ConfigError("regime-eval requires a regime block in the config");
    return cmd_estimate(args, "regime-eval");
}

int cmd_iptw(const CommonArgs& args) {
    std::string raw;
    json config = load_config(args.config_path, raw);
    Cohort c = load_cohort(args);

    Regime regime = config.contains("regime") && !config.at("regime").is_null()
                        ? cfg::regime_spec(config.at("regime"))
                        : Regime::zero();
    ZeroProbModelSpec zspec = config.contains("zero_model")
                                  ? cfg::zero_model_spec(config.at("zero_model"))
                                  : ZeroProbModelSpec{};
    const bool ratio_form = config.value("ratio_form", true);
    const int chi = config.value("chi", 0);

    json rep;
    rep["command"] = "iptw";
    std::ostringstream human;

    if (config.contains("mask") && !config.at("mask").is_null()) {
        auto res = iptw_intercal(c, cfg::mask_spec(config.at("mask")), chi, zspec, ratio_form);
        rep["target"] = "intercal_mean";
        rep["estimate"] = res.estimate;
        rep["se"] = res.se;
        rep["n_consistent"] = res.n_consistent;
        rep["warnings"] = res.warnings;
        human << "E[Y0^T] (intractable-subgroup target): " << res.estimate << " (se "
              << res.se << ", consistent subjects " << res.n_consistent << ")\n";
    } else {
        auto derived = derive_exposure(c);
        std::vector<std::vector<double>> a(derived.size());
        std::vector<std::vector<unsigned char>> xi(derived.size());
        for (std::size_t i = 0; i < derived.size(); ++i) {
            a[i] = residual_exposure(c.subjects[i], derived[i], regime, c.horizon);
            xi[i] = regime_indicators(c.subjects[i], derived[i], regime, c.horizon);
        }
        Cohort view = chi > 0 ? mlp_lag_views(c, chi) : c;
        if (chi > 0) {
            a = lag_exposure(a, chi);
            xi = lag_eligibility(xi, chi);
            zspec.lag = chi;
        }
        auto fit = fit_zero_prob(view, a, xi, zspec);
        if (config.contains("u_grid")) {
            std::vector<double> u_grid;
            for (const auto& u : config.at("u_grid")) u_grid.push_back(u.get<double>());
            auto curve = iptw_survival(view, a, xi, fit, u_grid, false);
            rep["target"] = "survival";
            rep["survival"] = survival_to_json(curve);
            human << "IPTW survival of the counterfactual event time\n"
                  << survival_to_text(curve);
        } else {
            auto res = iptw_mean_y0(view, a, xi, fit, ratio_form);
            rep["target"] = "mean";
            rep["estimate"] = res.estimate;
            rep["se"] = res.se;
            rep["n_consistent"] = res.n_consistent;
            rep["warnings"] = res.warnings;
            human << "IPTW E[Y0^g]: " << res.estimate << " (se " << res.se
                  << ", consistent subjects " << res.n_consistent << ")\n";
        }
    }
    write_outputs(args.out, make_manifest("iptw", args, raw), rep, human.str());
    return 0;
}

int cmd_gformula(const CommonArgs& args) {
    std::string raw;
    json config = load_config(args.config_path, raw);
    Cohort c = load_cohort(args);
    Regime regime = config.contains("regime") && !config.at("regime").is_null()
                        ? cfg::regime_spec(config.at("regime"))
                        : Regime::zero();
    GFormulaSpec gspec = config.contains("gformula") ? cfg::gformula_spec(config.at("gformula"))
                                                     : GFormulaSpec{};
    if (args.seed_given) gspec.seed = args.seed;
    gspec.threads = effective_threads(args);

    auto derived = derive_exposure(c);
    std::vector<std::vector<double>> a(derived.size());
    for (std::size_t i = 0; i < derived.size(); ++i)
        a[i] = residual_exposure(c.subjects[i], derived[i], regime, c.horizon);

    std::vector<double> u_grid;
    if (config.contains("u_grid"))
        for (const auto& u : config.at("u_grid")) u_grid.push_back(u.get<double>());

    auto res = gformula_survival(c, a, gspec, u_grid);
    json rep;
    rep["command"] = "gformula";
    rep["mean_y0"] = res.mean_y0;
    rep["mean_y0_se"] = res.mean_y0_se;
    rep["survival"] = survival_to_json(res.survival);
    rep["extrapolation_warnings"] = res.extrapolation_warnings;
    std::ostringstream human;
    human << "g-formula E[Y0^g]: " << res.mean_y0 << " (mc se " << res.mean_y0_se << ")\n";
    if (!res.survival.empty())
        human << "g-formula survival\n" << survival_to_text(res.survival);
    if (res.extrapolation_warnings > 0)
        human << "extrapolation warnings: " << res.extrapolation_warnings << "\n";
    write_outputs(args.out, make_manifest("gformula", args, raw), rep, human.str());
    return 0;
}

int cmd_opt_regime(const CommonArgs& args) {
    std::string raw;
    json config = load_config(args.config_path, raw);
    Cohort c = load_cohort(args);
    const json& oj = config.at("optreg");

    OptRegimeSpec spec;
    spec.blip = cfg::blip_spec(oj.at("blip"));
    spec.ratio = cfg::ratio_spec(oj.at("ratio"));
    for (const auto& v : oj.at("action_grid")) spec.action_grid.push_back(v.get<double>());
    spec.history_lags = oj.value("history_lags", 8);

    JointFitConfig jcfg;
    jcfg.beta_coords = cfg::int_list(oj.at("beta_coords"));
    jcfg.beta_template = cfg::vector_of(oj.at("beta_template"));
    if (oj.contains("beta_grid"))
        jcfg.beta_grid = cfg::grid_spec(oj.at("beta_grid"), jcfg.beta_grid);
    if (oj.contains("psi_grid"))
        jcfg.psi_grid = cfg::grid_spec(oj.at("psi_grid"), jcfg.psi_grid);
    jcfg.zeta = oj.value("zeta", 0.0);
    if (oj.contains("treatment")) jcfg.gest.treatment = cfg::treatment_spec(oj.at("treatment"));
    jcfg.gest.threads = effective_threads(args);

    auto fit = joint_optimal_fit(c, spec, jcfg);
    json rep;
    rep["command"] = "opt-regime";
    rep["beta"] = json_vector(fit.beta);
    rep["psi"] = json_vector(fit.psi);
    rep["ey0_opt"] = fit.ey0_opt;
    rep["statistic"] = fit.statistic;
    rep["p_value"] = fit.p_value;
    rep["converged"] = fit.converged;
    json gstar = json::object();
    for (int m = 0; m < c.horizon; ++m)
        for (const auto& [cell, g] : fit.state.g_star[static_cast<std::size_t>(m)])
            gstar[std::to_string(m) + ":" + cell] = g;
    rep["g_star"] = gstar;
    if (!fit.converged) {
        json land = json::array();
        for (const auto& pt : fit.landscape)
            land.push_back({{"beta", json_vector(pt.beta)},
                            {"psi", pt.psi},
                            {"stat_beta", pt.stat_beta},
                            {"stat_psi", pt.stat_psi}});
        rep["landscape"] = land;
    }
    std::ostringstream human;
    human << "joint optimal-regime fit\nbeta: ";
    for (Eigen::Index k = 0; k < fit.beta.size(); ++k) human << fit.beta[k] << " ";
    human << "\npsi: " << fit.psi[0] << "\nE[Y0^gopt]: " << fit.ey0_opt
          << "\ncombined statistic: " << fit.statistic << " (p " << fit.p_value << ")\n"
          << (fit.converged ? "joint zero found\n"
                            : "NO JOINT ZERO on the grid; landscape dumped\n");
    write_outputs(args.out, make_manifest("opt-regime", args, raw), rep, human.str());
    return 0;
}

int cmd_sensitivity(const CommonArgs& args) {
    std::string raw;
    json config = load_config(args.config_path, raw);
    Cohort base = load_cohort(args, /*apply_coarsen=*/false);

    BlipSpec blip = config.contains("blip") ? cfg::blip_spec(config.at("blip")) : BlipSpec{};
    std::optional<TimeRatioSpec> ratio;
    if (config.contains("ratio") && !config.at("ratio").is_null())
        ratio = cfg::ratio_spec(config.at("ratio"));
    GEstConfig gcfg = gest_from(config, args, /*take_zeta=*/false);

    json rep;
    rep["command"] = "sensitivity";
    std::ostringstream human;

    if (!args.zeta_list.empty()) {
        auto zetas = parse_list(args.zeta_list);
        auto rows = sensitivity_zeta(base, blip, ratio, gcfg, zetas);
        json jrows = json::array();
        human << "zeta sensitivity (default anchor 72 months)\n"
              << "   zeta   anchor      beta_hat       psi_hat        E[Y0]   pm_used  status\n";
        for (const auto& row : rows) {
            json jr;
            jr["zeta"] = row.zeta;
            jr["default_anchor"] = row.zeta == 72.0;
            jr["ok"] = row.ok;
            if (row.ok)
                jr["result"] = estimate_to_json(row.result);
            else
                jr["error"] = row.error;
            jrows.push_back(jr);
            char buf[240];
            if (row.ok) {
                std::snprintf(buf, sizeof(buf),
                              "%7.1f  %7s  %12.5g  %12.5g  %11.5g  %8zu  ok\n", row.zeta,
                              row.zeta == 72.0 ? "default" : "", row.result.beta_hat[0],
                              row.result.psi_hat.size() ? row.result.psi_hat[0] : kNaN,
                              row.result.ey0_hat, row.result.diag.person_months_used);
            } else {
                std::snprintf(buf, sizeof(buf), "%7.1f  %7s  failed: %s\n", row.zeta,
                              row.zeta == 72.0 ? "default" : "", row.error.c_str());
            }
            human << buf;
        }
        rep["zeta_table"] = jrows;
    }

    if (!args.coarsen_list.empty()) {
        auto factors = parse_list(args.coarsen_list);
        json jrows = json::array();
        human << "coarsening sensitivity (analysis timescale)\n"
              << " factor      beta_hat        E[Y0]   status\n";
        for (double fd : factors) {
            const int f = static_cast<int>(fd);
            json jr;
            jr["factor"] = f;
            char buf[240];
            try {
                Cohort cc = coarsen(base, f);
                GEstConfig gf = gcfg;
                gf.zeta = gcfg.zeta / f;  // the window lives on the analysis timescale
                auto res = run_estimate(cc, config, gf);
                jr["ok"] = true;
                jr["result"] = estimate_to_json(res);
                std::snprintf(buf, sizeof(buf), "%7d  %12.5g  %11.5g   ok\n", f,
                              res.beta_hat[0], res.ey0_hat);
            } catch (const std::exception& e) {
                jr["ok"] = false;
                jr["error"] = e.what();
                std::snprintf(buf, sizeof(buf), "%7d  failed: %s\n", f, e.what());
            }
            jrows.push_back(jr);
            human << buf;
        }
        rep["coarsen_table"] = jrows;
    }
    if (args.zeta_list.empty() && args.coarsen_list.empty())
        throw ConfigError("sensitivity: provide --zeta and/or --coarsen lists");

    write_outputs(args.out, make_manifest("sensitivity", args, raw), rep, human.str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"g-estimation of structural nested models for longitudinal exposure data"};
    app.require_subcommand(1);

    CommonArgs args;
    auto add_common = [&](CLI::App* sub, bool needs_input) {
        sub->add_option("--config", args.config_path, "configuration file (json)")->required();
        if (needs_input)
            sub->add_option("--input", args.input, "person-month csv")->required();
        sub->add_option("--out", args.out, "output directory")->required();
        sub->add_option("--seed", args.seed, "root seed")
            ->each([&](const std::string&) { args.seed_given = true; });
        sub->add_option("--threads", args.threads, "worker threads (default: cores)");
        sub->add_option("--zeta", args.zeta_list, "restriction window months (comma list)");
        sub->add_option("--coarsen", args.coarsen_list, "timescale factor (comma list)");
        sub->add_option("--variance", args.variance, "iid|cluster");
    };

    auto* simulate = app.add_subcommand("simulate", "scenario -> cohort + truth sidecar");
    add_common(simulate, false);
    auto* estimate = app.add_subcommand("estimate", "g-estimation pipeline -> report");
    add_common(estimate, true);
    auto* iptw = app.add_subcommand("iptw", "inverse-probability-weighted comparators");
    add_common(iptw, true);
    auto* gformula = app.add_subcommand("gformula", "Monte Carlo g-formula comparators");
    add_common(gformula, true);
    auto* regime_eval = app.add_subcommand("regime-eval", "E[Y0^g] for a declared regime");
    add_common(regime_eval, true);
    auto* opt_regime = app.add_subcommand("opt-regime", "optimal-regime joint fit");
    add_common(opt_regime, true);
    auto* sensitivity = app.add_subcommand("sensitivity", "zeta / coarsening sweeps");
    add_common(sensitivity, true);

    CLI11_PARSE(app, argc, argv);

    try {
        if (simulate->parsed()) return cmd_simulate(args);
        if (estimate->parsed()) return cmd_estimate(args);
        if (iptw->parsed()) return cmd_iptw(args);
        if (gformula->parsed()) return cmd_gformula(args);
        if (regime_eval->parsed()) return cmd_regime_eval(args);
        if (opt_regime->parsed()) return cmd_opt_regime(args);
        if (sensitivity->parsed()) return cmd_sensitivity(args);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 1;
    }
    return 0;
}
