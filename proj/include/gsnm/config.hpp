// The shared declarative configuration dialect (JSON): blip and time-ratio
// families, treatment and instrument features, estimation settings, regimes,
// subgroup masks, scenario overrides, and comparator model specs.
#pragma once

#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "gsnm/altest.hpp"
#include "gsnm/cohort.hpp"
#include "gsnm/common.hpp"
#include "gsnm/ctf.hpp"
#include "gsnm/gest.hpp"
#include "gsnm/optreg.hpp"
#include "gsnm/regimes.hpp"
#include "gsnm/scenarios.hpp"

namespace gsnm {

using Json = nlohmann::json;

namespace cfg {

inline std::vector<int> int_list(const Json& j) {
    std::vector<int> out;
    for (const auto& v : j) out.push_back(v.get<int>());
    return out;
}

inline Eigen::VectorXd vector_of(const Json& j) {
    Eigen::VectorXd v(j.size());
    Eigen::Index at = 0;
    for (const auto& x : j) v[at++] = x.get<double>();
    return v;
}

inline BlipSpec blip_spec(const Json& j) {
    BlipSpec spec;
    const std::string fam = j.value("family", "constant");
    if (fam == "constant") {
        spec.family = BlipFamily::constant;
    } else if (fam == "linear_time") {
        spec.family = BlipFamily::linear_time;
    } else if (fam == "covariate") {
        spec.family = BlipFamily::covariate;
        spec.cov_indices = int_list(j.at("cov"));
    } else if (fam == "x_affine") {
        spec.family = BlipFamily::x_affine;
    } else if (fam == "x_threshold") {
        spec.family = BlipFamily::x_threshold;
        spec.threshold_window = j.at("window").get<double>();
    } else if (fam == "action_quadratic") {
        spec.family = BlipFamily::action_quadratic;
        if (j.contains("cov")) spec.cov_indices = int_list(j.at("cov"));
        spec.quad_use_x = j.value("use_x", false);
    } else {
        throw ConfigError("unknown blip family: " + fam);
    }
    return spec;
}

inline TimeRatioSpec ratio_spec(const Json& j) {
    TimeRatioSpec spec;
    const std::string fam = j.value("family", "constant");
    if (fam == "constant") {
        spec.family = RatioFamily::constant;
    } else if (fam == "covariate") {
        spec.family = RatioFamily::covariate;
        spec.cov_indices = int_list(j.at("cov"));
    } else {
        throw ConfigError("unknown time-ratio family: " + fam);
    }
    return spec;
}

inline GridSpec grid_spec(const Json& j, GridSpec fallback) {
    GridSpec g = fallback;
    if (j.contains("lo")) g.lo = j.at("lo").get<double>();
    if (j.contains("hi")) g.hi = j.at("hi").get<double>();
    if (j.contains("step")) g.step = j.at("step").get<double>();
    return g;
}

inline TreatmentModelSpec treatment_spec(const Json& j) {
    TreatmentModelSpec t;
    const std::string resp = j.value("response", "identity");
    if (resp == "identity") t.response = TreatmentResponse::identity;
    else if (resp == "log_shift") t.response = TreatmentResponse::log_shift;
    else if (resp == "log_linear") t.response = TreatmentResponse::log_linear;
    else throw ConfigError("unknown treatment response: " + resp);
    t.w_month = j.value("month", false);
    if (j.contains("cov")) t.w_cov = int_list(j.at("cov"));
    t.w_prior_a = j.value("prior_a", 0);
    return t;
}

inline GEstConfig gest_config(const Json& j) {
    GEstConfig cfg;
    cfg.zeta = j.value("zeta", 72.0);
    if (j.contains("chi") && !j.at("chi").is_null()) cfg.chi = j.at("chi").get<double>();
    if (j.contains("beta_grid")) cfg.beta_grid = grid_spec(j.at("beta_grid"), cfg.beta_grid);
    if (j.contains("psi_grid")) cfg.psi_grid = grid_spec(j.at("psi_grid"), cfg.psi_grid);
    const std::string var = j.value("variance", "cluster");
    if (var == "cluster") cfg.variance = VarianceMode::cluster;
    else if (var == "iid") cfg.variance = VarianceMode::iid;
    else throw ConfigError("unknown variance mode: " + var);
    cfg.alpha_level = j.value("alpha_level", 0.05);
    if (j.contains("treatment")) cfg.treatment = treatment_spec(j.at("treatment"));
    cfg.q_variant = j.value("q_variant", 0);
    return cfg;
}

inline MaskRule mask_rule(const Json& j) {
    MaskRule r;
    const std::string field = j.at("field").get<std::string>();
    if (field == "age") r.field = MaskRule::Field::age;
    else if (field == "bmi") r.field = MaskRule::Field::bmi;
    else if (field == "month") r.field = MaskRule::Field::month;
    else if (field == "covariate") r.field = MaskRule::Field::covariate;
    else if (field == "diagnosed") r.field = MaskRule::Field::diagnosed;
    else if (field == "event_window") r.field = MaskRule::Field::event_window;
    else throw ConfigError("unknown mask field: " + field);
    const std::string op = j.value("op", "gt");
    if (op == "lt") r.op = MaskRule::Op::lt;
    else if (op == "le") r.op = MaskRule::Op::le;
    else if (op == "gt") r.op = MaskRule::Op::gt;
    else if (op == "ge") r.op = MaskRule::Op::ge;
    else throw ConfigError("unknown mask op: " + op);
    r.threshold = j.value("threshold", 0.0);
    r.cov_index = j.value("cov_index", 0);
    r.window = j.value("window", 0.0);
    return r;
}

inline SubgroupMask mask_spec(const Json& j) {
    SubgroupMask m;
    for (const auto& r : j.at("rules")) m.rules.push_back(mask_rule(r));
    return m;
}

inline RegimePredicate regime_predicate(const Json& j) {
    RegimePredicate p;
    const std::string field = j.at("field").get<std::string>();
    if (field == "covariate") p.field = RegimePredicate::Field::covariate;
    else if (field == "bmi") p.field = RegimePredicate::Field::bmi;
    else if (field == "month") p.field = RegimePredicate::Field::month;
    else if (field == "prior_gain") p.field = RegimePredicate::Field::prior_gain;
    else throw ConfigError("unknown regime predicate field: " + field);
    const std::string op = j.value("op", "ge");
    if (op == "lt") p.op = RegimePredicate::Op::lt;
    else if (op == "le") p.op = RegimePredicate::Op::le;
    else if (op == "gt") p.op = RegimePredicate::Op::gt;
    else if (op == "ge") p.op = RegimePredicate::Op::ge;
    else throw ConfigError("unknown regime predicate op: " + op);
    p.cov_index = j.value("cov_index", 0);
    p.threshold = j.value("threshold", 0.0);
    return p;
}

inline Regime regime_spec(const Json& j) {
    Regime r;
    const std::string kind = j.value("kind", "static");
    if (kind == "static") {
        r.kind = Regime::Kind::static_gain;
        if (j.contains("gains")) {
            for (const auto& g : j.at("gains")) r.gains.push_back(g.get<double>());
        } else {
            r.gains = {j.value("gain", 0.0)};
        }
    } else if (kind == "dynamic") {
        r.kind = Regime::Kind::dynamic;
        for (const auto& rule : j.at("rules")) {
            Regime::Rule rr;
            rr.predicate = regime_predicate(rule.at("predicate"));
            rr.gain = rule.at("gain").get<double>();
            r.rules.push_back(rr);
        }
        r.default_gain = j.value("default_gain", 0.0);
    } else {
        throw ConfigError("unknown regime kind: " + kind);
    }
    return r;
}

inline ZeroProbModelSpec zero_model_spec(const Json& j) {
    ZeroProbModelSpec z;
    if (j.contains("cov")) z.cov_indices = int_list(j.at("cov"));
    z.include_month = j.value("month", false);
    z.event_state = j.value("event_state", false);
    z.lag = j.value("lag", 0);
    return z;
}

inline GFormulaSpec gformula_spec(const Json& j) {
    GFormulaSpec g;
    g.cov_index = j.value("cov_index", 0);
    g.max_levels = j.value("max_levels", 12);
    g.hazard_by_month = j.value("hazard_by_month", false);
    g.outcome_min_x = j.value("outcome_min_x", true);
    g.outcome_l0 = j.value("outcome_l0", true);
    g.draws = j.value("draws", 20000);
    g.seed = j.value("seed", 1u);
    return g;
}

// ScenarioSpec from a preset name plus field overrides.
inline ScenarioSpec scenario_spec(const Json& j) {
    const std::string preset = j.value("preset", "co");
    const int n = j.value("n", 1000);
    const int horizon = j.value("horizon", 60);
    const std::uint64_t seed = j.value("seed", 1u);
    ScenarioSpec s = scenario_by_name(preset, n, horizon, seed);
    if (j.contains("beta_true")) s.beta_true = vector_of(j.at("beta_true"));
    if (j.contains("psi_true")) s.psi_true = vector_of(j.at("psi_true"));
    if (j.contains("reverse_gap")) s.reverse_gap = j.at("reverse_gap").get<double>();
    if (j.contains("mlp_chi")) s.mlp_chi = j.at("mlp_chi").get<int>();
    if (j.contains("censor")) s.censor = j.at("censor").get<bool>();
    if (j.contains("p_death")) s.p_death = j.at("p_death").get<double>();
    if (j.contains("bmi_noise_sd")) s.bmi_noise_sd = j.at("bmi_noise_sd").get<double>();
    if (j.contains("bmi_round")) s.bmi_round = j.at("bmi_round").get<bool>();
    return s;
}

}  // namespace cfg
}  // namespace gsnm
