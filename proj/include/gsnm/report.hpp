// Run manifests and result reports. Every command writes, into its output
// directory, a manifest.json describing the run, a machine-readable
// report.json, and an aligned human-readable report.txt. Outputs carry no
// timestamps or worker counts, so reruns with an identical manifest are
// byte-identical.
#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "gsnm/altest.hpp"
#include "gsnm/common.hpp"
#include "gsnm/gest.hpp"

namespace gsnm {

inline constexpr const char* kVersion = "0.1.0";

struct RunManifest {
    std::string command;
    std::string config_path;
    std::string config_digest;
    std::string input;
    std::string out;
    std::uint64_t seed = 0;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["command"] = command;
        j["config"] = config_path;
        j["config_digest"] = config_digest;
        j["input"] = input;
        j["out"] = out;
        j["seed"] = seed;
        j["version"] = kVersion;
        return j;
    }
};

inline std::string digest_hex(const std::string& text) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(text)));
    return buf;
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open for writing: " + path);
    f << text;
}

inline void write_outputs(const std::string& out_dir, const RunManifest& manifest,
                          const nlohmann::json& report, const std::string& human) {
    std::filesystem::create_directories(out_dir);
    write_text_file(out_dir + "/manifest.json", manifest.to_json().dump(2) + "\n");
    write_text_file(out_dir + "/report.json", report.dump(2) + "\n");
    write_text_file(out_dir + "/report.txt", human);
}

// ---------------------------------------------------------------------------
// Serialization helpers
// ---------------------------------------------------------------------------

inline nlohmann::json json_vector(const Eigen::VectorXd& v) {
    nlohmann::json j = nlohmann::json::array();
    for (Eigen::Index k = 0; k < v.size(); ++k) j.push_back(v[k]);
    return j;
}

inline nlohmann::json json_sets(const std::vector<CoordinateSet>& sets) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& s : sets) {
        nlohmann::json c = nlohmann::json::array();
        for (const auto& [lo, hi] : s.intervals) c.push_back({lo, hi});
        j.push_back(c);
    }
    return j;
}

inline nlohmann::json estimate_to_json(const EstimateResult& r) {
    nlohmann::json j;
    j["beta_hat"] = json_vector(r.beta_hat);
    if (r.psi_hat.size() > 0) j["psi_hat"] = json_vector(r.psi_hat);
    j["ey0_hat"] = r.ey0_hat;
    j["ey_obs"] = r.ey_obs;
    j["diff"] = r.diff;
    j["beta_ci"] = json_sets(r.beta_ci);
    if (!r.psi_ci.empty()) j["psi_ci"] = json_sets(r.psi_ci);
    nlohmann::json d;
    d["beta_grid_roots"] = r.diag.beta_grid_roots;
    d["psi_grid_roots"] = r.diag.psi_grid_roots;
    d["closed_vs_grid_gap"] = r.diag.closed_vs_grid_gap;
    d["beta_closed_form"] = r.diag.beta_closed_form;
    d["beta_singular"] = r.diag.beta_singular;
    d["beta_non_identified"] = r.diag.beta_non_identified;
    d["non_identified"] = r.diag.non_identified;
    d["warnings"] = r.diag.warnings;
    d["person_months_used"] = r.diag.person_months_used;
    j["diagnostics"] = d;
    return j;
}

inline std::string ci_to_string(const std::vector<CoordinateSet>& sets) {
    std::ostringstream os;
    for (std::size_t c = 0; c < sets.size(); ++c) {
        if (c) os << "; ";
        os << "[" << c << "] ";
        if (sets[c].intervals.empty()) {
            os << "(empty)";
            continue;
        }
        for (std::size_t k = 0; k < sets[c].intervals.size(); ++k) {
            if (k) os << " u ";
            char buf[64];
            std::snprintf(buf, sizeof(buf), "(%.4g, %.4g)", sets[c].intervals[k].first,
                          sets[c].intervals[k].second);
            os << buf;
        }
    }
    return os.str();
}

inline std::string estimate_to_text(const EstimateResult& r) {
    std::ostringstream os;
    char buf[160];
    auto row = [&](const char* k, const std::string& v) {
        std::snprintf(buf, sizeof(buf), "%-26s %s\n", k, v.c_str());
        os << buf;
    };
    auto num = [&](double v) {
        char b[40];
        std::snprintf(b, sizeof(b), "%.6g", v);
        return std::string(b);
    };
    std::string betas;
    for (Eigen::Index k = 0; k < r.beta_hat.size(); ++k)
        betas += (k ? " " : "") + num(r.beta_hat[k]);
    row("beta_hat", betas);
    if (r.psi_hat.size() > 0) {
        std::string psis;
        for (Eigen::Index k = 0; k < r.psi_hat.size(); ++k)
            psis += (k ? " " : "") + num(r.psi_hat[k]);
        row("psi_hat", psis);
    }
    row("E[Y0]", num(r.ey0_hat));
    row("E[Y] observed", num(r.ey_obs));
    row("difference", num(r.diff));
    row("beta 95% set", ci_to_string(r.beta_ci));
    if (!r.psi_ci.empty()) row("psi 95% set", ci_to_string(r.psi_ci));
    row("person-months used", std::to_string(r.diag.person_months_used));
    if (r.diag.non_identified) row("identification", "NOT IDENTIFIED (multiple zeros)");
    if (!r.diag.beta_non_identified.empty()) {
        std::string coords;
        for (int c : r.diag.beta_non_identified) coords += std::to_string(c) + " ";
        row("non-identified coords", coords);
    }
    for (const auto& w : r.diag.warnings) row("warning", w);
    return os.str();
}

inline nlohmann::json survival_to_json(const std::vector<SurvivalPoint>& curve) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& pt : curve) j.push_back({{"u", pt.u}, {"s", pt.s}, {"se", pt.se}});
    return j;
}

inline std::string survival_to_text(const std::vector<SurvivalPoint>& curve) {
    std::ostringstream os;
    os << "      u         S(u)        se\n";
    char buf[80];
    for (const auto& pt : curve) {
        std::snprintf(buf, sizeof(buf), "%7.2f  %10.6f  %9.6f\n", pt.u, pt.s, pt.se);
        os << buf;
    }
    return os.str();
}

}  // namespace gsnm
