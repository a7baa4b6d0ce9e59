#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <map>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunResult {
    int status = -1;
    std::string output;
};

RunResult run(const std::string& cmd) {
    RunResult r;
    std::array<char, 512> buf{};
    FILE* pipe = popen((cmd + " 2>&1").c_str(), "r");
    REQUIRE(pipe != nullptr);
    while (fgets(buf.data(), buf.size(), pipe) != nullptr) r.output += buf.data();
    r.status = pclose(pipe);
    if (WIFEXITED(r.status)) r.status = WEXITSTATUS(r.status);
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

void write(const fs::path& p, const std::string& text) {
    std::ofstream f(p);
    f << text;
}

const std::string kCli = GSNM_CLI_PATH;

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("gsnm_cli_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

}  // namespace

TEST_CASE("end-to-end null scenario: simulate then estimate reports near-zero effects") {
    TempDir tmp;
    write(tmp.path / "sc.json",
          R"({"scenario": {"preset": "null", "n": 2500, "horizon": 15, "seed": 3}})");
    write(tmp.path / "est.json", R"({
        "blip": {"family": "constant"},
        "ratio": {"family": "constant"},
        "gest": {"zeta": 3.0, "beta_grid": {"lo": -6, "hi": 6, "step": 0.1},
                 "psi_grid": {"lo": -0.8, "hi": 0.8, "step": 0.02},
                 "treatment": {"cov": [0]}}})");

    auto sim = run(kCli + " simulate --config " + (tmp.path / "sc.json").string() +
                   " --out " + (tmp.path / "sim").string());
    REQUIRE(sim.status == 0);
    REQUIRE(fs::exists(tmp.path / "sim/cohort.csv"));
    REQUIRE(fs::exists(tmp.path / "sim/truth.json"));
    REQUIRE(fs::exists(tmp.path / "sim/manifest.json"));

    auto est = run(kCli + " estimate --config " + (tmp.path / "est.json").string() +
                   " --input " + (tmp.path / "sim/cohort.csv").string() + " --out " +
                   (tmp.path / "est").string());
    REQUIRE(est.status == 0);
    json rep = json::parse(slurp(tmp.path / "est/report.json"));
    CHECK(std::fabs(rep["beta_hat"][0].get<double>()) < 0.3);
    CHECK(std::fabs(rep["psi_hat"][0].get<double>()) < 0.6);
}

TEST_CASE("bad invocations exit nonzero with a single-line error") {
    TempDir tmp;
    auto missing = run(kCli + " estimate --config /nonexistent.json --input /nonexistent.csv" +
                       " --out " + (tmp.path / "o").string());
    CHECK(missing.status != 0);
    CHECK(missing.output.rfind("error: ", 0) == 0);
    CHECK(std::count(missing.output.begin(), missing.output.end(), '\n') == 1);

    write(tmp.path / "broken.json", "{ not json");
    auto malformed = run(kCli + " estimate --config " + (tmp.path / "broken.json").string() +
                         " --input /nonexistent.csv --out " + (tmp.path / "o").string());
    CHECK(malformed.status != 0);
    CHECK(malformed.output.rfind("error: ", 0) == 0);

    auto unknown = run(kCli + " estimate --frobnicate");
    CHECK(unknown.status != 0);
}

TEST_CASE("reruns are byte-identical across worker thread counts") {
    TempDir tmp;
    write(tmp.path / "sc.json",
          R"({"scenario": {"preset": "rc_cd", "n": 300, "horizon": 18, "seed": 11}})");
    write(tmp.path / "est.json", R"({
        "blip": {"family": "constant"},
        "ratio": {"family": "constant"},
        "gest": {"zeta": 6.0, "psi_grid": {"lo": -0.2, "hi": 0.5, "step": 0.02},
                 "treatment": {"cov": [0]}}})");

    // identical manifests: same config, input, out and seed; only the worker
    // count varies between reruns into the same directory
    std::map<std::string, std::map<std::string, std::string>> captured;
    for (const char* threads : {"1", "2", "8"}) {
        auto sim = run(kCli + " simulate --config " + (tmp.path / "sc.json").string() +
                       " --out " + (tmp.path / "sim").string() + " --threads " + threads);
        REQUIRE(sim.status == 0);
        auto est = run(kCli + " estimate --config " + (tmp.path / "est.json").string() +
                       " --input " + (tmp.path / "sim/cohort.csv").string() + " --out " +
                       (tmp.path / "est").string() + " --threads " + threads);
        REQUIRE(est.status == 0);
        for (const char* f : {"cohort.csv", "truth.json", "report.json", "manifest.json"})
            captured[threads]["sim/" + std::string(f)] = slurp(tmp.path / "sim" / f);
        for (const char* f : {"report.json", "report.txt", "manifest.json"})
            captured[threads]["est/" + std::string(f)] = slurp(tmp.path / "est" / f);
    }
    for (const auto& [file, bytes] : captured["1"]) {
        INFO(file);
        CHECK(captured["2"][file] == bytes);
        CHECK(captured["8"][file] == bytes);
    }
}

TEST_CASE("sensitivity sweep writes zeta and coarsening tables") {
    TempDir tmp;
    write(tmp.path / "sc.json",
          R"({"scenario": {"preset": "rc_cd", "n": 500, "horizon": 24, "seed": 21}})");
    write(tmp.path / "est.json", R"({
        "blip": {"family": "constant"},
        "ratio": {"family": "constant"},
        "gest": {"zeta": 6.0, "psi_grid": {"lo": -0.2, "hi": 0.5, "step": 0.02},
                 "treatment": {"cov": [0]}}})");
    auto sim = run(kCli + " simulate --config " + (tmp.path / "sc.json").string() + " --out " +
                   (tmp.path / "sim").string());
    REQUIRE(sim.status == 0);
    auto sens = run(kCli + " sensitivity --config " + (tmp.path / "est.json").string() +
                    " --input " + (tmp.path / "sim/cohort.csv").string() + " --out " +
                    (tmp.path / "sens").string() + " --zeta 3,6,9 --coarsen 1,3");
    REQUIRE(sens.status == 0);
    json rep = json::parse(slurp(tmp.path / "sens/report.json"));
    REQUIRE(rep["zeta_table"].size() == 3);
    REQUIRE(rep["coarsen_table"].size() == 2);
    // anchor flag is carried per row (72 months is the default anchor)
    for (const auto& row : rep["zeta_table"]) CHECK(row.contains("default_anchor"));
    CHECK(rep["coarsen_table"][0]["ok"].get<bool>());
    CHECK(rep["coarsen_table"][1]["ok"].get<bool>());
}

TEST_CASE("iptw and gformula commands run on a markov cohort") {
    TempDir tmp;
    write(tmp.path / "sc.json",
          R"({"scenario": {"preset": "markov_co", "n": 1500, "horizon": 15, "seed": 9}})");
    auto sim = run(kCli + " simulate --config " + (tmp.path / "sc.json").string() + " --out " +
                   (tmp.path / "sim").string());
    REQUIRE(sim.status == 0);

    write(tmp.path / "iptw.json", R"({"zero_model": {"cov": [0]}, "ratio_form": true})");
    auto ip = run(kCli + " iptw --config " + (tmp.path / "iptw.json").string() + " --input " +
                  (tmp.path / "sim/cohort.csv").string() + " --out " +
                  (tmp.path / "iptw").string());
    REQUIRE(ip.status == 0);
    json iptw_rep = json::parse(slurp(tmp.path / "iptw/report.json"));
    CHECK(iptw_rep["target"] == "mean");
    CHECK(std::isfinite(iptw_rep["estimate"].get<double>()));

    write(tmp.path / "gf.json",
          R"({"gformula": {"cov_index": 0, "draws": 4000, "seed": 2}, "u_grid": [6, 12]})");
    auto gf = run(kCli + " gformula --config " + (tmp.path / "gf.json").string() + " --input " +
                  (tmp.path / "sim/cohort.csv").string() + " --out " +
                  (tmp.path / "gf").string());
    REQUIRE(gf.status == 0);
    json gf_rep = json::parse(slurp(tmp.path / "gf/report.json"));
    CHECK(gf_rep["survival"].size() == 2);

    // the two comparators land near each other
    const double a = iptw_rep["estimate"].get<double>();
    const double b = gf_rep["mean_y0"].get<double>();
    CHECK(std::fabs(a - b) < 1.0);
}
