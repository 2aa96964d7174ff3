// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "rvmb/cli.hpp"
#include "rvmb/fft.hpp"
#include "rvmb/io.hpp"

using namespace rvmb;
namespace fs = std::filesystem;

namespace {

int run(std::vector<std::string> args) {
    std::vector<const char*> argv{"rvmb"};
    for (const std::string& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

fs::path work_dir() {
    fs::path base = fs::temp_directory_path() / "rvmb-test-cli";
    return base;
}

} // namespace

TEST_CASE("flat config: parse, typed getters, round trip") {
    flat_config cfg =
        flat_config::parse("a = 1.5\nb=7 # trailing\n# full line\nname = run one\nflag=true\n");
    CHECK(cfg.get_double("a", 0) == 1.5);
    CHECK(cfg.get_int("b", 0) == 7);
    CHECK(cfg.get_string("name", "") == "run one");
    CHECK(cfg.get_bool("flag", false));
    CHECK(cfg.get_double("missing", 2.5) == 2.5);
    CHECK_THROWS_AS(cfg.get_double("name", 0), config_error);
    CHECK_THROWS_AS(flat_config::parse("a=1\na=2\n"), config_error);
    try {
        cfg.require_keys_among({"a", "b"});
        FAIL("unknown keys accepted");
    } catch (const config_error& e) {
        std::string m = e.what();
        CHECK(m.find("name") != std::string::npos);
        CHECK(m.find("flag") != std::string::npos);
    }
    cfg.set("a", "9");
    CHECK(cfg.get_double("a", 0) == 9.0);
    CHECK(flat_config::parse(cfg.serialize()).get_double("a", 0) == 9.0);
}

TEST_CASE("csv writer emits RFC-4180 rows with shortest round-trip doubles") {
    CHECK(csv_escape("plain") == "plain");
    CHECK(csv_escape("a,b") == "\"a,b\"");
    CHECK(csv_escape("say \"hi\"") == "\"say \"\"hi\"\"\"");
    fs::path base = work_dir();
    fs::create_directories(base);
    fs::path file = base / "t.csv";
    {
        csv_writer w(file.string());
        w.row({"x", "y"});
        w.row({format_double(1.0 / 3.0), format_double(-0.0)});
    }
    CHECK(slurp(file) == "x,y\r\n0.33333333333333331,-0\r\n");
}

TEST_CASE("snapshot files: round trip and corruption detection") {
    fs::path base = work_dir();
    fs::create_directories(base);
    fs::path file = base / "t.snap";
    std::vector<double> data = {1.0, -2.5, 3e300, 0.0, 5.5, -1e-300};
    write_snapshot(file.string(), {2, 3}, data);
    snapshot s = read_snapshot(file.string());
    CHECK(s.dims == (std::vector<std::uint64_t>{2, 3}));
    CHECK(s.data == data);

    std::string raw = slurp(file);
    fs::path badmagic = base / "badmagic.snap";
    {
        std::string bad = raw;
        bad[0] = 'X';
        std::ofstream(badmagic, std::ios::binary) << bad;
    }
    CHECK_THROWS_AS(read_snapshot(badmagic.string()), config_error);

    fs::path trunc = base / "trunc.snap";
    std::ofstream(trunc, std::ios::binary) << raw.substr(0, raw.size() - 9);
    CHECK_THROWS_AS(read_snapshot(trunc.string()), config_error);

    CHECK_THROWS_AS(read_snapshot((base / "noexist.snap").string()), config_error);
}

TEST_CASE("manifest and audit report serialization") {
    fs::path base = work_dir();
    fs::create_directories(base);
    flat_config cfg;
    cfg.set("a", "9");
    write_manifest((base / "t.manifest").string(), cfg);
    CHECK(flat_config::load((base / "t.manifest").string()).get_double("a", 0) == 9.0);

    audit_report r;
    r.name = "demo/one";
    r.samples = 10;
    r.worst.value = 1.25;
    std::string js = audit_reports_json({r});
    CHECK(js.find("\"demo/one\"") != std::string::npos);
}

TEST_CASE("fft: inverse round trip and mode bookkeeping") {
    fft3 f(8);
    for (std::size_t i = 0; i < f.total(); ++i) f.data()[i] = 0.0;
    f.data()[f.index(1, 2, 3)] = 1.0;
    f.forward();
    f.inverse();
    double err = 0.0;
    for (std::size_t i = 0; i < f.total(); ++i) {
        double want = (i == f.index(1, 2, 3)) ? 1.0 : 0.0;
        err = std::max(err, std::abs(f.data()[i] - want));
    }
    CHECK(err < 1e-14);
    CHECK(fft_mode(0, 8) == 0);
    CHECK(fft_mode(4, 8) == 4);
    CHECK(fft_mode(5, 8) == -3);
    // the Nyquist mode carries no usable first derivative
    CHECK(wavenumber_derivative(4, 8, 1.0) == 0.0);
}

TEST_CASE("cli: argument validation and error surfaces") {
    fs::path base = work_dir() / "cli";
    fs::remove_all(base);

    CHECK(run({"kinematics-check", "--out", (base / "kin").string(), "--samples", "20000",
               "--set", "jacobian_samples=200"}) == 0);
    CHECK(fs::exists(base / "kin" / "kinematics-check.json"));
    CHECK(fs::exists(base / "kin" / "kinematics-check-manifest.txt"));

    CHECK(run({"kinematics-check", "--out", (base / "kin0").string(), "--samples", "0"}) == 2);
    CHECK(run({"kinematics-check", "--out", (base / "kinbad").string(), "--set",
               "tolerance=oops"}) == 2);
    CHECK(fs::exists(base / "kinbad" / "kinematics-check-error.json"));

    CHECK(run({"nu-table", "--out", (base / "nubad").string(), "--set", "bogus_key=1"}) == 2);
    CHECK(run({"nu-table", "--frobnicate"}) == 2);
}

TEST_CASE("cli: collision frequency table") {
    fs::path base = work_dir() / "cli-nu";
    fs::remove_all(base);

    CHECK(run({"nu-table", "--out", (base / "nu").string(), "--set", "points=5", "--set",
               "p_max=4"}) == 0);
    std::string csv = slurp(base / "nu" / "nu-table.csv");
    CHECK(csv.rfind("absP,nu,errorEstimate\r\n", 0) == 0);

    CHECK(run({"nu-table", "--out", (base / "nu0").string(), "--set", "points=1", "--set",
               "p_min=0", "--set", "p_max=0"}) == 0);
    CHECK(slurp(base / "nu0" / "nu-table.csv").find("\r\n0,36.98327") != std::string::npos);

    CHECK(run({"nu-table", "--out", (base / "nuempty").string(), "--set", "points=0"}) == 2);
    // an unreachable tolerance is a numerical failure, not a usage error
    CHECK(run({"nu-table", "--out", (base / "nufail").string(), "--set", "points=3", "--set",
               "p_max=2", "--set", "rtol=1e-18", "--set", "atol=0"}) == 3);
    CHECK(fs::exists(base / "nufail" / "nu-table-error.json"));
}

TEST_CASE("cli: relaxation subcommand") {
    fs::path base = work_dir() / "cli-relax";
    fs::remove_all(base);
    CHECK(run({"relax", "--out", (base / "relax").string(), "--set", "steps=40"}) == 0);
    std::string rcsv = slurp(base / "relax" / "relax.csv");
    CHECK(rcsv.rfind("time,mass,energy,entropy,negative\r\n", 0) == 0);
    CHECK(run({"relax", "--out", (base / "relaxbad").string(), "--set",
               "profile=maxwellian"}) == 2);
}

TEST_CASE("cli: vmb-run outputs, reproducibility, manifest replay") {
    fs::path base = work_dir() / "cli-vmb";
    fs::remove_all(base);

    CHECK(run({"vmb-run", "--out", (base / "vmb").string(), "--set", "nx=4", "--set", "np=5",
               "--set", "pmax=5", "--set", "steps=5", "--set", "snapshots=true"}) == 0);
    CHECK(fs::exists(base / "vmb" / "vmb-run.csv"));
    REQUIRE(fs::exists(base / "vmb" / "state-final.rvmb"));
    snapshot snap = read_snapshot((base / "vmb" / "state-final.rvmb").string());
    CHECK(snap.dims == (std::vector<std::uint64_t>{2, 125, 64}));

    auto vmb_args = [&](const std::string& dir) {
        return std::vector<std::string>{
            "vmb-run", "--out",  (base / dir).string(), "--seed", "7", "--deterministic",
            "--set",   "nx=4",   "--set", "np=5", "--set", "pmax=5",
            "--set",   "steps=4", "--set", "profile=gaussian-bump", "--set",
            "amplitude=1e-3", "--set", "snapshots=true"};
    };
    CHECK(run(vmb_args("r1")) == 0);
    CHECK(run(vmb_args("r2")) == 0);
    CHECK(slurp(base / "r1" / "vmb-run.csv") == slurp(base / "r2" / "vmb-run.csv"));
    CHECK(slurp(base / "r1" / "state-final.rvmb") == slurp(base / "r2" / "state-final.rvmb"));
    CHECK(slurp(base / "r1" / "vmb-run-manifest.txt") ==
          slurp(base / "r2" / "vmb-run-manifest.txt"));

    CHECK(run({"vmb-run", "--out", (base / "r3").string(), "--config",
               (base / "r1" / "vmb-run-manifest.txt").string()}) == 0);
    CHECK(slurp(base / "r1" / "vmb-run.csv") == slurp(base / "r3" / "vmb-run.csv"));
    CHECK(slurp(base / "r1" / "vmb-run-manifest.txt") ==
          slurp(base / "r3" / "vmb-run-manifest.txt"));

    // a manifest written by one subcommand cannot drive another
    CHECK(run({"relax", "--out", (base / "cross").string(), "--config",
               (base / "r1" / "vmb-run-manifest.txt").string()}) == 2);
}

TEST_CASE("cli: spectral-gap and bounds-audit run end to end") {
    fs::path base = work_dir() / "cli-misc";
    fs::remove_all(base);
    CHECK(run({"spectral-gap", "--out", (base / "gap").string(), "--set", "nodes_per_axis=7",
               "--set", "pmax=5", "--set", "gate_radius=4.4"}) == 0);
    CHECK(fs::exists(base / "gap" / "spectral-gap.json"));
    CHECK(run({"bounds-audit", "--out", (base / "audit").string(), "--samples", "4000"}) == 0);
    CHECK(fs::exists(base / "audit" / "bounds-audit.json"));
}
