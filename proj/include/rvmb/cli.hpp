// SPDX-License-Identifier: Apache-2.0
/**
 * Command line driver. run_cli(argc, argv) is the whole program; the binary's
 * main() forwards to it so tests can drive every subcommand in-process.
 *
 * Subcommands: kinematics-check, nu-table, spectral-gap, bounds-audit, relax,
 * vmb-run. Shared flags: --config PATH, --out DIR, --seed N, --deterministic,
 * --workers N, --set key=value (repeatable). Precedence: config file keys,
 * then --set overrides, then dedicated flags.
 *
 * Exit codes: 0 all checks pass, 1 scientific failure, 2 configuration
 * error, 3 numerical non-convergence or breakdown.
 *
 * Every run materializes its full configuration (defaults included) and
 * writes it as `<subcommand>-manifest.txt` beside the outputs; the manifest
 * is itself a valid --config file, so re-running from it reproduces the run
 * byte for byte. Unknown config keys are rejected. Failures leave a
 * machine-readable `<subcommand>-error.json` record.
 */
#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "rvmb/bounds_audit.hpp"
#include "rvmb/collision.hpp"
#include "rvmb/core.hpp"
#include "rvmb/io.hpp"
#include "rvmb/kinematics.hpp"
#include "rvmb/operator_matrix.hpp"
#include "rvmb/parallel.hpp"
#include "rvmb/relax.hpp"
#include "rvmb/rng.hpp"
#include "rvmb/sim.hpp"
#include "rvmb/version.hpp"

namespace rvmb {

namespace cli {

struct common_flags {
    std::string config_path;
    std::string out_dir = ".";
    long long seed = 0;
    bool deterministic = false;
    long long workers = 1;
    long long samples = 0;
    std::vector<std::string> overrides;
    bool seed_given = false;
    bool workers_given = false;
    bool samples_given = false;
};

/// File keys, then --set pairs, then dedicated flags.
inline flat_config layer_config(const common_flags& fl, std::string_view sub) {
    flat_config cfg;
    if (!fl.config_path.empty()) cfg = flat_config::load(fl.config_path);
    for (const std::string& kv : fl.overrides) {
        std::size_t eq = kv.find('=');
        if (eq == std::string::npos)
            throw config_error("--set expects key=value, got '" + kv + "'");
        std::string key = detail::trim(std::string_view(kv).substr(0, eq));
        std::string value = detail::trim(std::string_view(kv).substr(eq + 1));
        if (key.empty()) throw config_error("--set expects key=value, got '" + kv + "'");
        cfg.set(key, value);
    }
    if (const std::string* s = cfg.find("subcommand"); s != nullptr && *s != sub)
        throw config_error("config file targets subcommand '" + *s + "', but '" +
                           std::string(sub) + "' was invoked");
    if (fl.seed_given) cfg.set("seed", std::to_string(fl.seed));
    if (fl.deterministic) cfg.set("deterministic", "true");
    if (fl.workers_given) cfg.set("workers", std::to_string(fl.workers));
    if (fl.samples_given) cfg.set("samples", std::to_string(fl.samples));
    return cfg;
}

struct run_setup {
    std::uint64_t seed = 0;
    bool deterministic = false;
    int workers = 1;
    std::filesystem::path out;
};

/// Common keys and the output directory. Deterministic mode pins the worker
/// count to one, the canonical reduction order; the pinned value is what the
/// manifest records.
inline run_setup begin_run(const flat_config& cfg, const common_flags& fl) {
    run_setup s;
    s.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
    s.deterministic = cfg.get_bool("deterministic", false);
    long long w = cfg.get_int("workers", 1);
    if (w < 1 || w > 4096) throw config_error("workers must lie in [1, 4096]");
    s.workers = s.deterministic ? 1 : static_cast<int>(w);
    s.out = fl.out_dir.empty() ? "." : fl.out_dir;
    std::filesystem::create_directories(s.out);
    return s;
}

inline void stamp_common(flat_config& res, std::string_view sub, const run_setup& s) {
    res.set("subcommand", sub);
    res.set("seed", std::to_string(s.seed));
    res.set("deterministic", s.deterministic ? "true" : "false");
    res.set("workers", std::to_string(s.workers));
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw config_error("cannot open '" + path.string() + "' for writing");
    f << text;
}

inline void write_json(const std::filesystem::path& path, const nlohmann::ordered_json& j) {
    write_text(path, j.dump(2) + "\n");
}

/// Best-effort machine-readable failure record beside the outputs.
inline void emit_error(const common_flags& fl, std::string_view sub, std::string_view kind,
                       std::string_view message) {
    std::fprintf(stderr, "[%s] %s: %s\n", std::string(sub).c_str(), std::string(kind).c_str(),
                 std::string(message).c_str());
    try {
        std::filesystem::path out = fl.out_dir.empty() ? "." : fl.out_dir;
        std::filesystem::create_directories(out);
        nlohmann::ordered_json j;
        j["subcommand"] = sub;
        j["error"] = kind;
        j["message"] = message;
        write_json(out / (std::string(sub) + "-error.json"), j);
    } catch (...) {
        // the stderr line above is the fallback record
    }
}

/// Max of per-sample values over a fixed block grid; bit-identical for any
/// worker count (the block layout never moves and max is order-free).
template <class PerSample>
double block_max(long long n, int workers, PerSample&& per_sample) {
    int nb = n < 256 ? static_cast<int>(n) : 256;
    if (nb <= 0) return 0.0;
    std::vector<double> block(static_cast<std::size_t>(nb), 0.0);
    parallel_for(0, nb, workers, [&](std::int64_t b) {
        long long lo = n * b / nb;
        long long hi = n * (b + 1) / nb;
        double acc = 0.0;
        for (long long i = lo; i < hi; ++i) acc = std::max(acc, per_sample(i));
        block[static_cast<std::size_t>(b)] = acc;
    });
    return *std::max_element(block.begin(), block.end());
}

// -------------------------------------------------------------------------
// kinematics-check
// -------------------------------------------------------------------------

namespace fdcheck {

/// FD determinant of the fixed-omega map (p, q) -> (p', q'), 6x6 central
/// differences.
inline double det_particle_map(vec3 p, vec3 q, vec3 omega, double step) {
    double base[6] = {p.x, p.y, p.z, q.x, q.y, q.z};
    Eigen::Matrix<double, 6, 6> m;
    for (int j = 0; j < 6; ++j) {
        double h = step * std::max(1.0, std::abs(base[j]));
        double lo[6], hi[6];
        for (int i = 0; i < 6; ++i) lo[i] = hi[i] = base[i];
        lo[j] -= h;
        hi[j] += h;
        deflection_pair a = post_collision_gs({lo[0], lo[1], lo[2]}, {lo[3], lo[4], lo[5]}, omega);
        deflection_pair b = post_collision_gs({hi[0], hi[1], hi[2]}, {hi[3], hi[4], hi[5]}, omega);
        double da[6] = {b.p_prime.x - a.p_prime.x, b.p_prime.y - a.p_prime.y,
                        b.p_prime.z - a.p_prime.z, b.q_prime.x - a.q_prime.x,
                        b.q_prime.y - a.q_prime.y, b.q_prime.z - a.q_prime.z};
        for (int i = 0; i < 6; ++i) m(i, j) = da[i] / (2.0 * h);
    }
    return m.determinant();
}

/// FD determinant of q -> u(p, q) at fixed p, 3x3 central differences.
inline double det_u_map(vec3 p, vec3 q, double step) {
    double base[3] = {q.x, q.y, q.z};
    Eigen::Matrix3d m;
    for (int j = 0; j < 3; ++j) {
        double h = step * std::max(1.0, std::abs(base[j]));
        vec3 lo{base[0], base[1], base[2]}, hi = lo;
        lo[j] -= h;
        hi[j] += h;
        vec3 a = u_transform(p, lo), b = u_transform(p, hi);
        for (int i = 0; i < 3; ++i) m(i, j) = (b[i] - a[i]) / (2.0 * h);
    }
    return m.determinant();
}

} // namespace fdcheck

struct suite_result {
    std::string name;
    long long samples = 0;
    double worst = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

inline int cmd_kinematics_check(const common_flags& fl) {
    flat_config cfg = layer_config(fl, "kinematics-check");
    cfg.require_keys_among({"subcommand", "seed", "deterministic", "workers", "samples",
                            "jacobian_samples", "tolerance", "s_tolerance",
                            "jacobian_gs_tolerance", "jacobian_u_tolerance"});
    run_setup rs = begin_run(cfg, fl);
    long long samples = cfg.get_int("samples", 1000000);
    long long jac_samples = cfg.get_int("jacobian_samples", 1000);
    double tol_rt = cfg.get_double("tolerance", 1e-12);
    double tol_s = cfg.get_double("s_tolerance", 1e-10);
    double tol_jgs = cfg.get_double("jacobian_gs_tolerance", 1e-5);
    double tol_ju = cfg.get_double("jacobian_u_tolerance", 1e-6);
    if (samples < 1) throw config_error("samples must be positive");
    if (jac_samples < 1) throw config_error("jacobian_samples must be positive");
    for (double t : {tol_rt, tol_s, tol_jgs, tol_ju})
        if (!(t > 0.0) || !std::isfinite(t)) throw config_error("tolerances must be positive");

    flat_config res;
    stamp_common(res, "kinematics-check", rs);
    res.set("samples", std::to_string(samples));
    res.set("jacobian_samples", std::to_string(jac_samples));
    res.set("tolerance", format_double(tol_rt));
    res.set("s_tolerance", format_double(tol_s));
    res.set("jacobian_gs_tolerance", format_double(tol_jgs));
    res.set("jacobian_u_tolerance", format_double(tol_ju));
    write_manifest((rs.out / "kinematics-check-manifest.txt").string(), res);

    std::uint64_t seed = rs.seed;
    std::vector<suite_result> checks;

    // u round trip: recover q from u(p, q) across a wide momentum range.
    double worst_rt = block_max(samples, rs.workers, [&](long long i) {
        std::uint64_t base = static_cast<std::uint64_t>(i) * 16;
        vec3 p = detail::sample_log_uniform(seed, 0x90, base, 1e-3, 1e2);
        vec3 q = detail::sample_log_uniform(seed, 0x90, base + 3, 1e-3, 1e2);
        vec3 rec = u_inverse(p, u_transform(p, q));
        return norm(rec - q) / std::max(1.0, norm(q));
    });
    checks.push_back({"u-round-trip", samples, worst_rt, tol_rt, worst_rt <= tol_rt});

    // Two expressions for s: the g identity and the Lorentz square of the
    // total four-momentum, both relative to s itself.
    double worst_s = block_max(samples, rs.workers, [&](long long i) {
        std::uint64_t base = static_cast<std::uint64_t>(i) * 16;
        vec3 p = detail::sample_log_uniform(seed, 0x90, base, 1e-3, 1e2);
        vec3 q = detail::sample_log_uniform(seed, 0x90, base + 3, 1e-3, 1e2);
        collision_invariants inv = invariants(p, q);
        double e = energy(p) + energy(q);
        double viag = inv.g * inv.g + 4.0;
        double vias4 = e * e - norm2(p + q);
        return std::max(std::abs(inv.s - viag), std::abs(inv.s - vias4)) / inv.s;
    });
    checks.push_back({"s-identities", samples, worst_s, tol_s, worst_s <= tol_s});

    // Post-collision conservation in both frames, and the closed-form CM
    // energies against direct evaluation.
    double worst_cons = 0.0, worst_en = 0.0;
    {
        std::vector<double> wc(256, 0.0), we(256, 0.0);
        long long n = samples;
        int nb = n < 256 ? static_cast<int>(n) : 256;
        parallel_for(0, nb, rs.workers, [&](std::int64_t b) {
            long long lo = n * b / nb, hi = n * (b + 1) / nb;
            double ac = 0.0, ae = 0.0;
            for (long long i = lo; i < hi; ++i) {
                std::uint64_t base = static_cast<std::uint64_t>(i) * 16;
                vec3 p = detail::sample_log_uniform(seed, 0x91, base, 1e-3, 1e2);
                vec3 q = detail::sample_log_uniform(seed, 0x91, base + 3, 1e-3, 1e2);
                vec3 omega = detail::sample_direction(seed, 0x91, base + 6);
                double e = energy(p) + energy(q);
                double wscale = std::max(1.0, norm(p + q));
                deflection_pair d = post_collision_gs(p, q, omega);
                cm_pair c = post_collision_cm(p, q, omega);
                ac = std::max(ac, norm(d.p_prime + d.q_prime - p - q) / wscale);
                ac = std::max(ac, norm(c.p_prime + c.q_prime - p - q) / wscale);
                ae = std::max(ae, std::abs(energy(d.p_prime) + energy(d.q_prime) - e) / e);
                ae = std::max(ae, std::abs(energy(c.p_prime) - c.e_p_prime) / e);
                ae = std::max(ae, std::abs(energy(c.q_prime) - c.e_q_prime) / e);
            }
            wc[static_cast<std::size_t>(b)] = ac;
            we[static_cast<std::size_t>(b)] = ae;
        });
        worst_cons = *std::max_element(wc.begin(), wc.end());
        worst_en = *std::max_element(we.begin(), we.end());
    }
    checks.push_back(
        {"momentum-conservation", samples, worst_cons, tol_rt, worst_cons <= tol_rt});
    checks.push_back({"energy-closure", samples, worst_en, tol_s, worst_en <= tol_s});

    // Jacobian identities against finite-difference determinants.
    double worst_jgs = block_max(jac_samples, rs.workers, [&](long long i) {
        std::uint64_t base = static_cast<std::uint64_t>(i) * 16;
        vec3 p = detail::sample_log_uniform(seed, 0x92, base, 1e-2, 1e1);
        vec3 q = detail::sample_log_uniform(seed, 0x92, base + 3, 1e-2, 1e1);
        vec3 omega = detail::sample_direction(seed, 0x92, base + 6);
        double analytic = jacobian_gs(p, q, omega);
        double fd = fdcheck::det_particle_map(p, q, omega, 1e-5);
        return std::abs(fd - analytic) / std::abs(analytic);
    });
    checks.push_back({"jacobian-particle-map", jac_samples, worst_jgs, tol_jgs,
                      worst_jgs <= tol_jgs});

    double worst_ju = block_max(jac_samples, rs.workers, [&](long long i) {
        std::uint64_t base = static_cast<std::uint64_t>(i) * 16;
        vec3 p = detail::sample_log_uniform(seed, 0x93, base, 1e-2, 1e1);
        vec3 q = detail::sample_log_uniform(seed, 0x93, base + 3, 1e-2, 1e1);
        double analytic = jacobian_u(p, q);
        double fd = fdcheck::det_u_map(p, q, 1e-5);
        return std::abs(fd - analytic) / std::abs(analytic);
    });
    checks.push_back({"jacobian-u-map", jac_samples, worst_ju, tol_ju, worst_ju <= tol_ju});

    bool all = true;
    nlohmann::ordered_json jchecks = nlohmann::ordered_json::array();
    for (const suite_result& r : checks) {
        all = all && r.pass;
        jchecks.push_back({{"name", r.name},
                           {"samples", r.samples},
                           {"worst", r.worst},
                           {"tolerance", r.tolerance},
                           {"pass", r.pass}});
        std::printf("[kinematics-check] %-22s worst %.3e tol %.1e %s\n", r.name.c_str(), r.worst,
                    r.tolerance, r.pass ? "pass" : "FAIL");
    }
    nlohmann::ordered_json j;
    j["subcommand"] = "kinematics-check";
    j["checks"] = jchecks;
    j["pass"] = all;
    write_json(rs.out / "kinematics-check.json", j);
    return all ? 0 : 1;
}

// -------------------------------------------------------------------------
// nu-table
// -------------------------------------------------------------------------

inline int cmd_nu_table(const common_flags& fl) {
    flat_config cfg = layer_config(fl, "nu-table");
    cfg.require_keys_among({"subcommand", "seed", "deterministic", "workers", "p_min", "p_max",
                            "points", "radial_points", "mu_points", "cutoff", "rtol", "atol"});
    run_setup rs = begin_run(cfg, fl);
    double p_min = cfg.get_double("p_min", 0.0);
    double p_max = cfg.get_double("p_max", 20.0);
    long long points = cfg.get_int("points", 41);
    long long radial_points = cfg.get_int("radial_points", 20);
    long long mu_points = cfg.get_int("mu_points", 48);
    double cutoff = cfg.get_double("cutoff", 30.0);
    double rtol = cfg.get_double("rtol", 1e-6);
    double atol = cfg.get_double("atol", 1e-12);
    if (points < 1) throw config_error("points must be positive (the |p| grid is empty)");
    if (p_min < 0.0 || p_max < p_min) throw config_error("need 0 <= p_min <= p_max");
    if (points > 1 && p_max == p_min)
        throw config_error("p_min = p_max admits only a single-point grid");
    if (radial_points < 2 || mu_points < 2)
        throw config_error("radial_points and mu_points must be at least 2");
    if (cutoff <= 1.0) throw config_error("cutoff must exceed 1");
    if (!(rtol > 0.0) || atol < 0.0) throw config_error("need rtol > 0 and atol >= 0");

    flat_config res;
    stamp_common(res, "nu-table", rs);
    res.set("p_min", format_double(p_min));
    res.set("p_max", format_double(p_max));
    res.set("points", std::to_string(points));
    res.set("radial_points", std::to_string(radial_points));
    res.set("mu_points", std::to_string(mu_points));
    res.set("cutoff", format_double(cutoff));
    res.set("rtol", format_double(rtol));
    res.set("atol", format_double(atol));
    write_manifest((rs.out / "nu-table-manifest.txt").string(), res);

    std::vector<double> grid(static_cast<std::size_t>(points));
    for (long long i = 0; i < points; ++i)
        grid[static_cast<std::size_t>(i)] =
            points == 1 ? p_min : p_min + (p_max - p_min) * static_cast<double>(i) /
                                              static_cast<double>(points - 1);

    std::vector<double> value(grid.size()), estimate(grid.size());
    parallel_for(0, static_cast<std::int64_t>(grid.size()), rs.workers, [&](std::int64_t i) {
        auto u = static_cast<std::size_t>(i);
        double coarse = nu_radial(grid[u], static_cast<int>(radial_points),
                                  static_cast<int>(mu_points), cutoff);
        double fine = nu_radial(grid[u], static_cast<int>(2 * radial_points),
                                static_cast<int>(2 * mu_points), cutoff + 6.0);
        value[u] = fine;
        estimate[u] = std::abs(fine - coarse);
    });

    csv_writer csv((rs.out / "nu-table.csv").string());
    csv.row({"absP", "nu", "errorEstimate"});
    for (std::size_t i = 0; i < grid.size(); ++i)
        csv.row({format_double(grid[i]), format_double(value[i]), format_double(estimate[i])});

    std::size_t worst = 0;
    bool converged = true;
    double worst_ratio = 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        double allowed = std::max(atol, rtol * std::abs(value[i]));
        double ratio = estimate[i] / allowed;
        if (!(value[i] > 0.0) || !std::isfinite(value[i]) || ratio > 1.0) converged = false;
        if (ratio > worst_ratio) {
            worst_ratio = ratio;
            worst = i;
        }
    }
    std::printf("[nu-table] %zu points on [%g, %g], worst estimate %.3e at |p| = %g\n",
                grid.size(), p_min, p_max, estimate[worst], grid[worst]);
    if (!converged) {
        nlohmann::ordered_json j;
        j["subcommand"] = "nu-table";
        j["error"] = "non-convergence";
        j["absP"] = grid[worst];
        j["nu"] = value[worst];
        j["errorEstimate"] = estimate[worst];
        j["allowed"] = std::max(atol, rtol * std::abs(value[worst]));
        write_json(rs.out / "nu-table-error.json", j);
        std::fprintf(stderr, "[nu-table] non-convergence at |p| = %.17g: estimate %.3e\n",
                     grid[worst], estimate[worst]);
        return 3;
    }
    return 0;
}

// -------------------------------------------------------------------------
// spectral-gap
// -------------------------------------------------------------------------

inline int cmd_spectral_gap(const common_flags& fl) {
    flat_config cfg = layer_config(fl, "spectral-gap");
    cfg.require_keys_among({"subcommand", "seed", "deterministic", "workers", "nodes_per_axis",
                            "pmax", "sphere_order", "e_cut", "gate_radius", "deposit",
                            "null_tolerance", "symmetry_tolerance"});
    run_setup rs = begin_run(cfg, fl);
    long long n = cfg.get_int("nodes_per_axis", 9);
    double pmax = cfg.get_double("pmax", 5.0);
    long long sphere_order = cfg.get_int("sphere_order", 7);
    double e_cut = cfg.get_double("e_cut", 18.0);
    double gate_radius = cfg.get_double("gate_radius", 4.4);
    std::string deposit = cfg.get_string("deposit", "moment-matched");
    double null_tol = cfg.get_double("null_tolerance", 1e-6);
    double sym_tol = cfg.get_double("symmetry_tolerance", 1e-8);
    if (n < 2 || n > 16) throw config_error("nodes_per_axis must lie in [2, 16]");
    if (sphere_order < 1) throw config_error("sphere_order must be positive");
    if (!(null_tol > 0.0) || !(sym_tol > 0.0))
        throw config_error("tolerances must be positive");

    assemble_options opts;
    opts.sphere_order = static_cast<int>(sphere_order);
    opts.e_cut = e_cut;
    opts.mode = deposit_mode_from(deposit);
    opts.gate_radius = gate_radius;

    flat_config res;
    stamp_common(res, "spectral-gap", rs);
    res.set("nodes_per_axis", std::to_string(n));
    res.set("pmax", format_double(pmax));
    res.set("sphere_order", std::to_string(sphere_order));
    res.set("e_cut", format_double(e_cut));
    res.set("gate_radius", format_double(gate_radius));
    res.set("deposit", deposit);
    res.set("null_tolerance", format_double(null_tol));
    res.set("symmetry_tolerance", format_double(sym_tol));
    write_manifest((rs.out / "spectral-gap-manifest.txt").string(), res);

    momentum_grid grid = momentum_grid::make(static_cast<int>(n), pmax);
    spectral_operator op = assemble_l(grid, opts);
    spectrum_result sp = spectrum(op, false);

    double lambda_max = sp.eigenvalues(sp.eigenvalues.size() - 1);
    long long nulls = 0;
    while (nulls < sp.eigenvalues.size() && sp.eigenvalues(nulls) < null_tol * lambda_max)
        ++nulls;
    double delta0 = nulls < sp.eigenvalues.size() ? sp.eigenvalues(nulls) : 0.0;

    csv_writer csv((rs.out / "spectral-gap.csv").string());
    csv.row({"index", "eigenvalue"});
    for (Eigen::Index i = 0; i < sp.eigenvalues.size(); ++i)
        csv.row({std::to_string(i), format_double(sp.eigenvalues(i))});

    bool pass = nulls == 6 && delta0 > 0.0 && op.asymmetry_rel <= sym_tol;
    nlohmann::ordered_json j;
    j["subcommand"] = "spectral-gap";
    j["active_nodes"] = op.active.size();
    j["matrix_dim"] = op.matrix.rows();
    j["asymmetry_rel"] = op.asymmetry_rel;
    j["lambda_max"] = lambda_max;
    j["null_count"] = nulls;
    nlohmann::ordered_json nj = nlohmann::ordered_json::array();
    for (long long i = 0; i < std::min<long long>(nulls, 8); ++i)
        nj.push_back(sp.eigenvalues(i));
    j["null_eigenvalues"] = nj;
    j["delta0"] = delta0;
    j["pass"] = pass;
    write_json(rs.out / "spectral-gap.json", j);
    std::printf("[spectral-gap] %lld null modes, delta0 %.6f, lambda_max %.4f (%s)\n", nulls,
                delta0, lambda_max, pass ? "pass" : "FAIL");
    return pass ? 0 : 1;
}

// -------------------------------------------------------------------------
// bounds-audit
// -------------------------------------------------------------------------

inline int cmd_bounds_audit(const common_flags& fl) {
    flat_config cfg = layer_config(fl, "bounds-audit");
    cfg.require_keys_among({"subcommand", "seed", "deterministic", "workers", "samples", "p_min",
                            "p_max", "cutoff_m", "ell"});
    run_setup rs = begin_run(cfg, fl);
    audit_options opt;
    opt.samples = cfg.get_int("samples", 100000);
    opt.seed = rs.seed;
    opt.p_min = cfg.get_double("p_min", 1.0);
    opt.p_max = cfg.get_double("p_max", 1000.0);
    opt.cutoff_m = static_cast<int>(cfg.get_int("cutoff_m", 4));
    opt.ell = cfg.get_double("ell", 7.0);
    if (opt.samples < 1) throw config_error("samples must be positive");
    if (!(opt.p_min > 0.0) || opt.p_max <= opt.p_min)
        throw config_error("need 0 < p_min < p_max");
    if (opt.cutoff_m < 1) throw config_error("cutoff_m must be positive");

    flat_config res;
    stamp_common(res, "bounds-audit", rs);
    res.set("samples", std::to_string(opt.samples));
    res.set("p_min", format_double(opt.p_min));
    res.set("p_max", format_double(opt.p_max));
    res.set("cutoff_m", std::to_string(opt.cutoff_m));
    res.set("ell", format_double(opt.ell));
    write_manifest((rs.out / "bounds-audit-manifest.txt").string(), res);

    std::vector<audit_report> reports = run_all_audits(opt);
    write_text((rs.out / "bounds-audit.json").string(), audit_reports_json(reports));

    bool pass = true;
    for (const audit_report& r : reports) {
        bool ok = r.violations == 0 && std::isfinite(r.fitted_constant);
        pass = pass && ok;
        std::printf("[bounds-audit] %-34s %8lld samples, %lld violations, c %.3e %s\n",
                    r.name.c_str(), r.samples, r.violations, r.fitted_constant,
                    ok ? "pass" : "FAIL");
    }
    return pass ? 0 : 1;
}

// -------------------------------------------------------------------------
// relax
// -------------------------------------------------------------------------

inline int cmd_relax(const common_flags& fl) {
    flat_config cfg = layer_config(fl, "relax");
    cfg.require_keys_among({"subcommand", "seed", "deterministic", "workers", "profile", "nodes",
                            "rmax", "t_hot", "t_cold", "dt", "steps", "entropy_slack"});
    run_setup rs = begin_run(cfg, fl);
    std::string profile = cfg.get_string("profile", "two-maxwellian");
    if (profile != "two-maxwellian")
        throw config_error("relax: unknown profile '" + profile + "'");
    relax_options opt;
    opt.nodes = static_cast<int>(cfg.get_int("nodes", opt.nodes));
    opt.rmax = cfg.get_double("rmax", opt.rmax);
    opt.t_hot = cfg.get_double("t_hot", opt.t_hot);
    opt.t_cold = cfg.get_double("t_cold", opt.t_cold);
    opt.dt = cfg.get_double("dt", opt.dt);
    opt.steps = static_cast<int>(cfg.get_int("steps", opt.steps));
    double slack = cfg.get_double("entropy_slack", 1e-10);
    opt.validate();
    if (slack < 0.0) throw config_error("entropy_slack must be nonnegative");

    flat_config res;
    stamp_common(res, "relax", rs);
    res.set("profile", profile);
    res.set("nodes", std::to_string(opt.nodes));
    res.set("rmax", format_double(opt.rmax));
    res.set("t_hot", format_double(opt.t_hot));
    res.set("t_cold", format_double(opt.t_cold));
    res.set("dt", format_double(opt.dt));
    res.set("steps", std::to_string(opt.steps));
    res.set("entropy_slack", format_double(slack));
    write_manifest((rs.out / "relax-manifest.txt").string(), res);

    relaxation rx(opt);
    csv_writer csv((rs.out / "relax.csv").string());
    csv.row({"time", "mass", "energy", "entropy", "negative"});
    auto emit = [&](const relax_record& d) {
        csv.row({format_double(d.time), format_double(d.mass), format_double(d.energy),
                 format_double(d.entropy), std::to_string(d.negative)});
    };
    relax_record first = rx.diagnostics();
    emit(first);
    relax_record prev = first, last = first;
    double min_dh = 0.0;
    long long worst_negative = first.negative;
    for (int k = 0; k < opt.steps; ++k) {
        rx.step();
        last = rx.diagnostics();
        emit(last);
        min_dh = std::min(min_dh, last.entropy - prev.entropy);
        worst_negative = std::max(worst_negative, last.negative);
        prev = last;
    }
    bool pass = min_dh >= -slack;
    nlohmann::ordered_json j;
    j["subcommand"] = "relax";
    j["steps"] = opt.steps;
    j["entropy_initial"] = first.entropy;
    j["entropy_final"] = last.entropy;
    j["min_entropy_increment"] = min_dh;
    j["mass_drift"] = std::abs(last.mass - first.mass);
    j["energy_drift"] = std::abs(last.energy - first.energy);
    j["max_negative_cells"] = worst_negative;
    j["pass"] = pass;
    write_json(rs.out / "relax.json", j);
    std::printf("[relax] %d steps, entropy %.9f -> %.9f, min increment %.3e (%s)\n", opt.steps,
                first.entropy, last.entropy, min_dh, pass ? "pass" : "FAIL");
    return pass ? 0 : 1;
}

// -------------------------------------------------------------------------
// vmb-run
// -------------------------------------------------------------------------

inline std::vector<std::string> diagnostics_row(const diagnostics_record& d) {
    return {format_double(d.time),
            format_double(d.mass_plus),
            format_double(d.mass_minus),
            format_double(d.momentum.x),
            format_double(d.momentum.y),
            format_double(d.momentum.z),
            format_double(d.energy),
            format_double(d.entropy),
            format_double(d.gauss_residual),
            format_double(d.divb_residual),
            format_double(d.energy_functional),
            format_double(d.dissipation),
            format_double(d.ma_plus),
            format_double(d.ma_minus),
            format_double(d.mo_residual.x),
            format_double(d.mo_residual.y),
            format_double(d.mo_residual.z),
            format_double(d.en_residual),
            format_double(d.f_l2),
            std::to_string(d.negative_f)};
}

inline int cmd_vmb_run(const common_flags& fl) {
    flat_config cfg = layer_config(fl, "vmb-run");
    cfg.require_keys_among(
        {"subcommand",   "seed",          "deterministic",           "workers",
         "nx",           "np",            "pmax",                    "dt",
         "cfl_safety",   "steps",         "profile",                 "amplitude",
         "b_amplitude",  "bbar_x",        "bbar_y",                  "bbar_z",
         "collision",    "sphere_order",  "e_cut",                   "conservative_projection",
         "shift_conservation",            "microscopic",             "skip_zero_blocks",
         "gamma_samples", "ell",          "n_energy",                "record_every",
         "snapshots",    "steady_tol",    "divb_tol"});
    run_setup rs = begin_run(cfg, fl);
    sim_options opt;
    opt.nx = static_cast<int>(cfg.get_int("nx", opt.nx));
    opt.np = static_cast<int>(cfg.get_int("np", opt.np));
    opt.pmax = cfg.get_double("pmax", opt.pmax);
    opt.dt = cfg.get_double("dt", opt.dt);
    opt.cfl_safety = cfg.get_double("cfl_safety", opt.cfl_safety);
    opt.steps = static_cast<int>(cfg.get_int("steps", opt.steps));
    opt.profile = cfg.get_string("profile", opt.profile);
    opt.amplitude = cfg.get_double("amplitude", opt.amplitude);
    opt.b_amplitude = cfg.get_double("b_amplitude", opt.b_amplitude);
    opt.bbar = {cfg.get_double("bbar_x", 0.0), cfg.get_double("bbar_y", 0.0),
                cfg.get_double("bbar_z", 0.0)};
    opt.collision = collision_mode_from(cfg.get_string("collision", "linear"));
    opt.sphere_order = static_cast<int>(cfg.get_int("sphere_order", opt.sphere_order));
    opt.e_cut = cfg.get_double("e_cut", opt.e_cut);
    opt.conservative_projection = cfg.get_bool("conservative_projection", false);
    opt.shift_conservation = cfg.get_bool("shift_conservation", true);
    opt.microscopic = cfg.get_bool("microscopic", false);
    opt.skip_zero_blocks = cfg.get_bool("skip_zero_blocks", true);
    opt.gamma_samples = cfg.get_int("gamma_samples", opt.gamma_samples);
    opt.ell = cfg.get_double("ell", opt.ell);
    opt.n_energy = static_cast<int>(cfg.get_int("n_energy", opt.n_energy));
    opt.seed = rs.seed;
    long long record_every = cfg.get_int("record_every", 1);
    bool snapshots = cfg.get_bool("snapshots", false);
    double steady_tol = cfg.get_double("steady_tol", 1e-12);
    double divb_tol = cfg.get_double("divb_tol", 1e-10);
    if (record_every < 1) throw config_error("record_every must be positive");
    opt.validate();

    flat_config res;
    stamp_common(res, "vmb-run", rs);
    res.set("nx", std::to_string(opt.nx));
    res.set("np", std::to_string(opt.np));
    res.set("pmax", format_double(opt.pmax));
    res.set("dt", format_double(opt.dt));
    res.set("cfl_safety", format_double(opt.cfl_safety));
    res.set("steps", std::to_string(opt.steps));
    res.set("profile", opt.profile);
    res.set("amplitude", format_double(opt.amplitude));
    res.set("b_amplitude", format_double(opt.b_amplitude));
    res.set("bbar_x", format_double(opt.bbar.x));
    res.set("bbar_y", format_double(opt.bbar.y));
    res.set("bbar_z", format_double(opt.bbar.z));
    res.set("collision", cfg.get_string("collision", "linear"));
    res.set("sphere_order", std::to_string(opt.sphere_order));
    res.set("e_cut", format_double(opt.e_cut));
    res.set("conservative_projection", opt.conservative_projection ? "true" : "false");
    res.set("shift_conservation", opt.shift_conservation ? "true" : "false");
    res.set("microscopic", opt.microscopic ? "true" : "false");
    res.set("skip_zero_blocks", opt.skip_zero_blocks ? "true" : "false");
    res.set("gamma_samples", std::to_string(opt.gamma_samples));
    res.set("ell", format_double(opt.ell));
    res.set("n_energy", std::to_string(opt.n_energy));
    res.set("record_every", std::to_string(record_every));
    res.set("snapshots", snapshots ? "true" : "false");
    res.set("steady_tol", format_double(steady_tol));
    res.set("divb_tol", format_double(divb_tol));
    write_manifest((rs.out / "vmb-run-manifest.txt").string(), res);

    simulator sim(opt);
    csv_writer csv((rs.out / "vmb-run.csv").string());
    csv.row({"time",          "mass_plus",     "mass_minus",    "momentum_x",
             "momentum_y",    "momentum_z",    "energy",        "entropy",
             "gauss_residual", "divb_residual", "energy_functional", "dissipation",
             "ma_plus",       "ma_minus",      "mo_residual_x", "mo_residual_y",
             "mo_residual_z", "en_residual",   "f_l2",          "negative_f"});

    double max_gauss = 0.0, max_divb = 0.0, max_pert = 0.0;
    double en_initial = 0.0, en_max = 0.0;
    diagnostics_record last;
    auto record = [&](const diagnostics_record& d, bool first) {
        csv.row(diagnostics_row(d));
        max_gauss = std::max(max_gauss, d.gauss_residual);
        max_divb = std::max(max_divb, d.divb_residual);
        double pert = std::max({d.ma_plus, d.ma_minus, std::abs(d.mo_residual.x),
                                std::abs(d.mo_residual.y), std::abs(d.mo_residual.z),
                                d.en_residual, d.f_l2, d.gauss_residual});
        max_pert = std::max(max_pert, pert);
        if (first) en_initial = d.energy_functional;
        en_max = std::max(en_max, d.energy_functional);
        last = d;
    };
    record(sim.diagnostics(), true);
    for (int k = 1; k <= opt.steps; ++k) {
        sim.step();
        if (k % record_every == 0 || k == opt.steps) record(sim.diagnostics(), false);
    }

    if (snapshots) {
        const distribution_state& st = sim.state();
        std::uint64_t nnodes = static_cast<std::uint64_t>(sim.grid().size());
        std::uint64_t ncells = static_cast<std::uint64_t>(st.f_plus.size()) / nnodes;
        std::vector<double> both = st.f_plus;
        both.insert(both.end(), st.f_minus.begin(), st.f_minus.end());
        write_snapshot((rs.out / "state-final.rvmb").string(), {2, nnodes, ncells}, both);
        const em_field& em = sim.fields();
        std::vector<double> fields;
        fields.reserve(6 * em.e.size());
        for (const vec3& v : em.e) {
            fields.push_back(v.x);
            fields.push_back(v.y);
            fields.push_back(v.z);
        }
        for (const vec3& v : em.b) {
            fields.push_back(v.x);
            fields.push_back(v.y);
            fields.push_back(v.z);
        }
        write_snapshot((rs.out / "fields-final.rvmb").string(),
                       {2, static_cast<std::uint64_t>(em.e.size()), 3}, fields);
    }

    bool pass = max_divb <= divb_tol;
    if (opt.profile == "steady") pass = pass && max_pert <= steady_tol;
    nlohmann::ordered_json j;
    j["subcommand"] = "vmb-run";
    j["steps"] = opt.steps;
    j["dt"] = sim.dt();
    j["final_time"] = last.time;
    j["max_gauss_residual"] = max_gauss;
    j["max_divb_residual"] = max_divb;
    j["max_perturbation_residual"] = max_pert;
    j["energy_functional_initial"] = en_initial;
    j["energy_functional_max"] = en_max;
    j["energy_functional_final"] = last.energy_functional;
    j["f_l2_final"] = last.f_l2;
    j["negative_f_final"] = last.negative_f;
    j["pass"] = pass;
    write_json(rs.out / "vmb-run.json", j);
    std::printf("[vmb-run] %s, %d steps, dt %.4g: pert %.3e, div B %.3e, E_N %.6e -> %.6e (%s)\n",
                opt.profile.c_str(), opt.steps, sim.dt(), max_pert, max_divb, en_initial,
                last.energy_functional, pass ? "pass" : "FAIL");
    return pass ? 0 : 1;
}

} // namespace cli

/// Entry point shared by the binary and the tests.
inline int run_cli(int argc, const char* const* argv) {
    CLI::App app{"relativistic two-species Vlasov-Maxwell-Boltzmann toolkit"};
    app.require_subcommand(1);

    cli::common_flags fl;
    struct wiring {
        CLI::App* sub = nullptr;
        CLI::Option* seed = nullptr;
        CLI::Option* workers = nullptr;
        CLI::Option* samples = nullptr;
        int (*run)(const cli::common_flags&) = nullptr;
    };
    std::vector<wiring> subs;
    auto add = [&](const char* name, const char* help, int (*run)(const cli::common_flags&),
                   bool with_samples) {
        wiring w;
        w.sub = app.add_subcommand(name, help);
        w.run = run;
        w.sub->add_option("--config", fl.config_path, "flat key = value config file");
        w.sub->add_option("--out", fl.out_dir, "output directory (default: current)");
        w.seed = w.sub->add_option("--seed", fl.seed, "RNG seed");
        w.sub->add_flag("--deterministic", fl.deterministic,
                        "canonical reduction order (pins workers to 1)");
        w.workers = w.sub->add_option("--workers", fl.workers, "worker thread cap");
        w.sub->add_option("--set", fl.overrides, "override a config key (key=value)");
        if (with_samples)
            w.samples = w.sub->add_option("--samples", fl.samples, "sample count");
        subs.push_back(w);
    };
    add("kinematics-check", "collision kinematics property suites",
        cli::cmd_kinematics_check, true);
    add("nu-table", "tabulate the collision frequency to CSV", cli::cmd_nu_table, false);
    add("spectral-gap", "assemble L and report its low spectrum", cli::cmd_spectral_gap, false);
    add("bounds-audit", "randomized kernel and growth bound audits", cli::cmd_bounds_audit,
        true);
    add("relax", "homogeneous two-Maxwellian relaxation", cli::cmd_relax, false);
    add("vmb-run", "full perturbed Vlasov-Maxwell-Boltzmann run", cli::cmd_vmb_run, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    const wiring* fired = nullptr;
    for (const wiring& w : subs)
        if (app.got_subcommand(w.sub)) fired = &w;
    if (fired == nullptr) return 2;
    fl.seed_given = fired->seed->count() > 0;
    fl.workers_given = fired->workers->count() > 0;
    fl.samples_given = fired->samples != nullptr && fired->samples->count() > 0;
    std::string name = fired->sub->get_name();

    try {
        return fired->run(fl);
    } catch (const config_error& e) {
        cli::emit_error(fl, name, "config-error", e.what());
        return 2;
    } catch (const convergence_error& e) {
        cli::emit_error(fl, name, "non-convergence", e.what());
        return 3;
    } catch (const numerical_error& e) {
        cli::emit_error(fl, name, "numerical-error", e.what());
        return 3;
    }
}

} // namespace rvmb
