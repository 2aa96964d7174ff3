// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <functional>
#include <vector>

#include "rvmb/kinematics.hpp"
#include "rvmb/quadrature.hpp"
#include "rvmb/relax.hpp"
#include "rvmb/rng.hpp"

using namespace rvmb;

namespace {

// Direct evaluation of the isotropic operator in the original variables
// (r_q, cos a, mu), with the same symmetric energy-hull gate the grid uses.
double q_direct(const std::function<double(double)>& f, double rp, double emax) {
    gauss_rule grq = gauss_legendre(200, 0.0, std::sqrt(emax * emax - 1.0));
    gauss_rule gca = gauss_legendre(40);
    gauss_rule gmu = gauss_legendre(40);
    double p0 = std::sqrt(1.0 + rp * rp);
    double acc = 0.0;
    for (int i = 0; i < 200; ++i) {
        double rq = grq.x[i];
        double q0 = std::sqrt(1.0 + rq * rq);
        double floss = f(rp) * f(rq);
        for (int a = 0; a < 40; ++a) {
            double ca = gca.x[a];
            double pq = rp * rq * ca;
            double g2 = std::max(0.0, 2.0 * (p0 * q0 - pq - 1.0));
            double s = g2 + 4.0;
            double vmol = 0.5 * std::sqrt(g2 * s) / (p0 * q0);
            for (int u = 0; u < 40; ++u) {
                auto [ra, rb] = radial_post(rp, rq, ca, gmu.x[u]);
                double ea = std::sqrt(1.0 + ra * ra), eb = std::sqrt(1.0 + rb * rb);
                if (ea > emax || eb > emax) continue;
                acc += grq.w[i] * gca.w[a] * gmu.w[u] * rq * rq * vmol *
                       (f(ra) * f(rb) - floss);
            }
        }
    }
    return 4.0 * pi * pi * acc;
}

} // namespace

TEST_CASE("relax options validate") {
    relax_options o;
    CHECK_NOTHROW(o.validate());
    relax_options bad = o;
    bad.nodes = 7;
    CHECK_THROWS_AS(bad.validate(), config_error);
    bad = o;
    bad.rmax = 1.0;
    CHECK_THROWS_AS(bad.validate(), config_error);
    bad = o;
    bad.t_cold = 0.0;
    CHECK_THROWS_AS(bad.validate(), config_error);
    bad = o;
    bad.dt = -0.1;
    CHECK_THROWS_AS(bad.validate(), config_error);
    bad = o;
    bad.steps = -1;
    CHECK_THROWS_AS(bad.validate(), config_error);
}

TEST_CASE("radial post-collision magnitudes match the full map") {
    double worst = 0.0;
    for (int k = 0; k < 2000; ++k) {
        double rp = 0.05 + 12.0 * rng_uniform(11, 1, 4 * k);
        double rq = 0.05 + 12.0 * rng_uniform(11, 1, 4 * k + 1);
        double ca = 2.0 * rng_uniform(11, 1, 4 * k + 2) - 1.0;
        double ph = 2.0 * pi * rng_uniform(11, 1, 4 * k + 3);
        double cz = 2.0 * rng_uniform(11, 2, k) - 1.0;
        double sz = std::sqrt(std::max(0.0, 1.0 - cz * cz));
        vec3 p{0.0, 0.0, rp};
        vec3 q{rq * std::sqrt(std::max(0.0, 1.0 - ca * ca)), 0.0, rq * ca};
        vec3 omega{sz * std::cos(ph), sz * std::sin(ph), cz};
        vec3 w = p + q;
        if (norm(w) < 1e-12) continue;
        cm_pair post = post_collision_cm(p, q, omega);
        double mu = dot(w, omega) / norm(w);
        auto [ra, rb] = radial_post(rp, rq, ca, mu);
        worst = std::max(worst, std::abs(norm(post.p_prime) - ra));
        worst = std::max(worst, std::abs(norm(post.q_prime) - rb));
    }
    CHECK(worst < 1e-10);
}

TEST_CASE("energy-grid operator agrees with direct quadrature") {
    relax_options o;
    o.nodes = 96;
    o.rmax = 20.0;
    relaxation rx(o);
    auto mix = [](double r) {
        double e = std::sqrt(1.0 + r * r);
        return std::exp(-e) * (1.0 + 0.3 * std::exp(-(e - 2.0) * (e - 2.0)));
    };
    const auto& rr = rx.radii();
    int m = static_cast<int>(rr.size());
    std::vector<double> fgrid(m), qgrid;
    for (int j = 0; j < m; ++j) fgrid[j] = mix(rr[j]);
    rx.apply_q(fgrid, qgrid);
    double emax = std::sqrt(1.0 + o.rmax * o.rmax);
    double scale = 0.0;
    for (int j = 0; j < m; ++j) scale = std::max(scale, std::abs(qgrid[j]));
    double worst = 0.0;
    for (int idx : {5, 12, 24, 40}) {
        double qd = q_direct(mix, rr[idx], emax);
        double rel = std::abs(qgrid[idx] - qd) / scale;
        worst = std::max(worst, rel);
        std::printf("  r %.3f: grid %.6e direct %.6e (rel-to-scale %.2e)\n", rr[idx],
                    qgrid[idx], qd, rel);
    }
    CHECK(worst < 0.05);
}

TEST_CASE("relaxation run: conservation, positivity, entropy growth") {
    relax_options o;
    relaxation rx(o);

    // discrete equilibrium states are annihilated exactly
    const auto& e = rx.energies();
    int m = static_cast<int>(e.size());
    std::vector<double> j(m), qj;
    for (int k = 0; k < m; ++k) j[k] = std::exp(-e[k]) / (4.0 * pi);
    rx.apply_q(j, qj);
    double worst_eq = 0.0;
    for (int k = 0; k < m; ++k) worst_eq = std::max(worst_eq, std::abs(qj[k]));
    CHECK(worst_eq < 1e-14);

    relax_record d0 = rx.diagnostics();
    double prev = d0.entropy;
    double min_dh = 1e300, worst_mass = 0.0, worst_en = 0.0;
    long long negative = 0;
    for (int k = 0; k < 120; ++k) {
        rx.step();
        relax_record d = rx.diagnostics();
        min_dh = std::min(min_dh, d.entropy - prev);
        prev = d.entropy;
        worst_mass = std::max(worst_mass, std::abs(d.mass - d0.mass));
        worst_en = std::max(worst_en, std::abs(d.energy - d0.energy));
        negative += d.negative;
    }
    std::printf("  min dH %.3e  mass drift %.2e  energy drift %.2e\n", min_dh, worst_mass,
                worst_en);
    CHECK(min_dh > -1e-12);
    CHECK(worst_mass < 1e-12);
    CHECK(worst_en < 1e-12);
    CHECK(negative == 0);
}
