// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>

#include "rvmb/collision.hpp"
#include "rvmb/rng.hpp"

using namespace rvmb;

namespace {

// loss-term magnitude F(p) * sum w kern G(q) on the same sweep the operator uses
template <class F, class G>
double loss_cm(F&& f, G&& g, vec3 p, const collision_rule& rule) {
    double fp = f(p);
    double acc = 0.0;
    detail::sweep_cm(p, rule, [&](vec3 q, double wq, vec3, vec3, double, double, double kw) {
        acc += wq * kw * g(q);
    });
    return std::abs(fp) * acc;
}

double gaussian_mix(vec3 p) {
    vec3 sh{0.3, -0.2, 0.4};
    return std::exp(-0.55 * norm2(p - sh)) + 0.4 * std::exp(-0.9 * norm2(p + sh));
}

} // namespace

TEST_CASE("collision frequency: closed form at p = 0 and frozen table") {
    // nu(0) = 8 pi int r^3/q0 e^{-q0} dr = 32 pi / e  (substitute e = q0)
    double nu0 = nu_radial(0.0);
    CHECK(std::abs(nu0 - 32.0 * pi / std::exp(1.0)) < 1e-8 * nu0);

    // regression anchors at the default rule
    CHECK(std::abs(nu_radial(2.0) - 39.87312246) < 1e-6);
    CHECK(std::abs(nu_radial(10.0) - 40.78451619) < 1e-6);
    CHECK(std::abs(nu_radial(20.0) - 40.82347704) < 1e-6);

    double prev = 0.0;
    for (double r : {0.0, 1.0, 2.0, 5.0, 10.0, 20.0}) {
        double v = nu_radial(r);
        CHECK(v > prev); // increasing toward the ultrarelativistic plateau
        prev = v;
    }
    vec3 p{0.6, -1.2, 0.9};
    CHECK(nu(p) == nu_radial(norm(p)));
}

TEST_CASE("collision frequency: deflection-frame quadrature agrees with the radial form") {
    collision_rule rule = collision_rule_default(1);
    for (vec3 p : {vec3{0.0, 0.0, 0.0}, vec3{0.3, -0.4, 1.2}, vec3{0.0, 0.0, 3.0}}) {
        double a = nu_direct(p, rule);
        double b = nu_radial(norm(p), 40, 96, 30.0);
        CHECK(std::abs(a - b) < 2e-3 * b); // cutoff 12 truncation dominates
    }
}

TEST_CASE("equilibrium is annihilated against the loss magnitude") {
    collision_rule rule = collision_rule_default(0);
    auto J = [](vec3 p) { return juttner(p); };
    rng_stream rs(2026, 30);
    for (int k = 0; k < 5; ++k) {
        double c = 2.0 * rs.uniform() - 1.0;
        double sphi = std::sqrt(std::max(0.0, 1.0 - c * c));
        double phi = 2.0 * pi * rs.uniform();
        vec3 p = (0.2 + 7.8 * rs.uniform()) * vec3{sphi * std::cos(phi), sphi * std::sin(phi), c};
        double q_cm = q_collide_cm(J, J, p, rule);
        double q_gs = q_collide_gs(J, J, p, rule);
        double loss = loss_cm(J, J, p, rule);
        CHECK(std::abs(q_cm) < 1e-3 * loss);
        CHECK(std::abs(q_gs) < 1e-3 * loss);
    }
}

TEST_CASE("frame equivalence of the bilinear operator on a Gaussian mix") {
    collision_rule rule = collision_rule_default(1);
    rng_stream rs(2026, 31);
    for (int k = 0; k < 3; ++k) {
        double c = 2.0 * rs.uniform() - 1.0;
        double sphi = std::sqrt(std::max(0.0, 1.0 - c * c));
        double phi = 2.0 * pi * rs.uniform();
        vec3 p = (0.3 + 4.0 * rs.uniform()) * vec3{sphi * std::cos(phi), sphi * std::sin(phi), c};
        double a = q_collide_gs(gaussian_mix, gaussian_mix, p, rule);
        double b = q_collide_cm(gaussian_mix, gaussian_mix, p, rule);
        double scale = std::max(std::abs(b), loss_cm(gaussian_mix, gaussian_mix, p, rule));
        CHECK(std::abs(a - b) < 1e-3 * scale);
    }
}

TEST_CASE("linearized operator annihilates the six conserved modes pointwise") {
    // With the closed-form post-collision energies, sqrtJ(q) sqrtJ(p'') sqrtJ(q'')
    // factors cancel against sqrtJ(p) sqrtJ(q)^2 node by node, so each mode dies
    // at rounding level, not at quadrature level.
    collision_rule rule = collision_rule_default(0);
    auto mode = [](int which) {
        two_species_fn h;
        auto base = [which](vec3 p) {
            switch (which) {
            case 0: return sqrt_juttner(p);
            case 1: return p.x * sqrt_juttner(p);
            case 2: return p.y * sqrt_juttner(p);
            case 3: return p.z * sqrt_juttner(p);
            default: return energy(p) * sqrt_juttner(p);
            }
        };
        if (which == 0) {
            h.plus = base;
            h.minus = [](vec3) { return 0.0; };
        } else if (which == 5) {
            h.plus = [](vec3) { return 0.0; };
            h.minus = [](vec3 p) { return sqrt_juttner(p); };
        } else {
            h.plus = base;
            h.minus = base;
        }
        return h;
    };
    for (vec3 p : {vec3{0.2, 0.1, -0.4}, vec3{1.5, -0.7, 0.3}, vec3{0.0, 0.0, 4.0}}) {
        double scale = nu(p) * sqrt_juttner(p) * (1.0 + norm(p) + energy(p));
        for (int which = 0; which < 6; ++which) {
            double lp = l_apply(mode(which), p, species::plus, rule);
            double lm = l_apply(mode(which), p, species::minus, rule);
            CHECK(std::abs(lp) < 1e-11 * scale);
            CHECK(std::abs(lm) < 1e-11 * scale);
        }
    }
}

TEST_CASE("l_apply equals the two-sided linearization of gamma") {
    collision_rule rule = collision_rule_default(0);
    two_species_fn h;
    h.plus = [](vec3 p) { return std::exp(-0.4 * norm2(p)) * (1.0 + 0.3 * p.x); };
    h.minus = [](vec3 p) { return std::exp(-0.5 * norm2(p - vec3{0.4, 0.0, 0.0})); };
    two_species_fn sj = sqrt_juttner_pair();
    for (vec3 p : {vec3{0.5, 0.2, -0.1}, vec3{-1.1, 0.6, 0.8}}) {
        for (species s : {species::plus, species::minus}) {
            double l = l_apply(h, p, s, rule);
            double g1 = gamma(h, sj, p, s, rule);
            double g2 = gamma(sj, h, p, s, rule);
            double scale = std::abs(l) + std::abs(g1) + std::abs(g2) + 1e-30;
            CHECK(std::abs(l + g1 + g2) < 1e-11 * scale);
        }
    }
}

TEST_CASE("derived and verbatim K differ exactly by the nu quadrature gap") {
    collision_rule rule = collision_rule_default(0);
    two_species_fn h;
    h.plus = [](vec3 p) { return std::exp(-0.4 * norm2(p)) * (1.0 - 0.2 * p.z); };
    h.minus = [](vec3 p) { return std::exp(-0.6 * norm2(p)) * (1.0 + 0.1 * p.y); };
    for (vec3 p : {vec3{0.4, -0.3, 0.2}, vec3{1.2, 0.5, -0.9}}) {
        for (species s : {species::plus, species::minus}) {
            double kd = k_apply(h, p, s, rule);
            double kv = k_apply_verbatim(h, p, s, rule);
            // loss-side nu on the CM sweep: 2 sum w kern J(q)
            double nu_sweep = 0.0;
            detail::sweep_cm(p, rule,
                             [&](vec3 q, double wq, vec3, vec3, double, double, double kw) {
                                 nu_sweep += wq * kw * juttner(q);
                             });
            nu_sweep *= 2.0;
            double hp = h.at(s)(p);
            double scale = std::abs(kd) + nu(p) * std::abs(hp) + 1e-30;
            CHECK(std::abs((kd - kv) - hp * (nu(p) - nu_sweep)) < 1e-11 * scale);
        }
    }
}

TEST_CASE("gamma is linear in the second slot and sees only the species sum") {
    collision_rule rule = collision_rule_default(0);
    two_species_fn f;
    f.plus = [](vec3 p) { return std::exp(-0.5 * norm2(p)); };
    f.minus = [](vec3 p) { return std::exp(-0.7 * norm2(p)) * (1.0 + 0.2 * p.x); };
    two_species_fn h1, h2, hsum, hswap;
    h1.plus = [](vec3 p) { return std::exp(-0.4 * norm2(p)); };
    h1.minus = [](vec3 p) { return 0.3 * std::exp(-0.8 * norm2(p)); };
    h2.plus = [](vec3 p) { return p.x * std::exp(-0.6 * norm2(p)); };
    h2.minus = [](vec3 p) { return -0.5 * std::exp(-0.5 * norm2(p)); };
    hsum.plus = [&](vec3 p) { return 2.0 * h1.plus(p) - 3.0 * h2.plus(p); };
    hsum.minus = [&](vec3 p) { return 2.0 * h1.minus(p) - 3.0 * h2.minus(p); };
    hswap.plus = h1.minus;
    hswap.minus = h1.plus;
    vec3 p{0.7, -0.2, 0.5};
    for (species s : {species::plus, species::minus}) {
        double a = gamma(f, hsum, p, s, rule);
        double b = 2.0 * gamma(f, h1, p, s, rule) - 3.0 * gamma(f, h2, p, s, rule);
        CHECK(std::abs(a - b) < 1e-12 * (std::abs(a) + std::abs(b) + 1e-30));
        // swapping the species components of h leaves hsum unchanged
        CHECK(gamma(f, hswap, p, s, rule) == gamma(f, h1, p, s, rule));
    }
}

TEST_CASE("region-split gamma recombines to the unsplit value") {
    collision_rule rule = collision_rule_default(1);
    split_cutoff cutoff(2);
    two_species_fn f = sqrt_juttner_pair();
    two_species_fn h;
    h.plus = [](vec3 p) { return std::exp(-0.3 * norm2(p)) * (1.0 + 0.2 * p.x); };
    h.minus = [](vec3 p) { return std::exp(-0.35 * norm2(p)); };
    for (vec3 p : {vec3{0.4, 0.1, -0.3}, vec3{0.0, 0.0, 5.0}}) {
        gamma_split_result sp = gamma_split(f, h, p, species::plus, rule, cutoff);
        double whole_gs = gamma(f, h, p, species::plus, rule, frame::gs);
        double whole_cm = gamma(f, h, p, species::plus, rule, frame::cm);
        auto hsum = [&](vec3 q) { return h.sum(q); };
        double scale = std::abs(whole_cm) + loss_cm(f.plus, hsum, p, rule) + 1e-30;
        std::printf("split at |p|=%.2f: a %.6e ac %.6e sum %.6e gs %.6e cm %.6e\n", norm(p),
                    sp.gamma_a, sp.gamma_ac, sp.gamma_a + sp.gamma_ac, whole_gs, whole_cm);
        // each sweep is the same discretization as the unsplit evaluation, so
        // the recombination error is the cross-frame quadrature difference
        CHECK(std::abs(sp.gamma_a + sp.gamma_ac - whole_cm) <
              std::abs(whole_gs - whole_cm) + 2e-3 * scale);
    }
}

TEST_CASE("u-substituted A-region gamma matches the direct sweep") {
    collision_rule rule = collision_rule_default(1);
    split_cutoff cutoff(2);
    two_species_fn f = sqrt_juttner_pair();
    two_species_fn h;
    h.plus = [](vec3 p) { return std::exp(-0.3 * norm2(p)); };
    h.minus = [](vec3 p) { return std::exp(-0.45 * norm2(p)) * (1.0 - 0.1 * p.y); };
    vec3 p{0.3, 0.1, -0.2};
    gamma_split_result sp = gamma_split(f, h, p, species::plus, rule, cutoff);
    momentum_rule_t u_rule = momentum_rule(momentum_rule_kind::gauss_exp, 15.0, 1);
    double ga_u = gamma_a_u_form(f, h, p, species::plus, u_rule, rule.sphere_order, cutoff);
    auto hsum = [&](vec3 q) { return h.sum(q); };
    double scale = std::abs(sp.gamma_a) + loss_cm(f.plus, hsum, p, rule) + 1e-30;
    std::printf("gamma_a sweep %.8e  u-form %.8e  (scale %.3e)\n", sp.gamma_a, ga_u, scale);
    CHECK(std::abs(ga_u - sp.gamma_a) < 2e-3 * scale);
}

TEST_CASE("collision rule levels refine monotonically") {
    collision_rule r0 = collision_rule_default(0);
    collision_rule r2 = collision_rule_default(2);
    CHECK(r0.sphere_order == 17);
    CHECK(r2.sphere_order == 33);
    CHECK(r2.q_rule.nodes.size() > r0.q_rule.nodes.size());
}
