// SPDX-License-Identifier: Apache-2.0
/**
 * Relativistic binary-collision kinematics.
 *
 * Normalized units (m = c = kT = 1), energy p0 = sqrt(1 + |p|^2).
 * Invariants for a pair (p, q):
 *
 *   s = 2 (p0 q0 - p.q + 1)          (total energy squared in the CM frame)
 *   g = sqrt(2 (p0 q0 - p.q - 1))    (relative momentum), s = g^2 + 4
 *   vMoller = g sqrt(s) / (2 p0 q0)
 *   rho = (p0 + q0) / sqrt(s)
 *
 * Two reduced (delta-eliminated) parametrizations of the post-collision
 * momenta are provided: the deflection form p' = p + a(p,q,omega) omega,
 * q' = q - a omega, and the center-of-momentum sphere form p'', q''.
 */
#pragma once

#include <cmath>

#include "rvmb/core.hpp"

namespace rvmb {

/// p0 = sqrt(1 + |p|^2). Rejects non-finite input.
inline double energy(vec3 p) {
    if (!finite(p)) throw numerical_error("energy: non-finite momentum");
    return std::sqrt(1.0 + norm2(p));
}

struct collision_invariants {
    double s = 0.0;
    double g = 0.0;
    double v_moller = 0.0;
    double rho = 0.0;
};

/**
 * Invariants of the pair (p, q).
 *
 * The radicand of g is 2(p0 q0 - p.q - 1) >= 0 analytically; rounding can
 * push it slightly negative (the slack scales with p0 q0, so the tolerance
 * is relative to that scale). Values below the tolerance raise an error.
 */
inline collision_invariants invariants(vec3 p, vec3 q) {
    double p0 = energy(p);
    double q0 = energy(q);
    double d = p0 * q0 - dot(p, q);
    double rad = 2.0 * (d - 1.0);
    if (rad < 0.0) {
        double slack = 1e-12 * std::max(1.0, 2.0 * p0 * q0);
        if (rad < -slack) throw numerical_error("invariants: negative g radicand");
        rad = 0.0;
    }
    collision_invariants out;
    out.g = std::sqrt(rad);
    out.s = rad + 4.0; // s = g^2 + 4 exactly
    double sqrt_s = std::sqrt(out.s);
    out.v_moller = 0.5 * out.g * sqrt_s / (p0 * q0);
    out.rho = (p0 + q0) / sqrt_s;
    return out;
}

/// Scattering weight <p>^l with <p> = sqrt(1 + |p|^2).
inline double weight(vec3 p, double l) {
    return std::pow(energy(p), l);
}

/// Equilibrium density J(p) = e^{-p0} / (4 pi).
inline double juttner(vec3 p) {
    return std::exp(-energy(p)) / (4.0 * pi);
}

inline double sqrt_juttner(vec3 p) {
    return std::exp(-0.5 * energy(p)) / std::sqrt(4.0 * pi);
}

/**
 * Total mass of J, computed numerically (no closed-form Bessel convention is
 * assumed): integral of r^2 e^{-sqrt(1+r^2)} over [0, inf), evaluated once
 * with a fixed composite Gauss rule well past machine accuracy.
 */
inline double juttner_mass();

/// J normalized to unit mass.
inline double juttner_normalized(vec3 p) {
    static const double mass = juttner_mass();
    return juttner(p) / mass;
}

// -------------------------------------------------------------------------
// Deflection (omega-shift) frame
// -------------------------------------------------------------------------

struct deflection_pair {
    vec3 p_prime;
    vec3 q_prime;
    double a = 0.0; // shift magnitude along omega
};

/**
 * Shift magnitude a(p, q, omega) such that p' = p + a omega, q' = q - a omega
 * conserve total momentum (trivially) and total energy.
 */
inline double deflection_shift(vec3 p, vec3 q, vec3 omega, double p0, double q0) {
    double e = p0 + q0;
    double wpq = dot(omega, p + q);
    double denom = e * e - wpq * wpq; // >= s >= 4
    double rel = dot(omega, q / q0 - p / p0);
    return 2.0 * e * p0 * q0 * rel / denom;
}

/// Post-collision pair in the deflection form. omega must be a unit vector.
inline deflection_pair post_collision_gs(vec3 p, vec3 q, vec3 omega) {
    double p0 = energy(p);
    double q0 = energy(q);
    deflection_pair out;
    out.a = deflection_shift(p, q, omega, p0, q0);
    out.p_prime = p + out.a * omega;
    out.q_prime = q - out.a * omega;
    return out;
}

/**
 * Collision kernel of the deflection form (hard-ball cross section):
 *
 *   B(p,q,omega) = (p0+q0)^2 p0 q0 |omega.(p/p0 - q/q0)|
 *                  / [ (p0+q0)^2 - (omega.(p+q))^2 ]^2
 */
inline double kernel_gs(vec3 p, vec3 q, vec3 omega) {
    double p0 = energy(p);
    double q0 = energy(q);
    double e = p0 + q0;
    double wpq = dot(omega, p + q);
    double denom = e * e - wpq * wpq;
    double rel = dot(omega, p / p0 - q / q0);
    return e * e * p0 * q0 * std::abs(rel) / (denom * denom);
}

/**
 * Jacobian of (p, q) -> (p', q') at fixed omega:
 *   det = - p'0 q'0 / (p0 q0), always negative.
 */
inline double jacobian_gs(vec3 p, vec3 q, vec3 omega) {
    deflection_pair d = post_collision_gs(p, q, omega);
    return -energy(d.p_prime) * energy(d.q_prime) / (energy(p) * energy(q));
}

// -------------------------------------------------------------------------
// Center-of-momentum sphere frame
// -------------------------------------------------------------------------

struct cm_pair {
    vec3 p_prime;
    vec3 q_prime;
    double e_p_prime = 0.0; // energies in closed form, exactly summing to p0+q0
    double e_q_prime = 0.0;
};

/**
 * CM parametrization:
 *
 *   p'' = (p+q)/2 + (g/2) [ omega + (rho-1) (p+q) ((p+q).omega) / |p+q|^2 ]
 *   q'' = (p+q)/2 - (g/2) [ ... ]
 *
 * Evaluated through rho - 1 = |p+q|^2 / (sqrt(s) (p0+q0+sqrt(s))), which
 * removes the 0/0 at |p+q| = 0; at |p+q| < 1e-14 the bracket is exactly
 * omega, the defined convention for head-on pairs. The energies satisfy
 *   p''0 = E/2 + (g/(2 sqrt(s))) (p+q).omega,   E = p0 + q0,
 * so p''0 + q''0 = E holds by construction.
 */
/// Per-pair CM data cached once so many sphere directions can be evaluated
/// without recomputing the invariants.
struct cm_geometry {
    vec3 w;
    double e = 0.0;
    double g = 0.0;
    double sqrt_s = 0.0;
    double c = 0.0; // (rho - 1) / |p+q|^2, zero for head-on pairs
    bool head_on = false;

    cm_pair post(vec3 omega) const {
        double wo = dot(w, omega);
        vec3 bracket = omega;
        if (!head_on) bracket += (c * wo) * w;
        cm_pair out;
        out.p_prime = 0.5 * w + (0.5 * g) * bracket;
        out.q_prime = 0.5 * w - (0.5 * g) * bracket;
        double shift = 0.5 * g * wo / sqrt_s;
        out.e_p_prime = 0.5 * e + shift;
        out.e_q_prime = 0.5 * e - shift;
        return out;
    }
};

inline cm_geometry make_cm_geometry(vec3 p, vec3 q) {
    cm_geometry geo;
    double p0 = energy(p);
    double q0 = energy(q);
    collision_invariants inv = invariants(p, q);
    geo.w = p + q;
    geo.e = p0 + q0;
    geo.g = inv.g;
    geo.sqrt_s = std::sqrt(inv.s);
    geo.head_on = norm(geo.w) < 1e-14;
    geo.c = geo.head_on ? 0.0 : 1.0 / (geo.sqrt_s * (geo.e + geo.sqrt_s));
    return geo;
}

inline cm_pair post_collision_cm(vec3 p, vec3 q, vec3 omega) {
    return make_cm_geometry(p, q).post(omega);
}

// -------------------------------------------------------------------------
// u change of variables (q integration -> u integration at fixed p)
// -------------------------------------------------------------------------

/// u = p0 q - q0 p.
inline vec3 u_transform(vec3 p, vec3 q) {
    return energy(p) * q - energy(q) * p;
}

/**
 * Inverse map: recover q from (p, u).
 *   q0 = (u.p) + sqrt((u.p)^2 + |u|^2 + p0^2),  q = (q0 p + u) / p0.
 * The root is evaluated in the cancellation-free branch.
 */
inline vec3 u_inverse(vec3 p, vec3 u) {
    double p0 = energy(p);
    double x = dot(u, p);
    double y = norm2(u) + p0 * p0;
    double r = std::sqrt(x * x + y);
    double q0 = x >= 0.0 ? x + r : y / (r - x);
    return (q0 * p + u) / p0;
}

/**
 * |du/dq| = p0^2 (p0 q0 - p.q) / q0  >=  p0^2 / q0,
 * since p0 q0 - p.q >= 1 for all pairs.
 */
inline double jacobian_u(vec3 p, vec3 q) {
    double p0 = energy(p);
    double q0 = energy(q);
    return p0 * p0 * (p0 * q0 - dot(p, q)) / q0;
}

/**
 * Kernel factor of the u-form of the gain term:
 *   Btilde(p,q,omega) = (p0+q0)^2 / [ (p0+q0)^2 - (omega.(p+q))^2 ]^2,
 * with B = Btilde * p0 q0 |omega.u| / (p0 q0) ... i.e.
 *   s B / (p0 q0) = s Btilde |omega.u| / (p0 q0).
 */
inline double kernel_u_form(vec3 p, vec3 q, vec3 omega) {
    double e = energy(p) + energy(q);
    double wpq = dot(omega, p + q);
    double denom = e * e - wpq * wpq;
    return e * e / (denom * denom);
}

// -------------------------------------------------------------------------

inline double juttner_mass_impl() {
    // 40 panels x 20-point Gauss-Legendre on [0, 40]; integrand decays like
    // e^{-r}, so the truncation and rule errors are far below 1e-15.
    static const double gx[10] = {
        0.07652652113349733, 0.22778585114164507, 0.37370608871541955,
        0.5108670019508271,  0.636053680726515,   0.7463319064601508,
        0.8391169718222188,  0.9122344282513259,  0.9639719272779138,
        0.9931285991850949};
    static const double gw[10] = {
        0.15275338713072584, 0.14917298647260374, 0.14209610931838204,
        0.13168863844917664, 0.11819453196151841, 0.10193011981724044,
        0.08327674157670475, 0.06267204833410906, 0.04060142980038694,
        0.017614007139152118};
    double total = 0.0;
    for (int panel = 0; panel < 40; ++panel) {
        double a = static_cast<double>(panel);
        double mid = a + 0.5, half = 0.5;
        for (int i = 0; i < 10; ++i) {
            for (int sgn = -1; sgn <= 1; sgn += 2) {
                double r = mid + sgn * half * gx[i];
                total += half * gw[i] * r * r * std::exp(-std::sqrt(1.0 + r * r));
            }
        }
    }
    return total;
}

inline double juttner_mass() {
    static const double value = juttner_mass_impl();
    return value;
}

} // namespace rvmb
