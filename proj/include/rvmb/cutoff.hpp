// SPDX-License-Identifier: Apache-2.0
/**
 * Smooth region splitting for the gain-term analysis.
 *
 * chi is a C-infinity bump: 1 on [0, 1], 0 on [2, inf), strictly between on
 * (1, 2), built from the exponential cutoff e^{-1/x}. The pair (p, q) is
 * weighted by
 *
 *   chi_A  = chi(p0) + (1 - chi(p0)) chi(|p|^{1/m} / q0)
 *   chi_Ac = (1 - chi(p0)) (1 - chi(|p|^{1/m} / q0))
 *
 * so chi_A + chi_Ac = 1 identically. chi_A covers |p| <= 1 (there
 * |p|^{1/m} <= 1 <= q0) together with moderate |p|^{1/m} <= 2 q0;
 * chi_Ac covers large |p| with |p|^{1/m} >= 2 q0.
 */
#pragma once

#include <cmath>

#include "rvmb/core.hpp"
#include "rvmb/kinematics.hpp"

namespace rvmb {

/// e^{-1/x} for x > 0, else 0; the standard smooth step ingredient.
inline double bump_phi(double x) {
    return x > 0.0 ? std::exp(-1.0 / x) : 0.0;
}

/// C-infinity transition: 1 on (-inf, 1], 0 on [2, inf).
inline double smooth_step_down(double rho) {
    if (rho <= 1.0) return 1.0;
    if (rho >= 2.0) return 0.0;
    double up = bump_phi(2.0 - rho);
    double down = bump_phi(rho - 1.0);
    return up / (up + down);
}

struct split_cutoff {
    int m = 16; // tail exponent; audits typically use smaller m so that the
                // chi_Ac = 1 region is reachable at workable |p|

    explicit split_cutoff(int m_ = 16) : m(m_) {
        if (m < 1) throw config_error("split_cutoff: m must be >= 1");
    }

    double ratio(vec3 p, vec3 q) const {
        return std::pow(norm(p), 1.0 / m) / energy(q);
    }

    double chi_a(vec3 p, vec3 q) const {
        double c1 = smooth_step_down(energy(p));
        double c2 = smooth_step_down(ratio(p, q));
        return c1 + (1.0 - c1) * c2;
    }

    double chi_ac(vec3 p, vec3 q) const {
        double c1 = smooth_step_down(energy(p));
        double c2 = smooth_step_down(ratio(p, q));
        return (1.0 - c1) * (1.0 - c2);
    }
};

} // namespace rvmb
