// SPDX-License-Identifier: Apache-2.0
/**
 * Quadrature rules for momentum space and the unit sphere.
 *
 * - sphere_rule: product rule, Gauss-Legendre in cos(theta) x uniform in phi.
 *   Order t integrates spherical polynomials of degree <= t exactly; all
 *   weights positive; weights sum to 4 pi.
 * - momentum_rule: rules over the truncated ball |q| <= cutoff (gauss-exp,
 *   monte-carlo) or the box [-cutoff, cutoff]^3 (uniform-grid).
 * - refine_until: generic self-convergence driver over refinement levels.
 *
 * Every rule is deterministic and summation order is fixed, so repeated runs
 * are bit-identical.
 */
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rvmb/core.hpp"
#include "rvmb/rng.hpp"

namespace rvmb {

// -------------------------------------------------------------------------
// Gauss-Legendre
// -------------------------------------------------------------------------

struct gauss_rule {
    std::vector<double> x; // nodes on [-1, 1]
    std::vector<double> w;
};

/// n-point Gauss-Legendre rule on [-1, 1] by Newton iteration on P_n.
inline gauss_rule gauss_legendre(int n) {
    if (n < 1) throw config_error("gauss_legendre: need n >= 1");
    gauss_rule r;
    r.x.resize(n);
    r.w.resize(n);
    for (int i = 0; i < (n + 1) / 2; ++i) {
        // Chebyshev-like initial guess
        double x = std::cos(pi * (i + 0.75) / (n + 0.5));
        double pp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = 0.0;
            for (int j = 0; j < n; ++j) {
                double p2 = p1;
                p1 = p0;
                p0 = ((2.0 * j + 1.0) * x * p1 - j * p2) / (j + 1.0);
            }
            pp = n * (x * p0 - p1) / (x * x - 1.0);
            double dx = p0 / pp;
            x -= dx;
            if (std::abs(dx) < 1e-15) break;
        }
        r.x[i] = -x;
        r.x[n - 1 - i] = x;
        double w = 2.0 / ((1.0 - x * x) * pp * pp);
        r.w[i] = w;
        r.w[n - 1 - i] = w;
    }
    return r;
}

/// Gauss-Legendre mapped to [a, b].
inline gauss_rule gauss_legendre(int n, double a, double b) {
    gauss_rule r = gauss_legendre(n);
    double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    for (int i = 0; i < n; ++i) {
        r.x[i] = mid + half * r.x[i];
        r.w[i] *= half;
    }
    return r;
}

// -------------------------------------------------------------------------
// Sphere rules
// -------------------------------------------------------------------------

struct sphere_rule_t {
    int order = 0;
    std::vector<vec3> nodes;
    std::vector<double> weights; // positive, sum = 4 pi
};

/// Supported orders: odd, 1 <= order <= 101.
inline bool sphere_order_supported(int order) {
    return order >= 1 && order <= 101 && (order % 2 == 1);
}

inline sphere_rule_t sphere_rule(int order) {
    if (!sphere_order_supported(order))
        throw config_error("sphere_rule: unsupported order " + std::to_string(order));
    int n_polar = (order + 1) / 2;
    int n_phi = order + 1; // even, so the node set is symmetric under omega -> -omega
    gauss_rule polar = gauss_legendre(n_polar);
    sphere_rule_t r;
    r.order = order;
    r.nodes.reserve(static_cast<std::size_t>(n_polar) * n_phi);
    r.weights.reserve(r.nodes.capacity());
    double wphi = 2.0 * pi / n_phi;
    for (int i = 0; i < n_polar; ++i) {
        double c = polar.x[i];
        double s = std::sqrt(std::max(0.0, 1.0 - c * c));
        for (int k = 0; k < n_phi; ++k) {
            double phi = wphi * (k + 0.5);
            r.nodes.push_back({s * std::cos(phi), s * std::sin(phi), c});
            r.weights.push_back(polar.w[i] * wphi);
        }
    }
    return r;
}

/**
 * Hemisphere-split variant: cos(theta) integrated by separate Gauss rules on
 * [-1, 0] and [0, 1]. Used for integrands carrying a |omega.axis| crease at
 * the equator; each hemisphere sees a smooth integrand.
 */
inline sphere_rule_t sphere_rule_split(int order) {
    if (!sphere_order_supported(order))
        throw config_error("sphere_rule_split: unsupported order " + std::to_string(order));
    int n_half = (order + 1) / 2;
    int n_phi = order + 1;
    sphere_rule_t r;
    r.order = order;
    double wphi = 2.0 * pi / n_phi;
    for (int side = 0; side < 2; ++side) {
        gauss_rule half = side == 0 ? gauss_legendre(n_half, -1.0, 0.0)
                                    : gauss_legendre(n_half, 0.0, 1.0);
        for (int i = 0; i < n_half; ++i) {
            double c = half.x[i];
            double s = std::sqrt(std::max(0.0, 1.0 - c * c));
            for (int k = 0; k < n_phi; ++k) {
                double phi = wphi * (k + 0.5);
                r.nodes.push_back({s * std::cos(phi), s * std::sin(phi), c});
                r.weights.push_back(half.w[i] * wphi);
            }
        }
    }
    return r;
}

/// Orthonormal triad with third column = axis (|axis| = 1).
inline void complete_frame(vec3 axis, vec3& t1, vec3& t2) {
    vec3 e = std::abs(axis.x) < 0.9 ? vec3{1.0, 0.0, 0.0} : vec3{0.0, 1.0, 0.0};
    t1 = cross(axis, e);
    t1 = t1 / norm(t1);
    t2 = cross(axis, t1);
}

/// Rotate a rule built around the z-axis so that z maps to `axis`.
inline vec3 rotate_to_axis(vec3 node, vec3 t1, vec3 t2, vec3 axis) {
    return node.x * t1 + node.y * t2 + node.z * axis;
}

// -------------------------------------------------------------------------
// Momentum rules
// -------------------------------------------------------------------------

enum class momentum_rule_kind { gauss_exp, uniform_grid, monte_carlo };

inline momentum_rule_kind momentum_rule_kind_from(const std::string& s) {
    if (s == "gauss-exp") return momentum_rule_kind::gauss_exp;
    if (s == "uniform-grid") return momentum_rule_kind::uniform_grid;
    if (s == "monte-carlo") return momentum_rule_kind::monte_carlo;
    throw config_error("momentum_rule: unknown kind '" + s + "'");
}

struct momentum_rule_t {
    momentum_rule_kind kind = momentum_rule_kind::gauss_exp;
    double cutoff = 0.0;
    int level = 0;
    std::vector<vec3> nodes;
    std::vector<double> weights; // positive; sum = volume of the ball/box
};

/**
 * Radial sub-rule of gauss-exp: composite Gauss-Legendre whose panel breaks
 * sit at equal-mass quantiles of e^{-r} on [0, cutoff], clustering nodes
 * where the e^{-q0} factor carries its mass. The weights returned here do NOT
 * include the r^2 volume factor.
 */
inline gauss_rule radial_exp_rule(double cutoff, int points_per_panel, int panels = 4) {
    if (cutoff <= 0.0) throw config_error("radial_exp_rule: cutoff must be positive");
    gauss_rule out;
    double total_mass = 1.0 - std::exp(-cutoff);
    double prev = 0.0;
    for (int k = 1; k <= panels; ++k) {
        double frac = total_mass * static_cast<double>(k) / panels;
        double brk = k == panels ? cutoff : -std::log(1.0 - frac);
        gauss_rule panel = gauss_legendre(points_per_panel, prev, brk);
        out.x.insert(out.x.end(), panel.x.begin(), panel.x.end());
        out.w.insert(out.w.end(), panel.w.begin(), panel.w.end());
        prev = brk;
    }
    return out;
}

/**
 * Rule over the momentum domain. level >= 0 refines monotonically:
 *   gauss-exp:     radial 6*2^level points x 4 panels, sphere order 17 + 8*level
 *   uniform-grid:  (9 + 2*level)^3 cell-centered box grid; odd per-axis count
 *                  keeps a node at the origin
 *   monte-carlo:   4096 * 4^level uniform points in the ball (counter RNG)
 */
inline momentum_rule_t momentum_rule(momentum_rule_kind kind, double cutoff, int level,
                                     std::uint64_t seed = 0) {
    if (cutoff <= 0.0) throw config_error("momentum_rule: cutoff must be positive");
    if (level < 0) throw config_error("momentum_rule: level must be >= 0");
    momentum_rule_t r;
    r.kind = kind;
    r.cutoff = cutoff;
    r.level = level;
    switch (kind) {
    case momentum_rule_kind::gauss_exp: {
        gauss_rule rad = radial_exp_rule(cutoff, 6 << level);
        int order = 17 + 8 * level;
        if (order > 101) order = 101;
        sphere_rule_t ang = sphere_rule(order);
        r.nodes.reserve(rad.x.size() * ang.nodes.size());
        r.weights.reserve(r.nodes.capacity());
        for (std::size_t i = 0; i < rad.x.size(); ++i) {
            double rr = rad.x[i];
            double wr = rad.w[i] * rr * rr;
            for (std::size_t k = 0; k < ang.nodes.size(); ++k) {
                r.nodes.push_back(rr * ang.nodes[k]);
                r.weights.push_back(wr * ang.weights[k]);
            }
        }
        break;
    }
    case momentum_rule_kind::uniform_grid: {
        int n = 9 + 2 * level;
        double h = 2.0 * cutoff / n;
        double w = h * h * h;
        r.nodes.reserve(static_cast<std::size_t>(n) * n * n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                for (int k = 0; k < n; ++k) {
                    r.nodes.push_back({-cutoff + (i + 0.5) * h, -cutoff + (j + 0.5) * h,
                                       -cutoff + (k + 0.5) * h});
                    r.weights.push_back(w);
                }
        break;
    }
    case momentum_rule_kind::monte_carlo: {
        std::int64_t n = 4096LL << (2 * level);
        double volume = 4.0 / 3.0 * pi * cutoff * cutoff * cutoff;
        double w = volume / static_cast<double>(n);
        r.nodes.reserve(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) {
            // three independent draws per node, all keyed by the node index
            double u1 = rng_uniform(seed, 0x6d63ULL, static_cast<std::uint64_t>(3 * i));
            double u2 = rng_uniform(seed, 0x6d63ULL, static_cast<std::uint64_t>(3 * i + 1));
            double u3 = rng_uniform(seed, 0x6d63ULL, static_cast<std::uint64_t>(3 * i + 2));
            double rr = cutoff * std::cbrt(u1);
            double c = 2.0 * u2 - 1.0;
            double s = std::sqrt(std::max(0.0, 1.0 - c * c));
            double phi = 2.0 * pi * u3;
            r.nodes.push_back({rr * s * std::cos(phi), rr * s * std::sin(phi), rr * c});
            r.weights.push_back(w);
        }
        break;
    }
    }
    return r;
}

/// Fixed-order sum of w_i f(x_i).
template <class F>
double integrate(const momentum_rule_t& rule, F&& f) {
    double acc = 0.0;
    for (std::size_t i = 0; i < rule.nodes.size(); ++i) acc += rule.weights[i] * f(rule.nodes[i]);
    return acc;
}

// -------------------------------------------------------------------------
// Refinement driver
// -------------------------------------------------------------------------

struct refine_result {
    double value = 0.0;
    double error_estimate = 0.0; // |value(level) - value(level-1)|
    int level = 0;
    bool converged = false;
};

/**
 * Evaluate `at_level(level)` for level = 0, 1, ... and stop at the first level
 * whose difference from the previous one is <= tolerance (absolute). With
 * tolerance = 0 this always runs to max_level and reports non-convergence
 * (the error estimate is still meaningful).
 */
inline refine_result refine_until(const std::function<double(int)>& at_level, double tolerance,
                                  int max_level) {
    if (max_level < 1) throw config_error("refine_until: need max_level >= 1");
    refine_result out;
    double prev = at_level(0);
    out.value = prev;
    for (int level = 1; level <= max_level; ++level) {
        double cur = at_level(level);
        out.value = cur;
        out.error_estimate = std::abs(cur - prev);
        out.level = level;
        if (out.error_estimate <= tolerance && tolerance > 0.0) {
            out.converged = true;
            return out;
        }
        prev = cur;
    }
    out.converged = false;
    return out;
}

/// Closed-form sphere moment: integral over S^2 of x^a y^b z^c.
inline double sphere_monomial_integral(int a, int b, int c) {
    if (a % 2 || b % 2 || c % 2) return 0.0;
    auto dfact = [](int n) {
        double v = 1.0;
        for (int k = n; k > 1; k -= 2) v *= k;
        return v;
    };
    return 4.0 * pi * dfact(a - 1) * dfact(b - 1) * dfact(c - 1) / dfact(a + b + c + 1);
}

} // namespace rvmb
