// SPDX-License-Identifier: Apache-2.0
/**
 * Randomized audits of the pointwise kinematic bounds that the regularity
 * theory of the collision operator rests on.
 *
 * Each audit draws samples from the region its bound is claimed on, evaluates
 * the left-hand side (derivatives by Richardson-paired central differences),
 * and reports either hard violations (for claims that are exact inequalities)
 * or a fitted envelope constant (for claims of the form LHS <= C <q>^n with
 * unspecified C, n). Fitted constants are diagnostics: the audit never
 * asserts a particular value, it reports the constant so that stability under
 * sample doubling can be checked by the caller.
 *
 * Samples are indexed through the counter RNG, so results are independent of
 * evaluation order and any single sample can be regenerated from its index.
 */
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rvmb/core.hpp"
#include "rvmb/cutoff.hpp"
#include "rvmb/kinematics.hpp"
#include "rvmb/rng.hpp"

namespace rvmb {

struct audit_options {
    long long samples = 100000;
    std::uint64_t seed = 0;
    double p_min = 1.0;  // |p| sampled log-uniformly between these
    double p_max = 1e3;
    int cutoff_m = 4;    // region-splitting exponent; small enough that both
                         // regions are reachable in the sampled range
    double ell = 7.0;    // weight exponent for the weighted kernel audit
};

struct audit_sample {
    vec3 p, q, omega;
    double value = 0.0;
};

struct audit_report {
    std::string name;
    long long samples = 0;    // accepted samples
    long long violations = 0; // hard failures of an exact claim
    long long rejected = 0;   // unreliable finite differences, excluded
    /**
     * For fitted families this is the 99.9th percentile of the per-sample
     * ratio LHS / RHS. The raw maximum sits in worst.value; it keeps growing
     * as rarer extreme geometries are sampled, so the quantile is the number
     * to compare across sample counts.
     */
    double fitted_constant = 0.0;
    double fitted_slope = 0.0; // raw envelope slope in log <q>
    int fitted_exponent = 0;   // ceil(slope) clamped below at 0
    audit_sample worst;
};

// -------------------------------------------------------------------------
// Finite differences
// -------------------------------------------------------------------------

namespace fd {

struct deriv {
    double value = 0.0;
    bool ok = false;
};

/**
 * Central difference at steps (h, h/2) with Richardson extrapolation. ok is
 * false when the two estimates disagree by more than 10%, which flags the
 * sample as numerically untrustworthy rather than as a violation.
 */
template <class F>
deriv partial(F&& f, vec3 x, int comp) {
    double h0 = std::max(1.0, std::abs(x[comp])) * 1e-4;
    auto central = [&](double h) {
        vec3 a = x, b = x;
        a[comp] += h;
        b[comp] -= h;
        return (f(a) - f(b)) / (2.0 * h);
    };
    double d1 = central(h0);
    double d2 = central(0.5 * h0);
    deriv out;
    out.value = (4.0 * d2 - d1) / 3.0;
    double scale = std::max(std::abs(d1), std::abs(d2));
    out.ok = std::abs(d2 - d1) <= 0.1 * scale || scale < 1e-12;
    return out;
}

template <class F>
deriv second(F&& f, vec3 x, int c1, int c2) {
    double h0 = std::max({1.0, std::abs(x[c1]), std::abs(x[c2])}) * 2e-3;
    auto central = [&](double h) {
        if (c1 == c2) {
            vec3 a = x, b = x;
            a[c1] += h;
            b[c1] -= h;
            return (f(a) - 2.0 * f(x) + f(b)) / (h * h);
        }
        vec3 app = x, apm = x, amp = x, amm = x;
        app[c1] += h; app[c2] += h;
        apm[c1] += h; apm[c2] -= h;
        amp[c1] -= h; amp[c2] += h;
        amm[c1] -= h; amm[c2] -= h;
        return (f(app) - f(apm) - f(amp) + f(amm)) / (4.0 * h * h);
    };
    double d1 = central(h0);
    double d2 = central(0.5 * h0);
    deriv out;
    out.value = (4.0 * d2 - d1) / 3.0;
    double scale = std::max(std::abs(d1), std::abs(d2));
    out.ok = std::abs(d2 - d1) <= 0.1 * scale || scale < 1e-10;
    return out;
}

} // namespace fd

// -------------------------------------------------------------------------
// Samplers
// -------------------------------------------------------------------------

namespace detail {

// Counters are laid out in fixed slots: sample s of an audit may consume
// counters [s * slot, (s + 1) * slot). Every draw below documents its budget.
constexpr std::uint64_t audit_slot = 4096;

inline vec3 direction_from(double u1, double u2) {
    double z = 2.0 * u1 - 1.0;
    double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    double phi = 2.0 * pi * u2;
    return {r * std::cos(phi), r * std::sin(phi), z};
}

/// 2 counters.
inline vec3 sample_direction(std::uint64_t seed, std::uint64_t stream, std::uint64_t base) {
    return direction_from(rng_uniform(seed, stream, base), rng_uniform(seed, stream, base + 1));
}

/// |p| log-uniform on [lo, hi], uniform direction; 3 counters.
inline vec3 sample_log_uniform(std::uint64_t seed, std::uint64_t stream, std::uint64_t base,
                               double lo, double hi) {
    double u = rng_uniform(seed, stream, base);
    double r = lo * std::pow(hi / lo, u);
    return r * sample_direction(seed, stream, base + 1);
}

/**
 * Momentum with density proportional to e^{-p0}: radial Gamma(3,1) proposal,
 * acceptance e^{r - sqrt(1+r^2)} >= 1/e. Up to 40 attempts x 6 counters; the
 * final proposal is kept unconditionally in the (never observed) case that
 * all attempts reject. 240 counters.
 */
inline vec3 sample_juttner(std::uint64_t seed, std::uint64_t stream, std::uint64_t base) {
    double r = 1.0;
    for (int attempt = 0; attempt < 40; ++attempt) {
        std::uint64_t c = base + 6 * static_cast<std::uint64_t>(attempt);
        double u = rng_uniform(seed, stream, c) * rng_uniform(seed, stream, c + 1) *
                   rng_uniform(seed, stream, c + 2);
        r = -std::log(std::max(u, 1e-300));
        if (rng_uniform(seed, stream, c + 3) <= std::exp(r - std::sqrt(1.0 + r * r)))
            return r * direction_from(rng_uniform(seed, stream, c + 4),
                                      rng_uniform(seed, stream, c + 5));
    }
    return r * direction_from(rng_uniform(seed, stream, base + 240),
                              rng_uniform(seed, stream, base + 241));
}

/**
 * Pair in the bounded-kernel region (chi_a > 0): q thermal, then |p| capped
 * at the soft edge |p|^{1/m} = 2 q0. Up to 8 attempts x 256 counters.
 */
inline bool sample_region_a(std::uint64_t seed, std::uint64_t stream, std::uint64_t base,
                            const audit_options& opt, vec3& p, vec3& q) {
    split_cutoff sc(opt.cutoff_m);
    for (int att = 0; att < 8; ++att) {
        std::uint64_t c = base + 256 * static_cast<std::uint64_t>(att);
        q = sample_juttner(seed, stream, c);
        double cap = std::pow(2.0 * energy(q), sc.m);
        double hi = std::min(opt.p_max, cap);
        if (hi <= opt.p_min) continue;
        p = sample_log_uniform(seed, stream, c + 250, opt.p_min, hi);
        if (sc.chi_a(p, q) > 1e-3) return true;
    }
    return false;
}

/**
 * Pair in the complement region (chi_ac > 0): q thermal, then |p| floored at
 * the soft edge |p|^{1/m} = q0. Up to 8 attempts x 256 counters.
 */
inline bool sample_region_ac(std::uint64_t seed, std::uint64_t stream, std::uint64_t base,
                             const audit_options& opt, vec3& p, vec3& q) {
    split_cutoff sc(opt.cutoff_m);
    for (int att = 0; att < 8; ++att) {
        std::uint64_t c = base + 256 * static_cast<std::uint64_t>(att);
        q = sample_juttner(seed, stream, c);
        double lo = std::max(opt.p_min, std::pow(energy(q), sc.m));
        if (lo >= opt.p_max) continue;
        p = sample_log_uniform(seed, stream, c + 250, lo, opt.p_max);
        if (sc.chi_ac(p, q) > 1e-3) return true;
    }
    return false;
}

// -------------------------------------------------------------------------
// Envelope fits: LHS <= C <q>^n with n a small unknown integer
// -------------------------------------------------------------------------

/// Upper-order statistic used as the stable envelope constant.
inline double quantile_999(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::size_t k = static_cast<std::size_t>(0.999 * static_cast<double>(v.size()));
    if (k >= v.size()) k = v.size() - 1;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
    return v[k];
}

struct envelope_point {
    double qe;  // <q>
    double lhs;
    long long index;
};

struct envelope_fit {
    std::vector<envelope_point> data;

    void add(double qe, double lhs, long long index) {
        if (lhs > 0.0 && std::isfinite(lhs)) data.push_back({qe, lhs, index});
    }

    /**
     * Envelope slope: bin by log <q> over a fixed range, regress the log of
     * the per-bin maxima. The fixed binning keeps the fit deterministic and
     * comparable across sample counts.
     */
    void finish(audit_report& rep) const {
        rep.samples = static_cast<long long>(data.size());
        if (data.empty()) return;
        constexpr int nbins = 16;
        const double lq_lo = 0.0, lq_hi = std::log(64.0);
        std::array<double, nbins> bin_max;
        bin_max.fill(-1.0);
        for (const envelope_point& e : data) {
            double t = (std::log(e.qe) - lq_lo) / (lq_hi - lq_lo);
            int b = std::clamp(static_cast<int>(t * nbins), 0, nbins - 1);
            bin_max[b] = std::max(bin_max[b], e.lhs);
        }
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        int m = 0;
        for (int b = 0; b < nbins; ++b) {
            if (bin_max[b] <= 0.0) continue;
            double x = lq_lo + (b + 0.5) * (lq_hi - lq_lo) / nbins;
            double y = std::log(bin_max[b]);
            sx += x; sy += y; sxx += x * x; sxy += x * y;
            ++m;
        }
        double slope = 0.0;
        if (m >= 2) {
            double denom = m * sxx - sx * sx;
            if (denom > 0.0) slope = (m * sxy - sx * sy) / denom;
        }
        rep.fitted_slope = slope;
        rep.fitted_exponent = std::max(0, static_cast<int>(std::ceil(slope - 1e-9)));
        std::vector<double> ratios;
        ratios.reserve(data.size());
        double cmax = 0.0;
        long long ibest = -1;
        for (const envelope_point& e : data) {
            double r = e.lhs / std::pow(e.qe, rep.fitted_exponent);
            ratios.push_back(r);
            if (r > cmax) {
                cmax = r;
                ibest = e.index;
            }
        }
        rep.fitted_constant = quantile_999(std::move(ratios));
        rep.worst.value = cmax;
        rep.worst.p = {static_cast<double>(ibest), 0, 0}; // replaced by regenerate()
    }
};

/// Ratios LHS/RHS for bounds with an explicit right-hand side.
struct ratio_fit {
    std::vector<double> ratios;
    double cmax = -1.0;
    long long worst_index = -1;

    void add(double lhs, double rhs, long long index) {
        double r = lhs / rhs;
        ratios.push_back(r);
        if (r > cmax) {
            cmax = r;
            worst_index = index;
        }
    }

    void finish(audit_report& rep) const {
        rep.samples = static_cast<long long>(ratios.size());
        rep.fitted_constant = quantile_999(ratios);
        rep.worst.value = std::max(cmax, 0.0);
    }
};

} // namespace detail

// -------------------------------------------------------------------------
// Deflection-frame derivative growth
// -------------------------------------------------------------------------

/**
 * Derivatives of the deflection-frame post-collision momenta:
 *   max_i ( |grad_p p'_i| + |grad_p q'_i| )
 *       <= C <q>^5 (1 + |p.w|^{1/2} 1{|p.w| > |p x w|^{3/2}}),
 *   max_i ( |grad_q p'_i| + |grad_q q'_i| ) <= C <q>^5 p0,
 * and all second derivatives bounded by C <q>^5 with no p growth.
 */
inline std::vector<audit_report> audit_gs_growth(const audit_options& opt) {
    constexpr std::uint64_t stream = 0x10;
    detail::ratio_fit fit_p, fit_q, fit_2;
    long long rej_p = 0, rej_q = 0, rej_2 = 0;

    auto regen = [&](long long s, vec3& p, vec3& q, vec3& omega) {
        std::uint64_t base = detail::audit_slot * static_cast<std::uint64_t>(s);
        p = detail::sample_log_uniform(opt.seed, stream, base, opt.p_min, opt.p_max);
        q = detail::sample_juttner(opt.seed, stream, base + 8);
        omega = detail::sample_direction(opt.seed, stream, base + 260);
    };

    for (long long s = 0; s < opt.samples; ++s) {
        vec3 p, q, omega;
        regen(s, p, q, omega);
        double q5 = std::pow(energy(q), 5.0);

        // first derivatives in p and q; one reliability verdict per family
        bool okp = true, okq = true;
        double lhs_p = 0.0, lhs_q = 0.0;
        for (int i = 0; i < 3; ++i) {
            double gp_p = 0.0, gp_q = 0.0, gq_p = 0.0, gq_q = 0.0;
            for (int j = 0; j < 3; ++j) {
                auto dp = fd::partial(
                    [&](vec3 x) { return post_collision_gs(x, q, omega).p_prime[i]; }, p, j);
                auto dq = fd::partial(
                    [&](vec3 x) { return post_collision_gs(x, q, omega).q_prime[i]; }, p, j);
                okp = okp && dp.ok && dq.ok;
                gp_p += dp.value * dp.value;
                gp_q += dq.value * dq.value;
                auto ep = fd::partial(
                    [&](vec3 x) { return post_collision_gs(p, x, omega).p_prime[i]; }, q, j);
                auto eq = fd::partial(
                    [&](vec3 x) { return post_collision_gs(p, x, omega).q_prime[i]; }, q, j);
                okq = okq && ep.ok && eq.ok;
                gq_p += ep.value * ep.value;
                gq_q += eq.value * eq.value;
            }
            lhs_p = std::max(lhs_p, std::sqrt(gp_p) + std::sqrt(gp_q));
            lhs_q = std::max(lhs_q, std::sqrt(gq_p) + std::sqrt(gq_q));
        }
        double pw = std::abs(dot(p, omega));
        double pxw = norm(cross(p, omega));
        double rhs_p = q5 * (1.0 + (pw > std::pow(pxw, 1.5) ? std::sqrt(pw) : 0.0));
        if (okp)
            fit_p.add(lhs_p, rhs_p, s);
        else
            ++rej_p;
        if (okq)
            fit_q.add(lhs_q, q5 * energy(p), s);
        else
            ++rej_q;

        // second derivatives, all four variable/output combinations
        bool ok2 = true;
        double lhs_2 = 0.0;
        for (int i = 0; i < 3 && ok2; ++i) {
            for (int c1 = 0; c1 < 3; ++c1)
                for (int c2 = c1; c2 < 3; ++c2) {
                    auto dpp = fd::second(
                        [&](vec3 x) { return post_collision_gs(x, q, omega).p_prime[i]; }, p, c1,
                        c2);
                    auto dpq = fd::second(
                        [&](vec3 x) { return post_collision_gs(x, q, omega).q_prime[i]; }, p, c1,
                        c2);
                    auto dqp = fd::second(
                        [&](vec3 x) { return post_collision_gs(p, x, omega).p_prime[i]; }, q, c1,
                        c2);
                    auto dqq = fd::second(
                        [&](vec3 x) { return post_collision_gs(p, x, omega).q_prime[i]; }, q, c1,
                        c2);
                    ok2 = dpp.ok && dpq.ok && dqp.ok && dqq.ok;
                    if (!ok2) break;
                    lhs_2 = std::max({lhs_2, std::abs(dpp.value), std::abs(dpq.value),
                                      std::abs(dqp.value), std::abs(dqq.value)});
                }
        }
        if (ok2)
            fit_2.add(lhs_2, q5, s);
        else
            ++rej_2;
    }

    std::vector<audit_report> out(3);
    out[0].name = "gs-growth/grad-p";
    out[1].name = "gs-growth/grad-q";
    out[2].name = "gs-growth/second";
    fit_p.finish(out[0]);
    fit_q.finish(out[1]);
    fit_2.finish(out[2]);
    out[0].rejected = rej_p;
    out[1].rejected = rej_q;
    out[2].rejected = rej_2;
    out[0].fitted_exponent = out[1].fitted_exponent = out[2].fitted_exponent = 5;
    auto fill_worst = [&](audit_report& r, long long idx) {
        if (idx >= 0) regen(idx, r.worst.p, r.worst.q, r.worst.omega);
    };
    fill_worst(out[0], fit_p.worst_index);
    fill_worst(out[1], fit_q.worst_index);
    fill_worst(out[2], fit_2.worst_index);
    return out;
}

// -------------------------------------------------------------------------
// Bounds on the relative momentum g
// -------------------------------------------------------------------------

/**
 * Exact upper bound g <= |p - q| (violation counted), the general lower bound
 * |p - q| / sqrt(p0 q0) <= C g, and on the far region the two-sided range
 * sqrt(<p>/<q>) <= C g and g <= C <p> together with 1 <= C g.
 */
inline std::vector<audit_report> audit_g_bounds(const audit_options& opt) {
    constexpr std::uint64_t stream = 0x20;
    detail::ratio_fit lower_general, ac_lower, ac_upper;
    long long upper_checked = 0, upper_violations = 0;
    long long upper_worst = -1;
    double upper_excess = 0.0;

    for (long long s = 0; s < opt.samples; ++s) {
        std::uint64_t base = detail::audit_slot * static_cast<std::uint64_t>(s);
        vec3 p = detail::sample_log_uniform(opt.seed, stream, base, opt.p_min, opt.p_max);
        vec3 q = detail::sample_juttner(opt.seed, stream, base + 8);
        collision_invariants inv = invariants(p, q);
        double dpq = norm(p - q);
        ++upper_checked;
        if (inv.g > dpq * (1.0 + 1e-12) + 1e-14) {
            ++upper_violations;
            if (inv.g - dpq > upper_excess) {
                upper_excess = inv.g - dpq;
                upper_worst = s;
            }
        }
        if (inv.g > 0.0)
            lower_general.add(dpq / std::sqrt(energy(p) * energy(q)), inv.g, s);

        vec3 pa, qa;
        if (detail::sample_region_ac(opt.seed, stream + 1, base, opt, pa, qa)) {
            collision_invariants ia = invariants(pa, qa);
            if (ia.g > 0.0) {
                double lower = std::max(1.0, std::sqrt(energy(pa) / energy(qa)));
                ac_lower.add(lower, ia.g, s);
                ac_upper.add(ia.g, energy(pa), s);
            }
        }
    }

    std::vector<audit_report> out(4);
    out[0].name = "g-bounds/upper-exact";
    out[0].samples = upper_checked;
    out[0].violations = upper_violations;
    out[0].fitted_constant = 1.0;
    if (upper_worst >= 0) out[0].worst.value = upper_excess;
    out[1].name = "g-bounds/lower-general";
    lower_general.finish(out[1]);
    out[2].name = "g-bounds/far-lower";
    ac_lower.finish(out[2]);
    out[3].name = "g-bounds/far-upper";
    ac_upper.finish(out[3]);
    return out;
}

// -------------------------------------------------------------------------
// Derivative formulas and envelopes for g and sqrt(s)
// -------------------------------------------------------------------------

/**
 * First derivatives in p have closed forms:
 *   d g / d p_i     = (p_i q0 / p0 - q_i) / g,
 *   d (1/g)         = -(dg) / g^2,
 *   d sqrt(s)       = (g / sqrt(s)) dg,
 *   d (1/sqrt(s))   = -(g / s^{3/2}) dg.
 * Each is checked against finite differences to 1e-6 relative (violations).
 * On the far region the envelopes |d_b g|, |d_b sqrt(s)| <= C <q>^{|b|} / g
 * and |d_b (1/g)|, |d_b (1/sqrt s)| <= C <q>^{|b|} / g^3 are fitted for
 * |b| = 1, 2, one constant per function across both orders.
 */
inline std::vector<audit_report> audit_dg_formulas(const audit_options& opt) {
    constexpr std::uint64_t stream = 0x30;
    long long exact_checked = 0, exact_violations = 0, exact_rejected = 0;
    double exact_worst_err = 0.0;
    long long exact_worst = -1;
    detail::ratio_fit env_g, env_ginv, env_ss, env_ssinv;
    long long env_rejected = 0;

    auto g_of = [](vec3 pp, vec3 qq) { return invariants(pp, qq).g; };

    for (long long s = 0; s < opt.samples; ++s) {
        std::uint64_t base = detail::audit_slot * static_cast<std::uint64_t>(s);
        vec3 p, q;
        if (!detail::sample_region_ac(opt.seed, stream, base, opt, p, q)) continue;
        collision_invariants inv = invariants(p, q);
        double p0 = energy(p), q0 = energy(q);
        double g = inv.g, ss = std::sqrt(inv.s);
        if (g < 1e-8) continue;
        double qe = energy(q);

        // errors are judged per function against the gradient scale; a tiny
        // single component sits below finite-difference precision even when
        // the formula is right
        bool fd_ok = true;
        double diff[4] = {0, 0, 0, 0}, scale[4] = {0, 0, 0, 0};
        double env1_g = 0.0, env1_ginv = 0.0, env1_ss = 0.0, env1_ssinv = 0.0;
        for (int i = 0; i < 3; ++i) {
            double dg = (p[i] * q0 / p0 - q[i]) / g;
            double ana[4] = {dg, -dg / (g * g), g * dg / ss, -g * dg / (ss * ss * ss)};
            fd::deriv num[4] = {
                fd::partial([&](vec3 x) { return g_of(x, q); }, p, i),
                fd::partial([&](vec3 x) { return 1.0 / g_of(x, q); }, p, i),
                fd::partial([&](vec3 x) { return std::sqrt(invariants(x, q).s); }, p, i),
                fd::partial([&](vec3 x) { return 1.0 / std::sqrt(invariants(x, q).s); }, p, i)};
            for (int f = 0; f < 4; ++f) {
                if (!num[f].ok) fd_ok = false;
                diff[f] = std::max(diff[f], std::abs(ana[f] - num[f].value));
                scale[f] = std::max({scale[f], std::abs(ana[f]), std::abs(num[f].value)});
            }
            if (!fd_ok) break;
            env1_g = std::max(env1_g, std::abs(dg));
            env1_ginv = std::max(env1_ginv, std::abs(dg) / (g * g));
            env1_ss = std::max(env1_ss, std::abs(g * dg / ss));
            env1_ssinv = std::max(env1_ssinv, std::abs(g * dg) / (ss * ss * ss));
        }
        if (!fd_ok) {
            ++exact_rejected;
            continue;
        }
        ++exact_checked;
        double err = 0.0;
        for (int f = 0; f < 4; ++f) err = std::max(err, diff[f] / std::max(scale[f], 1e-12));
        if (err > 1e-6) {
            ++exact_violations;
            if (err > exact_worst_err) {
                exact_worst_err = err;
                exact_worst = s;
            }
        }

        // second-order envelopes by finite differences
        bool ok2 = true;
        double env2_g = 0.0, env2_ginv = 0.0, env2_ss = 0.0, env2_ssinv = 0.0;
        for (int c1 = 0; c1 < 3 && ok2; ++c1)
            for (int c2 = c1; c2 < 3; ++c2) {
                auto d2g = fd::second([&](vec3 x) { return g_of(x, q); }, p, c1, c2);
                auto d2gi = fd::second([&](vec3 x) { return 1.0 / g_of(x, q); }, p, c1, c2);
                auto d2ss =
                    fd::second([&](vec3 x) { return std::sqrt(invariants(x, q).s); }, p, c1, c2);
                auto d2ssi = fd::second(
                    [&](vec3 x) { return 1.0 / std::sqrt(invariants(x, q).s); }, p, c1, c2);
                ok2 = d2g.ok && d2gi.ok && d2ss.ok && d2ssi.ok;
                if (!ok2) break;
                env2_g = std::max(env2_g, std::abs(d2g.value));
                env2_ginv = std::max(env2_ginv, std::abs(d2gi.value));
                env2_ss = std::max(env2_ss, std::abs(d2ss.value));
                env2_ssinv = std::max(env2_ssinv, std::abs(d2ssi.value));
            }
        if (!ok2) {
            ++env_rejected;
            continue;
        }
        env_g.add(std::max(env1_g * g / qe, env2_g * g / (qe * qe)), 1.0, s);
        env_ginv.add(std::max(env1_ginv * g * g * g / qe, env2_ginv * g * g * g / (qe * qe)), 1.0,
                     s);
        env_ss.add(std::max(env1_ss * g / qe, env2_ss * g / (qe * qe)), 1.0, s);
        env_ssinv.add(std::max(env1_ssinv * g * g * g / qe, env2_ssinv * g * g * g / (qe * qe)),
                      1.0, s);
    }

    std::vector<audit_report> out(5);
    out[0].name = "dg/first-exact";
    out[0].samples = exact_checked;
    out[0].violations = exact_violations;
    out[0].rejected = exact_rejected;
    out[0].worst.value = exact_worst_err;
    if (exact_worst >= 0) out[0].fitted_constant = exact_worst_err;
    out[1].name = "dg/envelope-g";
    env_g.finish(out[1]);
    out[2].name = "dg/envelope-inv-g";
    env_ginv.finish(out[2]);
    out[3].name = "dg/envelope-sqrt-s";
    env_ss.finish(out[3]);
    out[4].name = "dg/envelope-inv-sqrt-s";
    env_ssinv.finish(out[4]);
    for (int k = 1; k < 5; ++k) out[k].rejected = env_rejected;
    return out;
}

// -------------------------------------------------------------------------
// Moller speed and sphere-frame post-collision derivatives
// -------------------------------------------------------------------------

/**
 * Hard bound: the Moller-type speed never exceeds 4 (unrestricted samples).
 * On the far region, derivatives in p satisfy
 *   <p> |d_b v| / v + |d_b p''| + |d_b q''| <= C <q>^n
 * for |b| = 1, 2 with unspecified (C, n); the envelope is fitted.
 */
inline std::vector<audit_report> audit_moller_and_cm(const audit_options& opt) {
    constexpr std::uint64_t stream = 0x40;
    long long speed_checked = 0, speed_violations = 0;
    double speed_max = 0.0;
    long long speed_worst = -1;
    detail::envelope_fit env;
    long long env_rejected = 0;

    for (long long s = 0; s < opt.samples; ++s) {
        std::uint64_t base = detail::audit_slot * static_cast<std::uint64_t>(s);
        vec3 p = detail::sample_log_uniform(opt.seed, stream, base, opt.p_min, opt.p_max);
        vec3 q = detail::sample_juttner(opt.seed, stream, base + 8);
        collision_invariants inv = invariants(p, q);
        ++speed_checked;
        if (inv.v_moller > speed_max) {
            speed_max = inv.v_moller;
            speed_worst = s;
        }
        if (inv.v_moller > 4.0 * (1.0 + 1e-12)) ++speed_violations;

        vec3 pa, qa;
        if (!detail::sample_region_ac(opt.seed, stream + 1, base, opt, pa, qa)) continue;
        vec3 omega = detail::sample_direction(opt.seed, stream + 2, base);
        collision_invariants ia = invariants(pa, qa);
        if (ia.v_moller <= 0.0) continue;
        double pe = energy(pa);

        bool ok = true;
        double lhs = 0.0;
        for (int j = 0; j < 3 && ok; ++j) {
            auto dv = fd::partial([&](vec3 x) { return invariants(x, qa).v_moller; }, pa, j);
            ok = dv.ok;
            if (!ok) break;
            double term = pe * std::abs(dv.value) / ia.v_moller;
            for (int i = 0; i < 3; ++i) {
                auto dpp = fd::partial(
                    [&](vec3 x) { return post_collision_cm(x, qa, omega).p_prime[i]; }, pa, j);
                auto dqq = fd::partial(
                    [&](vec3 x) { return post_collision_cm(x, qa, omega).q_prime[i]; }, pa, j);
                ok = ok && dpp.ok && dqq.ok;
                term += std::abs(dpp.value) + std::abs(dqq.value);
            }
            lhs = std::max(lhs, term);
        }
        for (int c1 = 0; c1 < 3 && ok; ++c1)
            for (int c2 = c1; c2 < 3; ++c2) {
                auto dv = fd::second([&](vec3 x) { return invariants(x, qa).v_moller; }, pa, c1,
                                     c2);
                ok = dv.ok;
                if (!ok) break;
                double term = pe * std::abs(dv.value) / ia.v_moller;
                for (int i = 0; i < 3; ++i) {
                    auto dpp = fd::second(
                        [&](vec3 x) { return post_collision_cm(x, qa, omega).p_prime[i]; }, pa, c1,
                        c2);
                    auto dqq = fd::second(
                        [&](vec3 x) { return post_collision_cm(x, qa, omega).q_prime[i]; }, pa, c1,
                        c2);
                    ok = ok && dpp.ok && dqq.ok;
                    term += std::abs(dpp.value) + std::abs(dqq.value);
                }
                lhs = std::max(lhs, term);
            }
        if (!ok) {
            ++env_rejected;
            continue;
        }
        env.add(energy(qa), lhs, s);
    }

    std::vector<audit_report> out(2);
    out[0].name = "moller/speed-bound";
    out[0].samples = speed_checked;
    out[0].violations = speed_violations;
    out[0].fitted_constant = speed_max;
    out[0].worst.value = speed_max;
    if (speed_worst >= 0) {
        std::uint64_t base = detail::audit_slot * static_cast<std::uint64_t>(speed_worst);
        out[0].worst.p = detail::sample_log_uniform(opt.seed, stream, base, opt.p_min, opt.p_max);
        out[0].worst.q = detail::sample_juttner(opt.seed, stream, base + 8);
    }
    out[1].name = "cm/derivative-envelope";
    env.finish(out[1]);
    out[1].rejected = env_rejected;
    return out;
}

// -------------------------------------------------------------------------
// Weight inequality
// -------------------------------------------------------------------------

/// w_l(p) <= w_l(p') w_l(q') for l >= 0, in both post-collision frames; the
/// proof needs only energy conservation, so violations must be zero.
inline std::vector<audit_report> audit_weight_inequality(const audit_options& opt) {
    constexpr std::uint64_t stream = 0x50;
    const double ells[3] = {0.0, 2.0, opt.ell};
    long long checked = 0;
    long long viol_gs = 0, viol_cm = 0;
    double max_gs = 0.0, max_cm = 0.0;
    long long worst_gs = -1, worst_cm = -1;

    for (long long s = 0; s < opt.samples; ++s) {
        std::uint64_t base = detail::audit_slot * static_cast<std::uint64_t>(s);
        vec3 p = detail::sample_log_uniform(opt.seed, stream, base, opt.p_min, opt.p_max);
        // alternate thermal and wide q for coverage
        vec3 q = (s % 2 == 0) ? detail::sample_juttner(opt.seed, stream, base + 8)
                              : detail::sample_log_uniform(opt.seed, stream, base + 4, opt.p_min,
                                                           opt.p_max);
        vec3 omega = detail::sample_direction(opt.seed, stream, base + 260);
        deflection_pair gs = post_collision_gs(p, q, omega);
        cm_pair cm = post_collision_cm(p, q, omega);
        ++checked;
        for (double l : ells) {
            double lhs = weight(p, l);
            double rhs_gs = weight(gs.p_prime, l) * weight(gs.q_prime, l);
            double rhs_cm = weight(cm.p_prime, l) * weight(cm.q_prime, l);
            if (lhs > rhs_gs * (1.0 + 1e-12)) ++viol_gs;
            if (lhs > rhs_cm * (1.0 + 1e-12)) ++viol_cm;
            if (rhs_gs > 0.0 && lhs / rhs_gs > max_gs) {
                max_gs = lhs / rhs_gs;
                worst_gs = s;
            }
            if (rhs_cm > 0.0 && lhs / rhs_cm > max_cm) {
                max_cm = lhs / rhs_cm;
                worst_cm = s;
            }
        }
    }

    std::vector<audit_report> out(2);
    out[0].name = "weight/deflection-frame";
    out[0].samples = checked;
    out[0].violations = viol_gs;
    out[0].fitted_constant = max_gs;
    out[0].worst.value = max_gs;
    out[1].name = "weight/sphere-frame";
    out[1].samples = checked;
    out[1].violations = viol_cm;
    out[1].fitted_constant = max_cm;
    out[1].worst.value = max_cm;
    (void)worst_gs;
    (void)worst_cm;
    return out;
}

// -------------------------------------------------------------------------
// Kernel composite in the u variables
// -------------------------------------------------------------------------

namespace detail {

/// q0 as a function of p at fixed u, cancellation-free in both signs of u.p.
inline double q0_of_p(vec3 p, vec3 u) {
    double p0 = energy(p);
    double x = dot(u, p);
    double y = norm2(u) + p0 * p0;
    double r = std::sqrt(x * x + y);
    return x >= 0.0 ? x + r : y / (r - x);
}

/**
 * Kernel composite at fixed (u, omega):
 *   Phi(p) = |dq/du| s Btilde / (p0 q0) J^{1/2}(q) chi_a(p, q),  q = q(p, u).
 */
inline double kernel_phi(vec3 p, vec3 u, vec3 omega, const split_cutoff& sc) {
    double p0 = energy(p);
    vec3 q = u_inverse(p, u);
    double q0 = energy(q);
    double e = p0 + q0;
    double wpq = dot(omega, p + q);
    double denom = e * e - wpq * wpq;
    collision_invariants inv = invariants(p, q);
    double btilde = e * e / (denom * denom);
    double dqdu = 1.0 / jacobian_u(p, q);
    return dqdu * inv.s * btilde / (p0 * q0) * sqrt_juttner(q) * sc.chi_a(p, q);
}

} // namespace detail

/**
 * Weighted kernel envelope in the u variables and the first-derivative
 * coefficients of the post-collision maps at fixed (u, omega).
 *
 * K_b(u, p, omega) = |w.u| |d_b Phi(p)| J^{-1/2}(q) with the derivative taken
 * in p at fixed (u, omega); the envelope w_l^2(p) K_b p0 q0 <= C <q>^n is
 * fitted for |b| <= 1 and l in {0, ell}. The map coefficients
 *   d p'_k / d p_j = delta_kj + w_k d a~ / d p_j,
 *   d q'_k / d p_j = -u_k p_j / p0^3 + (dq0_j / p0 - q0 p_j / p0^3) p_k
 *                    + (q0 / p0) delta_kj - w_k d a~ / d p_j,
 * have closed forms, validated against finite differences to 1e-6 relative,
 * and their magnitudes are fitted against <q>^n.
 */
inline std::vector<audit_report> audit_kernel_composite(const audit_options& opt) {
    constexpr std::uint64_t stream = 0x60;
    split_cutoff sc(opt.cutoff_m);
    detail::envelope_fit env_l0, env_lw, env_mu;
    long long rejected = 0;
    long long mu_checked = 0, mu_violations = 0, mu_rejected = 0;
    double mu_worst_err = 0.0;

    for (long long s = 0; s < opt.samples; ++s) {
        std::uint64_t base = detail::audit_slot * static_cast<std::uint64_t>(s);
        vec3 p, q;
        if (!detail::sample_region_a(opt.seed, stream, base, opt, p, q)) continue;
        vec3 omega = detail::sample_direction(opt.seed, stream + 1, base);
        vec3 u = u_transform(p, q);
        double p0 = energy(p), q0 = energy(q);
        double omu = std::abs(dot(omega, u));
        double jqi = 1.0 / sqrt_juttner(q);

        double phi0 = detail::kernel_phi(p, u, omega, sc);
        double kmax = omu * phi0 * jqi; // b = 0 term
        bool ok = true;
        for (int j = 0; j < 3; ++j) {
            auto d = fd::partial([&](vec3 x) { return detail::kernel_phi(x, u, omega, sc); }, p,
                                 j);
            ok = ok && d.ok;
            kmax = std::max(kmax, omu * std::abs(d.value) * jqi);
        }
        if (!ok) {
            ++rejected;
            continue;
        }
        double qe = energy(q);
        env_l0.add(qe, kmax * p0 * q0, s);
        env_lw.add(qe, std::pow(energy(p), 2.0 * opt.ell) * kmax * p0 * q0, s);

        // analytic map coefficients vs finite differences
        double e = p0 + q0;
        double root = std::sqrt(dot(u, p) * dot(u, p) + norm2(u) + p0 * p0);
        double wpq = dot(omega, p + q);
        double nn = 2.0 * e * dot(omega, u);
        double dd = e * e - wpq * wpq;
        double mu_lhs = 0.0;
        bool mu_ok = true;
        double abs_diff = 0.0; // worst analytic-vs-FD gap, normalized at the
                               // end by the coefficient scale: tiny entries sit
                               // below finite-difference precision
        for (int j = 0; j < 3; ++j) {
            double dq0 = u[j] + (dot(u, p) * u[j] + p[j]) / root;
            double dn = 2.0 * dot(omega, u) * (p[j] / p0 + dq0);
            double dwpq = (dq0 / p0 - q0 * p[j] / (p0 * p0 * p0)) * dot(omega, p) +
                          (1.0 + q0 / p0) * omega[j] - dot(omega, u) * p[j] / (p0 * p0 * p0);
            double dd_j = 2.0 * e * (p[j] / p0 + dq0) - 2.0 * wpq * dwpq;
            double da = dn / dd - nn * dd_j / (dd * dd);
            for (int k = 0; k < 3; ++k) {
                double dpk = (k == j ? 1.0 : 0.0) + omega[k] * da;
                double dqk = -u[k] * p[j] / (p0 * p0 * p0) +
                             (dq0 / p0 - q0 * p[j] / (p0 * p0 * p0)) * p[k] +
                             (k == j ? q0 / p0 : 0.0) - omega[k] * da;
                mu_lhs = std::max(mu_lhs, std::abs(dpk) + std::abs(dqk));
                auto fdp = fd::partial(
                    [&](vec3 x) {
                        double xq0 = detail::q0_of_p(x, u);
                        double xe = energy(x) + xq0;
                        vec3 xq = (xq0 * x + u) / energy(x);
                        double xw = dot(omega, x + xq);
                        return x[k] + 2.0 * xe * dot(omega, u) / (xe * xe - xw * xw) * omega[k];
                    },
                    p, j);
                auto fdq = fd::partial(
                    [&](vec3 x) {
                        double xp0 = energy(x);
                        double xq0 = detail::q0_of_p(x, u);
                        double xe = xp0 + xq0;
                        vec3 xq = (xq0 * x + u) / xp0;
                        double xw = dot(omega, x + xq);
                        double xa = 2.0 * xe * dot(omega, u) / (xe * xe - xw * xw);
                        return u[k] / xp0 + (xq0 / xp0) * x[k] - xa * omega[k];
                    },
                    p, j);
                mu_ok = mu_ok && fdp.ok && fdq.ok;
                abs_diff = std::max(
                    {abs_diff, std::abs(dpk - fdp.value), std::abs(dqk - fdq.value)});
            }
        }
        if (!mu_ok) {
            ++mu_rejected;
        } else {
            ++mu_checked;
            double err = abs_diff / std::max(mu_lhs, 1.0);
            if (err > 1e-6) ++mu_violations;
            mu_worst_err = std::max(mu_worst_err, err);
            env_mu.add(qe, mu_lhs, s);
        }
    }

    std::vector<audit_report> out(4);
    out[0].name = "kernel/envelope-l0";
    env_l0.finish(out[0]);
    out[1].name = "kernel/envelope-weighted";
    env_lw.finish(out[1]);
    out[0].rejected = out[1].rejected = rejected;
    out[2].name = "kernel/mu-envelope";
    env_mu.finish(out[2]);
    out[2].rejected = mu_rejected;
    out[3].name = "kernel/mu-exact";
    out[3].samples = mu_checked;
    out[3].violations = mu_violations;
    out[3].rejected = mu_rejected;
    out[3].worst.value = mu_worst_err;
    return out;
}

/// All audits at shared options; heavyweight derivative audits run at the
/// given sample count, so callers scale `samples` to their time budget.
inline std::vector<audit_report> run_all_audits(const audit_options& opt) {
    std::vector<audit_report> all;
    for (auto&& group :
         {audit_gs_growth(opt), audit_g_bounds(opt), audit_dg_formulas(opt),
          audit_moller_and_cm(opt), audit_weight_inequality(opt), audit_kernel_composite(opt)})
        for (const audit_report& r : group) all.push_back(r);
    return all;
}

} // namespace rvmb
