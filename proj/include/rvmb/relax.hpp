// SPDX-License-Identifier: Apache-2.0
/**
 * Space-homogeneous isotropic relaxation of a single species under the full
 * bilinear collision operator,
 *
 *   d_t F = Q(F, F),   F = F(t, |p|).
 *
 * For isotropic data the five-fold collision integral reduces to an energy
 * redistribution problem. Write phi(e) = F(p) with e = p0, r = |p|, and for
 * a pair (e_p, e_q) let E = e_p + e_q and s be the Mandelstam invariant,
 * s = E^2 - |p + q|^2. Changing variables from (q, omega) to (e_q, s, e_a),
 * where e_a is one post-collision energy (the other is e_b = E - e_a), turns
 * the operator into
 *
 *   Q(e_p) = (2 pi)^2 / (r_p e_p) int de_q int de_a int ds  s / (2 sqrt(E^2 - s))
 *            [ phi(e_a) phi(e_b) - phi(e_p) phi(e_q) ],
 *
 * where s runs over the region on which both pairs are kinematically
 * reachable: G(E, s) >= max(|e_p - E/2|, |e_a - E/2|) with
 * G = sqrt((s - 4)(E^2 - s)) / (2 sqrt(s)). The s-integral has the closed
 * form used below, so the kernel W(E, Delta) depends only on E and the
 * larger energy offset Delta — manifestly symmetric under swapping the pairs.
 *
 * Discretized on the uniform energy grid e_j = 1 + (j + 1/2) de, the post
 * energies of an exchange land exactly on grid nodes (e_a + e_b = e_p + e_q
 * index-wise), so every quadrature sample is an exact four-point exchange
 * with a symmetric weight. Consequences, all exact in real arithmetic rather
 * than up to discretization error:
 *
 *   - mass and energy are conserved,
 *   - Q annihilates every discrete Juttner state C e^{-beta e},
 *   - the entropy H = -4 pi int r^2 F log F dr is nondecreasing,
 *
 * by the classical four-point argument: summing the exchange against
 * (1 + log phi) over its four rows gives -W (phi_a phi_b - phi_p phi_q)
 * (log(phi_a phi_b) - log(phi_p phi_q)) <= 0. Grid truncation drops
 * exchanges whose partner index leaves the grid, which removes samples
 * symmetrically and costs none of the three properties. Accuracy relative to
 * the continuum operator is second order (midpoint sums in e_q and e_a; the
 * s-integral is exact). Time stepping is classical RK4.
 */
#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "rvmb/core.hpp"

namespace rvmb {

/**
 * Post-collision radii of an isotropic sample; mu = what.omega in [-1, 1],
 * what the unit vector along p + q, cos_a the angle cosine between p and q.
 * Follows from the CM bracket b = omega + (rho - 1) what (what.omega), which
 * satisfies |b|^2 = 1 + (rho^2 - 1) mu^2 and w.b = rho mu |w|. Used by the
 * tests to cross-check the energy-grid kernel against the vector geometry.
 */
inline std::pair<double, double> radial_post(double rp, double rq, double cos_a, double mu) {
    double p0 = std::sqrt(1.0 + rp * rp);
    double q0 = std::sqrt(1.0 + rq * rq);
    double pq = rp * rq * cos_a;
    double g2 = std::max(0.0, 2.0 * (p0 * q0 - pq - 1.0));
    double s = g2 + 4.0;
    double rho = (p0 + q0) / std::sqrt(s);
    double w2 = rp * rp + rq * rq + 2.0 * pq;
    double w = std::sqrt(std::max(0.0, w2));
    double common = 0.25 * w2 + 0.25 * g2 * (1.0 + (rho * rho - 1.0) * mu * mu);
    double shift = 0.5 * std::sqrt(g2) * rho * w * mu;
    double a2 = std::max(0.0, common + shift);
    double b2 = std::max(0.0, common - shift);
    return {std::sqrt(a2), std::sqrt(b2)};
}

struct relax_options {
    int nodes = 64;     // energy nodes on (1, emax], cell centered
    double rmax = 30.0; // momentum-radius cap; emax = sqrt(1 + rmax^2)
    double t_hot = 1.2; // initial mixture temperatures
    double t_cold = 0.8;
    double dt = 0.01;
    int steps = 600;

    void validate() const {
        if (nodes < 8) throw config_error("relax: need at least 8 energy nodes");
        if (rmax <= 1.0) throw config_error("relax: rmax must exceed 1");
        if (t_hot <= 0.0 || t_cold <= 0.0)
            throw config_error("relax: temperatures must be positive");
        if (dt <= 0.0 || !std::isfinite(dt)) throw config_error("relax: dt must be positive");
        if (steps < 0) throw config_error("relax: steps must be nonnegative");
    }
};

struct relax_record {
    double time = 0.0;
    double mass = 0.0;    // 4 pi int r^2 F dr = 4 pi int r e phi de
    double energy = 0.0;  // 4 pi int r^2 p0 F dr
    double entropy = 0.0; // -4 pi int r^2 F log F dr
    long long negative = 0;
};

class relaxation {
  public:
    explicit relaxation(relax_options opts) : opt_(std::move(opts)) {
        opt_.validate();
        const int m = opt_.nodes;
        double emax = std::sqrt(1.0 + opt_.rmax * opt_.rmax);
        de_ = (emax - 1.0) / m;
        e_.resize(m);
        r_.resize(m);
        for (int j = 0; j < m; ++j) {
            e_[j] = 1.0 + (j + 0.5) * de_;
            r_[j] = std::sqrt(e_[j] * e_[j] - 1.0);
        }
        init_state();
        build_kernel();
    }

    const std::vector<double>& energies() const { return e_; }
    const std::vector<double>& radii() const { return r_; }
    const std::vector<double>& values() const { return f_; }
    double time() const { return time_; }
    double step_size() const { return opt_.dt; }
    const relax_options& options() const { return opt_; }

    /// Classical RK4 step of d_t F = Q(F, F).
    void step() {
        const int m = opt_.nodes;
        std::vector<double> k1(m), k2(m), k3(m), k4(m), tmp(m);
        apply_q(f_, k1);
        for (int j = 0; j < m; ++j) tmp[j] = f_[j] + 0.5 * opt_.dt * k1[j];
        apply_q(tmp, k2);
        for (int j = 0; j < m; ++j) tmp[j] = f_[j] + 0.5 * opt_.dt * k2[j];
        apply_q(tmp, k3);
        for (int j = 0; j < m; ++j) tmp[j] = f_[j] + opt_.dt * k3[j];
        apply_q(tmp, k4);
        for (int j = 0; j < m; ++j)
            f_[j] += opt_.dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        time_ += opt_.dt;
        for (double v : f_)
            if (!std::isfinite(v))
                throw numerical_error("relax: non-finite state at t = " + std::to_string(time_));
    }

    relax_record diagnostics() const {
        relax_record rec;
        rec.time = time_;
        const double c = 4.0 * pi * de_;
        for (int j = 0; j < opt_.nodes; ++j) {
            double cell = c * r_[j] * e_[j];
            rec.mass += cell * f_[j];
            rec.energy += cell * e_[j] * f_[j];
            if (f_[j] > 0.0)
                rec.entropy -= cell * f_[j] * std::log(f_[j]);
            else if (f_[j] < 0.0)
                ++rec.negative;
        }
        return rec;
    }

    /// Q(F, F) on the grid; public so tests can probe equilibria directly.
    void apply_q(const std::vector<double>& f, std::vector<double>& out) const {
        const int m = opt_.nodes;
        out.assign(m, 0.0);
        const double pref = 4.0 * pi * pi * de_ * de_;
        const int stride = 2 * m - 1;
        for (int jp = 0; jp < m; ++jp) {
            double acc = 0.0;
            for (int jq = 0; jq < m; ++jq) {
                int ssum = jp + jq;
                int d_pre = jp > jq ? jp - jq : jq - jp;
                double floss = f[jp] * f[jq];
                const double* wrow = kernel_tab_.data() + static_cast<std::size_t>(ssum) * stride;
                int lo = ssum - (m - 1) > 0 ? ssum - (m - 1) : 0;
                int hi = ssum < m - 1 ? ssum : m - 1;
                double row = 0.0;
                for (int ja = lo; ja <= hi; ++ja) {
                    int d_post = 2 * ja - ssum;
                    if (d_post < 0) d_post = -d_post;
                    int d = d_post > d_pre ? d_post : d_pre;
                    row += wrow[d] * (f[ja] * f[ssum - ja] - floss);
                }
                acc += row;
            }
            out[jp] = pref * acc / (r_[jp] * e_[jp]);
        }
    }

    /**
     * Exchange weight: the exact s-integral of s / (2 sqrt(E^2 - s)) over the
     * window where both pairs of the exchange are reachable, as a function of
     * the index sum and the larger index offset. Symmetric under swapping the
     * pre and post pair by construction; public so tests can assert it.
     */
    double exchange_weight(int ssum, int d) const {
        double e = 2.0 + (ssum + 1) * de_;
        double delta = 0.5 * d * de_;
        double b = e * e + 4.0 - 4.0 * delta * delta;
        double disc = b * b - 16.0 * e * e;
        if (disc <= 0.0) return 0.0;
        double root = std::sqrt(disc);
        double s_hi = 0.5 * (b + root);
        double s_lo = 0.5 * (b - root);
        auto anti = [&](double s) {
            return -std::sqrt(std::max(0.0, e * e - s)) * (2.0 * e * e + s) / 3.0;
        };
        return anti(s_hi) - anti(s_lo);
    }

  private:
    relax_options opt_;
    double de_ = 0.0;
    std::vector<double> e_, r_, f_;
    std::vector<double> kernel_tab_; // W(ssum, d), row-major with stride 2m - 1
    double time_ = 0.0;

    void init_state() {
        const int m = opt_.nodes;
        f_.resize(m);
        auto mass_of = [&](double t) {
            double acc = 0.0;
            for (int j = 0; j < m; ++j) acc += r_[j] * e_[j] * std::exp(-e_[j] / t);
            return acc;
        };
        double mj = mass_of(1.0);
        double ch = mj / mass_of(opt_.t_hot);
        double cc = mj / mass_of(opt_.t_cold);
        for (int j = 0; j < m; ++j)
            f_[j] = 0.5 / (4.0 * pi) *
                    (ch * std::exp(-e_[j] / opt_.t_hot) + cc * std::exp(-e_[j] / opt_.t_cold));
    }

    void build_kernel() {
        const int m = opt_.nodes;
        const int stride = 2 * m - 1;
        kernel_tab_.assign(static_cast<std::size_t>(stride) * stride, 0.0);
        for (int ssum = 0; ssum < stride; ++ssum)
            for (int d = ssum % 2; d < stride; d += 2)
                kernel_tab_[static_cast<std::size_t>(ssum) * stride + d] =
                    exchange_weight(ssum, d);
    }
};

} // namespace rvmb
