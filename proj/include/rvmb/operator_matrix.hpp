// SPDX-License-Identifier: Apache-2.0
/**
 * Grid discretization of the linearized two-species collision operator.
 *
 * The matrix is assembled from the Dirichlet form of L. With phi = h / sqrt(J)
 * and both momentum integrals sampled on the same uniform cubic grid,
 *
 *   <L h, h> = (1/4) sum_{s,s'} int dp dq domega  v_moller J(p) J(q)
 *              [phi_s(p'') + phi_{s'}(q'') - phi_s(p) - phi_{s'}(q)]^2,
 *
 * every sample contributes the square of a linear functional of the nodal
 * values, so the assembled matrix is symmetric positive semidefinite no
 * matter how coarse the quadrature is. Post-collision points are deposited
 * onto the grid with weights that reproduce {1, p} (trilinear) or
 * {1, p, p0} (moment matched); in the latter mode the five collision
 * invariants annihilate every sample individually and the kernel of the
 * matrix contains the discrete null space exactly, up to rounding.
 *
 * Samples whose post-collision points leave the convex hull of the grid are
 * dropped as whole (p'', q'') pairs. The keep rule is invariant under the
 * (i <-> j, omega -> -omega) orbit, which the moment cancellations rely on.
 */
#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "rvmb/core.hpp"
#include "rvmb/kinematics.hpp"
#include "rvmb/quadrature.hpp"

namespace rvmb {

enum class deposit_mode { trilinear, moment_matched };

inline deposit_mode deposit_mode_from(const std::string& s) {
    if (s == "trilinear") return deposit_mode::trilinear;
    if (s == "moment-matched") return deposit_mode::moment_matched;
    throw config_error("unknown deposit mode: " + s);
}

// -------------------------------------------------------------------------
// Uniform cubic momentum grid
// -------------------------------------------------------------------------

/**
 * Cell-centered nodes x_i = -pmax + (i + 1/2) h per axis, h = 2 pmax / n.
 * Odd n places a node at the origin and keeps every deposit cell strictly
 * off-center, so the corner energies of a cell are never all equal and the
 * moment-matched deposit stays solvable.
 */
struct momentum_grid {
    int n = 0;
    double pmax = 0.0;
    double h = 0.0;
    std::vector<vec3> nodes;      // x-major: ((i * n) + j) * n + k
    std::vector<double> energies; // p0 at each node

    int size() const { return n * n * n; }
    double cell_volume() const { return h * h * h; }
    int index(int i, int j, int k) const { return (i * n + j) * n + k; }

    /**
     * Deposit cell containing x. base[a] is the low node index per axis and
     * frac[a] in [0, 1] the offset in units of h. False when x lies outside
     * the convex hull of the nodes, [-pmax + h/2, pmax - h/2]^3.
     */
    bool locate(vec3 x, int base[3], double frac[3]) const {
        for (int a = 0; a < 3; ++a) {
            double t = (x[a] + pmax) / h - 0.5; // node i sits at t = i
            if (!(t >= 0.0 && t <= n - 1.0)) return false;
            int b = static_cast<int>(t);
            if (b > n - 2) b = n - 2;
            base[a] = b;
            frac[a] = t - b;
        }
        return true;
    }

    static momentum_grid make(int n, double pmax) {
        if (n < 2) throw config_error("momentum_grid: need at least two nodes per axis");
        if (pmax <= 0.0) throw config_error("momentum_grid: pmax must be positive");
        momentum_grid g;
        g.n = n;
        g.pmax = pmax;
        g.h = 2.0 * pmax / n;
        g.nodes.reserve(static_cast<std::size_t>(n) * n * n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                for (int k = 0; k < n; ++k)
                    g.nodes.push_back({-pmax + (i + 0.5) * g.h, -pmax + (j + 0.5) * g.h,
                                       -pmax + (k + 0.5) * g.h});
        g.energies.reserve(g.nodes.size());
        for (const vec3& p : g.nodes) g.energies.push_back(energy(p));
        return g;
    }

    /// Adopts a uniform-grid momentum rule; other rule kinds have no grid
    /// structure to inherit.
    static momentum_grid from_rule(const momentum_rule_t& rule) {
        if (rule.kind != momentum_rule_kind::uniform_grid)
            throw config_error("momentum_grid: rule kind must be uniform-grid");
        return make(9 + 2 * rule.level, rule.cutoff);
    }
};

// -------------------------------------------------------------------------
// Deposit weights
// -------------------------------------------------------------------------

struct scatter_weights {
    std::array<int, 8> idx{};
    std::array<double, 8> w{};
    bool inside = false;
};

/**
 * Deposit weights for a point, targeting the given energy. Trilinear weights
 * reproduce 1 and the three coordinates exactly; the moment-matched mode adds
 * the energy constraint sum_k c_k p0_k = e_target through the least-norm
 * correction of the trilinear weights. The constraint system is written in
 * cell-local coordinates, where the first four rows are mutually orthogonal
 * and the energy row is centered and scaled by its spread, so the 5x5 normal
 * matrix stays well conditioned; one refinement pass drives the constraint
 * residual to rounding. A cell whose corner energies cannot express the
 * target (residual above 1e-10 after refinement) falls back to trilinear.
 */
inline scatter_weights scatter(const momentum_grid& g, vec3 point, deposit_mode mode,
                               double e_target) {
    scatter_weights out;
    int b[3];
    double f[3];
    if (!g.locate(point, b, f)) return out;
    out.inside = true;
    for (int k = 0; k < 8; ++k) {
        int dx = (k >> 2) & 1, dy = (k >> 1) & 1, dz = k & 1;
        out.idx[k] = g.index(b[0] + dx, b[1] + dy, b[2] + dz);
        out.w[k] = (dx ? f[0] : 1.0 - f[0]) * (dy ? f[1] : 1.0 - f[1]) * (dz ? f[2] : 1.0 - f[2]);
    }
    if (mode == deposit_mode::trilinear) return out;

    double ek[8];
    double ebar = 0.0;
    for (int k = 0; k < 8; ++k) {
        ek[k] = g.energies[out.idx[k]];
        ebar += ek[k];
    }
    ebar *= 0.125;
    double sigma = 0.0;
    for (int k = 0; k < 8; ++k) sigma = std::max(sigma, std::abs(ek[k] - ebar));
    if (sigma < 1e-12 * ebar) return out; // all corners at one energy level

    Eigen::Matrix<double, 5, 8> B;
    for (int k = 0; k < 8; ++k) {
        B(0, k) = 1.0;
        B(1, k) = ((k >> 2) & 1) ? 1.0 : -1.0;
        B(2, k) = ((k >> 1) & 1) ? 1.0 : -1.0;
        B(3, k) = (k & 1) ? 1.0 : -1.0;
        B(4, k) = (ek[k] - ebar) / sigma;
    }
    Eigen::Matrix<double, 5, 1> target;
    target << 1.0, 2.0 * f[0] - 1.0, 2.0 * f[1] - 1.0, 2.0 * f[2] - 1.0, (e_target - ebar) / sigma;

    Eigen::LDLT<Eigen::Matrix<double, 5, 5>> ldlt(B * B.transpose());
    Eigen::Map<Eigen::Matrix<double, 8, 1>> c(out.w.data());
    Eigen::Matrix<double, 8, 1> trilinear = c;
    c += B.transpose() * ldlt.solve(target - B * c);
    c += B.transpose() * ldlt.solve(target - B * c);
    double residual = (target - B * c).cwiseAbs().maxCoeff();
    if (!(residual <= 1e-10)) c = trilinear;
    return out;
}

inline scatter_weights scatter(const momentum_grid& g, vec3 point, deposit_mode mode) {
    return scatter(g, point, mode, energy(point));
}

// -------------------------------------------------------------------------
// Assembly of the linearized operator
// -------------------------------------------------------------------------

struct assemble_options {
    int sphere_order = 7;
    double e_cut = 18.0; // pairs with p0 + q0 above this are skipped
    deposit_mode mode = deposit_mode::moment_matched;
    /**
     * When positive, the operator is confined to the momentum ball of this
     * radius: only node pairs inside the ball collide, and a sample is kept
     * only if both post-collision deposit cells lie wholly inside the ball.
     * Without it the box hull does the gating, but the hull moves with the
     * node count and its corner nodes couple ever more weakly (an energy-
     * conserving collision cannot pull a far corner into the bulk), which
     * pads the low spectrum with resolution-dependent directions. A fixed
     * ball keeps the modeled region, and hence the spectral gap, stable
     * under grid refinement. Choose it no larger than pmax - h/2 at the
     * coarsest level in play.
     */
    double gate_radius = 0.0;
};

/**
 * Nodal matrix of L on stacked (h_plus, h_minus), restricted to the active
 * node set. A node is active when it carries collisional coupling: it enters
 * some kept sample as a pre-collision state or receives a nonzero deposit.
 * Far-corner nodes of a box grid cannot reach the gate ball through any
 * energy-conserving collision, so their raw rows are identically zero;
 * keeping them would pad the spectrum with spurious null directions. The
 * activity test is exact because the raw diagonal accumulates nonnegative
 * squares only.
 *
 * Symmetric PSD; diagnostics record the raw asymmetry (before the formal
 * (M + M^T)/2 symmetrization) and the sample weight lost to the gate.
 */
struct spectral_operator {
    momentum_grid grid;
    assemble_options opts;
    std::vector<int> active;           // grid node ids with coupling, ascending
    Eigen::MatrixXd matrix;            // 2A x 2A, A = active.size()
    double asymmetry_rel = 0.0;        // ||M - M^T||_F / ||M||_F as assembled
    double sample_weight_total = 0.0;  // sum of h^6 w_omega v_moller J(p) J(q)
    double sample_weight_kept = 0.0;   // same sum over samples inside the gate
    long long pairs_pruned = 0;        // pairs dropped by the energy cut
};

namespace detail {

/// Deposit row with the source delta appended: value at p'' minus value at a
/// grid node. Duplicate indices are fine; accumulation is linear in entries.
struct deposit_row {
    std::array<int, 9> idx{};
    std::array<double, 9> val{};
};

inline deposit_row make_row(const scatter_weights& s, int delta_idx) {
    deposit_row r;
    for (int k = 0; k < 8; ++k) {
        r.idx[k] = s.idx[k];
        r.val[k] = s.w[k];
    }
    r.idx[8] = delta_idx;
    r.val[8] = -1.0;
    return r;
}

inline void add_square(Eigen::MatrixXd& m, double w, const deposit_row& u) {
    for (int r = 0; r < 9; ++r) {
        double a = w * u.val[r];
        for (int c = 0; c < 9; ++c) m(u.idx[r], u.idx[c]) += a * u.val[c];
    }
}

inline void add_sym(Eigen::MatrixXd& m, double w, const deposit_row& u, const deposit_row& v) {
    for (int r = 0; r < 9; ++r) {
        double a = w * u.val[r];
        for (int c = 0; c < 9; ++c) {
            double t = a * v.val[c];
            m(u.idx[r], v.idx[c]) += t;
            m(v.idx[c], u.idx[r]) += t;
        }
    }
}

} // namespace detail

inline spectral_operator assemble_l(const momentum_grid& grid, assemble_options opts = {}) {
    const int N = grid.size();
    if (N > 4096) throw config_error("assemble_l: grid exceeds 4096 nodes per species");
    sphere_rule_t sph = sphere_rule(opts.sphere_order);

    // The sample set is invariant under (i <-> j, omega -> -omega), and all
    // four orbit members share one set of post-collision deposits. When the
    // sphere rule is centrally symmetric, walk one hemisphere and add the
    // orbit in closed form; otherwise fall back to the full node set.
    std::vector<int> half;
    half.reserve(sph.nodes.size() / 2);
    for (std::size_t k = 0; k < sph.nodes.size(); ++k)
        if (sph.nodes[k].z > 1e-12) half.push_back(static_cast<int>(k));
    const bool orbit_path = 2 * half.size() == sph.nodes.size();

    std::vector<double> jw(N);
    for (int i = 0; i < N; ++i) jw[i] = juttner(grid.nodes[i]);

    // Ball confinement: a node is eligible when it lies inside the gate.
    // Deposit cells are later required to have all eight corners eligible,
    // which by convexity also pins the post-collision points to the ball.
    std::vector<char> eligible(N, 1);
    if (opts.gate_radius > 0.0) {
        double r2 = opts.gate_radius * opts.gate_radius;
        for (int i = 0; i < N; ++i) eligible[i] = norm2(grid.nodes[i]) <= r2 ? 1 : 0;
    }

    const double h6 = grid.cell_volume() * grid.cell_volume();
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(N, N);
    Eigen::MatrixXd X = Eigen::MatrixXd::Zero(N, N);

    spectral_operator op;
    op.grid = grid;
    op.opts = opts;

    for (int i = 0; i < N; ++i) {
        if (!eligible[i]) continue;
        for (int j = i + 1; j < N; ++j) {
            if (!eligible[j]) continue;
            if (grid.energies[i] + grid.energies[j] > opts.e_cut) {
                ++op.pairs_pruned;
                continue;
            }
            collision_invariants inv = invariants(grid.nodes[i], grid.nodes[j]);
            if (inv.v_moller == 0.0) continue;
            double w_pair = h6 * inv.v_moller * jw[i] * jw[j];
            cm_geometry geo = make_cm_geometry(grid.nodes[i], grid.nodes[j]);

            auto deposits = [&](int k, cm_pair& post, scatter_weights& a, scatter_weights& b) {
                post = geo.post(sph.nodes[k]);
                a = scatter(grid, post.p_prime, opts.mode, post.e_p_prime);
                b = scatter(grid, post.q_prime, opts.mode, post.e_q_prime);
                if (!(a.inside && b.inside)) return false;
                for (int t = 0; t < 8; ++t)
                    if (!eligible[a.idx[t]] || !eligible[b.idx[t]]) return false;
                return true;
            };

            if (orbit_path) {
                for (int k : half) {
                    double w4 = 4.0 * w_pair * sph.weights[k];
                    op.sample_weight_total += w4;
                    cm_pair post;
                    scatter_weights a, b;
                    if (!deposits(k, post, a, b)) continue;
                    op.sample_weight_kept += w4;
                    detail::deposit_row ai = detail::make_row(a, i);
                    detail::deposit_row aj = detail::make_row(a, j);
                    detail::deposit_row bi = detail::make_row(b, i);
                    detail::deposit_row bj = detail::make_row(b, j);
                    double w2 = 2.0 * w_pair * sph.weights[k];
                    detail::add_square(S, w2, ai);
                    detail::add_square(S, w2, aj);
                    detail::add_square(S, w2, bi);
                    detail::add_square(S, w2, bj);
                    detail::add_sym(X, w2, ai, bj);
                    detail::add_sym(X, w2, bi, aj);
                }
            } else {
                for (std::size_t k = 0; k < sph.nodes.size(); ++k) {
                    double w = w_pair * sph.weights[k];
                    op.sample_weight_total += 2.0 * w;
                    cm_pair post;
                    scatter_weights a, b;
                    if (!deposits(static_cast<int>(k), post, a, b)) continue;
                    op.sample_weight_kept += 2.0 * w;
                    detail::deposit_row ai = detail::make_row(a, i);
                    detail::deposit_row aj = detail::make_row(a, j);
                    detail::deposit_row bi = detail::make_row(b, i);
                    detail::deposit_row bj = detail::make_row(b, j);
                    detail::add_square(S, w, ai);
                    detail::add_square(S, w, bj);
                    detail::add_sym(X, w, ai, bj);
                    detail::add_square(S, w, aj);
                    detail::add_square(S, w, bi);
                    detail::add_sym(X, w, aj, bi);
                }
            }
        }
    }

    // S(i,i) sums nonnegative squares, so it is positive exactly when node i
    // participates in some kept sample with nonzero net weight.
    op.active.reserve(N);
    for (int i = 0; i < N; ++i)
        if (S(i, i) > 0.0) op.active.push_back(i);
    const int A = static_cast<int>(op.active.size());

    // M_phi = (1/4) [[2S + X, X], [X, 2S + X]] on stacked (phi_plus,
    // phi_minus); conjugating by diag(1/sqrt(J)) and dividing by the cell
    // volume turns the quadratic form into the nodal operator.
    Eigen::MatrixXd tl = 0.25 * (2.0 * S + X);
    Eigen::MatrixXd od = 0.25 * X;
    std::vector<double> ds(N);
    double hc = std::sqrt(grid.cell_volume());
    for (int i = 0; i < N; ++i) ds[i] = 1.0 / (std::sqrt(jw[i]) * hc);

    Eigen::MatrixXd m(2 * A, 2 * A);
    for (int r = 0; r < A; ++r)
        for (int c = 0; c < A; ++c) {
            int gr = op.active[r], gc = op.active[c];
            double sc = ds[gr] * ds[gc];
            m(r, c) = tl(gr, gc) * sc;
            m(A + r, A + c) = tl(gr, gc) * sc;
            m(r, A + c) = od(gr, gc) * sc;
            m(A + r, c) = od(gr, gc) * sc;
        }

    double nrm = m.norm();
    op.asymmetry_rel = nrm > 0.0 ? (m - m.transpose()).norm() / nrm : 0.0;
    op.matrix = 0.5 * (m + m.transpose());
    return op;
}

inline spectral_operator assemble_l(const momentum_rule_t& rule, assemble_options opts = {}) {
    return assemble_l(momentum_grid::from_rule(rule), opts);
}

// -------------------------------------------------------------------------
// Spectrum
// -------------------------------------------------------------------------

struct spectrum_result {
    Eigen::VectorXd eigenvalues; // ascending
    Eigen::MatrixXd eigenvectors;
    bool has_vectors = false;
};

inline spectrum_result spectrum(const spectral_operator& op, bool with_vectors = true) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
    es.compute(op.matrix, with_vectors ? Eigen::ComputeEigenvectors : Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw convergence_error("spectrum: eigensolver failed");
    spectrum_result out;
    out.eigenvalues = es.eigenvalues();
    if (with_vectors) {
        out.eigenvectors = es.eigenvectors();
        out.has_vectors = true;
    }
    return out;
}

// -------------------------------------------------------------------------
// Null space of L
// -------------------------------------------------------------------------

/**
 * The kernel of L: per-species mass, shared momentum and shared energy,
 * all carrying the sqrt(J) profile. Columns of raw, in order:
 *   [sqrtJ, 0], [0, sqrtJ], [p_x, p_x] sqrtJ, [p_y, p_y] sqrtJ,
 *   [p_z, p_z] sqrtJ, [p0, p0] sqrtJ.
 * ortho spans the same six directions, orthonormal in the grid inner
 * product h^3 sum u v.
 */
struct null_basis {
    double cell = 0.0;
    Eigen::MatrixXd raw;   // 2N x 6
    Eigen::MatrixXd ortho; // 2N x 6
    Eigen::Matrix<double, 6, 6> gram_raw;
};

inline null_basis make_null_basis(const momentum_grid& grid, const std::vector<int>& active) {
    const int A = static_cast<int>(active.size());
    null_basis nb;
    nb.cell = grid.cell_volume();
    nb.raw = Eigen::MatrixXd::Zero(2 * A, 6);
    for (int r = 0; r < A; ++r) {
        int i = active[r];
        double sj = sqrt_juttner(grid.nodes[i]);
        vec3 p = grid.nodes[i];
        nb.raw(r, 0) = sj;
        nb.raw(A + r, 1) = sj;
        for (int a = 0; a < 3; ++a) {
            nb.raw(r, 2 + a) = p[a] * sj;
            nb.raw(A + r, 2 + a) = p[a] * sj;
        }
        nb.raw(r, 5) = grid.energies[i] * sj;
        nb.raw(A + r, 5) = grid.energies[i] * sj;
    }
    nb.gram_raw = nb.cell * (nb.raw.transpose() * nb.raw);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(nb.raw);
    nb.ortho = qr.householderQ() * Eigen::MatrixXd::Identity(2 * A, 6);
    nb.ortho /= std::sqrt(nb.cell);
    return nb;
}

/// Null basis over the whole grid, for use with full-grid nodal vectors.
inline null_basis make_null_basis(const momentum_grid& grid) {
    std::vector<int> all(grid.size());
    for (int i = 0; i < grid.size(); ++i) all[i] = i;
    return make_null_basis(grid, all);
}

/// Null basis matching the operator's active restriction.
inline null_basis make_null_basis(const spectral_operator& op) {
    return make_null_basis(op.grid, op.active);
}

struct null_projection {
    Eigen::VectorXd hydro; // component in the span of the collision invariants
    Eigen::VectorXd micro; // h - hydro
    double a_plus = 0.0;   // per-species mass coefficients
    double a_minus = 0.0;
    vec3 b;                // shared momentum coefficients
    double c = 0.0;        // shared energy coefficient
};

/// L2 projection onto the null space; coefficients refer to the raw columns.
inline null_projection project_null(const Eigen::VectorXd& h, const null_basis& nb) {
    if (h.size() != nb.raw.rows()) throw config_error("project_null: vector/basis size mismatch");
    Eigen::Matrix<double, 6, 1> rhs = nb.cell * (nb.raw.transpose() * h);
    Eigen::Matrix<double, 6, 1> a = nb.gram_raw.ldlt().solve(rhs);
    null_projection out;
    out.hydro = nb.raw * a;
    out.micro = h - out.hydro;
    out.a_plus = a(0);
    out.a_minus = a(1);
    out.b = {a(2), a(3), a(4)};
    out.c = a(5);
    return out;
}

// -------------------------------------------------------------------------
// Bilinear collision operator on the grid
// -------------------------------------------------------------------------

/**
 * Q(F, G) for nodal densities, in deposit form: each pre-collision sample
 * (a, b, omega) moves weight from node a to the deposit cell of p''. With
 * moment-matched deposits the {1, p, p0} moments of Q(F, F) cancel within
 * each (a <-> b, omega -> -omega) orbit, i.e. to rounding; with trilinear
 * deposits mass and momentum still cancel and the energy moment is O(h^2).
 */
inline std::vector<double> q_collide_grid(const momentum_grid& grid, const std::vector<double>& f,
                                          const std::vector<double>& g, int sphere_order = 7,
                                          deposit_mode mode = deposit_mode::moment_matched) {
    const int N = grid.size();
    if (static_cast<int>(f.size()) != N || static_cast<int>(g.size()) != N)
        throw config_error("q_collide_grid: density size mismatch");
    sphere_rule_t sph = sphere_rule(sphere_order);
    const double h3 = grid.cell_volume();
    std::vector<double> out(static_cast<std::size_t>(N), 0.0);
    for (int a = 0; a < N; ++a) {
        for (int b = 0; b < N; ++b) {
            if (a == b) continue;
            double fg = f[a] * g[b];
            if (fg == 0.0) continue;
            cm_geometry geo = make_cm_geometry(grid.nodes[a], grid.nodes[b]);
            double vm = 0.5 * geo.g * geo.sqrt_s / (grid.energies[a] * grid.energies[b]);
            if (vm == 0.0) continue;
            double base = h3 * vm * fg;
            for (std::size_t k = 0; k < sph.nodes.size(); ++k) {
                cm_pair post = geo.post(sph.nodes[k]);
                scatter_weights da = scatter(grid, post.p_prime, mode, post.e_p_prime);
                scatter_weights db = scatter(grid, post.q_prime, mode, post.e_q_prime);
                if (!(da.inside && db.inside)) continue;
                double ws = base * sph.weights[k];
                for (int t = 0; t < 8; ++t) out[da.idx[t]] += ws * da.w[t];
                out[a] -= ws;
            }
        }
    }
    return out;
}

struct moment_set {
    double mass = 0.0;
    vec3 momentum;
    double energy = 0.0;
};

inline moment_set grid_moments(const momentum_grid& grid, const std::vector<double>& q) {
    if (q.size() != grid.nodes.size()) throw config_error("grid_moments: density size mismatch");
    moment_set m;
    const double h3 = grid.cell_volume();
    for (std::size_t i = 0; i < q.size(); ++i) {
        double w = h3 * q[i];
        m.mass += w;
        m.momentum += w * grid.nodes[i];
        m.energy += w * grid.energies[i];
    }
    return m;
}

} // namespace rvmb
