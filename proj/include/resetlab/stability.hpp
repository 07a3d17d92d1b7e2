#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "controller.hpp"
#include "elements.hpp"
#include "format.hpp"
#include "state_space.hpp"

namespace resetlab {

// ============================================================================
// Base linear checks
// ============================================================================

struct BaseLinearResult {
    bool stable = false;
    std::vector<Complex> eigenvalues;
    double max_real = 0.0;
};

inline BaseLinearResult base_linear_stable(const Matrix& a_cl) {
    BaseLinearResult r;
    if (a_cl.rows() == 0) {
        r.stable = true;
        r.max_real = -std::numeric_limits<double>::infinity();
        return r;
    }
    // eigenvalues of the balanced matrix: the realization spans many decades
    const Vector d = detail::balance_scaling(a_cl);
    Eigen::EigenSolver<Matrix> es(d.cwiseInverse().asDiagonal() * a_cl * d.asDiagonal(), false);
    r.max_real = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
        r.eigenvalues.push_back(es.eigenvalues()(i));
        r.max_real = std::max(r.max_real, es.eigenvalues()(i).real());
    }
    std::sort(r.eigenvalues.begin(), r.eigenvalues.end(), [](Complex a, Complex b) {
        return a.real() != b.real() ? a.real() < b.real() : a.imag() < b.imag();
    });
    r.stable = r.max_real < 0.0;
    return r;
}

/// Closed loop with A_rho := I (the flow matrix does not depend on the resets).
inline BaseLinearResult base_linear_stable(const ControllerChain& chain, const PlantModel& plant) {
    return base_linear_stable(close_loop(chain.base_linear(), plant).A);
}

/// Largest eigenvalue of A_rho^T P_rho A_rho - P_rho.
inline double reset_matrix_condition(const Matrix& a_rho, const Matrix& p_rho) {
    if (a_rho.rows() != p_rho.rows() || a_rho.cols() != p_rho.cols() || a_rho.rows() != a_rho.cols()) {
        throw DimensionMismatch("A_rho and P_rho must be square and of equal size");
    }
    if (a_rho.rows() == 0) return -std::numeric_limits<double>::infinity();
    const Matrix m = a_rho.transpose() * p_rho * a_rho - p_rho;
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
    return es.eigenvalues().maxCoeff();
}

// ============================================================================
// Partition into the certificate ordering
// ============================================================================

/// Closed-loop states split as (surface, non-resetting, resetting). The surface
/// block carries the plant states and every other non-resetting state that
/// enters the reset trigger; C_p is the trigger row over that block. With the
/// loop error as trigger this is exactly the plant with C_p = -C_plant.
struct ClosedLoopPartition {
    Matrix A_cl;        ///< realized ordering
    Vector gamma;       ///< realized ordering
    RowVector trigger;  ///< realized ordering
    std::vector<Eigen::Index> permutation; ///< ordered position k holds realized state permutation[k]
    Eigen::Index n_p = 0;
    Eigen::Index n_nr = 0;
    Eigen::Index n_r = 0;
    RowVector C_p;

    /// `plant` lists realized indices of the plant states (placed first).
    static ClosedLoopPartition from(Matrix a_cl, Vector gamma, RowVector trigger,
                                    const std::vector<Eigen::Index>& plant = {}) {
        const auto n = a_cl.rows();
        if (a_cl.cols() != n || gamma.size() != n || trigger.size() != n) {
            throw DimensionMismatch("partition inputs disagree on the state dimension");
        }
        ClosedLoopPartition p;
        std::vector<char> placed(static_cast<std::size_t>(n), 0);
        auto resetting = [&](Eigen::Index i) { return gamma(i) != 1.0; };
        for (auto i : plant) {
            if (i < 0 || i >= n || placed[static_cast<std::size_t>(i)]) throw InvalidConfig("bad plant index list");
            if (resetting(i)) throw InvalidConfig("plant states cannot reset");
            p.permutation.push_back(i);
            placed[static_cast<std::size_t>(i)] = 1;
        }
        for (Eigen::Index i = 0; i < n; ++i) {
            if (trigger(i) == 0.0 || placed[static_cast<std::size_t>(i)]) continue;
            if (resetting(i)) throw InvalidConfig("reset trigger depends on a resetting state");
            p.permutation.push_back(i);
            placed[static_cast<std::size_t>(i)] = 1;
        }
        p.n_p = static_cast<Eigen::Index>(p.permutation.size());
        for (Eigen::Index i = 0; i < n; ++i) {
            if (!placed[static_cast<std::size_t>(i)] && !resetting(i)) {
                p.permutation.push_back(i);
                placed[static_cast<std::size_t>(i)] = 1;
            }
        }
        p.n_nr = static_cast<Eigen::Index>(p.permutation.size()) - p.n_p;
        for (Eigen::Index i = 0; i < n; ++i)
            if (resetting(i)) p.permutation.push_back(i);
        p.n_r = n - p.n_p - p.n_nr;
        p.C_p = RowVector(p.n_p);
        for (Eigen::Index k = 0; k < p.n_p; ++k) p.C_p(k) = trigger(p.permutation[static_cast<std::size_t>(k)]);
        p.A_cl = std::move(a_cl);
        p.gamma = std::move(gamma);
        p.trigger = std::move(trigger);
        return p;
    }

    [[nodiscard]] Eigen::Index dimension() const noexcept { return A_cl.rows(); }

    [[nodiscard]] Eigen::PermutationMatrix<Eigen::Dynamic> permutation_matrix() const {
        Eigen::PermutationMatrix<Eigen::Dynamic> pm(dimension());
        // column k of Pi is e_{permutation[k]}: x_realized = Pi x_ordered
        for (Eigen::Index k = 0; k < dimension(); ++k) pm.indices()(k) = static_cast<int>(permutation[static_cast<std::size_t>(k)]);
        return pm;
    }

    /// A_cl in the certificate ordering.
    [[nodiscard]] Matrix ordered_A() const {
        const auto n = dimension();
        Matrix a(n, n);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < n; ++j)
                a(i, j) = A_cl(permutation[static_cast<std::size_t>(i)], permutation[static_cast<std::size_t>(j)]);
        return a;
    }

    /// A_rho restricted to the resetting states.
    [[nodiscard]] Matrix reset_matrix() const {
        Matrix r = Matrix::Zero(n_r, n_r);
        for (Eigen::Index k = 0; k < n_r; ++k)
            r(k, k) = gamma(permutation[static_cast<std::size_t>(n_p + n_nr + k)]);
        return r;
    }
};

inline ClosedLoopPartition partition_closed_loop(const ClosedLoopRealization& cl) {
    std::vector<Eigen::Index> plant;
    for (Eigen::Index i = 0; i < cl.plant_states; ++i) plant.push_back(cl.controller_states + i);
    return ClosedLoopPartition::from(cl.A, cl.gamma, cl.c_trigger, plant);
}

// ============================================================================
// Certificate
// ============================================================================

enum class StabilityStatus { Certified, Unknown, BaseLinearUnstable };

inline std::string to_string(StabilityStatus s) {
    switch (s) {
    case StabilityStatus::Certified: return "Certified";
    case StabilityStatus::Unknown: return "Unknown";
    case StabilityStatus::BaseLinearUnstable: return "BaseLinearUnstable";
    }
    return "Unknown";
}

struct CertificateMargins {
    double p_min_eig = 0.0;        ///< smallest eigenvalue of P (> 0)
    double lyapunov_max_eig = 0.0; ///< largest eigenvalue of A^T P + P A (< 0)
    double equality_residual = 0.0; ///< ||B0^T P - C0||_F (~ 0)
    double reset_max_eig = 0.0;    ///< largest eigenvalue of A_rho^T P_rho A_rho - P_rho (<= 0)
    // scales the slack is measured against (Frobenius norms); all values are
    // for the diagonally normalized certificate, see certificate_margins
    double p_scale = 0.0;
    double lyapunov_scale = 0.0;
    double p_rho_scale = 0.0;

    [[nodiscard]] bool holds(double slack) const {
        return p_min_eig >= slack * p_scale && lyapunov_max_eig <= -slack * lyapunov_scale &&
               equality_residual <= slack * p_scale && reset_max_eig <= -slack * p_rho_scale;
    }
};

/// P in the certificate ordering, with the pinned rows B0^T P = [beta C_p, 0, P_rho].
struct StabilityCertificate {
    Matrix P;
    Matrix P_rho;
    Vector beta;
    CertificateMargins margins;
    std::string method; ///< "lyapunov" (no resetting states) or "barrier"
};

inline Matrix certificate_C0(const ClosedLoopPartition& part, const Vector& beta, const Matrix& p_rho) {
    Matrix c0 = Matrix::Zero(part.n_r, part.dimension());
    if (part.n_r == 0) return c0;
    c0.leftCols(part.n_p) = beta * part.C_p;
    c0.rightCols(part.n_r) = p_rho;
    return c0;
}

/// Recomputes every margin from the partition and (P, P_rho, beta) alone.
/// Margins are taken after the congruence S = diag(P)^-1/2 (a diagonal change
/// of state coordinates), so they do not depend on the units of the states.
inline CertificateMargins certificate_margins(const ClosedLoopPartition& part, const Matrix& a_rho, const Matrix& p,
                                              const Matrix& p_rho, const Vector& beta) {
    const auto n = part.dimension();
    if (p.rows() != n || p.cols() != n || p_rho.rows() != part.n_r || beta.size() != part.n_r) {
        throw DimensionMismatch("certificate dimensions do not match the partition");
    }
    const double inf = std::numeric_limits<double>::infinity();
    CertificateMargins m;
    const Matrix ps = 0.5 * (p + p.transpose());
    if (n == 0) return m;
    if (!ps.allFinite() || (ps.diagonal().array() <= 0.0).any()) {
        // not positive definite; report the failure on the wrong side
        m.p_min_eig = -inf;
        m.lyapunov_max_eig = inf;
        m.reset_max_eig = inf;
        m.equality_residual = inf;
        return m;
    }
    const Vector s = ps.diagonal().cwiseSqrt().cwiseInverse();
    const Matrix a = part.ordered_A();
    const Matrix ph = s.asDiagonal() * ps * s.asDiagonal();
    m.p_scale = ph.norm();
    m.p_min_eig = Eigen::SelfAdjointEigenSolver<Matrix>(ph, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
    Matrix q = s.asDiagonal() * (a.transpose() * ps + ps * a) * s.asDiagonal();
    q = 0.5 * (q + q.transpose());
    m.lyapunov_scale = q.norm();
    m.lyapunov_max_eig = Eigen::SelfAdjointEigenSolver<Matrix>(q, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
    if (part.n_r == 0) {
        m.reset_max_eig = -1.0; // vacuous, kept on the correct side
        m.p_rho_scale = 0.0;
        return m;
    }
    const Vector sr = s.tail(part.n_r);
    const Matrix resid = ps.bottomRows(part.n_r) - certificate_C0(part, beta, p_rho);
    m.equality_residual = (sr.asDiagonal() * resid * s.asDiagonal()).norm();
    const Matrix prh = sr.asDiagonal() * p_rho * sr.asDiagonal();
    const Matrix arh = sr.cwiseInverse().asDiagonal() * a_rho * sr.asDiagonal();
    m.p_rho_scale = prh.norm();
    m.reset_max_eig = reset_matrix_condition(arh, prh);
    return m;
}

struct StabilityResult {
    StabilityStatus status = StabilityStatus::Unknown;
    std::optional<StabilityCertificate> certificate;
    BaseLinearResult base;
    double best_objective = std::numeric_limits<double>::quiet_NaN(); ///< optimal t (< 0 means strictly feasible)
    std::optional<CertificateMargins> rejected; ///< margins of the last candidate that failed verification
    std::string message;
};

struct StabilitySearchOptions {
    double slack = 1e-8;
    int max_outer = 40;
    int max_newton = 200;
    double mu_growth = 8.0;
};

namespace detail {

/// minimize c^T v subject to blocks F_b(v) = F_b0 + sum_k v_k F_bk > 0.
struct LmiBlock {
    Matrix f0;
    std::vector<Matrix> fk;
};

struct BarrierOutcome {
    Vector v;
    double objective = 0.0;
    bool converged = false;
};

inline std::optional<std::vector<Eigen::LLT<Matrix>>> factor_blocks(const std::vector<LmiBlock>& blocks,
                                                                    const Vector& v, std::vector<Matrix>& values) {
    std::vector<Eigen::LLT<Matrix>> out;
    values.resize(blocks.size());
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        Matrix f = blocks[b].f0;
        for (Eigen::Index k = 0; k < v.size(); ++k)
            if (v(k) != 0.0) f += v(k) * blocks[b].fk[static_cast<std::size_t>(k)];
        values[b] = f;
        Eigen::LLT<Matrix> llt(f);
        if (llt.info() != Eigen::Success) return std::nullopt;
        for (Eigen::Index i = 0; i < f.rows(); ++i)
            if (!(llt.matrixLLT()(i, i) > 0.0)) return std::nullopt;
        out.push_back(std::move(llt));
    }
    return out;
}

inline double log_det(const Eigen::LLT<Matrix>& llt) {
    return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

// Runs the barrier path; `on_center` may stop early by returning true.
template <typename OnCenter>
BarrierOutcome barrier_minimize(const std::vector<LmiBlock>& blocks, const Vector& c, Vector v,
                                const StabilitySearchOptions& opt, OnCenter&& on_center) {
    const auto m = v.size();
    double nu = 0.0;
    for (const auto& b : blocks) nu += static_cast<double>(b.f0.rows());
    std::vector<Matrix> values;
    auto phi = [&](const Vector& x, double mu) -> std::optional<double> {
        const auto f = factor_blocks(blocks, x, values);
        if (!f) return std::nullopt;
        double val = mu * c.dot(x);
        for (const auto& llt : *f) val -= log_det(llt);
        return val;
    };

    BarrierOutcome out;
    double mu = 1.0;
    for (int outer = 0; outer < opt.max_outer; ++outer) {
        for (int it = 0; it < opt.max_newton; ++it) {
            const auto fac = factor_blocks(blocks, v, values);
            if (!fac) break;
            Vector g = mu * c;
            Matrix h = Matrix::Zero(m, m);
            for (std::size_t b = 0; b < blocks.size(); ++b) {
                std::vector<Matrix> w(static_cast<std::size_t>(m));
                for (Eigen::Index k = 0; k < m; ++k) {
                    w[static_cast<std::size_t>(k)] = (*fac)[b].solve(blocks[b].fk[static_cast<std::size_t>(k)]);
                    g(k) -= w[static_cast<std::size_t>(k)].trace();
                }
                for (Eigen::Index k = 0; k < m; ++k)
                    for (Eigen::Index l = k; l < m; ++l) {
                        const double t = (w[static_cast<std::size_t>(k)].array() *
                                          w[static_cast<std::size_t>(l)].transpose().array())
                                             .sum();
                        h(k, l) += t;
                        if (l != k) h(l, k) += t;
                    }
            }
            const Vector dv = -h.ldlt().solve(g);
            const double dec = -g.dot(dv);
            if (!std::isfinite(dec) || dec / 2.0 < 1e-10) break;
            const double f0 = *phi(v, mu);
            double s = 1.0;
            bool moved = false;
            for (int ls = 0; ls < 60; ++ls, s *= 0.5) {
                const Vector trial = v + s * dv;
                const auto ft = phi(trial, mu);
                if (ft && *ft <= f0 - 0.25 * s * dec) {
                    v = trial;
                    moved = true;
                    break;
                }
            }
            if (!moved) break;
        }
        out.v = v;
        out.objective = c.dot(v);
        if (on_center(v)) {
            out.converged = true;
            return out;
        }
        if (nu / mu < 1e-13) break;
        mu *= opt.mu_growth;
    }
    out.converged = true;
    return out;
}

// Stable A: solves A^T P + P A = -I through the Kronecker form.
/// Solves A^T P + P A = -W.
inline Matrix lyapunov_solve(const Matrix& a, const Matrix& w) {
    const auto n = a.rows();
    const Matrix eye = Matrix::Identity(n, n);
    Matrix k = Matrix::Zero(n * n, n * n);
    // vec(A^T P) = (I kron A^T) vec P, vec(P A) = (A^T kron I) vec P
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) {
            k.block(i * n, j * n, n, n) += eye(i, j) * a.transpose();
            k.block(i * n, j * n, n, n) += a(j, i) * eye;
        }
    const Matrix wd = w; // contiguous copy
    const Vector rhs = -Eigen::Map<const Vector>(wd.data(), n * n);
    const Vector sol = k.fullPivLu().solve(rhs);
    Matrix p = Eigen::Map<const Matrix>(sol.data(), n, n);
    return 0.5 * (p + p.transpose());
}

} // namespace detail

/// Searches (beta, P_rho, P) with P > 0, A^T P + P A < 0, B0^T P = C0 and
/// A_rho^T P_rho A_rho - P_rho <= 0. The equality pins the resetting rows of P,
/// the remaining entries are found by a log-barrier path on
///   min t  s.t.  t I - (A^T P + P A) > 0,  P + t I > 0,
///                P_rho - A_rho^T P_rho A_rho + t I > 0,  n - tr P > 0,
/// in balanced coordinates. Any candidate is re-verified against the realized
/// coordinates; Unknown is returned when no candidate passes.
inline StabilityResult quadratic_stability_search(const ClosedLoopPartition& part, const Matrix& a_rho,
                                                  const StabilitySearchOptions& opt = {}) {
    StabilityResult res;
    res.base = base_linear_stable(part.A_cl);
    if (!res.base.stable) {
        res.status = StabilityStatus::BaseLinearUnstable;
        res.message = "base linear closed loop has an eigenvalue with real part " + fmt_num(res.base.max_real);
        return res;
    }
    if (a_rho.rows() != part.n_r || a_rho.cols() != part.n_r) throw DimensionMismatch("A_rho size differs from n_r");

    const auto n = part.dimension();
    const auto nr = part.n_r;
    const auto nf = n - nr;
    const Matrix a = part.ordered_A();

    auto accept = [&](const Matrix& p, const Matrix& p_rho, const Vector& beta, const char* method) {
        const auto margins = certificate_margins(part, a_rho, p, p_rho, beta);
        if (!margins.holds(opt.slack)) {
            res.rejected = margins;
            return false;
        }
        res.status = StabilityStatus::Certified;
        res.certificate = StabilityCertificate{p, p_rho, beta, margins, method};
        return true;
    };

    if (nr == 0) {
        const Vector d = detail::balance_scaling(a);
        const Matrix ab = d.cwiseInverse().asDiagonal() * a * d.asDiagonal();
        // W = I gives a badly conditioned P for lightly damped modes; reweighting
        // W by diag(P) of the previous solve evens out the normalized margins
        Vector w = Vector::Ones(n);
        for (int it = 0; it < 6; ++it) {
            const Matrix pb = detail::lyapunov_solve(ab, w.asDiagonal());
            const Matrix p = d.cwiseInverse().asDiagonal() * pb * d.cwiseInverse().asDiagonal();
            if (accept(p, Matrix(0, 0), Vector(0), "lyapunov")) return res;
            w = pb.diagonal().cwiseAbs();
            if (!(w.maxCoeff() > 0.0) || !w.allFinite()) break;
            w /= w.maxCoeff();
        }
        res.message = "Lyapunov solution failed verification at the requested slack";
        return res;
    }

    // Balanced coordinates x = D z: P~ = D P D, A~ = D^-1 A D, C_p~ = C_p D_p.
    const Vector d = detail::balance_scaling(a);
    const Matrix ab = d.cwiseInverse().asDiagonal() * a * d.asDiagonal();
    const RowVector cp = part.C_p.cwiseProduct(d.head(part.n_p).transpose());
    RowVector csurf = RowVector::Zero(nf);
    csurf.head(part.n_p) = cp;
    const double cnorm = csurf.norm();
    if (cnorm > 0.0) csurf /= cnorm; // beta absorbs the scale

    // variables: X (nf x nf sym), beta (nr), P_rho (nr x nr sym), t
    std::vector<Matrix> basis;
    for (Eigen::Index i = 0; i < nf; ++i)
        for (Eigen::Index j = i; j < nf; ++j) {
            Matrix e = Matrix::Zero(n, n);
            e(i, j) = e(j, i) = 1.0;
            basis.push_back(std::move(e));
        }
    for (Eigen::Index k = 0; k < nr; ++k) {
        Matrix e = Matrix::Zero(n, n);
        e.block(nf + k, 0, 1, nf) = csurf;
        e.block(0, nf + k, nf, 1) = csurf.transpose();
        basis.push_back(std::move(e));
    }
    for (Eigen::Index i = 0; i < nr; ++i)
        for (Eigen::Index j = i; j < nr; ++j) {
            Matrix e = Matrix::Zero(n, n);
            e(nf + i, nf + j) = e(nf + j, nf + i) = 1.0;
            basis.push_back(std::move(e));
        }
    const auto np = static_cast<Eigen::Index>(basis.size());
    const Eigen::Index m = np + 1;

    std::vector<detail::LmiBlock> blocks(4);
    blocks[0].f0 = Matrix::Zero(n, n);
    blocks[1].f0 = Matrix::Zero(n, n);
    blocks[2].f0 = Matrix::Zero(nr, nr);
    blocks[3].f0 = Matrix::Constant(1, 1, static_cast<double>(n));
    for (const auto& e : basis) {
        blocks[0].fk.push_back(-(ab.transpose() * e + e * ab));
        blocks[1].fk.push_back(e);
        const Matrix er = e.bottomRightCorner(nr, nr);
        blocks[2].fk.push_back(er - a_rho.transpose() * er * a_rho);
        blocks[3].fk.push_back(Matrix::Constant(1, 1, -e.trace()));
    }
    blocks[0].fk.push_back(Matrix::Identity(n, n));
    blocks[1].fk.push_back(Matrix::Identity(n, n));
    blocks[2].fk.push_back(Matrix::Identity(nr, nr));
    blocks[3].fk.push_back(Matrix::Zero(1, 1));

    auto assemble = [&](const Vector& v) {
        Matrix p = Matrix::Zero(n, n);
        for (Eigen::Index k = 0; k < np; ++k) p += v(k) * basis[static_cast<std::size_t>(k)];
        return p;
    };

    // strictly feasible start: P = I/2 with beta = 0, t above every eigenvalue
    Vector v = Vector::Zero(m);
    {
        Eigen::Index k = 0;
        for (Eigen::Index i = 0; i < nf; ++i)
            for (Eigen::Index j = i; j < nf; ++j, ++k) v(k) = (i == j) ? 0.5 : 0.0;
        k += nr;
        for (Eigen::Index i = 0; i < nr; ++i)
            for (Eigen::Index j = i; j < nr; ++j, ++k) v(k) = (i == j) ? 0.5 : 0.0;
        const Matrix p0 = assemble(v);
        const Matrix q0 = ab.transpose() * p0 + p0 * ab;
        const double top = Eigen::SelfAdjointEigenSolver<Matrix>(q0, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
        v(m - 1) = std::max(1.0, 2.0 * std::abs(top) + 1.0);
    }
    Vector cost = Vector::Zero(m);
    cost(m - 1) = 1.0;

    auto to_original = [&](const Vector& x, Matrix& p, Matrix& p_rho, Vector& beta) {
        const Matrix pb = assemble(x);
        p = d.cwiseInverse().asDiagonal() * pb * d.cwiseInverse().asDiagonal();
        p = 0.5 * (p + p.transpose());
        p_rho = p.bottomRightCorner(nr, nr);
        // re-impose the pinned rows exactly: P_{r,surface} = beta C_p, P_{r,nr} = 0
        beta = Vector(nr);
        const double cp2 = part.C_p.squaredNorm();
        for (Eigen::Index k = 0; k < nr; ++k) {
            const RowVector row = p.block(nf + k, 0, 1, part.n_p);
            beta(k) = cp2 > 0.0 ? row.dot(part.C_p) / cp2 : 0.0;
        }
        p.block(nf, 0, nr, part.n_p) = beta * part.C_p;
        p.block(0, nf, part.n_p, nr) = (beta * part.C_p).transpose();
        p.block(nf, part.n_p, nr, part.n_nr).setZero();
        p.block(part.n_p, nf, part.n_nr, nr).setZero();
    };

    const auto outcome = detail::barrier_minimize(blocks, cost, v, opt, [&](const Vector& x) {
        if (x(m - 1) >= 0.0) return false;
        Matrix p, p_rho;
        Vector beta;
        to_original(x, p, p_rho, beta);
        return accept(p, p_rho, beta, "barrier");
    });
    res.best_objective = outcome.objective;
    if (res.status != StabilityStatus::Certified) {
        res.message = "no certificate found; best objective t = " + fmt_num(outcome.objective) +
                      (outcome.objective >= 0.0 ? " (no strictly feasible point located)"
                                                : " (candidate failed verification at the requested slack)");
    }
    return res;
}

inline StabilityResult quadratic_stability_search(const ClosedLoopPartition& part,
                                                  const StabilitySearchOptions& opt = {}) {
    return quadratic_stability_search(part, part.reset_matrix(), opt);
}

/// Closes the loop, partitions it and runs the search.
inline StabilityResult chain_stability(const ControllerChain& chain, const PlantModel& plant,
                                       ResetTrigger trigger = ResetTrigger::ElementInput,
                                       const StabilitySearchOptions& opt = {}) {
    return quadratic_stability_search(partition_closed_loop(close_loop(chain, plant, trigger)), opt);
}

// ============================================================================
// JSON
// ============================================================================

inline nlohmann::json matrix_json(const Matrix& m) {
    nlohmann::json data = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
    const auto r = j.at("rows").get<Eigen::Index>();
    const auto c = j.at("cols").get<Eigen::Index>();
    const auto& d = j.at("data");
    if (static_cast<Eigen::Index>(d.size()) != r * c) throw InvalidConfig("matrix data length mismatch");
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index k = 0; k < c; ++k) m(i, k) = d.at(static_cast<std::size_t>(i * c + k)).get<double>();
    return m;
}

inline nlohmann::json to_json(const ClosedLoopPartition& part) {
    return {{"n_p", part.n_p},
            {"n_nr", part.n_nr},
            {"n_r", part.n_r},
            {"permutation", part.permutation},
            {"C_p", matrix_json(part.C_p)},
            {"A_cl_ordered", matrix_json(part.ordered_A())}};
}

inline nlohmann::json to_json(const StabilityResult& r, double slack = 1e-8) {
    nlohmann::json j;
    j["status"] = to_string(r.status);
    nlohmann::json eig = nlohmann::json::array();
    for (const auto& e : r.base.eigenvalues) eig.push_back({e.real(), e.imag()});
    j["base_linear"] = {{"stable", r.base.stable}, {"max_real", r.base.max_real}, {"eigenvalues", eig}};
    if (!r.message.empty()) j["message"] = r.message;
    if (std::isfinite(r.best_objective)) j["best_objective"] = r.best_objective;
    if (r.certificate) {
        const auto& c = *r.certificate;
        j["certificate"] = {{"method", c.method},
                            {"P", matrix_json(c.P)},
                            {"P_rho", matrix_json(c.P_rho)},
                            {"beta", matrix_json(c.beta)},
                            {"slack", slack},
                            {"margins",
                             {{"p_min_eig", c.margins.p_min_eig},
                              {"lyapunov_max_eig", c.margins.lyapunov_max_eig},
                              {"equality_residual", c.margins.equality_residual},
                              {"reset_max_eig", c.margins.reset_max_eig},
                              {"p_scale", c.margins.p_scale},
                              {"lyapunov_scale", c.margins.lyapunov_scale},
                              {"p_rho_scale", c.margins.p_rho_scale}}}};
    }
    return j;
}

} // namespace resetlab
