#pragma once

#include <cmath>
#include <complex>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"

namespace resetlab {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Complex = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;

/// SISO continuous-time LTI block: x' = A x + B e, u = C x + D e.
class StateSpaceModel {
public:
    StateSpaceModel() = default;

    StateSpaceModel(Matrix a, Vector b, RowVector c, double d)
        : a_(std::move(a)), b_(std::move(b)), c_(std::move(c)), d_(d) {
        const auto n = a_.rows();
        if (a_.cols() != n || b_.size() != n || c_.size() != n) {
            throw DimensionMismatch("state-space matrices disagree on the state dimension");
        }
        if (!a_.allFinite() || !b_.allFinite() || !c_.allFinite() || !std::isfinite(d_)) {
            throw InvalidConfig("state-space matrices contain non-finite entries");
        }
    }

    /// Pure gain block with no states.
    static StateSpaceModel gain(double k) { return {Matrix(0, 0), Vector(0), RowVector(0), k}; }

    [[nodiscard]] const Matrix& A() const noexcept { return a_; }
    [[nodiscard]] const Vector& B() const noexcept { return b_; }
    [[nodiscard]] const RowVector& C() const noexcept { return c_; }
    [[nodiscard]] double D() const noexcept { return d_; }
    [[nodiscard]] Eigen::Index order() const noexcept { return a_.rows(); }

private:
    Matrix a_{0, 0};
    Vector b_{0};
    RowVector c_{0};
    double d_ = 0.0;
};

/// A base linear system whose states jump x <- A_rho x when its input crosses zero.
/// The reset matrix is diagonal and stored as its diagonal.
class ResetSystem {
public:
    ResetSystem() = default;

    ResetSystem(StateSpaceModel base, Vector gamma) : base_(std::move(base)), gamma_(std::move(gamma)) {
        if (gamma_.size() != base_.order()) {
            throw DimensionMismatch("reset matrix dimension " + std::to_string(gamma_.size()) +
                                    " differs from state dimension " + std::to_string(base_.order()));
        }
        if (!gamma_.allFinite()) {
            throw InvalidConfig("reset coefficients must be finite");
        }
    }

    /// Linear block viewed as a reset system that never changes its state (A_rho = I).
    static ResetSystem linear(StateSpaceModel base) {
        Vector ones = Vector::Ones(base.order());
        return {std::move(base), std::move(ones)};
    }

    [[nodiscard]] const StateSpaceModel& base() const noexcept { return base_; }
    [[nodiscard]] const Vector& gamma() const noexcept { return gamma_; }
    [[nodiscard]] Matrix reset_matrix() const { return gamma_.asDiagonal(); }
    [[nodiscard]] Eigen::Index order() const noexcept { return base_.order(); }

    [[nodiscard]] bool is_identity_reset() const { return (gamma_.array() == 1.0).all(); }

    /// Same base system with every reset coefficient replaced by 1.
    [[nodiscard]] ResetSystem with_identity_reset() const { return linear(base_); }

    /// Indices of states with gamma != 1.
    [[nodiscard]] std::vector<Eigen::Index> resetting_states() const {
        std::vector<Eigen::Index> idx;
        for (Eigen::Index i = 0; i < gamma_.size(); ++i) {
            if (gamma_[i] != 1.0) {
                idx.push_back(i);
            }
        }
        return idx;
    }

    /// Reset coefficients outside [-1, 1] are legal but flagged; stability is certified separately.
    [[nodiscard]] std::vector<std::string> validation_warnings() const {
        std::vector<std::string> out;
        for (Eigen::Index i = 0; i < gamma_.size(); ++i) {
            if (std::abs(gamma_[i]) > 1.0) {
                out.push_back("gamma_" + std::to_string(i + 1) + "=" + std::to_string(gamma_[i]) +
                              " lies outside [-1, 1]");
            }
        }
        return out;
    }

private:
    StateSpaceModel base_;
    Vector gamma_{0};
};

using Block = std::variant<StateSpaceModel, ResetSystem>;

inline ResetSystem as_reset_system(const Block& block) {
    return std::visit(
        [](const auto& b) -> ResetSystem {
            if constexpr (std::is_same_v<std::decay_t<decltype(b)>, ResetSystem>) {
                return b;
            } else {
                return ResetSystem::linear(b);
            }
        },
        block);
}

/// Series connection in signal-path order: blocks[0] receives the input.
/// States are stacked in the same order and the reset matrix is block-diagonal,
/// with identity on every state that came from a linear block.
inline ResetSystem series_compose(std::span<const Block> blocks) {
    Matrix a(0, 0);
    Vector b(0);
    RowVector c(0);
    double d = 1.0;
    Vector gamma(0);

    for (const auto& blk : blocks) {
        const ResetSystem next = as_reset_system(blk);
        const auto& s = next.base();
        const auto n = a.rows();
        const auto m = s.order();

        Matrix an = Matrix::Zero(n + m, n + m);
        an.topLeftCorner(n, n) = a;
        an.bottomRightCorner(m, m) = s.A();
        an.bottomLeftCorner(m, n) = s.B() * c;

        Vector bn(n + m);
        bn << b, s.B() * d;
        RowVector cn(n + m);
        cn << s.D() * c, s.C();
        Vector gn(n + m);
        gn << gamma, next.gamma();

        a = std::move(an);
        b = std::move(bn);
        c = std::move(cn);
        d = s.D() * d;
        gamma = std::move(gn);
    }
    return {StateSpaceModel(std::move(a), std::move(b), std::move(c), d), std::move(gamma)};
}

inline ResetSystem series_compose(std::initializer_list<Block> blocks) {
    return series_compose(std::span<const Block>(blocks.begin(), blocks.size()));
}

namespace detail {

// Symmetric diagonal scaling (Osborne): D^-1 A D with powers of two.
inline Vector balance_scaling(const Matrix& a) {
    const auto n = a.rows();
    Vector d = Vector::Ones(n);
    Matrix b = a;
    for (int sweep = 0; sweep < 100; ++sweep) {
        bool changed = false;
        for (Eigen::Index i = 0; i < n; ++i) {
            double c = 0.0, r = 0.0;
            for (Eigen::Index j = 0; j < n; ++j) {
                if (j == i) continue;
                c += std::abs(b(j, i));
                r += std::abs(b(i, j));
            }
            if (c == 0.0 || r == 0.0) continue;
            double f = 1.0;
            const double s = c + r;
            while (c < r / 2.0) {
                c *= 2.0;
                r /= 2.0;
                f *= 2.0;
            }
            while (c >= r * 2.0) {
                c /= 2.0;
                r *= 2.0;
                f /= 2.0;
            }
            if ((c + r) < 0.95 * s) {
                changed = true;
                d(i) *= f;
                b.col(i) *= f;
                b.row(i) /= f;
            }
        }
        if (!changed) break;
    }
    return d;
}

} // namespace detail

/// Evaluates C (sI - A)^{-1} B + D at an arbitrary complex point.
inline Complex transfer_at(const StateSpaceModel& model, Complex s) {
    const auto n = model.order();
    if (n == 0) {
        return model.D();
    }
    // balanced realization D^-1 A D: same transfer, meaningful rcond
    const Vector d = detail::balance_scaling(model.A());
    const Matrix ab = d.cwiseInverse().asDiagonal() * model.A() * d.asDiagonal();
    ComplexMatrix m = s * ComplexMatrix::Identity(n, n) - ab.cast<Complex>();
    Eigen::FullPivLU<ComplexMatrix> lu(m);
    if (!lu.isInvertible() || lu.rcond() < 1e-14) {
        throw SingularResolvent("s=" + std::to_string(s.real()) + (s.imag() < 0 ? "" : "+") +
                                std::to_string(s.imag()) + "j is (numerically) a pole");
    }
    const Vector bb = d.cwiseInverse().asDiagonal() * model.B();
    const RowVector cb = model.C() * d.asDiagonal();
    const Eigen::VectorXcd x = lu.solve(bb.cast<Complex>());
    return (cb.cast<Complex>() * x)(0) + model.D();
}

/// Frequency response at s = j omega.
inline Complex linear_freq_response(const StateSpaceModel& model, double omega) {
    return transfer_at(model, Complex(0.0, omega));
}

} // namespace resetlab
