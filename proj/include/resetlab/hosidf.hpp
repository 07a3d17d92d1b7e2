#pragma once

#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "elements.hpp"
#include "format.hpp"
#include "parallel.hpp"
#include "state_space.hpp"

namespace resetlab {

// ============================================================================
// Kernel matrices of the higher-order sinusoidal input describing function
// ============================================================================
//
// For a reset system driven by sin(w t) with resets at the input zero
// crossings, the steady-state harmonics follow from
//
//   E        = exp((pi / w) A)
//   Lambda   = w^2 I + A^2
//   Delta    = I + E
//   Delta_r  = I + A_rho E
//   Gamma_r  = Delta_r^{-1} A_rho Delta Lambda^{-1}
//   Theta_D  = -(2 w^2 / pi) Delta (Gamma_r - Lambda^{-1})

struct HosidfKernel {
    double omega = 0.0;
    Matrix expm;
    Matrix lambda;
    Matrix delta;
    Matrix delta_r;
    Matrix gamma_r;
    Matrix theta_d;
};

namespace detail {

inline double condition_number(const Matrix& m) {
    if (m.rows() == 0) return 1.0;
    Eigen::JacobiSVD<Matrix> svd(m);
    const auto& s = svd.singularValues();
    const double smin = s(s.size() - 1);
    return smin > 0.0 ? s(0) / smin : std::numeric_limits<double>::infinity();
}

} // namespace detail

inline constexpr double kDefaultConditionLimit = 1e12;

inline HosidfKernel hosidf_kernel(const ResetSystem& sys, double omega,
                                  double condition_limit = kDefaultConditionLimit) {
    if (!(omega > 0.0)) throw InvalidConfig("HOSIDF frequency must be positive");
    const Matrix& a = sys.base().A();
    const auto n = a.rows();
    const Matrix id = Matrix::Identity(n, n);
    const Matrix a_rho = sys.reset_matrix();

    HosidfKernel k;
    k.omega = omega;
    k.expm = (a * (std::numbers::pi / omega)).exp();
    k.lambda = omega * omega * id + a * a;
    k.delta = id + k.expm;
    k.delta_r = id + a_rho * k.expm;

    if (const double c = detail::condition_number(k.lambda); !(c < condition_limit)) {
        throw NearSingularFrequency(NearSingularFrequency::Which::Lambda, omega, c);
    }
    if (const double c = detail::condition_number(k.delta_r); !(c < condition_limit)) {
        throw NearSingularFrequency(NearSingularFrequency::Which::DeltaR, omega, c);
    }

    const Matrix lambda_inv = k.lambda.partialPivLu().inverse();
    k.gamma_r = k.delta_r.partialPivLu().solve(a_rho * k.delta * lambda_inv);
    k.theta_d = -(2.0 * omega * omega / std::numbers::pi) * k.delta * (k.gamma_r - lambda_inv);
    return k;
}

/// n-th harmonic describing function from a precomputed kernel.
inline Complex describing_function(const ResetSystem& sys, const HosidfKernel& kernel, int n) {
    if (n < 1) throw InvalidConfig("harmonic order must be >= 1");
    if (n % 2 == 0) return {0.0, 0.0};

    const auto& base = sys.base();
    const auto dim = base.order();
    if (dim == 0) return n == 1 ? Complex(base.D()) : Complex(0.0);

    const Complex j(0.0, 1.0);
    const ComplexMatrix theta = kernel.theta_d.cast<Complex>();
    const Eigen::VectorXcd b = base.B().cast<Complex>();
    Eigen::VectorXcd rhs = j * (theta * b);
    if (n == 1) rhs += b;

    const double w = kernel.omega * n;
    ComplexMatrix resolvent = j * w * ComplexMatrix::Identity(dim, dim) - base.A().cast<Complex>();
    Eigen::FullPivLU<ComplexMatrix> lu(resolvent);
    if (!lu.isInvertible() || lu.rcond() < 1e-14) {
        throw SingularResolvent("j*" + std::to_string(w) + " is an eigenvalue of A");
    }
    Complex g = (base.C().cast<Complex>() * lu.solve(rhs))(0);
    if (n == 1) g += base.D();
    return g;
}

inline Complex describing_function(const ResetSystem& sys, int n, double omega) {
    if (n < 1) throw InvalidConfig("harmonic order must be >= 1");
    if (!(omega > 0.0)) throw InvalidConfig("HOSIDF frequency must be positive");
    if (n % 2 == 0) return {0.0, 0.0};
    return describing_function(sys, hosidf_kernel(sys, omega), n);
}

// ============================================================================
// Frequency sweeps
// ============================================================================

/// Per-order complex response on a strictly increasing frequency grid.
/// Points that could not be evaluated are NaN and listed in `gaps`.
struct HarmonicResponse {
    std::string source;
    std::vector<double> omega;
    std::vector<int> orders;
    std::vector<std::vector<Complex>> values; // [order index][frequency index]
    std::vector<std::size_t> gaps;

    [[nodiscard]] std::size_t order_index(int order) const {
        for (std::size_t i = 0; i < orders.size(); ++i) {
            if (orders[i] == order) return i;
        }
        throw InvalidConfig("order " + std::to_string(order) + " not present in response");
    }

    [[nodiscard]] const std::vector<Complex>& at_order(int order) const { return values[order_index(order)]; }

    [[nodiscard]] bool is_gap(std::size_t k) const {
        for (auto g : gaps)
            if (g == k) return true;
        return false;
    }
};

inline bool is_nan(Complex z) { return std::isnan(z.real()) || std::isnan(z.imag()); }

/// Logarithmic grid with `points` samples over [lo, hi].
inline std::vector<double> log_grid(double lo, double hi, std::size_t points) {
    if (!(lo > 0.0) || !(hi > lo) || points < 2) throw InvalidConfig("invalid logarithmic grid");
    std::vector<double> g(points);
    const double a = std::log10(lo), b = std::log10(hi);
    for (std::size_t i = 0; i < points; ++i) {
        g[i] = std::pow(10.0, a + (b - a) * static_cast<double>(i) / static_cast<double>(points - 1));
    }
    g.front() = lo;
    g.back() = hi;
    return g;
}

/// 500 log-spaced points over [0.1, 1e4] rad/s.
inline std::vector<double> default_grid() { return log_grid(1e-1, 1e4, 500); }

namespace detail {

inline void validate_grid(const std::vector<double>& grid) {
    if (grid.empty()) throw InvalidConfig("empty frequency grid");
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (!(grid[i] > 0.0)) throw InvalidConfig("grid frequencies must be positive");
        if (i > 0 && !(grid[i] > grid[i - 1])) throw InvalidConfig("grid must be strictly increasing");
    }
}

inline void validate_orders(const std::vector<int>& orders) {
    if (orders.empty()) throw InvalidConfig("no harmonic orders requested");
    for (int n : orders)
        if (n < 1) throw InvalidConfig("harmonic order must be >= 1");
}

} // namespace detail

/// Evaluates every requested order at every grid point. Frequencies where the
/// kernel is singular are recorded as gaps; a caller that prefers to step
/// around them can set `nudge_singular` to retry once at w (1 + 1e-9).
inline HarmonicResponse hosidf_sweep(const ResetSystem& sys, const std::vector<int>& orders,
                                     const std::vector<double>& grid, std::string source = {},
                                     bool nudge_singular = false, unsigned threads = default_thread_count()) {
    detail::validate_grid(grid);
    detail::validate_orders(orders);

    HarmonicResponse r;
    r.source = std::move(source);
    r.omega = grid;
    r.orders = orders;
    const Complex nan(std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN());
    r.values.assign(orders.size(), std::vector<Complex>(grid.size(), nan));
    std::vector<char> failed(grid.size(), 0);

    parallel_for(
        grid.size(),
        [&](std::size_t k) {
            auto eval = [&](double w) {
                const HosidfKernel kern = hosidf_kernel(sys, w);
                for (std::size_t o = 0; o < orders.size(); ++o) {
                    r.values[o][k] = describing_function(sys, kern, orders[o]);
                }
            };
            try {
                eval(grid[k]);
            } catch (const Error&) {
                if (!nudge_singular) {
                    failed[k] = 1;
                    return;
                }
                try {
                    eval(grid[k] * (1.0 + 1e-9));
                } catch (const Error&) {
                    failed[k] = 1;
                }
            }
        },
        threads);

    for (std::size_t k = 0; k < grid.size(); ++k) {
        if (failed[k]) {
            r.gaps.push_back(k);
            for (auto& row : r.values) row[k] = nan;
        }
    }
    return r;
}

/// L_n(w) = G_n(w) C(n w) P(n w): the linear controller part and the plant are
/// evaluated at the harmonic frequency.
inline HarmonicResponse open_loop_hosidf(const HarmonicResponse& controller_df, const StateSpaceModel& linear_controller,
                                         const StateSpaceModel& plant, const std::vector<double>& grid) {
    if (grid.size() != controller_df.omega.size()) {
        throw DimensionMismatch("controller response grid has " + std::to_string(controller_df.omega.size()) +
                                " points, expected " + std::to_string(grid.size()));
    }
    for (std::size_t k = 0; k < grid.size(); ++k) {
        if (grid[k] != controller_df.omega[k]) throw DimensionMismatch("frequency grids disagree");
    }
    HarmonicResponse out = controller_df;
    out.source = controller_df.source.empty() ? "open-loop" : controller_df.source + " open-loop";
    for (std::size_t o = 0; o < out.orders.size(); ++o) {
        const int n = out.orders[o];
        for (std::size_t k = 0; k < grid.size(); ++k) {
            const Complex g = controller_df.values[o][k];
            if (is_nan(g)) continue;
            if (g == Complex(0.0)) {
                out.values[o][k] = 0.0;
                continue;
            }
            const double w = n * grid[k];
            out.values[o][k] = g * linear_freq_response(linear_controller, w) * linear_freq_response(plant, w);
        }
    }
    return out;
}

/// Phase in degrees, unwrapped along the grid and anchored at the lowest
/// frequency (the first value lies in (-180, 180]). Gaps and exact zeros are NaN.
inline std::vector<double> unwrapped_phase_deg(const std::vector<Complex>& values) {
    std::vector<double> out(values.size(), std::numeric_limits<double>::quiet_NaN());
    std::optional<double> prev;
    for (std::size_t k = 0; k < values.size(); ++k) {
        const Complex z = values[k];
        if (is_nan(z) || z == Complex(0.0)) continue;
        double p = std::arg(z) * 180.0 / std::numbers::pi;
        if (prev) {
            while (p - *prev > 180.0) p -= 360.0;
            while (p - *prev <= -180.0) p += 360.0;
        }
        out[k] = p;
        prev = p;
    }
    return out;
}

inline double wrap_deg(double deg) {
    double w = std::fmod(deg + 180.0, 360.0);
    if (w <= 0.0) w += 360.0;
    return w - 180.0;
}

inline double magnitude_db(Complex z) { return 20.0 * std::log10(std::abs(z)); }

struct PhaseMargin {
    double omega_c = 0.0;
    double margin_deg = 0.0;
};

/// First-harmonic phase margin. The magnitude must cross 1 exactly once on the
/// grid; the crossover is located by interpolating log|L| against log w.
inline PhaseMargin phase_margin(const HarmonicResponse& open_loop) {
    const auto& l1 = open_loop.at_order(1);
    const auto& w = open_loop.omega;
    const auto phase = unwrapped_phase_deg(l1);

    std::vector<std::size_t> crossings;
    for (std::size_t k = 0; k + 1 < w.size(); ++k) {
        if (is_nan(l1[k]) || is_nan(l1[k + 1])) continue;
        const double a = std::log(std::abs(l1[k]));
        const double b = std::log(std::abs(l1[k + 1]));
        if ((a > 0.0 && b <= 0.0) || (a < 0.0 && b >= 0.0) || (a == 0.0 && k == 0)) crossings.push_back(k);
    }
    if (crossings.empty()) throw NoCrossover("first-harmonic magnitude never crosses 1 on the grid");
    if (crossings.size() > 1) {
        throw MultipleCrossovers(std::to_string(crossings.size()) + " gain crossovers on the grid");
    }
    const std::size_t k = crossings.front();
    const double a = std::log(std::abs(l1[k]));
    const double b = std::log(std::abs(l1[k + 1]));
    const double frac = a == b ? 0.0 : a / (a - b);
    const double lw = std::log(w[k]) + frac * (std::log(w[k + 1]) - std::log(w[k]));
    const double ph = phase[k] + frac * (phase[k + 1] - phase[k]);
    return {std::exp(lw), wrap_deg(180.0 + ph)};
}

/// Frequency at which the SOSRE reset has no steady-state effect: the
/// resetting state's response is in phase with the input exactly at w_ra.
/// FORE and conventional SORE have no such frequency (FORE only at w = 0).
inline std::optional<double> linear_behavior_frequency(const CgLpConfig& cfg) {
    if (cfg.kind != CgLpKind::SOSRE) return std::nullopt;
    return cfg.omega_ralpha;
}

/// CSV with columns omega_rad_s, order, re, im, mag_db, phase_deg (one row per
/// order and frequency). Gaps are written as "nan"; exact zeros as -inf dB and
/// phase 0.
inline void write_csv(std::ostream& os, const HarmonicResponse& r) {
    os << "omega_rad_s,order,re,im,mag_db,phase_deg\n";
    for (std::size_t o = 0; o < r.orders.size(); ++o) {
        const auto phase = unwrapped_phase_deg(r.values[o]);
        for (std::size_t k = 0; k < r.omega.size(); ++k) {
            const Complex z = r.values[o][k];
            os << fmt_num(r.omega[k]) << ',' << r.orders[o] << ',' << fmt_num(z.real()) << ',' << fmt_num(z.imag())
               << ',';
            if (is_nan(z)) {
                os << "nan,nan\n";
            } else if (z == Complex(0.0)) {
                os << "-inf,0\n";
            } else {
                os << fmt_num(magnitude_db(z)) << ',' << fmt_num(phase[k]) << '\n';
            }
        }
    }
}

} // namespace resetlab
