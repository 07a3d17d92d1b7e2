#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <boost/math/tools/roots.hpp>

#include "elements.hpp"
#include "hosidf.hpp"
#include "state_space.hpp"

namespace resetlab {

/// Which signal fires the resets in a closed loop.
enum class ResetTrigger {
    ElementInput, ///< zero crossings of the reset element's own input (tamed-derivative output)
    LoopError,    ///< zero crossings of e = r - y
};

/// Controller of the form
///   e -> tamed derivative -> [CgLp | low-pass] -> k_p (1 + w_i / s) -> plant
struct ControllerChain {
    std::string name;
    double k_p = 1.0;
    double omega_i = 10.0;
    double omega_d = 10.0;
    double omega_t = 1000.0;
    std::optional<ResetSystem> cglp;
    std::optional<StateSpaceModel> lowpass;
    bool proportional_only = false; ///< plain gain k_p, no derivative or integrator

    void validate() const {
        if (!(k_p >= 0.0) || !std::isfinite(k_p)) throw InvalidConfig("k_p must be finite and non-negative");
        if (proportional_only) return;
        if (!(omega_i > 0.0)) throw InvalidConfig("omega_i must be positive");
        if (!(omega_d > 0.0) || !(omega_t > omega_d)) throw InvalidConfig("need omega_t > omega_d > 0");
    }

    /// Blocks in signal-path order.
    [[nodiscard]] std::vector<Block> blocks() const {
        std::vector<Block> out;
        if (!proportional_only) out.emplace_back(tamed_derivative(omega_d, omega_t));
        if (cglp) out.emplace_back(*cglp);
        if (lowpass) out.emplace_back(*lowpass);
        out.emplace_back(proportional_only ? StateSpaceModel::gain(k_p) : proportional_integral(k_p, omega_i));
        return out;
    }

    /// Position of the CgLp in blocks(), if any.
    [[nodiscard]] std::optional<std::size_t> reset_block() const {
        if (!cglp) return std::nullopt;
        return proportional_only ? 0u : 1u;
    }

    /// Whole controller realized as one reset system (block-diagonal A_rho).
    [[nodiscard]] ResetSystem controller() const { return series_compose(blocks()); }

    /// Every linear block of the chain (all but the CgLp), as one model.
    [[nodiscard]] StateSpaceModel linear_part() const {
        std::vector<Block> lin;
        for (const auto& b : blocks())
            if (std::holds_alternative<StateSpaceModel>(b)) lin.push_back(b);
        return series_compose(lin).base();
    }

    /// Same chain with the CgLp replaced by its base linear system.
    [[nodiscard]] ControllerChain base_linear() const {
        ControllerChain c = *this;
        if (c.cglp) c.cglp = c.cglp->with_identity_reset();
        return c;
    }

    /// First-harmonic controller response C(w) (DF of the CgLp times the linear part).
    [[nodiscard]] Complex first_harmonic(double omega) const {
        Complex g = linear_freq_response(linear_part(), omega);
        if (cglp) {
            g *= cglp->is_identity_reset() ? linear_freq_response(cglp->base(), omega)
                                           : describing_function(*cglp, 1, omega);
        }
        return g;
    }
};

struct ChainTargets {
    double bandwidth = 100.0;        ///< target crossover w_c [rad/s]
    double phase_margin_deg = 45.0;  ///< for the base linear loop
    double integrator_ratio = 10.0;  ///< w_i = w_c / ratio
    std::optional<LowpassSpec> lowpass;
};

namespace detail {

// Gain crossover of f(w) closest to w_c (log distance), refined by root finding.
template <typename F>
std::optional<double> crossover_near(F&& f, double w_c) {
    const auto grid = log_grid(w_c / 100.0, w_c * 100.0, 2001);
    auto g = [&](double lw) { return std::log(std::abs(f(std::exp(lw)))); };
    std::optional<double> best;
    double prev = g(std::log(grid[0]));
    for (std::size_t k = 1; k < grid.size(); ++k) {
        const double cur = g(std::log(grid[k]));
        if ((prev > 0.0) != (cur > 0.0)) {
            std::uintmax_t iters = 100;
            const auto r = boost::math::tools::toms748_solve(g, std::log(grid[k - 1]), std::log(grid[k]), prev, cur,
                                                             boost::math::tools::eps_tolerance<double>(48), iters);
            const double wc = std::exp(0.5 * (r.first + r.second));
            if (!best || std::abs(std::log(wc / w_c)) < std::abs(std::log(*best / w_c))) best = wc;
        }
        prev = cur;
    }
    return best;
}

} // namespace detail

/// Phase margin [deg] of a scalar loop function at its crossover closest to w_c.
template <typename F>
std::optional<PhaseMargin> loop_phase_margin(F&& loop, double w_c) {
    const auto wc = detail::crossover_near(loop, w_c);
    if (!wc) return std::nullopt;
    return PhaseMargin{*wc, wrap_deg(180.0 + std::arg(loop(*wc)) * 180.0 / std::numbers::pi)};
}

/// Tunes the chain of the form tamed derivative -> CgLp -> PI -> plant:
///   w_i = w_c / 10,
///   w_d = w_c / a, w_t = w_c a with a in [1.01, 20] chosen so the base linear
///   loop (A_rho = I) has the requested phase margin,
///   k_p making the first-harmonic open-loop gain exactly 1 at w_c.
/// When the plain proportional loop already meets the margin at w_c the chain
/// degenerates to a pure gain.
inline ControllerChain make_pid_chain(const PlantModel& plant, const std::optional<ResetSystem>& cglp,
                                      const ChainTargets& targets, std::string name = {}) {
    const double wc = targets.bandwidth;
    if (!(wc > 0.0)) throw InvalidConfig("bandwidth must be positive");
    const auto& p = plant.model();

    ControllerChain chain;
    chain.name = std::move(name);
    chain.cglp = cglp;
    if (targets.lowpass) chain.lowpass = lowpass(*targets.lowpass);
    chain.omega_i = wc / targets.integrator_ratio;

    if (!cglp && !targets.lowpass) {
        const Complex pw = linear_freq_response(p, wc);
        if (wrap_deg(180.0 + std::arg(pw) * 180.0 / std::numbers::pi) >= targets.phase_margin_deg) {
            chain.proportional_only = true;
            chain.k_p = 1.0 / std::abs(pw);
            chain.omega_d = chain.omega_t = wc;
            return chain;
        }
    }

    auto configure = [&](double a) {
        ControllerChain c = chain;
        c.omega_d = wc / a;
        c.omega_t = wc * a;
        c.k_p = 1.0;
        const double gain = std::abs(c.first_harmonic(wc) * linear_freq_response(p, wc));
        c.k_p = 1.0 / gain;
        return c;
    };
    auto margin_error = [&](double a) {
        const ControllerChain c = configure(a).base_linear();
        const StateSpaceModel lin = c.linear_part();
        const auto pm = loop_phase_margin(
            [&](double w) {
                Complex l = linear_freq_response(lin, w) * linear_freq_response(p, w);
                if (c.cglp) l *= linear_freq_response(c.cglp->base(), w);
                return l;
            },
            wc);
        if (!pm) throw TuningFailed("base linear loop has no gain crossover near " + std::to_string(wc));
        return pm->margin_deg - targets.phase_margin_deg;
    };

    constexpr double a_lo = 1.01, a_hi = 20.0;
    const double e_lo = margin_error(a_lo);
    const double e_hi = margin_error(a_hi);
    if ((e_lo > 0.0) == (e_hi > 0.0)) {
        throw TuningFailed("no taming ratio in [1.01, 20] reaches a phase margin of " +
                           std::to_string(targets.phase_margin_deg) + " deg");
    }
    std::uintmax_t iters = 200;
    const auto r = boost::math::tools::toms748_solve(margin_error, a_lo, a_hi, e_lo, e_hi,
                                                     boost::math::tools::eps_tolerance<double>(50), iters);
    return configure(0.5 * (r.first + r.second));
}

// ============================================================================
// Closed-loop realization (controller states first, then plant states)
// ============================================================================

struct ClosedLoopRealization {
    Matrix A;
    Vector B; ///< reference input
    RowVector c_y, c_e, c_u;
    double d_e = 1.0, d_u = 0.0;
    RowVector c_trigger;
    double d_trigger = 0.0;
    Vector gamma;               ///< per-state reset factor, 1 outside the CgLp
    Eigen::Index controller_states = 0;
    Eigen::Index plant_states = 0;
    Eigen::Index cglp_offset = 0; ///< first CgLp state inside the controller
    Eigen::Index cglp_states = 0;
};

inline ClosedLoopRealization close_loop(const ControllerChain& chain, const PlantModel& plant,
                                        ResetTrigger trigger = ResetTrigger::ElementInput) {
    chain.validate();
    const auto& p = plant.model();
    if (p.D() != 0.0) throw DimensionMismatch("plant with direct feedthrough forms an algebraic loop");

    const auto blocks = chain.blocks();
    const ResetSystem ctrl = series_compose(blocks);
    const auto& c = ctrl.base();
    const auto nc = c.order();
    const auto np = p.order();
    const auto n = nc + np;

    ClosedLoopRealization cl;
    cl.controller_states = nc;
    cl.plant_states = np;
    cl.A = Matrix::Zero(n, n);
    cl.A.topLeftCorner(nc, nc) = c.A();
    cl.A.topRightCorner(nc, np) = -c.B() * p.C();
    cl.A.bottomLeftCorner(np, nc) = p.B() * c.C();
    cl.A.bottomRightCorner(np, np) = p.A() - p.B() * c.D() * p.C();
    cl.B = Vector(n);
    cl.B << c.B(), p.B() * c.D();

    cl.c_y = RowVector::Zero(n);
    cl.c_y.tail(np) = p.C();
    cl.c_e = -cl.c_y;
    cl.d_e = 1.0;
    cl.c_u = RowVector(n);
    cl.c_u << c.C(), -c.D() * p.C();
    cl.d_u = c.D();

    cl.gamma = Vector::Ones(n);
    cl.gamma.head(nc) = ctrl.gamma();

    cl.c_trigger = cl.c_e;
    cl.d_trigger = 1.0;
    if (const auto rb = chain.reset_block()) {
        const std::vector<Block> prefix(blocks.begin(), blocks.begin() + static_cast<std::ptrdiff_t>(*rb));
        const ResetSystem pre = series_compose(prefix);
        cl.cglp_offset = pre.order();
        cl.cglp_states = chain.cglp->order();
        if (trigger == ResetTrigger::ElementInput) {
            // CgLp input = prefix output = C_pre x_pre + D_pre e, e = r - y
            cl.c_trigger = RowVector::Zero(n);
            cl.c_trigger.head(pre.order()) = pre.base().C();
            cl.c_trigger += pre.base().D() * cl.c_e;
            cl.d_trigger = pre.base().D();
        }
    }
    return cl;
}

} // namespace resetlab
