#pragma once

#include <cctype>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "state_space.hpp"

namespace resetlab {

enum class CgLpKind { FORE, SORE, SOSRE };

inline std::string_view to_string(CgLpKind kind) {
    switch (kind) {
    case CgLpKind::FORE: return "FORE";
    case CgLpKind::SORE: return "SORE";
    case CgLpKind::SOSRE: return "SOSRE";
    }
    return "?";
}

/// Case-insensitive.
inline CgLpKind parse_cglp_kind(std::string_view s) {
    std::string u(s);
    for (auto& c : u) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (u == "FORE") return CgLpKind::FORE;
    if (u == "SORE") return CgLpKind::SORE;
    if (u == "SOSRE") return CgLpKind::SOSRE;
    throw InvalidConfig("unknown CgLp kind '" + std::string(s) + "'");
}

/// Low-pass filter appended after a lead: first order w/(s+w) or
/// second order w^2/(s^2 + 2 zeta w s + w^2).
struct LowpassSpec {
    int order = 2;
    double omega = 1000.0;
    double damping = 1.0;

    void validate() const {
        if (order != 1 && order != 2) throw InvalidConfig("low-pass order must be 1 or 2");
        if (!(omega > 0.0)) throw InvalidConfig("low-pass corner must be positive");
        if (order == 2 && !(damping > 0.0)) throw InvalidConfig("low-pass damping must be positive");
    }
};

/// Parameters of a Constant-in-gain Lead-in-phase filter: a reset lag R(s)
/// with corner omega_ralpha = omega_r / alpha followed by a linear lead D(s)
/// acting on [omega_r, omega_f].
///
/// gamma holds the per-state reset coefficients of the lag:
///   FORE  -> {gamma}
///   SORE  -> {gamma_1, gamma_2}
///   SOSRE -> {gamma_2}   (gamma_1 is fixed to 1)
struct CgLpConfig {
    CgLpKind kind = CgLpKind::SOSRE;
    double omega_ralpha = 10.0;
    double alpha = 1.0;
    double beta_r = 1.0;
    double omega_f = 1000.0;
    std::vector<double> gamma;
    std::optional<LowpassSpec> extra_lowpass;

    [[nodiscard]] double omega_r() const noexcept { return alpha * omega_ralpha; }

    void validate() const {
        if (!(omega_ralpha > 0.0)) throw InvalidConfig("omega_ralpha must be positive");
        if (!(alpha > 0.0)) throw InvalidConfig("alpha must be positive");
        if (!(omega_f > omega_r())) {
            throw InvalidConfig("omega_f=" + std::to_string(omega_f) + " must exceed omega_r=" +
                                std::to_string(omega_r()));
        }
        const std::size_t expected = kind == CgLpKind::SORE ? 2 : 1;
        if (gamma.size() != expected) {
            throw InvalidConfig(std::string(to_string(kind)) + " expects " + std::to_string(expected) +
                                " reset coefficient(s), got " + std::to_string(gamma.size()));
        }
        if (kind != CgLpKind::FORE && !(beta_r > 0.0)) throw InvalidConfig("beta_r must be positive");
        if (kind != CgLpKind::FORE && extra_lowpass) {
            throw InvalidConfig("extra_lowpass only applies to FORE; the second-order lead already rolls off");
        }
        if (extra_lowpass) extra_lowpass->validate();
    }
};

/// Lead/lag (s/w_zero + 1)/(s/w_pole + 1) realized with one state.
inline StateSpaceModel lead_lag(double omega_zero, double omega_pole) {
    if (!(omega_zero > 0.0) || !(omega_pole > 0.0)) throw InvalidConfig("lead/lag corners must be positive");
    Matrix a{{-omega_pole}};
    Vector b{{omega_pole}};
    RowVector c{{1.0 - omega_pole / omega_zero}};
    return {a, b, c, omega_pole / omega_zero};
}

/// Tamed derivative (s/w_d + 1)/(s/w_t + 1).
inline StateSpaceModel tamed_derivative(double omega_d, double omega_t) {
    if (!(omega_t > omega_d)) throw InvalidConfig("tamed derivative needs omega_t > omega_d");
    return lead_lag(omega_d, omega_t);
}

/// k_p (1 + w_i / s).
inline StateSpaceModel proportional_integral(double k_p, double omega_i) {
    Matrix a{{0.0}};
    Vector b{{1.0}};
    RowVector c{{k_p * omega_i}};
    return {a, b, c, k_p};
}

inline StateSpaceModel lowpass(const LowpassSpec& spec) {
    spec.validate();
    const double w = spec.omega;
    if (spec.order == 1) {
        return {Matrix{{-w}}, Vector{{w}}, RowVector{{1.0}}, 0.0};
    }
    Matrix a{{0.0, 1.0}, {-w * w, -2.0 * spec.damping * w}};
    Vector b{{0.0, 1.0}};
    RowVector c{{w * w, 0.0}};
    return {a, b, c, 0.0};
}

/// Clegg integrator: integrator whose state is multiplied by gamma (default 0)
/// at each input zero crossing.
inline ResetSystem make_clegg(double gamma = 0.0) {
    StateSpaceModel base(Matrix{{0.0}}, Vector{{1.0}}, RowVector{{1.0}}, 0.0);
    return {std::move(base), Vector{{gamma}}};
}

/// Reset lag 1/(s/w_ra + 1) in series with the lead (s/w_r + 1)/(s/w_f + 1),
/// optionally followed by an extra low-pass. Only the lag state resets.
inline ResetSystem make_fore_cglp(const CgLpConfig& cfg) {
    if (cfg.kind != CgLpKind::FORE) throw InvalidConfig("make_fore_cglp needs a FORE config");
    cfg.validate();
    const double wra = cfg.omega_ralpha;
    ResetSystem lag(StateSpaceModel(Matrix{{-wra}}, Vector{{wra}}, RowVector{{1.0}}, 0.0), Vector{{cfg.gamma[0]}});
    std::vector<Block> blocks{lag, lead_lag(cfg.omega_r(), cfg.omega_f)};
    if (cfg.extra_lowpass) blocks.emplace_back(lowpass(*cfg.extra_lowpass));
    return series_compose(blocks);
}

namespace detail {

// Controllable-canonical second-order reset lag feeding the second-order lead.
// State order: x1 (second integrator), x2 (first integrator), x3, x4 (lead).
inline StateSpaceModel second_order_cglp_base(const CgLpConfig& cfg) {
    const double wra = cfg.omega_ralpha;
    const double wr = cfg.omega_r();
    const double wf = cfg.omega_f;
    const double br = cfg.beta_r;

    Matrix a = Matrix::Zero(4, 4);
    a(0, 1) = 1.0;
    a(1, 0) = -wra * wra;
    a(1, 1) = -2.0 * br * wra;
    a(2, 3) = 1.0;
    a(3, 0) = wra * wra;
    a(3, 2) = -wf * wf;
    a(3, 3) = -2.0 * wf;

    Vector b = Vector::Zero(4);
    b(1) = 1.0;

    RowVector c(4);
    c(0) = std::pow(wra * wf / wr, 2);
    c(1) = 0.0;
    c(2) = wf * wf * (1.0 - std::pow(wf / wr, 2));
    c(3) = wf * wf * (2.0 * br / wr - 2.0 * wf / (wr * wr));
    return {std::move(a), std::move(b), std::move(c), 0.0};
}

} // namespace detail

/// Conventional SORE CgLp: both lag states reset, A_rho = diag(g1, g2, 1, 1).
inline ResetSystem make_sore_cglp(const CgLpConfig& cfg) {
    if (cfg.kind != CgLpKind::SORE) throw InvalidConfig("make_sore_cglp needs a SORE config");
    cfg.validate();
    return {detail::second_order_cglp_base(cfg), Vector{{cfg.gamma[0], cfg.gamma[1], 1.0, 1.0}}};
}

/// Second order single state reset element: only the first integrator (x2) resets,
/// A_rho = diag(1, g2, 1, 1). The realization must stay exactly in this
/// coordinate system; a similarity transform changes the reset behaviour.
inline ResetSystem make_sosre_cglp(const CgLpConfig& cfg) {
    if (cfg.kind != CgLpKind::SOSRE) throw InvalidConfig("make_sosre_cglp needs a SOSRE config");
    cfg.validate();
    return {detail::second_order_cglp_base(cfg), Vector{{1.0, cfg.gamma[0], 1.0, 1.0}}};
}

inline ResetSystem make_cglp(const CgLpConfig& cfg) {
    switch (cfg.kind) {
    case CgLpKind::FORE: return make_fore_cglp(cfg);
    case CgLpKind::SORE: return make_sore_cglp(cfg);
    case CgLpKind::SOSRE: return make_sosre_cglp(cfg);
    }
    throw InvalidConfig("unknown CgLp kind");
}

/// Plant P(s) = 1 / (m s^2 + c s + k), or any SISO model supplied directly.
class PlantModel {
public:
    static PlantModel mass_spring_damper(double m, double c, double k) {
        if (!(m > 0.0)) throw InvalidConfig("plant mass must be positive");
        if (!(c >= 0.0)) throw InvalidConfig("plant damping must be non-negative");
        if (!std::isfinite(k)) throw InvalidConfig("plant stiffness must be finite"); // k <= 0 allowed: unstable test plants
        Matrix a{{0.0, 1.0}, {-k / m, -c / m}};
        Vector b{{0.0, 1.0 / m}};
        RowVector cc{{1.0, 0.0}};
        PlantModel p(StateSpaceModel(a, b, cc, 0.0));
        p.m_ = m;
        p.c_ = c;
        p.k_ = k;
        return p;
    }

    /// Skips the mass-spring-damper parameter checks (used for unstable or
    /// non-mechanical test plants).
    static PlantModel from_model(StateSpaceModel model) { return PlantModel(std::move(model)); }

    [[nodiscard]] const StateSpaceModel& model() const noexcept { return model_; }
    [[nodiscard]] std::optional<double> mass() const noexcept { return m_; }
    [[nodiscard]] std::optional<double> damping() const noexcept { return c_; }
    [[nodiscard]] std::optional<double> stiffness() const noexcept { return k_; }

private:
    explicit PlantModel(StateSpaceModel model) : model_(std::move(model)) {}

    StateSpaceModel model_;
    std::optional<double> m_, c_, k_;
};

} // namespace resetlab
