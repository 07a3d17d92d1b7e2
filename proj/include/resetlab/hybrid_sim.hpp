#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "controller.hpp"
#include "elements.hpp"
#include "format.hpp"
#include "state_space.hpp"

namespace resetlab {

// ============================================================================
// Input signals
// ============================================================================

struct Signal {
    enum class Kind { Zero, Sine, Step, Sampled };

    Kind kind = Kind::Zero;
    double amplitude = 1.0;
    double omega = 0.0;
    double phase = 0.0;
    double step_time = 0.0;
    std::vector<double> times;
    std::vector<double> samples;

    static Signal zero() { return {}; }

    static Signal sine(double omega, double amplitude = 1.0, double phase = 0.0) {
        if (!(omega > 0.0)) throw InvalidConfig("sine frequency must be positive");
        Signal s;
        s.kind = Kind::Sine;
        s.omega = omega;
        s.amplitude = amplitude;
        s.phase = phase;
        return s;
    }

    static Signal step(double amplitude = 1.0, double at = 0.0) {
        Signal s;
        s.kind = Kind::Step;
        s.amplitude = amplitude;
        s.step_time = at;
        return s;
    }

    /// Piecewise-linear interpolation of (times, samples); held constant outside.
    static Signal sampled(std::vector<double> times, std::vector<double> samples) {
        if (times.size() != samples.size() || times.empty()) throw InvalidConfig("sampled signal needs matching data");
        if (!std::is_sorted(times.begin(), times.end())) throw InvalidConfig("sample times must be sorted");
        Signal s;
        s.kind = Kind::Sampled;
        s.times = std::move(times);
        s.samples = std::move(samples);
        return s;
    }

    [[nodiscard]] double operator()(double t) const {
        switch (kind) {
        case Kind::Zero: return 0.0;
        case Kind::Sine: return amplitude * std::sin(omega * t + phase);
        case Kind::Step: return t >= step_time ? amplitude : 0.0;
        case Kind::Sampled: {
            if (t <= times.front()) return samples.front();
            if (t >= times.back()) return samples.back();
            const auto it = std::upper_bound(times.begin(), times.end(), t);
            const auto k = static_cast<std::size_t>(it - times.begin());
            const double f = (t - times[k - 1]) / (times[k] - times[k - 1]);
            return samples[k - 1] + f * (samples[k] - samples[k - 1]);
        }
        }
        return 0.0;
    }

    [[nodiscard]] std::optional<double> period() const {
        if (kind == Kind::Sine) return 2.0 * std::numbers::pi / omega;
        return std::nullopt;
    }
};

// ============================================================================
// Configuration and trace
// ============================================================================

struct SimConfig {
    /// Fixed step. Default: one reference period / 2000, shortened when needed
    /// so that dt * spectral_radius(A) <= stiffness_factor. For periodic inputs
    /// the step (given or default) is shrunk to an integer fraction of the period.
    std::optional<double> dt;
    double steps_per_period = 2000.0;
    double stiffness_factor = 0.1;

    double periods = 40.0;          ///< duration for periodic references
    std::optional<double> duration; ///< seconds; required for aperiodic references
    double window_fraction = 0.25;  ///< steady-state window: last 10 of 40 periods

    std::optional<double> event_tolerance; ///< default dt * 1e-9
    bool chatter_guard = true;             ///< ignore crossings within one dt after a jump
    int storm_limit = 10;                  ///< max events within one dt

    double record_start = 0.0; ///< samples before this time are not stored
    bool record_states = true;
    double divergence_limit = 1e6;
    ResetTrigger trigger = ResetTrigger::ElementInput;

    void validate() const {
        if (dt && !(*dt > 0.0)) throw InvalidConfig("dt must be positive");
        if (!(window_fraction > 0.0 && window_fraction < 1.0)) throw InvalidConfig("window fraction must be in (0, 1)");
        if (dt && event_tolerance && !(*event_tolerance < *dt)) throw InvalidConfig("event tolerance must be below dt");
        if (!(periods > 0.0)) throw InvalidConfig("periods must be positive");
    }
};

struct ResetEvent {
    double t = 0.0;
    Eigen::Index state = 0;
    double pre = 0.0;
    double post = 0.0;
    double trigger = 0.0; ///< reset-trigger value at the localized instant
};

/// Sampled signals of a run. Samples are uniform except at reset instants,
/// where a pre-jump and a post-jump sample share the same time.
struct SimTrace {
    std::vector<double> t, r, e, u, y;
    std::vector<Vector> x;
    std::vector<ResetEvent> events;
    double time_offset = 0.0; ///< absolute time of t = 0 (non-zero after windowing)
    double dt = 0.0;
    double end_time = 0.0;    ///< absolute end of the simulated interval
    std::vector<std::string> state_names;

    [[nodiscard]] std::size_t size() const noexcept { return t.size(); }
    [[nodiscard]] bool empty() const noexcept { return t.empty(); }
};

enum class SignalKind { Reference, Error, Control, Output, State };

struct SignalSelector {
    SignalKind kind = SignalKind::Output;
    Eigen::Index state = 0;
};

inline double sample(const SimTrace& tr, const SignalSelector& sel, std::size_t i) {
    switch (sel.kind) {
    case SignalKind::Reference: return tr.r[i];
    case SignalKind::Error: return tr.e[i];
    case SignalKind::Control: return tr.u[i];
    case SignalKind::Output: return tr.y[i];
    case SignalKind::State:
        if (tr.x.empty()) throw InvalidConfig("trace does not hold states");
        return tr.x[i](sel.state);
    }
    return 0.0;
}

// ============================================================================
// Hybrid integration
// ============================================================================

/// x' = A x + B r(t); x <- diag(gamma) x whenever c_trigger x + d_trigger r
/// crosses zero. Output rows give e, u, y for the trace.
struct HybridModel {
    Matrix A;
    Vector B;
    RowVector c_trigger;
    double d_trigger = 0.0;
    Vector gamma;
    std::vector<Eigen::Index> logged_states;
    RowVector c_e, c_u, c_y;
    double d_e = 1.0, d_u = 0.0, d_y = 0.0;
};

namespace detail {

inline double spectral_radius(const Matrix& a) {
    if (a.rows() == 0) return 0.0;
    Eigen::EigenSolver<Matrix> es(a, false);
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

struct StepPlan {
    double dt = 0.0;
    std::size_t steps = 0;
    double duration = 0.0;
};

inline StepPlan plan_steps(const Matrix& a, const Signal& input, const SimConfig& cfg) {
    cfg.validate();
    const auto period = input.period();
    const double duration = cfg.duration ? *cfg.duration : (period ? cfg.periods * *period : -1.0);
    if (!(duration > 0.0)) throw InvalidConfig("aperiodic input needs an explicit duration");

    StepPlan plan;
    plan.duration = duration;
    if (cfg.dt) {
        // periodic input: largest step <= dt that divides the period
        plan.dt = period ? *period / std::ceil(*period / *cfg.dt - 1e-9) : *cfg.dt;
    } else {
        const double rho = spectral_radius(a);
        const double base = period ? *period / cfg.steps_per_period : duration / 20000.0;
        const double cap = rho > 0.0 ? cfg.stiffness_factor / rho : base;
        double dt = std::min(base, cap);
        if (period) dt = *period / std::ceil(*period / dt - 1e-9);
        plan.dt = dt;
    }
    plan.steps = static_cast<std::size_t>(std::llround(duration / plan.dt));
    if (std::abs(static_cast<double>(plan.steps) * plan.dt - duration) > 1e-9 * duration) {
        plan.steps = static_cast<std::size_t>(std::ceil(duration / plan.dt));
    }
    return plan;
}

} // namespace detail

inline SimTrace simulate_hybrid(const HybridModel& m, const Signal& input, const SimConfig& cfg) {
    const auto n = m.A.rows();
    const auto plan = detail::plan_steps(m.A, input, cfg);
    const double dt = plan.dt;
    const double eps_t = cfg.event_tolerance.value_or(dt * 1e-9);
    if (!(eps_t < dt)) throw InvalidConfig("event tolerance must be below dt");

    auto deriv = [&](double t, const Vector& x) -> Vector { return m.A * x + m.B * input(t); };
    auto rk4 = [&](double t, const Vector& x, double h) -> Vector {
        const Vector k1 = deriv(t, x);
        const Vector k2 = deriv(t + 0.5 * h, x + 0.5 * h * k1);
        const Vector k3 = deriv(t + 0.5 * h, x + 0.5 * h * k2);
        const Vector k4 = deriv(t + h, x + h * k3);
        return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    };
    auto trig = [&](double t, const Vector& x) { return m.c_trigger.dot(x) + m.d_trigger * input(t); };
    auto sgn = [](double v) { return (v > 0.0) - (v < 0.0); };

    SimTrace tr;
    tr.dt = dt;
    tr.end_time = static_cast<double>(plan.steps) * dt;
    auto record = [&](double t, const Vector& x) {
        if (t < cfg.record_start - 0.5 * dt) return;
        const double r = input(t);
        tr.t.push_back(t);
        tr.r.push_back(r);
        tr.e.push_back(m.c_e.dot(x) + m.d_e * r);
        tr.u.push_back(m.c_u.dot(x) + m.d_u * r);
        tr.y.push_back(m.c_y.dot(x) + m.d_y * r);
        if (cfg.record_states) tr.x.push_back(x);
    };

    std::vector<double> recent_events;
    auto jump = [&](double t, Vector& x) {
        const double s = trig(t, x);
        record(t, x);
        Vector post = m.gamma.cwiseProduct(x);
        for (auto i : m.logged_states) tr.events.push_back({t, i, x(i), post(i), s});
        x = std::move(post);
        record(t, x);
        recent_events.push_back(t);
        while (!recent_events.empty() && recent_events.front() < t - dt) recent_events.erase(recent_events.begin());
        if (static_cast<int>(recent_events.size()) > cfg.storm_limit) {
            throw EventStorm(std::to_string(recent_events.size()) + " resets within one step near t=" +
                             std::to_string(t));
        }
    };

    Vector x = Vector::Zero(n);
    int last_sign = sgn(trig(0.0, x));
    double suppress_until = -std::numeric_limits<double>::infinity();
    record(0.0, x);

    for (std::size_t k = 0; k < plan.steps; ++k) {
        const double t1 = static_cast<double>(k + 1) * dt;
        double tc = static_cast<double>(k) * dt;
        Vector xc = x;
        Vector xn;
        for (;;) {
            xn = rk4(tc, xc, t1 - tc);
            const double s1 = trig(t1, xn);
            const int sg1 = sgn(s1);
            const bool armed = !cfg.chatter_guard || t1 > suppress_until;
            if (armed && last_sign != 0 && sg1 == -last_sign) {
                // bracket [lo, hi] with the sign change, shrink to eps_t
                double lo = tc, hi = t1;
                if (cfg.chatter_guard && suppress_until > lo) lo = std::min(suppress_until, hi);
                while (hi - lo > eps_t) {
                    const double mid = 0.5 * (lo + hi);
                    if (sgn(trig(mid, rk4(tc, xc, mid - tc))) == last_sign) lo = mid;
                    else hi = mid;
                }
                Vector xe = rk4(tc, xc, hi - tc);
                jump(hi, xe);
                last_sign = sg1;
                suppress_until = hi + dt;
                tc = hi;
                xc = std::move(xe);
                if (t1 - tc <= 0.0) {
                    xn = xc;
                    break;
                }
                continue;
            }
            if (armed && last_sign != 0 && sg1 == 0) {
                // crossing lands exactly on the step boundary: handle it once, here
                jump(t1, xn);
                last_sign = -last_sign;
                suppress_until = t1 + dt;
                break;
            }
            if (sg1 != 0) last_sign = sg1;
            break;
        }
        x = std::move(xn);
        if (!x.allFinite()) throw NonFiniteState("state became non-finite at t=" + std::to_string(t1));
        const double y = m.c_y.dot(x) + m.d_y * input(t1);
        if (std::abs(y) > cfg.divergence_limit) {
            throw Divergence("|y|=" + std::to_string(std::abs(y)) + " exceeds " + std::to_string(cfg.divergence_limit) +
                             " at t=" + std::to_string(t1));
        }
        record(t1, x);
    }
    return tr;
}

/// Drives a reset element with `input`; e = r = input, u = y = element output.
/// Resets fire on zero crossings of the element input.
inline SimTrace simulate_reset_element(const ResetSystem& sys, const Signal& input, const SimConfig& cfg) {
    const auto& b = sys.base();
    const auto n = b.order();
    HybridModel m;
    m.A = b.A();
    m.B = b.B();
    m.c_trigger = RowVector::Zero(n);
    m.d_trigger = 1.0;
    m.gamma = sys.gamma();
    for (Eigen::Index i = 0; i < n; ++i) m.logged_states.push_back(i);
    m.c_e = RowVector::Zero(n);
    m.d_e = 1.0;
    m.c_u = b.C();
    m.d_u = b.D();
    m.c_y = b.C();
    m.d_y = b.D();
    SimTrace tr = simulate_hybrid(m, input, cfg);
    for (Eigen::Index i = 0; i < n; ++i) tr.state_names.push_back("x" + std::to_string(i + 1));
    return tr;
}

inline HybridModel hybrid_model(const ClosedLoopRealization& cl) {
    HybridModel m;
    m.A = cl.A;
    m.B = cl.B;
    m.c_trigger = cl.c_trigger;
    m.d_trigger = cl.d_trigger;
    m.gamma = cl.gamma;
    for (Eigen::Index i = 0; i < cl.cglp_states; ++i) m.logged_states.push_back(cl.cglp_offset + i);
    m.c_e = cl.c_e;
    m.d_e = cl.d_e;
    m.c_u = cl.c_u;
    m.d_u = cl.d_u;
    m.c_y = cl.c_y;
    m.d_y = 0.0;
    return m;
}

/// Closed loop e = r - y -> controller chain -> plant, with resets of the CgLp
/// states on zero crossings selected by cfg.trigger.
inline SimTrace simulate_closed_loop(const ControllerChain& chain, const PlantModel& plant, const Signal& reference,
                                     const SimConfig& cfg) {
    const auto cl = close_loop(chain, plant, cfg.trigger);
    SimTrace tr = simulate_hybrid(hybrid_model(cl), reference, cfg);
    for (Eigen::Index i = 0; i < cl.controller_states; ++i) {
        const bool in_cglp = i >= cl.cglp_offset && i < cl.cglp_offset + cl.cglp_states && cl.cglp_states > 0;
        tr.state_names.push_back(in_cglp ? "cglp_x" + std::to_string(i - cl.cglp_offset + 1)
                                         : "ctrl_x" + std::to_string(i + 1));
    }
    for (Eigen::Index i = 0; i < cl.plant_states; ++i) tr.state_names.push_back("plant_x" + std::to_string(i + 1));
    return tr;
}

// ============================================================================
// Post-processing
// ============================================================================

/// Final n_periods of the trace, re-based to t = 0 (time_offset keeps the
/// absolute origin for phase-consistent Fourier analysis).
inline SimTrace extract_steady_state(const SimTrace& tr, double period, double n_periods) {
    if (tr.empty()) throw TooShort("empty trace");
    const double window = period * n_periods;
    const double end_abs = tr.time_offset + tr.t.back();
    if (end_abs + 1e-9 * window < 2.0 * window) {
        throw TooShort("trace spans " + std::to_string(end_abs) + " s, need at least " + std::to_string(2.0 * window));
    }
    const double start_abs = end_abs - window;
    const double start = start_abs - tr.time_offset;
    const double tol = 1e-6 * (tr.dt > 0.0 ? tr.dt : window);
    const auto first = static_cast<std::size_t>(
        std::lower_bound(tr.t.begin(), tr.t.end(), start - tol) - tr.t.begin());
    if (first >= tr.size() || tr.t[first] > start + tol) {
        throw TooShort("recorded samples do not cover the requested window");
    }

    SimTrace out;
    out.dt = tr.dt;
    out.end_time = tr.end_time;
    out.state_names = tr.state_names;
    out.time_offset = tr.time_offset + tr.t[first];
    const double t0 = tr.t[first];
    for (std::size_t i = first; i < tr.size(); ++i) {
        out.t.push_back(tr.t[i] - t0);
        out.r.push_back(tr.r[i]);
        out.e.push_back(tr.e[i]);
        out.u.push_back(tr.u[i]);
        out.y.push_back(tr.y[i]);
        if (!tr.x.empty()) out.x.push_back(tr.x[i]);
    }
    for (const auto& ev : tr.events) {
        if (ev.t >= t0 - tol) {
            ResetEvent e = ev;
            e.t -= t0;
            out.events.push_back(e);
        }
    }
    return out;
}

/// Complex Fourier coefficients at n w over the trace window (trapezoidal
/// projection on e^{-j n w t}), expressed as phasors relative to sin(n w t):
/// A sin(n w t + phi) -> A e^{j phi}. Duplicate samples at reset instants make
/// jump discontinuities integrate exactly.
inline std::vector<Complex> fourier_harmonics(const SimTrace& tr, const SignalSelector& sel, double omega,
                                              const std::vector<int>& orders) {
    if (tr.size() < 2) throw NonCommensurateWindow("window holds fewer than two samples");
    const double window = tr.t.back() - tr.t.front();
    const double cycles = window * omega / (2.0 * std::numbers::pi);
    const double whole = std::round(cycles);
    if (whole < 1.0 || std::abs(cycles - whole) > 1e-3 * whole) {
        throw NonCommensurateWindow("window spans " + std::to_string(cycles) + " periods");
    }
    const Complex j(0.0, 1.0);
    std::vector<Complex> out;
    out.reserve(orders.size());
    for (int n : orders) {
        Complex acc = 0.0;
        auto term = [&](std::size_t i) {
            return sample(tr, sel, i) * std::exp(-j * (static_cast<double>(n) * omega * (tr.t[i] + tr.time_offset)));
        };
        Complex prev = term(0);
        for (std::size_t i = 1; i < tr.size(); ++i) {
            const Complex cur = term(i);
            acc += 0.5 * (prev + cur) * (tr.t[i] - tr.t[i - 1]);
            prev = cur;
        }
        out.push_back(j * (2.0 / window) * acc);
    }
    return out;
}

struct ErrorMetrics {
    double l2 = 0.0;   ///< RMS of the error over the window
    double linf = 0.0; ///< max |error| over the window
};

/// RMS (time-weighted, trapezoidal) and peak of e over the window.
inline ErrorMetrics error_metrics(const SimTrace& tr) {
    if (tr.empty()) throw TooShort("empty window");
    ErrorMetrics m;
    for (double e : tr.e) m.linf = std::max(m.linf, std::abs(e));
    const double span = tr.t.back() - tr.t.front();
    if (tr.size() < 2 || span <= 0.0) {
        m.l2 = std::abs(tr.e.front());
        return m;
    }
    double acc = 0.0;
    for (std::size_t i = 1; i < tr.size(); ++i) {
        acc += 0.5 * (tr.e[i - 1] * tr.e[i - 1] + tr.e[i] * tr.e[i]) * (tr.t[i] - tr.t[i - 1]);
    }
    m.l2 = std::sqrt(acc / span);
    return m;
}

/// Closed-loop error metrics for r = amplitude * sin(w t) over the last
/// window_fraction of the run. Only the window is recorded and states are not
/// stored, so long low-frequency runs stay cheap.
inline ErrorMetrics sinusoidal_error_metrics(const ControllerChain& chain, const PlantModel& plant, double omega,
                                             SimConfig cfg, double amplitude = 1.0) {
    const double period = 2.0 * std::numbers::pi / omega;
    const double periods = cfg.duration ? *cfg.duration / period : cfg.periods;
    const double keep = periods * cfg.window_fraction;
    cfg.record_states = false;
    cfg.record_start = (periods - keep) * period - period / 4.0;
    const SimTrace tr = simulate_closed_loop(chain, plant, Signal::sine(omega, amplitude), cfg);
    return error_metrics(extract_steady_state(tr, period, keep));
}

// ============================================================================
// CSV output
// ============================================================================

inline void write_trace_csv(std::ostream& os, const SimTrace& tr) {
    os << "t,r,e,u,y";
    const std::size_t nx = tr.x.empty() ? 0 : static_cast<std::size_t>(tr.x.front().size());
    for (std::size_t i = 0; i < nx; ++i) os << ",x" << (i + 1);
    os << '\n';
    for (std::size_t i = 0; i < tr.size(); ++i) {
        os << fmt_num(tr.t[i] + tr.time_offset) << ',' << fmt_num(tr.r[i]) << ',' << fmt_num(tr.e[i]) << ','
           << fmt_num(tr.u[i]) << ',' << fmt_num(tr.y[i]);
        for (std::size_t k = 0; k < nx; ++k) os << ',' << fmt_num(tr.x[i](static_cast<Eigen::Index>(k)));
        os << '\n';
    }
}

inline void write_events_csv(std::ostream& os, const SimTrace& tr) {
    os << "t_event,state_index,pre,post\n";
    for (const auto& ev : tr.events) {
        os << fmt_num(ev.t + tr.time_offset) << ',' << (ev.state + 1) << ',' << fmt_num(ev.pre) << ','
           << fmt_num(ev.post) << '\n';
    }
}

} // namespace resetlab
