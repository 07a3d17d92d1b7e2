#include <catch_amalgamated.hpp>

#include <numbers>
#include <sstream>

#include <unsupported/Eigen/MatrixFunctions>

#include "resetlab/hosidf.hpp"
#include "resetlab/hybrid_sim.hpp"

using namespace resetlab;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

constexpr double kPi = std::numbers::pi;

CgLpConfig sosre_cfg() { return {CgLpKind::SOSRE, 10.0, 1.13, 1.0, 1000.0, {0.1}, {}}; }
CgLpConfig sore_cfg() { return {CgLpKind::SORE, 10.0, 0.9, 1.0, 1000.0, {0.44, 0.44}, {}}; }
CgLpConfig fore_cfg() { return {CgLpKind::FORE, 10.0, 1.3, 1.0, 1000.0, {0.15}, LowpassSpec{1, 1000.0, 1.0}}; }

PlantModel plant() { return PlantModel::mass_spring_damper(11.11, 40.0, 10000.0); }

ControllerChain tuned(const std::optional<CgLpConfig>& c) {
    ChainTargets t;
    if (c) {
        t.phase_margin_deg = 5.0;
        return make_pid_chain(plant(), make_cglp(*c), t);
    }
    t.lowpass = LowpassSpec{2, 1000.0, 1.0};
    return make_pid_chain(plant(), std::nullopt, t);
}

SimTrace synthetic(double omega, double periods, std::size_t per_period, auto&& f) {
    SimTrace tr;
    const double period = 2.0 * kPi / omega;
    const std::size_t n = static_cast<std::size_t>(periods * static_cast<double>(per_period));
    tr.dt = period / static_cast<double>(per_period);
    for (std::size_t i = 0; i <= n; ++i) {
        const double t = static_cast<double>(i) * tr.dt;
        tr.t.push_back(t);
        tr.r.push_back(0.0);
        tr.e.push_back(f(t));
        tr.u.push_back(0.0);
        tr.y.push_back(f(t));
    }
    return tr;
}

// Steady-state harmonics of the element output for a unit sine input.
std::vector<Complex> element_harmonics(const ResetSystem& sys, double omega, const std::vector<int>& orders) {
    // Resets of states with output weight put fast spikes on y; the trapezoid
    // rule over them converges as (dt rho(A))^2, hence the tighter step.
    SimConfig cfg;
    const double period = 2.0 * kPi / omega;
    cfg.stiffness_factor = 0.02;
    cfg.periods = 16.0;
    cfg.record_states = false;
    cfg.record_start = 12.0 * period - period / 4.0;
    const auto tr = simulate_reset_element(sys, Signal::sine(omega), cfg);
    return fourier_harmonics(extract_steady_state(tr, period, 4.0), {SignalKind::Output}, omega, orders);
}

} // namespace

TEST_CASE("signals") {
    CHECK(Signal::zero()(3.0) == 0.0);
    CHECK_THAT(Signal::sine(2.0, 3.0)(0.25 * kPi), WithinAbs(3.0, 1e-12));
    CHECK(Signal::step(2.0, 1.0)(0.5) == 0.0);
    CHECK(Signal::step(2.0, 1.0)(1.0) == 2.0);
    const auto s = Signal::sampled({0.0, 1.0, 2.0}, {0.0, 10.0, 0.0});
    CHECK(s(0.5) == 5.0);
    CHECK(s(5.0) == 0.0);
    CHECK_THROWS_AS(Signal::sine(0.0), InvalidConfig);
    CHECK(Signal::sine(4.0).period() == Catch::Approx(kPi / 2.0));
    CHECK_FALSE(Signal::step().period().has_value());
}

TEST_CASE("sim config invariants") {
    SimConfig c;
    c.dt = -1.0;
    CHECK_THROWS_AS(c.validate(), InvalidConfig);
    c.dt = 1e-3;
    c.event_tolerance = 1e-2;
    CHECK_THROWS_AS(c.validate(), InvalidConfig);
    SimConfig w;
    w.window_fraction = 1.0;
    CHECK_THROWS_AS(w.validate(), InvalidConfig);
    CHECK_THROWS_AS(simulate_reset_element(make_clegg(), Signal::step(), SimConfig{}), InvalidConfig);
}

TEST_CASE("Clegg driven by sin(t) resets at k pi") {
    SimConfig cfg;
    cfg.periods = 5.0;
    const auto tr = simulate_reset_element(make_clegg(), Signal::sine(1.0), cfg);
    const double eps = tr.dt * 1e-9;
    REQUIRE(tr.events.size() == 10);
    for (std::size_t k = 0; k < tr.events.size(); ++k) {
        const auto& ev = tr.events[k];
        CHECK(std::abs(ev.t - static_cast<double>(k + 1) * kPi) < eps);
        CHECK(ev.post == 0.0);
        CHECK(std::abs(ev.trigger) <= 1e-8);
    }
    // first half period: x = 1 - cos t, so the first jump happens from 2
    CHECK_THAT(tr.events[0].pre, WithinAbs(2.0, 1e-9));
    // after a reset at pi the integrator restarts from zero: x = -1 - cos t
    CHECK_THAT(tr.events[1].pre, WithinAbs(-2.0, 1e-9));
}

TEST_CASE("identity reset keeps the trajectory and logs pre = post") {
    const auto sys = make_sosre_cglp(sosre_cfg()).with_identity_reset();
    SimConfig cfg;
    cfg.periods = 4.0;
    const auto tr = simulate_reset_element(sys, Signal::sine(10.0), cfg);
    CHECK_FALSE(tr.events.empty());
    for (const auto& ev : tr.events) CHECK(ev.pre == ev.post);

    // exact discretization of [x; sin; cos]
    const auto& b = sys.base();
    Matrix m = Matrix::Zero(6, 6);
    m.topLeftCorner(4, 4) = b.A();
    m.block(0, 4, 4, 1) = b.B();
    m(4, 5) = 10.0;
    m(5, 4) = -10.0;
    double max_err = 0.0, max_y = 0.0;
    for (std::size_t i = 0; i < tr.size(); i += 97) {
        Vector z0 = Vector::Zero(6);
        z0(5) = 1.0;
        const Matrix phi = (m * tr.t[i]).exp();
        const Vector z = phi * z0;
        const double y = b.C().dot(z.head(4));
        max_err = std::max(max_err, std::abs(y - tr.y[i]));
        max_y = std::max(max_y, std::abs(y));
    }
    CHECK(max_err < 1e-6 * max_y);
}

TEST_CASE("closed loop with identity reset matches a plain RK4 run") {
    const auto chain = tuned(sosre_cfg()).base_linear();
    const auto cl = close_loop(chain, plant());
    SimConfig cfg;
    cfg.periods = 6.0;
    const auto tr = simulate_closed_loop(chain, plant(), Signal::sine(10.0), cfg);

    const double dt = tr.dt;
    auto f = [&](double t, const Vector& x) -> Vector { return cl.A * x + cl.B * std::sin(10.0 * t); };
    Vector x = Vector::Zero(cl.A.rows());
    std::vector<double> y_ref{0.0};
    const auto steps = static_cast<std::size_t>(std::llround(tr.end_time / dt));
    for (std::size_t k = 0; k < steps; ++k) {
        const double t = static_cast<double>(k) * dt;
        const Vector k1 = f(t, x), k2 = f(t + dt / 2, x + dt / 2 * k1), k3 = f(t + dt / 2, x + dt / 2 * k2),
                     k4 = f(t + dt, x + dt * k3);
        x += dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
        y_ref.push_back(cl.c_y.dot(x));
    }
    double max_err = 0.0, max_y = 0.0;
    for (std::size_t i = 0; i < tr.size(); ++i) {
        const double kk = tr.t[i] / dt;
        const auto k = static_cast<std::size_t>(std::llround(kk));
        if (std::abs(kk - static_cast<double>(k)) > 1e-6) continue;
        max_err = std::max(max_err, std::abs(tr.y[i] - y_ref[k]));
        max_y = std::max(max_y, std::abs(y_ref[k]));
    }
    CHECK(max_err <= 1e-8 * max_y);
}

TEST_CASE("zero reference keeps every signal at zero") {
    SimConfig cfg;
    cfg.duration = 1.0;
    const auto tr = simulate_closed_loop(tuned(sosre_cfg()), plant(), Signal::zero(), cfg);
    CHECK(tr.events.empty());
    for (std::size_t i = 0; i < tr.size(); ++i) {
        CHECK(tr.e[i] == 0.0);
        CHECK(tr.u[i] == 0.0);
        CHECK(tr.y[i] == 0.0);
    }
}

TEST_CASE("events are logged for the CgLp states with the trigger near zero") {
    SimConfig cfg;
    cfg.periods = 10.0;
    const auto tr = simulate_closed_loop(tuned(sosre_cfg()), plant(), Signal::sine(10.0), cfg);
    REQUIRE_FALSE(tr.events.empty());
    CHECK(tr.events.size() % 4 == 0);
    for (const auto& ev : tr.events) {
        CHECK(ev.state >= 1);
        CHECK(ev.state <= 4);
        CHECK(std::abs(ev.trigger) < 1e-6);
    }
    CHECK(tr.state_names.size() == 8);
    CHECK(tr.state_names[2] == "cglp_x2");
}

TEST_CASE("event storm and divergence are reported") {
    SimConfig storm;
    storm.storm_limit = 0;
    storm.periods = 2.0;
    CHECK_THROWS_AS(simulate_reset_element(make_clegg(), Signal::sine(1.0), storm), EventStorm);

    const auto unstable = PlantModel::mass_spring_damper(1.0, 0.0, -1.0);
    ControllerChain c;
    c.proportional_only = true;
    c.k_p = 0.1;
    CHECK_THROWS_AS(simulate_closed_loop(c, unstable, Signal::sine(10.0), SimConfig{}), Divergence);
}

TEST_CASE("steady-state extraction") {
    const double w = 10.0, period = 2.0 * kPi / w;
    const auto tr = synthetic(w, 40.0, 200, [](double) { return 0.5; });
    const auto ss = extract_steady_state(tr, period, 10.0);
    CHECK_THAT(ss.t.back() - ss.t.front(), WithinRel(10.0 * period, 1e-9));
    CHECK(ss.t.front() == 0.0);
    CHECK_THAT(ss.time_offset, WithinRel(30.0 * period, 1e-9));
    for (double v : ss.e) CHECK(v == 0.5);
    CHECK_THROWS_AS(extract_steady_state(tr, period, 25.0), TooShort);
    CHECK_THROWS_AS(extract_steady_state(SimTrace{}, period, 1.0), TooShort);
}

TEST_CASE("first harmonic of the kept window has converged") {
    const double w = 10.0, period = 2.0 * kPi / w;
    const auto tr = simulate_closed_loop(tuned(sosre_cfg()), plant(), Signal::sine(w), SimConfig{});
    const auto a = fourier_harmonics(extract_steady_state(tr, period, 1.0), {SignalKind::Error}, w, {1});
    SimTrace shorter = tr;
    // drop the final period: the last-but-one period
    while (!shorter.t.empty() && shorter.t.back() > tr.t.back() - period + 1e-9) {
        shorter.t.pop_back();
        shorter.r.pop_back();
        shorter.e.pop_back();
        shorter.u.pop_back();
        shorter.y.pop_back();
        shorter.x.pop_back();
    }
    const auto b = fourier_harmonics(extract_steady_state(shorter, period, 1.0), {SignalKind::Error}, w, {1});
    CHECK(std::abs(std::abs(a[0]) - std::abs(b[0])) < 1e-3 * std::abs(a[0]));
}

TEST_CASE("Fourier harmonics of constructed signals") {
    const double w = 10.0;
    const auto pure = synthetic(w, 10.0, 2000, [&](double t) { return std::sin(w * t); });
    const auto h = fourier_harmonics(pure, {SignalKind::Output}, w, {1, 3, 5});
    CHECK_THAT(std::abs(h[0]), WithinAbs(1.0, 1e-9));
    CHECK(std::abs(std::arg(h[0])) < 1e-9);
    CHECK(std::abs(h[1]) < 1e-6);
    CHECK(std::abs(h[2]) < 1e-6);

    const auto mix = synthetic(w, 10.0, 2000, [&](double t) { return std::sin(w * t) + 0.2 * std::sin(3 * w * t + 0.4); });
    const auto m = fourier_harmonics(mix, {SignalKind::Output}, w, {3});
    CHECK_THAT(std::abs(m[0]), WithinAbs(0.2, 1e-6));
    CHECK_THAT(std::arg(m[0]), WithinAbs(0.4, 1e-6));

    const auto odd = synthetic(w, 2.5, 2000, [&](double t) { return std::sin(w * t); });
    CHECK_THROWS_AS(fourier_harmonics(odd, {SignalKind::Output}, w, {1}), NonCommensurateWindow);
}

TEST_CASE("error metrics") {
    const double w = 7.0;
    const auto tr = synthetic(w, 10.0, 2000, [&](double t) { return 0.1 * std::sin(w * t); });
    const auto m = error_metrics(tr);
    CHECK_THAT(m.l2, WithinRel(0.1 / std::sqrt(2.0), 1e-6));
    CHECK_THAT(m.linf, WithinRel(0.1, 1e-6));
    CHECK(m.l2 <= m.linf);
    const auto z = error_metrics(synthetic(w, 1.0, 100, [](double) { return 0.0; }));
    CHECK(z.l2 == 0.0);
    CHECK(z.linf == 0.0);
    CHECK_THROWS_AS(error_metrics(SimTrace{}), TooShort);
}

TEST_CASE("describing functions agree with element simulation") {
    const std::vector<int> orders{1, 3, 5};
    for (const auto& cfg : {sosre_cfg(), sore_cfg(), fore_cfg()}) {
        const auto sys = make_cglp(cfg);
        for (double w : {2.0, 5.0, 10.0, 20.0, 50.0, 100.0}) {
            const auto sim = element_harmonics(sys, w, orders);
            const double g1 = std::abs(describing_function(sys, 1, w));
            for (std::size_t o = 0; o < orders.size(); ++o) {
                const Complex df = describing_function(sys, orders[o], w);
                INFO(to_string(cfg.kind) << " w=" << w << " n=" << orders[o]);
                CHECK(std::abs(std::abs(sim[o]) - std::abs(df)) <= std::max(0.02 * std::abs(df), 1e-5 * g1));
                if (std::abs(df) >= 1e-3 * g1) {
                    CHECK(std::abs(wrap_deg((std::arg(sim[o]) - std::arg(df)) * 180.0 / kPi)) <= 2.0);
                }
            }
        }
    }
}

TEST_CASE("SOSRE at omega_ralpha behaves linearly in steady state") {
    const auto sys = make_sosre_cglp(sosre_cfg());
    auto jump_ratio = [&](double w) {
        SimConfig cfg;
        const double period = 2.0 * kPi / w;
        cfg.record_start = 30.0 * period - period / 4.0;
        const auto ss = extract_steady_state(simulate_reset_element(sys, Signal::sine(w), cfg), period, 10.0);
        double amp = 0.0, jump = 0.0;
        for (const auto& x : ss.x) amp = std::max(amp, std::abs(x(1)));
        for (const auto& ev : ss.events)
            if (ev.state == 1) jump = std::max(jump, std::abs(ev.post - ev.pre));
        return jump / amp;
    };
    CHECK(jump_ratio(10.0) < 1e-3);
    CHECK(jump_ratio(5.0) > 1e-2);
    CHECK(jump_ratio(20.0) > 1e-2);

    const double w = 10.0;
    const auto h = element_harmonics(sys, w, {1, 3});
    CHECK(std::abs(h[1]) < 1e-4);
}

TEST_CASE("halving dt changes closed-loop metrics by less than 0.5 percent") {
    for (const auto& c : {std::optional<CgLpConfig>{sosre_cfg()}, std::optional<CgLpConfig>{sore_cfg()},
                          std::optional<CgLpConfig>{fore_cfg()}, std::optional<CgLpConfig>{}}) {
        const auto chain = tuned(c);
        SimConfig cfg;
        const auto base = sinusoidal_error_metrics(chain, plant(), 10.0, cfg);
        const double plan_dt = detail::plan_steps(close_loop(chain, plant()).A, Signal::sine(10.0), cfg).dt;
        cfg.dt = plan_dt / 2.0;
        const auto half = sinusoidal_error_metrics(chain, plant(), 10.0, cfg);
        INFO((c ? std::string(to_string(c->kind)) : std::string("PID")));
        CHECK(std::abs(half.l2 - base.l2) < 5e-3 * base.l2);
        CHECK(std::abs(half.linf - base.linf) < 5e-3 * base.linf);
    }
}

TEST_CASE("CSV writers") {
    SimConfig cfg;
    cfg.periods = 1.0;
    const auto tr = simulate_reset_element(make_clegg(), Signal::sine(1.0), cfg);
    std::ostringstream a, b;
    write_trace_csv(a, tr);
    write_events_csv(b, tr);
    CHECK(a.str().rfind("t,r,e,u,y,x1\n", 0) == 0);
    CHECK(b.str().rfind("t_event,state_index,pre,post\n", 0) == 0);
    const std::string events = b.str();
    CHECK(std::count(events.begin(), events.end(), '\n') == 1 + static_cast<long>(tr.events.size()));
}
