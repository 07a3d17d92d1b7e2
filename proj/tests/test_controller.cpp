#include <catch_amalgamated.hpp>

#include "resetlab/controller.hpp"

using namespace resetlab;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

PlantModel plant() { return PlantModel::mass_spring_damper(11.11, 40.0, 10000.0); }

ChainTargets reset_targets() {
    ChainTargets t;
    t.phase_margin_deg = 5.0;
    return t;
}

ChainTargets pid_targets() {
    ChainTargets t;
    t.lowpass = LowpassSpec{2, 1000.0, 1.0};
    return t;
}

CgLpConfig sosre_cfg() { return {CgLpKind::SOSRE, 10.0, 1.13, 1.0, 1000.0, {0.1}, {}}; }

Complex resolvent_output(const Matrix& a, const Vector& b, const RowVector& c, double d, double w) {
    return transfer_at(StateSpaceModel(a, b, c, d), Complex(0.0, w));
}

} // namespace

TEST_CASE("linear PID tuning reaches 45 deg at 100 rad/s") {
    const auto p = plant();
    const auto chain = make_pid_chain(p, std::nullopt, pid_targets(), "pid");
    CHECK_FALSE(chain.proportional_only);
    CHECK(chain.omega_i == 10.0);
    CHECK_THAT(chain.omega_d, WithinRel(26.3, 0.05));
    CHECK_THAT(chain.omega_t, WithinRel(380.0, 0.05));
    CHECK_THAT(chain.omega_d * chain.omega_t, WithinRel(1e4, 1e-9));

    auto loop = [&](double w) { return chain.first_harmonic(w) * linear_freq_response(p.model(), w); };
    CHECK_THAT(std::abs(loop(100.0)), WithinRel(1.0, 1e-9));
    const auto pm = loop_phase_margin(loop, 100.0);
    REQUIRE(pm);
    CHECK_THAT(pm->omega_c, WithinRel(100.0, 1e-6));
    CHECK_THAT(pm->margin_deg, WithinAbs(45.0, 1e-4));
}

TEST_CASE("reset chain tuning: 5 deg base linear margin, unit first harmonic at w_c") {
    const auto p = plant();
    const auto chain = make_pid_chain(p, make_sosre_cglp(sosre_cfg()), reset_targets(), "sosre");
    const auto base = chain.base_linear();
    const auto pm_base =
        loop_phase_margin([&](double w) { return base.first_harmonic(w) * linear_freq_response(p.model(), w); }, 100.0);
    REQUIRE(pm_base);
    CHECK_THAT(pm_base->margin_deg, WithinAbs(5.0, 1e-4));
    const Complex l1 = chain.first_harmonic(100.0) * linear_freq_response(p.model(), 100.0);
    CHECK_THAT(std::abs(l1), WithinRel(1.0, 1e-9));
    // reset adds the CgLp phase lead on top of the base margin
    CHECK(180.0 + std::arg(l1) * 180.0 / std::numbers::pi > 40.0);
}

TEST_CASE("tuning fails cleanly when no taming ratio works") {
    ChainTargets t = pid_targets();
    t.phase_margin_deg = 89.0;
    CHECK_THROWS_AS(make_pid_chain(plant(), std::nullopt, t), TuningFailed);
}

TEST_CASE("proportional fallback for a plant that already has the margin") {
    const auto p = PlantModel::from_model(StateSpaceModel(Matrix{{-1.0}}, Vector{{1.0}}, RowVector{{1.0}}, 0.0));
    const auto chain = make_pid_chain(p, std::nullopt, ChainTargets{});
    CHECK(chain.proportional_only);
    CHECK_THAT(std::abs(chain.first_harmonic(100.0) * linear_freq_response(p.model(), 100.0)), WithinRel(1.0, 1e-12));
    CHECK(chain.blocks().size() == 1);
}

TEST_CASE("chain blocks and reset realization") {
    const auto chain = make_pid_chain(plant(), make_sosre_cglp(sosre_cfg()), reset_targets());
    const auto blocks = chain.blocks();
    REQUIRE(blocks.size() == 3);
    CHECK(chain.reset_block() == 1u);
    const auto ctrl = chain.controller();
    CHECK(ctrl.order() == 6);
    CHECK(ctrl.gamma() == Vector{{1.0, 1.0, 0.1, 1.0, 1.0, 1.0}});
    CHECK(chain.linear_part().order() == 2);
}

TEST_CASE("closed loop with identity reset equals the LTI sensitivity loop") {
    const auto p = plant();
    const auto chain = make_pid_chain(p, make_sosre_cglp(sosre_cfg()), reset_targets()).base_linear();
    const auto cl = close_loop(chain, p, ResetTrigger::ElementInput);
    REQUIRE(cl.A.rows() == 8);
    CHECK(cl.controller_states == 6);
    CHECK(cl.plant_states == 2);
    CHECK(cl.cglp_offset == 1);
    CHECK(cl.cglp_states == 4);

    for (double w : {1.0, 10.0, 30.0, 100.0, 500.0}) {
        const Complex c = transfer_at(chain.controller().base(), Complex(0.0, w));
        const Complex pw = linear_freq_response(p.model(), w);
        const Complex s = 1.0 / (1.0 + c * pw);
        const Complex td = linear_freq_response(tamed_derivative(chain.omega_d, chain.omega_t), w);

        CHECK(std::abs(resolvent_output(cl.A, cl.B, cl.c_e, cl.d_e, w) - s) < 1e-8 * std::abs(s));
        CHECK(std::abs(resolvent_output(cl.A, cl.B, cl.c_y, 0.0, w) - c * pw * s) < 1e-8 * std::abs(c * pw * s));
        CHECK(std::abs(resolvent_output(cl.A, cl.B, cl.c_u, cl.d_u, w) - c * s) < 1e-8 * std::abs(c * s));
        // element-input trigger is the tamed-derivative output
        CHECK(std::abs(resolvent_output(cl.A, cl.B, cl.c_trigger, cl.d_trigger, w) - td * s) < 1e-8 * std::abs(td * s));
    }
    const auto cle = close_loop(chain, p, ResetTrigger::LoopError);
    CHECK(cle.c_trigger == cle.c_e);
    CHECK(cle.d_trigger == 1.0);
}

TEST_CASE("closed loop rejects a plant with feedthrough") {
    const auto p = PlantModel::from_model(StateSpaceModel(Matrix{{-1.0}}, Vector{{1.0}}, RowVector{{1.0}}, 0.5));
    ControllerChain c;
    c.k_p = 1.0;
    c.proportional_only = true;
    CHECK_THROWS_AS(close_loop(c, p), DimensionMismatch);
}
