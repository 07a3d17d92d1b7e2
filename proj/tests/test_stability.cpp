#include <catch_amalgamated.hpp>

#include <random>

#include <unsupported/Eigen/MatrixFunctions>

#include "resetlab/stability.hpp"

using namespace resetlab;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

PlantModel plant() { return PlantModel::mass_spring_damper(11.11, 40.0, 10000.0); }

ControllerChain tuned_sosre() {
    ChainTargets t;
    t.phase_margin_deg = 5.0;
    return make_pid_chain(plant(), make_sosre_cglp({CgLpKind::SOSRE, 10.0, 1.13, 1.0, 1000.0, {0.1}, {}}), t);
}

// Clegg integrator (state 1) in feedback with 1/(s+1) (state 0), reset on e = -y.
ClosedLoopPartition clegg_loop(double gamma) {
    Matrix a{{-1.0, 1.0}, {-1.0, 0.0}};
    return ClosedLoopPartition::from(a, Vector{{1.0, gamma}}, RowVector{{-1.0, 0.0}}, {0});
}

// Controllability-Gramian-free oracle: P = int_0^T e^{A^T t} e^{A t} dt by
// Simpson's rule on a fine grid; for stable A this solves A^T P + P A = -I.
Matrix lyapunov_integral(const Matrix& a, double horizon, int steps) {
    const double h = horizon / steps;
    Matrix p = Matrix::Zero(a.rows(), a.cols());
    const Matrix step = (a * h).exp();
    Matrix e = Matrix::Identity(a.rows(), a.cols());
    for (int k = 0; k <= steps; ++k) {
        const double w = (k == 0 || k == steps) ? 1.0 : (k % 2 ? 4.0 : 2.0);
        p += w * e.transpose() * e;
        e = step * e;
    }
    return p * h / 3.0;
}

} // namespace

TEST_CASE("reset matrix condition") {
    CHECK_THAT(reset_matrix_condition(Matrix{{0.1}}, Matrix{{1.0}}), WithinAbs(-0.99, 1e-15));
    CHECK_THAT(reset_matrix_condition(Matrix{{1.5}}, Matrix{{1.0}}), WithinAbs(1.25, 1e-15));
    const Matrix g = Vector{{0.3, -0.7}}.asDiagonal();
    CHECK_THAT(reset_matrix_condition(g, Matrix::Identity(2, 2)), WithinAbs(0.49 - 1.0, 1e-15));
    CHECK_THROWS_AS(reset_matrix_condition(Matrix::Identity(2, 2), Matrix::Identity(3, 3)), DimensionMismatch);
}

TEST_CASE("base linear stability") {
    // double integrator closed with unit negative gain: +/- j
    const Matrix dbl{{0.0, 1.0}, {-1.0, 0.0}};
    const auto r = base_linear_stable(dbl);
    CHECK_FALSE(r.stable);
    CHECK_THAT(r.max_real, WithinAbs(0.0, 1e-12));

    CHECK(base_linear_stable(tuned_sosre(), plant()).stable);

    // zero gain: eigenvalues are those of the controller and the plant alone
    ControllerChain c = tuned_sosre();
    c.k_p = 0.0;
    const auto z = base_linear_stable(c, plant());
    const auto ctrl = base_linear_stable(c.base_linear().controller().base().A());
    const auto pl = base_linear_stable(plant().model().A());
    CHECK(z.eigenvalues.size() == ctrl.eigenvalues.size() + pl.eigenvalues.size());
    CHECK(z.max_real == Catch::Approx(std::max(ctrl.max_real, pl.max_real)).margin(1e-9));
    CHECK(z.stable == (ctrl.stable && pl.stable));
}

TEST_CASE("partition orders surface, non-resetting, resetting states") {
    const auto chain = tuned_sosre();
    const auto cl = close_loop(chain, plant(), ResetTrigger::ElementInput);
    const auto part = partition_closed_loop(cl);
    CHECK(part.n_r == 1);
    CHECK(part.n_p == 3); // two plant states plus the tamed-derivative state in the trigger
    CHECK(part.n_nr == 4);
    CHECK(part.n_p + part.n_nr + part.n_r == part.dimension());
    std::vector<Eigen::Index> sorted = part.permutation;
    std::sort(sorted.begin(), sorted.end());
    for (Eigen::Index i = 0; i < part.dimension(); ++i) CHECK(sorted[static_cast<std::size_t>(i)] == i);
    CHECK(part.permutation.back() == cl.cglp_offset + 1); // SOSRE x2
    CHECK(part.reset_matrix()(0, 0) == 0.1);

    const auto pm = part.permutation_matrix();
    CHECK((pm.transpose() * part.A_cl * pm - part.ordered_A()).norm() == 0.0);

    const auto le = partition_closed_loop(close_loop(chain, plant(), ResetTrigger::LoopError));
    CHECK(le.n_p == 2);
    CHECK(le.C_p == RowVector{{-1.0, 0.0}});

    CHECK_THROWS_AS(ClosedLoopPartition::from(Matrix::Zero(2, 2), Vector{{1.0, 0.5}}, RowVector{{0.0, 1.0}}),
                    InvalidConfig);
}

TEST_CASE("Clegg loop with a first-order plant is certified") {
    const auto part = clegg_loop(0.0);
    const auto res = quadratic_stability_search(part);
    REQUIRE(res.status == StabilityStatus::Certified);
    const auto& c = *res.certificate;
    CHECK(c.method == "barrier");

    // re-verify from scratch
    const Matrix a = part.ordered_A();
    Eigen::SelfAdjointEigenSolver<Matrix> ep(c.P);
    CHECK(ep.eigenvalues().minCoeff() > 1e-8 * c.P.norm());
    const Matrix q = a.transpose() * c.P + c.P * a;
    Eigen::SelfAdjointEigenSolver<Matrix> eq(q);
    CHECK(eq.eigenvalues().maxCoeff() < -1e-8 * q.norm());
    // pinned row: P_{r, plant} = beta C_p, P_{r, r} = P_rho
    CHECK(std::abs(c.P(1, 0) - c.beta(0) * part.C_p(0)) <= 1e-8 * c.P.norm());
    CHECK(c.P(1, 1) == c.P_rho(0, 0));
    CHECK(reset_matrix_condition(part.reset_matrix(), c.P_rho) <= -1e-8 * c.P_rho.norm());
    CHECK(c.margins.holds(1e-8));
    CHECK(c.margins.equality_residual <= 1e-8 * c.margins.p_scale);

    const auto again = certificate_margins(part, part.reset_matrix(), c.P, c.P_rho, c.beta);
    CHECK(again.holds(1e-8));
}

TEST_CASE("Clegg loop certificate also exists for partial resets") {
    for (double g : {-0.5, 0.3, 0.9}) CHECK(quadratic_stability_search(clegg_loop(g)).status == StabilityStatus::Certified);
}

TEST_CASE("identity reset takes the Lyapunov path") {
    const auto chain = tuned_sosre().base_linear();
    const auto part = partition_closed_loop(close_loop(chain, plant()));
    REQUIRE(part.n_r == 0);
    const auto res = quadratic_stability_search(part);
    REQUIRE(res.status == StabilityStatus::Certified);
    CHECK(res.certificate->method == "lyapunov");
    CHECK(res.certificate->P_rho.size() == 0);
    CHECK(res.certificate->beta.size() == 0);

    // small loop: compare against the integral form of the Lyapunov solution
    const Matrix a{{-1.0, 2.0, 0.0}, {-2.0, -1.0, 1.0}, {0.0, 0.0, -3.0}};
    const auto small = ClosedLoopPartition::from(a, Vector::Ones(3), RowVector{{1.0, 0.0, 0.0}});
    const auto rs = quadratic_stability_search(small);
    REQUIRE(rs.status == StabilityStatus::Certified);
    const Matrix p_oracle = lyapunov_integral(small.ordered_A(), 20.0, 20000);
    CHECK((rs.certificate->P - p_oracle).norm() < 1e-6 * p_oracle.norm());
}

TEST_CASE("unstable base loop is reported, not searched") {
    // negative stiffness and no control action: the plant pole at +30 rad/s stays
    const auto unstable = PlantModel::mass_spring_damper(11.11, 40.0, -10000.0);
    auto chain = tuned_sosre();
    chain.k_p = 0.0;
    const auto res = chain_stability(chain, unstable);
    CHECK(res.status == StabilityStatus::BaseLinearUnstable);
    CHECK_FALSE(res.certificate.has_value());
    CHECK_FALSE(res.base.stable);
}

TEST_CASE("permuting the realization does not change the outcome") {
    std::mt19937 rng(3);
    for (double g : {0.0, 0.5}) {
        const auto part = clegg_loop(g);
        const auto base = quadratic_stability_search(part).status;
        const std::vector<int> idx{1, 0};
        Matrix a(2, 2);
        Vector gamma(2);
        RowVector trig(2);
        for (int i = 0; i < 2; ++i) {
            gamma(i) = part.gamma(idx[static_cast<std::size_t>(i)]);
            trig(i) = part.trigger(idx[static_cast<std::size_t>(i)]);
            for (int j = 0; j < 2; ++j) a(i, j) = part.A_cl(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
        }
        const auto permuted = ClosedLoopPartition::from(a, gamma, trig, {1});
        CHECK((permuted.ordered_A() - part.ordered_A()).norm() == 0.0);
        CHECK(quadratic_stability_search(permuted).status == base);
    }

    // tuned loop: reorder the realized states and re-run
    const auto cl = close_loop(tuned_sosre(), plant(), ResetTrigger::LoopError);
    const auto part = partition_closed_loop(cl);
    const auto n = part.dimension();
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix a(n, n);
    Vector gamma(n);
    RowVector trig(n);
    std::vector<Eigen::Index> plant_idx;
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto src = perm[static_cast<std::size_t>(i)];
        gamma(i) = part.gamma(src);
        trig(i) = part.trigger(src);
        for (Eigen::Index j = 0; j < n; ++j) a(i, j) = part.A_cl(src, perm[static_cast<std::size_t>(j)]);
    }
    for (Eigen::Index k = 0; k < cl.plant_states; ++k) {
        const auto src = cl.controller_states + k;
        plant_idx.push_back(std::find(perm.begin(), perm.end(), src) - perm.begin());
    }
    const auto shuffled = ClosedLoopPartition::from(a, gamma, trig, plant_idx);
    CHECK(quadratic_stability_search(shuffled).status == quadratic_stability_search(part).status);
}

TEST_CASE("tuned loops never return an unverifiable certificate") {
    const auto res = chain_stability(tuned_sosre(), plant(), ResetTrigger::LoopError);
    CHECK(res.status != StabilityStatus::BaseLinearUnstable);
    if (res.certificate) CHECK(res.certificate->margins.holds(1e-8));
    else CHECK_FALSE(res.message.empty());
}

TEST_CASE("certificate JSON round trip") {
    const auto part = clegg_loop(0.0);
    const auto res = quadratic_stability_search(part);
    REQUIRE(res.certificate);
    const auto j = to_json(res);
    CHECK(j.at("status") == "Certified");
    const Matrix p = matrix_from_json(j.at("certificate").at("P"));
    CHECK((p - res.certificate->P).norm() == 0.0);
    CHECK(j.at("certificate").at("P").at("rows") == 2);
    CHECK(j.at("certificate").at("margins").at("lyapunov_max_eig").get<double>() < 0.0);
    const auto pj = to_json(part);
    CHECK(pj.at("permutation").size() == 2);
}
