#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "powertrain/motor.hpp"

using namespace powertrain;
using namespace powertrain::motor;
using Catch::Approx;

namespace {
MotorLimits motor3() { return make_motor_limits(145.0, 112e3, 1047.0, 733.0); }
}  // namespace

TEST_CASE("affine power cap passes through base speed and top speed") {
    const auto lim = motor3();
    CHECK(lim.d_1_max * lim.omega_m_b + lim.d_0_max == Approx(145.0 * 733.0));
    CHECK(lim.d_1_max * lim.omega_m_max + lim.d_0_max == Approx(112e3));
    // envelope corner sits at the base speed
    const double corner = lim.d_0_max / (lim.T_m_max - lim.d_1_max);
    CHECK(corner == Approx(733.0).epsilon(1e-9));
}

TEST_CASE("shaft loss is affine") {
    SyntheticMotor sm = generate_synthetic_motor(1, motor3());
    const auto& m = sm.truth;
    CHECK(shaft_loss(0.0, m) == Approx(m.a_sft[0]));
    const double slope100 = shaft_loss(100.0, m) - m.a_sft[0];
    const double slope200 = shaft_loss(200.0, m) - m.a_sft[0];
    CHECK(slope200 == Approx(2.0 * slope100));
}

TEST_CASE("motor feasible box") {
    const auto lim = motor3();
    SECTION("standstill box collapses to zero") {
        auto [lo, hi] = motor_feasible_box(0.0, lim);
        CHECK(lo == Approx(std::max(0.0, lim.d_0_min)));
        CHECK(hi == Approx(std::min(0.0, lim.d_0_max)));
        CHECK(lo == 0.0);
        CHECK(hi == 0.0);
    }
    SECTION("reference ceiling values") {
        auto [lo, hi] = motor_feasible_box(lim.omega_m_max, lim);
        CHECK(hi == Approx(112e3));
        CHECK(lo == Approx(-112e3));
    }
    SECTION("overspeed rejected") { CHECK_THROWS_AS(motor_feasible_box(1100.0, lim), ValidationError); }
    SECTION("upper envelope concave, lower convex") {
        Rng rng(5);
        for (int i = 0; i < 200; ++i) {
            const double w1 = rng.uniform(0.0, 1047.0), w2 = rng.uniform(0.0, 1047.0);
            const double mid = 0.5 * (w1 + w2);
            const auto [lo1, hi1] = motor_feasible_box(w1, lim);
            const auto [lo2, hi2] = motor_feasible_box(w2, lim);
            const auto [lom, him] = motor_feasible_box(mid, lim);
            CHECK(him >= 0.5 * (hi1 + hi2) - 1e-9);
            CHECK(lom <= 0.5 * (lo1 + lo2) + 1e-9);
        }
    }
}

TEST_CASE("inverter loss is quadratic and even") {
    CHECK(inverter_power(0.0, 3e-7) == 0.0);
    CHECK(inverter_power(12345.0, 0.0) == Approx(12345.0));
    Rng rng(9);
    for (int i = 0; i < 100; ++i) {
        const double p = rng.uniform(-100e3, 100e3);
        const double a = rng.uniform(0.0, 1e-6);
        CHECK(inverter_power(p, a) - p == Approx(inverter_power(-p, a) + p).margin(1e-9));
    }
}

TEST_CASE("traction coefficient interpolation") {
    SyntheticMotor sm = generate_synthetic_motor(2, motor3());
    const auto& m = sm.truth;
    SECTION("grid level returned unchanged") {
        const auto b = traction_coefficients(m.power_levels[3], m);
        CHECK(b.level.a_rtr[0] == Approx(m.traction[3].a_rtr[0]));
        CHECK(b.level.a_wdg_2 == Approx(m.traction[3].a_wdg_2));
        CHECK_FALSE(b.clamped_top);
    }
    SECTION("midpoint of identical levels is the level") {
        MotorLossModel flat = m;
        flat.traction[4] = flat.traction[3];
        const double mid = 0.5 * (flat.power_levels[3] + flat.power_levels[4]);
        const auto b = traction_coefficients(mid, flat);
        CHECK(b.level.a_str[1] == Approx(flat.traction[3].a_str[1]));
        CHECK((b.level.R_mgt - flat.traction[3].R_mgt).norm() < 1e-12);
    }
    SECTION("interpolated matrices stay PSD") {
        Rng rng(21);
        for (int i = 0; i < 50; ++i) {
            const double p = rng.uniform(0.0, m.power_levels.back());
            const auto b = traction_coefficients(p, m);
            CHECK(min_eigenvalue(b.level.R_mgt) >= -1e-12);
            CHECK(min_eigenvalue(b.level.R_wdg) >= -1e-12);
        }
    }
    SECTION("above the top level clamps with a warning") {
        const auto b = traction_coefficients(m.power_levels.back() * 1.2, m);
        CHECK(b.clamped_top);
        CHECK(b.level.a_rtr[0] == Approx(m.traction.back().a_rtr[0]));
    }
}

TEST_CASE("entrywise midpoint of PSD matrices stays PSD") {
    Rng rng(33);
    for (int trial = 0; trial < 100; ++trial) {
        Mat3 a = Mat3::Zero(), b = Mat3::Zero();
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                a(i, j) = rng.uniform(-1.0, 1.0);
                b(i, j) = rng.uniform(-1.0, 1.0);
            }
        a = (a * a.transpose()).eval();
        b = (b * b.transpose()).eval();
        const Mat3 mid = 0.5 * (a + b);
        CHECK(min_eigenvalue(mid) >= -1e-12);
    }
}

TEST_CASE("eval_losses structure") {
    SyntheticMotor sm = generate_synthetic_motor(3, motor3());
    const auto& m = sm.truth;

    SECTION("all-zero model gives zero loss") {
        MotorLossModel zero;
        zero.power_levels = {0.0, 112e3};
        zero.traction.resize(2);
        const auto L = eval_losses(500.0, 30e3, 80.0, 90.0, 30e3, zero);
        CHECK(L.total() == 0.0);
    }
    SECTION("reciprocal terms are excluded at standstill") {
        const auto L = eval_losses(0.0, 0.0, 65.0, 65.0, 10e3, m);
        CHECK(std::isfinite(L.wdg));
        CHECK(L.total() >= 0.0);
    }
    SECTION("total equals the sum of components") {
        Rng rng(4);
        for (int i = 0; i < 100; ++i) {
            const double om = rng.uniform(0.0, 1047.0);
            const double pbar = rng.uniform(-112e3, 112e3);
            const auto L = eval_losses(om, pbar, 80.0, 95.0, pbar, m);
            CHECK(L.total() == Approx(L.sft + L.rtr + L.mgt + L.str + L.wdg));
            CHECK(L.sft >= 0.0);
            CHECK(L.rtr >= 0.0);
            CHECK(L.mgt >= 0.0);
            CHECK(L.str >= 0.0);
            CHECK(L.wdg >= 0.0);
        }
    }
    SECTION("braking branch equals the quadratic form by hand") {
        MotorLossModel hand;
        hand.power_levels = {0.0, 112e3};
        hand.traction.resize(2);
        Mat6 q = Mat6::Zero();
        q(0, 0) = 12.0;
        q(1, 1) = 0.25;
        q(0, 2) = q(2, 0) = -0.01;
        q(2, 2) = 1e-7;
        hand.Q_wdg_brk = q;
        const double om = 10.0, pm = -20.0;
        // y = [1, 10, -20, ...]; value = 12 + 0.25*100 + 2*(-0.01)(-20) + 1e-7*400
        const double expect = 12.0 + 0.25 * 100.0 + 2.0 * (-0.01) * (-20.0) + 1e-7 * 400.0;
        const auto L = eval_losses(om, pm, 65.0, 65.0, -1.0, hand);
        CHECK(L.wdg == Approx(expect));
    }
}

TEST_CASE("traction losses are convex in speed above the low-speed gate") {
    SyntheticMotor sm = generate_synthetic_motor(6, motor3());
    const auto& m = sm.truth;
    Rng rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        const double pbar = rng.uniform(0.0, 112e3);
        const double th = rng.uniform(65.0, 140.0);
        const double w1 = rng.uniform(2.0, 1047.0), w2 = rng.uniform(2.0, 1047.0);
        const double mid = 0.5 * (w1 + w2);
        auto total = [&](double w) { return eval_losses(w, pbar, th, th, pbar, m).total(); };
        CHECK(total(mid) <= 0.5 * (total(w1) + total(w2)) + 1e-6);
    }
}

TEST_CASE("braking losses are jointly convex in speed and power") {
    SyntheticMotor sm = generate_synthetic_motor(7, motor3());
    const auto& m = sm.truth;
    Rng rng(10);
    for (int trial = 0; trial < 50; ++trial) {
        const double w1 = rng.uniform(0.0, 1047.0), w2 = rng.uniform(0.0, 1047.0);
        const double p1 = rng.uniform(-112e3, 0.0), p2 = rng.uniform(-112e3, 0.0);
        auto total = [&](double w, double p) { return eval_losses(w, p, 65.0, 65.0, -1.0, m).total(); };
        const double mid = total(0.5 * (w1 + w2), 0.5 * (p1 + p2));
        CHECK(mid <= 0.5 * (total(w1, p1) + total(w2, p2)) + 1e-6);
    }
}

TEST_CASE("synthetic generator is deterministic and self-consistent") {
    const auto a = generate_synthetic_motor(42, motor3());
    const auto b = generate_synthetic_motor(42, motor3());
    REQUIRE(a.samples.size() == b.samples.size());
    for (size_t i = 0; i < a.samples.size(); ++i) {
        CHECK(a.samples[i].omega == b.samples[i].omega);
        CHECK(a.samples[i].p_wdg == b.samples[i].p_wdg);
    }
    // noiseless samples reproduce the truth exactly
    for (const auto& s : a.samples) {
        const auto L = eval_losses(s.omega, s.pm, s.theta, s.theta, s.pm, a.truth);
        CHECK(s.p_rtr == Approx(L.rtr).margin(1e-12));
        CHECK(s.p_wdg == Approx(L.wdg).margin(1e-12));
        CHECK(s.p_sft >= 0.0);
        CHECK(s.p_mgt >= 0.0);
    }
}

TEST_CASE("noiseless self-fit recovers the generator") {
    const auto sm = generate_synthetic_motor(11, motor3());
    FitReport rep;
    const auto fit = fit_loss_models(sm.samples, sm.truth.power_levels, &rep);

    CHECK(rep.nrmse_sft < 1e-9);
    CHECK(rep.nrmse_rtr < 1e-9);
    CHECK(rep.nrmse_str < 1e-9);
    CHECK(rep.nrmse_mgt < 1e-8);
    CHECK(rep.nrmse_wdg < 1e-8);

    CHECK(fit.a_sft[0] == Approx(sm.truth.a_sft[0]).epsilon(1e-6));
    CHECK(fit.a_sft[1] == Approx(sm.truth.a_sft[1]).epsilon(1e-6));
    for (size_t j = 0; j < fit.power_levels.size(); ++j) {
        for (int i = 0; i < 3; ++i) {
            CHECK(fit.traction[j].a_rtr[i] == Approx(sm.truth.traction[j].a_rtr[i]).margin(1e-6));
            CHECK(fit.traction[j].a_str[i] == Approx(sm.truth.traction[j].a_str[i]).margin(1e-6));
        }
        CHECK(fit.traction[j].a_wdg_2 ==
              Approx(sm.truth.traction[j].a_wdg_2).epsilon(1e-6).margin(1e-6));
    }
}

TEST_CASE("noisy fit stays within the reported quality ceilings") {
    const auto sm = generate_synthetic_motor(12, motor3(), 0.01);
    FitReport rep;
    fit_loss_models(sm.samples, std::vector<double>(sm.truth.power_levels), &rep);
    CHECK(rep.nrmse_rtr < 0.015);
    CHECK(rep.nrmse_str < 0.034);
    CHECK(rep.nrmse_mgt < 0.014);
    CHECK(rep.nrmse_wdg < 0.054);
}

TEST_CASE("component with all-zero losses fits to zero") {
    auto sm = generate_synthetic_motor(13, motor3());
    for (auto& s : sm.samples) s.p_rtr = 0.0;
    const auto fit = fit_loss_models(sm.samples, sm.truth.power_levels, nullptr);
    for (const auto& lv : fit.traction) {
        CHECK(std::abs(lv.a_rtr[0]) < 1e-9);
        CHECK(std::abs(lv.a_rtr[1]) < 1e-9);
        CHECK(std::abs(lv.a_rtr[2]) < 1e-9);
    }
}

TEST_CASE("rank-deficient identification names the component") {
    // single repeated sample cannot identify a quadratic in speed
    std::vector<LossSample> samples;
    for (int i = 0; i < 200; ++i) {
        LossSample s;
        s.omega = 500.0;
        s.pm = 50e3;
        s.theta = 65.0;
        s.p_rtr = 100.0;
        samples.push_back(s);
    }
    try {
        fit_loss_models(samples, {0.0, 50e3, 100e3});
        FAIL("expected identification error");
    } catch (const IdentificationError& e) {
        CHECK(std::string(e.component()).size() > 0);
    }
}

TEST_CASE("model JSON round trip") {
    const auto sm = generate_synthetic_motor(14, motor3());
    const auto j = to_json(sm.truth);
    const auto back = motor_model_from_json(j);
    CHECK(back.a_sft[0] == sm.truth.a_sft[0]);
    CHECK((back.Q_wdg_brk - sm.truth.Q_wdg_brk).norm() == 0.0);
    CHECK(back.traction.size() == sm.truth.traction.size());
    CHECK((back.traction[5].R_wdg - sm.truth.traction[5].R_wdg).norm() == 0.0);
}

TEST_CASE("loss sample CSV round trip") {
    const auto sm = generate_synthetic_motor(15, motor3());
    std::ostringstream os;
    write_samples_csv(os, sm.samples);
    std::istringstream is(os.str());
    const auto back = read_samples_csv(is);
    REQUIRE(back.size() == sm.samples.size());
    CHECK(back[7].p_wdg == sm.samples[7].p_wdg);
    CHECK(back[7].omega == sm.samples[7].omega);
}
