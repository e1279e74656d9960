#include <catch2/catch_amalgamated.hpp>

#include "powertrain/plant.hpp"

using namespace powertrain;
using namespace powertrain::plant;
using Catch::Approx;

TEST_CASE("total_mass adds the selected gearbox") {
    MassModel m;
    m.m_0 = 2000.0;
    m.m_m = 24.58;
    m.m_fgt = 50.0;
    m.m_cvt = 80.0;
    CHECK(total_mass(m, TransmissionKind::FGT) == Approx(2074.58));
    CHECK(total_mass(m, TransmissionKind::CVT) - total_mass(m, TransmissionKind::FGT) == Approx(30.0));
    MassModel zero;
    zero.m_0 = 1500.0;
    zero.m_m = 0.0;
    zero.m_fgt = 0.0;
    CHECK(total_mass(zero, TransmissionKind::FGT) == Approx(1500.0));
}

TEST_CASE("motor_speed kinematics") {
    DrivetrainParams d;
    d.kind = TransmissionKind::CVT;
    d.gamma_fd = 7.0;
    d.gamma_min = 0.75;
    d.gamma_max = 2.1;
    CHECK(motor_speed(0.0, 1.0, d, 0.3) == Approx(0.0));
    CHECK(motor_speed(10.0, 1.0, d, 0.3) == Approx(233.3333).epsilon(1e-6));
    // top CVT ratio at high speed overspeeds the reference motor
    CHECK(motor_speed(37.5, 2.1, d, 0.3) == Approx(1837.5));
    CHECK(motor_speed(37.5, 2.1, d, 0.3) > 1047.0);
    CHECK_THROWS_AS(motor_speed(10.0, 5.0, d, 0.3), ValidationError);
}

TEST_CASE("motor_speed is separately linear in v and gamma") {
    DrivetrainParams d;
    d.kind = TransmissionKind::CVT;
    d.gamma_fd = 7.0;
    Rng rng(3);
    for (int i = 0; i < 100; ++i) {
        const double v = rng.uniform(0.0, 40.0);
        const double g = rng.uniform(0.75, 2.1);
        const double c = rng.uniform(0.1, 3.0);
        CHECK(motor_speed(c * v, g, d, 0.3) == Approx(c * motor_speed(v, g, d, 0.3)).margin(1e-9));
    }
}

TEST_CASE("shaft power bounds convexify the case split") {
    DrivetrainParams d;  // eta = 0.98, r_b = 0.65
    SECTION("zero") {
        auto [lb1, lb2] = shaft_power_bounds(0.0, d);
        CHECK(lb1 == 0.0);
        CHECK(lb2 == 0.0);
    }
    SECTION("traction side, lb1 dominates") {
        auto [lb1, lb2] = shaft_power_bounds(9.8e3, d);
        CHECK(lb1 == Approx(10e3));
        CHECK(lb1 > lb2);
        CHECK(shaft_power_exact(9.8e3, d) == Approx(lb1));
    }
    SECTION("braking side, lb2 dominates") {
        auto [lb1, lb2] = shaft_power_bounds(-10e3, d);
        CHECK(lb2 == Approx(-6.37e3));
        CHECK(lb2 > lb1);
        CHECK(shaft_power_exact(-10e3, d) == Approx(lb2));
    }
    SECTION("max of bounds equals the exact split everywhere") {
        Rng rng(11);
        for (int i = 0; i < 500; ++i) {
            const double pfd = rng.uniform(-150e3, 150e3);
            auto [lb1, lb2] = shaft_power_bounds(pfd, d);
            CHECK(std::max(lb1, lb2) == Approx(shaft_power_exact(pfd, d)).margin(1e-9));
        }
    }
}

TEST_CASE("min_traction_power clamps at the motor floor") {
    DrivetrainParams d;
    CHECK(min_traction_power(0.0, d, -50e3) == Approx(0.0));
    CHECK(min_traction_power(9.8e3, d, -50e3) == Approx(10e3));
    // deep braking hits the floor
    CHECK(min_traction_power(-100.0e3, d, -63.7e3) == Approx(-63.7e3));
    CHECK(min_traction_power(-200.0e3, d, -63.7e3) == Approx(-63.7e3));
}

TEST_CASE("min_traction_power is midpoint convex in the request") {
    DrivetrainParams d;
    Rng rng(17);
    for (int i = 0; i < 500; ++i) {
        const double a = rng.uniform(-150e3, 150e3);
        const double b = rng.uniform(-150e3, 150e3);
        const double floor = rng.uniform(-120e3, -10e3);
        const double mid = min_traction_power(0.5 * (a + b), d, floor);
        const double avg = 0.5 * (min_traction_power(a, d, floor) + min_traction_power(b, d, floor));
        CHECK(mid <= avg + 1e-9);
    }
}

namespace {
MotorEnvelope motor3_envelope() {
    MotorEnvelope env;
    env.T_m_max = 145.0;
    env.P_m_max = 112e3;
    env.omega_m_max = 1047.0;
    // affine cap through base speed and top speed
    env.d_1_max = (112e3 - 145.0 * 733.0) / (1047.0 - 733.0);
    env.d_0_max = 112e3 - env.d_1_max * 1047.0;
    return env;
}
}  // namespace

TEST_CASE("performance report for the reference FGT design") {
    cycle::VehicleBodyParams body;
    MassModel mass;
    DrivetrainParams d;
    d.kind = TransmissionKind::FGT;
    d.eta_gb = 0.98;
    d.eta_fd = 1.0;
    d.gamma_fd = 1.0;
    d.gamma_fgt = 8.0;
    PerformanceSpec spec;
    spec.omega_m_b = 733.0;
    const auto env = motor3_envelope();

    // every check is decided with a finite margin; at the short default
    // ratio the reference grade demand exceeds the small motor's torque
    const auto rep = check_performance(body, mass, d, env, spec);
    CHECK_FALSE(rep.gradeability.pass);
    CHECK(std::isfinite(rep.gradeability.margin));
    CHECK(rep.gradeability.margin < 0.0);
    CHECK(rep.top_speed.pass);
    CHECK(rep.acceleration.pass);
    CHECK(rep.top_speed.margin > 0.0);
    CHECK(rep.acceleration.margin > 0.0);

    // hand check: demand side of the grade constraint
    const double lhs = total_mass(mass, d.kind) * body.g * std::sin(spec.alpha_start) * body.r_w;
    CHECK(rep.gradeability.margin == Approx(145.0 * 0.98 * 8.0 - lhs));

    // a longer ratio restores gradeability
    d.gamma_fgt = 8.6;
    CHECK(check_performance(body, mass, d, env, spec).all_pass());

    // torque demand at top speed comes straight from the road load
    cycle::CyclePoint p;
    p.v = spec.v_max;
    const double t_req = cycle::request_power(p, body, total_mass(mass, d.kind)) / spec.v_max * body.r_w;
    CHECK(t_req > 0.0);
    CHECK(rep.top_speed.margin <= env.T_m_max * d.eta_fd * d.eta_gb * 8.0 - t_req + 1e-9);
}

TEST_CASE("performance report for the reference CVT design") {
    cycle::VehicleBodyParams body;
    MassModel mass;
    DrivetrainParams d;
    d.kind = TransmissionKind::CVT;
    d.eta_gb = 0.96;
    d.eta_fd = 1.0;
    d.gamma_fd = 7.0;
    PerformanceSpec spec;
    spec.omega_m_b = 733.0;
    const auto rep = check_performance(body, mass, d, motor3_envelope(), spec);
    CHECK(rep.all_pass());
}

TEST_CASE("flat start passes gradeability trivially") {
    cycle::VehicleBodyParams body;
    MassModel mass;
    DrivetrainParams d;
    d.kind = TransmissionKind::FGT;
    d.gamma_fgt = 8.0;
    d.gamma_fd = 1.0;
    PerformanceSpec spec;
    spec.alpha_start = 0.0;
    const auto rep = check_performance(body, mass, d, motor3_envelope(), spec);
    CHECK(rep.gradeability.pass);
    CHECK(rep.gradeability.margin == Approx(145.0 * 0.98 * 8.0));
}

TEST_CASE("unreachable acceleration is a clean failure") {
    cycle::VehicleBodyParams body;
    MassModel mass;
    mass.m_0 = 50000.0;  // absurd mass forces a negative discriminant
    DrivetrainParams d;
    d.kind = TransmissionKind::FGT;
    d.gamma_fgt = 8.0;
    PerformanceSpec spec;
    const auto rep = check_performance(body, mass, d, motor3_envelope(), spec);
    CHECK_FALSE(rep.acceleration.pass);
    CHECK(rep.acceleration.detail.find("cannot reach") != std::string::npos);
}
