#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "powertrain/cycle.hpp"

using namespace powertrain;
using namespace powertrain::cycle;
using Catch::Approx;

namespace {
DriveCycle from_csv(const std::string& text, double dt) {
    std::istringstream is(text);
    return load_cycle(is, dt);
}
}  // namespace

TEST_CASE("load_cycle keeps already-uniform samples") {
    const auto c = from_csv("t,v,alpha\n0,0,0\n1,1,0\n2,2,0\n", 1.0);
    REQUIRE(c.points.size() == 3);
    CHECK(c.points[0].v == Approx(0.0));
    CHECK(c.points[1].v == Approx(1.0));
    CHECK(c.points[2].v == Approx(2.0));
    CHECK(c.dt == 1.0);
}

TEST_CASE("load_cycle interpolates coarse samples") {
    const auto c = from_csv("t,v\n0,0\n2,2\n", 1.0);
    REQUIRE(c.points.size() == 3);
    CHECK(c.points[1].v == Approx(1.0));
}

TEST_CASE("load_cycle reports the offending line") {
    std::istringstream is("t,v,alpha\nabc,1,0\n");
    try {
        load_cycle(is, 1.0);
        FAIL("expected parse error");
    } catch (const ParseError& e) {
        CHECK(e.line() == 2);
    }
}

TEST_CASE("load_cycle rejects non-monotone time") {
    std::istringstream is("t,v\n0,0\n2,1\n1,2\n");
    CHECK_THROWS_AS(load_cycle(is, 1.0), ValidationError);
}

TEST_CASE("derive_acceleration uses central differences") {
    DriveCycle c;
    c.dt = 1.0;
    for (int k = 0; k < 3; ++k) c.points.push_back({double(k), 0.0, 0.0, 0.0});

    SECTION("constant slope") {
        c.points[0].v = 0;
        c.points[1].v = 1;
        c.points[2].v = 2;
        const auto out = derive_acceleration(c);
        for (const auto& p : out.points) CHECK(p.a == Approx(1.0));
    }
    SECTION("constant speed") {
        for (auto& p : c.points) p.v = 5.0;
        const auto out = derive_acceleration(c);
        for (const auto& p : out.points) CHECK(p.a == Approx(0.0));
    }
    SECTION("triangular profile") {
        c.points[0].v = 0;
        c.points[1].v = 2;
        c.points[2].v = 0;
        const auto out = derive_acceleration(c);
        CHECK(out.points[0].a == Approx(2.0));
        CHECK(out.points[1].a == Approx(0.0));
        CHECK(out.points[2].a == Approx(-2.0));
    }
    SECTION("too short") {
        c.points.resize(1);
        CHECK_THROWS_AS(derive_acceleration(c), ValidationError);
    }
}

TEST_CASE("request_power matches hand-evaluated road load") {
    VehicleBodyParams body;
    const double m_v = 2000.0;

    CyclePoint p;
    p.v = 0.0;
    CHECK(request_power(p, body, m_v) == Approx(0.0));

    p.v = 10.0;
    const double drag = 0.5 * 1.2041 * 0.28 * 2.29 * 1000.0;
    const double roll = 2000.0 * 9.81 * 0.007 * 10.0;
    CHECK(request_power(p, body, m_v) == Approx(drag + roll));
    CHECK(request_power(p, body, m_v) == Approx(1759.4).epsilon(1e-3));

    p.a = -2.0;
    CHECK(request_power(p, body, m_v) == Approx(drag + roll - 40e3));
    CHECK(request_power(p, body, m_v) < 0.0);
}

TEST_CASE("request_power inertia term is exactly linear in a") {
    VehicleBodyParams body;
    Rng rng(7);
    for (int i = 0; i < 200; ++i) {
        CyclePoint p;
        p.v = rng.uniform(0.0, 40.0);
        p.alpha = rng.uniform(-0.3, 0.3);
        p.a = rng.uniform(-4.0, 4.0);
        const double m_v = rng.uniform(1000.0, 3000.0);
        CyclePoint p0 = p;
        p0.a = 0.0;
        const double lhs = request_power(p, body, m_v) - request_power(p0, body, m_v);
        CHECK(lhs == Approx(p.v * m_v * p.a).margin(1e-9));
    }
}

TEST_CASE("request_power is monotone in speed on flat road") {
    VehicleBodyParams body;
    double prev = -1.0;
    for (double v = 0.0; v <= 50.0; v += 0.5) {
        CyclePoint p;
        p.v = v;
        const double val = request_power(p, body, 2000.0);
        CHECK(val >= prev);
        prev = val;
    }
}

TEST_CASE("resampling commutes with evaluation on affine speed data") {
    // affine v(t): linear interpolation is exact, so resample-then-evaluate
    // equals evaluate-then-resample
    DriveCycle raw;
    raw.dt = 2.0;
    for (int k = 0; k <= 5; ++k) raw.points.push_back({2.0 * k, 3.0 + 1.5 * 2.0 * k, 0.0, 0.0});
    const auto fine = resample(raw, 1.0);
    for (size_t k = 0; k < fine.points.size(); ++k)
        CHECK(fine.points[k].v == Approx(3.0 + 1.5 * fine.points[k].t));
}

TEST_CASE("synthetic cycle is deterministic in the seed") {
    SyntheticCycleSpec spec;
    spec.seed = 99;
    spec.duration_s = 300;
    const auto a = make_synthetic_cycle(spec);
    const auto b = make_synthetic_cycle(spec);
    REQUIRE(a.points.size() == b.points.size());
    for (size_t k = 0; k < a.points.size(); ++k) {
        CHECK(a.points[k].v == b.points[k].v);
        CHECK(a.points[k].a == b.points[k].a);
    }
    spec.seed = 100;
    const auto c = make_synthetic_cycle(spec);
    bool any_diff = false;
    for (size_t k = 0; k < a.points.size(); ++k) any_diff |= a.points[k].v != c.points[k].v;
    CHECK(any_diff);
}

TEST_CASE("repeat doubles duration and distance") {
    SyntheticCycleSpec spec;
    spec.seed = 5;
    spec.duration_s = 200;
    const auto one = make_synthetic_cycle(spec);
    const auto two = repeat(one, 2);
    CHECK(two.points.size() == 2 * one.points.size());
    CHECK(two.distance() == Approx(2.0 * one.distance()).epsilon(0.02));
    // time stays uniform
    for (size_t k = 1; k < two.points.size(); ++k)
        CHECK(two.points[k].t - two.points[k - 1].t == Approx(two.dt));
}
