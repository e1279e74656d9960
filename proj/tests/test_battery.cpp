#include <catch2/catch_amalgamated.hpp>

#include "powertrain/battery.hpp"

using namespace powertrain;
using namespace powertrain::battery;
using Catch::Approx;

TEST_CASE("terminal power is a plain sum") {
    CHECK(terminal_power(0, 0, 0) == 0.0);
    CHECK(terminal_power(10e3, 500, 100) == Approx(10.6e3));
    CHECK(terminal_power(-5e3, 0, 0) == Approx(-5e3));
}

TEST_CASE("internal power roots and modes") {
    BatteryParams p;
    SECTION("zero terminal power means zero internal power") {
        CHECK(internal_power(0.0, p.soe_init(), p, LossMode::Simple) == 0.0);
        CHECK(internal_power(0.0, p.soe_init(), p, LossMode::EnergyDependent) == Approx(0.0).margin(1e-12));
    }
    SECTION("simple mode with zero coefficient is the identity") {
        BatteryParams q = p;
        q.alpha_b = 0.0;
        CHECK(internal_power(1234.5, q.soe_init(), q, LossMode::Simple) == Approx(1234.5));
    }
    SECTION("hand-solved smaller root at 16% of open-circuit power") {
        const double E = p.soe_init();
        const double poc = p.open_circuit_power(E);
        const double pint = internal_power(0.16 * poc, E, p, LossMode::EnergyDependent);
        CHECK(pint == Approx(0.2 * poc).epsilon(1e-12));
    }
    SECTION("demand beyond the deliverable limit throws") {
        const double E = p.soe_init();
        const double poc = p.open_circuit_power(E);
        CHECK_THROWS_AS(internal_power(0.26 * poc, E, p, LossMode::EnergyDependent), InfeasibleDemand);
    }
}

TEST_CASE("losses are nonnegative in both modes and both signs") {
    BatteryParams p;
    Rng rng(3);
    for (int i = 0; i < 500; ++i) {
        const double E = rng.uniform(p.soe_lo(), p.soe_hi());
        const double poc = p.open_circuit_power(E);
        const double pbat = rng.uniform(-0.24, 0.24) * poc;
        const double simple = internal_power(pbat, E, p, LossMode::Simple);
        const double full = internal_power(pbat, E, p, LossMode::EnergyDependent);
        CHECK(simple >= pbat - 1e-9);
        CHECK(full >= pbat - 1e-9);
    }
}

TEST_CASE("energy-dependent mode matches the first-order loss law at small power") {
    BatteryParams p;
    Rng rng(5);
    for (int i = 0; i < 200; ++i) {
        const double E = rng.uniform(p.soe_lo(), p.soe_hi());
        const double poc = p.open_circuit_power(E);
        const double pbat = rng.uniform(-0.05, 0.05) * poc;
        const double full = internal_power(pbat, E, p, LossMode::EnergyDependent);
        const double approx = pbat + pbat * pbat / poc;
        CHECK(full == Approx(approx).epsilon(0.01).margin(1e-9));
    }
}

TEST_CASE("smaller root satisfies the cone relation with equality") {
    BatteryParams p;
    Rng rng(7);
    for (int i = 0; i < 200; ++i) {
        const double E = rng.uniform(p.soe_lo(), p.soe_hi());
        const double poc = p.open_circuit_power(E);
        const double pbat = rng.uniform(-0.2, 0.24) * poc;
        const double pint = internal_power(pbat, E, p, LossMode::EnergyDependent);
        CHECK((pint - pbat) * poc == Approx(pint * pint).epsilon(1e-9).margin(1e-6));
        // smaller root sits below poc/2
        CHECK(pint < 0.5 * poc);
    }
}

TEST_CASE("SoE step and initial condition") {
    BatteryParams p;
    CHECK(p.soe_init() == Approx(0.85 * 37.0 * 3.6e6));
    CHECK(p.soe_init() / 3.6e6 == Approx(31.45));

    const auto s = soe_step(p.soe_init(), 0.0, 0.0, 1.0, p);
    CHECK(s.E_b == Approx(p.soe_init()));
    CHECK(s.within_bounds);

    // constant 1 kW over an hour drains exactly 1 kWh
    double E = p.soe_init();
    for (int k = 0; k < 3600; ++k) E = soe_step(E, 1000.0, 1000.0, 1.0, p).E_b;
    CHECK((p.soe_init() - E) / 3.6e6 == Approx(1.0));

    const auto low = soe_step(p.soe_lo() + 100.0, 1000.0, 1000.0, 1.0, p);
    CHECK_FALSE(low.within_bounds);
}
