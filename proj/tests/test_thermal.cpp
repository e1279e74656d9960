#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "powertrain/thermal.hpp"

using namespace powertrain;
using namespace powertrain::thermal;
using Catch::Approx;

TEST_CASE("equilibrium is a fixed point") {
    ThermalParams p;
    TemperatureState th = TemperatureState::Constant(p.theta_col);
    const Losses5 zero = Losses5::Zero();
    const auto dot = lptn_derivatives(th, zero, p);
    CHECK(dot.cwiseAbs().maxCoeff() == Approx(0.0).margin(1e-12));
    const auto next = integrate_step(th, zero, zero, 1.0, p);
    CHECK((next - th).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("isolated magnet injection heats only through its capacity") {
    ThermalParams p;
    TemperatureState th = TemperatureState::Constant(p.theta_col);
    Losses5 L = Losses5::Zero();
    L[2] = 500.0;  // magnet
    const auto dot = lptn_derivatives(th, L, p);
    CHECK(dot[MGT] == Approx(500.0 / p.c[MGT]));
    CHECK(dot[SFT] == Approx(0.0).margin(1e-12));
    CHECK(dot[EWDG] == Approx(0.0).margin(1e-12));
}

TEST_CASE("end-winding node is driven by the winding losses") {
    ThermalParams p;
    TemperatureState th = TemperatureState::Constant(p.theta_col);
    Losses5 L = Losses5::Zero();
    L[4] = 900.0;  // winding
    const auto dot = lptn_derivatives(th, L, p);
    CHECK(dot[WDG] == Approx(900.0 / p.c[WDG]));
    CHECK(dot[EWDG] == Approx(900.0 / p.c[EWDG]));
}

TEST_CASE("two-node RC network matches the analytic exponential") {
    ThermalParams p;
    p.k_rtr_mgt = p.k_rtr_str = p.k_rtr_wdg = p.k_str_wdg = p.k_str_col = p.k_wdg_ewdg = 0.0;
    p.k_sft_rtr = 12.0;
    p.c[SFT] = 3000.0;
    p.c[RTR] = 7000.0;

    TemperatureState th = TemperatureState::Constant(65.0);
    th[SFT] = 100.0;
    const double tau = 1.0 / (p.k_sft_rtr * (1.0 / p.c[SFT] + 1.0 / p.c[RTR]));
    const double mean = (p.c[SFT] * 100.0 + p.c[RTR] * 65.0) / (p.c[SFT] + p.c[RTR]);

    const double dt = 0.01, horizon = 200.0;
    const int steps = int(horizon / dt + 0.5);
    const Losses5 zero = Losses5::Zero();
    TemperatureState cur = th;
    for (int s = 0; s < steps; ++s) cur = integrate_step(cur, zero, zero, dt, p);

    const double expect_sft = mean + (100.0 - mean) * std::exp(-horizon / tau);
    const double expect_rtr = mean + (65.0 - mean) * std::exp(-horizon / tau);
    CHECK(cur[SFT] == Approx(expect_sft).epsilon(1e-6));
    CHECK(cur[RTR] == Approx(expect_rtr).epsilon(1e-6));
    CHECK(cur[MGT] == Approx(65.0).margin(1e-12));
}

TEST_CASE("trapezoidal step conserves the energy balance") {
    ThermalParams p;
    Rng rng(3);
    TemperatureState th;
    for (int i = 0; i < 6; ++i) th[i] = 65.0 + rng.uniform(0.0, 60.0);
    Losses5 La, Lb;
    for (int i = 0; i < 5; ++i) {
        La[i] = rng.uniform(0.0, 800.0);
        Lb[i] = rng.uniform(0.0, 800.0);
    }
    const double dt = 1.0;
    const auto next = integrate_step(th, La, Lb, dt, p);

    double lhs = 0.0;
    for (int i = 0; i < 6; ++i) lhs += p.c[i] * (next[i] - th[i]);
    const double inject_a = La[0] + La[1] + La[2] + La[3] + 2.0 * La[4];
    const double inject_b = Lb[0] + Lb[1] + Lb[2] + Lb[3] + 2.0 * Lb[4];
    const double rejected = p.k_str_col * (0.5 * (th[STR] + next[STR]) - p.theta_col);
    const double rhs = 0.5 * dt * (inject_a + inject_b) - dt * rejected;
    CHECK(lhs == Approx(rhs).epsilon(1e-9));
}

TEST_CASE("small-dt step direction matches the derivatives") {
    ThermalParams p;
    Rng rng(5);
    TemperatureState th;
    for (int i = 0; i < 6; ++i) th[i] = 65.0 + rng.uniform(0.0, 50.0);
    Losses5 L;
    for (int i = 0; i < 5; ++i) L[i] = rng.uniform(0.0, 500.0);
    const double dt = 1e-6;
    const auto next = integrate_step(th, L, L, dt, p);
    const auto dot = lptn_derivatives(th, L, p);
    for (int i = 0; i < 6; ++i) CHECK((next[i] - th[i]) / dt == Approx(dot[i]).epsilon(1e-6));
}

TEST_CASE("constant losses converge to the unique steady state") {
    ThermalParams p;
    Losses5 L;
    L << 40.0, 180.0, 120.0, 300.0, 500.0;
    TemperatureState th = TemperatureState::Constant(p.theta_col);
    for (int k = 0; k < 200000; ++k) th = integrate_step(th, L, L, 1.0, p);
    // residual of the steady-state balance
    const auto dot = lptn_derivatives(th, L, p);
    CHECK(dot.cwiseAbs().maxCoeff() < 1e-9);
    // all above coolant
    for (int i = 0; i < 6; ++i) CHECK(th[i] > p.theta_col);
}

TEST_CASE("raising any loss never cools any node") {
    ThermalParams p;
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 50;
        std::vector<Losses5> base(n), more(n);
        for (int k = 0; k < n; ++k) {
            for (int i = 0; i < 5; ++i) base[k][i] = rng.uniform(0.0, 600.0);
            more[k] = base[k];
        }
        const int comp = rng.uniform_int(0, 4);
        for (int k = 0; k < n; ++k) more[k][comp] += rng.uniform(0.0, 300.0);

        TemperatureState a = TemperatureState::Constant(p.theta_col), b = a;
        for (int k = 0; k + 1 < n; ++k) {
            a = integrate_step(a, base[k], base[k + 1], 1.0, p);
            b = integrate_step(b, more[k], more[k + 1], 1.0, p);
            for (int i = 0; i < 6; ++i) CHECK(b[i] >= a[i] - 1e-9);
        }
    }
}

TEST_CASE("periodic excitation balances injected and rejected heat") {
    ThermalParams p;
    const int period = 40;
    std::vector<Losses5> prof(period);
    Rng rng(9);
    for (int k = 0; k < period; ++k)
        for (int i = 0; i < 5; ++i) prof[k][i] = rng.uniform(0.0, 700.0);

    TemperatureState th = TemperatureState::Constant(p.theta_col);
    double injected = 0.0, rejected = 0.0;
    const int periods = 250;
    for (int rep = 0; rep < periods; ++rep) {
        for (int k = 0; k < period; ++k) {
            const auto& La = prof[k];
            const auto& Lb = prof[(k + 1) % period];
            const auto next = integrate_step(th, La, Lb, 1.0, p);
            if (rep >= periods - 10) {
                injected += 0.5 * (La[0] + La[1] + La[2] + La[3] + 2 * La[4] + Lb[0] + Lb[1] + Lb[2] +
                                   Lb[3] + 2 * Lb[4]);
                rejected += p.k_str_col * (0.5 * (th[STR] + next[STR]) - p.theta_col);
            }
            th = next;
        }
    }
    CHECK(rejected == Approx(injected).epsilon(0.01));
}

TEST_CASE("zero-loss decay never expands the temperature spread") {
    Rng rng(11);
    for (int draw = 0; draw < 1000; ++draw) {
        ThermalParams p;
        for (int i = 0; i < 6; ++i) p.c[i] = rng.uniform(1000.0, 20000.0);
        std::array<double, 7> k;
        for (auto& v : k) v = rng.uniform(1.0, 200.0);
        p.set_conductances(k);
        const double dt = rng.uniform(0.1, 2.0);
        TemperatureState th;
        for (int i = 0; i < 6; ++i) th[i] = p.theta_col + rng.uniform(-40.0, 80.0);

        const Losses5 zero = Losses5::Zero();
        double spread = (th.array() - p.theta_col).abs().maxCoeff();
        for (int s = 0; s < 5; ++s) {
            th = integrate_step(th, zero, zero, dt, p);
            const double next_spread = (th.array() - p.theta_col).abs().maxCoeff();
            CHECK(next_spread <= spread + 1e-9);
            spread = next_spread;
        }
    }
}

TEST_CASE("fan airflow and power") {
    FanParams f;
    CHECK(fan_airflow(0.0, 0.0, 0.0, f).mdot == Approx(0.0));
    // 10.8 kW of heat with the reference constants moves 1 kg/s of air
    const auto r = fan_airflow(10.8e3, 0.0, 0.0, f);
    CHECK(r.mdot == Approx(1.0));
    CHECK(r.saturated == false);
    const auto sat = fan_airflow(100e3, 0.0, 0.0, f);
    CHECK(sat.saturated);
    CHECK(sat.mdot == Approx(f.mdot_air_max));

    CHECK(fan_power(0.0, f) == 0.0);
    CHECK(fan_power(0.8, f) == Approx(4.0 * fan_power(0.4, f)));
}

namespace {
ThermalTrajectory make_traj(const ThermalParams& truth, std::uint64_t seed, int n) {
    ThermalTrajectory tr;
    tr.dt = 1.0;
    Rng rng(seed);
    Losses5 cur = Losses5::Zero();
    for (int k = 0; k < n; ++k) {
        if (k % 25 == 0)
            for (int i = 0; i < 5; ++i) cur[i] = rng.uniform(0.0, 900.0);
        tr.losses.push_back(cur);
    }
    tr.theta.assign(n, TemperatureState::Constant(truth.theta_col));
    std::vector<TemperatureState> sim;
    simulate(tr, truth, &sim);
    tr.theta = sim;
    return tr;
}
}  // namespace

TEST_CASE("identification is a fixed point at the truth") {
    ThermalParams truth;
    const auto t1 = make_traj(truth, 1, 150);
    const auto t2 = make_traj(truth, 2, 150);
    IdentifyReport rep;
    const auto fit = identify_lptn({t1, t2}, truth, &rep);
    CHECK(rep.collective_nrmse < 1e-10);
    CHECK(fit.k_str_col == Approx(truth.k_str_col).epsilon(1e-6));
}

TEST_CASE("identification recovers from a 1.5x perturbed start") {
    ThermalParams truth;
    const auto t1 = make_traj(truth, 3, 250);
    const auto t2 = make_traj(truth, 4, 250);

    ThermalParams init = truth;
    for (int i = 0; i < 6; ++i) init.c[i] *= 1.5;
    auto ks = init.conductances();
    for (auto& v : ks) v *= 1.5;
    init.set_conductances(ks);

    IdentifyReport rep;
    const auto fit = identify_lptn({t1, t2}, init, &rep);
    CHECK(rep.converged);
    CHECK(rep.collective_nrmse < 0.0062);

    const auto kt = truth.conductances();
    const auto kf = fit.conductances();
    for (int i = 0; i < 7; ++i) CHECK(kf[i] == Approx(kt[i]).epsilon(0.05));
    for (int i = 0; i < 6; ++i) CHECK(fit.c[i] == Approx(truth.c[i]).epsilon(0.05));
}

TEST_CASE("identification Jacobian matches central differences") {
    ThermalParams truth;
    const auto tr = make_traj(truth, 5, 60);
    ThermalParams init = truth;
    init.k_rtr_mgt *= 1.3;
    init.c[MGT] *= 0.8;

    Eigen::VectorXd x = pack_log_params(init);
    Eigen::VectorXd r;
    Eigen::MatrixXd J;
    detail::residuals_and_jacobian({tr}, x, init, r, &J);

    const double h = 1e-6;
    for (int q = 0; q < kThermalParamCount; ++q) {
        Eigen::VectorXd xp = x, xm = x;
        xp[q] += h;
        xm[q] -= h;
        Eigen::VectorXd rp, rm;
        detail::residuals_and_jacobian({tr}, xp, init, rp, nullptr);
        detail::residuals_and_jacobian({tr}, xm, init, rm, nullptr);
        const Eigen::VectorXd fd = (rp - rm) / (2.0 * h);
        const double denom = std::max(1e-12, fd.norm());
        CHECK((J.col(q) - fd).norm() / denom < 1e-4);
    }
}
