// Exact nonlinear forward simulator (case-split shaft power, tight losses,
// implicit-trapezoidal thermal network, smaller-root battery) and the
// small-horizon exhaustive-enumeration optimizer used as an optimality
// oracle for the convex solver.
#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "powertrain/battery.hpp"
#include "powertrain/common.hpp"
#include "powertrain/config.hpp"
#include "powertrain/cycle.hpp"
#include "powertrain/motor.hpp"
#include "powertrain/plant.hpp"
#include "powertrain/thermal.hpp"

namespace powertrain::oracle {

struct ControlTrajectory {
    std::vector<double> P_brk;   // W, per sample, >= 0
    std::vector<double> gamma;   // per sample for CVT; ignored for FGT
    double gamma_fgt = std::numeric_limits<double>::quiet_NaN();  // FGT design ratio
};

struct StepRecord {
    double P_req = 0, P_brk = 0, P_fd = 0, P_m = 0, omega = 0, P_bar = 0;
    motor::ComponentLosses losses;
    double P_inv = 0, P_dc = 0, P_loss_inv = 0, P_loss_tra = 0, P_rej = 0;
    double mdot = 0, P_fan = 0, P_bat = 0, P_int = 0;
    thermal::TemperatureState theta = thermal::TemperatureState::Zero();
    double E_b = 0;
    bool speed_ok = true, box_ok = true, temp_ok = true, soe_ok = true, fan_ok = true, battery_ok = true,
         gamma_ok = true;
    bool ok() const { return speed_ok && box_ok && temp_ok && soe_ok && fan_ok && battery_ok && gamma_ok; }
};

struct SimTrace {
    std::vector<StepRecord> steps;
    double delta_Eb = 0.0;  // J
    bool feasible = true;
    int first_violation = -1;
};

namespace detail {

struct Chain {
    // algebraic per-sample quantities given temperatures and SoE
    StepRecord rec;
    bool hard_fail = false;  // battery discriminant
};

inline Chain eval_chain(const config::PowertrainConfig& cfg, const motor::MotorLossModel& model,
                        double m_v, size_t k, const cycle::CyclePoint& pt, double P_brk, double gamma,
                        const thermal::TemperatureState& theta, double E_b, bool enforce_limits) {
    Chain c;
    StepRecord& r = c.rec;
    const auto& d = cfg.drivetrain;
    const auto& lim = cfg.motor_limits;

    r.theta = theta;
    r.E_b = E_b;
    r.P_req = cycle::request_power(pt, cfg.body, m_v);
    r.P_brk = std::max(0.0, P_brk);
    r.P_fd = r.P_req + r.P_brk;
    r.P_m = plant::shaft_power_exact(r.P_fd, d);
    r.gamma_ok = gamma >= d.gamma_lo() - 1e-9 && gamma <= d.gamma_hi() + 1e-9;
    r.omega = gamma * d.gamma_fd * pt.v / cfg.body.r_w;
    r.P_bar = plant::min_traction_power(r.P_req, d, lim.P_m_min_floor);

    r.speed_ok = r.omega <= lim.omega_m_max * (1 + 1e-9);
    if (r.speed_ok) {
        const auto [plo, phi] = motor::motor_feasible_box(std::min(r.omega, lim.omega_m_max), lim);
        const double tol = 1e-6 * lim.P_m_max_ceiling;
        r.box_ok = r.P_m >= plo - tol && r.P_m <= phi + tol;
    } else {
        r.box_ok = false;
    }

    r.losses = motor::eval_losses(r.omega, r.P_m, theta[thermal::MGT], theta[thermal::WDG], r.P_bar, model);
    r.P_inv = r.P_m + r.losses.total();
    r.P_dc = motor::inverter_power(r.P_inv, model.alpha_inv);
    r.P_loss_inv = r.P_dc - r.P_inv;
    r.P_loss_tra = r.P_m - r.P_fd;
    r.P_rej = std::max(0.0, thermal::heat_rejected(theta, cfg.thermal));
    const auto air = thermal::fan_airflow(r.P_rej, r.P_loss_inv, r.P_loss_tra, cfg.fan);
    r.mdot = air.mdot;
    r.fan_ok = !air.saturated;
    r.P_fan = thermal::fan_power(r.mdot, cfg.fan);
    r.P_bat = battery::terminal_power(r.P_dc, cfg.battery.P_aux, r.P_fan);
    try {
        r.P_int = battery::internal_power(r.P_bat, E_b, cfg.battery, battery::LossMode::EnergyDependent);
    } catch (const battery::InfeasibleDemand&) {
        c.hard_fail = true;
        r.battery_ok = false;
        return c;
    }
    if (std::abs(r.P_int) > cfg.battery.p_int_max(E_b) * (1 + 1e-9)) r.battery_ok = false;
    if (enforce_limits)
        for (int i = 0; i < thermal::kNodes; ++i)
            if (theta[i] > cfg.thermal.theta_max[i] + 1e-6) r.temp_ok = false;
    r.soe_ok = E_b >= cfg.battery.soe_lo() - 1e-6 && E_b <= cfg.battery.soe_hi() + 1e-6;
    return c;
}

}  // namespace detail

// Exact replay of a control trajectory. Per-interval dynamics are implicit
// (losses at k+1 depend on the temperatures at k+1), resolved by fixed-point
// iteration on the algebraic chain.
inline SimTrace forward_simulate(const cycle::DriveCycle& dc, const config::PowertrainConfig& cfg,
                                 const ControlTrajectory& u, bool stop_on_hard_fail = true) {
    if (!cfg.motor_model) throw ValidationError("forward_simulate requires a fitted motor model");
    const auto& model = *cfg.motor_model;
    const size_t n = dc.points.size();
    if (u.P_brk.size() != n) throw ValidationError("control trajectory length mismatch");
    const bool fgt = cfg.drivetrain.kind == plant::TransmissionKind::FGT;
    if (!fgt && u.gamma.size() != n) throw ValidationError("CVT gamma trajectory length mismatch");
    if (fgt && !(u.gamma_fgt > 0)) throw ValidationError("FGT replay requires gamma_fgt");

    const double m_v = cfg.total_mass();
    SimTrace trace;
    trace.steps.reserve(n);

    thermal::TemperatureState theta = thermal::TemperatureState::Constant(cfg.thermal.theta_col);
    double E_b = cfg.battery.soe_init();

    auto gamma_at = [&](size_t k) { return fgt ? u.gamma_fgt : u.gamma[k]; };

    auto chain_at = [&](size_t k, const thermal::TemperatureState& th, double eb) {
        return detail::eval_chain(cfg, model, m_v, k, dc.points[k], u.P_brk[k], gamma_at(k), th, eb,
                                  cfg.enforce_thermal_limits);
    };

    detail::Chain cur = chain_at(0, theta, E_b);
    auto note = [&](const detail::Chain& c, int k) {
        trace.steps.push_back(c.rec);
        if (!c.rec.ok() && trace.first_violation < 0) trace.first_violation = k;
        if (!c.rec.ok()) trace.feasible = false;
    };
    if (cur.hard_fail) {
        note(cur, 0);
        trace.delta_Eb = 0;
        return trace;
    }
    note(cur, 0);

    for (size_t k = 0; k + 1 < n; ++k) {
        const auto L_k = (Eigen::Matrix<double, 5, 1>() << cur.rec.losses.sft, cur.rec.losses.rtr,
                          cur.rec.losses.mgt, cur.rec.losses.str, cur.rec.losses.wdg)
                             .finished();
        thermal::TemperatureState th_next = theta;
        double eb_next = E_b;
        detail::Chain nxt;
        for (int pass = 0; pass < 12; ++pass) {
            nxt = chain_at(k + 1, th_next, eb_next);
            if (nxt.hard_fail) break;
            const auto L_k1 = (Eigen::Matrix<double, 5, 1>() << nxt.rec.losses.sft, nxt.rec.losses.rtr,
                               nxt.rec.losses.mgt, nxt.rec.losses.str, nxt.rec.losses.wdg)
                                  .finished();
            const thermal::TemperatureState th_new =
                thermal::integrate_step(theta, L_k, L_k1, dc.dt, cfg.thermal);
            const double eb_new = E_b - 0.5 * dc.dt * (cur.rec.P_int + nxt.rec.P_int);
            const double dth = (th_new - th_next).cwiseAbs().maxCoeff();
            const double deb = std::abs(eb_new - eb_next);
            th_next = th_new;
            eb_next = eb_new;
            if (dth < 1e-12 && deb < 1e-9) break;
        }
        if (nxt.hard_fail) {
            note(nxt, int(k + 1));
            if (stop_on_hard_fail) {
                trace.delta_Eb = cfg.battery.soe_init() - E_b;
                return trace;
            }
        }
        theta = th_next;
        E_b = eb_next;
        cur = chain_at(k + 1, theta, E_b);
        note(cur, int(k + 1));
    }
    trace.delta_Eb = cfg.battery.soe_init() - E_b;
    return trace;
}

// ---------------------------------------------------------------------------
// Exhaustive control-grid search. Exact for tiny horizons: every control
// sequence on the product grid is forward-simulated, infeasible sequences are
// discarded, and the best terminal SoE wins. No state discretization.
// ---------------------------------------------------------------------------

struct DpGrids {
    std::vector<double> brake_fractions = {0.0, 0.25, 0.5, 0.75, 1.0};  // of max regen-diversion demand
    std::vector<double> gammas;  // CVT per-step grid, or FGT design grid; empty = config value
};

struct DpResult {
    bool found = false;
    double delta_Eb = std::numeric_limits<double>::infinity();  // J
    ControlTrajectory best;
    std::uint64_t evaluated = 0;
    std::uint64_t feasible = 0;
};

inline DpResult dp_optimize(const cycle::DriveCycle& dc, const config::PowertrainConfig& cfg,
                            const DpGrids& grids) {
    const size_t n = dc.points.size();
    if (n > 9) throw ValidationError("dp_optimize horizon capped at 8 steps");
    if (grids.brake_fractions.empty()) throw ValidationError("empty brake grid");
    const bool fgt = cfg.drivetrain.kind == plant::TransmissionKind::FGT;
    const double m_v = cfg.total_mass();

    // per-node brake candidates: fractions of the braking demand (always {0}
    // on traction nodes)
    std::vector<std::vector<double>> brk(n);
    for (size_t k = 0; k < n; ++k) {
        const double preq = cycle::request_power(dc.points[k], cfg.body, m_v);
        if (preq >= 0.0) {
            brk[k] = {0.0};
        } else {
            for (double f : grids.brake_fractions) brk[k].push_back(f * (-preq));
        }
    }
    std::vector<double> gam_grid = grids.gammas;
    if (gam_grid.empty())
        gam_grid = {fgt ? cfg.drivetrain.gamma_fgt
                        : 0.5 * (cfg.drivetrain.gamma_min + cfg.drivetrain.gamma_max)};

    DpResult result;
    ControlTrajectory u;
    u.P_brk.assign(n, 0.0);
    if (!fgt) u.gamma.assign(n, gam_grid.front());

    std::function<void(size_t)> recurse = [&](size_t k) {
        if (k == n) {
            ++result.evaluated;
            const SimTrace t = forward_simulate(dc, cfg, u, true);
            if (t.feasible && t.steps.size() == n) {
                ++result.feasible;
                if (t.delta_Eb < result.delta_Eb) {
                    result.delta_Eb = t.delta_Eb;
                    result.best = u;
                    result.found = true;
                }
            }
            return;
        }
        for (double pb : brk[k]) {
            u.P_brk[k] = pb;
            if (!fgt) {
                for (double g : gam_grid) {
                    u.gamma[k] = g;
                    recurse(k + 1);
                }
            } else {
                recurse(k + 1);
            }
        }
    };

    if (fgt) {
        for (double g : gam_grid) {
            u.gamma_fgt = g;
            recurse(0);
        }
    } else {
        recurse(0);
    }
    return result;
}

}  // namespace powertrain::oracle
