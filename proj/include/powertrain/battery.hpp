// Battery terminal power balance, internal-power loss models (simple
// quadratic and energy-dependent open-circuit form) and SoE dynamics.
#pragma once

#include <cmath>

#include "powertrain/common.hpp"

namespace powertrain::battery {

enum class LossMode { Simple, EnergyDependent };

struct BatteryParams {
    double E_b_max = 37.0 * 3.6e6;  // J (37 kWh)
    double zeta_min = 0.15;         // -
    double zeta_max = 0.85;         // -
    double b_1 = 1.2872e-3;         // W/J, open-circuit power slope in E_b
    double b_2 = 2.5097e-3;         // W/J (coefficient on E_b_max)
    double c_1 = 0.55e-3;           // W/J, |P_int| cap slope in E_b
    double c_2 = 0.85e-3;           // W/J (coefficient on E_b_max)
    double alpha_b = 2.3e-6;        // 1/W, simple quadratic loss
    double P_aux = 0.0;             // W

    double soe_init() const { return zeta_max * E_b_max; }
    double soe_lo() const { return zeta_min * E_b_max; }
    double soe_hi() const { return zeta_max * E_b_max; }
    double open_circuit_power(double E_b) const { return b_1 * E_b + b_2 * E_b_max; }
    double p_int_max(double E_b) const { return c_1 * E_b + c_2 * E_b_max; }

    void validate() const {
        if (!(0.0 <= zeta_min && zeta_min < zeta_max && zeta_max <= 1.0))
            throw ValidationError("SoC window must satisfy 0 <= zeta_min < zeta_max <= 1");
        if (!(E_b_max > 0)) throw ValidationError("E_b_max must be positive");
        if (alpha_b < 0) throw ValidationError("alpha_b must be >= 0");
        if (open_circuit_power(soe_lo()) <= 0 || open_circuit_power(soe_hi()) <= 0)
            throw ValidationError("open-circuit power must stay positive over the SoE window");
    }
};

struct BatteryState {
    double E_b = 0.0;  // J
};

inline double terminal_power(double P_dc, double P_aux, double P_fan) { return P_dc + P_aux + P_fan; }

class InfeasibleDemand : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Internal battery power for the given terminal power. The energy-dependent
// mode solves (P_int - P_bat) * P_oc = P_int^2 for the smaller (physical)
// root; demand beyond P_oc/4 has no real solution.
inline double internal_power(double P_bat, double E_b, const BatteryParams& p, LossMode mode) {
    if (mode == LossMode::Simple) return p.alpha_b * P_bat * P_bat + P_bat;
    const double P_oc = p.open_circuit_power(E_b);
    const double disc = P_oc * P_oc - 4.0 * P_oc * P_bat;
    if (disc < 0.0)
        throw InfeasibleDemand("battery demand exceeds deliverable power (P_bat > P_oc/4): P_bat = " +
                               format_double(P_bat) + " W, P_oc = " + format_double(P_oc) + " W");
    return 0.5 * (P_oc - std::sqrt(disc));
}

struct SoeStep {
    double E_b = 0.0;        // J
    bool within_bounds = true;
};

// trapezoidal SoE update
inline SoeStep soe_step(double E_b, double P_int_k, double P_int_k1, double dt, const BatteryParams& p) {
    if (!(dt > 0)) throw ValidationError("dt must be positive");
    SoeStep s;
    s.E_b = E_b - 0.5 * dt * (P_int_k + P_int_k1);
    s.within_bounds = s.E_b >= p.soe_lo() - 1e-6 && s.E_b <= p.soe_hi() + 1e-6;
    return s;
}

}  // namespace powertrain::battery
