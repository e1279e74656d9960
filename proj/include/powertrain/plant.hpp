// Drivetrain power balance, motor speed kinematics, mass model and
// design-time performance checks.
#pragma once

#include <cmath>
#include <optional>
#include <string>

#include "powertrain/common.hpp"
#include "powertrain/cycle.hpp"

namespace powertrain::plant {

enum class TransmissionKind { FGT, CVT };

inline std::string to_string(TransmissionKind k) { return k == TransmissionKind::FGT ? "FGT" : "CVT"; }

struct DrivetrainParams {
    TransmissionKind kind = TransmissionKind::FGT;
    double eta_gb = 0.98;     // gearbox efficiency (eta_fgt or eta_cvt)
    double eta_fd = 1.0;      // final drive efficiency
    double gamma_fd = 1.0;    // final drive ratio
    double gamma_fgt = 8.0;   // FGT design ratio (optimized when bounds differ)
    double gamma_fgt_min = 0.5;
    double gamma_fgt_max = 12.0;
    double gamma_min = 0.75;  // CVT ratio bounds
    double gamma_max = 2.1;
    double r_b = 0.65;        // regenerative braking fraction

    double eta() const { return eta_gb * eta_fd; }

    double gamma_lo() const { return kind == TransmissionKind::FGT ? gamma_fgt_min : gamma_min; }
    double gamma_hi() const { return kind == TransmissionKind::FGT ? gamma_fgt_max : gamma_max; }

    void validate() const {
        if (!(eta() > 0.0 && eta() <= 1.0)) throw ValidationError("eta_gb*eta_fd must be in (0, 1]");
        if (!(gamma_lo() > 0.0 && gamma_lo() <= gamma_hi()))
            throw ValidationError("gamma bounds must satisfy 0 < lo <= hi");
        if (!(r_b >= 0.0 && r_b <= 1.0)) throw ValidationError("r_b must be in [0, 1]");
        if (gamma_fd <= 0) throw ValidationError("gamma_fd must be positive");
    }
};

struct MassModel {
    double m_0 = 2000.0;  // kg, frame + battery + rotating equivalent
    double m_m = 24.58;   // kg, motor
    double m_fgt = 50.0;  // kg
    double m_cvt = 80.0;  // kg

    void validate() const {
        if (m_0 < 0 || m_m < 0 || m_fgt < 0 || m_cvt < 0) throw ValidationError("masses must be >= 0");
    }
};

struct PerformanceSpec {
    double alpha_start = 0.2;          // rad
    double v_max = 135.0 / 3.6;        // m/s
    double t_acc = 15.0;               // s
    double v_acc = 100.0 / 3.6;        // m/s
    double omega_m_b = 733.0;          // rad/s, motor base speed

    void validate() const {
        if (alpha_start < 0 || v_max <= 0 || t_acc <= 0 || v_acc <= 0 || omega_m_b <= 0)
            throw ValidationError("performance spec entries must be positive");
    }
};

inline double total_mass(const MassModel& m, TransmissionKind kind) {
    return m.m_0 + m.m_m + (kind == TransmissionKind::FGT ? m.m_fgt : m.m_cvt);
}

inline double motor_speed(double v, double gamma, const DrivetrainParams& d, double r_w) {
    if (gamma < d.gamma_lo() - 1e-12 || gamma > d.gamma_hi() + 1e-12)
        throw ValidationError("gamma outside transmission bounds");
    return gamma * d.gamma_fd * v / r_w;
}

// The two affine lower bounds whose pointwise max convexifies the
// traction/braking case split. lb1 dominates for P_fd >= 0, lb2 for P_fd < 0.
inline std::pair<double, double> shaft_power_bounds(double P_fd, const DrivetrainParams& d) {
    return {P_fd / d.eta(), d.eta() * d.r_b * P_fd};
}

// Exact case split of the shaft power (forward-simulation side).
inline double shaft_power_exact(double P_fd, const DrivetrainParams& d) {
    return P_fd >= 0.0 ? P_fd / d.eta() : d.eta() * d.r_b * P_fd;
}

// Minimum tractive motor power; selects the loss-model branch per timestep.
inline double min_traction_power(double P_req, const DrivetrainParams& d, double P_m_min) {
    auto [lb1, lb2] = shaft_power_bounds(P_req, d);
    return std::max(std::max(lb1, lb2), P_m_min);
}

struct PerformanceCheck {
    bool pass = false;
    double margin = 0.0;  // >= 0 means satisfied; units of the constraint
    std::string detail;
};

struct PerformanceReport {
    PerformanceCheck gradeability;
    PerformanceCheck top_speed;
    PerformanceCheck acceleration;
    double gamma_used = 0.0;

    bool all_pass() const { return gradeability.pass && top_speed.pass && acceleration.pass; }
};

struct MotorEnvelope {
    double T_m_max = 145.0;       // N*m
    double d_1_max = 0.0;         // W*s/rad
    double d_0_max = 112e3;       // W
    double P_m_max = 112e3;       // W, ceiling
    double omega_m_max = 1047.0;  // rad/s
};

// Gradeability, top-speed torque and acceleration requirements evaluated at
// the design ratio (gamma_fgt for FGT, the relevant CVT bound otherwise).
inline PerformanceReport check_performance(const cycle::VehicleBodyParams& body, const MassModel& mass,
                                           const DrivetrainParams& d, const MotorEnvelope& env,
                                           const PerformanceSpec& spec) {
    PerformanceReport rep;
    const double m_v = total_mass(mass, d.kind);
    const bool fgt = d.kind == TransmissionKind::FGT;
    const double gamma_grade = fgt ? d.gamma_fgt : d.gamma_max;
    const double gamma_speed = fgt ? d.gamma_fgt : d.gamma_min;
    rep.gamma_used = fgt ? d.gamma_fgt : d.gamma_max;

    {
        const double lhs = m_v * body.g * std::sin(spec.alpha_start) * body.r_w;
        const double rhs = env.T_m_max * d.eta_fd * d.gamma_fd * d.eta_gb * gamma_grade;
        rep.gradeability.margin = rhs - lhs;
        rep.gradeability.pass = lhs <= rhs;
        rep.gradeability.detail = "wheel torque demand " + format_double(lhs) + " N*m vs capability " +
                                  format_double(rhs) + " N*m";
    }
    {
        cycle::CyclePoint p;
        p.v = spec.v_max;
        const double T_req = cycle::request_power(p, body, m_v) / spec.v_max * body.r_w;
        const double cap_torque = env.T_m_max * d.eta_fd * d.eta_gb * gamma_speed * d.gamma_fd;
        const double cap_power =
            (env.d_1_max * gamma_speed * d.gamma_fd + env.d_0_max * body.r_w / spec.v_max) * d.eta_fd * d.eta_gb;
        const double rhs = std::min(cap_torque, cap_power);
        rep.top_speed.margin = rhs - T_req;
        rep.top_speed.pass = T_req <= rhs;
        rep.top_speed.detail = "torque demand at v_max " + format_double(T_req) + " N*m vs capability " +
                               format_double(rhs) + " N*m";
    }
    {
        // required total reduction to hold base speed through the sprint; the
        // available side carries the final drive for either transmission
        const double disc = 2.0 * env.P_m_max * d.eta() * spec.t_acc / m_v - spec.v_acc * spec.v_acc;
        if (disc <= 0.0) {
            rep.acceleration.pass = false;
            rep.acceleration.margin = disc;
            rep.acceleration.detail = "design cannot reach v_acc in t_acc (negative discriminant)";
        } else {
            const double lhs = body.r_w * spec.omega_m_b / std::sqrt(disc);
            const double rhs = (fgt ? d.gamma_fgt : d.gamma_max) * d.gamma_fd;
            rep.acceleration.margin = rhs - lhs;
            rep.acceleration.pass = lhs <= rhs;
            rep.acceleration.detail =
                "required total ratio " + format_double(lhs) + " vs available " + format_double(rhs);
        }
    }
    return rep;
}

}  // namespace powertrain::plant
