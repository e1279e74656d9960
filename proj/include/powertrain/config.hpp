// Global configuration: one versioned JSON document with defaults mirroring
// the reference vehicle, motor and thermal parameter sets.
#pragma once

#include <array>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <string>
#include <unistd.h>
#include <vector>

#include <json.hpp>

#include "powertrain/battery.hpp"
#include "powertrain/common.hpp"
#include "powertrain/cycle.hpp"
#include "powertrain/motor.hpp"
#include "powertrain/plant.hpp"
#include "powertrain/solver.hpp"
#include "powertrain/thermal.hpp"

namespace powertrain::config {

using nlohmann::json;

struct CycleSpec {
    std::string source = "synthetic";  // synthetic | csv
    std::string csv_path;
    double dt = 1.0;
    int repeat = 1;
    cycle::SyntheticCycleSpec synthetic;
};

struct PowertrainConfig {
    int version = 1;
    cycle::VehicleBodyParams body;
    plant::MassModel mass;
    plant::DrivetrainParams drivetrain;
    motor::MotorLimits motor_limits;
    std::optional<motor::MotorLossModel> motor_model;  // fitted; absent until fit-motor ran
    std::uint64_t motor_seed = 42;                     // synthetic loss-map seed
    double motor_noise = 0.0;
    thermal::ThermalParams thermal;
    thermal::FanParams fan;
    battery::BatteryParams battery;
    plant::PerformanceSpec performance;
    solver::SolverSettings solver;
    CycleSpec cycle;
    bool enforce_thermal_limits = true;
    bool enforce_performance = true;

    double total_mass() const { return plant::total_mass(mass, drivetrain.kind); }

    void validate() const {
        body.validate();
        mass.validate();
        drivetrain.validate();
        motor_limits.validate();
        thermal.validate();
        fan.validate();
        battery.validate();
        performance.validate();
    }
};

// Reference motors; the first is Leaf-scale, the rest are scaled-down
// variants with reduced coolant flow (the last one starves the coolant path).
struct MotorPreset {
    std::string name;
    double m_m;          // kg
    double T_m_max;      // N*m
    double P_m_max;      // W
    double omega_m_max;  // rad/s
    double omega_m_b;    // rad/s
    double coolant_lpm;  // l/min
};

inline const std::vector<MotorPreset>& motor_presets() {
    static const std::vector<MotorPreset> presets = {
        {"motor1", 50.66, 287.0, 134e3, 1047.0, 419.0, 6.5},
        {"motor2", 42.04, 228.0, 132e3, 1047.0, 550.0, 5.2},
        {"motor3", 24.58, 145.0, 112e3, 1047.0, 733.0, 0.2},
        {"motor4", 24.58, 145.0, 112e3, 1047.0, 733.0, 0.025},
    };
    return presets;
}

// Coolant flow sets the stator-to-coolant conductance. Flow enters through a
// saturating law so the Leaf-scale flows land near full conductance while the
// starved variants lose most of the path.
inline double coolant_conductance(double lpm) {
    const double k_full = 260.0;  // W/K at generous flow
    return k_full * (lpm / (lpm + 0.35));
}

inline void apply_motor_preset(PowertrainConfig& cfg, const MotorPreset& p) {
    cfg.mass.m_m = p.m_m;
    cfg.motor_limits = motor::make_motor_limits(p.T_m_max, p.P_m_max, p.omega_m_max, p.omega_m_b);
    cfg.performance.omega_m_b = p.omega_m_b;
    cfg.thermal.k_str_col = coolant_conductance(p.coolant_lpm);
    cfg.motor_model.reset();
}

inline void apply_motor_preset(PowertrainConfig& cfg, const std::string& name) {
    for (const auto& p : motor_presets())
        if (p.name == name) {
            apply_motor_preset(cfg, p);
            return;
        }
    throw ValidationError("unknown motor preset: " + name);
}

inline void set_transmission(PowertrainConfig& cfg, plant::TransmissionKind kind) {
    cfg.drivetrain.kind = kind;
    if (kind == plant::TransmissionKind::FGT) {
        cfg.drivetrain.eta_gb = 0.98;
        cfg.drivetrain.eta_fd = 1.0;
        cfg.drivetrain.gamma_fd = 1.0;
    } else {
        cfg.drivetrain.eta_gb = 0.96;
        cfg.drivetrain.eta_fd = 1.0;
        cfg.drivetrain.gamma_fd = 7.0;
    }
}

inline PowertrainConfig default_config() {
    PowertrainConfig cfg;
    set_transmission(cfg, plant::TransmissionKind::FGT);
    apply_motor_preset(cfg, "motor3");
    return cfg;
}

// ---------------------------------------------------------------------------
// JSON (de)serialization with pointer-carrying schema errors.
// ---------------------------------------------------------------------------

class SchemaError : public std::runtime_error {
public:
    SchemaError(const std::string& what, std::string pointer)
        : std::runtime_error(what + " (at " + pointer + ")"), pointer_(std::move(pointer)) {}
    const std::string& pointer() const { return pointer_; }

private:
    std::string pointer_;
};

namespace detail {

inline double need_number(const json& j, const std::string& ptr, const char* key) {
    if (!j.contains(key)) throw SchemaError("missing required field", ptr + "/" + key);
    if (!j[key].is_number()) throw SchemaError("expected a number", ptr + "/" + key);
    return j[key].get<double>();
}

inline double opt_number(const json& j, const std::string& ptr, const char* key, double dflt) {
    if (!j.contains(key)) return dflt;
    if (!j[key].is_number()) throw SchemaError("expected a number", ptr + "/" + key);
    return j[key].get<double>();
}

inline std::string opt_string(const json& j, const std::string& ptr, const char* key,
                              const std::string& dflt) {
    if (!j.contains(key)) return dflt;
    if (!j[key].is_string()) throw SchemaError("expected a string", ptr + "/" + key);
    return j[key].get<std::string>();
}

inline bool opt_bool(const json& j, const std::string& ptr, const char* key, bool dflt) {
    if (!j.contains(key)) return dflt;
    if (!j[key].is_boolean()) throw SchemaError("expected a boolean", ptr + "/" + key);
    return j[key].get<bool>();
}

}  // namespace detail

inline json to_json(const PowertrainConfig& c) {
    json j;
    j["version"] = c.version;
    j["body"] = {{"rho_a", c.body.rho_a}, {"c_d", c.body.c_d}, {"A_f", c.body.A_f},
                 {"c_r", c.body.c_r},     {"g", c.body.g},     {"r_w", c.body.r_w}};
    j["mass"] = {{"m_0", c.mass.m_0}, {"m_m", c.mass.m_m}, {"m_fgt", c.mass.m_fgt}, {"m_cvt", c.mass.m_cvt}};
    j["drivetrain"] = {{"kind", plant::to_string(c.drivetrain.kind)},
                       {"eta_gb", c.drivetrain.eta_gb},
                       {"eta_fd", c.drivetrain.eta_fd},
                       {"gamma_fd", c.drivetrain.gamma_fd},
                       {"gamma_fgt", c.drivetrain.gamma_fgt},
                       {"gamma_fgt_min", c.drivetrain.gamma_fgt_min},
                       {"gamma_fgt_max", c.drivetrain.gamma_fgt_max},
                       {"gamma_min", c.drivetrain.gamma_min},
                       {"gamma_max", c.drivetrain.gamma_max},
                       {"r_b", c.drivetrain.r_b}};
    j["motor"] = {{"T_m_max", c.motor_limits.T_m_max},
                  {"T_m_min", c.motor_limits.T_m_min},
                  {"d_0_max", c.motor_limits.d_0_max},
                  {"d_1_max", c.motor_limits.d_1_max},
                  {"d_0_min", c.motor_limits.d_0_min},
                  {"d_1_min", c.motor_limits.d_1_min},
                  {"omega_m_max", c.motor_limits.omega_m_max},
                  {"omega_m_b", c.motor_limits.omega_m_b},
                  {"P_m_max", c.motor_limits.P_m_max_ceiling},
                  {"P_m_min", c.motor_limits.P_m_min_floor},
                  {"seed", c.motor_seed},
                  {"noise", c.motor_noise}};
    if (c.motor_model) j["motor"]["model"] = motor::to_json(*c.motor_model);
    j["thermal"] = {{"c_sft", c.thermal.c[0]},
                    {"c_rtr", c.thermal.c[1]},
                    {"c_mgt", c.thermal.c[2]},
                    {"c_str", c.thermal.c[3]},
                    {"c_wdg", c.thermal.c[4]},
                    {"c_ewdg", c.thermal.c[5]},
                    {"k_sft_rtr", c.thermal.k_sft_rtr},
                    {"k_rtr_mgt", c.thermal.k_rtr_mgt},
                    {"k_rtr_str", c.thermal.k_rtr_str},
                    {"k_rtr_wdg", c.thermal.k_rtr_wdg},
                    {"k_str_wdg", c.thermal.k_str_wdg},
                    {"k_str_col", c.thermal.k_str_col},
                    {"k_wdg_ewdg", c.thermal.k_wdg_ewdg},
                    {"theta_col", c.thermal.theta_col},
                    {"theta_max_sft", c.thermal.theta_max[0]},
                    {"theta_max_rtr", c.thermal.theta_max[1]},
                    {"theta_max_mgt", c.thermal.theta_max[2]},
                    {"theta_max_str", c.thermal.theta_max[3]},
                    {"theta_max_wdg", c.thermal.theta_max[4]},
                    {"theta_max_ewdg", c.thermal.theta_max[5]},
                    {"enforce_limits", c.enforce_thermal_limits}};
    j["fan"] = {{"eta_he", c.fan.eta_he},
                {"C_p_air", c.fan.C_p_air},
                {"delta_theta_a", c.fan.delta_theta_a},
                {"alpha_f", c.fan.alpha_f},
                {"mdot_air_max", c.fan.mdot_air_max}};
    j["battery"] = {{"E_b_max", c.battery.E_b_max}, {"zeta_min", c.battery.zeta_min},
                    {"zeta_max", c.battery.zeta_max}, {"b_1", c.battery.b_1},
                    {"b_2", c.battery.b_2},           {"c_1", c.battery.c_1},
                    {"c_2", c.battery.c_2},           {"alpha_b", c.battery.alpha_b},
                    {"P_aux", c.battery.P_aux}};
    j["performance"] = {{"alpha_start", c.performance.alpha_start},
                        {"v_max", c.performance.v_max},
                        {"t_acc", c.performance.t_acc},
                        {"v_acc", c.performance.v_acc},
                        {"omega_m_b", c.performance.omega_m_b},
                        {"enforce", c.enforce_performance}};
    j["solver"] = {{"feas_tol", c.solver.feas_tol},
                   {"gap_tol", c.solver.gap_tol},
                   {"max_iter", c.solver.max_iter}};
    j["cycle"] = {{"source", c.cycle.source},
                  {"csv_path", c.cycle.csv_path},
                  {"dt", c.cycle.dt},
                  {"repeat", c.cycle.repeat},
                  {"seed", c.cycle.synthetic.seed},
                  {"duration_s", c.cycle.synthetic.duration_s},
                  {"v_peak", c.cycle.synthetic.v_peak},
                  {"segments", c.cycle.synthetic.segments},
                  {"aggressive", c.cycle.synthetic.aggressive}};
    return j;
}

inline PowertrainConfig from_json(const json& j) {
    PowertrainConfig c = default_config();
    using namespace detail;
    if (!j.is_object()) throw SchemaError("config must be a JSON object", "");
    if (!j.contains("version")) throw SchemaError("missing required field", "/version");
    if (!j["version"].is_number_integer() || j["version"].get<int>() != 1)
        throw SchemaError("unsupported config version", "/version");

    if (j.contains("motor_preset")) {
        if (!j["motor_preset"].is_string()) throw SchemaError("expected a string", "/motor_preset");
        apply_motor_preset(c, j["motor_preset"].get<std::string>());
    }
    if (j.contains("drivetrain") && j["drivetrain"].contains("kind")) {
        const std::string kind = opt_string(j["drivetrain"], "/drivetrain", "kind", "FGT");
        if (kind != "FGT" && kind != "CVT") throw SchemaError("kind must be FGT or CVT", "/drivetrain/kind");
        set_transmission(c, kind == "FGT" ? plant::TransmissionKind::FGT : plant::TransmissionKind::CVT);
    }

    if (j.contains("body")) {
        const auto& b = j["body"];
        c.body.rho_a = opt_number(b, "/body", "rho_a", c.body.rho_a);
        c.body.c_d = opt_number(b, "/body", "c_d", c.body.c_d);
        c.body.A_f = opt_number(b, "/body", "A_f", c.body.A_f);
        c.body.c_r = opt_number(b, "/body", "c_r", c.body.c_r);
        c.body.g = opt_number(b, "/body", "g", c.body.g);
        c.body.r_w = opt_number(b, "/body", "r_w", c.body.r_w);
    }
    if (j.contains("mass")) {
        const auto& m = j["mass"];
        c.mass.m_0 = opt_number(m, "/mass", "m_0", c.mass.m_0);
        c.mass.m_m = opt_number(m, "/mass", "m_m", c.mass.m_m);
        c.mass.m_fgt = opt_number(m, "/mass", "m_fgt", c.mass.m_fgt);
        c.mass.m_cvt = opt_number(m, "/mass", "m_cvt", c.mass.m_cvt);
    }
    if (j.contains("drivetrain")) {
        const auto& d = j["drivetrain"];
        c.drivetrain.eta_gb = opt_number(d, "/drivetrain", "eta_gb", c.drivetrain.eta_gb);
        c.drivetrain.eta_fd = opt_number(d, "/drivetrain", "eta_fd", c.drivetrain.eta_fd);
        c.drivetrain.gamma_fd = opt_number(d, "/drivetrain", "gamma_fd", c.drivetrain.gamma_fd);
        c.drivetrain.gamma_fgt = opt_number(d, "/drivetrain", "gamma_fgt", c.drivetrain.gamma_fgt);
        c.drivetrain.gamma_fgt_min = opt_number(d, "/drivetrain", "gamma_fgt_min", c.drivetrain.gamma_fgt_min);
        c.drivetrain.gamma_fgt_max = opt_number(d, "/drivetrain", "gamma_fgt_max", c.drivetrain.gamma_fgt_max);
        c.drivetrain.gamma_min = opt_number(d, "/drivetrain", "gamma_min", c.drivetrain.gamma_min);
        c.drivetrain.gamma_max = opt_number(d, "/drivetrain", "gamma_max", c.drivetrain.gamma_max);
        c.drivetrain.r_b = opt_number(d, "/drivetrain", "r_b", c.drivetrain.r_b);
    }
    if (j.contains("motor")) {
        const auto& m = j["motor"];
        auto& L = c.motor_limits;
        L.T_m_max = opt_number(m, "/motor", "T_m_max", L.T_m_max);
        L.T_m_min = opt_number(m, "/motor", "T_m_min", L.T_m_min);
        L.d_0_max = opt_number(m, "/motor", "d_0_max", L.d_0_max);
        L.d_1_max = opt_number(m, "/motor", "d_1_max", L.d_1_max);
        L.d_0_min = opt_number(m, "/motor", "d_0_min", L.d_0_min);
        L.d_1_min = opt_number(m, "/motor", "d_1_min", L.d_1_min);
        L.omega_m_max = opt_number(m, "/motor", "omega_m_max", L.omega_m_max);
        L.omega_m_b = opt_number(m, "/motor", "omega_m_b", L.omega_m_b);
        L.P_m_max_ceiling = opt_number(m, "/motor", "P_m_max", L.P_m_max_ceiling);
        L.P_m_min_floor = opt_number(m, "/motor", "P_m_min", L.P_m_min_floor);
        c.motor_seed = std::uint64_t(opt_number(m, "/motor", "seed", double(c.motor_seed)));
        c.motor_noise = opt_number(m, "/motor", "noise", c.motor_noise);
        if (m.contains("model")) c.motor_model = motor::motor_model_from_json(m["model"]);
    }
    if (j.contains("thermal")) {
        const auto& t = j["thermal"];
        auto& tp = c.thermal;
        tp.c[0] = opt_number(t, "/thermal", "c_sft", tp.c[0]);
        tp.c[1] = opt_number(t, "/thermal", "c_rtr", tp.c[1]);
        tp.c[2] = opt_number(t, "/thermal", "c_mgt", tp.c[2]);
        tp.c[3] = opt_number(t, "/thermal", "c_str", tp.c[3]);
        tp.c[4] = opt_number(t, "/thermal", "c_wdg", tp.c[4]);
        tp.c[5] = opt_number(t, "/thermal", "c_ewdg", tp.c[5]);
        tp.k_sft_rtr = opt_number(t, "/thermal", "k_sft_rtr", tp.k_sft_rtr);
        tp.k_rtr_mgt = opt_number(t, "/thermal", "k_rtr_mgt", tp.k_rtr_mgt);
        tp.k_rtr_str = opt_number(t, "/thermal", "k_rtr_str", tp.k_rtr_str);
        tp.k_rtr_wdg = opt_number(t, "/thermal", "k_rtr_wdg", tp.k_rtr_wdg);
        tp.k_str_wdg = opt_number(t, "/thermal", "k_str_wdg", tp.k_str_wdg);
        tp.k_str_col = opt_number(t, "/thermal", "k_str_col", tp.k_str_col);
        tp.k_wdg_ewdg = opt_number(t, "/thermal", "k_wdg_ewdg", tp.k_wdg_ewdg);
        tp.theta_col = opt_number(t, "/thermal", "theta_col", tp.theta_col);
        tp.theta_max[0] = opt_number(t, "/thermal", "theta_max_sft", tp.theta_max[0]);
        tp.theta_max[1] = opt_number(t, "/thermal", "theta_max_rtr", tp.theta_max[1]);
        tp.theta_max[2] = opt_number(t, "/thermal", "theta_max_mgt", tp.theta_max[2]);
        tp.theta_max[3] = opt_number(t, "/thermal", "theta_max_str", tp.theta_max[3]);
        tp.theta_max[4] = opt_number(t, "/thermal", "theta_max_wdg", tp.theta_max[4]);
        tp.theta_max[5] = opt_number(t, "/thermal", "theta_max_ewdg", tp.theta_max[5]);
        c.enforce_thermal_limits = opt_bool(t, "/thermal", "enforce_limits", c.enforce_thermal_limits);
    }
    if (j.contains("fan")) {
        const auto& f = j["fan"];
        c.fan.eta_he = opt_number(f, "/fan", "eta_he", c.fan.eta_he);
        c.fan.C_p_air = opt_number(f, "/fan", "C_p_air", c.fan.C_p_air);
        c.fan.delta_theta_a = opt_number(f, "/fan", "delta_theta_a", c.fan.delta_theta_a);
        c.fan.alpha_f = opt_number(f, "/fan", "alpha_f", c.fan.alpha_f);
        c.fan.mdot_air_max = opt_number(f, "/fan", "mdot_air_max", c.fan.mdot_air_max);
    }
    if (j.contains("battery")) {
        const auto& b = j["battery"];
        c.battery.E_b_max = need_number(b, "/battery", "E_b_max");
        c.battery.zeta_min = opt_number(b, "/battery", "zeta_min", c.battery.zeta_min);
        c.battery.zeta_max = opt_number(b, "/battery", "zeta_max", c.battery.zeta_max);
        c.battery.b_1 = opt_number(b, "/battery", "b_1", c.battery.b_1);
        c.battery.b_2 = opt_number(b, "/battery", "b_2", c.battery.b_2);
        c.battery.c_1 = opt_number(b, "/battery", "c_1", c.battery.c_1);
        c.battery.c_2 = opt_number(b, "/battery", "c_2", c.battery.c_2);
        c.battery.alpha_b = opt_number(b, "/battery", "alpha_b", c.battery.alpha_b);
        c.battery.P_aux = opt_number(b, "/battery", "P_aux", c.battery.P_aux);
    }
    if (j.contains("performance")) {
        const auto& p = j["performance"];
        c.performance.alpha_start = opt_number(p, "/performance", "alpha_start", c.performance.alpha_start);
        c.performance.v_max = opt_number(p, "/performance", "v_max", c.performance.v_max);
        c.performance.t_acc = opt_number(p, "/performance", "t_acc", c.performance.t_acc);
        c.performance.v_acc = opt_number(p, "/performance", "v_acc", c.performance.v_acc);
        c.performance.omega_m_b = opt_number(p, "/performance", "omega_m_b", c.performance.omega_m_b);
        c.enforce_performance = opt_bool(p, "/performance", "enforce", c.enforce_performance);
    }
    if (j.contains("solver")) {
        const auto& s = j["solver"];
        c.solver.feas_tol = opt_number(s, "/solver", "feas_tol", c.solver.feas_tol);
        c.solver.gap_tol = opt_number(s, "/solver", "gap_tol", c.solver.gap_tol);
        c.solver.max_iter = int(opt_number(s, "/solver", "max_iter", c.solver.max_iter));
    }
    if (j.contains("cycle")) {
        const auto& y = j["cycle"];
        c.cycle.source = opt_string(y, "/cycle", "source", c.cycle.source);
        if (c.cycle.source != "synthetic" && c.cycle.source != "csv")
            throw SchemaError("source must be 'synthetic' or 'csv'", "/cycle/source");
        c.cycle.csv_path = opt_string(y, "/cycle", "csv_path", c.cycle.csv_path);
        c.cycle.dt = opt_number(y, "/cycle", "dt", c.cycle.dt);
        c.cycle.repeat = int(opt_number(y, "/cycle", "repeat", c.cycle.repeat));
        c.cycle.synthetic.seed = std::uint64_t(opt_number(y, "/cycle", "seed", double(c.cycle.synthetic.seed)));
        c.cycle.synthetic.duration_s = opt_number(y, "/cycle", "duration_s", c.cycle.synthetic.duration_s);
        c.cycle.synthetic.v_peak = opt_number(y, "/cycle", "v_peak", c.cycle.synthetic.v_peak);
        c.cycle.synthetic.segments = int(opt_number(y, "/cycle", "segments", c.cycle.synthetic.segments));
        c.cycle.synthetic.aggressive = opt_bool(y, "/cycle", "aggressive", c.cycle.synthetic.aggressive);
        c.cycle.synthetic.dt = c.cycle.dt;
    }
    try {
        c.validate();
    } catch (const ValidationError& e) {
        throw SchemaError(e.what(), "");
    }
    return c;
}

// Environment overrides: POWERTRAIN_<section>__<key>=value, e.g.
// POWERTRAIN_battery__P_aux=500.
inline void apply_env_overrides(json& j, const char* prefix = "POWERTRAIN_") {
    for (char** e = ::environ; *e; ++e) {
        const std::string kv = *e;
        if (kv.rfind(prefix, 0) != 0) continue;
        const auto eq = kv.find('=');
        if (eq == std::string::npos) continue;
        std::string key = kv.substr(std::string(prefix).size(), eq - std::string(prefix).size());
        const std::string value = kv.substr(eq + 1);
        json* node = &j;
        size_t pos = 0;
        while (true) {
            const size_t sep = key.find("__", pos);
            const std::string part = key.substr(pos, sep == std::string::npos ? std::string::npos : sep - pos);
            if (sep == std::string::npos) {
                try {
                    (*node)[part] = std::stod(value);
                } catch (...) {
                    if (value == "true" || value == "false")
                        (*node)[part] = (value == "true");
                    else
                        (*node)[part] = value;
                }
                break;
            }
            node = &(*node)[part];
            pos = sep + 2;
        }
    }
}

inline cycle::DriveCycle build_cycle(const PowertrainConfig& cfg) {
    cycle::DriveCycle dc;
    if (cfg.cycle.source == "csv") {
        std::ifstream f(cfg.cycle.csv_path);
        if (!f) throw ValidationError("cannot open cycle CSV: " + cfg.cycle.csv_path);
        dc = cycle::load_cycle(f, cfg.cycle.dt);
        dc = cycle::derive_acceleration(dc);
    } else {
        cycle::SyntheticCycleSpec spec = cfg.cycle.synthetic;
        spec.dt = cfg.cycle.dt;
        dc = cycle::make_synthetic_cycle(spec);
    }
    if (cfg.cycle.repeat > 1) dc = cycle::repeat(dc, cfg.cycle.repeat);
    return dc;
}

}  // namespace powertrain::config
