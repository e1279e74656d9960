// Direct transcription of the design-and-control problem onto the convex
// solver (trapezoidal collocation, relaxed loss/inverter/fan/battery
// epigraphs), the two-step warm-started solve, KPIs and the tightness audit.
#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "powertrain/config.hpp"
#include "powertrain/oracle.hpp"
#include "powertrain/solver.hpp"

namespace powertrain::optimize {

enum class Fidelity { Simple, Full };

inline std::string to_string(Fidelity f) { return f == Fidelity::Simple ? "simple" : "full"; }

// variable scales: solver works in kW / kWh / degC / hundreds of rad/s
constexpr double kSP = 1e3;    // power, W per unit
constexpr double kSE = 3.6e6;  // energy, J per unit (kWh)
constexpr double kSW = 100.0;  // speed, rad/s per unit
constexpr double kSU = 1e-2;   // 1/omega epigraph
constexpr double kSUU = 1e-4;  // 1/omega^2 epigraph

struct NodeVars {
    int pbrk = -1, pfd = -1, pm = -1, om = -1;
    int psft = -1, prtr = -1, pmgt = -1, pstr = -1, pwdg = -1;
    int pinv = -1, pdc = -1;
    int mdot = -1, pfan = -1, pbat = -1, pint = -1;
    int wu = -1, ww = -1;  // winding reciprocal epigraphs (traction only)
    int gam = -1;          // CVT ratio
    int eb = -1;
    std::array<int, 6> th = {-1, -1, -1, -1, -1, -1};
};

struct Transcription {
    solver::ConvexProgram prog;
    std::vector<NodeVars> node;
    int gamma_fgt = -1;  // design variable id; -1 when the ratio is pinned
    double gamma_fixed = std::numeric_limits<double>::quiet_NaN();
    Fidelity fidelity = Fidelity::Full;
    std::vector<double> P_req;                 // W
    std::vector<double> P_bar;                 // W
    std::vector<motor::TractionLevel> bundle;  // per node (traction nodes)
    std::vector<char> braking;                 // branch flag
    std::vector<char> standstill;
    std::vector<char> recip_active;            // winding reciprocal terms emitted
    double gamma_lb = 0.0, gamma_ub = 0.0;     // effective design bounds (FGT)
};

namespace detail {

using solver::LinTerm;

struct Row {
    const solver::ConvexProgram& prog;
    double row_scale;
    std::vector<LinTerm> terms;
    Row(const solver::ConvexProgram& p, double rs) : prog(p), row_scale(rs) {}
    Row& add(int var, double real_coef) {
        terms.push_back({var, real_coef * prog.scale(var) / row_scale});
        return *this;
    }
};

// sum_{ij} M_ij z_i z_j + extra_lin - rhs <= 0 over basis z = [1, vars...],
// M symmetric in real units
inline solver::Inequality& add_form(solver::ConvexProgram& prog, const std::vector<int>& vars,
                                    const Eigen::MatrixXd& M, const std::vector<LinTerm>& extra_scaled,
                                    double rhs_real, double row_scale, std::string name) {
    const int k = int(vars.size());
    Eigen::MatrixXd Q(k, k);
    for (int a = 0; a < k; ++a)
        for (int b = 0; b < k; ++b)
            Q(a, b) = 2.0 * M(a + 1, b + 1) * prog.scale(vars[a]) * prog.scale(vars[b]) / row_scale;
    std::vector<LinTerm> lin = extra_scaled;
    for (int a = 0; a < k; ++a)
        lin.push_back({vars[a], 2.0 * M(0, a + 1) * prog.scale(vars[a]) / row_scale});
    const double rhs = (rhs_real - M(0, 0)) / row_scale;
    return prog.add_quadratic(vars, std::move(Q), std::move(lin), rhs, std::move(name));
}

// real-basis 3x3 block of a stored 6x6 loss matrix
inline Eigen::MatrixXd block3(const motor::Mat6& Q) {
    Eigen::MatrixXd m(3, 3);
    m = Q.topLeftCorner<3, 3>();
    return m;
}

inline void require_representable(const motor::Mat6& Q, const std::string& what, int step) {
    if (Q.bottomRows<3>().cwiseAbs().maxCoeff() > 1e-12 || Q.rightCols<3>().cwiseAbs().maxCoeff() > 1e-12)
        throw TranscriptionError(what + ": lifted monomial couplings are not conic-representable", step);
}

}  // namespace detail

// Build the discretized program. Nodes live on the cycle samples; states are
// coupled by trapezoidal dynamics between consecutive samples.
inline Transcription transcribe(const config::PowertrainConfig& cfg, const cycle::DriveCycle& dc,
                                Fidelity fidelity) {
    if (!cfg.motor_model) throw ValidationError("transcribe requires a fitted motor model");
    if (dc.points.empty()) throw ValidationError("empty cycle");
    const auto& model = *cfg.motor_model;
    const auto& d = cfg.drivetrain;
    const auto& lim = cfg.motor_limits;
    const bool fgt = d.kind == plant::TransmissionKind::FGT;
    const bool full = fidelity == Fidelity::Full;
    const double m_v = cfg.total_mass();
    const size_t n = dc.points.size();
    const double dt = dc.dt;
    const double eta = d.eta();

    Transcription t;
    t.fidelity = fidelity;
    auto& prog = t.prog;
    t.node.resize(n);
    t.P_req.resize(n);
    t.P_bar.resize(n);
    t.bundle.resize(n);
    t.braking.assign(n, 0);
    t.standstill.assign(n, 0);
    t.recip_active.assign(n, 0);

    // ---- design variable and its effective bounds -------------------------
    double g_lb = d.gamma_lo(), g_ub = d.gamma_hi();
    if (cfg.enforce_performance) {
        const auto& perf = cfg.performance;
        double req_lb = 0.0, req_ub = std::numeric_limits<double>::infinity();
        // gradeability lower bound
        req_lb = std::max(req_lb, m_v * cfg.body.g * std::sin(perf.alpha_start) * cfg.body.r_w /
                                      (lim.T_m_max * d.eta_fd * d.gamma_fd * d.eta_gb));
        // acceleration bound on the total reduction
        const double disc = 2.0 * lim.P_m_max_ceiling * eta * perf.t_acc / m_v - sq(perf.v_acc);
        if (disc <= 0.0) throw TranscriptionError("design cannot reach v_acc in t_acc", -1);
        req_lb = std::max(req_lb, cfg.body.r_w * perf.omega_m_b / std::sqrt(disc) / d.gamma_fd);
        // top-speed torque (both envelope terms)
        cycle::CyclePoint vp;
        vp.v = perf.v_max;
        const double T_req = cycle::request_power(vp, cfg.body, m_v) / perf.v_max * cfg.body.r_w;
        double ts_lb = T_req / (lim.T_m_max * d.eta_fd * d.eta_gb * d.gamma_fd);
        // power-cap term: (d1*gx*gfd + d0*rw/vmax)*eta >= T_req
        const double lin = lim.d_1_max * d.gamma_fd * d.eta_fd * d.eta_gb;
        const double off = lim.d_0_max * cfg.body.r_w / perf.v_max * d.eta_fd * d.eta_gb;
        if (lin > 1e-12)
            ts_lb = std::max(ts_lb, (T_req - off) / lin);
        else if (lin < -1e-12)
            req_ub = std::min(req_ub, (T_req - off) / lin);
        else if (off < T_req)
            throw TranscriptionError("top-speed power envelope unsatisfiable", -1);
        if (fgt) {
            // the requirements bound the design variable; the top-speed
            // requirement pins the low ratio, gradeability/acceleration the
            // high one (identical here because the FGT has a single ratio)
            g_lb = std::max(g_lb, std::max(req_lb, ts_lb));
            g_ub = std::min(g_ub, req_ub);
        } else {
            // CVT requirements are constants; gate on them
            if (req_lb > d.gamma_max + 1e-9)
                throw TranscriptionError("CVT fails gradeability/acceleration requirement", -1);
            if (ts_lb > d.gamma_min + 1e-9)
                throw TranscriptionError("CVT fails the top-speed requirement at gamma_min", -1);
            if (req_ub < d.gamma_max - 1e-9)
                throw TranscriptionError("CVT top-speed power envelope violated", -1);
        }
    }
    // per-node overspeed cap
    for (size_t k = 0; k < n; ++k) {
        const double v = dc.points[k].v;
        if (v <= 1e-9) continue;
        const double cap = lim.omega_m_max * cfg.body.r_w / (d.gamma_fd * v);
        if (fgt)
            g_ub = std::min(g_ub, cap);
        else if (d.gamma_min > cap + 1e-12)
            throw TranscriptionError("speed " + format_double(v) + " m/s overspeeds the motor at gamma_min",
                                     int(k));
    }
    if (fgt && g_lb > g_ub + 1e-12)
        throw TranscriptionError("FGT ratio bounds empty: need >= " + format_double(g_lb) + ", <= " +
                                     format_double(g_ub),
                                 -1);
    t.gamma_lb = g_lb;
    t.gamma_ub = g_ub;
    // a collapsed interval pins the design ratio; no variable, no bounds
    const bool gamma_pinned = fgt && (g_ub - g_lb < 1e-9);
    if (gamma_pinned) t.gamma_fixed = 0.5 * (g_lb + g_ub);
    if (fgt && !gamma_pinned) t.gamma_fgt = prog.add_var("gamma_fgt", 1.0, 0.5 * (g_lb + g_ub));

    // ---- precompute request power, branch, coefficients -------------------
    for (size_t k = 0; k < n; ++k) {
        t.P_req[k] = cycle::request_power(dc.points[k], cfg.body, m_v);
        t.P_bar[k] = plant::min_traction_power(t.P_req[k], d, lim.P_m_min_floor);
        t.braking[k] = t.P_bar[k] < 0.0;
        t.standstill[k] = dc.points[k].v <= 1e-9;
        if (!t.braking[k]) {
            t.bundle[k] = motor::traction_coefficients(t.P_bar[k], model).level;
            if (full) detail::require_representable(t.bundle[k].R_wdg, "R_wdg", int(k));
            const double om_lo = g_lb * d.gamma_fd * dc.points[k].v / cfg.body.r_w;
            t.recip_active[k] =
                full && om_lo >= model.omega_lowspeed && (t.bundle[k].a_wdg_1 > 0 || t.bundle[k].a_wdg_2 > 0);
            // feasibility: the power cap must admit P_bar at the best ratio
            const double om_hi =
                std::min(lim.omega_m_max, g_ub * d.gamma_fd * dc.points[k].v / cfg.body.r_w);
            const double om_best = clamp(lim.omega_m_b, om_lo, std::max(om_lo, om_hi));
            if (!t.standstill[k]) {
                const auto [plo, phi] = motor::motor_feasible_box(std::min(om_best, lim.omega_m_max), lim);
                if (t.P_bar[k] > phi + 1e-9)
                    throw TranscriptionError("request power " + format_double(t.P_bar[k]) +
                                                 " W exceeds the motor envelope",
                                             int(k));
            }
        }
    }
    if (full)
        for (const motor::Mat6* Q : {&model.Q_rtr_brk, &model.Q_str_brk, &model.Q_mgt_brk, &model.Q_wdg_brk})
            detail::require_representable(*Q, "Q_brk", -1);
    if (!full)
        for (const motor::Mat6* Q :
             {&model.Q_rtr_simple, &model.Q_str_simple, &model.Q_mgt_simple, &model.Q_wdg_simple})
            detail::require_representable(*Q, "Q_simple", -1);

    // ---- variables ---------------------------------------------------------
    for (size_t k = 0; k < n; ++k) {
        auto& nv = t.node[k];
        const std::string s = "[" + std::to_string(k) + "]";
        nv.pbrk = prog.add_var("pbrk" + s, kSP);
        nv.pfd = prog.add_var("pfd" + s, kSP);
        nv.pm = prog.add_var("pm" + s, kSP);
        nv.om = prog.add_var("om" + s, kSW);
        nv.psft = prog.add_var("psft" + s, kSP);
        nv.prtr = prog.add_var("prtr" + s, kSP);
        nv.pmgt = prog.add_var("pmgt" + s, kSP);
        nv.pstr = prog.add_var("pstr" + s, kSP);
        nv.pwdg = prog.add_var("pwdg" + s, kSP);
        nv.pinv = prog.add_var("pinv" + s, kSP);
        nv.pdc = prog.add_var("pdc" + s, kSP);
        if (full) {
            nv.mdot = prog.add_var("mdot" + s, 1.0);
            nv.pfan = prog.add_var("pfan" + s, kSP);
        }
        nv.pbat = prog.add_var("pbat" + s, kSP);
        nv.pint = prog.add_var("pint" + s, kSP);
        if (t.recip_active[k]) {
            nv.wu = prog.add_var("wu" + s, kSU);
            nv.ww = prog.add_var("ww" + s, kSUU);
        }
        if (!fgt) nv.gam = prog.add_var("gam" + s, 1.0);
        nv.eb = prog.add_var("eb" + s, kSE);
        if (full)
            for (int i = 0; i < 6; ++i)
                nv.th[i] = prog.add_var(std::string("th_") + thermal::node_name(i) + s, 1.0);
    }

    // objective: minimize E_b(0) - E_b(T) with E_b(0) pinned
    prog.add_objective(t.node[n - 1].eb, -1.0);

    // ---- constraints -------------------------------------------------------
    const auto& tp = cfg.thermal;
    const auto& fan = cfg.fan;
    const auto& bat = cfg.battery;

    for (size_t k = 0; k < n; ++k) {
        const auto& nv = t.node[k];
        const std::string s = "[" + std::to_string(k) + "]";
        const double v = dc.points[k].v;
        const double cgam = d.gamma_fd * v / cfg.body.r_w;  // omega = cgam * gamma

        // wheel balance: pfd - pbrk = P_req
        {
            detail::Row r(prog, kSP);
            r.add(nv.pfd, 1.0).add(nv.pbrk, -1.0);
            prog.add_eq(r.terms, t.P_req[k] / kSP);
        }
        // speed kinematics: om - cgam * gamma = 0
        {
            detail::Row r(prog, kSW);
            r.add(nv.om, 1.0);
            if (gamma_pinned) {
                prog.add_eq(r.terms, cgam * t.gamma_fixed / kSW);
            } else {
                r.add(fgt ? t.gamma_fgt : nv.gam, -cgam);
                prog.add_eq(r.terms, 0.0);
            }
        }
        // motor power balance: pinv = pm + sum losses
        {
            detail::Row r(prog, kSP);
            r.add(nv.pinv, 1.0).add(nv.pm, -1.0);
            for (int lv : {nv.psft, nv.prtr, nv.pmgt, nv.pstr, nv.pwdg}) r.add(lv, -1.0);
            prog.add_eq(r.terms, 0.0);
        }
        if (t.standstill[k]) {
            // no power flows at standstill; pinning the variables avoids a
            // degenerate corner of coincident active inequalities
            for (int var : {nv.pbrk, nv.pm}) {
                detail::Row r(prog, kSP);
                r.add(var, 1.0);
                prog.add_eq(r.terms, 0.0);
            }
        } else {
            // brake nonnegativity
            {
                detail::Row r(prog, kSP);
                r.add(nv.pbrk, -1.0);
                prog.add_affine(r.terms, 0.0, "pbrk>=0" + s);
            }
            // shaft power relaxation: pm >= pfd/eta, pm >= eta*r_b*pfd
            {
                detail::Row r1(prog, kSP);
                r1.add(nv.pfd, 1.0 / eta).add(nv.pm, -1.0);
                prog.add_affine(r1.terms, 0.0, "shaft_lb1" + s);
                detail::Row r2(prog, kSP);
                r2.add(nv.pfd, eta * d.r_b).add(nv.pm, -1.0);
                prog.add_affine(r2.terms, 0.0, "shaft_lb2" + s);
            }
        }
        // motor envelope (skipped at standstill where it pins pm = 0)
        if (!t.standstill[k]) {
            detail::Row r1(prog, kSP);
            r1.add(nv.om, lim.T_m_min).add(nv.pm, -1.0);
            prog.add_affine(r1.terms, 0.0, "torque_lo" + s);
            detail::Row r2(prog, kSP);
            r2.add(nv.pm, 1.0).add(nv.om, -lim.T_m_max);
            prog.add_affine(r2.terms, 0.0, "torque_hi" + s);
            detail::Row r3(prog, kSP);
            r3.add(nv.om, lim.d_1_min).add(nv.pm, -1.0);
            prog.add_affine(r3.terms, -lim.d_0_min / kSP, "power_lo" + s);
            detail::Row r4(prog, kSP);
            r4.add(nv.pm, 1.0).add(nv.om, -lim.d_1_max);
            prog.add_affine(r4.terms, lim.d_0_max / kSP, "power_hi" + s);
        }
        // speed cap
        {
            detail::Row r(prog, kSW);
            r.add(nv.om, 1.0);
            prog.add_affine(r.terms, lim.omega_m_max / kSW, "omega_max" + s);
        }
        // CVT ratio bounds
        if (!fgt) {
            detail::Row r1(prog, 1.0);
            r1.add(nv.gam, -1.0);
            prog.add_affine(r1.terms, -d.gamma_min, "gamma_lo" + s);
            detail::Row r2(prog, 1.0);
            r2.add(nv.gam, 1.0);
            prog.add_affine(r2.terms, d.gamma_max, "gamma_hi" + s);
        }

        // losses >= 0
        for (auto [var, nm] : {std::pair{nv.psft, "sft"}, {nv.prtr, "rtr"}, {nv.pmgt, "mgt"},
                               {nv.pstr, "str"}, {nv.pwdg, "wdg"}}) {
            detail::Row r(prog, kSP);
            r.add(var, -1.0);
            prog.add_affine(r.terms, 0.0, std::string("loss_nonneg_") + nm + s);
        }

        // shaft loss epigraph (affine)
        {
            detail::Row r(prog, kSP);
            r.add(nv.om, model.a_sft[1]).add(nv.psft, -1.0);
            auto& q = prog.add_affine(r.terms, -model.a_sft[0] / kSP, "loss_sft" + s);
            q.audited = true;
            q.audit_scale = kSP;
            q.audit_var = nv.psft;
        }

        auto epigraph3 = [&](const Eigen::MatrixXd& M, int u_var, int w_var, int p_var, std::string name) {
            std::vector<solver::LinTerm> extra = {{p_var, -prog.scale(p_var) / kSP}};
            auto& q = detail::add_form(prog, {u_var, w_var}, M, extra, 0.0, kSP, std::move(name));
            q.audited = true;
            q.audit_scale = kSP;
            q.audit_var = p_var;
        };

        if (full && !t.braking[k]) {
            const auto& b = t.bundle[k];
            // rotor / stator: a0 + a1 w + a2 w^2 <= p
            auto poly = [&](const std::array<double, 3>& a, int p_var, std::string name) {
                std::vector<int> vars = {nv.om};
                Eigen::MatrixXd M(2, 2);
                M << a[0], a[1] / 2, a[1] / 2, a[2];
                std::vector<solver::LinTerm> extra = {{p_var, -prog.scale(p_var) / kSP}};
                auto& q = detail::add_form(prog, vars, M, extra, 0.0, kSP, std::move(name));
                q.audited = true;
                q.audit_scale = kSP;
                q.audit_var = p_var;
            };
            poly(b.a_rtr, nv.prtr, "loss_rtr" + s);
            poly(b.a_str, nv.pstr, "loss_str" + s);
            epigraph3(b.R_mgt, nv.om, nv.th[thermal::MGT], nv.pmgt, "loss_mgt" + s);
            {
                Eigen::MatrixXd M = detail::block3(b.R_wdg);
                std::vector<solver::LinTerm> extra = {{nv.pwdg, -prog.scale(nv.pwdg) / kSP}};
                if (t.recip_active[k]) {
                    extra.push_back({nv.wu, b.a_wdg_1 * prog.scale(nv.wu) / kSP});
                    extra.push_back({nv.ww, b.a_wdg_2 * prog.scale(nv.ww) / kSP});
                }
                auto& q = detail::add_form(prog, {nv.om, nv.th[thermal::WDG]}, M, extra, 0.0, kSP,
                                           "loss_wdg" + s);
                q.audited = true;
                q.audit_scale = kSP;
                q.audit_var = nv.pwdg;
                if (t.recip_active[k]) {
                    // wu >= 1/omega  (rotated cone, fractional form)
                    auto& c1 = prog.add_fraction({}, 1.0, {{nv.om, prog.scale(nv.om)}}, 0.0,
                                                 {{nv.wu, prog.scale(nv.wu)}}, 0.0, "recip1" + s);
                    c1.audited = true;
                    c1.audit_scale = 1.0;
                    c1.audit_var = nv.wu;
                    // ww >= wu^2
                    Eigen::MatrixXd M2 = Eigen::MatrixXd::Zero(2, 2);
                    M2(1, 1) = 1.0;
                    std::vector<solver::LinTerm> ex2 = {{nv.ww, -prog.scale(nv.ww) / kSU / kSU}};
                    auto& c2 = detail::add_form(prog, {nv.wu}, M2, ex2, 0.0, kSU * kSU, "recip2" + s);
                    c2.audited = true;
                    c2.audit_scale = kSU * kSU;
                    c2.audit_var = nv.ww;
                }
            }
        } else if (full && t.braking[k]) {
            auto brkq = [&](const motor::Mat6& Q, int p_var, std::string name) {
                const Eigen::MatrixXd M = detail::block3(Q);
                std::vector<solver::LinTerm> extra = {{p_var, -prog.scale(p_var) / kSP}};
                auto& q = detail::add_form(prog, {nv.om, nv.pm}, M, extra, 0.0, kSP, std::move(name));
                q.audited = true;
                q.audit_scale = kSP;
                q.audit_var = p_var;
            };
            brkq(model.Q_rtr_brk, nv.prtr, "loss_rtr" + s);
            brkq(model.Q_str_brk, nv.pstr, "loss_str" + s);
            brkq(model.Q_mgt_brk, nv.pmgt, "loss_mgt" + s);
            brkq(model.Q_wdg_brk, nv.pwdg, "loss_wdg" + s);
        } else {
            // simple fidelity: temperature-independent quadratics either branch
            auto simq = [&](const motor::Mat6& Q, int p_var, std::string name) {
                const Eigen::MatrixXd M = detail::block3(Q);
                std::vector<solver::LinTerm> extra = {{p_var, -prog.scale(p_var) / kSP}};
                auto& q = detail::add_form(prog, {nv.om, nv.pm}, M, extra, 0.0, kSP, std::move(name));
                q.audited = true;
                q.audit_scale = kSP;
                q.audit_var = p_var;
            };
            simq(model.Q_rtr_simple, nv.prtr, "loss_rtr" + s);
            simq(model.Q_str_simple, nv.pstr, "loss_str" + s);
            simq(model.Q_mgt_simple, nv.pmgt, "loss_mgt" + s);
            simq(model.Q_wdg_simple, nv.pwdg, "loss_wdg" + s);
        }

        // inverter: alpha*pinv^2 + pinv <= pdc
        {
            Eigen::MatrixXd M(2, 2);
            M << 0.0, 0.5, 0.5, model.alpha_inv;
            std::vector<solver::LinTerm> extra = {{nv.pdc, -prog.scale(nv.pdc) / kSP}};
            auto& q = detail::add_form(prog, {nv.pinv}, M, extra, 0.0, kSP, "inverter" + s);
            q.audited = true;
            q.audit_scale = kSP;
            q.audit_var = nv.pdc;
        }

        if (full) {
            // airflow balance (affine equality):
            // mdot * eta_he*Cp*dth = k_sc*(th_str - th_col) + (pdc - pinv) + (pm - pfd)
            {
                detail::Row r(prog, kSP);
                r.add(nv.mdot, fan.eta_he * fan.C_p_air * fan.delta_theta_a)
                    .add(nv.th[thermal::STR], -tp.k_str_col)
                    .add(nv.pdc, -1.0)
                    .add(nv.pinv, 1.0)
                    .add(nv.pm, -1.0)
                    .add(nv.pfd, 1.0);
                prog.add_eq(r.terms, -tp.k_str_col * tp.theta_col / kSP);
            }
            // airflow box
            {
                detail::Row r1(prog, 1.0);
                r1.add(nv.mdot, -1.0);
                prog.add_affine(r1.terms, 0.0, "mdot>=0" + s);
                detail::Row r2(prog, 1.0);
                r2.add(nv.mdot, 1.0);
                prog.add_affine(r2.terms, fan.mdot_air_max, "mdot_max" + s);
            }
            // fan power epigraph
            {
                Eigen::MatrixXd M = Eigen::MatrixXd::Zero(2, 2);
                M(1, 1) = fan.alpha_f;
                std::vector<solver::LinTerm> extra = {{nv.pfan, -prog.scale(nv.pfan) / kSP}};
                auto& q = detail::add_form(prog, {nv.mdot}, M, extra, 0.0, kSP, "fan" + s);
                q.audited = true;
                q.audit_scale = kSP;
                q.audit_var = nv.pfan;
            }
            // terminal balance: pbat = pdc + P_aux + pfan
            {
                detail::Row r(prog, kSP);
                r.add(nv.pbat, 1.0).add(nv.pdc, -1.0).add(nv.pfan, -1.0);
                prog.add_eq(r.terms, bat.P_aux / kSP);
            }
            // battery rotated cone: (pint - pbat) * P_oc >= pint^2, P_oc affine in eb
            {
                auto& q = prog.add_fraction(
                    {{nv.pint, prog.scale(nv.pint) / kSP}}, 0.0,
                    {{nv.eb, bat.b_1 * prog.scale(nv.eb) / kSP}}, bat.b_2 * bat.E_b_max / kSP,
                    {{nv.pint, prog.scale(nv.pint) / kSP}, {nv.pbat, -prog.scale(nv.pbat) / kSP}}, 0.0,
                    "battery_cone" + s);
                q.audited = true;
                q.audit_scale = kSP;
                q.audit_var = nv.pint;
            }
            // |pint| <= c1*eb + c2*E_b_max
            {
                detail::Row r1(prog, kSP);
                r1.add(nv.pint, 1.0).add(nv.eb, -bat.c_1);
                prog.add_affine(r1.terms, bat.c_2 * bat.E_b_max / kSP, "pint_hi" + s);
                detail::Row r2(prog, kSP);
                r2.add(nv.pint, -1.0).add(nv.eb, -bat.c_1);
                prog.add_affine(r2.terms, bat.c_2 * bat.E_b_max / kSP, "pint_lo" + s);
            }
            // temperature limits
            if (cfg.enforce_thermal_limits)
                for (int i = 0; i < 6; ++i) {
                    detail::Row r(prog, 1.0);
                    r.add(nv.th[i], 1.0);
                    prog.add_affine(r.terms, tp.theta_max[i], std::string("theta_max_") + thermal::node_name(i) + s);
                }
        } else {
            // simple battery: pbat = pdc + P_aux, pint >= alpha_b*pbat^2 + pbat
            {
                detail::Row r(prog, kSP);
                r.add(nv.pbat, 1.0).add(nv.pdc, -1.0);
                prog.add_eq(r.terms, bat.P_aux / kSP);
            }
            {
                Eigen::MatrixXd M(2, 2);
                M << 0.0, 0.5, 0.5, bat.alpha_b;
                std::vector<solver::LinTerm> extra = {{nv.pint, -prog.scale(nv.pint) / kSP}};
                auto& q = detail::add_form(prog, {nv.pbat}, M, extra, 0.0, kSP, "battery_simple" + s);
                q.audited = true;
                q.audit_scale = kSP;
                q.audit_var = nv.pint;
            }
        }

        // SoE window (upper bound at node 0 is the pinned initial condition)
        {
            detail::Row r1(prog, kSE);
            r1.add(nv.eb, -1.0);
            prog.add_affine(r1.terms, -bat.soe_lo() / kSE, "soe_lo" + s);
            if (k > 0) {
                detail::Row r2(prog, kSE);
                r2.add(nv.eb, 1.0);
                prog.add_affine(r2.terms, bat.soe_hi() / kSE, "soe_hi" + s);
            }
        }
    }

    // FGT design bounds
    if (fgt && !gamma_pinned) {
        detail::Row r1(prog, 1.0);
        r1.add(t.gamma_fgt, -1.0);
        prog.add_affine(r1.terms, -t.gamma_lb, "gamma_fgt_lo");
        detail::Row r2(prog, 1.0);
        r2.add(t.gamma_fgt, 1.0);
        prog.add_affine(r2.terms, t.gamma_ub, "gamma_fgt_hi");
    }

    // ---- dynamics ----------------------------------------------------------
    // initial conditions
    {
        detail::Row r(prog, kSE);
        r.add(t.node[0].eb, 1.0);
        prog.add_eq(r.terms, bat.soe_init() / kSE);
    }
    if (full)
        for (int i = 0; i < 6; ++i) {
            detail::Row r(prog, 1.0);
            r.add(t.node[0].th[i], 1.0);
            prog.add_eq(r.terms, tp.theta_col);
        }

    const double kRowTh = 1e4;  // thermal balance row scale, J
    Eigen::Matrix<double, 6, 6> Kc = Eigen::Matrix<double, 6, 6>::Zero();
    {
        const std::array<double, 7> kv = tp.conductances();
        const double edge_k[6] = {kv[0], kv[1], kv[2], kv[3], kv[4], kv[6]};
        for (int e = 0; e < 6; ++e) {
            const auto [i, j] = thermal::kEdges[e];
            Kc(i, i) += edge_k[e];
            Kc(j, j) += edge_k[e];
            Kc(i, j) -= edge_k[e];
            Kc(j, i) -= edge_k[e];
        }
        Kc(thermal::STR, thermal::STR) += tp.k_str_col;
    }

    for (size_t k = 0; k + 1 < n; ++k) {
        const auto& a = t.node[k];
        const auto& b = t.node[k + 1];
        // SoE trapezoid: eb_{k+1} - eb_k + dt/2 (pint_k + pint_{k+1}) = 0
        {
            detail::Row r(prog, kSE);
            r.add(b.eb, 1.0).add(a.eb, -1.0).add(a.pint, 0.5 * dt).add(b.pint, 0.5 * dt);
            prog.add_eq(r.terms, 0.0);
        }
        if (!full) continue;
        // thermal trapezoid: (C + dt/2 K) th_{k+1} - (C - dt/2 K) th_k
        //                    - dt/2 S (L_k + L_{k+1}) = dt * b_col
        for (int i = 0; i < 6; ++i) {
            detail::Row r(prog, kRowTh);
            for (int j = 0; j < 6; ++j) {
                const double cij = (i == j ? tp.c[i] : 0.0);
                const double mij = cij + 0.5 * dt * Kc(i, j);
                const double nij = cij - 0.5 * dt * Kc(i, j);
                if (mij != 0.0) r.add(b.th[j], mij);
                if (nij != 0.0) r.add(a.th[j], -nij);
            }
            // loss injection: node i receives its own loss, ewdg receives wdg
            const int lv_a[5] = {a.psft, a.prtr, a.pmgt, a.pstr, a.pwdg};
            const int lv_b[5] = {b.psft, b.prtr, b.pmgt, b.pstr, b.pwdg};
            const int l = (i < 5) ? i : 4;
            r.add(lv_a[l], -0.5 * dt).add(lv_b[l], -0.5 * dt);
            const double rhs = (i == int(thermal::STR)) ? dt * tp.k_str_col * tp.theta_col / kRowTh : 0.0;
            prog.add_eq(r.terms, rhs);
        }
    }

    return t;
}

// ---------------------------------------------------------------------------
// Solutions
// ---------------------------------------------------------------------------

struct AuditEntry {
    std::string name;
    double rel_gap = 0.0;
};

struct Solution {
    solver::SolveStatus status = solver::SolveStatus::MaxIter;
    Fidelity fidelity = Fidelity::Full;
    int iterations = 0;
    double delta_Eb = 0.0;  // J
    // two-step bookkeeping
    double delta_Eb_simple = std::numeric_limits<double>::quiet_NaN();
    int iterations_simple = 0;

    std::vector<double> P_brk, P_brk_replay, P_fd, P_m, omega;
    std::vector<double> P_sft, P_rtr, P_mgt, P_str, P_wdg;
    std::vector<double> P_inv, P_dc, mdot, P_fan, P_bat, P_int, E_b;
    std::array<std::vector<double>, 6> theta;
    std::vector<double> gamma;
    double gamma_fgt = std::numeric_limits<double>::quiet_NaN();

    std::vector<char> braking;  // loss-branch flag per node

    std::vector<AuditEntry> audit;
    double max_rel_gap = 0.0;
    double solver_gap = 0.0, primal_residual = 0.0, dual_residual = 0.0;
    std::string message;

    size_t nodes() const { return E_b.size(); }
};

namespace detail {

// strictly interior start from an exact replay of candidate controls
inline void build_start(const Transcription& t, const config::PowertrainConfig& cfg,
                        const cycle::DriveCycle& dc, const oracle::ControlTrajectory& u0, double pad_W,
                        solver::ConvexProgram& prog) {
    const auto& model = *cfg.motor_model;
    const auto& d = cfg.drivetrain;
    const auto& lim = cfg.motor_limits;
    const bool fgt = d.kind == plant::TransmissionKind::FGT;
    const bool full = t.fidelity == Fidelity::Full;
    const size_t n = dc.points.size();
    const double pad = pad_W;

    oracle::SimTrace trace = oracle::forward_simulate(dc, cfg, u0, false);
    if (trace.steps.size() != n) throw TranscriptionError("start-point replay failed", int(trace.steps.size()));

    const bool gamma_pinned = fgt && t.gamma_fgt < 0;
    if (fgt && !gamma_pinned)
        prog.x0(t.gamma_fgt) = clamp(u0.gamma_fgt, t.gamma_lb + 1e-6, t.gamma_ub - 1e-6);

    for (size_t k = 0; k < n; ++k) {
        const auto& nv = t.node[k];
        const auto& st = trace.steps[k];
        const double gam = fgt ? (gamma_pinned ? t.gamma_fixed : prog.x0(t.gamma_fgt))
                               : clamp(u0.gamma[k], d.gamma_min + 1e-9, d.gamma_max - 1e-9);
        if (!fgt) prog.x0(nv.gam) = gam;
        const double om = gam * d.gamma_fd * dc.points[k].v / cfg.body.r_w;

        // temperatures clipped strictly inside their limits
        thermal::TemperatureState th = st.theta;
        if (full && cfg.enforce_thermal_limits)
            for (int i = 0; i < 6; ++i) th[i] = std::min(th[i], cfg.thermal.theta_max[i] - 0.5);
        double eb = st.E_b;
        if (k > 0) eb = clamp(eb, cfg.battery.soe_lo() + 1e3 + pad, cfg.battery.soe_hi() - 1e3 - pad);
        else eb = cfg.battery.soe_init();

        double pbrk = std::max(u0.P_brk[k], 0.0) + pad;
        double pfd = t.P_req[k] + pbrk;
        double pm;
        if (t.standstill[k]) {
            pbrk = 0.0;
            pfd = 0.0;
            pm = 0.0;
        } else {
            const auto [lb1, lb2] = plant::shaft_power_bounds(pfd, d);
            pm = std::max(lb1, lb2) + pad;
            const auto [plo, phi] = motor::motor_feasible_box(std::min(om, lim.omega_m_max), lim);
            const double w = phi - plo;
            const double margin = std::min(0.05 * w, 50.0 + pad);
            pm = clamp(pm, plo + margin, std::max(plo + margin, phi - margin));
            pm = std::max(pm, std::max(lb1, lb2) + 0.5 * pad);
        }

        // reciprocal lift values first; the winding epigraph references them
        double wu0 = 0.0, ww0 = 0.0;
        if (t.recip_active[k]) {
            const double wu = 1.0 / std::max(om, model.omega_lowspeed);
            wu0 = wu * 1.02 + 1e-6;
            ww0 = wu0 * wu0 * 1.02 + 1e-9;
            prog.x0(nv.wu) = wu0 / kSU;
            prog.x0(nv.ww) = ww0 / kSUU;
        }
        // loss values exactly as the emitted epigraphs see them
        motor::ComponentLosses L;
        L.sft = motor::shaft_loss(om, model);
        if (full && !t.braking[k]) {
            const auto& bn = t.bundle[k];
            L.rtr = bn.a_rtr[0] + bn.a_rtr[1] * om + bn.a_rtr[2] * om * om;
            L.str = bn.a_str[0] + bn.a_str[1] * om + bn.a_str[2] * om * om;
            const motor::Vec3 zm = motor::z_mgt_basis(om, th[thermal::MGT]);
            L.mgt = zm.transpose() * bn.R_mgt * zm;
            const motor::Vec3 zw3(1.0, om, th[thermal::WDG]);
            L.wdg = zw3.transpose() * bn.R_wdg.topLeftCorner<3, 3>() * zw3;
            if (t.recip_active[k]) L.wdg += bn.a_wdg_1 * wu0 + bn.a_wdg_2 * ww0;
        } else if (full) {
            const motor::Vec3 y3(1.0, om, pm);
            L.rtr = y3.transpose() * model.Q_rtr_brk.topLeftCorner<3, 3>() * y3;
            L.str = y3.transpose() * model.Q_str_brk.topLeftCorner<3, 3>() * y3;
            L.mgt = y3.transpose() * model.Q_mgt_brk.topLeftCorner<3, 3>() * y3;
            L.wdg = y3.transpose() * model.Q_wdg_brk.topLeftCorner<3, 3>() * y3;
        } else {
            const motor::Vec3 x3(1.0, om, pm);
            L.rtr = x3.transpose() * model.Q_rtr_simple.topLeftCorner<3, 3>() * x3;
            L.str = x3.transpose() * model.Q_str_simple.topLeftCorner<3, 3>() * x3;
            L.mgt = x3.transpose() * model.Q_mgt_simple.topLeftCorner<3, 3>() * x3;
            L.wdg = x3.transpose() * model.Q_wdg_simple.topLeftCorner<3, 3>() * x3;
        }

        prog.x0(nv.pbrk) = pbrk / kSP;
        prog.x0(nv.pfd) = pfd / kSP;
        prog.x0(nv.pm) = pm / kSP;
        prog.x0(nv.om) = om / kSW;
        prog.x0(nv.psft) = (std::max(L.sft, 0.0) + pad) / kSP;
        prog.x0(nv.prtr) = (std::max(L.rtr, 0.0) + pad) / kSP;
        prog.x0(nv.pmgt) = (std::max(L.mgt, 0.0) + pad) / kSP;
        prog.x0(nv.pstr) = (std::max(L.str, 0.0) + pad) / kSP;
        prog.x0(nv.pwdg) = (std::max(L.wdg, 0.0) + pad) / kSP;
        const double pinv = pm + prog.x0(nv.psft) * kSP + prog.x0(nv.prtr) * kSP +
                            prog.x0(nv.pmgt) * kSP + prog.x0(nv.pstr) * kSP + prog.x0(nv.pwdg) * kSP;
        prog.x0(nv.pinv) = pinv / kSP;
        const double pdc = motor::inverter_power(pinv, model.alpha_inv) + pad;
        prog.x0(nv.pdc) = pdc / kSP;
        double pbat;
        if (full) {
            const double rej = std::max(0.0, cfg.thermal.k_str_col * (th[thermal::STR] - cfg.thermal.theta_col));
            const double heat = rej + (pdc - pinv) + (pm - pfd);
            double mdot = std::max(heat, 0.0) / (cfg.fan.eta_he * cfg.fan.C_p_air * cfg.fan.delta_theta_a);
            mdot = clamp(mdot, 1e-9, cfg.fan.mdot_air_max * 0.999);
            prog.x0(nv.mdot) = mdot;
            const double pfan = cfg.fan.alpha_f * mdot * mdot + pad;
            prog.x0(nv.pfan) = pfan / kSP;
            pbat = pdc + cfg.battery.P_aux + pfan;
        } else {
            pbat = pdc + cfg.battery.P_aux;
        }
        prog.x0(nv.pbat) = pbat / kSP;
        double pint;
        if (full) {
            const double poc = cfg.battery.open_circuit_power(eb);
            const double safe_pbat = std::min(pbat, 0.24 * poc);
            pint = battery::internal_power(safe_pbat, eb, cfg.battery, battery::LossMode::EnergyDependent) + pad;
            const double cap = cfg.battery.p_int_max(eb);
            pint = clamp(pint, -cap + pad, cap - pad);
        } else {
            pint = battery::internal_power(pbat, eb, cfg.battery, battery::LossMode::Simple) + pad;
        }
        prog.x0(nv.pint) = pint / kSP;
        prog.x0(nv.eb) = eb / kSE;
        if (full)
            for (int i = 0; i < 6; ++i) prog.x0(nv.th[i]) = th[i];
    }
}

}  // namespace detail

inline oracle::ControlTrajectory neutral_controls(const Transcription& t,
                                                  const config::PowertrainConfig& cfg,
                                                  const cycle::DriveCycle& dc) {
    const auto& d = cfg.drivetrain;
    const bool fgt = d.kind == plant::TransmissionKind::FGT;
    oracle::ControlTrajectory u;
    const size_t n = dc.points.size();
    u.P_brk.assign(n, 0.0);
    for (size_t k = 0; k < n; ++k) u.P_brk[k] = 0.3 * std::max(0.0, -t.P_req[k]);
    if (fgt) {
        u.gamma_fgt = 0.5 * (t.gamma_lb + t.gamma_ub);
    } else {
        u.gamma.assign(n, 0.0);
        for (size_t k = 0; k < n; ++k) {
            const double v = dc.points[k].v;
            double g = 0.5 * (d.gamma_min + d.gamma_max);
            if (v > 1e-9)
                g = std::min(g, 0.98 * cfg.motor_limits.omega_m_max * cfg.body.r_w / (d.gamma_fd * v));
            u.gamma[k] = clamp(g, d.gamma_min, d.gamma_max);
        }
    }
    return u;
}

inline Solution extract_solution(const Transcription& t, const config::PowertrainConfig& cfg,
                                 const cycle::DriveCycle& dc, const solver::SolveResult& res) {
    const bool fgt = cfg.drivetrain.kind == plant::TransmissionKind::FGT;
    const bool full = t.fidelity == Fidelity::Full;
    const size_t n = dc.points.size();
    Solution s;
    s.status = res.status;
    s.fidelity = t.fidelity;
    s.iterations = res.iterations;
    s.solver_gap = res.gap;
    s.primal_residual = res.primal_residual;
    s.dual_residual = res.dual_residual;
    s.message = res.message;

    auto val = [&](int var) { return res.x[var] * t.prog.scale(var); };

    s.P_brk.resize(n);
    s.P_brk_replay.resize(n);
    s.P_fd.resize(n);
    s.P_m.resize(n);
    s.omega.resize(n);
    s.P_sft.resize(n);
    s.P_rtr.resize(n);
    s.P_mgt.resize(n);
    s.P_str.resize(n);
    s.P_wdg.resize(n);
    s.P_inv.resize(n);
    s.P_dc.resize(n);
    s.P_bat.resize(n);
    s.P_int.resize(n);
    s.E_b.resize(n);
    if (full) {
        s.mdot.resize(n);
        s.P_fan.resize(n);
        for (auto& v : s.theta) v.resize(n);
    }
    s.gamma.resize(n);
    if (fgt) s.gamma_fgt = t.gamma_fgt >= 0 ? val(t.gamma_fgt) : t.gamma_fixed;

    const double eta = cfg.drivetrain.eta();
    for (size_t k = 0; k < n; ++k) {
        const auto& nv = t.node[k];
        s.P_brk[k] = val(nv.pbrk);
        s.P_fd[k] = val(nv.pfd);
        s.P_m[k] = val(nv.pm);
        s.omega[k] = val(nv.om);
        s.P_sft[k] = val(nv.psft);
        s.P_rtr[k] = val(nv.prtr);
        s.P_mgt[k] = val(nv.pmgt);
        s.P_str[k] = val(nv.pstr);
        s.P_wdg[k] = val(nv.pwdg);
        s.P_inv[k] = val(nv.pinv);
        s.P_dc[k] = val(nv.pdc);
        s.P_bat[k] = val(nv.pbat);
        s.P_int[k] = val(nv.pint);
        s.E_b[k] = val(nv.eb);
        if (full) {
            s.mdot[k] = val(nv.mdot);
            s.P_fan[k] = val(nv.pfan);
            for (int i = 0; i < 6; ++i) s.theta[i][k] = val(nv.th[i]);
        }
        s.gamma[k] = fgt ? s.gamma_fgt : val(nv.gam);
        // implied brake power: during braking, invert the regeneration branch
        // so an exact replay reproduces the motor power; traction never rides
        // the brake
        if (t.braking[k]) {
            const double pfd_impl = s.P_m[k] / (eta * cfg.drivetrain.r_b);
            s.P_brk_replay[k] = std::max(0.0, pfd_impl - t.P_req[k]);
        } else {
            s.P_brk_replay[k] = 0.0;
        }
    }
    s.braking.assign(t.braking.begin(), t.braking.end());
    s.delta_Eb = s.E_b.front() - s.E_b.back();

    // tightness audit: slack of each relaxed constraint in its row units,
    // relative to the magnitude of the bounded quantity
    const auto& ineqs = t.prog.inequalities();
    for (const auto& q : ineqs) {
        if (!q.audited) continue;
        const double slack = solver::slack_at(q, res.x);  // row-scaled
        const double ref =
            q.audit_var >= 0
                ? std::abs(res.x[q.audit_var] * t.prog.scale(q.audit_var)) / q.audit_scale
                : 0.0;
        const double rel = slack / (1.0 + ref);
        s.audit.push_back({q.name, rel});
        s.max_rel_gap = std::max(s.max_rel_gap, rel);
    }
    return s;
}

// fill the program's start point from replayed controls (neutral by default)
inline void prepare_start(Transcription& t, const config::PowertrainConfig& cfg,
                          const cycle::DriveCycle& dc,
                          const oracle::ControlTrajectory* warm_controls = nullptr) {
    if (warm_controls) {
        detail::build_start(t, cfg, dc, *warm_controls, 20.0, t.prog);
    } else {
        const auto u0 = neutral_controls(t, cfg, dc);
        detail::build_start(t, cfg, dc, u0, 100.0, t.prog);
    }
}

inline Solution solve_transcription(Transcription& t, const config::PowertrainConfig& cfg,
                                    const cycle::DriveCycle& dc, const solver::SolverSettings& settings,
                                    const oracle::ControlTrajectory* warm_controls = nullptr) {
    solver::SolverSettings eff = settings;
    if (warm_controls && eff.mu0 <= 0) eff.mu0 = 1e-4;
    prepare_start(t, cfg, dc, warm_controls);
    solver::InteriorPointSolver ip(t.prog);
    const solver::SolveResult res = ip.solve(eff);
    return extract_solution(t, cfg, dc, res);
}

inline oracle::ControlTrajectory extract_controls(const Solution& s, const config::PowertrainConfig& cfg) {
    oracle::ControlTrajectory u;
    u.P_brk = s.P_brk_replay;
    if (cfg.drivetrain.kind == plant::TransmissionKind::FGT)
        u.gamma_fgt = s.gamma_fgt;
    else
        u.gamma = s.gamma;
    return u;
}

// Two-step solve: temperature-independent program first, then the full
// temperature-dependent program warm-started from its replayed solution.
inline Solution two_step(const config::PowertrainConfig& cfg, const cycle::DriveCycle& dc,
                         const solver::SolverSettings& settings) {
    Transcription t1 = transcribe(cfg, dc, Fidelity::Simple);
    Solution s1 = solve_transcription(t1, cfg, dc, settings);
    if (s1.status != solver::SolveStatus::Optimal) {
        s1.message = "warm-start stage not optimal: " + s1.message;
        return s1;
    }
    const oracle::ControlTrajectory warm = extract_controls(s1, cfg);
    Transcription t2 = transcribe(cfg, dc, Fidelity::Full);
    Solution s2 = solve_transcription(t2, cfg, dc, settings, &warm);
    s2.delta_Eb_simple = s1.delta_Eb;
    s2.iterations_simple = s1.iterations;
    return s2;
}

struct Kpis {
    double delta_Eb_J = 0.0;
    double distance_km = 0.0;
    double Eb_bar_Wh_per_km = 0.0;
    double range_km = 0.0;
};

inline Kpis kpis(const Solution& sol, const cycle::DriveCycle& dc, const config::PowertrainConfig& cfg) {
    if (sol.status != solver::SolveStatus::Optimal) throw ValidationError("kpis require an optimal solution");
    Kpis k;
    k.delta_Eb_J = sol.delta_Eb;
    const double dist_m = dc.distance();
    if (dist_m <= 0.0) throw ValidationError("cycle covers zero distance; energy per km undefined");
    k.distance_km = dist_m / 1000.0;
    k.Eb_bar_Wh_per_km = (sol.delta_Eb / 3600.0) / k.distance_km;
    const double usable_Wh = (cfg.battery.zeta_max - cfg.battery.zeta_min) * cfg.battery.E_b_max / 3600.0;
    k.range_km = usable_Wh / k.Eb_bar_Wh_per_km;
    return k;
}

}  // namespace powertrain::optimize
