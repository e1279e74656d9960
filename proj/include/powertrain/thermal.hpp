// 6-node lumped-parameter thermal network of the motor, fan/airflow model,
// and identification of the thermal coefficients.
#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "powertrain/common.hpp"

namespace powertrain::thermal {

// node order used throughout
enum Node { SFT = 0, RTR = 1, MGT = 2, STR = 3, WDG = 4, EWDG = 5 };
constexpr int kNodes = 6;
inline const char* node_name(int i) {
    static const char* names[kNodes] = {"sft", "rtr", "mgt", "str", "wdg", "ewdg"};
    return names[i];
}

using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Losses5 = Eigen::Matrix<double, 5, 1>;  // [sft, rtr, mgt, str, wdg]

struct ThermalParams {
    // heat capacities, J/K
    std::array<double, kNodes> c = {3000.0, 6000.0, 1500.0, 9000.0, 2500.0, 800.0};
    // conductances, W/K
    double k_sft_rtr = 15.0;
    double k_rtr_mgt = 40.0;
    double k_rtr_str = 8.0;
    double k_rtr_wdg = 5.0;
    double k_str_wdg = 60.0;
    double k_str_col = 120.0;
    double k_wdg_ewdg = 30.0;
    double theta_col = 65.0;  // degC
    // limits, degC
    std::array<double, kNodes> theta_max = {140.0, 140.0, 120.0, 140.0, 160.0, 160.0};

    void validate() const {
        for (double ci : c)
            if (!(ci > 0)) throw ValidationError("heat capacities must be positive");
        for (double k : {k_sft_rtr, k_rtr_mgt, k_rtr_str, k_rtr_wdg, k_str_wdg, k_str_col, k_wdg_ewdg})
            if (k < 0) throw ValidationError("conductances must be nonnegative");
    }

    std::array<double, 7> conductances() const {
        return {k_sft_rtr, k_rtr_mgt, k_rtr_str, k_rtr_wdg, k_str_wdg, k_str_col, k_wdg_ewdg};
    }
    void set_conductances(const std::array<double, 7>& k) {
        k_sft_rtr = k[0];
        k_rtr_mgt = k[1];
        k_rtr_str = k[2];
        k_rtr_wdg = k[3];
        k_str_wdg = k[4];
        k_str_col = k[5];
        k_wdg_ewdg = k[6];
    }
};

using TemperatureState = Vec6;  // degC, node order above

// conductance edges as (i, j) node pairs, k_str_col handled separately
inline constexpr std::array<std::pair<int, int>, 6> kEdges = {
    std::pair<int, int>{SFT, RTR}, {RTR, MGT}, {RTR, STR}, {RTR, WDG}, {STR, WDG}, {WDG, EWDG}};

namespace detail {

// conductance matrix K (graph Laplacian plus coolant grounding on the stator)
inline Mat6 conductance_matrix(const ThermalParams& p) {
    const std::array<double, 7> k = p.conductances();
    const double edge_k[6] = {k[0], k[1], k[2], k[3], k[4], k[6]};
    Mat6 K = Mat6::Zero();
    for (int e = 0; e < 6; ++e) {
        const auto [i, j] = kEdges[e];
        K(i, i) += edge_k[e];
        K(j, j) += edge_k[e];
        K(i, j) -= edge_k[e];
        K(j, i) -= edge_k[e];
    }
    K(STR, STR) += p.k_str_col;
    return K;
}

// loss injection: ewdg is driven by the winding losses as well
inline Vec6 inject(const Losses5& L) {
    Vec6 q;
    q << L[0], L[1], L[2], L[3], L[4], L[4];
    return q;
}

inline Vec6 coolant_source(const ThermalParams& p) {
    Vec6 b = Vec6::Zero();
    b[STR] = p.k_str_col * p.theta_col;
    return b;
}

}  // namespace detail

// theta_dot per node for given injected losses
inline Vec6 lptn_derivatives(const TemperatureState& theta, const Losses5& losses, const ThermalParams& p) {
    const Mat6 K = detail::conductance_matrix(p);
    const Vec6 rhs = -K * theta + detail::inject(losses) + detail::coolant_source(p);
    Vec6 dot;
    for (int i = 0; i < kNodes; ++i) dot[i] = rhs[i] / p.c[i];
    return dot;
}

// Implicit trapezoidal step; exact 6x6 solve (the dynamics are affine in
// theta, so the step is the exact solution of the trapezoidal rule).
inline TemperatureState integrate_step(const TemperatureState& theta, const Losses5& losses_k,
                                       const Losses5& losses_k1, double dt, const ThermalParams& p) {
    if (!(dt > 0)) throw ValidationError("dt must be positive");
    const Mat6 K = detail::conductance_matrix(p);
    Mat6 C = Mat6::Zero();
    for (int i = 0; i < kNodes; ++i) C(i, i) = p.c[i];
    const Mat6 M = C + 0.5 * dt * K;
    const Mat6 N = C - 0.5 * dt * K;
    const Vec6 rhs = N * theta + 0.5 * dt * (detail::inject(losses_k) + detail::inject(losses_k1) +
                                             2.0 * detail::coolant_source(p));
    return M.ldlt().solve(rhs);
}

inline double heat_rejected(const TemperatureState& theta, const ThermalParams& p) {
    return p.k_str_col * (theta[STR] - p.theta_col);
}

struct FanParams {
    double eta_he = 0.6;          // -
    double C_p_air = 1000.0;      // J/(kg*K)
    double delta_theta_a = 18.0;  // K
    double alpha_f = 200.0;       // W*s^2/kg^2
    double mdot_air_max = 3.0;    // kg/s

    void validate() const {
        if (eta_he <= 0 || C_p_air <= 0 || delta_theta_a <= 0 || alpha_f <= 0 || mdot_air_max <= 0)
            throw ValidationError("fan parameters must be positive");
    }
};

struct AirflowResult {
    double mdot = 0.0;  // kg/s
    bool saturated = false;
};

inline AirflowResult fan_airflow(double P_mot_rej, double P_loss_inv, double P_loss_tra, const FanParams& f) {
    const double heat = std::max(0.0, P_mot_rej) + std::max(0.0, P_loss_inv) + std::max(0.0, P_loss_tra);
    AirflowResult r;
    r.mdot = heat / (f.eta_he * f.C_p_air * f.delta_theta_a);
    if (r.mdot > f.mdot_air_max) {
        r.saturated = true;
        r.mdot = f.mdot_air_max;
    }
    return r;
}

inline double fan_power(double mdot, const FanParams& f) {
    if (mdot < 0 || mdot > f.mdot_air_max * (1 + 1e-12)) throw ValidationError("airflow outside fan range");
    return f.alpha_f * mdot * mdot;
}

// ---------------------------------------------------------------------------
// Identification: Gauss-Newton on the trapezoidal simulation residuals over
// log-parameterized (c, k). Sensitivities are propagated exactly.
// ---------------------------------------------------------------------------

struct ThermalTrajectory {
    std::vector<Losses5> losses;       // per sample
    std::vector<TemperatureState> theta;  // per sample, same length
    double dt = 1.0;
};

struct IdentifyReport {
    std::array<double, kNodes> nrmse{};
    double collective_nrmse = 0.0;
    int iterations = 0;
    bool converged = false;
    ThermalParams best;  // best-so-far, valid even when identification throws
};

constexpr int kThermalParamCount = 13;  // 6 capacities + 7 conductances

inline Eigen::VectorXd pack_log_params(const ThermalParams& p) {
    Eigen::VectorXd x(kThermalParamCount);
    for (int i = 0; i < 6; ++i) x[i] = std::log(p.c[i]);
    const auto k = p.conductances();
    for (int i = 0; i < 7; ++i) x[6 + i] = std::log(k[i]);
    return x;
}

inline ThermalParams unpack_log_params(const Eigen::VectorXd& x, const ThermalParams& tmpl) {
    ThermalParams p = tmpl;
    for (int i = 0; i < 6; ++i) p.c[i] = std::exp(x[i]);
    std::array<double, 7> k;
    for (int i = 0; i < 7; ++i) k[i] = std::exp(x[6 + i]);
    p.set_conductances(k);
    return p;
}

inline TemperatureState simulate(const ThermalTrajectory& traj, const ThermalParams& p,
                                 std::vector<TemperatureState>* out = nullptr) {
    TemperatureState th = traj.theta.front();
    if (out) {
        out->clear();
        out->push_back(th);
    }
    for (size_t k = 0; k + 1 < traj.losses.size(); ++k) {
        th = integrate_step(th, traj.losses[k], traj.losses[k + 1], traj.dt, p);
        if (out) out->push_back(th);
    }
    return th;
}

namespace detail {

// residuals r (simulated minus measured temperatures, all nodes and samples)
// and Jacobian dr/dlog(p), both exact
inline void residuals_and_jacobian(const std::vector<ThermalTrajectory>& trajs, const Eigen::VectorXd& x,
                                   const ThermalParams& tmpl, Eigen::VectorXd& r, Eigen::MatrixXd* Jout) {
    const ThermalParams p = unpack_log_params(x, tmpl);
    const Mat6 K = conductance_matrix(p);
    Mat6 C = Mat6::Zero();
    for (int i = 0; i < kNodes; ++i) C(i, i) = p.c[i];

    // parameter direction matrices dM, dN and source derivative, already in
    // log space (chain rule multiplies by the parameter value)
    std::array<Mat6, kThermalParamCount> dK{}, dC{};
    std::array<Vec6, kThermalParamCount> db{};
    for (int q = 0; q < kThermalParamCount; ++q) {
        dK[q].setZero();
        dC[q].setZero();
        db[q].setZero();
    }
    for (int i = 0; i < 6; ++i) dC[i](i, i) = p.c[i];
    const std::array<double, 7> kv = p.conductances();
    auto add_edge = [&](int q, int i, int j, double k) {
        dK[q](i, i) += k;
        dK[q](j, j) += k;
        dK[q](i, j) -= k;
        dK[q](j, i) -= k;
    };
    add_edge(6, SFT, RTR, kv[0]);
    add_edge(7, RTR, MGT, kv[1]);
    add_edge(8, RTR, STR, kv[2]);
    add_edge(9, RTR, WDG, kv[3]);
    add_edge(10, STR, WDG, kv[4]);
    dK[11](STR, STR) += kv[5];
    db[11][STR] = kv[5] * p.theta_col;
    add_edge(12, WDG, EWDG, kv[6]);

    size_t total = 0;
    for (const auto& t : trajs) total += t.theta.size() * kNodes;
    r.resize(total);
    if (Jout) Jout->resize(total, kThermalParamCount);

    size_t row = 0;
    for (const auto& traj : trajs) {
        const double dt = traj.dt;
        const Mat6 M = C + 0.5 * dt * K;
        const Mat6 N = C - 0.5 * dt * K;
        Eigen::LDLT<Mat6> Mf(M);

        TemperatureState th = traj.theta.front();
        std::array<Vec6, kThermalParamCount> sens{};
        for (auto& s : sens) s.setZero();

        for (size_t k = 0; k < traj.theta.size(); ++k) {
            for (int i = 0; i < kNodes; ++i) r[row + i] = th[i] - traj.theta[k][i];
            if (Jout)
                for (int q = 0; q < kThermalParamCount; ++q)
                    for (int i = 0; i < kNodes; ++i) (*Jout)(row + i, q) = sens[q][i];
            row += kNodes;
            if (k + 1 == traj.theta.size()) break;

            const Vec6 src = 0.5 * dt * (inject(traj.losses[k]) + inject(traj.losses[k + 1]) +
                                         2.0 * coolant_source(p));
            const TemperatureState th_next = Mf.solve(N * th + src);
            if (Jout) {
                for (int q = 0; q < kThermalParamCount; ++q) {
                    const Mat6 dM = dC[q] + 0.5 * dt * dK[q];
                    const Mat6 dN = dC[q] - 0.5 * dt * dK[q];
                    const Vec6 rhs = N * sens[q] + dN * th - dM * th_next + dt * db[q];
                    sens[q] = Mf.solve(rhs);
                }
            }
            th = th_next;
        }
    }
}

}  // namespace detail

// Levenberg-damped Gauss-Newton; throws with best-so-far params stashed in
// the report when it fails to converge.
inline ThermalParams identify_lptn(const std::vector<ThermalTrajectory>& trajs, const ThermalParams& init,
                                   IdentifyReport* report = nullptr, int max_iter = 60, double tol = 1e-10) {
    if (trajs.size() < 1) throw ValidationError("need at least one trajectory");
    for (const auto& t : trajs)
        if (t.theta.size() != t.losses.size() || t.theta.size() < 3)
            throw ValidationError("trajectory lengths inconsistent");

    Eigen::VectorXd x = pack_log_params(init);
    Eigen::VectorXd r;
    Eigen::MatrixXd J;
    detail::residuals_and_jacobian(trajs, x, init, r, &J);
    double cost = 0.5 * r.squaredNorm();
    double lambda = 1e-6;
    int it = 0;
    bool converged = false;
    for (; it < max_iter; ++it) {
        if (std::sqrt(2.0 * cost / double(r.size())) < tol) {
            converged = true;
            break;
        }
        const Eigen::MatrixXd JtJ = J.transpose() * J;
        const Eigen::VectorXd g = J.transpose() * r;
        if (g.lpNorm<Eigen::Infinity>() < 1e-12) {
            converged = true;
            break;
        }
        bool stepped = false;
        for (int trial = 0; trial < 12; ++trial) {
            Eigen::MatrixXd A = JtJ;
            A.diagonal().array() += lambda * (JtJ.diagonal().array() + 1e-12);
            const Eigen::VectorXd dx = A.ldlt().solve(-g);
            const Eigen::VectorXd x_new = x + dx;
            Eigen::VectorXd r_new;
            detail::residuals_and_jacobian(trajs, x_new, init, r_new, nullptr);
            const double cost_new = 0.5 * r_new.squaredNorm();
            if (cost_new < cost) {
                x = x_new;
                cost = cost_new;
                lambda = std::max(lambda * 0.3, 1e-12);
                detail::residuals_and_jacobian(trajs, x, init, r, &J);
                stepped = true;
                break;
            }
            lambda *= 8.0;
        }
        if (!stepped) {
            converged = cost < 1e-16 * double(r.size()) ||
                        std::sqrt(2.0 * cost / double(r.size())) < 1e-6;
            break;
        }
    }

    const ThermalParams fitted = unpack_log_params(x, init);
    if (report) {
        report->iterations = it;
        report->best = fitted;
        report->converged = converged || std::sqrt(2.0 * cost / double(r.size())) < 1e-6;
        // per-node NRMSE against the measured trajectories
        std::array<std::vector<double>, kNodes> truth, fit;
        for (const auto& traj : trajs) {
            std::vector<TemperatureState> sim;
            simulate(traj, fitted, &sim);
            for (size_t k = 0; k < traj.theta.size(); ++k)
                for (int i = 0; i < kNodes; ++i) {
                    truth[i].push_back(traj.theta[k][i]);
                    fit[i].push_back(sim[k][i]);
                }
        }
        std::vector<double> all_t, all_f;
        for (int i = 0; i < kNodes; ++i) {
            report->nrmse[i] = nrmse(truth[i], fit[i]);
            all_t.insert(all_t.end(), truth[i].begin(), truth[i].end());
            all_f.insert(all_f.end(), fit[i].begin(), fit[i].end());
        }
        report->collective_nrmse = nrmse(all_t, all_f);
    }
    if (!converged && std::sqrt(2.0 * cost / double(r.size())) > 1e-3)
        throw IdentificationError("thermal identification did not converge", "lptn");
    return fitted;
}

}  // namespace powertrain::thermal
