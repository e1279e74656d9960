// Electric-motor loss models (temperature-dependent traction forms, braking
// quadratics, temperature-independent warm-start form), operating limits,
// inverter loss, synthetic loss-map generation and least-squares fitting.
#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <istream>
#include <optional>
#include <ostream>
#include <vector>

#include "powertrain/common.hpp"

#if !defined(POWERTRAIN_NO_JSON)
#include <json.hpp>
#endif

namespace powertrain::motor {

using Mat3 = Eigen::Matrix3d;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;

constexpr double kThetaRef = 65.0;  // degC, identification temperature

struct MotorLimits {
    double T_m_min = -145.0;        // N*m
    double T_m_max = 145.0;         // N*m
    double d_0_min = -92944.0;      // W
    double d_1_min = -18.2;         // W*s/rad
    double d_0_max = 92944.0;       // W
    double d_1_max = 18.2;          // W*s/rad
    double omega_m_max = 1047.0;    // rad/s
    double omega_m_b = 733.0;       // rad/s, envelope corner
    double P_m_min_floor = -112e3;  // W
    double P_m_max_ceiling = 112e3; // W

    void validate() const {
        if (!(T_m_min <= 0.0 && 0.0 <= T_m_max)) throw ValidationError("torque limits must straddle zero");
        if (!(omega_m_max > 0.0)) throw ValidationError("omega_m_max must be positive");
    }
};

// Affine power cap through (omega_b, T_max*omega_b) and (omega_max, P_max),
// symmetric for the regeneration side.
inline MotorLimits make_motor_limits(double T_max, double P_max, double omega_max, double omega_b) {
    MotorLimits lim;
    lim.T_m_max = T_max;
    lim.T_m_min = -T_max;
    lim.omega_m_max = omega_max;
    lim.omega_m_b = omega_b;
    lim.d_1_max = (P_max - T_max * omega_b) / (omega_max - omega_b);
    lim.d_0_max = P_max - lim.d_1_max * omega_max;
    lim.d_1_min = -lim.d_1_max;
    lim.d_0_min = -lim.d_0_max;
    lim.P_m_max_ceiling = P_max;
    lim.P_m_min_floor = -P_max;
    return lim;
}

struct LossSample {
    double omega = 0.0;  // rad/s
    double pm = 0.0;     // W, motor shaft power (>=0 traction, <0 braking)
    double theta = kThetaRef;  // degC
    double p_sft = 0.0, p_rtr = 0.0, p_mgt = 0.0, p_str = 0.0, p_wdg = 0.0;  // W
};

struct TractionLevel {
    std::array<double, 3> a_rtr{0, 0, 0};  // [W, W*s/rad, W*s^2/rad^2]
    std::array<double, 3> a_str{0, 0, 0};
    Mat3 R_mgt = Mat3::Zero();             // over [1, omega, theta_mgt]
    Mat6 R_wdg = Mat6::Zero();             // over [1, omega, theta, omega^2, theta^2, omega*theta]
    double a_wdg_1 = 0.0;                  // W*rad/s   (1/omega term)
    double a_wdg_2 = 0.0;                  // W*rad^2/s^2 (1/omega^2 term)
};

struct MotorLossModel {
    std::array<double, 2> a_sft{0.0, 0.0};  // [W, W*s/rad]
    std::vector<double> power_levels;       // W, strictly increasing
    std::vector<TractionLevel> traction;    // one per power level
    Mat6 Q_rtr_brk = Mat6::Zero();          // over [1, omega, P, omega^2, P^2, omega*P]
    Mat6 Q_str_brk = Mat6::Zero();
    Mat6 Q_mgt_brk = Mat6::Zero();
    Mat6 Q_wdg_brk = Mat6::Zero();
    Mat6 Q_rtr_simple = Mat6::Zero();       // temperature-independent, fitted at kThetaRef
    Mat6 Q_str_simple = Mat6::Zero();
    Mat6 Q_mgt_simple = Mat6::Zero();
    Mat6 Q_wdg_simple = Mat6::Zero();
    double alpha_inv = 3e-7;                // 1/W, inverter loss coefficient
    double omega_lowspeed = 1.0;            // rad/s, reciprocal-term gate

    void validate() const;
};

inline Vec6 y_basis(double omega, double pm) {
    Vec6 y;
    y << 1.0, omega, pm, omega * omega, pm * pm, omega * pm;
    return y;
}

inline Vec3 z_mgt_basis(double omega, double theta) { return Vec3(1.0, omega, theta); }

inline Vec6 z_wdg_basis(double omega, double theta) {
    Vec6 z;
    z << 1.0, omega, theta, omega * omega, theta * theta, omega * theta;
    return z;
}

template <typename Mat>
inline double min_eigenvalue(const Mat& m) {
    Eigen::SelfAdjointEigenSolver<Mat> es(m, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

template <typename Mat>
inline Mat project_psd(const Mat& m) {
    Mat s = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Mat> es(s);
    auto ev = es.eigenvalues();
    for (int i = 0; i < ev.size(); ++i) ev[i] = std::max(ev[i], 0.0);
    Mat out = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
    return 0.5 * (out + out.transpose());
}

inline void MotorLossModel::validate() const {
    constexpr double tol = -1e-9;
    for (size_t j = 0; j < power_levels.size(); ++j) {
        if (j > 0 && !(power_levels[j] > power_levels[j - 1]))
            throw ValidationError("power levels must be strictly increasing");
        const auto& t = traction[j];
        if (t.a_rtr[2] < 0 || t.a_str[2] < 0 || t.a_wdg_1 < 0 || t.a_wdg_2 < 0)
            throw ValidationError("convexity coefficients must be nonnegative");
        if (min_eigenvalue(t.R_mgt) < tol || min_eigenvalue(t.R_wdg) < tol)
            throw ValidationError("traction matrices must be PSD");
    }
    if (traction.size() != power_levels.size()) throw ValidationError("traction table size mismatch");
    for (const Mat6* q : {&Q_rtr_brk, &Q_str_brk, &Q_mgt_brk, &Q_wdg_brk, &Q_rtr_simple, &Q_str_simple,
                          &Q_mgt_simple, &Q_wdg_simple})
        if (min_eigenvalue(*q) < tol) throw ValidationError("quadratic loss matrices must be PSD");
    if (alpha_inv < 0) throw ValidationError("alpha_inv must be >= 0");
}

inline double shaft_loss(double omega, const MotorLossModel& m) {
    return m.a_sft[0] + m.a_sft[1] * omega;
}

inline double inverter_power(double P_inv, double alpha_inv) {
    return alpha_inv * P_inv * P_inv + P_inv;
}

struct TractionBundle {
    TractionLevel level;
    bool clamped_top = false;  // P_bar above the top grid level
};

// Coefficients at P_bar: linear interpolation between the bracketing grid
// levels, matrices re-projected to the PSD cone after interpolation.
inline TractionBundle traction_coefficients(double P_bar, const MotorLossModel& m) {
    if (m.power_levels.empty()) throw ValidationError("model has no power levels");
    TractionBundle out;
    const auto& pl = m.power_levels;
    if (P_bar <= pl.front()) {
        out.level = m.traction.front();
        return out;
    }
    if (P_bar >= pl.back()) {
        out.level = m.traction.back();
        out.clamped_top = P_bar > pl.back() * (1.0 + 1e-12);
        return out;
    }
    size_t j = 0;
    while (j + 1 < pl.size() && pl[j + 1] < P_bar) ++j;
    const double w = (P_bar - pl[j]) / (pl[j + 1] - pl[j]);
    const auto& a = m.traction[j];
    const auto& b = m.traction[j + 1];
    TractionLevel lv;
    for (int i = 0; i < 3; ++i) {
        lv.a_rtr[i] = (1 - w) * a.a_rtr[i] + w * b.a_rtr[i];
        lv.a_str[i] = (1 - w) * a.a_str[i] + w * b.a_str[i];
    }
    lv.a_wdg_1 = (1 - w) * a.a_wdg_1 + w * b.a_wdg_1;
    lv.a_wdg_2 = (1 - w) * a.a_wdg_2 + w * b.a_wdg_2;
    lv.R_mgt = project_psd<Mat3>((1 - w) * a.R_mgt + w * b.R_mgt);
    lv.R_wdg = project_psd<Mat6>((1 - w) * a.R_wdg + w * b.R_wdg);
    out.level = lv;
    return out;
}

struct ComponentLosses {
    double sft = 0.0, rtr = 0.0, mgt = 0.0, str = 0.0, wdg = 0.0;  // W
    double total() const { return sft + rtr + mgt + str + wdg; }
};

// Tight (equality) evaluation of the loss right-hand sides; branch picked by
// the sign of P_bar, each component clamped at zero.
inline ComponentLosses eval_losses(double omega, double pm, double theta_mgt, double theta_wdg,
                                   double P_bar, const MotorLossModel& m) {
    ComponentLosses L;
    L.sft = std::max(0.0, shaft_loss(omega, m));
    if (P_bar >= 0.0) {
        const auto b = traction_coefficients(P_bar, m).level;
        L.rtr = std::max(0.0, b.a_rtr[0] + b.a_rtr[1] * omega + b.a_rtr[2] * omega * omega);
        L.str = std::max(0.0, b.a_str[0] + b.a_str[1] * omega + b.a_str[2] * omega * omega);
        const Vec3 zm = z_mgt_basis(omega, theta_mgt);
        L.mgt = std::max(0.0, double(zm.transpose() * b.R_mgt * zm));
        const Vec6 zw = z_wdg_basis(omega, theta_wdg);
        double wdg = zw.transpose() * b.R_wdg * zw;
        if (omega >= m.omega_lowspeed) wdg += b.a_wdg_1 / omega + b.a_wdg_2 / (omega * omega);
        L.wdg = std::max(0.0, wdg);
    } else {
        const Vec6 y = y_basis(omega, pm);
        L.rtr = std::max(0.0, double(y.transpose() * m.Q_rtr_brk * y));
        L.str = std::max(0.0, double(y.transpose() * m.Q_str_brk * y));
        L.mgt = std::max(0.0, double(y.transpose() * m.Q_mgt_brk * y));
        L.wdg = std::max(0.0, double(y.transpose() * m.Q_wdg_brk * y));
    }
    return L;
}

// Temperature-independent warm-start model, valid for either power sign.
inline ComponentLosses eval_losses_simple(double omega, double pm, const MotorLossModel& m) {
    ComponentLosses L;
    L.sft = std::max(0.0, shaft_loss(omega, m));
    const Vec6 x = y_basis(omega, pm);
    L.rtr = std::max(0.0, double(x.transpose() * m.Q_rtr_simple * x));
    L.str = std::max(0.0, double(x.transpose() * m.Q_str_simple * x));
    L.mgt = std::max(0.0, double(x.transpose() * m.Q_mgt_simple * x));
    L.wdg = std::max(0.0, double(x.transpose() * m.Q_wdg_simple * x));
    return L;
}

// [P_lo, P_hi] feasible shaft power at speed omega.
inline std::pair<double, double> motor_feasible_box(double omega, const MotorLimits& lim) {
    if (omega < 0.0 || omega > lim.omega_m_max * (1.0 + 1e-12))
        throw ValidationError("speed outside motor envelope: " + format_double(omega));
    const double lo = std::max(lim.T_m_min * omega, lim.d_1_min * omega + lim.d_0_min);
    const double hi = std::min(lim.T_m_max * omega, lim.d_1_max * omega + lim.d_0_max);
    return {lo, hi};
}

// ---------------------------------------------------------------------------
// Synthetic loss-map generation (stand-in for proprietary loss-map exports).
// The ground truth is a member of the fitted parametric family, so noiseless
// self-fits recover it exactly.
// ---------------------------------------------------------------------------

struct SyntheticMotor {
    MotorLossModel truth;
    std::vector<LossSample> samples;
    MotorLimits limits;
};

namespace detail {

inline Mat3 mat3_from_monomials(double c1, double c_w, double c_t, double c_ww, double c_tt, double c_wt) {
    // quadratic form over [1, omega, theta] matching
    // c1 + c_w*w + c_t*t + c_ww*w^2 + c_tt*t^2 + c_wt*w*t
    Mat3 r;
    r << c1, c_w / 2, c_t / 2,
         c_w / 2, c_ww, c_wt / 2,
         c_t / 2, c_wt / 2, c_tt;
    return r;
}

inline Mat6 embed3(const Mat3& r) {
    Mat6 q = Mat6::Zero();
    q.topLeftCorner<3, 3>() = r;
    return q;
}

inline void assert_psd(const Mat3& m, const char* what) {
    if (min_eigenvalue(m) < -1e-9) throw ValidationError(std::string("synthetic matrix not PSD: ") + what);
}

}  // namespace detail

inline SyntheticMotor generate_synthetic_motor(std::uint64_t seed, const MotorLimits& lim,
                                               double noise_frac = 0.0) {
    SyntheticMotor out;
    out.limits = lim;
    Rng rng(seed);
    const double s = lim.P_m_max_ceiling / 112e3;  // size factor vs reference machine
    const double Pmax = lim.P_m_max_ceiling;

    MotorLossModel& t = out.truth;
    t.a_sft = {s * (10.0 + 4.0 * rng.uniform()), s * (0.09 + 0.03 * rng.uniform()) * (145.0 / lim.T_m_max)};

    const int n_levels = 11;
    t.power_levels.resize(n_levels);
    t.traction.resize(n_levels);
    const double jit = 0.9 + 0.2 * rng.uniform();
    for (int j = 0; j < n_levels; ++j) {
        const double pl = Pmax * double(j) / double(n_levels - 1);
        t.power_levels[j] = pl;
        const double f = pl / Pmax;  // 0..1
        TractionLevel lv;
        lv.a_rtr = {s * (15.0 + 10.0 * f) * jit, s * (0.30 + 0.25 * f) * jit, s * 2.0e-4 * (1.0 + 0.8 * f)};
        lv.a_str = {s * (25.0 + 14.0 * f) * jit, s * (0.45 + 0.40 * f) * jit, s * 3.2e-4 * (1.0 + 0.9 * f)};
        lv.R_mgt = detail::mat3_from_monomials(s * (20.0 + 6.0 * f), s * 0.02, s * 0.09,
                                               s * 1.5e-4 * (1.0 + 1.0 * f), s * 5.0e-4,
                                               s * 2.0e-4 * (1.0 + f));
        detail::assert_psd(lv.R_mgt, "R_mgt");
        Mat3 rw = detail::mat3_from_monomials(s * (30.0 + 10.0 * f), s * 0.03, s * 0.18,
                                              s * 1.2e-4 * (1.0 + f), s * 8.0e-4,
                                              s * 3.0e-4 * (1.0 + f));
        detail::assert_psd(rw, "R_wdg");
        lv.R_wdg = detail::embed3(rw);
        // copper terms ~ (torque)^2 = (P/omega)^2
        const double c_T = 0.17 / std::max(s, 1e-9) * sq(145.0 / lim.T_m_max) * jit;
        lv.a_wdg_1 = 0.5e-3 * pl * s;
        lv.a_wdg_2 = 0.9 * c_T * pl * pl * s * s;
        t.traction[j] = lv;
    }

    // braking quadratics as Gram forms over [1, omega, P]: PSD by construction
    auto gram3 = [&](std::initializer_list<Vec3> vecs) {
        Mat3 r = Mat3::Zero();
        for (const Vec3& v : vecs) r += v * v.transpose();
        return detail::embed3(r);
    };
    const double rs = std::sqrt(s);
    t.Q_rtr_brk = gram3({rs * Vec3(3.2, 0.010, 0.0), rs * Vec3(2.0, 0.0, -4.0e-5)});
    t.Q_str_brk = gram3({rs * Vec3(4.2, 0.012, 0.0), rs * Vec3(2.5, 0.0, -5.0e-5)});
    t.Q_mgt_brk = gram3({rs * Vec3(3.0, 0.013, 0.0), rs * Vec3(1.5, 0.0, -2.0e-5)});
    t.Q_wdg_brk = gram3({rs * Vec3(5.0, 0.008, 0.0), Vec3(2.0 * rs, 0.0, -6.3e-4 / rs)});
    t.alpha_inv = 3e-7 / std::max(s, 1e-9);
    t.validate();

    // sample grids: traction levels swept over speed and temperature within a
    // roughly feasible envelope, plus braking and reference-temperature grids
    std::vector<double> thetas = {45.0, kThetaRef, 90.0, 115.0, 140.0};
    auto push_traction = [&](double om, double pl, double th) {
        LossSample smp;
        smp.omega = om;
        smp.pm = pl;
        smp.theta = th;
        const ComponentLosses L = eval_losses(om, pl, th, th, pl, t);
        smp.p_sft = L.sft;
        smp.p_rtr = L.rtr;
        smp.p_mgt = L.mgt;
        smp.p_str = L.str;
        smp.p_wdg = L.wdg;
        out.samples.push_back(smp);
    };
    for (int j = 0; j < n_levels; ++j) {
        const double pl = t.power_levels[j];
        double om_lo = std::max(t.omega_lowspeed * 2.0, pl / lim.T_m_max);
        om_lo = std::min(om_lo, 0.9 * lim.omega_m_max);
        for (int i = 0; i < 14; ++i) {
            const double om = om_lo + (lim.omega_m_max - om_lo) * double(i) / 13.0;
            for (double th : thetas) push_traction(om, pl, th);
        }
        if (j == 0)
            for (double om : {0.0, 0.5})
                for (double th : thetas) push_traction(om, pl, th);
    }
    for (int i = 0; i < 14; ++i) {
        for (int jp = 1; jp <= 12; ++jp) {
            const double pneg = lim.P_m_min_floor * double(jp) / 12.0;
            const double om_lo = std::min(std::max(2.0, -pneg / lim.T_m_max), 0.9 * lim.omega_m_max);
            const double om = om_lo + (lim.omega_m_max - om_lo) * double(i) / 13.0;
            LossSample smp;
            smp.omega = om;
            smp.pm = pneg;
            smp.theta = kThetaRef;
            const ComponentLosses L = eval_losses(om, pneg, kThetaRef, kThetaRef, pneg, t);
            smp.p_sft = L.sft;
            smp.p_rtr = L.rtr;
            smp.p_mgt = L.mgt;
            smp.p_str = L.str;
            smp.p_wdg = L.wdg;
            out.samples.push_back(smp);
        }
    }

    if (noise_frac > 0.0) {
        double rms_rtr = 0, rms_str = 0, rms_mgt = 0, rms_wdg = 0, rms_sft = 0;
        for (const auto& smp : out.samples) {
            rms_sft += sq(smp.p_sft);
            rms_rtr += sq(smp.p_rtr);
            rms_mgt += sq(smp.p_mgt);
            rms_str += sq(smp.p_str);
            rms_wdg += sq(smp.p_wdg);
        }
        const double n = double(out.samples.size());
        rms_sft = std::sqrt(rms_sft / n);
        rms_rtr = std::sqrt(rms_rtr / n);
        rms_mgt = std::sqrt(rms_mgt / n);
        rms_str = std::sqrt(rms_str / n);
        rms_wdg = std::sqrt(rms_wdg / n);
        for (auto& smp : out.samples) {
            smp.p_sft = std::max(0.0, smp.p_sft + noise_frac * rms_sft * rng.gaussian());
            smp.p_rtr = std::max(0.0, smp.p_rtr + noise_frac * rms_rtr * rng.gaussian());
            smp.p_mgt = std::max(0.0, smp.p_mgt + noise_frac * rms_mgt * rng.gaussian());
            smp.p_str = std::max(0.0, smp.p_str + noise_frac * rms_str * rng.gaussian());
            smp.p_wdg = std::max(0.0, smp.p_wdg + noise_frac * rms_wdg * rng.gaussian());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Least-squares identification.
//
// Quadratic forms are fitted over the leading [1, u, w] block of their basis;
// higher monomial entries stay zero so the resulting constraints remain plain
// convex quadratics in the decision variables downstream. The stored shape is
// still the full 6x6 family.
// ---------------------------------------------------------------------------

struct FitReport {
    double nrmse_sft = 0, nrmse_rtr = 0, nrmse_str = 0, nrmse_mgt = 0, nrmse_wdg = 0;
    double nrmse_simple = 0;  // pooled over components at the reference temperature
};

namespace detail {

inline Eigen::VectorXd lsq(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, const char* component) {
    // equilibrate columns; raw feature magnitudes span many decades
    Eigen::VectorXd colscale(A.cols());
    for (int j = 0; j < A.cols(); ++j) {
        const double m = A.col(j).cwiseAbs().maxCoeff();
        colscale[j] = m > 0 ? m : 1.0;
    }
    const Eigen::MatrixXd As = A * colscale.cwiseInverse().asDiagonal();
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(As);
    qr.setThreshold(1e-8);
    if (qr.rank() < A.cols())
        throw IdentificationError(std::string("rank-deficient design matrix for ") + component, component);
    return qr.solve(b).cwiseQuotient(colscale);
}

// Centered/scaled coordinates for quadratic-form fits. Raw monomials are
// nearly collinear over the sampled ranges, which makes the PSD projection
// of a noisy fit destructive; fitting in centered coordinates and mapping
// back by congruence keeps both the fit and the projection benign.
struct FormCenter {
    double u0 = 0, su = 1, w0 = 0, sw = 1;

    static FormCenter from(const std::vector<std::array<double, 2>>& uw) {
        FormCenter c;
        double ulo = uw[0][0], uhi = uw[0][0], wlo = uw[0][1], whi = uw[0][1];
        for (const auto& p : uw) {
            ulo = std::min(ulo, p[0]);
            uhi = std::max(uhi, p[0]);
            wlo = std::min(wlo, p[1]);
            whi = std::max(whi, p[1]);
        }
        c.u0 = 0.5 * (ulo + uhi);
        c.w0 = 0.5 * (wlo + whi);
        c.su = std::max(0.5 * (uhi - ulo), 1e-9);
        c.sw = std::max(0.5 * (whi - wlo), 1e-9);
        return c;
    }

    // z_tilde = S * z_raw over the basis [1, u, w]
    Mat3 to_centered() const {
        Mat3 s = Mat3::Zero();
        s(0, 0) = 1.0;
        s(1, 0) = -u0 / su;
        s(1, 1) = 1.0 / su;
        s(2, 0) = -w0 / sw;
        s(2, 2) = 1.0 / sw;
        return s;
    }
    std::array<double, 6> features(double u, double w) const {
        const double ut = (u - u0) / su, wt = (w - w0) / sw;
        return {1.0, ut, wt, ut * ut, wt * wt, ut * wt};
    }
};

// symmetric 3x3 quadratic-form fit over [1, u, w]; PSD-projected in the
// centered basis, returned in raw coordinates
inline Mat3 fit_form3(const std::vector<std::array<double, 2>>& uw, const std::vector<double>& target,
                      const char* component) {
    const int n = int(uw.size());
    const FormCenter ctr = FormCenter::from(uw);
    Eigen::MatrixXd A(n, 6);
    Eigen::VectorXd b(n);
    for (int i = 0; i < n; ++i) {
        const auto f = ctr.features(uw[i][0], uw[i][1]);
        for (int j = 0; j < 6; ++j) A(i, j) = f[j];
        b[i] = target[i];
    }
    const Eigen::VectorXd c = lsq(A, b, component);
    const Mat3 centered = project_psd<Mat3>(mat3_from_monomials(c[0], c[1], c[2], c[3], c[4], c[5]));
    const Mat3 S = ctr.to_centered();
    return S.transpose() * centered * S;
}

}  // namespace detail

inline MotorLossModel fit_loss_models(const std::vector<LossSample>& samples,
                                      const std::vector<double>& power_levels, FitReport* report = nullptr) {
    if (samples.empty()) throw IdentificationError("no samples", "all");
    if (power_levels.empty()) throw IdentificationError("no power levels", "all");
    MotorLossModel m;
    m.power_levels = power_levels;
    m.traction.resize(power_levels.size());

    // shaft: linear in speed over every sample
    {
        Eigen::MatrixXd A(samples.size(), 2);
        Eigen::VectorXd b(samples.size());
        for (size_t i = 0; i < samples.size(); ++i) {
            A.row(i) << 1.0, samples[i].omega;
            b[i] = samples[i].p_sft;
        }
        const Eigen::VectorXd c = detail::lsq(A, b, "sft");
        m.a_sft = {c[0], c[1]};
    }

    // bucket traction samples to the nearest power level
    std::vector<std::vector<const LossSample*>> buckets(power_levels.size());
    std::vector<const LossSample*> braking;
    std::vector<const LossSample*> at_ref;
    for (const auto& smp : samples) {
        if (smp.pm < 0.0) {
            braking.push_back(&smp);
        } else {
            size_t best = 0;
            double bd = std::abs(smp.pm - power_levels[0]);
            for (size_t j = 1; j < power_levels.size(); ++j) {
                const double d = std::abs(smp.pm - power_levels[j]);
                if (d < bd) {
                    bd = d;
                    best = j;
                }
            }
            buckets[best].push_back(&smp);
        }
        if (std::abs(smp.theta - kThetaRef) < 1e-9) at_ref.push_back(&smp);
    }

    for (size_t j = 0; j < power_levels.size(); ++j) {
        const auto& bucket = buckets[j];
        const std::string tag = "level " + std::to_string(j);
        if (bucket.size() < 12)
            throw IdentificationError("too few traction samples at " + tag, "traction");
        TractionLevel lv;

        auto fit_poly_speed = [&](auto get, const char* comp) {
            Eigen::MatrixXd A(bucket.size(), 3);
            Eigen::VectorXd b(bucket.size());
            for (size_t i = 0; i < bucket.size(); ++i) {
                A.row(i) << 1.0, bucket[i]->omega, sq(bucket[i]->omega);
                b[i] = get(*bucket[i]);
            }
            Eigen::VectorXd c = detail::lsq(A, b, comp);
            if (c[2] < 0.0) {  // clamp convexity coefficient, refit the rest
                Eigen::MatrixXd A2 = A.leftCols(2);
                Eigen::VectorXd c2 = detail::lsq(A2, b, comp);
                c << c2[0], c2[1], 0.0;
            }
            return std::array<double, 3>{c[0], c[1], c[2]};
        };
        lv.a_rtr = fit_poly_speed([](const LossSample& s) { return s.p_rtr; }, "rtr");
        lv.a_str = fit_poly_speed([](const LossSample& s) { return s.p_str; }, "str");

        {
            std::vector<std::array<double, 2>> uw(bucket.size());
            std::vector<double> tgt(bucket.size());
            for (size_t i = 0; i < bucket.size(); ++i) {
                uw[i] = {bucket[i]->omega, bucket[i]->theta};
                tgt[i] = bucket[i]->p_mgt;
            }
            lv.R_mgt = detail::fit_form3(uw, tgt, "mgt");
        }

        {
            // winding: quadratic form plus reciprocal speed terms, the latter
            // gated off below the low-speed threshold as in evaluation
            std::vector<std::array<double, 2>> uw(bucket.size());
            for (size_t i = 0; i < bucket.size(); ++i) uw[i] = {bucket[i]->omega, bucket[i]->theta};
            const detail::FormCenter ctr = detail::FormCenter::from(uw);
            Eigen::MatrixXd A(bucket.size(), 8);
            Eigen::VectorXd b(bucket.size());
            for (size_t i = 0; i < bucket.size(); ++i) {
                const double om = bucket[i]->omega;
                const auto f = ctr.features(om, bucket[i]->theta);
                const bool gated = om < m.omega_lowspeed;
                A.row(i) << f[0], f[1], f[2], f[3], f[4], f[5], gated ? 0.0 : 1.0 / om,
                    gated ? 0.0 : 1.0 / (om * om);
                b[i] = bucket[i]->p_wdg;
            }
            bool has_recip = A.col(7).cwiseAbs().maxCoeff() > 0.0;
            Eigen::VectorXd c = Eigen::VectorXd::Zero(8);
            if (has_recip) {
                c = detail::lsq(A, b, "wdg");
                if (c[6] < 0.0 || c[7] < 0.0) {
                    // clamp the negative reciprocal coefficient, refit the rest
                    const bool keep6 = c[6] >= 0.0, keep7 = c[7] >= 0.0;
                    Eigen::MatrixXd A2(bucket.size(), 6 + int(keep6) + int(keep7));
                    A2.leftCols(6) = A.leftCols(6);
                    int col = 6;
                    if (keep6) A2.col(col++) = A.col(6);
                    if (keep7) A2.col(col++) = A.col(7);
                    const Eigen::VectorXd c2 = detail::lsq(A2, b, "wdg");
                    c.setZero();
                    c.head(6) = c2.head(6);
                    col = 6;
                    if (keep6) c[6] = c2[col++];
                    if (keep7) c[7] = c2[col++];
                }
            } else {
                c.head(6) = detail::lsq(A.leftCols(6), b, "wdg");
            }
            const Mat3 centered = detail::mat3_from_monomials(c[0], c[1], c[2], c[3], c[4], c[5]);
            const Mat3 centered_psd = project_psd<Mat3>(centered);
            const Mat3 S = ctr.to_centered();
            lv.R_wdg = detail::embed3(S.transpose() * centered_psd * S);
            lv.a_wdg_1 = std::max(0.0, c[6]);
            lv.a_wdg_2 = std::max(0.0, c[7]);
            // one refit of the reciprocal scalars against the projected form
            if ((centered - centered_psd).norm() > 1e-10 * (1.0 + centered.norm()) && has_recip) {
                Eigen::MatrixXd A2(bucket.size(), 2);
                Eigen::VectorXd b2(bucket.size());
                const Mat3 raw = S.transpose() * centered_psd * S;
                for (size_t i = 0; i < bucket.size(); ++i) {
                    A2.row(i) << A(i, 6), A(i, 7);
                    const Vec3 z(1.0, bucket[i]->omega, bucket[i]->theta);
                    b2[i] = b[i] - z.transpose() * raw * z;
                }
                try {
                    const Eigen::VectorXd c2 = detail::lsq(A2, b2, "wdg");
                    lv.a_wdg_1 = std::max(0.0, c2[0]);
                    lv.a_wdg_2 = std::max(0.0, c2[1]);
                } catch (const IdentificationError&) {
                    // keep the joint-fit values
                }
            }
        }
        m.traction[j] = lv;
    }

    auto fit_q_from = [&](const std::vector<const LossSample*>& set, auto get, const char* comp) {
        std::vector<std::array<double, 2>> uw(set.size());
        std::vector<double> tgt(set.size());
        for (size_t i = 0; i < set.size(); ++i) {
            uw[i] = {set[i]->omega, set[i]->pm};
            tgt[i] = get(*set[i]);
        }
        return detail::embed3(detail::fit_form3(uw, tgt, comp));
    };
    if (braking.size() >= 60) {
        m.Q_rtr_brk = fit_q_from(braking, [](const LossSample& s) { return s.p_rtr; }, "rtr braking");
        m.Q_str_brk = fit_q_from(braking, [](const LossSample& s) { return s.p_str; }, "str braking");
        m.Q_mgt_brk = fit_q_from(braking, [](const LossSample& s) { return s.p_mgt; }, "mgt braking");
        m.Q_wdg_brk = fit_q_from(braking, [](const LossSample& s) { return s.p_wdg; }, "wdg braking");
    } else if (!braking.empty()) {
        throw IdentificationError("too few braking samples", "braking");
    }
    if (at_ref.size() >= 60) {
        m.Q_rtr_simple = fit_q_from(at_ref, [](const LossSample& s) { return s.p_rtr; }, "rtr simple");
        m.Q_str_simple = fit_q_from(at_ref, [](const LossSample& s) { return s.p_str; }, "str simple");
        m.Q_mgt_simple = fit_q_from(at_ref, [](const LossSample& s) { return s.p_mgt; }, "mgt simple");
        m.Q_wdg_simple = fit_q_from(at_ref, [](const LossSample& s) { return s.p_wdg; }, "wdg simple");
    }

    if (report) {
        std::vector<double> truth_sft, fit_sft, truth_rtr, fit_rtr, truth_str, fit_str, truth_mgt, fit_mgt,
            truth_wdg, fit_wdg, truth_simple, fit_simple;
        for (const auto& smp : samples) {
            const ComponentLosses L = eval_losses(smp.omega, smp.pm, smp.theta, smp.theta, smp.pm, m);
            truth_sft.push_back(smp.p_sft);
            fit_sft.push_back(L.sft);
            truth_rtr.push_back(smp.p_rtr);
            fit_rtr.push_back(L.rtr);
            truth_str.push_back(smp.p_str);
            fit_str.push_back(L.str);
            truth_mgt.push_back(smp.p_mgt);
            fit_mgt.push_back(L.mgt);
            truth_wdg.push_back(smp.p_wdg);
            fit_wdg.push_back(L.wdg);
        }
        for (const auto* smp : at_ref) {
            const ComponentLosses L = eval_losses_simple(smp->omega, smp->pm, m);
            truth_simple.insert(truth_simple.end(), {smp->p_rtr, smp->p_mgt, smp->p_str, smp->p_wdg});
            fit_simple.insert(fit_simple.end(), {L.rtr, L.mgt, L.str, L.wdg});
        }
        report->nrmse_sft = nrmse(truth_sft, fit_sft);
        report->nrmse_rtr = nrmse(truth_rtr, fit_rtr);
        report->nrmse_str = nrmse(truth_str, fit_str);
        report->nrmse_mgt = nrmse(truth_mgt, fit_mgt);
        report->nrmse_wdg = nrmse(truth_wdg, fit_wdg);
        if (!truth_simple.empty()) report->nrmse_simple = nrmse(truth_simple, fit_simple);
    }
    m.validate();
    return m;
}

// loss-sample CSV: omega,pm,theta,p_sft,p_rtr,p_mgt,p_str,p_wdg
inline void write_samples_csv(std::ostream& os, const std::vector<LossSample>& samples) {
    os << "omega,pm,theta,p_sft,p_rtr,p_mgt,p_str,p_wdg\n";
    for (const auto& s : samples)
        os << format_double(s.omega) << ',' << format_double(s.pm) << ',' << format_double(s.theta) << ','
           << format_double(s.p_sft) << ',' << format_double(s.p_rtr) << ',' << format_double(s.p_mgt) << ','
           << format_double(s.p_str) << ',' << format_double(s.p_wdg) << '\n';
}

inline std::vector<LossSample> read_samples_csv(std::istream& is) {
    std::string line;
    int line_no = 0;
    if (!std::getline(is, line)) throw ParseError("empty loss-sample stream", 1);
    ++line_no;
    std::vector<LossSample> out;
    while (std::getline(is, line)) {
        ++line_no;
        if (csv::trim(line).empty()) continue;
        auto f = csv::split_line(line);
        if (f.size() != 8) throw ParseError("expected 8 columns at line " + std::to_string(line_no), line_no);
        LossSample s;
        s.omega = csv::parse_number(f[0], line_no);
        s.pm = csv::parse_number(f[1], line_no);
        s.theta = csv::parse_number(f[2], line_no);
        s.p_sft = csv::parse_number(f[3], line_no);
        s.p_rtr = csv::parse_number(f[4], line_no);
        s.p_mgt = csv::parse_number(f[5], line_no);
        s.p_str = csv::parse_number(f[6], line_no);
        s.p_wdg = csv::parse_number(f[7], line_no);
        out.push_back(s);
    }
    return out;
}

#if !defined(POWERTRAIN_NO_JSON)

namespace detail {

template <typename Mat>
inline nlohmann::json mat_to_json(const Mat& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (int i = 0; i < m.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(row);
    }
    return rows;
}

template <typename Mat>
inline Mat mat_from_json(const nlohmann::json& j) {
    Mat m;
    for (int i = 0; i < m.rows(); ++i)
        for (int k = 0; k < m.cols(); ++k) m(i, k) = j.at(i).at(k).get<double>();
    return m;
}

}  // namespace detail

inline nlohmann::json to_json(const MotorLossModel& m) {
    nlohmann::json j;
    j["version"] = 1;
    j["a_sft"] = {m.a_sft[0], m.a_sft[1]};
    j["power_levels"] = m.power_levels;
    j["alpha_inv"] = m.alpha_inv;
    j["omega_lowspeed"] = m.omega_lowspeed;
    nlohmann::json levels = nlohmann::json::array();
    for (const auto& lv : m.traction) {
        nlohmann::json L;
        L["a_rtr"] = {lv.a_rtr[0], lv.a_rtr[1], lv.a_rtr[2]};
        L["a_str"] = {lv.a_str[0], lv.a_str[1], lv.a_str[2]};
        L["R_mgt"] = detail::mat_to_json(lv.R_mgt);
        L["R_wdg"] = detail::mat_to_json(lv.R_wdg);
        L["a_wdg_1"] = lv.a_wdg_1;
        L["a_wdg_2"] = lv.a_wdg_2;
        levels.push_back(L);
    }
    j["traction"] = levels;
    j["Q_rtr_brk"] = detail::mat_to_json(m.Q_rtr_brk);
    j["Q_str_brk"] = detail::mat_to_json(m.Q_str_brk);
    j["Q_mgt_brk"] = detail::mat_to_json(m.Q_mgt_brk);
    j["Q_wdg_brk"] = detail::mat_to_json(m.Q_wdg_brk);
    j["Q_rtr_simple"] = detail::mat_to_json(m.Q_rtr_simple);
    j["Q_str_simple"] = detail::mat_to_json(m.Q_str_simple);
    j["Q_mgt_simple"] = detail::mat_to_json(m.Q_mgt_simple);
    j["Q_wdg_simple"] = detail::mat_to_json(m.Q_wdg_simple);
    return j;
}

inline MotorLossModel motor_model_from_json(const nlohmann::json& j) {
    if (j.value("version", 0) != 1) throw ValidationError("unsupported motor model version");
    MotorLossModel m;
    m.a_sft = {j.at("a_sft").at(0).get<double>(), j.at("a_sft").at(1).get<double>()};
    m.power_levels = j.at("power_levels").get<std::vector<double>>();
    m.alpha_inv = j.at("alpha_inv").get<double>();
    m.omega_lowspeed = j.at("omega_lowspeed").get<double>();
    for (const auto& L : j.at("traction")) {
        TractionLevel lv;
        for (int i = 0; i < 3; ++i) {
            lv.a_rtr[i] = L.at("a_rtr").at(i).get<double>();
            lv.a_str[i] = L.at("a_str").at(i).get<double>();
        }
        lv.R_mgt = detail::mat_from_json<Mat3>(L.at("R_mgt"));
        lv.R_wdg = detail::mat_from_json<Mat6>(L.at("R_wdg"));
        lv.a_wdg_1 = L.at("a_wdg_1").get<double>();
        lv.a_wdg_2 = L.at("a_wdg_2").get<double>();
        m.traction.push_back(lv);
    }
    m.Q_rtr_brk = detail::mat_from_json<Mat6>(j.at("Q_rtr_brk"));
    m.Q_str_brk = detail::mat_from_json<Mat6>(j.at("Q_str_brk"));
    m.Q_mgt_brk = detail::mat_from_json<Mat6>(j.at("Q_mgt_brk"));
    m.Q_wdg_brk = detail::mat_from_json<Mat6>(j.at("Q_wdg_brk"));
    m.Q_rtr_simple = detail::mat_from_json<Mat6>(j.at("Q_rtr_simple"));
    m.Q_str_simple = detail::mat_from_json<Mat6>(j.at("Q_str_simple"));
    m.Q_mgt_simple = detail::mat_from_json<Mat6>(j.at("Q_mgt_simple"));
    m.Q_wdg_simple = detail::mat_from_json<Mat6>(j.at("Q_wdg_simple"));
    m.validate();
    return m;
}

#endif  // POWERTRAIN_NO_JSON

}  // namespace powertrain::motor
