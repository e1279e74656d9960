// Convex program container and the primal-dual interior-point solver used by
// the transcribed problems. Constraint classes: affine equalities, affine
// inequalities, convex quadratic inequalities, and rotated-cone constraints
// kept in fractional form z^2/w <= u (smooth and convex on the interior).
#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "powertrain/common.hpp"

namespace powertrain::solver {

struct LinTerm {
    int var = -1;
    double coef = 0.0;
};

enum class IneqKind { Affine, Quadratic, Fraction };

enum class SolveStatus { Optimal, MaxIter, Infeasible };

inline std::string to_string(SolveStatus s) {
    switch (s) {
        case SolveStatus::Optimal: return "optimal";
        case SolveStatus::MaxIter: return "max_iter";
        default: return "infeasible";
    }
}

struct SolverSettings {
    double feas_tol = 1e-9;
    double gap_tol = 1e-10;
    int max_iter = 120;
    double mu0 = -1.0;  // <0: derive from the initial point; warm starts pass a small value
    bool verbose = false;
};

// One scalar inequality g(x) <= 0.
struct Inequality {
    IneqKind kind = IneqKind::Affine;
    // affine: lin . x - rhs <= 0
    std::vector<LinTerm> lin;
    double rhs = 0.0;
    // quadratic: 0.5 * xs' Q xs + lin . x - rhs <= 0, Q over `support` vars
    std::vector<int> support;
    Eigen::MatrixXd Q;
    // fraction: z^2 / w - u <= 0, each of z, w, u affine (terms + offset)
    std::vector<LinTerm> az, aw, au;
    double bz = 0.0, bw = 0.0, bu = 0.0;

    std::string name;
    bool audited = false;   // tight-at-optimum relaxation, reported in the audit
    double audit_scale = 1.0;
    int audit_var = -1;     // epigraph variable the gap is measured against
};

struct Equality {
    std::vector<LinTerm> lin;
    double rhs = 0.0;
};

class ConvexProgram {
public:
    int add_var(std::string name, double scale = 1.0, double x0 = 0.0) {
        names_.push_back(std::move(name));
        scales_.push_back(scale);
        x0_.push_back(x0);
        obj_.push_back(0.0);
        return int(names_.size()) - 1;
    }
    int num_vars() const { return int(names_.size()); }
    const std::string& var_name(int i) const { return names_[i]; }
    double scale(int i) const { return scales_[i]; }
    double& x0(int i) { return x0_[i]; }
    double x0(int i) const { return x0_[i]; }
    void add_objective(int var, double coef) { obj_[var] += coef; }
    const std::vector<double>& objective() const { return obj_; }

    void add_eq(std::vector<LinTerm> lin, double rhs) { eqs_.push_back({std::move(lin), rhs}); }

    // lin . x <= rhs
    Inequality& add_affine(std::vector<LinTerm> lin, double rhs, std::string name) {
        Inequality q;
        q.kind = IneqKind::Affine;
        q.lin = std::move(lin);
        q.rhs = rhs;
        q.name = std::move(name);
        ineqs_.push_back(std::move(q));
        return ineqs_.back();
    }

    // 0.5 * x_s' Q x_s + lin . x <= rhs
    Inequality& add_quadratic(std::vector<int> support, Eigen::MatrixXd Q, std::vector<LinTerm> lin,
                              double rhs, std::string name) {
        Inequality q;
        q.kind = IneqKind::Quadratic;
        q.support = std::move(support);
        q.Q = std::move(Q);
        q.lin = std::move(lin);
        q.rhs = rhs;
        q.name = std::move(name);
        ineqs_.push_back(std::move(q));
        return ineqs_.back();
    }

    // z^2 <= w * u with w, u > 0 on the interior
    Inequality& add_fraction(std::vector<LinTerm> az, double bz, std::vector<LinTerm> aw, double bw,
                             std::vector<LinTerm> au, double bu, std::string name) {
        Inequality q;
        q.kind = IneqKind::Fraction;
        q.az = std::move(az);
        q.bz = bz;
        q.aw = std::move(aw);
        q.bw = bw;
        q.au = std::move(au);
        q.bu = bu;
        q.name = std::move(name);
        ineqs_.push_back(std::move(q));
        return ineqs_.back();
    }

    const std::vector<Inequality>& inequalities() const { return ineqs_; }
    const std::vector<Equality>& equalities() const { return eqs_; }
    size_t num_ineq() const { return ineqs_.size(); }
    size_t num_eq() const { return eqs_.size(); }

private:
    std::vector<std::string> names_;
    std::vector<double> scales_;
    std::vector<double> x0_;
    std::vector<double> obj_;
    std::vector<Equality> eqs_;
    std::vector<Inequality> ineqs_;
};

namespace detail {

inline double dot(const std::vector<LinTerm>& terms, const Eigen::VectorXd& x, double offset) {
    double v = offset;
    for (const auto& t : terms) v += t.coef * x[t.var];
    return v;
}

// merge duplicate variables; outer-product assembly requires unique entries
inline void coalesce(std::vector<LinTerm>& terms) {
    if (terms.size() < 2) return;
    std::sort(terms.begin(), terms.end(), [](const LinTerm& a, const LinTerm& b) { return a.var < b.var; });
    size_t out = 0;
    for (size_t i = 0; i < terms.size(); ++i) {
        if (out > 0 && terms[out - 1].var == terms[i].var)
            terms[out - 1].coef += terms[i].coef;
        else
            terms[out++] = terms[i];
    }
    terms.resize(out);
}

struct IneqEval {
    double g = 0.0;                 // constraint value, feasible when < 0
    std::vector<LinTerm> grad;      // sparse gradient
    // Hessian pieces: dense block on `support` (quadratic) or rank-1 (fraction)
    double frac_w = 0.0, frac_z = 0.0;
};

inline double eval_g(const Inequality& q, const Eigen::VectorXd& x) {
    switch (q.kind) {
        case IneqKind::Affine:
            return dot(q.lin, x, -q.rhs);
        case IneqKind::Quadratic: {
            const int n = int(q.support.size());
            double v = dot(q.lin, x, -q.rhs);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) v += 0.5 * q.Q(i, j) * x[q.support[i]] * x[q.support[j]];
            return v;
        }
        case IneqKind::Fraction: {
            const double z = dot(q.az, x, q.bz);
            const double w = dot(q.aw, x, q.bw);
            const double u = dot(q.au, x, q.bu);
            if (w <= 0.0) return std::numeric_limits<double>::infinity();
            return z * z / w - u;
        }
    }
    return 0.0;
}

}  // namespace detail

struct SolveResult {
    SolveStatus status = SolveStatus::MaxIter;
    Eigen::VectorXd x;        // scaled values
    Eigen::VectorXd lambda;   // inequality multipliers
    Eigen::VectorXd y;        // equality multipliers
    double objective = 0.0;   // scaled
    int iterations = 0;
    double gap = 0.0;         // surrogate duality gap (absolute, scaled)
    double primal_residual = 0.0;
    double dual_residual = 0.0;
    std::string message;
};

// Infeasible-start primal-dual interior-point method with a Mehrotra-style
// predictor-corrector. The initial point must satisfy every inequality
// strictly; the transcriber constructs such a point.
class InteriorPointSolver {
public:
    explicit InteriorPointSolver(const ConvexProgram& prog) : prog_(prog) {}

    SolveResult solve(const SolverSettings& settings, const Eigen::VectorXd* x_start = nullptr,
                      const Eigen::VectorXd* lambda_start = nullptr) {
        const int n = prog_.num_vars();
        const int me = int(prog_.num_eq());
        const int mi = int(prog_.num_ineq());
        const auto& ineqs = prog_.inequalities();

        SolveResult res;
        Eigen::VectorXd x(n);
        if (x_start) {
            x = *x_start;
        } else {
            for (int i = 0; i < n; ++i) x[i] = prog_.x0(i);
        }

        Eigen::VectorXd s(mi);
        for (int i = 0; i < mi; ++i) {
            const double g = detail::eval_g(ineqs[i], x);
            if (!(g < 0.0)) {
                res.status = SolveStatus::Infeasible;
                res.message = "initial point not strictly interior at constraint '" + ineqs[i].name +
                              "' (g = " + format_double(g) + ")";
                res.x = x;
                return res;
            }
            s[i] = -g;
        }

        Eigen::VectorXd c = Eigen::VectorXd::Zero(n);
        for (int i = 0; i < n; ++i) c[i] = prog_.objective()[i];

        double mu0 = settings.mu0;
        if (mu0 <= 0.0) mu0 = std::max(1e-2, s.sum() / std::max(1, mi) * 0.1);
        Eigen::VectorXd lam(mi);
        if (lambda_start && lambda_start->size() == mi) {
            lam = lambda_start->cwiseMax(1e-10);
        } else {
            for (int i = 0; i < mi; ++i) lam[i] = clamp(mu0 / s[i], 1e-8, 1e8);
        }
        Eigen::VectorXd y = Eigen::VectorXd::Zero(me);

        // equality matrix (constant)
        Eigen::SparseMatrix<double> A(me, n);
        {
            std::vector<Eigen::Triplet<double>> tr;
            for (int e = 0; e < me; ++e)
                for (const auto& t : prog_.equalities()[e].lin) tr.emplace_back(e, t.var, t.coef);
            A.setFromTriplets(tr.begin(), tr.end());
        }
        Eigen::VectorXd b(me);
        for (int e = 0; e < me; ++e) b[e] = prog_.equalities()[e].rhs;
        const double bnorm = me ? b.lpNorm<Eigen::Infinity>() : 0.0;
        const double cnorm = c.lpNorm<Eigen::Infinity>();

        Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>, Eigen::Lower> ldlt;
        bool analyzed = false;

        std::vector<std::vector<LinTerm>> grads(mi);
        const double delta_p = 1e-9, delta_d = 1e-9;

        auto eval_grad = [&](int i, const Eigen::VectorXd& xx) {
            const auto& q = ineqs[i];
            auto& g = grads[i];
            g.clear();
            switch (q.kind) {
                case IneqKind::Affine:
                    g = q.lin;
                    break;
                case IneqKind::Quadratic: {
                    const int ns = int(q.support.size());
                    for (int a = 0; a < ns; ++a) {
                        double v = 0.0;
                        for (int bb = 0; bb < ns; ++bb) v += q.Q(a, bb) * xx[q.support[bb]];
                        g.push_back({q.support[a], v});
                    }
                    for (const auto& t : q.lin) g.push_back(t);
                    break;
                }
                case IneqKind::Fraction: {
                    const double z = detail::dot(q.az, xx, q.bz);
                    const double w = detail::dot(q.aw, xx, q.bw);
                    for (const auto& t : q.az) g.push_back({t.var, 2.0 * z / w * t.coef});
                    for (const auto& t : q.aw) g.push_back({t.var, -z * z / (w * w) * t.coef});
                    for (const auto& t : q.au) g.push_back({t.var, -t.coef});
                    break;
                }
            }
            detail::coalesce(g);
        };

        // Monotone barrier scheme: Newton on the mu-perturbed KKT system,
        // mu lowered once the system is solved to within a multiple of mu.
        double mu = mu0;
        int it = 0;
        double eta = lam.dot(s);
        int stall = 0;
        for (; it < settings.max_iter; ++it) {
            for (int i = 0; i < mi; ++i) eval_grad(i, x);
            Eigen::VectorXd r_dual = c + A.transpose() * y;
            for (int i = 0; i < mi; ++i)
                for (const auto& t : grads[i]) r_dual[t.var] += lam[i] * t.coef;
            Eigen::VectorXd r_prim = A * x - b;
            eta = lam.dot(s);

            const double pres = me ? r_prim.lpNorm<Eigen::Infinity>() / (1.0 + bnorm) : 0.0;
            const double dres = r_dual.lpNorm<Eigen::Infinity>() / (1.0 + cnorm);
            const double obj = c.dot(x);
            const double gap_rel = eta / (1.0 + std::abs(obj));
            if (settings.verbose)
                std::fprintf(stderr, "it %3d  obj %+.10e  gap %.3e  pres %.3e  dres %.3e  mu %.3e\n", it,
                             obj, gap_rel, pres, dres, mu);
            if (pres < settings.feas_tol && dres < std::max(settings.feas_tol, 1e-8) &&
                gap_rel < settings.gap_tol) {
                res.status = SolveStatus::Optimal;
                break;
            }

            // centrality-tied barrier parameter, monotone nonincreasing
            {
                const double floor = 0.02 * settings.gap_tol * (1.0 + std::abs(obj)) / std::max(1, mi);
                mu = std::max(floor, std::min(mu, 0.2 * eta / std::max(1, mi)));
            }

            // assemble reduced KKT (lower triangle)
            std::vector<Eigen::Triplet<double>> tr;
            tr.reserve(size_t(n) * 4 + size_t(mi) * 24);
            for (int i = 0; i < n; ++i) tr.emplace_back(i, i, delta_p);
            for (int e = 0; e < me; ++e) tr.emplace_back(n + e, n + e, -delta_d);
            for (int e = 0; e < me; ++e)
                for (const auto& t : prog_.equalities()[e].lin) tr.emplace_back(n + e, t.var, t.coef);

            auto add_sym = [&](int a, int bb, double v) {
                if (a >= bb)
                    tr.emplace_back(a, bb, v);
                else
                    tr.emplace_back(bb, a, v);
            };
            for (int i = 0; i < mi; ++i) {
                const auto& q = ineqs[i];
                const double w_i = std::min(lam[i] / s[i], 1e14);
                // curvature of g
                if (q.kind == IneqKind::Quadratic) {
                    const int ns = int(q.support.size());
                    for (int a = 0; a < ns; ++a)
                        for (int bb = 0; bb <= a; ++bb) {
                            const double v = lam[i] * q.Q(a, bb);
                            if (v != 0.0) add_sym(q.support[a], q.support[bb], v);
                        }
                } else if (q.kind == IneqKind::Fraction) {
                    const double z = detail::dot(q.az, x, q.bz);
                    const double w = detail::dot(q.aw, x, q.bw);
                    // Hessian = (2/w) vv', v = grad z - (z/w) grad w
                    std::vector<LinTerm> v;
                    for (const auto& t : q.az) v.push_back({t.var, t.coef});
                    for (const auto& t : q.aw) v.push_back({t.var, -(z / w) * t.coef});
                    detail::coalesce(v);
                    const double coef = 2.0 * lam[i] / w;
                    for (size_t a = 0; a < v.size(); ++a)
                        for (size_t bb = 0; bb <= a; ++bb)
                            add_sym(v[a].var, v[bb].var, coef * v[a].coef * v[bb].coef);
                }
                // barrier curvature (lam/s) grad grad'
                const auto& g = grads[i];
                for (size_t a = 0; a < g.size(); ++a)
                    for (size_t bb = 0; bb <= a; ++bb)
                        add_sym(g[a].var, g[bb].var, w_i * g[a].coef * g[bb].coef);
            }
            Eigen::SparseMatrix<double> Kkt(n + me, n + me);
            Kkt.setFromTriplets(tr.begin(), tr.end());
            if (!analyzed) {
                ldlt.analyzePattern(Kkt);
                analyzed = true;
            }
            ldlt.factorize(Kkt);
            if (ldlt.info() != Eigen::Success) {
                // bump the regularization until the factorization goes through
                double boost = std::max(1e-8, delta_p * 100.0);
                bool fixed = false;
                for (int trial = 0; trial < 6 && !fixed; ++trial, boost *= 100.0) {
                    Eigen::SparseMatrix<double> Kr = Kkt;
                    for (int i = 0; i < n; ++i) Kr.coeffRef(i, i) += boost;
                    for (int e = 0; e < me; ++e) Kr.coeffRef(n + e, n + e) -= boost;
                    ldlt.factorize(Kr);
                    fixed = ldlt.info() == Eigen::Success;
                }
                if (!fixed) {
                    res.message = "KKT factorization failed";
                    res.status = SolveStatus::MaxIter;
                    break;
                }
            }

            // Newton direction for the mu-system
            Eigen::VectorXd rhs(n + me);
            {
                Eigen::VectorXd top = -(c + A.transpose() * y);
                for (int i = 0; i < mi; ++i) {
                    const double coef = mu / s[i];
                    for (const auto& t : grads[i]) top[t.var] -= coef * t.coef;
                }
                rhs.head(n) = top;
                rhs.tail(me) = -r_prim;
            }
            Eigen::VectorXd d = ldlt.solve(rhs);
            {
                const Eigen::VectorXd resid = rhs - Kkt.selfadjointView<Eigen::Lower>() * d;
                d += ldlt.solve(resid);
            }
            const Eigen::VectorXd dx = d.head(n);
            const Eigen::VectorXd dy = d.tail(me);
            Eigen::VectorXd dlam(mi);
            for (int i = 0; i < mi; ++i) {
                double gdx = 0.0;
                for (const auto& t : grads[i]) gdx += t.coef * dx[t.var];
                dlam[i] = (mu - lam[i] * s[i] + lam[i] * gdx) / s[i];
            }

            // fraction-to-boundary on multipliers and linearized slacks
            const double tau = std::max(0.99, 1.0 - 10.0 * mu);
            double alpha = 1.0;
            for (int i = 0; i < mi; ++i) {
                if (dlam[i] < 0.0) alpha = std::min(alpha, -tau * lam[i] / dlam[i]);
                double gdx = 0.0;
                for (const auto& t : grads[i]) gdx += t.coef * dx[t.var];
                if (gdx > 0.0) alpha = std::min(alpha, tau * s[i] / gdx);
            }

            // merit: squared norm of the scaled mu-KKT residuals
            auto merit = [&](const Eigen::VectorXd& xx, const Eigen::VectorXd& yy,
                             const Eigen::VectorXd& ll) {
                double m2 = 0.0;
                Eigen::VectorXd rd = c + A.transpose() * yy;
                std::vector<LinTerm> g;
                for (int i = 0; i < mi; ++i) {
                    const auto& q = ineqs[i];
                    const double gv = detail::eval_g(q, xx);
                    if (!(gv < 0.0)) return std::numeric_limits<double>::infinity();
                    // gradient at xx
                    g.clear();
                    switch (q.kind) {
                        case IneqKind::Affine:
                            g = q.lin;
                            break;
                        case IneqKind::Quadratic: {
                            const int ns = int(q.support.size());
                            for (int a2 = 0; a2 < ns; ++a2) {
                                double v = 0.0;
                                for (int b2 = 0; b2 < ns; ++b2) v += q.Q(a2, b2) * xx[q.support[b2]];
                                g.push_back({q.support[a2], v});
                            }
                            for (const auto& t : q.lin) g.push_back(t);
                            break;
                        }
                        case IneqKind::Fraction: {
                            const double z = detail::dot(q.az, xx, q.bz);
                            const double w = detail::dot(q.aw, xx, q.bw);
                            for (const auto& t : q.az) g.push_back({t.var, 2.0 * z / w * t.coef});
                            for (const auto& t : q.aw) g.push_back({t.var, -z * z / (w * w) * t.coef});
                            for (const auto& t : q.au) g.push_back({t.var, -t.coef});
                            break;
                        }
                    }
                    for (const auto& t : g) rd[t.var] += ll[i] * t.coef;
                    const double cres = (ll[i] * (-gv) - mu) / (1.0 + mu);
                    m2 += cres * cres;
                }
                m2 += rd.squaredNorm() / sq(1.0 + cnorm);
                if (me) m2 += (A * xx - b).squaredNorm() / sq(1.0 + bnorm);
                return m2;
            };

            const double m0 = merit(x, y, lam);
            if (settings.verbose) {
                int imax = 0;
                dx.cwiseAbs().maxCoeff(&imax);
                std::fprintf(stderr, "    m0 %.3e  alpha0 %.3e  |dx| %.3e (%s)  |dlam| %.3e\n", m0, alpha,
                             dx.lpNorm<Eigen::Infinity>(), prog_.var_name(imax).c_str(),
                             dlam.lpNorm<Eigen::Infinity>());
            }
            double a_step = alpha;
            bool accepted = false;
            for (int bt = 0; bt < 40; ++bt) {
                const Eigen::VectorXd x_new = x + a_step * dx;
                const Eigen::VectorXd y_new = y + a_step * dy;
                Eigen::VectorXd l_new = lam + a_step * dlam;
                for (int i = 0; i < mi; ++i) l_new[i] = std::max(l_new[i], 1e-300);
                const double m1 = merit(x_new, y_new, l_new);
                if (m1 <= m0 * (1.0 - 1e-4 * a_step) || m1 < 1e-30) {
                    x = x_new;
                    y = y_new;
                    lam = l_new;
                    accepted = true;
                    break;
                }
                a_step *= 0.5;
            }
            if (!accepted) {
                if (++stall >= 3) {
                    res.message = "line search stalled";
                    break;
                }
                mu = std::min(mu * 4.0, mu0);  // recentre and retry
            } else {
                stall = 0;
            }
            for (int i = 0; i < mi; ++i) s[i] = -detail::eval_g(ineqs[i], x);
        }

        res.x = x;
        res.lambda = lam;
        res.y = y;
        res.iterations = it;
        res.objective = c.dot(x);
        res.gap = eta;
        {
            Eigen::VectorXd r_prim = A * x - b;
            res.primal_residual = me ? r_prim.lpNorm<Eigen::Infinity>() / (1.0 + bnorm) : 0.0;
            for (int i = 0; i < mi; ++i) eval_grad(i, x);
            Eigen::VectorXd r_dual = c + A.transpose() * y;
            for (int i = 0; i < mi; ++i)
                for (const auto& t : grads[i]) r_dual[t.var] += lam[i] * t.coef;
            res.dual_residual = r_dual.lpNorm<Eigen::Infinity>() / (1.0 + cnorm);
        }
        if (res.status != SolveStatus::Optimal && it >= settings.max_iter) res.status = SolveStatus::MaxIter;
        if (res.status != SolveStatus::Optimal && res.primal_residual > 1e-4)
            res.status = SolveStatus::Infeasible;
        return res;
    }

private:
    const ConvexProgram& prog_;
};

// slack of one inequality at x (>= 0 inside the feasible set)
inline double slack_at(const Inequality& q, const Eigen::VectorXd& x) { return -detail::eval_g(q, x); }

}  // namespace powertrain::solver
