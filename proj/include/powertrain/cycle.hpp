// Drive-cycle ingestion, resampling, acceleration derivation and wheel
// request power.
#pragma once

#include <cmath>
#include <istream>
#include <string>
#include <vector>

#include "powertrain/common.hpp"

namespace powertrain::cycle {

struct CyclePoint {
    double t = 0.0;      // s
    double v = 0.0;      // m/s
    double alpha = 0.0;  // road gradient, rad
    double a = 0.0;      // m/s^2
};

struct DriveCycle {
    std::vector<CyclePoint> points;
    double dt = 1.0;  // s, uniform after resampling

    size_t size() const { return points.size(); }
    double duration() const { return points.empty() ? 0.0 : points.back().t; }

    // trapezoidal distance in m
    double distance() const {
        double d = 0.0;
        for (size_t k = 0; k + 1 < points.size(); ++k)
            d += 0.5 * (points[k].v + points[k + 1].v) * dt;
        return d;
    }
};

struct VehicleBodyParams {
    double rho_a = 1.2041;  // kg/m^3
    double c_d = 0.28;      // -
    double A_f = 2.29;      // m^2
    double c_r = 0.007;     // -
    double g = 9.81;        // m/s^2
    double r_w = 0.3;       // m

    void validate() const {
        if (rho_a <= 0 || c_d <= 0 || A_f <= 0 || c_r <= 0 || g <= 0 || r_w <= 0)
            throw ValidationError("vehicle body parameters must be strictly positive");
        if (c_d >= 1.0 || c_r >= 1.0)
            throw ValidationError("c_d and c_r must be < 1");
    }
};

inline void validate(const DriveCycle& c) {
    for (size_t k = 0; k < c.points.size(); ++k) {
        const auto& p = c.points[k];
        if (p.v < 0) throw ValidationError("negative velocity at sample " + std::to_string(k));
        if (std::abs(p.alpha) >= M_PI / 2) throw ValidationError("gradient out of range at sample " + std::to_string(k));
        if (k > 0 && !(p.t > c.points[k - 1].t))
            throw ValidationError("time not strictly increasing at sample " + std::to_string(k));
    }
}

// Resample onto a uniform dt grid by linear interpolation, shifted so the
// first sample sits at t = 0. Velocities are clamped at zero.
inline DriveCycle resample(const DriveCycle& in, double dt) {
    if (in.points.empty()) throw ValidationError("cannot resample empty cycle");
    if (dt <= 0) throw ValidationError("dt must be positive");
    validate(in);
    const double t0 = in.points.front().t;
    const double t1 = in.points.back().t;
    DriveCycle out;
    out.dt = dt;
    size_t j = 0;
    const size_t n = size_t(std::floor((t1 - t0) / dt + 1e-9)) + 1;
    out.points.reserve(n);
    for (size_t k = 0; k < n; ++k) {
        double t = t0 + double(k) * dt;
        while (j + 1 < in.points.size() && in.points[j + 1].t < t) ++j;
        CyclePoint p;
        p.t = double(k) * dt;
        if (j + 1 >= in.points.size()) {
            p.v = in.points.back().v;
            p.alpha = in.points.back().alpha;
        } else {
            const auto& a = in.points[j];
            const auto& b = in.points[j + 1];
            double w = (t - a.t) / (b.t - a.t);
            w = clamp(w, 0.0, 1.0);
            p.v = a.v + w * (b.v - a.v);
            p.alpha = a.alpha + w * (b.alpha - a.alpha);
        }
        p.v = std::max(p.v, 0.0);
        out.points.push_back(p);
    }
    return out;
}

// CSV with header `t,v,alpha`; the alpha column is optional and defaults to 0.
inline DriveCycle load_cycle(std::istream& source, double dt) {
    std::string line;
    int line_no = 0;
    if (!std::getline(source, line)) throw ParseError("empty cycle stream", 1);
    ++line_no;
    auto header = csv::split_line(line);
    for (auto& h : header) h = csv::trim(h);
    bool has_alpha = false;
    if (header.size() >= 2 && header[0] == "t" && header[1] == "v") {
        has_alpha = header.size() >= 3 && header[2] == "alpha";
    } else {
        throw ParseError("expected header 't,v[,alpha]' at line 1", 1);
    }
    DriveCycle raw;
    while (std::getline(source, line)) {
        ++line_no;
        if (csv::trim(line).empty()) continue;
        auto f = csv::split_line(line);
        if (f.size() < 2) throw ParseError("too few columns at line " + std::to_string(line_no), line_no);
        CyclePoint p;
        p.t = csv::parse_number(f[0], line_no);
        p.v = csv::parse_number(f[1], line_no);
        p.alpha = (has_alpha && f.size() >= 3) ? csv::parse_number(f[2], line_no) : 0.0;
        raw.points.push_back(p);
    }
    if (raw.points.size() < 2) throw ValidationError("cycle needs at least 2 samples");
    return resample(raw, dt);
}

// a_k = (v_{k+1} - v_{k-1}) / (2 dt) in the interior, one-sided at the ends.
inline DriveCycle derive_acceleration(const DriveCycle& c) {
    if (c.points.size() < 2) throw ValidationError("need at least 2 points to derive acceleration");
    DriveCycle out = c;
    const size_t n = c.points.size();
    const double dt = c.dt;
    out.points[0].a = (c.points[1].v - c.points[0].v) / dt;
    out.points[n - 1].a = (c.points[n - 1].v - c.points[n - 2].v) / dt;
    for (size_t k = 1; k + 1 < n; ++k)
        out.points[k].a = (c.points[k + 1].v - c.points[k - 1].v) / (2.0 * dt);
    return out;
}

// Wheel request power: drag + rolling resistance + grade + inertia.
inline double request_power(const CyclePoint& p, const VehicleBodyParams& body, double m_v) {
    if (m_v <= 0) throw ValidationError("vehicle mass must be positive");
    return p.v * (0.5 * body.rho_a * body.c_d * body.A_f * p.v * p.v +
                  m_v * (body.g * body.c_r * std::cos(p.alpha) + body.g * std::sin(p.alpha) + p.a));
}

// Appends `reps - 1` extra copies of the cycle back to back (x2 construction
// for extended-driving stress tests).
inline DriveCycle repeat(const DriveCycle& c, int reps) {
    if (reps < 1) throw ValidationError("repeat count must be >= 1");
    DriveCycle out = c;
    const size_t n = c.points.size();
    if (n < 2) return out;
    for (int r = 1; r < reps; ++r) {
        // skip the first sample of the copy; it coincides with the last of
        // the previous block only if v wraps, so keep every sample and shift
        const double t_off = out.points.back().t + c.dt;
        for (size_t k = 0; k < n; ++k) {
            CyclePoint p = c.points[k];
            p.t = t_off + double(k) * c.dt;
            out.points.push_back(p);
        }
    }
    return derive_acceleration(out);
}

struct SyntheticCycleSpec {
    std::uint64_t seed = 1;
    double duration_s = 600.0;
    double v_peak = 30.0;      // m/s
    double dt = 1.0;           // s
    int segments = 8;          // speed pyramid count
    double idle_fraction = 0.15;
    bool aggressive = false;   // stress profile: hard accel/decel, high cruise
};

// Deterministic piecewise-trapezoidal speed profile; stands in for licensed
// test cycles. Same seed, same cycle.
inline DriveCycle make_synthetic_cycle(const SyntheticCycleSpec& spec) {
    if (spec.duration_s <= 0 || spec.dt <= 0 || spec.v_peak <= 0 || spec.segments < 1)
        throw ValidationError("invalid synthetic cycle spec");
    Rng rng(spec.seed);
    const size_t n = size_t(std::floor(spec.duration_s / spec.dt + 1e-9)) + 1;
    std::vector<double> v(n, 0.0);

    const double a_up = spec.aggressive ? 2.2 : 1.0;    // m/s^2
    const double a_dn = spec.aggressive ? 3.0 : 1.3;    // m/s^2
    size_t k = 0;
    for (int s = 0; s < spec.segments && k < n; ++s) {
        double vp = spec.v_peak * (spec.aggressive ? rng.uniform(0.7, 1.0) : rng.uniform(0.35, 1.0));
        double idle = spec.idle_fraction * spec.duration_s / double(spec.segments) * rng.uniform(0.4, 1.6);
        double cruise = rng.uniform(0.2, 1.0) * (spec.duration_s / double(spec.segments));
        // ramp up
        for (double vv = 0.0; vv < vp && k < n; vv += a_up * spec.dt) v[k++] = vv;
        for (double tt = 0.0; tt < cruise && k < n; tt += spec.dt) v[k++] = vp;
        for (double vv = vp; vv > 0.0 && k < n; vv -= a_dn * spec.dt) v[k++] = std::max(vv, 0.0);
        for (double tt = 0.0; tt < idle && k < n; tt += spec.dt) v[k++] = 0.0;
    }
    DriveCycle out;
    out.dt = spec.dt;
    out.points.resize(n);
    for (size_t i = 0; i < n; ++i) {
        out.points[i].t = double(i) * spec.dt;
        out.points[i].v = v[i];
    }
    return derive_acceleration(out);
}

}  // namespace powertrain::cycle
