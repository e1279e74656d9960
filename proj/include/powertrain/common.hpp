// Shared utilities: error types, deterministic RNG, CSV helpers, numeric misc.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace powertrain {

class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, int line) : std::runtime_error(what), line_(line) {}
    int line() const { return line_; }

private:
    int line_;
};

class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IdentificationError : public std::runtime_error {
public:
    IdentificationError(const std::string& what, std::string component)
        : std::runtime_error(what), component_(std::move(component)) {}
    const std::string& component() const { return component_; }

private:
    std::string component_;
};

class TranscriptionError : public std::runtime_error {
public:
    TranscriptionError(const std::string& what, int step) : std::runtime_error(what), step_(step) {}
    int step() const { return step_; }

private:
    int step_;
};

inline double sq(double x) { return x * x; }

inline double clamp(double x, double lo, double hi) { return std::max(lo, std::min(hi, x)); }

// Deterministic RNG. std::uniform_real_distribution is implementation-defined,
// so outputs are mapped from raw 64-bit draws to keep runs bit-identical
// across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

    std::uint64_t next_u64() {
        // splitmix64
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    int uniform_int(int lo, int hi) {  // inclusive bounds
        return lo + int(next_u64() % std::uint64_t(hi - lo + 1));
    }

    // Box-Muller from deterministic uniforms
    double gaussian() {
        double u1 = uniform(), u2 = uniform();
        u1 = std::max(u1, 1e-300);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

private:
    std::uint64_t state_;
};

// root-mean-square error normalized by the data range
inline double nrmse(const std::vector<double>& truth, const std::vector<double>& fit) {
    if (truth.empty() || truth.size() != fit.size())
        throw ValidationError("nrmse: size mismatch");
    double lo = truth[0], hi = truth[0], se = 0.0;
    for (size_t i = 0; i < truth.size(); ++i) {
        lo = std::min(lo, truth[i]);
        hi = std::max(hi, truth[i]);
        se += sq(truth[i] - fit[i]);
    }
    double range = hi - lo;
    double rmse = std::sqrt(se / double(truth.size()));
    if (range <= 0.0) return rmse == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return rmse / range;
}

// 17 significant digits survives a double round trip
inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::uint64_t fnv1a64(const void* data, size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

namespace csv {

inline std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t");
    return s.substr(a, b - a + 1);
}

inline double parse_number(const std::string& field, int line_no) {
    const std::string t = trim(field);
    if (t.empty()) throw ParseError("empty numeric field at line " + std::to_string(line_no), line_no);
    size_t pos = 0;
    double v;
    try {
        v = std::stod(t, &pos);
    } catch (const std::exception&) {
        throw ParseError("cannot parse number '" + t + "' at line " + std::to_string(line_no), line_no);
    }
    if (pos != t.size())
        throw ParseError("trailing characters in number '" + t + "' at line " + std::to_string(line_no), line_no);
    if (!std::isfinite(v)) throw ParseError("non-finite value at line " + std::to_string(line_no), line_no);
    return v;
}

}  // namespace csv
}  // namespace powertrain
