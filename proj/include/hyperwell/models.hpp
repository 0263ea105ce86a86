#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <variant>

#include "hyperwell/errors.hpp"

namespace hyperwell::models {

// Exponential decay of the reflected signal: R(t) = a * exp(-k_d t) + c.
struct ExpParams {
    double a = 1.0;   // amplitude above baseline, > 0
    double k_d = 0.0; // decay constant, 1/hour
    double c = 0.0;   // baseline

    void validate() const {
        require(a > 0.0, ErrorKind::InvalidArgument, "exp model: amplitude must be > 0");
        require(k_d >= 0.0, ErrorKind::InvalidArgument, "exp model: decay constant must be >= 0");
        require(c >= 0.0, ErrorKind::InvalidArgument, "exp model: baseline must be >= 0");
    }
};

// Combined surface+bulk erosion. The governing equation
//   dm/dt = -(k1 * m + b * m^(2/3))
// has the closed-form solution m(t) = w(t)^3 with
//   w(t) = m0^(1/3) * exp(-k1 t / 3) + b * expm1(-k1 t / 3) / k1
// clamped to zero once w crosses zero (the raw cube goes negative past
// extinction, which is unphysical). b lumps the surface-rate constants;
// the signal model is R(t) = m(t) + c.
struct AdvParams {
    double m0 = 1.0; // initial mass-equivalent amplitude, > 0
    double k1 = 0.0; // bulk rate, 1/hour
    double b = 0.0;  // surface-rate lump, 1/hour per cube-root mass unit
    double c = 0.0;  // baseline

    void validate() const {
        require(m0 > 0.0, ErrorKind::InvalidArgument, "adv model: initial amplitude must be > 0");
        require(k1 >= 0.0, ErrorKind::InvalidArgument, "adv model: bulk rate must be >= 0");
        require(b >= 0.0, ErrorKind::InvalidArgument, "adv model: surface rate must be >= 0");
        require(c >= 0.0, ErrorKind::InvalidArgument, "adv model: baseline must be >= 0");
    }
};

struct LifeMetrics {
    std::optional<double> half_life; // exponential model only
    double total_life = 0.0;         // amplitude below theta of its initial value
    double theta = 0.01;
};

inline double exp_reflectance(double t, const ExpParams& p) {
    return p.a * std::exp(-p.k_d * t) + p.c;
}

namespace detail {

// expm1(-k1 t / 3) / k1, continuous at k1 = 0 where it equals -t/3.
inline double surface_kernel(double k1, double t) {
    if (k1 * t < 1e-12) return -t / 3.0 + k1 * t * t / 18.0;
    return std::expm1(-k1 * t / 3.0) / k1;
}

inline double surface_kernel_dk1(double k1, double t) {
    if (k1 * t < 1e-6) return t * t / 18.0 - k1 * t * t * t / 81.0;
    const double e = std::exp(-k1 * t / 3.0);
    return ((-t / 3.0) * e - surface_kernel(k1, t)) / k1;
}

// Cube root of the remaining mass before clamping.
inline double mass_root(double t, const AdvParams& p) {
    return std::cbrt(p.m0) * std::exp(-p.k1 * t / 3.0) + p.b * surface_kernel(p.k1, t);
}

} // namespace detail

inline double adv_mass(double t, const AdvParams& p) {
    const double w = detail::mass_root(t, p);
    return w > 0.0 ? w * w * w : 0.0;
}

inline double adv_reflectance(double t, const AdvParams& p) {
    return adv_mass(t, p) + p.c;
}

inline double mass_ode_rhs(double m, double k1, double b) {
    return -(k1 * m + b * std::cbrt(m * m));
}

// Time at which the mass hits exactly zero; infinity when b = 0.
inline double extinction_time(const AdvParams& p) {
    if (p.b <= 0.0) return std::numeric_limits<double>::infinity();
    if (p.k1 <= 0.0) return 3.0 * std::cbrt(p.m0) / p.b;
    const double u = p.k1 * std::cbrt(p.m0) + p.b;
    return 3.0 / p.k1 * std::log(u / p.b);
}

inline double half_life(double k_d) {
    require(k_d > 0.0, ErrorKind::DegenerateInput, "half-life undefined without decay (k_d <= 0)");
    return std::log(2.0) / k_d;
}

inline double total_life(const ExpParams& p, double theta = 0.01) {
    p.validate();
    require(theta > 0.0 && theta < 1.0, ErrorKind::InvalidArgument, "theta must be in (0,1)");
    require(p.k_d > 0.0, ErrorKind::DegenerateInput, "total life undefined without decay");
    return std::log(1.0 / theta) / p.k_d;
}

// Smallest t with amplitude(t) <= theta * amplitude(0), located by bisection
// to 1e-9 h. A closed form exists but bisection is the contract here.
inline double total_life(const AdvParams& p, double theta = 0.01) {
    p.validate();
    require(theta > 0.0 && theta < 1.0, ErrorKind::InvalidArgument, "theta must be in (0,1)");
    require(p.k1 > 0.0 || p.b > 0.0, ErrorKind::DegenerateInput, "total life undefined without decay");
    const double target = theta * p.m0;
    double lo = 0.0;
    double hi = 1.0;
    while (adv_mass(hi, p) > target) {
        lo = hi;
        hi *= 2.0;
        require(hi < 1e18, ErrorKind::Internal, "total life bracket failed to close");
    }
    while (hi - lo > 1e-9) {
        const double mid = 0.5 * (lo + hi);
        (adv_mass(mid, p) <= target ? hi : lo) = mid;
    }
    return hi;
}

// Either model, e.g. per-well ground truth in synthetic scenes.
using AnyParams = std::variant<ExpParams, AdvParams>;

inline double reflectance(double t, const AnyParams& p) {
    return std::visit([t](const auto& q) {
        if constexpr (std::is_same_v<std::decay_t<decltype(q)>, ExpParams>)
            return exp_reflectance(t, q);
        else
            return adv_reflectance(t, q);
    }, p);
}

inline double initial_amplitude(const AnyParams& p) {
    return std::holds_alternative<ExpParams>(p) ? std::get<ExpParams>(p).a
                                                : std::get<AdvParams>(p).m0;
}

inline double baseline(const AnyParams& p) {
    return std::holds_alternative<ExpParams>(p) ? std::get<ExpParams>(p).c
                                                : std::get<AdvParams>(p).c;
}

// Partials for the least-squares Jacobians. Order matches the parameter
// vectors used by the solver: (a, k_d, c) and (m0, k1, b, c).

inline std::array<double, 3> exp_gradient(double t, const ExpParams& p) {
    const double e = std::exp(-p.k_d * t);
    return {e, -p.a * t * e, 1.0};
}

inline std::array<double, 4> adv_gradient(double t, const AdvParams& p) {
    const double w = detail::mass_root(t, p);
    if (w <= 0.0) return {0.0, 0.0, 0.0, 1.0}; // flat past extinction
    const double e = std::exp(-p.k1 * t / 3.0);
    const double w2 = w * w;
    const double dwdm0 = e / (3.0 * std::cbrt(p.m0) * std::cbrt(p.m0));
    const double dwdk1 = std::cbrt(p.m0) * (-t / 3.0) * e + p.b * detail::surface_kernel_dk1(p.k1, t);
    const double dwdb = detail::surface_kernel(p.k1, t);
    return {3.0 * w2 * dwdm0, 3.0 * w2 * dwdk1, 3.0 * w2 * dwdb, 1.0};
}

} // namespace hyperwell::models
