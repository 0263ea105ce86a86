#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hyperwell/common.hpp"
#include "hyperwell/errors.hpp"
#include "hyperwell/models.hpp"
#include "hyperwell/series.hpp"

namespace hyperwell::fit {

struct ModelMetrics {
    double aic = 0.0;
    double mdl = 0.0;
    double sigma2 = 0.0;
};

// Residual-based scores: AIC = sum r^2 + 2 P sigma^2 and
// MDL = sum r^2 + (P/2) ln(N) sigma^2. sigma^2 defaults to the plug-in
// residual variance sum r^2 / (N - P). Callers are expected to normalize the
// series so its maximum point is 1 before computing these.
inline ModelMetrics model_metrics(const std::vector<double>& residuals, int n_params,
                                  std::optional<double> sigma2_override = std::nullopt) {
    const std::size_t n = residuals.size();
    require(n > static_cast<std::size_t>(n_params), ErrorKind::DegreesOfFreedom,
            "need more points (" + std::to_string(n) + ") than parameters (" +
                std::to_string(n_params) + ")");
    double ss = 0.0;
    for (double r : residuals) ss += r * r;
    ModelMetrics m;
    m.sigma2 = sigma2_override.value_or(ss / static_cast<double>(n - n_params));
    m.aic = ss + 2.0 * n_params * m.sigma2;
    m.mdl = ss + 0.5 * n_params * std::log(static_cast<double>(n)) * m.sigma2;
    return m;
}

inline double r_squared(const std::vector<double>& data, const std::vector<double>& predictions) {
    require(data.size() == predictions.size(), ErrorKind::Dimension,
            "data/prediction length mismatch");
    require(data.size() >= 2, ErrorKind::InsufficientData, "R^2 needs at least 2 points");
    double mean = 0.0;
    for (double v : data) mean += v;
    mean /= static_cast<double>(data.size());
    double ss_tot = 0.0, ss_res = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        ss_tot += (data[i] - mean) * (data[i] - mean);
        ss_res += (data[i] - predictions[i]) * (data[i] - predictions[i]);
    }
    require(ss_tot > 0.0, ErrorKind::DegenerateInput, "R^2 undefined: data has zero variance");
    return 1.0 - ss_res / ss_tot;
}

struct FitResult {
    std::string model; // "exp" | "adv"
    models::AnyParams params;
    std::vector<double> residuals; // raw units: I_i - R(t_i)
    double r2 = 0.0;
    double aic = 0.0;    // computed on max-normalized data
    double mdl = 0.0;
    double sigma2 = 0.0; // normalized units
    std::size_t n_points = 0;
    int n_params = 0;
    models::LifeMetrics life;
    bool converged = false;
    int iterations = 0;
    std::uint64_t seed = 0;

    std::vector<double> predict(const std::vector<double>& times) const {
        std::vector<double> out;
        out.reserve(times.size());
        for (double t : times) out.push_back(models::reflectance(t, params));
        return out;
    }
};

namespace detail {

// Dense LM normal-equation solve, small n (3 or 4).
inline bool solve_linear(std::vector<double> a, std::vector<double> rhs, std::vector<double>& out) {
    const std::size_t n = rhs.size();
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t row = col + 1; row < n; ++row)
            if (std::abs(a[perm[row] * n + col]) > std::abs(a[perm[piv] * n + col])) piv = row;
        std::swap(perm[col], perm[piv]);
        const double p = a[perm[col] * n + col];
        if (std::abs(p) < 1e-300) return false;
        for (std::size_t row = col + 1; row < n; ++row) {
            const double f = a[perm[row] * n + col] / p;
            for (std::size_t k = col; k < n; ++k) a[perm[row] * n + k] -= f * a[perm[col] * n + k];
            rhs[perm[row]] -= f * rhs[perm[col]];
        }
    }
    out.assign(n, 0.0);
    for (std::size_t col = n; col-- > 0;) {
        double s = rhs[perm[col]];
        for (std::size_t k = col + 1; k < n; ++k) s -= a[perm[col] * n + k] * out[k];
        out[col] = s / a[perm[col] * n + col];
    }
    for (double v : out)
        if (!std::isfinite(v)) return false;
    return true;
}

struct LmOutcome {
    std::vector<double> x;
    double cost = 0.0;
    bool converged = false;
    int iterations = 0;
};

// Damped Gauss-Newton (Levenberg-Marquardt) with analytic Jacobian and
// non-negativity handled by projection plus an active set: a parameter
// sitting at zero whose step points negative is frozen out of the solve,
// which avoids the boundary zigzag of plain clamping. Convergence contract:
// relative step < 1e-10 or relative cost change < 1e-12 within 500
// iterations; iteration continues a little past that point so a restarted
// solve stays where it is.
template <typename EvalFn>
LmOutcome lm_minimize(EvalFn&& eval, std::vector<double> x, int max_iter = 500) {
    const std::size_t np = x.size();
    for (double& v : x) v = std::max(v, 0.0);

    std::vector<double> r, jac; // jac row-major: n_points x np, d(pred)/d(theta)
    auto cost_of = [](const std::vector<double>& res) {
        double s = 0.0;
        for (double v : res) s += v * v;
        return s;
    };

    eval(x, r, jac);
    double cost = cost_of(r);
    const std::size_t n_pts = r.size();

    LmOutcome out;
    double lambda = 0.0;
    std::vector<double> a(np * np), g(np), delta, r_new, jac_new;

    for (int iter = 1; iter <= max_iter; ++iter) {
        out.iterations = iter;
        // residual r_i = data - pred, so d r / d theta = -jac
        std::fill(a.begin(), a.end(), 0.0);
        std::fill(g.begin(), g.end(), 0.0);
        for (std::size_t i = 0; i < n_pts; ++i) {
            for (std::size_t j = 0; j < np; ++j) {
                const double jij = jac[i * np + j];
                g[j] += jij * r[i];
                for (std::size_t k = j; k < np; ++k) a[j * np + k] += jij * jac[i * np + k];
            }
        }
        for (std::size_t j = 0; j < np; ++j)
            for (std::size_t k = 0; k < j; ++k) a[j * np + k] = a[k * np + j];

        if (lambda == 0.0) {
            double dmax = 0.0;
            for (std::size_t j = 0; j < np; ++j) dmax = std::max(dmax, a[j * np + j]);
            lambda = dmax > 0.0 ? 1e-3 * dmax : 1e-3;
        }

        bool stepped = false;
        for (int attempt = 0; attempt < 30; ++attempt) {
            std::vector<char> frozen(np, 0);
            bool solved = false;
            for (int round = 0; round < static_cast<int>(np) + 1; ++round) {
                std::vector<double> damped = a;
                std::vector<double> rhs = g;
                for (std::size_t j = 0; j < np; ++j) {
                    damped[j * np + j] += lambda * std::max(a[j * np + j], 1e-12);
                    if (frozen[j]) {
                        for (std::size_t k = 0; k < np; ++k)
                            damped[j * np + k] = damped[k * np + j] = 0.0;
                        damped[j * np + j] = 1.0;
                        rhs[j] = 0.0;
                    }
                }
                solved = solve_linear(damped, rhs, delta);
                if (!solved) break;
                bool changed = false;
                for (std::size_t j = 0; j < np; ++j)
                    if (!frozen[j] && x[j] <= 0.0 && delta[j] < 0.0) {
                        frozen[j] = 1;
                        changed = true;
                    }
                if (!changed) break;
            }
            if (!solved) {
                lambda *= 10.0;
                continue;
            }

            std::vector<double> x_new(np);
            for (std::size_t j = 0; j < np; ++j) x_new[j] = std::max(x[j] + delta[j], 0.0);

            eval(x_new, r_new, jac_new);
            const double cost_new = cost_of(r_new);
            if (std::isfinite(cost_new) && cost_new <= cost) {
                double step2 = 0.0, x2 = 0.0;
                for (std::size_t j = 0; j < np; ++j) {
                    step2 += (x_new[j] - x[j]) * (x_new[j] - x[j]);
                    x2 += x_new[j] * x_new[j];
                }
                const double rel_step = std::sqrt(step2) / (std::sqrt(x2) + 1e-30);
                const double rel_drop = (cost - cost_new) / std::max(cost, 1e-300);
                x = std::move(x_new);
                r = r_new;
                jac = jac_new;
                cost = cost_new;
                lambda = std::max(lambda / 3.0, 1e-14);
                stepped = true;
                if (rel_step < 1e-10 || rel_drop < 1e-12) out.converged = true;
                if (rel_step < 1e-13 || rel_drop < 1e-15) {
                    out.x = x;
                    out.cost = cost;
                    return out; // polished to the floor
                }
                break;
            }
            lambda *= 10.0;
            if (lambda > 1e14) break;
        }
        if (!stepped) break; // no downhill step available
        if (out.converged && iter == max_iter) break;
    }
    out.x = x;
    out.cost = cost;
    return out;
}

struct StartPoint {
    std::vector<double> x;
};

struct SeriesView {
    std::vector<double> t;
    std::vector<double> i;
    double i_min = 0.0, i_max = 0.0;
};

inline SeriesView view_of(const series::IntensitySeries& s) {
    SeriesView v;
    v.t = s.times();
    v.i = s.intensities();
    const auto [lo, hi] = std::minmax_element(v.i.begin(), v.i.end());
    v.i_min = *lo;
    v.i_max = *hi;
    return v;
}

// Log-linear decay-rate seed: regress ln(I - c0 + eps) on t over the first
// half of the series.
inline double seed_rate(const SeriesView& v, double c0, double a0) {
    const std::size_t n_half = std::max<std::size_t>(2, v.t.size() / 2);
    const double eps = 1e-9 * std::max(a0, 1.0);
    double st = 0.0, sy = 0.0, stt = 0.0, sty = 0.0;
    for (std::size_t i = 0; i < n_half; ++i) {
        const double y = std::log(std::max(v.i[i] - c0, eps));
        st += v.t[i];
        sy += y;
        stt += v.t[i] * v.t[i];
        sty += v.t[i] * y;
    }
    const double nd = static_cast<double>(n_half);
    const double denom = nd * stt - st * st;
    double slope = denom > 0.0 ? (nd * sty - st * sy) / denom : 0.0;
    const double t_span = std::max(v.t.back() - v.t.front(), 1e-9);
    if (!(slope < 0.0)) return std::log(2.0) / t_span; // no visible decay in the first half
    return -slope;
}

inline void finish_metrics(FitResult& fr, const SeriesView& v) {
    std::vector<double> pred = fr.predict(v.t);
    fr.residuals.resize(v.t.size());
    for (std::size_t i = 0; i < v.t.size(); ++i) fr.residuals[i] = v.i[i] - pred[i];
    fr.r2 = r_squared(v.i, pred);

    // metrics on the max-normalized series
    std::vector<double> r_norm(fr.residuals.size());
    for (std::size_t i = 0; i < r_norm.size(); ++i) r_norm[i] = fr.residuals[i] / v.i_max;
    const auto m = model_metrics(r_norm, fr.n_params);
    fr.aic = m.aic;
    fr.mdl = m.mdl;
    fr.sigma2 = m.sigma2;
    fr.n_points = v.t.size();
}

} // namespace detail

inline constexpr std::uint64_t kDefaultFitSeed = 0x68797072ULL;

// Least-squares fit of R(t) = a exp(-k_d t) + c with multi-start LM.
// Half-life and total-life come from the fitted decay constant.
inline FitResult fit_exponential(const series::IntensitySeries& s,
                                 std::uint64_t seed = kDefaultFitSeed, double theta = 0.01) {
    s.validate();
    require(s.points.size() >= 5, ErrorKind::InsufficientData,
            "exponential fit needs at least 5 points");
    const auto v = detail::view_of(s);
    require(v.i_max - v.i_min > 1e-9 * std::max(v.i_max, 1e-300), ErrorKind::DegenerateInput,
            "series " + s.sample_id + " is constant; nothing decays");

    const double c0 = v.i_min;
    const double a0 = v.i_max - c0;
    const double k0 = detail::seed_rate(v, c0, a0);

    std::vector<detail::StartPoint> starts;
    for (double m : {0.25, 0.5, 1.0, 2.0, 4.0}) starts.push_back({{a0, k0 * m, c0}});
    Rng rng(derive_seed(seed, fnv1a(s.sample_id)));
    for (int j = 0; j < 4; ++j)
        starts.push_back({{a0 * std::exp(0.3 * rng.normal()), k0 * std::exp(0.3 * rng.normal()),
                           c0 * rng.uniform(0.5, 1.0)}});

    auto eval = [&](const std::vector<double>& x, std::vector<double>& r,
                    std::vector<double>& jac) {
        const models::ExpParams p{std::max(x[0], 1e-300), x[1], x[2]};
        const std::size_t n = v.t.size();
        r.resize(n);
        jac.resize(n * 3);
        for (std::size_t i = 0; i < n; ++i) {
            r[i] = v.i[i] - models::exp_reflectance(v.t[i], p);
            const auto g = models::exp_gradient(v.t[i], p);
            jac[i * 3 + 0] = g[0];
            jac[i * 3 + 1] = g[1];
            jac[i * 3 + 2] = g[2];
        }
    };

    detail::LmOutcome best;
    bool have = false;
    for (const auto& start : starts) {
        const auto outcome = detail::lm_minimize(eval, start.x);
        if (!have || outcome.cost < best.cost) {
            best = outcome;
            have = true;
        }
    }
    require(have && best.converged, ErrorKind::Internal,
            "exponential fit did not converge from any start; best residual sum " +
                (have ? fmt_double(best.cost) : std::string("n/a")));

    FitResult fr;
    fr.model = "exp";
    models::ExpParams p{std::max(best.x[0], 1e-300), best.x[1], best.x[2]};
    fr.params = p;
    fr.n_params = 3;
    fr.converged = best.converged;
    fr.iterations = best.iterations;
    fr.seed = seed;
    fr.life.theta = theta;
    if (p.k_d > 0.0) {
        fr.life.half_life = models::half_life(p.k_d);
        fr.life.total_life = models::total_life(p, theta);
    } else {
        fr.life.total_life = std::numeric_limits<double>::infinity();
    }
    detail::finish_metrics(fr, v);
    return fr;
}

// Least-squares fit of the surface+bulk model. No half-life is reported;
// total-life covers end-of-signal instead.
inline FitResult fit_advanced(const series::IntensitySeries& s,
                              std::uint64_t seed = kDefaultFitSeed, double theta = 0.01) {
    s.validate();
    require(s.points.size() >= 6, ErrorKind::InsufficientData,
            "advanced fit needs at least 6 points");
    const auto v = detail::view_of(s);
    require(v.i_max - v.i_min > 1e-9 * std::max(v.i_max, 1e-300), ErrorKind::DegenerateInput,
            "series " + s.sample_id + " is constant; nothing decays");

    const double c0 = v.i_min;
    const double a0 = v.i_max - c0;
    const double k0 = detail::seed_rate(v, c0, a0);
    const double b_scale = k0 * std::cbrt(a0);

    std::vector<detail::StartPoint> starts;
    for (double m : {0.25, 0.5, 1.0, 2.0, 4.0})
        for (double bf : {0.0, 0.1, 1.0}) starts.push_back({{a0, k0 * m, bf * b_scale, c0}});

    auto eval = [&](const std::vector<double>& x, std::vector<double>& r,
                    std::vector<double>& jac) {
        const models::AdvParams p{std::max(x[0], 1e-300), x[1], x[2], x[3]};
        const std::size_t n = v.t.size();
        r.resize(n);
        jac.resize(n * 4);
        for (std::size_t i = 0; i < n; ++i) {
            r[i] = v.i[i] - models::adv_reflectance(v.t[i], p);
            const auto g = models::adv_gradient(v.t[i], p);
            for (std::size_t j = 0; j < 4; ++j) jac[i * 4 + j] = g[j];
        }
    };

    detail::LmOutcome best;
    bool have = false;
    for (const auto& start : starts) {
        const auto outcome = detail::lm_minimize(eval, start.x);
        if (!have || outcome.cost < best.cost) {
            best = outcome;
            have = true;
        }
    }
    require(have && best.converged, ErrorKind::Internal,
            "advanced fit did not converge from any start; best residual sum " +
                (have ? fmt_double(best.cost) : std::string("n/a")));

    FitResult fr;
    fr.model = "adv";
    models::AdvParams p{std::max(best.x[0], 1e-300), best.x[1], best.x[2], best.x[3]};
    fr.params = p;
    fr.n_params = 4;
    fr.converged = best.converged;
    fr.iterations = best.iterations;
    fr.seed = seed;
    fr.life.theta = theta;
    if (p.k1 > 0.0 || p.b > 0.0)
        fr.life.total_life = models::total_life(p, theta);
    else
        fr.life.total_life = std::numeric_limits<double>::infinity();
    detail::finish_metrics(fr, v);
    return fr;
}

// Minimum-AIC choice; AIC ties go to the smaller model, then to lower MDL.
inline FitResult select_model(const std::vector<FitResult>& fits) {
    require(!fits.empty(), ErrorKind::InvalidArgument, "no fits to select from");
    for (const auto& f : fits)
        require(f.n_points == fits.front().n_points, ErrorKind::Comparison,
                "fits cover different point counts; metrics are not comparable");
    std::size_t best = 0;
    for (std::size_t i = 1; i < fits.size(); ++i) {
        const double d = fits[i].aic - fits[best].aic;
        if (d < -1e-12) {
            best = i;
        } else if (std::abs(d) <= 1e-12) {
            if (fits[i].n_params < fits[best].n_params ||
                (fits[i].n_params == fits[best].n_params && fits[i].mdl < fits[best].mdl))
                best = i;
        }
    }
    return fits[best];
}

inline nlohmann::ordered_json to_json(const FitResult& fr) {
    nlohmann::ordered_json j;
    j["model"] = fr.model;
    if (std::holds_alternative<models::ExpParams>(fr.params)) {
        const auto& p = std::get<models::ExpParams>(fr.params);
        j["params"] = {{"a", p.a}, {"k_d", p.k_d}, {"c", p.c}};
    } else {
        const auto& p = std::get<models::AdvParams>(fr.params);
        j["params"] = {{"m0", p.m0}, {"k1", p.k1}, {"b", p.b}, {"c", p.c}};
    }
    j["r_squared"] = fr.r2;
    j["aic"] = fr.aic;
    j["mdl"] = fr.mdl;
    j["sigma2"] = fr.sigma2;
    j["n_points"] = fr.n_points;
    j["n_params"] = fr.n_params;
    if (fr.life.half_life) j["half_life_hours"] = *fr.life.half_life;
    j["total_life_hours"] = std::isfinite(fr.life.total_life)
                                ? nlohmann::ordered_json(fr.life.total_life)
                                : nlohmann::ordered_json(nullptr);
    j["theta"] = fr.life.theta;
    j["converged"] = fr.converged;
    j["iterations"] = fr.iterations;
    j["seed"] = fr.seed;
    return j;
}

} // namespace hyperwell::fit
