#pragma once

// Ground-truth oracle for the rest of the pipeline: renders well-plate
// frames (with references, glare ring, noise) from known model parameters,
// and generates dense intensity series directly from the models.

#include <bit>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "hyperwell/common.hpp"
#include "hyperwell/config.hpp"
#include "hyperwell/errors.hpp"
#include "hyperwell/hypercube.hpp"
#include "hyperwell/models.hpp"
#include "hyperwell/roi.hpp"
#include "hyperwell/series.hpp"

namespace hyperwell::synth {

// Sensor mapping: reflectance 1.0 sits at ~63% of full scale, so the glare
// ring (forced to 65535) saturates while signal pixels never do.
inline constexpr double kDarkCounts = 1000.0;
inline constexpr double kGainCounts = 40000.0;
inline constexpr std::uint16_t kSaturated = 65535;

struct WellTruth {
    models::AnyParams model = models::ExpParams{0.9, 0.2, 0.1};
    std::string label = "PLA1";
    std::optional<double> ph;
    std::optional<double> rho_area; // mg/cm^2
};

struct Scene {
    std::size_t lines = 200;
    std::size_t samples = 300;
    std::size_t rows = 4;
    std::size_t cols = 6;
    double well_radius_px = 15.0;
    double pitch_px = 40.0;
    std::size_t bands = 32;
    double background_reflectance = 0.08;
    double glare_inner_frac = 0.95; // relative to well radius; <= 0 disables the ring
    double glare_outer_frac = 1.18;
    double noise_sigma = 0.04; // relative, multiplicative
    std::uint64_t seed = 7;
    std::vector<WellTruth> wells; // rows*cols, row-major

    std::size_t well_count() const { return rows * cols; }

    roi::Circle circle(std::size_t index) const {
        const std::size_t row = index / cols;
        const std::size_t col = index % cols;
        const double cx = (static_cast<double>(samples) - 1.0) / 2.0 +
                          (static_cast<double>(col) - (static_cast<double>(cols) - 1.0) / 2.0) *
                              pitch_px;
        const double cy = (static_cast<double>(lines) - 1.0) / 2.0 +
                          (static_cast<double>(row) - (static_cast<double>(rows) - 1.0) / 2.0) *
                              pitch_px;
        return {cx, cy, well_radius_px, static_cast<int>(index)};
    }

    bool has_glare() const { return glare_inner_frac > 0.0 && glare_outer_frac > glare_inner_frac; }

    void validate() const {
        require(rows >= 1 && cols >= 1, ErrorKind::Config, "scene needs at least one well");
        require(wells.size() == well_count(), ErrorKind::Config,
                "scene defines " + std::to_string(wells.size()) + " wells but layout has " +
                    std::to_string(well_count()));
        require(noise_sigma >= 0.0, ErrorKind::Config, "noise sigma must be >= 0");
        require(well_radius_px > 1.0, ErrorKind::Config, "well radius too small");
        const double reach = well_radius_px * std::max(1.0, glare_outer_frac);
        require(pitch_px >= 2.0 * reach, ErrorKind::Config, "wells (and glare rings) overlap");
        for (std::size_t i = 0; i < well_count(); ++i) {
            const auto c = circle(i);
            require(c.cx - reach >= 0.0 && c.cy - reach >= 0.0 &&
                        c.cx + reach <= static_cast<double>(samples - 1) &&
                        c.cy + reach <= static_cast<double>(lines - 1),
                    ErrorKind::Config, "well " + std::to_string(i) + " does not fit in the frame");
        }
        double peak = background_reflectance;
        for (const auto& w : wells)
            peak = std::max(peak, models::initial_amplitude(w.model) + models::baseline(w.model));
        require(kDarkCounts + peak * (1.0 + 6.0 * noise_sigma) * kGainCounts < 65535.0,
                ErrorKind::Config, "scene reflectance would saturate signal pixels");
    }
};

namespace detail {

inline bool in_ring(std::size_t x, std::size_t y, const roi::Circle& c, const Scene& scene) {
    if (!scene.has_glare()) return false;
    const double dx = static_cast<double>(x) - c.cx;
    const double dy = static_cast<double>(y) - c.cy;
    const double d2 = dx * dx + dy * dy;
    const double inner = c.r * scene.glare_inner_frac;
    const double outer = c.r * scene.glare_outer_frac;
    return d2 >= inner * inner && d2 <= outer * outer;
}

} // namespace detail

// Exact count of pixels that the glare ring steals from a well's disk; the
// saturation-exclusion path must reproduce this number exactly.
inline std::size_t glare_overlap_count(const Scene& scene, std::size_t well) {
    const auto c = scene.circle(well);
    std::size_t n = 0;
    const auto y0 = static_cast<std::size_t>(std::floor(c.cy - c.r));
    const auto y1 = static_cast<std::size_t>(std::ceil(c.cy + c.r));
    const auto x0 = static_cast<std::size_t>(std::floor(c.cx - c.r));
    const auto x1 = static_cast<std::size_t>(std::ceil(c.cx + c.r));
    for (std::size_t y = y0; y <= y1; ++y)
        for (std::size_t x = x0; x <= x1; ++x)
            if (roi::in_disk(x, y, c.cx, c.cy, c.r) && detail::in_ring(x, y, c, scene)) ++n;
    return n;
}

inline std::size_t disk_pixel_count(const Scene& scene, std::size_t well) {
    const auto c = scene.circle(well);
    std::size_t n = 0;
    const auto y0 = static_cast<std::size_t>(std::floor(c.cy - c.r));
    const auto y1 = static_cast<std::size_t>(std::ceil(c.cy + c.r));
    const auto x0 = static_cast<std::size_t>(std::floor(c.cx - c.r));
    const auto x1 = static_cast<std::size_t>(std::ceil(c.cx + c.r));
    for (std::size_t y = y0; y <= y1; ++y)
        for (std::size_t x = x0; x <= x1; ++x)
            if (roi::in_disk(x, y, c.cx, c.cy, c.r)) ++n;
    return n;
}

// The scene's circles as a ready-made ROI set (masks not populated).
inline roi::RoiSet ground_truth_rois(const Scene& scene) {
    roi::RoiSet rois;
    for (std::size_t i = 0; i < scene.well_count(); ++i) rois.circles.push_back(scene.circle(i));
    rois.masks.assign(rois.circles.size(), {});
    rois.excluded.assign(rois.circles.size(), 0);
    rois.usable.assign(rois.circles.size(), 1);
    rois.params.r_min = scene.well_radius_px * 0.6;
    rois.params.r_max = scene.well_radius_px * 1.5;
    rois.params.min_center_dist = scene.pitch_px * 0.5;
    return rois;
}

struct Frame {
    cube::Hypercube raw;
    cube::ReferenceFrames refs;
};

// Renders the raw frame at elapsed time t. Noise is multiplicative per
// pixel/band and the draw sequence is fixed by (scene seed, t), so frames
// are reproducible one by one.
inline Frame gen_frame(const Scene& scene, double t_hours) {
    scene.validate();
    require(t_hours >= 0.0, ErrorKind::InvalidArgument, "frame time must be >= 0");

    // pixel classes: -1 glare, 0 background, i+1 well interior
    std::vector<int> cls(scene.lines * scene.samples, 0);
    for (std::size_t wi = 0; wi < scene.well_count(); ++wi) {
        const auto c = scene.circle(wi);
        const double reach = c.r * std::max(1.0, scene.glare_outer_frac);
        const auto y0 = static_cast<std::size_t>(std::floor(c.cy - reach));
        const auto y1 = static_cast<std::size_t>(std::ceil(c.cy + reach));
        const auto x0 = static_cast<std::size_t>(std::floor(c.cx - reach));
        const auto x1 = static_cast<std::size_t>(std::ceil(c.cx + reach));
        for (std::size_t y = y0; y <= y1; ++y)
            for (std::size_t x = x0; x <= x1; ++x) {
                if (detail::in_ring(x, y, c, scene))
                    cls[y * scene.samples + x] = -1;
                else if (roi::in_disk(x, y, c.cx, c.cy, c.r))
                    cls[y * scene.samples + x] = static_cast<int>(wi) + 1;
            }
    }

    std::vector<double> well_reflectance(scene.well_count());
    for (std::size_t wi = 0; wi < scene.well_count(); ++wi)
        well_reflectance[wi] = models::reflectance(t_hours, scene.wells[wi].model);

    Frame f;
    f.raw.lines = scene.lines;
    f.raw.samples = scene.samples;
    f.raw.bands = scene.bands;
    f.raw.wavelengths = cube::Hypercube::default_wavelengths(scene.bands);
    f.raw.data.assign(scene.lines * scene.samples * scene.bands, 0);
    f.raw.meta.extra["time_hours"] = fmt_double(t_hours);

    Rng rng(derive_seed(scene.seed, std::bit_cast<std::uint64_t>(t_hours)));
    for (std::size_t y = 0; y < scene.lines; ++y) {
        for (std::size_t x = 0; x < scene.samples; ++x) {
            const int k = cls[y * scene.samples + x];
            if (k < 0) {
                for (std::size_t band = 0; band < scene.bands; ++band)
                    f.raw.at(y, x, band) = kSaturated;
                continue;
            }
            const double rho =
                k == 0 ? scene.background_reflectance : well_reflectance[static_cast<std::size_t>(k - 1)];
            for (std::size_t band = 0; band < scene.bands; ++band) {
                const double noisy =
                    scene.noise_sigma > 0.0 ? rho * (1.0 + scene.noise_sigma * rng.normal()) : rho;
                const double counts = kDarkCounts + std::max(noisy, 0.0) * kGainCounts;
                f.raw.at(y, x, band) =
                    static_cast<std::uint16_t>(std::min(std::llround(counts), 65535LL));
            }
        }
    }

    auto flat_ref = [&](double counts) {
        cube::Hypercube ref;
        ref.lines = 1;
        ref.samples = scene.samples;
        ref.bands = scene.bands;
        ref.wavelengths = f.raw.wavelengths;
        ref.data.assign(scene.samples * scene.bands,
                        static_cast<std::uint16_t>(std::llround(counts)));
        return ref;
    };
    f.refs.white = flat_ref(kDarkCounts + kGainCounts);
    f.refs.dark = flat_ref(kDarkCounts);
    return f;
}

// Dense series straight from the model: I_i = R(t_i) * (1 + sigma * eta_i).
inline series::IntensitySeries gen_series(const models::AnyParams& params,
                                          const std::vector<double>& times, double sigma_rel,
                                          std::uint64_t seed, const std::string& sample_id = "synth") {
    require(sigma_rel >= 0.0, ErrorKind::InvalidArgument, "sigma must be >= 0");
    for (std::size_t i = 1; i < times.size(); ++i)
        require(times[i] > times[i - 1], ErrorKind::InvalidArgument,
                "series times must be strictly increasing");
    Rng rng(seed);
    series::IntensitySeries s;
    s.sample_id = sample_id;
    for (double t : times) {
        const double base = models::reflectance(t, params);
        const double noisy =
            sigma_rel > 0.0 ? base * (1.0 + sigma_rel * rng.normal()) : base;
        s.points.push_back({t, std::max(noisy, 0.0)});
    }
    s.validate();
    return s;
}

inline models::AnyParams model_from_section(const config::Section& sec) {
    const std::string kind = sec.get("model").value_or("exp");
    if (kind == "exp") {
        models::ExpParams p;
        p.a = sec.get_double("a");
        p.k_d = sec.get_double("k_d");
        p.c = sec.get_double("c", 0.0);
        p.validate();
        return p;
    }
    if (kind == "adv") {
        models::AdvParams p;
        p.m0 = sec.get_double("m0");
        p.k1 = sec.get_double("k1", 0.0);
        p.b = sec.get_double("b", 0.0);
        p.c = sec.get_double("c", 0.0);
        p.validate();
        return p;
    }
    raise(ErrorKind::Config, "section [" + sec.name + "]: unknown model '" + kind + "'");
}

// Scene files share the station config dialect: a [scene] section plus a
// [well default] and optional [well N] overrides.
inline Scene scene_from_config(const config::ConfigFile& cfg) {
    Scene scene;
    const auto& sec = cfg.require_section("scene");
    scene.lines = static_cast<std::size_t>(sec.get_int("lines", 200));
    scene.samples = static_cast<std::size_t>(sec.get_int("samples", 300));
    scene.rows = static_cast<std::size_t>(sec.get_int("rows", 4));
    scene.cols = static_cast<std::size_t>(sec.get_int("cols", 6));
    scene.well_radius_px = sec.get_double("well_radius_px", 15.0);
    scene.pitch_px = sec.get_double("pitch_px", 40.0);
    scene.bands = static_cast<std::size_t>(sec.get_int("bands", 32));
    scene.background_reflectance = sec.get_double("background_reflectance", 0.08);
    scene.glare_inner_frac = sec.get_double("glare_inner_frac", 0.95);
    scene.glare_outer_frac = sec.get_double("glare_outer_frac", 1.18);
    scene.noise_sigma = sec.get_double("noise_sigma", 0.04);
    scene.seed = static_cast<std::uint64_t>(sec.get_int("seed", 7));

    WellTruth def;
    if (const auto* d = cfg.find("well default")) {
        def.model = model_from_section(*d);
        def.label = d->get("label").value_or("PLA1");
        if (d->get("ph")) def.ph = d->get_double("ph");
        if (d->get("rho_area")) def.rho_area = d->get_double("rho_area");
    }
    scene.wells.assign(scene.well_count(), def);
    for (std::size_t i = 0; i < scene.well_count(); ++i) {
        if (const auto* w = cfg.find("well " + std::to_string(i))) {
            scene.wells[i].model = model_from_section(*w);
            scene.wells[i].label = w->get("label").value_or(def.label);
            if (w->get("ph")) scene.wells[i].ph = w->get_double("ph");
            if (w->get("rho_area")) scene.wells[i].rho_area = w->get_double("rho_area");
        }
    }
    scene.validate();
    return scene;
}

} // namespace hyperwell::synth
