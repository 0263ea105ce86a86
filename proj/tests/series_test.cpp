#include "hyperwell/series.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "hyperwell/synth.hpp"
#include "support.hpp"

using namespace hyperwell;
using namespace hyperwell::series;
using testsupport::TempDir;

namespace {

// small uniform plate: constant reflectance 0.5 across 224 bands
synth::Scene uniform_scene() {
    synth::Scene scene;
    scene.rows = 2;
    scene.cols = 2;
    scene.lines = 100;
    scene.samples = 100;
    scene.well_radius_px = 10.0;
    scene.pitch_px = 40.0;
    scene.bands = 224;
    scene.noise_sigma = 0.0;
    scene.glare_inner_frac = 0.0;
    synth::WellTruth w;
    w.model = models::ExpParams{0.25, 0.0, 0.25}; // constant 0.5
    scene.wells.assign(scene.well_count(), w);
    return scene;
}

} // namespace

TEST(ExtractIntensity, UniformHalfReflectanceOver224Bands) {
    const synth::Scene scene = uniform_scene();
    const auto frame = synth::gen_frame(scene, 0.0);
    const auto cal = cube::flat_field(frame.raw, frame.refs);
    const auto rois = roi::build_masks(synth::ground_truth_rois(scene), frame.raw);
    const auto result = extract_intensity(cal, rois);
    ASSERT_EQ(result.readings.size(), 4u);
    for (const auto& r : result.readings) EXPECT_DOUBLE_EQ(r.intensity, 112.0);
    EXPECT_TRUE(result.warnings.empty());
}

TEST(ExtractIntensity, InvariantToMaskErosionOnUniformWells) {
    const synth::Scene scene = uniform_scene();
    const auto frame = synth::gen_frame(scene, 0.0);
    const auto cal = cube::flat_field(frame.raw, frame.refs);
    auto rois = roi::build_masks(synth::ground_truth_rois(scene), frame.raw);
    const double full = extract_intensity(cal, rois).readings[0].intensity;

    Rng rng(31);
    for (auto& mask : rois.masks) {
        // keep a random ~half of the pixels
        std::vector<std::uint32_t> kept;
        for (auto pix : mask)
            if (rng.uniform() < 0.5) kept.push_back(pix);
        if (kept.empty()) kept.push_back(mask.front());
        mask = std::move(kept);
    }
    for (const auto& r : extract_intensity(cal, rois).readings)
        EXPECT_DOUBLE_EQ(r.intensity, full);
}

TEST(ExtractIntensity, TracksModelHalfLifeThroughThePipeline) {
    synth::Scene scene;
    scene.rows = 2;
    scene.cols = 3;
    scene.lines = 140;
    scene.samples = 180;
    scene.well_radius_px = 12.0;
    scene.pitch_px = 44.0;
    scene.bands = 32;
    scene.noise_sigma = 0.0;
    synth::WellTruth w;
    w.model = models::ExpParams{0.8, std::log(2.0), 0.1}; // halves every hour
    scene.wells.assign(scene.well_count(), w);

    auto intensity_at = [&](double t) {
        const auto frame = synth::gen_frame(scene, t);
        const auto cal = cube::flat_field(frame.raw, frame.refs);
        const auto rois = roi::build_masks(synth::ground_truth_rois(scene), frame.raw);
        return extract_intensity(cal, rois).readings[0].intensity;
    };
    const double baseline = 0.1 * static_cast<double>(scene.bands);
    const double i0 = intensity_at(0.0);
    const double i1 = intensity_at(1.0);
    EXPECT_NEAR((i1 - baseline) / (i0 - baseline), 0.5, 1e-3);
}

TEST(ExtractIntensity, UnusableWellsAreReportedNotFatal) {
    const synth::Scene scene = uniform_scene();
    const auto frame = synth::gen_frame(scene, 0.0);
    const auto cal = cube::flat_field(frame.raw, frame.refs);
    auto rois = roi::build_masks(synth::ground_truth_rois(scene), frame.raw);
    rois.masks[1].clear();
    rois.usable[1] = 0;
    const auto result = extract_intensity(cal, rois);
    EXPECT_EQ(result.readings.size(), 3u);
    ASSERT_EQ(result.warnings.size(), 1u);
    EXPECT_NE(result.warnings[0].find("well_01"), std::string::npos);

    for (auto& m : rois.masks) m.clear();
    for (auto& u : rois.usable) u = 0;
    EXPECT_THROW(extract_intensity(cal, rois), Error);
}

TEST(SeriesStore, AppendAndMonotonicity) {
    TempDir dir("store");
    auto store = SeriesStore::open(dir / "series.csv");
    store.append({{"well_00", 0, 10.0}}, 0.0);
    EXPECT_EQ(store.at("well_00").points.size(), 1u);
    store.append({{"well_00", 0, 9.0}}, 1.0);
    try {
        store.append({{"well_00", 0, 8.5}}, 0.5);
        FAIL() << "expected rejection of non-monotone time";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::InvalidArgument);
        EXPECT_NE(std::string(e.what()).find("t=1"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("t=0.5"), std::string::npos);
    }
}

TEST(SeriesStore, PersistsAndRoundTrips) {
    TempDir dir("store_rt");
    const auto csv = dir / "series.csv";
    {
        auto store = SeriesStore::open(csv);
        store.set_meta("well_00", {"PLA1", 12.3, 2.63});
        Rng rng(32);
        double t = 0.0;
        for (int i = 0; i < 33; ++i) {
            store.append({{"well_00", 0, 100.0 * std::exp(-0.17 * t) + rng.uniform()},
                          {"well_01", 1, 90.0 * std::exp(-0.21 * t)}},
                         t);
            t += 0.7;
        }
    }
    auto back = SeriesStore::open(csv);
    EXPECT_EQ(back.size(), 2u);
    EXPECT_EQ(back.at("well_00").points.size(), 33u);
    EXPECT_EQ(back.at("well_01").points.size(), 33u);
    EXPECT_EQ(back.at("well_00").meta.label, "PLA1");
    ASSERT_TRUE(back.at("well_00").meta.rho_area.has_value());
    EXPECT_DOUBLE_EQ(*back.at("well_00").meta.rho_area, 2.63);

    // save -> load -> save is byte-stable (lossless well past 12 digits)
    const std::string first = testsupport::read_file(csv);
    back.save();
    EXPECT_EQ(testsupport::read_file(csv), first);
}

TEST(ReplicateStats, KnownValues) {
    const auto zero = replicate_stats({10.0, 10.0, 10.0});
    EXPECT_DOUBLE_EQ(zero.std_dev, 0.0);
    EXPECT_DOUBLE_EQ(zero.ci95_half_width, 0.0);

    const auto textbook = replicate_stats({1.0, 2.0, 3.0});
    EXPECT_DOUBLE_EQ(textbook.mean, 2.0);
    EXPECT_DOUBLE_EQ(textbook.std_dev, 1.0);
    EXPECT_DOUBLE_EQ(textbook.ci95_half_width, 2.0);

    // half-life replicates with std exactly 21 min -> 42-minute margin
    const auto run = replicate_stats({79.0, 100.0, 121.0});
    EXPECT_DOUBLE_EQ(run.std_dev, 21.0);
    EXPECT_DOUBLE_EQ(run.ci95_half_width, 42.0);

    EXPECT_THROW(replicate_stats({1.0}), Error);
}

TEST(ReplicateStats, CiIsTwiceStd) {
    Rng rng(33);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> v;
        const int n = 2 + static_cast<int>(rng.next_u64() % 10);
        for (int i = 0; i < n; ++i) v.push_back(rng.uniform(0.0, 50.0));
        const auto s = replicate_stats(v);
        EXPECT_DOUBLE_EQ(s.ci95_half_width, 2.0 * s.std_dev);
    }
}

TEST(RhoArea, AdvisoryWindow) {
    SeriesMeta ok{"PLA1", std::nullopt, 2.63};
    EXPECT_FALSE(rho_area_warning(ok).has_value());
    SeriesMeta low{"PLA1", std::nullopt, 1.2};
    ASSERT_TRUE(rho_area_warning(low).has_value());
    SeriesMeta unset{"PLA1", std::nullopt, std::nullopt};
    EXPECT_FALSE(rho_area_warning(unset).has_value());
}
