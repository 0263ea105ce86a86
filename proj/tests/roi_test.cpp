#include "hyperwell/roi.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "hyperwell/synth.hpp"

using namespace hyperwell;
using namespace hyperwell::roi;

namespace {

cube::GrayImage blank_image(std::size_t lines, std::size_t samples, double value = 0.3) {
    cube::GrayImage img;
    img.lines = lines;
    img.samples = samples;
    img.values.assign(lines * samples, value);
    img.valid.assign(lines * samples, 1);
    return img;
}

// Analytic fixture: hard-edged bright disks on a dark background.
cube::GrayImage disk_image(std::size_t lines, std::size_t samples,
                           const std::vector<Circle>& disks, double bg = 0.1, double fg = 0.9) {
    cube::GrayImage img = blank_image(lines, samples, bg);
    for (std::size_t y = 0; y < lines; ++y)
        for (std::size_t x = 0; x < samples; ++x)
            for (const auto& d : disks)
                if (in_disk(x, y, d.cx, d.cy, d.r)) img.values[y * samples + x] = fg;
    return img;
}

HoughParams loose_params() {
    HoughParams p;
    p.r_min = 10.0;
    p.r_max = 40.0;
    p.accumulator_threshold = 0.35;
    p.min_center_dist = 20.0;
    p.edge_threshold = 0.25;
    return p;
}

synth::Scene grid_scene() {
    synth::Scene scene;
    scene.wells.assign(scene.well_count(), synth::WellTruth{});
    return scene;
}

cube::GrayImage scene_gray(const synth::Scene& scene, double t) {
    const auto frame = synth::gen_frame(scene, t);
    return cube::project_gray(cube::flat_field(frame.raw, frame.refs));
}

} // namespace

TEST(DetectCircles, BlankImageYieldsEmptySet) {
    const auto img = blank_image(120, 120);
    const RoiSet rois = detect_circles(img, loose_params());
    EXPECT_TRUE(rois.circles.empty());
}

TEST(DetectCircles, SingleIdealDisk) {
    const auto img = disk_image(200, 200, {{100.0, 100.0, 20.0, -1}});
    const RoiSet rois = detect_circles(img, loose_params());
    ASSERT_EQ(rois.size(), 1u);
    EXPECT_NEAR(rois.circles[0].cx, 100.0, 2.0);
    EXPECT_NEAR(rois.circles[0].cy, 100.0, 2.0);
    EXPECT_NEAR(rois.circles[0].r, 20.0, 2.0);
    EXPECT_EQ(rois.circles[0].index, 0);
}

TEST(DetectCircles, SyntheticGridIsNumberedRowMajor) {
    const synth::Scene scene = grid_scene();
    const auto img = scene_gray(scene, 1.0);
    HoughParams p = loose_params();
    p.r_min = 8.0;
    p.r_max = 25.0;
    const RoiSet rois = detect_circles(img, p);
    ASSERT_EQ(rois.size(), scene.well_count());
    for (std::size_t i = 0; i < rois.size(); ++i) {
        const auto truth = scene.circle(i);
        EXPECT_EQ(rois.circles[i].index, truth.index);
        EXPECT_NEAR(rois.circles[i].cx, truth.cx, 2.0) << "well " << i;
        EXPECT_NEAR(rois.circles[i].cy, truth.cy, 2.0) << "well " << i;
    }
}

TEST(DetectCircles, DeterministicAcrossRuns) {
    const auto img = scene_gray(grid_scene(), 3.0);
    HoughParams p = loose_params();
    p.r_min = 8.0;
    p.r_max = 25.0;
    const RoiSet a = detect_circles(img, p);
    const RoiSet b = detect_circles(img, p);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a.circles[i].index, b.circles[i].index);
        EXPECT_DOUBLE_EQ(a.circles[i].cx, b.circles[i].cx);
        EXPECT_DOUBLE_EQ(a.circles[i].cy, b.circles[i].cy);
        EXPECT_DOUBLE_EQ(a.circles[i].r, b.circles[i].r);
    }
}

TEST(DetectCircles, OutputsNeverOverlap) {
    const auto img = scene_gray(grid_scene(), 0.5);
    HoughParams p = loose_params();
    p.r_min = 6.0;
    p.r_max = 30.0;
    p.accumulator_threshold = 0.15; // permissive on purpose
    const RoiSet rois = detect_circles(img, p);
    for (std::size_t i = 0; i < rois.size(); ++i)
        for (std::size_t j = i + 1; j < rois.size(); ++j) {
            const auto& a = rois.circles[i];
            const auto& b = rois.circles[j];
            EXPECT_GE(std::hypot(a.cx - b.cx, a.cy - b.cy), a.r + b.r);
        }
}

TEST(DetectCircles, TranslationEquivariance) {
    const std::vector<Circle> base = {{70.0, 80.0, 18.0, -1}, {150.0, 90.0, 18.0, -1}};
    std::vector<Circle> shifted = base;
    const double dx = 5.0, dy = 9.0;
    for (auto& c : shifted) {
        c.cx += dx;
        c.cy += dy;
    }
    const RoiSet a = detect_circles(disk_image(220, 230, base), loose_params());
    const RoiSet b = detect_circles(disk_image(220, 230, shifted), loose_params());
    ASSERT_EQ(a.size(), 2u);
    ASSERT_EQ(b.size(), 2u);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_NEAR(b.circles[i].cx - a.circles[i].cx, dx, 1.0);
        EXPECT_NEAR(b.circles[i].cy - a.circles[i].cy, dy, 1.0);
    }
}

TEST(DetectCircles, RejectsEmptyOrTooSmallImages) {
    cube::GrayImage empty;
    EXPECT_THROW(detect_circles(empty, loose_params()), Error);

    auto img = blank_image(30, 30);
    try {
        detect_circles(img, loose_params()); // r_max = 40 needs >= 80 px
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::InvalidArgument);
    }
}

TEST(AutoTune, FindsAllWellsWithLooseInit) {
    const synth::Scene scene = grid_scene();
    const auto img = scene_gray(scene, 2.0);
    HoughParams init = loose_params();
    init.r_min = 8.0;
    init.r_max = 25.0;
    const auto [rois, winning] = auto_tune(img, scene.well_count(), init);
    ASSERT_EQ(rois.size(), scene.well_count());
    for (std::size_t i = 0; i < rois.size(); ++i) {
        const auto truth = scene.circle(i);
        EXPECT_NEAR(rois.circles[i].cx, truth.cx, 2.0);
        EXPECT_NEAR(rois.circles[i].cy, truth.cy, 2.0);
    }
    // winning parameters reproduce the same set directly
    EXPECT_EQ(detect_circles(img, winning).size(), scene.well_count());
}

TEST(AutoTune, ImpossibleCountReportsBestAchieved) {
    const synth::Scene scene = grid_scene();
    const auto img = scene_gray(scene, 2.0);
    HoughParams init = loose_params();
    init.r_min = 8.0;
    init.r_max = 25.0;
    try {
        auto_tune(img, scene.well_count() + 1, init);
        FAIL() << "expected tuning failure";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::TuningFailure);
        EXPECT_NE(std::string(e.what()).find("24"), std::string::npos);
    }
}

TEST(AutoTune, RecoversFromRadiiOffByFortyPercent) {
    synth::Scene scene;
    scene.rows = 2;
    scene.cols = 3;
    scene.lines = 120;
    scene.samples = 160;
    scene.well_radius_px = 12.0;
    scene.pitch_px = 45.0;
    scene.bands = 8;
    scene.wells.assign(scene.well_count(), synth::WellTruth{});
    const auto img = scene_gray(scene, 1.0);

    HoughParams init = loose_params();
    init.r_min = 16.0; // true radius is 12
    init.r_max = 24.0;
    init.min_center_dist = 15.0;
    const auto [rois, winning] = auto_tune(img, 6, init);
    EXPECT_EQ(rois.size(), 6u);
    EXPECT_LT(winning.r_min, init.r_min);
}

TEST(BuildMasks, CleanSceneKeepsFullDisks) {
    synth::Scene scene = grid_scene();
    scene.glare_inner_frac = 0.0; // no ring
    scene.noise_sigma = 0.0;
    const auto frame = synth::gen_frame(scene, 1.0);
    const RoiSet rois = build_masks(synth::ground_truth_rois(scene), frame.raw);
    for (std::size_t i = 0; i < rois.size(); ++i) {
        EXPECT_EQ(rois.excluded[i], 0u);
        EXPECT_TRUE(rois.usable[i]);
        EXPECT_EQ(rois.masks[i].size(), synth::disk_pixel_count(scene, i));
    }
}

TEST(BuildMasks, GlareExclusionMatchesGeneratorGeometry) {
    const synth::Scene scene = grid_scene();
    const auto frame = synth::gen_frame(scene, 1.0);
    const RoiSet rois = build_masks(synth::ground_truth_rois(scene), frame.raw);
    for (std::size_t i = 0; i < rois.size(); ++i) {
        EXPECT_EQ(rois.excluded[i], synth::glare_overlap_count(scene, i)) << "well " << i;
        EXPECT_EQ(rois.masks[i].size() + rois.excluded[i], synth::disk_pixel_count(scene, i));
    }
}

TEST(BuildMasks, MaskPixelsAreInsideAndUnsaturated) {
    const synth::Scene scene = grid_scene();
    const auto frame = synth::gen_frame(scene, 0.0);
    const RoiSet rois = build_masks(synth::ground_truth_rois(scene), frame.raw);
    for (std::size_t ci = 0; ci < rois.size(); ++ci) {
        const Circle& c = rois.circles[ci];
        for (std::uint32_t pix : rois.masks[ci]) {
            const std::size_t y = pix / frame.raw.samples;
            const std::size_t x = pix % frame.raw.samples;
            EXPECT_TRUE(in_disk(x, y, c.cx, c.cy, c.r));
            for (std::size_t band = 0; band < frame.raw.bands; ++band)
                EXPECT_LT(frame.raw.at(y, x, band), 65535);
        }
    }
}

TEST(BuildMasks, SaturationLevelZeroFlagsEverythingUnusable) {
    const synth::Scene scene = grid_scene();
    const auto frame = synth::gen_frame(scene, 1.0);
    const RoiSet rois = build_masks(synth::ground_truth_rois(scene), frame.raw, 0);
    for (std::size_t i = 0; i < rois.size(); ++i) {
        EXPECT_FALSE(rois.usable[i]);
        EXPECT_TRUE(rois.masks[i].empty());
    }
}

TEST(RoiJson, RoundTripsCirclesAndParams) {
    const synth::Scene scene = grid_scene();
    const auto frame = synth::gen_frame(scene, 1.0);
    const RoiSet rois = build_masks(synth::ground_truth_rois(scene), frame.raw);
    const auto j = to_json(rois);
    const RoiSet back = roi_set_from_json(nlohmann::json::parse(j.dump()));
    ASSERT_EQ(back.size(), rois.size());
    for (std::size_t i = 0; i < rois.size(); ++i) {
        EXPECT_EQ(back.circles[i].index, rois.circles[i].index);
        EXPECT_DOUBLE_EQ(back.circles[i].cx, rois.circles[i].cx);
        EXPECT_DOUBLE_EQ(back.circles[i].r, rois.circles[i].r);
        EXPECT_EQ(back.excluded[i], rois.excluded[i]);
    }
    EXPECT_DOUBLE_EQ(back.params.r_min, rois.params.r_min);
}
