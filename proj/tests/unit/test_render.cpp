#include <doctest.h>

#include "scanshare/render.hpp"

using namespace scanshare;

TEST_CASE("fixations at quarter-grid cell centers map to exact pixels") {
    // A 64-wide image has a 16-cell heatmap grid; cell j's center lands on
    // pixel 4j + 2 ... 4j + 1.5 rounded.
    for (int j = 0; j < 16; ++j) {
        Fixation f{(j + 0.5) / 16.0, (j + 0.5) / 16.0};
        auto [x, y] = fixation_to_pixel(f, 64, 64);
        CHECK(x == 4 * j + 2);
        CHECK(y == 4 * j + 2);
    }
}

TEST_CASE("overlay paints prediction circles at fixation pixels") {
    ImageSample scene = generate_scene(77, 2, 2, 3, 64, 64);
    Scanpath pred;
    pred.image_id = scene.id;
    pred.task = TaskSpec::free_viewing();
    pred.fixations = {center_fixation(), Fixation{0.25, 0.25}};
    pred.terminated = true;

    OverlayStyle style;
    ImageU8 img = render_overlay(scene, pred, nullptr, style);
    for (const auto& f : pred.fixations) {
        auto [x, y] = fixation_to_pixel(f, 64, 64);
        CHECK(img.at(x, y, 0) == style.prediction.r);
        CHECK(img.at(x, y, 1) == style.prediction.g);
        CHECK(img.at(x, y, 2) == style.prediction.b);
    }

    SUBCASE("ground truth appears in its own color") {
        Scanpath gt = pred;
        gt.fixations = {center_fixation(), Fixation{0.8, 0.8}};
        ImageU8 both = render_overlay(scene, pred, &gt, style);
        auto [gx, gy] = fixation_to_pixel(gt.fixations[1], 64, 64);
        CHECK(both.at(gx, gy, 0) == style.ground_truth.r);
    }
    SUBCASE("rendering is deterministic") {
        ImageU8 again = render_overlay(scene, pred, nullptr, style);
        CHECK(again.rgb == img.rgb);
    }
    SUBCASE("border fixations draw without going out of range") {
        Scanpath edge = pred;
        edge.fixations = {Fixation{0.0, 0.0}, Fixation{1.0, 1.0}};
        ImageU8 e = render_overlay(scene, edge, nullptr, style);
        CHECK(e.w == 64);
    }
}
