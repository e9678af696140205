#pragma once

// Scanpath overlays: numbered filled circles joined by lines, prediction
// and ground truth in distinct colors, final fixation ringed. Plain
// rasterization onto the 8-bit image, written back as lossless PPM by the
// caller.

#include <cmath>
#include <string>

#include "scanshare/data.hpp"
#include "scanshare/image.hpp"

namespace scanshare {

struct Rgb {
    unsigned char r = 0, g = 0, b = 0;
};

struct OverlayStyle {
    Rgb prediction{60, 110, 230};
    Rgb ground_truth{150, 95, 40};
    Rgb final_ring{0, 0, 0};
    Rgb digit{255, 255, 255};
    int radius = 4;
};

// Pixel whose center is nearest the normalized fixation.
inline std::pair<int, int> fixation_to_pixel(const Fixation& f, int width, int height) {
    const int x = std::clamp(static_cast<int>(std::lround(f.x * width - 0.5)), 0, width - 1);
    const int y = std::clamp(static_cast<int>(std::lround(f.y * height - 0.5)), 0, height - 1);
    return {x, y};
}

namespace detail {

inline void draw_line(ImageU8& img, int x0, int y0, int x1, int y1, Rgb c) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
        img.set(x0, y0, c.r, c.g, c.b);
        if (x0 == x1 && y0 == y1) break;
        const int e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x0 += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y0 += sy;
        }
    }
}

inline void fill_disc(ImageU8& img, int cx, int cy, int r, Rgb c) {
    for (int y = cy - r; y <= cy + r; ++y)
        for (int x = cx - r; x <= cx + r; ++x)
            if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) img.set(x, y, c.r, c.g, c.b);
}

inline void draw_ring(ImageU8& img, int cx, int cy, int r_in, int r_out, Rgb c) {
    for (int y = cy - r_out; y <= cy + r_out; ++y)
        for (int x = cx - r_out; x <= cx + r_out; ++x) {
            const int d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
            if (d2 <= r_out * r_out && d2 > r_in * r_in) img.set(x, y, c.r, c.g, c.b);
        }
}

// 3x5 digit glyphs, one bit per pixel, row-major top to bottom.
inline const unsigned short* digit_glyphs() {
    static const unsigned short glyphs[10] = {
        0b111101101101111,  // 0
        0b010110010010111,  // 1
        0b111001111100111,  // 2
        0b111001111001111,  // 3
        0b101101111001001,  // 4
        0b111100111001111,  // 5
        0b111100111101111,  // 6
        0b111001001001001,  // 7
        0b111101111101111,  // 8
        0b111101111001111,  // 9
    };
    return glyphs;
}

inline void draw_number(ImageU8& img, int x, int y, int value, Rgb c) {
    std::string digits = std::to_string(value);
    for (char ch : digits) {
        const unsigned short glyph = digit_glyphs()[ch - '0'];
        for (int row = 0; row < 5; ++row)
            for (int col = 0; col < 3; ++col)
                if (glyph & (1 << (14 - (row * 3 + col)))) img.set(x + col, y + row, c.r, c.g, c.b);
        x += 4;
    }
}

inline void draw_scanpath(ImageU8& img, const Scanpath& path, Rgb color, Rgb final_ring, Rgb digit, int radius) {
    std::pair<int, int> prev{0, 0};
    for (std::size_t i = 0; i < path.fixations.size(); ++i) {
        const auto [x, y] = fixation_to_pixel(path.fixations[i], img.w, img.h);
        if (i > 0) draw_line(img, prev.first, prev.second, x, y, color);
        prev = {x, y};
    }
    for (std::size_t i = 0; i < path.fixations.size(); ++i) {
        const auto [x, y] = fixation_to_pixel(path.fixations[i], img.w, img.h);
        fill_disc(img, x, y, radius, color);
        if (i + 1 == path.fixations.size()) draw_ring(img, x, y, radius, radius + 2, final_ring);
        draw_number(img, x + radius + 2, y - radius, static_cast<int>(i + 1), digit);
    }
}

}  // namespace detail

// Prediction over ground truth (when given) on a copy of the scene image.
inline ImageU8 render_overlay(const ImageSample& sample, const Scanpath& prediction, const Scanpath* ground_truth,
                              const OverlayStyle& style = {}) {
    ImageU8 img = tensor_to_image(sample.pixels);
    if (ground_truth)
        detail::draw_scanpath(img, *ground_truth, style.ground_truth, style.final_ring, style.digit, style.radius);
    detail::draw_scanpath(img, prediction, style.prediction, style.final_ring, style.digit, style.radius);
    return img;
}

}  // namespace scanshare
