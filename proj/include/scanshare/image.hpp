#pragma once

// 8-bit RGB images with PPM (P6) / PGM (P5) codecs. PPM holds the scene
// pixels, PGM the integer segmentation sidecar. Both are lossless for
// 8-bit data, which keeps dataset round trips byte-exact.

#include <cctype>
#include <fstream>
#include <string>
#include <vector>

#include "scanshare/common.hpp"
#include "scanshare/tensor.hpp"

namespace scanshare {

struct ImageU8 {
    int w = 0, h = 0;
    std::vector<unsigned char> rgb;  // 3 * w * h, row-major, interleaved

    ImageU8() = default;
    ImageU8(int w_, int h_) : w(w_), h(h_), rgb(static_cast<std::size_t>(3) * w_ * h_, 0) {}

    unsigned char& at(int x, int y, int c) { return rgb[(static_cast<std::size_t>(y) * w + x) * 3 + c]; }
    unsigned char at(int x, int y, int c) const { return rgb[(static_cast<std::size_t>(y) * w + x) * 3 + c]; }

    void set(int x, int y, unsigned char r, unsigned char g, unsigned char b) {
        if (x < 0 || x >= w || y < 0 || y >= h) return;
        at(x, y, 0) = r;
        at(x, y, 1) = g;
        at(x, y, 2) = b;
    }
};

namespace detail {

inline int read_pnm_int(std::istream& in) {
    int c = in.get();
    while (c != EOF && (std::isspace(c) || c == '#')) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        }
        c = in.get();
    }
    if (c == EOF || !std::isdigit(c)) throw FormatError("malformed PNM header");
    int v = 0;
    while (c != EOF && std::isdigit(c)) {
        v = v * 10 + (c - '0');
        c = in.get();
    }
    return v;
}

}  // namespace detail

inline void write_ppm(const std::string& path, const ImageU8& img) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IOError("cannot write image: " + path);
    out << "P6\n" << img.w << " " << img.h << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
    if (!out) throw IOError("short write: " + path);
}

inline ImageU8 read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IOError("cannot open image: " + path);
    char m0 = 0, m1 = 0;
    in.get(m0);
    in.get(m1);
    if (m0 != 'P' || m1 != '6') throw FormatError("not a P6 PPM: " + path);
    const int w = detail::read_pnm_int(in);
    const int h = detail::read_pnm_int(in);
    const int maxval = detail::read_pnm_int(in);
    if (maxval != 255) throw FormatError("unsupported PPM maxval in " + path);
    ImageU8 img(w, h);
    in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.rgb.size())) throw FormatError("truncated PPM: " + path);
    return img;
}

inline void write_pgm(const std::string& path, int w, int h, const std::vector<unsigned char>& gray) {
    if (gray.size() != static_cast<std::size_t>(w) * h) throw DimensionError("write_pgm: size mismatch");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IOError("cannot write image: " + path);
    out << "P5\n" << w << " " << h << "\n255\n";
    out.write(reinterpret_cast<const char*>(gray.data()), static_cast<std::streamsize>(gray.size()));
    if (!out) throw IOError("short write: " + path);
}

inline std::vector<unsigned char> read_pgm(const std::string& path, int& w, int& h) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IOError("cannot open image: " + path);
    char m0 = 0, m1 = 0;
    in.get(m0);
    in.get(m1);
    if (m0 != 'P' || m1 != '5') throw FormatError("not a P5 PGM: " + path);
    w = detail::read_pnm_int(in);
    h = detail::read_pnm_int(in);
    const int maxval = detail::read_pnm_int(in);
    if (maxval != 255) throw FormatError("unsupported PGM maxval in " + path);
    std::vector<unsigned char> gray(static_cast<std::size_t>(w) * h);
    in.read(reinterpret_cast<char*>(gray.data()), static_cast<std::streamsize>(gray.size()));
    if (in.gcount() != static_cast<std::streamsize>(gray.size())) throw FormatError("truncated PGM: " + path);
    return gray;
}

// [3,H,W] float tensor in [0,1] from 8-bit pixels and back. Scene pixels are
// always 8-bit quantized, so these conversions are exact inverses.
inline Tensor<float> image_to_tensor(const ImageU8& img) {
    Tensor<float> t({3, img.h, img.w});
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < 3; ++c) t(c, y, x) = static_cast<float>(img.at(x, y, c)) / 255.0f;
    return t;
}

inline ImageU8 tensor_to_image(const Tensor<float>& t) {
    if (t.ndim() != 3 || t.dim(0) != 3) throw DimensionError("tensor_to_image: expected [3,H,W], got " + shape_str(t.shape()));
    ImageU8 img(t.dim(2), t.dim(1));
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < 3; ++c) {
                float v = t(c, y, x) * 255.0f + 0.5f;
                img.at(x, y, c) = static_cast<unsigned char>(std::max(0.0f, std::min(255.0f, v)));
            }
    return img;
}

}  // namespace scanshare
