#pragma once

// Pixel-space containers and binary image I/O.
//
// ImageTensor holds floats in [-1, 1] (8-bit u maps via u/127.5 - 1); the
// all-zeros tensor is the "empty" input image used by tasks without a visual
// input. MaskImage is binary at pixel resolution (1 = generate).
//
// Files: images are binary PPM (P6, maxval 255), masks are PGM (P5). Latents
// travel as little-endian float32 blobs behind a 16-byte header.

#include <array>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "unidiff/core.hpp"

namespace unidiff {

struct ImageTensor {
    int height = 0;
    int width = 0;
    static constexpr int channels = 3;
    std::vector<float> v;  // [y][x][c] row-major

    ImageTensor() = default;
    ImageTensor(int h, int w, float fill = 0.0f)
        : height(h), width(w), v(static_cast<size_t>(h) * w * channels, fill) {}

    float& at(int y, int x, int c) { return v[(static_cast<size_t>(y) * width + x) * channels + c]; }
    float at(int y, int x, int c) const { return v[(static_cast<size_t>(y) * width + x) * channels + c]; }
    size_t size() const { return v.size(); }

    bool finite_in_range(float slack = 1e-6f) const {
        for (float x : v)
            if (!std::isfinite(x) || std::abs(x) > 1.0f + slack) return false;
        return true;
    }
};

struct MaskImage {
    int height = 0;
    int width = 0;
    std::vector<uint8_t> v;  // {0,1}

    MaskImage() = default;
    MaskImage(int h, int w, uint8_t fill = 0)
        : height(h), width(w), v(static_cast<size_t>(h) * w, fill) {}

    uint8_t& at(int y, int x) { return v[static_cast<size_t>(y) * width + x]; }
    uint8_t at(int y, int x) const { return v[static_cast<size_t>(y) * width + x]; }
};

inline float u8_to_unit(uint8_t u) { return static_cast<float>(u) / 127.5f - 1.0f; }
inline uint8_t unit_to_u8(float x) {
    const float u = (x + 1.0f) * 127.5f;
    const int q = static_cast<int>(std::lround(u));
    return static_cast<uint8_t>(std::clamp(q, 0, 255));
}

// ---- PPM / PGM -------------------------------------------------------------

inline void write_ppm(const std::string& path, const ImageTensor& img) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot write image: " + path);
    f << "P6\n" << img.width << " " << img.height << "\n255\n";
    std::vector<uint8_t> row(static_cast<size_t>(img.width) * 3);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) row[static_cast<size_t>(x) * 3 + c] = unit_to_u8(img.at(y, x, c));
        f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
}

namespace detail {
inline int pnm_token(std::istream& in) {
    // skips whitespace and '#' comments
    int c = in.get();
    while (c == '#' || std::isspace(c)) {
        if (c == '#')
            while (c != '\n' && c != EOF) c = in.get();
        c = in.get();
    }
    int val = 0;
    bool any = false;
    while (c >= '0' && c <= '9') {
        val = val * 10 + (c - '0');
        any = true;
        c = in.get();
    }
    if (!any) throw ConfigError("malformed PNM header");
    return val;
}
}  // namespace detail

inline ImageTensor read_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open image: " + path);
    char m0 = 0, m1 = 0;
    f.get(m0);
    f.get(m1);
    if (m0 != 'P' || m1 != '6') throw ConfigError("not a P6 PPM: " + path);
    const int w = detail::pnm_token(f);
    const int h = detail::pnm_token(f);
    const int maxval = detail::pnm_token(f);
    if (maxval != 255) throw ConfigError("unsupported PPM maxval in " + path);
    ImageTensor img(h, w);
    std::vector<uint8_t> buf(static_cast<size_t>(w) * h * 3);
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!f) throw ConfigError("truncated PPM: " + path);
    for (size_t i = 0; i < buf.size(); ++i) img.v[i] = u8_to_unit(buf[i]);
    return img;
}

inline void write_pgm(const std::string& path, const MaskImage& m) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot write mask: " + path);
    f << "P5\n" << m.width << " " << m.height << "\n255\n";
    std::vector<uint8_t> row(static_cast<size_t>(m.width));
    for (int y = 0; y < m.height; ++y) {
        for (int x = 0; x < m.width; ++x) row[static_cast<size_t>(x)] = m.at(y, x) ? 255 : 0;
        f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
}

inline MaskImage read_pgm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open mask: " + path);
    char m0 = 0, m1 = 0;
    f.get(m0);
    f.get(m1);
    if (m0 != 'P' || m1 != '5') throw ConfigError("not a P5 PGM: " + path);
    const int w = detail::pnm_token(f);
    const int h = detail::pnm_token(f);
    const int maxval = detail::pnm_token(f);
    if (maxval != 255) throw ConfigError("unsupported PGM maxval in " + path);
    MaskImage m(h, w);
    std::vector<uint8_t> buf(static_cast<size_t>(w) * h);
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!f) throw ConfigError("truncated PGM: " + path);
    for (size_t i = 0; i < buf.size(); ++i) m.v[i] = buf[i] >= 128 ? 1 : 0;
    return m;
}

}  // namespace unidiff
