#pragma once

// Invertible pixel-space <-> latent-space codec.
//
// Default mode is an exact pixel-shuffle: each s x s x 3 pixel block becomes
// one latent cell with 3*s^2 channels, ordered block-row-major then channel
// (channel index = (dy*s + dx)*3 + c). encode/decode are exact inverses and
// preserve sum of squares. Mask resizing is area-average pooling, so partial
// coverage shows up as fractional cell values.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "unidiff/core.hpp"
#include "unidiff/image.hpp"

namespace unidiff::codec {

struct Latent {
    int h = 0;
    int w = 0;
    int c = 0;
    std::vector<float> v;  // [y][x][c] row-major

    Latent() = default;
    Latent(int h_, int w_, int c_, float fill = 0.0f)
        : h(h_), w(w_), c(c_), v(static_cast<size_t>(h_) * w_ * c_, fill) {}

    float& at(int y, int x, int ch) { return v[(static_cast<size_t>(y) * w + x) * c + ch]; }
    float at(int y, int x, int ch) const { return v[(static_cast<size_t>(y) * w + x) * c + ch]; }
    size_t size() const { return v.size(); }
};

struct LatentMask {
    int h = 0;
    int w = 0;
    std::vector<float> v;  // in [0,1]

    LatentMask() = default;
    LatentMask(int h_, int w_, float fill = 0.0f)
        : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, fill) {}

    float& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
    float at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
};

inline constexpr int kDownsample = 2;                          // s
inline constexpr int kLatentChannels = 3 * kDownsample * kDownsample;  // 12

inline Latent encode(const ImageTensor& img, int s = kDownsample) {
    if (img.height <= 0 || img.width <= 0 || img.height % s != 0 || img.width % s != 0)
        throw ConfigError("encode: image dims must be positive and divisible by " + std::to_string(s));
    const int h = img.height / s, w = img.width / s, c = 3 * s * s;
    Latent z(h, w, c);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int dy = 0; dy < s; ++dy)
                for (int dx = 0; dx < s; ++dx)
                    for (int ch = 0; ch < 3; ++ch)
                        z.at(y, x, (dy * s + dx) * 3 + ch) = img.at(y * s + dy, x * s + dx, ch);
    return z;
}

inline ImageTensor decode(const Latent& z, int s = kDownsample) {
    if (z.c != 3 * s * s)
        throw ConfigError("decode: latent has " + std::to_string(z.c) + " channels, expected " +
                          std::to_string(3 * s * s));
    ImageTensor img(z.h * s, z.w * s);
    for (int y = 0; y < z.h; ++y)
        for (int x = 0; x < z.w; ++x)
            for (int dy = 0; dy < s; ++dy)
                for (int dx = 0; dx < s; ++dx)
                    for (int ch = 0; ch < 3; ++ch)
                        img.at(y * s + dy, x * s + dx, ch) = z.at(y, x, (dy * s + dx) * 3 + ch);
    return img;
}

inline LatentMask resize_mask(const MaskImage& m, int h, int w) {
    if (h <= 0 || w <= 0 || m.height % h != 0 || m.width % w != 0)
        throw ConfigError("resize_mask: mask dims must be integer multiples of the target grid");
    const int by = m.height / h, bx = m.width / w;
    LatentMask out(h, w);
    const float inv = 1.0f / static_cast<float>(by * bx);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            int sum = 0;
            for (int dy = 0; dy < by; ++dy)
                for (int dx = 0; dx < bx; ++dx) sum += m.at(y * by + dy, x * bx + dx);
            out.at(y, x) = static_cast<float>(sum) * inv;
        }
    return out;
}

// ---- latent blob I/O ---------------------------------------------------------
// 16-byte header: magic "UDLT", then h, w, c as little-endian uint32, then
// h*w*c little-endian float32 values.

inline constexpr char kLatentMagic[4] = {'U', 'D', 'L', 'T'};

inline void write_latent(const std::string& path, const Latent& z) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot write latent: " + path);
    uint32_t hdr[3] = {static_cast<uint32_t>(z.h), static_cast<uint32_t>(z.w), static_cast<uint32_t>(z.c)};
    f.write(kLatentMagic, 4);
    f.write(reinterpret_cast<const char*>(hdr), 12);
    f.write(reinterpret_cast<const char*>(z.v.data()), static_cast<std::streamsize>(z.v.size() * 4));
}

inline Latent read_latent(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open latent: " + path);
    char magic[4];
    uint32_t hdr[3];
    f.read(magic, 4);
    f.read(reinterpret_cast<char*>(hdr), 12);
    if (!f || std::memcmp(magic, kLatentMagic, 4) != 0) throw ConfigError("bad latent header: " + path);
    Latent z(static_cast<int>(hdr[0]), static_cast<int>(hdr[1]), static_cast<int>(hdr[2]));
    f.read(reinterpret_cast<char*>(z.v.data()), static_cast<std::streamsize>(z.v.size() * 4));
    if (!f) throw ConfigError("truncated latent: " + path);
    return z;
}

}  // namespace unidiff::codec
