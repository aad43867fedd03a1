#pragma once

// Deterministic shapes world: a 4x4 grid of 16px cells on a 64x64 canvas,
// at most 3 objects, exact stencil rasterization, canonical text descriptions,
// and the glyph library for identity conditioning.
//
// Object "black" is (64,64,64) in 8-bit terms so that black objects stay
// distinct from the (0,0,0) background; every (shape,color,cell,size) then
// renders to a distinct image.

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "unidiff/core.hpp"
#include "unidiff/image.hpp"

namespace unidiff::world {

inline constexpr int kCanvas = 64;
inline constexpr int kGrid = 4;
inline constexpr int kCell = kCanvas / kGrid;  // 16

enum class Shape : int { Circle = 0, Square = 1, Triangle = 2, Cross = 3 };
inline constexpr int kNumShapes = 4;

enum class Color : int {
    Red = 0, Green = 1, Blue = 2, Yellow = 3, White = 4, Black = 5, Cyan = 6, Magenta = 7
};
inline constexpr int kNumColors = 8;

inline const char* shape_word(Shape s) {
    static const char* w[] = {"circle", "square", "triangle", "cross"};
    return w[static_cast<int>(s)];
}
inline const char* color_word(Color c) {
    static const char* w[] = {"red", "green", "blue", "yellow", "white", "black", "cyan", "magenta"};
    return w[static_cast<int>(c)];
}

// palette in unit space ([-1,1]); black objects sit at u8 64
inline std::array<float, 3> palette_rgb(Color c) {
    auto u = [](int r, int g, int b) {
        return std::array<float, 3>{u8_to_unit(static_cast<uint8_t>(r)), u8_to_unit(static_cast<uint8_t>(g)),
                                    u8_to_unit(static_cast<uint8_t>(b))};
    };
    switch (c) {
        case Color::Red: return u(255, 0, 0);
        case Color::Green: return u(0, 255, 0);
        case Color::Blue: return u(0, 0, 255);
        case Color::Yellow: return u(255, 255, 0);
        case Color::White: return u(255, 255, 255);
        case Color::Black: return u(64, 64, 64);
        case Color::Cyan: return u(0, 255, 255);
        case Color::Magenta: return u(255, 0, 255);
    }
    return {0, 0, 0};
}
inline constexpr float kBackground = -1.0f;  // u8 0

struct SceneObject {
    Shape shape = Shape::Circle;
    Color color = Color::Red;
    int row = 0;  // grid cell
    int col = 0;
    bool large = true;
};

struct SceneSpec {
    std::vector<SceneObject> objects;  // at most 3, one per cell

    bool valid() const {
        if (objects.size() > 3) return false;
        for (size_t i = 0; i < objects.size(); ++i) {
            const auto& o = objects[i];
            if (o.row < 0 || o.row >= kGrid || o.col < 0 || o.col >= kGrid) return false;
            for (size_t j = i + 1; j < objects.size(); ++j)
                if (objects[j].row == o.row && objects[j].col == o.col) return false;
        }
        return true;
    }
};

// ---- stencils ----------------------------------------------------------------

// 16x16 boolean stencil for a shape at a size, in cell-local coordinates.
inline const std::array<bool, kCell * kCell>& stencil(Shape s, bool large) {
    static const auto tables = [] {
        std::array<std::array<bool, kCell * kCell>, kNumShapes * 2> t{};
        for (int si = 0; si < kNumShapes; ++si) {
            for (int sz = 0; sz < 2; ++sz) {
                const bool lg = sz == 1;
                auto& m = t[static_cast<size_t>(si * 2 + sz)];
                const float cx = 7.5f, cy = 7.5f;
                for (int y = 0; y < kCell; ++y)
                    for (int x = 0; x < kCell; ++x) {
                        bool on = false;
                        const float dx = static_cast<float>(x) - cx;
                        const float dy = static_cast<float>(y) - cy;
                        switch (static_cast<Shape>(si)) {
                            case Shape::Circle: {
                                const float r = lg ? 6.5f : 4.5f;
                                on = dx * dx + dy * dy <= r * r;
                                break;
                            }
                            case Shape::Square: {
                                const int lo = lg ? 2 : 4, hi = lg ? 13 : 11;
                                on = x >= lo && x <= hi && y >= lo && y <= hi;
                                break;
                            }
                            case Shape::Triangle: {
                                // apex up; base at the bottom edge of the extent
                                const int top = lg ? 2 : 4, bot = lg ? 13 : 11;
                                if (y >= top && y <= bot) {
                                    const float frac = static_cast<float>(y - top) / static_cast<float>(bot - top);
                                    const float halfw = frac * (lg ? 6.0f : 4.0f);
                                    on = std::abs(dx) <= halfw + 0.5f;
                                }
                                break;
                            }
                            case Shape::Cross: {
                                const int lo = lg ? 2 : 4, hi = lg ? 13 : 11;
                                const int bar0 = lg ? 6 : 7, bar1 = lg ? 9 : 8;
                                const bool hbar = y >= bar0 && y <= bar1 && x >= lo && x <= hi;
                                const bool vbar = x >= bar0 && x <= bar1 && y >= lo && y <= hi;
                                on = hbar || vbar;
                                break;
                            }
                        }
                        m[static_cast<size_t>(y * kCell + x)] = on;
                    }
            }
        }
        return t;
    }();
    return tables[static_cast<size_t>(static_cast<int>(s) * 2 + (large ? 1 : 0))];
}

// ---- rasterizer ---------------------------------------------------------------

inline void paint_object(ImageTensor& img, const SceneObject& o) {
    const auto& st = stencil(o.shape, o.large);
    const auto rgb = palette_rgb(o.color);
    const int y0 = o.row * kCell, x0 = o.col * kCell;
    for (int y = 0; y < kCell; ++y)
        for (int x = 0; x < kCell; ++x)
            if (st[static_cast<size_t>(y * kCell + x)])
                for (int c = 0; c < 3; ++c) img.at(y0 + y, x0 + x, c) = rgb[static_cast<size_t>(c)];
}

inline ImageTensor render(const SceneSpec& scene) {
    if (!scene.valid()) throw ConfigError("render: invalid scene (overlap or out-of-grid)");
    ImageTensor img(kCanvas, kCanvas, kBackground);
    for (const auto& o : scene.objects) paint_object(img, o);
    return img;
}

// ---- canonical description -----------------------------------------------------

// Relation between two cells: horizontal wins when columns differ.
inline const char* relation_word(const SceneObject& a, const SceneObject& b) {
    if (a.col < b.col) return "left";
    if (a.col > b.col) return "right";
    return a.row < b.row ? "above" : "below";
}

inline std::string describe(const SceneSpec& scene) {
    const auto phrase = [](const SceneObject& o) {
        return std::string("a ") + color_word(o.color) + " " + shape_word(o.shape);
    };
    if (scene.objects.empty()) return "";
    if (scene.objects.size() == 1) return phrase(scene.objects[0]);
    // counting form: all objects identical in shape and color
    bool identical = true;
    for (size_t i = 1; i < scene.objects.size(); ++i)
        if (scene.objects[i].shape != scene.objects[0].shape || scene.objects[i].color != scene.objects[0].color)
            identical = false;
    if (identical) {
        const char* count = scene.objects.size() == 2 ? "two" : "three";
        return std::string(count) + " " + color_word(scene.objects[0].color) + " " +
               shape_word(scene.objects[0].shape);
    }
    if (scene.objects.size() == 2) {
        const auto& a = scene.objects[0];
        const auto& b = scene.objects[1];
        const char* rel = relation_word(a, b);
        std::string relphrase = (std::string(rel) == "left" || std::string(rel) == "right")
                                    ? std::string(rel) + " of"
                                    : std::string(rel);
        return phrase(a) + " " + relphrase + " " + phrase(b);
    }
    // three mixed objects: concatenated noun phrases (used by layout prompts)
    std::string s = phrase(scene.objects[0]);
    for (size_t i = 1; i < scene.objects.size(); ++i) s += " " + phrase(scene.objects[i]);
    return s;
}

// quadrant words for a cell, e.g. (0,3) -> "top right"
inline std::string quadrant_phrase(int row, int col) {
    return std::string(row < kGrid / 2 ? "top" : "bottom") + " " + (col < kGrid / 2 ? "left" : "right");
}

// ---- glyph library --------------------------------------------------------------

inline constexpr int kGlyphSize = 16;
inline constexpr int kGlyphCount = 64;

// Deterministic 16x16 colored patterns. Each glyph is a fixed random two-color
// blocky texture; the library is regenerated identically on every run.
inline const std::vector<ImageTensor>& glyph_library() {
    static const std::vector<ImageTensor> lib = [] {
        std::vector<ImageTensor> g;
        g.reserve(kGlyphCount);
        Rng rng(0x61D5u);
        for (int i = 0; i < kGlyphCount; ++i) {
            ImageTensor tile(kGlyphSize, kGlyphSize, kBackground);
            // two distinct foreground colors per glyph
            const auto pick = [&rng] {
                return std::array<float, 3>{static_cast<float>(rng.uniform()) * 1.6f - 0.6f,
                                            static_cast<float>(rng.uniform()) * 1.6f - 0.6f,
                                            static_cast<float>(rng.uniform()) * 1.6f - 0.6f};
            };
            const auto c1 = pick(), c2 = pick();
            // 4x4 super-pixels of 4px, each painted with c1, c2, or background
            for (int by = 0; by < 4; ++by)
                for (int bx = 0; bx < 4; ++bx) {
                    const uint64_t r = rng.uniform_int(3);
                    if (r == 2) continue;
                    const auto& col = r == 0 ? c1 : c2;
                    for (int y = 0; y < 4; ++y)
                        for (int x = 0; x < 4; ++x)
                            for (int c = 0; c < 3; ++c) tile.at(by * 4 + y, bx * 4 + x, c) = col[static_cast<size_t>(c)];
                }
            // stamp a distinguishing diagonal stripe keyed by the glyph index
            for (int y = 0; y < kGlyphSize; ++y) {
                const int x = (y + i) % kGlyphSize;
                tile.at(y, x, 0) = (i & 1) ? 0.9f : -0.9f;
                tile.at(y, x, 1) = (i & 2) ? 0.9f : -0.9f;
                tile.at(y, x, 2) = (i & 4) ? 0.9f : -0.9f;
            }
            g.push_back(std::move(tile));
        }
        return g;
    }();
    return lib;
}

// normalized cross-correlation between two equally sized patches, over all channels
inline double ncc(const std::vector<float>& a, const std::vector<float>& b) {
    const size_t n = a.size();
    double ma = 0, mb = 0;
    for (size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double num = 0, da = 0, db = 0;
    for (size_t i = 0; i < n; ++i) {
        const double xa = a[i] - ma, xb = b[i] - mb;
        num += xa * xb;
        da += xa * xa;
        db += xb * xb;
    }
    if (da <= 0 || db <= 0) return 0.0;
    return num / std::sqrt(da * db);
}

// max NCC of a glyph tile over every placement in the canvas
inline double glyph_max_ncc(const ImageTensor& canvas, const ImageTensor& glyph) {
    std::vector<float> patch(static_cast<size_t>(kGlyphSize) * kGlyphSize * 3);
    double best = -1.0;
    for (int y0 = 0; y0 + kGlyphSize <= canvas.height; ++y0)
        for (int x0 = 0; x0 + kGlyphSize <= canvas.width; ++x0) {
            size_t k = 0;
            for (int y = 0; y < kGlyphSize; ++y)
                for (int x = 0; x < kGlyphSize; ++x)
                    for (int c = 0; c < 3; ++c) patch[k++] = canvas.at(y0 + y, x0 + x, c);
            best = std::max(best, ncc(patch, glyph.v));
        }
    return best;
}

}  // namespace unidiff::world
