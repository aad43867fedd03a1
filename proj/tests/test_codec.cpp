#include "doctest.h"

#include <filesystem>
#include <random>

#include "unidiff/codec.hpp"

using namespace unidiff;
using namespace unidiff::codec;

namespace {

ImageTensor random_image(int h, int w, uint64_t seed) {
    Rng rng(seed);
    ImageTensor img(h, w);
    for (auto& x : img.v) x = static_cast<float>(rng.uniform()) * 2.0f - 1.0f;
    return img;
}

// independent area-average pooling oracle (naive loop over pixel blocks)
std::vector<double> pool_oracle(const MaskImage& m, int h, int w) {
    const int by = m.height / h, bx = m.width / w;
    std::vector<double> out(static_cast<size_t>(h) * w, 0.0);
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x)
            out[static_cast<size_t>(y / by) * w + x / bx] += m.at(y, x);
    for (auto& v : out) v /= static_cast<double>(by * bx);
    return out;
}

}  // namespace

TEST_CASE("encode shapes and zero preservation") {
    ImageTensor img(64, 64, 0.0f);
    const Latent z = encode(img);
    CHECK(z.h == 32);
    CHECK(z.w == 32);
    CHECK(z.c == 12);
    for (float v : z.v) CHECK(v == 0.0f);
}

TEST_CASE("encode is the documented rearrangement") {
    ImageTensor img(4, 4);
    for (size_t i = 0; i < img.v.size(); ++i) img.v[i] = static_cast<float>(i) / 64.0f;
    const Latent z = encode(img);
    // latent cell (0,0), channel (dy*2+dx)*3+c pulls pixel (dy, dx, c)
    for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx)
            for (int c = 0; c < 3; ++c) CHECK(z.at(0, 0, (dy * 2 + dx) * 3 + c) == img.at(dy, dx, c));
    CHECK(z.at(1, 1, 0) == img.at(2, 2, 0));
}

TEST_CASE("round trip is bit exact both ways") {
    const ImageTensor img = random_image(64, 64, 7);
    const Latent z = encode(img);
    const ImageTensor back = decode(z);
    REQUIRE(back.v.size() == img.v.size());
    for (size_t i = 0; i < img.v.size(); ++i) CHECK(back.v[i] == img.v[i]);

    // encode(decode(z)) = z for any valid latent
    Latent z2(8, 8, 12);
    Rng rng(9);
    for (auto& v : z2.v) v = static_cast<float>(rng.gaussian());
    const Latent z3 = encode(decode(z2));
    for (size_t i = 0; i < z2.v.size(); ++i) CHECK(z3.v[i] == z2.v[i]);
}

TEST_CASE("energy is preserved by encode") {
    const ImageTensor img = random_image(32, 32, 11);
    const Latent z = encode(img);
    double ei = 0, ez = 0;
    for (float v : img.v) ei += static_cast<double>(v) * v;
    for (float v : z.v) ez += static_cast<double>(v) * v;
    CHECK(ei == doctest::Approx(ez).epsilon(1e-12));
}

TEST_CASE("dimension errors are rejected") {
    CHECK_THROWS_AS(encode(ImageTensor(63, 64)), ConfigError);
    CHECK_THROWS_AS(encode(ImageTensor(64, 2), 4), ConfigError);
    Latent bad(4, 4, 8);
    CHECK_THROWS_AS(decode(bad), ConfigError);
}

TEST_CASE("resize_mask: all ones pools to all ones") {
    MaskImage m(64, 64, 1);
    const LatentMask lm = resize_mask(m, 32, 32);
    for (float v : lm.v) CHECK(v == 1.0f);
}

TEST_CASE("resize_mask: half plane") {
    MaskImage m(64, 64, 0);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 32; ++x) m.at(y, x) = 1;
    const LatentMask lm = resize_mask(m, 32, 32);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) CHECK(lm.at(y, x) == (x < 16 ? 1.0f : 0.0f));
}

TEST_CASE("resize_mask: hand-computed 2x2 -> 1x1 average") {
    MaskImage m(2, 2, 0);
    m.at(0, 0) = 1;
    const LatentMask lm = resize_mask(m, 1, 1);
    CHECK(lm.at(0, 0) == 0.25f);
}

TEST_CASE("resize_mask matches the naive pooling oracle") {
    Rng rng(23);
    for (int trial = 0; trial < 20; ++trial) {
        MaskImage m(64, 64, 0);
        for (auto& v : m.v) v = rng.uniform_int(2) ? 1 : 0;
        const LatentMask lm = resize_mask(m, 16, 16);
        const auto oracle = pool_oracle(m, 16, 16);
        for (size_t i = 0; i < oracle.size(); ++i)
            CHECK(lm.v[i] == doctest::Approx(oracle[i]).epsilon(1e-6));
    }
}

TEST_CASE("resize_mask is monotone") {
    Rng rng(31);
    for (int trial = 0; trial < 10; ++trial) {
        MaskImage a(32, 32, 0), b(32, 32, 0);
        for (size_t i = 0; i < a.v.size(); ++i) {
            a.v[i] = rng.uniform_int(2) ? 1 : 0;
            b.v[i] = a.v[i] || (rng.uniform_int(4) == 0);  // b >= a pixelwise
        }
        const LatentMask la = resize_mask(a, 8, 8);
        const LatentMask lb = resize_mask(b, 8, 8);
        for (size_t i = 0; i < la.v.size(); ++i) CHECK(la.v[i] <= lb.v[i]);
    }
}

TEST_CASE("resize_mask rejects non-integer ratios") {
    MaskImage m(10, 10, 1);
    CHECK_THROWS_AS(resize_mask(m, 3, 3), ConfigError);
}

TEST_CASE("latent blob round trip") {
    Rng rng(5);
    Latent z(4, 6, 12);
    for (auto& v : z.v) v = static_cast<float>(rng.gaussian());
    const auto path = std::filesystem::temp_directory_path() / "unidiff_test_latent.bin";
    write_latent(path.string(), z);
    const Latent back = read_latent(path.string());
    CHECK(back.h == z.h);
    CHECK(back.w == z.w);
    CHECK(back.c == z.c);
    for (size_t i = 0; i < z.v.size(); ++i) CHECK(back.v[i] == z.v[i]);
    std::filesystem::remove(path);
}

TEST_CASE("ppm/pgm round trip at 8-bit resolution") {
    const auto dir = std::filesystem::temp_directory_path();
    ImageTensor img(8, 8);
    for (size_t i = 0; i < img.v.size(); ++i) img.v[i] = u8_to_unit(static_cast<uint8_t>(i * 3 % 256));
    const auto p = (dir / "unidiff_test_img.ppm").string();
    write_ppm(p, img);
    const ImageTensor back = read_ppm(p);
    for (size_t i = 0; i < img.v.size(); ++i) CHECK(back.v[i] == doctest::Approx(img.v[i]).epsilon(1e-6));
    std::filesystem::remove(p);

    MaskImage m(8, 8, 0);
    for (int x = 0; x < 8; ++x) m.at(3, x) = 1;
    const auto q = (dir / "unidiff_test_mask.pgm").string();
    write_pgm(q, m);
    const MaskImage mb = read_pgm(q);
    for (size_t i = 0; i < m.v.size(); ++i) CHECK(mb.v[i] == m.v[i]);
    std::filesystem::remove(q);
}
