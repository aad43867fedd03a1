#include "doctest.h"

#include <map>
#include <set>

#include "unidiff/generators.hpp"
#include "unidiff/tasks.hpp"

using namespace unidiff;
using namespace unidiff::world;

namespace {

// frozen fixture: the large circle stencil, derived independently from the
// geometric definition (radius 6.5 around the cell center)
const char* kLargeCircle[16] = {
    "................",
    "................",
    ".....######.....",
    "...##########...",
    "...##########...",
    "..############..",
    "..############..",
    "..############..",
    "..############..",
    "..############..",
    "..############..",
    "...##########...",
    "...##########...",
    ".....######.....",
    "................",
    "................",
};

bool images_equal(const ImageTensor& a, const ImageTensor& b) {
    if (a.v.size() != b.v.size()) return false;
    for (size_t i = 0; i < a.v.size(); ++i)
        if (a.v[i] != b.v[i]) return false;
    return true;
}

}  // namespace

TEST_CASE("render: empty scene is all background") {
    const ImageTensor img = render(SceneSpec{});
    for (float v : img.v) CHECK(v == kBackground);
}

TEST_CASE("render: red circle matches the stencil fixture at its cell") {
    SceneSpec sc;
    sc.objects.push_back({Shape::Circle, Color::Red, 1, 2, true});
    const ImageTensor img = render(sc);
    const auto red = palette_rgb(Color::Red);
    for (int y = 0; y < kCanvas; ++y)
        for (int x = 0; x < kCanvas; ++x) {
            const bool in_cell = y / kCell == 1 && x / kCell == 2;
            const bool ink = in_cell && kLargeCircle[y % kCell][x % kCell] == '#';
            for (int c = 0; c < 3; ++c)
                CHECK(img.at(y, x, c) == (ink ? red[static_cast<size_t>(c)] : kBackground));
        }
}

TEST_CASE("render is injective over all 1024 single-object scenes") {
    std::set<std::vector<float>> seen;
    int n = 0;
    for (int si = 0; si < kNumShapes; ++si)
        for (int ci = 0; ci < kNumColors; ++ci)
            for (int cell = 0; cell < kGrid * kGrid; ++cell)
                for (int large = 0; large < 2; ++large) {
                    SceneSpec sc;
                    sc.objects.push_back({static_cast<Shape>(si), static_cast<Color>(ci), cell / kGrid,
                                          cell % kGrid, large == 1});
                    seen.insert(render(sc).v);
                    ++n;
                }
    CHECK(n == 1024);
    CHECK(seen.size() == 1024);
}

TEST_CASE("render rejects overlapping objects") {
    SceneSpec sc;
    sc.objects.push_back({Shape::Circle, Color::Red, 0, 0, true});
    sc.objects.push_back({Shape::Square, Color::Blue, 0, 0, true});
    CHECK_THROWS_AS(render(sc), ConfigError);
}

TEST_CASE("describe templates") {
    SceneSpec one;
    one.objects.push_back({Shape::Circle, Color::Red, 1, 1, true});
    CHECK(describe(one) == "a red circle");

    SceneSpec pair;
    pair.objects.push_back({Shape::Circle, Color::Red, 1, 0, true});
    pair.objects.push_back({Shape::Square, Color::Blue, 1, 3, false});
    CHECK(describe(pair) == "a red circle left of a blue square");

    SceneSpec count;
    count.objects.push_back({Shape::Triangle, Color::Yellow, 0, 0, true});
    count.objects.push_back({Shape::Triangle, Color::Yellow, 2, 2, false});
    CHECK(describe(count) == "two yellow triangle");
}

TEST_CASE("t2i construction follows the input conventions") {
    SceneSpec sc;
    sc.objects.push_back({Shape::Cross, Color::Cyan, 3, 0, false});
    const TaskSample s = make_t2i(sc);
    for (float v : s.input_image.v) CHECK(v == 0.0f);
    for (uint8_t v : s.input_mask.v) CHECK(v == 1);
    CHECK(s.prompt.rfind("<t2i> ", 0) == 0);
    CHECK(images_equal(s.target_image, render(sc)));
}

TEST_CASE("inpaint region semantics") {
    SceneSpec sc;
    sc.objects.push_back({Shape::Square, Color::Green, 0, 0, true});
    const CellRegion region{2, 2, 3, 3};  // no object pixels inside
    const TaskSample s = make_inpaint(sc, region, true);
    // mask pixel-sum equals region area exactly
    long sum = 0;
    for (uint8_t v : s.input_mask.v) sum += v;
    CHECK(sum == region.pixel_area());
    // V equals O outside the mask
    for (int y = 0; y < kCanvas; ++y)
        for (int x = 0; x < kCanvas; ++x)
            if (!s.input_mask.at(y, x))
                for (int c = 0; c < 3; ++c) CHECK(s.input_image.at(y, x, c) == s.target_image.at(y, x, c));
    // zeroed inside
    for (int y = 32; y < 64; ++y)
        for (int x = 32; x < 64; ++x)
            for (int c = 0; c < 3; ++c) CHECK(s.input_image.at(y, x, c) == 0.0f);
}

TEST_CASE("full-canvas inpaint degenerates to guided t2i") {
    SceneSpec sc;
    sc.objects.push_back({Shape::Circle, Color::White, 2, 2, true});
    const TaskSample in = make_inpaint(sc, {0, 0, 3, 3}, true);
    const TaskSample t2i = make_t2i(sc);
    CHECK(in.prompt == t2i.prompt);
    CHECK(images_equal(in.input_image, t2i.input_image));
    CHECK(images_equal(in.target_image, t2i.target_image));
    for (size_t i = 0; i < in.input_mask.v.size(); ++i) CHECK(in.input_mask.v[i] == t2i.input_mask.v[i]);
}

TEST_CASE("outpaint keeps only the kept block visible") {
    SceneSpec sc;
    sc.objects.push_back({Shape::Triangle, Color::Magenta, 0, 0, true});
    const CellRegion kept{0, 0, 1, 1};
    const TaskSample s = make_outpaint(sc, kept, false);
    CHECK(s.prompt.empty());
    long mask_sum = 0;
    for (uint8_t v : s.input_mask.v) mask_sum += v;
    CHECK(mask_sum == kCanvas * kCanvas - kept.pixel_area());
    for (int y = 0; y < kCanvas; ++y)
        for (int x = 0; x < kCanvas; ++x) {
            const bool in_kept = kept.contains_cell(y / kCell, x / kCell);
            CHECK(s.input_mask.at(y, x) == (in_kept ? 0 : 1));
            if (!in_kept)
                for (int c = 0; c < 3; ++c) CHECK(s.input_image.at(y, x, c) == 0.0f);
        }
}

TEST_CASE("edit: recolor touches exactly the stencil pixels") {
    SceneSpec sc;
    sc.objects.push_back({Shape::Circle, Color::Red, 1, 1, true});
    sc.objects.push_back({Shape::Square, Color::Blue, 2, 3, false});
    EditOp op;
    op.verb = EditVerb::Recolor;
    op.ref_shape = Shape::Circle;
    op.new_color = Color::Green;
    const TaskSample s = make_edit(sc, op);
    CHECK(s.prompt == "<ie> recolor the circle to green");
    const auto& st = stencil(Shape::Circle, true);
    for (int y = 0; y < kCanvas; ++y)
        for (int x = 0; x < kCanvas; ++x) {
            const bool in_cell = y / kCell == 1 && x / kCell == 1;
            const bool ink = in_cell && st[static_cast<size_t>((y % kCell) * kCell + x % kCell)];
            bool differs = false;
            for (int c = 0; c < 3; ++c)
                if (s.input_image.at(y, x, c) != s.target_image.at(y, x, c)) differs = true;
            CHECK(differs == ink);
        }
}

TEST_CASE("edit: remove and identity recolor") {
    SceneSpec sc;
    sc.objects.push_back({Shape::Square, Color::Yellow, 0, 2, true});
    EditOp rm;
    rm.verb = EditVerb::Remove;
    rm.ref_shape = Shape::Square;
    const TaskSample s = make_edit(sc, rm);
    CHECK(s.prompt == "<ie> remove the square");
    CHECK(images_equal(s.target_image, render(SceneSpec{})));

    EditOp noop;
    noop.verb = EditVerb::Recolor;
    noop.ref_shape = Shape::Square;
    noop.new_color = Color::Yellow;
    const TaskSample s2 = make_edit(sc, noop);
    CHECK(images_equal(s2.input_image, s2.target_image));
}

TEST_CASE("edit: ambiguous referent is rejected") {
    SceneSpec sc;
    sc.objects.push_back({Shape::Circle, Color::Red, 0, 0, true});
    sc.objects.push_back({Shape::Circle, Color::Blue, 1, 1, true});
    EditOp op;
    op.verb = EditVerb::Remove;
    op.ref_shape = Shape::Circle;
    CHECK_THROWS_AS(make_edit(sc, op), ConfigError);
}

TEST_CASE("depth: table ordering") {
    CHECK(depth_level(3, true) > depth_level(3, false));
    CHECK(depth_level(3, false) > depth_level(2, false));
    // all 8 levels distinct
    std::set<float> levels;
    for (int r = 0; r < kGrid; ++r)
        for (int l = 0; l < 2; ++l) levels.insert(depth_level(r, l == 1));
    CHECK(levels.size() == 8);

    const TaskSample empty = make_depth(SceneSpec{});
    for (float v : empty.target_image.v) CHECK(v == -1.0f);

    SceneSpec sc;
    sc.objects.push_back({Shape::Square, Color::Red, 3, 0, true});   // large, bottom row: brightest
    sc.objects.push_back({Shape::Circle, Color::Blue, 0, 2, false});
    const TaskSample s = make_depth(sc);
    const float bright = s.target_image.at(3 * kCell + 8, 0 * kCell + 8, 0);
    const float dim = s.target_image.at(0 * kCell + 8, 2 * kCell + 8, 0);
    CHECK(bright == depth_level(3, true));
    CHECK(dim == depth_level(0, false));
    CHECK(bright > dim);
}

TEST_CASE("pose: one marker per object at the cell center") {
    const TaskSample empty = make_pose(SceneSpec{});
    for (float v : empty.target_image.v) CHECK(v == -1.0f);

    SceneSpec sc;
    sc.objects.push_back({Shape::Cross, Color::Red, 1, 3, true});
    sc.objects.push_back({Shape::Circle, Color::Blue, 3, 0, false});
    const TaskSample s = make_pose(sc);
    long white = 0;
    for (float v : s.target_image.v) white += v == 1.0f ? 1 : 0;
    // marker ink: vertical 9x2 + horizontal 2x9 - overlap 2x2 = 32 px, 3 channels
    CHECK(white == 2 * 32 * 3);
    CHECK(s.target_image.at(1 * kCell + 8, 3 * kCell + 8, 0) == 1.0f);
}

TEST_CASE("seg: target stencil recolored, background complement") {
    SceneSpec sc;
    sc.objects.push_back({Shape::Circle, Color::Red, 1, 1, true});
    const TaskSample s = make_seg(sc, Shape::Circle, Color::Green);
    const auto green = palette_rgb(Color::Green);
    const auto& st = stencil(Shape::Circle, true);
    for (int y = 0; y < kCanvas; ++y)
        for (int x = 0; x < kCanvas; ++x) {
            const bool in_cell = y / kCell == 1 && x / kCell == 1;
            const bool ink = in_cell && st[static_cast<size_t>((y % kCell) * kCell + x % kCell)];
            if (ink)
                for (int c = 0; c < 3; ++c) CHECK(s.target_image.at(y, x, c) == green[static_cast<size_t>(c)]);
            else
                for (int c = 0; c < 3; ++c) CHECK(s.target_image.at(y, x, c) == s.input_image.at(y, x, c));
        }

    const TaskSample bg = make_seg(sc, std::nullopt, Color::Cyan);
    const auto cyan = palette_rgb(Color::Cyan);
    int cyan_px = 0;
    for (int y = 0; y < kCanvas; ++y)
        for (int x = 0; x < kCanvas; ++x)
            if (bg.target_image.at(y, x, 0) == cyan[0] && bg.target_image.at(y, x, 1) == cyan[1] &&
                bg.target_image.at(y, x, 2) == cyan[2])
                ++cyan_px;
    CHECK(cyan_px == kCanvas * kCanvas - 124);  // large circle ink = 124

    // recoloring to the object's own color is a no-op
    const TaskSample same = make_seg(sc, Shape::Circle, Color::Red);
    CHECK(images_equal(same.target_image, same.input_image));
}

TEST_CASE("layout: blocks at object cells, clauses per object") {
    SceneSpec sc;
    sc.objects.push_back({Shape::Circle, Color::Red, 0, 1, true});
    const TaskSample one = make_layout(sc);
    CHECK(one.prompt == "<lg> a red circle circle in blue block");

    sc.objects.push_back({Shape::Square, Color::White, 2, 2, false});
    const TaskSample two = make_layout(sc);
    const auto blue = palette_rgb(Color::Blue);
    const auto green = palette_rgb(Color::Green);
    for (int y = 0; y < kCell; ++y)
        for (int x = 0; x < kCell; ++x) {
            CHECK(two.input_image.at(0 * kCell + y, 1 * kCell + x, 2) == blue[2]);
            CHECK(two.input_image.at(2 * kCell + y, 2 * kCell + x, 1) == green[1]);
        }
    SceneSpec dup;
    dup.objects.push_back({Shape::Circle, Color::Red, 0, 0, true});
    dup.objects.push_back({Shape::Circle, Color::Blue, 1, 1, true});
    CHECK_THROWS_AS(make_layout(dup), ConfigError);
}

TEST_CASE("glyph library: 64 distinct tiles, pairwise NCC below 0.8") {
    const auto& lib = glyph_library();
    REQUIRE(lib.size() == kGlyphCount);
    double worst = -1.0;
    for (size_t i = 0; i < lib.size(); ++i)
        for (size_t j = i + 1; j < lib.size(); ++j) worst = std::max(worst, ncc(lib[i].v, lib[j].v));
    CHECK(worst < 0.8);
}

TEST_CASE("id sample: exact glyph at the slot, identical crops across slots") {
    const TaskSample a = make_id(7, 0, 0);
    const TaskSample b = make_id(7, 3, 3);
    REQUIRE(a.external.has_value());
    REQUIRE(b.external.has_value());
    CHECK(images_equal(*a.external, *b.external));
    const auto& lib = glyph_library();
    for (int y = 0; y < kGlyphSize; ++y)
        for (int x = 0; x < kGlyphSize; ++x)
            for (int c = 0; c < 3; ++c)
                CHECK(a.target_image.at(y, x, c) == lib[7].at(y, x, c));
    CHECK(a.prompt.rfind("<t2i> <p> <p> <p> <p> ", 0) == 0);
    CHECK_THROWS_AS(make_id(kGlyphCount, 0, 0), ConfigError);
}

TEST_CASE("verify: oracle targets pass for every kind") {
    Rng rng(123);
    for (int kind = 0; kind < kNumTaskKinds; ++kind)
        for (int rep = 0; rep < 10; ++rep) {
            const TaskSample s = sample_task(static_cast<TaskKind>(kind), rng);
            const VerificationReport rep_ = verify(s, s.target_image);
            CHECK_MESSAGE(rep_.passed, "kind=", task_kind_name(s.kind), " rep=", rep);
        }
}

TEST_CASE("verify: all-black fails presence for a nonempty scene") {
    SceneSpec sc;
    sc.objects.push_back({Shape::Circle, Color::Red, 1, 1, true});
    const TaskSample s = make_t2i(sc);
    const ImageTensor black(kCanvas, kCanvas, -1.0f);
    const VerificationReport r = verify(s, black);
    CHECK_FALSE(r.passed);
    CHECK_FALSE(r.presence_ok);
}

TEST_CASE("verify: wrong color fails color but not presence") {
    SceneSpec want, got;
    want.objects.push_back({Shape::Circle, Color::Red, 1, 1, true});
    got.objects.push_back({Shape::Circle, Color::Blue, 1, 1, true});
    const TaskSample s = make_t2i(want);
    const VerificationReport r = verify(s, render(got));
    CHECK(r.presence_ok);
    CHECK_FALSE(r.color_ok);
    CHECK_FALSE(r.passed);
}

TEST_CASE("verify: wrong glyph fails the correlation check") {
    const TaskSample s = make_id(3, 1, 1);
    const TaskSample other = make_id(42, 1, 1);
    const VerificationReport ok = verify(s, s.target_image);
    const VerificationReport bad = verify(s, other.target_image);
    CHECK(ok.passed);
    CHECK(ok.pattern_correlation >= 0.99);
    CHECK_FALSE(bad.passed);
}

TEST_CASE("constructors are pure under a fixed seed") {
    for (int kind = 0; kind < kNumTaskKinds; ++kind) {
        Rng a(555), b(555);
        const TaskSample s1 = sample_task(static_cast<TaskKind>(kind), a);
        const TaskSample s2 = sample_task(static_cast<TaskKind>(kind), b);
        CHECK(s1.prompt == s2.prompt);
        CHECK(images_equal(s1.input_image, s2.input_image));
        CHECK(images_equal(s1.target_image, s2.target_image));
    }
}

TEST_CASE("edit verify: rasterizer counterexample fails instruction check") {
    SceneSpec sc;
    sc.objects.push_back({Shape::Circle, Color::Red, 1, 1, true});
    EditOp op;
    op.verb = EditVerb::Recolor;
    op.ref_shape = Shape::Circle;
    op.new_color = Color::Green;
    const TaskSample s = make_edit(sc, op);
    // model that ignores the instruction and copies the input
    const VerificationReport copy = verify(s, s.input_image);
    CHECK_FALSE(copy.instruction_ok);
    CHECK(copy.preservation_rmse == doctest::Approx(0.0));
    // oracle edit passes with margin
    const VerificationReport ok = verify(s, s.target_image);
    CHECK(ok.passed);
}
