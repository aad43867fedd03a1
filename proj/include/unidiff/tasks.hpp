#pragma once

// Per-task sample construction and exact programmatic verification.
//
// Input conventions (fixed across training and inference):
//   t2i      prompt "<t2i> ..."; V empty (zero tensor); M all ones
//   inpaint  V = target with a grid-cell rectangle zeroed; M = ones there
//   outpaint V = target with everything outside a kept rectangle zeroed;
//            M = ones outside the kept rectangle
//   edit     prompt "<ie> ..."; V = pre-edit render; O = post-edit; M all ones
//   depth/pose/seg   V = scene render; O = task visualization; M all ones
//   layout   V = solid colored blocks at object cells; M all ones
//   id       prompt "<t2i> <p> <p> <p> <p> ..."; external = glyph crop;
//            V empty; O = glyph composited at the slot cell
//
// The guided in/outpainting prompt reuses "<t2i>"; the unguided variant uses
// the empty prompt (all <pad>).

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "unidiff/core.hpp"
#include "unidiff/image.hpp"
#include "unidiff/scene.hpp"
#include "unidiff/vocab.hpp"

namespace unidiff::world {

enum class TaskKind : int {
    T2I = 0, Inpaint = 1, Outpaint = 2, Edit = 3, Depth = 4, Pose = 5, Seg = 6, Layout = 7, Id = 8
};
inline constexpr int kNumTaskKinds = 9;

inline const char* task_kind_name(TaskKind k) {
    static const char* n[] = {"t2i", "inpaint", "outpaint", "edit", "depth", "pose", "seg", "layout", "id"};
    return n[static_cast<int>(k)];
}
inline TaskKind task_kind_from_name(const std::string& s) {
    for (int i = 0; i < kNumTaskKinds; ++i)
        if (s == task_kind_name(static_cast<TaskKind>(i))) return static_cast<TaskKind>(i);
    throw ConfigError("unknown task kind: " + s);
}

// rectangle of whole grid cells, inclusive bounds
struct CellRegion {
    int r0 = 0, c0 = 0, r1 = 0, c1 = 0;

    bool valid() const {
        return r0 >= 0 && c0 >= 0 && r1 >= r0 && c1 >= c0 && r1 < kGrid && c1 < kGrid;
    }
    bool contains_cell(int r, int c) const { return r >= r0 && r <= r1 && c >= c0 && c <= c1; }
    int pixel_area() const { return (r1 - r0 + 1) * (c1 - c0 + 1) * kCell * kCell; }
    bool full_canvas() const { return r0 == 0 && c0 == 0 && r1 == kGrid - 1 && c1 == kGrid - 1; }
};

enum class EditVerb : int { Add = 0, Remove = 1, Recolor = 2, Move = 3 };

// Corner cells are the only 'add'/'move' destinations so the quadrant phrase
// in the instruction pins the target cell exactly.
inline std::pair<int, int> corner_cell(int corner) {
    static const int cells[4][2] = {{0, 0}, {0, kGrid - 1}, {kGrid - 1, 0}, {kGrid - 1, kGrid - 1}};
    return {cells[corner & 3][0], cells[corner & 3][1]};
}

struct EditOp {
    EditVerb verb = EditVerb::Recolor;
    Shape ref_shape = Shape::Circle;   // remove/recolor/move: unique referent
    Color new_color = Color::Green;    // recolor
    Shape add_shape = Shape::Circle;   // add
    Color add_color = Color::Red;      // add
    bool add_large = true;             // add
    int corner = 0;                    // add/move destination
};

struct TaskSample {
    TaskKind kind = TaskKind::T2I;
    std::string prompt;
    ImageTensor input_image;   // V
    MaskImage input_mask;      // M
    ImageTensor target_image;  // O
    std::optional<ImageTensor> external;  // C

    // oracle-side ground truth for verification
    SceneSpec scene;      // scene of the target image
    SceneSpec pre_scene;  // edit only: scene of the input image
    std::optional<EditOp> edit_op;
    std::optional<CellRegion> region;  // in/outpaint generate-or-keep rectangle
    int glyph_id = -1;
    int slot_row = -1, slot_col = -1;
    std::optional<Shape> seg_target;  // nullopt = background
    Color seg_color = Color::Green;
    std::vector<Color> block_colors;  // layout: per-object block color
};

// ---- constructors --------------------------------------------------------------

inline TaskSample make_t2i(const SceneSpec& scene) {
    TaskSample s;
    s.kind = TaskKind::T2I;
    s.scene = scene;
    s.prompt = "<t2i> " + describe(scene);
    s.input_image = ImageTensor(kCanvas, kCanvas, 0.0f);  // empty input
    s.input_mask = MaskImage(kCanvas, kCanvas, 1);
    s.target_image = render(scene);
    return s;
}

namespace detail {
inline void zero_region(ImageTensor& img, const CellRegion& cells, bool inside) {
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const bool in = cells.contains_cell(y / kCell, x / kCell);
            if (in == inside)
                for (int c = 0; c < 3; ++c) img.at(y, x, c) = 0.0f;
        }
}
inline MaskImage region_mask(const CellRegion& cells, bool ones_inside) {
    MaskImage m(kCanvas, kCanvas, 0);
    for (int y = 0; y < kCanvas; ++y)
        for (int x = 0; x < kCanvas; ++x) {
            const bool in = cells.contains_cell(y / kCell, x / kCell);
            m.at(y, x) = (in == ones_inside) ? 1 : 0;
        }
    return m;
}
}  // namespace detail

inline TaskSample make_inpaint(const SceneSpec& scene, const CellRegion& region, bool guided) {
    if (!region.valid()) throw ConfigError("make_inpaint: region outside canvas");
    TaskSample s;
    s.kind = TaskKind::Inpaint;
    s.scene = scene;
    s.region = region;
    s.prompt = guided ? "<t2i> " + describe(scene) : "";
    s.target_image = render(scene);
    s.input_image = s.target_image;
    detail::zero_region(s.input_image, region, /*inside=*/true);
    s.input_mask = detail::region_mask(region, /*ones_inside=*/true);
    return s;
}

inline TaskSample make_outpaint(const SceneSpec& scene, const CellRegion& kept, bool guided) {
    if (!kept.valid()) throw ConfigError("make_outpaint: kept region outside canvas");
    TaskSample s;
    s.kind = TaskKind::Outpaint;
    s.scene = scene;
    s.region = kept;
    s.prompt = guided ? "<t2i> " + describe(scene) : "";
    s.target_image = render(scene);
    s.input_image = s.target_image;
    detail::zero_region(s.input_image, kept, /*inside=*/false);
    s.input_mask = detail::region_mask(kept, /*ones_inside=*/false);
    return s;
}

// the unique object with the given shape, or error
inline size_t unique_referent(const SceneSpec& scene, Shape shape) {
    size_t found = scene.objects.size();
    for (size_t i = 0; i < scene.objects.size(); ++i) {
        if (scene.objects[i].shape == shape) {
            if (found != scene.objects.size())
                throw ConfigError(std::string("ambiguous referent: ") + shape_word(shape));
            found = i;
        }
    }
    if (found == scene.objects.size())
        throw ConfigError(std::string("missing referent: ") + shape_word(shape));
    return found;
}

inline SceneSpec apply_edit(const SceneSpec& scene, const EditOp& op) {
    SceneSpec out = scene;
    switch (op.verb) {
        case EditVerb::Add: {
            const auto [r, c] = corner_cell(op.corner);
            for (const auto& o : out.objects)
                if (o.row == r && o.col == c) throw ConfigError("add: destination cell occupied");
            out.objects.push_back({op.add_shape, op.add_color, r, c, op.add_large});
            break;
        }
        case EditVerb::Remove: {
            const size_t i = unique_referent(out, op.ref_shape);
            out.objects.erase(out.objects.begin() + static_cast<long>(i));
            break;
        }
        case EditVerb::Recolor: {
            const size_t i = unique_referent(out, op.ref_shape);
            out.objects[i].color = op.new_color;
            break;
        }
        case EditVerb::Move: {
            const size_t i = unique_referent(out, op.ref_shape);
            const auto [r, c] = corner_cell(op.corner);
            for (size_t j = 0; j < out.objects.size(); ++j)
                if (j != i && out.objects[j].row == r && out.objects[j].col == c)
                    throw ConfigError("move: destination cell occupied");
            out.objects[i].row = r;
            out.objects[i].col = c;
            break;
        }
    }
    return out;
}

inline std::string edit_instruction(const EditOp& op) {
    switch (op.verb) {
        case EditVerb::Add: {
            const auto [r, c] = corner_cell(op.corner);
            return std::string("add a ") + color_word(op.add_color) + " " + shape_word(op.add_shape) +
                   " to the " + quadrant_phrase(r, c);
        }
        case EditVerb::Remove:
            return std::string("remove the ") + shape_word(op.ref_shape);
        case EditVerb::Recolor:
            return std::string("recolor the ") + shape_word(op.ref_shape) + " to " + color_word(op.new_color);
        case EditVerb::Move: {
            const auto [r, c] = corner_cell(op.corner);
            return std::string("move the ") + shape_word(op.ref_shape) + " to the " + quadrant_phrase(r, c);
        }
    }
    return "";
}

inline TaskSample make_edit(const SceneSpec& scene, const EditOp& op) {
    TaskSample s;
    s.kind = TaskKind::Edit;
    s.pre_scene = scene;
    s.scene = apply_edit(scene, op);
    s.edit_op = op;
    s.prompt = "<ie> " + edit_instruction(op);
    s.input_image = render(scene);
    s.input_mask = MaskImage(kCanvas, kCanvas, 1);  // blank M: all regions editable
    s.target_image = render(s.scene);
    return s;
}

// depth visualization level in [-1,1]: lower rows and large objects are brighter
inline float depth_level(int row, bool large) {
    const float v = 0.30f + 0.16f * static_cast<float>(row) + (large ? 0.09f : 0.0f);
    return 2.0f * v - 1.0f;
}

inline TaskSample make_depth(const SceneSpec& scene) {
    TaskSample s;
    s.kind = TaskKind::Depth;
    s.scene = scene;
    s.prompt = "<depth>";
    s.input_image = render(scene);
    s.input_mask = MaskImage(kCanvas, kCanvas, 1);
    s.target_image = ImageTensor(kCanvas, kCanvas, -1.0f);
    for (const auto& o : scene.objects) {
        const float g = depth_level(o.row, o.large);
        const auto& st = stencil(o.shape, o.large);
        const int y0 = o.row * kCell, x0 = o.col * kCell;
        for (int y = 0; y < kCell; ++y)
            for (int x = 0; x < kCell; ++x)
                if (st[static_cast<size_t>(y * kCell + x)])
                    for (int c = 0; c < 3; ++c) s.target_image.at(y0 + y, x0 + x, c) = g;
    }
    return s;
}

inline TaskSample make_pose(const SceneSpec& scene) {
    TaskSample s;
    s.kind = TaskKind::Pose;
    s.scene = scene;
    s.prompt = "<pose>";
    s.input_image = render(scene);
    s.input_mask = MaskImage(kCanvas, kCanvas, 1);
    s.target_image = ImageTensor(kCanvas, kCanvas, -1.0f);
    for (const auto& o : scene.objects) {
        const int cy = o.row * kCell + kCell / 2, cx = o.col * kCell + kCell / 2;
        // 2px-thick plus marker
        for (int d = -4; d <= 4; ++d)
            for (int t = -1; t <= 0; ++t) {
                for (int c = 0; c < 3; ++c) {
                    s.target_image.at(cy + d, cx + t, c) = 1.0f;
                    s.target_image.at(cy + t, cx + d, c) = 1.0f;
                }
            }
    }
    return s;
}

inline TaskSample make_seg(const SceneSpec& scene, std::optional<Shape> target, Color color) {
    TaskSample s;
    s.kind = TaskKind::Seg;
    s.scene = scene;
    s.seg_target = target;
    s.seg_color = color;
    const std::string target_word = target ? shape_word(*target) : "background";
    s.prompt = std::string("<seg> ") + target_word + " : " + color_word(color);
    s.input_image = render(scene);
    s.input_mask = MaskImage(kCanvas, kCanvas, 1);
    s.target_image = s.input_image;
    const auto rgb = palette_rgb(color);
    if (target) {
        const size_t i = unique_referent(scene, *target);
        const auto& o = scene.objects[i];
        const auto& st = stencil(o.shape, o.large);
        const int y0 = o.row * kCell, x0 = o.col * kCell;
        for (int y = 0; y < kCell; ++y)
            for (int x = 0; x < kCell; ++x)
                if (st[static_cast<size_t>(y * kCell + x)])
                    for (int c = 0; c < 3; ++c) s.target_image.at(y0 + y, x0 + x, c) = rgb[static_cast<size_t>(c)];
    } else {
        // background: recolor every pixel not covered by an object stencil
        std::vector<bool> covered(static_cast<size_t>(kCanvas) * kCanvas, false);
        for (const auto& o : scene.objects) {
            const auto& st = stencil(o.shape, o.large);
            const int y0 = o.row * kCell, x0 = o.col * kCell;
            for (int y = 0; y < kCell; ++y)
                for (int x = 0; x < kCell; ++x)
                    if (st[static_cast<size_t>(y * kCell + x)])
                        covered[static_cast<size_t>((y0 + y) * kCanvas + x0 + x)] = true;
        }
        for (int y = 0; y < kCanvas; ++y)
            for (int x = 0; x < kCanvas; ++x)
                if (!covered[static_cast<size_t>(y * kCanvas + x)])
                    for (int c = 0; c < 3; ++c) s.target_image.at(y, x, c) = rgb[static_cast<size_t>(c)];
    }
    return s;
}

inline const std::array<Color, 3>& layout_block_palette() {
    static const std::array<Color, 3> p = {Color::Blue, Color::Green, Color::Yellow};
    return p;
}

inline TaskSample make_layout(const SceneSpec& scene) {
    if (scene.objects.empty() || scene.objects.size() > 3)
        throw ConfigError("make_layout: needs 1..3 objects");
    for (size_t i = 0; i < scene.objects.size(); ++i)
        for (size_t j = i + 1; j < scene.objects.size(); ++j)
            if (scene.objects[i].shape == scene.objects[j].shape)
                throw ConfigError("make_layout: shapes must be distinct");
    TaskSample s;
    s.kind = TaskKind::Layout;
    s.scene = scene;
    s.input_image = ImageTensor(kCanvas, kCanvas, kBackground);
    std::string clauses;
    for (size_t i = 0; i < scene.objects.size(); ++i) {
        const Color bc = layout_block_palette()[i];
        s.block_colors.push_back(bc);
        const auto rgb = palette_rgb(bc);
        const auto& o = scene.objects[i];
        for (int y = 0; y < kCell; ++y)
            for (int x = 0; x < kCell; ++x)
                for (int c = 0; c < 3; ++c)
                    s.input_image.at(o.row * kCell + y, o.col * kCell + x, c) = rgb[static_cast<size_t>(c)];
        clauses += std::string(" ") + shape_word(o.shape) + " in " + color_word(bc) + " block";
    }
    s.prompt = "<lg> " + describe(scene) + clauses;
    s.input_mask = MaskImage(kCanvas, kCanvas, 1);
    s.target_image = render(scene);
    return s;
}

inline TaskSample make_id(int glyph_id, int slot_row, int slot_col) {
    const auto& lib = glyph_library();
    if (glyph_id < 0 || glyph_id >= static_cast<int>(lib.size()))
        throw ConfigError("make_id: unknown glyph id " + std::to_string(glyph_id));
    if (slot_row < 0 || slot_row >= kGrid || slot_col < 0 || slot_col >= kGrid)
        throw ConfigError("make_id: slot outside grid");
    TaskSample s;
    s.kind = TaskKind::Id;
    s.glyph_id = glyph_id;
    s.slot_row = slot_row;
    s.slot_col = slot_col;
    s.external = lib[static_cast<size_t>(glyph_id)];
    s.prompt = "<t2i> <p> <p> <p> <p> in the " + quadrant_phrase(slot_row, slot_col);
    s.input_image = ImageTensor(kCanvas, kCanvas, 0.0f);  // empty input
    s.input_mask = MaskImage(kCanvas, kCanvas, 1);
    s.target_image = ImageTensor(kCanvas, kCanvas, -1.0f);
    for (int y = 0; y < kGlyphSize; ++y)
        for (int x = 0; x < kGlyphSize; ++x)
            for (int c = 0; c < 3; ++c)
                s.target_image.at(slot_row * kCell + y, slot_col * kCell + x, c) =
                    s.external->at(y, x, c);
    return s;
}

// ---- verification ---------------------------------------------------------------

struct VerifyThresholds {
    double match_score = 0.70;      // per-object stencil match
    double preservation_rmse = 0.08;  // edit / in/outpaint untouched region, [-1,1] units
    double id_correlation = 0.60;   // glyph NCC
    double pixel_agreement = 0.90;  // seg/depth/pose
    double pixel_tol = 0.25;        // per-pixel agreement band, [-1,1] units
};

struct VerificationReport {
    bool passed = false;
    bool presence_ok = true;
    bool color_ok = true;
    bool count_ok = true;
    bool position_ok = true;
    bool instruction_ok = true;   // edit
    bool region_ok = true;        // layout containment
    bool pixel_ok = true;         // seg/depth/pose agreement
    bool preservation_ok = true;  // edit, in/outpaint
    double preservation_rmse = 0.0;
    double pixel_agreement = 1.0;
    double pattern_correlation = 0.0;  // id NCC
};

namespace detail {

// classify a pixel: -1 = background, otherwise nearest palette color index
inline int classify_pixel(const ImageTensor& img, int y, int x) {
    double best = 0.0;
    int cls = -1;
    for (int c = 0; c < 3; ++c) {
        const double d = img.at(y, x, c) - kBackground;
        best += d * d;
    }
    for (int k = 0; k < kNumColors; ++k) {
        const auto rgb = palette_rgb(static_cast<Color>(k));
        double d2 = 0.0;
        for (int c = 0; c < 3; ++c) {
            const double d = img.at(y, x, c) - rgb[static_cast<size_t>(c)];
            d2 += d * d;
        }
        if (d2 < best) {
            best = d2;
            cls = k;
        }
    }
    return cls;
}

inline constexpr int kMinInkPixels = 20;  // below this a cell is considered empty

// IoU of the cell's color-classified pixel set against a stencil
inline double stencil_iou(const std::array<bool, kCell * kCell>& set, const std::array<bool, kCell * kCell>& st) {
    int inter = 0, uni = 0;
    for (size_t i = 0; i < set.size(); ++i) {
        inter += (set[i] && st[i]) ? 1 : 0;
        uni += (set[i] || st[i]) ? 1 : 0;
    }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// Detection of (shape, color) inside one grid cell. The cell's pixels of that
// color must (a) be numerous enough, (b) pick this shape as the best-IoU
// stencil among all shapes and sizes, and (c) reach the match threshold.
// Size is free: prompts never pin it.
inline double detect_object(const ImageTensor& img, int row, int col, Shape shape, Color color, double th) {
    std::array<bool, kCell * kCell> set{};
    int count = 0;
    const int y0 = row * kCell, x0 = col * kCell;
    for (int y = 0; y < kCell; ++y)
        for (int x = 0; x < kCell; ++x) {
            const bool on = classify_pixel(img, y0 + y, x0 + x) == static_cast<int>(color);
            set[static_cast<size_t>(y * kCell + x)] = on;
            count += on ? 1 : 0;
        }
    if (count < kMinInkPixels) return 0.0;
    double best = 0.0, best_for_shape = 0.0;
    Shape best_shape = shape;
    for (int si = 0; si < kNumShapes; ++si)
        for (int large = 0; large < 2; ++large) {
            const double s = stencil_iou(set, stencil(static_cast<Shape>(si), large == 1));
            if (s > best) {
                best = s;
                best_shape = static_cast<Shape>(si);
            }
            if (static_cast<Shape>(si) == shape) best_for_shape = std::max(best_for_shape, s);
        }
    if (best_shape != shape || best_for_shape < th) return 0.0;
    return best_for_shape;
}

// shape presence regardless of color
inline double detect_shape(const ImageTensor& img, int row, int col, Shape shape, double th) {
    double best = 0.0;
    for (int k = 0; k < kNumColors; ++k)
        best = std::max(best, detect_object(img, row, col, shape, static_cast<Color>(k), th));
    return best;
}

struct BestCell {
    int row = -1, col = -1;
    double score = 0.0;
};

inline BestCell best_cell_for(const ImageTensor& img, Shape shape, Color color, double th) {
    BestCell b;
    for (int r = 0; r < kGrid; ++r)
        for (int c = 0; c < kGrid; ++c) {
            const double s = detect_object(img, r, c, shape, color, th);
            if (s > b.score) {
                b = {r, c, s};
            }
        }
    return b;
}

inline double rmse_over(const ImageTensor& a, const ImageTensor& b, const std::vector<bool>& mask) {
    double acc = 0.0;
    size_t n = 0;
    for (int y = 0; y < a.height; ++y)
        for (int x = 0; x < a.width; ++x) {
            if (!mask[static_cast<size_t>(y * a.width + x)]) continue;
            for (int c = 0; c < 3; ++c) {
                const double d = a.at(y, x, c) - b.at(y, x, c);
                acc += d * d;
            }
            n += 3;
        }
    if (n == 0) return 0.0;
    return std::sqrt(acc / static_cast<double>(n));
}

inline double pixel_agreement(const ImageTensor& gen, const ImageTensor& oracle, double tol) {
    size_t ok = 0, n = 0;
    for (int y = 0; y < gen.height; ++y)
        for (int x = 0; x < gen.width; ++x) {
            double worst = 0.0;
            for (int c = 0; c < 3; ++c)
                worst = std::max(worst, static_cast<double>(std::abs(gen.at(y, x, c) - oracle.at(y, x, c))));
            ok += worst <= tol ? 1 : 0;
            ++n;
        }
    return static_cast<double>(ok) / static_cast<double>(n);
}

// scene-level compositional checks shared by t2i / in/outpaint
inline void check_scene(const ImageTensor& gen, const SceneSpec& scene, const VerifyThresholds& th,
                        VerificationReport& rep) {
    for (const auto& o : scene.objects) {
        bool shape_found = false;
        for (int r = 0; r < kGrid && !shape_found; ++r)
            for (int c = 0; c < kGrid && !shape_found; ++c)
                if (detect_shape(gen, r, c, o.shape, th.match_score) > 0.0) shape_found = true;
        if (!shape_found) rep.presence_ok = false;
        if (best_cell_for(gen, o.shape, o.color, th.match_score).score <= 0.0) rep.color_ok = false;
    }
    // exact count per (shape,color) group
    for (size_t i = 0; i < scene.objects.size(); ++i) {
        const auto& o = scene.objects[i];
        bool first = true;
        int expected = 0;
        for (size_t j = 0; j < scene.objects.size(); ++j) {
            if (scene.objects[j].shape == o.shape && scene.objects[j].color == o.color) {
                if (j < i) first = false;
                ++expected;
            }
        }
        if (!first) continue;  // group already counted
        int found = 0;
        for (int r = 0; r < kGrid; ++r)
            for (int c = 0; c < kGrid; ++c)
                if (detect_object(gen, r, c, o.shape, o.color, th.match_score) > 0.0) ++found;
        if (found != expected) rep.count_ok = false;
    }
    // relation for two distinct objects
    if (scene.objects.size() == 2 &&
        (scene.objects[0].shape != scene.objects[1].shape || scene.objects[0].color != scene.objects[1].color)) {
        const auto b0 = best_cell_for(gen, scene.objects[0].shape, scene.objects[0].color, th.match_score);
        const auto b1 = best_cell_for(gen, scene.objects[1].shape, scene.objects[1].color, th.match_score);
        if (b0.score <= 0.0 || b1.score <= 0.0) {
            rep.position_ok = false;
        } else {
            SceneObject g0 = scene.objects[0], g1 = scene.objects[1];
            g0.row = b0.row;
            g0.col = b0.col;
            g1.row = b1.row;
            g1.col = b1.col;
            if ((g0.row == g1.row && g0.col == g1.col) ||
                std::string(relation_word(g0, g1)) != relation_word(scene.objects[0], scene.objects[1]))
                rep.position_ok = false;
        }
    }
}

}  // namespace detail

inline VerificationReport verify(const TaskSample& sample, const ImageTensor& generated,
                                 const VerifyThresholds& th = {}) {
    if (generated.height != sample.target_image.height || generated.width != sample.target_image.width)
        throw ConfigError("verify: generated image dims differ from target");
    VerificationReport rep;
    switch (sample.kind) {
        case TaskKind::T2I:
        case TaskKind::Layout:
            detail::check_scene(generated, sample.scene, th, rep);
            if (sample.kind == TaskKind::Layout) {
                for (size_t i = 0; i < sample.scene.objects.size(); ++i) {
                    const auto& o = sample.scene.objects[i];
                    if (detail::detect_object(generated, o.row, o.col, o.shape, o.color, th.match_score) <= 0.0)
                        rep.region_ok = false;
                }
            }
            break;
        case TaskKind::Inpaint:
        case TaskKind::Outpaint: {
            detail::check_scene(generated, sample.scene, th, rep);
            // visible (M = 0) pixels must be preserved
            std::vector<bool> keep(static_cast<size_t>(kCanvas) * kCanvas);
            for (int y = 0; y < kCanvas; ++y)
                for (int x = 0; x < kCanvas; ++x)
                    keep[static_cast<size_t>(y * kCanvas + x)] = sample.input_mask.at(y, x) == 0;
            rep.preservation_rmse = detail::rmse_over(generated, sample.target_image, keep);
            rep.preservation_ok = rep.preservation_rmse <= th.preservation_rmse;
            break;
        }
        case TaskKind::Edit: {
            const ImageTensor pre = render(sample.pre_scene);
            const ImageTensor post = sample.target_image;
            // instruction satisfied: post objects present at their exact cells,
            // vanished pre-objects gone from their old cells
            for (const auto& o : sample.scene.objects)
                if (detail::detect_object(generated, o.row, o.col, o.shape, o.color, th.match_score) <= 0.0)
                    rep.instruction_ok = false;
            for (const auto& o : sample.pre_scene.objects) {
                bool survives = false;
                for (const auto& p : sample.scene.objects)
                    if (p.row == o.row && p.col == o.col && p.shape == o.shape && p.color == o.color &&
                        p.large == o.large)
                        survives = true;
                if (!survives &&
                    detail::detect_object(generated, o.row, o.col, o.shape, o.color, th.match_score) > 0.0)
                    rep.instruction_ok = false;
            }
            // untouched region: pixels identical between pre and post renders
            std::vector<bool> untouched(static_cast<size_t>(kCanvas) * kCanvas);
            for (int y = 0; y < kCanvas; ++y)
                for (int x = 0; x < kCanvas; ++x) {
                    bool same = true;
                    for (int c = 0; c < 3; ++c)
                        if (pre.at(y, x, c) != post.at(y, x, c)) same = false;
                    untouched[static_cast<size_t>(y * kCanvas + x)] = same;
                }
            rep.preservation_rmse = detail::rmse_over(generated, post, untouched);
            rep.preservation_ok = rep.preservation_rmse <= th.preservation_rmse;
            break;
        }
        case TaskKind::Depth:
        case TaskKind::Pose:
        case TaskKind::Seg:
            rep.pixel_agreement = detail::pixel_agreement(generated, sample.target_image, th.pixel_tol);
            rep.pixel_ok = rep.pixel_agreement >= th.pixel_agreement;
            break;
        case TaskKind::Id: {
            const auto& lib = glyph_library();
            rep.pattern_correlation = glyph_max_ncc(generated, lib[static_cast<size_t>(sample.glyph_id)]);
            if (rep.pattern_correlation < th.id_correlation) rep.presence_ok = false;
            break;
        }
    }
    rep.passed = rep.presence_ok && rep.color_ok && rep.count_ok && rep.position_ok && rep.instruction_ok &&
                 rep.region_ok && rep.pixel_ok && rep.preservation_ok;
    return rep;
}

}  // namespace unidiff::world
