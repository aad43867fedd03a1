#pragma once

// Seeded random construction of scenes and task samples. All draws come from
// the caller's Rng in a fixed order, so a seed fully determines the sample.

#include <vector>

#include "unidiff/core.hpp"
#include "unidiff/tasks.hpp"

namespace unidiff::world {

inline SceneObject random_object(Rng& rng, const std::vector<std::pair<int, int>>& taken) {
    SceneObject o;
    o.shape = static_cast<Shape>(rng.uniform_int(kNumShapes));
    o.color = static_cast<Color>(rng.uniform_int(kNumColors));
    o.large = rng.uniform_int(2) == 1;
    while (true) {
        o.row = static_cast<int>(rng.uniform_int(kGrid));
        o.col = static_cast<int>(rng.uniform_int(kGrid));
        bool clash = false;
        for (const auto& [r, c] : taken)
            if (r == o.row && c == o.col) clash = true;
        if (!clash) break;
    }
    return o;
}

inline SceneSpec sample_scene_single(Rng& rng) {
    SceneSpec s;
    s.objects.push_back(random_object(rng, {}));
    return s;
}

// two objects with distinct shapes (unambiguous relation and referents)
inline SceneSpec sample_scene_pair(Rng& rng) {
    SceneSpec s;
    s.objects.push_back(random_object(rng, {}));
    SceneObject b = random_object(rng, {{s.objects[0].row, s.objects[0].col}});
    while (b.shape == s.objects[0].shape) b.shape = static_cast<Shape>(rng.uniform_int(kNumShapes));
    s.objects.push_back(b);
    return s;
}

// 2..3 identical (shape,color) objects at distinct cells
inline SceneSpec sample_scene_counting(Rng& rng) {
    SceneSpec s;
    const int n = 2 + static_cast<int>(rng.uniform_int(2));
    SceneObject proto = random_object(rng, {});
    s.objects.push_back(proto);
    std::vector<std::pair<int, int>> taken = {{proto.row, proto.col}};
    for (int i = 1; i < n; ++i) {
        SceneObject o = random_object(rng, taken);
        o.shape = proto.shape;
        o.color = proto.color;
        s.objects.push_back(o);
        taken.emplace_back(o.row, o.col);
    }
    return s;
}

// 1..max_n objects, pairwise-distinct shapes
inline SceneSpec sample_scene_distinct(Rng& rng, int max_n) {
    SceneSpec s;
    const int n = 1 + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(max_n)));
    std::vector<std::pair<int, int>> taken;
    std::vector<Shape> used;
    for (int i = 0; i < n; ++i) {
        SceneObject o = random_object(rng, taken);
        bool dup = true;
        while (dup) {
            dup = false;
            for (Shape sh : used)
                if (sh == o.shape) dup = true;
            if (dup) o.shape = static_cast<Shape>(rng.uniform_int(kNumShapes));
        }
        used.push_back(o.shape);
        taken.emplace_back(o.row, o.col);
        s.objects.push_back(o);
    }
    return s;
}

inline SceneSpec sample_scene_t2i(Rng& rng) {
    const uint64_t pick = rng.uniform_int(4);
    if (pick <= 1) return sample_scene_single(rng);
    if (pick == 2) return sample_scene_pair(rng);
    return sample_scene_counting(rng);
}

inline CellRegion sample_region(Rng& rng, int max_side) {
    const int h = 1 + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(max_side)));
    const int w = 1 + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(max_side)));
    const int r0 = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(kGrid - h + 1)));
    const int c0 = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(kGrid - w + 1)));
    return {r0, c0, r0 + h - 1, c0 + w - 1};
}

inline EditOp sample_edit_op(Rng& rng, const SceneSpec& scene) {
    EditOp op;
    // collect applicable verbs
    std::vector<EditVerb> verbs;
    std::vector<int> free_corners;
    for (int k = 0; k < 4; ++k) {
        const auto [r, c] = corner_cell(k);
        bool taken = false;
        for (const auto& o : scene.objects)
            if (o.row == r && o.col == c) taken = true;
        if (!taken) free_corners.push_back(k);
    }
    if (!free_corners.empty() && scene.objects.size() < 3) verbs.push_back(EditVerb::Add);
    if (!scene.objects.empty()) {
        verbs.push_back(EditVerb::Remove);
        verbs.push_back(EditVerb::Recolor);
        if (!free_corners.empty()) verbs.push_back(EditVerb::Move);
    }
    op.verb = verbs[rng.uniform_int(verbs.size())];
    if (op.verb == EditVerb::Add) {
        op.add_shape = static_cast<Shape>(rng.uniform_int(kNumShapes));
        op.add_color = static_cast<Color>(rng.uniform_int(kNumColors));
        op.add_large = rng.uniform_int(2) == 1;
        op.corner = free_corners[rng.uniform_int(free_corners.size())];
    } else {
        const auto& ref = scene.objects[rng.uniform_int(scene.objects.size())];
        op.ref_shape = ref.shape;
        if (op.verb == EditVerb::Recolor) op.new_color = static_cast<Color>(rng.uniform_int(kNumColors));
        if (op.verb == EditVerb::Move) {
            // destination must be free (corner cells were checked above, but the
            // referent itself may sit on a corner: moving onto itself is fine)
            std::vector<int> ok;
            for (int k : free_corners) ok.push_back(k);
            for (int k = 0; k < 4; ++k) {
                const auto [r, c] = corner_cell(k);
                if (ref.row == r && ref.col == c) ok.push_back(k);
            }
            op.corner = ok[rng.uniform_int(ok.size())];
        }
    }
    return op;
}

inline TaskSample sample_task(TaskKind kind, Rng& rng) {
    switch (kind) {
        case TaskKind::T2I:
            return make_t2i(sample_scene_t2i(rng));
        case TaskKind::Inpaint: {
            const SceneSpec scene = rng.uniform_int(2) ? sample_scene_single(rng) : sample_scene_pair(rng);
            const CellRegion region = sample_region(rng, kGrid);
            const bool guided = rng.uniform_int(2) == 1;
            return make_inpaint(scene, region, guided);
        }
        case TaskKind::Outpaint: {
            const SceneSpec scene = rng.uniform_int(2) ? sample_scene_single(rng) : sample_scene_pair(rng);
            const CellRegion kept = sample_region(rng, kGrid - 1);
            const bool guided = rng.uniform_int(2) == 1;
            return make_outpaint(scene, kept, guided);
        }
        case TaskKind::Edit: {
            const SceneSpec scene = sample_scene_distinct(rng, 2);
            return make_edit(scene, sample_edit_op(rng, scene));
        }
        case TaskKind::Depth:
            return make_depth(sample_scene_distinct(rng, 3));
        case TaskKind::Pose:
            return make_pose(sample_scene_distinct(rng, 3));
        case TaskKind::Seg: {
            const SceneSpec scene = sample_scene_distinct(rng, 2);
            const uint64_t pick = rng.uniform_int(scene.objects.size() + 1);
            std::optional<Shape> target;
            if (pick < scene.objects.size()) target = scene.objects[pick].shape;
            const Color color = static_cast<Color>(rng.uniform_int(kNumColors));
            return make_seg(scene, target, color);
        }
        case TaskKind::Layout:
            return make_layout(sample_scene_distinct(rng, 3));
        case TaskKind::Id: {
            const int glyph = static_cast<int>(rng.uniform_int(kGlyphCount));
            const int row = static_cast<int>(rng.uniform_int(kGrid));
            const int col = static_cast<int>(rng.uniform_int(kGrid));
            return make_id(glyph, row, col);
        }
    }
    throw ConfigError("sample_task: bad kind");
}

}  // namespace unidiff::world
