// Copyright Contributors to the urbansplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "urbansplat/scene.hpp"

#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace urbansplat {

/// Inclusive frame range; absent bounds mean the first or last frame.
struct FrameRange {
    std::optional<int> first;
    std::optional<int> last;
};

struct TranslateEdit {
    int object_id = 0;
    Vec3 delta = Vec3::Zero();
    FrameRange frames;
};

struct RotateYawEdit {
    int object_id = 0;
    double angle = 0.0; // radians, about the object's vertical axis
    FrameRange frames;
};

struct SwapEdit {
    int object_a = 0;
    int object_b = 0;
};

using Edit = std::variant<TranslateEdit, RotateYawEdit, SwapEdit>;

// Script JSON:
//   {"edits": [{"op": "translate", "object": 1, "delta": [x, y, z], "frames": [first, last]},
//              {"op": "rotate_yaw", "object": 1, "angle": 0.5, "frames": [first, last]},
//              {"op": "swap", "objects": [1, 2]}]}
// "frames" is optional; either bound may be null.
struct EditScript {
    std::vector<Edit> edits;
};

EditScript edit_script_from_json(const std::string& text);
std::string edit_script_to_json(const EditScript& script);

/// Applies the edits in order to a copy of `scene`.
/// Translate adds to the tracked translation, RotateYaw right-multiplies the
/// tracked rotation by Rz(angle), Swap exchanges the Gaussian sets of two
/// objects while their tracks stay. Throws ValidationError on unknown ids or
/// out-of-range frames.
SceneGraph apply_edit(const SceneGraph& scene, const EditScript& script);

} // namespace urbansplat
