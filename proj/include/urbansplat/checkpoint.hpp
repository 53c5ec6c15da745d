// Copyright Contributors to the urbansplat project
// SPDX-License-Identifier: Apache-2.0

// Checkpoint directory layout:
//
//   meta.json           schema_version, semantic configuration, per-model
//                       layout and point count, pose tracks, recorded views
//   background.bin      background point attributes
//   object_<id>.bin     object point attributes (object-local frame)
//   sky_face_<f>.png    16-bit RGB cubemap faces, f = 0..5 (+X -X +Y -Y +Z -Z)
//
// A .bin file holds little-endian float32 columns, one after another, in the
// order listed under "columns" in meta.json: position (3), log_scale (3),
// rotation (4, w x y z), opacity_logit (1), appearance (k * (l+1)^2 * 3,
// laid out [k][basis][rgb]), semantic (M for the background, 1 for objects).
// Each column stores all points before the next column starts.

#pragma once

#include "urbansplat/scene.hpp"

#include <filesystem>

namespace urbansplat {

constexpr int kCheckpointSchemaVersion = 1;

/// Writes the scene; quaternions are stored normalized and sky texels are
/// clamped to [0, 1] and quantized to 16 bits.
void save_checkpoint(const SceneGraph& scene, const std::filesystem::path& dir);

/// Reads and validates a checkpoint. Quaternions whose norm differs from one
/// by more than 1e-6 are renormalized.
SceneGraph load_checkpoint(const std::filesystem::path& dir);

} // namespace urbansplat
