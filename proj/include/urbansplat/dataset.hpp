// Copyright Contributors to the urbansplat project
// SPDX-License-Identifier: Apache-2.0

// Dataset directory layout:
//
//   scene.json        frames, tracklets, class configuration (below)
//   images/NNNN.png   RGB image per frame
//   lidar/NNNN.ply    world-frame LiDAR points per frame (ASCII or binary LE)
//   sky/NNNN.png      optional sky mask, nonzero = sky
//   sem/NNNN.png      optional class-index map (255 = ignore)
//   sfm.ply           optional world-frame SfM points
//
// scene.json:
//   {
//     "num_frames": N,
//     "class_names": ["sky", ...], "vehicle_class": 2,
//     "frames": [{"timestep": t, "camera": {"K": 3x3, "R": 3x3, "t": [3],
//                 "width": W, "height": H, "near_clip": 0.2},
//                 "image": "images/0000.png", "lidar": "lidar/0000.ply",
//                 "sky": "sky/0000.png", "semantic": "sem/0000.png"}, ...],
//     "tracklets": [{"id": 1, "box_dims": [L, W, H],
//                    "poses": [{"frame": t, "R": 3x3, "T": [3]}, ...]}],
//     "sfm": "sfm.ply"
//   }
//
// Matrices are row-major; R/t map world to camera (x right, y down, z
// forward); tracklet R/T map object to world. Units are meters, world is z-up.
// Frames absent from a tracklet's pose list are marked invalid.

#pragma once

#include "urbansplat/camera.hpp"
#include "urbansplat/io.hpp"
#include "urbansplat/scene.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace urbansplat {

constexpr std::uint16_t kIgnoreLabel = 255;

struct FrameRecord {
    int timestep = 0;
    Camera camera;
    Image image;
    PointCloud lidar;
    std::optional<LabelMap> sky_mask;
    std::optional<LabelMap> semantic;
    std::string image_name; // path relative to the dataset root
};

struct Tracklet {
    int id = 0;
    PoseTrack track;
};

struct Dataset {
    std::filesystem::path root;
    int num_frames = 0;
    std::vector<std::string> class_names = default_class_names();
    int vehicle_class = kDefaultVehicleClass;
    std::vector<FrameRecord> frames;
    std::vector<Tracklet> tracklets;
    /// Clean tracks of a synthetic dataset whose `tracklets` were perturbed.
    /// Only used to score pose recovery.
    std::vector<Tracklet> truth_tracklets;
    std::optional<PointCloud> sfm_points;

    const Tracklet* find_tracklet(int id) const;
    int num_classes() const { return static_cast<int>(class_names.size()); }
    void validate() const;
};

Dataset load_dataset(const std::filesystem::path& root);

/// Writes the layout above; file names are zero-padded frame indices.
void save_dataset(const Dataset& dataset, const std::filesystem::path& root);

/// Sparse depth image: 0 marks pixels without a LiDAR hit.
struct DepthMap {
    int width = 0;
    int height = 0;
    std::vector<double> depth;

    std::size_t hits() const;
};

/// True when `p` (object frame) lies in the closed box centered at the origin.
bool inside_box(const Vec3& p, const Vec3& dims);

/// True when `p` projects inside the image with camera depth above near_clip.
bool in_view(const Camera& camera, const Vec3& world);

DepthMap project_lidar_depth(const FrameRecord& frame);

} // namespace urbansplat
