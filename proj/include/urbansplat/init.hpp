// Copyright Contributors to the urbansplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "urbansplat/dataset.hpp"
#include "urbansplat/scene.hpp"

#include <cstdint>
#include <string>

namespace urbansplat {

constexpr std::size_t kObjectMinPoints = 2000;
constexpr std::size_t kObjectFallbackPoints = 8000;

/// LiDAR points inside the object's box, in the object frame, aggregated over
/// valid frames in frame order. Falls back to uniform in-box samples when
/// fewer than kObjectMinPoints are found.
PointCloud collect_object_points(const Dataset& dataset, int object_id, std::uint64_t seed = 0);

/// LiDAR outside every object box, voxel-downsampled to centroids, restricted
/// to points some frame camera sees, then merged with the SfM points.
PointCloud init_background(const Dataset& dataset, double voxel_size = 0.15);

/// Centroid per occupied voxel; output ordered by first occurrence.
PointCloud voxel_downsample(const PointCloud& cloud, double voxel_size);

/// Colors each world point from the first frame that sees it; mid-gray
/// otherwise.
PointCloud colorize(const PointCloud& points, const Dataset& dataset);

/// Same for object-frame points carried by the track's per-frame poses.
PointCloud colorize_object(const PointCloud& points, const Dataset& dataset, const PoseTrack& track);

/// Mean distance to the k nearest other points (0 when fewer exist).
std::vector<double> knn_mean_distance(const std::vector<Vec3>& points, int k = 3);

struct InitConfig {
    double voxel_size = 0.15;
    int sh_degree = 1;
    int object_fourier_k = 5;
    double initial_opacity = 0.1;
    int sky_resolution = 1024;
    double sky_value = 0.5;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Absent keys keep their defaults; unknown keys are rejected.
InitConfig init_config_from_json(const std::string& text);
std::string init_config_to_json(const InitConfig& config);

/// Builds the initial scene graph; recorded views are the dataset cameras.
SceneGraph init_scene(const Dataset& dataset, const InitConfig& config);

/// GaussianSet from colored points with isotropic KNN scales.
GaussianSet gaussians_from_points(const PointCloud& points, const InitConfig& config,
                                  AppearanceMode mode, int fourier_k, SemanticKind kind,
                                  int num_classes);

} // namespace urbansplat
