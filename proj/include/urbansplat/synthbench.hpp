// Copyright Contributors to the urbansplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "urbansplat/dataset.hpp"
#include "urbansplat/scene.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace urbansplat {

enum class Trajectory { Linear, Arc };
enum class CameraPath { Orbit, EgoForward };

/// Synthetic street scene: a textured ground plane of flat Gaussians, static
/// box clusters, moving vehicles and a gradient sky.
struct SynthSpec {
    std::uint64_t seed = 0;
    int frames = 20;
    int width = 96;
    int height = 64;
    double focal = 80.0;

    CameraPath camera_path = CameraPath::Orbit;
    double orbit_radius = 14.0;
    double orbit_height = 6.0;
    double orbit_arc_degrees = 90.0;
    double ego_speed = 0.5; // meters per frame

    double ground_size = 36.0;
    double ground_spacing = 0.6;
    int static_boxes = 4;
    int box_points = 150;

    int objects = 1;
    Vec3 object_dims{4.0, 1.8, 1.5};
    int object_points = 300;
    Trajectory trajectory = Trajectory::Linear;
    double object_speed = 0.1; // meters per frame
    double arc_rate = 0.02;    // radians per frame

    int lidar_rays_x = 64;
    int lidar_rays_y = 48;
    double lidar_depth_sigma = 0.0;

    int sky_resolution = 16;

    void validate() const;
};

SynthSpec synth_spec_from_json(const std::string& text);
std::string synth_spec_to_json(const SynthSpec& spec);

struct SynthResult {
    SceneGraph scene;
    Dataset dataset;
};

/// Ground-truth scene plus a clean dataset rendered with render_reference.
/// Images are 8-bit quantized and LiDAR points float-rounded in memory, so the
/// dataset equals what save_dataset/load_dataset reproduce.
SynthResult generate(const SynthSpec& spec);

struct PoseNoise {
    int id = 0;
    int frame = 0;
    Vec3 delta_translation = Vec3::Zero(); // noisy T minus clean T
    double delta_yaw = 0.0;                // noisy R = clean R * Rz(delta_yaw)
};

struct PerturbResult {
    Dataset dataset; // tracklets noisy, truth_tracklets clean
    std::vector<PoseNoise> noise;
};

/// Zero-mean Gaussian noise on every tracked translation (x and y only unless
/// `perturb_z`) and yaw.
PerturbResult perturb(const Dataset& dataset, double sigma_translation, double sigma_yaw, std::uint64_t seed,
                      bool perturb_z = false);

} // namespace urbansplat
