// Copyright Contributors to the urbansplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "urbansplat/dataset.hpp"
#include "urbansplat/rasterizer.hpp"
#include "urbansplat/scene.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace urbansplat {

struct LossWeights {
    double lambda_ssim = 0.2;
    double depth = 0.01;
    double sky = 0.05;
    double semantic = 0.1;
    double reg = 0.1;

    void validate() const;
};

/// Exponential decay from `initial` at iteration 0 to `final` at the last one.
struct LrSchedule {
    double initial = 1e-3;
    double final = 1e-3;

    double at(int iteration, int total) const;
};

struct TrainConfig {
    int iterations = 30000;
    std::uint64_t seed = 0;
    LossWeights weights;

    // Position rates are multiplied by the model extent.
    LrSchedule position{1.6e-4, 1.6e-6};
    double scale_lr = 5e-3;
    double rotation_lr = 1e-3;
    double opacity_lr = 0.05;
    double appearance_lr = 2.5e-3;
    double semantic_lr = 1e-2;
    LrSchedule pose_translation{5e-3, 5e-5};
    LrSchedule pose_yaw{1e-3, 1e-5};
    LrSchedule sky{1e-2, 1e-4};
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-15;
    bool optimize_poses = true;

    bool densify = true;
    int densify_from = 500;
    int densify_until = 15000;
    int densify_interval = 100;
    double densify_grad_threshold = 2e-4;
    double percent_dense = 0.01;
    double split_factor = 1.6;
    int split_children = 2;
    double prune_opacity = 0.005;
    double max_screen_radius = 20.0;
    double background_extent = 20.0;
    int box_prune_samples = 32;
    bool opacity_reset = true;
    int opacity_reset_interval = 3000;
    /// First iteration of the entropy term; negative means densify_until.
    int reg_start = -1;

    /// Every n-th frame (index % n == n - 1) is held out; 0 trains on all frames.
    int test_every = 0;
    int checkpoint_every = 0;
    int tile_size = 16;
    int threads = 0;

    int reg_start_iteration() const { return reg_start < 0 ? densify_until : reg_start; }
    void validate() const;
};

/// Parses a JSON config; absent keys keep their defaults, unknown keys are
/// rejected.
TrainConfig train_config_from_json(const std::string& text);
std::string train_config_to_json(const TrainConfig& config);

/// Frame indices of the train or test split for `test_every`.
std::vector<std::size_t> split_frames(std::size_t frame_count, int test_every, bool test);

struct PoseResidualStats {
    std::size_t count = 0;
    double median_translation = 0.0; // meters
    double median_yaw = 0.0;         // radians
    double max_translation = 0.0;
    double max_yaw = 0.0;
};

/// Residual between the corrected tracks of `scene` and clean tracks, after
/// removing the per-object gauge (a constant yaw and object-frame offset that
/// the images cannot observe). Only frames listed in `frames` count.
PoseResidualStats pose_residuals(const SceneGraph& scene, const std::vector<Tracklet>& truth,
                                 const std::vector<int>& timesteps);

struct IterationMetrics {
    int iteration = 0;
    std::size_t frame = 0;
    double total = 0.0;
    double color = 0.0;
    std::optional<double> depth;
    std::optional<double> sky;
    std::optional<double> semantic;
    std::optional<double> reg;
    std::size_t background_points = 0;
    std::size_t object_points = 0;
    std::optional<PoseResidualStats> pose;

    std::string to_json_line() const;
};

/// Per-point statistics gathered between adaptive control calls.
struct DensityStats {
    std::vector<double> grad_accum;
    std::vector<double> count;
    std::vector<double> max_radius;

    void reset(std::size_t n);
};

struct ControlReport {
    std::size_t cloned = 0;
    std::size_t split = 0;
    std::size_t pruned = 0;
    std::size_t box_pruned = 0;
};

/// Point selection produced by adaptive control: which old points survive
/// and how many new points were appended. Lets optimizer state follow along.
struct DensifyPlan {
    std::vector<std::size_t> keep;
    std::vector<std::size_t> parents; // source of each appended point
};

/// Clone, split and prune one Gaussian set. `extent` fixes the size scale;
/// `box_dims` enables the Monte-Carlo box prune for object sets.
DensifyPlan adaptive_control(GaussianSet& set, const DensityStats& stats, const TrainConfig& config,
                             double extent, bool prune_large_on_screen,
                             const std::optional<Vec3>& box_dims, std::uint64_t seed,
                             ControlReport* report = nullptr);

/// Monte-Carlo box test: mean of `samples` draws from the Gaussian lies in the box.
bool gaussian_mean_inside_box(const GaussianSet& set, std::size_t i, const Vec3& box_dims, int samples,
                              std::uint64_t seed);

class Trainer {
public:
    Trainer(const Dataset& dataset, SceneGraph scene, TrainConfig config);
    ~Trainer();
    Trainer(const Trainer&) = delete;
    Trainer& operator=(const Trainer&) = delete;

    /// Clean tracks for the residual columns of the metric log.
    void set_pose_truth(std::vector<Tracklet> truth);
    /// Where diagnostics and periodic checkpoints go.
    void set_output_dir(std::filesystem::path dir);

    /// One optimization step. Throws RuntimeError on a non-finite loss.
    IterationMetrics step();
    bool done() const;
    int iteration() const;

    /// Loss of the current scene on one dataset frame, without updating.
    IterationMetrics evaluate(std::size_t frame) const;

    const SceneGraph& scene() const;
    SceneGraph take_scene();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Runs the whole schedule. `on_iteration` sees every metric record.
SceneGraph train(const Dataset& dataset, SceneGraph scene, const TrainConfig& config,
                 const std::function<void(const IterationMetrics&)>& on_iteration = {},
                 const std::optional<std::filesystem::path>& output_dir = std::nullopt,
                 const std::vector<Tracklet>* pose_truth = nullptr);

} // namespace urbansplat
