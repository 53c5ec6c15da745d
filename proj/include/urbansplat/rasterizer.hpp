// Copyright Contributors to the urbansplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "urbansplat/camera.hpp"
#include "urbansplat/geometry.hpp"
#include "urbansplat/scene.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

namespace urbansplat {

struct RenderConfig {
    int tile_size = 16;
    double alpha_threshold = 1.0 / 255.0;
    double alpha_clamp = 0.99;
    double saturation_stop = 1e-4;
    bool include_background = true;
    /// When set, only these objects are rendered; otherwise all objects are.
    std::optional<std::vector<int>> include_object_ids;
    bool composite_sky = true;
    int timestep = 0;
    /// 0 selects the global default (see set_default_threads).
    int num_threads = 0;

    void validate() const;
};

struct ObjectVisibility {
    int id = 0;
    std::size_t assembled = 0;
    std::size_t projected = 0;
};

struct RenderOutputs {
    int width = 0;
    int height = 0;
    int num_classes = 0;
    std::vector<double> color;    // H*W*3
    std::vector<double> opacity;  // H*W
    std::vector<double> depth;    // H*W, alpha-weighted (not normalized by opacity)
    std::vector<double> semantic; // H*W*M raw logits
    std::vector<ObjectVisibility> objects;
    std::size_t culled = 0;
    std::size_t degenerate_skipped = 0;
    /// (pixel, Gaussian) pairs that passed the alpha threshold, and how many
    /// of those hit the alpha clamp. Tiled render only.
    std::size_t blended = 0;
    std::size_t clamped = 0;

    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
    Vec3 pixel(int x, int y) const
    {
        const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
        return {color[i], color[i + 1], color[i + 2]};
    }
};

/// World-frame Gaussians for one timestep, concatenated background first then
/// objects in scene order. `sh` holds SH coefficients already collapsed over
/// the Fourier series ([basis][rgb] per point).
struct WorldSet {
    int sh_degree = 0;
    int num_classes = 0;
    std::vector<Vec3> means;
    std::vector<Mat3> rotations;
    std::vector<Vec3> log_scales;
    std::vector<double> opacities; // activated
    std::vector<double> sh;
    std::vector<double> semantic; // M per point

    struct Source {
        int slot = -1; // -1 background, otherwise index into SceneGraph::objects
        std::size_t index = 0;
    };
    std::vector<Source> sources;
    /// Effective pose per scene object slot at this timestep (unused when skipped).
    std::vector<RigidPose> object_poses;
    std::vector<std::uint8_t> object_included;

    std::size_t size() const { return means.size(); }
    std::size_t sh_width() const { return static_cast<std::size_t>(sh_basis_count(sh_degree)) * 3; }
    Mat3 covariance(std::size_t i) const;
};

/// Concatenates the background and the pose-transformed objects at timestep t.
/// All models are evaluated at the largest SH degree present; lower-degree
/// models are zero-padded.
WorldSet assemble_world_set(const SceneGraph& scene, const RenderConfig& config);

/// View-dependent colors of every assembled point seen from `origin`.
std::vector<Vec3> world_colors(const WorldSet& world, const Vec3& origin);

/// Gradients of a scalar loss with respect to the render outputs. Empty
/// channels are treated as zero.
struct RenderGradients {
    std::vector<double> color;
    std::vector<double> opacity;
    std::vector<double> depth;
    std::vector<double> semantic;
};

struct ObjectGradients {
    GaussianSet gaussians;
    std::vector<Vec3> delta_translations;
    std::vector<double> delta_yaws;
};

/// Same layout as the learnable parts of a SceneGraph.
struct SceneGradients {
    GaussianSet background;
    std::vector<ObjectGradients> objects;
    std::vector<double> sky;

    static SceneGradients zeros_like(const SceneGraph& scene);
    void add(const SceneGradients& other, double scale = 1.0);
    double max_abs() const;
};

/// Per-point screen statistics gathered during a forward/backward pass,
/// indexed like WorldSet.
struct ScreenStats {
    std::vector<double> mean2d_grad_norm; // NDC-scaled
    std::vector<double> radius;           // pixels, 0 when culled
    std::vector<std::uint8_t> visible;
};

/// One tile-list entry packed for the blend loops.
struct TileSplat {
    double mean_x, mean_y;
    double conic_a, conic_b, conic_c;
    double opacity;
    /// Exponents below this cannot reach the alpha threshold.
    double min_power;
    double red, green, blue;
    double depth;
    std::uint32_t source;
};

/// Forward bookkeeping retained for the backward pass.
struct RenderState {
    Camera camera;
    RenderConfig config;
    WorldSet world;
    std::vector<Vec3> colors;
    std::vector<ProjectedGaussian> sorted;
    std::vector<double> radius;
    std::vector<std::size_t> tile_offsets;
    std::vector<std::uint32_t> tile_entries;
    std::vector<TileSplat> tile_splats; // parallel to tile_entries
    int tiles_x = 0;
    int tiles_y = 0;
    std::vector<double> final_transmittance;
    std::vector<std::uint32_t> contributors;
    std::vector<double> sky_color;
};

RenderOutputs render(const SceneGraph& scene, const Camera& camera, const RenderConfig& config);

/// Like render, and keeps the bookkeeping needed by render_backward.
RenderOutputs render(const SceneGraph& scene, const Camera& camera, const RenderConfig& config,
                     RenderState& state);

/// Brute-force blend over every projected Gaussian for every pixel: no tiles,
/// no early termination.
RenderOutputs render_reference(const SceneGraph& scene, const Camera& camera,
                               const RenderConfig& config);

/// Analytic reverse pass. The semantic channel only feeds semantic logits.
SceneGradients render_backward(const SceneGraph& scene, const RenderState& state,
                               const RenderGradients& upstream, ScreenStats* stats = nullptr);

struct DecomposeTarget {
    enum class Kind { All, Background, Object };
    Kind kind = Kind::All;
    int object_id = 0;

    static DecomposeTarget all() { return {}; }
    static DecomposeTarget background() { return {Kind::Background, 0}; }
    static DecomposeTarget object(int id) { return {Kind::Object, id}; }
};

struct DecomposedOutputs {
    RenderOutputs render;
    /// Accumulated alpha of all objects rendered without the background.
    std::vector<double> object_opacity;
};

/// Render restricted to `target`, plus the objects-only opacity.
DecomposedOutputs render_decomposed(const SceneGraph& scene, const Camera& camera,
                                    const RenderConfig& config, const DecomposeTarget& target);

/// Config that renders only the objects (no background, no sky).
RenderConfig objects_only(const RenderConfig& config, const SceneGraph& scene);

} // namespace urbansplat
