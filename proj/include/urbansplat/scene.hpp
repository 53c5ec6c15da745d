// Copyright Contributors to the urbansplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "urbansplat/camera.hpp"
#include "urbansplat/math.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace urbansplat {

/// Default semantic class layout used when a dataset does not provide one.
inline const std::vector<std::string>& default_class_names()
{
    static const std::vector<std::string> names = {
        "sky", "road", "vehicle", "building", "vegetation", "pole", "sign", "other"};
    return names;
}
constexpr int kDefaultVehicleClass = 2;

enum class AppearanceMode { Static, Fourier4D };

/// Per-point color basis weights laid out as [point][k][basis][rgb].
/// Static is the k = 1 special case and shares the Fourier evaluation path.
struct AppearanceCoeffs {
    AppearanceMode mode = AppearanceMode::Static;
    int sh_degree = 1;
    int fourier_k = 1;
    std::vector<double> coeffs;

    int basis_count() const { return (sh_degree + 1) * (sh_degree + 1); }
    std::size_t stride() const
    {
        return static_cast<std::size_t>(fourier_k) * static_cast<std::size_t>(basis_count()) * 3;
    }
};

enum class SemanticKind { BackgroundVector, ObjectScalar };

/// Background points carry an M-vector of logits; object points carry one
/// scalar that expands to the vehicle channel at render time.
struct SemanticField {
    SemanticKind kind = SemanticKind::BackgroundVector;
    int num_classes = 8;
    std::vector<double> logits;

    int width() const { return kind == SemanticKind::BackgroundVector ? num_classes : 1; }
};

/// Columnar Gaussian parameter store. Everything is kept pre-activation:
/// log-scales, raw quaternions (w, x, y, z) and opacity logits.
struct GaussianSet {
    std::vector<double> positions;      // 3 per point
    std::vector<double> log_scales;     // 3 per point
    std::vector<double> rotations;      // 4 per point
    std::vector<double> opacity_logits; // 1 per point
    AppearanceCoeffs appearance;
    SemanticField semantic;

    std::size_t size() const { return opacity_logits.size(); }
    bool empty() const { return opacity_logits.empty(); }

    /// Creates `count` points with identity rotation and zeroed parameters.
    static GaussianSet make(std::size_t count, AppearanceMode mode, int sh_degree, int fourier_k,
                            SemanticKind kind, int num_classes);

    Vec3 position(std::size_t i) const
    {
        return {positions[3 * i], positions[3 * i + 1], positions[3 * i + 2]};
    }
    void set_position(std::size_t i, const Vec3& p)
    {
        positions[3 * i] = p.x();
        positions[3 * i + 1] = p.y();
        positions[3 * i + 2] = p.z();
    }
    Vec3 log_scale(std::size_t i) const
    {
        return {log_scales[3 * i], log_scales[3 * i + 1], log_scales[3 * i + 2]};
    }
    void set_log_scale(std::size_t i, const Vec3& s)
    {
        log_scales[3 * i] = s.x();
        log_scales[3 * i + 1] = s.y();
        log_scales[3 * i + 2] = s.z();
    }
    Vec4 rotation(std::size_t i) const
    {
        return {rotations[4 * i], rotations[4 * i + 1], rotations[4 * i + 2], rotations[4 * i + 3]};
    }
    void set_rotation(std::size_t i, const Vec4& q)
    {
        for (int k = 0; k < 4; ++k) {
            rotations[4 * i + k] = q[k];
        }
    }
    double opacity(std::size_t i) const { return sigmoid(opacity_logits[i]); }

    std::span<double> coeffs(std::size_t i)
    {
        return {appearance.coeffs.data() + i * appearance.stride(), appearance.stride()};
    }
    std::span<const double> coeffs(std::size_t i) const
    {
        return {appearance.coeffs.data() + i * appearance.stride(), appearance.stride()};
    }
    std::span<double> semantic_logits(std::size_t i)
    {
        const auto w = static_cast<std::size_t>(semantic.width());
        return {semantic.logits.data() + i * w, w};
    }
    std::span<const double> semantic_logits(std::size_t i) const
    {
        const auto w = static_cast<std::size_t>(semantic.width());
        return {semantic.logits.data() + i * w, w};
    }

    /// Copies the points named by `indices` (in that order) into a new set.
    GaussianSet select(std::span<const std::size_t> indices) const;

    /// Appends the points of `other`; layouts must agree.
    void append(const GaussianSet& other);

    /// Throws ValidationError on column-length or finiteness violations.
    void validate() const;

    /// True when the appearance and semantic layouts of both sets agree.
    bool same_layout(const GaussianSet& other) const;
};

/// Tracked object poses (world <- object) and their learnable corrections.
struct PoseTrack {
    std::vector<Mat3> rotations;
    std::vector<Vec3> translations;
    std::vector<Vec3> delta_translations;
    std::vector<double> delta_yaws;
    Vec3 box_dims = Vec3::Ones(); // length (x), width (y), height (z)
    std::vector<std::uint8_t> valid;

    int frame_count() const { return static_cast<int>(rotations.size()); }
    bool is_valid(int t) const
    {
        return t >= 0 && t < frame_count() && valid[static_cast<std::size_t>(t)] != 0;
    }

    static PoseTrack make(int frame_count, const Vec3& box_dims);

    void validate() const;
};

/// Six-face sky texture addressed by world direction. Faces follow the usual
/// +X, -X, +Y, -Y, +Z, -Z order; texels are [face][row][col][rgb].
struct SkyCubemap {
    int resolution = 0;
    std::vector<double> texels;

    static SkyCubemap make(int resolution, double fill);

    struct Tap {
        std::size_t texel = 0; // index of the first channel
        double weight = 0.0;
    };
    struct Footprint {
        Tap taps[4];
    };

    /// Bilinear footprint (clamp-to-edge within the selected face).
    Footprint footprint(const Vec3& direction) const;
    Vec3 sample(const Vec3& direction) const;

    std::size_t texel_count() const { return texels.size() / 3; }
};

struct ObjectModel {
    int id = 0;
    GaussianSet gaussians;
    PoseTrack track;
};

/// A recorded viewpoint: the camera plus the timestep it observes.
struct View {
    Camera camera;
    int timestep = 0;
};

/// Background model, dynamic objects, sky and the semantic configuration.
struct SceneGraph {
    GaussianSet background;
    std::vector<ObjectModel> objects;
    SkyCubemap sky;
    int num_classes = 8;
    int vehicle_class = kDefaultVehicleClass;
    int num_frames = 1;
    std::vector<View> views;

    const ObjectModel* find_object(int id) const;
    ObjectModel* find_object(int id);

    std::size_t total_gaussians() const;

    /// Throws ValidationError when any module invariant is violated.
    void validate() const;
};

} // namespace urbansplat
